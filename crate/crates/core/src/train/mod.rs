//! Losses, the SGD schedule, the training loop and evaluation.

mod eval;
mod loss;
mod schedule;
mod sgd;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use eval::{evaluate, evaluate_checkpoint, predict_dataset, score_predictions, EvaluationReport};
pub use loss::{classification_loss, head_loss, regression_loss, LossOutput, PixelTargets};
pub use schedule::TrainSchedule;
pub use sgd::Sgd;

use crate::data::synth::derive_seed;
use crate::data::{preprocess_train, Domain, Geometry, MixedBatchSampler, Prepared, SceneSample};
use crate::model::{Checkpoint, DabcModel, Mode, ModelConfig, ScheduleState};
use crate::nn::Tensor;
use crate::quantizer::QuantizationSpec;
use crate::{Error, Result};

/// Stride of the network output relative to its input.
pub const OUTPUT_STRIDE: usize = 4;

const AUGMENT_STREAM: u64 = 0xa5a5_0001;
const DROPOUT_STREAM: u64 = 0xa5a5_0002;

/// Everything needed to reproduce a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub spec: QuantizationSpec,
    pub schedule: TrainSchedule,
    pub geometry: Geometry,
    /// Validate every this many epochs; 0 validates only after the last.
    #[serde(default)]
    pub validate_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.model.check_spec(&self.spec)?;
        self.schedule.validate()?;
        self.geometry.validate()
    }
}

/// Owns a model and its optimiser state; one call to [`step`](Self::step)
/// is one SGD update on one batch.
pub struct Trainer {
    model: DabcModel,
    spec: QuantizationSpec,
    sgd: Sgd,
    clip_norm: Option<f64>,
    seed: u64,
    steps: usize,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: DabcModel, spec: QuantizationSpec, schedule: &TrainSchedule) -> Self {
        let sgd = Sgd::new(model.params(), schedule.momentum, schedule.weight_decay);
        Self {
            model,
            spec,
            sgd,
            clip_norm: schedule.clip_norm,
            seed: schedule.seed,
            steps: 0,
            epoch: 0,
        }
    }

    pub fn model(&self) -> &DabcModel {
        &self.model
    }

    pub fn into_model(self) -> DabcModel {
        self.model
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn stack(batch: &[Prepared]) -> Result<(Tensor, PixelTargets)> {
        let images: Vec<Tensor> = batch.iter().map(|p| p.image.clone()).collect();
        Ok((Tensor::stack(&images)?, PixelTargets::subsample(batch, OUTPUT_STRIDE)?))
    }

    /// Loss on `batch` without updating anything.
    pub fn loss(&self, batch: &[Prepared], mode: Mode) -> Result<f64> {
        let (images, targets) = Self::stack(batch)?;
        let (raw, _, _) = self.model.forward_train(&images, mode)?;
        Ok(head_loss(self.model.config().head, &raw, &targets, &self.spec)?.loss)
    }

    /// One update; returns the training-mode loss before the update.
    pub fn step(&mut self, batch: &[Prepared], lr: f64) -> Result<f64> {
        let (images, targets) = Self::stack(batch)?;
        let mode = Mode::Train {
            dropout_seed: derive_seed(self.seed ^ DROPOUT_STREAM, self.steps as u64),
        };
        let (raw, _, tape) = self.model.forward_train(&images, mode)?;
        let out = head_loss(self.model.config().head, &raw, &targets, &self.spec)?;
        let (mut grads, _) = self.model.backward(&tape, &out.grad)?;
        if !out.loss.is_finite() || !grads.is_finite() {
            return Err(Error::Diverged {
                epoch: self.epoch,
                step: self.steps,
                loss: out.loss,
            });
        }
        if let Some(limit) = self.clip_norm {
            let norm = grads.norm();
            if norm > limit {
                grads.scale(limit / norm);
            }
        }
        self.sgd.step(self.model.params_mut(), &grads, lr);
        self.steps += 1;
        Ok(out.loss)
    }
}

/// Per-domain validation numbers logged after an epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainScore {
    pub abs_rel: f64,
    pub silog: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimiser steps completed so far.
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub validation: BTreeMap<Domain, DomainScore>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,step,lr,train_loss,indoor_absRel,indoor_SILog,outdoor_absRel,outdoor_SILog";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for e in &self.epochs {
            let _ = write!(out, "{},{},{},{}", e.epoch, e.step, e.lr, e.train_loss);
            for d in Domain::ALL {
                match e.validation.get(&d) {
                    Some(s) => {
                        let _ = write!(out, ",{},{}", s.abs_rel, s.silog);
                    }
                    None => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
        out
    }
}

pub struct TrainingRun {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

/// Trains from scratch; see [`train_with_progress`].
pub fn train(cfg: &TrainConfig, train_set: &[SceneSample], val_set: &[SceneSample]) -> Result<TrainingRun> {
    train_with_progress(cfg, train_set, val_set, |_| {})
}

/// Runs the two-phase schedule over seeded, augmented, domain-mixed
/// batches. Identical inputs give bit-identical checkpoints.
pub fn train_with_progress(
    cfg: &TrainConfig,
    train_set: &[SceneSample],
    val_set: &[SceneSample],
    mut progress: impl FnMut(&EpochLog),
) -> Result<TrainingRun> {
    cfg.validate()?;
    let by_domain = |d: Domain| -> Vec<&SceneSample> { train_set.iter().filter(|s| s.domain == d).collect() };
    let (indoor, outdoor) = (by_domain(Domain::Indoor), by_domain(Domain::Outdoor));
    let schedule = &cfg.schedule;
    let sampler = MixedBatchSampler::any(indoor.len(), outdoor.len(), schedule.batch_size, schedule.seed)?;
    let model = DabcModel::new(cfg.model.clone(), schedule.seed)?;
    let mut trainer = Trainer::new(model, cfg.spec.clone(), schedule);
    let mut log = TrainLog::default();
    let mut drawn = 0u64;
    let total = schedule.total_epochs();

    for epoch in 1..=total {
        trainer.epoch = epoch;
        let lr = schedule.lr_at(epoch);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for refs in sampler.epoch(epoch - 1) {
            let batch = refs
                .iter()
                .map(|r| {
                    let sample = match r.domain {
                        Domain::Indoor => indoor[r.index],
                        Domain::Outdoor => outdoor[r.index],
                    };
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(schedule.seed ^ AUGMENT_STREAM, drawn));
                    drawn += 1;
                    preprocess_train(sample, &cfg.geometry, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            // Augmentation can crop away every valid pixel; such batches
            // carry no signal.
            if batch.iter().all(|p| p.valid.count() == 0) {
                continue;
            }
            loss_sum += trainer.step(&batch, lr)?;
            batches += 1;
        }
        let validate = !val_set.is_empty()
            && (epoch == total || (cfg.validate_every > 0 && epoch % cfg.validate_every == 0));
        let validation = if validate {
            evaluate(trainer.model(), &cfg.spec, val_set, &cfg.geometry)?
                .per_domain
                .into_iter()
                .map(|(d, r)| {
                    (
                        d,
                        DomainScore {
                            abs_rel: r.abs_rel,
                            silog: r.silog,
                        },
                    )
                })
                .collect()
        } else {
            BTreeMap::new()
        };
        let entry = EpochLog {
            epoch,
            step: trainer.steps(),
            lr,
            train_loss: loss_sum / batches.max(1) as f64,
            validation,
        };
        log::info!(
            "epoch {epoch}/{total} lr {lr:e} loss {:.4} {:?}",
            entry.train_loss,
            entry.validation
        );
        progress(&entry);
        log.epochs.push(entry);
    }

    let lr = schedule.lr_at(total);
    let model = trainer.into_model();
    Ok(TrainingRun {
        checkpoint: Checkpoint::from_model(&model, &cfg.spec, ScheduleState { epoch: total, lr }, schedule.seed)
            .with_geometry(cfg.geometry),
        log,
    })
}

//! Toy-scale reproductions of the classification-vs-regression comparison,
//! the attention ablation, confusion analysis and gate dumps.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::render::{domain_line_color, save_confusion_png, save_lines_png, LineSeries};
use crate::data::synth::derive_seed;
use crate::data::{generate, preprocess_eval, Domain, GeneratorConfig, Geometry, SceneSample};
use crate::metrics::{ConfusionMatrix, MetricReport, CSV_HEADER};
use crate::model::{Checkpoint, DabcModel, HeadKind, Mode, ModelConfig, Precision};
use crate::quantizer::QuantizationSpec;
use crate::train::{evaluate, train, EvaluationReport, TrainConfig, TrainSchedule, TrainingRun};
use crate::{Error, Result};

/// Label window of the overlapping indoor/outdoor depth range.
pub const OVERLAP_WINDOW: (usize, usize) = (60, 95);
/// Half-width of the diagonal band used to summarise confusion matrices.
pub const DIAGONAL_BAND: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ClsVsReg,
    AttentionAblation,
    Confusion,
    AttentionDump,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] = [
        ExperimentKind::ClsVsReg,
        ExperimentKind::AttentionAblation,
        ExperimentKind::Confusion,
        ExperimentKind::AttentionDump,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ClsVsReg => "cls_vs_reg",
            ExperimentKind::AttentionAblation => "attention_ablation",
            ExperimentKind::Confusion => "confusion",
            ExperimentKind::AttentionDump => "attention_dump",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown experiment {s:?}; expected one of cls_vs_reg, attention_ablation, confusion, attention_dump")))
    }
}

/// Which head, whether attention is on, and which domains it trains on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Variant {
    pub head: HeadKind,
    pub attention: bool,
    /// `None` trains on both domains.
    pub domain: Option<Domain>,
}

impl Variant {
    pub fn classification(domain: Option<Domain>) -> Self {
        Self {
            head: HeadKind::Classification,
            attention: true,
            domain,
        }
    }

    pub fn regression(domain: Option<Domain>) -> Self {
        Self {
            head: HeadKind::Regression,
            attention: false,
            domain,
        }
    }

    pub fn without_attention() -> Self {
        Self {
            attention: false,
            ..Self::classification(None)
        }
    }

    /// File stem, e.g. `cls_mixed` or `reg_indoor`.
    pub fn slug(&self) -> String {
        let head = match (self.head, self.attention) {
            (HeadKind::Classification, true) => "cls",
            (HeadKind::Classification, false) => "cls_noatt",
            (HeadKind::Regression, _) => "reg",
        };
        let data = self.domain.map_or("mixed", Domain::name);
        format!("{head}_{data}")
    }
}

/// Everything an experiment run depends on; serialised next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub geometry: Geometry,
    pub stage_widths: [usize; 4],
    pub fusion_width: usize,
    #[serde(default)]
    pub spec: QuantizationSpec,
    pub schedule: TrainSchedule,
    /// Overrides the base learning rate for regression models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regression_lr: Option<f64>,
    /// Overrides the dropout rate before the prediction head.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_rate: Option<f64>,
    pub train_per_domain: usize,
    pub val_per_domain: usize,
    pub data_seed: u64,
    /// Validation inputs whose gate vectors are dumped.
    pub dump_inputs: usize,
    /// Load `<dir>/<variant>.ckpt` instead of training when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// 200 training samples, toy geometry, small widths.
    pub fn toy() -> Self {
        Self {
            geometry: Geometry::toy(),
            stage_widths: [8, 16, 32, 64],
            fusion_width: 16,
            spec: QuantizationSpec::default(),
            schedule: TrainSchedule {
                base_lr: 0.03,
                clip_norm: Some(5.0),
                ..TrainSchedule::default()
            },
            regression_lr: Some(0.01),
            dropout_rate: Some(0.1),
            train_per_domain: 100,
            val_per_domain: 40,
            data_seed: 2024,
            dump_inputs: 4,
            checkpoint_dir: None,
        }
    }

    /// Smallest useful run, for smoke tests.
    pub fn smoke() -> Self {
        Self {
            geometry: Geometry::scaled(32, 64),
            stage_widths: [4, 4, 8, 8],
            fusion_width: 4,
            schedule: TrainSchedule {
                phase1_epochs: 1,
                phase2_epochs: 1,
                batch_size: 4,
                ..Self::toy().schedule
            },
            train_per_domain: 4,
            val_per_domain: 2,
            dump_inputs: 2,
            ..Self::toy()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.schedule.seed = seed;
        self.data_seed = derive_seed(seed, 0xda7a);
        self
    }

    pub fn model_config(&self, variant: Variant) -> ModelConfig {
        let base = match variant.head {
            HeadKind::Classification => ModelConfig::classification(&self.spec),
            HeadKind::Regression => ModelConfig::regression(),
        };
        let base = base.with_widths(self.stage_widths, self.fusion_width);
        ModelConfig {
            attention_enabled: variant.attention,
            dropout_rate: self.dropout_rate.unwrap_or(base.dropout_rate),
            ..base
        }
    }

    pub fn train_config(&self, variant: Variant) -> TrainConfig {
        let mut schedule = self.schedule.clone();
        if let (HeadKind::Regression, Some(lr)) = (variant.head, self.regression_lr) {
            schedule.base_lr = lr;
        }
        TrainConfig {
            model: self.model_config(variant),
            spec: self.spec.clone(),
            schedule,
            geometry: self.geometry,
            validate_every: 0,
        }
    }
}

/// Synthetic training and validation sets at the geometry's raw sizes.
#[derive(Clone, Debug)]
pub struct Datasets {
    pub train: Vec<SceneSample>,
    pub val: Vec<SceneSample>,
}

impl Datasets {
    pub fn synthetic(cfg: &ExperimentConfig) -> Result<Self> {
        let make = |count: usize, stream: u64| -> Result<Vec<SceneSample>> {
            let mut out = Vec::with_capacity(2 * count);
            for domain in Domain::ALL {
                let (height, width) = cfg.geometry.raw_size(domain);
                out.extend(generate(&GeneratorConfig {
                    count,
                    height,
                    width,
                    seed: derive_seed(cfg.data_seed, stream),
                    domain,
                    sparse: false,
                })?);
            }
            Ok(out)
        };
        Ok(Self {
            train: make(cfg.train_per_domain, 1)?,
            val: make(cfg.val_per_domain, 2)?,
        })
    }

    pub fn train_for(&self, domain: Option<Domain>) -> Vec<SceneSample> {
        self.train.iter().filter(|s| domain.is_none_or(|d| s.domain == d)).cloned().collect()
    }

    pub fn val_for(&self, domain: Option<Domain>) -> Vec<SceneSample> {
        self.val.iter().filter(|s| domain.is_none_or(|d| s.domain == d)).cloned().collect()
    }
}

/// A trained (or loaded) model and its validation report.
pub struct VariantResult {
    pub variant: Variant,
    pub checkpoint: Checkpoint,
    pub training: Option<TrainingRun>,
    pub evaluation: EvaluationReport,
}

/// Trains `variant` on its share of `data` (or loads it from
/// `cfg.checkpoint_dir`) and evaluates it on the matching validation set.
pub fn run_variant(cfg: &ExperimentConfig, data: &Datasets, variant: Variant) -> Result<VariantResult> {
    let tc = cfg.train_config(variant);
    let val = data.val_for(variant.domain);
    let (checkpoint, training) = match &cfg.checkpoint_dir {
        Some(dir) => {
            let path = dir.join(format!("{}.ckpt", variant.slug()));
            if !path.exists() {
                return Err(Error::MissingCheckpoint {
                    path,
                    hint: format!(
                        "run the experiment without a checkpoint directory to train `{}` first",
                        variant.slug()
                    ),
                });
            }
            let ckpt = Checkpoint::load(&path)?;
            if ckpt.config != tc.model {
                return Err(Error::Checkpoint(format!(
                    "{} was trained with a different model config",
                    path.display()
                )));
            }
            (ckpt, None)
        }
        None => {
            log::info!("training {}", variant.slug());
            let run = train(&tc, &data.train_for(variant.domain), &[])?;
            (run.checkpoint.clone(), Some(run))
        }
    };
    let evaluation = evaluate(&checkpoint.to_model()?, &cfg.spec, &val, &cfg.geometry)?;
    Ok(VariantResult {
        variant,
        checkpoint,
        training,
        evaluation,
    })
}

/// Gate vector of one AFA block for one validation input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateDump {
    pub sample_id: String,
    pub domain: Domain,
    pub block: usize,
    pub gate: Vec<f64>,
}

/// Eval-mode gates for the first `per_domain` validation inputs of each
/// domain.
pub fn dump_gates(model: &DabcModel, samples: &[SceneSample], geometry: &Geometry, per_domain: usize) -> Result<Vec<GateDump>> {
    let mut out = Vec::new();
    for domain in Domain::ALL {
        for s in samples.iter().filter(|s| s.domain == domain).take(per_domain) {
            let prepared = preprocess_eval(s, geometry)?;
            let records = model.forward(&prepared.image, Mode::Eval)?.attention;
            out.extend(records.into_iter().map(|r| GateDump {
                sample_id: s.id.clone(),
                domain,
                block: r.block,
                gate: r.gate,
            }));
        }
    }
    Ok(out)
}

pub const GATE_CSV_HEADER: &str = "sample,domain,block,channel,activation";

pub fn gates_to_csv(dumps: &[GateDump]) -> String {
    let mut out = format!("{GATE_CSV_HEADER}\n");
    for d in dumps {
        for (c, a) in d.gate.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{}", d.sample_id, d.domain, d.block, c, a);
        }
    }
    out
}

pub fn gates_from_csv(text: &str) -> Result<Vec<GateDump>> {
    let mut out: Vec<GateDump> = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || Error::Parameter(format!("malformed gate CSV line {}: {line:?}", n + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad());
        }
        let domain: Domain = f[1].parse()?;
        let block: usize = f[2].parse().map_err(|_| bad())?;
        let channel: usize = f[3].parse().map_err(|_| bad())?;
        let value: f64 = f[4].parse().map_err(|_| bad())?;
        match out.last_mut() {
            Some(last) if last.sample_id == f[0] && last.block == block && channel == last.gate.len() => last.gate.push(value),
            _ if channel == 0 => out.push(GateDump {
                sample_id: f[0].to_string(),
                domain,
                block,
                gate: vec![value],
            }),
            _ => return Err(bad()),
        }
    }
    Ok(out)
}

/// One line plot per AFA block, indoor inputs in blue, outdoor in orange.
pub fn plot_gates(dir: &Path, dumps: &[GateDump]) -> Result<Vec<PathBuf>> {
    let mut blocks: Vec<usize> = dumps.iter().map(|d| d.block).collect();
    blocks.sort_unstable();
    blocks.dedup();
    blocks
        .into_iter()
        .map(|b| {
            let series: Vec<LineSeries> = dumps
                .iter()
                .filter(|d| d.block == b)
                .map(|d| LineSeries {
                    values: d.gate.clone(),
                    color: domain_line_color(d.domain),
                })
                .collect();
            let path = dir.join(format!("afa_block{b}.png"));
            save_lines_png(&path, &series)?;
            Ok(path)
        })
        .collect()
}

/// Comparison table for one domain, one row per method.
pub fn metric_table(rows: &[(String, &MetricReport)]) -> String {
    let mut out = format!("method,{CSV_HEADER}\n");
    for (name, r) in rows {
        let _ = writeln!(out, "{name},{}", r.csv_row());
    }
    out
}

/// Output locations and in-memory results of one experiment run.
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub variants: Vec<VariantResult>,
    pub gates: Vec<GateDump>,
}

impl ExperimentReport {
    pub fn variant(&self, v: Variant) -> Option<&VariantResult> {
        self.variants.iter().find(|r| r.variant == v)
    }
}

struct Output {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Output {
    fn create(root: &Path, kind: ExperimentKind) -> Result<Self> {
        let dir = root.join(kind.name());
        fs::create_dir_all(dir.join("tables"))?;
        fs::create_dir_all(dir.join("figures"))?;
        fs::create_dir_all(dir.join("checkpoints"))?;
        Ok(Self { dir, files: Vec::new() })
    }

    fn write(&mut self, rel: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(rel);
        fs::write(&path, contents)?;
        self.files.push(path);
        Ok(())
    }

    fn path(&mut self, rel: &str) -> PathBuf {
        let p = self.dir.join(rel);
        self.files.push(p.clone());
        p
    }
}

fn variants_for(kind: ExperimentKind) -> Vec<Variant> {
    use Domain::{Indoor, Outdoor};
    match kind {
        ExperimentKind::ClsVsReg => vec![
            Variant::regression(Some(Indoor)),
            Variant::regression(Some(Outdoor)),
            Variant::regression(None),
            Variant::classification(Some(Indoor)),
            Variant::classification(Some(Outdoor)),
            Variant::classification(None),
        ],
        ExperimentKind::AttentionAblation => vec![Variant::without_attention(), Variant::classification(None)],
        ExperimentKind::Confusion => vec![Variant::regression(None), Variant::classification(None)],
        ExperimentKind::AttentionDump => vec![Variant::classification(None)],
    }
}

/// Trains (or loads) the variants `kind` needs, evaluates them per domain
/// and writes `<out>/<kind>/{tables,figures,checkpoints,config.json}`.
pub fn run_experiment(kind: ExperimentKind, cfg: &ExperimentConfig, out_root: &Path) -> Result<ExperimentReport> {
    let data = Datasets::synthetic(cfg)?;
    let mut out = Output::create(out_root, kind)?;
    out.write("config.json", &serde_json::to_string_pretty(cfg)?)?;

    let mut variants = Vec::new();
    for v in variants_for(kind) {
        let r = run_variant(cfg, &data, v)?;
        if let Some(run) = &r.training {
            let ckpt = out.path(&format!("checkpoints/{}.ckpt", v.slug()));
            run.checkpoint.save(&ckpt, Precision::F64)?;
            out.write(&format!("tables/train_log_{}.csv", v.slug()), &run.log.to_csv())?;
        }
        variants.push(r);
    }
    let find = |v: Variant| variants.iter().find(|r| r.variant == v).expect("variant was run");
    let mut gates = Vec::new();

    match kind {
        ExperimentKind::ClsVsReg => {
            for d in Domain::ALL {
                let rows = [
                    ("Regression*", Variant::regression(Some(d))),
                    ("Regression", Variant::regression(None)),
                    ("Classification*", Variant::classification(Some(d))),
                    ("Classification", Variant::classification(None)),
                ]
                .map(|(name, v)| (name.to_string(), &find(v).evaluation.per_domain[&d]));
                out.write(&format!("tables/cls_vs_reg_{d}.csv"), &metric_table(&rows))?;
            }
        }
        ExperimentKind::AttentionAblation => {
            for d in Domain::ALL {
                let rows = [
                    ("DABC w/o attention", Variant::without_attention()),
                    ("DABC", Variant::classification(None)),
                ]
                .map(|(name, v)| (name.to_string(), &find(v).evaluation.per_domain[&d]));
                out.write(&format!("tables/attention_ablation_{d}.csv"), &metric_table(&rows))?;
            }
            gates = dump_gates(&find(Variant::classification(None)).checkpoint.to_model()?, &data.val, &cfg.geometry, cfg.dump_inputs)?;
            out.write("tables/attention_gates.csv", &gates_to_csv(&gates))?;
            let dir = out.dir.join("figures");
            out.files.extend(plot_gates(&dir, &gates)?);
        }
        ExperimentKind::Confusion => {
            let mut summary = String::from("model,window,diagonal_band_mass\n");
            for (name, v) in [("regression", Variant::regression(None)), ("classification", Variant::classification(None))] {
                let full = &find(v).evaluation.confusion;
                let window = full.submatrix_view(OVERLAP_WINDOW.0, OVERLAP_WINDOW.1)?;
                for (tag, cm) in [("full", full), ("window", &window)] {
                    let stem = format!("confusion_{name}_{tag}");
                    out.write(&format!("tables/{stem}.csv"), &cm.to_csv(false))?;
                    out.write(&format!("tables/{stem}_normalized.csv"), &cm.to_csv(true))?;
                    let png = out.path(&format!("figures/{stem}.png"));
                    save_confusion_png(&png, cm)?;
                    let _ = writeln!(summary, "{name},{tag},{}", cm.diagonal_band_mass(DIAGONAL_BAND));
                }
            }
            out.write("tables/confusion_summary.csv", &summary)?;
        }
        ExperimentKind::AttentionDump => {
            gates = dump_gates(&find(Variant::classification(None)).checkpoint.to_model()?, &data.val, &cfg.geometry, cfg.dump_inputs)?;
            out.write("tables/attention_gates.csv", &gates_to_csv(&gates))?;
            let dir = out.dir.join("figures");
            out.files.extend(plot_gates(&dir, &gates)?);
        }
    }
    Ok(ExperimentReport {
        kind,
        dir: out.dir,
        files: out.files,
        variants,
        gates,
    })
}

/// Reads back a counts CSV written by the confusion experiment.
pub fn load_confusion_csv(path: &Path) -> Result<ConfusionMatrix> {
    ConfusionMatrix::from_counts_csv(&fs::read_to_string(path)?)
}

/// Pooled validation absRel per domain for quick comparisons.
pub fn abs_rel_by_domain(report: &EvaluationReport) -> BTreeMap<Domain, f64> {
    report.per_domain.iter().map(|(d, r)| (*d, r.abs_rel)).collect()
}

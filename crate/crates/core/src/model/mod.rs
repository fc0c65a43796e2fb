//! The attention-gated classification network.
//!
//! Layout (strides relative to the input):
//!
//! ```text
//! image -> encoder -> f1 (/4), f2 (/8), f3 (/16), f4 (/32)
//! f4 -> global context (1x1 conv, pool, broadcast) = state
//! for f in [f4, f3, f2, f1]:
//!     state = FTB_out(AFA(high = state, low = FTB_in(f)))
//!     state = upsample x2 (skipped after f1)
//! state (/4) -> dropout -> 3x3 conv -> logits or log10 depth
//! ```

mod blocks;
pub mod checkpoint;
mod encoder;
mod head;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use blocks::{gate_hidden_width, Afa, AfaCache, Ftb, FtbCache, GlobalContext, GlobalContextCache};
pub use checkpoint::{Checkpoint, Precision, ScheduleState};
pub use encoder::{Encoder, EncoderCache};
pub use head::{HeadCache, PredictionHead};

use crate::data::DepthMap;
use crate::nn::{ops, Grads, ParamSet, Tensor};
use crate::quantizer::{Decoding, QuantizationSpec, ScoreVolume};
use crate::{Error, Result};

pub type FeatureMap = Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Classification,
    Regression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Encoder channels at strides 4, 8, 16, 32.
    pub stage_widths: [usize; 4],
    pub fusion_width: usize,
    /// Width of the global context and the block fed by f4; defaults to
    /// `fusion_width`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_fusion_width: Option<usize>,
    pub num_classes: usize,
    pub attention_enabled: bool,
    pub head: HeadKind,
    pub dropout_rate: f64,
}

impl ModelConfig {
    /// Desk-scale classification model for `spec`.
    pub fn classification(spec: &QuantizationSpec) -> Self {
        Self {
            stage_widths: [32, 64, 128, 256],
            fusion_width: 64,
            top_fusion_width: None,
            num_classes: spec.num_classes(),
            attention_enabled: true,
            head: HeadKind::Classification,
            dropout_rate: 0.5,
        }
    }

    /// Regression baseline: one log10-depth channel, no attention gates.
    pub fn regression() -> Self {
        Self {
            num_classes: 1,
            attention_enabled: false,
            head: HeadKind::Regression,
            ..Self::classification(&QuantizationSpec::default())
        }
    }

    /// Decoder widths of the full-scale network (512 at the top block,
    /// 256 elsewhere) on top of a ResNeXt-like channel progression.
    pub fn full_scale(spec: &QuantizationSpec) -> Self {
        Self {
            stage_widths: [256, 512, 1024, 2048],
            fusion_width: 256,
            top_fusion_width: Some(512),
            ..Self::classification(spec)
        }
    }

    pub fn with_widths(mut self, stage_widths: [usize; 4], fusion_width: usize) -> Self {
        self.stage_widths = stage_widths;
        self.fusion_width = fusion_width;
        self.top_fusion_width = None;
        self
    }

    pub fn top_width(&self) -> usize {
        self.top_fusion_width.unwrap_or(self.fusion_width)
    }

    pub fn output_channels(&self) -> usize {
        match self.head {
            HeadKind::Classification => self.num_classes,
            HeadKind::Regression => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_widths.contains(&0) || self.fusion_width == 0 || self.top_width() == 0 {
            return Err(Error::Parameter("all widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Parameter(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        match self.head {
            HeadKind::Classification if self.num_classes < 2 => {
                Err(Error::Parameter("classification needs at least two classes".into()))
            }
            HeadKind::Regression if self.num_classes != 1 => Err(Error::Parameter(
                "regression head outputs exactly one channel; set num_classes to 1".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Checks a classification config against the quantiser it decodes with.
    pub fn check_spec(&self, spec: &QuantizationSpec) -> Result<()> {
        if self.head == HeadKind::Classification && self.num_classes != spec.num_classes() {
            return Err(Error::Parameter(format!(
                "model predicts {} classes but the spec has {}",
                self.num_classes,
                spec.num_classes()
            )));
        }
        Ok(())
    }
}

/// Gate vector of one AFA block for one batch item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    /// Encoder block the AFA fuses, 4 (top) down to 1.
    pub block: usize,
    /// Batch index of the input.
    pub input: usize,
    pub gate: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active with masks drawn from `dropout_seed`.
    Train { dropout_seed: u64 },
}

#[derive(Clone, Debug)]
struct FusionBlock {
    level: usize,
    transfer_in: Ftb,
    afa: Afa,
    transfer_out: Ftb,
    upsample: bool,
}

struct FusionCache {
    transfer_in: FtbCache,
    afa: AfaCache,
    transfer_out: FtbCache,
    pre_upsample: (usize, usize),
}

pub struct DecoderCache {
    blocks: Vec<FusionCache>,
}

pub struct Tape {
    encoder: EncoderCache,
    context: GlobalContextCache,
    decoder: DecoderCache,
    head: HeadCache,
}

/// Output of the network before decoding.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Scores(ScoreVolume),
    /// log10 depth, one channel.
    LogDepth(Tensor),
}

impl Prediction {
    /// Metric depth per batch item at the prediction resolution;
    /// regression outputs are clamped to the spec's depth range.
    pub fn depth_maps(&self, spec: &QuantizationSpec) -> Result<Vec<DepthMap>> {
        match self {
            Prediction::Scores(s) => s.decode(spec, Decoding::SoftWeightedSum),
            Prediction::LogDepth(t) => (0..t.batch())
                .map(|b| {
                    DepthMap::new(
                        t.height(),
                        t.width(),
                        t.plane(b, 0)
                            .iter()
                            .map(|&v| 10f64.powf(v).clamp(spec.alpha(), spec.beta()))
                            .collect(),
                    )
                })
                .collect(),
        }
    }
}

pub struct ModelOutput {
    pub prediction: Prediction,
    pub attention: Vec<AttentionRecord>,
}

#[derive(Clone, Debug)]
pub struct DabcModel {
    config: ModelConfig,
    params: ParamSet,
    encoder: Encoder,
    context: GlobalContext,
    blocks: Vec<FusionBlock>,
    head: PredictionHead,
}

impl DabcModel {
    /// Builds a model with Gaussian weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let widths = config.stage_widths;
        let f = config.fusion_width;
        let top = config.top_width();
        let encoder = Encoder::new(&mut params, &mut rng, widths);
        let context = GlobalContext::new(&mut params, &mut rng, "context", widths[3], top);
        let blocks = (1..=4)
            .rev()
            .map(|level| {
                let name = format!("decoder.block{level}");
                let width = if level == 4 { top } else { f };
                FusionBlock {
                    level,
                    transfer_in: Ftb::new(&mut params, &mut rng, &format!("{name}.ftb_in"), widths[level - 1], width),
                    afa: Afa::new(&mut params, &mut rng, &format!("{name}.afa"), width, config.attention_enabled),
                    transfer_out: Ftb::new(&mut params, &mut rng, &format!("{name}.ftb_out"), width, f),
                    upsample: level > 1,
                }
            })
            .collect();
        let head = PredictionHead::new(&mut params, &mut rng, f, config.output_channels(), config.dropout_rate);
        Ok(Self {
            config,
            params,
            encoder,
            context,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }
    pub fn params(&self) -> &ParamSet {
        &self.params
    }
    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Replaces all weights; names and shapes must match this model.
    pub fn load_params(&mut self, params: &ParamSet) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors supplied, model has {}",
                params.len(),
                self.params.len()
            )));
        }
        self.params.copy_from(params)
    }

    pub fn encoder_forward(&self, image: &Tensor) -> Result<Vec<FeatureMap>> {
        Ok(self.encoder.forward(&self.params, image)?.0)
    }

    pub fn global_context(&self, f4: &FeatureMap) -> Result<FeatureMap> {
        Ok(self.context.forward(&self.params, f4)?.0)
    }

    fn decode_features(&self, feats: &[Tensor], context: &Tensor) -> Result<(Tensor, Vec<AttentionRecord>, DecoderCache)> {
        if feats.len() != 4 {
            return Err(Error::Shape(format!("expected 4 encoder features, got {}", feats.len())));
        }
        let mut state = context.clone();
        let mut records = Vec::new();
        let mut caches = Vec::with_capacity(4);
        for block in &self.blocks {
            let (low, transfer_in) = block.transfer_in.forward(&self.params, &feats[block.level - 1])?;
            let (fused, gate, afa) = block.afa.forward(&self.params, &state, &low)?;
            if let Some(gate) = gate {
                for b in 0..gate.batch() {
                    records.push(AttentionRecord {
                        block: block.level,
                        input: b,
                        gate: gate.item(b).to_vec(),
                    });
                }
            }
            let (out, transfer_out) = block.transfer_out.forward(&self.params, &fused)?;
            let pre_upsample = (out.height(), out.width());
            state = if block.upsample {
                ops::resize_bilinear(&out, 2 * out.height(), 2 * out.width())
            } else {
                out
            };
            caches.push(FusionCache {
                transfer_in,
                afa,
                transfer_out,
                pre_upsample,
            });
        }
        Ok((state, records, DecoderCache { blocks: caches }))
    }

    /// Fuses encoder features from the top down; output is at stride 4.
    pub fn decoder_forward(&self, feats: &[FeatureMap], context: &FeatureMap) -> Result<(FeatureMap, Vec<AttentionRecord>)> {
        let (out, records, _) = self.decode_features(feats, context)?;
        Ok((out, records))
    }

    /// Applies the head and, for classification, the per-pixel softmax.
    pub fn predict_scores(&self, decoded: &FeatureMap, mode: Mode) -> Result<Prediction> {
        let (raw, _) = self.head.forward(&self.params, decoded, dropout_seed(mode))?;
        Ok(self.finish(raw))
    }

    fn finish(&self, raw: Tensor) -> Prediction {
        match self.config.head {
            HeadKind::Classification => {
                Prediction::Scores(ScoreVolume::new(ops::softmax_channels(&raw)).expect("softmax output is normalised"))
            }
            HeadKind::Regression => Prediction::LogDepth(raw),
        }
    }

    /// Raw head output (logits or log10 depth) plus everything needed for
    /// [`backward`](Self::backward).
    pub fn forward_train(&self, image: &Tensor, mode: Mode) -> Result<(Tensor, Vec<AttentionRecord>, Tape)> {
        let (feats, encoder) = self.encoder.forward(&self.params, image)?;
        let (context_out, context) = self.context.forward(&self.params, &feats[3])?;
        let (decoded, records, decoder) = self.decode_features(&feats, &context_out)?;
        let (raw, head) = self.head.forward(&self.params, &decoded, dropout_seed(mode))?;
        Ok((
            raw,
            records,
            Tape {
                encoder,
                context,
                decoder,
                head,
            },
        ))
    }

    pub fn forward(&self, image: &Tensor, mode: Mode) -> Result<ModelOutput> {
        let (raw, attention, _) = self.forward_train(image, mode)?;
        Ok(ModelOutput {
            prediction: self.finish(raw),
            attention,
        })
    }

    /// Parameter gradients and the image gradient for an upstream gradient
    /// on the raw head output.
    pub fn backward(&self, tape: &Tape, d_raw: &Tensor) -> Result<(Grads, Tensor)> {
        let mut grads = self.params.zero_grads();
        let p = &self.params;
        let mut dstate = self.head.backward(p, &tape.head, d_raw, &mut grads)?;
        let mut dfeats: Vec<Tensor> = Vec::with_capacity(4);
        for (block, cache) in self.blocks.iter().zip(&tape.decoder.blocks).rev() {
            let dout = if block.upsample {
                ops::resize_bilinear_backward(&dstate, cache.pre_upsample.0, cache.pre_upsample.1)
            } else {
                dstate
            };
            let dfused = block.transfer_out.backward(p, &cache.transfer_out, &dout, &mut grads)?;
            let (dhigh, dlow) = block.afa.backward(p, &cache.afa, &dfused, &mut grads)?;
            dfeats.push(block.transfer_in.backward(p, &cache.transfer_in, &dlow, &mut grads)?);
            dstate = dhigh;
        }
        // dfeats was filled for levels 1..=4 in that order
        let dcontext = self.context.backward(p, &tape.context, &dstate, &mut grads)?;
        dfeats[3].add_assign(&dcontext);
        let dimage = self.encoder.backward(p, &tape.encoder, &dfeats, &mut grads)?;
        Ok((grads, dimage))
    }
}

fn dropout_seed(mode: Mode) -> Option<u64> {
    match mode {
        Mode::Eval => None,
        Mode::Train { dropout_seed } => Some(dropout_seed),
    }
}

#[cfg(test)]
mod tests;

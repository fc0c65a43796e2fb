//! Four-stage residual encoder producing features at strides 4, 8, 16, 32.

use rand::Rng;

use crate::nn::{ops, Conv2d, ConvGeometry, ConvOptions, Grads, ParamSet, ResidualCache, ResidualUnit, Tensor};
use crate::{Error, Result};

#[derive(Clone, Debug)]
struct Stage {
    down: Conv2d,
    unit: ResidualUnit,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    stem: Conv2d,
    stages: Vec<Stage>,
}

struct StageCache {
    input: Tensor,
    activated: Tensor,
    unit: ResidualCache,
}

pub struct EncoderCache {
    image: Tensor,
    stem_out: Tensor,
    stages: Vec<StageCache>,
}

impl Encoder {
    pub fn new(params: &mut ParamSet, rng: &mut impl Rng, widths: [usize; 4]) -> Self {
        let stem_width = (widths[0] / 2).max(8);
        let stem = Conv2d::new(
            params,
            rng,
            "encoder.stem",
            3,
            stem_width,
            ConvGeometry::new(3, 2, 1),
            ConvOptions::default(),
        );
        let mut in_ch = stem_width;
        let stages = widths
            .iter()
            .enumerate()
            .map(|(k, &w)| {
                let name = format!("encoder.block{}", k + 1);
                let down = Conv2d::new(
                    params,
                    rng,
                    &format!("{name}.down"),
                    in_ch,
                    w,
                    ConvGeometry::new(3, 2, 1),
                    ConvOptions::default(),
                );
                let unit = ResidualUnit::new(params, rng, &format!("{name}.unit"), w, true);
                in_ch = w;
                Stage { down, unit }
            })
            .collect();
        Self { stem, stages }
    }

    /// Returns `[f1, f2, f3, f4]` at strides 4, 8, 16 and 32.
    pub fn forward(&self, params: &ParamSet, image: &Tensor) -> Result<(Vec<Tensor>, EncoderCache)> {
        let [_, c, h, w] = image.shape();
        if c != 3 {
            return Err(Error::Shape(format!("expected an RGB input, got {c} channels")));
        }
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} must have both sides divisible by 32"
            )));
        }
        let stem_out = ops::relu(&self.stem.forward(params, image)?);
        let mut x = stem_out.clone();
        let mut feats = Vec::with_capacity(4);
        let mut caches = Vec::with_capacity(4);
        for stage in &self.stages {
            let activated = ops::relu(&stage.down.forward(params, &x)?);
            let (out, unit) = stage.unit.forward(params, &activated)?;
            caches.push(StageCache {
                input: x,
                activated,
                unit,
            });
            feats.push(out.clone());
            x = out;
        }
        Ok((
            feats,
            EncoderCache {
                image: image.clone(),
                stem_out,
                stages: caches,
            },
        ))
    }

    /// `dfeats[k]` is the gradient reaching `f_{k+1}` from the decoder.
    pub fn backward(&self, params: &ParamSet, cache: &EncoderCache, dfeats: &[Tensor], grads: &mut Grads) -> Result<Tensor> {
        let mut carry: Option<Tensor> = None;
        for (k, stage) in self.stages.iter().enumerate().rev() {
            let mut d = dfeats[k].clone();
            if let Some(c) = carry.take() {
                d.add_assign(&c);
            }
            let sc = &cache.stages[k];
            let dact = stage.unit.backward(params, &sc.unit, &d, grads)?;
            let dpre = ops::relu_backward(&sc.activated, &dact);
            carry = Some(stage.down.backward(params, &sc.input, &dpre, grads)?);
        }
        let dstem = ops::relu_backward(&cache.stem_out, &carry.expect("four stages"));
        self.stem.backward(params, &cache.image, &dstem, grads)
    }
}

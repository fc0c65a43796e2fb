use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::{Conv2d, ConvGeometry, ConvOptions, Grads, Init, ParamSet, Tensor};
use crate::Result;

/// Dropout followed by a 3x3 convolution to the output channels.
#[derive(Clone, Debug)]
pub struct PredictionHead {
    pub conv: Conv2d,
    pub dropout_rate: f64,
}

pub struct HeadCache {
    input: Tensor,
    mask: Option<Vec<f64>>,
}

impl PredictionHead {
    pub fn new(params: &mut ParamSet, rng: &mut impl Rng, in_channels: usize, out_channels: usize, dropout_rate: f64) -> Self {
        let conv = Conv2d::new(
            params,
            rng,
            "head.conv",
            in_channels,
            out_channels,
            ConvGeometry::new(3, 1, 1),
            ConvOptions {
                init: Init::ScaledHe(0.5),
                ..Default::default()
            },
        );
        Self { conv, dropout_rate }
    }

    /// `dropout_seed` is `None` in evaluation mode.
    pub fn forward(&self, params: &ParamSet, x: &Tensor, dropout_seed: Option<u64>) -> Result<(Tensor, HeadCache)> {
        let (input, mask) = match dropout_seed {
            Some(seed) if self.dropout_rate > 0.0 => {
                let keep = 1.0 - self.dropout_rate;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mask: Vec<f64> = (0..x.len())
                    .map(|_| if rng.random_bool(keep) { 1.0 / keep } else { 0.0 })
                    .collect();
                let mut dropped = x.clone();
                for (v, m) in dropped.data_mut().iter_mut().zip(&mask) {
                    *v *= m;
                }
                (dropped, Some(mask))
            }
            _ => (x.clone(), None),
        };
        let out = self.conv.forward(params, &input)?;
        Ok((out, HeadCache { input, mask }))
    }

    pub fn backward(&self, params: &ParamSet, cache: &HeadCache, dy: &Tensor, grads: &mut Grads) -> Result<Tensor> {
        let mut dx = self.conv.backward(params, &cache.input, dy, grads)?;
        if let Some(mask) = &cache.mask {
            for (v, m) in dx.data_mut().iter_mut().zip(mask) {
                *v *= m;
            }
        }
        Ok(dx)
    }
}

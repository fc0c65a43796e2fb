//! Global-context branch, feature transfer block (FTB) and
//! attention-based feature aggregation block (AFA).

use rand::Rng;

use crate::nn::{ops, Conv2d, ConvGeometry, ConvOptions, Grads, Init, ParamSet, ResidualCache, ResidualUnit, Tensor};
use crate::{Error, Result};

/// 1x1 channel reduction, global average pooling, then spatial broadcast
/// back to the input resolution.
#[derive(Clone, Debug)]
pub struct GlobalContext {
    pub reduce: Conv2d,
}

pub struct GlobalContextCache {
    input: Tensor,
    reduced_shape: [usize; 4],
}

impl GlobalContext {
    pub fn new(params: &mut ParamSet, rng: &mut impl Rng, name: &str, in_channels: usize, out_channels: usize) -> Self {
        let reduce = Conv2d::new(
            params,
            rng,
            &format!("{name}.reduce"),
            in_channels,
            out_channels,
            ConvGeometry::new(1, 1, 0),
            ConvOptions::default(),
        );
        Self { reduce }
    }

    pub fn forward(&self, params: &ParamSet, f4: &Tensor) -> Result<(Tensor, GlobalContextCache)> {
        let reduced = self.reduce.forward(params, f4)?;
        let pooled = ops::global_avg_pool(&reduced);
        let out = ops::broadcast_spatial(&pooled, f4.height(), f4.width());
        Ok((
            out,
            GlobalContextCache {
                input: f4.clone(),
                reduced_shape: reduced.shape(),
            },
        ))
    }

    pub fn backward(&self, params: &ParamSet, cache: &GlobalContextCache, dy: &Tensor, grads: &mut Grads) -> Result<Tensor> {
        let [_, _, h, w] = cache.reduced_shape;
        let dpooled = ops::broadcast_spatial_backward(dy);
        let dreduced = ops::global_avg_pool_backward(&dpooled, h, w);
        self.reduce.backward(params, &cache.input, &dreduced, grads)
    }
}

/// 1x1 projection to the fusion width followed by a residual unit
/// (conv-relu-conv plus identity, no activation on the sum).
#[derive(Clone, Debug)]
pub struct Ftb {
    pub project: Conv2d,
    pub unit: ResidualUnit,
}

pub struct FtbCache {
    input: Tensor,
    unit: ResidualCache,
}

impl Ftb {
    pub fn new(params: &mut ParamSet, rng: &mut impl Rng, name: &str, in_channels: usize, out_channels: usize) -> Self {
        let project = Conv2d::new(
            params,
            rng,
            &format!("{name}.project"),
            in_channels,
            out_channels,
            ConvGeometry::new(1, 1, 0),
            ConvOptions {
                init: Init::ScaledHe((0.5f64).sqrt()),
                ..Default::default()
            },
        );
        let unit = ResidualUnit::new(params, rng, &format!("{name}.unit"), out_channels, false);
        Self { project, unit }
    }

    pub fn out_channels(&self) -> usize {
        self.project.out_channels
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<(Tensor, FtbCache)> {
        if x.channels() != self.project.in_channels {
            return Err(Error::Shape(format!(
                "FTB expects {} channels, got {}",
                self.project.in_channels,
                x.channels()
            )));
        }
        let projected = self.project.forward(params, x)?;
        let (out, unit) = self.unit.forward(params, &projected)?;
        Ok((out, FtbCache { input: x.clone(), unit }))
    }

    pub fn backward(&self, params: &ParamSet, cache: &FtbCache, dy: &Tensor, grads: &mut Grads) -> Result<Tensor> {
        let dproj = self.unit.backward(params, &cache.unit, dy, grads)?;
        self.project.backward(params, &cache.input, &dproj, grads)
    }
}

/// Channel gate computed from the pooled concatenation of both inputs and
/// applied to the low-level input before summation:
/// `fused = high + sigmoid(g(pool([high, low]))) * low`.
///
/// Without a gate network the block reduces to `high + low`.
#[derive(Clone, Debug)]
pub struct Afa {
    pub channels: usize,
    pub gate: Option<(Conv2d, Conv2d)>,
}

pub struct AfaCache {
    high_shape: [usize; 4],
    low: Tensor,
    pooled: Tensor,
    hidden: Tensor,
    gate: Tensor,
}

/// Hidden width of the gate network.
pub fn gate_hidden_width(channels: usize) -> usize {
    (channels / 4).max(1)
}

impl Afa {
    pub fn new(params: &mut ParamSet, rng: &mut impl Rng, name: &str, channels: usize, attention: bool) -> Self {
        let gate = attention.then(|| {
            let hidden = gate_hidden_width(channels);
            let g = ConvGeometry::new(1, 1, 0);
            let first = Conv2d::new(
                params,
                rng,
                &format!("{name}.gate1"),
                2 * channels,
                hidden,
                g,
                ConvOptions {
                    init: Init::He,
                    bias_decay: false,
                },
            );
            let second = Conv2d::new(
                params,
                rng,
                &format!("{name}.gate2"),
                hidden,
                channels,
                g,
                ConvOptions {
                    init: Init::ScaledHe(0.5),
                    bias_decay: false,
                },
            );
            (first, second)
        });
        Self { channels, gate }
    }

    pub fn forward(&self, params: &ParamSet, high: &Tensor, low: &Tensor) -> Result<(Tensor, Option<Tensor>, AfaCache)> {
        if high.shape() != low.shape() || high.channels() != self.channels {
            return Err(Error::Shape(format!(
                "AFA with {} channels got high {:?} and low {:?}",
                self.channels,
                high.shape(),
                low.shape()
            )));
        }
        let [n, c, h, w] = high.shape();
        let Some((first, second)) = &self.gate else {
            let fused = high.add(low)?;
            let cache = AfaCache {
                high_shape: high.shape(),
                low: Tensor::zeros([0, 0, 0, 0]),
                pooled: Tensor::zeros([0, 0, 0, 0]),
                hidden: Tensor::zeros([0, 0, 0, 0]),
                gate: Tensor::full([n, c, 1, 1], 1.0),
            };
            return Ok((fused, None, cache));
        };
        let ph = ops::global_avg_pool(high);
        let pl = ops::global_avg_pool(low);
        let pooled = Tensor::from_fn([n, 2 * c, 1, 1], |[b, ch, _, _]| {
            if ch < c {
                ph.at(b, ch, 0, 0)
            } else {
                pl.at(b, ch - c, 0, 0)
            }
        });
        let hidden = ops::relu(&first.forward(params, &pooled)?);
        let gate = second.forward(params, &hidden)?.map(ops::sigmoid);
        let mut fused = high.clone();
        let p = h * w;
        for b in 0..n {
            for ch in 0..c {
                let a = gate.at(b, ch, 0, 0);
                let src = low.plane(b, ch);
                for (dst, &l) in fused.plane_mut(b, ch)[..p].iter_mut().zip(src) {
                    *dst += a * l;
                }
            }
        }
        let record = gate.clone();
        Ok((
            fused,
            Some(record),
            AfaCache {
                high_shape: high.shape(),
                low: low.clone(),
                pooled,
                hidden,
                gate,
            },
        ))
    }

    /// Returns gradients for (high, low).
    pub fn backward(&self, params: &ParamSet, cache: &AfaCache, dy: &Tensor, grads: &mut Grads) -> Result<(Tensor, Tensor)> {
        let Some((first, second)) = &self.gate else {
            return Ok((dy.clone(), dy.clone()));
        };
        let [n, c, h, w] = cache.high_shape;
        let mut dhigh = dy.clone();
        let mut dlow = Tensor::zeros(cache.high_shape);
        let mut dlogit = Tensor::zeros([n, c, 1, 1]);
        for b in 0..n {
            for ch in 0..c {
                let a = cache.gate.at(b, ch, 0, 0);
                let g = dy.plane(b, ch);
                let l = cache.low.plane(b, ch);
                let da: f64 = g.iter().zip(l).map(|(g, l)| g * l).sum();
                dlogit.set(b, ch, 0, 0, da * a * (1.0 - a));
                for (d, &gv) in dlow.plane_mut(b, ch).iter_mut().zip(g) {
                    *d = a * gv;
                }
            }
        }
        let dhidden = second.backward(params, &cache.hidden, &dlogit, grads)?;
        let dpre = ops::relu_backward(&cache.hidden, &dhidden);
        let dpooled = first.backward(params, &cache.pooled, &dpre, grads)?;
        let inv = 1.0 / (h * w) as f64;
        for b in 0..n {
            for ch in 0..c {
                let gh = dpooled.at(b, ch, 0, 0) * inv;
                let gl = dpooled.at(b, c + ch, 0, 0) * inv;
                dhigh.plane_mut(b, ch).iter_mut().for_each(|v| *v += gh);
                dlow.plane_mut(b, ch).iter_mut().for_each(|v| *v += gl);
            }
        }
        Ok((dhigh, dlow))
    }
}

use rand::Rng;

use super::ops::{self, ConvGeometry};
use super::{Grads, Init, ParamId, ParamSet, Tensor};
use crate::Result;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geometry: ConvGeometry,
    pub in_channels: usize,
    pub out_channels: usize,
}

pub struct ConvOptions {
    pub init: Init,
    pub bias_decay: bool,
}

impl Default for ConvOptions {
    fn default() -> Self {
        Self {
            init: Init::He,
            bias_decay: true,
        }
    }
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamSet,
        rng: &mut impl Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
        opts: ConvOptions,
    ) -> Self {
        let k = geometry.kernel;
        let w = opts.init.sample([out_channels, in_channels, k, k], rng);
        let weight = params.add(format!("{name}.weight"), w, true);
        let bias = params.add(
            format!("{name}.bias"),
            Tensor::zeros([out_channels, 1, 1, 1]),
            opts.bias_decay,
        );
        Self {
            weight,
            bias,
            geometry,
            in_channels,
            out_channels,
        }
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        ops::conv2d(x, params.get(self.weight), params.get(self.bias), self.geometry)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(
        &self,
        params: &ParamSet,
        x: &Tensor,
        dy: &Tensor,
        grads: &mut Grads,
    ) -> Result<Tensor> {
        let g = ops::conv2d_backward(x, params.get(self.weight), dy, self.geometry)?;
        grads.accumulate(self.weight, &g.weight);
        grads.accumulate(self.bias, &g.bias);
        Ok(g.input)
    }
}

/// conv3x3 -> relu -> conv3x3 with an identity skip, optionally followed by
/// a relu on the sum.
#[derive(Clone, Debug)]
pub struct ResidualUnit {
    pub first: Conv2d,
    pub second: Conv2d,
    pub post_relu: bool,
}

pub struct ResidualCache {
    input: Tensor,
    hidden: Tensor,
    output: Tensor,
}

impl ResidualUnit {
    pub fn new(
        params: &mut ParamSet,
        rng: &mut impl Rng,
        name: &str,
        channels: usize,
        post_relu: bool,
    ) -> Self {
        let g = ConvGeometry::new(3, 1, 1);
        let first = Conv2d::new(
            params,
            rng,
            &format!("{name}.conv1"),
            channels,
            channels,
            g,
            ConvOptions::default(),
        );
        // Small second conv keeps the unit near identity at start.
        let second = Conv2d::new(
            params,
            rng,
            &format!("{name}.conv2"),
            channels,
            channels,
            g,
            ConvOptions {
                init: Init::ScaledHe(0.1),
                ..Default::default()
            },
        );
        Self {
            first,
            second,
            post_relu,
        }
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<(Tensor, ResidualCache)> {
        let hidden = ops::relu(&self.first.forward(params, x)?);
        let mut out = self.second.forward(params, &hidden)?;
        out.add_assign(x);
        if self.post_relu {
            out = ops::relu(&out);
        }
        Ok((
            out.clone(),
            ResidualCache {
                input: x.clone(),
                hidden,
                output: out,
            },
        ))
    }

    pub fn backward(
        &self,
        params: &ParamSet,
        cache: &ResidualCache,
        dy: &Tensor,
        grads: &mut Grads,
    ) -> Result<Tensor> {
        let dsum = if self.post_relu {
            ops::relu_backward(&cache.output, dy)
        } else {
            dy.clone()
        };
        let dhidden = self.second.backward(params, &cache.hidden, &dsum, grads)?;
        let dpre = ops::relu_backward(&cache.hidden, &dhidden);
        let mut dx = self.first.backward(params, &cache.input, &dpre, grads)?;
        dx.add_assign(&dsum);
        Ok(dx)
    }
}

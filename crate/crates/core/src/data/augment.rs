//! Training-time geometry: per-domain downsampling, random scaling,
//! horizontal flips, width cropping and zero padding to the network input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DepthMap, Domain, RgbImage, SceneSample, ValidMask};
use crate::nn::{ops, Tensor};
use crate::{Error, Result};

pub const SCALE_RANGE: (f64, f64) = (0.9, 1.1);

/// Network input size and the per-domain sizes images are downsampled to
/// before cropping and padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub net_height: usize,
    pub net_width: usize,
    pub indoor_size: (usize, usize),
    pub outdoor_size: (usize, usize),
}

impl Geometry {
    /// 256x320 input; indoor 240x320, outdoor 182x612 before cropping.
    pub fn full() -> Self {
        Self {
            net_height: 256,
            net_width: 320,
            indoor_size: (240, 320),
            outdoor_size: (182, 612),
        }
    }

    /// Desk-scale default, 64x96.
    pub fn toy() -> Self {
        Self::scaled(64, 96)
    }

    /// Keeps the full-scale proportions for an arbitrary network input.
    pub fn scaled(net_height: usize, net_width: usize) -> Self {
        let r = |v: usize, num: usize, den: usize| ((v * num) as f64 / den as f64).round() as usize;
        Self {
            net_height,
            net_width,
            indoor_size: (r(net_height, 240, 256), net_width),
            outdoor_size: (r(net_height, 182, 256), r(net_width, 612, 320)),
        }
    }

    pub fn domain_size(&self, domain: Domain) -> (usize, usize) {
        match domain {
            Domain::Indoor => self.indoor_size,
            Domain::Outdoor => self.outdoor_size,
        }
    }

    /// Native capture size: test-time inference halves it back to
    /// [`domain_size`](Self::domain_size).
    pub fn raw_size(&self, domain: Domain) -> (usize, usize) {
        let (h, w) = self.domain_size(domain);
        (2 * h, 2 * w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.net_height == 0 || self.net_width == 0 || !self.net_height.is_multiple_of(32) || !self.net_width.is_multiple_of(32) {
            return Err(Error::Parameter(format!(
                "network input {}x{} must be positive multiples of 32",
                self.net_height, self.net_width
            )));
        }
        for (h, w) in [self.indoor_size, self.outdoor_size] {
            if h == 0 || w == 0 {
                return Err(Error::Parameter("domain sizes must be positive".into()));
            }
            if h > self.net_height {
                return Err(Error::Parameter(format!(
                    "domain height {h} exceeds network height {}",
                    self.net_height
                )));
            }
        }
        Ok(())
    }
}

impl Default for Geometry {
    fn default() -> Self {
        Self::toy()
    }
}

/// One draw of the random augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Augmentation {
    pub flip: bool,
    pub scale: f64,
    /// Relative crop offsets in [0, 1].
    pub crop_x: f64,
    pub crop_y: f64,
}

impl Augmentation {
    pub fn identity() -> Self {
        Self {
            flip: false,
            scale: 1.0,
            crop_x: 0.5,
            crop_y: 0.0,
        }
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            flip: rng.random_bool(0.5),
            scale: rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1),
            crop_x: rng.random_range(0.0..=1.0),
            crop_y: rng.random_range(0.0..=1.0),
        }
    }
}

/// Network-ready sample: image tensor (1, 3, H, W), depth label map and
/// mask at the same size. Padded pixels are invalid with depth zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub image: Tensor,
    pub depth: DepthMap,
    pub valid: ValidMask,
    pub domain: Domain,
}

fn nearest_index(o: usize, input: usize, output: usize) -> usize {
    (((o as f64 + 0.5) * input as f64 / output as f64) as usize).min(input - 1)
}

/// Source pixel index (or `None` for padding) of every output pixel.
/// Depth, mask and the index-checks in tests all go through this map.
pub(crate) fn index_map(
    src: (usize, usize),
    domain: Domain,
    geometry: &Geometry,
    aug: &Augmentation,
) -> Result<(Vec<Option<usize>>, Layout)> {
    let layout = Layout::new(src, domain, geometry, aug)?;
    let (sh, sw) = src;
    let mut map = vec![None; geometry.net_height * geometry.net_width];
    for y in 0..layout.crop.0 {
        for x in 0..layout.crop.1 {
            let ry = y + layout.offset.0;
            let cx = if aug.flip { layout.crop.1 - 1 - x } else { x };
            let rx = cx + layout.offset.1;
            let sy = nearest_index(ry, sh, layout.resized.0);
            let sx = nearest_index(rx, sw, layout.resized.1);
            map[y * geometry.net_width + x] = Some(sy * sw + sx);
        }
    }
    Ok((map, layout))
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    resized: (usize, usize),
    crop: (usize, usize),
    offset: (usize, usize),
}

impl Layout {
    fn new(src: (usize, usize), domain: Domain, g: &Geometry, aug: &Augmentation) -> Result<Self> {
        g.validate()?;
        if src.0 == 0 || src.1 == 0 {
            return Err(Error::Parameter("empty sample".into()));
        }
        if !(aug.scale > 0.0) {
            return Err(Error::Parameter(format!("scale {} must be positive", aug.scale)));
        }
        let (th, tw) = g.domain_size(domain);
        let resized = (
            ((th as f64 * aug.scale).round() as usize).max(1),
            ((tw as f64 * aug.scale).round() as usize).max(1),
        );
        let crop = (resized.0.min(g.net_height), resized.1.min(g.net_width));
        let offset = (
            ((resized.0 - crop.0) as f64 * aug.crop_y.clamp(0.0, 1.0)).round() as usize,
            ((resized.1 - crop.1) as f64 * aug.crop_x.clamp(0.0, 1.0)).round() as usize,
        );
        Ok(Self {
            resized,
            crop,
            offset,
        })
    }
}

pub fn preprocess_with(sample: &SceneSample, geometry: &Geometry, aug: &Augmentation) -> Result<Prepared> {
    let src = sample.dims();
    let (map, layout) = index_map(src, sample.domain, geometry, aug)?;
    let (nh, nw) = (geometry.net_height, geometry.net_width);

    let mut depth = vec![0.0; nh * nw];
    let mut valid = vec![false; nh * nw];
    for (o, m) in map.iter().enumerate() {
        if let Some(i) = *m {
            if sample.valid.data()[i] {
                valid[o] = true;
                depth[o] = sample.depth.data()[i] / aug.scale;
            }
        }
    }

    let mut image = Tensor::zeros([1, 3, nh, nw]);
    for c in 0..3 {
        let resized = ops::resize_plane(sample.rgb.plane(c), src.0, src.1, layout.resized.0, layout.resized.1);
        let dst = image.plane_mut(0, c);
        for y in 0..layout.crop.0 {
            for x in 0..layout.crop.1 {
                let cx = if aug.flip { layout.crop.1 - 1 - x } else { x };
                dst[y * nw + x] = resized[(y + layout.offset.0) * layout.resized.1 + cx + layout.offset.1];
            }
        }
    }
    Ok(Prepared {
        image,
        depth: DepthMap::new(nh, nw, depth)?,
        valid: ValidMask::new(nh, nw, valid)?,
        domain: sample.domain,
    })
}

pub fn preprocess_train(sample: &SceneSample, geometry: &Geometry, rng: &mut impl Rng) -> Result<Prepared> {
    preprocess_with(sample, geometry, &Augmentation::random(rng))
}

pub fn preprocess_eval(sample: &SceneSample, geometry: &Geometry) -> Result<Prepared> {
    preprocess_with(sample, geometry, &Augmentation::identity())
}

/// Bilinear RGB resize used by tiled inference.
pub fn resize_rgb(img: &RgbImage, h: usize, w: usize) -> RgbImage {
    let mut data = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        data.extend(ops::resize_plane(img.plane(c), img.height(), img.width(), h, w));
    }
    RgbImage::new(h, w, data).expect("sizes agree by construction")
}

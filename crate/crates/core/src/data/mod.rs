//! Scene samples, synthetic generators, folder adapters, densification and
//! training-time preprocessing.

mod augment;
mod densify;
mod folder;
pub mod pfm;
mod sampler;
pub(crate) mod synth;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use augment::{
    preprocess_eval, preprocess_train, preprocess_with, resize_rgb, Augmentation, Geometry, Prepared,
};
pub use densify::{densify_depth, densify_with_report, DensifyReport};
pub use folder::{load_folder_dataset, read_rgb_png, write_folder_sample, write_rgb_png};
pub use sampler::{MixedBatchSampler, SampleRef};
pub use synth::{generate, generate_indoor, generate_outdoor, GeneratorConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Indoor,
    Outdoor,
}

impl Domain {
    pub const ALL: [Domain; 2] = [Domain::Indoor, Domain::Outdoor];

    pub fn name(self) -> &'static str {
        match self {
            Domain::Indoor => "indoor",
            Domain::Outdoor => "outdoor",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "indoor" => Ok(Domain::Indoor),
            "outdoor" => Ok(Domain::Outdoor),
            other => Err(Error::Parameter(format!("unknown domain {other:?}"))),
        }
    }
}

/// Metric depth in metres, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{} depth values for a {height}x{width} map",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Per-pixel validity flags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl ValidMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{} mask values for a {height}x{width} map",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn all(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    /// Valid wherever the depth is finite and positive.
    pub fn from_depth(depth: &DepthMap) -> Self {
        Self {
            height: depth.height,
            width: depth.width,
            data: depth.data.iter().map(|&d| d.is_finite() && d > 0.0).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
    pub fn data(&self) -> &[bool] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.data.len().max(1) as f64
    }
}

/// Planar RGB image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbImage {
    /// `data` holds the red, green and blue planes in that order.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(Error::Shape(format!(
                "{} colour values for a {height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; 3 * height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn plane(&self, c: usize) -> &[f64] {
        let p = self.height * self.width;
        &self.data[c * p..(c + 1) * p]
    }
    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let p = self.height * self.width;
        &mut self.data[c * p..(c + 1) * p]
    }
    pub fn set(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let p = self.height * self.width;
        let i = y * self.width + x;
        for (c, v) in rgb.into_iter().enumerate() {
            self.data[c * p + i] = v;
        }
    }
    pub fn get(&self, y: usize, x: usize) -> [f64; 3] {
        let p = self.height * self.width;
        let i = y * self.width + x;
        [self.data[i], self.data[p + i], self.data[2 * p + i]]
    }

    /// Luma used as the densification guide.
    pub fn intensity(&self) -> Vec<f64> {
        let p = self.height * self.width;
        (0..p)
            .map(|i| 0.299 * self.data[i] + 0.587 * self.data[p + i] + 0.114 * self.data[2 * p + i])
            .collect()
    }

    pub fn to_tensor(&self) -> crate::nn::Tensor {
        crate::nn::Tensor::from_vec([1, 3, self.height, self.width], self.data.clone())
            .expect("planar layout matches")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub id: String,
    pub domain: Domain,
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub valid: ValidMask,
}

impl SceneSample {
    pub fn new(
        id: impl Into<String>,
        domain: Domain,
        rgb: RgbImage,
        depth: DepthMap,
        valid: ValidMask,
    ) -> Result<Self> {
        if rgb.dims() != depth.dims() || depth.dims() != valid.dims() {
            return Err(Error::Shape(format!(
                "rgb {:?}, depth {:?} and mask {:?} disagree",
                rgb.dims(),
                depth.dims(),
                valid.dims()
            )));
        }
        for (d, v) in depth.data().iter().zip(valid.data()) {
            if *v && !(*d > 0.0 && d.is_finite()) {
                return Err(Error::Domain(format!("valid pixel with depth {d}")));
            }
        }
        Ok(Self {
            id: id.into(),
            domain,
            rgb,
            depth,
            valid,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.depth.dims()
    }
}

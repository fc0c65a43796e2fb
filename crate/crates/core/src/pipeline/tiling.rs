//! Half-resolution, width-tiled inference with overlap averaging.

use std::ops::Range;

use crate::data::{resize_rgb, DepthMap, RgbImage};
use crate::model::{DabcModel, Mode};
use crate::nn::{ops, Tensor};
use crate::quantizer::QuantizationSpec;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TilePlan {
    pub input: (usize, usize),
    pub downsampled: (usize, usize),
    /// Column ranges in the downsampled image, left to right.
    pub tiles: Vec<Range<usize>>,
    /// Network input every tile is zero-padded to (bottom and right).
    pub padded: (usize, usize),
}

impl TilePlan {
    /// Columns covered twice, `sum of tile widths - image width`.
    pub fn overlap(&self) -> usize {
        self.tiles.iter().map(|t| t.len()).sum::<usize>() - self.downsampled.1
    }

    /// Shared column range of the first two tiles, if any.
    pub fn overlap_range(&self) -> Option<Range<usize>> {
        match self.tiles.as_slice() {
            [a, b, ..] if b.start < a.end => Some(b.start..a.end),
            _ => None,
        }
    }

    /// Number of tiles covering each downsampled column.
    pub fn coverage(&self) -> Vec<usize> {
        let mut c = vec![0; self.downsampled.1];
        for t in &self.tiles {
            c[t.clone()].iter_mut().for_each(|v| *v += 1);
        }
        c
    }
}

/// Halves the input (rounding up) and splits it into `tile_width`-wide
/// slices anchored at both edges. Inputs wider than two tiles get evenly
/// spaced interior tiles as well.
pub fn plan_tiles(height: usize, width: usize, tile_width: usize, net: (usize, usize)) -> Result<TilePlan> {
    if height == 0 || width == 0 || tile_width == 0 {
        return Err(Error::Parameter(format!(
            "cannot tile a {height}x{width} image with tile width {tile_width}"
        )));
    }
    if tile_width > net.1 {
        return Err(Error::Parameter(format!(
            "tile width {tile_width} exceeds network input width {}",
            net.1
        )));
    }
    let down = (height.div_ceil(2), width.div_ceil(2));
    if down.0 > net.0 {
        return Err(Error::Shape(format!(
            "downsampled height {} exceeds network input height {}",
            down.0, net.0
        )));
    }
    let tiles = if down.1 <= tile_width {
        vec![0..down.1]
    } else {
        let n = down.1.div_ceil(tile_width).max(2);
        let span = (down.1 - tile_width) as f64;
        (0..n)
            .map(|i| {
                let start = (span * i as f64 / (n - 1) as f64).round() as usize;
                start..start + tile_width
            })
            .collect()
    };
    Ok(TilePlan {
        input: (height, width),
        downsampled: down,
        tiles,
        padded: net,
    })
}

/// Anything that maps a padded `(1, 3, H, W)` input to a depth map at
/// `H x W`.
pub trait DepthPredictor {
    fn predict_depth(&self, image: &Tensor) -> Result<DepthMap>;
}

/// Eval-mode model whose stride-4 output is decoded and bilinearly
/// upsampled to the input size.
pub struct ModelPredictor<'a> {
    pub model: &'a DabcModel,
    pub spec: &'a QuantizationSpec,
}

impl DepthPredictor for ModelPredictor<'_> {
    fn predict_depth(&self, image: &Tensor) -> Result<DepthMap> {
        let out = self.model.forward(image, Mode::Eval)?;
        let coarse = out.prediction.depth_maps(self.spec)?.swap_remove(0);
        let (h, w) = (image.height(), image.width());
        DepthMap::new(h, w, ops::resize_plane(coarse.data(), coarse.height(), coarse.width(), h, w))
    }
}

fn pad_columns(img: &RgbImage, cols: Range<usize>, net: (usize, usize)) -> Tensor {
    let (h, w) = img.dims();
    let mut t = Tensor::zeros([1, 3, net.0, net.1]);
    for c in 0..3 {
        let src = img.plane(c);
        let dst = t.plane_mut(0, c);
        for y in 0..h {
            dst[y * net.1..y * net.1 + cols.len()].copy_from_slice(&src[y * w + cols.start..y * w + cols.end]);
        }
    }
    t
}

fn restore(stitched: Vec<f64>, plan: &TilePlan) -> Result<DepthMap> {
    let (h2, w2) = plan.downsampled;
    let (h, w) = plan.input;
    DepthMap::new(h, w, ops::resize_plane(&stitched, h2, w2, h, w))
}

/// Predicts each tile, strips padding, averages overlapping columns in
/// linear depth and resizes the result to the input resolution.
pub fn tiled_inference(predictor: &impl DepthPredictor, image: &RgbImage, plan: &TilePlan) -> Result<DepthMap> {
    if image.dims() != plan.input {
        return Err(Error::Shape(format!(
            "plan is for {:?}, image is {:?}",
            plan.input,
            image.dims()
        )));
    }
    let (h2, w2) = plan.downsampled;
    let half = resize_rgb(image, h2, w2);
    let mut sum = vec![0.0; h2 * w2];
    for tile in &plan.tiles {
        let depth = predictor.predict_depth(&pad_columns(&half, tile.clone(), plan.padded))?;
        for y in 0..h2 {
            for (k, x) in tile.clone().enumerate() {
                sum[y * w2 + x] += depth.get(y, k);
            }
        }
    }
    let coverage = plan.coverage();
    for (i, v) in sum.iter_mut().enumerate() {
        *v /= coverage[i % w2] as f64;
    }
    restore(sum, plan)
}

/// Untiled reference path: the whole half-resolution image is padded into
/// one network input.
pub fn direct_inference(predictor: &impl DepthPredictor, image: &RgbImage, net: (usize, usize)) -> Result<DepthMap> {
    let (h, w) = image.dims();
    let (h2, w2) = (h.div_ceil(2), w.div_ceil(2));
    if h2 > net.0 || w2 > net.1 {
        return Err(Error::Shape(format!(
            "half-size image {h2}x{w2} does not fit a {}x{} input",
            net.0, net.1
        )));
    }
    let half = resize_rgb(image, h2, w2);
    let depth = predictor.predict_depth(&pad_columns(&half, 0..w2, net))?;
    let stripped: Vec<f64> = (0..h2).flat_map(|y| (0..w2).map(move |x| (y, x))).map(|(y, x)| depth.get(y, x)).collect();
    let plan = TilePlan {
        input: (h, w),
        downsampled: (h2, w2),
        tiles: vec![0..w2],
        padded: net,
    };
    restore(stripped, &plan)
}

/// Tiled inference with the tile width set to the network input width.
pub fn infer_depth(model: &DabcModel, spec: &QuantizationSpec, image: &RgbImage, net: (usize, usize)) -> Result<DepthMap> {
    let (h, w) = image.dims();
    let plan = plan_tiles(h, w, net.1, net)?;
    tiled_inference(&ModelPredictor { model, spec }, image, &plan)
}

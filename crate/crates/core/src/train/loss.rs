//! Pixel-wise training losses on raw head outputs.

use crate::data::{DepthMap, Prepared, ValidMask};
use crate::nn::Tensor;
use crate::quantizer::QuantizationSpec;
use crate::{Error, Result};

/// Loss value together with its gradient with respect to the head output.
#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Tensor,
    pub valid_pixels: usize,
}

/// Ground truth sampled onto the prediction grid, laid out `(n, y, x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelTargets {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
}

impl PixelTargets {
    /// Nearest-neighbour subsampling by `stride`, taking the pixel at offset
    /// `stride / 2` inside each cell.
    pub fn subsample(batch: &[Prepared], stride: usize) -> Result<Self> {
        let first = batch.first().ok_or(Error::EmptyBatch)?;
        let (h, w) = first.depth.dims();
        if stride == 0 || h % stride != 0 || w % stride != 0 {
            return Err(Error::Shape(format!("{h}x{w} is not divisible by stride {stride}")));
        }
        let (oh, ow) = (h / stride, w / stride);
        let mut depth = Vec::with_capacity(batch.len() * oh * ow);
        let mut valid = Vec::with_capacity(depth.capacity());
        for p in batch {
            if p.depth.dims() != (h, w) {
                return Err(Error::Shape("batch items differ in size".into()));
            }
            for y in 0..oh {
                for x in 0..ow {
                    let i = (y * stride + stride / 2) * w + x * stride + stride / 2;
                    depth.push(p.depth.data()[i]);
                    valid.push(p.valid.data()[i]);
                }
            }
        }
        Ok(Self {
            batch: batch.len(),
            height: oh,
            width: ow,
            depth,
            valid,
        })
    }

    pub fn from_maps(depths: &[DepthMap], masks: &[ValidMask]) -> Result<Self> {
        let first = depths.first().ok_or(Error::EmptyBatch)?;
        let (h, w) = first.dims();
        if depths.len() != masks.len() || depths.iter().zip(masks).any(|(d, m)| d.dims() != (h, w) || m.dims() != (h, w)) {
            return Err(Error::Shape("depth maps and masks disagree".into()));
        }
        Ok(Self {
            batch: depths.len(),
            height: h,
            width: w,
            depth: depths.iter().flat_map(|d| d.data().iter().copied()).collect(),
            valid: masks.iter().flat_map(|m| m.data().iter().copied()).collect(),
        })
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Class labels (0 at invalid pixels).
    pub fn labels(&self, spec: &QuantizationSpec) -> Result<Vec<usize>> {
        self.depth
            .iter()
            .zip(&self.valid)
            .map(|(&d, &v)| if v { spec.depth_to_label(d) } else { Ok(0) })
            .collect()
    }

    fn check(&self, t: &Tensor, channels: Option<usize>) -> Result<()> {
        let [n, c, h, w] = t.shape();
        if (n, h, w) != (self.batch, self.height, self.width) || channels.is_some_and(|k| k != c) {
            return Err(Error::Shape(format!(
                "prediction {:?} does not match targets {}x{}x{}",
                t.shape(),
                self.batch,
                self.height,
                self.width
            )));
        }
        Ok(())
    }
}

/// Mean negative log-likelihood (natural log) of the true label over valid
/// pixels. The gradient is `(softmax - onehot) / N` at valid pixels.
pub fn classification_loss(logits: &Tensor, labels: &[usize], valid: &[bool]) -> Result<LossOutput> {
    let [n, c, h, w] = logits.shape();
    let plane = h * w;
    if labels.len() != n * plane || valid.len() != n * plane {
        return Err(Error::Shape(format!(
            "{} labels and {} flags for {} pixels",
            labels.len(),
            valid.len(),
            n * plane
        )));
    }
    let count = valid.iter().filter(|&&v| v).count();
    if count == 0 {
        return Err(Error::EmptyBatch);
    }
    let inv = 1.0 / count as f64;
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    let data = logits.data();
    let mut column = vec![0.0; c];
    for b in 0..n {
        for p in 0..plane {
            let i = b * plane + p;
            if !valid[i] {
                continue;
            }
            let label = labels[i];
            if label >= c {
                return Err(Error::Domain(format!("label {label} outside 0..{c}")));
            }
            let base = b * c * plane + p;
            let mut max = f64::NEG_INFINITY;
            for (k, slot) in column.iter_mut().enumerate() {
                *slot = data[base + k * plane];
                max = max.max(*slot);
            }
            let sum: f64 = column.iter().map(|&z| (z - max).exp()).sum();
            let log_z = max + sum.ln();
            total += log_z - column[label];
            let g = grad.data_mut();
            for (k, &z) in column.iter().enumerate() {
                g[base + k * plane] = (z - log_z).exp() * inv;
            }
            g[base + label * plane] -= inv;
        }
    }
    Ok(LossOutput {
        loss: total * inv,
        grad,
        valid_pixels: count,
    })
}

/// Mean squared error between predicted log10 depth and log10 of the
/// ground truth over valid pixels.
pub fn regression_loss(pred_log_depth: &Tensor, gt_depth: &[f64], valid: &[bool]) -> Result<LossOutput> {
    let n = pred_log_depth.len();
    if pred_log_depth.channels() != 1 || gt_depth.len() != n || valid.len() != n {
        return Err(Error::Shape(format!(
            "prediction {:?} against {} targets",
            pred_log_depth.shape(),
            gt_depth.len()
        )));
    }
    let count = valid.iter().filter(|&&v| v).count();
    if count == 0 {
        return Err(Error::EmptyBatch);
    }
    let inv = 1.0 / count as f64;
    let mut grad = Tensor::zeros(pred_log_depth.shape());
    let mut total = 0.0;
    for (i, (&p, (&d, &v))) in pred_log_depth.data().iter().zip(gt_depth.iter().zip(valid)).enumerate() {
        if !v {
            continue;
        }
        if !(d > 0.0) {
            return Err(Error::Domain(format!("non-positive ground truth {d} at a valid pixel")));
        }
        let r = p - d.log10();
        total += r * r;
        grad.data_mut()[i] = 2.0 * r * inv;
    }
    Ok(LossOutput {
        loss: total * inv,
        grad,
        valid_pixels: count,
    })
}

/// Dispatches on the head kind.
pub fn head_loss(
    head: crate::model::HeadKind,
    raw: &Tensor,
    targets: &PixelTargets,
    spec: &QuantizationSpec,
) -> Result<LossOutput> {
    use crate::model::HeadKind;
    match head {
        HeadKind::Classification => {
            targets.check(raw, Some(spec.num_classes()))?;
            classification_loss(raw, &targets.labels(spec)?, &targets.valid)
        }
        HeadKind::Regression => {
            targets.check(raw, Some(1))?;
            regression_loss(raw, &targets.depth, &targets.valid)
        }
    }
}

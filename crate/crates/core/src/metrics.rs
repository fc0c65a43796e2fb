//! Benchmark error measures and the depth-label confusion matrix.
//!
//! Pixel-level measures pool over every valid pixel of every image. The
//! two scale-invariant measures first compute a per-image offset over that
//! image's valid pixels and then pool the squared residuals.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{DepthMap, ValidMask};
use crate::quantizer::QuantizationSpec;
use crate::{Error, Result};

pub const CSV_HEADER: &str = "absRel,sqRel,imae,irmse,SI,SILog,Q";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(rename = "absRel")]
    pub abs_rel: f64,
    #[serde(rename = "sqRel")]
    pub sq_rel: f64,
    pub imae: f64,
    pub irmse: f64,
    #[serde(rename = "SI")]
    pub si: f64,
    #[serde(rename = "SILog")]
    pub silog: f64,
    #[serde(rename = "Q")]
    pub valid_pixels: u64,
}

impl MetricReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.abs_rel, self.sq_rel, self.imae, self.irmse, self.si, self.silog, self.valid_pixels
        )
    }

    pub fn to_csv(reports: &[MetricReport]) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in reports {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn from_csv_row(row: &str) -> Result<Self> {
        let f: Vec<&str> = row.trim().split(',').collect();
        if f.len() != 7 {
            return Err(Error::Validation(format!("expected 7 columns, got {}", f.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Validation(format!("bad number {s:?}: {e}")))
        };
        Ok(Self {
            abs_rel: num(f[0])?,
            sq_rel: num(f[1])?,
            imae: num(f[2])?,
            irmse: num(f[3])?,
            si: num(f[4])?,
            silog: num(f[5])?,
            valid_pixels: f[6]
                .parse()
                .map_err(|e| Error::Validation(format!("bad count {:?}: {e}", f[6])))?,
        })
    }
}

/// Running sums behind a [`MetricReport`]; merging accumulators in a fixed
/// order gives deterministic pooled results.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricAccumulator {
    abs_rel: f64,
    sq_rel: f64,
    inv_abs: f64,
    inv_sq: f64,
    si_sq: f64,
    silog_sq: f64,
    count: u64,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_image(&mut self, pred: &DepthMap, gt: &DepthMap, mask: &ValidMask) -> Result<()> {
        if pred.dims() != gt.dims() || gt.dims() != mask.dims() {
            return Err(Error::Shape(format!(
                "prediction {:?}, ground truth {:?}, mask {:?}",
                pred.dims(),
                gt.dims(),
                mask.dims()
            )));
        }
        let mut n = 0u64;
        let mut lin_offset = 0.0;
        let mut log_offset = 0.0;
        for ((&p, &g), &v) in pred.data().iter().zip(gt.data()).zip(mask.data()) {
            if !v {
                continue;
            }
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Domain(format!("ground-truth depth {g} at a valid pixel")));
            }
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Domain(format!("predicted depth {p} at a valid pixel")));
            }
            n += 1;
            lin_offset += p - g;
            log_offset += p.ln() - g.ln();
        }
        if n == 0 {
            return Ok(());
        }
        lin_offset /= n as f64;
        log_offset /= n as f64;
        for ((&p, &g), &v) in pred.data().iter().zip(gt.data()).zip(mask.data()) {
            if !v {
                continue;
            }
            let diff = g - p;
            self.abs_rel += diff.abs() / g;
            self.sq_rel += diff * diff / (g * g);
            let inv = 1.0 / g - 1.0 / p;
            self.inv_abs += inv.abs();
            self.inv_sq += inv * inv;
            let si = diff + lin_offset;
            self.si_sq += si * si;
            let sl = g.ln() - p.ln() + log_offset;
            self.silog_sq += sl * sl;
        }
        self.count += n;
        Ok(())
    }

    pub fn merge(&mut self, other: &MetricAccumulator) {
        self.abs_rel += other.abs_rel;
        self.sq_rel += other.sq_rel;
        self.inv_abs += other.inv_abs;
        self.inv_sq += other.inv_sq;
        self.si_sq += other.si_sq;
        self.silog_sq += other.silog_sq;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finish(&self) -> Result<MetricReport> {
        if self.count == 0 {
            return Err(Error::EmptyEvaluation);
        }
        let q = self.count as f64;
        Ok(MetricReport {
            abs_rel: self.abs_rel / q,
            sq_rel: self.sq_rel / q,
            imae: self.inv_abs / q,
            irmse: (self.inv_sq / q).sqrt(),
            si: self.si_sq / q,
            silog: self.silog_sq / q,
            valid_pixels: self.count,
        })
    }
}

fn check_lists(preds: &[DepthMap], gts: &[DepthMap], masks: &[ValidMask]) -> Result<()> {
    if preds.len() != gts.len() || gts.len() != masks.len() {
        return Err(Error::Shape(format!(
            "{} predictions, {} ground truths, {} masks",
            preds.len(),
            gts.len(),
            masks.len()
        )));
    }
    Ok(())
}

pub fn compute_metrics(
    preds: &[DepthMap],
    gts: &[DepthMap],
    masks: &[ValidMask],
) -> Result<MetricReport> {
    check_lists(preds, gts, masks)?;
    let mut acc = MetricAccumulator::new();
    for ((p, g), m) in preds.iter().zip(gts).zip(masks) {
        acc.add_image(p, g, m)?;
    }
    acc.finish()
}

/// Row `i`, column `j` counts valid pixels whose ground truth quantises to
/// label `i` and whose prediction quantises to label `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionMatrix {
    size: usize,
    /// First label covered; nonzero only for windowed views.
    offset: usize,
    counts: Vec<u64>,
    normalized: Vec<f64>,
    renormalized_within_window: bool,
}

impl ConfusionMatrix {
    pub fn empty(num_classes: usize) -> Self {
        Self {
            size: num_classes,
            offset: 0,
            counts: vec![0; num_classes * num_classes],
            normalized: vec![0.0; num_classes * num_classes],
            renormalized_within_window: false,
        }
    }

    pub fn from_counts(size: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != size * size {
            return Err(Error::Shape(format!("{} counts for a {size}x{size} matrix", counts.len())));
        }
        let mut cm = Self {
            size,
            offset: 0,
            counts,
            normalized: Vec::new(),
            renormalized_within_window: false,
        };
        cm.renormalize();
        Ok(cm)
    }

    fn renormalize(&mut self) {
        let n = self.size;
        self.normalized = vec![0.0; n * n];
        for i in 0..n {
            let row = &self.counts[i * n..(i + 1) * n];
            let total: u64 = row.iter().sum();
            if total > 0 {
                for (dst, &c) in self.normalized[i * n..(i + 1) * n].iter_mut().zip(row) {
                    *dst = c as f64 / total as f64;
                }
            }
        }
    }

    pub fn accumulate(
        &mut self,
        pred: &DepthMap,
        gt: &DepthMap,
        mask: &ValidMask,
        spec: &QuantizationSpec,
    ) -> Result<()> {
        if self.offset != 0 || self.size != spec.num_classes() {
            return Err(Error::Shape("matrix does not cover the spec's labels".into()));
        }
        if pred.dims() != gt.dims() || gt.dims() != mask.dims() {
            return Err(Error::Shape("prediction, ground truth and mask disagree".into()));
        }
        for ((&p, &g), &v) in pred.data().iter().zip(gt.data()).zip(mask.data()) {
            if v {
                let i = spec.depth_to_label(g)?;
                let j = spec.depth_to_label(p)?;
                self.counts[i * self.size + j] += 1;
            }
        }
        self.renormalize();
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.size != other.size || self.offset != other.offset {
            return Err(Error::Shape("confusion matrices cover different labels".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.renormalize();
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.size
    }
    /// Label of row/column zero.
    pub fn offset(&self) -> usize {
        self.offset
    }
    pub fn renormalized_within_window(&self) -> bool {
        self.renormalized_within_window
    }
    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.size + j]
    }
    pub fn normalized(&self, i: usize, j: usize) -> f64 {
        self.normalized[i * self.size + j]
    }
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
    pub fn normalized_values(&self) -> &[f64] {
        &self.normalized
    }
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Rows and columns `lo..=hi` (absolute labels) with rows re-normalised
    /// inside the window.
    pub fn submatrix_view(&self, lo: usize, hi: usize) -> Result<ConfusionMatrix> {
        let last = self.offset + self.size - 1;
        if lo > hi || lo < self.offset || hi > last {
            return Err(Error::Parameter(format!(
                "window [{lo}, {hi}] outside [{}, {last}]",
                self.offset
            )));
        }
        let n = hi - lo + 1;
        let mut counts = Vec::with_capacity(n * n);
        for i in lo..=hi {
            for j in lo..=hi {
                counts.push(self.count(i - self.offset, j - self.offset));
            }
        }
        let mut cm = ConfusionMatrix::from_counts(n, counts)?;
        cm.offset = lo;
        cm.renormalized_within_window = true;
        Ok(cm)
    }

    /// Mean over non-empty rows of the normalised mass within `band` labels
    /// of the diagonal.
    pub fn diagonal_band_mass(&self, band: usize) -> f64 {
        let n = self.size;
        let mut total = 0.0;
        let mut rows = 0usize;
        for i in 0..n {
            if self.counts[i * n..(i + 1) * n].iter().all(|&c| c == 0) {
                continue;
            }
            let lo = i.saturating_sub(band);
            let hi = (i + band).min(n - 1);
            total += (lo..=hi).map(|j| self.normalized(i, j)).sum::<f64>();
            rows += 1;
        }
        if rows == 0 {
            0.0
        } else {
            total / rows as f64
        }
    }

    /// Grid CSV with a header row of predicted labels and a leading column
    /// of ground-truth labels.
    pub fn to_csv(&self, normalized: bool) -> String {
        let n = self.size;
        let mut out = String::from("gt\\pred");
        for j in 0..n {
            let _ = write!(out, ",{}", j + self.offset);
        }
        out.push('\n');
        for i in 0..n {
            let _ = write!(out, "{}", i + self.offset);
            for j in 0..n {
                if normalized {
                    let _ = write!(out, ",{}", self.normalized(i, j));
                } else {
                    let _ = write!(out, ",{}", self.count(i, j));
                }
            }
            out.push('\n');
        }
        out
    }

    /// Parses a counts grid written by [`to_csv`](Self::to_csv)`(false)`.
    pub fn from_counts_csv(text: &str) -> Result<ConfusionMatrix> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Validation("empty confusion csv".into()))?;
        let labels: Vec<usize> = header
            .split(',')
            .skip(1)
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Validation(format!("bad header: {e}")))?;
        let n = labels.len();
        let mut counts = Vec::with_capacity(n * n);
        for line in lines {
            let cells: Vec<&str> = line.split(',').skip(1).collect();
            if cells.len() != n {
                return Err(Error::Validation(format!("row has {} cells, expected {n}", cells.len())));
            }
            for c in cells {
                counts.push(
                    c.trim()
                        .parse::<u64>()
                        .map_err(|e| Error::Validation(format!("bad count {c:?}: {e}")))?,
                );
            }
        }
        let mut cm = ConfusionMatrix::from_counts(n, counts)?;
        cm.offset = labels.first().copied().unwrap_or(0);
        Ok(cm)
    }
}

pub fn confusion_matrix(
    preds: &[DepthMap],
    gts: &[DepthMap],
    masks: &[ValidMask],
    spec: &QuantizationSpec,
) -> Result<ConfusionMatrix> {
    check_lists(preds, gts, masks)?;
    let mut cm = ConfusionMatrix::empty(spec.num_classes());
    let mut any = false;
    for ((p, g), m) in preds.iter().zip(gts).zip(masks) {
        cm.accumulate(p, g, m, spec)?;
        any |= m.count() > 0;
    }
    if !any {
        return Err(Error::EmptyEvaluation);
    }
    Ok(cm)
}

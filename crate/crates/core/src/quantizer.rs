//! Log-space depth discretisation and bin-distribution decoding.
//!
//! A depth range `[alpha, beta]` is split into `k` equal intervals of
//! `log10` depth, giving `k + 1` labels `0..=k` whose centres are
//! `w[j] = log10(alpha) + q * j`.

use serde::{Deserialize, Serialize};

use crate::data::DepthMap;
use crate::nn::Tensor;
use crate::{Error, Result};

/// Tolerance on how far a bin distribution may sum away from one.
pub const PROBABILITY_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr", into = "SpecRepr")]
pub struct QuantizationSpec {
    alpha: f64,
    beta: f64,
    k: usize,
    q: f64,
    log_alpha: f64,
}

#[derive(Serialize, Deserialize)]
struct SpecRepr {
    alpha: f64,
    beta: f64,
    #[serde(rename = "K")]
    k: usize,
}

impl TryFrom<SpecRepr> for QuantizationSpec {
    type Error = Error;
    fn try_from(r: SpecRepr) -> Result<Self> {
        QuantizationSpec::new(r.alpha, r.beta, r.k)
    }
}

impl From<QuantizationSpec> for SpecRepr {
    fn from(s: QuantizationSpec) -> Self {
        SpecRepr {
            alpha: s.alpha,
            beta: s.beta,
            k: s.k,
        }
    }
}

impl Default for QuantizationSpec {
    /// 150 intervals over 0.25 m to 80 m.
    fn default() -> Self {
        Self::new(0.25, 80.0, 150).expect("default range is valid")
    }
}

impl QuantizationSpec {
    pub fn new(alpha: f64, beta: f64, k: usize) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite()) || alpha <= 0.0 || beta <= alpha {
            return Err(Error::Parameter(format!(
                "depth range must satisfy 0 < alpha < beta, got [{alpha}, {beta}]"
            )));
        }
        if k == 0 {
            return Err(Error::Parameter("interval count must be at least 1".into()));
        }
        let log_alpha = alpha.log10();
        Ok(Self {
            alpha,
            beta,
            k,
            q: (beta.log10() - log_alpha) / k as f64,
            log_alpha,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    /// Number of sub-intervals.
    pub fn intervals(&self) -> usize {
        self.k
    }
    /// Bin width in log10 units.
    pub fn bin_width(&self) -> f64 {
        self.q
    }
    /// Labels run over `0..=k`.
    pub fn num_classes(&self) -> usize {
        self.k + 1
    }
    pub fn max_label(&self) -> usize {
        self.k
    }

    /// Bin centre of label `j` in log10 metres.
    #[inline]
    pub fn weight(&self, j: usize) -> f64 {
        self.log_alpha + self.q * j as f64
    }

    pub fn bin_weights(&self) -> BinWeights {
        BinWeights((0..=self.k).map(|j| self.weight(j)).collect())
    }

    fn clamp_depth(&self, d: f64) -> f64 {
        d.clamp(self.alpha, self.beta)
    }

    /// Quantises a positive depth; values outside `[alpha, beta]` are
    /// clamped first. Rounding is half away from zero.
    pub fn depth_to_label(&self, d: f64) -> Result<usize> {
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Domain(format!("depth must be positive, got {d}")));
        }
        let t = (self.clamp_depth(d).log10() - self.log_alpha) / self.q;
        Ok((t.round().max(0.0) as usize).min(self.k))
    }

    /// Bin centre `10^w[l]` in metres.
    pub fn label_to_depth(&self, label: usize) -> Result<f64> {
        if label > self.k {
            return Err(Error::Domain(format!(
                "label {label} outside 0..={}",
                self.k
            )));
        }
        Ok(self.log_to_depth(self.weight(label)))
    }

    fn log_to_depth(&self, log_depth: f64) -> f64 {
        // Rounding in 10^x can step one ulp past the range ends.
        self.clamp_depth(10f64.powf(log_depth))
    }

    fn check_distribution(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_classes() {
            return Err(Error::Validation(format!(
                "distribution has {} entries, expected {}",
                p.len(),
                self.num_classes()
            )));
        }
        if let Some(v) = p.iter().find(|v| !(**v >= 0.0 && **v <= 1.0 + PROBABILITY_TOLERANCE)) {
            return Err(Error::Validation(format!("probability {v} outside [0, 1]")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(Error::Validation(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// Soft-weighted-sum decoding: `10^(w . p)`.
    pub fn soft_weighted_depth(&self, p: &[f64]) -> Result<f64> {
        self.check_distribution(p)?;
        Ok(self.soft_weighted_unchecked(p.iter().copied()))
    }

    fn soft_weighted_unchecked(&self, p: impl Iterator<Item = f64>) -> f64 {
        let log_depth: f64 = p.enumerate().map(|(j, pj)| self.weight(j) * pj).sum();
        self.log_to_depth(log_depth)
    }

    /// Arg-max decoding; ties go to the smaller label.
    pub fn hard_max_depth(&self, p: &[f64]) -> Result<f64> {
        self.check_distribution(p)?;
        Ok(self.log_to_depth(self.weight(argmax(p.iter().copied()))))
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Bin centres `w[j]` in log10 metres, strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct BinWeights(pub Vec<f64>);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoding {
    SoftWeightedSum,
    HardMax,
}

/// Per-pixel distributions over depth bins, shaped (batch, classes, h, w).
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVolume(Tensor);

impl ScoreVolume {
    /// Validates that every pixel column is a probability distribution.
    pub fn new(probs: Tensor) -> Result<Self> {
        let [n, c, h, w] = probs.shape();
        let p = h * w;
        for b in 0..n {
            let item = probs.item(b);
            for i in 0..p {
                let mut sum = 0.0;
                for ch in 0..c {
                    let v = item[ch * p + i];
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::Validation(format!(
                            "probability {v} outside [0, 1]"
                        )));
                    }
                    sum += v;
                }
                if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
                    return Err(Error::Validation(format!(
                        "pixel {i} of item {b} sums to {sum}"
                    )));
                }
            }
        }
        Ok(Self(probs))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// Decodes every pixel to metric depth, one map per batch item.
    pub fn decode(&self, spec: &QuantizationSpec, how: Decoding) -> Result<Vec<DepthMap>> {
        let [n, c, h, w] = self.0.shape();
        if c != spec.num_classes() {
            return Err(Error::Shape(format!(
                "score volume has {c} classes, spec has {}",
                spec.num_classes()
            )));
        }
        let p = h * w;
        (0..n)
            .map(|b| {
                let item = self.0.item(b);
                let data = (0..p)
                    .map(|i| {
                        let column = (0..c).map(|ch| item[ch * p + i]);
                        match how {
                            Decoding::SoftWeightedSum => spec.soft_weighted_unchecked(column),
                            Decoding::HardMax => spec.log_to_depth(spec.weight(argmax(column))),
                        }
                    })
                    .collect();
                DepthMap::new(h, w, data)
            })
            .collect()
    }
}

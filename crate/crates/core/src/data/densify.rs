//! Colorization-style depth completion.
//!
//! Every missing pixel `r` is required to equal the affinity-weighted mean
//! of its 4-neighbours, `d_r = sum_s w_rs d_s`, with `w_rs` proportional to
//! `exp(-(I_r - I_s)^2 / (2 sigma^2))` on the guide intensity `I`. Known
//! pixels are held fixed. Multiplying each row by its affinity sum gives a
//! symmetric positive-definite graph Laplacian system, solved with
//! Jacobi-preconditioned conjugate gradients.

use super::{DepthMap, RgbImage, ValidMask};
use crate::{Error, Result};

const MIN_SIGMA: f64 = 0.01;
const MAX_ITERATIONS_PER_UNKNOWN: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct DensifyReport {
    pub depth: DepthMap,
    /// Euclidean norm of `d_r - sum_s w_rs d_s` over the filled pixels.
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Local standard deviation of intensity over a 3x3 window.
fn local_sigma(intensity: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (mut s, mut s2, mut n) = (0.0, 0.0, 0.0);
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let v = intensity[yy * w + xx];
                    s += v;
                    s2 += v * v;
                    n += 1.0;
                }
            }
            let mean = s / n;
            out.push((s2 / n - mean * mean).max(0.0).sqrt().max(MIN_SIGMA));
        }
    }
    out
}

/// Symmetric 4-neighbour affinities, stored per pixel as
/// [up, down, left, right] (zero where the neighbour is outside).
fn affinities(guide: &RgbImage) -> Vec<[f64; 4]> {
    let (h, w) = guide.dims();
    let intensity = guide.intensity();
    let sigma = local_sigma(&intensity, h, w);
    let pair = |a: usize, b: usize| {
        let var = 0.5 * (sigma[a] * sigma[a] + sigma[b] * sigma[b]);
        let diff = intensity[a] - intensity[b];
        (-(diff * diff) / (2.0 * var)).exp()
    };
    (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            [
                if y > 0 { pair(i, i - w) } else { 0.0 },
                if y + 1 < h { pair(i, i + w) } else { 0.0 },
                if x > 0 { pair(i, i - 1) } else { 0.0 },
                if x + 1 < w { pair(i, i + 1) } else { 0.0 },
            ]
        })
        .collect()
}

fn neighbours(i: usize, w: usize) -> [usize; 4] {
    // Out-of-range slots carry zero affinity; index them at `i` itself.
    [
        i.checked_sub(w).unwrap_or(i),
        i + w,
        i.checked_sub(1).unwrap_or(i),
        i + 1,
    ]
}

pub fn densify_depth(sparse: &DepthMap, valid: &ValidMask, guide: &RgbImage) -> Result<DepthMap> {
    densify_with_report(sparse, valid, guide).map(|r| r.depth)
}

pub fn densify_with_report(
    sparse: &DepthMap,
    valid: &ValidMask,
    guide: &RgbImage,
) -> Result<DensifyReport> {
    if sparse.dims() != valid.dims() || valid.dims() != guide.dims() {
        return Err(Error::Shape(format!(
            "depth {:?}, mask {:?} and guide {:?} disagree",
            sparse.dims(),
            valid.dims(),
            guide.dims()
        )));
    }
    let known: Vec<f64> = sparse
        .data()
        .iter()
        .zip(valid.data())
        .filter(|(_, &v)| v)
        .map(|(&d, _)| d)
        .collect();
    if known.is_empty() {
        return Err(Error::Domain("densification needs at least one valid pixel".into()));
    }
    let lo = known.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = known.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = known.iter().sum::<f64>() / known.len() as f64;

    let (h, w) = sparse.dims();
    let aff = affinities(guide);
    let fixed = valid.data();
    let free: Vec<usize> = (0..h * w).filter(|&i| !fixed[i]).collect();
    let mut slot = vec![usize::MAX; h * w];
    for (k, &i) in free.iter().enumerate() {
        slot[i] = k;
    }
    let mut depth = sparse.data().to_vec();
    for &i in &free {
        depth[i] = mean;
    }

    // L_uu x = b with L the graph Laplacian; b gathers fixed neighbours.
    let n = free.len();
    let diag: Vec<f64> = free.iter().map(|&i| aff[i].iter().sum()).collect();
    let b: Vec<f64> = free
        .iter()
        .map(|&i| {
            let nb = neighbours(i, w);
            (0..4)
                .filter(|&k| aff[i][k] > 0.0 && fixed[nb[k]])
                .map(|k| aff[i][k] * depth[nb[k]])
                .sum()
        })
        .collect();
    let apply = |x: &[f64], out: &mut [f64]| {
        for (k, &i) in free.iter().enumerate() {
            let nb = neighbours(i, w);
            let mut acc = diag[k] * x[k];
            for s in 0..4 {
                if aff[i][s] > 0.0 && !fixed[nb[s]] {
                    acc -= aff[i][s] * x[slot[nb[s]]];
                }
            }
            out[k] = acc;
        }
    };

    let mut iterations = 0;
    if n > 0 {
        let mut x: Vec<f64> = free.iter().map(|&i| depth[i]).collect();
        let mut ax = vec![0.0; n];
        apply(&x, &mut ax);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut ap = vec![0.0; n];
        let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        let max_iter = MAX_ITERATIONS_PER_UNKNOWN * n + 100;
        while iterations < max_iter {
            // Row-normalised residual is r / diag; stop well below 1e-8.
            let scaled = r.iter().zip(&diag).map(|(r, d)| (r / d).powi(2)).sum::<f64>().sqrt();
            if scaled < 1e-12 || scaled / b_norm < 1e-15 {
                break;
            }
            apply(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            for k in 0..n {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            for k in 0..n {
                z[k] = r[k] / diag[k];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..n {
                p[k] = z[k] + beta * p[k];
            }
            iterations += 1;
        }
        for (k, &i) in free.iter().enumerate() {
            // The exact solution obeys the maximum principle; clamp away
            // round-off overshoot.
            depth[i] = x[k].clamp(lo, hi);
        }
    }

    let residual_norm = free
        .iter()
        .map(|&i| {
            let nb = neighbours(i, w);
            let total: f64 = aff[i].iter().sum();
            let avg: f64 = (0..4)
                .filter(|&k| aff[i][k] > 0.0)
                .map(|k| aff[i][k] * depth[nb[k]])
                .sum::<f64>()
                / total;
            (depth[i] - avg).powi(2)
        })
        .sum::<f64>()
        .sqrt();
    Ok(DensifyReport {
        depth: DepthMap::new(h, w, depth)?,
        residual_norm,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_guide(h: usize, w: usize) -> RgbImage {
        RgbImage::new(h, w, vec![0.5; 3 * h * w]).unwrap()
    }

    #[test]
    fn fully_valid_is_identity() {
        let d = DepthMap::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = densify_depth(&d, &ValidMask::all(2, 3), &uniform_guide(2, 3)).unwrap();
        assert_eq!(out, d);
    }

    #[test]
    fn single_seed_fills_constant() {
        let mut d = DepthMap::filled(6, 7, 0.0);
        d.data_mut()[17] = 3.25;
        let mask = ValidMask::from_depth(&d);
        let r = densify_with_report(&d, &mask, &uniform_guide(6, 7)).unwrap();
        assert!(r.depth.data().iter().all(|&v| (v - 3.25).abs() < 1e-10));
        assert_eq!(r.depth.data()[17], 3.25);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let d = DepthMap::filled(3, 3, 0.0);
        let m = ValidMask::from_depth(&d);
        assert!(matches!(densify_depth(&d, &m, &uniform_guide(3, 3)), Err(Error::Domain(_))));
    }

    #[test]
    fn guide_edges_concentrate_the_jump() {
        // Left half dark, right half bright, one seed on each side. The
        // step across the intensity edge should be much sharper than with
        // a flat guide.
        let (h, w) = (8, 10);
        let mut guide = RgbImage::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let v = if x < 5 { 0.1 } else { 0.9 };
                guide.set(y, x, [v; 3]);
            }
        }
        let mut d = DepthMap::filled(h, w, 0.0);
        d.data_mut()[4 * w] = 2.0;
        d.data_mut()[4 * w + 9] = 8.0;
        let m = ValidMask::from_depth(&d);
        let edged = densify_with_report(&d, &m, &guide).unwrap();
        let flat = densify_with_report(&d, &m, &uniform_guide(h, w)).unwrap();
        assert!(edged.residual_norm < 1e-8);
        for y in 0..h {
            let step = |r: &DensifyReport| r.depth.get(y, 5) - r.depth.get(y, 4);
            assert!(step(&edged) > 2.0 * step(&flat), "row {y}: {} vs {}", step(&edged), step(&flat));
        }
        assert!(edged.depth.data().iter().all(|&v| (2.0..=8.0).contains(&v)));
    }
}

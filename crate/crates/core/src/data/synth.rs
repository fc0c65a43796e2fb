//! Procedural RGB-D scenes: box-filled rooms for the indoor domain and
//! road scenes for the outdoor domain. Everything is a pure function of
//! (seed, height, width).

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DepthMap, Domain, RgbImage, SceneSample, ValidMask};
use crate::{Error, Result};

pub const INDOOR_DEPTH_RANGE: (f64, f64) = (0.4, 10.0);
pub const OUTDOOR_DEPTH_RANGE: (f64, f64) = (2.5, 80.0);
/// Fraction of pixels kept by the sparse outdoor mode.
pub const SPARSE_KEEP_FRACTION: f64 = 0.04;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub domain: Domain,
    #[serde(default)]
    pub sparse: bool,
}

/// Generates `cfg.count` samples with per-sample seeds derived from
/// `cfg.seed`.
pub fn generate(cfg: &GeneratorConfig) -> Result<Vec<SceneSample>> {
    (0..cfg.count)
        .map(|i| {
            let seed = derive_seed(cfg.seed, i as u64);
            let mut s = match cfg.domain {
                Domain::Indoor => generate_indoor(seed, cfg.height, cfg.width)?,
                Domain::Outdoor => generate_outdoor(seed, cfg.height, cfg.width, cfg.sparse)?,
            };
            s.id = format!("{}_{:016x}_{i:05}", cfg.domain, cfg.seed);
            Ok(s)
        })
        .collect()
}

pub(crate) fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix(base ^ splitmix(index.wrapping_add(0x5151_d00d)))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic lattice noise in [0, 1).
fn hash_noise(seed: u64, x: i64, y: i64) -> f64 {
    let h = splitmix(seed ^ splitmix((x as u64).wrapping_mul(0x1f1f_1f1f) ^ (y as u64) << 32));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Bilinearly interpolated value noise at scale `cell`.
fn value_noise(seed: u64, u: f64, v: f64, cell: f64) -> f64 {
    let (u, v) = (u / cell, v / cell);
    let (x0, y0) = (u.floor(), v.floor());
    let (fx, fy) = (u - x0, v - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let a = hash_noise(seed, x0, y0);
    let b = hash_noise(seed, x0 + 1, y0);
    let c = hash_noise(seed, x0, y0 + 1);
    let d = hash_noise(seed, x0 + 1, y0 + 1);
    let top = a + (b - a) * fx;
    let bot = c + (d - c) * fx;
    top + (bot - top) * fy
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Parameter(format!("image size {height}x{width} must be positive")));
    }
    Ok(())
}

#[derive(Clone, Copy)]
struct Hit {
    z: f64,
    normal: [f64; 3],
    /// Surface coordinates for texturing.
    uv: [f64; 2],
    material: usize,
}

#[derive(Clone, Copy)]
struct Aabb {
    min: [f64; 3],
    max: [f64; 3],
    material: usize,
}

impl Aabb {
    /// Ray from the origin along (dx, dy, 1); the parameter is the z depth.
    fn intersect(&self, dir: [f64; 3]) -> Option<Hit> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        let mut axis = 0;
        let mut sign = 1.0;
        for a in 0..3 {
            if dir[a].abs() < 1e-12 {
                if 0.0 < self.min[a] || 0.0 > self.max[a] {
                    return None;
                }
                continue;
            }
            let t0 = self.min[a] / dir[a];
            let t1 = self.max[a] / dir[a];
            let (lo, hi, s) = if t0 < t1 { (t0, t1, -1.0) } else { (t1, t0, 1.0) };
            if lo > t_near {
                t_near = lo;
                axis = a;
                sign = s;
            }
            t_far = t_far.min(hi);
        }
        if t_near > t_far || t_near <= 0.0 {
            return None;
        }
        let mut normal = [0.0; 3];
        normal[axis] = sign;
        let p = [dir[0] * t_near, dir[1] * t_near, t_near];
        let uv = match axis {
            0 => [p[2], p[1]],
            1 => [p[0], p[2]],
            _ => [p[0], p[1]],
        };
        Some(Hit {
            z: t_near,
            normal,
            uv,
            material: self.material,
        })
    }
}

fn closer(best: Option<Hit>, cand: Option<Hit>) -> Option<Hit> {
    match (best, cand) {
        (Some(b), Some(c)) => Some(if c.z < b.z { c } else { b }),
        (b, c) => b.or(c),
    }
}

fn shade(base: [f64; 3], normal: [f64; 3], light: [f64; 3], ambient: f64, tex: f64) -> [f64; 3] {
    let lambert = -(normal[0] * light[0] + normal[1] * light[1] + normal[2] * light[2]);
    let k = (ambient + (1.0 - ambient) * lambert.max(0.0)) * (0.8 + 0.4 * tex);
    base.map(|c| (c * k).clamp(0.0, 1.0))
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|c| c / n)
}

fn random_color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
}

/// A room seen from inside: floor, ceiling, back and side walls, plus one
/// to four boxes standing on the floor.
pub fn generate_indoor(seed: u64, height: usize, width: usize) -> Result<SceneSample> {
    check_dims(height, width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1d00_0000);
    let cam_h = rng.random_range(1.2..1.6);
    let room_h = rng.random_range(2.4..3.2);
    let back: f64 = rng.random_range(4.5..9.5);
    let left: f64 = rng.random_range(1.5..3.5);
    let right = rng.random_range(1.5..3.5);
    let focal = rng.random_range(0.8..1.0) * width as f64;
    let horizon = height as f64 * rng.random_range(0.4..0.6);

    let n_boxes = rng.random_range(1..=4);
    let boxes: Vec<Aabb> = (0..n_boxes)
        .map(|i| {
            let sx: f64 = rng.random_range(0.4..1.5);
            let sy = rng.random_range(0.4..2.0);
            let sz: f64 = rng.random_range(0.4..1.5);
            let cx = rng.random_range(-left + sx / 2.0..right - sx / 2.0);
            let z0 = rng.random_range(1.2..(back - sz - 0.1).max(1.3));
            Aabb {
                min: [cx - sx / 2.0, cam_h - sy, z0],
                max: [cx + sx / 2.0, cam_h, z0 + sz],
                material: 5 + i,
            }
        })
        .collect();
    let mut palette = vec![
        random_color(&mut rng, 0.5, 0.9),            // side walls
        random_color(&mut rng, 0.5, 0.9),            // back wall
        [0.55, 0.38, 0.22].map(|c: f64| c * rng.random_range(0.8..1.2)), // floor
        [0.92, 0.92, 0.9],                           // ceiling
        [0.0; 3],
    ];
    for _ in 0..n_boxes {
        palette.push(random_color(&mut rng, 0.1, 0.95));
    }
    let light = normalize([rng.random_range(-0.5..0.5), 1.0, rng.random_range(0.2..1.0)]);
    let tex_seed = rng.random::<u64>();

    let mut rgb = RgbImage::zeros(height, width);
    let mut depth = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let dx = (x as f64 + 0.5 - width as f64 / 2.0) / focal;
            let dy = (y as f64 + 0.5 - horizon) / focal;
            let mut hit = Some(Hit {
                z: back,
                normal: [0.0, 0.0, -1.0],
                uv: [dx * back, dy * back],
                material: 1,
            });
            if dy > 1e-9 {
                let z = cam_h / dy;
                hit = closer(hit, Some(Hit { z, normal: [0.0, -1.0, 0.0], uv: [dx * z, z], material: 2 }));
            } else if dy < -1e-9 {
                let z = (cam_h - room_h) / dy;
                hit = closer(hit, Some(Hit { z, normal: [0.0, 1.0, 0.0], uv: [dx * z, z], material: 3 }));
            }
            if dx < -1e-9 {
                let z = -left / dx;
                hit = closer(hit, Some(Hit { z, normal: [1.0, 0.0, 0.0], uv: [z, dy * z], material: 0 }));
            } else if dx > 1e-9 {
                let z = right / dx;
                hit = closer(hit, Some(Hit { z, normal: [-1.0, 0.0, 0.0], uv: [z, dy * z], material: 0 }));
            }
            for b in &boxes {
                hit = closer(hit, b.intersect([dx, dy, 1.0]));
            }
            let h = hit.expect("the back wall is always hit");
            let tex = match h.material {
                // floor planks
                2 => 0.5 * value_noise(tex_seed, h.uv[0] * 8.0, (h.uv[1] * 1.5).floor(), 1.0)
                    + 0.5 * value_noise(tex_seed ^ 7, h.uv[0] * 40.0, h.uv[1] * 3.0, 1.0),
                _ => value_noise(tex_seed ^ h.material as u64, h.uv[0] * 6.0, h.uv[1] * 6.0, 1.0),
            };
            let falloff = 1.0 / (1.0 + 0.03 * h.z * h.z);
            let c = shade(palette[h.material], h.normal, light, 0.35, tex).map(|v| v * (0.55 + 0.45 * falloff));
            rgb.set(y, x, c);
            depth.push(h.z.clamp(INDOOR_DEPTH_RANGE.0, INDOOR_DEPTH_RANGE.1));
        }
    }
    let depth = DepthMap::new(height, width, depth)?;
    let valid = ValidMask::from_depth(&depth);
    SceneSample::new(format!("indoor_{seed:016x}"), Domain::Indoor, rgb, depth, valid)
}

/// A street: ground plane with lane markings, building facades on both
/// sides, zero to four car-sized boxes and sky (invalid depth).
pub fn generate_outdoor(seed: u64, height: usize, width: usize, sparse: bool) -> Result<SceneSample> {
    check_dims(height, width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0d00_0000);
    let cam_h = rng.random_range(1.5..1.8);
    let focal = rng.random_range(0.55..0.65) * width as f64;
    let horizon = height as f64 * rng.random_range(0.3..0.45);
    let left = rng.random_range(5.0..12.0);
    let right = rng.random_range(5.0..12.0);
    let left_h = rng.random_range(4.0..15.0);
    let right_h = rng.random_range(4.0..15.0);
    let road_half = rng.random_range(3.0..4.5);
    // facade segments along z, with gaps showing the far scene
    let mut segments = |side: f64| {
        let mut segs = Vec::new();
        let mut z = rng.random_range(0.0..6.0);
        while z < 90.0 {
            let len = rng.random_range(8.0..30.0);
            segs.push((z, z + len, side, random_color(&mut rng, 0.3, 0.8)));
            z += len + rng.random_range(2.0..15.0);
        }
        segs
    };
    let left_segs = segments(-1.0);
    let right_segs = segments(1.0);
    let n_cars = rng.random_range(0..=4);
    let cars: Vec<Aabb> = (0..n_cars)
        .map(|i| {
            let cx = rng.random_range(-road_half + 0.9..road_half - 0.9);
            let z0 = rng.random_range(6.0..50.0);
            Aabb {
                min: [cx - 0.85, cam_h - 1.5, z0],
                max: [cx + 0.85, cam_h, z0 + 4.0],
                material: 10 + i,
            }
        })
        .collect();
    let car_colors: Vec<[f64; 3]> = (0..n_cars).map(|_| random_color(&mut rng, 0.05, 0.95)).collect();
    let sky = [rng.random_range(0.45..0.6), rng.random_range(0.65..0.8), rng.random_range(0.85..1.0)];
    let light = normalize([rng.random_range(-0.6..0.6), 1.0, rng.random_range(-0.3..0.6)]);
    let tex_seed = rng.random::<u64>();

    let mut rgb = RgbImage::zeros(height, width);
    let mut depth = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            let dx = (x as f64 + 0.5 - width as f64 / 2.0) / focal;
            let dy = (y as f64 + 0.5 - horizon) / focal;
            let mut hit = None;
            if dy > 1e-9 {
                let z = cam_h / dy;
                hit = Some(Hit { z, normal: [0.0, -1.0, 0.0], uv: [dx * z, z], material: 0 });
            }
            for (dist, h_wall, segs) in [(left, left_h, &left_segs), (right, right_h, &right_segs)] {
                let side = segs.first().map_or(1.0, |s| s.2);
                if dx * side <= 1e-9 {
                    continue;
                }
                let z = dist / (dx * side);
                let yw = dy * z;
                if yw < cam_h - h_wall || yw > cam_h {
                    continue;
                }
                if let Some(k) = segs.iter().position(|s| z >= s.0 && z < s.1) {
                    let material = if side < 0.0 { 100 + k } else { 200 + k };
                    hit = closer(hit, Some(Hit { z, normal: [-side, 0.0, 0.0], uv: [z, yw], material }));
                }
            }
            for c in &cars {
                hit = closer(hit, c.intersect([dx, dy, 1.0]));
            }
            let Some(h) = hit else {
                let t = (y as f64 / horizon.max(1.0)).clamp(0.0, 1.0);
                rgb.set(y, x, sky.map(|c| c * (0.85 + 0.15 * t)));
                continue;
            };
            let (base, tex) = match h.material {
                0 => {
                    let lx = h.uv[0];
                    let on_road = lx.abs() < road_half;
                    let marking = lx.abs() < 0.08 && (h.uv[1] / 3.0).floor() as i64 % 2 == 0;
                    let base = if marking {
                        [0.9, 0.9, 0.85]
                    } else if on_road {
                        [0.33, 0.33, 0.35]
                    } else {
                        [0.45, 0.5, 0.35]
                    };
                    (base, value_noise(tex_seed, h.uv[0] * 4.0, h.uv[1] * 2.0, 1.0))
                }
                m if m >= 100 => {
                    let segs = if m >= 200 { &right_segs } else { &left_segs };
                    let base = segs[m % 100].3;
                    // window grid
                    let wx = (h.uv[0] / 1.5).fract();
                    let wy = ((h.uv[1] - cam_h) / 1.2).rem_euclid(1.0);
                    let window = wx > 0.25 && wx < 0.75 && wy > 0.3 && wy < 0.8;
                    let base = if window { base.map(|c| c * 0.35) } else { base };
                    (base, value_noise(tex_seed ^ m as u64, h.uv[0] * 3.0, h.uv[1] * 3.0, 1.0))
                }
                m => (car_colors[m - 10], 0.5),
            };
            let lit = shade(base, h.normal, light, 0.4, tex);
            let haze = 1.0 - (-h.z / 120.0).exp();
            let c = [0, 1, 2].map(|i| lit[i] * (1.0 - haze) + sky[i] * haze);
            rgb.set(y, x, c);
            if h.z <= OUTDOOR_DEPTH_RANGE.1 {
                depth[y * width + x] = h.z.max(OUTDOOR_DEPTH_RANGE.0);
            }
        }
    }
    let mut depth = DepthMap::new(height, width, depth)?;
    if depth.data().iter().all(|&d| d <= 0.0) {
        // Degenerate tiny images can be all sky; keep one ground pixel.
        let i = height * width - 1;
        depth.data_mut()[i] = OUTDOOR_DEPTH_RANGE.0;
    }
    if sparse {
        let valid: Vec<usize> = (0..height * width).filter(|&i| depth.data()[i] > 0.0).collect();
        let keep = ((SPARSE_KEEP_FRACTION * (height * width) as f64).floor() as usize)
            .clamp(1, valid.len());
        let mut kept = vec![false; height * width];
        for k in sample_indices(&mut rng, valid.len(), keep) {
            kept[valid[k]] = true;
        }
        for (d, k) in depth.data_mut().iter_mut().zip(kept) {
            if !k {
                *d = 0.0;
            }
        }
    }
    let valid = ValidMask::from_depth(&depth);
    SceneSample::new(format!("outdoor_{seed:016x}"), Domain::Outdoor, rgb, depth, valid)
}

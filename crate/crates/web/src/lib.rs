//! WebAssembly bindings for a static demo page. Three operations are
//! exposed: decoding a bin distribution, rendering a synthetic scene with
//! optional densification, and planning the tiles for a wide image.
//!
//! Every binding wraps a plain Rust function so the logic can be tested
//! natively.

use dabc::data::{densify_with_report, generate_indoor, generate_outdoor, Domain, RgbImage};
use dabc::pipeline::{plan_tiles, render};
use dabc::QuantizationSpec;
use wasm_bindgen::prelude::*;

/// SWS and hard-max decodings of a two-mode distribution over the bins.
#[wasm_bindgen]
#[derive(Clone, Debug)]
pub struct Decoded {
    sws: f64,
    hard: f64,
    probs: Vec<f64>,
}

#[wasm_bindgen]
impl Decoded {
    #[wasm_bindgen(getter)]
    pub fn sws(&self) -> f64 {
        self.sws
    }

    #[wasm_bindgen(getter)]
    pub fn hard(&self) -> f64 {
        self.hard
    }

    /// Probability of every bin, label 0 first.
    pub fn probs(&self) -> Vec<f64> {
        self.probs.clone()
    }
}

/// Builds a mixture of two discretised Gaussians centred on the labels of
/// `depth_a` and `depth_b` (width `spread` bins, weight `mix` on the
/// second) and decodes it both ways.
pub fn decode_mixture_impl(depth_a: f64, depth_b: f64, mix: f64, spread: f64) -> dabc::Result<Decoded> {
    if !(0.0..=1.0).contains(&mix) || !(spread > 0.0) {
        return Err(dabc::Error::Parameter(format!(
            "mix must lie in [0, 1] and spread must be positive (got {mix}, {spread})"
        )));
    }
    let spec = QuantizationSpec::default();
    let la = spec.depth_to_label(depth_a)? as f64;
    let lb = spec.depth_to_label(depth_b)? as f64;
    let bump = |j: f64, c: f64| (-(j - c).powi(2) / (2.0 * spread * spread)).exp();
    let mut probs: Vec<f64> = (0..spec.num_classes())
        .map(|j| (1.0 - mix) * bump(j as f64, la) + mix * bump(j as f64, lb))
        .collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(Decoded {
        sws: spec.soft_weighted_depth(&probs)?,
        hard: spec.hard_max_depth(&probs)?,
        probs,
    })
}

#[wasm_bindgen]
pub fn decode_mixture(depth_a: f64, depth_b: f64, mix: f64, spread: f64) -> Result<Decoded, JsError> {
    decode_mixture_impl(depth_a, depth_b, mix, spread).map_err(js_error)
}

/// RGBA buffers of a generated scene, ready for `ImageData`.
#[wasm_bindgen]
#[derive(Clone, Debug)]
pub struct SceneView {
    height: usize,
    width: usize,
    rgb: Vec<u8>,
    depth: Vec<u8>,
    valid_fraction: f64,
    residual: Option<f64>,
}

#[wasm_bindgen]
impl SceneView {
    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rgb_rgba(&self) -> Vec<u8> {
        self.rgb.clone()
    }

    pub fn depth_rgba(&self) -> Vec<u8> {
        self.depth.clone()
    }

    /// Fraction of pixels with ground-truth depth before densification.
    #[wasm_bindgen(getter)]
    pub fn valid_fraction(&self) -> f64 {
        self.valid_fraction
    }

    /// Residual norm of the densification solve, or NaN when it was skipped.
    #[wasm_bindgen(getter)]
    pub fn residual(&self) -> f64 {
        self.residual.unwrap_or(f64::NAN)
    }
}

pub fn parse_domain(name: &str) -> dabc::Result<Domain> {
    Domain::ALL
        .into_iter()
        .find(|d| d.name() == name)
        .ok_or_else(|| dabc::Error::Parameter(format!("unknown domain {name:?}")))
}

pub fn render_scene_impl(
    domain: &str,
    seed: u32,
    height: usize,
    width: usize,
    sparse: bool,
    densify: bool,
) -> dabc::Result<SceneView> {
    let domain = parse_domain(domain)?;
    let sample = match domain {
        Domain::Indoor => generate_indoor(seed.into(), height, width)?,
        Domain::Outdoor => generate_outdoor(seed.into(), height, width, sparse)?,
    };
    let valid_fraction = sample.valid.fraction();
    let (depth, valid, residual) = if densify && valid_fraction < 1.0 {
        let report = densify_with_report(&sample.depth, &sample.valid, &sample.rgb)?;
        (report.depth, None, Some(report.residual_norm))
    } else {
        (sample.depth, Some(sample.valid), None)
    };
    let depth_img = render::render_depth(&depth, valid.as_ref(), domain);
    Ok(SceneView {
        height,
        width,
        rgb: rgba_from_image(&sample.rgb),
        depth: depth_img.pixels().flat_map(|p| [p[0], p[1], p[2], 255]).collect(),
        valid_fraction,
        residual,
    })
}

#[wasm_bindgen]
pub fn render_scene(
    domain: &str,
    seed: u32,
    height: usize,
    width: usize,
    sparse: bool,
    densify: bool,
) -> Result<SceneView, JsError> {
    render_scene_impl(domain, seed, height, width, sparse, densify).map_err(js_error)
}

fn rgba_from_image(img: &RgbImage) -> Vec<u8> {
    let (h, w) = img.dims();
    let mut out = Vec::with_capacity(h * w * 4);
    for y in 0..h {
        for x in 0..w {
            let px = img.get(y, x);
            out.extend(px.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8));
            out.push(255);
        }
    }
    out
}

/// Column layout of a tiled-inference plan.
#[wasm_bindgen]
#[derive(Clone, Debug)]
pub struct TileLayout {
    downsampled_height: usize,
    downsampled_width: usize,
    starts: Vec<usize>,
    tile_width: usize,
    overlap: usize,
}

#[wasm_bindgen]
impl TileLayout {
    #[wasm_bindgen(getter)]
    pub fn downsampled_height(&self) -> usize {
        self.downsampled_height
    }

    #[wasm_bindgen(getter)]
    pub fn downsampled_width(&self) -> usize {
        self.downsampled_width
    }

    #[wasm_bindgen(getter)]
    pub fn tile_width(&self) -> usize {
        self.tile_width
    }

    /// Total number of columns covered more than once.
    #[wasm_bindgen(getter)]
    pub fn overlap(&self) -> usize {
        self.overlap
    }

    /// First column of every tile in the downsampled image.
    pub fn starts(&self) -> Vec<usize> {
        self.starts.clone()
    }
}

pub fn plan_impl(
    height: usize,
    width: usize,
    tile_width: usize,
    net_height: usize,
    net_width: usize,
) -> dabc::Result<TileLayout> {
    let plan = plan_tiles(height, width, tile_width, (net_height, net_width))?;
    Ok(TileLayout {
        downsampled_height: plan.downsampled.0,
        downsampled_width: plan.downsampled.1,
        starts: plan.tiles.iter().map(|r| r.start).collect(),
        tile_width,
        overlap: plan.overlap(),
    })
}

#[wasm_bindgen]
pub fn plan(
    height: usize,
    width: usize,
    tile_width: usize,
    net_height: usize,
    net_width: usize,
) -> Result<TileLayout, JsError> {
    plan_impl(height, width, tile_width, net_height, net_width).map_err(js_error)
}

fn js_error(e: dabc::Error) -> JsError {
    JsError::new(&e.to_string())
}

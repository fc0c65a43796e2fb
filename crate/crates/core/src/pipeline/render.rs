//! PNG rendering for depth maps, confusion matrices and gate plots.

use std::path::Path;

use image::{Rgb, RgbImage as Canvas};

use crate::data::{DepthMap, Domain, ValidMask};
use crate::metrics::ConfusionMatrix;
use crate::Result;

type Color = [f64; 3];

/// Piecewise-linear colour ramp over `t` in [0, 1].
fn ramp(stops: &[Color], t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0) * (stops.len() - 1) as f64;
    let i = (t.floor() as usize).min(stops.len() - 2);
    let f = t - i as f64;
    let c: Vec<u8> = (0..3)
        .map(|k| ((stops[i][k] * (1.0 - f) + stops[i + 1][k] * f) * 255.0).round() as u8)
        .collect();
    Rgb([c[0], c[1], c[2]])
}

// near -> far
const OUTDOOR_STOPS: [Color; 4] = [[0.99, 0.91, 0.14], [0.37, 0.79, 0.38], [0.13, 0.47, 0.56], [0.27, 0.0, 0.33]];
const INDOOR_STOPS: [Color; 5] = [[0.0, 0.0, 0.9], [0.0, 0.8, 1.0], [0.5, 1.0, 0.5], [1.0, 0.8, 0.0], [0.85, 0.0, 0.0]];
const HEAT_STOPS: [Color; 5] = [[1.0, 1.0, 1.0], [1.0, 0.85, 0.35], [0.95, 0.35, 0.1], [0.55, 0.0, 0.2], [0.1, 0.0, 0.1]];

/// Colour of a depth value on a log scale between `near` and `far`:
/// yellow-near/purple-far outdoors, blue-near/red-far indoors.
pub fn depth_color(depth: f64, domain: Domain, near: f64, far: f64) -> Rgb<u8> {
    let t = (depth.max(near).ln() - near.ln()) / (far.ln() - near.ln());
    match domain {
        Domain::Outdoor => ramp(&OUTDOOR_STOPS, t),
        Domain::Indoor => ramp(&INDOOR_STOPS, t),
    }
}

pub fn default_range(domain: Domain) -> (f64, f64) {
    match domain {
        Domain::Indoor => (0.25, 10.0),
        Domain::Outdoor => (2.5, 80.0),
    }
}

/// Colour-mapped depth; pixels outside `valid` are black.
pub fn render_depth(depth: &DepthMap, valid: Option<&ValidMask>, domain: Domain) -> Canvas {
    let (h, w) = depth.dims();
    let (near, far) = default_range(domain);
    Canvas::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        match valid {
            Some(m) if !m.data()[i] => Rgb([0, 0, 0]),
            _ => depth_color(depth.data()[i], domain, near, far),
        }
    })
}

pub fn save_depth_png(path: &Path, depth: &DepthMap, valid: Option<&ValidMask>, domain: Domain) -> Result<()> {
    render_depth(depth, valid, domain).save(path)?;
    Ok(())
}

/// Row-normalised confusion matrix with `cell` pixels per entry. A
/// square-root scale keeps faint off-diagonal mass visible.
pub fn render_confusion(cm: &ConfusionMatrix, cell: u32) -> Canvas {
    let n = cm.size() as u32;
    Canvas::from_fn(n * cell, n * cell, |x, y| {
        let (i, j) = ((y / cell) as usize, (x / cell) as usize);
        ramp(&HEAT_STOPS, cm.normalized(i, j).sqrt())
    })
}

pub fn save_confusion_png(path: &Path, cm: &ConfusionMatrix) -> Result<()> {
    let cell = (600 / cm.size().max(1) as u32).clamp(1, 16);
    render_confusion(cm, cell).save(path)?;
    Ok(())
}

/// One polyline per series over a shared `[0, 1]` value axis.
#[derive(Clone, Debug)]
pub struct LineSeries {
    pub values: Vec<f64>,
    pub color: [u8; 3],
}

pub fn domain_line_color(domain: Domain) -> [u8; 3] {
    match domain {
        Domain::Indoor => [30, 90, 200],
        Domain::Outdoor => [230, 120, 20],
    }
}

pub fn render_lines(series: &[LineSeries], width: u32, height: u32) -> Canvas {
    let mut img = Canvas::from_pixel(width, height, Rgb([255, 255, 255]));
    let margin = 16i64;
    let (pw, ph) = (width as i64 - 2 * margin, height as i64 - 2 * margin);
    let to_px = |i: usize, n: usize, v: f64| {
        let x = margin + if n > 1 { (i as i64 * pw) / (n as i64 - 1) } else { pw / 2 };
        let y = margin + ((1.0 - v.clamp(0.0, 1.0)) * ph as f64).round() as i64;
        (x, y)
    };
    for g in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let shade = if g == 0.0 || g == 1.0 { 120 } else { 220 };
        let y = to_px(0, 1, g).1;
        draw_line(&mut img, (margin, y), (margin + pw, y), [shade; 3]);
    }
    for s in series {
        let n = s.values.len();
        for i in 1..n {
            draw_line(&mut img, to_px(i - 1, n, s.values[i - 1]), to_px(i, n, s.values[i]), s.color);
        }
    }
    img
}

fn draw_line(img: &mut Canvas, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), color: [u8; 3]) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let mut err = dx + dy;
    loop {
        if (0..img.width() as i64).contains(&x0) && (0..img.height() as i64).contains(&y0) {
            img.put_pixel(x0 as u32, y0 as u32, Rgb(color));
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

pub fn save_lines_png(path: &Path, series: &[LineSeries]) -> Result<()> {
    render_lines(series, 640, 320).save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outdoor_is_yellow_near_purple_far() {
        let near = depth_color(2.5, Domain::Outdoor, 2.5, 80.0).0;
        let far = depth_color(80.0, Domain::Outdoor, 2.5, 80.0).0;
        assert!(near[0] > 200 && near[1] > 200 && near[2] < 80);
        assert!(far[2] > far[1] && far[0] > far[1]);
    }

    #[test]
    fn indoor_is_blue_near_red_far() {
        let near = depth_color(0.25, Domain::Indoor, 0.25, 10.0).0;
        let far = depth_color(10.0, Domain::Indoor, 0.25, 10.0).0;
        assert!(near[2] > 200 && near[0] == 0);
        assert!(far[0] > 200 && far[2] == 0);
    }

    #[test]
    fn confusion_image_has_cell_geometry() {
        let cm = ConfusionMatrix::from_counts(3, vec![5, 0, 0, 0, 2, 2, 0, 0, 1]).unwrap();
        let img = render_confusion(&cm, 4);
        assert_eq!(img.dimensions(), (12, 12));
        assert_eq!(img.get_pixel(1, 1).0, [26, 0, 26]);
        assert_eq!(img.get_pixel(5, 1).0, [255, 255, 255]);
    }

    #[test]
    fn lines_stay_inside_canvas() {
        let s = LineSeries {
            values: vec![0.0, 1.0, 0.5, 2.0, -1.0],
            color: [255, 0, 0],
        };
        let img = render_lines(&[s], 100, 50);
        assert!(img.pixels().any(|p| p.0 == [255, 0, 0]));
    }
}

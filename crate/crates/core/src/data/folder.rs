//! `<root>/<id>.rgb.png` + `<root>/<id>.depth.pfm` folder datasets.

use std::fs;
use std::path::Path;

use super::{pfm, Domain, RgbImage, SceneSample, ValidMask};
use crate::{Error, Result};

const RGB_SUFFIX: &str = ".rgb.png";
const DEPTH_SUFFIX: &str = ".depth.pfm";

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|e| Error::ingest(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px[c] as f64 / 255.0;
        }
    }
    RgbImage::new(h, w, data)
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    let (h, w) = img.dims();
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let c = img.get(y, x).map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
            buf.put_pixel(x as u32, y as u32, image::Rgb(c));
        }
    }
    buf.save(path)?;
    Ok(())
}

/// Writes a sample in the folder layout; invalid pixels are stored as 0.
pub fn write_folder_sample(dir: &Path, sample: &SceneSample) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_rgb_png(&dir.join(format!("{}{RGB_SUFFIX}", sample.id)), &sample.rgb)?;
    let masked = crate::data::DepthMap::new(
        sample.depth.height(),
        sample.depth.width(),
        sample
            .depth
            .data()
            .iter()
            .zip(sample.valid.data())
            .map(|(&d, &v)| if v { d } else { 0.0 })
            .collect(),
    )?;
    pfm::write(&dir.join(format!("{}{DEPTH_SUFFIX}", sample.id)), &masked)
}

/// Loads every RGB/depth pair under `root`, sorted by id. Non-positive
/// depths become invalid; samples with no valid pixel are skipped.
pub fn load_folder_dataset(root: &Path, domain: Domain) -> Result<Vec<SceneSample>> {
    let mut rgb_ids = Vec::new();
    let mut depth_ids = Vec::new();
    let entries = fs::read_dir(root).map_err(|e| Error::ingest(root, e.to_string()))?;
    for entry in entries {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(RGB_SUFFIX) {
            rgb_ids.push(id.to_owned());
        } else if let Some(id) = name.strip_suffix(DEPTH_SUFFIX) {
            depth_ids.push(id.to_owned());
        }
    }
    rgb_ids.sort();
    depth_ids.sort();
    for id in &depth_ids {
        if rgb_ids.binary_search(id).is_err() {
            return Err(Error::ingest(
                root.join(format!("{id}{DEPTH_SUFFIX}")),
                format!("no matching {id}{RGB_SUFFIX}"),
            ));
        }
    }
    let mut out = Vec::with_capacity(rgb_ids.len());
    for id in rgb_ids {
        let rgb_path = root.join(format!("{id}{RGB_SUFFIX}"));
        let depth_path = root.join(format!("{id}{DEPTH_SUFFIX}"));
        if depth_ids.binary_search(&id).is_err() {
            return Err(Error::ingest(&rgb_path, format!("no matching {id}{DEPTH_SUFFIX}")));
        }
        let rgb = read_rgb_png(&rgb_path)?;
        let mut depth = pfm::read(&depth_path)?;
        if depth.dims() != rgb.dims() {
            return Err(Error::ingest(
                &depth_path,
                format!("depth is {:?} but image is {:?}", depth.dims(), rgb.dims()),
            ));
        }
        let valid = ValidMask::from_depth(&depth);
        if valid.count() == 0 {
            log::warn!("skipping {id}: depth map has no valid pixels");
            continue;
        }
        for (d, v) in depth.data_mut().iter_mut().zip(valid.data()) {
            if !v {
                *d = 0.0;
            }
        }
        out.push(SceneSample::new(id, domain, rgb, depth, valid)?);
    }
    Ok(out)
}

//! Single-channel PFM ("Pf") depth files, little-endian, scale -1.0.
//! Rows are stored bottom to top as the format prescribes.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::DepthMap;
use crate::{Error, Result};

pub fn encode(depth: &DepthMap) -> Vec<u8> {
    let (h, w) = depth.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * h * w);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(depth.get(y, x) as f32).to_le_bytes());
        }
    }
    out
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos]).ok().filter(|s| !s.is_empty())
}

pub fn decode(bytes: &[u8]) -> std::result::Result<DepthMap, String> {
    let mut pos = 0;
    match header_token(bytes, &mut pos) {
        Some("Pf") => {}
        Some("PF") => return Err("colour PFM is not a depth map".into()),
        _ => return Err("missing Pf magic".into()),
    }
    let mut num = |what: &str| -> std::result::Result<String, String> {
        header_token(bytes, &mut pos)
            .map(str::to_owned)
            .ok_or_else(|| format!("missing {what}"))
    };
    let w: usize = num("width")?.parse().map_err(|e| format!("bad width: {e}"))?;
    let h: usize = num("height")?.parse().map_err(|e| format!("bad height: {e}"))?;
    let scale: f64 = num("scale")?.parse().map_err(|e| format!("bad scale: {e}"))?;
    // exactly one whitespace byte separates header and data
    pos += 1;
    let data = bytes.get(pos..).unwrap_or_default();
    if data.len() != 4 * w * h {
        return Err(format!("expected {} data bytes, found {}", 4 * w * h, data.len()));
    }
    let read = |i: usize| {
        let b: [u8; 4] = data[4 * i..4 * i + 4].try_into().expect("four bytes");
        if scale < 0.0 {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        }
    };
    let mut values = vec![0.0; w * h];
    for row in 0..h {
        let y = h - 1 - row;
        for x in 0..w {
            values[y * w + x] = read(row * w + x) as f64;
        }
    }
    DepthMap::new(h, w, values).map_err(|e| e.to_string())
}

pub fn write(path: &Path, depth: &DepthMap) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(depth))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<DepthMap> {
    let bytes = fs::read(path).map_err(|e| Error::ingest(path, e.to_string()))?;
    decode(&bytes).map_err(|e| Error::ingest(path, e))
}

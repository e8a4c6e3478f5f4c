//! Binary PGM (P5, grayscale) and PPM (P6, RGB) images with 8-bit samples.
//! Pixels load as `[h×w×c]` tensors scaled by `1/maxval` into [0, 1].

use std::fs;
use std::path::{Path, PathBuf};

use super::DataError;
use crate::tensor::Tensor;

fn bad(path: &Path, message: impl Into<String>) -> DataError {
    DataError::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: message.into(),
    }
}

/// Header tokens, skipping `#` comments; returns the tokens and the offset
/// of the single whitespace byte that ends the header.
fn header_tokens(bytes: &[u8], count: usize) -> Option<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    Some((tokens, i))
}

pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Tensor, DataError> {
    let (tokens, end) = header_tokens(bytes, 4).ok_or_else(|| bad(path, "truncated PNM header"))?;
    let channels = match tokens[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(bad(path, format!("unsupported PNM magic '{other}' (need P5 or P6)"))),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(path, format!("'{s}' is not a number")));
    let (w, h, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if w == 0 || h == 0 || !(1..=255).contains(&maxval) {
        return Err(bad(path, format!("unsupported geometry {w}×{h}, maxval {maxval}")));
    }
    let body = &bytes[(end + 1).min(bytes.len())..];
    let need = w * h * channels;
    if body.len() < need {
        return Err(bad(path, format!("expected {need} pixel bytes, found {}", body.len())));
    }
    let scale = 1.0 / maxval as f64;
    let data = body[..need].iter().map(|&b| (b as f64 * scale).min(1.0)).collect();
    Ok(Tensor::new(data, &[h, w, channels])?)
}

pub fn read_pnm(path: &Path) -> Result<Tensor, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_pnm(&bytes, path)
}

/// Quantise `[h×w×c]` pixels in [0, 1] (c = 1 or 3) to 8 bits.
pub fn encode_pnm(image: &Tensor) -> Result<Vec<u8>, DataError> {
    let (h, w, c) = match *image.shape() {
        [h, w, c] if c == 1 || c == 3 => (h, w, c),
        _ => {
            return Err(DataError::Mismatch(format!(
                "PNM images must be [h×w×1] or [h×w×3], got {:?}",
                image.shape()
            )))
        }
    };
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn write_pnm(path: &Path, image: &Tensor) -> Result<(), DataError> {
    let bytes = encode_pnm(image)?;
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

pub fn is_pnm(path: &Path) -> bool {
    path.extension()
        .and_then(|x| x.to_str())
        .is_some_and(|x| matches!(x.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "pnm"))
}

/// All PGM/PPM files under `dir` (recursively), sorted by path.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut stack = vec![dir.to_path_buf()];
    let mut found = Vec::new();
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| DataError::io(&d, e))? {
            let path = entry.map_err(|e| DataError::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if is_pnm(&path) {
                found.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}

pub fn load_images(dir: &Path) -> Result<Vec<(PathBuf, Tensor)>, DataError> {
    list_images(dir)?
        .into_iter()
        .map(|p| read_pnm(&p).map(|t| (p, t)))
        .collect()
}

use std::fs;
use std::path::{Path, PathBuf};

use super::{Image, PanoramaSet, FACE_NAMES};
use crate::error::{Error, Result};
use crate::hashing::short_hash;

/// Binary PPM (P6), maxval 255.
pub fn write_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn read_ppm(bytes: &[u8]) -> Result<Image> {
    let bad = |m: &str| Error::Parse(format!("ppm: {m}"));
    // Header: magic, width, height, maxval, separated by whitespace, then one
    // whitespace byte before the raster.
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header not ascii"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("not a P6 file"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    let raster = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?;
    Image::from_data(w, h, raster.to_vec())
}

/// Writes the four faces as `<stem>_<face>.ppm` under `dir` and returns the
/// manifest line: kind, then `face=file:hash` per face.
pub fn write_panorama(pano: &PanoramaSet, dir: &Path, stem: &str) -> Result<(Vec<PathBuf>, String)> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    let mut line = format!("panorama {} kind={}", stem, pano.kind.name());
    for (face, img) in FACE_NAMES.iter().zip(&pano.faces) {
        let bytes = write_ppm(img);
        let name = format!("{stem}_{face}.ppm");
        let path = dir.join(&name);
        fs::write(&path, &bytes)?;
        line.push_str(&format!(" {face}={name}:{}", short_hash(&bytes)));
        paths.push(path);
    }
    Ok((paths, line))
}

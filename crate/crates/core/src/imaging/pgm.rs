//! Binary PGM (P5, maxval 255).

use std::io::{Read, Write};
use std::path::Path;

use super::{GrayImage, ImagingError, Result};

pub fn write_pgm<W: Write>(img: &GrayImage, mut sink: W) -> Result<()> {
    write!(sink, "P5\n{} {}\n255\n", img.width(), img.height())?;
    sink.write_all(img.data())?;
    Ok(())
}

pub fn write_pgm_file(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::with_capacity(img.data().len() + 20);
    write_pgm(img, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_pgm_file(path: impl AsRef<Path>) -> Result<GrayImage> {
    read_pgm(std::fs::File::open(path)?)
}

pub fn read_pgm<R: Read>(mut source: R) -> Result<GrayImage> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let magic = token(&bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(ImagingError::Pgm(format!(
            "expected P5 magic, found {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = number(&bytes, &mut pos, "width")?;
    let height = number(&bytes, &mut pos, "height")?;
    let maxval = number(&bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(ImagingError::Pgm(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(ImagingError::Pgm("missing raster separator".into()));
    }
    pos += 1;
    let need = width * height;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(ImagingError::Pgm(format!(
            "raster truncated: need {need} bytes, have {}",
            raster.len()
        )));
    }
    GrayImage::new(width, height, raster[..need].to_vec())
}

fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(ImagingError::Pgm("unexpected end of header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let t = token(bytes, pos)?;
    std::str::from_utf8(t)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ImagingError::Pgm(format!("bad {what} {:?}", String::from_utf8_lossy(t))))
}

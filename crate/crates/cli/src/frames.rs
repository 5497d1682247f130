use std::io::Read;
use std::path::Path;

use gaze_core::imaging::read_pgm_file;
use gaze_core::GrayImage;

use crate::{CliError, FrameArgs, Result};

/// Named frames in a stable order: PGM files sorted by file name, or raw
/// `width × height` byte frames from stdin numbered from 0.
pub fn load(args: &FrameArgs) -> Result<Vec<(String, GrayImage)>> {
    if args.frames.as_os_str() == "-" {
        let (Some(w), Some(h)) = (args.width, args.height) else {
            return Err(CliError::Usage("raw frames on stdin need --width and --height".into()));
        };
        let mut buf = Vec::new();
        std::io::stdin().read_to_end(&mut buf)?;
        return raw_frames(&buf, w, h);
    }
    let p = &args.frames;
    if p.is_file() {
        return Ok(vec![(stem(p), read_pgm_file(p)?)]);
    }
    if !p.is_dir() {
        return Err(CliError::Usage(format!("frames path {} does not exist", p.display())));
    }
    let mut files: Vec<_> = std::fs::read_dir(p)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!("no .pgm frames in {}", p.display())));
    }
    files.iter().map(|f| Ok((stem(f), read_pgm_file(f)?))).collect()
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn raw_frames(buf: &[u8], w: usize, h: usize) -> Result<Vec<(String, GrayImage)>> {
    let n = w * h;
    if n == 0 {
        return Err(CliError::Usage("frame size must be positive".into()));
    }
    if !buf.len().is_multiple_of(n) {
        return Err(CliError::Domain(format!("stdin holds {} bytes, not a whole number of {w}x{h} frames", buf.len())));
    }
    buf.chunks_exact(n)
        .enumerate()
        .map(|(i, c)| Ok((format!("{i:06}"), GrayImage::new(w, h, c.to_vec())?)))
        .collect()
}

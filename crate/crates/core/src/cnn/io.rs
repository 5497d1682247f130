//! GZK1 model files.
//!
//! Layout, all little-endian: `"GZK1"`, `u16` version, seven `u32` arch
//! fields (in_channels, in_size, conv1, conv2, kernel, fc1, classes), `u64`
//! init seed, then for each parameter tensor in declaration order a `u32`
//! value count followed by that many `f32`.

use std::io::{Read, Write};
use std::path::Path;

use super::network::PARAM_NAMES;
use super::{ArchConfig, CnnError, Network, Result, Tensor};

pub const MAGIC: [u8; 4] = *b"GZK1";
pub const MODEL_VERSION: u16 = 1;

pub fn save_model<W: Write>(net: &Network<f32>, mut sink: W) -> Result<()> {
    let a = net.arch();
    let mut buf = Vec::with_capacity(64 + 4 * net.param_count() + 32);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for v in [a.in_channels, a.in_size, a.conv1, a.conv2, a.kernel, a.fc1, a.classes] {
        let v = u32::try_from(v).map_err(|_| CnnError::Arch(format!("dimension {v} exceeds u32")))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&net.seed().to_le_bytes());
    for p in net.params() {
        buf.extend_from_slice(&(p.len() as u32).to_le_bytes());
        for v in p.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(())
}

pub fn save_model_file(net: &Network<f32>, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    save_model(net, std::io::BufWriter::new(f))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(CnnError::Truncated(format!("{what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn load_model<R: Read>(mut source: R) -> Result<Network<f32>> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    let magic: [u8; 4] = c.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(CnnError::Magic(magic));
    }
    let version = u16::from_le_bytes(c.take(2, "version")?.try_into().expect("2 bytes"));
    if version != MODEL_VERSION {
        return Err(CnnError::Version(version));
    }
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = c.u32("architecture")? as usize;
    }
    let [in_channels, in_size, conv1, conv2, kernel, fc1, classes] = dims;
    let arch = ArchConfig { in_channels, in_size, conv1, conv2, kernel, fc1, classes };
    let seed = u64::from_le_bytes(c.take(8, "seed")?.try_into().expect("8 bytes"));
    let shapes = arch.param_shapes()?;

    let mut params = Vec::with_capacity(8);
    for (name, shape) in PARAM_NAMES.iter().zip(&shapes) {
        let expected: usize = shape.iter().product();
        let found = c.u32(name)? as usize;
        if found != expected {
            return Err(CnnError::ParamShape { param: name, expected, found });
        }
        let raw = c.take(4 * found, name)?;
        let data: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(CnnError::NonFinite { param: name, index });
        }
        params.push(Tensor::new(shape, data)?);
    }
    if c.pos != buf.len() {
        return Err(CnnError::Shape(format!("{} trailing bytes after parameters", buf.len() - c.pos)));
    }
    Network::from_params(arch, params, seed)
}

pub fn load_model_file(path: impl AsRef<Path>) -> Result<Network<f32>> {
    let f = std::fs::File::open(path)?;
    load_model(std::io::BufReader::new(f))
}

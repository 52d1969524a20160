//! NCKP network checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "NCKP"                magic
//! u32                   version (1)
//! u32 + bytes           NetworkSpec as UTF-8 JSON
//! u32                   parameter count
//! per parameter:
//!   u32 + bytes         parameter id (UTF-8)
//!   u32                 rank
//!   rank x u64          extents
//!   prod(extents) x f64 values, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NCKP_MAGIC: &[u8; 4] = b"NCKP";
pub const NCKP_VERSION: u32 = 1;

/// Serializes `net` into `w`.
pub fn write_checkpoint<W: Write>(net: &Network, mut w: W) -> std::io::Result<()> {
    let spec = serde_json::to_vec(net.spec()).map_err(std::io::Error::other)?;
    w.write_all(NCKP_MAGIC)?;
    w.write_all(&NCKP_VERSION.to_le_bytes())?;
    w.write_all(&(spec.len() as u32).to_le_bytes())?;
    w.write_all(&spec)?;
    w.write_all(&(net.params().len() as u32).to_le_bytes())?;
    for (_, p) in net.params().iter() {
        let name = p.name().as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(p.value.rank() as u32).to_le_bytes())?;
        for &e in p.value.shape() {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for &v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(net, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(self.origin, "unexpected end of checkpoint"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint. `origin` only labels errors.
pub fn read_checkpoint<R: Read>(mut r: R, origin: &Path) -> Result<Network> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| Error::io(origin, e))?;
    let mut rd = Reader { buf: &buf, pos: 0, origin };
    if rd.take(4)? != NCKP_MAGIC {
        return Err(Error::format(origin, "bad magic, not an NCKP file"));
    }
    let version = rd.u32()?;
    if version != NCKP_VERSION {
        return Err(Error::format(origin, format!("unsupported version {version}")));
    }
    let spec_len = rd.u32()? as usize;
    let spec: NetworkSpec = serde_json::from_slice(rd.take(spec_len)?)
        .map_err(|e| Error::format(origin, format!("bad network spec: {e}")))?;
    let mut net = Network::build(spec, 0)?;
    let count = rd.u32()? as usize;
    if count != net.params().len() {
        return Err(Error::format(
            origin,
            format!("{count} parameters stored, architecture has {}", net.params().len()),
        ));
    }
    let mut values = Vec::with_capacity(count);
    for (_, p) in net.params().iter() {
        let name_len = rd.u32()? as usize;
        let name = std::str::from_utf8(rd.take(name_len)?)
            .map_err(|_| Error::format(origin, "parameter id is not UTF-8"))?;
        if name != p.name() {
            return Err(Error::format(
                origin,
                format!("expected parameter `{}`, found `{name}`", p.name()),
            ));
        }
        let rank = rd.u32()? as usize;
        let shape = (0..rank)
            .map(|_| rd.u64().map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        if shape != p.value.shape() {
            return Err(Error::format(
                origin,
                format!("parameter `{name}` has shape {shape:?}, expected {:?}", p.value.shape()),
            ));
        }
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rd.f64()).collect::<Result<Vec<_>>>()?;
        values.push(Tensor::new(&shape, data).map_err(|e| Error::format(origin, e.to_string()))?);
    }
    if rd.pos != buf.len() {
        return Err(Error::format(origin, "trailing bytes after last parameter"));
    }
    net.params_mut().load_values(&values)?;
    Ok(net)
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file), path)
}

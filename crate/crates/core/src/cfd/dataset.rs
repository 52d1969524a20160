//! NCFD dataset files and their TOML manifests.
//!
//! NCFD layout, little-endian:
//!
//! ```text
//! "NCFD"      magic
//! u32         version (1)
//! u32 u32     nx, ny
//! f64         dt
//! u32         record count
//! records     each u_x, u_y, T as nx·ny f64 row-major arrays
//! ```
//!
//! The manifest sits next to the data file with the extension `.toml`:
//!
//! ```toml
//! nx = 64
//! ny = 64
//! dt = 0.01
//! count = 1000          # records in the data file
//! train_start = 600     # bounds are taken over records
//! train_count = 300     #   train_start..train_start + train_count
//! data_file = "cavity.ncfd"   # relative to the manifest
//! header_bytes = 28
//! record_bytes = 98304  # 3·nx·ny·8; record k starts at header + k·record
//! [bounds.u_x]
//! min = -0.1
//! max = 0.2
//! # likewise [bounds.u_y] and [bounds.t]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{init_cavity, CavitySolver, SolverParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NCFD_MAGIC: &[u8; 4] = b"NCFD";
pub const NCFD_VERSION: u32 = 1;
pub const NCFD_HEADER_BYTES: u64 = 28;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableRange {
    pub min: f64,
    pub max: f64,
}

impl VariableRange {
    fn empty() -> Self {
        VariableRange {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }

    fn include(&mut self, values: &[f64]) {
        for &v in values {
            self.min = self.min.min(v);
            self.max = self.max.max(v);
        }
    }
}

/// Per-variable ranges in channel order `u_x, u_y, T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableBounds {
    pub u_x: VariableRange,
    pub u_y: VariableRange,
    pub t: VariableRange,
}

impl VariableBounds {
    pub fn as_array(&self) -> [VariableRange; 3] {
        [self.u_x, self.u_y, self.t]
    }

    pub fn from_array(r: [VariableRange; 3]) -> Self {
        VariableBounds {
            u_x: r[0],
            u_y: r[1],
            t: r[2],
        }
    }

    /// Ranges over the given `[3, ny, nx]` frames.
    pub fn over(frames: &[Tensor]) -> Self {
        let mut r = [VariableRange::empty(); 3];
        for f in frames {
            let n = f.len() / 3;
            for (c, range) in r.iter_mut().enumerate() {
                range.include(&f.data()[c * n..(c + 1) * n]);
            }
        }
        VariableBounds::from_array(r)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("u_x", self.u_x), ("u_y", self.u_y), ("T", self.t)] {
            if !(r.min.is_finite() && r.max.is_finite() && r.min < r.max) {
                return Err(Error::config(
                    "bounds",
                    format!("{name} range [{}, {}] is empty or degenerate", r.min, r.max),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    pub count: usize,
    pub train_start: usize,
    pub train_count: usize,
    pub data_file: String,
    pub header_bytes: u64,
    pub record_bytes: u64,
    pub bounds: VariableBounds,
}

impl DatasetManifest {
    pub fn record_offset(&self, k: usize) -> u64 {
        self.header_bytes + k as u64 * self.record_bytes
    }

    fn validate(&self, origin: &Path) -> Result<()> {
        if self.header_bytes != NCFD_HEADER_BYTES {
            return Err(Error::format(origin, format!("header_bytes must be {NCFD_HEADER_BYTES}")));
        }
        if self.record_bytes != (3 * self.nx * self.ny * 8) as u64 {
            return Err(Error::format(origin, "record_bytes inconsistent with 3·nx·ny·8"));
        }
        if self.train_count == 0 || self.train_start + self.train_count > self.count {
            return Err(Error::format(origin, "training records must be a non-empty range within count"));
        }
        self.bounds
            .validate()
            .map_err(|e| Error::format(origin, e.to_string()))
    }

    /// Data file path resolved against the manifest's directory.
    pub fn data_path(&self, manifest_path: &Path) -> PathBuf {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new(""))
            .join(&self.data_file)
    }
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let text = toml::to_string(manifest).map_err(|e| Error::format(path, e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: DatasetManifest = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    m.validate(path)?;
    Ok(m)
}

/// Frames of an NCFD file, each `[3, ny, nx]` ordered `u_x, u_y, T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NcfdDataset {
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    pub records: Vec<Tensor>,
}

fn write_header<W: Write>(w: &mut W, nx: usize, ny: usize, dt: f64, count: usize) -> std::io::Result<()> {
    w.write_all(NCFD_MAGIC)?;
    w.write_all(&NCFD_VERSION.to_le_bytes())?;
    w.write_all(&(nx as u32).to_le_bytes())?;
    w.write_all(&(ny as u32).to_le_bytes())?;
    w.write_all(&dt.to_le_bytes())?;
    w.write_all(&(count as u32).to_le_bytes())
}

fn write_record<W: Write>(w: &mut W, frame: &Tensor) -> std::io::Result<()> {
    for v in frame.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_ncfd(path: &Path, data: &NcfdDataset) -> Result<()> {
    for f in &data.records {
        if f.shape() != [3, data.ny, data.nx] {
            return Err(Error::Dimension(format!(
                "record shape {:?} differs from [3, {}, {}]",
                f.shape(),
                data.ny,
                data.nx
            )));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write_header(&mut w, data.nx, data.ny, data.dt, data.records.len()).map_err(io)?;
    for f in &data.records {
        write_record(&mut w, f).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_ncfd(path: &Path) -> Result<NcfdDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    if buf.len() < NCFD_HEADER_BYTES as usize {
        return Err(Error::format(path, "file shorter than the NCFD header"));
    }
    if &buf[..4] != NCFD_MAGIC {
        return Err(Error::format(path, "bad magic, not an NCFD file"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != NCFD_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let (nx, ny) = (u32_at(8) as usize, u32_at(12) as usize);
    let dt = f64::from_le_bytes(buf[16..24].try_into().unwrap());
    let count = u32_at(24) as usize;
    let n = 3 * nx * ny;
    let expected = NCFD_HEADER_BYTES as usize + count * n * 8;
    if nx == 0 || ny == 0 || buf.len() != expected {
        return Err(Error::format(
            path,
            format!("{} bytes on disk, header implies {expected}", buf.len()),
        ));
    }
    let body = &buf[NCFD_HEADER_BYTES as usize..];
    let mut records = Vec::with_capacity(count);
    for r in 0..count {
        let data: Vec<f64> = body[r * n * 8..(r + 1) * n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(Tensor::new(&[3, ny, nx], data).map_err(|e| Error::format(path, e.to_string()))?);
    }
    Ok(NcfdDataset { nx, ny, dt, records })
}

/// Reads a manifest and the data file it points to, checking they agree.
pub fn load_dataset(manifest_path: &Path) -> Result<(DatasetManifest, NcfdDataset)> {
    let manifest = read_manifest(manifest_path)?;
    let data_path = manifest.data_path(manifest_path);
    let data = read_ncfd(&data_path)?;
    if (data.nx, data.ny, data.records.len()) != (manifest.nx, manifest.ny, manifest.count) || data.dt != manifest.dt {
        return Err(Error::format(
            &data_path,
            format!(
                "data file holds {} records of {}×{} at dt {}, manifest says {} of {}×{} at dt {}",
                data.records.len(),
                data.nx,
                data.ny,
                data.dt,
                manifest.count,
                manifest.nx,
                manifest.ny,
                manifest.dt
            ),
        ));
    }
    Ok((manifest, data))
}

/// Runs the cavity for `n_timesteps` steps from [`init_cavity`], writing the
/// state after each step to `out_path` and the manifest beside it. Bounds
/// cover the records in `train`.
pub fn generate_dataset(
    params: &SolverParams,
    n_timesteps: usize,
    train: std::ops::Range<usize>,
    out_path: &Path,
) -> Result<DatasetManifest> {
    if n_timesteps == 0 {
        return Err(Error::config("n_timesteps", "must be >= 1"));
    }
    if train.is_empty() || train.end > n_timesteps {
        return Err(Error::config(
            "split",
            format!("training records {train:?} must be a non-empty range within 0..{n_timesteps}"),
        ));
    }
    if n_timesteps > u32::MAX as usize {
        return Err(Error::config("n_timesteps", "exceeds the u32 record count"));
    }
    let mut state = init_cavity(params)?;
    let mut solver = CavitySolver::new(params.clone())?;
    let file = File::create(out_path).map_err(|e| Error::io(out_path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(out_path, e);
    write_header(&mut w, params.nx, params.ny, params.dt, n_timesteps).map_err(io)?;
    let mut ranges = [VariableRange::empty(); 3];
    for k in 0..n_timesteps {
        state = solver.step(&state)?;
        let frame = state.to_tensor();
        write_record(&mut w, &frame).map_err(io)?;
        if train.contains(&k) {
            for (range, f) in ranges.iter_mut().zip([&state.u_x, &state.u_y, &state.t]) {
                range.include(f);
            }
        }
    }
    w.flush().map_err(io)?;
    let bounds = VariableBounds::from_array(ranges);
    bounds.validate()?;
    let manifest = DatasetManifest {
        nx: params.nx,
        ny: params.ny,
        dt: params.dt,
        count: n_timesteps,
        train_start: train.start,
        train_count: train.len(),
        data_file: out_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        header_bytes: NCFD_HEADER_BYTES,
        record_bytes: (3 * params.nx * params.ny * 8) as u64,
        bounds,
    };
    write_manifest(&out_path.with_extension("toml"), &manifest)?;
    Ok(manifest)
}

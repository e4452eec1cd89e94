//! CVOL volume format: a JSON header plus a raw little-endian binary of
//! `f32` (real, imag) pairs, x-fastest and volume-slowest.
//!
//! The binary sits next to the header with the extension replaced by `raw`
//! (`dwi.json` + `dwi.raw`).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GsvsError, Result};
use crate::linalg::C64;
use crate::volume::ComplexVolumeSet;

pub const DTYPE: &str = "c64";
pub const ORDER: &str = "x-fastest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvolHeader {
    pub dims: [usize; 4],
    pub spacing_mm: [f64; 3],
    pub dtype: String,
    pub order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<usize>>,
}

/// Path of the binary payload belonging to a header path.
pub fn raw_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

pub fn write_cvol(
    header_path: &Path,
    vols: &ComplexVolumeSet,
    schedule: Option<&[usize]>,
) -> Result<()> {
    if let Some(s) = schedule {
        if s.len() != vols.n_volumes() {
            return Err(GsvsError::DimensionMismatch(format!(
                "schedule has {} entries for {} volumes",
                s.len(),
                vols.n_volumes()
            )));
        }
    }
    let d = vols.dims();
    let header = CvolHeader {
        dims: [d[0], d[1], d[2], vols.n_volumes()],
        spacing_mm: vols.spacing(),
        dtype: DTYPE.into(),
        order: ORDER.into(),
        schedule: schedule.map(<[usize]>::to_vec),
    };
    fs::write(header_path, serde_json::to_string_pretty(&header)? + "\n")?;
    write_raw_c64(&raw_path(header_path), vols.data())
}

pub(crate) fn write_raw_c64(path: &Path, data: &[C64]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for z in data {
        w.write_all(&(z.re as f32).to_le_bytes())?;
        w.write_all(&(z.im as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn read_raw_c64(path: &Path, expected: usize) -> Result<Vec<C64>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected * 8 {
        return Err(GsvsError::DimensionMismatch(format!(
            "{} holds {} bytes, header implies {}",
            path.display(),
            bytes.len(),
            expected * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            C64::new(re as f64, im as f64)
        })
        .collect())
}

pub fn read_header(header_path: &Path) -> Result<CvolHeader> {
    let text = fs::read_to_string(header_path)?;
    let header: CvolHeader = serde_json::from_str(&text)
        .map_err(|e| GsvsError::Format(format!("{}: {e}", header_path.display())))?;
    if header.dtype != DTYPE {
        return Err(GsvsError::Format(format!(
            "unsupported dtype {:?}",
            header.dtype
        )));
    }
    if header.order != ORDER {
        return Err(GsvsError::Format(format!(
            "unsupported order {:?}",
            header.order
        )));
    }
    if let Some(s) = &header.schedule {
        if s.len() != header.dims[3] {
            return Err(GsvsError::Format(format!(
                "schedule has {} entries for {} volumes",
                s.len(),
                header.dims[3]
            )));
        }
    }
    Ok(header)
}

/// Read a CVOL pair; returns the volumes and the optional encoding schedule.
pub fn read_cvol(header_path: &Path) -> Result<(ComplexVolumeSet, Option<Vec<usize>>)> {
    let header = read_header(header_path)?;
    let [x, y, z, n] = header.dims;
    let data = read_raw_c64(&raw_path(header_path), x * y * z * n)?;
    let vols =
        ComplexVolumeSet::new([x, y, z], header.spacing_mm, n, data).map_err(|e| match e {
            GsvsError::InvalidArgument(m) => GsvsError::Format(m),
            other => other,
        })?;
    Ok((vols, header.schedule))
}

/// Real-valued map (one volume) stored as CVOL with zero imaginary part.
pub fn write_real_map(
    header_path: &Path,
    dims: [usize; 3],
    spacing: [f64; 3],
    values: &[f64],
) -> Result<()> {
    let data = values.iter().map(|&v| C64::new(v, 0.0)).collect();
    let vols = ComplexVolumeSet::new(dims, spacing, 1, data)?;
    write_cvol(header_path, &vols, None)
}

//! The `SDESC` container: a JSON header line, then `count` rows of `N`
//! little-endian `f32` radii. Row centers live in a JSON sidecar next to the
//! main file (`<path>.centers.json`), one `[x, y, z]` triple per row.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AngleGrid, AxisConvention, ContourDescriptor};
use crate::error::{Error, Result};
use crate::volume::io::read_header_line;

const MAGIC: &str = "SDESC";
const VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    magic: String,
    version: u64,
    s_deg: u32,
    axis: AxisConvention,
    count: usize,
    #[serde(rename = "N")]
    n: usize,
}

/// A batch of descriptors sharing one angle grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorFile {
    pub grid: AngleGrid,
    pub rows: Vec<Vec<f64>>,
    /// One center per row, or empty when unknown.
    pub centers: Vec<[f64; 3]>,
}

impl DescriptorFile {
    pub fn from_descriptors(descs: &[ContourDescriptor]) -> Result<Self> {
        let grid = descs.first().map(|d| d.grid).ok_or(Error::EmptySet("descriptors"))?;
        if descs.iter().any(|d| d.grid != grid) {
            return Err(Error::invalid("descriptors use different angle grids"));
        }
        Ok(DescriptorFile {
            grid,
            rows: descs.iter().map(|d| d.rho.clone()).collect(),
            centers: descs.iter().map(|d| d.center).collect(),
        })
    }

    /// Row `i` as a descriptor; the center is the origin when unknown.
    pub fn descriptor(&self, i: usize) -> Result<ContourDescriptor> {
        let center = self.centers.get(i).copied().unwrap_or([0.0; 3]);
        ContourDescriptor::new(self.rows[i].clone(), self.grid, center)
    }

    fn validate(&self) -> Result<()> {
        let n = self.grid.len();
        if let Some(r) = self.rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimsMismatch(format!("row of length {} for N = {n}", r.len())));
        }
        if !self.centers.is_empty() && self.centers.len() != self.rows.len() {
            return Err(Error::DimsMismatch(format!(
                "{} centers for {} rows",
                self.centers.len(),
                self.rows.len()
            )));
        }
        Ok(())
    }
}

/// Writes the main stream only; centers are not part of it.
pub fn write_descriptors_to<W: Write>(file: &DescriptorFile, mut w: W) -> Result<()> {
    file.validate()?;
    let header = Header {
        magic: MAGIC.into(),
        version: VERSION,
        s_deg: file.grid.interval_deg(),
        axis: file.grid.axis(),
        count: file.rows.len(),
        n: file.grid.len(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for row in &file.rows {
        for &x in row {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the main stream; `centers` comes back empty.
pub fn read_descriptors_from<R: Read>(r: R) -> Result<DescriptorFile> {
    let mut r = BufReader::new(r);
    let line = read_header_line(&mut r, MAGIC)?;
    let header: Header =
        serde_json::from_slice(&line).map_err(|e| Error::corrupt(format!("malformed SDESC header: {e}")))?;
    if header.magic != MAGIC {
        return Err(Error::corrupt(format!("bad magic {:?}", header.magic)));
    }
    if header.version != VERSION {
        return Err(Error::UnsupportedVersion { format: MAGIC, version: header.version });
    }
    let grid = AngleGrid::new(header.s_deg, header.axis).map_err(|e| Error::corrupt(e.to_string()))?;
    if header.n != grid.len() {
        return Err(Error::corrupt(format!(
            "header N = {} but s = {} implies {}",
            header.n,
            header.s_deg,
            grid.len()
        )));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let expected = header
        .count
        .checked_mul(header.n)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::corrupt("count overflow"))?;
    if payload.len() != expected {
        return Err(Error::corrupt(format!(
            "payload is {} bytes, header requires {expected}",
            payload.len()
        )));
    }
    let rows = payload
        .chunks_exact(4 * header.n.max(1))
        .take(header.count)
        .map(|row| {
            row.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect()
        })
        .collect();
    Ok(DescriptorFile { grid, rows, centers: Vec::new() })
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".centers.json");
    PathBuf::from(s)
}

/// Writes `path` and its centers sidecar.
pub fn write_descriptors(file: &DescriptorFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_descriptors_to(file, BufWriter::new(File::create(path)?))?;
    let w = BufWriter::new(File::create(sidecar_path(path))?);
    serde_json::to_writer(w, &file.centers)?;
    Ok(())
}

/// Reads `path` and, when present, its centers sidecar.
pub fn read_descriptors(path: impl AsRef<Path>) -> Result<DescriptorFile> {
    let path = path.as_ref();
    let mut file = read_descriptors_from(File::open(path)?)?;
    let side = sidecar_path(path);
    if side.exists() {
        let centers: Vec<[f64; 3]> = serde_json::from_reader(BufReader::new(File::open(&side)?))
            .map_err(|e| Error::corrupt(format!("malformed centers sidecar: {e}")))?;
        if !centers.is_empty() && centers.len() != file.rows.len() {
            return Err(Error::corrupt(format!(
                "sidecar has {} centers for {} rows",
                centers.len(),
                file.rows.len()
            )));
        }
        file.centers = centers;
    }
    Ok(file)
}

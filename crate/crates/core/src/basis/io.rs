//! The `SBASIS` container: a JSON header line, then the singular values
//! (`f64`), the `N × k` basis column-major (`f64`), and for pca the mean shape
//! (`f64`), all little-endian. The number of singular values follows from the
//! payload length.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ContourBasis, Method};
use crate::codec::{AngleGrid, AxisConvention};
use crate::error::{Error, Result};
use crate::volume::io::read_header_line;

const MAGIC: &str = "SBASIS";
const VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    magic: String,
    version: u64,
    method: Method,
    #[serde(rename = "N")]
    n: usize,
    k: usize,
    s_deg: u32,
    axis: AxisConvention,
}

pub fn write_basis_to<W: Write>(basis: &ContourBasis, mut w: W) -> Result<()> {
    let header = Header {
        magic: MAGIC.into(),
        version: VERSION,
        method: basis.method,
        n: basis.grid.len(),
        k: basis.k(),
        s_deg: basis.grid.interval_deg(),
        axis: basis.grid.axis(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    let mean = basis.mean.as_deref().unwrap_or(&[]);
    for &x in basis.sigma.iter().chain(basis.u.as_slice()).chain(mean) {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_basis_from<R: Read>(r: R) -> Result<ContourBasis> {
    let mut r = BufReader::new(r);
    let line = read_header_line(&mut r, MAGIC)?;
    let h: Header =
        serde_json::from_slice(&line).map_err(|e| Error::corrupt(format!("malformed SBASIS header: {e}")))?;
    if h.magic != MAGIC {
        return Err(Error::corrupt(format!("bad magic {:?}", h.magic)));
    }
    if h.version != VERSION {
        return Err(Error::UnsupportedVersion { format: MAGIC, version: h.version });
    }
    let grid = AngleGrid::new(h.s_deg, h.axis).map_err(|e| Error::corrupt(e.to_string()))?;
    if h.n != grid.len() {
        return Err(Error::corrupt(format!("header N = {} but s = {} implies {}", h.n, h.s_deg, grid.len())));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() % 8 != 0 {
        return Err(Error::corrupt("payload is not a whole number of f64 values"));
    }
    let vals: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let fixed = h.n * h.k + if h.method == Method::Pca { h.n } else { 0 };
    let r_len = vals
        .len()
        .checked_sub(fixed)
        .filter(|&r| r >= h.k && r <= h.n)
        .ok_or_else(|| Error::corrupt(format!("payload of {} values does not fit N = {}, k = {}", vals.len(), h.n, h.k)))?;
    let sigma = vals[..r_len].to_vec();
    let u = DMatrix::from_column_slice(h.n, h.k, &vals[r_len..r_len + h.n * h.k]);
    let mean = (h.method == Method::Pca).then(|| vals[r_len + h.n * h.k..].to_vec());
    ContourBasis::new(u, sigma, grid, h.method, mean).map_err(|e| Error::corrupt(e.to_string()))
}

pub fn write_basis(basis: &ContourBasis, path: impl AsRef<Path>) -> Result<()> {
    write_basis_to(basis, BufWriter::new(File::create(path)?))
}

pub fn read_basis(path: impl AsRef<Path>) -> Result<ContourBasis> {
    read_basis_from(File::open(path)?)
}

//! The `SVOL` container: one JSON header line followed by raw little-endian
//! voxel data in x-fastest order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Grid, Volume};
use crate::error::{Error, Result};

const MAGIC: &str = "SVOL";
const VERSION: u64 = 1;
const MAX_HEADER: usize = 64 * 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U16,
    F32,
}

#[derive(Serialize, Deserialize)]
struct Header {
    magic: String,
    version: u64,
    dims: [usize; 3],
    spacing: [f64; 3],
    dtype: Dtype,
}

/// A volume as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyVolume {
    Labels(Volume<u16>),
    Scalars(Volume<f32>),
}

impl AnyVolume {
    pub fn into_labels(self) -> Result<Volume<u16>> {
        match self {
            AnyVolume::Labels(v) => Ok(v),
            AnyVolume::Scalars(_) => Err(Error::invalid("expected a u16 label volume, found f32")),
        }
    }

    pub fn into_scalars(self) -> Result<Volume<f32>> {
        match self {
            AnyVolume::Scalars(v) => Ok(v),
            AnyVolume::Labels(_) => Err(Error::invalid("expected an f32 scalar volume, found u16")),
        }
    }
}

impl From<Volume<u16>> for AnyVolume {
    fn from(v: Volume<u16>) -> Self {
        AnyVolume::Labels(v)
    }
}

impl From<Volume<f32>> for AnyVolume {
    fn from(v: Volume<f32>) -> Self {
        AnyVolume::Scalars(v)
    }
}

pub(crate) fn read_header_line<R: BufRead>(r: &mut R, what: &str) -> Result<Vec<u8>> {
    let mut line = Vec::new();
    let n = r.by_ref().take(MAX_HEADER as u64).read_until(b'\n', &mut line)?;
    if n == 0 || line.last() != Some(&b'\n') {
        return Err(Error::corrupt(format!("{what} header line missing or unterminated")));
    }
    line.pop();
    Ok(line)
}

pub fn write_volume_to<W: Write>(vol: &AnyVolume, mut w: W) -> Result<()> {
    let (grid, dtype) = match vol {
        AnyVolume::Labels(v) => (*v.grid(), Dtype::U16),
        AnyVolume::Scalars(v) => (*v.grid(), Dtype::F32),
    };
    let header = Header {
        magic: MAGIC.into(),
        version: VERSION,
        dims: grid.dims,
        spacing: grid.spacing,
        dtype,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    match vol {
        AnyVolume::Labels(v) => {
            for &x in v.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        AnyVolume::Scalars(v) => {
            for &x in v.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_volume_from<R: Read>(r: R) -> Result<AnyVolume> {
    let mut r = BufReader::new(r);
    let line = read_header_line(&mut r, "SVOL")?;
    let header: Header =
        serde_json::from_slice(&line).map_err(|e| Error::corrupt(format!("malformed SVOL header: {e}")))?;
    if header.magic != MAGIC {
        return Err(Error::corrupt(format!("bad magic {:?}", header.magic)));
    }
    if header.version != VERSION {
        return Err(Error::UnsupportedVersion { format: MAGIC, version: header.version });
    }
    let grid = Grid::new(header.dims, header.spacing).map_err(|e| Error::corrupt(e.to_string()))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let width = match header.dtype {
        Dtype::U16 => 2,
        Dtype::F32 => 4,
    };
    let expected = grid
        .len()
        .checked_mul(width)
        .ok_or_else(|| Error::corrupt("dims overflow"))?;
    if payload.len() != expected {
        return Err(Error::corrupt(format!(
            "payload is {} bytes, header dims {:?} require {expected}",
            payload.len(),
            grid.dims
        )));
    }
    Ok(match header.dtype {
        Dtype::U16 => {
            let data = payload.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
            AnyVolume::Labels(Volume::from_vec(grid, data)?)
        }
        Dtype::F32 => {
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            AnyVolume::Scalars(Volume::from_vec(grid, data)?)
        }
    })
}

pub fn write_volume(vol: &AnyVolume, path: impl AsRef<Path>) -> Result<()> {
    write_volume_to(vol, BufWriter::new(File::create(path)?))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<AnyVolume> {
    read_volume_from(File::open(path)?)
}

//! `manifest.json`: what `gen` produced, with paths relative to the
//! manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use lowrank_contour::refine::InstanceRecord;
use lowrank_contour::synth::{CorruptMode, Family, VertebraParams};
use lowrank_contour::volume::{read_volume, LabelVolume};

use crate::CliError;

pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub spacing: [f64; 3],
    /// Mean instance size over the corpus, mm.
    pub m_bar: [f64; 3],
    pub instances: Vec<CorpusItem>,
    pub spines: Vec<SpineItem>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub file: String,
    pub family: Family,
    pub params: VertebraParams,
    pub size: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpineItem {
    pub truth: String,
    pub coarse: Option<String>,
    pub corruption: Option<CorruptMode>,
    pub corruption_seed: Option<u64>,
    pub records: Vec<InstanceRecord>,
}

pub struct Loaded {
    pub manifest: Manifest,
    dir: PathBuf,
}

impl Loaded {
    pub fn open(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        if manifest.version != VERSION {
            return Err(CliError::data(format!("unsupported manifest version {}", manifest.version)));
        }
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Loaded { manifest, dir })
    }

    pub fn resolve(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn corpus_masks(&self) -> Result<Vec<LabelVolume>, CliError> {
        self.manifest
            .instances
            .iter()
            .map(|i| Ok(read_volume(self.resolve(&i.file))?.into_labels()?))
            .collect()
    }
}

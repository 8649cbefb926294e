use std::path::Path;

use serde::{Deserialize, Serialize};

use lowrank_contour::basis::DEFAULT_RANK;
use lowrank_contour::centroid::DEFAULT_LAMBDA;
use lowrank_contour::codec::{AngleGrid, AxisConvention};
use lowrank_contour::refine::RefineConfig;

use crate::CliError;

/// Settings shared by all subcommands. Loaded from `--config`, then
/// overridden by explicit flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub s_deg: u32,
    pub k: usize,
    pub axis: AxisConvention,
    pub lambda: f64,
    pub patch_size: [usize; 3],
    pub window: usize,
    /// Coarse-center jitter amplitude for refinement, voxels.
    pub jitter: [f64; 3],
    pub jitter_seed: u64,
    /// Fraction of the corpus held out when scoring basis ablations.
    pub holdout: f64,
}

impl Default for Config {
    fn default() -> Self {
        let r = RefineConfig::default();
        Config {
            s_deg: 5,
            k: DEFAULT_RANK,
            axis: AxisConvention::ZUp,
            lambda: DEFAULT_LAMBDA,
            patch_size: r.patch_size,
            window: r.window,
            jitter: r.jitter,
            jitter_seed: r.jitter_seed,
            holdout: 0.25,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Config::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn angle_grid(&self) -> Result<AngleGrid, CliError> {
        Ok(AngleGrid::new(self.s_deg, self.axis)?)
    }

    pub fn refine_config(&self, m_bar: Option<[f64; 3]>, mesh: bool) -> Result<RefineConfig, CliError> {
        Ok(RefineConfig {
            angle_grid: self.angle_grid()?,
            window: self.window,
            patch_size: self.patch_size,
            m_bar,
            jitter: self.jitter,
            jitter_seed: self.jitter_seed,
            lambda: self.lambda,
            mesh,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = Config::default();
        assert_eq!((c.s_deg, c.k, c.axis, c.lambda, c.window), (5, 200, AxisConvention::ZUp, 0.005, 3));
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let c: Config = serde_json::from_str(r#"{"s_deg": 10, "axis": "x_up"}"#).unwrap();
        assert_eq!(c.s_deg, 10);
        assert_eq!(c.axis, AxisConvention::XUp);
        assert_eq!(c.k, 200);
        assert!(serde_json::from_str::<Config>(r#"{"sdeg": 10}"#).is_err());
    }
}

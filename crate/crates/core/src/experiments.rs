//! Reconstruction experiments over a corpus of single-instance masks.
//!
//! Every setting encodes instances, optionally passes the descriptors
//! through a basis, and reports mean ASD and mean Dice of the
//! reconstructions. ASD runs from the marching-cubes surface of the radial
//! field to the instance's surface voxels, so it varies continuously with
//! the radii. Basis settings are fitted on a training set and scored on
//! held-out instances.

use rayon::prelude::*;
use serde::Serialize;

use crate::basis::{build_matrix, fit_pca, fit_svd, project_matrix, reconstruct, ContourBasis, Method};
use crate::centroid::{rounded_plain_centroid, spherical_centroid_fast};
use crate::codec::{encode, AngleGrid, AxisConvention, ContourDescriptor};
use crate::error::{Error, Result};
use crate::metrics::{dice, mean, NearestIndex};
use crate::recon::{marching_cubes, mesh_iso, radial_field, FILL_TOLERANCE};
use crate::volume::{surface, LabelVolume, VoxelSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterKind {
    Spherical,
    Plain,
}

impl CenterKind {
    pub fn name(self) -> &'static str {
        match self {
            CenterKind::Spherical => "spherical",
            CenterKind::Plain => "plain",
        }
    }
}

/// A mask with everything the sweeps reuse.
pub struct CorpusEntry {
    pub mask: LabelVolume,
    pub surface: VoxelSet,
    pub spherical_center: [f64; 3],
    pub plain_center: [f64; 3],
    index: NearestIndex,
}

impl CorpusEntry {
    pub fn new(mask: LabelVolume, lambda: f64) -> Result<Self> {
        let spacing = mask.spacing();
        let surface = surface(&mask)?;
        let spherical_center = spherical_centroid_fast(&mask, lambda, spacing)?.point_mm(spacing);
        let plain_center = mask.grid().to_mm(rounded_plain_centroid(&mask)?);
        let index = NearestIndex::new(&surface.points_mm(spacing))?;
        Ok(CorpusEntry { mask, surface, spherical_center, plain_center, index })
    }

    pub fn center(&self, kind: CenterKind) -> [f64; 3] {
        match kind {
            CenterKind::Spherical => self.spherical_center,
            CenterKind::Plain => self.plain_center,
        }
    }

    /// Mean distance from the marching-cubes surface of the reconstruction
    /// to the instance surface, and the Dice of the radial fill against the
    /// mask. An empty reconstruction scores ASD infinity.
    pub fn evaluate(&self, d: &ContourDescriptor) -> Result<Score> {
        let grid = *self.mask.grid();
        let field = radial_field(d, grid)?;
        let tol = FILL_TOLERANCE * grid.min_spacing();
        let mean_dice = dice(&field.map(|f| u16::from(f >= -tol)), &self.mask)?;
        let mesh = marching_cubes(&field, mesh_iso(&grid));
        let mean_asd = mean(&self.index.distances(&mesh.vertices)).unwrap_or(f64::INFINITY);
        Ok(Score { mean_asd, mean_dice })
    }
}

pub fn prepare(masks: Vec<LabelVolume>, lambda: f64) -> Result<Vec<CorpusEntry>> {
    masks.into_par_iter().map(|m| CorpusEntry::new(m, lambda)).collect()
}

pub fn encode_corpus(entries: &[CorpusEntry], grid: AngleGrid, centers: CenterKind) -> Result<Vec<ContourDescriptor>> {
    entries
        .par_iter()
        .map(|e| encode(&e.surface, e.center(centers), grid, e.mask.spacing()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Score {
    pub mean_asd: f64,
    pub mean_dice: f64,
}

pub fn score(entries: &[CorpusEntry], descriptors: &[ContourDescriptor]) -> Result<Score> {
    if entries.len() != descriptors.len() || entries.is_empty() {
        return Err(Error::DimsMismatch(format!("{} entries, {} descriptors", entries.len(), descriptors.len())));
    }
    let scores: Vec<Score> = entries.par_iter().zip(descriptors).map(|(e, d)| e.evaluate(d)).collect::<Result<_>>()?;
    let n = scores.len() as f64;
    Ok(Score {
        mean_asd: scores.iter().map(|p| p.mean_asd).sum::<f64>() / n,
        mean_dice: scores.iter().map(|p| p.mean_dice).sum::<f64>() / n,
    })
}

/// Rebuilds every descriptor from its projection onto `basis`.
pub fn through_basis(basis: &ContourBasis, descriptors: &[ContourDescriptor]) -> Result<Vec<ContourDescriptor>> {
    let coeffs = project_matrix(basis, &build_matrix(descriptors)?)?;
    (0..descriptors.len())
        .into_par_iter()
        .map(|j| reconstruct(basis, &coeffs, j, descriptors[j].center))
        .collect()
}

pub fn fit(method: Method, descriptors: &[ContourDescriptor], k: usize) -> Result<ContourBasis> {
    let m = build_matrix(descriptors)?;
    match method {
        Method::Svd => fit_svd(&m, k),
        Method::Pca => fit_pca(&m, k),
    }
}

/// One CSV row of an ablation table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub sweep: String,
    pub setting: String,
    pub mean_asd: f64,
    pub mean_dice: f64,
}

impl SweepRow {
    fn new(sweep: &str, setting: impl Into<String>, s: Score) -> Self {
        SweepRow { sweep: sweep.into(), setting: setting.into(), mean_asd: s.mean_asd, mean_dice: s.mean_dice }
    }
}

/// Direct encode/decode at each sampling interval.
pub fn sweep_interval(entries: &[CorpusEntry], intervals: &[u32], axis: AxisConvention) -> Result<Vec<SweepRow>> {
    intervals
        .iter()
        .map(|&s| {
            let d = encode_corpus(entries, AngleGrid::new(s, axis)?, CenterKind::Spherical)?;
            Ok(SweepRow::new("interval", format!("{s}"), score(entries, &d)?))
        })
        .collect()
}

/// Rank requested by a sweep; `Full` is the largest available rank.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rank {
    K(usize),
    Full,
}

impl std::str::FromStr for Rank {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(Rank::Full);
        }
        s.parse().map(Rank::K).map_err(|_| Error::invalid(format!("rank must be a number or 'full', got {s:?}")))
    }
}

/// Nested truncations of one SVD basis fitted on `train`, scored on
/// `test`. Ranks above the full rank are clipped and labelled with the rank
/// actually used.
pub fn sweep_rank(train: &[CorpusEntry], test: &[CorpusEntry], grid: AngleGrid, ranks: &[Rank]) -> Result<Vec<SweepRow>> {
    let full = grid.len().min(train.len());
    let basis = fit(Method::Svd, &encode_corpus(train, grid, CenterKind::Spherical)?, full)?;
    let d = encode_corpus(test, grid, CenterKind::Spherical)?;
    ranks
        .iter()
        .map(|r| {
            let (k, label) = match *r {
                Rank::Full => (full, "full".to_string()),
                Rank::K(k) if k >= full => (full, format!("{k}->{full}")),
                Rank::K(k) => (k, k.to_string()),
            };
            let rebuilt = through_basis(&basis.truncate(k)?, &d)?;
            Ok(SweepRow::new("rank", label, score(test, &rebuilt)?))
        })
        .collect()
}

/// Spherical versus rounded mean centroid, direct encode/decode.
pub fn sweep_centroid(entries: &[CorpusEntry], grid: AngleGrid) -> Result<Vec<SweepRow>> {
    [CenterKind::Spherical, CenterKind::Plain]
        .iter()
        .map(|&c| {
            let d = encode_corpus(entries, grid, c)?;
            Ok(SweepRow::new("centroid", c.name(), score(entries, &d)?))
        })
        .collect()
}

/// Each polar-axis convention through a rank-`k` SVD basis.
pub fn sweep_axis(train: &[CorpusEntry], test: &[CorpusEntry], interval: u32, k: usize) -> Result<Vec<SweepRow>> {
    AxisConvention::ALL
        .iter()
        .map(|&a| {
            let grid = AngleGrid::new(interval, a)?;
            let k = k.min(train.len()).min(grid.len());
            let basis = fit(Method::Svd, &encode_corpus(train, grid, CenterKind::Spherical)?, k)?;
            let rebuilt = through_basis(&basis, &encode_corpus(test, grid, CenterKind::Spherical)?)?;
            Ok(SweepRow::new("axis", a.name(), score(test, &rebuilt)?))
        })
        .collect()
}

/// Raw-matrix SVD against mean-centred PCA at rank `k`.
pub fn sweep_method(train: &[CorpusEntry], test: &[CorpusEntry], grid: AngleGrid, k: usize) -> Result<Vec<SweepRow>> {
    let d = encode_corpus(train, grid, CenterKind::Spherical)?;
    let held = encode_corpus(test, grid, CenterKind::Spherical)?;
    let k = k.min(d.len().saturating_sub(1)).min(grid.len()).max(1);
    [Method::Svd, Method::Pca]
        .iter()
        .map(|&m| {
            let rebuilt = through_basis(&fit(m, &d, k)?, &held)?;
            let name = match m {
                Method::Svd => "svd",
                Method::Pca => "pca",
            };
            Ok(SweepRow::new("method", format!("{name}@{k}"), score(test, &rebuilt)?))
        })
        .collect()
}

/// Splits off the last `fraction` of a corpus (at least one instance) as
/// held-out data.
pub fn split(entries: &[CorpusEntry], fraction: f64) -> Result<(&[CorpusEntry], &[CorpusEntry])> {
    if entries.len() < 2 || !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("cannot hold out {fraction} of {} instances", entries.len())));
    }
    let test = ((entries.len() as f64 * fraction).round() as usize).clamp(1, entries.len() - 1);
    Ok(entries.split_at(entries.len() - test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::centroid::DEFAULT_LAMBDA;
    use crate::synth::make_corpus;

    fn corpus(n: usize) -> Vec<CorpusEntry> {
        let masks = make_corpus(n, [1.0; 3], 40).unwrap().into_iter().map(|c| c.mask).collect();
        prepare(masks, DEFAULT_LAMBDA).unwrap()
    }

    #[test]
    fn full_rank_in_sample_matches_direct_encoding() {
        let e = corpus(6);
        let grid = AngleGrid::default();
        let direct = score(&e, &encode_corpus(&e, grid, CenterKind::Spherical).unwrap()).unwrap();
        let rows = sweep_rank(&e, &e, grid, &[Rank::K(2), Rank::Full, Rank::K(99)]).unwrap();
        assert_eq!(rows[1].setting, "full");
        assert_eq!(rows[2].setting, "99->6");
        assert!((rows[1].mean_asd - direct.mean_asd).abs() < 1e-6);
        assert!((rows[1].mean_dice - direct.mean_dice).abs() < 1e-12);
        assert!(rows[0].mean_asd >= rows[1].mean_asd);
    }

    #[test]
    fn sweeps_produce_one_row_per_setting() {
        let e = corpus(6);
        let (train, test) = split(&e, 0.34).unwrap();
        assert_eq!((train.len(), test.len()), (4, 2));
        let grid = AngleGrid::new(10, AxisConvention::ZUp).unwrap();
        assert_eq!(sweep_interval(&e, &[10, 15], AxisConvention::ZUp).unwrap().len(), 2);
        assert_eq!(sweep_centroid(&e, grid).unwrap().len(), 2);
        let axis = sweep_axis(train, test, 10, 3).unwrap();
        assert_eq!(axis.iter().map(|r| r.setting.as_str()).collect::<Vec<_>>(), ["x_up", "y_up", "z_up"]);
        let m = sweep_method(train, test, grid, 2).unwrap();
        assert_eq!(m.len(), 2);
        assert!(m.iter().all(|r| r.mean_asd.is_finite() && r.mean_dice > 0.0));
        assert!(split(&e[..1], 0.5).is_err());
        assert!(split(&e, 1.0).is_err());
    }

    #[test]
    fn exact_descriptor_scores_near_zero() {
        let e = corpus(1);
        let d = encode_corpus(&e, AngleGrid::new(3, AxisConvention::ZUp).unwrap(), CenterKind::Spherical).unwrap();
        let s = e[0].evaluate(&d[0]).unwrap();
        assert!(s.mean_asd < 0.2, "{s:?}");
        assert!(s.mean_dice > 0.98);
    }

    #[test]
    fn rank_parsing() {
        assert_eq!("full".parse::<Rank>().unwrap(), Rank::Full);
        assert_eq!("20".parse::<Rank>().unwrap(), Rank::K(20));
        assert!("many".parse::<Rank>().is_err());
    }

    #[test]
    fn score_rejects_mismatched_lengths() {
        let e = corpus(2);
        assert!(score(&e, &[]).is_err());
    }
}

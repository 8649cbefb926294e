//! Label-consistent refinement of a coarse multi-instance segmentation.
//!
//! Each instance is refined inside a window of its neighbours: a patch is
//! cropped around it, Gaussian prompts mark the coarse instances, a
//! [`Predictor`] returns a center and basis coefficients per instance, and
//! the decoded shapes are filled back into voxels. The merged result is
//! masked by the coarse foreground and every label is reduced to its largest
//! connected component.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{project, reconstruct, Coefficients, ContourBasis};
use crate::centroid::{spherical_centroid_fast, DEFAULT_LAMBDA};
use crate::codec::{encode, AngleGrid, ContourDescriptor};
use crate::error::{Error, Result};
use crate::recon::{mesh_fill, radial_fill, TriangleMesh};
use crate::synth::mask_size;
use crate::volume::{connected_components, crop_patch, surface, Connectivity, Field, Grid, LabelVolume, Patch, VoxelSet};

/// Separable Gaussian marking one coarse instance on the patch grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrompt {
    pub mu: [f64; 3],
    pub sigma: [f64; 3],
    pub field: Field,
}

/// `σ = max(m, m̄) / 4` per axis.
pub fn prompt_sigma(m: [f64; 3], m_bar: [f64; 3]) -> Result<[f64; 3]> {
    for v in m.iter().chain(&m_bar) {
        if !(v.is_finite() && *v > 0.0) {
            return Err(Error::invalid(format!("instance sizes must be positive, got m={m:?} m_bar={m_bar:?}")));
        }
    }
    Ok([0, 1, 2].map(|a| m[a].max(m_bar[a]) / 4.0))
}

/// Unnormalized Gaussian with peak 1 at `mu` (mm, patch frame).
pub fn gaussian_prompt(mu: [f64; 3], m: [f64; 3], m_bar: [f64; 3], grid: Grid) -> Result<GaussianPrompt> {
    let sigma = prompt_sigma(m, m_bar)?;
    let s = grid.spacing;
    let axis: Vec<Vec<f64>> = (0..3)
        .map(|a| {
            (0..grid.dims[a])
                .map(|i| {
                    let d = i as f64 * s[a] - mu[a];
                    (-(d * d) / (2.0 * sigma[a] * sigma[a])).exp()
                })
                .collect()
        })
        .collect();
    let field = Field::from_fn(grid, |p| axis[0][p[0]] * axis[1][p[1]] * axis[2][p[2]]);
    Ok(GaussianPrompt { mu, sigma, field })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub label: u16,
    /// Spherical centroid of the coarse instance, mm.
    pub coarse_center: [f64; 3],
    pub refined_center: Option<[f64; 3]>,
    /// Stored separately as a descriptor file, not in JSON.
    #[serde(skip)]
    pub descriptor: Option<ContourDescriptor>,
    /// Bounding-box size, mm.
    pub size: [f64; 3],
}

/// Labels refined together; `designated` is the one this window writes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    pub labels: Vec<u16>,
    pub designated: u16,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefinementPlan {
    pub windows: Vec<Window>,
}

/// One window per label: the label and up to `window / 2` neighbours on each
/// side, restricted to its run of consecutive labels.
pub fn plan_windows(coarse: &LabelVolume, window: usize) -> Result<RefinementPlan> {
    if window.is_multiple_of(2) {
        return Err(Error::invalid(format!("window size must be odd, got {window}")));
    }
    let labels = coarse.labels();
    if labels.is_empty() {
        return Err(Error::EmptyMask);
    }
    let half = (window / 2) as u16;
    let windows = labels
        .iter()
        .map(|&l| {
            let mut lo = l;
            while lo > 1 && l - (lo - 1) <= half && labels.binary_search(&(lo - 1)).is_ok() {
                lo -= 1;
            }
            let mut hi = l;
            while (hi + 1) - l <= half && labels.binary_search(&(hi + 1)).is_ok() {
                hi += 1;
            }
            Window { labels: (lo..=hi).collect(), designated: l }
        })
        .collect();
    Ok(RefinementPlan { windows })
}

/// `S_R = 1(S_C > 0) · S_L`.
pub fn binarized_attention(coarse: &LabelVolume, labeled: &LabelVolume) -> Result<LabelVolume> {
    coarse.same_dims(labeled)?;
    let data = coarse.data().iter().zip(labeled.data()).map(|(&c, &l)| if c > 0 { l } else { 0 }).collect();
    LabelVolume::from_vec(*labeled.grid(), data)
}

/// What a predictor sees for one window.
pub struct WindowInput<'a> {
    pub labels: &'a [u16],
    pub patch: &'a Patch<u16>,
    pub prompts: &'a [GaussianPrompt],
    pub basis: &'a ContourBasis,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstancePrediction {
    /// Refined center in mm, patch frame.
    pub center: [f64; 3],
    /// `basis.k()` coefficients, or empty when the instance is absent.
    pub coefficients: Vec<f64>,
}

pub trait Predictor {
    /// One prediction per entry of `input.labels`, in order.
    fn predict(&self, input: &WindowInput<'_>) -> Result<Vec<InstancePrediction>>;
}

/// Answers from ground truth: the true spherical centroid and the
/// projection of the true descriptor.
pub struct OraclePredictor {
    spacing: [f64; 3],
    truth: BTreeMap<u16, ([f64; 3], VoxelSet)>,
}

impl OraclePredictor {
    pub fn new(truth: &LabelVolume, lambda: f64) -> Result<Self> {
        let spacing = truth.spacing();
        let truth = truth
            .labels()
            .into_iter()
            .map(|l| {
                let mask = truth.select(l);
                let c = spherical_centroid_fast(&mask, lambda, spacing)?.point_mm(spacing);
                Ok((l, (c, surface(&mask)?)))
            })
            .collect::<Result<_>>()?;
        Ok(OraclePredictor { spacing, truth })
    }

    pub fn center(&self, label: u16) -> Option<[f64; 3]> {
        self.truth.get(&label).map(|(c, _)| *c)
    }
}

impl Predictor for OraclePredictor {
    fn predict(&self, input: &WindowInput<'_>) -> Result<Vec<InstancePrediction>> {
        let origin = input.patch.origin_mm();
        input
            .labels
            .iter()
            .map(|l| match self.truth.get(l) {
                None => Ok(InstancePrediction { center: [0.0; 3], coefficients: Vec::new() }),
                Some((c, surf)) => {
                    let d = encode(surf, *c, input.basis.grid(), self.spacing)?;
                    Ok(InstancePrediction {
                        center: [0, 1, 2].map(|a| c[a] - origin[a]),
                        coefficients: project(input.basis, &d)?.column(0),
                    })
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub angle_grid: AngleGrid,
    pub window: usize,
    /// Patch size in voxels.
    pub patch_size: [usize; 3],
    /// Corpus mean instance size in mm; the mean coarse size when absent.
    pub m_bar: Option<[f64; 3]>,
    /// Amplitude of the uniform perturbation of coarse centers, voxels.
    pub jitter: [f64; 3],
    pub jitter_seed: u64,
    pub lambda: f64,
    /// Reconstruct through marching cubes and ray-parity fill.
    pub mesh: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            angle_grid: AngleGrid::default(),
            window: 3,
            patch_size: [64, 64, 64],
            m_bar: None,
            jitter: [5.0; 3],
            jitter_seed: 0,
            lambda: DEFAULT_LAMBDA,
            mesh: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RefineOutput {
    pub labels: LabelVolume,
    pub records: Vec<InstanceRecord>,
    /// Per-label surfaces in mm, only on the mesh path.
    pub meshes: Vec<(u16, TriangleMesh)>,
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

type CoarseInfo = ([f64; 3], [f64; 3], [f64; 3]);

/// Runs the full refinement over every planned window.
pub fn refine_volume(
    coarse: &LabelVolume,
    predictor: &dyn Predictor,
    basis: &ContourBasis,
    config: &RefineConfig,
) -> Result<RefineOutput> {
    if basis.grid() != config.angle_grid {
        return Err(Error::invalid(format!(
            "basis grid {:?} differs from configured grid {:?}",
            basis.grid(),
            config.angle_grid
        )));
    }
    let plan = plan_windows(coarse, config.window)?;
    let grid = *coarse.grid();
    let spacing = grid.spacing;

    // Coarse geometry per label, then the perturbed copy fed to the pipeline.
    let mut rng = SplitMix64::seed_from_u64(config.jitter_seed);
    // (center, jittered center, size), all mm.
    let mut coarse_info: BTreeMap<u16, CoarseInfo> = BTreeMap::new();
    for w in &plan.windows {
        let mask = coarse.select(w.designated);
        let c = spherical_centroid_fast(&mask, config.lambda, spacing)?.point_mm(spacing);
        let u: [f64; 3] = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
        let jittered = [0, 1, 2].map(|a| c[a] + u[a] * config.jitter[a] * spacing[a]);
        coarse_info.insert(w.designated, (c, jittered, mask_size(&mask)));
    }
    let m_bar = config.m_bar.unwrap_or_else(|| {
        let n = coarse_info.len() as f64;
        [0, 1, 2].map(|a| coarse_info.values().map(|v| v.2[a]).sum::<f64>() / n)
    });

    let mut out = LabelVolume::filled(grid, 0);
    let mut centers: BTreeMap<u16, [f64; 3]> = BTreeMap::new();
    let mut records = Vec::new();
    let mut meshes = Vec::new();

    for w in &plan.windows {
        let (_, anchor, _) = coarse_info[&w.designated];
        let center_vox = grid.nearest_voxel(anchor);
        let patch = crop_patch(coarse, center_vox, config.patch_size)?;
        let pgrid = *patch.volume.grid();
        let origin = patch.origin_mm();
        let prompts = w
            .labels
            .iter()
            .map(|l| {
                let (_, mu, m) = coarse_info[l];
                gaussian_prompt([0, 1, 2].map(|a| mu[a] - origin[a]), m, m_bar, pgrid)
            })
            .collect::<Result<Vec<_>>>()?;
        let preds = predictor.predict(&WindowInput { labels: &w.labels, patch: &patch, prompts: &prompts, basis })?;
        if preds.len() != w.labels.len() {
            return Err(Error::WindowSize { expected: w.labels.len(), got: preds.len() });
        }
        for p in &preds {
            if !p.coefficients.is_empty() && p.coefficients.len() != basis.k() {
                return Err(Error::invalid(format!(
                    "predictor returned {} coefficients for a rank {} basis",
                    p.coefficients.len(),
                    basis.k()
                )));
            }
        }

        // Reconstruct every present instance of the window on the patch grid.
        let fills = preds
            .par_iter()
            .map(|p| {
                if p.coefficients.is_empty() {
                    return Ok(None);
                }
                let d = reconstruct(basis, &Coefficients::from_vec(p.coefficients.clone()), 0, p.center)?;
                let (mask, mesh) = if config.mesh {
                    let (m, mesh) = mesh_fill(&d, pgrid)?;
                    (m, Some(mesh))
                } else {
                    (radial_fill(&d, pgrid)?, None)
                };
                Ok(Some((d, mask, mesh)))
            })
            .collect::<Result<Vec<_>>>()?;

        let Some(slot) = w.labels.iter().position(|&l| l == w.designated) else {
            unreachable!("designated label belongs to its window")
        };
        let Some((desc, _, mesh)) = &fills[slot] else {
            continue;
        };
        let own_center = preds[slot].center;
        let global_center = [0, 1, 2].map(|a| own_center[a] + origin[a]);

        // Voxels the designated instance wins against its window neighbours.
        for i in 0..pgrid.len() {
            let claim = |k: usize| fills[k].as_ref().is_some_and(|f| f.1.data()[i] == 1);
            if !claim(slot) {
                continue;
            }
            let pos = pgrid.to_mm(pgrid.index3(i));
            let mine = dist2(pos, own_center);
            let beaten = (0..fills.len()).any(|k| k != slot && claim(k) && dist2(pos, preds[k].center) < mine);
            if beaten {
                continue;
            }
            let Some(q) = patch.to_source(pgrid.index3(i), grid.dims) else {
                continue;
            };
            let prev = out.get(q);
            if prev != 0 && prev != w.designated {
                let gpos = grid.to_mm(q);
                if dist2(gpos, global_center) >= dist2(gpos, centers[&prev]) {
                    continue;
                }
            }
            out.set(q, w.designated);
        }
        centers.insert(w.designated, global_center);

        let (coarse_center, _, size) = coarse_info[&w.designated];
        let mut global_desc = desc.clone();
        global_desc.center = global_center;
        records.push(InstanceRecord {
            label: w.designated,
            coarse_center,
            refined_center: Some(global_center),
            descriptor: Some(global_desc),
            size,
        });
        if let Some(mesh) = mesh {
            let mut m = mesh.clone();
            for v in &mut m.vertices {
                for a in 0..3 {
                    v[a] += origin[a];
                }
            }
            meshes.push((w.designated, m));
        }
    }

    let mut labels = binarized_attention(coarse, &out)?;
    keep_largest_components(&mut labels)?;
    Ok(RefineOutput { labels, records, meshes })
}

/// Erases everything but the largest 26-connected component of each label.
pub fn keep_largest_components(labels: &mut LabelVolume) -> Result<()> {
    for l in labels.labels() {
        let comps = connected_components(&labels.select(l), Connectivity::TwentySix)?;
        for c in comps.iter().skip(1) {
            for p in c.iter() {
                labels.set(*p, 0);
            }
        }
    }
    Ok(())
}

/// Labels whose voxels form more than one 26-connected component.
pub fn fragmented_labels(labels: &LabelVolume) -> Result<Vec<u16>> {
    let mut out = Vec::new();
    for l in labels.labels() {
        if connected_components(&labels.select(l), Connectivity::TwentySix)?.len() > 1 {
            out.push(l);
        }
    }
    Ok(out)
}

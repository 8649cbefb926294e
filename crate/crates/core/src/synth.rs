//! Synthetic vertebrae and spines.
//!
//! A vertebra is a superellipsoid body joined to a box-shaped spinous process
//! pointing along `+y`. Both parts are convex and the box reaches back past
//! the body center, so the union is star-shaped around any point they share.
//! Spines stack vertebrae along `+z` with labels `1..=n` from the bottom.
//!
//! All randomness comes from a seeded SplitMix64 generator.

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::centroid::{spherical_centroid_fast, DEFAULT_LAMBDA};
use crate::codec::{encode, AngleGrid};
use crate::error::{Error, Result};
use crate::refine::InstanceRecord;
use crate::volume::{surface, Grid, Index3, LabelVolume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Lumbar,
    Thoracic,
}

/// Shape parameters in voxels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertebraParams {
    /// Body semi-axes along x, y, z.
    pub body: [f64; 3],
    /// Superellipsoid exponent, 2 for an ellipsoid.
    pub exponent: f64,
    /// Extent of the process beyond the body along `+y`; 0 for none.
    pub process_length: f64,
    pub process_width: f64,
    pub process_height: f64,
}

impl VertebraParams {
    pub fn ball(r: f64) -> Self {
        VertebraParams { body: [r; 3], exponent: 2.0, process_length: 0.0, process_width: 0.0, process_height: 0.0 }
    }

    pub fn sample(family: Family, rng: &mut SplitMix64) -> Self {
        let (body, len_frac, width, height) = match family {
            Family::Lumbar => (
                [rng.random_range(9.0..11.5), rng.random_range(7.0..9.0), rng.random_range(5.0..6.5)],
                rng.random_range(0.45..0.75),
                rng.random_range(3.0..4.5),
                rng.random_range(4.0..6.0),
            ),
            Family::Thoracic => (
                [rng.random_range(6.5..8.5), rng.random_range(5.5..7.0), rng.random_range(4.5..5.5)],
                rng.random_range(0.7..1.0),
                rng.random_range(2.0..3.0),
                rng.random_range(3.0..4.5),
            ),
        };
        VertebraParams {
            body,
            exponent: rng.random_range(2.0..4.0),
            process_length: len_frac * body[1],
            process_width: width,
            process_height: height,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.body.iter().all(|&b| b > 0.0 && b.is_finite())
            && (2.0..=4.0).contains(&self.exponent)
            && self.process_length >= 0.0
            && self.process_length <= 2.0 * self.body[1]
            && (self.process_length == 0.0 || (self.process_width > 0.0 && self.process_height > 0.0));
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid vertebra parameters {self:?}")))
        }
    }

    /// Half-extents of the bounding box around the body center, as
    /// `(min, max)` offsets per axis.
    pub fn extent(&self) -> ([f64; 3], [f64; 3]) {
        let [a, b, c] = self.body;
        let half_w = (self.process_width / 2.0).max(0.0);
        let half_h = (self.process_height / 2.0).max(0.0);
        ([-a.max(half_w), -b, -c.max(half_h)], [a.max(half_w), b + self.process_length, c.max(half_h)])
    }

    /// Whether the voxel offset `d` from the body center is inside.
    #[inline]
    pub fn contains(&self, d: [f64; 3]) -> bool {
        let e = self.exponent;
        let body: f64 = (0..3).map(|k| (d[k].abs() / self.body[k]).powf(e)).sum();
        if body <= 1.0 {
            return true;
        }
        self.process_length > 0.0
            && d[0].abs() <= self.process_width / 2.0
            && d[2].abs() <= self.process_height / 2.0
            && d[1] >= -self.body[1] / 2.0
            && d[1] <= self.body[1] + self.process_length
    }
}

/// Rasterizes into `vol` with `label`, body center at `center` (voxel
/// units). Fails if the shape leaves the grid or hits another label.
fn draw(p: &VertebraParams, center: [f64; 3], vol: &mut LabelVolume, label: u16) -> Result<usize> {
    let dims = vol.dims();
    let (lo, hi) = p.extent();
    for a in 0..3 {
        if center[a] + lo[a] < 0.0 || center[a] + hi[a] > (dims[a] - 1) as f64 {
            return Err(Error::Generation(format!(
                "shape around {center:?} exceeds dims {dims:?} along axis {a}"
            )));
        }
    }
    let start = [0, 1, 2].map(|a| (center[a] + lo[a]).floor().max(0.0) as usize);
    let stop = [0, 1, 2].map(|a| ((center[a] + hi[a]).ceil() as usize).min(dims[a] - 1));
    let mut count = 0;
    for z in start[2]..=stop[2] {
        for y in start[1]..=stop[1] {
            for x in start[0]..=stop[0] {
                let d = [x as f64 - center[0], y as f64 - center[1], z as f64 - center[2]];
                if p.contains(d) {
                    let prev = vol.get([x, y, z]);
                    if prev != 0 && prev != label {
                        return Err(Error::Generation(format!("instances {prev} and {label} overlap at {:?}", [x, y, z])));
                    }
                    vol.set([x, y, z], label);
                    count += 1;
                }
            }
        }
    }
    Ok(count)
}

/// Grid just large enough for `p` with `margin` voxels on every side.
pub fn fitted_dims(p: &VertebraParams, margin: usize) -> [usize; 3] {
    let (lo, hi) = p.extent();
    [0, 1, 2].map(|a| (hi[a] - lo[a]).ceil() as usize + 1 + 2 * margin)
}

/// A single vertebra with its body centered in the grid.
pub fn make_vertebra(p: &VertebraParams, grid: Grid) -> Result<LabelVolume> {
    make_vertebra_at(p, grid, None)
}

/// A single vertebra with its body at `center` (voxel units), or where the
/// whole shape is centered in the grid when `None`.
pub fn make_vertebra_at(p: &VertebraParams, grid: Grid, center: Option<[f64; 3]>) -> Result<LabelVolume> {
    p.validate()?;
    let (lo, hi) = p.extent();
    let center = center.unwrap_or_else(|| {
        [0, 1, 2].map(|a| ((grid.dims[a] - 1) as f64 - (hi[a] + lo[a])) / 2.0)
    });
    let mut vol = LabelVolume::filled(grid, 0);
    if draw(p, center, &mut vol, 1)? == 0 {
        return Err(Error::Generation("shape covers no voxel center".into()));
    }
    Ok(vol)
}

/// A deliberately non-star-shaped test object: a thick horseshoe opening
/// toward `+y`. The max-radius descriptor cannot represent its cavity.
pub fn make_stress_shape(grid: Grid) -> Result<LabelVolume> {
    let dims = grid.dims;
    if dims.iter().any(|&d| d < 24) {
        return Err(Error::Generation("stress shape needs at least 24 voxels per axis".into()));
    }
    let c = [0, 1, 2].map(|a| (dims[a] - 1) as f64 / 2.0);
    Ok(LabelVolume::from_fn(grid, |p| {
        let d = [p[0] as f64 - c[0], p[1] as f64 - c[1], p[2] as f64 - c[2]];
        let r = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let ring = (5.0..=10.0).contains(&r) && d[2].abs() <= 4.0;
        u16::from(ring && !(d[1] > 0.0 && d[0].abs() < 4.0))
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpineSpec {
    pub params: Vec<VertebraParams>,
    /// Empty voxels between consecutive instances along `z`.
    pub gap: usize,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Drives sub-voxel placement jitter in x and y.
    pub seed: u64,
}

impl SpineSpec {
    /// `count` instances drawn from alternating families, on a grid sized to fit.
    pub fn random(count: usize, gap: usize, spacing: [f64; 3], seed: u64) -> Self {
        let mut rng = SplitMix64::seed_from_u64(seed);
        let family = if rng.random_bool(0.5) { Family::Lumbar } else { Family::Thoracic };
        let params: Vec<_> = (0..count).map(|_| VertebraParams::sample(family, &mut rng)).collect();
        let dims = Self::fitting_dims(&params, gap, 6);
        SpineSpec { params, gap, dims, spacing, seed }
    }

    pub fn fitting_dims(params: &[VertebraParams], gap: usize, margin: usize) -> [usize; 3] {
        let mut dims = [0usize; 3];
        let mut height = 0.0;
        for p in params {
            let (lo, hi) = p.extent();
            for a in 0..2 {
                dims[a] = dims[a].max((hi[a] - lo[a]).ceil() as usize + 4 + 2 * margin);
            }
            height += (hi[2] - lo[2]).ceil() + 1.0 + gap as f64;
        }
        dims[2] = height as usize + 2 * margin;
        dims
    }
}

/// Stacks the instances and records their ground truth. Records carry the
/// spherical centroid in mm, the descriptor on `angle_grid` and the
/// bounding-box size in mm.
pub fn make_spine(spec: &SpineSpec, angle_grid: AngleGrid) -> Result<(LabelVolume, Vec<InstanceRecord>)> {
    if spec.params.is_empty() {
        return Err(Error::invalid("spine needs at least one instance"));
    }
    if spec.params.len() >= u16::MAX as usize {
        return Err(Error::invalid("too many instances"));
    }
    let grid = Grid::new(spec.dims, spec.spacing)?;
    let mut vol = LabelVolume::filled(grid, 0);
    let mut rng = SplitMix64::seed_from_u64(spec.seed);
    let mut z_floor = 2.0f64;
    for (i, p) in spec.params.iter().enumerate() {
        p.validate()?;
        let (lo, hi) = p.extent();
        let jitter = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let center = [
            ((spec.dims[0] - 1) as f64 - (hi[0] + lo[0])) / 2.0 + jitter[0],
            ((spec.dims[1] - 1) as f64 - (hi[1] + lo[1])) / 2.0 + jitter[1],
            z_floor - lo[2],
        ];
        draw(p, center, &mut vol, i as u16 + 1)?;
        z_floor = (center[2] + hi[2]).floor() + 1.0 + spec.gap as f64;
    }
    let records = instance_records(&vol, angle_grid, DEFAULT_LAMBDA)?;
    Ok((vol, records))
}

/// Ground-truth records for every label of `labels`.
pub fn instance_records(labels: &LabelVolume, angle_grid: AngleGrid, lambda: f64) -> Result<Vec<InstanceRecord>> {
    let spacing = labels.spacing();
    labels
        .labels()
        .into_iter()
        .map(|l| {
            let mask = labels.select(l);
            let sol = spherical_centroid_fast(&mask, lambda, spacing)?;
            let center = sol.point_mm(spacing);
            let desc = encode(&surface(&mask)?, center, angle_grid, spacing)?;
            Ok(InstanceRecord {
                label: l,
                coarse_center: center,
                refined_center: Some(center),
                descriptor: Some(desc),
                size: mask_size(&mask),
            })
        })
        .collect()
}

/// Bounding-box extent of a binary mask in mm (inclusive voxel count times
/// spacing); zero for an empty mask.
pub fn mask_size(mask: &LabelVolume) -> [f64; 3] {
    let g = mask.grid();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for (i, &v) in mask.data().iter().enumerate() {
        if v > 0 {
            any = true;
            let p = g.index3(i);
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
    }
    if !any {
        return [0.0; 3];
    }
    [0, 1, 2].map(|a| (hi[a] - lo[a] + 1) as f64 * g.spacing[a])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptMode {
    LabelBleed,
    Fragment,
    CenterShift,
}

impl std::str::FromStr for CorruptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label_bleed" => Ok(CorruptMode::LabelBleed),
            "fragment" => Ok(CorruptMode::Fragment),
            "center_shift" => Ok(CorruptMode::CenterShift),
            _ => Err(Error::invalid(format!("unknown corruption mode {s:?}"))),
        }
    }
}

fn voxels_of(labels: &LabelVolume, l: u16) -> Vec<Index3> {
    let g = labels.grid();
    labels.data().iter().enumerate().filter(|(_, &v)| v == l).map(|(i, _)| g.index3(i)).collect()
}

/// Simulates the label errors of a coarse segmentation.
///
/// * `LabelBleed` relabels a contiguous `z` cap (15–30 %) of one instance
///   with the neighbouring label it faces.
/// * `Fragment` relabels the `+x` half of one instance with a neighbour label.
/// * `CenterShift` moves one instance 1–3 voxels along `y` into background,
///   eroding one side and growing the other.
///
/// The first two keep the foreground set unchanged.
pub fn corrupt(labeled: &LabelVolume, mode: CorruptMode, seed: u64) -> Result<LabelVolume> {
    let labels = labeled.labels();
    if labels.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut out = labeled.clone();
    let neighbour = |l: u16, rng: &mut SplitMix64| -> Option<u16> {
        let up = labels.binary_search(&(l + 1)).is_ok().then_some(l + 1);
        let down = (l > 1 && labels.binary_search(&(l - 1)).is_ok()).then(|| l - 1);
        match (down, up) {
            (Some(d), Some(u)) => Some(if rng.random_bool(0.5) { d } else { u }),
            (a, b) => a.or(b),
        }
    };
    match mode {
        CorruptMode::LabelBleed | CorruptMode::Fragment => {
            let with_nb: Vec<u16> = labels
                .iter()
                .copied()
                .filter(|&l| labels.binary_search(&(l + 1)).is_ok() || (l > 1 && labels.binary_search(&(l - 1)).is_ok()))
                .collect();
            if with_nb.is_empty() {
                return Err(Error::invalid("corruption needs two adjacent labels"));
            }
            let l = with_nb[rng.random_range(0..with_nb.len())];
            let nb = neighbour(l, &mut rng).expect("label has a neighbour");
            let vox = voxels_of(labeled, l);
            let chosen: Vec<Index3> = if mode == CorruptMode::LabelBleed {
                let frac = rng.random_range(0.15..=0.30);
                let target = (frac * vox.len() as f64).round() as usize;
                let limit = (0.30 * vox.len() as f64).floor() as usize;
                // Whole z slices from the side facing the neighbour.
                let mut zs: Vec<usize> = vox.iter().map(|p| p[2]).collect();
                zs.sort_unstable();
                zs.dedup();
                if nb > l {
                    zs.reverse();
                }
                let mut taken = 0;
                let mut cut = Vec::new();
                for z in zs {
                    let n = vox.iter().filter(|p| p[2] == z).count();
                    if taken + n > limit || (taken >= target && taken > 0) {
                        break;
                    }
                    taken += n;
                    cut.push(z);
                }
                vox.into_iter().filter(|p| cut.contains(&p[2])).collect()
            } else {
                let cx = vox.iter().map(|p| p[0] as f64).sum::<f64>() / vox.len() as f64;
                vox.into_iter().filter(|p| p[0] as f64 > cx).collect()
            };
            for p in chosen {
                out.set(p, nb);
            }
        }
        CorruptMode::CenterShift => {
            let l = labels[rng.random_range(0..labels.len())];
            let shift = rng.random_range(1..=3i64) * if rng.random_bool(0.5) { 1 } else { -1 };
            let vox = voxels_of(labeled, l);
            for &p in &vox {
                out.set(p, 0);
            }
            for p in vox {
                let q = [p[0] as i64, p[1] as i64 + shift, p[2] as i64];
                if let Some(v) = out.get_signed(q) {
                    if v == 0 {
                        out.set([q[0] as usize, q[1] as usize, q[2] as usize], l);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// One single-vertebra training instance.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusInstance {
    pub family: Family,
    pub params: VertebraParams,
    pub mask: LabelVolume,
}

/// `count` isolated vertebrae, families alternating, each on its own fitted
/// grid with a random sub-voxel body offset.
pub fn make_corpus(count: usize, spacing: [f64; 3], seed: u64) -> Result<Vec<CorpusInstance>> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let family = if i % 2 == 0 { Family::Lumbar } else { Family::Thoracic };
            let params = VertebraParams::sample(family, &mut rng);
            let dims = fitted_dims(&params, 3);
            let (lo, hi) = params.extent();
            let center = [0, 1, 2].map(|a| {
                ((dims[a] - 1) as f64 - (hi[a] + lo[a])) / 2.0 + rng.random_range(-0.5..0.5)
            });
            let mask = make_vertebra_at(&params, Grid::new(dims, spacing)?, Some(center))?;
            Ok(CorpusInstance { family, params, mask })
        })
        .collect()
}

/// Mean instance size `m̄` in mm.
pub fn mean_size(masks: &[&LabelVolume]) -> [f64; 3] {
    let mut acc = [0.0; 3];
    for m in masks {
        let s = mask_size(m);
        for a in 0..3 {
            acc[a] += s[a];
        }
    }
    acc.map(|v| v / masks.len().max(1) as f64)
}

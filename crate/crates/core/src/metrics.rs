//! Overlap and surface-distance metrics.
//!
//! Distances are in mm and exact: nearest neighbours come from a k-d tree
//! over voxel centers. Surface distances are one-directional (prediction to
//! reference), the same quantity the contour loss uses.

use std::collections::BTreeMap;
use std::io::Write;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{surface, LabelVolume, VoxelSet};

/// `2|A ∩ B| / (|A| + |B|)` over binary masks; two empty masks score 1.
pub fn dice(a: &LabelVolume, b: &LabelVolume) -> Result<f64> {
    a.same_dims(b)?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x > 0, y > 0);
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Exact nearest-neighbour distances to a fixed point set.
pub struct NearestIndex {
    tree: ImmutableKdTree<f64, 3>,
}

impl NearestIndex {
    pub fn new(points: &[[f64; 3]]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptySet("reference points"));
        }
        Ok(NearestIndex { tree: ImmutableKdTree::new_from_slice(points) })
    }

    #[inline]
    pub fn distance(&self, q: &[f64; 3]) -> f64 {
        self.tree.nearest_one::<SquaredEuclidean>(q).distance.sqrt()
    }

    pub fn distances(&self, queries: &[[f64; 3]]) -> Vec<f64> {
        queries.par_iter().map(|q| self.distance(q)).collect()
    }
}

fn directed_max(from: &[[f64; 3]], to: &[[f64; 3]]) -> Result<f64> {
    let idx = NearestIndex::new(to)?;
    Ok(idx.distances(from).into_iter().fold(0.0, f64::max))
}

/// Symmetric Hausdorff distance between two voxel sets.
pub fn hausdorff(a: &VoxelSet, b: &VoxelSet, spacing: [f64; 3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet("hausdorff operand"));
    }
    let (pa, pb) = (a.points_mm(spacing), b.points_mm(spacing));
    Ok(directed_max(&pa, &pb)?.max(directed_max(&pb, &pa)?))
}

/// Mean distance from each point to its nearest boundary voxel.
pub fn contour_loss(points: &[[f64; 3]], boundary: &VoxelSet, spacing: [f64; 3]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptySet("contour points"));
    }
    if boundary.is_empty() {
        return Err(Error::EmptySet("boundary"));
    }
    let idx = NearestIndex::new(&boundary.points_mm(spacing))?;
    Ok(idx.distances(points).iter().sum::<f64>() / points.len() as f64)
}

/// Squared Euclidean distance between two centers.
pub fn center_loss(pred: [f64; 3], gt: [f64; 3]) -> f64 {
    (0..3).map(|a| (pred[a] - gt[a]).powi(2)).sum()
}

/// Uniform sample without replacement of `⌈fraction · |B|⌉` voxels,
/// returned in sorted order.
pub fn subsample_boundary(boundary: &VoxelSet, fraction: f64, seed: u64) -> Result<VoxelSet> {
    if boundary.is_empty() {
        return Err(Error::EmptySet("boundary"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let n = boundary.len();
    let amount = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut rng = SplitMix64::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, n, amount);
    let mut coords: Vec<_> = picks.iter().map(|i| boundary.coords()[i]).collect();
    coords.sort_unstable();
    Ok(VoxelSet::from_sorted_unique(coords, boundary.dims()))
}

/// Per-label scores. Distances are `None` when either side is empty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub dice: f64,
    pub hd: Option<f64>,
    pub asd: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub dice: f64,
    pub hd: Option<f64>,
    pub asd: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_label: BTreeMap<u16, LabelMetrics>,
    pub mean: Aggregate,
    pub median: Aggregate,
}

impl MetricReport {
    pub fn from_labels(per_label: BTreeMap<u16, LabelMetrics>) -> Self {
        let dice: Vec<f64> = per_label.values().map(|m| m.dice).collect();
        let hd: Vec<f64> = per_label.values().filter_map(|m| m.hd).collect();
        let asd: Vec<f64> = per_label.values().filter_map(|m| m.asd).collect();
        let mean = Aggregate { dice: mean(&dice).unwrap_or(0.0), hd: mean(&hd), asd: mean(&asd) };
        let median = Aggregate { dice: median(&dice).unwrap_or(0.0), hd: median(&hd), asd: median(&asd) };
        MetricReport { per_label, mean, median }
    }

    /// `label,dice,hd,asd` with empty cells for undefined distances.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "label,dice,hd,asd")?;
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (l, m) in &self.per_label {
            writeln!(w, "{l},{},{},{}", m.dice, cell(m.hd), cell(m.asd))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 })
}

/// Compares every label present in either volume. Surface distances run from
/// the predicted surface to the reference surface.
pub fn evaluate(pred: &LabelVolume, truth: &LabelVolume) -> Result<MetricReport> {
    pred.same_dims(truth)?;
    let spacing = truth.spacing();
    let mut labels = pred.labels();
    labels.extend(truth.labels());
    labels.sort_unstable();
    labels.dedup();
    let per_label = labels
        .par_iter()
        .map(|&l| {
            let (p, t) = (pred.select(l), truth.select(l));
            let d = dice(&p, &t)?;
            let (hd, asd) = if p.count_nonzero() > 0 && t.count_nonzero() > 0 {
                let (sp, st) = (surface(&p)?, surface(&t)?);
                let pts = sp.points_mm(spacing);
                (Some(hausdorff(&sp, &st, spacing)?), Some(contour_loss(&pts, &st, spacing)?))
            } else {
                (None, None)
            };
            Ok((l, LabelMetrics { dice: d, hd, asd }))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(MetricReport::from_labels(per_label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_nearest(q: [f64; 3], pts: &[[f64; 3]]) -> f64 {
        pts.iter()
            .map(|p| (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2))
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }

    fn brute_hausdorff(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
        let ab = a.iter().map(|p| brute_nearest(*p, b)).fold(0.0, f64::max);
        let ba = b.iter().map(|p| brute_nearest(*p, a)).fold(0.0, f64::max);
        ab.max(ba)
    }

    fn random_set(rng: &mut SplitMix64, n: usize, dims: [usize; 3]) -> VoxelSet {
        let mut c: Vec<[usize; 3]> = (0..n).map(|_| [0, 1, 2].map(|a| rng.random_range(0..dims[a]))).collect();
        c.sort_unstable();
        c.dedup();
        VoxelSet::new(c, dims).unwrap()
    }

    fn cube(g: Grid, lo: [usize; 3], hi: [usize; 3]) -> LabelVolume {
        LabelVolume::from_fn(g, |p| u16::from((0..3).all(|a| p[a] >= lo[a] && p[a] < hi[a])))
    }

    #[test]
    fn dice_closed_forms() {
        let g = Grid::isotropic([10, 10, 10]).unwrap();
        let a = cube(g, [0, 0, 0], [4, 4, 4]);
        let b = cube(g, [2, 0, 0], [6, 4, 4]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        assert_eq!(dice(&a, &cube(g, [5, 5, 5], [7, 7, 7])).unwrap(), 0.0);
        let empty = LabelVolume::filled(g, 0);
        assert_eq!(dice(&empty, &empty).unwrap(), 1.0);
        assert_eq!(dice(&empty, &a).unwrap(), 0.0);
        let other = LabelVolume::filled(Grid::isotropic([3, 3, 3]).unwrap(), 0);
        assert!(matches!(dice(&a, &other), Err(Error::DimsMismatch(_))));
    }

    #[test]
    fn hausdorff_closed_forms() {
        let dims = [10, 10, 10];
        let a = VoxelSet::new(vec![[1, 1, 1]], dims).unwrap();
        let b = VoxelSet::new(vec![[1, 1, 8]], dims).unwrap();
        assert_eq!(hausdorff(&a, &b, [1.0; 3]).unwrap(), 7.0);
        assert_eq!(hausdorff(&a, &a, [1.0; 3]).unwrap(), 0.0);
        assert_eq!(hausdorff(&a, &b, [1.0, 1.0, 0.5]).unwrap(), 3.5);
        let e = VoxelSet::new(vec![], dims).unwrap();
        assert!(hausdorff(&a, &e, [1.0; 3]).is_err());
    }

    #[test]
    fn hausdorff_matches_brute_force_exactly() {
        let mut rng = SplitMix64::seed_from_u64(21);
        for _ in 0..30 {
            let dims = [12, 9, 15];
            let (na, nb) = (rng.random_range(1..200), rng.random_range(1..200));
            let a = random_set(&mut rng, na, dims);
            let b = random_set(&mut rng, nb, dims);
            let s = [0.7, 1.0, 1.3];
            let got = hausdorff(&a, &b, s).unwrap();
            let want = brute_hausdorff(&a.points_mm(s), &b.points_mm(s));
            assert_eq!(got, want);
        }
    }

    #[test]
    fn hausdorff_triangle_spot_check() {
        let mut rng = SplitMix64::seed_from_u64(5);
        for _ in 0..20 {
            let dims = [8, 8, 8];
            let [a, b, c] = [0, 1, 2].map(|_| random_set(&mut rng, 40, dims));
            let s = [1.0; 3];
            let (ab, bc, ac) = (hausdorff(&a, &b, s).unwrap(), hausdorff(&b, &c, s).unwrap(), hausdorff(&a, &c, s).unwrap());
            assert!(ac <= ab + bc + 1e-12);
            assert_eq!(ab, hausdorff(&b, &a, s).unwrap());
        }
    }

    #[test]
    fn contour_loss_cases() {
        let dims = [10, 10, 10];
        let b = VoxelSet::new(vec![[1, 1, 1], [5, 5, 5]], dims).unwrap();
        assert_eq!(contour_loss(&[[1.0, 1.0, 1.0], [5.0, 5.0, 5.0]], &b, [1.0; 3]).unwrap(), 0.0);
        assert_eq!(contour_loss(&[[5.0, 5.0, 8.0]], &b, [1.0; 3]).unwrap(), 3.0);
        assert!(contour_loss(&[], &b, [1.0; 3]).is_err());
        let mut rng = SplitMix64::seed_from_u64(8);
        let pts: Vec<[f64; 3]> = (0..50).map(|_| [0, 1, 2].map(|_| rng.random_range(-2.0..12.0))).collect();
        let want = pts.iter().map(|p| brute_nearest(*p, &b.points_mm([1.0; 3]))).sum::<f64>() / 50.0;
        assert!((contour_loss(&pts, &b, [1.0; 3]).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn center_loss_cases() {
        assert_eq!(center_loss([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]), 0.0);
        assert_eq!(center_loss([1.0, 2.0, 2.0], [0.0; 3]), 9.0);
        let mut rng = SplitMix64::seed_from_u64(1);
        for _ in 0..20 {
            let p = [0, 1, 2].map(|_| rng.random_range(-9.0..9.0));
            let q = [0, 1, 2].map(|_| rng.random_range(-9.0..9.0));
            let want = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) + (p[2] - q[2]) * (p[2] - q[2]);
            assert!((center_loss(p, q) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn subsample_counts_and_membership() {
        let mut rng = SplitMix64::seed_from_u64(3);
        let mut c = Vec::new();
        while c.len() < 300 {
            let p = [0, 1, 2].map(|_| rng.random_range(0..20usize));
            if !c.contains(&p) {
                c.push(p);
            }
        }
        let b = VoxelSet::new(c, [20; 3]).unwrap();
        let third = subsample_boundary(&b, 1.0 / 3.0, 9).unwrap();
        assert_eq!(third.len(), 100);
        assert!(third.iter().all(|p| b.coords().contains(p)));
        assert_eq!(subsample_boundary(&b, 1.0, 9).unwrap().sorted(), b.sorted());
        assert_eq!(subsample_boundary(&b, 0.25, 4).unwrap(), subsample_boundary(&b, 0.25, 4).unwrap());
        assert_ne!(subsample_boundary(&b, 0.25, 4).unwrap(), subsample_boundary(&b, 0.25, 5).unwrap());
        assert!(subsample_boundary(&b, 0.0, 1).is_err());
        assert!(subsample_boundary(&b, 1.5, 1).is_err());
    }

    #[test]
    fn evaluate_report() {
        let g = Grid::isotropic([12, 12, 12]).unwrap();
        let mut truth = LabelVolume::filled(g, 0);
        let mut pred = LabelVolume::filled(g, 0);
        for i in 0..g.len() {
            let p = g.index3(i);
            if (2..6).contains(&p[0]) && (2..6).contains(&p[1]) && (2..6).contains(&p[2]) {
                truth.data_mut()[i] = 1;
                pred.data_mut()[i] = 1;
            }
            if (7..10).contains(&p[0]) && (2..6).contains(&p[1]) && (2..6).contains(&p[2]) {
                truth.data_mut()[i] = 2;
            }
        }
        let r = evaluate(&pred, &truth).unwrap();
        assert_eq!(r.per_label[&1], LabelMetrics { dice: 1.0, hd: Some(0.0), asd: Some(0.0) });
        assert_eq!(r.per_label[&2].dice, 0.0);
        assert_eq!(r.per_label[&2].hd, None);
        assert_eq!(r.mean.dice, 0.5);
        assert_eq!(r.median.dice, 0.5);
        assert_eq!(r.mean.asd, Some(0.0));
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "label,dice,hd,asd\n1,1,0,0\n2,0,,\n");
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["per_label"]["2"]["hd"].is_null());
    }

    #[test]
    fn median_and_mean() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(mean(&[]), None);
    }

    proptest! {
        #[test]
        fn distances_scale_with_spacing(seed in 0u64..500, exp in -2i32..3) {
            let mut rng = SplitMix64::seed_from_u64(seed);
            let dims = [10, 10, 10];
            let a = random_set(&mut rng, 30, dims);
            let b = random_set(&mut rng, 30, dims);
            let alpha = 2f64.powi(exp);
            let h1 = hausdorff(&a, &b, [1.0; 3]).unwrap();
            let h2 = hausdorff(&a, &b, [alpha; 3]).unwrap();
            prop_assert!((h2 - alpha * h1).abs() < 1e-12 * h2.max(1.0));
            let pts = a.points_mm([1.0; 3]);
            let scaled: Vec<_> = pts.iter().map(|p| p.map(|x| x * alpha)).collect();
            let c1 = contour_loss(&pts, &b, [1.0; 3]).unwrap();
            let c2 = contour_loss(&scaled, &b, [alpha; 3]).unwrap();
            prop_assert!((c2 - alpha * c1).abs() < 1e-12 * c2.max(1.0));
        }

        #[test]
        fn dice_symmetric(seed in 0u64..500) {
            let mut rng = SplitMix64::seed_from_u64(seed);
            let g = Grid::isotropic([6, 6, 6]).unwrap();
            let a = LabelVolume::from_fn(g, |_| rng.random_range(0..2u16));
            let b = LabelVolume::from_fn(g, |_| rng.random_range(0..2u16));
            prop_assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&dice(&a, &b).unwrap()));
        }
    }
}

use lowrank_contour::basis::{build_matrix, fit_svd, project, read_basis, reconstruct_rho, write_basis};
use lowrank_contour::centroid::{spherical_centroid_fast, DEFAULT_LAMBDA};
use lowrank_contour::codec::{encode, read_descriptors, write_descriptors, AngleGrid, AxisConvention, ContourDescriptor, DescriptorFile};
use lowrank_contour::metrics::{dice, evaluate};
use lowrank_contour::recon::radial_fill;
use lowrank_contour::refine::{refine_volume, OraclePredictor, RefineConfig};
use lowrank_contour::synth::{corrupt, make_corpus, make_spine, CorruptMode, SpineSpec};
use lowrank_contour::volume::{read_volume, surface, write_volume, LabelVolume};

fn encode_mask(mask: &LabelVolume, grid: AngleGrid) -> ContourDescriptor {
    let c = spherical_centroid_fast(mask, DEFAULT_LAMBDA, mask.spacing()).unwrap();
    encode(&surface(mask).unwrap(), c.point_mm(mask.spacing()), grid, mask.spacing()).unwrap()
}

#[test]
fn files_round_trip_through_the_whole_chain() {
    let dir = tempfile::tempdir().unwrap();
    let grid = AngleGrid::new(5, AxisConvention::ZUp).unwrap();
    let corpus = make_corpus(12, [1.0; 3], 4).unwrap();

    for (i, c) in corpus.iter().enumerate() {
        let p = dir.path().join(format!("{i}.svol"));
        write_volume(&c.mask.clone().into(), &p).unwrap();
        assert_eq!(read_volume(&p).unwrap().into_labels().unwrap(), c.mask);
    }

    let descs: Vec<_> = corpus.iter().map(|c| encode_mask(&c.mask, grid)).collect();
    let dpath = dir.path().join("d.sdesc");
    write_descriptors(&DescriptorFile::from_descriptors(&descs).unwrap(), &dpath).unwrap();
    let back = read_descriptors(&dpath).unwrap();
    for (i, d) in descs.iter().enumerate() {
        let r = back.descriptor(i).unwrap();
        assert_eq!(r.center, d.center);
        assert_eq!(r.rho.len(), grid.len());
        for (a, b) in r.rho.iter().zip(&d.rho) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    let basis = fit_svd(&build_matrix(&descs).unwrap(), 12).unwrap();
    let bpath = dir.path().join("b.sbasis");
    write_basis(&basis, &bpath).unwrap();
    let basis = read_basis(&bpath).unwrap();

    // Full rank reproduces every training shape.
    for (c, d) in corpus.iter().zip(&descs) {
        let coeffs = project(&basis, d).unwrap();
        let rho = reconstruct_rho(&basis, &coeffs.column(0)).unwrap();
        let rebuilt = ContourDescriptor::new(rho, grid, d.center).unwrap();
        let fill = radial_fill(&rebuilt, *c.mask.grid()).unwrap();
        let direct = radial_fill(d, *c.mask.grid()).unwrap();
        assert_eq!(dice(&fill, &direct).unwrap(), 1.0);
        assert!(dice(&fill, &c.mask).unwrap() > 0.9);
    }
}

#[test]
fn corrupted_spine_is_repaired_by_the_oracle() {
    let grid = AngleGrid::new(5, AxisConvention::ZUp).unwrap();
    let corpus = make_corpus(40, [1.0; 3], 8).unwrap();
    let descs: Vec<_> = corpus.iter().map(|c| encode_mask(&c.mask, grid)).collect();
    let basis = fit_svd(&build_matrix(&descs).unwrap(), 40).unwrap();

    let (truth, _) = make_spine(&SpineSpec::random(4, 2, [1.0; 3], 21), grid).unwrap();
    let coarse = corrupt(&truth, CorruptMode::Fragment, 3).unwrap();
    let before = evaluate(&coarse, &truth).unwrap();

    let oracle = OraclePredictor::new(&truth, DEFAULT_LAMBDA).unwrap();
    let config = RefineConfig { angle_grid: grid, jitter: [0.0; 3], ..RefineConfig::default() };
    let out = refine_volume(&coarse, &oracle, &basis, &config).unwrap();
    let after = evaluate(&out.labels, &truth).unwrap();

    assert_eq!(out.labels.labels(), truth.labels());
    assert!(after.mean.dice >= before.mean.dice.min(0.85), "{} vs {}", after.mean.dice, before.mean.dice);
    assert!(after.mean.dice > 0.85);
}

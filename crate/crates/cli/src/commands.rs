use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use lowrank_contour::basis::{build_matrix, read_basis, write_basis, ContourBasis, Method};
use lowrank_contour::centroid::{objective, rounded_plain_centroid, select_delta, spherical_centroid, spherical_centroid_fast};
use lowrank_contour::codec::{encode, read_descriptors, write_descriptors, ContourDescriptor, DescriptorFile};
use lowrank_contour::experiments::{self, CenterKind, Rank, SweepRow};
use lowrank_contour::metrics::evaluate;
use lowrank_contour::recon::radial_fill;
use lowrank_contour::refine::{refine_volume, OraclePredictor};
use lowrank_contour::synth::{corrupt, make_corpus, make_spine, mean_size, mask_size, CorruptMode, SpineSpec};
use lowrank_contour::volume::{boundary, read_volume, surface, write_volume, LabelVolume};

use crate::config::Config;
use crate::manifest::{self, CorpusItem, Loaded, Manifest, SpineItem};
use crate::{CliError, Command, GridArgs, PredictorArg};

pub fn dispatch(cmd: Command, mut config: Config) -> Result<(), CliError> {
    match cmd {
        Command::Gen { spec, out_dir, count, seed, spines } => gen(spec.as_deref(), &out_dir, count, seed, spines, &config),
        Command::Encode { manifest, input, out, center, grid } => {
            apply_grid(&mut config, &grid);
            encode_cmd(manifest.as_deref(), &input, &out, center.into(), &config)
        }
        Command::Centroid { input, label, exhaustive, grid } => {
            apply_grid(&mut config, &grid);
            centroid_cmd(&input, label, exhaustive, &config)
        }
        Command::Basis { descriptors, k, method, manifest, out } => {
            basis_cmd(&descriptors, k, method.into(), manifest.as_deref(), &out, &config)
        }
        Command::Reconstruct { basis, descriptors, manifest, ks, out, volumes } => {
            reconstruct_cmd(&basis, &descriptors, &manifest, &ks, out.as_deref(), volumes.as_deref(), &config)
        }
        Command::Refine { coarse, basis, predictor, truth, out, emit_mesh, jitter, jitter_seed } => {
            if let Some(j) = jitter {
                config.jitter = [j; 3];
            }
            if let Some(s) = jitter_seed {
                config.jitter_seed = s;
            }
            refine_cmd(&coarse, &basis, predictor, &truth, &out, emit_mesh.as_deref(), &config)
        }
        Command::Eval { pred, truth, out } => eval_cmd(&pred, &truth, out.as_deref()),
        Command::Ablate { manifest, interval, rank, centroid, axis, method, out } => {
            let all = !(interval || rank || centroid || axis || method);
            let sel = Sweeps {
                interval: all || interval,
                rank: all || rank,
                centroid: all || centroid,
                axis: all || axis,
                method: all || method,
            };
            ablate_cmd(&manifest, sel, out.as_deref(), &config)
        }
    }
}

fn apply_grid(config: &mut Config, g: &GridArgs) {
    if let Some(s) = g.s_deg {
        config.s_deg = s;
    }
    if let Some(a) = g.axis {
        config.axis = a.into();
    }
    if let Some(l) = g.lambda {
        config.lambda = l;
    }
}

fn read_labels(path: &Path) -> Result<LabelVolume, CliError> {
    Ok(read_volume(path)?.into_labels()?)
}

/// Writes to `path`, or stdout when absent.
fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn print_json(value: &serde_json::Value) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    /// Isolated vertebrae in the training corpus.
    pub count: usize,
    pub seed: u64,
    pub spacing: [f64; 3],
    pub spines: usize,
    pub spine_instances: usize,
    pub gap: usize,
    pub corruption: Option<CorruptMode>,
    pub corruption_seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            count: 40,
            seed: 0,
            spacing: [1.0; 3],
            spines: 1,
            spine_instances: 5,
            gap: 2,
            corruption: Some(CorruptMode::LabelBleed),
            corruption_seed: 7,
        }
    }
}

fn gen(
    spec_path: Option<&Path>,
    out_dir: &Path,
    count: Option<usize>,
    seed: Option<u64>,
    spines: Option<usize>,
    config: &Config,
) -> Result<(), CliError> {
    let mut spec: GenSpec = match spec_path {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?,
        None => GenSpec::default(),
    };
    spec.count = count.unwrap_or(spec.count);
    spec.seed = seed.unwrap_or(spec.seed);
    spec.spines = spines.unwrap_or(spec.spines);
    if spec.count == 0 {
        return Err(CliError::usage("corpus count must be at least 1"));
    }
    fs::create_dir_all(out_dir.join("corpus"))?;

    let corpus = make_corpus(spec.count, spec.spacing, spec.seed)?;
    let mut instances = Vec::with_capacity(corpus.len());
    for (i, inst) in corpus.iter().enumerate() {
        let file = format!("corpus/vertebra_{i:04}.svol");
        write_volume(&inst.mask.clone().into(), out_dir.join(&file))?;
        instances.push(CorpusItem { file, family: inst.family, params: inst.params, size: mask_size(&inst.mask) });
    }
    let m_bar = mean_size(&corpus.iter().map(|c| &c.mask).collect::<Vec<_>>());
    eprintln!("wrote {} corpus instances", corpus.len());

    let grid = config.angle_grid()?;
    let mut spine_items = Vec::new();
    for i in 0..spec.spines {
        let spine_seed = spec.seed.wrapping_add(1 + i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let sspec = SpineSpec::random(spec.spine_instances, spec.gap, spec.spacing, spine_seed);
        let (truth, records) = make_spine(&sspec, grid)?;
        let truth_file = format!("spine_{i:02}_truth.svol");
        write_volume(&truth.clone().into(), out_dir.join(&truth_file))?;
        let coarse = match spec.corruption {
            Some(mode) => {
                let c = corrupt(&truth, mode, spec.corruption_seed)?;
                let f = format!("spine_{i:02}_coarse.svol");
                write_volume(&c.into(), out_dir.join(&f))?;
                Some(f)
            }
            None => None,
        };
        spine_items.push(SpineItem {
            truth: truth_file,
            coarse,
            corruption: spec.corruption,
            corruption_seed: spec.corruption.map(|_| spec.corruption_seed),
            records,
        });
    }
    eprintln!("wrote {} spines", spine_items.len());

    let manifest = Manifest {
        version: manifest::VERSION,
        seed: spec.seed,
        spacing: spec.spacing,
        m_bar,
        instances,
        spines: spine_items,
    };
    let path = out_dir.join("manifest.json");
    serde_json::to_writer_pretty(BufWriter::new(File::create(&path)?), &manifest)?;
    print_json(&json!({ "manifest": path, "instances": manifest.instances.len(), "spines": manifest.spines.len(), "m_bar": m_bar }))
}

fn center_of(mask: &LabelVolume, kind: CenterKind, lambda: f64) -> Result<[f64; 3], CliError> {
    let spacing = mask.spacing();
    Ok(match kind {
        CenterKind::Spherical => spherical_centroid_fast(mask, lambda, spacing)?.point_mm(spacing),
        CenterKind::Plain => mask.grid().to_mm(rounded_plain_centroid(mask)?),
    })
}

fn encode_cmd(
    manifest: Option<&Path>,
    inputs: &[PathBuf],
    out: &Path,
    center: CenterKind,
    config: &Config,
) -> Result<(), CliError> {
    let grid = config.angle_grid()?;
    let masks: Vec<LabelVolume> = match manifest {
        Some(m) => Loaded::open(m)?.corpus_masks()?,
        None if inputs.is_empty() => return Err(CliError::usage("encode needs --manifest or --input")),
        None => {
            let mut masks = Vec::new();
            for p in inputs {
                let v = read_labels(p)?;
                for l in v.labels() {
                    masks.push(v.select(l));
                }
            }
            masks
        }
    };
    if masks.is_empty() {
        return Err(CliError::data("no labeled instances to encode"));
    }
    let descs = masks
        .iter()
        .map(|m| Ok(encode(&surface(m)?, center_of(m, center, config.lambda)?, grid, m.spacing())?))
        .collect::<Result<Vec<ContourDescriptor>, CliError>>()?;
    let imputed: usize = descs.iter().map(|d| d.imputed.iter().filter(|&&b| b).count()).sum();
    write_descriptors(&DescriptorFile::from_descriptors(&descs)?, out)?;
    print_json(&json!({ "out": out, "rows": descs.len(), "N": grid.len(), "imputed_bins": imputed }))
}

fn centroid_cmd(input: &Path, label: Option<u16>, exhaustive: bool, config: &Config) -> Result<(), CliError> {
    let vol = read_labels(input)?;
    let labels = match label {
        Some(l) if vol.labels().contains(&l) => vec![l],
        Some(l) => return Err(CliError::data(format!("label {l} not present"))),
        None => vol.labels(),
    };
    if labels.is_empty() {
        return Err(CliError::data("volume has no labels"));
    }
    let spacing = vol.spacing();
    let mut rows = Vec::new();
    for l in labels {
        let mask = vol.select(l);
        let sol = spherical_centroid_fast(&mask, config.lambda, spacing)?;
        let b = boundary(&mask)?;
        let plain = rounded_plain_centroid(&mask)?;
        let plain_obj = objective(plain, &b, select_delta(&b)?, config.lambda, spacing)?;
        let mut row = json!({
            "label": l,
            "voxel": sol.point,
            "mm": sol.point_mm(spacing),
            "objective": sol.objective,
            "delta": sol.delta,
            "plain_voxel": plain,
            "plain_objective": plain_obj,
        });
        if exhaustive {
            let full = spherical_centroid(&mask, config.lambda, spacing)?;
            row["exhaustive_agrees"] = json!(full.point == sol.point);
        }
        rows.push(row);
    }
    print_json(&serde_json::Value::Array(rows))
}

/// Settings stored next to a basis file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BasisSidecar {
    pub method: Method,
    pub k: usize,
    pub s_deg: u32,
    pub rows: usize,
    pub m_bar: Option<[f64; 3]>,
}

fn sidecar_path(basis: &Path) -> PathBuf {
    let mut s = basis.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn descriptors_of(file: &DescriptorFile) -> Result<Vec<ContourDescriptor>, CliError> {
    (0..file.rows.len()).map(|i| Ok(file.descriptor(i)?)).collect()
}

fn basis_cmd(
    descriptors: &Path,
    k: Option<usize>,
    method: Method,
    manifest: Option<&Path>,
    out: &Path,
    config: &Config,
) -> Result<(), CliError> {
    let file = read_descriptors(descriptors)?;
    let descs = descriptors_of(&file)?;
    let limit = match method {
        Method::Svd => descs.len(),
        Method::Pca => descs.len().saturating_sub(1),
    }
    .min(file.grid.len());
    let k = match k {
        Some(k) => k,
        None if config.k > limit => {
            eprintln!("configured rank {} exceeds the {limit} available; using {limit}", config.k);
            limit
        }
        None => config.k,
    };
    let basis = experiments::fit(method, &descs, k)?;
    let residual = lowrank_contour::basis::residual_energy(&basis, &build_matrix(&descs)?)?;
    write_basis(&basis, out)?;
    let m_bar = match manifest {
        Some(m) => Some(Loaded::open(m)?.manifest.m_bar),
        None => None,
    };
    let sidecar = BasisSidecar { method, k, s_deg: file.grid.interval_deg(), rows: descs.len(), m_bar };
    serde_json::to_writer_pretty(BufWriter::new(File::create(sidecar_path(out))?), &sidecar)?;
    print_json(&json!({ "out": out, "k": k, "method": method, "rows": descs.len(), "residual_energy": residual }))
}

fn reconstruct_cmd(
    basis_path: &Path,
    descriptors: &Path,
    manifest: &Path,
    ks: &[usize],
    out: Option<&Path>,
    volumes: Option<&Path>,
    config: &Config,
) -> Result<(), CliError> {
    let basis = read_basis(basis_path)?;
    let file = read_descriptors(descriptors)?;
    if file.grid != basis.grid() {
        return Err(CliError::data("descriptor grid differs from the basis grid"));
    }
    let descs = descriptors_of(&file)?;
    let loaded = Loaded::open(manifest)?;
    if loaded.manifest.instances.len() != descs.len() {
        return Err(CliError::data(format!(
            "{} descriptor rows for {} manifest instances",
            descs.len(),
            loaded.manifest.instances.len()
        )));
    }
    let entries = experiments::prepare(loaded.corpus_masks()?, config.lambda)?;
    let ks: Vec<usize> = if ks.is_empty() { vec![basis.k()] } else { ks.to_vec() };
    let mut w = output(out)?;
    writeln!(w, "instance,k,asd,dice")?;
    let mut summary = Vec::new();
    let mut last: Option<(ContourBasis, Vec<ContourDescriptor>)> = None;
    for &k in &ks {
        let b = basis.truncate(k)?;
        let rebuilt = experiments::through_basis(&b, &descs)?;
        let mut total = 0.0;
        for (i, (e, d)) in entries.iter().zip(&rebuilt).enumerate() {
            let s = e.evaluate(d)?;
            total += s.mean_asd;
            writeln!(w, "{i},{k},{},{}", s.mean_asd, s.mean_dice)?;
        }
        summary.push(json!({ "k": k, "mean_asd": total / entries.len() as f64 }));
        last = Some((b, rebuilt));
    }
    w.flush()?;
    if let (Some(dir), Some((_, rebuilt))) = (volumes, last) {
        fs::create_dir_all(dir)?;
        for (i, (e, d)) in entries.iter().zip(&rebuilt).enumerate() {
            write_volume(&radial_fill(d, *e.mask.grid())?.into(), dir.join(format!("recon_{i:04}.svol")))?;
        }
    }
    if out.is_some() {
        print_json(&serde_json::Value::Array(summary))?;
    }
    Ok(())
}

fn refine_cmd(
    coarse: &Path,
    basis_path: &Path,
    predictor: PredictorArg,
    truth: &Path,
    out: &Path,
    emit_mesh: Option<&Path>,
    config: &Config,
) -> Result<(), CliError> {
    let coarse = read_labels(coarse)?;
    let truth = read_labels(truth)?;
    let basis = read_basis(basis_path)?;
    let sidecar = sidecar_path(basis_path);
    let m_bar = if sidecar.exists() {
        let s: BasisSidecar = serde_json::from_reader(File::open(&sidecar)?)?;
        s.m_bar
    } else {
        None
    };
    let rc = config.refine_config(m_bar, emit_mesh.is_some())?;
    let PredictorArg::Oracle = predictor;
    let oracle = OraclePredictor::new(&truth, config.lambda)?;
    let result = refine_volume(&coarse, &oracle, &basis, &rc)?;
    write_volume(&result.labels.clone().into(), out)?;
    if let Some(dir) = emit_mesh {
        fs::create_dir_all(dir)?;
        for (label, mesh) in &result.meshes {
            let name = format!("label_{label:03}");
            mesh.write_stl(&name, BufWriter::new(File::create(dir.join(format!("{name}.stl")))?))?;
        }
    }
    let records: Vec<_> = result
        .records
        .iter()
        .map(|r| json!({ "label": r.label, "coarse_center": r.coarse_center, "refined_center": r.refined_center, "size": r.size }))
        .collect();
    print_json(&json!({ "out": out, "labels": result.labels.labels(), "records": records }))
}

fn eval_cmd(pred: &Path, truth: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let report = evaluate(&read_labels(pred)?, &read_labels(truth)?)?;
    let mut w = output(out)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    if out.is_some() {
        print_json(&json!({ "mean": report.mean, "median": report.median }))?;
    }
    Ok(())
}

#[derive(Clone, Copy)]
struct Sweeps {
    interval: bool,
    rank: bool,
    centroid: bool,
    axis: bool,
    method: bool,
}

fn ablate_cmd(manifest: &Path, sel: Sweeps, out: Option<&Path>, config: &Config) -> Result<(), CliError> {
    let loaded = Loaded::open(manifest)?;
    let entries = experiments::prepare(loaded.corpus_masks()?, config.lambda)?;
    let (train, test) = experiments::split(&entries, config.holdout)?;
    let grid = config.angle_grid()?;
    let mut rows: Vec<SweepRow> = Vec::new();
    if sel.interval {
        rows.extend(experiments::sweep_interval(&entries, &[3, 5, 10], config.axis)?);
    }
    if sel.rank {
        let ranks = [Rank::K(100), Rank::K(200), Rank::K(500), Rank::Full];
        rows.extend(experiments::sweep_rank(train, test, grid, &ranks)?);
    }
    if sel.centroid {
        rows.extend(experiments::sweep_centroid(&entries, grid)?);
    }
    if sel.axis {
        rows.extend(experiments::sweep_axis(train, test, config.s_deg, config.k)?);
    }
    if sel.method {
        rows.extend(experiments::sweep_method(train, test, grid, config.k)?);
    }
    let mut w = output(out)?;
    writeln!(w, "sweep,setting,mean_asd,mean_dice")?;
    for r in &rows {
        writeln!(w, "{},{},{},{}", r.sweep, r.setting, r.mean_asd, r.mean_dice)?;
    }
    w.flush()?;
    Ok(())
}

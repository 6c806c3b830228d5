//! `mpr`: desk-scale experiment drivers writing plot-ready CSV.

mod settings;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, ensure, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mpr_core::experiments::{
    random_binary_frames, rsvd_trial_factors, run_design_study, run_good_bits, run_linearity, run_rsvd,
    run_srls_vs_mds, singular_vector_errors, CameraSettings, DesignStudyConfig, GoodBitsConfig, LinearityConfig,
    Method, RsvdConfig, SrlsConfig, TestMatrix,
};
use mpr_core::metrics::{edm_error_scaling, ScalingConfig};
use mpr_core::refdesign::{design_binary_references, ReferenceDesignConfig};
use mpr_core::rng::sub_seed;
use mpr_core::rsvd::{dense_right_singular_vectors, Rsvd};
use mpr_core::solver::SolverConfig;

use output::{create, Provenance, Sink};
use settings::{Counts, MatrixKind, Probabilities, Settings};

#[derive(Parser)]
#[command(name = "mpr", version, about = "Phase retrieval for intensity-only random projections: experiment drivers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Linearity error of recovered projections versus anchor count.
    Linearity(Common),
    /// Good bits of recovered magnitudes versus anchor count.
    Goodbits(Common),
    /// SNR of range-based localization with known anchors against joint MDS.
    SrlsVsMds(Common),
    /// Randomized SVD with the optical sketch versus a Gaussian sketch.
    Rsvd(RsvdArgs),
    /// Distance-recovery error as the number of points grows.
    Scaling(ScalingArgs),
    /// Validity and retry statistics of generated binary anchor sets.
    DesignRefs(DesignArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Flat TOML settings file; flags take precedence over its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Anchor counts (origin included), comma separated.
    #[arg(long, value_delimiter = ',')]
    anchors: Option<Vec<usize>>,
    /// Camera bit depth.
    #[arg(long)]
    bits: Option<u32>,
    /// Disable quantization.
    #[arg(long)]
    noiseless: bool,
    /// Sensitivity threshold in camera units; 0 disables masking.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Directory for CSV/JSON artifacts; without it the main table goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the full experiment sizes instead of the desk-scale defaults.
    #[arg(long)]
    paper_scale: bool,
    /// Signal dimension N.
    #[arg(long)]
    input_dim: Option<usize>,
    /// Rows of the transmission matrix, or of B for `rsvd`.
    #[arg(long)]
    rows: Option<usize>,
    /// Brightest probe reading after exposure adjustment.
    #[arg(long)]
    target_peak: Option<f64>,
    /// Random restarts of the stress descent when distances are missing.
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Args)]
struct RsvdArgs {
    #[command(flatten)]
    common: Common,
    /// Projector row counts K, comma separated.
    #[arg(long, value_delimiter = ',')]
    projections: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    matrix: Option<MatrixKind>,
    #[arg(long)]
    cols: Option<usize>,
    /// Bernoulli density of the binary matrix.
    #[arg(long)]
    density: Option<f64>,
    /// Singular-value decay of the planted matrix.
    #[arg(long)]
    decay: Option<f64>,
    /// Blob templates in the digit-like matrix.
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Args)]
struct ScalingArgs {
    #[command(flatten)]
    common: Common,
    /// Probabilities that a distance is observed, comma separated.
    #[arg(long, value_delimiter = ',')]
    keep_probability: Option<Vec<f64>>,
}

#[derive(Args)]
struct DesignArgs {
    #[command(flatten)]
    common: Common,
    /// Anchor sets to generate.
    #[arg(long)]
    sets: Option<usize>,
    /// Per-step flip probability.
    #[arg(long)]
    alpha: Option<f64>,
    /// Random binary frames each set must cover.
    #[arg(long)]
    frames: Option<usize>,
    /// Density of those frames.
    #[arg(long)]
    density: Option<f64>,
}

const CAMERA_KEYS: &[&str] = &["seed", "anchors", "bits", "noiseless", "tau", "trials", "paper_scale", "target_peak"];

fn keys(extra: &[&'static str]) -> Vec<&'static str> {
    CAMERA_KEYS.iter().chain(extra).copied().collect()
}

impl Common {
    fn flags(&self) -> Settings {
        Settings {
            seed: self.seed,
            anchors: self.anchors.clone().map(Counts::Many),
            bits: self.bits,
            noiseless: self.noiseless.then_some(true),
            tau: self.tau,
            trials: self.trials,
            paper_scale: self.paper_scale.then_some(true),
            input_dim: self.input_dim,
            rows: self.rows,
            target_peak: self.target_peak,
            restarts: self.restarts,
            ..Default::default()
        }
    }

    /// File settings overlaid by `flags`, both checked against `allowed`.
    fn resolve(&self, flags: Settings, allowed: &[&str], command: &str) -> Result<Settings> {
        flags.check_applies(allowed, command)?;
        let file = match &self.config {
            Some(path) => Settings::load(path, allowed)?,
            None => Settings::default(),
        };
        Ok(file.overlay(flags))
    }
}

fn camera(s: &Settings) -> Result<CameraSettings> {
    let bits = if s.noiseless.unwrap_or(false) { None } else { Some(s.bits.unwrap_or(8)) };
    if let Some(b) = bits {
        ensure!((1..=32).contains(&b), "bit depth {b} outside 1..=32");
    }
    let tau = s.tau.filter(|&t| t != 0.0);
    if let Some(t) = tau {
        ensure!(t > 0.0, "threshold {t} is negative");
    }
    let target_peak = s.target_peak.unwrap_or(CameraSettings::default().target_peak);
    ensure!(target_peak > 0.0, "target peak must be positive");
    Ok(CameraSettings { bits, tau, target_peak })
}

fn solver(base: SolverConfig, s: &Settings) -> SolverConfig {
    SolverConfig { gd_restarts: s.restarts.unwrap_or(base.gd_restarts), ..base }
}

fn single_anchor_count(s: &Settings, default: usize) -> Result<usize> {
    match s.anchors.as_ref().map(Counts::to_vec).as_deref() {
        None => Ok(default),
        Some([k]) => Ok(*k),
        Some(list) => bail!("this command takes a single anchor count, got {list:?}"),
    }
}

#[derive(Serialize)]
struct LinearityRecord {
    anchors: usize,
    method: Method,
    tau: f64,
    mean_linearity_error: f64,
    std_error: f64,
    retained_fraction: f64,
    trials: usize,
}

fn linearity(args: &Common) -> Result<()> {
    let s = args.resolve(args.flags(), &keys(&["input_dim", "rows", "restarts"]), "linearity")?;
    let d = LinearityConfig::default();
    let cfg = LinearityConfig {
        input_dim: s.input_dim.unwrap_or(d.input_dim),
        rows: s.rows.unwrap_or(d.rows),
        anchor_counts: s.anchors.as_ref().map_or(d.anchor_counts.clone(), Counts::to_vec),
        trials: s.trials.unwrap_or(d.trials),
        camera: camera(&s)?,
        seed: s.seed.unwrap_or(d.seed),
        solver: solver(d.solver.clone(), &s),
    };
    let records: Vec<LinearityRecord> = run_linearity(&cfg)?
        .into_iter()
        .map(|r| LinearityRecord {
            anchors: r.anchors,
            method: r.method,
            tau: r.tau,
            mean_linearity_error: r.mean_error,
            std_error: r.std_error,
            retained_fraction: r.retained,
            trials: r.trials,
        })
        .collect();
    Sink::new(args.out.clone())?.table(&Provenance::new("linearity", &cfg)?, "linearity.csv", &records)
}

#[derive(Serialize)]
struct GoodBitsRecord {
    anchors: usize,
    method: Method,
    tau: f64,
    mean_good_bits: f64,
    std_error: f64,
    trials: usize,
}

fn goodbits(args: &Common) -> Result<()> {
    let s = args.resolve(args.flags(), &keys(&["input_dim", "restarts"]), "goodbits")?;
    let d = GoodBitsConfig::default();
    let cfg = GoodBitsConfig {
        input_dim: s.input_dim.unwrap_or(d.input_dim),
        anchor_counts: s.anchors.as_ref().map_or(d.anchor_counts.clone(), Counts::to_vec),
        trials: s.trials.unwrap_or(d.trials),
        camera: camera(&s)?,
        seed: s.seed.unwrap_or(d.seed),
        solver: solver(d.solver.clone(), &s),
    };
    let records: Vec<GoodBitsRecord> = run_good_bits(&cfg)?
        .into_iter()
        .map(|r| GoodBitsRecord {
            anchors: r.anchors,
            method: r.method,
            tau: r.tau,
            mean_good_bits: r.mean_good_bits,
            std_error: r.std_error,
            trials: r.trials,
        })
        .collect();
    Sink::new(args.out.clone())?.table(&Provenance::new("goodbits", &cfg)?, "goodbits.csv", &records)
}

#[derive(Serialize)]
struct SrlsRecord {
    anchors: usize,
    method: Method,
    #[serde(rename = "mean_SNR_dB")]
    mean_snr_db: f64,
    std_error: f64,
    trials: usize,
}

fn srls_vs_mds(args: &Common) -> Result<()> {
    let s = args.resolve(args.flags(), &keys(&["input_dim"]), "srls-vs-mds")?;
    let d = SrlsConfig::default();
    let cfg = SrlsConfig {
        input_dim: s.input_dim.unwrap_or(d.input_dim),
        anchor_counts: s.anchors.as_ref().map_or(d.anchor_counts.clone(), Counts::to_vec),
        trials: s.trials.unwrap_or(d.trials),
        camera: camera(&s)?,
        seed: s.seed.unwrap_or(d.seed),
    };
    let records: Vec<SrlsRecord> = run_srls_vs_mds(&cfg)?
        .into_iter()
        .map(|r| SrlsRecord {
            anchors: r.anchors,
            method: r.method,
            mean_snr_db: r.mean_snr_db,
            std_error: r.std_error,
            trials: r.trials,
        })
        .collect();
    Sink::new(args.out.clone())?.table(&Provenance::new("srls-vs-mds", &cfg)?, "srls-vs-mds.csv", &records)
}

#[derive(Serialize)]
struct RsvdRecord {
    projections: usize,
    mean_error: f64,
    std_error: f64,
    prototype_error: f64,
    trials: usize,
}

#[derive(Serialize)]
struct VectorRecord {
    projections: usize,
    vector: usize,
    optical_error: f64,
    prototype_error: f64,
}

#[derive(Serialize)]
struct RsvdManifest<'a> {
    command: &'static str,
    config_hash: &'a str,
    config: &'a RsvdConfig,
    trial_seeds: Vec<u64>,
    /// Factors are exported for the first trial at each projection count.
    factor_files: Vec<String>,
}

fn rsvd_config(args: &RsvdArgs) -> Result<RsvdConfig> {
    let mut flags = args.common.flags();
    flags.projections = args.projections.clone().map(Counts::Many);
    flags.matrix = args.matrix;
    flags.cols = args.cols;
    flags.density = args.density;
    flags.decay = args.decay;
    flags.classes = args.classes;
    let allowed = keys(&["rows", "cols", "projections", "matrix", "density", "decay", "classes", "restarts"]);
    let s = args.common.resolve(flags, &allowed, "rsvd")?;
    let d = RsvdConfig::default();
    let paper = s.paper_scale();
    let kind = s.matrix.unwrap_or(MatrixKind::Binary);
    let (rows, cols, projections, trials) = match (kind, paper) {
        (MatrixKind::Digits, false) => (500, 784, vec![7], 1),
        (MatrixKind::Digits, true) => (500, 784, vec![500], 1),
        (_, false) => (d.rows, d.cols, d.projections.clone(), d.trials),
        (_, true) => (10, 10_000, d.projections.clone(), d.trials),
    };
    let matrix = match kind {
        MatrixKind::Binary => TestMatrix::RandomBinary { density: s.density.unwrap_or(0.5) },
        MatrixKind::Planted => TestMatrix::Planted { decay: s.decay.unwrap_or(0.5) },
        MatrixKind::Digits => TestMatrix::DigitLike { classes: s.classes.unwrap_or(10) },
    };
    Ok(RsvdConfig {
        rows: s.rows.unwrap_or(rows),
        cols: s.cols.unwrap_or(cols),
        matrix,
        projections: s.projections.as_ref().map_or(projections, Counts::to_vec),
        trials: s.trials.unwrap_or(trials),
        camera: camera(&s)?,
        anchors: single_anchor_count(&s, d.anchors)?,
        seed: s.seed.unwrap_or(d.seed),
        solver: solver(d.solver, &s),
    })
}

fn rsvd(args: &RsvdArgs) -> Result<()> {
    let cfg = rsvd_config(args)?;
    let prov = Provenance::new("rsvd", &cfg)?;
    let records: Vec<RsvdRecord> = run_rsvd(&cfg)?
        .into_iter()
        .map(|r| RsvdRecord {
            projections: r.projections,
            mean_error: r.mean_error,
            std_error: r.std_error,
            prototype_error: r.prototype_error,
            trials: r.trials,
        })
        .collect();
    let sink = Sink::new(args.common.out.clone())?;
    sink.table(&prov, "rsvd.csv", &records)?;
    let Some(dir) = sink.dir() else {
        return Ok(());
    };

    let first_trial = sub_seed(cfg.seed, 0);
    let mut factor_files = Vec::new();
    let mut vectors = Vec::new();
    for &k in &cfg.projections {
        let f = rsvd_trial_factors(&cfg, k, first_trial)?;
        for (label, factors) in [("optical", &f.optical), ("prototype", &f.prototype)] {
            factor_files.extend(write_factors(&prov, dir, &format!("k{k}_{label}"), factors)?);
        }
        if matches!(cfg.matrix, TestMatrix::DigitLike { .. }) {
            let shown = 7.min(f.optical.rank()).min(f.prototype.rank());
            let reference = dense_right_singular_vectors(&f.matrix, shown);
            let optical = singular_vector_errors(&f.optical.v_t, &reference, shown);
            let prototype = singular_vector_errors(&f.prototype.v_t, &reference, shown);
            vectors.extend((0..shown).map(|i| VectorRecord {
                projections: k,
                vector: i + 1,
                optical_error: optical[i],
                prototype_error: prototype[i],
            }));
        }
    }
    if !vectors.is_empty() {
        prov.write_rows(create(&dir.join("rsvd_vectors.csv"))?, &vectors)?;
    }
    let manifest = RsvdManifest {
        command: "rsvd",
        config_hash: &prov.hash,
        config: &cfg,
        trial_seeds: (0..cfg.trials as u64).map(|t| sub_seed(cfg.seed, t)).collect(),
        factor_files,
    };
    serde_json::to_writer_pretty(create(&dir.join("rsvd_manifest.json"))?, &manifest)?;
    Ok(())
}

fn write_factors(prov: &Provenance, dir: &std::path::Path, stem: &str, f: &Rsvd) -> Result<Vec<String>> {
    let sigma = mpr_core::nalgebra::DMatrix::from_column_slice(f.rank(), 1, f.singular_values.as_slice());
    let mut names = Vec::new();
    for (suffix, m) in [("u", &f.u), ("s", &sigma), ("vt", &f.v_t)] {
        let name = format!("factors/{stem}_{suffix}.csv");
        prov.write_matrix(create(&dir.join(&name))?, m)?;
        names.push(name);
    }
    Ok(names)
}

#[derive(Serialize)]
struct ScalingRecord {
    keep_probability: f64,
    anchors: usize,
    mean_error: f64,
    std_error: f64,
    normalized: f64,
    trials: usize,
}

fn scaling(args: &ScalingArgs) -> Result<()> {
    let mut flags = args.common.flags();
    flags.keep_probability = args.keep_probability.clone().map(Probabilities::Many);
    let allowed = ["seed", "anchors", "bits", "noiseless", "trials", "paper_scale", "keep_probability", "restarts"];
    let s = args.common.resolve(flags, &allowed, "scaling")?;
    let d = ScalingConfig::default();
    let bits = if s.noiseless.unwrap_or(false) { None } else { Some(s.bits.unwrap_or(8)) };
    let base = ScalingConfig {
        bits,
        anchor_counts: s.anchors.as_ref().map_or(d.anchor_counts.clone(), Counts::to_vec),
        trials: s.trials.unwrap_or(d.trials),
        seed: s.seed.unwrap_or(d.seed),
        solver: solver(d.solver.clone(), &s),
        ..d
    };
    let probabilities = s.keep_probability.as_ref().map_or(vec![0.6, 0.9], Probabilities::to_vec);
    let configs: Vec<ScalingConfig> =
        probabilities.iter().map(|&p| ScalingConfig { keep_probability: p, ..base.clone() }).collect();
    let mut records = Vec::new();
    for cfg in &configs {
        records.extend(edm_error_scaling(cfg)?.into_iter().map(|r| ScalingRecord {
            keep_probability: cfg.keep_probability,
            anchors: r.anchors,
            mean_error: r.mean_error,
            std_error: r.std_error,
            normalized: r.normalized,
            trials: cfg.trials,
        }));
    }
    Sink::new(args.common.out.clone())?.table(&Provenance::new("scaling", &configs)?, "scaling.csv", &records)
}

#[derive(Serialize)]
struct DesignRecord {
    sets: usize,
    valid: usize,
    failed: usize,
    retries: usize,
    retry_rate: f64,
}

fn design_refs(args: &DesignArgs) -> Result<()> {
    let mut flags = args.common.flags();
    flags.sets = args.sets;
    flags.alpha = args.alpha;
    flags.frames = args.frames;
    flags.density = args.density;
    let allowed = ["seed", "anchors", "paper_scale", "input_dim", "sets", "alpha", "frames", "density"];
    let s = args.common.resolve(flags, &allowed, "design-refs")?;
    let d = DesignStudyConfig::default();
    let cfg = DesignStudyConfig {
        input_dim: s.input_dim.unwrap_or(d.input_dim),
        frames: s.frames.unwrap_or(d.frames),
        frame_density: s.density.unwrap_or(d.frame_density),
        design: ReferenceDesignConfig {
            flip_probability: s.alpha.unwrap_or(d.design.flip_probability),
            anchor_count: single_anchor_count(&s, d.design.anchor_count)?,
            seed: s.seed.unwrap_or(d.design.seed),
            ..d.design.clone()
        },
        sets: s.sets.unwrap_or(d.sets),
    };
    ensure!(cfg.sets > 0, "need at least one set");
    let study = run_design_study(&cfg)?;
    let record = DesignRecord {
        sets: study.generated,
        valid: study.valid,
        failed: study.failed,
        retries: study.retries,
        retry_rate: study.retry_rate(),
    };
    let prov = Provenance::new("design-refs", &cfg)?;
    let sink = Sink::new(args.common.out.clone())?;
    sink.table(&prov, "design-refs.csv", &[record])?;
    if let Some(dir) = sink.dir() {
        // the first set of the study, for inspection or reuse
        let seed = sub_seed(cfg.design.seed, 0);
        let frames = random_binary_frames(cfg.input_dim, cfg.frames, cfg.frame_density, sub_seed(seed, 1))?;
        if let Ok(refs) = design_binary_references(&frames, &ReferenceDesignConfig { seed, ..cfg.design.clone() }) {
            refs.write_text(create(&dir.join("reference_set.txt"))?)?;
        }
    }
    ensure!(
        study.valid == study.generated,
        "{} of {} anchor sets are invalid ({} exhausted their retries)",
        study.generated - study.valid,
        study.generated,
        study.failed
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Linearity(a) => linearity(a),
        Command::Goodbits(a) => goodbits(a),
        Command::SrlsVsMds(a) => srls_vs_mds(a),
        Command::Rsvd(a) => rsvd(a),
        Command::Scaling(a) => scaling(a),
        Command::DesignRefs(a) => design_refs(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mpr: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! Simulation drivers for the evaluation experiments.
//!
//! Every driver is a pure function of its config: trials draw their matrices,
//! signals and anchors from sub-seeds of `seed`, and run in parallel. Within
//! one trial, all anchor counts share the same transmission matrix, signals
//! and anchor stream (the first `K - 1` anchors are common), so curves over
//! `K` are paired comparisons.
//!
//! Camera exposure is set per trial so that the brightest probe quantizes to
//! `target_peak`; ground truth is expressed on the same camera scale, i.e.
//! recovered points are compared with `sqrt(gain) * <a_m, x>`.

use nalgebra::{DMatrix, DVector, Matrix2xX};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MprError, Result};
use crate::metrics::{good_bits, linearity_error, mean_and_stderr, LinearityTriple};
use crate::opusim::{exposure_for_peak, CameraConfig, SimulatedOpu, TransmissionMatrix};
use crate::probe::{measure_plans, plan_frames, ObservationSet, ProbePlan};
use crate::refdesign::{design_with_report, is_nested, ReferenceDesignConfig};
use crate::rng::{gaussian_vector, rng_from_seed, sub_seed};
use crate::rsvd::{mean_entry_error, planted_spectrum, rsvd_opu, rsvd_prototype, AnchorStrategy, Rsvd};
use crate::solver::{
    center_to_origin, classical_mds, localize, procrustes, solve_mpr, srls_localize_squared, Imputation,
    SolverConfig,
};
use crate::types::{EntryFlag, Frame, PointSet, ReferenceSet};
use crate::Complex64;

/// Localization variants compared by the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// The quantized direct reading `|<a, xi>|^2`, no localization.
    #[serde(rename = "raw")]
    Raw,
    #[serde(rename = "MDS")]
    Mds,
    #[serde(rename = "MDS-GD")]
    MdsGd,
    /// Multilateration against exactly known anchor positions.
    #[serde(rename = "SR-LS-known-anchors")]
    SrlsKnownAnchors,
    /// Classical MDS on all points, aligned to the true anchors.
    #[serde(rename = "MDS-joint")]
    MdsJoint,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::Mds => "MDS",
            Method::MdsGd => "MDS-GD",
            Method::SrlsKnownAnchors => "SR-LS-known-anchors",
            Method::MdsJoint => "MDS-joint",
        }
    }

    fn solver(self, base: &SolverConfig) -> SolverConfig {
        match self {
            Method::MdsGd => base.clone(),
            _ => SolverConfig { gd_max_iters: 0, ..base.clone() },
        }
    }
}

/// Camera settings shared by the experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSettings {
    /// `None` disables quantization.
    pub bits: Option<u32>,
    /// Sensitivity threshold; `None` disables masking.
    pub tau: Option<f64>,
    /// Brightest probe reading after exposure adjustment.
    pub target_peak: f64,
}

impl Default for CameraSettings {
    fn default() -> Self {
        Self { bits: Some(8), tau: None, target_peak: 250.0 }
    }
}

impl CameraSettings {
    pub fn noiseless() -> Self {
        Self { bits: None, tau: None, target_peak: 250.0 }
    }

    /// Reported threshold value (0 when masking is off).
    pub fn tau_value(&self) -> f64 {
        self.tau.unwrap_or(0.0)
    }

    fn camera(&self, binary: bool) -> CameraConfig {
        CameraConfig { bits: self.bits, exposure_gain: 1.0, threshold: self.tau, binary_mode: binary, dark_level: 0.0 }
    }

    /// Projector with exposure set from the raw peak over `plans`. Without
    /// quantization the gain stays 1.
    fn calibrated(&self, matrix: &TransmissionMatrix, plans: &[ProbePlan], binary: bool) -> Result<SimulatedOpu> {
        let mut camera = self.camera(binary);
        if self.bits.is_some() {
            let mut peak: f64 = 0.0;
            for plan in plans {
                let stacked = DMatrix::from_columns(plan.inputs());
                peak = peak.max(matrix.raw_intensities(&stacked)?.max());
            }
            camera.exposure_gain = exposure_for_peak(peak, &camera, self.target_peak)?;
        }
        Ok(SimulatedOpu::new(matrix.clone(), camera))
    }
}

/// Solver settings for the experiment drivers: distances masked by the camera
/// threshold enter classical MDS as zeros (their true value lies in `[0, τ]`)
/// rather than as the mean of the observed distances.
pub fn experiment_solver() -> SolverConfig {
    SolverConfig { imputation: Imputation::Zero, ..SolverConfig::default() }
}

fn gaussian_anchors(n: usize, nonzero: usize, seed: u64) -> Result<ReferenceSet> {
    let mut rng = rng_from_seed(seed);
    ReferenceSet::with_origin((0..nonzero).map(|_| gaussian_vector(n, &mut rng)).collect())
}

fn gaussian_frame(n: usize, index: usize, seed: u64) -> Frame {
    let mut rng = rng_from_seed(seed);
    Frame::new(gaussian_vector(n, &mut rng), index, false).expect("gaussian frames are unconstrained")
}

/// Largest anchor count of a sweep; anchor sets drawn from one seed are
/// prefixes of each other, so this set contains every smaller one.
fn sweep_max(counts: &[usize], current: usize) -> usize {
    counts.iter().copied().fold(current, usize::max)
}

fn check_anchor_counts(counts: &[usize], min: usize) -> Result<()> {
    if counts.is_empty() {
        return Err(MprError::InvalidArgument("no anchor counts given".into()));
    }
    if let Some(&k) = counts.iter().find(|&&k| k < min) {
        return Err(MprError::InvalidArgument(format!("anchor count {k} is below the minimum of {min}")));
    }
    Ok(())
}

fn check_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        return Err(MprError::InvalidArgument("need at least one trial".into()));
    }
    Ok(())
}

/// Probes `frames` against `refs` through a projector whose exposure is set
/// on `calibration`, a superset of `refs`. A sweep over anchor counts passes
/// its largest anchor set so one simulated device keeps one exposure.
fn observe(
    matrix: &TransmissionMatrix,
    frames: &[Frame],
    refs: &ReferenceSet,
    calibration: &ReferenceSet,
    camera: &CameraSettings,
) -> Result<(ObservationSet, Vec<crate::probe::IntensityRecord>, f64)> {
    let plans = plan_frames(frames, refs, false)?;
    let opu = camera.calibrated(matrix, &plan_frames(frames, calibration, false)?, false)?;
    let records = measure_plans(&opu, &plans)?;
    let obs = ObservationSet::from_records(&records, matrix.rows())?;
    Ok((obs, records, opu.camera.exposure_gain))
}

// ---------------------------------------------------------------------------
// linearity

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearityConfig {
    pub input_dim: usize,
    pub rows: usize,
    /// Anchor counts `K`, the origin included.
    pub anchor_counts: Vec<usize>,
    pub trials: usize,
    pub camera: CameraSettings,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl Default for LinearityConfig {
    fn default() -> Self {
        Self {
            input_dim: 64 * 64,
            rows: 100,
            anchor_counts: vec![3, 6, 9, 12, 15],
            trials: 10,
            camera: CameraSettings::default(),
            seed: 0,
            solver: experiment_solver(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearityRow {
    pub anchors: usize,
    pub method: Method,
    pub tau: f64,
    pub mean_error: f64,
    pub std_error: f64,
    pub trials: usize,
    /// Mean fraction of rows kept by the flags over trials.
    pub retained: f64,
}

/// Linearity error and retained-row fraction for one method in one trial.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearityOutcome {
    pub error: f64,
    pub retained: f64,
}

/// One trial at one anchor count: recover `xi_1`, `xi_2` and `xi_1 + xi_2`
/// and score MDS and MDS-GD on the same readings.
pub fn linearity_trial(cfg: &LinearityConfig, anchors: usize, trial_seed: u64) -> Result<[LinearityOutcome; 2]> {
    let n = cfg.input_dim;
    let matrix = TransmissionMatrix::draw(cfg.rows, n, sub_seed(trial_seed, 1))?;
    let xi1 = gaussian_frame(n, 1, sub_seed(trial_seed, 2));
    let xi2 = gaussian_frame(n, 2, sub_seed(trial_seed, 3));
    let sum = Frame::new(xi1.values() + xi2.values(), 3, false)?;
    let refs = gaussian_anchors(n, anchors - 1, sub_seed(trial_seed, 4))?;
    let calibration = gaussian_anchors(n, sweep_max(&cfg.anchor_counts, anchors) - 1, sub_seed(trial_seed, 4))?;
    let (obs, _, _) = observe(&matrix, &[xi1, xi2, sum], &refs, &calibration, &cfg.camera)?;

    let score = |method: Method| -> Result<LinearityOutcome> {
        let rec = solve_mpr(&obs, &method.solver(&cfg.solver))?;
        let keep: Vec<bool> = (0..rec.rows()).map(|m| (0..3).all(|s| rec.is_retained(m, s))).collect();
        let triple = LinearityTriple::new(rec.frame(0), rec.frame(1), rec.frame(2))?;
        let retained = keep.iter().filter(|&&k| k).count() as f64 / keep.len() as f64;
        Ok(LinearityOutcome { error: linearity_error(&triple, Some(&keep))?, retained })
    };
    Ok([score(Method::Mds)?, score(Method::MdsGd)?])
}

pub fn run_linearity(cfg: &LinearityConfig) -> Result<Vec<LinearityRow>> {
    check_anchor_counts(&cfg.anchor_counts, 2)?;
    check_trials(cfg.trials)?;
    let mut rows = Vec::new();
    for &k in &cfg.anchor_counts {
        let outcomes = (0..cfg.trials)
            .into_par_iter()
            .map(|t| linearity_trial(cfg, k, sub_seed(cfg.seed, t as u64)))
            .collect::<Result<Vec<_>>>()?;
        for (i, method) in [Method::Mds, Method::MdsGd].into_iter().enumerate() {
            let errors: Vec<f64> = outcomes.iter().map(|o| o[i].error).collect();
            let (mean_error, std_error) = mean_and_stderr(&errors);
            let retained = outcomes.iter().map(|o| o[i].retained).sum::<f64>() / outcomes.len() as f64;
            rows.push(LinearityRow {
                anchors: k,
                method,
                tau: cfg.camera.tau_value(),
                mean_error,
                std_error,
                trials: cfg.trials,
                retained,
            });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// good bits

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodBitsConfig {
    pub input_dim: usize,
    pub anchor_counts: Vec<usize>,
    pub trials: usize,
    pub camera: CameraSettings,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl Default for GoodBitsConfig {
    fn default() -> Self {
        Self {
            input_dim: 100,
            anchor_counts: (2..=15).collect(),
            trials: 100,
            camera: CameraSettings::default(),
            seed: 0,
            solver: experiment_solver(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodBitsRow {
    pub anchors: usize,
    pub method: Method,
    pub tau: f64,
    pub mean_good_bits: f64,
    pub std_error: f64,
    pub trials: usize,
}

pub const GOOD_BITS_METHODS: [Method; 3] = [Method::Raw, Method::Mds, Method::MdsGd];

/// Good bits of the raw reading, MDS and MDS-GD for one scalar projection.
/// An unlocalizable observation scores as an estimate of zero.
pub fn good_bits_trial(cfg: &GoodBitsConfig, anchors: usize, trial_seed: u64) -> Result<[f64; 3]> {
    let n = cfg.input_dim;
    let matrix = TransmissionMatrix::draw(1, n, sub_seed(trial_seed, 1))?;
    let xi = gaussian_frame(n, 1, sub_seed(trial_seed, 2));
    let refs = gaussian_anchors(n, anchors - 1, sub_seed(trial_seed, 4))?;
    let calibration = gaussian_anchors(n, sweep_max(&cfg.anchor_counts, anchors) - 1, sub_seed(trial_seed, 4))?;
    let truth = matrix.apply(xi.values())[0].norm_sqr();
    let (obs, records, gain) = observe(&matrix, std::slice::from_ref(&xi), &refs, &calibration, &cfg.camera)?;
    let truth = gain * truth;
    let d = &obs.frames[0][0];

    let mut out = [0.0; 3];
    for (slot, method) in out.iter_mut().zip(GOOD_BITS_METHODS) {
        let est = match method {
            Method::Raw => records[0].direct_magnitude(0),
            _ if !d.is_localizable() => 0.0,
            _ => localize(d, &method.solver(&cfg.solver)).complex(0).norm_sqr(),
        };
        *slot = good_bits(truth, est);
    }
    Ok(out)
}

pub fn run_good_bits(cfg: &GoodBitsConfig) -> Result<Vec<GoodBitsRow>> {
    check_anchor_counts(&cfg.anchor_counts, 2)?;
    check_trials(cfg.trials)?;
    let mut rows = Vec::new();
    for &k in &cfg.anchor_counts {
        let outcomes = (0..cfg.trials)
            .into_par_iter()
            .map(|t| good_bits_trial(cfg, k, sub_seed(cfg.seed, t as u64)))
            .collect::<Result<Vec<_>>>()?;
        for (i, method) in GOOD_BITS_METHODS.into_iter().enumerate() {
            let bits: Vec<f64> = outcomes.iter().map(|o| o[i]).collect();
            let (mean_good_bits, std_error) = mean_and_stderr(&bits);
            rows.push(GoodBitsRow {
                anchors: k,
                method,
                tau: cfg.camera.tau_value(),
                mean_good_bits,
                std_error,
                trials: cfg.trials,
            });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// known vs unknown anchors

/// Cap on per-trial SNR so exact recoveries keep averages finite.
pub const SNR_CAP_DB: f64 = 300.0;

pub fn snr_db(truth: Complex64, est: Complex64) -> f64 {
    let err = (truth - est).norm_sqr();
    if err == 0.0 {
        return SNR_CAP_DB;
    }
    (10.0 * (truth.norm_sqr() / err).log10()).min(SNR_CAP_DB)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrlsConfig {
    pub input_dim: usize,
    pub anchor_counts: Vec<usize>,
    pub trials: usize,
    pub camera: CameraSettings,
    pub seed: u64,
}

impl Default for SrlsConfig {
    fn default() -> Self {
        Self {
            input_dim: 64 * 64,
            anchor_counts: (3..=15).collect(),
            trials: 100,
            camera: CameraSettings::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrlsRow {
    pub anchors: usize,
    pub method: Method,
    pub mean_snr_db: f64,
    pub std_error: f64,
    pub trials: usize,
}

/// SNR in dB of SR-LS with the true anchor positions and of classical MDS
/// aligned to them, for one scalar projection.
pub fn srls_trial(cfg: &SrlsConfig, anchors: usize, trial_seed: u64) -> Result<[f64; 2]> {
    let n = cfg.input_dim;
    let matrix = TransmissionMatrix::draw(1, n, sub_seed(trial_seed, 1))?;
    let xi = gaussian_frame(n, 1, sub_seed(trial_seed, 2));
    let refs = gaussian_anchors(n, anchors - 1, sub_seed(trial_seed, 4))?;
    let calibration = gaussian_anchors(n, sweep_max(&cfg.anchor_counts, anchors) - 1, sub_seed(trial_seed, 4))?;
    let (obs, records, gain) = observe(&matrix, std::slice::from_ref(&xi), &refs, &calibration, &cfg.camera)?;
    let scale = gain.sqrt();
    let q = refs.point_count();
    let truth: Vec<Complex64> = (0..q).map(|c| matrix.apply(refs.column(&xi, c))[0] * scale).collect();
    let true_anchors = PointSet::from_complex(&truth[1..]);

    // ranges from the signal to each anchor, unmasked ones only
    let rec = &records[0];
    let (mut cols, mut d2) = (Vec::new(), Vec::new());
    for r in 1..q {
        let k = rec.pairs.iter().position(|&p| p == (0, r)).expect("plan covers all pairs");
        if rec.measurements[k].mask[0] {
            cols.push(true_anchors.point(r - 1));
            d2.push(rec.measurements[k].intensities[0]);
        }
    }
    let srls = if cols.len() >= 3 {
        match srls_localize_squared(&Matrix2xX::from_columns(&cols), &d2) {
            Ok(x) => Complex64::new(x[0], x[1]),
            Err(MprError::Underdetermined(_)) => Complex64::new(0.0, 0.0),
            Err(e) => return Err(e),
        }
    } else {
        Complex64::new(0.0, 0.0)
    };

    let d = &obs.frames[0][0];
    let joint = if d.is_localizable() {
        let solver = SolverConfig::mds_only();
        let pts = center_to_origin(&classical_mds(d, &solver));
        let fit = procrustes(&true_anchors.points, &pts.tail(1).points);
        pts.transformed(&fit.rotation).complex(0)
    } else {
        Complex64::new(0.0, 0.0)
    };
    Ok([snr_db(truth[0], srls), snr_db(truth[0], joint)])
}

pub fn run_srls_vs_mds(cfg: &SrlsConfig) -> Result<Vec<SrlsRow>> {
    check_anchor_counts(&cfg.anchor_counts, 3)?;
    check_trials(cfg.trials)?;
    let mut rows = Vec::new();
    for &k in &cfg.anchor_counts {
        let outcomes = (0..cfg.trials)
            .into_par_iter()
            .map(|t| srls_trial(cfg, k, sub_seed(cfg.seed, t as u64)))
            .collect::<Result<Vec<_>>>()?;
        for (i, method) in [Method::SrlsKnownAnchors, Method::MdsJoint].into_iter().enumerate() {
            let snr: Vec<f64> = outcomes.iter().map(|o| o[i]).collect();
            let (mean_snr_db, std_error) = mean_and_stderr(&snr);
            rows.push(SrlsRow { anchors: k, method, mean_snr_db, std_error, trials: cfg.trials });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// gauge contract

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeConfig {
    pub input_dim: usize,
    pub rows: usize,
    pub frames: usize,
    pub anchors: usize,
    pub camera: CameraSettings,
    pub solver: SolverConfig,
}

impl Default for GaugeConfig {
    fn default() -> Self {
        Self { input_dim: 256, rows: 50, frames: 3, anchors: 9, camera: CameraSettings::default(), solver: experiment_solver() }
    }
}

/// Unit phase and conjugation bit taking `truth` closest to `est` in least
/// squares: `est ≈ phase * (conj?)(truth)`.
pub fn fit_row_gauge(est: &[Complex64], truth: &[Complex64]) -> (Complex64, bool) {
    let fit = |conj: bool| {
        let t = |v: Complex64| if conj { v.conj() } else { v };
        let s: Complex64 = est.iter().zip(truth).map(|(e, &v)| e * t(v).conj()).sum();
        let phase = if s.norm() > 0.0 { s / s.norm() } else { Complex64::new(1.0, 0.0) };
        let residual: f64 = est.iter().zip(truth).map(|(e, &v)| (e - phase * t(v)).norm_sqr()).sum();
        (phase, residual)
    };
    let (p0, r0) = fit(false);
    let (p1, r1) = fit(true);
    if r1 < r0 {
        (p1, true)
    } else {
        (p0, false)
    }
}

pub fn apply_gauge(v: Complex64, phase: Complex64, conj: bool) -> Complex64 {
    phase * if conj { v.conj() } else { v }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeReport {
    /// Per-entry `|Y[m,s] - R_m(y[m,s])| / |y[m,s]|` over retained entries of
    /// frames after the first.
    pub errors: Vec<f64>,
    /// Entries skipped because a flag was raised.
    pub skipped: usize,
}

impl GaugeReport {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean_error(&self) -> f64 {
        self.errors.iter().sum::<f64>() / self.errors.len().max(1) as f64
    }
}

/// Solves a random instance, fits each row's gauge on frame 1 (signal and
/// anchors), and measures how well that gauge explains the remaining frames.
pub fn gauge_trial(cfg: &GaugeConfig, seed: u64) -> Result<GaugeReport> {
    if cfg.frames < 2 {
        return Err(MprError::InvalidArgument("gauge check needs at least two frames".into()));
    }
    let n = cfg.input_dim;
    let matrix = TransmissionMatrix::draw(cfg.rows, n, sub_seed(seed, 1))?;
    let frames: Vec<Frame> = (0..cfg.frames).map(|s| gaussian_frame(n, s + 1, sub_seed(seed, 10 + s as u64))).collect();
    let refs = gaussian_anchors(n, cfg.anchors - 1, sub_seed(seed, 4))?;
    let (obs, _, gain) = observe(&matrix, &frames, &refs, &refs, &cfg.camera)?;
    let rec = solve_mpr(&obs, &cfg.solver)?;
    let scale = gain.sqrt();

    let q = refs.point_count();
    let truth_of = |x: &DVector<f64>| -> Vec<Complex64> { matrix.apply(x).into_iter().map(|v| v * scale).collect() };
    let anchor_truth: Vec<Vec<Complex64>> = (1..q).map(|c| truth_of(refs.column(&frames[0], c))).collect();
    let frame_truth: Vec<Vec<Complex64>> = frames.iter().map(|f| truth_of(f.values())).collect();

    let mut report = GaugeReport { errors: Vec::new(), skipped: 0 };
    for m in 0..rec.rows() {
        let Some(anchors) = rec.reference_anchors[m].as_ref().filter(|_| rec.is_retained(m, 0)) else {
            report.skipped += cfg.frames - 1;
            continue;
        };
        let mut est = vec![rec.y[(m, 0)]];
        let mut truth = vec![frame_truth[0][m]];
        for c in 0..q - 1 {
            est.push(anchors.complex(c));
            truth.push(anchor_truth[c][m]);
        }
        let (phase, conj) = fit_row_gauge(&est, &truth);
        for s in 1..cfg.frames {
            if rec.flags[(m, s)] != EntryFlag::Ok {
                report.skipped += 1;
                continue;
            }
            let t = frame_truth[s][m];
            report.errors.push((rec.y[(m, s)] - apply_gauge(t, phase, conj)).norm() / t.norm());
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// randomized SVD

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TestMatrix {
    /// Random orthonormal factors with singular values `decay^i`, `i < rows`.
    Planted { decay: f64 },
    /// iid Bernoulli entries.
    RandomBinary { density: f64 },
    /// Binarized blob images, one per row; `cols` must be a square.
    DigitLike { classes: usize },
}

impl TestMatrix {
    pub fn draw(&self, rows: usize, cols: usize, seed: u64) -> Result<DMatrix<f64>> {
        match *self {
            TestMatrix::Planted { decay } => {
                let r = rows.min(cols);
                let spectrum: Vec<f64> = (0..r).map(|i| decay.powi(i as i32)).collect();
                Ok(planted_spectrum(rows, cols, &spectrum, seed))
            }
            TestMatrix::RandomBinary { density } => {
                if !(0.0..=1.0).contains(&density) {
                    return Err(MprError::InvalidArgument(format!("density {density} not in [0, 1]")));
                }
                let mut rng = rng_from_seed(seed);
                Ok(DMatrix::from_fn(rows, cols, |_, _| if rng.random::<f64>() < density { 1.0 } else { 0.0 }))
            }
            TestMatrix::DigitLike { classes } => {
                let side = (cols as f64).sqrt().round() as usize;
                if side * side != cols {
                    return Err(MprError::InvalidArgument(format!("digit-like images need a square column count, got {cols}")));
                }
                Ok(digit_like_matrix(rows, side, classes, seed))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RsvdConfig {
    pub rows: usize,
    pub cols: usize,
    pub matrix: TestMatrix,
    /// Projector row counts `K`; the sketch has `2K` columns.
    pub projections: Vec<usize>,
    pub trials: usize,
    pub camera: CameraSettings,
    /// Anchor count, the origin included.
    pub anchors: usize,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl Default for RsvdConfig {
    fn default() -> Self {
        Self {
            rows: 10,
            cols: 1000,
            matrix: TestMatrix::RandomBinary { density: 0.5 },
            projections: vec![2, 5, 10, 20],
            trials: 10,
            camera: CameraSettings::default(),
            anchors: 5,
            seed: 0,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RsvdRow {
    pub projections: usize,
    /// Mean absolute per-entry error of the optical factorization.
    pub mean_error: f64,
    pub std_error: f64,
    /// Same statistic for the Gaussian-sketch prototype with target `K`.
    pub prototype_error: f64,
    pub trials: usize,
}

/// Matrix, optical factorization and prototype factorization of one trial.
#[derive(Clone, Debug)]
pub struct RsvdFactors {
    pub matrix: DMatrix<f64>,
    pub optical: Rsvd,
    pub prototype: Rsvd,
}

/// Per-entry reconstruction error of the optical and prototype factorizations
/// for one trial with `k` projections.
pub fn rsvd_trial(cfg: &RsvdConfig, k: usize, trial_seed: u64) -> Result<(f64, f64)> {
    let f = rsvd_trial_factors(cfg, k, trial_seed)?;
    Ok((mean_entry_error(&f.matrix, &f.optical), mean_entry_error(&f.matrix, &f.prototype)))
}

pub fn rsvd_trial_factors(cfg: &RsvdConfig, k: usize, trial_seed: u64) -> Result<RsvdFactors> {
    let b = cfg.matrix.draw(cfg.rows, cfg.cols, sub_seed(trial_seed, 1))?;
    let matrix = TransmissionMatrix::draw(k, cfg.cols, sub_seed(trial_seed, 2))?;
    let strategy = AnchorStrategy::Gaussian { count: cfg.anchors, scale: None, seed: sub_seed(trial_seed, 3) };
    let frames = (0..b.nrows())
        .map(|i| Frame::new(b.row(i).transpose(), i + 1, false))
        .collect::<Result<Vec<_>>>()?;
    let refs = strategy.references(&frames)?;
    let opu = cfg.camera.calibrated(&matrix, &plan_frames(&frames, &refs, false)?, false)?;
    let optical = rsvd_opu(&b, k, &opu, &cfg.solver, &strategy)?;
    let prototype = rsvd_prototype(&b, k, sub_seed(trial_seed, 4))?;
    Ok(RsvdFactors { matrix: b, optical, prototype })
}

pub fn run_rsvd(cfg: &RsvdConfig) -> Result<Vec<RsvdRow>> {
    check_trials(cfg.trials)?;
    if cfg.projections.is_empty() || cfg.projections.contains(&0) {
        return Err(MprError::InvalidArgument("projection counts must be positive".into()));
    }
    if cfg.anchors < 3 {
        return Err(MprError::InvalidArgument(format!("need at least 3 anchors, got {}", cfg.anchors)));
    }
    let mut rows = Vec::new();
    for &k in &cfg.projections {
        let outcomes = (0..cfg.trials)
            .into_par_iter()
            .map(|t| rsvd_trial(cfg, k, sub_seed(cfg.seed, t as u64)))
            .collect::<Result<Vec<_>>>()?;
        let errors: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
        let (mean_error, std_error) = mean_and_stderr(&errors);
        let prototype_error = outcomes.iter().map(|o| o.1).sum::<f64>() / outcomes.len() as f64;
        rows.push(RsvdRow { projections: k, mean_error, std_error, prototype_error, trials: cfg.trials });
    }
    Ok(rows)
}

/// Relative error between matched right singular vectors, sign-aligned:
/// `min(‖v̂ - v‖, ‖v̂ + v‖) / ‖v‖` for each of the leading `k`.
pub fn singular_vector_errors(estimate: &DMatrix<f64>, reference: &DMatrix<f64>, k: usize) -> Vec<f64> {
    (0..k)
        .map(|i| {
            let (e, r) = (estimate.row(i), reference.row(i));
            (e - r).norm().min((e + r).norm()) / r.norm()
        })
        .collect()
}

/// Binary images of `side x side` pixels built from a few random blob
/// templates with pixel flips, one vectorized image per row.
pub fn digit_like_matrix(count: usize, side: usize, classes: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    let templates: Vec<Vec<(f64, f64, f64)>> = (0..classes.max(1))
        .map(|_| {
            (0..4)
                .map(|_| {
                    let c = side as f64;
                    (rng.random_range(0.25 * c..0.75 * c), rng.random_range(0.25 * c..0.75 * c), rng.random_range(0.08 * c..0.2 * c))
                })
                .collect()
        })
        .collect();
    DMatrix::from_fn(count, side * side, |_, _| 0.0).map_with_location(|i, j, _| {
        let blobs = &templates[i % templates.len()];
        let (x, y) = ((j % side) as f64, (j / side) as f64);
        let inside = blobs.iter().any(|&(cx, cy, r)| (x - cx).powi(2) + (y - cy).powi(2) <= r * r);
        let flip = rng.random::<f64>() < 0.05;
        if inside != flip {
            1.0
        } else {
            0.0
        }
    })
}

// ---------------------------------------------------------------------------
// binary reference design

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignStudyConfig {
    pub input_dim: usize,
    /// Number of random binary frames the anchors must cover.
    pub frames: usize,
    pub frame_density: f64,
    pub design: ReferenceDesignConfig,
    pub sets: usize,
}

impl Default for DesignStudyConfig {
    fn default() -> Self {
        Self {
            input_dim: 64 * 64,
            frames: 2,
            frame_density: 0.1,
            design: ReferenceDesignConfig { flip_probability: 0.2, anchor_count: 9, ..Default::default() },
            sets: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignStudy {
    pub generated: usize,
    pub valid: usize,
    /// Sets that exhausted every retry.
    pub failed: usize,
    /// Regenerations beyond the first attempt, summed over sets.
    pub retries: usize,
}

impl DesignStudy {
    pub fn retry_rate(&self) -> f64 {
        self.retries as f64 / self.generated.max(1) as f64
    }
}

/// Random binary frames for the design study.
pub fn random_binary_frames(n: usize, count: usize, density: f64, seed: u64) -> Result<Vec<Frame>> {
    let mut rng = rng_from_seed(seed);
    (0..count)
        .map(|s| {
            let v = DVector::from_fn(n, |_, _| if rng.random::<f64>() < density { 1.0 } else { 0.0 });
            Frame::new(v, s + 1, true)
        })
        .collect()
}

/// Every pairwise difference among the frame and anchor columns is `{0,1}`
/// in one orientation.
pub fn differences_are_binary(refs: &ReferenceSet, frames: &[Frame]) -> bool {
    frames.iter().all(|f| ProbePlan::new(f, refs, true).is_ok())
}

/// Generates `sets` anchor sets with independent seeds and validates each.
pub fn run_design_study(cfg: &DesignStudyConfig) -> Result<DesignStudy> {
    let results: Vec<(bool, bool, usize)> = (0..cfg.sets)
        .into_par_iter()
        .map(|i| -> Result<(bool, bool, usize)> {
            let seed = sub_seed(cfg.design.seed, i as u64);
            let frames = random_binary_frames(cfg.input_dim, cfg.frames, cfg.frame_density, sub_seed(seed, 1))?;
            let design = ReferenceDesignConfig { seed, ..cfg.design.clone() };
            match design_with_report(&frames, &design) {
                Ok(rep) => {
                    let ok = is_nested(&rep.references) && differences_are_binary(&rep.references, &frames);
                    Ok((ok, false, rep.attempts - 1))
                }
                Err(MprError::DesignExhausted { attempts, .. }) => Ok((false, true, attempts - 1)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DesignStudy {
        generated: cfg.sets,
        valid: results.iter().filter(|r| r.0).count(),
        failed: results.iter().filter(|r| r.1).count(),
        retries: results.iter().map(|r| r.2).sum(),
    })
}

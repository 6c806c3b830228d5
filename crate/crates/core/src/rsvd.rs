//! Randomized SVD with either a Gaussian sketch or an optical one.
//!
//! The optical variant pushes every row of `B` through the phase-retrieval
//! pipeline against a projector with `K` rows. Real and imaginary parts of the
//! recovered projections are independent Gaussian sketches, so stacking them
//! gives a `2K`-column sketch from only `K` projections.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MprError, Result};
use crate::opusim::Opu;
use crate::probe::acquire;
use crate::refdesign::{design_binary_references, ReferenceDesignConfig};
use crate::rng::{gaussian_vector, rng_from_seed, sub_seed};
use crate::solver::{solve_mpr, SolverConfig};
use crate::types::{EntryFlag, Frame, ReferenceSet};
use crate::Complex64;

const GAUGE_STREAM: u64 = 0x6761_7567;

/// Factors `U Σ Vᵀ`, singular values nonincreasing.
#[derive(Clone, Debug)]
pub struct Rsvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

impl Rsvd {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.singular_values) * &self.v_t
    }

    /// Leading `k` components.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.rank());
        Self {
            u: self.u.columns(0, k).into_owned(),
            singular_values: self.singular_values.rows(0, k).into_owned(),
            v_t: self.v_t.rows(0, k).into_owned(),
        }
    }
}

/// Mean absolute entry of `B - U Σ Vᵀ`.
pub fn mean_entry_error(b: &DMatrix<f64>, f: &Rsvd) -> f64 {
    (b - f.reconstruct()).abs().mean()
}

/// Orthonormal basis for the range of `y` via Householder QR.
pub fn orthonormal_basis(y: &DMatrix<f64>) -> DMatrix<f64> {
    y.clone().qr().q()
}

/// Steps shared by both variants: orthonormalize the sketch, project, and take
/// the SVD of the small matrix. `power_iterations` extra passes of `B Bᵀ`
/// sharpen the range (0 reproduces the plain algorithm).
pub fn rsvd_from_sketch(b: &DMatrix<f64>, sketch: &DMatrix<f64>, power_iterations: usize) -> Result<Rsvd> {
    if sketch.nrows() != b.nrows() {
        return Err(MprError::Shape(format!("sketch has {} rows, matrix has {}", sketch.nrows(), b.nrows())));
    }
    if sketch.ncols() == 0 {
        return Err(MprError::InvalidArgument("empty sketch".into()));
    }
    let mut q = orthonormal_basis(sketch);
    for _ in 0..power_iterations {
        let z = orthonormal_basis(&(b.transpose() * &q));
        q = orthonormal_basis(&(b * z));
    }
    let c = q.transpose() * b;
    let svd = c.svd(true, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let small_u = svd.u.expect("requested U");
    let v_t_full = svd.v_t.expect("requested Vᵀ");
    let small_u = DMatrix::from_fn(small_u.nrows(), order.len(), |r, c| small_u[(r, order[c])]);
    let v_t = DMatrix::from_fn(order.len(), v_t_full.ncols(), |r, c| v_t_full[(order[r], c)]);
    let singular_values = DVector::from_iterator(order.len(), order.iter().map(|&i| svd.singular_values[i]));
    Ok(Rsvd { u: q * small_u, singular_values, v_t })
}

fn check_target(b: &DMatrix<f64>, k: usize) -> Result<()> {
    if k == 0 {
        return Err(MprError::InvalidArgument("target rank must be at least 1".into()));
    }
    if b.is_empty() {
        return Err(MprError::InvalidArgument("empty matrix".into()));
    }
    Ok(())
}

/// Gaussian-sketch randomized SVD with `2K` sketch columns.
pub fn rsvd_prototype(b: &DMatrix<f64>, k: usize, seed: u64) -> Result<Rsvd> {
    rsvd_prototype_with(b, k, seed, 0)
}

pub fn rsvd_prototype_with(b: &DMatrix<f64>, k: usize, seed: u64, power_iterations: usize) -> Result<Rsvd> {
    check_target(b, k)?;
    let mut rng = rng_from_seed(seed);
    let omega = DMatrix::from_fn(b.ncols(), 2 * k, |_, _| rng.sample::<f64, _>(StandardNormal));
    rsvd_from_sketch(b, &(b * omega), power_iterations)
}

/// How anchors are chosen for the optical sketch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AnchorStrategy {
    /// Nested binary anchors for `{0,1}`-input projectors.
    Binary(ReferenceDesignConfig),
    /// iid Gaussian anchors; `scale = None` matches the RMS entry of `B`.
    Gaussian { count: usize, scale: Option<f64>, seed: u64 },
}

impl Default for AnchorStrategy {
    fn default() -> Self {
        AnchorStrategy::Gaussian { count: 5, scale: None, seed: 0 }
    }
}

impl AnchorStrategy {
    pub fn seed(&self) -> u64 {
        match self {
            AnchorStrategy::Binary(cfg) => cfg.seed,
            AnchorStrategy::Gaussian { seed, .. } => *seed,
        }
    }

    pub fn references(&self, frames: &[Frame]) -> Result<ReferenceSet> {
        match self {
            AnchorStrategy::Binary(cfg) => design_binary_references(frames, cfg),
            AnchorStrategy::Gaussian { count, scale, seed } => {
                if *count < 2 {
                    return Err(MprError::InvalidArgument(format!("need at least 2 anchors, got {count}")));
                }
                let n = frames.first().map(Frame::len).unwrap_or(0);
                let scale = scale.unwrap_or_else(|| {
                    let total: f64 = frames.iter().map(|f| f.values().norm_squared()).sum();
                    (total / (n * frames.len()).max(1) as f64).sqrt()
                });
                let mut rng = rng_from_seed(*seed);
                ReferenceSet::with_origin((0..count - 1).map(|_| gaussian_vector(n, &mut rng) * scale).collect())
            }
        }
    }
}

/// The `M x 2K` sketch `[Re(Y*) Im(Y*)]` where `Y` holds the recovered
/// projections of every row of `B` (one frame per row).
///
/// The solver picks each projector row's phase and conjugation from the
/// first frame's geometry, which depends on that row. A seeded uniform phase
/// and fair conjugation coin per row make the stacked columns exactly
/// Gaussian-distributed; the sketch's range, and so the factorization, does
/// not change.
pub fn opu_sketch(b: &DMatrix<f64>, opu: &dyn Opu, solver: &SolverConfig, anchors: &AnchorStrategy) -> Result<DMatrix<f64>> {
    if b.ncols() != opu.input_dim() {
        return Err(MprError::Shape(format!("matrix has {} columns, projector takes {}", b.ncols(), opu.input_dim())));
    }
    let frames = (0..b.nrows())
        .map(|i| Frame::new(b.row(i).transpose(), i + 1, opu.binary_inputs()))
        .collect::<Result<Vec<_>>>()?;
    let refs = anchors.references(&frames)?;
    let (_, obs) = acquire(opu, &frames, &refs)?;
    let y = solve_mpr(&obs, solver)?;
    let k = opu.output_dim();
    for proj in 0..k {
        for row in 0..b.nrows() {
            if y.flags[(proj, row)] == EntryFlag::Unlocalizable {
                return Err(MprError::Unlocalizable { row: proj, frame: row });
            }
        }
    }
    let mut rng = rng_from_seed(sub_seed(anchors.seed(), GAUGE_STREAM));
    let gauges: Vec<(Complex64, bool)> =
        (0..k).map(|_| (Complex64::from_polar(1.0, rng.random_range(0.0..TAU)), rng.random::<bool>())).collect();
    let gauged = |proj: usize, row: usize| {
        let (phase, conj) = gauges[proj];
        let v = phase * y.y[(proj, row)];
        if conj {
            v.conj()
        } else {
            v
        }
    };
    Ok(DMatrix::from_fn(b.nrows(), 2 * k, |i, j| if j < k { gauged(j, i).re } else { -gauged(j - k, i).im }))
}

/// Randomized SVD whose sketch comes from a `K`-row projector.
pub fn rsvd_opu(b: &DMatrix<f64>, k: usize, opu: &dyn Opu, solver: &SolverConfig, anchors: &AnchorStrategy) -> Result<Rsvd> {
    check_target(b, k)?;
    if opu.output_dim() != k {
        return Err(MprError::Shape(format!("projector has {} rows, target rank is {k}", opu.output_dim())));
    }
    rsvd_from_sketch(b, &opu_sketch(b, opu, solver, anchors)?, 0)
}

/// Leading `k` right singular vectors of `B` from a dense SVD, as rows.
pub fn dense_right_singular_vectors(b: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let svd = b.clone().svd(false, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let v_t = svd.v_t.expect("requested Vᵀ");
    DMatrix::from_fn(k.min(order.len()), b.ncols(), |i, j| v_t[(order[i], j)])
}

/// `B = U diag(spectrum) Vᵀ` with random orthonormal `U` (`m x r`) and `V` (`n x r`).
pub fn planted_spectrum(m: usize, n: usize, spectrum: &[f64], seed: u64) -> DMatrix<f64> {
    let r = spectrum.len();
    let mut rng = rng_from_seed(seed);
    let gu = DMatrix::from_fn(m, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let gv = DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let u = orthonormal_basis(&gu).columns(0, r).into_owned();
    let v = orthonormal_basis(&gv).columns(0, r).into_owned();
    u * DMatrix::from_diagonal(&DVector::from_column_slice(spectrum)) * v.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opusim::{CameraConfig, SimulatedOpu, TransmissionMatrix};

    fn assert_orthonormal_columns(m: &DMatrix<f64>) {
        let gram = m.transpose() * m;
        let err = (gram - DMatrix::identity(m.ncols(), m.ncols())).abs().max();
        assert!(err < 1e-10, "loss of orthogonality {err}");
    }

    #[test]
    fn rank_one_is_captured_exactly() {
        let u = DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5]);
        let v = DVector::from_vec(vec![3.0, 0.0, 1.0, -2.0, 1.0]);
        let b = &u * v.transpose();
        let f = rsvd_prototype(&b, 1, 5).unwrap();
        assert!((f.singular_values[0] - u.norm() * v.norm()).abs() < 1e-10);
        assert!((&b - f.reconstruct()).norm() < 1e-10);
        assert!((&b - f.truncated(1).reconstruct()).norm() < 1e-10);
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let f = rsvd_prototype(&DMatrix::identity(3, 3), 3, 1).unwrap();
        assert_eq!(f.rank(), 3);
        for s in f.singular_values.iter() {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn planted_spectrum_matches_dense_svd() {
        let spectrum = [1.0, 0.5, 0.25, 1e-8, 1e-8, 1e-8, 1e-8, 1e-8, 1e-8, 1e-8];
        let b = planted_spectrum(10, 100, &spectrum, 2);
        let dense = b.clone().svd(false, false).singular_values;
        let f = rsvd_prototype(&b, 3, 3).unwrap();
        for i in 0..3 {
            assert!((f.singular_values[i] - spectrum[i]).abs() < 1e-6);
            assert!((f.singular_values[i] - dense[i]).abs() < 1e-6);
        }
        assert!(f.singular_values.as_slice().windows(2).all(|w| w[0] >= w[1]));
        assert_orthonormal_columns(&f.u);
        assert_orthonormal_columns(&f.v_t.transpose());
    }

    #[test]
    fn power_iterations_do_not_hurt() {
        let spectrum: Vec<f64> = (0..10).map(|i| 0.7f64.powi(i)).collect();
        let b = planted_spectrum(10, 200, &spectrum, 4);
        let plain = mean_entry_error(&b, &rsvd_prototype_with(&b, 2, 6, 0).unwrap().truncated(2));
        let powered = mean_entry_error(&b, &rsvd_prototype_with(&b, 2, 6, 2).unwrap().truncated(2));
        assert!(powered <= plain * 1.0001);
    }

    #[test]
    fn orthonormal_basis_is_stable_on_ill_conditioned_input() {
        let mut rng = rng_from_seed(3);
        let base = DMatrix::from_fn(50, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let scales = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-3, 1e-6, 1e-9, 1e-11, 1e-12]));
        let q = orthonormal_basis(&(base * scales));
        assert_orthonormal_columns(&q);
    }

    #[test]
    fn rejects_zero_rank() {
        assert!(rsvd_prototype(&DMatrix::identity(3, 3), 0, 1).is_err());
    }

    #[test]
    fn optical_sketch_width_is_twice_projection_count() {
        let b = planted_spectrum(6, 40, &[1.0, 0.5, 0.2], 1);
        let opu = SimulatedOpu::new(TransmissionMatrix::draw(3, 40, 2).unwrap(), CameraConfig::noiseless());
        let p = opu_sketch(&b, &opu, &SolverConfig::default(), &AnchorStrategy::default()).unwrap();
        assert_eq!(p.shape(), (6, 6));
        let omega = DMatrix::from_fn(40, 6, |_, _| 0.0);
        assert_eq!((&b * omega).shape(), p.shape());
    }

    #[test]
    fn noiseless_optical_sketch_is_b_times_gauged_matrix() {
        // With exact distances, P = B [Re Ãᵀ, -Im Ãᵀ] for the gauged Ã, so the
        // sketch lies in the row space image of B and the factorization is exact
        // when the sketch spans range(B).
        let b = planted_spectrum(5, 30, &[1.0, 0.6, 0.3], 7);
        let opu = SimulatedOpu::new(TransmissionMatrix::draw(2, 30, 8).unwrap(), CameraConfig::noiseless());
        let f = rsvd_opu(&b, 2, &opu, &SolverConfig::default(), &AnchorStrategy::default()).unwrap();
        assert!((&b - f.reconstruct()).norm() < 1e-8 * b.norm());
    }

    #[test]
    fn binary_projector_with_designed_anchors() {
        let mut rng = rng_from_seed(12);
        let b = DMatrix::from_fn(6, 256, |_, _| if rng.random::<f64>() < 0.15 { 1.0 } else { 0.0 });
        let cam = CameraConfig { binary_mode: true, ..CameraConfig::noiseless() };
        let opu = SimulatedOpu::new(TransmissionMatrix::draw(4, 256, 13).unwrap(), cam);
        let anchors = AnchorStrategy::Binary(ReferenceDesignConfig { anchor_count: 5, seed: 2, ..Default::default() });
        let f = rsvd_opu(&b, 4, &opu, &SolverConfig::default(), &anchors).unwrap();
        let proto = rsvd_prototype(&b, 4, 3).unwrap();
        assert!(mean_entry_error(&b, &f) < 1e-8);
        assert!(mean_entry_error(&b, &proto) < 1e-8);
    }

    #[test]
    fn projector_row_count_must_match_target() {
        let b = planted_spectrum(4, 20, &[1.0], 1);
        let opu = SimulatedOpu::new(TransmissionMatrix::draw(3, 20, 2).unwrap(), CameraConfig::noiseless());
        assert!(rsvd_opu(&b, 2, &opu, &SolverConfig::default(), &AnchorStrategy::default()).is_err());
    }
}

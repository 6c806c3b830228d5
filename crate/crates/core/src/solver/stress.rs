use nalgebra::{DMatrix, Matrix2xX};

use super::SolverConfig;
use crate::rng::{gaussian_vector, rng_from_seed, sub_seed};
use crate::types::{DistanceObservation, PointSet};

/// Masked squared stress `‖W ⊙ (D - K(ZᵀZ))‖²_F` and its gradient in `Z`.
///
/// With `E = W ⊙ (K(ZᵀZ) - D)` the gradient is `8 Z (diag(E 1) - E)`.
pub fn squared_stress(z: &PointSet, obs: &DistanceObservation) -> (f64, Matrix2xX<f64>) {
    let q = z.len();
    assert_eq!(q, obs.point_count(), "point set and observation disagree on Q");
    let mut residual = DMatrix::zeros(q, q);
    let mut value = 0.0;
    for i in 0..q {
        for j in i + 1..q {
            if obs.mask[(i, j)] == 0.0 {
                continue;
            }
            let dx = z.points[(0, i)] - z.points[(0, j)];
            let dy = z.points[(1, i)] - z.points[(1, j)];
            let e = dx * dx + dy * dy - obs.d2[(i, j)];
            residual[(i, j)] = e;
            residual[(j, i)] = e;
            value += 2.0 * e * e;
        }
    }
    let mut laplacian = -residual;
    for i in 0..q {
        laplacian[(i, i)] = -laplacian.row(i).sum();
    }
    (value, 8.0 * &z.points * laplacian)
}

/// Result of [`refine_gd_traced`]: the refined points and the stress after
/// every accepted step (the first entry is the initial stress).
#[derive(Clone, Debug)]
pub struct GdOutcome {
    pub points: PointSet,
    pub trace: Vec<f64>,
}

impl GdOutcome {
    pub fn iterations(&self) -> usize {
        self.trace.len() - 1
    }
}

/// Gradient descent on the masked squared stress.
pub fn refine_gd(obs: &DistanceObservation, init: &PointSet, cfg: &SolverConfig) -> PointSet {
    refine_gd_traced(obs, init, cfg).points
}

/// [`refine_gd`] from `init` and from `cfg.gd_restarts` random Gaussian
/// starts sized to the observed distances, keeping the lowest final stress.
/// Random starts are skipped on complete observations, where the MDS start
/// already sits in the right basin.
pub fn refine_multistart(obs: &DistanceObservation, init: &PointSet, cfg: &SolverConfig) -> PointSet {
    let mut best = refine_gd(obs, init, cfg);
    let q = obs.point_count();
    let missing = obs.observed_pairs() < q * (q - 1) / 2;
    if cfg.gd_restarts == 0 || !missing || obs.observed_pairs() == 0 {
        return best;
    }
    let mut best_stress = squared_stress(&best, obs).0;
    let mean_d2 = (0..q)
        .flat_map(|i| (i + 1..q).map(move |j| (i, j)))
        .filter(|&(i, j)| obs.mask[(i, j)] == 1.0)
        .map(|(i, j)| obs.d2[(i, j)])
        .sum::<f64>()
        / obs.observed_pairs() as f64;
    // E‖z_i - z_j‖² = 4 σ² for iid planar Gaussian points
    let sigma = (mean_d2.max(0.0) / 4.0).sqrt();
    let mut rng = rng_from_seed(sub_seed(sub_seed(cfg.restart_seed, obs.row as u64), obs.frame as u64));
    for _ in 0..cfg.gd_restarts {
        let start = PointSet::new(Matrix2xX::from_iterator(q, gaussian_vector(2 * q, &mut rng).iter().map(|v| v * sigma)));
        let candidate = refine_gd(obs, &start, cfg);
        let stress = squared_stress(&candidate, obs).0;
        if stress < best_stress {
            best_stress = stress;
            best = candidate;
        }
    }
    best
}

/// Gradient descent with Armijo backtracking.
///
/// Each iteration starts its line search from a Barzilai-Borwein step (or a
/// curvature-scaled step on the first iteration) and halves it until the
/// sufficient-decrease condition holds, so the stress never increases.
pub fn refine_gd_traced(obs: &DistanceObservation, init: &PointSet, cfg: &SolverConfig) -> GdOutcome {
    let q = init.len();
    let mut z = init.clone();
    let (mut f, mut g) = squared_stress(&z, obs);
    let mut trace = vec![f];

    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..q {
        for j in i + 1..q {
            if obs.mask[(i, j)] == 1.0 {
                sum += obs.d2[(i, j)].abs();
                count += 1;
            }
        }
    }
    let typical = if count > 0 { sum / count as f64 } else { 0.0 };
    let mut fallback_step = 1.0 / (16.0 * q as f64 * typical.max(1e-12));
    let mut previous: Option<(Matrix2xX<f64>, Matrix2xX<f64>)> = None;

    for _ in 0..cfg.gd_max_iters {
        let g_norm2 = g.norm_squared();
        if f == 0.0 || g_norm2 == 0.0 || !g_norm2.is_finite() {
            break;
        }
        let mut step = match &previous {
            Some((z_prev, g_prev)) => {
                let s = &z.points - z_prev;
                let y = &g - g_prev;
                let sy = s.dot(&y);
                if sy > 0.0 {
                    s.norm_squared() / sy
                } else {
                    2.0 * fallback_step
                }
            }
            None => fallback_step,
        };

        let mut accepted = None;
        for _ in 0..60 {
            let candidate = PointSet::new(&z.points - step * &g);
            let (f_new, g_new) = squared_stress(&candidate, obs);
            if f_new < f && f_new <= f - cfg.armijo_c * step * g_norm2 {
                accepted = Some((candidate, f_new, g_new));
                break;
            }
            step *= cfg.armijo_shrink;
        }
        let Some((candidate, f_new, g_new)) = accepted else { break };

        let relative_decrease = (f - f_new) / f;
        previous = Some((z.points.clone(), g.clone()));
        fallback_step = step;
        z = candidate;
        f = f_new;
        g = g_new;
        trace.push(f);
        if relative_decrease < cfg.gd_tol {
            break;
        }
    }
    GdOutcome { points: z, trace }
}

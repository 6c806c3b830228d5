//! Square-range least squares multilateration with known anchor positions.
//!
//! `min_x Σ_q (‖x - a_q‖² - d_q²)²` is solved globally by lifting to
//! `y = (x, ‖x‖²)`, which turns it into a least-squares problem with one
//! quadratic equality constraint. Its KKT multiplier is the unique root of a
//! strictly decreasing secular function on an explicit interval, found by
//! bisection. A few Newton steps on the original objective polish the result.

use nalgebra::{Cholesky, Matrix2, Matrix2xX, Matrix3, SymmetricEigen, Vector2, Vector3};

use crate::error::{MprError, Result};

/// `Σ_q (‖x - a_q‖² - d_q²)²` for squared ranges `d2`.
pub fn srls_objective(anchors: &Matrix2xX<f64>, d2: &[f64], x: &Vector2<f64>) -> f64 {
    anchors
        .column_iter()
        .zip(d2)
        .map(|(a, &d)| ((x - a).norm_squared() - d).powi(2))
        .sum()
}

/// Locates a point from its ranges `distances[q] = ‖x - a_q‖`.
pub fn srls_localize(anchors: &Matrix2xX<f64>, distances: &[f64]) -> Result<Vector2<f64>> {
    if let Some(bad) = distances.iter().find(|d| !(**d >= 0.0)) {
        return Err(MprError::InvalidArgument(format!("range {bad} is not a nonnegative number")));
    }
    let d2: Vec<f64> = distances.iter().map(|d| d * d).collect();
    srls_localize_squared(anchors, &d2)
}

/// Same as [`srls_localize`] but takes squared ranges directly, as the camera
/// delivers them.
pub fn srls_localize_squared(anchors: &Matrix2xX<f64>, d2: &[f64]) -> Result<Vector2<f64>> {
    let n = anchors.ncols();
    if d2.len() != n {
        return Err(MprError::Shape(format!("{n} anchors but {} ranges", d2.len())));
    }
    if n < 3 {
        return Err(MprError::Underdetermined(format!("planar multilateration needs 3 anchors, got {n}")));
    }

    // rows [-2 a_qᵀ, 1], right-hand side d_q² - ‖a_q‖²
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for (a, &d) in anchors.column_iter().zip(d2) {
        let row = Vector3::new(-2.0 * a[0], -2.0 * a[1], 1.0);
        ata += row * row.transpose();
        atb += row * (d - a.norm_squared());
    }
    let spectrum = SymmetricEigen::new(ata).eigenvalues;
    let (lo_eig, hi_eig) = (spectrum.min(), spectrum.max());
    if !(lo_eig > 1e-12 * hi_eig) {
        return Err(MprError::Underdetermined("anchors are collinear".into()));
    }

    let start = constrained_solution(&ata, &atb).unwrap_or_else(|| {
        let y = ata.cholesky().expect("positive definite").solve(&atb);
        Vector2::new(y[0], y[1])
    });
    Ok(polish(anchors, d2, start))
}

fn lifted(ata: &Matrix3<f64>, atb: &Vector3<f64>, lambda: f64) -> Option<Vector3<f64>> {
    let mut lhs = *ata;
    lhs[(0, 0)] += lambda;
    lhs[(1, 1)] += lambda;
    let rhs = atb + Vector3::new(0.0, 0.0, 0.5 * lambda);
    lhs.lu().solve(&rhs)
}

fn secular(ata: &Matrix3<f64>, atb: &Vector3<f64>, lambda: f64) -> Option<f64> {
    lifted(ata, atb, lambda).map(|y| y[0] * y[0] + y[1] * y[1] - y[2])
}

/// Root of the secular equation on `(-1/μ, ∞)`, where `μ` is the largest
/// generalized eigenvalue of `(diag(1,1,0), AᵀA)`. `None` in the hard case.
fn constrained_solution(ata: &Matrix3<f64>, atb: &Vector3<f64>) -> Option<Vector2<f64>> {
    let chol = Cholesky::new(*ata)?;
    let l_inv = chol.l().try_inverse()?;
    let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0));
    let mu = SymmetricEigen::new(l_inv * d * l_inv.transpose()).eigenvalues.max();
    let lower = -1.0 / mu;

    let scale = ata.trace().max(1.0);
    let mut hi = scale;
    let mut found_hi = false;
    for _ in 0..200 {
        match secular(ata, atb, hi) {
            Some(v) if v < 0.0 => {
                found_hi = true;
                break;
            }
            Some(v) if v == 0.0 => {
                return lifted(ata, atb, hi).map(|y| Vector2::new(y[0], y[1]));
            }
            _ => hi *= 2.0,
        }
    }
    if !found_hi {
        return None;
    }

    let mut lo = None;
    let mut gap = hi - lower;
    for _ in 0..120 {
        gap *= 0.5;
        let cand = lower + gap;
        if let Some(v) = secular(ata, atb, cand) {
            if v > 0.0 {
                lo = Some(cand);
                break;
            }
        }
    }
    let mut lo = lo?;
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match secular(ata, atb, mid) {
            Some(v) if v > 0.0 => lo = mid,
            Some(_) => hi = mid,
            None => break,
        }
    }
    lifted(ata, atb, 0.5 * (lo + hi)).map(|y| Vector2::new(y[0], y[1]))
}

/// Damped Newton on the original objective; only improving steps are kept.
fn polish(anchors: &Matrix2xX<f64>, d2: &[f64], start: Vector2<f64>) -> Vector2<f64> {
    let mut x = start;
    let mut f = srls_objective(anchors, d2, &x);
    for _ in 0..50 {
        let mut grad = Vector2::zeros();
        let mut hess = Matrix2::zeros();
        for (a, &d) in anchors.column_iter().zip(d2) {
            let diff = x - a;
            let r = diff.norm_squared() - d;
            grad += 4.0 * r * diff;
            hess += 8.0 * diff * diff.transpose() + Matrix2::identity() * (4.0 * r);
        }
        let step = match hess.cholesky() {
            Some(c) => c.solve(&grad),
            None => grad / hess.norm().max(1e-300),
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand = x - t * step;
            let fc = srls_objective(anchors, d2, &cand);
            if fc < f {
                x = cand;
                f = fc;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved || f == 0.0 {
            break;
        }
    }
    x
}

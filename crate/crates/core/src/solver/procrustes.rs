use nalgebra::{Matrix2, Matrix2xX};

/// Orthogonal map taking the current anchors onto the reference anchors.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcrustesFit {
    /// `R` with `R * current ≈ reference`. May be a reflection (`det = -1`),
    /// which corresponds to conjugating the frame.
    pub rotation: Matrix2<f64>,
    /// Cross-covariance has rank < 2, so `R` is not unique.
    pub degenerate: bool,
}

/// Least-squares orthogonal alignment: with `current * referenceᵀ = U Σ Vᵀ`,
/// returns `R = V Uᵀ`.
pub fn procrustes(reference: &Matrix2xX<f64>, current: &Matrix2xX<f64>) -> ProcrustesFit {
    assert_eq!(reference.ncols(), current.ncols(), "anchor sets differ in size");
    let cross: Matrix2<f64> = current * reference.transpose();
    let svd = cross.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let (s_max, s_min) = {
        let s = svd.singular_values;
        (s[0].max(s[1]), s[0].min(s[1]))
    };
    let degenerate = !(s_max > 0.0) || s_min <= 1e-12 * s_max;
    ProcrustesFit { rotation: v_t.transpose() * u.transpose(), degenerate }
}

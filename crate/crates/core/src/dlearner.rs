//! Tuning-parameter-free direct-projection estimator.
//!
//! Projects the target data onto the source latent spaces:
//! Θ̂ = P(U₁) Y₀ P(V₁), evaluated as U₁ ((U₁ᵀ Y₀) V₁) V₁ᵀ so only
//! (p+q)·r and r×r intermediates are formed.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::matrix::{complete_rank_r, ObservedMatrix, SourceBases};

/// P(U₁) Y₀ P(V₁) for a fully observed target matrix.
pub fn d_learner(y0: &Array2<f64>, bases: &SourceBases) -> Result<Array2<f64>> {
    if bases.u1().nrows() != y0.nrows() || bases.v1().nrows() != y0.ncols() {
        return Err(Error::DimensionMismatch {
            context: "d_learner",
            left: (bases.u1().nrows(), bases.v1().nrows()),
            right: y0.dim(),
        });
    }
    let left = bases.u1().t().dot(y0); // r × q
    let core = left.dot(bases.v1()); // r × r
    Ok(bases.u1().dot(&core).dot(&bases.v1().t()))
}

/// Missing-data variant: completes Y₀ to rank r first, then projects.
pub fn d_learner_missing(
    y0: &ObservedMatrix,
    bases: &SourceBases,
    r: usize,
    tol: f64,
    max_iter: usize,
) -> Result<Array2<f64>> {
    let completed = complete_rank_r(y0, r, tol, max_iter)?;
    d_learner(&completed, bases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{frobenius_error, frobenius_norm, truncated_svd};
    use crate::testutil::{explicit_projection, gaussian_matrix};
    use ndarray::Array2;

    fn orthobases(p: usize, q: usize, r: usize, seed: u64) -> SourceBases {
        let u = truncated_svd(&gaussian_matrix(p, r, seed), r).unwrap();
        let v = truncated_svd(&gaussian_matrix(q, r, seed + 1), r).unwrap();
        SourceBases::new(u.u().clone(), v.u().clone()).unwrap()
    }

    #[test]
    fn recovers_signal_lying_in_source_spans() {
        let r = 2;
        let svd = truncated_svd(&gaussian_matrix(9, 6, 1), r).unwrap();
        let theta = svd.reconstruct();
        let bases = SourceBases::from_svd(&svd);
        let out = d_learner(&theta, &bases).unwrap();
        assert!(
            frobenius_error(&out, &theta).unwrap() <= 1e-10 * frobenius_norm(&theta)
        );
    }

    #[test]
    fn annihilates_orthogonal_input() {
        let bases = orthobases(9, 6, 2, 3);
        // u orthogonal to span(U₁)
        let x = gaussian_matrix(9, 1, 5);
        let u_perp = &x - &bases.u1().dot(&bases.u1().t().dot(&x));
        let v = gaussian_matrix(6, 1, 6);
        let y0 = u_perp.dot(&v.t());
        let out = d_learner(&y0, &bases).unwrap();
        assert!(frobenius_norm(&out) <= 1e-10 * frobenius_norm(&y0));
    }

    #[test]
    fn matches_explicit_projection_oracle() {
        let bases = orthobases(9, 6, 2, 7);
        let y0 = gaussian_matrix(9, 6, 8);
        let fast = d_learner(&y0, &bases).unwrap();
        let slow = explicit_projection(bases.u1())
            .dot(&y0)
            .dot(&explicit_projection(bases.v1()));
        assert!(frobenius_error(&fast, &slow).unwrap() < 1e-12 * frobenius_norm(&y0).max(1.0));
    }

    #[test]
    fn idempotent_and_nonexpansive() {
        let bases = orthobases(10, 7, 3, 9);
        let y0 = gaussian_matrix(10, 7, 10);
        let once = d_learner(&y0, &bases).unwrap();
        let twice = d_learner(&once, &bases).unwrap();
        assert!(
            frobenius_error(&once, &twice).unwrap() <= 1e-12 * frobenius_norm(&once).max(1.0)
        );
        assert!(frobenius_norm(&once) <= frobenius_norm(&y0) * (1.0 + 1e-12));
    }

    #[test]
    fn missing_variant_reduces_to_dense_when_fully_observed() {
        let bases = orthobases(8, 5, 2, 11);
        let y_mat = gaussian_matrix(8, 5, 12);
        let y = ObservedMatrix::fully_observed(y_mat.clone()).unwrap();
        let dense_completed = crate::matrix::complete_rank_r(&y, 2, 1e-9, 100).unwrap();
        let a = d_learner_missing(&y, &bases, 2, 1e-9, 100).unwrap();
        let b = d_learner(&dense_completed, &bases).unwrap();
        assert_eq!(frobenius_error(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn missing_rank_one_recovery_with_true_factors() {
        // exact rank-1 target with one masked entry and the true factors as bases
        let a = gaussian_matrix(8, 1, 13);
        let b = gaussian_matrix(5, 1, 14);
        let theta = a.dot(&b.t());
        let svd = truncated_svd(&theta, 1).unwrap();
        let bases = SourceBases::from_svd(&svd);
        let mut mask = Array2::from_elem((8, 5), true);
        mask[(4, 2)] = false;
        let y = ObservedMatrix::with_mask(theta.clone(), mask).unwrap();
        let out = d_learner_missing(&y, &bases, 1, 1e-10, 500).unwrap();
        let rel = frobenius_error(&out, &theta).unwrap() / frobenius_norm(&theta);
        assert!(rel < 1e-4, "relative error {rel}");
    }

    #[test]
    fn large_lambda1_fit_converges_to_projection() {
        // the lambda1 -> infinity limit of the penalized fit is exactly this
        // projection; with normalized steps the in-span progress per
        // iteration shrinks like ||data gradient|| / lambda1, so the
        // iteration budget has to grow with lambda1 — 1e4 over 2e4
        // iterations sits inside the solver's stable range
        use crate::fit::{fit, FitSpec};
        let y0_mat = gaussian_matrix(200, 20, 17);
        let y0 = ObservedMatrix::fully_observed(y0_mat.clone()).unwrap();
        let source = truncated_svd(&gaussian_matrix(200, 20, 18), 4).unwrap();
        let bases = SourceBases::from_svd(&source);
        let mut spec = FitSpec::new(4, 1e4, 1.0, 0.01);
        spec.max_iter = 20_000;
        spec.tol = 1e-14;
        let result = fit(&y0, &source, None, &spec).unwrap();
        let target = d_learner(&y0_mat, &bases).unwrap();
        let rel = frobenius_error(&result.theta_hat(), &target).unwrap()
            / frobenius_norm(&y0_mat);
        assert!(rel <= 1e-2, "relative error {rel}");
    }

    #[test]
    fn dimension_mismatch_detected() {
        let bases = orthobases(9, 6, 2, 15);
        let y0 = gaussian_matrix(8, 6, 16);
        assert!(matches!(
            d_learner(&y0, &bases),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}

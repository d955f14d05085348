//! Test-only helpers and independent oracles.
//!
//! The singular-value oracle here deliberately avoids the production SVD
//! path: it runs a cyclic Jacobi eigensolver on the Gram matrix, so tests
//! that compare the two are comparing genuinely independent routes.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::{child_rng, StreamRole};

/// p×q matrix with i.i.d. standard normal entries from a fixed seed.
pub fn gaussian_matrix(p: usize, q: usize, seed: u64) -> Array2<f64> {
    let mut rng = child_rng(seed, 0, StreamRole::Subsample);
    Array2::from_shape_fn((p, q), |_| rng.sample::<f64, _>(StandardNormal))
}

/// Explicit projection matrix Q Qᵀ. Only for oracles at small p.
pub fn explicit_projection(q: &Array2<f64>) -> Array2<f64> {
    q.dot(&q.t())
}

/// All min(p, q) singular values of `m`, descending, via a cyclic Jacobi
/// eigendecomposition of the smaller Gram matrix.
pub fn gram_svd_oracle(m: &Array2<f64>) -> Vec<f64> {
    let (p, q) = m.dim();
    let gram = if p >= q {
        m.t().dot(m)
    } else {
        m.dot(&m.t())
    };
    let mut eig = jacobi_eigenvalues(&gram);
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    eig.into_iter().map(|x| x.max(0.0).sqrt()).collect()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "jacobi_eigenvalues needs a square matrix");
    let mut m = a.clone();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + frob(&m)) {
            break;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let apq = m[(i, j)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(i, i)];
                let aqq = m[(j, j)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mki = m[(k, i)];
                    let mkj = m[(k, j)];
                    m[(k, i)] = c * mki - s * mkj;
                    m[(k, j)] = s * mki + c * mkj;
                }
                for k in 0..n {
                    let mik = m[(i, k)];
                    let mjk = m[(j, k)];
                    m[(i, k)] = c * mik - s * mjk;
                    m[(j, k)] = s * mik + c * mjk;
                }
            }
        }
    }
    (0..n).map(|i| m[(i, i)]).collect()
}

fn frob(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn jacobi_matches_known_eigenvalues() {
        // symmetric matrix with known spectrum {3, 1}
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let mut eig = jacobi_eigenvalues(&a);
        eig.sort_by(|x, y| y.partial_cmp(x).unwrap());
        assert!((eig[0] - 3.0).abs() < 1e-12);
        assert!((eig[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gram_oracle_on_diagonal() {
        let m = Array2::from_diag(&array![4.0, 2.0, 1.0]);
        let s = gram_svd_oracle(&m);
        assert!((s[0] - 4.0).abs() < 1e-10);
        assert!((s[1] - 2.0).abs() < 1e-10);
        assert!((s[2] - 1.0).abs() < 1e-10);
    }
}

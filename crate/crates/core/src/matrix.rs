//! Dense matrices with missing-entry support, truncated SVD, projections,
//! subspace distances, and iterative rank-r completion.
//!
//! Projections are always applied in operator form `X - Q (Qᵀ X)`; a p×p
//! projection matrix is never materialized (p can be in the tens of
//! thousands in real use).

use ndarray::{Array1, Array2, Zip};

use crate::error::{Error, Result};

/// Dense real matrix with an explicit missing-entry mask.
///
/// Entries where the mask is `false` are missing: they are stored as `0.0`
/// and ignored by all arithmetic. At least one entry must be observed.
#[derive(Debug, Clone)]
pub struct ObservedMatrix {
    values: Array2<f64>,
    mask: Array2<bool>,
    observed: usize,
}

impl ObservedMatrix {
    /// Matrix with every entry observed. Fails on non-finite values.
    pub fn fully_observed(values: Array2<f64>) -> Result<Self> {
        check_finite(&values)?;
        let (p, q) = values.dim();
        if p == 0 || q == 0 {
            return Err(Error::EmptyMatrix);
        }
        let observed = p * q;
        Ok(Self {
            values,
            mask: Array2::from_elem((p, q), true),
            observed,
        })
    }

    /// Matrix with an explicit mask (`true` = observed). Observed entries
    /// must be finite; missing entries are normalized to `0.0`.
    pub fn with_mask(mut values: Array2<f64>, mask: Array2<bool>) -> Result<Self> {
        if values.dim() != mask.dim() {
            return Err(Error::DimensionMismatch {
                context: "ObservedMatrix::with_mask",
                left: values.dim(),
                right: mask.dim(),
            });
        }
        let (p, q) = values.dim();
        if p == 0 || q == 0 {
            return Err(Error::EmptyMatrix);
        }
        let mut observed = 0usize;
        for i in 0..p {
            for j in 0..q {
                if mask[(i, j)] {
                    if !values[(i, j)].is_finite() {
                        return Err(Error::NonFiniteInput { row: i, col: j });
                    }
                    observed += 1;
                } else {
                    values[(i, j)] = 0.0;
                }
            }
        }
        if observed == 0 {
            return Err(Error::AllMissing);
        }
        Ok(Self {
            values,
            mask,
            observed,
        })
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Stored values; missing slots hold `0.0`.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    /// Number of observed entries |Ω|.
    pub fn observed_count(&self) -> usize {
        self.observed
    }

    pub fn is_fully_observed(&self) -> bool {
        self.observed == self.values.len()
    }

    /// The factor pq / |Ω| that rescales the data-fit term under missingness.
    pub fn scale_factor(&self) -> f64 {
        self.values.len() as f64 / self.observed as f64
    }

    /// Observed index pairs in row-major order.
    pub fn observed_indices(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.observed);
        for ((i, j), &m) in self.mask.indexed_iter() {
            if m {
                out.push((i, j));
            }
        }
        out
    }

    /// Value at an observed position; `None` when the entry is missing.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        if self.mask[(i, j)] {
            Some(self.values[(i, j)])
        } else {
            None
        }
    }

    /// Copy with the given (observed) entries additionally marked missing.
    /// Used to build cross-validation training sets.
    pub fn mask_out(&self, holdout: &[(usize, usize)]) -> Result<Self> {
        let mut values = self.values.clone();
        let mut mask = self.mask.clone();
        for &(i, j) in holdout {
            if i >= self.nrows() || j >= self.ncols() {
                return Err(Error::IndexOutOfRange {
                    index: i.max(j),
                    len: self.nrows().max(self.ncols()),
                });
            }
            if !mask[(i, j)] {
                return Err(Error::HoldoutNotObserved { row: i, col: j });
            }
            mask[(i, j)] = false;
            values[(i, j)] = 0.0;
        }
        let observed = self.observed - holdout.len();
        if observed == 0 {
            return Err(Error::AllMissing);
        }
        Ok(Self {
            values,
            mask,
            observed,
        })
    }

    /// Copy with every missing entry replaced by an observed `0.0`.
    pub fn impute_zero(&self) -> Self {
        let (p, q) = self.dim();
        Self {
            values: self.values.clone(),
            mask: Array2::from_elem((p, q), true),
            observed: p * q,
        }
    }

    /// Dense view of the values, valid only when fully observed.
    pub fn to_dense(&self) -> Result<&Array2<f64>> {
        if self.is_fully_observed() {
            Ok(&self.values)
        } else {
            Err(Error::InvalidConfig(
                "operation requires a fully observed matrix".to_string(),
            ))
        }
    }
}

/// Orthonormal factor pair plus nonincreasing singular values.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    u: Array2<f64>,
    singular_values: Array1<f64>,
    v: Array2<f64>,
}

impl TruncatedSvd {
    /// Assembles a decomposition from parts, enforcing the type invariants:
    /// orthonormal factors (within 1e-10 in Frobenius norm) and
    /// nonincreasing nonnegative singular values.
    pub fn new(u: Array2<f64>, singular_values: Array1<f64>, v: Array2<f64>) -> Result<Self> {
        let r = singular_values.len();
        if u.ncols() != r || v.ncols() != r {
            return Err(Error::DimensionMismatch {
                context: "TruncatedSvd::new",
                left: (u.ncols(), v.ncols()),
                right: (r, r),
            });
        }
        check_orthonormal(&u, 1e-10)?;
        check_orthonormal(&v, 1e-10)?;
        for i in 0..r {
            let s = singular_values[i];
            if s.is_nan() || s < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "singular value {i} is negative or NaN: {s}"
                )));
            }
            if i > 0 && s > singular_values[i - 1] {
                return Err(Error::InvalidConfig(format!(
                    "singular values not nonincreasing at index {i}"
                )));
            }
        }
        Ok(Self {
            u,
            singular_values,
            v,
        })
    }

    pub fn u(&self) -> &Array2<f64> {
        &self.u
    }

    pub fn singular_values(&self) -> &Array1<f64> {
        &self.singular_values
    }

    pub fn v(&self) -> &Array2<f64> {
        &self.v
    }

    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// U · diag(s) · Vᵀ.
    pub fn reconstruct(&self) -> Array2<f64> {
        let mut us = self.u.clone();
        for (mut col, &s) in us.columns_mut().into_iter().zip(self.singular_values.iter()) {
            col.mapv_inplace(|x| x * s);
        }
        us.dot(&self.v.t())
    }
}

/// Source-population latent bases used by penalties and projections.
#[derive(Debug, Clone)]
pub struct SourceBases {
    u1: Array2<f64>,
    v1: Array2<f64>,
}

impl SourceBases {
    pub fn new(u1: Array2<f64>, v1: Array2<f64>) -> Result<Self> {
        check_orthonormal(&u1, 1e-10)?;
        check_orthonormal(&v1, 1e-10)?;
        if u1.ncols() != v1.ncols() {
            return Err(Error::DimensionMismatch {
                context: "SourceBases::new",
                left: (u1.nrows(), u1.ncols()),
                right: (v1.nrows(), v1.ncols()),
            });
        }
        Ok(Self { u1, v1 })
    }

    pub fn from_svd(svd: &TruncatedSvd) -> Self {
        Self {
            u1: svd.u().clone(),
            v1: svd.v().clone(),
        }
    }

    pub fn u1(&self) -> &Array2<f64> {
        &self.u1
    }

    pub fn v1(&self) -> &Array2<f64> {
        &self.v1
    }

    pub fn rank(&self) -> usize {
        self.u1.ncols()
    }
}

pub(crate) fn check_finite(m: &Array2<f64>) -> Result<()> {
    for ((i, j), &x) in m.indexed_iter() {
        if !x.is_finite() {
            return Err(Error::NonFiniteInput { row: i, col: j });
        }
    }
    Ok(())
}

fn check_orthonormal(q: &Array2<f64>, tol: f64) -> Result<()> {
    let r = q.ncols();
    let gram = q.t().dot(q);
    let mut err_sq = 0.0;
    for i in 0..r {
        for j in 0..r {
            let target = if i == j { 1.0 } else { 0.0 };
            let d = gram[(i, j)] - target;
            err_sq += d * d;
        }
    }
    if err_sq.sqrt() > tol {
        // report the column with the worst norm deviation
        let mut worst = 0;
        let mut dev = 0.0;
        for i in 0..r {
            let d = (gram[(i, i)] - 1.0).abs();
            if d > dev {
                dev = d;
                worst = i;
            }
        }
        return Err(Error::NotOrthonormal {
            col: worst,
            norm: gram[(worst, worst)].sqrt(),
        });
    }
    Ok(())
}

/// ||M||_F.
pub fn frobenius_norm(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// ---- nalgebra bridge -------------------------------------------------------

fn to_nalgebra(a: &Array2<f64>) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn from_nalgebra(m: &nalgebra::DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Full thin SVD with triplets sorted by descending singular value and a
/// deterministic sign convention: each left singular vector is flipped so
/// that its largest-magnitude entry (ties broken by lowest index) is
/// positive, with the matching right vector flipped alongside.
fn full_svd(a: &Array2<f64>) -> Result<(Array2<f64>, Vec<f64>, Array2<f64>)> {
    let m = to_nalgebra(a);
    let svd = nalgebra::linalg::SVD::try_new(m, true, true, f64::EPSILON, 0)
        .ok_or(Error::SvdFailed)?;
    let u = svd.u.ok_or(Error::SvdFailed)?;
    let v_t = svd.v_t.ok_or(Error::SvdFailed)?;
    let s = svd.singular_values;

    let k = s.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap_or(std::cmp::Ordering::Equal));

    let p = u.nrows();
    let q = v_t.ncols();
    let mut u_out = Array2::zeros((p, k));
    let mut v_out = Array2::zeros((q, k));
    let mut s_out = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        s_out.push(s[src]);
        // sign: largest-magnitude entry of the left vector made positive
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..p {
            let a = u[(i, src)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        let flip = if u[(best, src)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..p {
            u_out[(i, dst)] = flip * u[(i, src)];
        }
        for j in 0..q {
            v_out[(j, dst)] = flip * v_t[(src, j)];
        }
    }
    Ok((u_out, s_out, v_out))
}

// ---- operations ------------------------------------------------------------

/// Top-r singular triplets of a fully observed matrix; the reconstruction
/// is the best rank-r Frobenius approximation.
pub fn truncated_svd(m: &Array2<f64>, r: usize) -> Result<TruncatedSvd> {
    let (p, q) = m.dim();
    let max = p.min(q);
    if r < 1 || r > max {
        return Err(Error::RankOutOfRange { rank: r, max });
    }
    check_finite(m)?;
    let (u, s, v) = full_svd(m)?;
    let u_r = u.slice(ndarray::s![.., ..r]).to_owned();
    let v_r = v.slice(ndarray::s![.., ..r]).to_owned();
    let s_r = Array1::from_iter(s[..r].iter().copied());
    TruncatedSvd::new(u_r, s_r, v_r)
}

/// Orthonormal basis with the same span as the full-column-rank input,
/// via thin QR with the triangular diagonal made positive.
pub fn orthonormalize(b: &Array2<f64>) -> Result<Array2<f64>> {
    let (p, r) = b.dim();
    if r == 0 || p < r {
        return Err(Error::RankOutOfRange { rank: r, max: p });
    }
    check_finite(b)?;
    let qr = to_nalgebra(b).qr();
    let q = qr.q();
    let rmat = qr.r();
    let mut max_diag = 0.0f64;
    for j in 0..r {
        max_diag = max_diag.max(rmat[(j, j)].abs());
    }
    for j in 0..r {
        if rmat[(j, j)].abs() < 1e-12 * max_diag || max_diag == 0.0 {
            return Err(Error::RankDeficient { col: j });
        }
    }
    let mut out = from_nalgebra(&q);
    for j in 0..r {
        if rmat[(j, j)] < 0.0 {
            out.column_mut(j).mapv_inplace(|x| -x);
        }
    }
    Ok(out)
}

/// X - Q (Qᵀ X): projection of X onto the orthogonal complement of span(Q).
pub fn apply_complement_projection(q: &Array2<f64>, x: &Array2<f64>) -> Result<Array2<f64>> {
    if q.nrows() != x.nrows() {
        return Err(Error::DimensionMismatch {
            context: "apply_complement_projection",
            left: q.dim(),
            right: x.dim(),
        });
    }
    let qtx = q.t().dot(x);
    let mut out = x.clone();
    out.scaled_add(-1.0, &q.dot(&qtx));
    Ok(out)
}

/// Frobenius distance between projectors, sqrt(ra + rb - 2 ||Qaᵀ Qb||_F²),
/// clamped at zero against round-off.
pub fn subspace_distance(qa: &Array2<f64>, qb: &Array2<f64>) -> Result<f64> {
    if qa.nrows() != qb.nrows() {
        return Err(Error::DimensionMismatch {
            context: "subspace_distance",
            left: qa.dim(),
            right: qb.dim(),
        });
    }
    let cross = qa.t().dot(qb);
    let c2 = cross.iter().map(|x| x * x).sum::<f64>();
    let d2 = qa.ncols() as f64 + qb.ncols() as f64 - 2.0 * c2;
    Ok(d2.max(0.0).sqrt())
}

/// ||A - B||_F.
pub fn frobenius_error(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "frobenius_error",
            left: a.dim(),
            right: b.dim(),
        });
    }
    let mut acc = 0.0;
    Zip::from(a).and(b).for_each(|&x, &y| {
        let d = x - y;
        acc += d * d;
    });
    Ok(acc.sqrt())
}

/// Smallest singular value.
pub fn min_singular_value(m: &Array2<f64>) -> Result<f64> {
    check_finite(m)?;
    let (_, s, _) = full_svd(m)?;
    Ok(s.last().copied().unwrap_or(0.0))
}

/// Rank-r completion by iterative impute-then-truncate ("hard" SVD
/// imputation): missing entries start at zero and are repeatedly replaced
/// by the current rank-r reconstruction until the reconstruction stabilizes.
pub fn complete_rank_r(
    y: &ObservedMatrix,
    r: usize,
    tol: f64,
    max_iter: usize,
) -> Result<Array2<f64>> {
    let (p, q) = y.dim();
    let max = p.min(q);
    if r < 1 || r > max {
        return Err(Error::RankOutOfRange { rank: r, max });
    }
    for i in 0..p {
        if (0..q).all(|j| !y.mask()[(i, j)]) {
            return Err(Error::EmptyRowOrColumn {
                axis: "row",
                index: i,
            });
        }
    }
    for j in 0..q {
        if (0..p).all(|i| !y.mask()[(i, j)]) {
            return Err(Error::EmptyRowOrColumn {
                axis: "column",
                index: j,
            });
        }
    }

    // Missing slots of `values` are stored as zero, which is exactly the
    // required initialization.
    let mut filled = y.values().clone();
    if y.is_fully_observed() {
        return Ok(truncated_svd(&filled, r)?.reconstruct());
    }

    let mut w_old: Option<Array2<f64>> = None;
    for _ in 0..max_iter {
        let w = truncated_svd(&filled, r)?.reconstruct();
        if let Some(prev) = &w_old {
            let num = frobenius_error(&w, prev)?;
            let den = frobenius_norm(prev).max(1.0);
            if num / den < tol {
                return Ok(w);
            }
        }
        Zip::from(&mut filled)
            .and(y.mask())
            .and(&w)
            .for_each(|f, &m, &wij| {
                if !m {
                    *f = wij;
                }
            });
        w_old = Some(w);
    }
    Ok(w_old.expect("max_iter >= 1"))
}

//! Post-fit interpretation utilities: contribution scores, scree values,
//! projection-matrix comparison blocks, and varimax rotation.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::matrix::truncated_svd;

/// Squared entries of an orthonormal basis; each column sums to one.
#[derive(Debug, Clone)]
pub struct ContributionScores {
    /// n×r matrix of scores in [0, 1].
    pub scores: Array2<f64>,
    /// What the rows index ("variant", "phenotype", ...).
    pub axis: String,
}

/// Contribution scores of each row to each latent factor.
pub fn contribution_scores(basis: &Array2<f64>, axis: &str) -> Result<ContributionScores> {
    for j in 0..basis.ncols() {
        let norm = basis.column(j).dot(&basis.column(j)).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::NotOrthonormal { col: j, norm });
        }
    }
    Ok(ContributionScores {
        scores: basis.mapv(|x| x * x),
        axis: axis.to_string(),
    })
}

impl ContributionScores {
    /// Row indices and scores of factor `l`, sorted by descending score
    /// (ties keep input order).
    pub fn top_rows(&self, l: usize, count: usize) -> Result<Vec<(usize, f64)>> {
        if l >= self.scores.ncols() {
            return Err(Error::IndexOutOfRange {
                index: l,
                len: self.scores.ncols(),
            });
        }
        let mut rows: Vec<(usize, f64)> = self.scores.column(l).iter().copied().enumerate().collect();
        rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        rows.truncate(count);
        Ok(rows)
    }
}

/// First k singular values of a fully observed matrix.
pub fn scree_values(y: &Array2<f64>, k: usize) -> Result<Vec<f64>> {
    let n = y.nrows().min(y.ncols());
    if k < 1 || k > n {
        return Err(Error::RankOutOfRange { rank: k, max: n });
    }
    let svd = truncated_svd(y, n)?;
    Ok(svd.singular_values().iter().take(k).copied().collect())
}

/// Submatrices of two projection matrices restricted to an index subset,
/// for side-by-side comparison without forming anything p×p.
#[derive(Debug, Clone)]
pub struct ProjectionGram {
    pub indices: Vec<usize>,
    /// P(Qa) restricted to the subset.
    pub proj_a: Array2<f64>,
    /// P(Qb) restricted to the subset.
    pub proj_b: Array2<f64>,
}

impl ProjectionGram {
    pub fn difference(&self) -> Array2<f64> {
        &self.proj_a - &self.proj_b
    }
}

/// Rows `subset` of P(Qa) = Qa Qaᵀ and P(Qb), computed as
/// Qa[S,:]·Qa[S,:]ᵀ.
pub fn projection_gram(
    qa: &Array2<f64>,
    qb: &Array2<f64>,
    subset: &[usize],
) -> Result<ProjectionGram> {
    if qa.nrows() != qb.nrows() {
        return Err(Error::DimensionMismatch {
            context: "projection_gram",
            left: qa.dim(),
            right: qb.dim(),
        });
    }
    let n = qa.nrows();
    for &i in subset {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, len: n });
        }
    }
    let sub = |q: &Array2<f64>| -> Array2<f64> {
        let rows = Array2::from_shape_fn((subset.len(), q.ncols()), |(s, j)| q[(subset[s], j)]);
        rows.dot(&rows.t())
    };
    Ok(ProjectionGram {
        indices: subset.to_vec(),
        proj_a: sub(qa),
        proj_b: sub(qb),
    })
}

/// Varimax criterion: Σ_l [ mean(v⁴_l) - mean(v²_l)² ].
pub fn varimax_criterion(v: &Array2<f64>) -> f64 {
    let n = v.nrows() as f64;
    let mut total = 0.0;
    for j in 0..v.ncols() {
        let col = v.column(j);
        let m4: f64 = col.iter().map(|x| x.powi(4)).sum::<f64>() / n;
        let m2: f64 = col.iter().map(|x| x * x).sum::<f64>() / n;
        total += m4 - m2 * m2;
    }
    total
}

/// Result of [`varimax`].
#[derive(Debug, Clone)]
pub struct VarimaxResult {
    /// V·R with columns ordered by descending sum of squares.
    pub rotated: Array2<f64>,
    /// The orthogonal rotation, with columns permuted the same way.
    pub rotation: Array2<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub criterion: f64,
}

/// Orthogonal varimax rotation by pairwise angle sweeps.
///
/// Each pair rotation evaluates the exact pair criterion at the two
/// stationary angles and keeps the better one, so the criterion never
/// decreases. Stops when a full sweep improves the criterion by less than
/// `tol` (relative), or flags `converged = false` after `max_iter` sweeps.
pub fn varimax(v: &Array2<f64>, tol: f64, max_iter: usize) -> Result<VarimaxResult> {
    if v.ncols() == 0 || v.nrows() == 0 {
        return Err(Error::EmptyMatrix);
    }
    if tol.is_nan() || tol <= 0.0 || max_iter == 0 {
        return Err(Error::InvalidConfig(
            "varimax needs tol > 0 and max_iter >= 1".into(),
        ));
    }
    let r = v.ncols();
    let n = v.nrows() as f64;
    let mut z = v.clone();
    let mut rot = Array2::<f64>::eye(r);
    let mut converged = r == 1;
    let mut iterations = 0;

    if r > 1 {
        let mut crit_prev = varimax_criterion(&z);
        for sweep in 1..=max_iter {
            iterations = sweep;
            for a in 0..r {
                for b in (a + 1)..r {
                    // optimal angle for the (a, b) pair (Kaiser's formulas)
                    let (mut s_u, mut s_v, mut s_c, mut s_d) = (0.0, 0.0, 0.0, 0.0);
                    for i in 0..v.nrows() {
                        let x = z[(i, a)];
                        let y = z[(i, b)];
                        let u = x * x - y * y;
                        let w = 2.0 * x * y;
                        s_u += u;
                        s_v += w;
                        s_c += u * u - w * w;
                        s_d += u * w;
                    }
                    let num = 2.0 * (s_d - s_u * s_v / n);
                    let den = s_c - (s_u * s_u - s_v * s_v) / n;
                    if num == 0.0 && den == 0.0 {
                        continue;
                    }
                    let phi = 0.25 * num.atan2(den);
                    // the two stationary angles are phi and phi + π/4;
                    // evaluate both and keep whichever actually improves
                    let best = [phi, phi + std::f64::consts::FRAC_PI_4]
                        .into_iter()
                        .map(|ang| (pair_gain(&z, a, b, ang, n), ang))
                        .fold((0.0, 0.0), |acc, cand| if cand.0 > acc.0 { cand } else { acc });
                    if best.0 > 0.0 {
                        apply_rotation(&mut z, a, b, best.1);
                        apply_rotation(&mut rot, a, b, best.1);
                    }
                }
            }
            let crit = varimax_criterion(&z);
            if crit - crit_prev <= tol * crit_prev.abs().max(1e-300) {
                converged = true;
                break;
            }
            crit_prev = crit;
        }
    }

    // deterministic column order: descending sum of squares
    let mut order: Vec<usize> = (0..r).collect();
    let ss: Vec<f64> = (0..r).map(|j| z.column(j).dot(&z.column(j))).collect();
    order.sort_by(|&i, &j| ss[j].partial_cmp(&ss[i]).unwrap_or(std::cmp::Ordering::Equal));
    let rotated = Array2::from_shape_fn(z.dim(), |(i, j)| z[(i, order[j])]);
    let rotation = Array2::from_shape_fn(rot.dim(), |(i, j)| rot[(i, order[j])]);
    let criterion = varimax_criterion(&rotated);

    Ok(VarimaxResult {
        rotated,
        rotation,
        converged,
        iterations,
        criterion,
    })
}

/// Criterion change for rotating columns (a, b) by `ang`, without mutating.
fn pair_gain(z: &Array2<f64>, a: usize, b: usize, ang: f64, n: f64) -> f64 {
    let (c, s) = (ang.cos(), ang.sin());
    let (mut m4a, mut m2a, mut m4b, mut m2b) = (0.0, 0.0, 0.0, 0.0);
    let (mut o4a, mut o2a, mut o4b, mut o2b) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..z.nrows() {
        let x = z[(i, a)];
        let y = z[(i, b)];
        o4a += x.powi(4);
        o2a += x * x;
        o4b += y.powi(4);
        o2b += y * y;
        let xr = c * x - s * y;
        let yr = s * x + c * y;
        m4a += xr.powi(4);
        m2a += xr * xr;
        m4b += yr.powi(4);
        m2b += yr * yr;
    }
    let before = (o4a / n - (o2a / n).powi(2)) + (o4b / n - (o2b / n).powi(2));
    let after = (m4a / n - (m2a / n).powi(2)) + (m4b / n - (m2b / n).powi(2));
    after - before
}

fn apply_rotation(m: &mut Array2<f64>, a: usize, b: usize, ang: f64) {
    let (c, s) = (ang.cos(), ang.sin());
    for i in 0..m.nrows() {
        let x = m[(i, a)];
        let y = m[(i, b)];
        m[(i, a)] = c * x - s * y;
        m[(i, b)] = s * x + c * y;
    }
}

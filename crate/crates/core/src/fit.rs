//! Penalized low-rank fit with transfer of source latent spaces.
//!
//! The estimator minimizes, over factor pairs (U, V) of width r,
//!
//! ```text
//!   (pq/|Ω|) Σ_{(i,j)∈Ω} ((U Vᵀ)_ij - Y0_ij)²
//!     + λ₁,₁ ||P⊥(U₁) U||_F²  +  λ₁,₂ ||P⊥(V₁) V||_F²
//!     + λ₂ ||UᵀU - VᵀV||_F²
//! ```
//!
//! where (U₁, V₁) are orthonormal bases of the source population's latent
//! row/column spaces. With every entry observed, the leading scale factor
//! is exactly 1. The λ₂ term counters the rescaling ambiguity
//! (U, V) → (U/c, cV).
//!
//! The solver alternates normalized gradient steps: U moves first, then V
//! moves using the already-updated U, and the objective is recorded once
//! per outer iteration. The returned estimate is the best iterate seen, which
//! may be the initializer itself.

use ndarray::{Array2, Zip};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{frobenius_norm, ObservedMatrix, SourceBases, TruncatedSvd};

/// Gradient norms below this are treated as exactly stationary and the
/// corresponding factor update is skipped (not an error).
const ZERO_GRADIENT: f64 = 1e-300;

/// Optimizer configuration.
#[derive(Debug, Clone, Serialize)]
pub struct FitSpec {
    /// Factor width r.
    pub rank: usize,
    /// λ₁,₁ — penalty on the deviation of U from the source row-index space.
    pub lambda1_row: f64,
    /// λ₁,₂ — penalty on the deviation of V from the source column-index space.
    pub lambda1_col: f64,
    /// λ₂ — balance penalty on ||UᵀU - VᵀV||_F².
    pub lambda2: f64,
    /// Relative step size c; each update moves a factor by exactly
    /// c·||factor||_F in Frobenius norm.
    pub step_size: f64,
    pub max_iter: usize,
    /// Stop once |ε_t - ε_{t-1}| falls below this.
    pub tol: f64,
    /// Declare divergence once ε_t exceeds this multiple of ε₀.
    pub divergence_factor: f64,
}

impl FitSpec {
    pub const DEFAULT_MAX_ITER: usize = 75;
    pub const DEFAULT_TOL: f64 = 1e-3;
    pub const DEFAULT_DIVERGENCE_FACTOR: f64 = 10.0;

    /// Shared-penalty spec (λ₁,₁ = λ₁,₂ = `lambda1`) with default stopping
    /// parameters.
    pub fn new(rank: usize, lambda1: f64, lambda2: f64, step_size: f64) -> Self {
        Self {
            rank,
            lambda1_row: lambda1,
            lambda1_col: lambda1,
            lambda2,
            step_size,
            max_iter: Self::DEFAULT_MAX_ITER,
            tol: Self::DEFAULT_TOL,
            divergence_factor: Self::DEFAULT_DIVERGENCE_FACTOR,
        }
    }

    pub fn with_separate_penalties(mut self, lambda1_row: f64, lambda1_col: f64) -> Self {
        self.lambda1_row = lambda1_row;
        self.lambda1_col = lambda1_col;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidConfig("rank must be positive".into()));
        }
        for (name, v) in [
            ("lambda1_row", self.lambda1_row),
            ("lambda1_col", self.lambda1_col),
            ("lambda2", self.lambda2),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be a finite nonnegative number, got {v}"
                )));
            }
        }
        if self.step_size.is_nan() || self.step_size <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be positive".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.divergence_factor.is_nan() || self.divergence_factor <= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "divergence_factor must exceed 1, got {}",
                self.divergence_factor
            )));
        }
        Ok(())
    }
}

/// Why the iteration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Termination {
    /// |ε_t - ε_{t-1}| fell below the tolerance.
    Converged,
    /// The iteration budget ran out.
    MaxIter,
    /// The objective exceeded divergence_factor·ε₀ or became non-finite.
    Diverged,
}

/// Output of [`fit`]: the best iterate and the full objective trajectory.
#[derive(Debug, Clone)]
pub struct FitResult {
    u_best: Array2<f64>,
    v_best: Array2<f64>,
    /// ε₀, ε₁, … — the objective after each outer iteration, starting at
    /// the initializer.
    pub objective_trajectory: Vec<f64>,
    /// Index into the trajectory of the returned iterate (earliest minimum).
    pub t_best: usize,
    pub termination: Termination,
}

impl FitResult {
    pub fn u_best(&self) -> &Array2<f64> {
        &self.u_best
    }

    pub fn v_best(&self) -> &Array2<f64> {
        &self.v_best
    }

    /// The estimate U_best · V_bestᵀ (rank ≤ r), materialized on demand.
    pub fn theta_hat(&self) -> Array2<f64> {
        self.u_best.dot(&self.v_best.t())
    }

    pub fn best_objective(&self) -> f64 {
        self.objective_trajectory[self.t_best]
    }
}

fn check_dims(
    u: &Array2<f64>,
    v: &Array2<f64>,
    y0: &ObservedMatrix,
    bases: &SourceBases,
    spec: &FitSpec,
) -> Result<()> {
    let r = spec.rank;
    if u.dim() != (y0.nrows(), r) {
        return Err(Error::DimensionMismatch {
            context: "fit: U",
            left: u.dim(),
            right: (y0.nrows(), r),
        });
    }
    if v.dim() != (y0.ncols(), r) {
        return Err(Error::DimensionMismatch {
            context: "fit: V",
            left: v.dim(),
            right: (y0.ncols(), r),
        });
    }
    if bases.u1().nrows() != y0.nrows() || bases.v1().nrows() != y0.ncols() {
        return Err(Error::DimensionMismatch {
            context: "fit: source bases",
            left: (bases.u1().nrows(), bases.v1().nrows()),
            right: y0.dim(),
        });
    }
    if y0.observed_count() == 0 {
        return Err(Error::EmptyObservationSet);
    }
    Ok(())
}

/// Residual U Vᵀ - Y0 with entries off the observation set zeroed. When the
/// matrix is fully observed no masking pass runs, so the fully-observed and
/// masked paths coincide bit for bit on an all-true mask.
fn masked_residual(u: &Array2<f64>, v: &Array2<f64>, y0: &ObservedMatrix) -> Array2<f64> {
    let mut resid = u.dot(&v.t());
    resid -= y0.values();
    if !y0.is_fully_observed() {
        Zip::from(&mut resid).and(y0.mask()).for_each(|r, &m| {
            if !m {
                *r = 0.0;
            }
        });
    }
    resid
}

fn sum_squares(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum()
}

/// ||P⊥(Q) X||_F² computed in operator form.
fn complement_penalty(q: &Array2<f64>, x: &Array2<f64>) -> f64 {
    let qtx = q.t().dot(x);
    let mut proj = x.clone();
    proj.scaled_add(-1.0, &q.dot(&qtx));
    sum_squares(&proj)
}

/// The penalized objective at (U, V).
pub fn objective(
    u: &Array2<f64>,
    v: &Array2<f64>,
    y0: &ObservedMatrix,
    bases: &SourceBases,
    spec: &FitSpec,
) -> Result<f64> {
    spec.validate()?;
    check_dims(u, v, y0, bases, spec)?;
    Ok(objective_unchecked(u, v, y0, bases, spec))
}

fn objective_unchecked(
    u: &Array2<f64>,
    v: &Array2<f64>,
    y0: &ObservedMatrix,
    bases: &SourceBases,
    spec: &FitSpec,
) -> f64 {
    let resid = masked_residual(u, v, y0);
    let mut total = y0.scale_factor() * sum_squares(&resid);
    if spec.lambda1_row > 0.0 {
        total += spec.lambda1_row * complement_penalty(bases.u1(), u);
    }
    if spec.lambda1_col > 0.0 {
        total += spec.lambda1_col * complement_penalty(bases.v1(), v);
    }
    if spec.lambda2 > 0.0 {
        let utu = u.t().dot(u);
        let vtv = v.t().dot(v);
        total += spec.lambda2 * sum_squares(&(&utu - &vtv));
    }
    total
}

/// Analytic gradient of [`objective`] with respect to U.
pub fn grad_u(
    u: &Array2<f64>,
    v: &Array2<f64>,
    y0: &ObservedMatrix,
    bases: &SourceBases,
    spec: &FitSpec,
) -> Result<Array2<f64>> {
    spec.validate()?;
    check_dims(u, v, y0, bases, spec)?;
    let resid = masked_residual(u, v, y0);
    Ok(grad_u_from_residual(&resid, u, v, y0, bases, spec))
}

fn grad_u_from_residual(
    resid: &Array2<f64>,
    u: &Array2<f64>,
    v: &Array2<f64>,
    y0: &ObservedMatrix,
    bases: &SourceBases,
    spec: &FitSpec,
) -> Array2<f64> {
    let mut grad = resid.dot(v);
    grad.mapv_inplace(|x| 2.0 * y0.scale_factor() * x);
    if spec.lambda1_row > 0.0 {
        let q = bases.u1();
        let qtu = q.t().dot(u);
        grad.scaled_add(2.0 * spec.lambda1_row, u);
        grad.scaled_add(-2.0 * spec.lambda1_row, &q.dot(&qtu));
    }
    if spec.lambda2 > 0.0 {
        let balance = &u.t().dot(u) - &v.t().dot(v);
        grad.scaled_add(4.0 * spec.lambda2, &u.dot(&balance));
    }
    grad
}

/// Analytic gradient of [`objective`] with respect to V.
pub fn grad_v(
    u: &Array2<f64>,
    v: &Array2<f64>,
    y0: &ObservedMatrix,
    bases: &SourceBases,
    spec: &FitSpec,
) -> Result<Array2<f64>> {
    spec.validate()?;
    check_dims(u, v, y0, bases, spec)?;
    let resid = masked_residual(u, v, y0);
    Ok(grad_v_from_residual(&resid, u, v, y0, bases, spec))
}

fn grad_v_from_residual(
    resid: &Array2<f64>,
    u: &Array2<f64>,
    v: &Array2<f64>,
    y0: &ObservedMatrix,
    bases: &SourceBases,
    spec: &FitSpec,
) -> Array2<f64> {
    let mut grad = resid.t().dot(u);
    grad.mapv_inplace(|x| 2.0 * y0.scale_factor() * x);
    if spec.lambda1_col > 0.0 {
        let q = bases.v1();
        let qtv = q.t().dot(v);
        grad.scaled_add(2.0 * spec.lambda1_col, v);
        grad.scaled_add(-2.0 * spec.lambda1_col, &q.dot(&qtv));
    }
    if spec.lambda2 > 0.0 {
        let balance = &v.t().dot(v) - &u.t().dot(u);
        grad.scaled_add(4.0 * spec.lambda2, &v.dot(&balance));
    }
    grad
}

/// Default initializer U⁽⁰⁾ = U₁ Λ₁^{1/2}, V⁽⁰⁾ = V₁ Λ₁^{1/2} built from the
/// source truncated SVD.
pub fn default_init(source: &TruncatedSvd) -> (Array2<f64>, Array2<f64>) {
    let mut u0 = source.u().clone();
    let mut v0 = source.v().clone();
    for ((mut uc, mut vc), &s) in u0
        .columns_mut()
        .into_iter()
        .zip(v0.columns_mut())
        .zip(source.singular_values().iter())
    {
        let root = s.max(0.0).sqrt();
        uc.mapv_inplace(|x| x * root);
        vc.mapv_inplace(|x| x * root);
    }
    (u0, v0)
}

/// Runs the alternating normalized-gradient-descent solver.
///
/// `source` supplies both the penalty bases and, when `init` is omitted, the
/// scaled default initializer; its rank must equal `spec.rank`.
pub fn fit(
    y0: &ObservedMatrix,
    source: &TruncatedSvd,
    init: Option<(Array2<f64>, Array2<f64>)>,
    spec: &FitSpec,
) -> Result<FitResult> {
    if source.rank() != spec.rank {
        return Err(Error::InvalidConfig(format!(
            "source decomposition has rank {} but the fit spec asks for {}",
            source.rank(),
            spec.rank
        )));
    }
    let bases = SourceBases::from_svd(source);
    let (u0, v0) = init.unwrap_or_else(|| default_init(source));
    fit_with_bases(y0, &bases, (u0, v0), spec)
}

/// Solver entry point with explicit bases and initializer.
pub fn fit_with_bases(
    y0: &ObservedMatrix,
    bases: &SourceBases,
    init: (Array2<f64>, Array2<f64>),
    spec: &FitSpec,
) -> Result<FitResult> {
    spec.validate()?;
    let (mut u, mut v) = init;
    check_dims(&u, &v, y0, bases, spec)?;

    let eps0 = objective_unchecked(&u, &v, y0, bases, spec);
    let mut trajectory = vec![eps0];
    let mut best_value = eps0;
    let mut best_t = 0usize;
    let mut u_best = u.clone();
    let mut v_best = v.clone();
    let mut termination = Termination::MaxIter;

    if !eps0.is_finite() {
        return Ok(FitResult {
            u_best,
            v_best,
            objective_trajectory: trajectory,
            t_best: 0,
            termination: Termination::Diverged,
        });
    }

    let c = spec.step_size;
    let mut eps_prev = eps0;
    for t in 1..=spec.max_iter {
        let resid = masked_residual(&u, &v, y0);
        let gu = grad_u_from_residual(&resid, &u, &v, y0, bases, spec);
        let gu_norm = frobenius_norm(&gu);
        if gu_norm >= ZERO_GRADIENT && gu_norm.is_finite() {
            let scale = -c * frobenius_norm(&u) / gu_norm;
            u.scaled_add(scale, &gu);
        }

        let resid = masked_residual(&u, &v, y0);
        let gv = grad_v_from_residual(&resid, &u, &v, y0, bases, spec);
        let gv_norm = frobenius_norm(&gv);
        if gv_norm >= ZERO_GRADIENT && gv_norm.is_finite() {
            let scale = -c * frobenius_norm(&v) / gv_norm;
            v.scaled_add(scale, &gv);
        }

        let eps_t = objective_unchecked(&u, &v, y0, bases, spec);
        trajectory.push(eps_t);

        if !eps_t.is_finite() {
            termination = Termination::Diverged;
            break;
        }
        if eps_t < best_value {
            best_value = eps_t;
            best_t = t;
            u_best.assign(&u);
            v_best.assign(&v);
        }
        if eps_t > spec.divergence_factor * eps0 {
            termination = Termination::Diverged;
            break;
        }
        if (eps_t - eps_prev).abs() < spec.tol {
            termination = Termination::Converged;
            break;
        }
        eps_prev = eps_t;
    }

    Ok(FitResult {
        u_best,
        v_best,
        objective_trajectory: trajectory,
        t_best: best_t,
        termination,
    })
}

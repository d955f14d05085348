//! Tuning-parameter selection: entry-holdout cross-validation, selection
//! against an external dataset, and rank selection.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::{fit, FitResult, FitSpec, Termination};
use crate::matrix::{truncated_svd, ObservedMatrix, TruncatedSvd};
use crate::rng::{child_rng, StreamRole};
use crate::screenot::adaptive_hard_threshold;

/// Candidate penalty values for the grid search.
///
/// `lambda1_values` parameterize the transfer penalty; with
/// `separate_penalties` the same list is swept independently for the row
/// and column penalties, making the grid |λ₁|² × |λ₂| cells.
#[derive(Debug, Clone, Serialize)]
pub struct PenaltyGrid {
    pub lambda1_values: Vec<f64>,
    pub lambda2_values: Vec<f64>,
    pub separate_penalties: bool,
}

impl PenaltyGrid {
    pub fn new(lambda1_values: Vec<f64>, lambda2_values: Vec<f64>) -> Result<Self> {
        let grid = Self {
            lambda1_values,
            lambda2_values,
            separate_penalties: false,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn with_separate_penalties(mut self) -> Self {
        self.separate_penalties = true;
        self
    }

    /// `count` log-equispaced values from `lo` to `hi` inclusive.
    pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
        if lo.is_nan() || hi.is_nan() || lo <= 0.0 || hi <= lo || count < 2 {
            return Err(Error::InvalidConfig(format!(
                "log grid needs 0 < lo < hi and count >= 2, got [{lo}, {hi}] x {count}"
            )));
        }
        let (llo, lhi) = (lo.log10(), hi.log10());
        let step = (lhi - llo) / (count - 1) as f64;
        Ok((0..count)
            .map(|i| {
                if i == count - 1 {
                    hi
                } else {
                    10f64.powf(llo + step * i as f64)
                }
            })
            .collect())
    }

    fn validate(&self) -> Result<()> {
        for (name, vals) in [
            ("lambda1", &self.lambda1_values),
            ("lambda2", &self.lambda2_values),
        ] {
            if vals.is_empty() {
                return Err(Error::InvalidConfig(format!("{name} grid is empty")));
            }
            for (i, &v) in vals.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "{name} grid value {v} is not a finite nonnegative number"
                    )));
                }
                if i > 0 && v <= vals[i - 1] {
                    return Err(Error::InvalidConfig(format!(
                        "{name} grid must be strictly ascending"
                    )));
                }
            }
        }
        Ok(())
    }

    /// All grid cells in lexicographic ascending order.
    pub fn cells(&self) -> Vec<LambdaTuple> {
        let mut out = Vec::new();
        if self.separate_penalties {
            for &l1r in &self.lambda1_values {
                for &l1c in &self.lambda1_values {
                    for &l2 in &self.lambda2_values {
                        out.push(LambdaTuple {
                            lambda1_row: l1r,
                            lambda1_col: l1c,
                            lambda2: l2,
                        });
                    }
                }
            }
        } else {
            for &l1 in &self.lambda1_values {
                for &l2 in &self.lambda2_values {
                    out.push(LambdaTuple {
                        lambda1_row: l1,
                        lambda1_col: l1,
                        lambda2: l2,
                    });
                }
            }
        }
        out
    }
}

/// One grid cell's penalties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaTuple {
    pub lambda1_row: f64,
    pub lambda1_col: f64,
    pub lambda2: f64,
}

impl LambdaTuple {
    fn apply(&self, template: &FitSpec) -> FitSpec {
        let mut spec = template.clone();
        spec.lambda1_row = self.lambda1_row;
        spec.lambda1_col = self.lambda1_col;
        spec.lambda2 = self.lambda2;
        spec
    }
}

/// Per-cell cross-validation record.
#[derive(Debug, Clone, Serialize)]
pub struct CellScore {
    pub lambdas: LambdaTuple,
    /// One value per fold; +∞ marks a diverged fit (recorded, never dropped).
    pub fold_mse: Vec<f64>,
    pub mean_mse: f64,
}

/// Outcome of a grid search.
#[derive(Debug)]
pub struct SelectionResult {
    /// Scores in grid (lexicographic) order.
    pub cells: Vec<CellScore>,
    /// Index into `cells` of the winner.
    pub best_index: usize,
    /// Fit on the full target matrix with the winning penalties.
    pub final_fit: FitResult,
    /// Seed used for fold assignment; absent for external selection.
    pub folds_seed: Option<u64>,
}

impl SelectionResult {
    pub fn best_lambdas(&self) -> LambdaTuple {
        self.cells[self.best_index].lambdas
    }
}

/// Partitions the observed entries into `k` disjoint sets whose sizes
/// differ by at most one. Deterministic in `seed`.
pub fn make_folds(
    y0: &ObservedMatrix,
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<(usize, usize)>>> {
    if k == 0 {
        return Err(Error::InvalidConfig("fold count must be positive".into()));
    }
    let mut indices = y0.observed_indices();
    if indices.len() < k {
        return Err(Error::TooFewObservations {
            observed: indices.len(),
            folds: k,
        });
    }
    let mut rng = child_rng(seed, 0, StreamRole::Folds);
    indices.shuffle(&mut rng);
    let n = indices.len();
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(indices[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

/// Mean squared error of `theta_hat` against the observed values of `y` on
/// the given holdout indices.
pub fn holdout_mse(
    theta_hat: &Array2<f64>,
    y: &ObservedMatrix,
    holdout: &[(usize, usize)],
) -> Result<f64> {
    if theta_hat.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            context: "holdout_mse",
            left: theta_hat.dim(),
            right: y.dim(),
        });
    }
    if holdout.is_empty() {
        return Err(Error::EmptyHoldout);
    }
    let mut acc = 0.0;
    for &(i, j) in holdout {
        match y.get(i, j) {
            Some(v) => {
                let d = theta_hat[(i, j)] - v;
                acc += d * d;
            }
            None => return Err(Error::HoldoutNotObserved { row: i, col: j }),
        }
    }
    Ok(acc / holdout.len() as f64)
}

const CV_FOLDS: usize = 4;

/// Four-fold entry-holdout cross-validation over the penalty grid, followed
/// by a refit on the full matrix with the winning penalties.
///
/// Each fold's training matrix masks out that fold's entries on top of any
/// originally missing ones. A cell whose fit diverges on a fold scores +∞
/// for that fold. Ties go to the first cell in grid order. Grid cells are
/// evaluated in parallel; the result does not depend on the worker count.
pub fn cv_select(
    y0: &ObservedMatrix,
    source: &TruncatedSvd,
    grid: &PenaltyGrid,
    spec_template: &FitSpec,
    seed: u64,
) -> Result<SelectionResult> {
    grid.validate()?;
    spec_template.validate()?;
    if y0.observed_count() < CV_FOLDS {
        return Err(Error::TooFewObservations {
            observed: y0.observed_count(),
            folds: CV_FOLDS,
        });
    }
    let folds = make_folds(y0, CV_FOLDS, seed)?;
    let training: Vec<ObservedMatrix> = folds
        .iter()
        .map(|holdout| y0.mask_out(holdout))
        .collect::<Result<_>>()?;

    let cells = grid.cells();
    let scored: Vec<CellScore> = cells
        .par_iter()
        .map(|lambdas| -> Result<CellScore> {
            let spec = lambdas.apply(spec_template);
            let mut fold_mse = Vec::with_capacity(CV_FOLDS);
            for (train, holdout) in training.iter().zip(folds.iter()) {
                let result = fit(train, source, None, &spec)?;
                let mse = if result.termination == Termination::Diverged {
                    f64::INFINITY
                } else {
                    holdout_mse(&result.theta_hat(), y0, holdout)?
                };
                fold_mse.push(mse);
            }
            let mean_mse = fold_mse.iter().sum::<f64>() / CV_FOLDS as f64;
            Ok(CellScore {
                lambdas: *lambdas,
                fold_mse,
                mean_mse,
            })
        })
        .collect::<Result<_>>()?;

    let best_index = argmin_cell(&scored);
    let final_fit = fit(y0, source, None, &scored[best_index].lambdas.apply(spec_template))?;
    Ok(SelectionResult {
        cells: scored,
        best_index,
        final_fit,
        folds_seed: Some(seed),
    })
}

/// Penalty selection scored against an external dataset: every cell is fit
/// on the full target matrix and scored on all observed entries of
/// `y0_ext`; the winning fit is returned as-is (no refit).
pub fn external_select(
    y0: &ObservedMatrix,
    source: &TruncatedSvd,
    y0_ext: &ObservedMatrix,
    grid: &PenaltyGrid,
    spec_template: &FitSpec,
) -> Result<SelectionResult> {
    grid.validate()?;
    spec_template.validate()?;
    if y0_ext.dim() != y0.dim() {
        return Err(Error::DimensionMismatch {
            context: "external_select",
            left: y0_ext.dim(),
            right: y0.dim(),
        });
    }
    let ext_indices = y0_ext.observed_indices();
    if ext_indices.is_empty() {
        return Err(Error::EmptyHoldout);
    }

    let cells = grid.cells();
    let scored: Vec<(CellScore, FitResult)> = cells
        .par_iter()
        .map(|lambdas| -> Result<(CellScore, FitResult)> {
            let spec = lambdas.apply(spec_template);
            let result = fit(y0, source, None, &spec)?;
            let mse = if result.termination == Termination::Diverged {
                f64::INFINITY
            } else {
                holdout_mse(&result.theta_hat(), y0_ext, &ext_indices)?
            };
            let score = CellScore {
                lambdas: *lambdas,
                fold_mse: vec![mse],
                mean_mse: mse,
            };
            Ok((score, result))
        })
        .collect::<Result<_>>()?;

    let mut cells_out = Vec::with_capacity(scored.len());
    let mut fits = Vec::with_capacity(scored.len());
    for (score, fit_result) in scored {
        cells_out.push(score);
        fits.push(fit_result);
    }
    let best_index = argmin_cell(&cells_out);
    let final_fit = fits.swap_remove(best_index);
    Ok(SelectionResult {
        cells: cells_out,
        best_index,
        final_fit,
        folds_seed: None,
    })
}

/// First index attaining the minimal mean MSE (grid order breaks ties).
fn argmin_cell(cells: &[CellScore]) -> usize {
    let mut best = 0;
    for (i, c) in cells.iter().enumerate().skip(1) {
        if c.mean_mse < cells[best].mean_mse {
            best = i;
        }
    }
    best
}

/// How to choose the rank from source-population data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RankStrategy {
    /// Always return the given rank.
    FixedRank(usize),
    /// Adaptive optimal hard thresholding of the singular values.
    ScreeNot,
    /// Largest consecutive singular-value ratio s_i / s_{i+1}, i ≤ k.
    GapFallback,
}

/// Selects the rank from a fully observed matrix with `upper_bound` as a
/// loose cap.
pub fn select_rank(y1: &Array2<f64>, upper_bound: usize, strategy: RankStrategy) -> Result<usize> {
    if let RankStrategy::FixedRank(r) = strategy {
        return Ok(r);
    }
    let n = y1.nrows().min(y1.ncols());
    if upper_bound < 1 || upper_bound >= n {
        return Err(Error::RankOutOfRange {
            rank: upper_bound,
            max: n.saturating_sub(1),
        });
    }
    let svd = truncated_svd(y1, n)?;
    let s = svd.singular_values();
    match strategy {
        RankStrategy::FixedRank(_) => unreachable!(),
        RankStrategy::ScreeNot => {
            let values: Vec<f64> = s.iter().copied().collect();
            let (_, rank) = adaptive_hard_threshold(&values, y1.nrows(), y1.ncols(), upper_bound)?;
            Ok(rank)
        }
        RankStrategy::GapFallback => {
            if s[0] == 0.0 {
                return Err(Error::RankZeroSelected);
            }
            let mut best_i = 1usize;
            let mut best_ratio = -1.0f64;
            for i in 1..=upper_bound {
                let hi = s[i - 1];
                let lo = s[i];
                let ratio = if lo == 0.0 {
                    if hi == 0.0 {
                        1.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    hi / lo
                };
                if ratio > best_ratio {
                    best_ratio = ratio;
                    best_i = i;
                }
            }
            Ok(best_i)
        }
    }
}

/// Default loose upper bound for rank selection: ⌊min(p,q)/3⌋ capped at 16
/// (and at least 1).
pub fn default_rank_upper_bound(p: usize, q: usize) -> usize {
    (p.min(q) / 3).clamp(1, 16)
}

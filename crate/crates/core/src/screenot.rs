//! Adaptive optimal hard thresholding of singular values.
//!
//! Given the singular values of a data matrix and a loose upper bound `k`
//! on the signal rank, the procedure:
//!
//! 1. builds a pseudo-noise spectrum by imputing the top `k` values from
//!    the order statistics just below them (winsorizing when the spectrum
//!    is too short to impute),
//! 2. treats that spectrum as the noise bulk and locates the threshold
//!    where keeping one extra spiked component stops paying for itself in
//!    Frobenius loss. In the spiked model this break-even point solves
//!    `-t·D'(t)/D(t) = 4`, with `D` the product transform
//!    `D(t) = φ(t)·(γ φ(t) + (1-γ)/t)` of the bulk spectrum and
//!    `γ = min(p,q)/max(p,q)`,
//! 3. counts the data singular values strictly above the threshold.
//!
//! For square white noise the rule recovers the classic `4/√3` constant.
//! The procedure makes no independence assumption on the noise, which is
//! what makes it usable under correlated noise.

use crate::error::{Error, Result};

/// Threshold and rank for descending singular values `y` of a
/// `rows × cols` matrix, with signal rank at most `k`.
pub fn adaptive_hard_threshold(y: &[f64], rows: usize, cols: usize, k: usize) -> Result<(f64, usize)> {
    let n = rows.min(cols);
    if y.len() != n {
        return Err(Error::InvalidConfig(format!(
            "expected {n} singular values, got {}",
            y.len()
        )));
    }
    if k < 1 || k >= n {
        return Err(Error::RankOutOfRange { rank: k, max: n - 1 });
    }
    let gamma = n as f64 / rows.max(cols) as f64;
    let pseudo = pseudo_noise_spectrum(y, k);
    let top = pseudo.iter().cloned().fold(0.0f64, f64::max);

    let threshold = if top == 0.0 {
        // No noise bulk at all: keep every strictly positive value.
        0.0
    } else {
        solve_break_even(&pseudo, gamma, top)
    };

    let rank = y.iter().filter(|&&v| v > threshold).count().min(k);
    if rank == 0 {
        return Err(Error::RankZeroSelected);
    }
    Ok((threshold, rank))
}

/// Replaces the top `k` singular values with a linear extrapolation of the
/// spacing observed between ranks k+1 and 2k+1 (imputation); falls back to
/// clamping at the (k+1)-th value when the spectrum is too short.
fn pseudo_noise_spectrum(y: &[f64], k: usize) -> Vec<f64> {
    let n = y.len();
    let mut out = y.to_vec();
    if 2 * k < n {
        let edge = y[k]; // y_{k+1} in 1-based terms
        let deep = y[2 * k]; // y_{2k+1}
        let diff = edge - deep;
        for l in 1..=k {
            // descending rank k+1-l gets edge + l/(k+1)·diff
            out[k - l] = edge + (l as f64 / (k + 1) as f64) * diff;
        }
    } else {
        for v in out.iter_mut().take(k) {
            *v = y[k];
        }
    }
    out
}

struct Transforms {
    psi: f64,
}

fn transforms(t: f64, pseudo: &[f64], gamma: f64) -> Transforms {
    let n = pseudo.len() as f64;
    let mut phi = 0.0;
    let mut dphi = 0.0;
    for &s in pseudo {
        let denom = t * t - s * s;
        phi += t / denom;
        dphi += -(t * t + s * s) / (denom * denom);
    }
    phi /= n;
    dphi /= n;
    let phi_bar = gamma * phi + (1.0 - gamma) / t;
    let dphi_bar = gamma * dphi - (1.0 - gamma) / (t * t);
    let d = phi * phi_bar;
    let dd = dphi * phi_bar + phi * dphi_bar;
    Transforms { psi: -t * dd / d }
}

/// Root of Ψ(t) = 4 above the bulk edge, by bisection. Ψ decreases from +∞
/// at the edge to 2 at infinity, so the root exists and is unique.
fn solve_break_even(pseudo: &[f64], gamma: f64, top: f64) -> f64 {
    let mut lo = top * (1.0 + 1e-12) + f64::MIN_POSITIVE;
    let mut hi = top * 2.0 + 1.0;
    while transforms(hi, pseudo, gamma).psi > 4.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return top;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if transforms(mid, pseudo, gamma).psi > 4.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-14 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

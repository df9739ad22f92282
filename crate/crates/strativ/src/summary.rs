//! Per-stratum instrument-exposure and instrument-outcome associations,
//! Wald ratios, and the nonparametric stratum weight function.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SeOrder};
use crate::error::{Error, Result};
use crate::numeric::{self, quantile_sorted};
use crate::stratify::StratumAssignment;

/// Instrument associations and Wald ratio for one stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary {
    /// 1-based stratum label from the assignment.
    pub stratum: usize,
    pub n_s: usize,
    /// Stratum exposure mean.
    pub x_bar: f64,
    /// Instrument-exposure slope and its standard error.
    pub alpha_hat: f64,
    pub se_alpha: f64,
    /// Instrument-outcome slope and its standard error.
    pub theta_hat: f64,
    pub se_theta: f64,
    /// Wald ratio theta/alpha.
    pub beta_hat: f64,
    pub se_beta: f64,
    /// Instrument association with Z*X, used by the factorization Q test.
    pub gamma_hat: Option<f64>,
    pub se_gamma: Option<f64>,
    /// Set when |alpha|/se(alpha) fell below the weak-stratum threshold.
    pub weak_instrument: bool,
}

/// Wald-ratio standard error by the delta method.
///
/// First order: se(theta)/|alpha|. Second order adds the alpha-uncertainty
/// term sqrt(se_t^2/a^2 + (t/a)^2 se_a^2/a^2).
pub fn wald_se(
    alpha: f64,
    se_alpha: f64,
    theta: f64,
    se_theta: f64,
    order: SeOrder,
) -> Result<f64> {
    if alpha == 0.0 {
        return Err(Error::ZeroInstrumentAssociation { stratum: 0 });
    }
    Ok(match order {
        SeOrder::First => se_theta / alpha.abs(),
        SeOrder::Second => {
            let a2 = alpha * alpha;
            (se_theta * se_theta / a2 + (theta / alpha).powi(2) * se_alpha * se_alpha / a2).sqrt()
        }
    })
}

/// Computes per-stratum summaries, ordered by ascending exposure mean.
///
/// Weak strata (|alpha|/se below `weak_threshold`) are flagged, not
/// rejected; a stratum with constant instrument or an exactly zero
/// instrument-exposure association is an error.
pub fn stratum_associations(
    data: &Dataset,
    assignment: &StratumAssignment,
    se_order: SeOrder,
    weak_threshold: f64,
) -> Result<Vec<StratumSummary>> {
    let mut out = Vec::with_capacity(assignment.strata_count);
    for (k, rows) in assignment.strata_rows().iter().enumerate() {
        let stratum = k + 1;
        if rows.len() < 2 {
            return Err(Error::StratumTooSmall {
                stratum,
                size: rows.len(),
            });
        }
        let z: Vec<f64> = rows.iter().map(|&i| data.z[i]).collect();
        let x: Vec<f64> = rows.iter().map(|&i| data.x[i]).collect();
        let y: Vec<f64> = rows.iter().map(|&i| data.y[i]).collect();
        let zx: Vec<f64> = rows.iter().map(|&i| data.z[i] * data.x[i]).collect();

        let ax = numeric::slope_regression(&z, &x).ok_or(Error::DegenerateInstrument {
            stratum: Some(stratum),
        })?;
        let ay = numeric::slope_regression(&z, &y).ok_or(Error::DegenerateInstrument {
            stratum: Some(stratum),
        })?;
        let ag = numeric::slope_regression(&z, &zx).ok_or(Error::DegenerateInstrument {
            stratum: Some(stratum),
        })?;

        if ax.slope == 0.0 {
            return Err(Error::ZeroInstrumentAssociation { stratum });
        }
        let beta_hat = ay.slope / ax.slope;
        let se_beta = wald_se(ax.slope, ax.se_slope, ay.slope, ay.se_slope, se_order)
            .map_err(|_| Error::ZeroInstrumentAssociation { stratum })?;
        let weak = ax.se_slope > 0.0 && ax.slope.abs() / ax.se_slope < weak_threshold;

        out.push(StratumSummary {
            stratum,
            n_s: rows.len(),
            x_bar: numeric::mean(&x),
            alpha_hat: ax.slope,
            se_alpha: ax.se_slope,
            theta_hat: ay.slope,
            se_theta: ay.se_slope,
            beta_hat,
            se_beta,
            gamma_hat: Some(ag.slope),
            se_gamma: Some(ag.se_slope),
            weak_instrument: weak,
        });
    }
    out.sort_by(|a, b| a.x_bar.partial_cmp(&b.x_bar).unwrap());
    Ok(out)
}

/// Upper-integral representation of a stratum weight function.
///
/// `cum_above[i]` estimates the weight mass at or above `grid[i]`:
/// Cov(Z, (X-t)+ | S) / Cov(Z, X-t0 | S) with t0 the stratum exposure
/// minimum. The value is exactly 1 at t0 and exactly 0 at or above the
/// stratum maximum; between grid points the curve is read by linear
/// interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFunction {
    pub stratum: usize,
    pub grid: Vec<f64>,
    pub cum_above: Vec<f64>,
}

impl WeightFunction {
    /// Integral of the weight function above `t`: linear interpolation of
    /// `cum_above`, clamped to 1 below the grid and 0 above it.
    pub fn integral_above(&self, t: f64) -> f64 {
        let grid = &self.grid;
        if t <= grid[0] {
            return if t == grid[0] { self.cum_above[0] } else { 1.0 };
        }
        if t >= *grid.last().unwrap() {
            return if t == *grid.last().unwrap() {
                *self.cum_above.last().unwrap()
            } else {
                0.0
            };
        }
        // binary search for the bracketing segment
        let mut lo = 0usize;
        let mut hi = grid.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if grid[mid] <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if grid[lo] == t {
            return self.cum_above[lo];
        }
        let w = (t - grid[lo]) / (grid[hi] - grid[lo]);
        self.cum_above[lo] + w * (self.cum_above[hi] - self.cum_above[lo])
    }

    /// Exact integral of the piecewise-linear `cum_above` curve over
    /// [a, b], using the clamped values outside the grid.
    pub fn integral_of_cum_above(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let g0 = self.grid[0];
        let gmax = *self.grid.last().unwrap();
        let mut total = 0.0;
        // region below the grid contributes value 1
        if a < g0 {
            total += g0.min(b) - a;
        }
        let lo = a.max(g0);
        let hi = b.min(gmax);
        if lo < hi {
            // walk grid segments overlapping [lo, hi]
            for i in 0..self.grid.len() - 1 {
                let (s0, s1) = (self.grid[i], self.grid[i + 1]);
                if s1 <= lo || s0 >= hi {
                    continue;
                }
                let a0 = lo.max(s0);
                let b0 = hi.min(s1);
                let va = self.cum_above[i]
                    + (a0 - s0) / (s1 - s0) * (self.cum_above[i + 1] - self.cum_above[i]);
                let vb = self.cum_above[i]
                    + (b0 - s0) / (s1 - s0) * (self.cum_above[i + 1] - self.cum_above[i]);
                total += 0.5 * (va + vb) * (b0 - a0);
            }
        }
        // region above the grid contributes 0
        total
    }
}

/// Estimates the weight function of one stratum on the given grid.
///
/// The denominator is the numerator evaluated at the stratum exposure
/// minimum, so normalization at that point is exact by construction.
pub fn estimate_weight_function(
    data: &Dataset,
    assignment: &StratumAssignment,
    stratum: usize,
    grid: &[f64],
) -> Result<WeightFunction> {
    if stratum == 0 || stratum > assignment.strata_count {
        return Err(Error::InvalidArgument(format!(
            "stratum index {stratum} out of range"
        )));
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty weight grid".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "weight grid must be strictly increasing".into(),
        ));
    }
    let rows: Vec<usize> = assignment
        .assignment
        .iter()
        .enumerate()
        .filter_map(|(i, a)| (*a == Some(stratum as u32)).then_some(i))
        .collect();
    if rows.len() < 2 {
        return Err(Error::StratumTooSmall {
            stratum,
            size: rows.len(),
        });
    }

    let x: Vec<f64> = rows.iter().map(|&i| data.x[i]).collect();
    let z: Vec<f64> = rows.iter().map(|&i| data.z[i]).collect();
    // Center the instrument twice so the residual coefficient sum is at the
    // floating-point floor; this is what keeps cum_above at 1 below the
    // stratum minimum to ~1e-15.
    let mut c: Vec<f64> = {
        let m = numeric::mean(&z);
        z.iter().map(|v| v - m).collect()
    };
    let m2 = numeric::mean(&c);
    for v in &mut c {
        *v -= m2;
    }

    let x_min = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let numerator = |t: f64| -> f64 {
        c.iter()
            .zip(&x)
            .map(|(ci, xi)| ci * (xi - t).max(0.0))
            .sum()
    };
    let denom = numerator(x_min);
    if denom == 0.0 {
        return Err(Error::ZeroDenominator { stratum });
    }

    let cum_above: Vec<f64> = grid.iter().map(|&t| numerator(t) / denom).collect();
    Ok(WeightFunction {
        stratum,
        grid: grid.to_vec(),
        cum_above,
    })
}

/// Pooled exposure quantile grid at probabilities p/P, p = 0..P, with the
/// stratum minimum available exactly because p=0 is the sample minimum.
/// Duplicate quantiles (coarsened exposures) are collapsed.
pub fn pooled_quantile_grid(data: &Dataset, p: usize) -> Vec<f64> {
    let sorted = data.sorted_x();
    let mut grid: Vec<f64> = (0..=p)
        .map(|i| quantile_sorted(&sorted, i as f64 / p as f64))
        .collect();
    grid.dedup();
    grid
}

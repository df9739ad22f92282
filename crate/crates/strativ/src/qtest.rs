//! Cochran-Q effect-linearity tests over stratum summaries, including the
//! decomposition (df K-2) and factorization (df K-3) variants that stay
//! valid under the corresponding invalid-instrument models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{bracketed_min, chi_square_sf, nelder_mead};
use crate::summary::StratumSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QVariant {
    Standard,
    Decomposition,
    Factorization,
}

/// Fitted nuisance values at the Q minimum.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct QEstimates {
    pub beta: Option<f64>,
    pub c0: Option<f64>,
    pub c1: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QTestResult {
    pub variant: QVariant,
    pub q: f64,
    pub df: usize,
    pub p_value: f64,
    pub estimates: QEstimates,
}

fn q_standard(summaries: &[StratumSummary], beta: f64) -> f64 {
    summaries
        .iter()
        .map(|s| {
            let num = s.theta_hat - beta * s.alpha_hat;
            let den = s.se_theta * s.se_theta + beta * beta * s.se_alpha * s.se_alpha;
            num * num / den
        })
        .sum()
}

fn q_decomposition(summaries: &[StratumSummary], c0: f64, c1: f64) -> f64 {
    summaries
        .iter()
        .map(|s| {
            let num = s.theta_hat - c0 - c1 * s.alpha_hat;
            let den = s.se_theta * s.se_theta + c1 * c1 * s.se_alpha * s.se_alpha;
            num * num / den
        })
        .sum()
}

fn q_factorization(summaries: &[StratumSummary], c0: f64, c1: f64, beta: f64) -> Result<f64> {
    let mut q = 0.0;
    for s in summaries {
        let (gamma, se_gamma) = match (s.gamma_hat, s.se_gamma) {
            (Some(g), Some(se)) => (g, se),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "stratum {} is missing the Z*X association needed by the factorization test",
                    s.stratum
                )))
            }
        };
        let num = s.theta_hat - c0 - c1 * gamma - beta * s.alpha_hat;
        let den = s.se_theta * s.se_theta
            + c1 * c1 * se_gamma * se_gamma
            + beta * beta * s.se_alpha * s.se_alpha;
        q += num * num / den;
    }
    Ok(q)
}

/// Inverse-variance-weighted ratio estimate, the minimization start point.
fn ivw_start(summaries: &[StratumSummary]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for s in summaries {
        let w = 1.0 / (s.se_theta * s.se_theta).max(1e-300);
        num += w * s.alpha_hat * s.theta_hat;
        den += w * s.alpha_hat * s.alpha_hat;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Weighted least squares of theta on the given regressor columns,
/// weighting by 1/se(theta)^2. Used only to initialize the minimizers.
fn wls_start(summaries: &[StratumSummary], with_gamma: bool) -> Vec<f64> {
    use nalgebra::{DMatrix, DVector};
    let k = summaries.len();
    let p = if with_gamma { 3 } else { 2 };
    let mut design = DMatrix::zeros(k, p);
    let mut rhs = DVector::zeros(k);
    for (i, s) in summaries.iter().enumerate() {
        let w = 1.0 / (s.se_theta * s.se_theta).max(1e-300);
        let sw = w.sqrt();
        design[(i, 0)] = sw;
        design[(i, 1)] = sw * s.alpha_hat;
        if with_gamma {
            design[(i, 2)] = sw * s.gamma_hat.unwrap_or(0.0);
        }
        rhs[i] = sw * s.theta_hat;
    }
    let gram = design.transpose() * &design;
    let xty = design.transpose() * &rhs;
    gram.lu()
        .solve(&xty)
        .map(|v| v.iter().cloned().collect())
        .unwrap_or_else(|| vec![0.0; p])
}

fn validate(summaries: &[StratumSummary], min_k: usize, what: &str) -> Result<()> {
    if summaries.len() < min_k {
        return Err(Error::InvalidArgument(format!(
            "{what} needs at least {min_k} strata, got {}",
            summaries.len()
        )));
    }
    for s in summaries {
        if !crate::numeric::is_positive_finite(s.se_theta) {
            return Err(Error::InvalidArgument(format!(
                "stratum {} has non-positive se(theta)",
                s.stratum
            )));
        }
    }
    Ok(())
}

/// Standard linearity test: Q(beta) minimized over beta, chi-square with
/// K-1 degrees of freedom under the null of a constant effect intensity.
pub fn q_linearity(summaries: &[StratumSummary]) -> Result<QTestResult> {
    validate(summaries, 2, "the linearity Q test")?;
    let start = ivw_start(summaries);
    let scale = start.abs().max(1.0);
    let (beta, q) = bracketed_min(|b| q_standard(summaries, b), start, scale, 1e-10);
    let df = summaries.len() - 1;
    Ok(QTestResult {
        variant: QVariant::Standard,
        q,
        df,
        p_value: chi_square_sf(q, df as f64),
        estimates: QEstimates {
            beta: Some(beta),
            ..Default::default()
        },
    })
}

fn nm_multistart<F: Fn(&[f64]) -> f64>(f: F, start: &[f64]) -> (Vec<f64>, f64) {
    let steps = [0.5, -0.5, 0.1, 2.0, -2.0];
    let mut best: Option<(Vec<f64>, f64)> = None;
    for &step in &steps {
        let (x, _) = nelder_mead(&f, start, step, 1e-12, 10_000);
        // polish from the first optimum with a tighter simplex
        let (x, v) = nelder_mead(&f, &x, step.abs() * 0.01, 1e-13, 10_000);
        if best.as_ref().map(|(_, bv)| v < *bv).unwrap_or(true) {
            best = Some((x, v));
        }
    }
    best.unwrap()
}

/// Linearity test under the additive invalid-instrument decomposition:
/// Q(c0, c1) minimized jointly, chi-square with K-2 degrees of freedom.
pub fn q_linearity_decomposition(summaries: &[StratumSummary]) -> Result<QTestResult> {
    validate(summaries, 3, "the decomposition Q test")?;
    let start = wls_start(summaries, false);
    let (est, q) = nm_multistart(|v| q_decomposition(summaries, v[0], v[1]), &start);
    let df = summaries.len() - 2;
    Ok(QTestResult {
        variant: QVariant::Decomposition,
        q,
        df,
        p_value: chi_square_sf(q, df as f64),
        estimates: QEstimates {
            beta: None,
            c0: Some(est[0]),
            c1: Some(est[1]),
        },
    })
}

/// Linearity test under the multiplicative factorization with the
/// instrument association with Z*X as an extra nuisance column; chi-square
/// with K-3 degrees of freedom.
pub fn q_linearity_factorization(summaries: &[StratumSummary]) -> Result<QTestResult> {
    validate(summaries, 4, "the factorization Q test")?;
    if summaries
        .iter()
        .any(|s| s.gamma_hat.is_none() || s.se_gamma.is_none())
    {
        return Err(Error::InvalidArgument(
            "factorization test requires gamma estimates on every stratum".into(),
        ));
    }
    let start = wls_start(summaries, true);
    // parameter order: (c0, beta(alpha), c1(gamma)) from the WLS columns
    let f = |v: &[f64]| q_factorization(summaries, v[0], v[2], v[1]).unwrap();
    let (est, q) = nm_multistart(f, &start);
    let df = summaries.len() - 3;
    Ok(QTestResult {
        variant: QVariant::Factorization,
        q,
        df,
        p_value: chi_square_sf(q, df as f64),
        estimates: QEstimates {
            beta: Some(est[1]),
            c0: Some(est[0]),
            c1: Some(est[2]),
        },
    })
}

/// Evaluates the variant's Q at explicitly supplied parameters; used by the
/// minimizer-property checks.
pub fn q_at(summaries: &[StratumSummary], variant: QVariant, params: &[f64]) -> Result<f64> {
    match variant {
        QVariant::Standard => Ok(q_standard(summaries, params[0])),
        QVariant::Decomposition => Ok(q_decomposition(summaries, params[0], params[1])),
        QVariant::Factorization => q_factorization(summaries, params[0], params[1], params[2]),
    }
}

//! Penalized weighted least squares for the effect-shape expansion:
//! design construction (functional or scalar), the closed-form ridge
//! solution, GCV selection of the penalty weight, and effect curves with
//! frequentist bands.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::numeric::normal_quantile;
use crate::summary::{StratumSummary, WeightFunction};
use crate::susie::{EffectCurve, Provenance};

/// Whether design entries are weight-function inner products or basis
/// evaluations at the stratum exposure means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignMode {
    Sof,
    Sos,
}

/// Design for the stratum-level regression of Wald ratios on the basis.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub entries: DMatrix<f64>,
    pub mode: DesignMode,
    /// Diagonal of Sigma: squared standard errors of the responses.
    pub sigma_diag: Vec<f64>,
    /// Roughness penalty R (reported parameterization).
    pub penalty: DMatrix<f64>,
    /// Derivative order of the penalty.
    pub deriv_order: usize,
    /// Internal-to-reported coefficient map used for conditioning;
    /// identity when absent.
    pub reparam: Option<DMatrix<f64>>,
}

impl DesignMatrix {
    pub fn strata(&self) -> usize {
        self.entries.nrows()
    }

    pub fn terms(&self) -> usize {
        self.entries.ncols()
    }

    /// Attaches response variances from the stratum summaries.
    pub fn with_sigma_from(mut self, summaries: &[StratumSummary]) -> Result<Self> {
        if summaries.len() != self.strata() {
            return Err(Error::InvalidArgument(format!(
                "{} summaries for a {}-row design",
                summaries.len(),
                self.strata()
            )));
        }
        for s in summaries {
            if !crate::numeric::is_positive_finite(s.se_beta) {
                return Err(Error::InvalidArgument(format!(
                    "stratum {} has non-positive se(beta); cannot weight",
                    s.stratum
                )));
            }
        }
        self.sigma_diag = summaries.iter().map(|s| s.se_beta * s.se_beta).collect();
        Ok(self)
    }

    /// Attaches the roughness penalty of order m for the given basis.
    pub fn with_penalty(mut self, basis: &BasisSet, m: usize) -> Result<Self> {
        self.penalty = basis.penalty_matrix(m)?;
        self.deriv_order = m;
        Ok(self)
    }
}

/// Scalar-on-function design: entry (s, l) = <phi_l, W_s>.
pub fn build_sof_design(weights: &[WeightFunction], basis: &BasisSet) -> Result<DesignMatrix> {
    if weights.is_empty() {
        return Err(Error::InvalidArgument("no weight functions".into()));
    }
    let k = weights.len();
    let l = basis.len();
    let entries = DMatrix::from_fn(k, l, |s, j| basis.inner_product_weight(j, &weights[s]));
    Ok(DesignMatrix {
        entries,
        mode: DesignMode::Sof,
        sigma_diag: vec![1.0; k],
        penalty: DMatrix::zeros(l, l),
        deriv_order: 2,
        reparam: basis.reparameterization(),
    })
}

/// Scalar-on-scalar design: entry (s, l) = phi_l(x_bar_s).
pub fn build_sos_design(summaries: &[StratumSummary], basis: &BasisSet) -> Result<DesignMatrix> {
    if summaries.is_empty() {
        return Err(Error::InvalidArgument("no stratum summaries".into()));
    }
    let k = summaries.len();
    let l = basis.len();
    let entries = DMatrix::from_fn(k, l, |s, j| basis.evaluate(j, summaries[s].x_bar));
    Ok(DesignMatrix {
        entries,
        mode: DesignMode::Sos,
        sigma_diag: vec![1.0; k],
        penalty: DMatrix::zeros(l, l),
        deriv_order: 2,
        reparam: basis.reparameterization(),
    })
}

/// Fitted coefficients with their sandwich covariance (Sigma treated as
/// known) in the reported parameterization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub b_hat: Vec<f64>,
    /// Row-major L x L covariance of b_hat.
    pub cov_b: Vec<Vec<f64>>,
    pub lambda: f64,
    /// (lambda, GCV score) pairs; infinite score marks a candidate that was
    /// excluded as degenerate or singular.
    pub gcv_trace: Vec<(f64, f64)>,
}

impl FitResult {
    pub fn cov_matrix(&self) -> DMatrix<f64> {
        let l = self.b_hat.len();
        DMatrix::from_fn(l, l, |i, j| self.cov_b[i][j])
    }
}

struct Whitened {
    /// Sigma^{-1/2} X T, where T is the internal parameterization.
    xw: DMatrix<f64>,
    /// Sigma^{-1/2} beta_hat.
    yw: DVector<f64>,
    /// T^T R T.
    r_int: DMatrix<f64>,
    t: DMatrix<f64>,
}

fn whiten(design: &DesignMatrix, beta_hats: &[f64]) -> Result<Whitened> {
    let k = design.strata();
    let l = design.terms();
    if beta_hats.len() != k {
        return Err(Error::InvalidArgument(format!(
            "{} responses for a {k}-row design",
            beta_hats.len()
        )));
    }
    if design.sigma_diag.iter().any(|v| !crate::numeric::is_positive_finite(*v)) {
        return Err(Error::InvalidArgument(
            "response variances must be positive".into(),
        ));
    }
    let t = design
        .reparam
        .clone()
        .unwrap_or_else(|| DMatrix::identity(l, l));
    let mut xw = &design.entries * &t;
    let mut yw = DVector::from_column_slice(beta_hats);
    for s in 0..k {
        let w = 1.0 / design.sigma_diag[s].sqrt();
        for j in 0..l {
            xw[(s, j)] *= w;
        }
        yw[s] *= w;
    }
    let r_int = t.transpose() * &design.penalty * &t;
    Ok(Whitened { xw, yw, r_int, t })
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let svd = m.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Closed-form penalized weighted least squares:
/// b = (X' Sigma^-1 X + lambda R)^-1 X' Sigma^-1 beta_hat, with the
/// sandwich covariance under known Sigma.
pub fn fit_weighted_ridge(
    design: &DesignMatrix,
    beta_hats: &[f64],
    lambda: f64,
) -> Result<FitResult> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument("lambda must be >= 0".into()));
    }
    let w = whiten(design, beta_hats)?;
    let gram = w.xw.transpose() * &w.xw;
    let a = &gram + lambda * &w.r_int;
    let a_inv = match a.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => a
            .clone()
            .try_inverse()
            .filter(|inv| inv.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::Singular {
                condition: condition_estimate(&a),
            })?,
    };
    let c = &a_inv * (w.xw.transpose() * &w.yw);
    let cov_c = &a_inv * &gram * &a_inv;
    let b = &w.t * &c;
    let cov_b = &w.t * cov_c * w.t.transpose();
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular {
            condition: condition_estimate(&a),
        });
    }
    let l = b.len();
    Ok(FitResult {
        b_hat: b.iter().cloned().collect(),
        cov_b: (0..l)
            .map(|i| (0..l).map(|j| cov_b[(i, j)]).collect())
            .collect(),
        lambda,
        gcv_trace: Vec::new(),
    })
}

/// GCV(lambda) = (K / (K - tr H)) * (SSE / (K - tr H)). Returns the score
/// and the trace of the hat matrix, or None for singular systems.
fn gcv_score(w: &Whitened, lambda: f64) -> Option<(f64, f64)> {
    let k = w.xw.nrows() as f64;
    let gram = w.xw.transpose() * &w.xw;
    let a = &gram + lambda * &w.r_int;
    let a_inv = a.clone().cholesky().map(|ch| ch.inverse()).or_else(|| {
        a.try_inverse()
            .filter(|inv| inv.iter().all(|v| v.is_finite()))
    })?;
    let tr_h = (&a_inv * &gram).trace();
    let c = &a_inv * (w.xw.transpose() * &w.yw);
    let resid = &w.yw - &w.xw * &c;
    let sse = resid.norm_squared();
    let denom = k - tr_h;
    Some((k / denom * (sse / denom), tr_h))
}

/// Selects lambda over a grid by generalized cross-validation.
///
/// Candidates whose effective degrees of freedom exhaust the strata
/// (tr H ~ K) are excluded with an infinite score in the trace; ties go to
/// the larger lambda.
pub fn gcv_select(
    design: &DesignMatrix,
    beta_hats: &[f64],
    lambda_grid: &[f64],
) -> Result<(f64, FitResult)> {
    if lambda_grid.is_empty() {
        return Err(Error::InvalidArgument("lambda grid is empty".into()));
    }
    let w = whiten(design, beta_hats)?;
    let k = design.strata() as f64;
    let mut grid: Vec<f64> = lambda_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut trace = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None; // (score, lambda)
    for &lambda in &grid {
        if lambda < 0.0 {
            return Err(Error::InvalidArgument("lambda must be >= 0".into()));
        }
        let score = match gcv_score(&w, lambda) {
            Some((score, tr_h)) if k - tr_h > 1e-7 * k.max(1.0) && score.is_finite() => score,
            _ => f64::INFINITY,
        };
        trace.push((lambda, score));
        if score.is_finite() {
            let better = match best {
                None => true,
                // <= prefers the larger lambda on ties (grid is ascending)
                Some((s, _)) => score <= s,
            };
            if better {
                best = Some((score, lambda));
            }
        }
    }
    let (_, lambda) = best.ok_or_else(|| {
        Error::GcvDegenerate("every candidate was singular or saturated the strata".into())
    })?;
    let mut fit = fit_weighted_ridge(design, beta_hats, lambda)?;
    fit.gcv_trace = trace;
    Ok((lambda, fit))
}

/// Default penalty-weight grid: 0 plus 50 log-spaced points in [1e-6, 1e4].
pub fn default_lambda_grid() -> Vec<f64> {
    let mut grid = vec![0.0];
    let (lo, hi) = (1e-6f64.ln(), 1e4f64.ln());
    for i in 0..50 {
        grid.push((lo + (hi - lo) * i as f64 / 49.0).exp());
    }
    grid
}

/// Evaluates the fitted effect function and its derivative on a grid with
/// pointwise confidence bands at the given level. The effect is anchored at
/// h(0) = 0, so its band width vanishes there.
pub fn effect_from_fit(
    fit: &FitResult,
    basis: &BasisSet,
    x_grid: &[f64],
    level: f64,
) -> Result<EffectCurve> {
    let l = basis.len();
    if fit.b_hat.len() != l {
        return Err(Error::InvalidArgument(format!(
            "fit has {} coefficients but basis has {l}",
            fit.b_hat.len()
        )));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidArgument("level must be in (0, 1)".into()));
    }
    let z = normal_quantile(0.5 + level / 2.0);
    let cov = fit.cov_matrix();

    let mut h = Vec::with_capacity(x_grid.len());
    let mut h_lo = Vec::with_capacity(x_grid.len());
    let mut h_hi = Vec::with_capacity(x_grid.len());
    let mut h_prime = Vec::with_capacity(x_grid.len());
    for &x in x_grid {
        let antider = DVector::from_fn(l, |j, _| basis.antiderivative(j, 0.0, x));
        let phi = DVector::from_fn(l, |j, _| basis.evaluate(j, x));
        let b = DVector::from_column_slice(&fit.b_hat);
        let value = antider.dot(&b);
        let var = (antider.transpose() * &cov * &antider)[(0, 0)].max(0.0);
        let sd = var.sqrt();
        h.push(value);
        h_lo.push(value - z * sd);
        h_hi.push(value + z * sd);
        h_prime.push(phi.dot(&b));
    }
    Ok(EffectCurve {
        x_grid: x_grid.to_vec(),
        h,
        h_lo,
        h_hi,
        h_prime: Some(h_prime),
        provenance: Provenance::ParametricFrequentist,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::summary::WeightFunction;

    fn design_from(entries: DMatrix<f64>, sigma: Vec<f64>) -> DesignMatrix {
        let l = entries.ncols();
        DesignMatrix {
            entries,
            mode: DesignMode::Sos,
            sigma_diag: sigma,
            penalty: DMatrix::zeros(l, l),
            deriv_order: 2,
            reparam: None,
        }
    }

    #[test]
    fn identity_design_interpolates() {
        let d = design_from(DMatrix::identity(3, 3), vec![1.0; 3]);
        let fit = fit_weighted_ridge(&d, &[1.0, -2.0, 0.5], 0.0).unwrap();
        for (got, want) in fit.b_hat.iter().zip([1.0, -2.0, 0.5]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_ridge_shrinks_to_zero() {
        let mut d = design_from(DMatrix::identity(3, 3), vec![1.0; 3]);
        d.penalty = DMatrix::identity(3, 3);
        let fit = fit_weighted_ridge(&d, &[1.0, -2.0, 0.5], 1e12).unwrap();
        assert!(fit.b_hat.iter().all(|b| b.abs() < 1e-9));
    }

    #[test]
    fn matches_qr_oracle_on_whitened_toy_system() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 1.0, 1.5, 1.0, 3.0]);
        let sigma = vec![0.25, 1.0, 4.0];
        let beta = [2.0, 3.0, 5.5];
        let d = design_from(x.clone(), sigma.clone());
        let fit = fit_weighted_ridge(&d, &beta, 0.0).unwrap();

        // oracle: QR solve of Sigma^{-1/2} X b ~ Sigma^{-1/2} beta
        let mut xw = x;
        let mut yw = DVector::from_column_slice(&beta);
        for i in 0..3 {
            let w = 1.0 / sigma[i].sqrt();
            for j in 0..2 {
                xw[(i, j)] *= w;
            }
            yw[i] *= w;
        }
        let qr = xw.qr();
        let rhs = qr.q().transpose() * &yw;
        let oracle = qr.r().solve_upper_triangular(&rhs).unwrap();
        for j in 0..2 {
            assert!(
                (fit.b_hat[j] - oracle[j]).abs() < 1e-10,
                "coef {j}: {} vs {}",
                fit.b_hat[j],
                oracle[j]
            );
        }
    }

    #[test]
    fn sos_design_rows_are_basis_evaluations() {
        let summaries: Vec<StratumSummary> = [0.0, 1.0, 2.0]
            .iter()
            .enumerate()
            .map(|(i, &xb)| StratumSummary {
                stratum: i + 1,
                n_s: 10,
                x_bar: xb,
                alpha_hat: 1.0,
                se_alpha: 0.1,
                theta_hat: 1.0,
                se_theta: 0.1,
                beta_hat: 1.0,
                se_beta: 0.1,
                gamma_hat: None,
                se_gamma: None,
                weak_instrument: false,
            })
            .collect();
        let basis = BasisSet::polynomial(1, (0.0, 2.0)).unwrap();
        let d = build_sos_design(&summaries, &basis).unwrap();
        let expect = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        assert_eq!(d.entries, expect);

        let ind = BasisSet::indicator(vec![0.0], (-2.0, 2.0)).unwrap();
        let mut neg = summaries;
        neg[0].x_bar = -1.0;
        let d2 = build_sos_design(&neg, &ind).unwrap();
        assert_eq!(d2.entries[(0, 0)], 0.0);
    }

    #[test]
    fn sof_constant_basis_column_is_ones() {
        let weights = vec![
            WeightFunction {
                stratum: 1,
                grid: vec![0.0, 1.0],
                cum_above: vec![1.0, 0.0],
            },
            WeightFunction {
                stratum: 2,
                grid: vec![0.0, 1.0, 2.0],
                cum_above: vec![1.0, 0.7, 0.0],
            },
        ];
        let basis = BasisSet::polynomial(0, (0.0, 2.0)).unwrap();
        let d = build_sof_design(&weights, &basis).unwrap();
        assert!((d.entries[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((d.entries[(1, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gcv_single_candidate_returns_it() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let d = design_from(x, vec![1.0; 4]);
        let (lambda, fit) = gcv_select(&d, &[0.0, 1.0, 2.0, 3.1], &[0.0]).unwrap();
        assert_eq!(lambda, 0.0);
        assert_eq!(fit.gcv_trace.len(), 1);
        assert!(fit.gcv_trace[0].1.is_finite());
    }

    #[test]
    fn gcv_excludes_saturated_interpolation() {
        // Square full-rank design at lambda = 0 has tr(H) = K.
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let mut d = design_from(x, vec![1.0; 2]);
        d.penalty = DMatrix::identity(2, 2);
        let err = gcv_select(&d, &[1.0, 2.0], &[0.0]).unwrap_err();
        assert!(matches!(err, Error::GcvDegenerate(_)));
        // With a usable candidate alongside, the degenerate one is skipped.
        let (lambda, fit) = gcv_select(&d, &[1.0, 2.0], &[0.0, 0.5]).unwrap();
        assert_eq!(lambda, 0.5);
        assert!(fit.gcv_trace[0].1.is_infinite());
    }

    #[test]
    fn gcv_invariant_to_row_permutation() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let mut d = design_from(x, vec![0.5, 1.0, 2.0, 4.0]);
        d.penalty = DMatrix::identity(2, 2);
        let beta = [0.1, 1.2, 1.9, 3.2];
        let (_, fit) = gcv_select(&d, &beta, &[0.0, 1.0, 10.0]).unwrap();

        let perm = [2usize, 0, 3, 1];
        let xp = DMatrix::from_fn(4, 2, |i, j| d.entries[(perm[i], j)]);
        let mut dp = design_from(xp, perm.iter().map(|&i| d.sigma_diag[i]).collect());
        dp.penalty = DMatrix::identity(2, 2);
        let betap: Vec<f64> = perm.iter().map(|&i| beta[i]).collect();
        let (_, fitp) = gcv_select(&dp, &betap, &[0.0, 1.0, 10.0]).unwrap();

        for (a, b) in fit.gcv_trace.iter().zip(&fitp.gcv_trace) {
            assert!((a.1 - b.1).abs() < 1e-10);
        }
    }

    #[test]
    fn effect_curve_is_anchored_and_linear_for_constant_basis() {
        let basis = BasisSet::polynomial(0, (0.0, 5.0)).unwrap();
        let fit = FitResult {
            b_hat: vec![2.0],
            cov_b: vec![vec![0.04]],
            lambda: 0.0,
            gcv_trace: vec![],
        };
        let curve = effect_from_fit(&fit, &basis, &[0.0, 1.0, 3.0], 0.95).unwrap();
        assert_eq!(curve.h[0], 0.0);
        assert_eq!(curve.h_lo[0], 0.0);
        assert_eq!(curve.h_hi[0], 0.0);
        assert!((curve.h[1] - 2.0).abs() < 1e-12);
        assert!((curve.h[2] - 6.0).abs() < 1e-12);
        let hp = curve.h_prime.as_ref().unwrap();
        assert!(hp.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn effect_curve_hand_integral() {
        // h'(s) = 1 + s, h(3) = 3 + 4.5
        let basis = BasisSet::polynomial(1, (0.0, 5.0)).unwrap();
        let fit = FitResult {
            b_hat: vec![1.0, 1.0],
            cov_b: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            lambda: 0.0,
            gcv_trace: vec![],
        };
        let curve = effect_from_fit(&fit, &basis, &[3.0], 0.9).unwrap();
        assert!((curve.h[0] - 7.5).abs() < 1e-12);
    }

    #[test]
    fn gcv_selection_is_near_the_grid_oracle() {
        // Quadratic intensity truth observed with noise through a 5-knot
        // piecewise-linear basis; the GCV pick must trail the exhaustive
        // grid oracle by at most 20% in curve MSE against the truth.
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(314);
        let k = 25;
        let truth = |x: f64| 0.3 + 0.5 * x * x;
        let basis =
            BasisSet::piecewise_linear(vec![-2.0, -1.0, 0.0, 1.0, 2.0], (-2.5, 2.5)).unwrap();
        let x_bars: Vec<f64> = (0..k)
            .map(|i| -2.4 + 4.8 * i as f64 / (k - 1) as f64)
            .collect();
        let se = 0.25;
        let entries = DMatrix::from_fn(k, basis.len(), |s, j| basis.evaluate(j, x_bars[s]));
        let beta: Vec<f64> = x_bars
            .iter()
            .map(|&x| truth(x) + se * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let mut design = design_from(entries, vec![se * se; k]);
        design.penalty = basis.penalty_matrix(1).unwrap();
        design.deriv_order = 1;

        let mut grid = vec![];
        for i in 0..33 {
            grid.push(10f64.powf(-4.0 + 8.0 * i as f64 / 32.0));
        }
        let eval = |fit: &FitResult| -> f64 {
            // intensity MSE on a fine grid
            let pts = 101;
            (0..pts)
                .map(|i| {
                    let x = -2.4 + 4.8 * i as f64 / (pts - 1) as f64;
                    let fitted: f64 = (0..basis.len())
                        .map(|j| fit.b_hat[j] * basis.evaluate(j, x))
                        .sum();
                    (fitted - truth(x)).powi(2)
                })
                .sum::<f64>()
                / pts as f64
        };
        let mut oracle_best = f64::INFINITY;
        for &lambda in &grid {
            if let Ok(fit) = fit_weighted_ridge(&design, &beta, lambda) {
                oracle_best = oracle_best.min(eval(&fit));
            }
        }
        let (_, selected) = gcv_select(&design, &beta, &grid).unwrap();
        let selected_mse = eval(&selected);
        assert!(
            selected_mse <= 1.2 * oracle_best,
            "gcv mse {selected_mse} vs oracle best {oracle_best}"
        );
    }

    #[test]
    fn polynomial_reparam_changes_nothing_observable() {
        // Same fit with and without the Legendre map.
        let summaries: Vec<StratumSummary> = (0..6)
            .map(|i| StratumSummary {
                stratum: i + 1,
                n_s: 10,
                x_bar: i as f64,
                alpha_hat: 1.0,
                se_alpha: 0.1,
                theta_hat: 1.0,
                se_theta: 0.1,
                beta_hat: 0.3 * i as f64 + 1.0,
                se_beta: 0.5,
                gamma_hat: None,
                se_gamma: None,
                weak_instrument: false,
            })
            .collect();
        let basis = BasisSet::polynomial(2, (0.0, 5.0)).unwrap();
        let beta: Vec<f64> = summaries.iter().map(|s| s.beta_hat).collect();
        let with = build_sos_design(&summaries, &basis)
            .unwrap()
            .with_sigma_from(&summaries)
            .unwrap();
        let mut without = with.clone();
        without.reparam = None;
        let f1 = fit_weighted_ridge(&with, &beta, 0.0).unwrap();
        let f2 = fit_weighted_ridge(&without, &beta, 0.0).unwrap();
        for (a, b) in f1.b_hat.iter().zip(&f2.b_hat) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }
}

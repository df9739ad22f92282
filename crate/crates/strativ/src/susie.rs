//! Sum-of-single-effects change-point analysis: the change-point design
//! over weight-function tail integrals, the iterative Bayesian stepwise
//! selection fit, credible sets, counterfactual prediction, and posterior
//! effect curves.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{self, log_sum_exp};
use crate::summary::{StratumSummary, WeightFunction};

/// Lower bound of the sigma0^2 search window (log-spaced golden section).
const SIGMA0_MIN: f64 = 1e-8;
/// Upper bound of the sigma0^2 search window.
const SIGMA0_MAX: f64 = 1e4;

/// Sparse-regression design for the change-point model: response beta_hat,
/// covariate p >= 1 equal to the weight mass above knot t_p, and an
/// all-ones intercept column for the global linear effect b_0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChangePointDesign {
    /// Candidate knots t_0 < t_1 < ... < t_P; t_0 sits at or below the
    /// exposure minimum so that column 0 is the intercept.
    pub knots: Vec<f64>,
    /// K x (P+1) matrix of tail integrals.
    #[serde(skip, default = "empty_matrix")]
    pub matrix: DMatrix<f64>,
    pub response: Vec<f64>,
    /// Squared standard errors of the responses.
    pub sigma_diag: Vec<f64>,
    pub warnings: Vec<String>,
}

fn empty_matrix() -> DMatrix<f64> {
    DMatrix::zeros(0, 0)
}

/// Builds the change-point design from stratum summaries and their weight
/// functions. Duplicate knots are collapsed with a warning; a knot above
/// every exposure produces an all-zero column and is flagged.
pub fn build_changepoint_design(
    summaries: &[StratumSummary],
    weights: &[WeightFunction],
    knots: &[f64],
) -> Result<ChangePointDesign> {
    if summaries.is_empty() {
        return Err(Error::InvalidArgument("no stratum summaries".into()));
    }
    if summaries.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} summaries but {} weight functions",
            summaries.len(),
            weights.len()
        )));
    }
    for (s, w) in summaries.iter().zip(weights) {
        if s.stratum != w.stratum {
            return Err(Error::InvalidArgument(format!(
                "weight function for stratum {} paired with summary for stratum {}",
                w.stratum, s.stratum
            )));
        }
    }
    if knots.is_empty() {
        return Err(Error::InvalidArgument("no knots".into()));
    }

    let mut warnings = Vec::new();
    let mut sorted: Vec<f64> = knots.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let before = sorted.len();
    sorted.dedup();
    if sorted.len() != before {
        warnings.push(format!(
            "collapsed {} duplicate knot(s) after quantile computation",
            before - sorted.len()
        ));
    }

    let grid_min = weights
        .iter()
        .map(|w| w.grid[0])
        .fold(f64::INFINITY, f64::min);
    if sorted[0] > grid_min {
        return Err(Error::InvalidArgument(format!(
            "first knot {} must sit at or below the exposure minimum {}",
            sorted[0], grid_min
        )));
    }

    let k = summaries.len();
    let p1 = sorted.len();
    let mut matrix = DMatrix::zeros(k, p1);
    for (s, w) in weights.iter().enumerate() {
        // Column 0 is the total weight mass, exactly 1 by normalization.
        matrix[(s, 0)] = 1.0;
        for (p, &t) in sorted.iter().enumerate().skip(1) {
            matrix[(s, p)] = w.integral_above(t);
        }
    }
    for p in 1..p1 {
        if (0..k).all(|s| matrix[(s, p)] == 0.0) {
            warnings.push(format!(
                "knot {} lies above every exposure; its column is uninformative",
                sorted[p]
            ));
        }
    }

    Ok(ChangePointDesign {
        knots: sorted,
        matrix,
        response: summaries.iter().map(|s| s.beta_hat).collect(),
        sigma_diag: summaries.iter().map(|s| s.se_beta * s.se_beta).collect(),
        warnings,
    })
}

/// Default change-point candidates: pooled exposure quantiles at P evenly
/// spaced probabilities in the configured range, prefixed by the exposure
/// minimum as the intercept knot.
pub fn default_knots(sorted_x: &[f64], count: usize, range: (f64, f64)) -> Vec<f64> {
    let (lo, hi) = range;
    let mut knots = vec![sorted_x[0]];
    for j in 0..count {
        let p = if count == 1 {
            lo
        } else {
            lo + (hi - lo) * j as f64 / (count - 1) as f64
        };
        knots.push(numeric::quantile_sorted(sorted_x, p));
    }
    knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    knots.dedup();
    knots
}

/// Posterior of one single-effect regression: inclusion probabilities and
/// the conditional effect-size moments per column.
#[derive(Debug, Clone, PartialEq)]
pub struct SerResult {
    pub pi: Vec<f64>,
    pub mu: Vec<f64>,
    /// Conditional posterior standard deviations.
    pub sigma: Vec<f64>,
    /// log sum_p pi_p BF_p, the model log-likelihood relative to the null.
    pub log_marginal: f64,
}

fn ser_from_sufficients(xtx: &[f64], xty: &[f64], sigma0_sq: f64, prior_pi: &[f64]) -> SerResult {
    let p1 = xtx.len();
    let mut lbf = vec![0.0; p1];
    let mut mu = vec![0.0; p1];
    let mut sigma = vec![0.0; p1];
    for p in 0..p1 {
        if xtx[p] == 0.0 || sigma0_sq == 0.0 {
            // No information or a null prior: posterior equals the prior.
            mu[p] = 0.0;
            sigma[p] = sigma0_sq.sqrt();
            lbf[p] = 0.0;
            continue;
        }
        let s2 = 1.0 / xtx[p];
        let post_var = 1.0 / (xtx[p] + 1.0 / sigma0_sq);
        mu[p] = post_var * xty[p];
        sigma[p] = post_var.sqrt();
        let z2 = xty[p] * xty[p] / xtx[p];
        lbf[p] = 0.5 * (s2 / (s2 + sigma0_sq)).ln() + 0.5 * z2 * sigma0_sq / (sigma0_sq + s2);
    }
    let logits: Vec<f64> = prior_pi
        .iter()
        .zip(&lbf)
        .map(|(&pr, &l)| {
            if pr > 0.0 {
                pr.ln() + l
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let lse = log_sum_exp(&logits);
    let pi: Vec<f64> = logits.iter().map(|&v| (v - lse).exp()).collect();
    SerResult {
        pi,
        mu,
        sigma,
        log_marginal: lse,
    }
}

/// Bayesian single-effect regression on a whitened design (unit error
/// variance per coordinate) with effect prior N(0, sigma0_sq) and the given
/// prior inclusion probabilities.
pub fn single_effect_regression(
    design_whitened: &DMatrix<f64>,
    residual_response: &[f64],
    sigma0_sq: f64,
    prior_pi: &[f64],
) -> Result<SerResult> {
    let k = design_whitened.nrows();
    let p1 = design_whitened.ncols();
    if residual_response.len() != k {
        return Err(Error::InvalidArgument(format!(
            "response length {} does not match {k} design rows",
            residual_response.len()
        )));
    }
    if prior_pi.len() != p1 {
        return Err(Error::InvalidArgument(format!(
            "prior length {} does not match {p1} columns",
            prior_pi.len()
        )));
    }
    let total: f64 = prior_pi.iter().sum();
    if prior_pi.iter().any(|v| *v < 0.0) || (total - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidArgument(
            "prior inclusion probabilities must be non-negative and sum to 1".into(),
        ));
    }
    if sigma0_sq.is_nan() || sigma0_sq < 0.0 {
        return Err(Error::InvalidArgument("sigma0_sq must be >= 0".into()));
    }
    let r = DVector::from_column_slice(residual_response);
    let xtx: Vec<f64> = (0..p1)
        .map(|p| design_whitened.column(p).norm_squared())
        .collect();
    let xty: Vec<f64> = (0..p1).map(|p| design_whitened.column(p).dot(&r)).collect();
    Ok(ser_from_sufficients(&xtx, &xty, sigma0_sq, prior_pi))
}

/// Settings for the iterative Bayesian stepwise selection fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SusieOptions {
    pub max_effects: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Re-estimate each effect's prior variance by empirical Bayes.
    pub estimate_sigma0: bool,
    /// Fixed prior variance when not estimating; `None` scales from the
    /// whitened response variance.
    pub sigma0_init: Option<f64>,
}

impl Default for SusieOptions {
    fn default() -> Self {
        SusieOptions {
            max_effects: 10,
            tol: 1e-6,
            max_iter: 100,
            estimate_sigma0: true,
            sigma0_init: None,
        }
    }
}

/// Posterior summaries of the sum-of-single-effects fit. Rows index
/// effects, columns index knots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SusieFit {
    pub pi_star: Vec<Vec<f64>>,
    pub mu_star: Vec<Vec<f64>>,
    pub sigma_star: Vec<Vec<f64>>,
    /// Fitted prior variance per effect; 0 marks an effect shrunk to null.
    pub sigma0_sq: Vec<f64>,
    pub elbo_trace: Vec<f64>,
    /// Effects passing the detection rule.
    pub detected: Vec<bool>,
    /// Number of detected effects.
    pub l_star: usize,
    pub converged: bool,
}

impl SusieFit {
    pub fn effects(&self) -> usize {
        self.pi_star.len()
    }

    pub fn columns(&self) -> usize {
        self.pi_star.first().map(|r| r.len()).unwrap_or(0)
    }

    /// Per-column posterior mean coefficients summed over effects:
    /// (pi* o mu*)^T 1_L.
    pub fn coefficient_means(&self) -> Vec<f64> {
        let p1 = self.columns();
        let mut c = vec![0.0; p1];
        for l in 0..self.effects() {
            for (p, slot) in c.iter_mut().enumerate().take(p1) {
                *slot += self.pi_star[l][p] * self.mu_star[l][p];
            }
        }
        c
    }

    /// Index of the first detected effect, if any.
    pub fn first_detected(&self) -> Option<usize> {
        self.detected.iter().position(|&d| d)
    }
}

/// Maximizes the SER log marginal likelihood over sigma0^2 on a log grid
/// bracket, snapping to the exact null when it does not beat it.
fn optimize_sigma0(xtx: &[f64], xty: &[f64], prior_pi: &[f64]) -> f64 {
    let neg_loglik =
        |ln_s0: f64| -> f64 { -ser_from_sufficients(xtx, xty, ln_s0.exp(), prior_pi).log_marginal };
    let (ln_best, neg_best) =
        numeric::golden_section_min(neg_loglik, SIGMA0_MIN.ln(), SIGMA0_MAX.ln(), 1e-8);
    // The null model has log marginal 0 by construction.
    if -neg_best <= 0.0 {
        0.0
    } else {
        ln_best.exp()
    }
}

/// Fits the sum-of-single-effects model by IBSS on the whitened design.
///
/// Each sweep refits every effect against the residual left by the others,
/// optionally re-estimating its prior variance first. Stops when the ELBO
/// changes by less than `tol`; a fit that exhausts `max_iter` is returned
/// with `converged = false`.
pub fn susie_ibss(design: &ChangePointDesign, opts: &SusieOptions) -> Result<SusieFit> {
    if opts.max_effects == 0 {
        return Err(Error::InvalidArgument("max_effects must be >= 1".into()));
    }
    let k = design.matrix.nrows();
    let p1 = design.matrix.ncols();
    if k == 0 || p1 == 0 {
        return Err(Error::InvalidArgument("empty change-point design".into()));
    }
    if design.response.len() != k || design.sigma_diag.len() != k {
        return Err(Error::InvalidArgument(
            "design response/sigma lengths do not match the matrix".into(),
        ));
    }
    if design.sigma_diag.iter().any(|v| !crate::numeric::is_positive_finite(*v)) {
        return Err(Error::InvalidArgument(
            "response variances must be positive".into(),
        ));
    }

    // Whiten: divide each row by its standard error.
    let mut xw = design.matrix.clone();
    let mut yw = DVector::from_column_slice(&design.response);
    for s in 0..k {
        let w = 1.0 / design.sigma_diag[s].sqrt();
        for p in 0..p1 {
            xw[(s, p)] *= w;
        }
        yw[s] *= w;
    }

    let l_max = opts.max_effects;
    let prior_pi = vec![1.0 / p1 as f64; p1];
    let xtx: Vec<f64> = (0..p1).map(|p| xw.column(p).norm_squared()).collect();
    let yw_var = numeric::variance(yw.as_slice());
    let sigma0_default = opts.sigma0_init.unwrap_or(0.2 * yw_var.max(1e-12));

    let mut pi_star = vec![prior_pi.clone(); l_max];
    let mut mu_star = vec![vec![0.0; p1]; l_max];
    let mut sigma_star = vec![vec![0.0; p1]; l_max];
    let mut sigma0 = vec![sigma0_default; l_max];
    let mut b_bar: Vec<DVector<f64>> = vec![DVector::zeros(p1); l_max];
    let mut fitted: DVector<f64> = DVector::zeros(k);

    let mut elbo_trace = Vec::new();
    let mut converged = false;

    for _ in 0..opts.max_iter {
        let mut kl_sum = 0.0;
        let mut extra_var = 0.0;
        for l in 0..l_max {
            let fitted_l = &xw * &b_bar[l];
            fitted -= &fitted_l;
            let r = &yw - &fitted;
            let xty: Vec<f64> = (0..p1).map(|p| xw.column(p).dot(&r)).collect();

            if opts.estimate_sigma0 {
                sigma0[l] = optimize_sigma0(&xtx, &xty, &prior_pi);
            }
            let ser = ser_from_sufficients(&xtx, &xty, sigma0[l], &prior_pi);

            let mut bb = DVector::zeros(p1);
            let mut e2 = 0.0;
            for p in 0..p1 {
                bb[p] = ser.pi[p] * ser.mu[p];
                let second = ser.mu[p] * ser.mu[p] + ser.sigma[p] * ser.sigma[p];
                e2 += ser.pi[p] * second * xtx[p];
            }
            let fitted_l_new = &xw * &bb;
            // KL(q_l || prior) = r' X b_l - e2/2 - log marginal
            kl_sum += r.dot(&fitted_l_new) - 0.5 * e2 - ser.log_marginal;
            extra_var += e2 - fitted_l_new.norm_squared();

            pi_star[l] = ser.pi;
            mu_star[l] = ser.mu;
            sigma_star[l] = ser.sigma;
            b_bar[l] = bb;
            fitted += &fitted_l_new;
        }

        let resid = &yw - &fitted;
        let er2 = resid.norm_squared() + extra_var;
        let elbo = -0.5 * k as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * er2 - kl_sum;
        let done = elbo_trace
            .last()
            .map(|prev: &f64| (elbo - prev).abs() < opts.tol)
            .unwrap_or(false);
        elbo_trace.push(elbo);
        if done {
            converged = true;
            break;
        }
    }

    // Detection: a non-null fitted prior variance and a top inclusion
    // probability clearly above the uniform prior mass.
    let pip_floor = 2.0 / p1 as f64;
    let var_floor = 1e-6 * yw_var.max(1e-12);
    let detected: Vec<bool> = (0..l_max)
        .map(|l| {
            let top = pi_star[l].iter().cloned().fold(0.0, f64::max);
            sigma0[l] > var_floor && top > pip_floor.min(1.0)
        })
        .collect();
    let l_star = detected.iter().filter(|d| **d).count();

    Ok(SusieFit {
        pi_star,
        mu_star,
        sigma_star,
        sigma0_sq: sigma0,
        elbo_trace,
        detected,
        l_star,
        converged,
    })
}

/// Smallest set of knots whose cumulative inclusion probability reaches the
/// level, plus point summaries of the change-point location.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CredibleSet {
    /// Knot indices in descending inclusion-probability order.
    pub indices: Vec<usize>,
    /// Total probability mass captured by `indices`.
    pub mass: f64,
    pub knot_min: f64,
    pub knot_max: f64,
    /// Posterior mean location sum_p pi_p t_p.
    pub location_mean: f64,
    /// Posterior mode location argmax_p pi_p.
    pub location_mode: f64,
    pub mode_index: usize,
    /// Upper end of the one-sided interval: the smallest knot value at
    /// which the cumulative mass (scanning knots in ascending order)
    /// reaches the level.
    pub one_sided_upper: f64,
}

/// Builds the credible set of one effect from its inclusion-probability row.
pub fn credible_set(pi_row: &[f64], knots: &[f64], level: f64) -> Result<CredibleSet> {
    if pi_row.len() != knots.len() {
        return Err(Error::InvalidArgument(format!(
            "{} probabilities for {} knots",
            pi_row.len(),
            knots.len()
        )));
    }
    if !(0.0 < level && level <= 1.0) {
        return Err(Error::InvalidArgument("level must be in (0, 1]".into()));
    }
    let mut order: Vec<usize> = (0..pi_row.len()).collect();
    order.sort_by(|&a, &b| pi_row[b].partial_cmp(&pi_row[a]).unwrap().then(a.cmp(&b)));
    let mut indices = Vec::new();
    let mut mass = 0.0;
    for idx in order {
        indices.push(idx);
        mass += pi_row[idx];
        if mass >= level - 1e-12 {
            break;
        }
    }
    let knot_min = indices
        .iter()
        .map(|&i| knots[i])
        .fold(f64::INFINITY, f64::min);
    let knot_max = indices
        .iter()
        .map(|&i| knots[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let location_mean = pi_row.iter().zip(knots).map(|(p, t)| p * t).sum();
    let mode_index = indices[0];
    let mut cum = 0.0;
    let mut one_sided_upper = *knots.last().unwrap();
    for (i, &t) in knots.iter().enumerate() {
        cum += pi_row[i];
        if cum >= level - 1e-12 {
            one_sided_upper = t;
            break;
        }
    }
    Ok(CredibleSet {
        indices,
        mass,
        knot_min,
        knot_max,
        location_mean,
        location_mode: knots[mode_index],
        mode_index,
        one_sided_upper,
    })
}

/// Individual partial counterfactual contrast of shifting the exposure from
/// `x_i` to `x_star`, attributable to a unit effect at knot `t_p`:
/// (x* - t)+ - (x_i - t)+.
pub fn partial_contrast(x_star: f64, x_i: f64, t_p: f64) -> f64 {
    (x_star - t_p).max(0.0) - (x_i - t_p).max(0.0)
}

/// Posterior-mean counterfactual outcomes at exposure level `x_star`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CounterfactualPrediction {
    pub x_star: f64,
    pub mean: f64,
    pub predictions: Vec<f64>,
}

/// Y_i(x*) = Y_i + sum_p f(x*; X_i, t_p) c_p with c the posterior-mean
/// coefficients; the mean prediction averages over individuals.
pub fn counterfactual_predict(
    fit: &SusieFit,
    knots: &[f64],
    x: &[f64],
    y: &[f64],
    x_star: f64,
) -> Result<CounterfactualPrediction> {
    if knots.len() != fit.columns() {
        return Err(Error::InvalidArgument(
            "knots do not match the fitted design".into(),
        ));
    }
    if x.len() != y.len() {
        return Err(Error::InvalidArgument("x/y length mismatch".into()));
    }
    let c = fit.coefficient_means();
    let predictions: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            yi + knots
                .iter()
                .zip(&c)
                .map(|(&t, &cp)| partial_contrast(x_star, xi, t) * cp)
                .sum::<f64>()
        })
        .collect();
    let mean = numeric::mean(&predictions);
    Ok(CounterfactualPrediction {
        x_star,
        mean,
        predictions,
    })
}

/// Where an effect curve came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    SusiePosterior,
    ParametricFrequentist,
}

/// Pointwise effect function with uncertainty bands. `h` is anchored so the
/// value at exposure 0 is exactly 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectCurve {
    pub x_grid: Vec<f64>,
    pub h: Vec<f64>,
    pub h_lo: Vec<f64>,
    pub h_hi: Vec<f64>,
    pub h_prime: Option<Vec<f64>>,
    pub provenance: Provenance,
}

/// Posterior-mean effect value at one exposure level:
/// h(x*) = sum_p f(x*; 0, t_p) c_p.
pub fn effect_value_at(fit: &SusieFit, knots: &[f64], x_star: f64) -> f64 {
    let c = fit.coefficient_means();
    knots
        .iter()
        .zip(&c)
        .map(|(&t, &cp)| partial_contrast(x_star, 0.0, t) * cp)
        .sum()
}

/// Posterior-mean effect curve (point estimates only; the bands repeat the
/// point estimate). The curve is continuous and piecewise linear with kinks
/// only at the knots.
pub fn effect_posterior_mean(fit: &SusieFit, knots: &[f64], x_grid: &[f64]) -> Result<EffectCurve> {
    if knots.len() != fit.columns() {
        return Err(Error::InvalidArgument(
            "knots do not match the fitted design".into(),
        ));
    }
    let h: Vec<f64> = x_grid
        .iter()
        .map(|&x| effect_value_at(fit, knots, x))
        .collect();
    Ok(EffectCurve {
        x_grid: x_grid.to_vec(),
        h: h.clone(),
        h_lo: h.clone(),
        h_hi: h,
        h_prime: None,
        provenance: Provenance::SusiePosterior,
    })
}

fn sample_categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    probs.len() - 1
}

/// One joint posterior draw per effect: a knot index from pi* and an effect
/// size from the conditional normal.
fn draw_effects<R: Rng>(fit: &SusieFit, rng: &mut R) -> Vec<(usize, f64)> {
    (0..fit.effects())
        .map(|l| {
            let p = sample_categorical(rng, &fit.pi_star[l]);
            let sd = fit.sigma_star[l][p];
            let mu = fit.mu_star[l][p];
            let b = if sd > 0.0 {
                let n: f64 = rng.sample(rand_distr::StandardNormal);
                mu + sd * n
            } else {
                mu
            };
            (p, b)
        })
        .collect()
}

/// Pointwise credible interval for h(x*) by posterior sampling from the
/// normal mixture; deterministic for a fixed seed.
pub fn effect_credible_interval(
    fit: &SusieFit,
    knots: &[f64],
    x_star: f64,
    n_samples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_samples < 1000 {
        return Err(Error::InvalidArgument(
            "credible intervals need at least 1000 samples".into(),
        ));
    }
    if knots.len() != fit.columns() {
        return Err(Error::InvalidArgument(
            "knots do not match the fitted design".into(),
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let draw = draw_effects(fit, &mut rng);
        let h: f64 = draw
            .iter()
            .map(|&(p, b)| partial_contrast(x_star, 0.0, knots[p]) * b)
            .collect::<Vec<f64>>()
            .iter()
            .sum();
        samples.push(h);
    }
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = numeric::quantile_sorted(&samples, (1.0 - level) / 2.0);
    let hi = numeric::quantile_sorted(&samples, (1.0 + level) / 2.0);
    Ok((lo, hi))
}

/// Posterior-mean curve with sampled credible bands. All grid points share
/// the same posterior draws, so the band is a coherent function envelope.
pub fn effect_curve_with_bands(
    fit: &SusieFit,
    knots: &[f64],
    x_grid: &[f64],
    n_samples: usize,
    level: f64,
    seed: u64,
) -> Result<EffectCurve> {
    if n_samples < 1000 {
        return Err(Error::InvalidArgument(
            "credible bands need at least 1000 samples".into(),
        ));
    }
    let mut curve = effect_posterior_mean(fit, knots, x_grid)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let draws: Vec<Vec<(usize, f64)>> = (0..n_samples)
        .map(|_| draw_effects(fit, &mut rng))
        .collect();
    let mut h_lo = Vec::with_capacity(x_grid.len());
    let mut h_hi = Vec::with_capacity(x_grid.len());
    let mut buf = vec![0.0; n_samples];
    for &x in x_grid {
        for (j, draw) in draws.iter().enumerate() {
            buf[j] = draw
                .iter()
                .map(|&(p, b)| partial_contrast(x, 0.0, knots[p]) * b)
                .sum();
        }
        buf.sort_by(|a, b| a.partial_cmp(b).unwrap());
        h_lo.push(numeric::quantile_sorted(&buf, (1.0 - level) / 2.0));
        h_hi.push(numeric::quantile_sorted(&buf, (1.0 + level) / 2.0));
    }
    curve.h_lo = h_lo;
    curve.h_hi = h_hi;
    Ok(curve)
}

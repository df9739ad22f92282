//! End-to-end analysis stages shared by the CLI and the simulation
//! harness: stratify, summarize, fit, and report.

use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::data::{AnalysisConfig, Dataset, Stratifier};
use crate::error::{Error, Result};
use crate::numeric;
use crate::qtest::QTestResult;
use crate::ridge::{self, DesignMode, FitResult};
use crate::stratify::{self, ExposureModelSpec, StratumAssignment};
use crate::summary::{self, StratumSummary, WeightFunction};
use crate::susie::{self, ChangePointDesign, CredibleSet, EffectCurve, SusieFit, SusieOptions};

/// Runs the configured stratifier.
pub fn stratify_data(data: &Dataset, cfg: &AnalysisConfig) -> Result<StratumAssignment> {
    cfg.validate()?;
    if cfg.strata_count > data.len() {
        return Err(Error::InvalidArgument(format!(
            "strata_count {} exceeds sample size {}",
            cfg.strata_count,
            data.len()
        )));
    }
    match cfg.stratifier {
        Stratifier::Residual => {
            stratify::residual_stratify(data, cfg.strata_count, &ExposureModelSpec::default())
        }
        Stratifier::DoublyRanked => stratify::doubly_ranked_stratify(
            data,
            cfg.strata_count,
            cfg.pre_stratum_size_or_default(),
        ),
    }
}

/// Stratum summaries plus weight functions on the pooled quantile grid,
/// aligned with the summaries (which are ordered by exposure mean).
pub fn summarize(
    data: &Dataset,
    assignment: &StratumAssignment,
    cfg: &AnalysisConfig,
) -> Result<(Vec<StratumSummary>, Vec<WeightFunction>)> {
    let summaries =
        summary::stratum_associations(data, assignment, cfg.se_order, cfg.weak_stratum_threshold)?;
    let grid = summary::pooled_quantile_grid(data, cfg.candidate_count);
    let weights = summaries
        .iter()
        .map(|s| summary::estimate_weight_function(data, assignment, s.stratum, &grid))
        .collect::<Result<Vec<_>>>()?;
    Ok((summaries, weights))
}

/// Evenly spaced grid used for curve output.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![a];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Change-point location summaries of one effect, excluding the intercept
/// column (it encodes the global linear term, not a change-point).
pub fn changepoint_location(pi_row: &[f64], knots: &[f64]) -> Option<(f64, f64)> {
    let mass: f64 = pi_row.iter().skip(1).sum();
    if mass <= 0.0 {
        return None;
    }
    let mut mode_idx = 1;
    let mut mean = 0.0;
    for p in 1..pi_row.len() {
        mean += pi_row[p] * knots[p];
        if pi_row[p] > pi_row[mode_idx] {
            mode_idx = p;
        }
    }
    Some((knots[mode_idx], mean / mass))
}

/// Extra knobs of the end-to-end run beyond the shared configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SssExtra {
    pub test_linearity: bool,
    /// Posterior draws for credible bands.
    pub samples: usize,
    pub level: f64,
    pub curve_points: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SssExtra {
    fn default() -> Self {
        SssExtra {
            test_linearity: false,
            samples: 10_000,
            level: 0.95,
            curve_points: 201,
            tol: 1e-6,
            max_iter: 100,
        }
    }
}

/// Credible-set report for one detected effect.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectReport {
    pub effect: usize,
    pub top_pip: f64,
    pub credible: CredibleSet,
    /// Mode/mean of the change-point location over non-intercept knots.
    pub location_mode: Option<f64>,
    pub location_mean: Option<f64>,
    /// Set when most of the effect's mass sits on the intercept column, so
    /// it acts as a global linear term rather than a change-point.
    pub intercept_dominated: bool,
}

/// Everything the end-to-end run produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SssOutputs {
    pub summaries: Vec<StratumSummary>,
    pub knots: Vec<f64>,
    pub fit: SusieFit,
    pub effects: Vec<EffectReport>,
    pub curve: EffectCurve,
    pub linearity: Option<QTestResult>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub weights: Vec<WeightFunction>,
    #[serde(skip)]
    pub design: Option<ChangePointDesign>,
}

/// The full stratification / scalar-on-function / sum-of-single-effects
/// analysis: stratify, summarize, build the change-point design, fit, and
/// report curves plus credible sets.
pub fn run_sss(data: &Dataset, cfg: &AnalysisConfig, extra: &SssExtra) -> Result<SssOutputs> {
    let assignment = stratify_data(data, cfg)?;
    let (summaries, weights) = summarize(data, &assignment, cfg)?;

    let linearity = if extra.test_linearity {
        Some(crate::qtest::q_linearity(&summaries)?)
    } else {
        None
    };

    let sorted_x = data.sorted_x();
    let knots = susie::default_knots(&sorted_x, cfg.candidate_count, cfg.knot_quantile_range);
    let design = susie::build_changepoint_design(&summaries, &weights, &knots)?;
    let opts = SusieOptions {
        max_effects: cfg.max_effects,
        tol: extra.tol,
        max_iter: extra.max_iter,
        estimate_sigma0: true,
        sigma0_init: None,
    };
    let fit = susie::susie_ibss(&design, &opts)?;

    let mut effects = Vec::new();
    for l in 0..fit.effects() {
        if !fit.detected[l] {
            continue;
        }
        let credible = susie::credible_set(&fit.pi_star[l], &design.knots, extra.level)?;
        let location = changepoint_location(&fit.pi_star[l], &design.knots);
        let top_pip = fit.pi_star[l].iter().cloned().fold(0.0, f64::max);
        let intercept_mass = fit.pi_star[l][0];
        effects.push(EffectReport {
            effect: l,
            top_pip,
            credible,
            location_mode: location.map(|v| v.0),
            location_mean: location.map(|v| v.1),
            intercept_dominated: intercept_mass > 0.5,
        });
    }

    let lo = sorted_x[0];
    let hi = *sorted_x.last().unwrap();
    let x_grid = linspace(lo, hi, extra.curve_points);
    let curve = susie::effect_curve_with_bands(
        &fit,
        &design.knots,
        &x_grid,
        extra.samples,
        extra.level,
        cfg.seed,
    )?;

    let mut warnings = design.warnings.clone();
    if !fit.converged {
        warnings.push(format!(
            "sum-of-single-effects fit did not converge within {} sweeps",
            extra.max_iter
        ));
    }
    for s in &summaries {
        if s.weak_instrument {
            warnings.push(format!(
                "stratum {} has a weak instrument (|alpha|/se = {:.2})",
                s.stratum,
                (s.alpha_hat / s.se_alpha).abs()
            ));
        }
    }

    Ok(SssOutputs {
        summaries,
        knots: design.knots.clone(),
        fit,
        effects,
        curve,
        linearity,
        warnings,
        weights,
        design: Some(design),
    })
}

/// Which basis the parametric fit uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisChoice {
    Poly { degree: usize },
    Indicator { knots: Vec<f64> },
    PiecewiseLinear { knots: Vec<f64> },
}

impl BasisChoice {
    pub fn resolve(&self, domain: (f64, f64)) -> Result<BasisSet> {
        match self {
            BasisChoice::Poly { degree } => BasisSet::polynomial(*degree, domain),
            BasisChoice::Indicator { knots } => BasisSet::indicator(knots.clone(), domain),
            BasisChoice::PiecewiseLinear { knots } => {
                BasisSet::piecewise_linear(knots.clone(), domain)
            }
        }
    }
}

/// Parametric-run outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParametricOutputs {
    pub summaries: Vec<StratumSummary>,
    pub fit: FitResult,
    pub lambda: f64,
    pub curve: EffectCurve,
    pub warnings: Vec<String>,
}

/// Parametric effect-shape estimation over a basis with the penalty weight
/// fixed or selected by GCV.
#[allow(clippy::too_many_arguments)]
pub fn run_parametric(
    data: &Dataset,
    cfg: &AnalysisConfig,
    mode: DesignMode,
    basis_choice: &BasisChoice,
    lambda: Option<f64>,
    deriv_order: usize,
    level: f64,
    curve_points: usize,
) -> Result<ParametricOutputs> {
    let assignment = stratify_data(data, cfg)?;
    let (summaries, weights) = summarize(data, &assignment, cfg)?;
    let sorted_x = data.sorted_x();
    let domain = (sorted_x[0], *sorted_x.last().unwrap());
    let basis = basis_choice.resolve(domain)?;

    let design = match mode {
        DesignMode::Sof => ridge::build_sof_design(&weights, &basis)?,
        DesignMode::Sos => ridge::build_sos_design(&summaries, &basis)?,
    }
    .with_sigma_from(&summaries)?
    .with_penalty(&basis, deriv_order)?;

    let beta: Vec<f64> = summaries.iter().map(|s| s.beta_hat).collect();
    let (lambda, fit) = match lambda {
        Some(l) => (l, ridge::fit_weighted_ridge(&design, &beta, l)?),
        None => ridge::gcv_select(&design, &beta, &ridge::default_lambda_grid())?,
    };

    let x_grid = linspace(domain.0, domain.1, curve_points);
    let curve = ridge::effect_from_fit(&fit, &basis, &x_grid, level)?;

    let warnings = summaries
        .iter()
        .filter(|s| s.weak_instrument)
        .map(|s| format!("stratum {} has a weak instrument", s.stratum))
        .collect();

    Ok(ParametricOutputs {
        summaries,
        fit,
        lambda,
        curve,
        warnings,
    })
}

/// Provenance record emitted next to every set of output files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub subcommand: String,
    pub version: String,
    pub input_path: Option<String>,
    pub input_digest: Option<String>,
    pub config: AnalysisConfig,
    pub seed: u64,
    pub timing_ms: u128,
    pub outputs: Vec<String>,
}

impl RunManifest {
    /// Builds the manifest skeleton; the run id digests everything that
    /// determines the outputs, so reruns of the same inputs share it.
    pub fn new(
        subcommand: &str,
        cfg: &AnalysisConfig,
        input_path: Option<&str>,
        input_bytes: Option<&[u8]>,
    ) -> Self {
        let digest = input_bytes.map(|b| format!("{:016x}", numeric::fnv1a64(b)));
        let cfg_json = serde_json::to_string(cfg).unwrap_or_default();
        let id_material = format!(
            "{subcommand}|{}|{}|{}",
            digest.as_deref().unwrap_or("-"),
            cfg_json,
            cfg.seed
        );
        RunManifest {
            run_id: format!("{:016x}", numeric::fnv1a64(id_material.as_bytes())),
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            input_path: input_path.map(|s| s.to_string()),
            input_digest: digest,
            config: cfg.clone(),
            seed: cfg.seed,
            timing_ms: 0,
            outputs: Vec::new(),
        }
    }
}

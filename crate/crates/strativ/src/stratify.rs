//! Stratum construction on the counterfactual exposure: residual
//! (prediction) and doubly-ranked (matching) stratification.
//!
//! Both algorithms only rank; ties are always broken by original row index
//! so the assignment is a deterministic function of the data and settings.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numeric;

/// Monotone bijection applied to the exposure in the structural model
/// `X = t(f(Z) + g(U, eps))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// `t = exp`, so the working scale is `ln x`; requires all x > 0.
    Log,
}

impl Transform {
    /// Applies `t^{-1}` to an observed exposure value.
    pub fn to_working(self, x: f64) -> Result<f64> {
        match self {
            Transform::Identity => Ok(x),
            Transform::Log => {
                if x > 0.0 {
                    Ok(x.ln())
                } else {
                    Err(Error::TransformDomain(format!(
                        "log transform requires x > 0, got {x}"
                    )))
                }
            }
        }
    }
}

/// One term of the instrument model f(Z).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentTerm {
    Intercept,
    /// z^k for k >= 1.
    Power(u32),
}

impl InstrumentTerm {
    fn eval(self, z: f64) -> f64 {
        match self {
            InstrumentTerm::Intercept => 1.0,
            InstrumentTerm::Power(k) => z.powi(k as i32),
        }
    }
}

/// How the instrument model terms are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermSelection {
    /// Fit all candidate terms.
    Fixed,
    /// BIC search: all subsets when there are at most 10 candidates,
    /// forward stepwise otherwise.
    Bic,
}

/// Structural exposure model specification for residual stratification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureModelSpec {
    pub transform: Transform,
    pub candidate_terms: Vec<InstrumentTerm>,
    pub selection: TermSelection,
}

impl Default for ExposureModelSpec {
    fn default() -> Self {
        ExposureModelSpec {
            transform: Transform::Identity,
            candidate_terms: vec![InstrumentTerm::Intercept, InstrumentTerm::Power(1)],
            selection: TermSelection::Fixed,
        }
    }
}

/// Which stratification method produced an assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratifyMethod {
    Residual,
    DoublyRanked,
}

/// Per-individual stratum labels. `assignment[i]` is `Some(k)` with k in
/// 1..=K, or `None` for individuals excluded by the floor arithmetic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumAssignment {
    pub assignment: Vec<Option<u32>>,
    pub strata_count: usize,
    pub excluded_count: usize,
    pub method: StratifyMethod,
}

impl StratumAssignment {
    /// Row indices of each stratum, in original data order.
    pub fn strata_rows(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.strata_count];
        for (i, a) in self.assignment.iter().enumerate() {
            if let Some(k) = a {
                rows[(*k - 1) as usize].push(i);
            }
        }
        rows
    }

    fn validate(&self) -> Result<()> {
        for rows in self.strata_rows() {
            if rows.is_empty() {
                return Err(Error::InvalidArgument(
                    "stratification produced an empty stratum".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Stable ranking: returns row indices sorted ascending by key, ties kept
/// in original order.
fn rank_indices(keys: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].partial_cmp(&keys[b]).unwrap());
    idx
}

fn least_squares_fit(
    terms: &[InstrumentTerm],
    z: &[f64],
    target: &[f64],
) -> Option<(Vec<f64>, f64)> {
    use nalgebra::{DMatrix, DVector};
    let n = z.len();
    let p = terms.len();
    if p == 0 {
        let rss = target.iter().map(|t| t * t).sum();
        return Some((Vec::new(), rss));
    }
    let design = DMatrix::from_fn(n, p, |i, j| terms[j].eval(z[i]));
    let rhs = DVector::from_column_slice(target);
    let gram = design.transpose() * &design;
    let xty = design.transpose() * &rhs;
    let coef = gram.lu().solve(&xty)?;
    let resid = &rhs - &design * &coef;
    let rss = resid.norm_squared();
    Some((coef.iter().cloned().collect(), rss))
}

fn bic(rss: f64, n: usize, p: usize) -> f64 {
    let n = n as f64;
    // Guard the log for perfect fits.
    n * (rss.max(1e-300) / n).ln() + p as f64 * n.ln()
}

/// Chooses instrument-model terms by BIC: exhaustive over subsets for at
/// most 10 candidates, forward stepwise otherwise. Returns the selected
/// terms (possibly empty, meaning f = 0).
fn select_terms_bic(
    candidates: &[InstrumentTerm],
    z: &[f64],
    target: &[f64],
) -> Vec<InstrumentTerm> {
    let n = z.len();
    let m = candidates.len();
    if m <= 10 {
        let mut best: Option<(f64, Vec<InstrumentTerm>)> = None;
        for mask in 0..(1u32 << m) {
            let subset: Vec<InstrumentTerm> = (0..m)
                .filter(|j| mask & (1 << j) != 0)
                .map(|j| candidates[j])
                .collect();
            if let Some((_, rss)) = least_squares_fit(&subset, z, target) {
                let score = bic(rss, n, subset.len());
                let better = match &best {
                    None => true,
                    Some((b, terms)) => {
                        score < *b - 1e-12 || (score < *b + 1e-12 && subset.len() < terms.len())
                    }
                };
                if better {
                    best = Some((score, subset));
                }
            }
        }
        best.map(|(_, t)| t).unwrap_or_default()
    } else {
        let mut chosen: Vec<InstrumentTerm> = Vec::new();
        let mut remaining: Vec<InstrumentTerm> = candidates.to_vec();
        let mut best_score = bic(target.iter().map(|t| t * t).sum(), n, 0);
        loop {
            let mut improved: Option<(usize, f64)> = None;
            for (j, term) in remaining.iter().enumerate() {
                let mut trial = chosen.clone();
                trial.push(*term);
                if let Some((_, rss)) = least_squares_fit(&trial, z, target) {
                    let score = bic(rss, n, trial.len());
                    if score < best_score - 1e-12
                        && improved.map(|(_, s)| score < s).unwrap_or(true)
                    {
                        improved = Some((j, score));
                    }
                }
            }
            match improved {
                Some((j, score)) => {
                    chosen.push(remaining.remove(j));
                    best_score = score;
                }
                None => break,
            }
        }
        chosen
    }
}

/// Slices ranked individuals into K equal strata of size floor(n/K); the
/// highest-ranked leftovers are excluded.
fn assign_from_ranking(
    ranked: &[usize],
    n: usize,
    k: usize,
    method: StratifyMethod,
) -> StratumAssignment {
    let per = n / k;
    let mut assignment = vec![None; n];
    for (pos, &row) in ranked.iter().enumerate() {
        let stratum = pos / per;
        if stratum < k {
            assignment[row] = Some((stratum + 1) as u32);
        }
    }
    let excluded = n - k * per;
    StratumAssignment {
        assignment,
        strata_count: k,
        excluded_count: excluded,
        method,
    }
}

/// Prediction-based (residual) stratification.
///
/// Fits the instrument model on the working exposure scale, ranks the
/// residuals, and slices the ranking into K strata of size floor(n/K).
pub fn residual_stratify(
    data: &Dataset,
    k: usize,
    model: &ExposureModelSpec,
) -> Result<StratumAssignment> {
    let n = data.len();
    if k < 1 || k > n {
        return Err(Error::InvalidArgument(format!(
            "strata count {k} out of range for n={n}"
        )));
    }
    if model.candidate_terms.is_empty() {
        return Err(Error::InvalidConfig("candidate term list is empty".into()));
    }
    let uses_instrument = model
        .candidate_terms
        .iter()
        .any(|t| !matches!(t, InstrumentTerm::Intercept));
    if uses_instrument && numeric::variance(&data.z) == 0.0 {
        return Err(Error::DegenerateInstrument { stratum: None });
    }

    let working: Vec<f64> = data
        .x
        .iter()
        .map(|&x| model.transform.to_working(x))
        .collect::<Result<_>>()?;

    let terms = match model.selection {
        TermSelection::Fixed => model.candidate_terms.clone(),
        TermSelection::Bic => select_terms_bic(&model.candidate_terms, &data.z, &working),
    };
    let (coef, _) = least_squares_fit(&terms, &data.z, &working)
        .ok_or(Error::DegenerateInstrument { stratum: None })?;

    let residuals: Vec<f64> = data
        .z
        .iter()
        .zip(&working)
        .map(|(&z, &w)| {
            let fitted: f64 = terms
                .iter()
                .zip(&coef)
                .map(|(term, c)| c * term.eval(z))
                .sum();
            w - fitted
        })
        .collect();

    let ranked = rank_indices(&residuals);
    let out = assign_from_ranking(&ranked, n, k, StratifyMethod::Residual);
    out.validate()?;
    Ok(out)
}

/// Matching-based (doubly-ranked) stratification.
///
/// Ranks by instrument into pre-strata of size S, ranks by exposure within
/// each pre-stratum, and collects equal within-pre-stratum rank blocks into
/// the final strata.
pub fn doubly_ranked_stratify(data: &Dataset, k: usize, s: usize) -> Result<StratumAssignment> {
    let n = data.len();
    if k < 1 {
        return Err(Error::InvalidArgument("strata count must be >= 1".into()));
    }
    if s == 0 || !s.is_multiple_of(k) {
        return Err(Error::InvalidArgument(format!(
            "pre-stratum size {s} is not a positive multiple of K={k}"
        )));
    }
    if s > n {
        return Err(Error::InvalidArgument(format!(
            "pre-stratum size {s} exceeds sample size {n}"
        )));
    }

    let per = s / k;
    let z_ranked = rank_indices(&data.z);
    let pre_count = n / s;
    let mut assignment = vec![None; n];

    for pre in 0..pre_count {
        let members = &z_ranked[pre * s..(pre + 1) * s];
        // Rank by exposure within this pre-stratum, ties by original index.
        let mut by_x: Vec<usize> = members.to_vec();
        by_x.sort_by(|&a, &b| data.x[a].partial_cmp(&data.x[b]).unwrap().then(a.cmp(&b)));
        for (pos, &row) in by_x.iter().enumerate() {
            let stratum = pos / per;
            assignment[row] = Some((stratum + 1) as u32);
        }
    }

    let excluded = n - pre_count * s;
    let out = StratumAssignment {
        assignment,
        strata_count: k,
        excluded_count: excluded,
        method: StratifyMethod::DoublyRanked,
    };
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(z: &[f64], x: &[f64]) -> Dataset {
        let y: Vec<f64> = x.iter().map(|v| v + 1.0).collect();
        Dataset::new(z.to_vec(), x.to_vec(), y).unwrap()
    }

    #[test]
    fn residual_intercept_only_hand_trace() {
        // Residual = x - mean(x); ranks (4,1,3,2) for x=(4,1,3,2).
        let data = dataset(&[0.0, 0.0, 0.0, 0.0], &[4.0, 1.0, 3.0, 2.0]);
        let model = ExposureModelSpec {
            candidate_terms: vec![InstrumentTerm::Intercept],
            ..Default::default()
        };
        let a = residual_stratify(&data, 2, &model).unwrap();
        assert_eq!(a.assignment, vec![Some(2), Some(1), Some(2), Some(1)]);
        assert_eq!(a.excluded_count, 0);
    }

    #[test]
    fn residual_zero_residual_ties_break_by_index() {
        // x = z exactly: the {1, z} fit is exact, all residuals zero.
        let z = [0.3, 0.1, 0.7, 0.5];
        let data = dataset(&z, &z);
        let a = residual_stratify(&data, 2, &ExposureModelSpec::default()).unwrap();
        assert_eq!(a.assignment, vec![Some(1), Some(1), Some(2), Some(2)]);
    }

    #[test]
    fn residual_excludes_leftover() {
        let data = dataset(&[0.0; 5], &[5.0, 4.0, 3.0, 2.0, 1.0]);
        let model = ExposureModelSpec {
            candidate_terms: vec![InstrumentTerm::Intercept],
            ..Default::default()
        };
        let a = residual_stratify(&data, 2, &model).unwrap();
        assert_eq!(a.excluded_count, 1);
        // Highest-ranked leftover is the largest residual, row 0.
        assert_eq!(a.assignment[0], None);
    }

    #[test]
    fn residual_rejects_constant_instrument() {
        let data = dataset(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]);
        let err = residual_stratify(&data, 2, &ExposureModelSpec::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateInstrument { .. }));
    }

    #[test]
    fn residual_log_transform_domain() {
        let data = dataset(&[0.0, 1.0], &[-1.0, 2.0]);
        let model = ExposureModelSpec {
            transform: Transform::Log,
            ..Default::default()
        };
        assert!(matches!(
            residual_stratify(&data, 2, &model),
            Err(Error::TransformDomain(_))
        ));
    }

    #[test]
    fn bic_selection_drops_noise_term() {
        // x depends on z linearly; the quadratic term should not survive BIC.
        let n = 400;
        let z: Vec<f64> = (0..n).map(|i| (i as f64 / n as f64) * 4.0 - 2.0).collect();
        let x: Vec<f64> = z
            .iter()
            .enumerate()
            .map(|(i, &zv)| 2.0 * zv + ((i * 2654435761) % 997) as f64 / 997.0 - 0.5)
            .collect();
        let chosen = select_terms_bic(
            &[
                InstrumentTerm::Intercept,
                InstrumentTerm::Power(1),
                InstrumentTerm::Power(2),
            ],
            &z,
            &x,
        );
        assert!(chosen.contains(&InstrumentTerm::Power(1)));
        assert!(!chosen.contains(&InstrumentTerm::Power(2)));
    }

    #[test]
    fn doubly_ranked_hand_trace() {
        let data = dataset(&[1.0, 2.0, 3.0, 4.0], &[5.0, 3.0, 9.0, 7.0]);
        let a = doubly_ranked_stratify(&data, 2, 2).unwrap();
        // Pre-strata {rows 0,1} and {rows 2,3}; lower x in each goes to
        // stratum 1: rows 1 and 3.
        assert_eq!(a.assignment, vec![Some(2), Some(1), Some(2), Some(1)]);
        assert_eq!(a.excluded_count, 0);
    }

    #[test]
    fn doubly_ranked_constant_exposure_still_partitions() {
        let data = dataset(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 1.0, 1.0]);
        let a = doubly_ranked_stratify(&data, 2, 2).unwrap();
        let rows = a.strata_rows();
        assert_eq!(rows[0].len(), 2);
        assert_eq!(rows[1].len(), 2);
        // Ties break by original index within each pre-stratum.
        assert_eq!(a.assignment, vec![Some(1), Some(2), Some(1), Some(2)]);
    }

    #[test]
    fn doubly_ranked_excludes_trailing_z_rank() {
        let data = dataset(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let a = doubly_ranked_stratify(&data, 2, 2).unwrap();
        assert_eq!(a.excluded_count, 1);
        assert_eq!(a.assignment[4], None);
    }

    #[test]
    fn doubly_ranked_rejects_bad_pre_stratum_size() {
        let data = dataset(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]);
        assert!(doubly_ranked_stratify(&data, 2, 3).is_err());
        assert!(doubly_ranked_stratify(&data, 2, 4).is_err());
    }

    #[test]
    fn partition_property() {
        let n = 103;
        let z: Vec<f64> = (0..n).map(|i| ((i * 7919) % n) as f64).collect();
        let x: Vec<f64> = (0..n).map(|i| ((i * 104729) % n) as f64).collect();
        let data = dataset(&z, &x);
        for a in [
            doubly_ranked_stratify(&data, 5, 5).unwrap(),
            residual_stratify(&data, 5, &ExposureModelSpec::default()).unwrap(),
        ] {
            let assigned: usize = a.assignment.iter().filter(|v| v.is_some()).count();
            assert_eq!(assigned + a.excluded_count, n);
            let rows = a.strata_rows();
            assert_eq!(rows.len(), 5);
            for r in &rows {
                assert_eq!(r.len(), n / 5);
            }
        }
    }

    #[test]
    fn deterministic_for_identical_inputs() {
        let n = 64;
        let z: Vec<f64> = (0..n).map(|i| ((i * 31) % 17) as f64).collect();
        let x: Vec<f64> = (0..n).map(|i| ((i * 57) % 23) as f64).collect();
        let data = dataset(&z, &x);
        let a = doubly_ranked_stratify(&data, 4, 8).unwrap();
        let b = doubly_ranked_stratify(&data, 4, 8).unwrap();
        assert_eq!(a, b);
    }
}

//! Factorial-effect estimators and their covariances.
//!
//! Two families live here. The "true" covariances consume the full science
//! table and give the exact randomization-distribution covariance of the
//! estimator under complete randomization or matched-pair randomization.
//! The data-only estimators consume `ObservedData` alone; their bias
//! matrices are positive semi-definite, so they are conservative. The type
//! split keeps estimators from ever touching counterfactual outcomes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_matrix::ModelMatrix;
use crate::population::{
    effect_from_cells, pair_effects, pair_means, population_effect, treatment_variance,
    unit_effects, EffectVector, Pairing, ScienceTable,
};
use crate::randomization::ObservedData;

/// Which randomization scheme produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignTag {
    Cr,
    Mp,
}

impl std::fmt::Display for DesignTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DesignTag::Cr => write!(f, "cr"),
            DesignTag::Mp => write!(f, "mp"),
        }
    }
}

/// Point estimate plus covariance estimate, as emitted by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub design: DesignTag,
    pub k: usize,
    pub n: usize,
    pub r: usize,
    pub labels: Vec<String>,
    pub point: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

impl EstimateReport {
    pub fn new(
        design: DesignTag,
        m: &ModelMatrix,
        obs: &ObservedData,
        point: &EffectVector,
        covariance: &DMatrix<f64>,
    ) -> Self {
        EstimateReport {
            design,
            k: obs.k(),
            n: obs.n(),
            r: obs.replicates(),
            labels: m.column_labels(),
            point: point.iter().copied().collect(),
            covariance: matrix_rows(covariance),
        }
    }
}

/// Nested-vec view of a matrix, row-major.
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

// Internal consistency guard: assembly from symmetric pieces must not drift.
const SYMMETRY_GUARD: f64 = 1e-12;

/// Symmetrizes (M + M')/2 and panics on asymmetry beyond round-off; the
/// formulas here are symmetric in exact arithmetic.
fn symmetrized(m: DMatrix<f64>) -> DMatrix<f64> {
    let scale = m.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let sym = (&m + m.transpose()) * 0.5;
    let drift = (&m - &sym).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    assert!(
        drift <= SYMMETRY_GUARD * scale,
        "covariance assembly lost symmetry (drift {drift})"
    );
    sym
}

/// Minimum eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, &v| acc.min(v))
}

/// PSD check with the eigenvalue floor -tol * trace.
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    min_eigenvalue(m) >= -tol * m.trace().abs().max(1.0)
}

// sum over treatments of lambda_l' lambda_l * weight_l
fn weighted_row_outer_sum(m: &ModelMatrix, weights: &[f64]) -> DMatrix<f64> {
    let side = m.side();
    let mut out = DMatrix::zeros(side, side);
    for (l, &w) in weights.iter().enumerate().take(side) {
        let lam = m.row(l).expect("row in range");
        for a in 0..side {
            for b in 0..side {
                out[(a, b)] += w * (lam[a] * lam[b]) as f64;
            }
        }
    }
    out
}

fn outer(v: &DVector<f64>) -> DMatrix<f64> {
    v * v.transpose()
}

fn scale_coefficient(k: usize, r: usize) -> f64 {
    // 1 / (2^{2(K-1)} r)
    1.0 / ((1u64 << (2 * (k - 1))) as f64 * r as f64)
}

/// tau-hat under complete randomization: the model-matrix contrast of
/// per-treatment observed means.
pub fn estimate_cr(obs: &ObservedData, m: &ModelMatrix) -> Result<EffectVector> {
    let per_treatment = complete_cells(obs, m)?;
    let means: Vec<f64> = per_treatment
        .iter()
        .map(|ys| ys.iter().sum::<f64>() / ys.len() as f64)
        .collect();
    effect_from_cells(m, &means)
}

/// Exact covariance of the complete-randomization estimator, from the full
/// science table.
pub fn true_cov_cr(st: &ScienceTable, m: &ModelMatrix) -> Result<DMatrix<f64>> {
    let r = st.replicates()?;
    if st.n() < 2 {
        return Err(Error::Estimator("covariance needs at least 2 units".into()));
    }
    let variances: Vec<f64> = (0..st.cells())
        .map(|l| treatment_variance(st, l))
        .collect::<Result<_>>()?;
    let first = weighted_row_outer_sum(m, &variances) * scale_coefficient(st.k(), r);

    let tau = population_effect(st, m)?;
    let mut spread = DMatrix::zeros(st.cells(), st.cells());
    for tau_i in unit_effects(st, m)? {
        spread += outer(&(tau_i - &tau));
    }
    let n = st.n() as f64;
    Ok(symmetrized(first - spread / (n * (n - 1.0))))
}

/// Population outer-product spread divided by N^2 - N: the exact bias of the
/// Neymanian complete-randomization covariance estimator.
pub fn cr_bias(st: &ScienceTable, m: &ModelMatrix) -> Result<DMatrix<f64>> {
    let tau = population_effect(st, m)?;
    let mut spread = DMatrix::zeros(st.cells(), st.cells());
    for tau_i in unit_effects(st, m)? {
        spread += outer(&(tau_i - &tau));
    }
    let n = st.n() as f64;
    Ok(symmetrized(spread / (n * n - n)))
}

/// Neymanian covariance estimator under complete randomization, built from
/// within-treatment sample variances of the observed outcomes.
pub fn neyman_cov_cr(obs: &ObservedData, m: &ModelMatrix) -> Result<DMatrix<f64>> {
    let per_treatment = complete_cells(obs, m)?;
    let r = obs.replicates();
    if r < 2 {
        return Err(Error::Estimator(
            "Neymanian CR estimator undefined for r=1".into(),
        ));
    }
    let sample_vars: Vec<f64> = per_treatment
        .iter()
        .map(|ys| {
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (ys.len() - 1) as f64
        })
        .collect();
    Ok(symmetrized(
        weighted_row_outer_sum(m, &sample_vars) * scale_coefficient(obs.k(), r),
    ))
}

/// Per-pair estimates tau-hat_{j.} from matched-pair observed data.
pub fn pair_estimates(obs: &ObservedData, m: &ModelMatrix) -> Result<Vec<EffectVector>> {
    let pair_outcomes = matched_cells(obs, m)?;
    pair_outcomes
        .iter()
        .map(|row| effect_from_cells(m, row))
        .collect()
}

/// The matched-pair estimator: mean over pairs of the per-pair contrasts.
pub fn estimate_mp(obs: &ObservedData, m: &ModelMatrix) -> Result<EffectVector> {
    let per_pair = pair_estimates(obs, m)?;
    let r = per_pair.len() as f64;
    let mut sum = DVector::zeros(m.side());
    for tau_j in &per_pair {
        sum += tau_j;
    }
    Ok(sum / r)
}

/// Exact covariance of the matched-pair estimator: the weighted row-outer
/// sum of the within-pair variance components Delta_l minus the
/// between-pair-corrected effect spread.
pub fn true_cov_mp(st: &ScienceTable, p: &Pairing, m: &ModelMatrix) -> Result<DMatrix<f64>> {
    let r = p.len();
    let cells = st.cells();
    let n = st.n() as f64;

    let means = pair_means(st, p)?;
    let deltas: Vec<f64> = (0..cells)
        .map(|l| {
            let grand = st.treatment_mean(l);
            let between: f64 = means.iter().map(|row| (row[l] - grand).powi(2)).sum();
            let s2 = treatment_variance(st, l)?;
            Ok(((n - 1.0) * s2 - cells as f64 * between) / (cells - 1) as f64)
        })
        .collect::<Result<_>>()?;
    let coeff = 1.0 / ((1u64 << (2 * (st.k() - 1))) as f64 * (r * r) as f64);
    let first = weighted_row_outer_sum(m, &deltas) * coeff;

    let tau = population_effect(st, m)?;
    let mut sigma = DMatrix::zeros(cells, cells);
    for tau_i in unit_effects(st, m)? {
        sigma += outer(&(tau_i - &tau));
    }
    for tau_j in pair_effects(st, p, m)? {
        sigma -= outer(&(tau_j - &tau)) * cells as f64;
    }
    let second_coeff = 1.0 / ((cells * (cells - 1) * r * r) as f64);
    Ok(symmetrized(first - sigma * second_coeff))
}

/// The K=1 matched-pair variance of the treatment effect, written directly
/// as the sum of squared within-pair effect differences over 4r^2. Must
/// agree with the treatment-effect entry of [`true_cov_mp`].
pub fn true_var_mp_k1(st: &ScienceTable, p: &Pairing) -> Result<f64> {
    if st.k() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "K=1 variance formula called with k={}",
            st.k()
        )));
    }
    crate::population::check_pairing(st, p)?;
    let r = p.len() as f64;
    let mut sum = 0.0;
    for block in p.blocks() {
        let (u1, u2) = (block[0], block[1]);
        // treatment index 1 is z = +1, index 0 is z = -1
        let d = st.outcome(u1, 1) - st.outcome(u2, 0) - st.outcome(u2, 1) + st.outcome(u1, 0);
        sum += d * d;
    }
    Ok(sum / (4.0 * r * r))
}

/// Covariance estimator for the matched-pair estimator: scaled spread of the
/// per-pair estimates around their mean. PSD by construction.
pub fn cov_estimator_mp(obs: &ObservedData, m: &ModelMatrix) -> Result<DMatrix<f64>> {
    let per_pair = pair_estimates(obs, m)?;
    let r = per_pair.len();
    if r < 2 {
        return Err(Error::Estimator(
            "MP covariance estimator requires >= 2 pairs".into(),
        ));
    }
    let point = estimate_mp(obs, m)?;
    let mut sum = DMatrix::zeros(m.side(), m.side());
    for tau_j in &per_pair {
        sum += outer(&(tau_j - &point));
    }
    Ok(symmetrized(sum / (r * (r - 1)) as f64))
}

/// Exact bias of [`cov_estimator_mp`]: the between-pair effect spread over
/// r(r-1). PSD, hence the estimator is conservative.
pub fn mp_bias(st: &ScienceTable, p: &Pairing, m: &ModelMatrix) -> Result<DMatrix<f64>> {
    let r = p.len();
    if r < 2 {
        return Err(Error::Estimator(
            "MP covariance estimator requires >= 2 pairs".into(),
        ));
    }
    let tau = population_effect(st, m)?;
    let mut sum = DMatrix::zeros(st.cells(), st.cells());
    for tau_j in pair_effects(st, p, m)? {
        sum += outer(&(tau_j - &tau));
    }
    Ok(symmetrized(sum / (r * (r - 1)) as f64))
}

fn complete_cells<'a>(obs: &'a ObservedData, m: &ModelMatrix) -> Result<&'a [Vec<f64>]> {
    match obs {
        ObservedData::Complete { k, per_treatment } => {
            if *k != m.k() {
                return Err(Error::DimensionMismatch(format!(
                    "observed data has k={k} but model matrix has k={}",
                    m.k()
                )));
            }
            if per_treatment.iter().any(|ys| ys.is_empty()) {
                return Err(Error::Estimator("empty treatment cell".into()));
            }
            Ok(per_treatment)
        }
        ObservedData::MatchedPair { .. } => Err(Error::Estimator(
            "complete-randomization estimator given matched-pair data".into(),
        )),
    }
}

fn matched_cells<'a>(obs: &'a ObservedData, m: &ModelMatrix) -> Result<&'a [Vec<f64>]> {
    match obs {
        ObservedData::MatchedPair { k, pair_outcomes } => {
            if *k != m.k() {
                return Err(Error::DimensionMismatch(format!(
                    "observed data has k={k} but model matrix has k={}",
                    m.k()
                )));
            }
            if pair_outcomes.is_empty() {
                return Err(Error::Estimator("no pairs in observed data".into()));
            }
            Ok(pair_outcomes)
        }
        ObservedData::Complete { .. } => Err(Error::Estimator(
            "matched-pair estimator given complete-randomization data".into(),
        )),
    }
}

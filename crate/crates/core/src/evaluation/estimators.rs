//! Point estimators of per-bank metrics from marginal information only.

use serde::{Deserialize, Serialize};

use super::QuartileErrorReport;
use crate::ensembles::{
    fit_bipecm, fit_bipwcm, fit_mecapm, mecapm_expected_indirect_vulnerability, mecapm_expected_systemicness,
    EnsembleParams, SolverOptions, BIPECM_TOL, BIPWCM_TOL,
};
use crate::error::{Error, Result};
use crate::model::{degrees, marginals, BankSheet, DegreeSequences, HoldingsMatrix, MarketParams, StrengthSequences};
use crate::reconstruct::capm_matrix;
use crate::registry::Registry;
use crate::riskmetrics::{risk_report, RiskReport};
use crate::sampling::{mc_metrics, Metric};

/// What an estimator may look at.
pub struct EstimatorInput<'a> {
    pub strengths: &'a StrengthSequences,
    pub degrees: &'a DegreeSequences,
    pub sheet: &'a BankSheet,
    pub market: &'a MarketParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricEstimate {
    pub systemicness: Vec<f64>,
    pub indirect_vulnerability: Vec<f64>,
}

pub trait Estimator: Send + Sync {
    fn name(&self) -> &'static str;

    /// `m` and `seed` only matter for Monte-Carlo estimators.
    fn estimate(&self, input: &EstimatorInput, m: usize, seed: u64) -> Result<MetricEstimate>;
}

/// Metrics of the CAPM matrix.
pub struct CapmPlugIn;

/// Closed-form MECAPM expectations.
pub struct MecapmClosedForm;

/// Monte-Carlo means under the fitted BIPWCM.
pub struct BipwcmMc;

/// Monte-Carlo means under the fitted BIPECM (uses degrees).
pub struct BipecmMc;

impl Estimator for CapmPlugIn {
    fn name(&self) -> &'static str {
        "capm"
    }

    fn estimate(&self, input: &EstimatorInput, _: usize, _: u64) -> Result<MetricEstimate> {
        let r = risk_report(&capm_matrix(input.strengths), input.sheet, input.market)?;
        Ok(MetricEstimate { systemicness: r.systemicness, indirect_vulnerability: r.indirect_vulnerability })
    }
}

impl Estimator for MecapmClosedForm {
    fn name(&self) -> &'static str {
        "mecapm"
    }

    fn estimate(&self, input: &EstimatorInput, _: usize, _: u64) -> Result<MetricEstimate> {
        Ok(MetricEstimate {
            systemicness: mecapm_expected_systemicness(input.strengths, input.sheet, input.market)?.expected,
            indirect_vulnerability: mecapm_expected_indirect_vulnerability(input.strengths, input.sheet, input.market)?,
        })
    }
}

fn mc_means(p: &EnsembleParams, input: &EstimatorInput, m: usize, seed: u64) -> Result<MetricEstimate> {
    let b = mc_metrics(p, input.sheet, input.market, m, seed)?;
    Ok(MetricEstimate {
        systemicness: b.means(Metric::Systemicness),
        indirect_vulnerability: b.means(Metric::IndirectVulnerability),
    })
}

impl Estimator for BipwcmMc {
    fn name(&self) -> &'static str {
        "bipwcm"
    }

    fn estimate(&self, input: &EstimatorInput, m: usize, seed: u64) -> Result<MetricEstimate> {
        mc_means(&fit_bipwcm(input.strengths, &SolverOptions::with_tol(BIPWCM_TOL))?, input, m, seed)
    }
}

impl Estimator for BipecmMc {
    fn name(&self) -> &'static str {
        "bipecm"
    }

    fn estimate(&self, input: &EstimatorInput, m: usize, seed: u64) -> Result<MetricEstimate> {
        let p = fit_bipecm(input.strengths, input.degrees, &SolverOptions::with_tol(BIPECM_TOL))?;
        mc_means(&p, input, m, seed)
    }
}

pub fn estimators() -> Registry<dyn Estimator> {
    let mut r: Registry<dyn Estimator> = Registry::new("estimator");
    r.register("capm", Box::new(CapmPlugIn));
    r.register("mecapm", Box::new(MecapmClosedForm));
    r.register("bipwcm", Box::new(BipwcmMc));
    r.register("bipecm", Box::new(BipecmMc));
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub code: String,
    pub message: String,
}

impl From<&Error> for Failure {
    fn from(e: &Error) -> Self {
        Failure { code: e.code().to_string(), message: e.to_string() }
    }
}

/// Reports for S and IV, or the error that stopped this estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOutcome {
    pub estimator: String,
    pub reports: Vec<QuartileErrorReport>,
    pub failure: Option<Failure>,
}

fn evaluate_one(
    est: &dyn Estimator,
    input: &EstimatorInput,
    truth: &RiskReport,
    m: usize,
    seed: u64,
) -> Result<Vec<QuartileErrorReport>> {
    let e = est.estimate(input, m, seed)?;
    let ids = &truth.bank_ids;
    Ok(vec![
        QuartileErrorReport::build(Metric::Systemicness, est.name(), ids, &e.systemicness, &truth.systemicness)?,
        QuartileErrorReport::build(
            Metric::IndirectVulnerability,
            est.name(),
            ids,
            &e.indirect_vulnerability,
            &truth.indirect_vulnerability,
        )?,
    ])
}

/// Runs each named estimator on the marginals of `holdings` and scores it
/// against the metrics of `holdings` itself. A failing estimator is
/// reported in its outcome; the others still run.
pub fn estimator_comparison(
    holdings: &HoldingsMatrix,
    sheet: &BankSheet,
    market: &MarketParams,
    names: &[&str],
    m: usize,
    seed: u64,
) -> Result<Vec<EstimatorOutcome>> {
    let registry = estimators();
    let selected: Vec<&dyn Estimator> = names.iter().map(|n| registry.get(n)).collect::<Result<_>>()?;
    let truth = risk_report(holdings, sheet, market)?;
    let strengths = marginals(holdings)?;
    let degrees = degrees(holdings, 0.0);
    let input = EstimatorInput { strengths: &strengths, degrees: &degrees, sheet, market };
    Ok(selected
        .into_iter()
        .map(|est| match evaluate_one(est, &input, &truth, m, seed) {
            Ok(reports) => EstimatorOutcome { estimator: est.name().to_string(), reports, failure: None },
            Err(e) => {
                log::warn!("estimator {} failed: {e}", est.name());
                EstimatorOutcome { estimator: est.name().to_string(), reports: Vec::new(), failure: Some((&e).into()) }
            }
        })
        .collect())
}

/// The CAPM matrix of `holdings`, with the same balance sheet.
pub fn capm_truth(holdings: &HoldingsMatrix, sheet: &BankSheet) -> Result<(HoldingsMatrix, BankSheet)> {
    let x = capm_matrix(&marginals(holdings)?);
    let sheet = BankSheet::from_leverages(x.row_sums(), sheet.leverages())?;
    Ok((x, sheet))
}

/// One draw from the MECAPM fitted to `holdings`, keeping each bank's
/// leverage. Banks that draw an empty row are dropped.
pub fn mecapm_truth(holdings: &HoldingsMatrix, sheet: &BankSheet, seed: u64) -> Result<(HoldingsMatrix, BankSheet)> {
    let p = fit_mecapm(&marginals(holdings)?);
    let x = crate::sampling::sample_matrix(&p, seed);
    let keep: Vec<usize> = (0..x.n_banks()).filter(|&n| x.row(n).iter().any(|v| *v > 0.0)).collect();
    let x = x.select_banks(&keep)?;
    let lev: Vec<f64> = keep.iter().map(|&n| sheet.leverages()[n]).collect();
    let sheet = BankSheet::from_leverages(x.row_sums(), &lev)?;
    Ok((x, sheet))
}

//! Accuracy of reconstructed metrics: relative errors against the true
//! values, binned into quartiles of the true metric.

mod estimators;
mod synthetic;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

pub use estimators::{
    capm_truth, estimator_comparison, estimators, mecapm_truth, BipecmMc, BipwcmMc, CapmPlugIn, Estimator,
    EstimatorInput, EstimatorOutcome, Failure, MecapmClosedForm, MetricEstimate,
};
pub use synthetic::{generate_quarters, generate_scenario, ScenarioConfig, SyntheticScenario};

use crate::error::{Error, Result};
use crate::numeric::quantile_sorted;
use crate::sampling::Metric;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Relative errors of the banks with nonzero truth. `errors[i]` belongs to
/// bank `included[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeErrors {
    pub errors: Vec<f64>,
    pub included: Vec<usize>,
    pub excluded: Vec<usize>,
}

/// `(estimated - truth) / truth`, skipping banks whose truth is zero.
pub fn relative_errors(estimated: &[f64], truth: &[f64]) -> Result<RelativeErrors> {
    if estimated.len() != truth.len() {
        return Err(Error::Validation(vec![format!("{} estimates for {} true values", estimated.len(), truth.len())]));
    }
    let mut out = RelativeErrors { errors: Vec::new(), included: Vec::new(), excluded: Vec::new() };
    for (i, (&e, &t)) in estimated.iter().zip(truth).enumerate() {
        if t == 0.0 {
            out.excluded.push(i);
        } else {
            out.errors.push((e - t) / t);
            out.included.push(i);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuartileStats {
    pub median: f64,
    pub iqr: f64,
    pub count: usize,
}

/// Positions of the four rank quartiles, smallest truths first. Ties keep
/// input order, which callers supply sorted by bank id.
pub fn quartile_partition(truth: &[f64]) -> Result<[Vec<usize>; 4]> {
    let n = truth.len();
    if n < 4 {
        return Err(Error::TooFewBanks { got: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| truth[i].partial_cmp(&truth[j]).unwrap_or(Ordering::Equal));
    Ok(std::array::from_fn(|q| order[q * n / 4..(q + 1) * n / 4].to_vec()))
}

fn stats(values: &mut [f64]) -> QuartileStats {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    QuartileStats {
        median: quantile_sorted(values, 0.5),
        iqr: quantile_sorted(values, 0.75) - quantile_sorted(values, 0.25),
        count: values.len(),
    }
}

/// Median and interquartile range of the errors in each truth quartile.
pub fn quartile_report(errors: &[f64], truth: &[f64]) -> Result<[QuartileStats; 4]> {
    if errors.len() != truth.len() {
        return Err(Error::Validation(vec![format!("{} errors for {} true values", errors.len(), truth.len())]));
    }
    let parts = quartile_partition(truth)?;
    Ok(parts.map(|idx| stats(&mut idx.iter().map(|&i| errors[i]).collect::<Vec<_>>())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartileErrorReport {
    pub metric: Metric,
    pub estimator: String,
    pub quartiles: [QuartileStats; 4],
    /// Banks left out because their true metric is zero.
    pub excluded: Vec<String>,
}

impl QuartileErrorReport {
    /// Errors of `estimated` against `truth`, ordered by bank id so ties in
    /// the truth are broken by id.
    pub fn build(metric: Metric, estimator: &str, ids: &[String], estimated: &[f64], truth: &[f64]) -> Result<Self> {
        let rel = relative_errors(estimated, truth)?;
        let mut pairs: Vec<(&str, f64, f64)> =
            rel.included.iter().zip(&rel.errors).map(|(&i, &e)| (ids[i].as_str(), truth[i], e)).collect();
        pairs.sort_by(|a, b| a.0.cmp(b.0));
        let errors: Vec<f64> = pairs.iter().map(|p| p.2).collect();
        let truths: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        Ok(QuartileErrorReport {
            metric,
            estimator: estimator.to_string(),
            quartiles: quartile_report(&errors, &truths)?,
            excluded: rel.excluded.iter().map(|&i| ids[i].clone()).collect(),
        })
    }

    pub fn total_count(&self) -> usize {
        self.quartiles.iter().map(|q| q.count).sum()
    }
}

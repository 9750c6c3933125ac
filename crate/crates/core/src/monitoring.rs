//! Flagging quarters whose observed metric exceeds the upper edge of the
//! band built from a reference quarter's ensemble.

use serde::{Deserialize, Serialize};

use crate::ensembles::{ensemble_models, EnsembleKind, SolverOptions};
use crate::error::{Error, Result};
use crate::model::{degrees, marginals, BankSheet, HoldingsMatrix, MarketParams};
use crate::riskmetrics::{drop_empty_banks, risk_report};
use crate::sampling::{mc_metrics, quantile_band, Metric, QuantileBand};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarterRecord {
    pub quarter: String,
    pub observed: f64,
    pub ref_upper: f64,
    pub band_lower: Option<f64>,
    pub band_upper: Option<f64>,
    /// `observed > ref_upper`; ties do not flag.
    pub flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorResult {
    pub bank_id: String,
    pub reference_quarter: String,
    pub records: Vec<QuarterRecord>,
    /// Number of band comparisons made (no multiple-testing correction).
    pub n_comparisons: usize,
}

impl MonitorResult {
    pub fn n_flags(&self) -> usize {
        self.records.iter().filter(|r| r.flag).count()
    }
}

/// Compares one bank's observed series against the reference band.
///
/// `observed` lists `(quarter, value)` in chronological order and must
/// contain `reference_quarter`. Each entry of `quarter_bands` is attached to
/// the record of the same quarter for reporting.
pub fn monitor_bank(
    bank_id: &str,
    observed: &[(String, f64)],
    reference_quarter: &str,
    reference_band: &QuantileBand,
    quarter_bands: &[(String, QuantileBand)],
) -> Result<MonitorResult> {
    if !observed.iter().any(|(q, _)| q == reference_quarter) {
        return Err(Error::MissingQuarter(format!("reference quarter '{reference_quarter}' has no observation")));
    }
    let ix = reference_band
        .index_of(bank_id)
        .ok_or_else(|| Error::MissingQuarter(format!("bank '{bank_id}' is not in the reference band")))?;
    let ref_upper = reference_band.upper[ix];
    let mut records = Vec::with_capacity(observed.len());
    for (quarter, value) in observed {
        let band = quarter_bands
            .iter()
            .find(|(q, _)| q == quarter)
            .and_then(|(_, b)| b.index_of(bank_id).map(|i| (b.lower[i], b.upper[i])));
        records.push(QuarterRecord {
            quarter: quarter.clone(),
            observed: *value,
            ref_upper,
            band_lower: band.map(|b| b.0),
            band_upper: band.map(|b| b.1),
            flag: *value > ref_upper,
        });
    }
    Ok(MonitorResult {
        bank_id: bank_id.to_string(),
        reference_quarter: reference_quarter.to_string(),
        n_comparisons: records.len(),
        records,
    })
}

/// One quarter of observed data.
#[derive(Debug, Clone)]
pub struct Quarter {
    pub id: String,
    pub holdings: HoldingsMatrix,
    pub sheet: BankSheet,
}

#[derive(Debug, Clone)]
pub struct MonitorConfig {
    pub ensemble: EnsembleKind,
    pub metric: Metric,
    pub n_samples: usize,
    pub seed: u64,
    pub lower_prob: f64,
    pub upper_prob: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            ensemble: EnsembleKind::Mecapm,
            metric: Metric::Systemicness,
            n_samples: 1000,
            seed: 0,
            lower_prob: 0.05,
            upper_prob: 0.95,
        }
    }
}

pub struct MonitorRun {
    pub reference_band: QuantileBand,
    pub quarter_bands: Vec<(String, QuantileBand)>,
    pub results: Vec<MonitorResult>,
}

/// Ensemble band of one quarter, from its own strengths (and degrees).
/// Quarter `q` of the series samples with seed `seed + q`.
fn quarter_band(q: &Quarter, mkt: &MarketParams, cfg: &MonitorConfig, seed: u64) -> Result<QuantileBand> {
    let (x, sheet, _) = drop_empty_banks(&q.holdings, &q.sheet)?;
    let s = marginals(&x)?;
    let d = degrees(&x, 0.0);
    let registry = ensemble_models();
    let model = registry.get(&cfg.ensemble.to_string())?;
    let opts: SolverOptions = model.default_options();
    let params = model.fit(&s, Some(&d), &opts)?;
    let batch = mc_metrics(&params, &sheet, mkt, cfg.n_samples, seed)?;
    quantile_band(&batch, cfg.metric, cfg.lower_prob, cfg.upper_prob)
}

/// Full workflow: the first quarter is the reference; every quarter gets
/// its own band for display; each listed bank's observed metric is
/// compared with the reference upper edge.
pub fn run_monitoring(
    quarters: &[Quarter],
    banks: &[String],
    mkt: &MarketParams,
    cfg: &MonitorConfig,
) -> Result<MonitorRun> {
    let reference = quarters.first().ok_or_else(|| Error::MissingQuarter("no quarters given".into()))?;
    let mut quarter_bands = Vec::with_capacity(quarters.len());
    let mut observed_reports = Vec::with_capacity(quarters.len());
    for (i, q) in quarters.iter().enumerate() {
        let band = quarter_band(q, mkt, cfg, cfg.seed.wrapping_add(i as u64))?;
        quarter_bands.push((q.id.clone(), band));
        let (x, sheet, _) = drop_empty_banks(&q.holdings, &q.sheet)?;
        observed_reports.push(risk_report(&x, &sheet, mkt)?);
    }
    let reference_band = quarter_bands[0].1.clone();
    let mut results = Vec::with_capacity(banks.len());
    for bank in banks {
        let mut observed = Vec::with_capacity(quarters.len());
        for (q, report) in quarters.iter().zip(&observed_reports) {
            let value = match cfg.metric {
                Metric::AggregateVulnerability => Some(report.aggregate_vulnerability),
                metric => report.bank_ids.iter().position(|b| b == bank).map(|i| match metric {
                    Metric::Systemicness => report.systemicness[i],
                    _ => report.indirect_vulnerability[i],
                }),
            };
            let value = value
                .ok_or_else(|| Error::MissingQuarter(format!("bank '{bank}' has no data in quarter '{}'", q.id)))?;
            observed.push((q.id.clone(), value));
        }
        let id = if cfg.metric == Metric::AggregateVulnerability { "AV" } else { bank.as_str() };
        let mut result = monitor_bank(id, &observed, &reference.id, &reference_band, &quarter_bands)?;
        result.bank_id = bank.clone();
        results.push(result);
    }
    Ok(MonitorRun { reference_band, quarter_bands, results })
}

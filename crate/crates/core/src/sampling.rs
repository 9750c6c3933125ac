//! Drawing holdings matrices from a fitted ensemble, Monte-Carlo metric
//! batches and empirical quantile bands.
//!
//! Stream contract: sample `i` of a run with seed `s` uses
//! `ChaCha8Rng::seed_from_u64(s)` on stream `i`. Entries are drawn in
//! row-major order and each consumes exactly two 64-bit words, so entry `e`
//! reads words `2e` and `2e + 1` of that stream. Samples are therefore
//! independent of scheduling and parallel runs equal serial ones bit for bit.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensembles::{EnsembleParams, EntryDistribution};
use crate::error::{Error, Result};
use crate::model::{BankSheet, HoldingsMatrix, MarketParams};
use crate::numeric::{pairwise_sum, quantile_sorted};
use crate::riskmetrics::{risk_report_fixed_sheet, RiskReport, SHEET_TOL};

pub const DEFAULT_LOWER_PROB: f64 = 0.05;
pub const DEFAULT_UPPER_PROB: f64 = 0.95;

/// Generator for sample `index` of a run seeded with `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn draw(table: &[EntryDistribution], p: &EnsembleParams, rng: &mut ChaCha8Rng) -> HoldingsMatrix {
    let values: Vec<f64> = table.iter().map(|d| d.sample(rng)).collect();
    let entries = Array2::from_shape_vec((p.n_banks(), p.n_assets()), values).expect("table has N*K entries");
    HoldingsMatrix::new(entries, p.bank_ids().to_vec(), p.asset_ids().to_vec()).expect("draws are non-negative")
}

/// One integer-valued matrix, stream 0 of `seed`.
pub fn sample_matrix(p: &EnsembleParams, seed: u64) -> HoldingsMatrix {
    sample_matrix_stream(p, seed, 0)
}

/// Sample `index` of the run seeded with `seed`.
pub fn sample_matrix_stream(p: &EnsembleParams, seed: u64, index: u64) -> HoldingsMatrix {
    draw(&p.entry_table(), p, &mut sample_rng(seed, index))
}

/// Reusable sampler that caches the entry laws.
pub struct Sampler<'a> {
    params: &'a EnsembleParams,
    table: Vec<EntryDistribution>,
    seed: u64,
}

impl<'a> Sampler<'a> {
    pub fn new(params: &'a EnsembleParams, seed: u64) -> Self {
        Sampler { params, table: params.entry_table(), seed }
    }

    pub fn sample(&self, index: u64) -> HoldingsMatrix {
        draw(&self.table, self.params, &mut sample_rng(self.seed, index))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "S")]
    Systemicness,
    #[serde(rename = "IV")]
    IndirectVulnerability,
    #[serde(rename = "AV")]
    AggregateVulnerability,
}

impl Metric {
    pub fn label(&self) -> &'static str {
        match self {
            Metric::Systemicness => "S",
            Metric::IndirectVulnerability => "IV",
            Metric::AggregateVulnerability => "AV",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s" | "systemicness" => Ok(Metric::Systemicness),
            "iv" | "indirect_vulnerability" | "indirect-vulnerability" => Ok(Metric::IndirectVulnerability),
            "av" | "aggregate_vulnerability" | "aggregate-vulnerability" => Ok(Metric::AggregateVulnerability),
            _ => Err(Error::Config(format!("unknown metric '{s}' (expected S, IV or AV)"))),
        }
    }
}

/// Monte-Carlo draws of every metric. Row `i` of each array is sample `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub ensemble_hash: String,
    pub seed: u64,
    pub bank_ids: Vec<String>,
    pub systemicness: Array2<f64>,
    pub indirect_vulnerability: Array2<f64>,
    pub aggregate_vulnerability: Vec<f64>,
}

impl SampleBatch {
    pub fn n_samples(&self) -> usize {
        self.aggregate_vulnerability.len()
    }

    pub fn from_reports(
        ensemble_hash: String,
        seed: u64,
        bank_ids: Vec<String>,
        reports: &[RiskReport],
    ) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::Config("a sample batch needs at least one sample".into()));
        }
        let n = bank_ids.len();
        let m = reports.len();
        let mut s = Array2::zeros((m, n));
        let mut iv = Array2::zeros((m, n));
        for (i, r) in reports.iter().enumerate() {
            if r.systemicness.len() != n {
                return Err(Error::Config(format!("sample {i} has {} banks, expected {n}", r.systemicness.len())));
            }
            s.row_mut(i).assign(&ndarray::ArrayView1::from(&r.systemicness));
            iv.row_mut(i).assign(&ndarray::ArrayView1::from(&r.indirect_vulnerability));
        }
        Ok(SampleBatch {
            ensemble_hash,
            seed,
            bank_ids,
            systemicness: s,
            indirect_vulnerability: iv,
            aggregate_vulnerability: reports.iter().map(|r| r.aggregate_vulnerability).collect(),
        })
    }

    /// `M x columns` draws of one metric; AV has a single column.
    pub fn draws(&self, metric: Metric) -> Array2<f64> {
        match metric {
            Metric::Systemicness => self.systemicness.clone(),
            Metric::IndirectVulnerability => self.indirect_vulnerability.clone(),
            Metric::AggregateVulnerability => {
                Array2::from_shape_vec((self.n_samples(), 1), self.aggregate_vulnerability.clone()).expect("column")
            }
        }
    }

    /// Column labels for [`SampleBatch::draws`].
    pub fn labels(&self, metric: Metric) -> Vec<String> {
        match metric {
            Metric::AggregateVulnerability => vec!["AV".into()],
            _ => self.bank_ids.clone(),
        }
    }

    /// Per-column sample means.
    pub fn means(&self, metric: Metric) -> Vec<f64> {
        let d = self.draws(metric);
        let m = d.nrows() as f64;
        d.columns().into_iter().map(|c| pairwise_sum(&c.to_vec()) / m).collect()
    }
}

/// Samples `m` matrices and evaluates every metric on each against the
/// fixed balance sheet (see [`risk_report_fixed_sheet`]). The sheet sizes
/// must be the strengths the ensemble was fitted to.
pub fn mc_metrics(
    p: &EnsembleParams,
    sheet: &BankSheet,
    mkt: &MarketParams,
    m: usize,
    seed: u64,
) -> Result<SampleBatch> {
    if m == 0 {
        return Err(Error::Config("number of samples must be at least 1".into()));
    }
    if sheet.len() != p.n_banks() {
        return Err(Error::InvalidSheet(format!("sheet has {} banks, ensemble has {}", sheet.len(), p.n_banks())));
    }
    for (n, (&a, &b)) in sheet.sizes().iter().zip(p.strengths().bank_sizes()).enumerate() {
        if (a - b).abs() > SHEET_TOL * a.abs().max(b.abs()) {
            return Err(Error::InconsistentSheet { bank: p.bank_ids()[n].clone(), sheet_size: a, row_sum: b });
        }
    }
    let sampler = Sampler::new(p, seed);
    let reports: Vec<RiskReport> = (0..m as u64)
        .into_par_iter()
        .map(|i| risk_report_fixed_sheet(&sampler.sample(i), sheet, mkt))
        .collect::<Result<_>>()?;
    SampleBatch::from_reports(p.content_hash(), seed, p.bank_ids().to_vec(), &reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBand {
    pub metric: Metric,
    pub lower_prob: f64,
    pub upper_prob: f64,
    pub ids: Vec<String>,
    pub lower: Vec<f64>,
    pub point_estimate: Vec<f64>,
    pub upper: Vec<f64>,
    pub n_samples: usize,
}

impl QuantileBand {
    /// Band of the draws in `draws` (`M x columns`), type-7 quantiles.
    pub fn from_draws(
        metric: Metric,
        ids: Vec<String>,
        draws: &Array2<f64>,
        lower_prob: f64,
        upper_prob: f64,
    ) -> Result<Self> {
        if !(0.0 < lower_prob && lower_prob < upper_prob && upper_prob < 1.0) {
            return Err(Error::Config(format!(
                "band probabilities must satisfy 0 < lower < upper < 1, got {lower_prob} and {upper_prob}"
            )));
        }
        let m = draws.nrows();
        let needed = (1.0 / lower_prob.min(1.0 - upper_prob)).ceil() as usize;
        if m < needed {
            return Err(Error::InsufficientSamples { needed, got: m });
        }
        if ids.len() != draws.ncols() {
            return Err(Error::Config(format!("{} labels for {} columns", ids.len(), draws.ncols())));
        }
        let mut band = QuantileBand {
            metric,
            lower_prob,
            upper_prob,
            ids,
            lower: Vec::with_capacity(draws.ncols()),
            point_estimate: Vec::with_capacity(draws.ncols()),
            upper: Vec::with_capacity(draws.ncols()),
            n_samples: m,
        };
        for col in draws.columns() {
            let mut v = col.to_vec();
            band.point_estimate.push(pairwise_sum(&v) / m as f64);
            v.sort_by(f64::total_cmp);
            band.lower.push(quantile_sorted(&v, lower_prob));
            band.upper.push(quantile_sorted(&v, upper_prob));
        }
        Ok(band)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }
}

pub fn quantile_band(b: &SampleBatch, metric: Metric, lower_prob: f64, upper_prob: f64) -> Result<QuantileBand> {
    QuantileBand::from_draws(metric, b.labels(metric), &b.draws(metric), lower_prob, upper_prob)
}

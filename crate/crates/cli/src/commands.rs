use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use firesale_core::ensembles::{ensemble_models, EnsembleParams};
use firesale_core::evaluation::{
    capm_truth, estimator_comparison, estimators, generate_quarters, mecapm_truth, ScenarioConfig,
};
use firesale_core::io::{self, Provenance};
use firesale_core::model::{
    degrees, marginals, BankSheet, DegreeSequences, MarketParams, StrengthSequences, DEFAULT_CASH_ID,
    DEFAULT_ILLIQUIDITY, DEFAULT_SHOCK,
};
use firesale_core::monitoring::{monitor_bank, MonitorResult};
use firesale_core::reconstruct::{reconstructors, DEFAULT_MAX_ITER, DEFAULT_TOL};
use firesale_core::riskmetrics::{drop_empty_banks, risk_report};
use firesale_core::sampling::{mc_metrics, quantile_band, Metric, DEFAULT_LOWER_PROB, DEFAULT_UPPER_PROB};
use firesale_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "firesale", version, about = "Fire-sale systemic risk from bank-asset holdings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Risk metrics of an observed holdings matrix.
    Metrics(MetricsArgs),
    /// Point reconstruction of a holdings matrix from its marginals.
    Reconstruct(ReconstructArgs),
    /// Fit a maximum-entropy ensemble to marginals.
    Fit(FitArgs),
    /// Monte-Carlo metrics of matrices drawn from a fitted ensemble.
    Sample(SampleArgs),
    /// Quantile bands from a sample batch.
    Bands(BandsArgs),
    /// Flag quarters whose observed metric exceeds the reference band.
    Monitor(MonitorArgs),
    /// Compare estimators against the true metrics of a holdings matrix.
    Evaluate(EvaluateArgs),
    /// Generate synthetic holdings quarters.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct MarketArgs {
    /// Asset id treated as cash (zero illiquidity).
    #[arg(long, default_value = DEFAULT_CASH_ID)]
    cash_asset: String,
    #[arg(long, default_value_t = DEFAULT_ILLIQUIDITY)]
    illiquidity: f64,
    #[arg(long, default_value_t = DEFAULT_SHOCK)]
    shock: f64,
    /// Per-asset overrides: `asset_id,illiquidity,shock`.
    #[arg(long)]
    market: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MarginalArgs {
    /// Holdings CSV whose marginals (and degrees) are used.
    #[arg(long, conflicts_with_all = ["banks", "assets"], required_unless_present = "banks")]
    holdings: Option<PathBuf>,
    /// `bank_id,size,equity[,degree]`.
    #[arg(long, requires = "assets")]
    banks: Option<PathBuf>,
    /// `asset_id,cap[,degree]`.
    #[arg(long, requires = "banks")]
    assets: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[arg(long)]
    holdings: PathBuf,
    #[command(flatten)]
    market: MarketArgs,
    /// Fail on banks with no holdings instead of dropping them.
    #[arg(long)]
    strict: bool,
    /// JSON report path (stdout when neither output is given).
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[command(flatten)]
    input: MarginalArgs,
    #[arg(long, default_value = "capm")]
    method: String,
    /// Prior holdings CSV for cross-entropy.
    #[arg(long)]
    prior: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    input: MarginalArgs,
    #[arg(long, default_value = "mecapm")]
    ensemble: String,
    /// Residual tolerance (default depends on the ensemble).
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    params: PathBuf,
    /// Balance sheet source; sizes must match the fitted strengths.
    #[command(flatten)]
    input: MarginalArgs,
    #[command(flatten)]
    market: MarketArgs,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BandsArgs {
    /// Sample batch CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "S")]
    metric: String,
    #[arg(long, default_value_t = DEFAULT_LOWER_PROB)]
    lower_prob: f64,
    #[arg(long, default_value_t = DEFAULT_UPPER_PROB)]
    upper_prob: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MonitorArgs {
    /// Band CSV of the reference quarter.
    #[arg(long)]
    reference_bands: PathBuf,
    /// Holdings CSV per quarter, oldest first; the first is the reference.
    /// The quarter id is the file stem.
    #[arg(long = "quarter", required = true, num_args = 1..)]
    quarters: Vec<PathBuf>,
    /// Band CSVs of the same quarters, for display only.
    #[arg(long = "quarter-bands", num_args = 1..)]
    quarter_bands: Vec<PathBuf>,
    /// Banks to monitor (default: every bank in the reference band).
    #[arg(long = "bank", num_args = 1..)]
    banks: Vec<String>,
    #[command(flatten)]
    market: MarketArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum Truth {
    /// The holdings as given.
    Observed,
    /// The CAPM matrix of the holdings.
    Capm,
    /// One MECAPM draw around the holdings.
    Mecapm,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    holdings: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "capm,mecapm,bipwcm,bipecm")]
    estimators: Vec<String>,
    #[arg(long, value_enum, default_value_t = Truth::Observed)]
    truth: Truth,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    market: MarketArgs,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// JSON report path (stdout when neither output is given).
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    banks: usize,
    /// Asset count including the cash column.
    #[arg(long, default_value_t = 20)]
    assets: usize,
    #[arg(long, default_value_t = 0.5)]
    sparsity: f64,
    #[arg(long)]
    size_log_mean: Option<f64>,
    #[arg(long)]
    size_log_sd: Option<f64>,
    #[arg(long)]
    leverage_mean: Option<f64>,
    #[arg(long)]
    leverage_sd: Option<f64>,
    #[arg(long)]
    no_cash: bool,
    #[arg(long, default_value_t = 1)]
    quarters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Metrics(a) => metrics(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Fit(a) => fit(a),
        Command::Sample(a) => sample(a),
        Command::Bands(a) => bands(a),
        Command::Monitor(a) => monitor(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Synth(a) => synth(a),
    }
}

/// Everything that determines an artifact: parameters plus input content
/// hashes. Output paths are left out so reruns elsewhere hash the same.
struct Config(Map<String, Value>);

impl Config {
    fn new(command: &str) -> Self {
        let mut m = Map::new();
        m.insert("command".into(), json!(command));
        Config(m)
    }

    fn param(&mut self, key: &str, v: Value) -> &mut Self {
        self.0.insert(key.into(), v);
        self
    }

    fn read(&mut self, key: &str, path: &Path) -> Result<String> {
        let text = io::read_text(path)?;
        self.0.insert(format!("input.{key}"), json!(io::sha256_hex(text.as_bytes())));
        Ok(text)
    }

    fn provenance(&self, seed: Option<u64>) -> Provenance {
        Provenance::new(&Value::Object(self.0.clone()), seed)
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => io::write_text(p, text),
        None => Ok(std::io::stdout().write_all(text.as_bytes())?),
    }
}

impl MarketArgs {
    fn load(&self, cfg: &mut Config, asset_ids: &[String]) -> Result<MarketParams> {
        cfg.param("cash_asset", json!(self.cash_asset))
            .param("illiquidity", json!(self.illiquidity))
            .param("shock", json!(self.shock));
        let text = self.market.as_deref().map(|p| cfg.read("market", p)).transpose()?;
        io::parse_market(text.as_deref(), asset_ids, &self.cash_asset, self.illiquidity, self.shock)
    }
}

struct Marginals {
    strengths: StrengthSequences,
    sheet: BankSheet,
    degrees: Option<DegreeSequences>,
}

impl MarginalArgs {
    fn load(&self, cfg: &mut Config) -> Result<Marginals> {
        match (&self.holdings, &self.banks, &self.assets) {
            (Some(h), _, _) => {
                let (x, sheet) = io::parse_holdings(&cfg.read("holdings", h)?)?;
                Ok(Marginals { strengths: marginals(&x)?, degrees: Some(degrees(&x, 0.0)), sheet })
            }
            (None, Some(b), Some(a)) => {
                let s = io::parse_strengths(&cfg.read("banks", b)?, &cfg.read("assets", a)?)?;
                Ok(Marginals { strengths: s.strengths, sheet: s.sheet, degrees: s.degrees })
            }
            _ => Err(Error::Config("give --holdings or both --banks and --assets".into())),
        }
    }
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let mut cfg = Config::new("metrics");
    let (x, sheet) = io::parse_holdings(&cfg.read("holdings", &a.holdings)?)?;
    let mkt = a.market.load(&mut cfg, x.asset_ids())?;
    cfg.param("strict", json!(a.strict));
    let (x, sheet, dropped) = if a.strict { (x, sheet, Vec::new()) } else { drop_empty_banks(&x, &sheet)? };
    let report = risk_report(&x, &sheet, &mkt)?;
    let prov = cfg.provenance(None);
    if let Some(p) = &a.csv {
        io::write_text(p, &io::risk_report_csv(&report, &prov))?;
    }
    if a.json.is_some() || a.csv.is_none() {
        emit(a.json.as_deref(), &io::risk_report_json(&report, &dropped, &prov))?;
    }
    Ok(())
}

fn reconstruct(a: ReconstructArgs) -> Result<()> {
    let mut cfg = Config::new("reconstruct");
    let m = a.input.load(&mut cfg)?;
    cfg.param("method", json!(a.method)).param("tol", json!(a.tol)).param("max_iter", json!(a.max_iter));
    let prior = match &a.prior {
        Some(p) => Some(io::parse_holdings(&cfg.read("prior", p)?)?.0),
        None => None,
    };
    let registry = reconstructors(a.tol, a.max_iter);
    let x = registry.get(&a.method)?.reconstruct(&m.strengths, prior.as_ref(), None)?;
    emit(a.out.as_deref(), &io::holdings_csv(&x, &m.sheet, &cfg.provenance(None)))
}

fn fit(a: FitArgs) -> Result<()> {
    let mut cfg = Config::new("fit");
    let m = a.input.load(&mut cfg)?;
    let registry = ensemble_models();
    let model = registry.get(&a.ensemble)?;
    let mut opts = model.default_options();
    opts.tol = a.tol.unwrap_or(opts.tol);
    opts.max_iter = a.max_iter.unwrap_or(opts.max_iter);
    opts.damping = a.damping.unwrap_or(opts.damping);
    if !(opts.tol >= 0.0 && opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::Config("need tol >= 0 and damping in (0, 1]".into()));
    }
    cfg.param("ensemble", json!(a.ensemble.to_ascii_lowercase()))
        .param("tol", json!(opts.tol))
        .param("max_iter", json!(opts.max_iter))
        .param("damping", json!(opts.damping));
    let p = model.fit(&m.strengths, m.degrees.as_ref(), &opts)?;
    emit(a.out.as_deref(), &io::params_json(&p, &cfg.provenance(None)))
}

fn sample(a: SampleArgs) -> Result<()> {
    let mut cfg = Config::new("sample");
    let p = EnsembleParams::from_json(&cfg.read("params", &a.params)?)?;
    let m = a.input.load(&mut cfg)?;
    let mkt = a.market.load(&mut cfg, p.asset_ids())?;
    cfg.param("samples", json!(a.samples));
    let batch = mc_metrics(&p, &m.sheet, &mkt, a.samples, a.seed)?;
    emit(a.out.as_deref(), &io::sample_batch_csv(&batch, &cfg.provenance(Some(a.seed))))
}

fn bands(a: BandsArgs) -> Result<()> {
    let mut cfg = Config::new("bands");
    let text = cfg.read("samples", &a.input)?;
    let batch = io::parse_sample_batch(&text)?;
    let metric = Metric::parse(&a.metric)?;
    cfg.param("metric", json!(metric.label()))
        .param("lower_prob", json!(a.lower_prob))
        .param("upper_prob", json!(a.upper_prob));
    let band = quantile_band(&batch, metric, a.lower_prob, a.upper_prob)?;
    emit(a.out.as_deref(), &io::band_csv(&band, &cfg.provenance(Some(batch.seed))))
}

fn quarter_id(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn monitor(a: MonitorArgs) -> Result<()> {
    let mut cfg = Config::new("monitor");
    let reference = io::parse_band(&cfg.read("reference_bands", &a.reference_bands)?)?;
    if !a.quarter_bands.is_empty() && a.quarter_bands.len() != a.quarters.len() {
        return Err(Error::Config(format!(
            "{} quarter band files for {} quarters",
            a.quarter_bands.len(),
            a.quarters.len()
        )));
    }
    let mut quarter_bands = Vec::new();
    for (i, (q, b)) in a.quarters.iter().zip(&a.quarter_bands).enumerate() {
        quarter_bands.push((quarter_id(q), io::parse_band(&cfg.read(&format!("quarter_bands.{i}"), b)?)?));
    }
    let mut observed = Vec::new();
    let mut market_loaded = None;
    for (i, q) in a.quarters.iter().enumerate() {
        let (x, sheet) = io::parse_holdings(&cfg.read(&format!("quarter.{i}"), q)?)?;
        let mkt = match &market_loaded {
            Some(m) => m,
            None => market_loaded.insert(a.market.load(&mut cfg, x.asset_ids())?),
        };
        let (x, sheet, _) = drop_empty_banks(&x, &sheet)?;
        observed.push((quarter_id(q), risk_report(&x, &sheet, mkt)?));
    }
    let banks = if a.banks.is_empty() { reference.ids.clone() } else { a.banks.clone() };
    cfg.param("banks", json!(banks));
    let reference_quarter = observed[0].0.clone();
    let mut results: Vec<MonitorResult> = Vec::with_capacity(banks.len());
    for bank in &banks {
        let mut series = Vec::with_capacity(observed.len());
        for (q, r) in &observed {
            let value = match reference.metric {
                Metric::AggregateVulnerability => Some(r.aggregate_vulnerability),
                Metric::Systemicness => r.bank_ids.iter().position(|b| b == bank).map(|i| r.systemicness[i]),
                Metric::IndirectVulnerability => {
                    r.bank_ids.iter().position(|b| b == bank).map(|i| r.indirect_vulnerability[i])
                }
            };
            let value =
                value.ok_or_else(|| Error::MissingQuarter(format!("bank '{bank}' has no data in quarter '{q}'")))?;
            series.push((q.clone(), value));
        }
        results.push(monitor_bank(bank, &series, &reference_quarter, &reference, &quarter_bands)?);
    }
    let flags: usize = results.iter().map(MonitorResult::n_flags).sum();
    let comparisons: usize = results.iter().map(|r| r.n_comparisons).sum();
    log::info!("{flags} flags in {comparisons} comparisons (no multiple-testing correction)");
    emit(a.out.as_deref(), &io::monitor_csv(&results, &cfg.provenance(None)))
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mut cfg = Config::new("evaluate");
    let (x, sheet) = io::parse_holdings(&cfg.read("holdings", &a.holdings)?)?;
    let (x, sheet, _) = drop_empty_banks(&x, &sheet)?;
    let mkt = a.market.load(&mut cfg, x.asset_ids())?;
    let registry = estimators();
    for name in &a.estimators {
        registry.get(name)?;
    }
    cfg.param("estimators", json!(a.estimators))
        .param("truth", json!(format!("{:?}", a.truth).to_ascii_lowercase()))
        .param("samples", json!(a.samples));
    let (x, sheet) = match a.truth {
        Truth::Observed => (x, sheet),
        Truth::Capm => capm_truth(&x, &sheet)?,
        Truth::Mecapm => mecapm_truth(&x, &sheet, a.seed)?,
    };
    let names: Vec<&str> = a.estimators.iter().map(String::as_str).collect();
    let outcomes = estimator_comparison(&x, &sheet, &mkt, &names, a.samples, a.seed)?;
    let prov = cfg.provenance(Some(a.seed));
    if let Some(p) = &a.csv {
        io::write_text(p, &io::evaluation_csv(&outcomes, &prov))?;
    }
    if a.json.is_some() || a.csv.is_none() {
        emit(a.json.as_deref(), &io::evaluation_json(&outcomes, &prov))?;
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let d = ScenarioConfig::default();
    let sc = ScenarioConfig {
        n_banks: a.banks,
        n_assets: a.assets,
        size_log_mean: a.size_log_mean.unwrap_or(d.size_log_mean),
        size_log_sd: a.size_log_sd.unwrap_or(d.size_log_sd),
        leverage_mean: a.leverage_mean.unwrap_or(d.leverage_mean),
        leverage_sd: a.leverage_sd.unwrap_or(d.leverage_sd),
        sparsity: a.sparsity,
        include_cash: !a.no_cash,
    };
    if a.quarters == 0 {
        return Err(Error::Config("need at least one quarter".into()));
    }
    let mut cfg = Config::new("synth");
    cfg.param("scenario", serde_json::to_value(&sc)?).param("quarters", json!(a.quarters));
    let prov = cfg.provenance(Some(a.seed));
    let quarters = generate_quarters(&sc, a.seed, a.quarters)?;
    let width = a.quarters.to_string().len().max(2);
    for (i, q) in quarters.iter().enumerate() {
        let name = format!("holdings_q{:0width$}.csv", i + 1);
        io::write_text(&a.out_dir.join(name), &io::holdings_csv(&q.holdings, &q.sheet, &prov))?;
    }
    let (banks, assets) = io::strengths_csv(&quarters[0].holdings, &quarters[0].sheet, &prov);
    io::write_text(&a.out_dir.join("banks.csv"), &banks)?;
    io::write_text(&a.out_dir.join("assets.csv"), &assets)?;
    let doc = json!({
        "schema_version": 1,
        "provenance": prov,
        "config": sc,
        "seed": a.seed,
        "quarters": a.quarters,
        "zero_fraction": quarters[0].zero_fraction(),
    });
    io::write_text(&a.out_dir.join("scenario.json"), &(serde_json::to_string_pretty(&doc)? + "\n"))
}

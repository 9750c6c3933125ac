//! File formats: CSV inputs and artifacts, JSON reports, and the
//! provenance header every artifact carries.
//!
//! CSV artifacts start with `# key=value` lines (tool, config hash, seed and
//! artifact-specific fields). Readers skip `#` lines. Reals are written as
//! integers when integral, otherwise with 17 significant digits.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::ensembles::EnsembleParams;
use crate::error::{Error, Result};
use crate::evaluation::{EstimatorOutcome, REPORT_SCHEMA_VERSION};
use crate::model::{BankSheet, DegreeSequences, HoldingsMatrix, MarketParams, StrengthSequences};
use crate::monitoring::MonitorResult;
use crate::riskmetrics::RiskReport;
use crate::sampling::{Metric, QuantileBand, SampleBatch};

pub const TOOL: &str = concat!("firesale ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub config_hash: String,
    pub seed: Option<u64>,
}

impl Provenance {
    /// `config` should hold every parameter that affects the artifact and
    /// the content hashes of the inputs, but no output paths.
    pub fn new(config: &Value, seed: Option<u64>) -> Self {
        Provenance { tool: TOOL.to_string(), config_hash: sha256_hex(config.to_string().as_bytes()), seed }
    }

    fn header(&self, extra: &[(&str, String)]) -> String {
        let mut out = format!("# tool={}\n# config_hash={}\n", self.tool, self.config_hash);
        if let Some(seed) = self.seed {
            let _ = writeln!(out, "# seed={seed}");
        }
        for (k, v) in extra {
            let _ = writeln!(out, "# {k}={v}");
        }
        out
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn format_real(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 9.007_199_254_740_992e15 {
        format!("{v:.0}")
    } else {
        format!("{v:.16e}")
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// `key=value` pairs from the leading `#` lines.
pub fn header_fields(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| l.trim_start_matches('#').trim().split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

struct Table {
    headers: Vec<String>,
    header_line: u64,
    rows: Vec<(u64, Vec<String>)>,
}

fn read_table(text: &str) -> Result<Table> {
    let mut rdr =
        csv::ReaderBuilder::new().comment(Some(b'#')).flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let header_line = rdr.position().line();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                line,
                column: rec.len().min(headers.len()) + 1,
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(Table { headers, header_line, rows })
}

impl Table {
    fn expect_prefix(&self, want: &[&str]) -> Result<()> {
        for (i, w) in want.iter().enumerate() {
            if self.headers.get(i).map(String::as_str) != Some(*w) {
                return Err(Error::Parse {
                    line: self.header_line,
                    column: i + 1,
                    message: format!("expected column '{w}'"),
                });
            }
        }
        Ok(())
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn real(&self, row: usize, col: usize) -> Result<f64> {
        let (line, fields) = &self.rows[row];
        fields[col].parse::<f64>().map_err(|_| Error::Parse {
            line: *line,
            column: col + 1,
            message: format!("'{}' is not a number", fields[col]),
        })
    }

    fn count(&self, row: usize, col: usize) -> Result<usize> {
        let (line, fields) = &self.rows[row];
        fields[col].parse::<usize>().map_err(|_| Error::Parse {
            line: *line,
            column: col + 1,
            message: format!("'{}' is not a non-negative integer", fields[col]),
        })
    }

    fn text(&self, row: usize, col: usize) -> &str {
        &self.rows[row].1[col]
    }
}

fn duplicates<'a>(kind: &str, ids: impl Iterator<Item = &'a str>, errs: &mut Vec<String>) {
    let mut seen = HashSet::new();
    for id in ids {
        if id.is_empty() {
            errs.push(format!("empty {kind} id"));
        } else if !seen.insert(id) {
            errs.push(format!("duplicate {kind} id '{id}'"));
        }
    }
}

fn finish(errs: Vec<String>) -> Result<()> {
    if errs.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(errs))
    }
}

/// Parses `bank_id,equity,<asset ids...>`. Bank sizes are the row sums.
pub fn parse_holdings(text: &str) -> Result<(HoldingsMatrix, BankSheet)> {
    let t = read_table(text)?;
    t.expect_prefix(&["bank_id", "equity"])?;
    let asset_ids: Vec<String> = t.headers[2..].to_vec();
    let (n, k) = (t.rows.len(), asset_ids.len());
    let mut errs = Vec::new();
    if k == 0 {
        errs.push("no asset columns".into());
    }
    if n == 0 {
        errs.push("no banks".into());
    }
    duplicates("asset", asset_ids.iter().map(String::as_str), &mut errs);
    duplicates("bank", (0..n).map(|r| t.text(r, 0)), &mut errs);
    let mut x = Array2::zeros((n, k));
    let mut equities = Vec::with_capacity(n);
    for r in 0..n {
        let bank = t.text(r, 0);
        let e = t.real(r, 1)?;
        if !(e.is_finite() && e > 0.0) {
            errs.push(format!("bank '{bank}': equity {e} must be positive"));
        }
        equities.push(e);
        for c in 0..k {
            let v = t.real(r, c + 2)?;
            if !(v.is_finite() && v >= 0.0) {
                errs.push(format!(
                    "bank '{bank}', asset '{}': holding {v} must be finite and non-negative",
                    asset_ids[c]
                ));
            }
            x[(r, c)] = v;
        }
    }
    finish(errs)?;
    let bank_ids = (0..n).map(|r| t.text(r, 0).to_string()).collect();
    let holdings = HoldingsMatrix::new(x, bank_ids, asset_ids)?;
    let sheet = BankSheet::new(holdings.row_sums(), equities)?;
    Ok((holdings, sheet))
}

pub fn load_holdings(path: &Path) -> Result<(HoldingsMatrix, BankSheet)> {
    parse_holdings(&read_text(path)?)
}

pub fn holdings_csv(x: &HoldingsMatrix, sheet: &BankSheet, prov: &Provenance) -> String {
    let mut out = prov.header(&[]);
    out.push_str("bank_id,equity");
    for a in x.asset_ids() {
        out.push(',');
        out.push_str(a);
    }
    out.push('\n');
    for n in 0..x.n_banks() {
        out.push_str(&x.bank_ids()[n]);
        out.push(',');
        out.push_str(&format_real(sheet.equities()[n]));
        for v in x.row(n) {
            out.push(',');
            out.push_str(&format_real(*v));
        }
        out.push('\n');
    }
    out
}

/// Marginal-only input: strengths, balance sheet and, when both files carry
/// a `degree` column, degree sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct StrengthInput {
    pub strengths: StrengthSequences,
    pub sheet: BankSheet,
    pub degrees: Option<DegreeSequences>,
}

/// Parses `banks.csv` (`bank_id,size,equity[,degree]`) and `assets.csv`
/// (`asset_id,cap[,degree]`).
pub fn parse_strengths(banks: &str, assets: &str) -> Result<StrengthInput> {
    let b = read_table(banks)?;
    b.expect_prefix(&["bank_id", "size", "equity"])?;
    let a = read_table(assets)?;
    a.expect_prefix(&["asset_id", "cap"])?;
    let mut errs = Vec::new();
    duplicates("bank", (0..b.rows.len()).map(|r| b.text(r, 0)), &mut errs);
    duplicates("asset", (0..a.rows.len()).map(|r| a.text(r, 0)), &mut errs);
    let (mut sizes, mut equities, mut caps) = (Vec::new(), Vec::new(), Vec::new());
    for r in 0..b.rows.len() {
        let (s, e) = (b.real(r, 1)?, b.real(r, 2)?);
        if !(s.is_finite() && s >= 0.0) {
            errs.push(format!("bank '{}': size {s} must be finite and non-negative", b.text(r, 0)));
        }
        if !(e.is_finite() && e > 0.0) {
            errs.push(format!("bank '{}': equity {e} must be positive", b.text(r, 0)));
        }
        sizes.push(s);
        equities.push(e);
    }
    for r in 0..a.rows.len() {
        let c = a.real(r, 1)?;
        if !(c.is_finite() && c >= 0.0) {
            errs.push(format!("asset '{}': cap {c} must be finite and non-negative", a.text(r, 0)));
        }
        caps.push(c);
    }
    let degrees = match (b.column("degree"), a.column("degree")) {
        (Some(bc), Some(ac)) => Some((
            (0..b.rows.len()).map(|r| b.count(r, bc)).collect::<Result<Vec<_>>>()?,
            (0..a.rows.len()).map(|r| a.count(r, ac)).collect::<Result<Vec<_>>>()?,
        )),
        (None, None) => None,
        _ => {
            errs.push("degree column must appear in both banks and assets files".into());
            None
        }
    };
    finish(errs)?;
    let bank_ids = (0..b.rows.len()).map(|r| b.text(r, 0).to_string()).collect();
    let asset_ids = (0..a.rows.len()).map(|r| a.text(r, 0).to_string()).collect();
    let strengths = StrengthSequences::with_ids(sizes.clone(), caps, bank_ids, asset_ids)?;
    let sheet = BankSheet::new(sizes, equities)?;
    let degrees = degrees.map(|(bd, ad)| DegreeSequences::new(bd, ad)).transpose()?;
    Ok(StrengthInput { strengths, sheet, degrees })
}

pub fn load_strengths(banks: &Path, assets: &Path) -> Result<StrengthInput> {
    parse_strengths(&read_text(banks)?, &read_text(assets)?)
}

/// Strength files of an observed matrix, with degrees.
pub fn strengths_csv(x: &HoldingsMatrix, sheet: &BankSheet, prov: &Provenance) -> (String, String) {
    let d = crate::model::degrees(x, 0.0);
    let (rows, cols) = (x.row_sums(), x.col_sums());
    let mut banks = prov.header(&[]);
    banks.push_str("bank_id,size,equity,degree\n");
    for n in 0..x.n_banks() {
        let _ = writeln!(
            banks,
            "{},{},{},{}",
            x.bank_ids()[n],
            format_real(rows[n]),
            format_real(sheet.equities()[n]),
            d.bank_degrees()[n]
        );
    }
    let mut assets = prov.header(&[]);
    assets.push_str("asset_id,cap,degree\n");
    for k in 0..x.n_assets() {
        let _ = writeln!(assets, "{},{},{}", x.asset_ids()[k], format_real(cols[k]), d.asset_degrees()[k]);
    }
    (banks, assets)
}

/// Standard parameters (cash illiquidity zero) with per-asset overrides
/// from `asset_id,illiquidity,shock` rows.
pub fn parse_market(
    text: Option<&str>,
    asset_ids: &[String],
    cash_id: &str,
    illiquidity: f64,
    shock: f64,
) -> Result<MarketParams> {
    let base = MarketParams::standard(asset_ids, cash_id, illiquidity, shock)?;
    let Some(text) = text else { return Ok(base) };
    let t = read_table(text)?;
    t.expect_prefix(&["asset_id", "illiquidity", "shock"])?;
    let (mut ell, mut eps) = (base.illiquidity().to_vec(), base.shock().to_vec());
    let mut errs = Vec::new();
    for r in 0..t.rows.len() {
        let id = t.text(r, 0);
        match asset_ids.iter().position(|a| a == id) {
            Some(k) => {
                ell[k] = t.real(r, 1)?;
                eps[k] = t.real(r, 2)?;
            }
            None => errs.push(format!("market row for unknown asset '{id}'")),
        }
    }
    finish(errs)?;
    MarketParams::new(ell, eps)
}

pub fn risk_report_csv(r: &RiskReport, prov: &Provenance) -> String {
    let mut out = prov.header(&[("aggregate_vulnerability", format_real(r.aggregate_vulnerability))]);
    out.push_str("bank_id,portfolio_return,gamma,systemicness,indirect_vulnerability\n");
    for n in 0..r.bank_ids.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.bank_ids[n],
            format_real(r.portfolio_returns[n]),
            format_real(r.gamma[n]),
            format_real(r.systemicness[n]),
            format_real(r.indirect_vulnerability[n])
        );
    }
    out
}

fn json_doc(prov: &Provenance, body: Value) -> String {
    let mut doc = json!({ "schema_version": REPORT_SCHEMA_VERSION, "provenance": prov });
    if let (Some(d), Value::Object(b)) = (doc.as_object_mut(), body) {
        d.extend(b);
    }
    serde_json::to_string_pretty(&doc).expect("serializable") + "\n"
}

pub fn risk_report_json(r: &RiskReport, dropped: &[String], prov: &Provenance) -> String {
    let mut body = serde_json::to_value(r).expect("serializable");
    body["dropped_banks"] = json!(dropped);
    json_doc(prov, body)
}

/// Ensemble JSON with a `provenance` block (ignored when reading).
pub fn params_json(p: &EnsembleParams, prov: &Provenance) -> String {
    let mut v: Value = serde_json::from_str(&p.to_json()).expect("valid json");
    v["provenance"] = serde_json::to_value(prov).expect("serializable");
    serde_json::to_string_pretty(&v).expect("serializable") + "\n"
}

/// Long format `sample,metric,bank_id,value`; AV rows use bank id `AV`.
pub fn sample_batch_csv(b: &SampleBatch, prov: &Provenance) -> String {
    let mut out = prov.header(&[
        ("ensemble_hash", b.ensemble_hash.clone()),
        ("sample_seed", b.seed.to_string()),
        ("n_samples", b.n_samples().to_string()),
    ]);
    out.push_str("sample,metric,bank_id,value\n");
    for i in 0..b.n_samples() {
        for (metric, arr) in
            [(Metric::Systemicness, &b.systemicness), (Metric::IndirectVulnerability, &b.indirect_vulnerability)]
        {
            for (n, id) in b.bank_ids.iter().enumerate() {
                let _ = writeln!(out, "{i},{},{id},{}", metric.label(), format_real(arr[(i, n)]));
            }
        }
        let _ = writeln!(out, "{i},AV,AV,{}", format_real(b.aggregate_vulnerability[i]));
    }
    out
}

pub fn parse_sample_batch(text: &str) -> Result<SampleBatch> {
    let fields = header_fields(text);
    let ensemble_hash = fields.get("ensemble_hash").cloned().unwrap_or_default();
    let seed = fields.get("sample_seed").and_then(|s| s.parse().ok()).unwrap_or(0);
    let t = read_table(text)?;
    t.expect_prefix(&["sample", "metric", "bank_id", "value"])?;
    let mut bank_ids: Vec<String> = Vec::new();
    let mut s_vals = Vec::new();
    let mut iv_vals = Vec::new();
    let mut av = Vec::new();
    for r in 0..t.rows.len() {
        let sample = t.count(r, 0)?;
        let value = t.real(r, 3)?;
        let bank = t.text(r, 2);
        match Metric::parse(t.text(r, 1)) {
            Ok(Metric::Systemicness) => {
                if sample == 0 {
                    bank_ids.push(bank.to_string());
                }
                s_vals.push(value);
            }
            Ok(Metric::IndirectVulnerability) => iv_vals.push(value),
            Ok(Metric::AggregateVulnerability) => {
                if sample != av.len() {
                    return Err(Error::Parse { line: t.rows[r].0, column: 1, message: "samples out of order".into() });
                }
                av.push(value);
            }
            Err(_) => {
                return Err(Error::Parse {
                    line: t.rows[r].0,
                    column: 2,
                    message: format!("unknown metric '{}'", t.text(r, 1)),
                })
            }
        }
    }
    let (m, n) = (av.len(), bank_ids.len());
    if s_vals.len() != m * n || iv_vals.len() != m * n {
        return Err(Error::Validation(vec![format!("expected {m} x {n} values per metric")]));
    }
    let shape = |v: Vec<f64>| Array2::from_shape_vec((m, n), v).expect("checked length");
    Ok(SampleBatch {
        ensemble_hash,
        seed,
        bank_ids,
        systemicness: shape(s_vals),
        indirect_vulnerability: shape(iv_vals),
        aggregate_vulnerability: av,
    })
}

pub fn band_csv(b: &QuantileBand, prov: &Provenance) -> String {
    let mut out = prov.header(&[("metric", b.metric.label().to_string()), ("n_samples", b.n_samples.to_string())]);
    out.push_str("bank_id,lower_prob,upper_prob,lower,mean,upper\n");
    for i in 0..b.ids.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            b.ids[i],
            format_real(b.lower_prob),
            format_real(b.upper_prob),
            format_real(b.lower[i]),
            format_real(b.point_estimate[i]),
            format_real(b.upper[i])
        );
    }
    out
}

pub fn parse_band(text: &str) -> Result<QuantileBand> {
    let fields = header_fields(text);
    let metric = Metric::parse(fields.get("metric").map_or("S", String::as_str))?;
    let n_samples = fields.get("n_samples").and_then(|s| s.parse().ok()).unwrap_or(0);
    let t = read_table(text)?;
    t.expect_prefix(&["bank_id", "lower_prob", "upper_prob", "lower", "mean", "upper"])?;
    if t.rows.is_empty() {
        return Err(Error::Validation(vec!["band file has no rows".into()]));
    }
    let mut band = QuantileBand {
        metric,
        lower_prob: t.real(0, 1)?,
        upper_prob: t.real(0, 2)?,
        ids: Vec::new(),
        lower: Vec::new(),
        point_estimate: Vec::new(),
        upper: Vec::new(),
        n_samples,
    };
    for r in 0..t.rows.len() {
        band.ids.push(t.text(r, 0).to_string());
        band.lower.push(t.real(r, 3)?);
        band.point_estimate.push(t.real(r, 4)?);
        band.upper.push(t.real(r, 5)?);
    }
    Ok(band)
}

pub fn monitor_csv(results: &[MonitorResult], prov: &Provenance) -> String {
    let reference = results.first().map_or(String::new(), |r| r.reference_quarter.clone());
    let mut out = prov.header(&[("reference_quarter", reference)]);
    out.push_str("bank_id,quarter,observed,ref_upper,band_lower,band_upper,flag\n");
    let opt = |v: Option<f64>| v.map(format_real).unwrap_or_default();
    for r in results {
        for q in &r.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.bank_id,
                q.quarter,
                format_real(q.observed),
                format_real(q.ref_upper),
                opt(q.band_lower),
                opt(q.band_upper),
                q.flag
            );
        }
    }
    out
}

pub fn evaluation_csv(outcomes: &[EstimatorOutcome], prov: &Provenance) -> String {
    let mut out = prov.header(&[]);
    for o in outcomes {
        if let Some(f) = &o.failure {
            let _ = writeln!(out, "# failed={} code={} message={}", o.estimator, f.code, f.message.replace('\n', " "));
        }
    }
    out.push_str("metric,estimator,quartile,median,iqr,count\n");
    for o in outcomes {
        for r in &o.reports {
            for (q, s) in r.quartiles.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},q{},{},{},{}",
                    r.metric.label(),
                    r.estimator,
                    q + 1,
                    format_real(s.median),
                    format_real(s.iqr),
                    s.count
                );
            }
        }
    }
    out
}

pub fn evaluation_json(outcomes: &[EstimatorOutcome], prov: &Provenance) -> String {
    json_doc(prov, json!({ "outcomes": outcomes }))
}

//! Synthetic holdings scenarios with heterogeneous bank sizes, leverage
//! around 10 and a target fraction of zero entries.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BankSheet, HoldingsMatrix, DEFAULT_CASH_ID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_banks: usize,
    /// Asset count including the cash column.
    pub n_assets: usize,
    pub size_log_mean: f64,
    pub size_log_sd: f64,
    pub leverage_mean: f64,
    pub leverage_sd: f64,
    /// Target fraction of zero entries.
    pub sparsity: f64,
    pub include_cash: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_banks: 50,
            n_assets: 20,
            size_log_mean: 1e5f64.ln(),
            size_log_sd: 1.5,
            leverage_mean: 10.0,
            leverage_sd: 2.0,
            sparsity: 0.5,
            include_cash: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScenario {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub holdings: HoldingsMatrix,
    pub sheet: BankSheet,
}

impl SyntheticScenario {
    /// Wraps an arbitrary matrix, keeping the given leverages.
    pub fn from_matrix(config: ScenarioConfig, seed: u64, holdings: HoldingsMatrix, leverages: &[f64]) -> Result<Self> {
        let sheet = BankSheet::from_leverages(holdings.row_sums(), leverages)?;
        Ok(SyntheticScenario { config, seed, holdings, sheet })
    }

    pub fn zero_fraction(&self) -> f64 {
        let x = self.holdings.entries();
        x.iter().filter(|v| **v == 0.0).count() as f64 / x.len() as f64
    }
}

fn ids(cfg: &ScenarioConfig) -> (Vec<String>, Vec<String>) {
    let bank_width = cfg.n_banks.to_string().len().max(4);
    let banks = (1..=cfg.n_banks).map(|i| format!("bank_{i:0bank_width$}")).collect();
    let n_risky = cfg.n_assets - usize::from(cfg.include_cash);
    let asset_width = n_risky.to_string().len().max(2);
    let mut assets: Vec<String> = Vec::with_capacity(cfg.n_assets);
    if cfg.include_cash {
        assets.push(DEFAULT_CASH_ID.to_string());
    }
    assets.extend((1..=n_risky).map(|i| format!("asset_{i:0asset_width$}")));
    (banks, assets)
}

fn check(cfg: &ScenarioConfig) -> Result<()> {
    if cfg.n_banks < 4 || cfg.n_assets < 2 {
        return Err(Error::Config(format!("need N >= 4 and K >= 2, got {}x{}", cfg.n_banks, cfg.n_assets)));
    }
    if !(0.0..1.0).contains(&cfg.sparsity) {
        return Err(Error::Config(format!("sparsity {} outside [0, 1)", cfg.sparsity)));
    }
    if !(cfg.size_log_sd >= 0.0 && cfg.leverage_sd >= 0.0 && cfg.leverage_mean > 0.0) {
        return Err(Error::Config("distribution parameters out of range".into()));
    }
    Ok(())
}

/// Support with every row and column nonempty and exactly
/// `round((1 - sparsity) N K)` entries.
fn support(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<Array2<bool>> {
    let (n, k) = (cfg.n_banks, cfg.n_assets);
    let target = ((1.0 - cfg.sparsity) * (n * k) as f64).round() as usize;
    let cover = n.max(k);
    if target < cover {
        return Err(Error::InfeasibleSparsity(format!(
            "{target} nonzero entries cannot cover {n} banks and {k} assets"
        )));
    }
    let mut mask = Array2::from_elem((n, k), false);
    for i in 0..cover {
        mask[(i % n, i % k)] = true;
    }
    let mut rest: Vec<(usize, usize)> = mask.indexed_iter().filter(|(_, v)| !**v).map(|(ix, _)| ix).collect();
    rest.shuffle(rng);
    for &ix in &rest[..target - cover] {
        mask[ix] = true;
    }
    Ok(mask)
}

/// One unit per support entry, the rest split by `weights` with
/// largest-remainder rounding so the row sums to `size` exactly.
fn fill_row(size: u64, weights: &[f64]) -> Vec<f64> {
    let units = weights.len() as u64;
    let extra = size - units;
    let total: f64 = weights.iter().sum();
    let shares: Vec<f64> = weights.iter().map(|w| extra as f64 * w / total).collect();
    let mut out: Vec<u64> = shares.iter().map(|s| s.floor() as u64).collect();
    let mut left = extra - out.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| (shares[b] - shares[b].floor()).total_cmp(&(shares[a] - shares[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out.iter().map(|v| (v + 1) as f64).collect()
}

fn fill(mask: &Array2<bool>, sizes: &[u64], rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut x = Array2::zeros(mask.dim());
    for (n, &size) in sizes.iter().enumerate() {
        let cols: Vec<usize> = (0..mask.ncols()).filter(|&k| mask[(n, k)]).collect();
        let w: Vec<f64> = cols.iter().map(|_| Exp1.sample(rng)).collect();
        for (k, v) in cols.iter().zip(fill_row(size, &w)) {
            x[(n, *k)] = v;
        }
    }
    x
}

fn draw_sizes(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<Vec<u64>> {
    let dist = LogNormal::new(cfg.size_log_mean, cfg.size_log_sd).map_err(|e| Error::Config(e.to_string()))?;
    Ok((0..cfg.n_banks).map(|_| (dist.sample(rng).round() as u64).max(cfg.n_assets as u64)).collect())
}

fn draw_leverages(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let dist = Normal::new(cfg.leverage_mean, cfg.leverage_sd).map_err(|e| Error::Config(e.to_string()))?;
    Ok((0..cfg.n_banks)
        .map(|_| loop {
            let b: f64 = dist.sample(rng);
            if b > 0.0 {
                break b;
            }
        })
        .collect())
}

/// Integer holdings matrix plus balance sheet, deterministic in `seed`.
/// Bank sizes are log-normal (at least `K`), leverages normal truncated to
/// positive values.
pub fn generate_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<SyntheticScenario> {
    Ok(generate_quarters(cfg, seed, 1)?.remove(0))
}

/// A panel of quarters sharing banks, support and leverages. Quarter 0 is
/// [`generate_scenario`]; each later quarter applies a log-normal size
/// shock (sd 0.1) and refills the support.
pub fn generate_quarters(cfg: &ScenarioConfig, seed: u64, n_quarters: usize) -> Result<Vec<SyntheticScenario>> {
    check(cfg)?;
    let (bank_ids, asset_ids) = ids(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = draw_sizes(cfg, &mut rng)?;
    let leverages = draw_leverages(cfg, &mut rng)?;
    let mask = support(cfg, &mut rng)?;
    let drift = Normal::new(0.0, 0.1).expect("valid");
    let mut out = Vec::with_capacity(n_quarters);
    for q in 0..n_quarters {
        let mut qrng = ChaCha8Rng::seed_from_u64(seed);
        qrng.set_stream(q as u64 + 1);
        if q > 0 {
            for s in sizes.iter_mut() {
                let g: f64 = drift.sample(&mut qrng);
                *s = ((*s as f64 * g.exp()).round() as u64).max(cfg.n_assets as u64);
            }
        }
        let x = fill(&mask, &sizes, &mut qrng);
        let holdings = HoldingsMatrix::new(x, bank_ids.clone(), asset_ids.clone())?;
        out.push(SyntheticScenario::from_matrix(cfg.clone(), seed, holdings, &leverages)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::degrees;

    #[test]
    fn dense_limit() {
        let cfg = ScenarioConfig { n_banks: 6, n_assets: 4, sparsity: 0.0, ..Default::default() };
        let s = generate_scenario(&cfg, 3).unwrap();
        let d = degrees(&s.holdings, 0.0);
        assert_eq!(d.bank_degrees(), &[4; 6]);
        assert_eq!(d.asset_degrees(), &[6; 4]);
    }

    #[test]
    fn sparsity_and_marginals() {
        let s = generate_scenario(&ScenarioConfig::default(), 11).unwrap();
        let z = s.zero_fraction();
        assert!((0.45..=0.55).contains(&z), "{z}");
        for (a, r) in s.sheet.sizes().iter().zip(s.holdings.row_sums()) {
            assert_eq!(*a, r);
        }
        assert!(s.holdings.entries().iter().all(|v| v.fract() == 0.0));
        assert!(s.holdings.col_sums().iter().all(|c| *c > 0.0));
        assert_eq!(s.holdings.asset_ids()[0], "cash");
        assert_eq!(s.holdings.bank_ids()[0], "bank_0001");
    }

    #[test]
    fn deterministic() {
        let cfg = ScenarioConfig::default();
        assert_eq!(generate_scenario(&cfg, 5).unwrap(), generate_scenario(&cfg, 5).unwrap());
        assert_ne!(generate_scenario(&cfg, 5).unwrap(), generate_scenario(&cfg, 6).unwrap());
    }

    #[test]
    fn infeasible_sparsity() {
        let cfg = ScenarioConfig { n_banks: 10, n_assets: 4, sparsity: 0.9, ..Default::default() };
        assert!(matches!(generate_scenario(&cfg, 1), Err(Error::InfeasibleSparsity(_))));
    }

    #[test]
    fn largest_remainder() {
        assert_eq!(fill_row(10, &[1.0, 1.0, 1.0]), vec![4.0, 3.0, 3.0]);
        assert_eq!(fill_row(3, &[5.0, 1.0, 1.0]), vec![1.0; 3]);
    }

    #[test]
    fn quarters_share_support() {
        let q = generate_quarters(&ScenarioConfig::default(), 2, 3).unwrap();
        assert_eq!(q[0], generate_scenario(&ScenarioConfig::default(), 2).unwrap());
        let zeros = |s: &SyntheticScenario| s.holdings.entries().mapv(|v| v == 0.0);
        assert_eq!(zeros(&q[0]), zeros(&q[2]));
        assert_ne!(q[1].holdings, q[2].holdings);
    }
}

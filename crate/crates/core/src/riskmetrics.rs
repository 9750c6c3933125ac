//! Fire-sale spillover metrics on a holdings matrix: portfolio returns,
//! the liquidity-weighted exposure `Gamma_n`, systemicness `S_n`, aggregate
//! vulnerability `AV` and indirect vulnerability `IV_n`.
//!
//! Every inner product is a pairwise sum in asset order and every sum over
//! banks is a pairwise sum in bank order, so results are reproducible
//! independent of thread count.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{weights, BankSheet, HoldingsMatrix, MarketParams};
use crate::numeric::{pairwise_sum, pairwise_sum_by};

/// Relative tolerance between a sheet's sizes and the holdings row sums.
pub const SHEET_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub bank_ids: Vec<String>,
    pub portfolio_returns: Vec<f64>,
    pub gamma: Vec<f64>,
    pub systemicness: Vec<f64>,
    pub indirect_vulnerability: Vec<f64>,
    pub aggregate_vulnerability: f64,
    /// Equity `E` the systemicness is normalized by (retained banks only).
    pub total_equity: f64,
}

/// Inputs of the metric formulas once weights are fixed.
struct Terms<'a> {
    w: &'a Array2<f64>,
    sizes: &'a [f64],
    leverages: &'a [f64],
    total_equity: f64,
    col_totals: Vec<f64>,
    returns: Vec<f64>,
    illiquidity: &'a [f64],
}

impl Terms<'_> {
    fn gamma(&self) -> Vec<f64> {
        let k = self.w.ncols();
        let mut buf = Vec::with_capacity(k);
        self.w
            .rows()
            .into_iter()
            .map(|row| pairwise_sum_by(k, &mut buf, |j| self.col_totals[j] * self.illiquidity[j] * row[j]))
            .collect()
    }

    fn systemicness(&self, gamma: &[f64]) -> Vec<f64> {
        (0..self.sizes.len())
            .map(|n| gamma[n] * (self.sizes[n] / self.total_equity) * self.leverages[n] * self.returns[n])
            .collect()
    }

    fn indirect_vulnerability(&self) -> Vec<f64> {
        let (n_banks, k) = self.w.dim();
        let mut buf = Vec::with_capacity(n_banks.max(k));
        let pressure: Vec<f64> = (0..n_banks).map(|m| self.sizes[m] * self.leverages[m] * self.returns[m]).collect();
        // q_k = sum_m W_{m,k} A_m B_m r_m: dollar sales of asset k.
        let q: Vec<f64> =
            (0..k).map(|j| pairwise_sum_by(n_banks, &mut buf, |m| self.w[[m, j]] * pressure[m])).collect();
        (0..n_banks)
            .map(|n| {
                let inner = pairwise_sum_by(k, &mut buf, |j| self.illiquidity[j] * self.w[[n, j]] * q[j]);
                (1.0 + self.leverages[n]) * inner
            })
            .collect()
    }

    fn report(&self, bank_ids: &[String]) -> RiskReport {
        let gamma = self.gamma();
        let systemicness = self.systemicness(&gamma);
        let indirect_vulnerability = self.indirect_vulnerability();
        RiskReport {
            bank_ids: bank_ids.to_vec(),
            portfolio_returns: self.returns.clone(),
            aggregate_vulnerability: aggregate_vulnerability(&systemicness),
            gamma,
            systemicness,
            indirect_vulnerability,
            total_equity: self.total_equity,
        }
    }
}

fn returns_from_weights(w: &Array2<f64>, shock: &[f64]) -> Vec<f64> {
    let k = w.ncols();
    let mut buf = Vec::with_capacity(k);
    w.rows().into_iter().map(|row| pairwise_sum_by(k, &mut buf, |j| row[j] * shock[j])).collect()
}

fn check_sheet(x: &HoldingsMatrix, sheet: &BankSheet) -> Result<Vec<f64>> {
    if sheet.len() != x.n_banks() {
        return Err(Error::InvalidSheet(format!("sheet has {} banks, holdings have {}", sheet.len(), x.n_banks())));
    }
    let sums = x.row_sums();
    for (n, (&a, &s)) in sheet.sizes().iter().zip(&sums).enumerate() {
        if (a - s).abs() > SHEET_TOL * a.abs().max(s.abs()) {
            return Err(Error::InconsistentSheet { bank: x.bank_ids()[n].clone(), sheet_size: a, row_sum: s });
        }
    }
    Ok(sums)
}

fn terms<'a>(x: &HoldingsMatrix, w: &'a Array2<f64>, sheet: &'a BankSheet, mkt: &'a MarketParams) -> Terms<'a> {
    Terms {
        w,
        sizes: sheet.sizes(),
        leverages: sheet.leverages(),
        total_equity: sheet.total_equity(),
        col_totals: x.col_sums(),
        returns: returns_from_weights(w, mkt.shock()),
        illiquidity: mkt.illiquidity(),
    }
}

/// `r_n = sum_k W_{n,k} eps_k`.
pub fn portfolio_returns(x: &HoldingsMatrix, mkt: &MarketParams) -> Result<Vec<f64>> {
    mkt.check_assets(x.n_assets())?;
    Ok(returns_from_weights(&weights(x)?, mkt.shock()))
}

/// `Gamma_n = sum_k C_k l_k W_{n,k}`.
pub fn gamma(x: &HoldingsMatrix, mkt: &MarketParams) -> Result<Vec<f64>> {
    mkt.check_assets(x.n_assets())?;
    let w = weights(x)?;
    let cols = x.col_sums();
    let k = x.n_assets();
    let mut buf = Vec::with_capacity(k);
    Ok(w.rows()
        .into_iter()
        .map(|row| pairwise_sum_by(k, &mut buf, |j| cols[j] * mkt.illiquidity()[j] * row[j]))
        .collect())
}

/// `S_n = Gamma_n (A_n / E) B_n r_n`.
pub fn systemicness(x: &HoldingsMatrix, sheet: &BankSheet, mkt: &MarketParams) -> Result<Vec<f64>> {
    mkt.check_assets(x.n_assets())?;
    check_sheet(x, sheet)?;
    let w = weights(x)?;
    let t = terms(x, &w, sheet, mkt);
    Ok(t.systemicness(&t.gamma()))
}

/// `AV = sum_n S_n`, pairwise in bank order.
pub fn aggregate_vulnerability(s: &[f64]) -> f64 {
    pairwise_sum(s)
}

/// `IV_n = (1 + B_n) sum_k l_k W_{n,k} sum_m W_{m,k} A_m B_m r_m`.
pub fn indirect_vulnerability(x: &HoldingsMatrix, sheet: &BankSheet, mkt: &MarketParams) -> Result<Vec<f64>> {
    mkt.check_assets(x.n_assets())?;
    check_sheet(x, sheet)?;
    let w = weights(x)?;
    Ok(terms(x, &w, sheet, mkt).indirect_vulnerability())
}

/// All metrics of an observed matrix whose sheet sizes equal its row sums.
pub fn risk_report(x: &HoldingsMatrix, sheet: &BankSheet, mkt: &MarketParams) -> Result<RiskReport> {
    mkt.check_assets(x.n_assets())?;
    check_sheet(x, sheet)?;
    let w = weights(x)?;
    Ok(terms(x, &w, sheet, mkt).report(x.bank_ids()))
}

/// Metrics of a matrix whose rows need not add up to the sheet sizes, as
/// for ensemble draws evaluated against a fixed balance sheet.
///
/// Weights are `X_{n,k} / A_n` with `A_n` from the sheet, so that
/// `sum_m A_m W_{m,k}` is the column sum of `x`. The return of bank `n` is
/// the holdings-weighted shock `sum_k eps_k X_{n,k} / sum_k X_{n,k}`. A bank
/// with an empty row gets zero metrics. When the rows do match the sheet
/// this coincides with [`risk_report`].
pub fn risk_report_fixed_sheet(x: &HoldingsMatrix, sheet: &BankSheet, mkt: &MarketParams) -> Result<RiskReport> {
    mkt.check_assets(x.n_assets())?;
    if sheet.len() != x.n_banks() {
        return Err(Error::InvalidSheet(format!("sheet has {} banks, holdings have {}", sheet.len(), x.n_banks())));
    }
    let sums = x.row_sums();
    let mut w = x.entries().clone();
    let mut returns = vec![0.0; x.n_banks()];
    let k = x.n_assets();
    let mut buf = Vec::with_capacity(k);
    for (n, mut row) in w.rows_mut().into_iter().enumerate() {
        let a = sheet.sizes()[n];
        if sums[n] > 0.0 && a > 0.0 {
            let held = pairwise_sum_by(k, &mut buf, |j| mkt.shock()[j] * row[j]);
            returns[n] = held / sums[n];
            row.mapv_inplace(|v| v / a);
        } else {
            row.fill(0.0);
        }
    }
    let t = Terms {
        w: &w,
        sizes: sheet.sizes(),
        leverages: sheet.leverages(),
        total_equity: sheet.total_equity(),
        col_totals: x.col_sums(),
        returns,
        illiquidity: mkt.illiquidity(),
    };
    Ok(t.report(x.bank_ids()))
}

/// Removes banks whose holdings row is empty, returning the retained
/// matrix and sheet plus the ids of the dropped banks.
pub fn drop_empty_banks(x: &HoldingsMatrix, sheet: &BankSheet) -> Result<(HoldingsMatrix, BankSheet, Vec<String>)> {
    let sums = x.row_sums();
    let keep: Vec<usize> = (0..x.n_banks()).filter(|&n| sums[n] > 0.0).collect();
    let dropped: Vec<String> = (0..x.n_banks()).filter(|&n| sums[n] <= 0.0).map(|n| x.bank_ids()[n].clone()).collect();
    if dropped.is_empty() {
        return Ok((x.clone(), sheet.clone(), dropped));
    }
    log::warn!("dropping {} bank(s) with zero holdings: {}", dropped.len(), dropped.join(", "));
    if keep.is_empty() {
        return Err(Error::ZeroRow { banks: dropped });
    }
    Ok((x.select_banks(&keep)?, sheet.select(&keep)?, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single() -> (HoldingsMatrix, BankSheet, MarketParams) {
        let x = HoldingsMatrix::from_rows(&[[100.0]]).unwrap();
        let sheet = BankSheet::new(vec![100.0], vec![10.0]).unwrap();
        let mkt = MarketParams::uniform(1, 1e-10, 0.01).unwrap();
        (x, sheet, mkt)
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
    }

    #[test]
    fn single_bank_chain() {
        let (x, sheet, mkt) = single();
        assert!(close(gamma(&x, &mkt).unwrap()[0], 1e-8));
        let r = risk_report(&x, &sheet, &mkt).unwrap();
        assert!(close(r.systemicness[0], 9e-9));
        assert!(close(r.indirect_vulnerability[0], 9e-9));
        assert!(close(r.aggregate_vulnerability, 9e-9));
    }

    #[test]
    fn returns_examples() {
        let x = HoldingsMatrix::from_rows(&[[1.0, 3.0]]).unwrap();
        let mkt = MarketParams::new(vec![0.0, 0.0], vec![0.02, 0.04]).unwrap();
        assert!(close(portfolio_returns(&x, &mkt).unwrap()[0], 0.035));
        let mkt = MarketParams::uniform(2, 1e-10, 0.0).unwrap();
        assert_eq!(portfolio_returns(&x, &mkt).unwrap(), vec![0.0]);
        let x = HoldingsMatrix::from_rows(&[[1.0, 3.0], [5.0, 0.5]]).unwrap();
        let mkt = MarketParams::uniform(2, 1e-10, 0.01).unwrap();
        for r in portfolio_returns(&x, &mkt).unwrap() {
            assert!(close(r, 0.01));
        }
    }

    #[test]
    fn zero_illiquidity_and_leverage() {
        let x = HoldingsMatrix::from_rows(&[[10.0, 5.0], [2.0, 8.0]]).unwrap();
        let mkt = MarketParams::uniform(2, 0.0, 0.01).unwrap();
        assert_eq!(gamma(&x, &mkt).unwrap(), vec![0.0, 0.0]);
        let sheet = BankSheet::new(vec![15.0, 10.0], vec![15.0, 10.0]).unwrap();
        let mkt = MarketParams::uniform(2, 1e-10, 0.01).unwrap();
        let r = risk_report(&x, &sheet, &mkt).unwrap();
        assert_eq!(r.systemicness, vec![0.0, 0.0]);
        assert_eq!(r.indirect_vulnerability, vec![0.0, 0.0]);
    }

    #[test]
    fn inconsistent_sheet_rejected() {
        let (x, _, mkt) = single();
        let sheet = BankSheet::new(vec![101.0], vec![10.0]).unwrap();
        assert!(matches!(systemicness(&x, &sheet, &mkt), Err(Error::InconsistentSheet { .. })));
    }

    #[test]
    fn fixed_sheet_matches_standard_on_consistent_rows() {
        let x = HoldingsMatrix::from_rows(&[[10.0, 5.0, 1.0], [2.0, 8.0, 0.0], [0.5, 0.5, 4.0]]).unwrap();
        let sheet = BankSheet::new(x.row_sums(), vec![1.6, 1.0, 0.5]).unwrap();
        let mkt = MarketParams::uniform(3, 1e-10, 0.01).unwrap();
        let a = risk_report(&x, &sheet, &mkt).unwrap();
        let b = risk_report_fixed_sheet(&x, &sheet, &mkt).unwrap();
        for n in 0..3 {
            assert!(close(a.systemicness[n], b.systemicness[n]));
            assert!(close(a.indirect_vulnerability[n], b.indirect_vulnerability[n]));
        }
    }

    #[test]
    fn fixed_sheet_zero_row_contributes_nothing() {
        let x = HoldingsMatrix::from_rows(&[[3.0, 1.0], [0.0, 0.0]]).unwrap();
        let sheet = BankSheet::new(vec![4.0, 2.0], vec![1.0, 1.0]).unwrap();
        let mkt = MarketParams::uniform(2, 1e-10, 0.01).unwrap();
        let r = risk_report_fixed_sheet(&x, &sheet, &mkt).unwrap();
        assert_eq!(r.systemicness[1], 0.0);
        assert_eq!(r.indirect_vulnerability[1], 0.0);
        assert!(r.systemicness[0] > 0.0);
    }

    #[test]
    fn empty_banks_are_dropped() {
        let x = HoldingsMatrix::from_rows(&[[3.0, 1.0], [0.0, 0.0]]).unwrap();
        let sheet = BankSheet::new(vec![4.0, 0.0], vec![1.0, 1.0]).unwrap();
        let (x2, s2, dropped) = drop_empty_banks(&x, &sheet).unwrap();
        assert_eq!(x2.n_banks(), 1);
        assert_eq!(s2.len(), 1);
        assert_eq!(dropped, vec!["bank_2".to_string()]);
    }
}

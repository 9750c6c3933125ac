//! Closed-form MECAPM expectations of systemicness and indirect
//! vulnerability.
//!
//! Sampled matrices are evaluated against the fixed balance sheet: weights
//! `X_{n,k} / A_n`, uniform shock `eps`, so `r_n = eps` for every non-empty
//! row. With independent geometric entries of mean `mu = A_n C_k / L` and
//! `E[X^2] = 2 mu^2 + mu`, the expectations below are exact.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{BankSheet, MarketParams, StrengthSequences};
use crate::numeric::pairwise_sum_by;
use crate::riskmetrics::SHEET_TOL;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectedSystemicness {
    /// `E[S_n]`.
    pub expected: Vec<f64>,
    /// `S_n` of the CAPM matrix.
    pub capm: Vec<f64>,
    /// `E[S_n] - S_n(CAPM)`.
    pub gap: Vec<f64>,
}

/// Common illiquidity of the illiquid assets and the uniform shock.
fn uniform_market(mkt: &MarketParams, n_assets: usize) -> Result<(f64, f64)> {
    if mkt.len() != n_assets {
        return Err(Error::InvalidMarket(format!(
            "market parameters cover {} assets, strengths have {n_assets}",
            mkt.len()
        )));
    }
    let eps = mkt.shock()[0];
    if mkt.shock().iter().any(|e| *e != eps) {
        return Err(Error::NonUniformShock);
    }
    let mut ell = 0.0;
    for &l in mkt.illiquidity() {
        if l > 0.0 {
            if ell > 0.0 && l != ell {
                return Err(Error::NonUniformLiquidity);
            }
            ell = l;
        }
    }
    Ok((ell, eps))
}

fn check_sheet(s: &StrengthSequences, sheet: &BankSheet) -> Result<()> {
    if sheet.len() != s.n_banks() {
        return Err(Error::InvalidSheet(format!("sheet has {} banks, strengths have {}", sheet.len(), s.n_banks())));
    }
    for (n, (&a, &b)) in sheet.sizes().iter().zip(s.bank_sizes()).enumerate() {
        if (a - b).abs() > SHEET_TOL * a.abs().max(b.abs()) {
            return Err(Error::InconsistentSheet { bank: s.bank_ids()[n].clone(), sheet_size: a, row_sum: b });
        }
    }
    Ok(())
}

/// `E[S_n] = eps l A_n B_n / (E L) sum_k C_k (mu_{n,k} + C_k + 1)` over
/// illiquid assets, together with the CAPM value (the `C_k^2` part) and the
/// gap (the `mu + 1` part).
pub fn mecapm_expected_systemicness(
    s: &StrengthSequences,
    sheet: &BankSheet,
    mkt: &MarketParams,
) -> Result<ExpectedSystemicness> {
    let (ell, eps) = uniform_market(mkt, s.n_assets())?;
    check_sheet(s, sheet)?;
    let (a, c, l) = (s.bank_sizes(), s.asset_caps(), s.total());
    let illiquid: Vec<usize> = (0..c.len()).filter(|&k| mkt.illiquidity()[k] > 0.0).collect();
    let equity = sheet.total_equity();
    let mut buf = Vec::with_capacity(illiquid.len());
    let squares = pairwise_sum_by(illiquid.len(), &mut buf, |i| c[illiquid[i]] * c[illiquid[i]]);
    let mut out = ExpectedSystemicness { expected: Vec::new(), capm: Vec::new(), gap: Vec::new() };
    for n in 0..a.len() {
        let pre = eps * ell * a[n] * sheet.leverages()[n] / (equity * l);
        let extra = pairwise_sum_by(illiquid.len(), &mut buf, |i| {
            let ck = c[illiquid[i]];
            ck * (a[n] * ck / l + 1.0)
        });
        let capm = pre * squares;
        let gap = pre * extra;
        out.capm.push(capm);
        out.gap.push(gap);
        out.expected.push(capm + gap);
    }
    Ok(out)
}

/// `E[IV_n] = eps l (1 + B_n) / A_n sum_k [(mu^2 + mu) B_n + mu (C_k / L) sum_m A_m B_m]`
/// over illiquid assets, without approximating the leverages.
pub fn mecapm_expected_indirect_vulnerability(
    s: &StrengthSequences,
    sheet: &BankSheet,
    mkt: &MarketParams,
) -> Result<Vec<f64>> {
    let (ell, eps) = uniform_market(mkt, s.n_assets())?;
    check_sheet(s, sheet)?;
    let (a, c, l) = (s.bank_sizes(), s.asset_caps(), s.total());
    let b = sheet.leverages();
    let illiquid: Vec<usize> = (0..c.len()).filter(|&k| mkt.illiquidity()[k] > 0.0).collect();
    let mut buf = Vec::with_capacity(a.len().max(c.len()));
    let pressure = pairwise_sum_by(a.len(), &mut buf, |m| a[m] * b[m]);
    Ok((0..a.len())
        .map(|n| {
            if a[n] <= 0.0 {
                return 0.0;
            }
            let inner = pairwise_sum_by(illiquid.len(), &mut buf, |i| {
                let ck = c[illiquid[i]];
                let mu = a[n] * ck / l;
                (mu * mu + mu) * b[n] + mu * (ck / l) * pressure
            });
            eps * ell * (1.0 + b[n]) / a[n] * inner
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single() -> (StrengthSequences, BankSheet, MarketParams) {
        (
            StrengthSequences::new(vec![100.0], vec![100.0]).unwrap(),
            BankSheet::new(vec![100.0], vec![10.0]).unwrap(),
            MarketParams::uniform(1, 1e-10, 0.01).unwrap(),
        )
    }

    #[test]
    fn single_bank_values() {
        let (s, sheet, mkt) = single();
        let e = mecapm_expected_systemicness(&s, &sheet, &mkt).unwrap();
        assert!((e.capm[0] - 9e-9).abs() < 1e-22);
        assert!((e.gap[0] - 9.09e-9).abs() < 1e-22);
        assert!((e.expected[0] - 1.809e-8).abs() < 1e-22);
        // B = 9, mu = 100: (1 + 9)/100 * [(100^2 + 100) 9 + 100 * 1 * 900]
        let iv = mecapm_expected_indirect_vulnerability(&s, &sheet, &mkt).unwrap();
        let want = 0.01 * 1e-10 * 10.0 / 100.0 * (10100.0 * 9.0 + 100.0 * 900.0);
        assert!((iv[0] - want).abs() < 1e-12 * want);
    }

    #[test]
    fn zero_illiquidity_and_unlevered() {
        let (s, sheet, _) = single();
        let mkt = MarketParams::uniform(1, 0.0, 0.01).unwrap();
        assert_eq!(mecapm_expected_systemicness(&s, &sheet, &mkt).unwrap().expected, vec![0.0]);
        let flat = BankSheet::new(vec![100.0], vec![100.0]).unwrap();
        let mkt = MarketParams::uniform(1, 1e-10, 0.01).unwrap();
        assert_eq!(mecapm_expected_indirect_vulnerability(&s, &flat, &mkt).unwrap(), vec![0.0]);
    }

    #[test]
    fn market_preconditions() {
        let s = StrengthSequences::new(vec![100.0], vec![50.0, 50.0]).unwrap();
        let sheet = BankSheet::new(vec![100.0], vec![10.0]).unwrap();
        let mkt = MarketParams::new(vec![1e-10, 1e-10], vec![0.01, 0.02]).unwrap();
        assert!(matches!(mecapm_expected_systemicness(&s, &sheet, &mkt), Err(Error::NonUniformShock)));
        let mkt = MarketParams::new(vec![1e-10, 2e-10], vec![0.01, 0.01]).unwrap();
        assert!(matches!(mecapm_expected_systemicness(&s, &sheet, &mkt), Err(Error::NonUniformLiquidity)));
        let mkt = MarketParams::new(vec![0.0, 2e-10], vec![0.01, 0.01]).unwrap();
        assert!(mecapm_expected_indirect_vulnerability(&s, &sheet, &mkt).is_ok());
    }
}

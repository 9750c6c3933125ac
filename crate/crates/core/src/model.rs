//! Shared domain types: the bank-by-asset holdings matrix, its marginals,
//! balance sheets and market parameters.
//!
//! Monetary quantities are in thousands of dollars throughout.

use std::collections::HashSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;

/// Relative tolerance of the balance condition `sum(A) == sum(C)`.
pub const BALANCE_TOL: f64 = 1e-9;

/// Default asset identifier treated as cash (zero illiquidity).
pub const DEFAULT_CASH_ID: &str = "cash";
/// Illiquidity of every non-cash asset class (return per dollar traded).
pub const DEFAULT_ILLIQUIDITY: f64 = 1e-10;
/// Uniform asset shock.
pub const DEFAULT_SHOCK: f64 = 0.01;

pub fn default_bank_ids(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("bank_{i}")).collect()
}

pub fn default_asset_ids(k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("asset_{i}")).collect()
}

fn check_ids(kind: &str, ids: &[String], expected: usize) -> Result<()> {
    if ids.len() != expected {
        return Err(Error::InvalidHoldings(format!("{kind} id list has length {}, expected {expected}", ids.len())));
    }
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::InvalidHoldings(format!("duplicate {kind} id '{id}'")));
        }
    }
    Ok(())
}

/// Dense `N x K` matrix of non-negative dollar holdings.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldingsMatrix {
    entries: Array2<f64>,
    bank_ids: Vec<String>,
    asset_ids: Vec<String>,
}

impl HoldingsMatrix {
    pub fn new(entries: Array2<f64>, bank_ids: Vec<String>, asset_ids: Vec<String>) -> Result<Self> {
        let (n, k) = entries.dim();
        if n == 0 || k == 0 {
            return Err(Error::InvalidHoldings(format!("matrix must be non-empty, got {n}x{k}")));
        }
        check_ids("bank", &bank_ids, n)?;
        check_ids("asset", &asset_ids, k)?;
        if let Some(((i, j), v)) = entries.indexed_iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidHoldings(format!(
                "entry ({}, {}) = {v} is not a finite non-negative number",
                bank_ids[i], asset_ids[j]
            )));
        }
        Ok(HoldingsMatrix { entries, bank_ids, asset_ids })
    }

    /// Builds a matrix from rows with generated identifiers.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if rows.iter().any(|r| r.as_ref().len() != k) {
            return Err(Error::InvalidHoldings("ragged rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        let entries = Array2::from_shape_vec((n, k), flat).map_err(|e| Error::InvalidHoldings(e.to_string()))?;
        Self::new(entries, default_bank_ids(n), default_asset_ids(k))
    }

    pub fn n_banks(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> Array2<f64> {
        self.entries
    }

    pub fn get(&self, bank: usize, asset: usize) -> f64 {
        self.entries[[bank, asset]]
    }

    pub fn bank_ids(&self) -> &[String] {
        &self.bank_ids
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn row(&self, bank: usize) -> &[f64] {
        self.entries.row(bank).to_slice().expect("standard layout")
    }

    /// Row sums `A_n`, each a pairwise sum over the row.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_banks()).map(|n| pairwise_sum(self.row(n))).collect()
    }

    /// Column sums `C_k`, each a pairwise sum over the column in bank order.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut buf = Vec::with_capacity(self.n_banks());
        (0..self.n_assets())
            .map(|k| {
                buf.clear();
                buf.extend(self.entries.column(k).iter().copied());
                pairwise_sum(&buf)
            })
            .collect()
    }

    pub fn bank_index(&self, id: &str) -> Option<usize> {
        self.bank_ids.iter().position(|b| b == id)
    }

    /// Keeps only the listed banks, in the given order.
    pub fn select_banks(&self, keep: &[usize]) -> Result<Self> {
        let k = self.n_assets();
        let mut flat = Vec::with_capacity(keep.len() * k);
        for &n in keep {
            flat.extend_from_slice(self.row(n));
        }
        let entries =
            Array2::from_shape_vec((keep.len(), k), flat).map_err(|e| Error::InvalidHoldings(e.to_string()))?;
        let ids = keep.iter().map(|&n| self.bank_ids[n].clone()).collect();
        Self::new(entries, ids, self.asset_ids.clone())
    }
}

/// Row and column sums of a holdings matrix (bank sizes and asset
/// capitalizations), together with the identifiers they belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthSequences {
    bank_sizes: Vec<f64>,
    asset_caps: Vec<f64>,
    total: f64,
    bank_ids: Vec<String>,
    asset_ids: Vec<String>,
}

impl StrengthSequences {
    pub fn new(bank_sizes: Vec<f64>, asset_caps: Vec<f64>) -> Result<Self> {
        let (n, k) = (bank_sizes.len(), asset_caps.len());
        Self::with_ids(bank_sizes, asset_caps, default_bank_ids(n), default_asset_ids(k))
    }

    pub fn with_ids(
        bank_sizes: Vec<f64>,
        asset_caps: Vec<f64>,
        bank_ids: Vec<String>,
        asset_ids: Vec<String>,
    ) -> Result<Self> {
        if bank_sizes.is_empty() || asset_caps.is_empty() {
            return Err(Error::InvalidStrength("need at least one bank and one asset".into()));
        }
        if bank_ids.len() != bank_sizes.len() || asset_ids.len() != asset_caps.len() {
            return Err(Error::InvalidStrength("identifier lists do not match strength lengths".into()));
        }
        for (kind, ids) in [("bank", &bank_ids), ("asset", &asset_ids)] {
            let mut seen = HashSet::new();
            if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
                return Err(Error::InvalidStrength(format!("duplicate {kind} id '{dup}'")));
            }
        }
        if let Some(v) = bank_sizes.iter().chain(&asset_caps).find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidStrength(format!("strength {v} is not finite and non-negative")));
        }
        let total_rows = pairwise_sum(&bank_sizes);
        let total_cols = pairwise_sum(&asset_caps);
        if !(total_rows > 0.0) {
            return Err(Error::InvalidStrength("total strength must be positive".into()));
        }
        if (total_rows - total_cols).abs() > BALANCE_TOL * total_rows.max(total_cols) {
            return Err(Error::InvalidStrength(format!(
                "unbalanced strengths: sum of bank sizes {total_rows} != sum of asset caps {total_cols}"
            )));
        }
        Ok(StrengthSequences { bank_sizes, asset_caps, total: total_rows, bank_ids, asset_ids })
    }

    pub fn bank_sizes(&self) -> &[f64] {
        &self.bank_sizes
    }

    pub fn asset_caps(&self) -> &[f64] {
        &self.asset_caps
    }

    /// `L`, the sum of bank sizes.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn n_banks(&self) -> usize {
        self.bank_sizes.len()
    }

    pub fn n_assets(&self) -> usize {
        self.asset_caps.len()
    }

    pub fn bank_ids(&self) -> &[String] {
        &self.bank_ids
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }
}

/// Degree sequences of the binary projection of a holdings matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeSequences {
    bank_degrees: Vec<usize>,
    asset_degrees: Vec<usize>,
}

impl DegreeSequences {
    pub fn new(bank_degrees: Vec<usize>, asset_degrees: Vec<usize>) -> Result<Self> {
        let (n, k) = (bank_degrees.len(), asset_degrees.len());
        if let Some((i, d)) = bank_degrees.iter().enumerate().find(|(_, d)| **d > k) {
            return Err(Error::InfeasibleDegrees(format!("bank {i} has degree {d} > {k} assets")));
        }
        if let Some((i, d)) = asset_degrees.iter().enumerate().find(|(_, d)| **d > n) {
            return Err(Error::InfeasibleDegrees(format!("asset {i} has degree {d} > {n} banks")));
        }
        let (rows, cols): (usize, usize) = (bank_degrees.iter().sum(), asset_degrees.iter().sum());
        if rows != cols {
            return Err(Error::InfeasibleDegrees(format!(
                "bank degrees sum to {rows} but asset degrees sum to {cols}"
            )));
        }
        Ok(DegreeSequences { bank_degrees, asset_degrees })
    }

    pub fn bank_degrees(&self) -> &[usize] {
        &self.bank_degrees
    }

    pub fn asset_degrees(&self) -> &[usize] {
        &self.asset_degrees
    }

    pub fn edges(&self) -> usize {
        self.bank_degrees.iter().sum()
    }
}

/// Per-bank size `A_n`, equity `E_n` and leverage `B_n = (A_n - E_n) / E_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankSheet {
    sizes: Vec<f64>,
    equities: Vec<f64>,
    leverages: Vec<f64>,
}

impl BankSheet {
    pub fn new(sizes: Vec<f64>, equities: Vec<f64>) -> Result<Self> {
        if sizes.len() != equities.len() {
            return Err(Error::InvalidSheet(format!("{} sizes but {} equities", sizes.len(), equities.len())));
        }
        if let Some((i, a)) = sizes.iter().enumerate().find(|(_, a)| !(a.is_finite() && **a >= 0.0)) {
            return Err(Error::InvalidSheet(format!("bank {i} has invalid size {a}")));
        }
        if let Some((i, e)) = equities.iter().enumerate().find(|(_, e)| !(e.is_finite() && **e > 0.0)) {
            return Err(Error::InvalidSheet(format!("bank {i} has non-positive equity {e}")));
        }
        let leverages = sizes.iter().zip(&equities).map(|(a, e)| (a - e) / e).collect();
        Ok(BankSheet { sizes, equities, leverages })
    }

    /// Builds a sheet from sizes and target leverages, `E_n = A_n / (1 + B_n)`.
    pub fn from_leverages(sizes: Vec<f64>, leverages: &[f64]) -> Result<Self> {
        let equities = sizes.iter().zip(leverages).map(|(a, b)| a / (1.0 + b)).collect();
        Self::new(sizes, equities)
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn equities(&self) -> &[f64] {
        &self.equities
    }

    pub fn leverages(&self) -> &[f64] {
        &self.leverages
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    /// Total equity `E`.
    pub fn total_equity(&self) -> f64 {
        pairwise_sum(&self.equities)
    }

    pub fn select(&self, keep: &[usize]) -> Result<Self> {
        Self::new(keep.iter().map(|&i| self.sizes[i]).collect(), keep.iter().map(|&i| self.equities[i]).collect())
    }

    /// Same equities, sizes replaced (leverages recomputed).
    pub fn with_sizes(&self, sizes: Vec<f64>) -> Result<Self> {
        Self::new(sizes, self.equities.clone())
    }
}

/// Per-asset illiquidity `l_k` and shock `eps_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    illiquidity: Vec<f64>,
    shock: Vec<f64>,
}

impl MarketParams {
    pub fn new(illiquidity: Vec<f64>, shock: Vec<f64>) -> Result<Self> {
        if illiquidity.len() != shock.len() {
            return Err(Error::InvalidMarket(format!(
                "{} illiquidities but {} shocks",
                illiquidity.len(),
                shock.len()
            )));
        }
        if let Some(l) = illiquidity.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(Error::InvalidMarket(format!("illiquidity {l} must be finite and >= 0")));
        }
        if let Some(e) = shock.iter().find(|e| !e.is_finite()) {
            return Err(Error::InvalidMarket(format!("shock {e} must be finite")));
        }
        Ok(MarketParams { illiquidity, shock })
    }

    /// Uniform parameters: `illiquidity` everywhere except the asset named
    /// `cash_id` (if present), which gets zero; `shock` on every asset.
    pub fn standard(asset_ids: &[String], cash_id: &str, illiquidity: f64, shock: f64) -> Result<Self> {
        let ell = asset_ids.iter().map(|id| if id == cash_id { 0.0 } else { illiquidity }).collect();
        Self::new(ell, vec![shock; asset_ids.len()])
    }

    pub fn uniform(n_assets: usize, illiquidity: f64, shock: f64) -> Result<Self> {
        Self::new(vec![illiquidity; n_assets], vec![shock; n_assets])
    }

    pub fn illiquidity(&self) -> &[f64] {
        &self.illiquidity
    }

    pub fn shock(&self) -> &[f64] {
        &self.shock
    }

    pub fn len(&self) -> usize {
        self.shock.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shock.is_empty()
    }

    pub(crate) fn check_assets(&self, n_assets: usize) -> Result<()> {
        if self.len() != n_assets {
            return Err(Error::InvalidMarket(format!(
                "market parameters cover {} assets, holdings have {n_assets}",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Bank sizes, asset capitalizations and their total.
pub fn marginals(x: &HoldingsMatrix) -> Result<StrengthSequences> {
    StrengthSequences::with_ids(x.row_sums(), x.col_sums(), x.bank_ids().to_vec(), x.asset_ids().to_vec())
}

/// Degrees of the binary projection; an entry counts as an edge when it is
/// strictly greater than `threshold`.
pub fn degrees(x: &HoldingsMatrix, threshold: f64) -> DegreeSequences {
    let (n, k) = x.entries().dim();
    let mut rows = vec![0usize; n];
    let mut cols = vec![0usize; k];
    for ((i, j), &v) in x.entries().indexed_iter() {
        if v > threshold {
            rows[i] += 1;
            cols[j] += 1;
        }
    }
    DegreeSequences { bank_degrees: rows, asset_degrees: cols }
}

/// Portfolio weights `W_{n,k} = X_{n,k} / sum_k X_{n,k}`.
pub fn weights(x: &HoldingsMatrix) -> Result<Array2<f64>> {
    let sums = x.row_sums();
    let zero: Vec<String> =
        sums.iter().enumerate().filter(|(_, s)| **s <= 0.0).map(|(i, _)| x.bank_ids()[i].clone()).collect();
    if !zero.is_empty() {
        return Err(Error::ZeroRow { banks: zero });
    }
    let mut w = x.entries().clone();
    for (mut row, s) in w.rows_mut().into_iter().zip(&sums) {
        row.mapv_inplace(|v| v / s);
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marginals_of_small_matrix() {
        let x = HoldingsMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let s = marginals(&x).unwrap();
        assert_eq!(s.bank_sizes(), &[3.0, 7.0]);
        assert_eq!(s.asset_caps(), &[4.0, 6.0]);
        assert_eq!(s.total(), 10.0);
    }

    #[test]
    fn zero_matrix_has_no_valid_strengths() {
        let x = HoldingsMatrix::from_rows(&[[0.0, 0.0], [0.0, 0.0]]).unwrap();
        assert_eq!(x.row_sums(), vec![0.0, 0.0]);
        assert_eq!(x.col_sums(), vec![0.0, 0.0]);
        assert!(matches!(marginals(&x), Err(Error::InvalidStrength(_))));
    }

    #[test]
    fn degree_counts() {
        let x = HoldingsMatrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]).unwrap();
        let d = degrees(&x, 0.0);
        assert_eq!(d.bank_degrees(), &[1, 1]);
        assert_eq!(d.asset_degrees(), &[1, 1]);

        let dense = HoldingsMatrix::from_rows(&[[1.0; 4], [2.0; 4], [3.0; 4]]).unwrap();
        let d = degrees(&dense, 0.0);
        assert_eq!(d.bank_degrees(), &[4, 4, 4]);
        assert_eq!(d.asset_degrees(), &[3, 3, 3, 3]);

        let d = degrees(&dense, 2.0);
        assert_eq!(d.bank_degrees(), &[0, 0, 4]);
    }

    #[test]
    fn weight_examples() {
        let w = weights(&HoldingsMatrix::from_rows(&[[2.0, 2.0]]).unwrap()).unwrap();
        assert_eq!(w.row(0).to_vec(), vec![0.5, 0.5]);
        let w = weights(&HoldingsMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap()).unwrap();
        assert_eq!(w, Array2::<f64>::eye(2));
        let w = weights(&HoldingsMatrix::from_rows(&[[3.0, 1.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(w.row(0).to_vec(), vec![0.75, 0.25, 0.0]);
    }

    #[test]
    fn zero_row_is_reported_by_id() {
        let x = HoldingsMatrix::from_rows(&[[1.0, 1.0], [0.0, 0.0]]).unwrap();
        match weights(&x) {
            Err(Error::ZeroRow { banks }) => assert_eq!(banks, vec!["bank_2".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn holdings_validation() {
        assert!(HoldingsMatrix::from_rows(&[[1.0, -1.0]]).is_err());
        assert!(HoldingsMatrix::from_rows(&[[f64::NAN]]).is_err());
        let e = Array2::from_elem((2, 1), 1.0);
        assert!(HoldingsMatrix::new(e, vec!["a".into(), "a".into()], vec!["x".into()]).is_err());
        let empty: [[f64; 0]; 0] = [];
        assert!(HoldingsMatrix::from_rows(&empty).is_err());
    }

    #[test]
    fn strength_balance_is_enforced() {
        assert!(StrengthSequences::new(vec![1.0, 2.0], vec![3.0]).is_ok());
        assert!(StrengthSequences::new(vec![1.0, 2.0], vec![3.1]).is_err());
        assert!(StrengthSequences::new(vec![0.0], vec![0.0]).is_err());
        assert!(StrengthSequences::new(vec![-1.0, 2.0], vec![1.0]).is_err());
    }

    #[test]
    fn degree_sequences_validated() {
        assert!(DegreeSequences::new(vec![1, 2], vec![2, 1]).is_ok());
        assert!(matches!(DegreeSequences::new(vec![3], vec![1, 1]), Err(Error::InfeasibleDegrees(_))));
        assert!(DegreeSequences::new(vec![1, 1], vec![1, 0]).is_err());
    }

    #[test]
    fn sheet_leverage() {
        let s = BankSheet::new(vec![100.0, 10.0], vec![10.0, 10.0]).unwrap();
        assert_eq!(s.leverages(), &[9.0, 0.0]);
        assert_eq!(s.total_equity(), 20.0);
        assert!(BankSheet::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn standard_market_zeroes_cash() {
        let ids = vec!["cash".to_string(), "loans".to_string()];
        let m = MarketParams::standard(&ids, DEFAULT_CASH_ID, DEFAULT_ILLIQUIDITY, DEFAULT_SHOCK).unwrap();
        assert_eq!(m.illiquidity(), &[0.0, 1e-10]);
        assert_eq!(m.shock(), &[0.01, 0.01]);
        assert!(MarketParams::new(vec![-1.0], vec![0.0]).is_err());
    }
}

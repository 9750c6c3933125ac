//! Maximum-entropy ensembles of holdings matrices with independent entries:
//! MECAPM (every entry's mean pinned to the CAPM value), BIPWCM (expected
//! strengths) and BIPECM (expected strengths and degrees).

mod distribution;
mod expectations;
mod solver;

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use distribution::{unit_f64, EntryDistribution};
pub use expectations::{mecapm_expected_indirect_vulnerability, mecapm_expected_systemicness, ExpectedSystemicness};
pub use solver::SolverOptions;

use crate::error::{Error, Result};
use crate::model::{DegreeSequences, HoldingsMatrix, StrengthSequences};
use crate::numeric::pairwise_sum;
use crate::reconstruct::capm_matrix;
use crate::registry::Registry;
use solver::{cell_moments, free_p, Cell, Multipliers, Problem};

pub const SCHEMA_VERSION: u32 = 1;

pub const BIPWCM_TOL: f64 = 1e-8;
pub const BIPECM_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 100_000;
pub const DEFAULT_DAMPING: f64 = 1.0;
pub const DEFAULT_STALL_WINDOW: usize = 200;

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        SolverOptions { tol, max_iter: DEFAULT_MAX_ITER, damping: DEFAULT_DAMPING, stall_window: DEFAULT_STALL_WINDOW }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleKind {
    Mecapm,
    Bipwcm,
    Bipecm,
}

impl fmt::Display for EnsembleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnsembleKind::Mecapm => "mecapm",
            EnsembleKind::Bipwcm => "bipwcm",
            EnsembleKind::Bipecm => "bipecm",
        })
    }
}

/// Serialized form of [`EnsembleParams`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamsDoc {
    schema_version: u32,
    kind: EnsembleKind,
    bank_ids: Vec<String>,
    asset_ids: Vec<String>,
    bank_sizes: Vec<f64>,
    asset_caps: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bank_degrees: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    asset_degrees: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mecapm_means: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eta: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rho: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta: Option<Vec<Option<f64>>>,
    fit_residual: f64,
    iterations: usize,
    provenance_hash: String,
}

/// A fitted ensemble. Multipliers are kept in log form (`lambda`, `eta`,
/// `rho`, `delta`); `None` marks a node that was removed before fitting
/// because it has zero strength, zero degree or no free entries.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleParams {
    kind: EnsembleKind,
    strengths: StrengthSequences,
    degrees: Option<DegreeSequences>,
    means: Option<Array2<f64>>,
    lambda: Option<Vec<Option<f64>>>,
    eta: Option<Vec<Option<f64>>>,
    rho: Option<Vec<Option<f64>>>,
    delta: Option<Vec<Option<f64>>>,
    fit_residual: f64,
    iterations: usize,
    cells: Option<Array2<Cell>>,
}

fn exp_neg(v: &Option<Vec<Option<f64>>>) -> Option<Vec<Option<f64>>> {
    v.as_ref().map(|xs| xs.iter().map(|x| x.map(|x| (-x).exp())).collect())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl EnsembleParams {
    pub fn kind(&self) -> EnsembleKind {
        self.kind
    }

    pub fn n_banks(&self) -> usize {
        self.strengths.n_banks()
    }

    pub fn n_assets(&self) -> usize {
        self.strengths.n_assets()
    }

    pub fn bank_ids(&self) -> &[String] {
        self.strengths.bank_ids()
    }

    pub fn asset_ids(&self) -> &[String] {
        self.strengths.asset_ids()
    }

    /// Strengths the ensemble was fitted to.
    pub fn strengths(&self) -> &StrengthSequences {
        &self.strengths
    }

    pub fn degrees(&self) -> Option<&DegreeSequences> {
        self.degrees.as_ref()
    }

    pub fn fit_residual(&self) -> f64 {
        self.fit_residual
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn mecapm_means(&self) -> Option<&Array2<f64>> {
        self.means.as_ref()
    }

    pub fn lambda(&self) -> Option<&[Option<f64>]> {
        self.lambda.as_deref()
    }

    pub fn eta(&self) -> Option<&[Option<f64>]> {
        self.eta.as_deref()
    }

    pub fn rho(&self) -> Option<&[Option<f64>]> {
        self.rho.as_deref()
    }

    pub fn delta(&self) -> Option<&[Option<f64>]> {
        self.delta.as_deref()
    }

    /// `phi_n = exp(-lambda_n)`.
    pub fn phi(&self) -> Option<Vec<Option<f64>>> {
        exp_neg(&self.lambda)
    }

    /// `xi_k = exp(-eta_k)`.
    pub fn xi(&self) -> Option<Vec<Option<f64>>> {
        exp_neg(&self.eta)
    }

    /// `psi_n = exp(-rho_n)`.
    pub fn psi(&self) -> Option<Vec<Option<f64>>> {
        exp_neg(&self.rho)
    }

    /// `gamma_k = exp(-delta_k)`.
    pub fn gamma(&self) -> Option<Vec<Option<f64>>> {
        exp_neg(&self.delta)
    }

    pub fn entry_distribution(&self, bank: usize, asset: usize) -> Result<EntryDistribution> {
        let (n_banks, n_assets) = (self.n_banks(), self.n_assets());
        if bank >= n_banks || asset >= n_assets {
            return Err(Error::Index { bank, asset, n_banks, n_assets });
        }
        Ok(self.entry(bank, asset))
    }

    fn entry(&self, n: usize, k: usize) -> EntryDistribution {
        if let Some(means) = &self.means {
            return EntryDistribution::geometric_with_mean(means[[n, k]]);
        }
        let cells = self.cells.as_ref().expect("fitted configuration model");
        let get = |v: &Option<Vec<Option<f64>>>, i: usize| v.as_ref().and_then(|v| v[i]).unwrap_or(0.0);
        let theta = get(&self.lambda, n) + get(&self.eta, k);
        match cells[[n, k]] {
            Cell::Zero => EntryDistribution::Zero,
            Cell::Geometric => EntryDistribution::geometric_with_theta(theta),
            Cell::Shifted => EntryDistribution::ZeroInflated { p: 1.0, theta },
            Cell::Free => {
                let omega = get(&self.rho, n) + get(&self.delta, k);
                let s = -(-theta).exp_m1();
                EntryDistribution::ZeroInflated { p: free_p(theta, omega, s), theta }
            }
        }
    }

    /// Every entry's law, row-major.
    pub fn entry_table(&self) -> Vec<EntryDistribution> {
        let (n_banks, n_assets) = (self.n_banks(), self.n_assets());
        let mut out = Vec::with_capacity(n_banks * n_assets);
        for n in 0..n_banks {
            for k in 0..n_assets {
                out.push(self.entry(n, k));
            }
        }
        out
    }

    /// Entrywise expectation.
    pub fn expected_matrix(&self) -> HoldingsMatrix {
        let entries = match &self.means {
            Some(m) => m.clone(),
            None => Array2::from_shape_fn((self.n_banks(), self.n_assets()), |(n, k)| self.entry(n, k).mean()),
        };
        HoldingsMatrix::new(entries, self.bank_ids().to_vec(), self.asset_ids().to_vec())
            .expect("entry means are finite and non-negative")
    }

    /// Largest relative violation per constraint family, evaluated from the
    /// entry laws.
    pub fn constraint_residuals(&self) -> ConstraintResiduals {
        let (n_banks, n_assets) = (self.n_banks(), self.n_assets());
        let table = self.entry_table();
        let rel = |got: f64, want: f64| if want > 0.0 { (got - want).abs() / want } else { got.abs() };
        let mut out = ConstraintResiduals::default();
        let mut buf = Vec::with_capacity(n_banks.max(n_assets));
        for n in 0..n_banks {
            buf.clear();
            buf.extend((0..n_assets).map(|k| table[n * n_assets + k].mean()));
            out.bank_strength = out.bank_strength.max(rel(pairwise_sum(&buf), self.strengths.bank_sizes()[n]));
        }
        for k in 0..n_assets {
            buf.clear();
            buf.extend((0..n_banks).map(|n| table[n * n_assets + k].mean()));
            out.asset_strength = out.asset_strength.max(rel(pairwise_sum(&buf), self.strengths.asset_caps()[k]));
        }
        if let Some(d) = &self.degrees {
            let (mut bd, mut ad) = (0.0f64, 0.0f64);
            for n in 0..n_banks {
                buf.clear();
                buf.extend((0..n_assets).map(|k| table[n * n_assets + k].p_positive()));
                bd = bd.max(rel(pairwise_sum(&buf), d.bank_degrees()[n] as f64));
            }
            for k in 0..n_assets {
                buf.clear();
                buf.extend((0..n_banks).map(|n| table[n * n_assets + k].p_positive()));
                ad = ad.max(rel(pairwise_sum(&buf), d.asset_degrees()[k] as f64));
            }
            out.bank_degree = Some(bd);
            out.asset_degree = Some(ad);
        }
        out
    }

    /// Hash of the data the ensemble was fitted to (kind, ids, strengths,
    /// degrees).
    pub fn provenance_hash(&self) -> String {
        let value = serde_json::json!({
            "kind": self.kind,
            "bank_ids": self.bank_ids(),
            "asset_ids": self.asset_ids(),
            "bank_sizes": self.strengths.bank_sizes(),
            "asset_caps": self.strengths.asset_caps(),
            "bank_degrees": self.degrees.as_ref().map(|d| d.bank_degrees()),
            "asset_degrees": self.degrees.as_ref().map(|d| d.asset_degrees()),
        });
        sha256_hex(value.to_string().as_bytes())
    }

    /// Hash of the complete serialized parameters.
    pub fn content_hash(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    fn to_doc(&self) -> ParamsDoc {
        ParamsDoc {
            schema_version: SCHEMA_VERSION,
            kind: self.kind,
            bank_ids: self.bank_ids().to_vec(),
            asset_ids: self.asset_ids().to_vec(),
            bank_sizes: self.strengths.bank_sizes().to_vec(),
            asset_caps: self.strengths.asset_caps().to_vec(),
            bank_degrees: self.degrees.as_ref().map(|d| d.bank_degrees().to_vec()),
            asset_degrees: self.degrees.as_ref().map(|d| d.asset_degrees().to_vec()),
            mecapm_means: self.means.as_ref().map(|m| m.rows().into_iter().map(|r| r.to_vec()).collect()),
            lambda: self.lambda.clone(),
            eta: self.eta.clone(),
            rho: self.rho.clone(),
            delta: self.delta.clone(),
            fit_residual: self.fit_residual,
            iterations: self.iterations,
            provenance_hash: self.provenance_hash(),
        }
    }

    /// Versioned JSON document. The exponentiated multipliers are included
    /// for reference and ignored when reading.
    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(self.to_doc()).expect("serializable");
        let obj = value.as_object_mut().expect("object");
        for (key, v) in [("phi", self.phi()), ("xi", self.xi()), ("psi", self.psi()), ("gamma", self.gamma())] {
            if let Some(v) = v {
                obj.insert(key.into(), serde_json::to_value(v).expect("serializable"));
            }
        }
        serde_json::to_string_pretty(&value).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ParamsDoc = serde_json::from_str(text)?;
        Self::from_doc(doc)
    }

    fn from_doc(doc: ParamsDoc) -> Result<Self> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported ensemble schema version {} (expected {SCHEMA_VERSION})",
                doc.schema_version
            )));
        }
        let strengths = StrengthSequences::with_ids(doc.bank_sizes, doc.asset_caps, doc.bank_ids, doc.asset_ids)?;
        let (n, k) = (strengths.n_banks(), strengths.n_assets());
        let degrees = match (doc.bank_degrees, doc.asset_degrees) {
            (Some(b), Some(a)) => Some(DegreeSequences::new(b, a)?),
            (None, None) => None,
            _ => return Err(Error::Config("bank and asset degrees must be given together".into())),
        };
        let len_ok = |v: &Option<Vec<Option<f64>>>, want: usize| v.as_ref().is_none_or(|v| v.len() == want);
        if !(len_ok(&doc.lambda, n) && len_ok(&doc.rho, n) && len_ok(&doc.eta, k) && len_ok(&doc.delta, k)) {
            return Err(Error::Config("multiplier vector has the wrong length".into()));
        }
        let mut p = EnsembleParams {
            kind: doc.kind,
            strengths,
            degrees,
            means: None,
            lambda: doc.lambda,
            eta: doc.eta,
            rho: doc.rho,
            delta: doc.delta,
            fit_residual: doc.fit_residual,
            iterations: doc.iterations,
            cells: None,
        };
        match doc.kind {
            EnsembleKind::Mecapm => {
                let rows = doc.mecapm_means.ok_or_else(|| Error::Config("mecapm parameters need means".into()))?;
                if rows.len() != n || rows.iter().any(|r| r.len() != k) {
                    return Err(Error::Config("mean matrix has the wrong shape".into()));
                }
                let means = Array2::from_shape_vec((n, k), rows.into_iter().flatten().collect())
                    .map_err(|e| Error::Config(e.to_string()))?;
                if means.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
                    return Err(Error::Config("means must be finite and non-negative".into()));
                }
                p.means = Some(means);
            }
            EnsembleKind::Bipwcm => {
                p.cells = Some(bipwcm_cells(&p.strengths));
                p.check_multipliers()?;
            }
            EnsembleKind::Bipecm => {
                let d = p.degrees.as_ref().ok_or_else(|| Error::Config("bipecm parameters need degrees".into()))?;
                p.cells = Some(bipecm_structure(&p.strengths, d)?.cells);
                p.check_multipliers()?;
            }
        }
        if p.provenance_hash() != doc.provenance_hash {
            return Err(Error::Config("provenance hash does not match the document contents".into()));
        }
        Ok(p)
    }

    /// Every entry in use has its multipliers and `theta > 0`.
    fn check_multipliers(&self) -> Result<()> {
        let cells = self.cells.as_ref().expect("configuration model");
        let need = |v: &Option<Vec<Option<f64>>>, i: usize, name: &str| -> Result<f64> {
            v.as_ref()
                .and_then(|v| v[i])
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Config(format!("missing or non-finite {name}[{i}]")))
        };
        for ((n, k), &c) in cells.indexed_iter() {
            if c == Cell::Zero {
                continue;
            }
            let theta = need(&self.lambda, n, "lambda")? + need(&self.eta, k, "eta")?;
            if !(theta > 0.0) {
                return Err(Error::Config(format!("entry ({n}, {k}) has t = exp(-theta) >= 1")));
            }
            if c == Cell::Free {
                need(&self.rho, n, "rho")?;
                need(&self.delta, k, "delta")?;
            }
        }
        Ok(())
    }
}

impl Serialize for EnsembleParams {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_doc().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for EnsembleParams {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = ParamsDoc::deserialize(deserializer)?;
        EnsembleParams::from_doc(doc).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ConstraintResiduals {
    pub bank_strength: f64,
    pub asset_strength: f64,
    pub bank_degree: Option<f64>,
    pub asset_degree: Option<f64>,
}

impl ConstraintResiduals {
    pub fn max(&self) -> f64 {
        self.bank_strength
            .max(self.asset_strength)
            .max(self.bank_degree.unwrap_or(0.0))
            .max(self.asset_degree.unwrap_or(0.0))
    }
}

/// Geometric entries wherever both strengths are positive.
fn bipwcm_cells(s: &StrengthSequences) -> Array2<Cell> {
    let (a, c) = (s.bank_sizes(), s.asset_caps());
    Array2::from_shape_fn(
        (a.len(), c.len()),
        |(n, k)| {
            if a[n] > 0.0 && c[k] > 0.0 {
                Cell::Geometric
            } else {
                Cell::Zero
            }
        },
    )
}

struct Structure {
    cells: Array2<Cell>,
    row_degree: Vec<Option<f64>>,
    col_degree: Vec<Option<f64>>,
}

/// Resolves which entries the degree sequences force to be zero or
/// positive. A line whose remaining degree equals its number of undecided
/// entries forces them all positive; a line whose degree is already met
/// forces the rest to zero. Repeats until nothing changes.
fn bipecm_structure(s: &StrengthSequences, d: &DegreeSequences) -> Result<Structure> {
    let (n_rows, n_cols) = (s.n_banks(), s.n_assets());
    if d.bank_degrees().len() != n_rows || d.asset_degrees().len() != n_cols {
        return Err(Error::InvalidDegrees(format!(
            "degree sequences have lengths {} and {}, strengths {n_rows} and {n_cols}",
            d.bank_degrees().len(),
            d.asset_degrees().len()
        )));
    }
    let mut cells = Array2::from_elem((n_rows, n_cols), Cell::Free);
    for n in 0..n_rows {
        let (a, deg) = (s.bank_sizes()[n], d.bank_degrees()[n]);
        if (a > 0.0) != (deg > 0) {
            return Err(Error::InfeasibleDegrees(format!(
                "bank {} has strength {a} but degree {deg}",
                s.bank_ids()[n]
            )));
        }
        if deg == 0 {
            cells.row_mut(n).fill(Cell::Zero);
        }
    }
    for k in 0..n_cols {
        let (c, deg) = (s.asset_caps()[k], d.asset_degrees()[k]);
        if (c > 0.0) != (deg > 0) {
            return Err(Error::InfeasibleDegrees(format!(
                "asset {} has strength {c} but degree {deg}",
                s.asset_ids()[k]
            )));
        }
        if deg == 0 {
            cells.column_mut(k).fill(Cell::Zero);
        }
    }

    fn settle(line: &mut [Cell], degree: usize, name: &str) -> Result<bool> {
        let pos = line.iter().filter(|c| **c == Cell::Shifted).count();
        let free = line.iter().filter(|c| **c == Cell::Free).count();
        if degree < pos || degree - pos > free {
            return Err(Error::InfeasibleDegrees(format!(
                "{name} needs degree {degree} but has {pos} forced and {free} open entries"
            )));
        }
        if free == 0 {
            return Ok(false);
        }
        let fill = if degree == pos {
            Cell::Zero
        } else if degree - pos == free {
            Cell::Shifted
        } else {
            return Ok(false);
        };
        line.iter_mut().filter(|c| **c == Cell::Free).for_each(|c| *c = fill);
        Ok(true)
    }

    loop {
        let mut changed = false;
        for n in 0..n_rows {
            let name = format!("bank {}", s.bank_ids()[n]);
            let mut row = cells.row_mut(n);
            let slice = row.as_slice_mut().expect("standard layout");
            changed |= settle(slice, d.bank_degrees()[n], &name)?;
        }
        for k in 0..n_cols {
            let name = format!("asset {}", s.asset_ids()[k]);
            let mut col: Vec<Cell> = cells.column(k).to_vec();
            let did = settle(&mut col, d.asset_degrees()[k], &name)?;
            if did {
                cells.column_mut(k).iter_mut().zip(col).for_each(|(c, v)| *c = v);
            }
            changed |= did;
        }
        if !changed {
            break;
        }
    }

    let free_target = |line: &mut dyn Iterator<Item = Cell>, degree: usize| {
        let (mut pos, mut free) = (0usize, 0usize);
        for c in line {
            match c {
                Cell::Shifted => pos += 1,
                Cell::Free => free += 1,
                _ => {}
            }
        }
        (free > 0).then(|| (degree - pos) as f64)
    };
    let row_degree = (0..n_rows).map(|n| free_target(&mut cells.row(n).iter().copied(), d.bank_degrees()[n])).collect();
    let col_degree =
        (0..n_cols).map(|k| free_target(&mut cells.column(k).iter().copied(), d.asset_degrees()[k])).collect();
    Ok(Structure { cells, row_degree, col_degree })
}

fn to_options(values: &[f64], active: impl Fn(usize) -> bool) -> Vec<Option<f64>> {
    values.iter().enumerate().map(|(i, v)| active(i).then_some(*v)).collect()
}

/// MECAPM: independent geometric entries with means `A_n C_k / L`.
pub fn fit_mecapm(s: &StrengthSequences) -> EnsembleParams {
    EnsembleParams {
        kind: EnsembleKind::Mecapm,
        strengths: s.clone(),
        degrees: None,
        means: Some(capm_matrix(s).into_entries()),
        lambda: None,
        eta: None,
        rho: None,
        delta: None,
        fit_residual: 0.0,
        iterations: 0,
        cells: None,
    }
}

/// BIPWCM: geometric entries with `t = exp(-(lambda_n + eta_k))` whose
/// expected row and column sums equal the strengths. Zero-strength nodes
/// are left out and get deterministic zero entries.
pub fn fit_bipwcm(s: &StrengthSequences, opts: &SolverOptions) -> Result<EnsembleParams> {
    let cells = bipwcm_cells(s);
    let (n, k) = cells.dim();
    let problem = Problem {
        cells,
        row_strength: s.bank_sizes().to_vec(),
        col_strength: s.asset_caps().to_vec(),
        row_degree: vec![None; n],
        col_degree: vec![None; k],
    };
    let init = problem.initial(s.total(), &vec![1.0; n], &vec![1.0; k]);
    let sol = problem.solve(init, opts, "bipwcm")?;
    Ok(from_solution(EnsembleKind::Bipwcm, s, None, problem, sol))
}

/// BIPECM: zero-inflated entries matching expected strengths and expected
/// degrees. Entries the degrees force to be zero or positive are fixed
/// before solving.
pub fn fit_bipecm(s: &StrengthSequences, d: &DegreeSequences, opts: &SolverOptions) -> Result<EnsembleParams> {
    let st = bipecm_structure(s, d)?;
    let problem = Problem {
        cells: st.cells,
        row_strength: s.bank_sizes().to_vec(),
        col_strength: s.asset_caps().to_vec(),
        row_degree: st.row_degree,
        col_degree: st.col_degree,
    };
    let row_full: Vec<f64> = d.bank_degrees().iter().map(|&x| x.max(1) as f64).collect();
    let col_full: Vec<f64> = d.asset_degrees().iter().map(|&x| x.max(1) as f64).collect();
    let init = problem.initial(s.total(), &row_full, &col_full);
    let sol = problem.solve(init, opts, "bipecm")?;
    Ok(from_solution(EnsembleKind::Bipecm, s, Some(d.clone()), problem, sol))
}

fn from_solution(
    kind: EnsembleKind,
    s: &StrengthSequences,
    degrees: Option<DegreeSequences>,
    problem: Problem,
    sol: solver::Solution,
) -> EnsembleParams {
    let Multipliers { lambda, eta, rho, delta } = sol.mult;
    let with_degrees = degrees.is_some();
    let p = EnsembleParams {
        kind,
        strengths: s.clone(),
        degrees,
        means: None,
        lambda: Some(to_options(&lambda, |n| problem.row_active(n))),
        eta: Some(to_options(&eta, |k| problem.col_active(k))),
        rho: with_degrees.then(|| to_options(&rho, |n| problem.row_degree[n].is_some())),
        delta: with_degrees.then(|| to_options(&delta, |k| problem.col_degree[k].is_some())),
        fit_residual: sol.residual,
        iterations: sol.iterations,
        cells: Some(problem.cells),
    };
    log::debug!("{kind} fitted in {} iterations, residual {:e}", p.iterations, p.fit_residual);
    p
}

/// A maximum-entropy ensemble that can be fitted to marginal data.
pub trait EnsembleModel: Send + Sync {
    fn kind(&self) -> EnsembleKind;

    fn needs_degrees(&self) -> bool {
        false
    }

    fn default_options(&self) -> SolverOptions;

    fn fit(&self, s: &StrengthSequences, d: Option<&DegreeSequences>, opts: &SolverOptions) -> Result<EnsembleParams>;
}

pub struct Mecapm;
pub struct Bipwcm;
pub struct Bipecm;

impl EnsembleModel for Mecapm {
    fn kind(&self) -> EnsembleKind {
        EnsembleKind::Mecapm
    }

    fn default_options(&self) -> SolverOptions {
        SolverOptions::with_tol(0.0)
    }

    fn fit(&self, s: &StrengthSequences, _: Option<&DegreeSequences>, _: &SolverOptions) -> Result<EnsembleParams> {
        Ok(fit_mecapm(s))
    }
}

impl EnsembleModel for Bipwcm {
    fn kind(&self) -> EnsembleKind {
        EnsembleKind::Bipwcm
    }

    fn default_options(&self) -> SolverOptions {
        SolverOptions::with_tol(BIPWCM_TOL)
    }

    fn fit(&self, s: &StrengthSequences, _: Option<&DegreeSequences>, opts: &SolverOptions) -> Result<EnsembleParams> {
        fit_bipwcm(s, opts)
    }
}

impl EnsembleModel for Bipecm {
    fn kind(&self) -> EnsembleKind {
        EnsembleKind::Bipecm
    }

    fn needs_degrees(&self) -> bool {
        true
    }

    fn default_options(&self) -> SolverOptions {
        SolverOptions::with_tol(BIPECM_TOL)
    }

    fn fit(&self, s: &StrengthSequences, d: Option<&DegreeSequences>, opts: &SolverOptions) -> Result<EnsembleParams> {
        let d = d.ok_or_else(|| Error::InvalidDegrees("bipecm needs degree sequences".into()))?;
        fit_bipecm(s, d, opts)
    }
}

pub fn ensemble_models() -> Registry<dyn EnsembleModel> {
    let mut r: Registry<dyn EnsembleModel> = Registry::new("ensemble");
    r.register("mecapm", Box::new(Mecapm));
    r.register("bipwcm", Box::new(Bipwcm));
    r.register("bipecm", Box::new(Bipecm));
    r
}

/// `(mean, P(X > 0))` of a zero-inflated entry with parameters `theta`, `omega`.
pub fn zero_inflated_moments(theta: f64, omega: f64) -> (f64, f64) {
    cell_moments(Cell::Free, theta, omega)
}

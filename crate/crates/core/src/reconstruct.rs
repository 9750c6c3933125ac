//! Cross-entropy reconstruction of a holdings matrix from its marginals:
//! the closed-form CAPM matrix and iterative proportional fitting (RAS)
//! for general priors and support masks.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{HoldingsMatrix, StrengthSequences};
use crate::numeric::pairwise_sum_by;
use crate::registry::Registry;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;
/// Window (in iterations) over which a stalled residual signals infeasibility.
pub const STALL_WINDOW: usize = 100;
pub const STALL_DECREASE: f64 = 1e-15;

/// Entries allowed to be nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportMask {
    allowed: Array2<bool>,
}

impl SupportMask {
    pub fn new(allowed: Array2<bool>) -> Self {
        SupportMask { allowed }
    }

    pub fn full(n_banks: usize, n_assets: usize) -> Self {
        SupportMask { allowed: Array2::from_elem((n_banks, n_assets), true) }
    }

    /// Support of the strictly positive entries of `x`.
    pub fn from_matrix(x: &HoldingsMatrix) -> Self {
        SupportMask { allowed: x.entries().mapv(|v| v > 0.0) }
    }

    pub fn allowed(&self) -> &Array2<bool> {
        &self.allowed
    }

    pub fn is_allowed(&self, bank: usize, asset: usize) -> bool {
        self.allowed[[bank, asset]]
    }

    /// Checks that every row and column with positive strength has at
    /// least one allowed entry.
    pub fn validate(&self, s: &StrengthSequences) -> Result<()> {
        if self.allowed.dim() != (s.n_banks(), s.n_assets()) {
            return Err(Error::InvalidHoldings(format!(
                "mask is {:?}, strengths are {}x{}",
                self.allowed.dim(),
                s.n_banks(),
                s.n_assets()
            )));
        }
        let empty_row = (0..s.n_banks()).find(|&n| s.bank_sizes()[n] > 0.0 && !self.allowed.row(n).iter().any(|&b| b));
        let empty_col =
            (0..s.n_assets()).find(|&k| s.asset_caps()[k] > 0.0 && !self.allowed.column(k).iter().any(|&b| b));
        if empty_row.is_some() || empty_col.is_some() {
            return Err(Error::InfeasibleSupport { iterations: 0, residual: f64::INFINITY });
        }
        Ok(())
    }
}

/// Residual flow network on source, banks, assets and sink.
struct FlowNet {
    head: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<f64>,
}

impl FlowNet {
    fn new(nodes: usize) -> Self {
        FlowNet { head: vec![Vec::new(); nodes], to: Vec::new(), cap: Vec::new() }
    }

    /// Adds `u -> v` with capacity `c`; the reverse arc is at index `id ^ 1`.
    fn add(&mut self, u: usize, v: usize, c: f64) -> usize {
        let id = self.to.len();
        self.head[u].push(id);
        self.to.push(v);
        self.cap.push(c);
        self.head[v].push(id + 1);
        self.to.push(u);
        self.cap.push(0.0);
        id
    }

    /// Edmonds-Karp; arcs with residual capacity at most `eps` are ignored.
    fn max_flow(&mut self, s: usize, t: usize, eps: f64) -> f64 {
        let mut total = 0.0;
        let mut prev = vec![usize::MAX; self.head.len()];
        let mut queue = std::collections::VecDeque::new();
        loop {
            prev.fill(usize::MAX);
            queue.clear();
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                if u == t {
                    break;
                }
                for &e in &self.head[u] {
                    let v = self.to[e];
                    if v != s && prev[v] == usize::MAX && self.cap[e] > eps {
                        prev[v] = e;
                        queue.push_back(v);
                    }
                }
            }
            if prev[t] == usize::MAX {
                return total;
            }
            let mut push = f64::INFINITY;
            let mut v = t;
            while v != s {
                let e = prev[v];
                push = push.min(self.cap[e]);
                v = self.to[e ^ 1];
            }
            let mut v = t;
            while v != s {
                let e = prev[v];
                self.cap[e] -= push;
                self.cap[e ^ 1] += push;
                v = self.to[e ^ 1];
            }
            total += push;
        }
    }

    fn reachable_from(&self, start: usize, eps: f64, seen: &mut [bool]) {
        seen.fill(false);
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(u) = stack.pop() {
            for &e in &self.head[u] {
                let v = self.to[e];
                if !seen[v] && self.cap[e] > eps {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
}

/// Entries of `allowed` that are positive in at least one nonnegative matrix
/// with row sums `a`, column sums `c` and support inside `allowed`.
///
/// Fails with [`Error::InfeasibleSupport`] if no such matrix exists. An
/// entry with zero flow in a maximum flow can carry flow in another one iff
/// its asset reaches its bank in the residual network.
pub fn feasible_support(allowed: &Array2<bool>, a: &[f64], c: &[f64]) -> Result<Array2<bool>> {
    let (n_banks, n_assets) = allowed.dim();
    let total: f64 = a.iter().sum();
    let eps = 1e-12 * total.max(f64::MIN_POSITIVE);
    let (src, sink) = (0, n_banks + n_assets + 1);
    let bank = |n: usize| 1 + n;
    let asset = |k: usize| 1 + n_banks + k;
    let mut net = FlowNet::new(n_banks + n_assets + 2);
    for (n, &v) in a.iter().enumerate() {
        net.add(src, bank(n), v);
    }
    for (k, &v) in c.iter().enumerate() {
        net.add(asset(k), sink, v);
    }
    let mut arcs = Array2::from_elem((n_banks, n_assets), usize::MAX);
    for ((n, k), &ok) in allowed.indexed_iter() {
        if ok && a[n] > 0.0 && c[k] > 0.0 {
            arcs[[n, k]] = net.add(bank(n), asset(k), total);
        }
    }
    let flow = net.max_flow(src, sink, eps);
    if flow < total * (1.0 - 1e-9) {
        return Err(Error::InfeasibleSupport { iterations: 0, residual: (total - flow) / total });
    }
    let mut out = Array2::from_elem((n_banks, n_assets), false);
    let mut seen = vec![false; n_banks + n_assets + 2];
    for k in 0..n_assets {
        let mut searched = false;
        for n in 0..n_banks {
            let e = arcs[[n, k]];
            if e == usize::MAX {
                continue;
            }
            // Flow on the arc sits in the reverse capacity.
            if net.cap[e ^ 1] > eps {
                out[[n, k]] = true;
                continue;
            }
            if !searched {
                net.reachable_from(asset(k), eps, &mut seen);
                searched = true;
            }
            out[[n, k]] = seen[bank(n)];
        }
    }
    Ok(out)
}

/// `X_{n,k} = A_n C_k / L`.
pub fn capm_matrix(s: &StrengthSequences) -> HoldingsMatrix {
    let a = s.bank_sizes();
    let c = s.asset_caps();
    let l = s.total();
    let entries = Array2::from_shape_fn((a.len(), c.len()), |(n, k)| a[n] * c[k] / l);
    HoldingsMatrix::new(entries, s.bank_ids().to_vec(), s.asset_ids().to_vec()).expect("strength sequences are valid")
}

#[derive(Debug, Clone)]
pub struct CrossEntropyFit {
    pub matrix: HoldingsMatrix,
    pub iterations: usize,
    /// Max relative marginal residual at exit.
    pub residual: f64,
    /// Residual after each iteration (entry 0 is the prior's).
    pub residual_trace: Vec<f64>,
    /// Negated dual objective after each half-sweep; non-increasing.
    pub objective_trace: Vec<f64>,
}

/// `sum X log(X / prior)` with `0 log 0 = 0`; infinite if `x` puts mass
/// where the prior has none.
pub fn kl_divergence(x: &HoldingsMatrix, prior: &HoldingsMatrix) -> f64 {
    let mut buf: Vec<f64> = Vec::with_capacity(x.n_banks() * x.n_assets());
    for (v, p) in x.entries().iter().zip(prior.entries()) {
        if *v > 0.0 {
            buf.push(if *p > 0.0 { v * (v / p).ln() } else { f64::INFINITY });
        }
    }
    crate::numeric::pairwise_sum(&buf)
}

struct Scaling<'a> {
    prior: &'a Array2<f64>,
    a: &'a [f64],
    c: &'a [f64],
    u: Vec<f64>,
    v: Vec<f64>,
    buf: Vec<f64>,
}

impl Scaling<'_> {
    fn row_sum(&mut self, n: usize) -> f64 {
        let (p, v) = (self.prior, &self.v);
        pairwise_sum_by(p.ncols(), &mut self.buf, |k| p[[n, k]] * v[k]) * self.u[n]
    }

    fn col_sum(&mut self, k: usize) -> f64 {
        let (p, u) = (self.prior, &self.u);
        pairwise_sum_by(p.nrows(), &mut self.buf, |n| u[n] * p[[n, k]]) * self.v[k]
    }

    fn residual(&mut self) -> f64 {
        let mut worst: f64 = 0.0;
        for n in 0..self.a.len() {
            let s = self.row_sum(n);
            worst = worst.max(rel_gap(s, self.a[n]));
        }
        for k in 0..self.c.len() {
            let s = self.col_sum(k);
            worst = worst.max(rel_gap(s, self.c[k]));
        }
        worst
    }

    /// `sum X - sum A ln u - sum C ln v`, the dual objective up to sign and
    /// a constant.
    fn objective(&mut self) -> f64 {
        let total: f64 = (0..self.a.len()).map(|n| self.row_sum(n)).sum();
        let lu: f64 = self.a.iter().zip(&self.u).filter(|(a, _)| **a > 0.0).map(|(a, u)| a * u.ln()).sum();
        let lv: f64 = self.c.iter().zip(&self.v).filter(|(c, _)| **c > 0.0).map(|(c, v)| c * v.ln()).sum();
        total - lu - lv
    }

    fn sweep_rows(&mut self, iterations: usize) -> Result<()> {
        for n in 0..self.a.len() {
            if self.a[n] == 0.0 {
                self.u[n] = 0.0;
                continue;
            }
            self.u[n] = 1.0;
            let s = self.row_sum(n);
            if !(s > 0.0) {
                return Err(Error::InfeasibleSupport { iterations, residual: f64::INFINITY });
            }
            self.u[n] = self.a[n] / s;
        }
        Ok(())
    }

    fn sweep_cols(&mut self, iterations: usize) -> Result<()> {
        for k in 0..self.c.len() {
            if self.c[k] == 0.0 {
                self.v[k] = 0.0;
                continue;
            }
            self.v[k] = 1.0;
            let s = self.col_sum(k);
            if !(s > 0.0) {
                return Err(Error::InfeasibleSupport { iterations, residual: f64::INFINITY });
            }
            self.v[k] = self.c[k] / s;
        }
        Ok(())
    }
}

fn rel_gap(got: f64, target: f64) -> f64 {
    if target > 0.0 {
        (got - target).abs() / target
    } else {
        got.abs()
    }
}

/// Minimizes `sum X log(X / prior)` subject to the marginals in `s` and the
/// support `mask`, by alternately rescaling rows and columns of the prior.
///
/// Stops once the largest relative row or column residual is at most `tol`.
/// Fails with [`Error::InfeasibleSupport`] if the residual improves by less
/// than [`STALL_DECREASE`] over [`STALL_WINDOW`] iterations, and with
/// [`Error::MaxIterExceeded`] after `max_iter` iterations.
pub fn cross_entropy_min(
    prior: &HoldingsMatrix,
    s: &StrengthSequences,
    mask: &SupportMask,
    tol: f64,
    max_iter: usize,
) -> Result<CrossEntropyFit> {
    if prior.entries().dim() != (s.n_banks(), s.n_assets()) {
        return Err(Error::InvalidHoldings(format!(
            "prior is {}x{}, strengths are {}x{}",
            prior.n_banks(),
            prior.n_assets(),
            s.n_banks(),
            s.n_assets()
        )));
    }
    mask.validate(s)?;
    let mut p = prior.entries().clone();
    p.zip_mut_with(mask.allowed(), |v, &ok| {
        if !ok {
            *v = 0.0
        }
    });
    // Entries that are zero in every feasible matrix are removed so the
    // scaling converges geometrically instead of creeping towards zero.
    let support = feasible_support(&p.mapv(|v| v > 0.0), s.bank_sizes(), s.asset_caps())?;
    let mut pruned = 0usize;
    p.zip_mut_with(&support, |v, &ok| {
        if !ok && *v > 0.0 {
            *v = 0.0;
            pruned += 1;
        }
    });
    if pruned > 0 {
        log::debug!("{pruned} entries are zero in every feasible matrix");
    }

    let mut sc = Scaling {
        prior: &p,
        a: s.bank_sizes(),
        c: s.asset_caps(),
        u: vec![1.0; s.n_banks()],
        v: vec![1.0; s.n_assets()],
        buf: Vec::new(),
    };
    // Zero-strength nodes are zeroed up front.
    for (n, a) in s.bank_sizes().iter().enumerate() {
        if *a == 0.0 {
            sc.u[n] = 0.0;
        }
    }
    for (k, c) in s.asset_caps().iter().enumerate() {
        if *c == 0.0 {
            sc.v[k] = 0.0;
        }
    }

    let mut residual = sc.residual();
    let mut residual_trace = vec![residual];
    let mut objective_trace = vec![sc.objective()];
    let mut iterations = 0;
    while residual > tol {
        if iterations >= max_iter {
            return Err(Error::MaxIterExceeded { iterations, residual });
        }
        sc.sweep_rows(iterations)?;
        objective_trace.push(sc.objective());
        sc.sweep_cols(iterations)?;
        objective_trace.push(sc.objective());
        debug_assert!({
            let t = &objective_trace;
            let (prev, cur) = (t[t.len() - 3], t[t.len() - 1]);
            cur <= prev + 1e-9 * prev.abs().max(1.0)
        });
        iterations += 1;
        residual = sc.residual();
        residual_trace.push(residual);
        if !residual.is_finite() {
            return Err(Error::InfeasibleSupport { iterations, residual });
        }
        if iterations >= STALL_WINDOW && residual > tol {
            let before = residual_trace[iterations - STALL_WINDOW];
            if before - residual < STALL_DECREASE {
                return Err(Error::InfeasibleSupport { iterations, residual });
            }
        }
    }

    let (u, v) = (&sc.u, &sc.v);
    let entries = Array2::from_shape_fn(p.dim(), |(n, k)| u[n] * p[[n, k]] * v[k]);
    let matrix = HoldingsMatrix::new(entries, s.bank_ids().to_vec(), s.asset_ids().to_vec())?;
    Ok(CrossEntropyFit { matrix, iterations, residual, residual_trace, objective_trace })
}

/// A way of producing a point estimate of the holdings matrix from marginals.
pub trait Reconstructor: Send + Sync {
    fn name(&self) -> &'static str;

    fn reconstruct(
        &self,
        s: &StrengthSequences,
        prior: Option<&HoldingsMatrix>,
        mask: Option<&SupportMask>,
    ) -> Result<HoldingsMatrix>;
}

pub struct Capm;

impl Reconstructor for Capm {
    fn name(&self) -> &'static str {
        "capm"
    }

    fn reconstruct(
        &self,
        s: &StrengthSequences,
        prior: Option<&HoldingsMatrix>,
        mask: Option<&SupportMask>,
    ) -> Result<HoldingsMatrix> {
        if prior.is_some() || mask.is_some() {
            log::warn!("capm reconstruction ignores prior and mask");
        }
        Ok(capm_matrix(s))
    }
}

pub struct CrossEntropy {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CrossEntropy {
    fn default() -> Self {
        CrossEntropy { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

impl Reconstructor for CrossEntropy {
    fn name(&self) -> &'static str {
        "cross-entropy"
    }

    /// Without a prior, a uniform prior on the mask is used.
    fn reconstruct(
        &self,
        s: &StrengthSequences,
        prior: Option<&HoldingsMatrix>,
        mask: Option<&SupportMask>,
    ) -> Result<HoldingsMatrix> {
        let full = SupportMask::full(s.n_banks(), s.n_assets());
        let mask = mask.unwrap_or(&full);
        let uniform;
        let prior = match prior {
            Some(p) => p,
            None => {
                uniform = HoldingsMatrix::new(
                    Array2::ones((s.n_banks(), s.n_assets())),
                    s.bank_ids().to_vec(),
                    s.asset_ids().to_vec(),
                )?;
                &uniform
            }
        };
        Ok(cross_entropy_min(prior, s, mask, self.tol, self.max_iter)?.matrix)
    }
}

/// Built-in reconstruction methods keyed by name.
pub fn reconstructors(tol: f64, max_iter: usize) -> Registry<dyn Reconstructor> {
    let mut r: Registry<dyn Reconstructor> = Registry::new("reconstruction method");
    r.register("capm", Box::new(Capm));
    r.register("cross-entropy", Box::new(CrossEntropy { tol, max_iter }));
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strengths(a: &[f64], c: &[f64]) -> StrengthSequences {
        StrengthSequences::new(a.to_vec(), c.to_vec()).unwrap()
    }

    #[test]
    fn capm_examples() {
        let x = capm_matrix(&strengths(&[3.0, 1.0], &[2.0, 2.0]));
        assert_eq!(x.entries().as_slice().unwrap(), &[1.5, 1.5, 0.5, 0.5]);
        let x = capm_matrix(&strengths(&[4.0], &[1.0, 3.0]));
        assert_eq!(x.row(0), &[1.0, 3.0]);
        let x = capm_matrix(&strengths(&[5.0, 5.0], &[5.0, 5.0]));
        assert!(x.entries().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn capm_prior_is_already_optimal() {
        let s = strengths(&[3.0, 1.0, 6.0], &[2.0, 2.0, 6.0]);
        let prior = capm_matrix(&s);
        let fit = cross_entropy_min(&prior, &s, &SupportMask::full(3, 3), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(fit.iterations <= 1);
        for (a, b) in fit.matrix.entries().iter().zip(prior.entries()) {
            assert!((a - b).abs() <= 1e-12 * b);
        }
    }

    #[test]
    fn constant_prior_gives_capm() {
        let s = strengths(&[3.0, 7.0], &[4.0, 6.0]);
        let prior = HoldingsMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let fit = cross_entropy_min(&prior, &s, &SupportMask::full(2, 2), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let want = [1.2, 1.8, 2.8, 4.2];
        for (a, b) in fit.matrix.entries().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_diagonal_forces_permutation() {
        let s = strengths(&[1.0, 1.0], &[1.0, 1.0]);
        let prior = HoldingsMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let mask = SupportMask::new(ndarray::array![[false, true], [true, true]]);
        let fit = cross_entropy_min(&prior, &s, &mask, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let e = fit.matrix.entries();
        assert_eq!(e[[0, 0]], 0.0);
        assert!((e[[0, 1]] - 1.0).abs() < 1e-9);
        assert!((e[[1, 0]] - 1.0).abs() < 1e-9);
        assert!(e[[1, 1]].abs() < 1e-9);
    }

    #[test]
    fn support_pruning() {
        let allowed = ndarray::array![[true, true, false], [true, false, false], [true, true, true]];
        // Bank 1 must take all of asset 0, so nobody else can hold it.
        let out = feasible_support(&allowed, &[1.0, 2.0, 3.0], &[2.0, 1.0, 3.0]).unwrap();
        assert_eq!(out, ndarray::array![[false, true, false], [true, false, false], [false, false, true]]);
        let out = feasible_support(&allowed, &[2.0, 1.0, 3.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(out, ndarray::array![[true, true, false], [true, false, false], [true, true, true]]);
        assert!(feasible_support(&allowed, &[4.0, 1.0, 1.0], &[2.0, 2.0, 2.0]).is_err());
    }

    #[test]
    fn infeasible_support_detected() {
        // Row 0 may only hold asset 0, whose cap is too small.
        let s = strengths(&[5.0, 1.0], &[1.0, 5.0]);
        let prior = HoldingsMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let mask = SupportMask::new(ndarray::array![[true, false], [true, true]]);
        let err = cross_entropy_min(&prior, &s, &mask, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap_err();
        assert!(matches!(err, Error::InfeasibleSupport { .. } | Error::MaxIterExceeded { .. }), "{err:?}");

        let mask = SupportMask::new(ndarray::array![[false, false], [true, true]]);
        assert!(matches!(
            cross_entropy_min(&prior, &s, &mask, DEFAULT_TOL, DEFAULT_MAX_ITER),
            Err(Error::InfeasibleSupport { iterations: 0, .. })
        ));
    }

    #[test]
    fn max_iter_reports_residual() {
        let s = strengths(&[3.0, 7.0], &[4.0, 6.0]);
        let prior = HoldingsMatrix::from_rows(&[[1.0, 9.0], [5.0, 1.0]]).unwrap();
        match cross_entropy_min(&prior, &s, &SupportMask::full(2, 2), 1e-14, 1) {
            Err(Error::MaxIterExceeded { iterations, residual }) => {
                assert_eq!(iterations, 1);
                assert!(residual > 1e-14);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn registry_lookup() {
        let r = reconstructors(DEFAULT_TOL, DEFAULT_MAX_ITER);
        assert_eq!(r.names(), vec!["capm", "cross-entropy"]);
        let s = strengths(&[3.0, 1.0], &[2.0, 2.0]);
        let x = r.get("CAPM").unwrap().reconstruct(&s, None, None).unwrap();
        assert_eq!(x.get(0, 0), 1.5);
        let y = r.get("cross-entropy").unwrap().reconstruct(&s, None, None).unwrap();
        assert!((y.get(0, 0) - 1.5).abs() < 1e-9);
        assert!(r.get("min-density").is_err());
    }
}

//! Lagrange-multiplier solver shared by the weighted and enhanced
//! configuration models.
//!
//! Entry `(n, k)` depends on `theta = lambda_n + eta_k` and, when its
//! presence is not fixed in advance, on `omega = rho_n + delta_k`. Each
//! sweep solves every node's own equations exactly with the other side
//! held fixed (one monotone scalar root per multiplier), which is block
//! coordinate descent on the convex dual. If the residual stops halving
//! the solver switches to least-squares Newton steps on the full system.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::numeric::{logistic, solve_decreasing};

/// Structural state of one entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Cell {
    /// Always zero.
    Zero,
    /// Plain geometric in `theta`.
    Geometric,
    /// Always positive: one plus a geometric in `theta`.
    Shifted,
    /// Positive with probability `p(theta, omega)`, then one plus a geometric.
    Free,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Fraction of each exact node update that is applied.
    pub damping: f64,
    /// Sweeps over which the residual must halve before Newton steps are tried.
    pub stall_window: usize,
}

pub(crate) struct Problem {
    pub cells: Array2<Cell>,
    pub row_strength: Vec<f64>,
    pub col_strength: Vec<f64>,
    /// Degree still to be realized by free entries; `None` without free entries.
    pub row_degree: Vec<Option<f64>>,
    pub col_degree: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct Multipliers {
    pub lambda: Vec<f64>,
    pub eta: Vec<f64>,
    pub rho: Vec<f64>,
    pub delta: Vec<f64>,
}

pub(crate) struct Solution {
    pub mult: Multipliers,
    pub iterations: usize,
    pub residual: f64,
}

/// `1 - t` for `t = exp(-theta)`.
#[inline]
fn one_minus_t(theta: f64) -> f64 {
    -(-theta).exp_m1()
}

/// Mean and positive-probability of a cell.
#[inline]
pub(crate) fn cell_moments(cell: Cell, theta: f64, omega: f64) -> (f64, f64) {
    match cell {
        Cell::Zero => (0.0, 0.0),
        Cell::Geometric => (1.0 / theta.exp_m1(), (-theta).exp()),
        Cell::Shifted => (1.0 / one_minus_t(theta), 1.0),
        Cell::Free => {
            let s = one_minus_t(theta);
            let p = free_p(theta, omega, s);
            (p / s, p)
        }
    }
}

/// `p = t u / (1 - t + t u)` in log form.
#[inline]
pub(crate) fn free_p(theta: f64, omega: f64, s: f64) -> f64 {
    logistic(-theta - omega - s.ln())
}

/// `(dm/dtheta, dm/domega, dp/dtheta, dp/domega)`.
fn cell_derivatives(cell: Cell, theta: f64, omega: f64) -> (f64, f64, f64, f64) {
    match cell {
        Cell::Zero => (0.0, 0.0, 0.0, 0.0),
        Cell::Geometric => {
            let m = 1.0 / theta.exp_m1();
            (-m * (1.0 + m), 0.0, 0.0, 0.0)
        }
        Cell::Shifted => {
            let s = one_minus_t(theta);
            (-(-theta).exp() / (s * s), 0.0, 0.0, 0.0)
        }
        Cell::Free => {
            let s = one_minus_t(theta);
            let t = (-theta).exp();
            let p = free_p(theta, omega, s);
            let q = p * (1.0 - p);
            (-p * (1.0 - p + t) / (s * s), -q / s, -q / s, -q)
        }
    }
}

/// One entry as seen from the node being updated: its cell and the other
/// node's `theta` and `omega` contributions.
#[derive(Clone, Copy)]
struct Link {
    cell: Cell,
    theta_other: f64,
    omega_other: f64,
}

/// Exact update of one node: `lambda` from the strength equation, then
/// `rho` from the degree equation.
fn update_node(
    links: &[Link],
    strength: f64,
    degree: Option<f64>,
    lambda: &mut f64,
    rho: &mut f64,
    damping: f64,
) -> bool {
    if links.is_empty() {
        return true;
    }
    let base = -links.iter().map(|l| l.theta_other).fold(f64::INFINITY, f64::min);
    let r = *rho;
    let z0 = if *lambda - base > 0.0 { (*lambda - base).ln() } else { 0.0 };
    let strength_gap = |z: f64| {
        let own = base + z.exp();
        let total: f64 = links.iter().map(|l| cell_moments(l.cell, own + l.theta_other, r + l.omega_other).0).sum();
        total / strength - 1.0
    };
    let Some(z) = solve_decreasing(strength_gap, z0, 1e-15) else {
        return false;
    };
    let exact = base + z.exp();
    *lambda = if *lambda > base { *lambda + damping * (exact - *lambda) } else { exact };

    if let Some(target) = degree {
        let own = *lambda;
        let degree_gap = |w: f64| {
            let total: f64 = links
                .iter()
                .filter(|l| l.cell == Cell::Free)
                .map(|l| {
                    let theta = own + l.theta_other;
                    free_p(theta, w + l.omega_other, one_minus_t(theta))
                })
                .sum();
            total / target - 1.0
        };
        let Some(w) = solve_decreasing(degree_gap, r, 1e-15) else {
            return false;
        };
        *rho = r + damping * (w - r);
    }
    true
}

impl Problem {
    fn dims(&self) -> (usize, usize) {
        self.cells.dim()
    }

    pub fn row_active(&self, n: usize) -> bool {
        self.cells.row(n).iter().any(|c| *c != Cell::Zero)
    }

    pub fn col_active(&self, k: usize) -> bool {
        self.cells.column(k).iter().any(|c| *c != Cell::Zero)
    }

    /// Largest relative violation over all strength and degree equations.
    pub fn residual(&self, m: &Multipliers) -> f64 {
        let (n_rows, n_cols) = self.dims();
        let mut row_s = vec![0.0; n_rows];
        let mut col_s = vec![0.0; n_cols];
        let mut row_d = vec![0.0; n_rows];
        let mut col_d = vec![0.0; n_cols];
        for ((n, k), &cell) in self.cells.indexed_iter() {
            if cell == Cell::Zero {
                continue;
            }
            let (mean, p) = cell_moments(cell, m.lambda[n] + m.eta[k], m.rho[n] + m.delta[k]);
            row_s[n] += mean;
            col_s[k] += mean;
            if cell == Cell::Free {
                row_d[n] += p;
                col_d[k] += p;
            }
        }
        let mut worst: f64 = 0.0;
        let mut check = |got: f64, want: f64| {
            let r = (got - want).abs() / want;
            worst = if r.is_nan() { f64::INFINITY } else { worst.max(r) };
        };
        for n in 0..n_rows {
            if self.row_strength[n] > 0.0 {
                check(row_s[n], self.row_strength[n]);
            }
            if let Some(d) = self.row_degree[n] {
                check(row_d[n], d);
            }
        }
        for k in 0..n_cols {
            if self.col_strength[k] > 0.0 {
                check(col_s[k], self.col_strength[k]);
            }
            if let Some(d) = self.col_degree[k] {
                check(col_d[k], d);
            }
        }
        worst
    }

    fn sweep(&self, m: &mut Multipliers, damping: f64) -> bool {
        let (n_rows, n_cols) = self.dims();
        let mut links = Vec::with_capacity(n_rows.max(n_cols));
        for n in 0..n_rows {
            links.clear();
            for k in 0..n_cols {
                let cell = self.cells[[n, k]];
                if cell != Cell::Zero {
                    links.push(Link { cell, theta_other: m.eta[k], omega_other: m.delta[k] });
                }
            }
            if !update_node(&links, self.row_strength[n], self.row_degree[n], &mut m.lambda[n], &mut m.rho[n], damping)
            {
                return false;
            }
        }
        for k in 0..n_cols {
            links.clear();
            for n in 0..n_rows {
                let cell = self.cells[[n, k]];
                if cell != Cell::Zero {
                    links.push(Link { cell, theta_other: m.lambda[n], omega_other: m.rho[n] });
                }
            }
            if !update_node(&links, self.col_strength[k], self.col_degree[k], &mut m.eta[k], &mut m.delta[k], damping) {
                return false;
            }
        }
        self.regauge(m);
        true
    }

    /// Shifts multipliers between the two sides so the smallest active bank
    /// multiplier is zero; entry laws are unchanged.
    fn regauge(&self, m: &mut Multipliers) {
        let (n_rows, n_cols) = self.dims();
        let rows: Vec<usize> = (0..n_rows).filter(|&n| self.row_active(n)).collect();
        let cols: Vec<usize> = (0..n_cols).filter(|&k| self.col_active(k)).collect();
        let c = rows.iter().map(|&n| m.lambda[n]).fold(f64::INFINITY, f64::min);
        if c.is_finite() {
            rows.iter().for_each(|&n| m.lambda[n] -= c);
            cols.iter().for_each(|&k| m.eta[k] += c);
        }
        let c = (0..n_rows).filter(|&n| self.row_degree[n].is_some()).map(|n| m.rho[n]).fold(f64::INFINITY, f64::min);
        if c.is_finite() {
            (0..n_rows).filter(|&n| self.row_degree[n].is_some()).for_each(|n| m.rho[n] -= c);
            (0..n_cols).filter(|&k| self.col_degree[k].is_some()).for_each(|k| m.delta[k] += c);
        }
    }

    fn valid(&self, m: &Multipliers) -> bool {
        self.cells.indexed_iter().all(|((n, k), &c)| {
            c == Cell::Zero || (m.lambda[n] + m.eta[k] > 0.0 && (m.rho[n] + m.delta[k]).is_finite())
        })
    }

    /// One least-squares Newton step with backtracking; returns whether the
    /// residual decreased.
    fn newton_step(&self, m: &mut Multipliers) -> bool {
        let (n_rows, n_cols) = self.dims();
        // Variable and equation layout: lambda, eta, rho, delta.
        let mut var = Vec::new();
        let mut lam_ix = vec![usize::MAX; n_rows];
        let mut eta_ix = vec![usize::MAX; n_cols];
        let mut rho_ix = vec![usize::MAX; n_rows];
        let mut del_ix = vec![usize::MAX; n_cols];
        for n in 0..n_rows {
            if self.row_active(n) {
                lam_ix[n] = var.len();
                var.push(0u8);
            }
        }
        for k in 0..n_cols {
            if self.col_active(k) {
                eta_ix[k] = var.len();
                var.push(1);
            }
        }
        for n in 0..n_rows {
            if self.row_degree[n].is_some() {
                rho_ix[n] = var.len();
                var.push(2);
            }
        }
        for k in 0..n_cols {
            if self.col_degree[k].is_some() {
                del_ix[k] = var.len();
                var.push(3);
            }
        }
        let dim = var.len();
        let mut jac = DMatrix::<f64>::zeros(dim, dim);
        let mut f = DVector::<f64>::zeros(dim);
        for ((n, k), &cell) in self.cells.indexed_iter() {
            if cell == Cell::Zero {
                continue;
            }
            let theta = m.lambda[n] + m.eta[k];
            let omega = m.rho[n] + m.delta[k];
            let (mean, p) = cell_moments(cell, theta, omega);
            let (dm_t, dm_w, dp_t, dp_w) = cell_derivatives(cell, theta, omega);
            let (rs, cs) = (self.row_strength[n], self.col_strength[k]);
            f[lam_ix[n]] += mean / rs;
            f[eta_ix[k]] += mean / cs;
            for (eq, scale) in [(lam_ix[n], rs), (eta_ix[k], cs)] {
                jac[(eq, lam_ix[n])] += dm_t / scale;
                jac[(eq, eta_ix[k])] += dm_t / scale;
                if cell == Cell::Free {
                    jac[(eq, rho_ix[n])] += dm_w / scale;
                    jac[(eq, del_ix[k])] += dm_w / scale;
                }
            }
            if cell == Cell::Free {
                let (rd, cd) = (self.row_degree[n].unwrap(), self.col_degree[k].unwrap());
                f[rho_ix[n]] += p / rd;
                f[del_ix[k]] += p / cd;
                for (eq, scale) in [(rho_ix[n], rd), (del_ix[k], cd)] {
                    jac[(eq, lam_ix[n])] += dp_t / scale;
                    jac[(eq, eta_ix[k])] += dp_t / scale;
                    jac[(eq, rho_ix[n])] += dp_w / scale;
                    jac[(eq, del_ix[k])] += dp_w / scale;
                }
            }
        }
        for v in f.iter_mut() {
            *v -= 1.0;
        }
        // Column scaling, then a pseudo-inverse solve (the gauge directions
        // are in the null space).
        let norms: Vec<f64> = (0..dim).map(|j| jac.column(j).norm().max(1e-300)).collect();
        for j in 0..dim {
            jac.column_mut(j).scale_mut(1.0 / norms[j]);
        }
        let svd = jac.svd(true, true);
        let cutoff = svd.singular_values.max() * 1e-12;
        let Ok(step) = svd.solve(&(-&f), cutoff) else {
            return false;
        };
        let step: Vec<f64> = (0..dim).map(|j| step[j] / norms[j]).collect();

        let before = self.residual(m);
        let mut alpha = 1.0;
        for _ in 0..40 {
            let mut trial = m.clone();
            for n in 0..n_rows {
                if lam_ix[n] != usize::MAX {
                    trial.lambda[n] += alpha * step[lam_ix[n]];
                }
                if rho_ix[n] != usize::MAX {
                    trial.rho[n] += alpha * step[rho_ix[n]];
                }
            }
            for k in 0..n_cols {
                if eta_ix[k] != usize::MAX {
                    trial.eta[k] += alpha * step[eta_ix[k]];
                }
                if del_ix[k] != usize::MAX {
                    trial.delta[k] += alpha * step[del_ix[k]];
                }
            }
            if self.valid(&trial) && self.residual(&trial) < before {
                *m = trial;
                self.regauge(m);
                return true;
            }
            alpha *= 0.5;
        }
        false
    }

    /// Starting point: `exp(-lambda_n) = A_n / sqrt(L)`,
    /// `exp(-eta_k) = C_k / sqrt(L)` shifted so every `t <= 0.99`, and
    /// `exp(-rho_n) = D_n / K`, `exp(-delta_k) = D_k / N`.
    pub fn initial(&self, total: f64, row_deg_full: &[f64], col_deg_full: &[f64]) -> Multipliers {
        let (n_rows, n_cols) = self.dims();
        let root = total.sqrt();
        let mut lambda: Vec<f64> = self.row_strength.iter().map(|a| -(a / root).ln()).collect();
        let eta: Vec<f64> = self.col_strength.iter().map(|c| -(c / root).ln()).collect();
        let floor = -(0.99f64).ln();
        let min_theta = self
            .cells
            .indexed_iter()
            .filter(|(_, c)| **c != Cell::Zero)
            .map(|((n, k), _)| lambda[n] + eta[k])
            .fold(f64::INFINITY, f64::min);
        if min_theta < floor {
            let shift = floor - min_theta;
            lambda.iter_mut().for_each(|l| *l += shift);
        }
        let rho = row_deg_full.iter().map(|d| -(d / n_cols as f64).ln()).collect();
        let delta = col_deg_full.iter().map(|d| -(d / n_rows as f64).ln()).collect();
        let mut m = Multipliers { lambda, eta, rho, delta };
        // Inactive slots carry no meaning; keep them finite.
        for n in 0..n_rows {
            if !self.row_active(n) {
                m.lambda[n] = 0.0;
            }
            if self.row_degree[n].is_none() {
                m.rho[n] = 0.0;
            }
        }
        for k in 0..n_cols {
            if !self.col_active(k) {
                m.eta[k] = 0.0;
            }
            if self.col_degree[k].is_none() {
                m.delta[k] = 0.0;
            }
        }
        m
    }

    pub fn solve(&self, mut m: Multipliers, opts: &SolverOptions, name: &'static str) -> Result<Solution> {
        let mut residual = self.residual(&m);
        let mut trace = vec![residual];
        let mut iterations = 0;
        let mut newton = false;
        let (mut mark_iter, mut mark_res) = (0usize, residual);
        while residual > opts.tol {
            if iterations >= opts.max_iter {
                return Err(Error::Convergence { solver: name, iterations, residual, trace });
            }
            if newton {
                if !self.newton_step(&mut m) {
                    newton = false;
                    mark_iter = iterations;
                    mark_res = residual;
                    if !self.sweep(&mut m, opts.damping) {
                        return Err(Error::Convergence { solver: name, iterations, residual, trace });
                    }
                }
            } else if !self.sweep(&mut m, opts.damping) {
                return Err(Error::Convergence { solver: name, iterations, residual, trace });
            }
            iterations += 1;
            residual = self.residual(&m);
            trace.push(residual);
            if !newton && iterations - mark_iter >= opts.stall_window {
                if residual > 0.5 * mark_res {
                    log::debug!("{name}: residual {residual:e} stalled after {iterations} sweeps, trying Newton");
                    newton = true;
                }
                mark_iter = iterations;
                mark_res = residual;
            }
        }
        Ok(Solution { mult: m, iterations, residual })
    }
}

//! Acceptance suite. Each test prints one `criterion N ... PASS|FAIL` line
//! and fails when its criterion is not met.

use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use firesale_core::ensembles::{
    fit_bipecm, fit_bipwcm, fit_mecapm, mecapm_expected_indirect_vulnerability, mecapm_expected_systemicness,
    EntryDistribution, SolverOptions,
};
use firesale_core::evaluation::{
    capm_truth, estimator_comparison, estimators, generate_quarters, generate_scenario, mecapm_truth, relative_errors,
    EstimatorInput, ScenarioConfig,
};
use firesale_core::io::{self, Provenance};
use firesale_core::model::{degrees, marginals, HoldingsMatrix, MarketParams, StrengthSequences};
use firesale_core::monitoring::{monitor_bank, run_monitoring, MonitorConfig, Quarter};
use firesale_core::numeric::{mean_std, pairwise_sum};
use firesale_core::reconstruct::{capm_matrix, cross_entropy_min, SupportMask};
use firesale_core::riskmetrics::{risk_report, risk_report_fixed_sheet};
use firesale_core::sampling::{mc_metrics, quantile_band, sample_matrix_stream, Metric, Sampler};

fn criterion(n: u32, title: &str, f: impl FnOnce() -> Result<String, String>) {
    let outcome = f();
    let (status, detail) = match &outcome {
        Ok(d) => ("PASS", d.as_str()),
        Err(d) => ("FAIL", d.as_str()),
    };
    println!("criterion {n} [{title}]: {status} ({detail})");
    if let Err(d) = outcome {
        panic!("criterion {n} failed: {d}");
    }
}

fn within(elapsed: Duration, budget: Duration, what: &str) -> Result<(), String> {
    if elapsed > budget {
        Err(format!("{what} took {elapsed:.2?}, budget {budget:.0?}"))
    } else {
        Ok(())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn standard_market(x: &HoldingsMatrix) -> MarketParams {
    MarketParams::standard(x.asset_ids(), "cash", 1e-10, 0.01).unwrap()
}

fn random_balanced(rng: &mut ChaCha8Rng, n: usize, k: usize) -> StrengthSequences {
    let a: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..1e4)).collect();
    let c: Vec<f64> = (0..k).map(|_| rng.random_range(1.0..1e4)).collect();
    let (sa, sc) = (pairwise_sum(&a), pairwise_sum(&c));
    StrengthSequences::new(a, c.iter().map(|v| v * sa / sc).collect()).unwrap()
}

#[test]
fn criterion_01_capm_exactness() {
    criterion(1, "CAPM marginals", || {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cases: Vec<StrengthSequences> = (0..100)
            .map(|_| {
                let (n, k) = (rng.random_range(1..=500), rng.random_range(1..=20));
                random_balanced(&mut rng, n, k)
            })
            .collect();
        let start = Instant::now();
        let mut worst = 0.0f64;
        for s in &cases {
            let x = capm_matrix(s);
            for (got, want) in x.row_sums().iter().zip(s.bank_sizes()).chain(x.col_sums().iter().zip(s.asset_caps())) {
                worst = worst.max(rel(*got, *want));
            }
        }
        within(start.elapsed(), Duration::from_secs(1), "100 reconstructions")?;
        if worst > 1e-9 {
            return Err(format!("max relative marginal error {worst:e} > 1e-9"));
        }
        Ok(format!("max relative marginal error {worst:.2e}, {:.2?}", start.elapsed()))
    });
}

#[test]
fn criterion_02_cross_entropy_degeneracy() {
    criterion(2, "cross-entropy with rank-one prior", || {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let (n, k) = (rng.random_range(2..=60), rng.random_range(2..=15));
            let s = random_balanced(&mut rng, n, k);
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..100.0)).collect();
            let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..100.0)).collect();
            let prior = HoldingsMatrix::new(
                Array2::from_shape_fn((n, k), |(i, j)| u[i] * v[j]),
                s.bank_ids().to_vec(),
                s.asset_ids().to_vec(),
            )
            .unwrap();
            let fit =
                cross_entropy_min(&prior, &s, &SupportMask::full(n, k), 1e-12, 10_000).map_err(|e| e.to_string())?;
            let capm = capm_matrix(&s);
            for (a, b) in fit.matrix.entries().iter().zip(capm.entries()) {
                worst = worst.max(rel(*a, *b));
            }
        }
        if worst > 1e-8 {
            return Err(format!("max entrywise relative gap {worst:e} > 1e-8"));
        }
        Ok(format!("max entrywise relative gap {worst:.2e} over 20 instances"))
    });
}

#[test]
fn criterion_03_mecapm_closed_forms() {
    criterion(3, "MECAPM closed forms vs Monte Carlo", || {
        let start = Instant::now();
        let cfg = ScenarioConfig { n_banks: 50, n_assets: 20, ..Default::default() };
        let sc = generate_scenario(&cfg, 3).map_err(|e| e.to_string())?;
        let mkt = standard_market(&sc.holdings);
        let s = marginals(&sc.holdings).unwrap();
        let p = fit_mecapm(&s);
        let capm = capm_matrix(&s);
        let mean_gap =
            p.expected_matrix().entries().iter().zip(capm.entries()).map(|(a, b)| rel(*a, *b)).fold(0.0, f64::max);
        if mean_gap > 1e-12 {
            return Err(format!("ensemble mean differs from CAPM by {mean_gap:e}"));
        }

        let es = mecapm_expected_systemicness(&s, &sc.sheet, &mkt).map_err(|e| e.to_string())?;
        let eiv = mecapm_expected_indirect_vulnerability(&s, &sc.sheet, &mkt).map_err(|e| e.to_string())?;
        let m = 10_000;
        let batch = mc_metrics(&p, &sc.sheet, &mkt, m, 33).map_err(|e| e.to_string())?;
        let mut worst_z = 0.0f64;
        for (metric, expected) in [(Metric::Systemicness, &es.expected), (Metric::IndirectVulnerability, &eiv)] {
            let draws = batch.draws(metric);
            for (n, col) in draws.columns().into_iter().enumerate() {
                let (mean, sd) = mean_std(&col.to_vec());
                let se = sd / (m as f64).sqrt();
                let z = if se > 0.0 {
                    (mean - expected[n]).abs() / se
                } else if mean == expected[n] {
                    0.0
                } else {
                    f64::INFINITY
                };
                if z > 4.0 {
                    return Err(format!(
                        "{} of {}: MC {mean:e} vs closed form {:e}, z = {z:.2}",
                        metric.label(),
                        s.bank_ids()[n],
                        expected[n]
                    ));
                }
                worst_z = worst_z.max(z);
            }
        }

        let truth = risk_report(&capm, &sc.sheet, &mkt).map_err(|e| e.to_string())?;
        let illiquid: Vec<usize> = (0..s.n_assets()).filter(|&k| mkt.illiquidity()[k] > 0.0).collect();
        let c = s.asset_caps();
        let squares: f64 = illiquid.iter().map(|&k| c[k] * c[k]).sum();
        let mut worst_gap = 0.0f64;
        for n in 0..s.n_banks() {
            let lhs = (es.expected[n] - truth.systemicness[n]) / truth.systemicness[n];
            let rhs: f64 = illiquid.iter().map(|&k| c[k] * (capm.get(n, k) + 1.0)).sum::<f64>() / squares;
            worst_gap = worst_gap.max(rel(lhs, rhs));
        }
        if worst_gap > 1e-10 {
            return Err(format!("gap identity off by {worst_gap:e}"));
        }
        within(start.elapsed(), Duration::from_secs(30), "closed forms and 10^4 samples")?;
        Ok(format!("max |z| {worst_z:.2} over 100 bank metrics, gap identity {worst_gap:.1e}, {:.2?}", start.elapsed()))
    });
}

#[test]
fn criterion_04_bipwcm_fit() {
    criterion(4, "BIPWCM fit and sampled marginals", || {
        let cfg = ScenarioConfig { n_banks: 200, n_assets: 20, ..Default::default() };
        let s = marginals(&generate_scenario(&cfg, 4).map_err(|e| e.to_string())?.holdings).unwrap();
        let start = Instant::now();
        let p = fit_bipwcm(&s, &SolverOptions::with_tol(1e-8)).map_err(|e| e.to_string())?;
        let fit_time = start.elapsed();
        within(fit_time, Duration::from_secs(10), "fit")?;

        let (phi, xi) = (p.phi().unwrap(), p.xi().unwrap());
        let mean = |n: usize, k: usize| {
            let t = phi[n].unwrap() * xi[k].unwrap();
            t / (1.0 - t)
        };
        let (a, c) = (s.bank_sizes(), s.asset_caps());
        let mut residual = 0.0f64;
        for n in 0..a.len() {
            residual = residual.max(((0..c.len()).map(|k| mean(n, k)).sum::<f64>() - a[n]).abs() / a[n]);
        }
        for k in 0..c.len() {
            residual = residual.max(((0..a.len()).map(|n| mean(n, k)).sum::<f64>() - c[k]).abs() / c[k]);
        }
        if residual > 1e-8 || p.iterations() > 100_000 {
            return Err(format!("residual {residual:e} after {} iterations", p.iterations()));
        }

        let m = 10_000;
        let start = Instant::now();
        let sampler = Sampler::new(&p, 44);
        let sums: Vec<(Vec<f64>, Vec<f64>)> = (0..m as u64)
            .into_par_iter()
            .map(|i| {
                let x = sampler.sample(i);
                (x.row_sums(), x.col_sums())
            })
            .collect();
        within(start.elapsed(), Duration::from_secs(60), "sampling")?;
        let mut worst_z = 0.0f64;
        for (side, target) in [(0, a), (1, c)] {
            for (j, want) in target.iter().enumerate() {
                let draws: Vec<f64> = sums.iter().map(|(r, col)| if side == 0 { r[j] } else { col[j] }).collect();
                let (mu, sd) = mean_std(&draws);
                let z = (mu - want).abs() / (sd / (m as f64).sqrt());
                if z > 4.0 {
                    return Err(format!("sampled marginal {j} (side {side}) mean {mu} vs {want}, z = {z:.2}"));
                }
                worst_z = worst_z.max(z);
            }
        }
        Ok(format!(
            "residual {residual:.1e} in {} iterations, fit {fit_time:.2?}, sampling {:.2?}, max |z| {worst_z:.2}",
            p.iterations(),
            start.elapsed()
        ))
    });
}

#[test]
fn criterion_05_bipecm_fit() {
    criterion(5, "BIPECM fit and edge probabilities", || {
        let start = Instant::now();
        let cfg = ScenarioConfig { n_banks: 50, n_assets: 10, ..Default::default() };
        let x = generate_scenario(&cfg, 5).map_err(|e| e.to_string())?.holdings;
        let (s, d) = (marginals(&x).unwrap(), degrees(&x, 0.0));
        let p = fit_bipecm(&s, &d, &SolverOptions::with_tol(1e-6)).map_err(|e| e.to_string())?;
        let (phi, xi, psi, gamma) = (p.phi().unwrap(), p.xi().unwrap(), p.psi().unwrap(), p.gamma().unwrap());
        let (n_banks, n_assets) = (s.n_banks(), s.n_assets());
        let law = Array2::from_shape_fn((n_banks, n_assets), |(n, k)| match (phi[n], xi[k], psi[n], gamma[k]) {
            (Some(f), Some(g), Some(h), Some(q)) => {
                let (t, u) = (f * g, h * q);
                (t * u / ((1.0 - t) * (1.0 - t * (1.0 - u))), t * u / (1.0 - t * (1.0 - u)))
            }
            _ => {
                let e = p.entry_distribution(n, k).unwrap();
                (e.mean(), e.p_positive())
            }
        });
        let mut fam = [0.0f64; 4];
        for n in 0..n_banks {
            let (m, q): (f64, f64) = (0..n_assets).map(|k| law[(n, k)]).fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
            fam[0] = fam[0].max((m - s.bank_sizes()[n]).abs() / s.bank_sizes()[n]);
            fam[2] = fam[2].max((q - d.bank_degrees()[n] as f64).abs() / d.bank_degrees()[n] as f64);
        }
        for k in 0..n_assets {
            let (m, q): (f64, f64) = (0..n_banks).map(|n| law[(n, k)]).fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
            fam[1] = fam[1].max((m - s.asset_caps()[k]).abs() / s.asset_caps()[k]);
            fam[3] = fam[3].max((q - d.asset_degrees()[k] as f64).abs() / d.asset_degrees()[k] as f64);
        }
        if fam.iter().any(|r| *r > 1e-6) {
            return Err(format!("residual families {fam:?} exceed 1e-6"));
        }

        let m = 10_000u64;
        let sampler = Sampler::new(&p, 55);
        let counts = (0..m)
            .into_par_iter()
            .map(|i| sampler.sample(i).entries().mapv(|v| (v > 0.0) as u8 as f64))
            .reduce(|| Array2::zeros((n_banks, n_assets)), |a, b| a + b);
        let mut worst_z = 0.0f64;
        for ((n, k), c) in counts.indexed_iter() {
            let prob = law[(n, k)].1;
            let freq = c / m as f64;
            let se = (prob * (1.0 - prob) / m as f64).sqrt();
            let z = if se > 0.0 {
                (freq - prob).abs() / se
            } else if freq == prob {
                0.0
            } else {
                f64::INFINITY
            };
            if z > 4.0 {
                return Err(format!("edge ({n}, {k}): frequency {freq} vs probability {prob}, z = {z:.2}"));
            }
            worst_z = worst_z.max(z);
        }
        within(start.elapsed(), Duration::from_secs(60), "fit and 10^4 samples")?;
        Ok(format!(
            "residual families {:.1e}, max edge |z| {worst_z:.2}, {:.2?}",
            fam.iter().cloned().fold(0.0, f64::max),
            start.elapsed()
        ))
    });
}

#[test]
fn criterion_06_entry_laws() {
    criterion(6, "per-entry pmf", || {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (mut mass_err, mut moment_err) = (0.0f64, 0.0f64);
        for _ in 0..1000 {
            let (f, g, u) = (rng.random_range(0.1..0.985), rng.random_range(0.1..0.985), rng.random_range(0.01..20.0));
            let t: f64 = f * g;
            let raw_mean = t * u / ((1.0 - t) * (1.0 - t * (1.0 - u)));
            for law in [EntryDistribution::from_t_u(t, u), EntryDistribution::geometric_with_theta(-t.ln())] {
                let (mut mass, mut m1, mut m2) = (0.0, 0.0, 0.0);
                let mut x = 0u64;
                loop {
                    let q = law.pmf(x);
                    mass += q;
                    m1 += x as f64 * q;
                    m2 += (x as f64).powi(2) * q;
                    if x > 0 && q < 1e-20 {
                        break;
                    }
                    x += 1;
                }
                mass_err = mass_err.max((mass - 1.0).abs());
                let var = m2 - m1 * m1;
                moment_err = moment_err.max(rel(law.mean(), m1)).max(rel(law.variance(), var));
                if let EntryDistribution::ZeroInflated { .. } = law {
                    moment_err = moment_err.max(rel(law.mean(), raw_mean));
                }
            }
        }
        if mass_err > 1e-12 || moment_err > 1e-10 {
            return Err(format!("mass error {mass_err:e}, moment error {moment_err:e}"));
        }
        Ok(format!("mass error {mass_err:.1e}, moment error {moment_err:.1e} over 1000 triples"))
    });
}

/// Straight loops over the definitions.
fn brute_force(x: &Array2<f64>, e: &[f64], ell: &[f64], eps: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n_banks, n_assets) = x.dim();
    let a: Vec<f64> = (0..n_banks).map(|n| (0..n_assets).map(|k| x[(n, k)]).sum()).collect();
    let c: Vec<f64> = (0..n_assets).map(|k| (0..n_banks).map(|n| x[(n, k)]).sum()).collect();
    let total_e: f64 = e.iter().sum();
    let b: Vec<f64> = (0..n_banks).map(|n| a[n] / e[n] - 1.0).collect();
    let w = |n: usize, k: usize| x[(n, k)] / a[n];
    let r: Vec<f64> = (0..n_banks).map(|n| (0..n_assets).map(|k| w(n, k) * eps[k]).sum()).collect();
    let gamma: Vec<f64> = (0..n_banks).map(|n| (0..n_assets).map(|k| c[k] * ell[k] * w(n, k)).sum()).collect();
    let s: Vec<f64> = (0..n_banks).map(|n| gamma[n] * a[n] / total_e * b[n] * r[n]).collect();
    let iv: Vec<f64> = (0..n_banks)
        .map(|n| {
            let inner: f64 = (0..n_assets)
                .map(|k| ell[k] * w(n, k) * (0..n_banks).map(|m| w(m, k) * a[m] * b[m] * r[m]).sum::<f64>())
                .sum();
            (1.0 + b[n]) * inner
        })
        .collect();
    (gamma, s, iv)
}

#[test]
fn criterion_07_metric_oracles() {
    criterion(7, "metric oracles", || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst = 0.0f64;
        for case in 0..50 {
            let x =
                Array2::from_shape_fn((10, 8), |_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..1e3) });
            let holdings = HoldingsMatrix::new(
                x.clone(),
                (0..10).map(|i| format!("b{i}")).collect(),
                (0..8).map(|i| format!("a{i}")).collect(),
            )
            .unwrap();
            let a = holdings.row_sums();
            if a.iter().any(|v| *v == 0.0) {
                continue;
            }
            let e: Vec<f64> = a.iter().map(|v| v / rng.random_range(1.5..20.0)).collect();
            let ell: Vec<f64> = (0..8).map(|_| rng.random_range(1e-11..1e-9)).collect();
            let eps: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..0.05)).collect();
            let sheet = firesale_core::BankSheet::new(a, e.clone()).unwrap();
            let mkt = MarketParams::new(ell.clone(), eps.clone()).unwrap();
            let r = risk_report(&holdings, &sheet, &mkt).map_err(|e| e.to_string())?;
            let (gamma, s, iv) = brute_force(&x, &e, &ell, &eps);
            for (got, want) in r
                .gamma
                .iter()
                .zip(&gamma)
                .chain(r.systemicness.iter().zip(&s))
                .chain(r.indirect_vulnerability.iter().zip(&iv))
            {
                worst = worst.max(rel(*got, *want));
            }
            if r.aggregate_vulnerability.to_bits() != pairwise_sum(&r.systemicness).to_bits() {
                return Err(format!("case {case}: AV is not the pairwise sum of S"));
            }
            worst = worst.max(rel(r.aggregate_vulnerability, s.iter().sum()));
        }
        if worst > 1e-12 {
            return Err(format!("max relative deviation {worst:e}"));
        }
        Ok(format!("max relative deviation {worst:.1e} over 50 instances, AV bit-equal to the pairwise sum"))
    });
}

#[test]
fn criterion_08_monitoring_calibration() {
    criterion(8, "monitoring flag rate", || {
        let start = Instant::now();
        let cfg = ScenarioConfig { n_banks: 50, n_assets: 20, ..Default::default() };
        let sc = generate_scenario(&cfg, 8).map_err(|e| e.to_string())?;
        let mkt = standard_market(&sc.holdings);
        let p = fit_mecapm(&marginals(&sc.holdings).unwrap());
        let bank = p.bank_ids()[0].clone();
        let trials = 1000u64;
        let flags: Vec<bool> = (0..trials)
            .map(|t| {
                let batch = mc_metrics(&p, &sc.sheet, &mkt, 1000, 10_000 + t).unwrap();
                let band = quantile_band(&batch, Metric::Systemicness, 0.05, 0.95).unwrap();
                let observed = sample_matrix_stream(&p, 8, t);
                let report = risk_report_fixed_sheet(&observed, &sc.sheet, &mkt).unwrap();
                let series = vec![("q".to_string(), report.systemicness[0])];
                monitor_bank(&bank, &series, "q", &band, &[]).unwrap().records[0].flag
            })
            .collect();
        let rate = flags.iter().filter(|f| **f).count() as f64 / trials as f64;
        within(start.elapsed(), Duration::from_secs(300), "1000 trials")?;
        if !(0.023..=0.077).contains(&rate) {
            return Err(format!("flag rate {rate}"));
        }
        Ok(format!("flag rate {:.1}% over {trials} trials, {:.2?}", rate * 100.0, start.elapsed()))
    });
}

#[test]
fn criterion_09_estimator_pipeline() {
    criterion(9, "estimator comparison", || {
        let cfg = ScenarioConfig { n_banks: 200, n_assets: 20, sparsity: 0.5, ..Default::default() };
        let sc = generate_scenario(&cfg, 9).map_err(|e| e.to_string())?;
        let mkt = standard_market(&sc.holdings);
        let all = ["capm", "mecapm", "bipwcm", "bipecm"];
        let outcomes =
            estimator_comparison(&sc.holdings, &sc.sheet, &mkt, &all, 1000, 90).map_err(|e| e.to_string())?;
        for o in &outcomes {
            if let Some(f) = &o.failure {
                return Err(format!("{} failed: {}", o.estimator, f.message));
            }
            for r in &o.reports {
                if r.total_count() + r.excluded.len() != cfg.n_banks {
                    return Err(format!("{} {}: counts do not add up", o.estimator, r.metric.label()));
                }
                let counts = r.quartiles.map(|q| q.count);
                if counts.iter().max().unwrap() - counts.iter().min().unwrap() > 1 {
                    return Err(format!("unbalanced quartiles {counts:?}"));
                }
            }
        }

        // Noise band: spread of the quartile medians over replicate truths.
        let replicate = |seed: u64| -> Vec<f64> {
            let (x, sheet) = mecapm_truth(&sc.holdings, &sc.sheet, seed).unwrap();
            let o = estimator_comparison(&x, &sheet, &mkt, &["mecapm"], 1, 0).unwrap();
            o[0].reports.iter().flat_map(|r| r.quartiles.map(|q| q.median)).collect()
        };
        let observed = replicate(900);
        let reps: Vec<Vec<f64>> = (0..200u64).into_par_iter().map(|i| replicate(1000 + i)).collect();
        let mut worst = 0.0f64;
        for (j, m) in observed.iter().enumerate() {
            let (_, sd) = mean_std(&reps.iter().map(|r| r[j]).collect::<Vec<_>>());
            let score = m.abs() / sd;
            if score > 4.0 {
                return Err(format!("MECAPM median error {m:.4} in slot {j} is {score:.2} noise sd from 0"));
            }
            worst = worst.max(score);
        }

        let (x, sheet) = capm_truth(&sc.holdings, &sc.sheet).map_err(|e| e.to_string())?;
        let truth = risk_report(&x, &sheet, &mkt).map_err(|e| e.to_string())?;
        let (s, d) = (marginals(&x).unwrap(), degrees(&x, 0.0));
        let input = EstimatorInput { strengths: &s, degrees: &d, sheet: &sheet, market: &mkt };
        let est = estimators().get("capm").unwrap().estimate(&input, 1, 0).map_err(|e| e.to_string())?;
        let errs = relative_errors(&est.systemicness, &truth.systemicness).map_err(|e| e.to_string())?;
        let capm_err = errs.errors.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        let via_pipeline = estimator_comparison(&x, &sheet, &mkt, &["capm"], 1, 0).map_err(|e| e.to_string())?;
        let pipeline_err =
            via_pipeline[0].reports[0].quartiles.iter().fold(0.0f64, |m, q| m.max(q.median.abs()).max(q.iqr));
        if capm_err > 1e-10 || pipeline_err > 1e-10 {
            return Err(format!("CAPM S errors {capm_err:e} (quartile stats {pipeline_err:e})"));
        }
        Ok(format!(
            "4 estimators reported, MECAPM medians within {worst:.2} noise sd of 0, CAPM S error {capm_err:.1e}"
        ))
    });
}

/// synth, fit, sample, bands, monitoring and evaluation serialized to
/// their artifact formats.
fn pipeline_artifacts(seed: u64) -> Vec<String> {
    let cfg = ScenarioConfig { n_banks: 30, n_assets: 8, ..Default::default() };
    let quarters = generate_quarters(&cfg, seed, 3).unwrap();
    let prov = Provenance::new(&serde_json::json!({ "pipeline": 1 }), Some(seed));
    let q0 = &quarters[0];
    let mkt = standard_market(&q0.holdings);
    let mut out: Vec<String> = quarters.iter().map(|q| io::holdings_csv(&q.holdings, &q.sheet, &prov)).collect();
    let s = marginals(&q0.holdings).unwrap();
    let p = fit_bipecm(&s, &degrees(&q0.holdings, 0.0), &SolverOptions::with_tol(1e-6)).unwrap();
    out.push(io::params_json(&p, &prov));
    let batch = mc_metrics(&p, &q0.sheet, &mkt, 500, seed).unwrap();
    out.push(io::sample_batch_csv(&batch, &prov));
    out.push(io::band_csv(&quantile_band(&batch, Metric::Systemicness, 0.05, 0.95).unwrap(), &prov));
    let qs: Vec<Quarter> = quarters
        .iter()
        .enumerate()
        .map(|(i, q)| Quarter { id: format!("q{i}"), holdings: q.holdings.clone(), sheet: q.sheet.clone() })
        .collect();
    let mon = MonitorConfig {
        ensemble: firesale_core::ensembles::EnsembleKind::Bipwcm,
        n_samples: 300,
        seed,
        ..Default::default()
    };
    let run = run_monitoring(&qs, &q0.holdings.bank_ids()[..5], &mkt, &mon).unwrap();
    out.push(io::monitor_csv(&run.results, &prov));
    let outcomes =
        estimator_comparison(&q0.holdings, &q0.sheet, &mkt, &["capm", "mecapm", "bipwcm", "bipecm"], 200, seed)
            .unwrap();
    out.push(io::evaluation_csv(&outcomes, &prov));
    out.push(io::evaluation_json(&outcomes, &prov));
    out
}

#[test]
fn criterion_10_determinism() {
    criterion(10, "determinism", || {
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| pipeline_artifacts(10));
        let b = many.install(|| pipeline_artifacts(10));
        if let Some(i) = (0..a.len()).find(|&i| a[i] != b[i]) {
            return Err(format!("artifact {i} differs between reruns"));
        }
        let c = pipeline_artifacts(11);
        if a[0] == c[0] {
            return Err("different seeds gave identical scenarios".into());
        }
        let bytes: usize = a.iter().map(String::len).sum();
        Ok(format!("{} artifacts, {bytes} bytes, identical on 1 and 4 threads", a.len()))
    });
}

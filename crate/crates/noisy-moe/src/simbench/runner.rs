//! Seeded Monte-Carlo benchmark over corruption levels and sample sizes.
//!
//! Each replication draws a fresh truth (covariance rotations and
//! eigenvalues are redrawn unless `freeze_truth` is set), samples labeled and
//! test data, fits the selected estimators, and records coefficient and
//! prediction errors. Per-replication failures are recorded in the report,
//! never fatal. Replications run in parallel; every unit of work derives its
//! own seed, so results are identical for any thread count.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use ndarray::s;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_moe_em, fit_moess_with_gmm, GateKind, MoeEmConfig};
use crate::error::{Error, Result};
use crate::gmm::{fit_gmm, GmmFitConfig, GmmModel};
use crate::moe::{fit_noisy_moe_with_gmm, NoisyMoeConfig};
use crate::rng::derive_seed;
use crate::simbench::generator::{make_truth, sample_dataset, SimulationConfig};
use crate::simbench::metrics::{coefficient_mse, relative_prediction_error};

/// The estimators the benchmark can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    NoisySs,
    MoeSs,
    MoeLine,
    MoeQuad,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::NoisySs, Method::MoeSs, Method::MoeLine, Method::MoeQuad];

    pub fn name(self) -> &'static str {
        match self {
            Method::NoisySs => "noisyss",
            Method::MoeSs => "moess",
            Method::MoeLine => "moeline",
            Method::MoeQuad => "moequad",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "noisyss" => Ok(Method::NoisySs),
            "moess" => Ok(Method::MoeSs),
            "moeline" => Ok(Method::MoeLine),
            "moequad" => Ok(Method::MoeQuad),
            other => Err(Error::InvalidConfig(format!(
                "unknown method '{other}'; expected one of noisyss, moess, moeline, moequad"
            ))),
        }
    }
}

/// One grid point: a corruption setting and a labeled-sample size.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Scenario {
    pub p0: f64,
    pub n_labeled: usize,
}

/// Benchmark settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub base: SimulationConfig,
    pub scenarios: Vec<Scenario>,
    pub methods: Vec<Method>,
    pub reps: usize,
    pub seed: u64,
    /// Draw the truth once per scenario instead of once per replication.
    pub freeze_truth: bool,
    /// Retaining fraction for the trimmed expert fits.
    pub alpha: f64,
    /// Efficiency reweighting for the trimmed expert fits.
    pub reweight: bool,
}

impl BenchConfig {
    pub fn new(base: SimulationConfig, scenarios: Vec<Scenario>, methods: Vec<Method>, reps: usize, seed: u64) -> Self {
        BenchConfig {
            base,
            scenarios,
            methods,
            reps,
            seed,
            freeze_truth: false,
            alpha: 0.5,
            reweight: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::InvalidConfig("benchmark: no scenarios".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("benchmark: no methods".into()));
        }
        if self.reps == 0 {
            return Err(Error::InvalidConfig("benchmark: reps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-method results of one replication. Failures leave the metrics empty
/// and store the error text.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MethodOutcome {
    /// Permutation-matched mean squared coefficient error against the truth.
    pub mse: Option<f64>,
    pub rpe: Option<f64>,
    pub error: Option<String>,
    /// Wall-clock fit+predict time. Kept out of the CSV so identical seeds
    /// produce identical bytes.
    pub elapsed_ms: u64,
}

/// One replication row: scenario coordinates plus per-method outcomes in the
/// order of `BenchConfig::methods`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub scenario: usize,
    pub p0: f64,
    pub corruption_pct: f64,
    pub n_labeled: usize,
    pub rep: usize,
    pub seed: u64,
    pub outcomes: Vec<MethodOutcome>,
}

/// Mean, standard error (sample sd over sqrt of count), and counts for one
/// scenario-method cell.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SummaryCell {
    pub mean: f64,
    pub se: f64,
    pub successes: usize,
    pub failures: usize,
}

/// All replication reports plus the grid they were run on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkResults {
    pub scenarios: Vec<Scenario>,
    pub methods: Vec<Method>,
    pub reports: Vec<ReplicationReport>,
}

impl BenchmarkResults {
    /// Summarizes one metric into a `[scenario][method]` grid of cells.
    pub fn summarize<F: Fn(&MethodOutcome) -> Option<f64>>(
        &self,
        metric: F,
    ) -> Vec<Vec<Option<SummaryCell>>> {
        let mut grid = vec![vec![None; self.methods.len()]; self.scenarios.len()];
        for (s, row) in grid.iter_mut().enumerate() {
            for (m, cell) in row.iter_mut().enumerate() {
                let values: Vec<f64> = self
                    .reports
                    .iter()
                    .filter(|r| r.scenario == s)
                    .filter_map(|r| metric(&r.outcomes[m]))
                    .collect();
                let failures = self
                    .reports
                    .iter()
                    .filter(|r| r.scenario == s && r.outcomes[m].error.is_some())
                    .count();
                if values.is_empty() {
                    continue;
                }
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (n - 1.0).max(1.0);
                *cell = Some(SummaryCell {
                    mean,
                    se: (var / n).sqrt(),
                    successes: values.len(),
                    failures,
                });
            }
        }
        grid
    }

    pub fn mse_summary(&self) -> Vec<Vec<Option<SummaryCell>>> {
        self.summarize(|o| o.mse)
    }

    pub fn rpe_summary(&self) -> Vec<Vec<Option<SummaryCell>>> {
        self.summarize(|o| o.rpe)
    }

    /// One CSV row per replication; per-method metric columns. Numbers use
    /// shortest round-trip formatting, so reruns with the same seed and
    /// thread count produce identical bytes.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec![
            "scenario".to_string(),
            "p0".to_string(),
            "corruption_pct".to_string(),
            "n_labeled".to_string(),
            "rep".to_string(),
            "seed".to_string(),
        ];
        for m in &self.methods {
            header.push(format!("{m}_mse"));
            header.push(format!("{m}_rpe"));
            header.push(format!("{m}_error"));
        }
        writeln!(w, "{}", header.join(","))?;
        for r in &self.reports {
            let mut fields = vec![
                r.scenario.to_string(),
                fmt_f64(r.p0),
                fmt_f64(r.corruption_pct),
                r.n_labeled.to_string(),
                r.rep.to_string(),
                r.seed.to_string(),
            ];
            for o in &r.outcomes {
                fields.push(o.mse.map(fmt_f64).unwrap_or_default());
                fields.push(o.rpe.map(fmt_f64).unwrap_or_default());
                fields.push(csv_escape(o.error.as_deref().unwrap_or("")));
            }
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    /// Human-readable summary: one table per metric in the benchmark-table
    /// layout (scenarios as rows, methods as columns, `mean (se)` cells).
    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        let vary_n = self
            .scenarios
            .windows(2)
            .any(|w| w[0].n_labeled != w[1].n_labeled);
        let row_label = |s: &Scenario| {
            if vary_n {
                format!("n={}", s.n_labeled)
            } else {
                format!("{:.0}%", 100.0 * (1.0 - s.p0))
            }
        };
        for (title, grid) in [
            ("MSE of expert coefficients", self.mse_summary()),
            ("RPE (test error / oracle error)", self.rpe_summary()),
        ] {
            out.push_str(title);
            out.push('\n');
            out.push_str(&format!("{:>12}", if vary_n { "n" } else { "noise" }));
            for m in &self.methods {
                out.push_str(&format!("{:>22}", m.name()));
            }
            out.push('\n');
            for (s, scenario) in self.scenarios.iter().enumerate() {
                out.push_str(&format!("{:>12}", row_label(scenario)));
                for cell in &grid[s] {
                    match cell {
                        Some(c) => {
                            let mut txt = format!("{:.3} ({:.3})", c.mean, c.se);
                            if c.failures > 0 {
                                txt.push_str(&format!(" [{} failed]", c.failures));
                            }
                            out.push_str(&format!("{txt:>22}"));
                        }
                        None => out.push_str(&format!("{:>22}", "-")),
                    }
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn csv_escape(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Runs the full grid; failures inside a replication are recorded in its
/// report rather than aborting the run.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchmarkResults> {
    cfg.validate()?;
    cfg.base.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.scenarios.len())
        .flat_map(|s| (0..cfg.reps).map(move |r| (s, r)))
        .collect();
    let reports: Vec<ReplicationReport> = jobs
        .into_par_iter()
        .map(|(scenario, rep)| run_replication(cfg, scenario, rep))
        .collect();
    Ok(BenchmarkResults {
        scenarios: cfg.scenarios.clone(),
        methods: cfg.methods.clone(),
        reports,
    })
}

fn failed_report(cfg: &BenchConfig, scenario: usize, rep: usize, seed: u64, message: String) -> ReplicationReport {
    let s = cfg.scenarios[scenario];
    ReplicationReport {
        scenario,
        p0: s.p0,
        corruption_pct: 100.0 * (1.0 - s.p0),
        n_labeled: s.n_labeled,
        rep,
        seed,
        outcomes: cfg
            .methods
            .iter()
            .map(|_| MethodOutcome {
                error: Some(message.clone()),
                ..Default::default()
            })
            .collect(),
    }
}

fn run_replication(cfg: &BenchConfig, scenario: usize, rep: usize) -> ReplicationReport {
    let s = cfg.scenarios[scenario];
    // The replication seed does not depend on the scenario: grid points of
    // one replication share the truth draw and (via the sequential sampler)
    // nested data, so comparisons across the grid are paired.
    let rep_seed = derive_seed(cfg.seed, rep as u64);
    let truth_seed = if cfg.freeze_truth {
        derive_seed(cfg.seed, 0xFFFF_FFFF)
    } else {
        derive_seed(rep_seed, 2)
    };
    let sim = SimulationConfig {
        p0: s.p0,
        n_labeled: s.n_labeled,
        seed: truth_seed,
        ..cfg.base.clone()
    };
    let truth = match make_truth(&sim) {
        Ok(t) => t,
        Err(e) => return failed_report(cfg, scenario, rep, rep_seed, e.to_string()),
    };
    let labeled = sample_dataset(&truth, s.n_labeled, derive_seed(rep_seed, 3));
    let test = sample_dataset(&truth, sim.n_test, derive_seed(rep_seed, 4));
    let truth_coefs = truth.coefficient_matrix();
    let ytrue_mean = truth.predict_batch(&test.x.view());

    // The covariate mixture shared by the semi-supervised methods.
    let needs_gmm = cfg
        .methods
        .iter()
        .any(|m| matches!(m, Method::NoisySs | Method::MoeSs));
    let gmm: Option<std::result::Result<GmmModel, String>> = if !needs_gmm {
        None
    } else if sim.oracle_x {
        Some(Ok(truth.gmm.clone()))
    } else {
        let unlabeled = sample_dataset(&truth, sim.n_unlabeled, derive_seed(rep_seed, 5));
        let mut pool = ndarray::Array2::zeros((
            labeled.x.nrows() + unlabeled.x.nrows(),
            labeled.x.ncols(),
        ));
        pool.slice_mut(s![..labeled.x.nrows(), ..]).assign(&labeled.x);
        pool.slice_mut(s![labeled.x.nrows().., ..]).assign(&unlabeled.x);
        let gmm_cfg = GmmFitConfig {
            k: sim.k,
            seed: derive_seed(rep_seed, 6),
            ..GmmFitConfig::default()
        };
        Some(fit_gmm(&pool.view(), &gmm_cfg).map_err(|e| e.to_string()))
    };

    let outcomes = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(m_idx, &method)| {
            let started = Instant::now();
            let fit_result: std::result::Result<(ndarray::Array2<f64>, ndarray::Array1<f64>), String> =
                match method {
                    Method::NoisySs => match &gmm {
                        Some(Ok(g)) => {
                            let moe_cfg = NoisyMoeConfig {
                                alpha: cfg.alpha,
                                reweight: cfg.reweight,
                                seed: derive_seed(rep_seed, 10 + m_idx as u64),
                                ..NoisyMoeConfig::new(sim.k)
                            };
                            fit_noisy_moe_with_gmm(
                                &labeled.x.view(),
                                &labeled.y.view(),
                                g.clone(),
                                &moe_cfg,
                            )
                            .map(|model| {
                                (model.coefficient_matrix(), model.predict_batch(&test.x.view()))
                            })
                            .map_err(|e| e.to_string())
                        }
                        Some(Err(e)) => Err(format!("mixture fit failed: {e}")),
                        None => unreachable!("gmm computed when needed"),
                    },
                    Method::MoeSs => match &gmm {
                        Some(Ok(g)) => fit_moess_with_gmm(
                            &labeled.x.view(),
                            &labeled.y.view(),
                            g.clone(),
                        )
                        .map(|model| {
                            (model.coefficient_matrix(), model.predict_batch(&test.x.view()))
                        })
                        .map_err(|e| e.to_string()),
                        Some(Err(e)) => Err(format!("mixture fit failed: {e}")),
                        None => unreachable!("gmm computed when needed"),
                    },
                    Method::MoeLine | Method::MoeQuad => {
                        let kind = if method == Method::MoeLine {
                            GateKind::Linear
                        } else {
                            GateKind::Quadratic
                        };
                        let em_cfg = MoeEmConfig {
                            seed: derive_seed(rep_seed, 10 + m_idx as u64),
                            ..MoeEmConfig::default()
                        };
                        fit_moe_em(&labeled.x.view(), &labeled.y.view(), sim.k, kind, &em_cfg)
                            .map(|model| {
                                (model.coefficient_matrix(), model.predict_batch(&test.x.view()))
                            })
                            .map_err(|e| e.to_string())
                    }
                };
            let elapsed_ms = started.elapsed().as_millis() as u64;
            match fit_result {
                Ok((coefs, yhat)) => {
                    let mse = coefficient_mse(&coefs.view(), &truth_coefs.view()).ok();
                    let rpe = relative_prediction_error(
                        &test.y.view(),
                        &yhat.view(),
                        &ytrue_mean.view(),
                    )
                    .ok();
                    MethodOutcome {
                        mse,
                        rpe,
                        error: None,
                        elapsed_ms,
                    }
                }
                Err(e) => MethodOutcome {
                    error: Some(e),
                    elapsed_ms,
                    ..Default::default()
                },
            }
        })
        .collect();

    ReplicationReport {
        scenario,
        p0: s.p0,
        corruption_pct: 100.0 * (1.0 - s.p0),
        n_labeled: s.n_labeled,
        rep,
        seed: rep_seed,
        outcomes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(reps: usize) -> BenchConfig {
        let base = SimulationConfig {
            k: 3,
            p: 2,
            n_test: 500,
            ..Default::default()
        };
        BenchConfig::new(
            base,
            vec![Scenario {
                p0: 0.8,
                n_labeled: 300,
            }],
            vec![Method::NoisySs, Method::MoeSs],
            reps,
            77,
        )
    }

    #[test]
    fn single_rep_summary_equals_report() {
        let cfg = tiny_config(1);
        let results = run_benchmark(&cfg).unwrap();
        assert_eq!(results.reports.len(), 1);
        let grid = results.mse_summary();
        let report_mse = results.reports[0].outcomes[0].mse.unwrap();
        let cell = grid[0][0].unwrap();
        assert_eq!(cell.mean, report_mse);
        assert_eq!(cell.se, 0.0);
        assert_eq!(cell.successes, 1);
    }

    #[test]
    fn rerun_with_same_seed_is_byte_identical() {
        let cfg = tiny_config(2);
        let a = run_benchmark(&cfg).unwrap();
        let b = run_benchmark(&cfg).unwrap();
        let mut csv_a = Vec::new();
        let mut csv_b = Vec::new();
        a.write_csv(&mut csv_a).unwrap();
        b.write_csv(&mut csv_b).unwrap();
        assert_eq!(csv_a, csv_b);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("bogus".parse::<Method>().is_err());
    }

    #[test]
    fn csv_has_header_and_one_row_per_replication() {
        let cfg = tiny_config(3);
        let results = run_benchmark(&cfg).unwrap();
        let mut buf = Vec::new();
        results.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 3);
        assert!(lines[0].starts_with("scenario,p0,corruption_pct,n_labeled,rep,seed"));
        assert!(lines[0].contains("noisyss_mse"));
        assert!(lines[0].contains("moess_rpe"));
    }
}

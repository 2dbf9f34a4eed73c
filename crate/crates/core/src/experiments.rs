//! Monte-Carlo comparison of optimizers on randomly generated instances.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, run_csv, write_json, write_text};
use crate::model::{kalman, loss_oe, stationary, subopt_against, Filter, OEInstance};
use crate::numerics::{spectral_abscissa, sym_eig, Mat};
use crate::optimize::{run, Algorithm, OptimizerConfig, RunResult, Termination};
use crate::rng::{Purpose, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub obs_min: f64,
    pub obs_max: f64,
    pub w1_max: f64,
    pub opt_cost_max: f64,
    /// Variance of the entrywise init perturbation.
    pub init_perturb_var: f64,
    pub init_s12_min: f64,
    pub init_s12_max: f64,
    pub init_s22_min: f64,
    pub init_s22_max: f64,
    /// Upper bound on `L_OE(K₀) / L_OE(K⋆)`.
    pub init_subopt_max: f64,
    pub max_rejections: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n: 2,
            m: 1,
            seed: 0,
            obs_min: 1e-4,
            obs_max: 1e-2,
            w1_max: 5.0,
            opt_cost_max: 1e3,
            init_perturb_var: 100.0,
            init_s12_min: 1e-5,
            init_s12_max: 1e-3,
            init_s22_min: 1e-3,
            init_s22_max: 1.0,
            init_subopt_max: 100.0,
            max_rejections: 10_000,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::Config("n and m must be positive".into()));
        }
        let pairs = [
            ("obs", self.obs_min, self.obs_max),
            ("init_s12", self.init_s12_min, self.init_s12_max),
            ("init_s22", self.init_s22_min, self.init_s22_max),
        ];
        for (name, lo, hi) in pairs {
            if !(lo > 0.0 && lo < hi) {
                return Err(Error::Config(format!("{name} bounds must satisfy 0 < min < max")));
            }
        }
        let positive = [
            self.w1_max,
            self.opt_cost_max,
            self.init_perturb_var,
            self.init_subopt_max,
        ];
        if positive.iter().any(|x| !(*x > 0.0)) || self.max_rejections == 0 {
            return Err(Error::Config("generation bounds must be positive".into()));
        }
        Ok(())
    }
}

fn draw_instance(s: &mut Stream, n: usize, m: usize) -> Result<OEInstance> {
    let r = s.normal_mat(n, n, 1.0 / (n as f64).sqrt());
    let mu = s.uniform_in(0.1, 1.0);
    let shift = spectral_abscissa(&r)? + mu;
    let a = r - Mat::identity(n, n) * shift;
    let c = s.normal_mat(m, n, 1.0);
    let mm = s.normal_mat(n, n, 1.0);
    let w1 = mm.transpose() * mm;
    OEInstance::new(a, c, Mat::identity(n, n), w1, Mat::identity(m, m))
}

/// Checks the instance rejection predicates; returns `L_OE(K⋆)` on success.
pub fn instance_accepted(cfg: &GenConfig, inst: &OEInstance) -> Option<f64> {
    inst.check_assumptions().ok()?;
    let obs = sym_eig(&inst.obs_gramian().ok()?).ok()?;
    if !(obs.min() >= cfg.obs_min && obs.min() <= cfg.obs_max) {
        return None;
    }
    if !(sym_eig(&inst.w1).ok()?.max() <= cfg.w1_max) {
        return None;
    }
    let (kstar, _) = kalman(inst).ok()?;
    let opt = loss_oe(inst, &kstar).finite()?;
    (opt <= cfg.opt_cost_max && opt > 0.0).then_some(opt)
}

/// Random instance for `trial`, drawn until the rejection predicates hold.
pub fn gen_instance(cfg: &GenConfig, trial: u64) -> Result<OEInstance> {
    cfg.validate()?;
    let mut s = Stream::new(cfg.seed, trial, Purpose::Instance);
    for _ in 0..cfg.max_rejections {
        let Ok(inst) = draw_instance(&mut s, cfg.n, cfg.m) else {
            continue;
        };
        if instance_accepted(cfg, &inst).is_some() {
            return Ok(inst);
        }
    }
    Err(Error::GenerationExhausted {
        what: "instance",
        attempts: cfg.max_rejections,
    })
}

/// Checks the initialization rejection predicates against the optimal loss.
pub fn init_accepted(cfg: &GenConfig, inst: &OEInstance, k: &Filter, opt: f64) -> bool {
    let Ok(st) = stationary(inst, k) else {
        return false;
    };
    let (s12, s22) = (st.sigma_min_12(), st.sigma_min_22());
    let Some(l) = loss_oe(inst, k).finite() else {
        return false;
    };
    (cfg.init_s12_min..=cfg.init_s12_max).contains(&s12)
        && (cfg.init_s22_min..=cfg.init_s22_max).contains(&s22)
        && l <= cfg.init_subopt_max * opt
}

/// Kalman filter plus an entrywise Gaussian perturbation, drawn until the
/// initialization predicates hold.
pub fn gen_init(cfg: &GenConfig, inst: &OEInstance, trial: u64) -> Result<Filter> {
    cfg.validate()?;
    let (kstar, _) = kalman(inst)?;
    let opt = loss_oe(inst, &kstar).to_f64();
    let std = cfg.init_perturb_var.sqrt();
    let mut s = Stream::new(cfg.seed, trial, Purpose::Init);
    for _ in 0..cfg.max_rejections {
        let k = Filter {
            a_k: &kstar.a_k + s.normal_mat(kstar.a_k.nrows(), kstar.a_k.ncols(), std),
            b_k: &kstar.b_k + s.normal_mat(kstar.b_k.nrows(), kstar.b_k.ncols(), std),
            c_k: &kstar.c_k + s.normal_mat(kstar.c_k.nrows(), kstar.c_k.ncols(), std),
        };
        if init_accepted(cfg, inst, &k, opt) {
            return Ok(k);
        }
    }
    Err(Error::GenerationExhausted {
        what: "initial filter",
        attempts: cfg.max_rejections,
    })
}

/// One optimizer run within a trial.
#[derive(Debug, Clone)]
pub struct AlgorithmRun {
    pub algorithm: Algorithm,
    pub result: std::result::Result<RunResult, String>,
    /// Normalized suboptimality of the final filter (`inf` if unstable or failed).
    pub final_subopt: f64,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trial: u64,
    /// Instance and initialization, or the reason generation failed.
    pub setup: std::result::Result<(OEInstance, Filter), String>,
    pub runs: Vec<AlgorithmRun>,
}

/// Per-iteration percentile band (10/25/50/75/90).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Band {
    pub rows: Vec<[f64; 5]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricBands {
    pub subopt_norm: Band,
    pub sigma_min_12: Band,
    pub sigma_min_22: Band,
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub gen: GenConfig,
    pub opt: OptimizerConfig,
    pub algorithms: Vec<Algorithm>,
    pub trials: Vec<TrialOutcome>,
    pub bands: BTreeMap<Algorithm, MetricBands>,
}

impl SuiteResult {
    /// Final normalized suboptimalities of `alg`, one per trial that produced a run.
    pub fn final_subopts(&self, alg: Algorithm) -> Vec<f64> {
        self.trials
            .iter()
            .flat_map(|t| t.runs.iter())
            .filter(|r| r.algorithm == alg && r.result.is_ok())
            .map(|r| r.final_subopt)
            .collect()
    }

    pub fn median_final_subopt(&self, alg: Algorithm) -> f64 {
        let mut v = self.final_subopts(alg);
        if v.is_empty() {
            return f64::NAN;
        }
        v.sort_by(f64::total_cmp);
        percentile_sorted(&v, 50.0)
    }
}

pub const PERCENTILES: [f64; 5] = [10.0, 25.0, 50.0, 75.0, 90.0];

/// Linear-interpolation percentile of sorted data.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Per-iteration percentiles across series, padding shorter series with
/// their final value.
pub fn percentile_band(series: &[Vec<f64>]) -> Band {
    let series: Vec<&Vec<f64>> = series.iter().filter(|s| !s.is_empty()).collect();
    let len = series.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut rows = Vec::with_capacity(len);
    let mut col = Vec::with_capacity(series.len());
    for i in 0..len {
        col.clear();
        col.extend(series.iter().map(|s| s[i.min(s.len() - 1)]));
        col.sort_by(f64::total_cmp);
        rows.push(PERCENTILES.map(|q| percentile_sorted(&col, q)));
    }
    Band { rows }
}

fn run_trial(gen: &GenConfig, trial: u64, algorithms: &[Algorithm], opt: &OptimizerConfig) -> TrialOutcome {
    let setup = gen_instance(gen, trial).and_then(|inst| {
        let init = gen_init(gen, &inst, trial)?;
        Ok((inst, init))
    });
    let setup = setup.map_err(|e| e.to_string());
    let mut runs = Vec::new();
    if let Ok((inst, init)) = &setup {
        let opt_loss = kalman(inst).map(|(k, _)| loss_oe(inst, &k).to_f64());
        for &algorithm in algorithms {
            let cfg = OptimizerConfig {
                algorithm,
                ..opt.clone()
            };
            let result = run(inst, init, &cfg).map_err(|e| e.to_string());
            let final_subopt = match (&result, &opt_loss) {
                (Ok(r), Ok(opt)) => subopt_against(*opt, loss_oe(inst, &r.final_filter)),
                _ => f64::INFINITY,
            };
            runs.push(AlgorithmRun {
                algorithm,
                result,
                final_subopt,
            });
        }
    }
    TrialOutcome { trial, setup, runs }
}

fn bands_for(trials: &[TrialOutcome], alg: Algorithm) -> MetricBands {
    let runs: Vec<&RunResult> = trials
        .iter()
        .flat_map(|t| t.runs.iter())
        .filter(|r| r.algorithm == alg)
        .filter_map(|r| r.result.as_ref().ok())
        .collect();
    let metric = |f: fn(&crate::optimize::IterationRecord) -> f64| {
        let series: Vec<Vec<f64>> = runs.iter().map(|r| r.records.iter().map(f).collect()).collect();
        percentile_band(&series)
    };
    MetricBands {
        subopt_norm: metric(|r| r.subopt_norm),
        sigma_min_12: metric(|r| r.sigma_min_12),
        sigma_min_22: metric(|r| r.sigma_min_22),
    }
}

/// Runs every algorithm from a shared initialization on `trials` random
/// instances. Trials run on a pool of `jobs` threads; results do not depend
/// on `jobs`.
pub fn run_suite(
    gen: &GenConfig,
    trials: u64,
    algorithms: &[Algorithm],
    opt: &OptimizerConfig,
    jobs: usize,
) -> Result<SuiteResult> {
    gen.validate()?;
    opt.validate()?;
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    if algorithms.is_empty() {
        return Err(Error::Config("at least one algorithm is required".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<TrialOutcome> = pool.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|t| run_trial(gen, t, algorithms, opt))
            .collect()
    });
    let bands = algorithms
        .iter()
        .map(|&a| (a, bands_for(&outcomes, a)))
        .collect();
    Ok(SuiteResult {
        gen: gen.clone(),
        opt: opt.clone(),
        algorithms: algorithms.to_vec(),
        trials: outcomes,
        bands,
    })
}

#[derive(Serialize)]
struct RunEntry {
    algorithm: Algorithm,
    termination: Option<Termination>,
    iters: usize,
    final_subopt: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct TrialEntry {
    trial: u64,
    error: Option<String>,
    runs: Vec<RunEntry>,
}

#[derive(Serialize)]
struct FinalStats {
    runs: usize,
    p10: f64,
    p25: f64,
    median: f64,
    p75: f64,
    p90: f64,
}

#[derive(Serialize)]
struct SuiteSummary<'a> {
    seed: u64,
    trials: usize,
    algorithms: &'a [Algorithm],
    gen_config: &'a GenConfig,
    optimizer_config: &'a OptimizerConfig,
    final_subopt: BTreeMap<String, Option<FinalStats>>,
    per_trial: Vec<TrialEntry>,
}

fn band_csv(band: &Band) -> String {
    let mut out = String::from("iter,p10,p25,p50,p75,p90\n");
    for (i, row) in band.rows.iter().enumerate() {
        out.push_str(&i.to_string());
        for v in row {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

/// Writes per-run CSVs, percentile CSVs, and `summary.json` into `dir`.
pub fn write_suite(dir: &Path, suite: &SuiteResult) -> Result<()> {
    for t in &suite.trials {
        for r in &t.runs {
            if let Ok(res) = &r.result {
                write_text(&dir.join(format!("trial_{}_{}.csv", t.trial, r.algorithm)), &run_csv(res))?;
            }
        }
    }
    for (alg, b) in &suite.bands {
        write_text(&dir.join(format!("percentiles_{alg}.csv")), &band_csv(&b.subopt_norm))?;
        write_text(
            &dir.join(format!("percentiles_{alg}_sigma_min_12.csv")),
            &band_csv(&b.sigma_min_12),
        )?;
        write_text(
            &dir.join(format!("percentiles_{alg}_sigma_min_22.csv")),
            &band_csv(&b.sigma_min_22),
        )?;
    }

    let finite = |x: f64| x.is_finite().then_some(x);
    let final_subopt = suite
        .algorithms
        .iter()
        .map(|&a| {
            let mut v = suite.final_subopts(a);
            v.sort_by(f64::total_cmp);
            let stats = (!v.is_empty()).then(|| {
                let p = |q| percentile_sorted(&v, q);
                FinalStats {
                    runs: v.len(),
                    p10: p(10.0),
                    p25: p(25.0),
                    median: p(50.0),
                    p75: p(75.0),
                    p90: p(90.0),
                }
            });
            (a.to_string(), stats)
        })
        .collect();
    let per_trial = suite
        .trials
        .iter()
        .map(|t| TrialEntry {
            trial: t.trial,
            error: t.setup.as_ref().err().cloned(),
            runs: t
                .runs
                .iter()
                .map(|r| RunEntry {
                    algorithm: r.algorithm,
                    termination: r.result.as_ref().ok().map(|x| x.termination),
                    iters: r.result.as_ref().map_or(0, |x| x.iters()),
                    final_subopt: finite(r.final_subopt),
                    error: r.result.as_ref().err().cloned(),
                })
                .collect(),
        })
        .collect();
    let summary = SuiteSummary {
        seed: suite.gen.seed,
        trials: suite.trials.len(),
        algorithms: &suite.algorithms,
        gen_config: &suite.gen,
        optimizer_config: &suite.opt,
        final_subopt,
        per_trial,
    };
    write_json(&dir.join("summary.json"), &summary)
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use irpg_core::experiments::{gen_init, gen_instance, run_suite, write_suite, GenConfig};
use irpg_core::gradients::{fd_gradient, fd_step_gradient, grad_total};
use irpg_core::io::{read_json, run_csv, to_json_string, write_json, write_text, RunSummary};
use irpg_core::lyapcare::{care, clyap};
use irpg_core::model::{kalman, mat_rows, loss_total, normalized_suboptimality, Filter, OEInstance};
use irpg_core::numerics::Mat;
use irpg_core::optimize::{run, Algorithm, OptimizerConfig};
use irpg_core::verify::{render_table, verify_all};
use irpg_core::Error;

#[derive(Parser)]
#[command(name = "irpg", version, about = "Policy search over dynamic filters for output estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve A X + X Aᵀ + Q = 0 (from {"A","Q"} or from an instance's A and W1).
    SolveLyap {
        #[arg(long, conflicts_with = "instance")]
        input: Option<PathBuf>,
        #[arg(long)]
        instance: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Solve the filtering Riccati equation of an instance.
    SolveCare {
        #[arg(long)]
        instance: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Print the Kalman filter of an instance as filter JSON.
    Kalman {
        #[arg(long)]
        instance: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run one optimizer and write run.csv and summary.json.
    Run {
        #[command(flatten)]
        problem: Problem,
        #[arg(long, default_value = "irpg-backtrack")]
        alg: Algorithm,
        #[command(flatten)]
        opt: OptFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Monte-Carlo comparison of optimizers on random instances.
    Suite {
        #[arg(long, default_value_t = 20)]
        trials: u64,
        /// Comma-separated algorithm names.
        #[arg(long, value_delimiter = ',', default_value = "plain-gd,gd-recond,irpg-backtrack")]
        alg: Vec<Algorithm>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        opt: OptFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Compare the analytic gradient with central finite differences.
    Gradcheck {
        #[command(flatten)]
        problem: Problem,
        #[arg(long, default_value_t = 1e-4)]
        lambda: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Run the example verification suite.
    Verify {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Output file (single results) or directory (runs and suites).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Configuration override `key=value` (value parsed as JSON when possible).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

/// Instance and initial filter; missing ones are generated from `--seed`.
#[derive(Args)]
struct Problem {
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args)]
struct OptFlags {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    lambda_turnoff: bool,
}

fn parse_overrides(items: &[String]) -> Result<Map<String, Value>, Error> {
    let mut map = Map::new();
    for item in items {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{item}' is not KEY=VALUE")))?;
        let v = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        map.insert(k.trim().to_string(), v);
    }
    Ok(map)
}

/// Applies the overrides whose keys are fields of `T`; returns the rest.
fn apply_overrides<T: Serialize + DeserializeOwned>(
    base: &T,
    overrides: &mut Map<String, Value>,
) -> Result<T, Error> {
    let json_err = |source| Error::Json {
        context: "configuration".into(),
        source,
    };
    let mut v = serde_json::to_value(base).map_err(json_err)?;
    let obj = v.as_object_mut().expect("configs serialize to objects");
    let keys: Vec<String> = overrides.keys().filter(|k| obj.contains_key(*k)).cloned().collect();
    for k in keys {
        let val = overrides.remove(&k).unwrap();
        obj.insert(k, val);
    }
    serde_json::from_value(v).map_err(json_err)
}

fn reject_leftovers(rest: &Map<String, Value>) -> Result<(), Error> {
    match rest.keys().next() {
        Some(k) => Err(Error::Config(format!("unknown configuration key '{k}'"))),
        None => Ok(()),
    }
}

fn opt_config(alg: Algorithm, flags: &OptFlags, rest: &mut Map<String, Value>) -> Result<OptimizerConfig, Error> {
    let mut cfg = OptimizerConfig::with_algorithm(alg);
    if let Some(l) = flags.lambda {
        cfg.lambda = l;
    }
    if let Some(e) = flags.eta {
        cfg.eta = e;
    }
    if let Some(m) = flags.max_iters {
        cfg.max_iters = m;
    }
    cfg.lambda_turnoff |= flags.lambda_turnoff;
    let cfg = apply_overrides(&cfg, rest)?;
    cfg.validate()?;
    Ok(cfg)
}

fn gen_config(seed: u64, rest: &mut Map<String, Value>) -> Result<GenConfig, Error> {
    let cfg = apply_overrides(&GenConfig { seed, ..Default::default() }, rest)?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_problem(p: &Problem, gen: &GenConfig) -> Result<(OEInstance, Filter), Error> {
    let inst: OEInstance = match &p.instance {
        Some(path) => read_json(path)?,
        None => gen_instance(gen, 0)?,
    };
    inst.check_dims()?;
    let init: Filter = match &p.init {
        Some(path) => read_json(path)?,
        None => gen_init(gen, &inst, 0)?,
    };
    init.check_dims(&inst)?;
    Ok((inst, init))
}

#[derive(Deserialize)]
struct LyapInput {
    #[serde(rename = "A", with = "mat_rows")]
    a: Mat,
    #[serde(rename = "Q", with = "mat_rows")]
    q: Mat,
}

fn mat_json(m: &Mat) -> Value {
    json!(mat_rows::to_rows(m))
}

/// Prints `value` or writes it to `--out`.
fn emit(value: &Value, out: &Option<PathBuf>) -> Result<(), Error> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            println!("{}", to_json_string(value)?);
            Ok(())
        }
    }
}

fn with_seed(mut v: Value, seed: u64) -> Value {
    if let Some(obj) = v.as_object_mut() {
        obj.insert("seed".into(), json!(seed));
    }
    v
}

fn out_dir(out: &Option<PathBuf>) -> &Path {
    out.as_deref().unwrap_or(Path::new("."))
}

fn execute(cmd: Command) -> Result<ExitCode, Error> {
    match cmd {
        Command::SolveLyap { input, instance, common } => {
            reject_leftovers(&parse_overrides(&common.overrides)?)?;
            let (a, q) = match (input, instance) {
                (Some(p), _) => {
                    let li: LyapInput = read_json(&p)?;
                    (li.a, li.q)
                }
                (None, Some(p)) => {
                    let inst: OEInstance = read_json(&p)?;
                    (inst.a, inst.w1)
                }
                (None, None) => return Err(Error::Config("one of --input or --instance is required".into())),
            };
            let x = clyap(&a, &q)?;
            emit(&with_seed(json!({ "X": mat_json(&x) }), common.seed), &common.out)?;
        }
        Command::SolveCare { instance, common } => {
            reject_leftovers(&parse_overrides(&common.overrides)?)?;
            let inst: OEInstance = read_json(&instance)?;
            let sol = care(&inst.a, &inst.c, &inst.w1, &inst.w2)?;
            let v = json!({
                "P": mat_json(&sol.p),
                "L": mat_json(&sol.l),
                "closed_loop": mat_json(&sol.closed_loop),
            });
            emit(&with_seed(v, common.seed), &common.out)?;
        }
        Command::Kalman { instance, common } => {
            reject_leftovers(&parse_overrides(&common.overrides)?)?;
            let inst: OEInstance = read_json(&instance)?;
            let (k, _) = kalman(&inst)?;
            let v = serde_json::to_value(&k).map_err(|source| Error::Json {
                context: "filter".into(),
                source,
            })?;
            emit(&with_seed(v, common.seed), &common.out)?;
        }
        Command::Run { problem, alg, opt, common } => {
            let mut rest = parse_overrides(&common.overrides)?;
            let cfg = opt_config(alg, &opt, &mut rest)?;
            let gen = gen_config(common.seed, &mut rest)?;
            reject_leftovers(&rest)?;
            let (inst, init) = load_problem(&problem, &gen)?;
            let res = run(&inst, &init, &cfg)?;
            let subopt = normalized_suboptimality(&inst, &res.final_filter)?;
            let dir = out_dir(&common.out);
            write_text(&dir.join("run.csv"), &run_csv(&res))?;
            write_json(&dir.join("summary.json"), &RunSummary::new(&res, subopt, Some(common.seed)))?;
            println!(
                "{}: {:?} after {} iterations, final subopt_norm {:e}",
                alg,
                res.termination,
                res.iters(),
                subopt
            );
        }
        Command::Suite { trials, alg, jobs, opt, common } => {
            let mut rest = parse_overrides(&common.overrides)?;
            let base = opt_config(Algorithm::IRPGBacktrack, &opt, &mut rest)?;
            let gen = gen_config(common.seed, &mut rest)?;
            reject_leftovers(&rest)?;
            let suite = run_suite(&gen, trials, &alg, &base, jobs)?;
            write_suite(out_dir(&common.out), &suite)?;
            for a in &alg {
                println!("{a}: median final subopt_norm {:e}", suite.median_final_subopt(*a));
            }
        }
        Command::Gradcheck { problem, lambda, common } => {
            let mut rest = parse_overrides(&common.overrides)?;
            let gen = gen_config(common.seed, &mut rest)?;
            reject_leftovers(&rest)?;
            let (inst, k) = load_problem(&problem, &gen)?;
            let g = grad_total(&inst, &k, lambda)?;
            let fd = fd_gradient(|f| loss_total(&inst, f, lambda), &k, fd_step_gradient(&k))?;
            let rel = (&g - &fd).norm() / fd.norm().max(f64::MIN_POSITIVE);
            let v = json!({
                "lambda": lambda,
                "analytic_norm": g.norm(),
                "fd_norm": fd.norm(),
                "rel_err": rel,
                "seed": common.seed,
            });
            emit(&v, &common.out)?;
        }
        Command::Verify { common } => {
            reject_leftovers(&parse_overrides(&common.overrides)?)?;
            let reports = verify_all();
            print!("{}", render_table(&reports));
            if let Some(path) = &common.out {
                write_json(path, &json!({ "seed": common.seed, "checks": reports }))?;
            }
            if reports.iter().any(|r| !r.passed) {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

//! `hustat` command line: configuration loading, subcommand dispatch, report emission.
//!
//! Exit codes: 0 on success, 1 when a mixing hypothesis fails, 2 on configuration errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path as FsPath, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::blocking::{block_terms, partition_indices, required_range};
use crate::bounds::{deviation_bound, hypothesis_check, rate_plan, BoundInputs, Theorem};
use crate::error::{Error, Result};
use crate::experiments::{
    run_bound_check, run_fclt, run_slln, ExperimentConfig, ExperimentReport, KernelSpec, ModelSpec, SllnMode,
};
use crate::processes::{simulate, simulate_range, TailModel};
use crate::rng::stream;
use crate::ustat::u_stat_prefixes;

#[derive(Parser, Debug)]
#[command(
    name = "hustat",
    version,
    about = "Hilbert-valued U-statistics of absolutely regular sequences",
    disable_help_subcommand = true
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment manifest (TOML)
    #[arg(long, value_name = "PATH", global = true)]
    pub config: Option<PathBuf>,
    /// Base seed; overrides the manifest [default: manifest value, else 0]
    #[arg(long, value_name = "U64", global = true)]
    pub seed: Option<u64>,
    /// Output directory for CSV and JSON reports
    #[arg(long, value_name = "DIR", default_value = "out", global = true)]
    pub out: PathBuf,
    /// Worker threads [default: number of cores]
    #[arg(long, value_name = "N", global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a path and print the prefix U-statistics as CSV
    Simulate {
        /// Sample size
        #[arg(long, default_value_t = 100)]
        n: usize,
    },
    /// Functional CLT experiment (needs --config)
    Fclt(ExperimentArgs),
    /// Strong-law decay experiment (needs --config)
    Slln {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Normalization regime: nondegenerate or degenerate [default: regime of the manifest theorem]
        #[arg(long)]
        mode: Option<String>,
        /// Theorem whose schedule sets the degenerate normalization (overrides the manifest)
        #[arg(long)]
        theorem: Option<Theorem>,
        /// Moment exponent (overrides the manifest)
        #[arg(long)]
        p: Option<f64>,
        /// Extra moment delta (overrides the manifest)
        #[arg(long)]
        delta: Option<f64>,
        /// Slack eta (overrides the manifest)
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Evaluate the deviation bound on an x grid, or check it against simulation with --check
    Bound {
        /// Compare the bound with the empirical tail of the max-statistic
        #[arg(long)]
        check: bool,
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Block length (overrides the manifest)
        #[arg(long)]
        q: Option<usize>,
        /// Moment order (overrides the manifest)
        #[arg(long)]
        r: Option<f64>,
        /// Deviation levels "a:b:steps", linearly spaced
        #[arg(long, value_name = "A:B:STEPS")]
        x_grid: Option<String>,
    },
    /// Print index-family cardinalities and blocking terms as CSV
    Decompose {
        /// Sample size
        #[arg(long, default_value_t = 24)]
        n: usize,
        /// Block length
        #[arg(long, default_value_t = 2)]
        q: usize,
    },
    /// Print the exponent schedule of a theorem as JSON
    Plan(RateArgs),
    /// Check the mixing condition of a theorem against a beta tail
    Hypothesis {
        #[command(flatten)]
        rate: RateArgs,
        /// Tail "geometric:C:LAMBDA" or "polynomial:C:S" [default: tail of the manifest model]
        #[arg(long, value_name = "KIND:C:RATE")]
        tail: Option<String>,
    },
}

#[derive(Args, Debug, Clone)]
pub struct ExperimentArgs {
    /// Sample sizes, comma separated (overrides the manifest)
    #[arg(long, value_name = "N[,N...]")]
    pub n: Option<String>,
    /// Replications (overrides the manifest)
    #[arg(long)]
    pub reps: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct RateArgs {
    /// T2, T3, T4, T5 or FCLT
    #[arg(long, default_value = "T2")]
    pub theorem: Theorem,
    /// Moment exponent, 1 < p < 2
    #[arg(long, default_value_t = 1.5)]
    pub p: f64,
    /// Extra moment delta
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    /// Slack eta > 0
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn parse_and_dispatch<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::HypothesisFailed(_) => 1,
        _ => 2,
    }
}

/// Manifest contents: experiment keys at top level plus an optional `[bound_inputs]` table.
#[derive(Debug, Default)]
pub struct Manifest {
    pub experiment: Option<ExperimentConfig>,
    pub bound_inputs: Option<BoundInputs>,
}

pub fn load_manifest(path: &FsPath) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let bound_inputs = match table.remove("bound_inputs") {
        Some(v) => Some(
            v.try_into::<BoundInputs>()
                .map_err(|e| Error::Config(format!("[bound_inputs]: {e}")))?,
        ),
        None => None,
    };
    let experiment = if table.is_empty() {
        None
    } else {
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Some(cfg)
    };
    Ok(Manifest {
        experiment,
        bound_inputs,
    })
}

fn manifest(common: &Common) -> Result<Manifest> {
    match &common.config {
        Some(p) => load_manifest(p),
        None => Ok(Manifest::default()),
    }
}

/// Two-state chain with flip probability 1/4 and the centered product kernel.
fn reference_config() -> ExperimentConfig {
    ExperimentConfig::new(
        ModelSpec::TwoState { a: 0.25, b: 0.25 },
        KernelSpec::from_table(vec![vec![vec![0.25], vec![-0.25]], vec![vec![-0.25], vec![0.25]]]),
        vec![100],
        1,
        0,
    )
}

fn experiment_config(common: &Common, args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("this subcommand needs --config PATH".into()))?;
    let mut cfg = load_manifest(path)?
        .experiment
        .ok_or_else(|| Error::Config(format!("{} holds no experiment settings", path.display())))?;
    apply_common(&mut cfg, common);
    if let Some(n) = &args.n {
        cfg.n_values = parse_n_list(n)?;
    }
    if let Some(r) = args.reps {
        cfg.replications = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_common(cfg: &mut ExperimentConfig, common: &Common) {
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if common.threads.is_some() {
        cfg.threads = common.threads;
    }
    cfg.out_dir = Some(common.out.clone());
}

fn base_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = manifest(common)?.experiment.unwrap_or_else(reference_config);
    apply_common(&mut cfg, common);
    Ok(cfg)
}

pub fn parse_n_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad sample size `{t}` in --n")))
        })
        .collect()
}

/// `a:b:steps` as `steps` linearly spaced points from `a` to `b`.
pub fn parse_x_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::Config(format!("--x-grid expects A:B:STEPS, got `{s}`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].parse().map_err(|_| bad())?;
    let b: f64 = parts[1].parse().map_err(|_| bad())?;
    let steps: usize = parts[2].parse().map_err(|_| bad())?;
    if steps == 0 || !(a > 0.0) || !(b >= a) {
        return Err(bad());
    }
    if steps == 1 {
        return Ok(vec![a]);
    }
    Ok((0..steps)
        .map(|i| a + (b - a) * i as f64 / (steps - 1) as f64)
        .collect())
}

fn parse_tail(s: &str) -> Result<TailModel> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || {
        Error::Config(format!(
            "--tail expects geometric:C:LAMBDA or polynomial:C:S, got `{s}`"
        ))
    };
    if parts.len() != 3 {
        return Err(bad());
    }
    let c: f64 = parts[1].parse().map_err(|_| bad())?;
    let v: f64 = parts[2].parse().map_err(|_| bad())?;
    match parts[0] {
        "geometric" => Ok(TailModel::Geometric { c, lambda: v }),
        "polynomial" => Ok(TailModel::Polynomial { c, s: v }),
        _ => Err(bad()),
    }
}

fn emit_report(rep: &ExperimentReport, dir: &FsPath, out: &mut dyn Write) -> Result<()> {
    let (csv, js) = rep.write(dir)?;
    let body = json!({
        "experiment": rep.experiment,
        "seed": rep.seed,
        "config_hash": rep.config_hash,
        "csv": csv.display().to_string(),
        "json": js.display().to_string(),
        "summary": rep.summary,
        "flags": rep.flags,
    });
    writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(&body).map_err(|e| Error::Io(e.to_string()))?
    )?;
    Ok(())
}

pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let common = &cli.common;
    if common.threads == Some(0) {
        return Err(Error::Config("--threads must be positive".into()));
    }
    match &cli.command {
        Command::Simulate { n } => {
            let cfg = base_config(common)?;
            let model = cfg.model.build()?;
            let h = cfg.kernel.build()?;
            let xs = simulate(&model, *n, &mut stream(cfg.seed, 0))?;
            let path = u_stat_prefixes(&h, &xs)?;
            let mut buf = Vec::new();
            path.write_csv(&mut buf)?;
            out.write_all(&buf)?;
        }
        Command::Fclt(args) => {
            let cfg = experiment_config(common, args)?;
            emit_report(&run_fclt(&cfg)?, &common.out, out)?;
        }
        Command::Slln {
            exp,
            mode,
            theorem,
            p,
            delta,
            eta,
        } => {
            let mut cfg = experiment_config(common, exp)?;
            if theorem.is_some() {
                cfg.theorem = *theorem;
            }
            let mode: SllnMode = match mode {
                Some(m) => m.parse()?,
                None if cfg.theorem.is_some_and(|t| t.is_degenerate()) => SllnMode::Degenerate,
                None => SllnMode::Nondegenerate,
            };
            cfg.p = p.unwrap_or(cfg.p);
            cfg.delta = delta.unwrap_or(cfg.delta);
            cfg.eta = eta.unwrap_or(cfg.eta);
            cfg.validate()?;
            emit_report(&run_slln(&cfg, mode)?, &common.out, out)?;
        }
        Command::Bound {
            check,
            exp,
            q,
            r,
            x_grid,
        } => {
            let grid = x_grid.as_deref().map(parse_x_grid).transpose()?;
            if *check {
                let mut cfg = experiment_config(common, exp)?;
                if let Some(r) = r {
                    cfg.r = *r;
                }
                if grid.is_some() {
                    cfg.x_grid = grid;
                }
                emit_report(&run_bound_check(&cfg)?, &common.out, out)?;
            } else {
                let mut inputs = manifest(common)?
                    .bound_inputs
                    .ok_or_else(|| Error::Config("bound needs a [bound_inputs] table in --config".into()))?;
                if let Some(q) = q {
                    inputs.q = *q;
                }
                if let Some(r) = r {
                    inputs.r = *r;
                }
                if let Some(n) = &exp.n {
                    let ns = parse_n_list(n)?;
                    if ns.len() != 1 {
                        return Err(Error::Config("bound takes a single --n".into()));
                    }
                    inputs.n = ns[0];
                }
                let xs = grid.unwrap_or_else(|| vec![inputs.x]);
                writeln!(out, "x,total,moment,truncation,lag_mean,mixing")?;
                for x in xs {
                    let rep =
                        deviation_bound(&BoundInputs { x, ..inputs }).map_err(|e| Error::Config(e.to_string()))?;
                    let t = rep.terms;
                    writeln!(out, "{x},{},{},{},{},{}", rep.total, t[0], t[1], t[2], t[3])?;
                }
            }
        }
        Command::Decompose { n, q } => {
            let cfg = base_config(common)?;
            let part = partition_indices(*n, *q)?;
            writeln!(out, "section,name,value")?;
            for (a, c) in part.cardinalities().iter().enumerate() {
                writeln!(out, "family,I{},{c}", a + 1)?;
            }
            writeln!(out, "family,total,{}", part.total())?;
            let model = cfg.model.build()?;
            let h = cfg.kernel.build()?;
            let (a, b) = required_range(*n, *q);
            let path = simulate_range(&model, a, b, &mut stream(cfg.seed, 0))?;
            let terms = block_terms(&h, &path, *n, *q)?;
            for (i, m) in terms.m.iter().enumerate() {
                writeln!(out, "term,M{},{m}", i + 1)?;
            }
            for (i, r) in terms.r.iter().enumerate() {
                writeln!(out, "term,R{},{r}", i + 1)?;
            }
            writeln!(out, "term,max_norm,{}", terms.lhs)?;
            writeln!(out, "term,bound,{}", terms.rhs())?;
        }
        Command::Plan(rate) => {
            let plan =
                rate_plan(rate.theorem, rate.p, rate.delta, rate.eta).map_err(|e| Error::Config(e.to_string()))?;
            let body = json!({
                "theorem": plan.theorem.to_string(),
                "p": plan.p,
                "delta": plan.delta,
                "eta": plan.eta,
                "gamma": plan.gamma,
                "gamma_prime": plan.gamma_prime,
                "a": plan.a,
                "b": plan.b,
                "normalization": plan.normalization,
            });
            writeln!(out, "{body}")?;
        }
        Command::Hypothesis { rate, tail } => {
            let tail = match tail {
                Some(t) => parse_tail(t)?,
                None => base_config(common)?.model.build()?.tail_model()?,
            };
            let outcome = hypothesis_check(&tail, rate.theorem, rate.p, rate.delta, rate.eta)
                .map_err(|e| Error::Config(e.to_string()))?;
            let body = json!({
                "theorem": rate.theorem.to_string(),
                "tail": tail,
                "pass": outcome.pass,
                "margin": if outcome.margin.is_finite() { json!(outcome.margin) } else { json!(outcome.margin.to_string()) },
                "condition": outcome.condition,
            });
            writeln!(out, "{body}")?;
            if !outcome.pass {
                return Err(Error::HypothesisFailed(outcome.condition));
            }
        }
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("hustat").chain(args.iter().cloned());
        let code = parse_and_dispatch(argv, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn plan_prints_closed_forms() {
        let (code, out, _) = run(&["plan", "--theorem", "T3", "--p", "1.5", "--delta", "0.25"]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!((v["a"].as_f64().unwrap() - 11.0 / 18.0).abs() < 1e-12);
        assert!((v["b"].as_f64().unwrap() - 4.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn decompose_counts_pairs() {
        let (code, out, _) = run(&["decompose", "--n", "5", "--q", "1"]);
        assert_eq!(code, 0, "{out}");
        let total: usize = out
            .lines()
            .filter(|l| l.starts_with("family,I"))
            .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(total, 10);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(&["fclt", "--config", "missing.toml"]).0, 2);
        assert_eq!(run(&["plan", "--bogus"]).0, 2);
        assert_eq!(run(&["plan", "--theorem", "T7"]).0, 2);
        assert_eq!(run(&["plan", "--theorem", "T3", "--p", "1.5", "--delta", "0.9"]).0, 2);
        assert_eq!(
            run(&["hypothesis", "--theorem", "FCLT", "--tail", "polynomial:1:2"]).0,
            1
        );
        assert_eq!(
            run(&[
                "hypothesis",
                "--theorem",
                "T4",
                "--p",
                "1.2",
                "--delta",
                "0.8",
                "--tail",
                "polynomial:1:3"
            ])
            .0,
            0
        );
        assert_eq!(run(&["hypothesis", "--theorem", "T2"]).0, 0);
        assert_eq!(run(&["--help"]).0, 0);
    }

    #[test]
    fn grids_and_lists() {
        assert_eq!(parse_x_grid("1:3:3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(parse_x_grid("1:3").is_err());
        assert!(parse_x_grid("0:3:3").is_err());
        assert_eq!(parse_n_list("250, 500").unwrap(), vec![250, 500]);
        assert!(parse_n_list("a").is_err());
    }

    #[test]
    fn simulate_is_seeded() {
        let a = run(&["simulate", "--n", "20", "--seed", "4"]);
        let b = run(&["simulate", "--n", "20", "--seed", "4"]);
        let c = run(&["simulate", "--n", "20", "--seed", "5"]);
        assert_eq!(a.0, 0);
        assert_eq!(a.1, b.1);
        assert_ne!(a.1, c.1);
    }
}

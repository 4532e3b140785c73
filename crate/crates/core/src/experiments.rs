//! Monte-Carlo harness: functional CLT, strong-law decay and bound domination.
//!
//! Every replication owns the RNG stream `substream(seed, replication, n)`, so reports
//! depend only on the configuration and the seed, whatever the thread count.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path as FsPath, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bounds::{
    c1_integral, calibrate_cr, hypothesis_check, optimize_q, rate_plan, sup_lag_mean_norm, BoundInputs,
    HypothesisOutcome, Quantile, Theorem,
};
use crate::error::{Error, Result};
use crate::hilbert::{axpy, sample_brownian_path, CovOperator};
use crate::kernels::{
    degeneracy_defect, hoeffding_components, kernel_catalog, norm_moments, FiniteLaw, Kernel, KernelName, KernelParams,
    KernelTable, MarginalLaw, State, UnaryMap,
};
use crate::processes::{simulate, MarkovChain, ProcessModel, TailModel};
use crate::rng::{stream_seed, substream};
use crate::ustat::{polygonal_index, u_stat_prefixes, u_stat_prefixes_tabulated, UStatPath};

const REFERENCE_TAG: u64 = 0x5245_4650;
const CALIBRATION_TAG: u64 = 0x4341_4c49;
const MEAN_TAG: u64 = 0x4d45_414e;

/// Data-generating model as written in a configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// i.i.d. draws from a finite support (uniform unless `weights` is given).
    Iid {
        support: Vec<Vec<f64>>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    /// Two-state chain flipping 0 -> 1 with probability `a` and 1 -> 0 with probability `b`.
    TwoState {
        a: f64,
        b: f64,
    },
    Markov {
        transition: Vec<Vec<f64>>,
        embedding: Vec<Vec<f64>>,
        #[serde(default)]
        stationary: Option<Vec<f64>>,
    },
    Ar1 {
        rho: f64,
        noise_variance: f64,
    },
}

impl ModelSpec {
    pub fn build(&self) -> Result<ProcessModel> {
        let model = match self {
            ModelSpec::Iid { support, weights } => {
                let n = support.len();
                if n == 0 {
                    return Err(Error::InvalidModel("i.i.d. support is empty".into()));
                }
                let w = weights.clone().unwrap_or_else(|| vec![1.0 / n as f64; n]);
                let states = support
                    .iter()
                    .enumerate()
                    .map(|(i, c)| State::labeled(i, c.clone()))
                    .collect();
                ProcessModel::IidFinite(FiniteLaw::new(states, w)?)
            }
            ModelSpec::TwoState { a, b } => ProcessModel::MarkovFinite(MarkovChain::two_state(*a, *b)?),
            ModelSpec::Markov {
                transition,
                embedding,
                stationary,
            } => ProcessModel::MarkovFinite(MarkovChain::new(
                transition.clone(),
                stationary.clone(),
                embedding.clone(),
            )?),
            ModelSpec::Ar1 { rho, noise_variance } => ProcessModel::Ar1Gaussian {
                rho: *rho,
                noise_variance: *noise_variance,
            },
        };
        model.validate()?;
        Ok(model)
    }
}

/// Kernel as written in a configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    /// `spatial_sign`, `product`, `gini`, `dot` or `custom_table`.
    pub name: String,
    /// Dimension of the data space.
    #[serde(default)]
    pub dim: Option<usize>,
    /// `table[i][j]` holds the coordinates of `h(i, j)`.
    #[serde(default)]
    pub table: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default)]
    pub table_file: Option<PathBuf>,
}

impl KernelSpec {
    pub fn named(name: &str) -> Self {
        KernelSpec {
            name: name.to_string(),
            dim: None,
            table: None,
            table_file: None,
        }
    }

    pub fn from_table(table: Vec<Vec<Vec<f64>>>) -> Self {
        KernelSpec {
            table: Some(table),
            ..KernelSpec::named("custom_table")
        }
    }

    pub fn build(&self) -> Result<Kernel> {
        let name = KernelName::from_str(&self.name)?;
        let table = match (&self.table, &self.table_file) {
            (Some(rows), _) => Some(table_from_nested(rows)?),
            (None, Some(path)) => Some(KernelTable::read_csv(fs::File::open(path)?)?),
            (None, None) => None,
        };
        kernel_catalog(name, &KernelParams { dim: self.dim, table })
    }
}

fn table_from_nested(rows: &[Vec<Vec<f64>>]) -> Result<KernelTable> {
    let s = rows.len();
    let d = rows.first().and_then(|r| r.first()).map(|c| c.len()).unwrap_or(0);
    let mut values = Vec::with_capacity(s * s * d);
    for row in rows {
        if row.len() != s {
            return Err(Error::Config(format!(
                "kernel table row has {} entries, expected {s}",
                row.len()
            )));
        }
        for cell in row {
            if cell.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: cell.len(),
                });
            }
            values.extend_from_slice(cell);
        }
    }
    KernelTable::new(s, d, values)
}

fn default_replications() -> usize {
    200
}
fn default_p() -> f64 {
    1.5
}
fn default_delta() -> f64 {
    1.0
}
fn default_eta() -> f64 {
    0.1
}
fn default_r() -> f64 {
    2.0
}
fn default_calibration_n() -> usize {
    256
}
fn default_reference_paths() -> usize {
    2000
}
fn default_grid_points() -> usize {
    32
}
fn default_x_points() -> usize {
    16
}

/// Experiment manifest; every field has a TOML key of the same name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub kernel: KernelSpec,
    /// Expected output dimension of the kernel.
    #[serde(default)]
    pub d: Option<usize>,
    pub n_values: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub theorem: Option<Theorem>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub c_r: Option<f64>,
    /// Moment order of the deviation bound.
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(default = "default_calibration_n")]
    pub calibration_n: usize,
    #[serde(default)]
    pub calibration_reps: Option<usize>,
    #[serde(default = "default_reference_paths")]
    pub reference_paths: usize,
    /// Number of intervals of the uniform FCLT time grid.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default)]
    pub x_grid: Option<Vec<f64>>,
    #[serde(default = "default_x_points")]
    pub x_points: usize,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(model: ModelSpec, kernel: KernelSpec, n_values: Vec<usize>, replications: usize, seed: u64) -> Self {
        ExperimentConfig {
            model,
            kernel,
            d: None,
            n_values,
            replications,
            p: default_p(),
            delta: default_delta(),
            eta: default_eta(),
            theorem: None,
            seed,
            c_r: None,
            r: default_r(),
            calibration_n: default_calibration_n(),
            calibration_reps: None,
            reference_paths: default_reference_paths(),
            grid_points: default_grid_points(),
            x_grid: None,
            x_points: default_x_points(),
            threads: None,
            out_dir: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &FsPath) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_values.is_empty() {
            return bad("n_values is empty".into());
        }
        if self.n_values.windows(2).any(|w| w[1] <= w[0]) {
            return bad("n_values must be strictly increasing".into());
        }
        if self.n_values[0] < 2 {
            return bad("every n must be at least 2".into());
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.grid_points == 0 || self.x_points == 0 {
            return bad("grid sizes must be positive".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        if let Some(g) = &self.x_grid {
            if g.is_empty() || g.iter().any(|x| !(*x > 0.0)) {
                return bad("x_grid must hold positive values".into());
            }
        }
        Ok(())
    }

    /// Hex SHA-256 prefix of the canonical JSON form, ignoring output location and thread count.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig {
            out_dir: None,
            threads: None,
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }
}

/// One raw per-replication measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub replication: usize,
    pub n: usize,
    pub metric: String,
    pub value: f64,
}

/// Bound and empirical tail at one deviation level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundPoint {
    pub n: usize,
    pub x: f64,
    pub empirical_tail: f64,
    pub bound: f64,
    pub terms: [f64; 4],
    pub q: usize,
    pub dominated: bool,
    /// Empirical tail is 1 and the bound is below 1: excluded from the domination rate.
    pub saturated: bool,
    pub above_median: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub summary: BTreeMap<String, f64>,
    pub flags: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub points: Vec<BoundPoint>,
    #[serde(skip)]
    pub rows: Vec<RawRow>,
}

impl ExperimentReport {
    fn new(experiment: &str, config: &ExperimentConfig) -> Self {
        ExperimentReport {
            experiment: experiment.to_string(),
            seed: config.seed,
            config_hash: config.hash(),
            config: ExperimentConfig {
                out_dir: None,
                threads: None,
                ..config.clone()
            },
            summary: BTreeMap::new(),
            flags: Vec::new(),
            points: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn metric(&self, key: &str) -> Option<f64> {
        self.summary.get(key).cloned()
    }

    fn set(&mut self, key: impl Into<String>, v: f64) {
        self.summary.insert(key.into(), v);
    }

    /// File stem `<experiment>-<hash>-s<seed>`.
    pub fn stem(&self) -> String {
        format!("{}-{}-s{}", self.experiment, self.config_hash, self.seed)
    }

    pub fn csv_string(&self) -> String {
        let mut out = String::from("replication,n,metric,value\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.replication, r.n, r.metric, r.value));
        }
        out
    }

    pub fn json_string(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    /// Writes the raw CSV and the JSON summary into `dir`; returns both paths.
    pub fn write(&self, dir: &FsPath) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let csv = dir.join(format!("{}.csv", self.stem()));
        let json = dir.join(format!("{}.json", self.stem()));
        fs::write(&csv, self.csv_string())?;
        fs::write(&json, self.json_string()? + "\n")?;
        Ok((csv, json))
    }
}

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0_f64);
    while i < xs.len() && j < ys.len() {
        let t = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= t {
            i += 1;
        }
        while j < ys.len() && ys[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Type-7 quantile of a sorted sample.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Long-run covariance of `h1(X_k)` and its lag cutoff.
#[derive(Clone, Debug)]
pub struct GammaOperator {
    pub operator: CovOperator,
    pub cutoff: usize,
    /// Upper bound on the neglected lags.
    pub tail_bound: f64,
}

/// `sum_{|k| <= K} E[h1(X_0) (x) h1(X_k)]`, exact through `pi` and `P^k`.
///
/// Without an explicit cutoff, `K` is the first lag with
/// `8 M^2 c lambda^(K+1) / (1 - lambda) < 1e-10`, where `M = max ||h1||` and
/// `beta(k) <= c lambda^k`; covariances at lag `k` are at most `4 M^2 beta(k)`.
pub fn gamma_operator(model: &ProcessModel, h1: &UnaryMap, cutoff: Option<usize>) -> Result<GammaOperator> {
    let chain = model.as_chain()?;
    let states = chain.all_states();
    let pi = chain.stationary();
    let s = states.len();
    let d = h1.dim();
    let vals: Vec<Vec<f64>> = states.iter().map(|x| h1.eval(x).into_vec()).collect();
    let m = vals
        .iter()
        .map(|v| v.iter().map(|a| a * a).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let (cutoff, tail_bound) = match cutoff {
        Some(k) => (k, f64::NAN),
        None => match model.tail_model()? {
            TailModel::Geometric { c, lambda } if c == 0.0 || lambda == 0.0 || m == 0.0 => (0, 0.0),
            TailModel::Geometric { c, lambda } if lambda < 1.0 => {
                let bound = |k: usize| 8.0 * m * m * c * lambda.powi(k as i32 + 1) / (1.0 - lambda);
                let k = (0..1_000_000)
                    .find(|&k| bound(k) < 1e-10)
                    .ok_or_else(|| Error::Precondition("geometric tail too slow for an automatic cutoff".into()))?;
                (k, bound(k))
            }
            other => {
                return Err(Error::Precondition(format!(
                    "automatic cutoff needs a geometric tail, got {other:?}"
                )))
            }
        },
    };
    let lag_cov = |pk: &DMatrix<f64>| -> DMatrix<f64> {
        DMatrix::from_fn(d, d, |u, v| {
            (0..s)
                .map(|i| pi[i] * vals[i][u] * (0..s).map(|j| pk[(i, j)] * vals[j][v]).sum::<f64>())
                .sum()
        })
    };
    let mut gamma = lag_cov(&DMatrix::identity(s, s));
    let mut pk = chain.transition().clone();
    for _ in 1..=cutoff {
        let c = lag_cov(&pk);
        gamma += &c + c.transpose();
        pk = &pk * chain.transition();
    }
    let sym = (&gamma + gamma.transpose()) * 0.5;
    Ok(GammaOperator {
        operator: CovOperator::new(sym)?,
        cutoff,
        tail_bound,
    })
}

/// `E U_m` for `m = 0..=n` on a finite model: `E U_m = sum_{g=1}^{m-1} (m - g) E h(X_0, X_g)`.
pub fn exact_mean_path(model: &ProcessModel, table: &KernelTable, n: usize) -> Result<Vec<Vec<f64>>> {
    let chain = model.as_chain()?;
    let pi = chain.stationary();
    let (s, d) = (table.states(), table.dim());
    if s != chain.states() {
        return Err(Error::DimensionMismatch {
            expected: chain.states(),
            got: s,
        });
    }
    let mut out = vec![vec![0.0; d]; n + 1];
    let mut lag_sum = vec![0.0; d];
    let mut pk = chain.transition().clone();
    for m in 2..=n {
        for i in 0..s {
            for j in 0..s {
                axpy(&mut lag_sum, pi[i] * pk[(i, j)], table.get(i, j));
            }
        }
        let mut next = out[m - 1].clone();
        axpy(&mut next, 1.0, &lag_sum);
        out[m] = next;
        pk = &pk * chain.transition();
    }
    Ok(out)
}

fn interpolate(values: &[Vec<f64>], n: usize, t: f64) -> Result<Vec<f64>> {
    let (k, frac) = polygonal_index(n, t)?;
    let mut v = values[k].clone();
    if frac > 0.0 && k < n {
        for (a, (lo, hi)) in v.iter_mut().zip(values[k].iter().zip(&values[k + 1])) {
            *a += frac * (hi - lo);
        }
    }
    Ok(v)
}

/// Simulates prefix paths, through a kernel table when the model is finite.
struct Sampler<'a> {
    model: &'a ProcessModel,
    kernel: &'a Kernel,
    table: Option<KernelTable>,
}

impl<'a> Sampler<'a> {
    fn new(model: &'a ProcessModel, kernel: &'a Kernel) -> Result<Self> {
        let table = if model.is_finite() {
            let states = model.as_chain()?.all_states();
            Some(KernelTable::from_fn(states.len(), kernel.dim(), |i, j| {
                kernel.eval(&states[i], &states[j]).into_vec()
            })?)
        } else {
            None
        };
        Ok(Sampler { model, kernel, table })
    }

    fn path(&self, n: usize, rng: &mut crate::rng::StreamRng) -> Result<UStatPath> {
        let xs = simulate(self.model, n, rng)?;
        match &self.table {
            Some(t) => {
                let labels: Vec<usize> = xs
                    .iter()
                    .map(|s| s.label().expect("finite models emit labeled states"))
                    .collect();
                u_stat_prefixes_tabulated(t, self.kernel.name(), &labels)
            }
            None => u_stat_prefixes(self.kernel, &xs),
        }
    }
}

fn check_output_dim(cfg: &ExperimentConfig, h: &Kernel) -> Result<()> {
    match cfg.d {
        Some(d) if d != h.dim() => Err(Error::DimensionMismatch {
            expected: d,
            got: h.dim(),
        }),
        _ => Ok(()),
    }
}

fn exact_law(model: &ProcessModel) -> Result<FiniteLaw> {
    Ok(model.as_chain()?.marginal())
}

/// Status of the three FCLT conditions on a finite model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcltConditions {
    /// `sum_{k <= 64} int_0^{alpha(k)} Q^2` for `Q` the quantile of `||h1(X_0)||`.
    pub c1_partial: f64,
    pub c1_pass: bool,
    pub c2: HypothesisOutcome,
    /// `sup_{j >= 2} E ||h(X_1, X_j)||`.
    pub c3: f64,
}

impl FcltConditions {
    pub fn pass(&self) -> bool {
        self.c1_pass && self.c2.pass && self.c3.is_finite()
    }

    pub fn violated(&self) -> String {
        let mut v = Vec::new();
        if !self.c1_pass {
            v.push("(C.1) alpha-quantile series is not summable".to_string());
        }
        if !self.c2.pass {
            v.push(format!("(C.2) {}", self.c2.condition));
        }
        if !self.c3.is_finite() {
            v.push("(C.3) sup_j E||h(X_1, X_j)|| is infinite".to_string());
        }
        v.join("; ")
    }
}

pub fn fclt_conditions(model: &ProcessModel, h: &Kernel, h1: &UnaryMap) -> Result<FcltConditions> {
    let chain = model.as_chain()?;
    let norms: Vec<f64> = chain.all_states().iter().map(|x| h1.eval(x).norm()).collect();
    let quant = Quantile::from_finite(&norms, chain.stationary())?;
    let profile = model.mixing_profile(64)?;
    let tail = model.tail_model()?;
    let c2 = hypothesis_check(&tail, Theorem::Fclt, 1.5, 0.0, 0.0)?;
    // bounded Q: (C.1) holds whenever sum alpha(k) does, which a geometric beta tail ensures
    let c1_pass =
        matches!(tail, TailModel::Geometric { .. }) || matches!(tail, TailModel::Polynomial { s, .. } if s > 1.0);
    Ok(FcltConditions {
        c1_partial: c1_integral(&profile.alpha, &quant)?,
        c1_pass,
        c2,
        c3: sup_lag_mean_norm(model, h, 4096)?,
    })
}

/// Functional CLT check: law of `n^{-3/2}(U_n(t) - E U_n(t))` against `W_Gamma`.
///
/// The leading Hoeffding term of `U_{nt}` is `nt * sum_{i <= nt} h1(X_i)`, so the
/// reference process on the sup-norm side is `t W_Gamma(t)`; the comparison with
/// `sup ||W_Gamma||` itself is reported as `ks_sup_untimed`.
pub fn run_fclt(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    with_threads(cfg.threads, || fclt_inner(cfg))?
}

fn fclt_inner(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let model = cfg.model.build()?;
    if !model.is_finite() {
        return Err(Error::InvalidModel(
            "the FCLT harness centers exactly and needs a finite model".into(),
        ));
    }
    let h = cfg.kernel.build()?;
    check_output_dim(cfg, &h)?;
    if !h.is_symmetric() {
        return Err(Error::Precondition("the FCLT needs a symmetric kernel".into()));
    }
    let law = MarginalLaw::from(exact_law(&model)?);
    let h1 = hoeffding_components(&h, &law)?.h10;
    let conds = fclt_conditions(&model, &h, &h1)?;
    if !conds.pass() {
        return Err(Error::HypothesisFailed(conds.violated()));
    }
    let gamma = gamma_operator(&model, &h1, None)?;
    let sigma2 = gamma.operator.entry(0, 0);
    let degenerate = gamma.operator.trace() <= 1e-12;

    let mut rep = ExperimentReport::new("fclt", cfg);
    rep.set("gamma_11", sigma2);
    rep.set("gamma_trace", gamma.operator.trace());
    rep.set("gamma_clipped_mass", gamma.operator.clipped_mass());
    rep.set("gamma_cutoff", gamma.cutoff as f64);
    rep.set("c1_partial", conds.c1_partial);
    rep.set("c3_sup_lag_mean", conds.c3);
    if degenerate {
        rep.flags
            .push("degenerate kernel: Gamma = 0 and the limit process is zero".into());
    }

    let g = cfg.grid_points;
    let grid: Vec<f64> = (0..=g).map(|k| k as f64 / g as f64).collect();
    let reference: Vec<(f64, f64)> = if degenerate {
        Vec::new()
    } else {
        (0..cfg.reference_paths)
            .into_par_iter()
            .map(|i| -> Result<(f64, f64)> {
                let mut rng = substream(cfg.seed, i as u64, REFERENCE_TAG);
                let w = sample_brownian_path(&gamma.operator, &grid, &mut rng)?;
                let timed = w.iter().zip(&grid).map(|(p, t)| t * p.norm()).fold(0.0, f64::max);
                let plain = w.iter().map(|p| p.norm()).fold(0.0, f64::max);
                Ok((timed, plain))
            })
            .collect::<Result<_>>()?
    };
    let ref_timed: Vec<f64> = reference.iter().map(|r| r.0).collect();
    let ref_plain: Vec<f64> = reference.iter().map(|r| r.1).collect();

    let sampler = Sampler::new(&model, &h)?;
    let table = sampler.table.as_ref().expect("finite model has a table");
    for &n in &cfg.n_values {
        let mean = exact_mean_path(&model, table, n)?;
        let centers: Vec<Vec<f64>> = grid.iter().map(|&t| interpolate(&mean, n, t)).collect::<Result<_>>()?;
        let scale = (n as f64).powf(-1.5);
        let draws: Vec<(f64, f64)> = (0..cfg.replications)
            .into_par_iter()
            .map(|r| -> Result<(f64, f64)> {
                let mut rng = substream(cfg.seed, r as u64, n as u64);
                let path = sampler.path(n, &mut rng)?;
                let mut sup = 0.0_f64;
                let mut last = 0.0;
                for (t, c) in grid.iter().zip(&centers) {
                    let mut z = path.polygonal(*t)?.into_vec();
                    for (a, b) in z.iter_mut().zip(c) {
                        *a = (*a - b) * scale;
                    }
                    sup = sup.max(z.iter().map(|a| a * a).sum::<f64>().sqrt());
                    last = z[0];
                }
                Ok((last, sup))
            })
            .collect::<Result<_>>()?;
        for (r, (proj, sup)) in draws.iter().enumerate() {
            rep.rows.push(RawRow {
                replication: r,
                n,
                metric: "proj_t1".into(),
                value: *proj,
            });
            rep.rows.push(RawRow {
                replication: r,
                n,
                metric: "sup_norm".into(),
                value: *sup,
            });
        }
        let projs: Vec<f64> = draws.iter().map(|d| d.0).collect();
        let sups: Vec<f64> = draws.iter().map(|d| d.1).collect();
        let k = projs.len() as f64;
        let m = projs.iter().sum::<f64>() / k;
        let var = projs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (k - 1.0).max(1.0);
        rep.set(format!("proj_var_n{n}"), var);
        rep.set(format!("sup_p95_n{n}"), quantile_sorted(&sorted(&sups), 0.95));
        if !degenerate && sigma2 > 1e-12 {
            let sd = sigma2.sqrt();
            let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
            let standardized: Vec<f64> = projs.iter().map(|x| x / sd).collect();
            rep.set(
                format!("ks_proj_t1_n{n}"),
                ks_one_sample(&standardized, |x| std_normal.cdf(x)),
            );
            rep.set(format!("var_rel_error_n{n}"), (var - sigma2).abs() / sigma2);
            rep.set(format!("ks_sup_n{n}"), ks_two_sample(&sups, &ref_timed));
            rep.set(format!("ks_sup_untimed_n{n}"), ks_two_sample(&sups, &ref_plain));
        }
    }
    Ok(rep)
}

/// Normalization regime of the strong-law experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SllnMode {
    Nondegenerate,
    Degenerate,
}

impl FromStr for SllnMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nondegenerate" => Ok(SllnMode::Nondegenerate),
            "degenerate" => Ok(SllnMode::Degenerate),
            other => Err(Error::Config(format!(
                "unknown mode `{other}` (expected nondegenerate or degenerate)"
            ))),
        }
    }
}

/// Strong-law decay: `s_n = n^{-e} ||U_n - C(n,2) E h||` along the n grid, `e = 1 + 1/p` or `2/p`.
pub fn run_slln(cfg: &ExperimentConfig, mode: SllnMode) -> Result<ExperimentReport> {
    cfg.validate()?;
    with_threads(cfg.threads, || slln_inner(cfg, mode))?
}

fn slln_inner(cfg: &ExperimentConfig, mode: SllnMode) -> Result<ExperimentReport> {
    let model = cfg.model.build()?;
    let h = cfg.kernel.build()?;
    check_output_dim(cfg, &h)?;
    let degenerate = mode == SllnMode::Degenerate;
    let theorem = match cfg.theorem {
        Some(t) => t,
        None => match (degenerate, cfg.p + cfg.delta >= 2.0) {
            (false, true) => Theorem::T2,
            (false, false) => Theorem::T3,
            (true, true) => Theorem::T4,
            (true, false) => Theorem::T5,
        },
    };
    if theorem == Theorem::Fclt || theorem.is_degenerate() != degenerate {
        return Err(Error::Config(format!(
            "theorem {theorem} does not match the {mode:?} mode"
        )));
    }
    let theta = if model.is_finite() {
        let law = exact_law(&model)?;
        if degenerate {
            let defect = degeneracy_defect(&h, &law);
            if defect > 1e-10 {
                return Err(Error::NotDegenerate(defect));
            }
        }
        hoeffding_components(&h, &MarginalLaw::from(law))?.mean
    } else {
        if degenerate {
            return Err(Error::NotExact);
        }
        hoeffding_components(&h, &model.marginal(Some(20_000), stream_seed(cfg.seed, MEAN_TAG)))?.mean
    };
    let tail = model.tail_model()?;
    let outcome = hypothesis_check(&tail, theorem, cfg.p, cfg.delta, cfg.eta)?;
    if !outcome.pass {
        return Err(Error::HypothesisFailed(outcome.condition));
    }
    let plan = rate_plan(theorem, cfg.p, cfg.delta, cfg.eta)?;
    let e = plan.normalization;

    let mut rep = ExperimentReport::new("slln", cfg);
    rep.set("normalization_exponent", e);
    rep.set("hypothesis_margin", outcome.margin);
    let sampler = Sampler::new(&model, &h)?;
    let ns = cfg.n_values.clone();
    let n_max = *ns.last().expect("validated");
    let paths: Vec<Vec<f64>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let mut rng = substream(cfg.seed, r as u64, 0);
            let path = sampler.path(n_max, &mut rng)?;
            Ok(ns
                .iter()
                .map(|&n| {
                    let pairs = (n * (n - 1) / 2) as f64;
                    let mut u = path.get(n);
                    u.axpy(-pairs, &theta);
                    u.norm() * (n as f64).powf(-e)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    for (r, s) in paths.iter().enumerate() {
        for (&n, &v) in ns.iter().zip(s) {
            rep.rows.push(RawRow {
                replication: r,
                n,
                metric: "s_n".into(),
                value: v,
            });
        }
    }
    let mut medians = Vec::new();
    let mut rms = Vec::new();
    let mut ms = Vec::new();
    for (idx, &n) in ns.iter().enumerate() {
        let col: Vec<f64> = paths.iter().map(|p| p[idx]).collect();
        let s = sorted(&col);
        let med = quantile_sorted(&s, 0.5);
        let msq = col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64;
        rep.set(format!("median_n{n}"), med);
        rep.set(format!("p90_n{n}"), quantile_sorted(&s, 0.9));
        rep.set(format!("rms_n{n}"), msq.sqrt());
        medians.push(med);
        rms.push(msq.sqrt());
        ms.push(msq);
    }
    let nf: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    if ns.len() >= 2 && rms.iter().all(|v| *v > 0.0) {
        rep.set("rms_slope", log_log_slope(&nf, &rms));
        rep.set("mean_square_slope", log_log_slope(&nf, &ms));
    }
    rep.set("median_ratio", medians[medians.len() - 1] / medians[0]);
    let ratios = sorted(
        &paths
            .iter()
            .filter(|p| p[0] > 0.0)
            .map(|p| p[p.len() - 1] / p[0])
            .collect::<Vec<_>>(),
    );
    rep.set("path_ratio_median", quantile_sorted(&ratios, 0.5));
    rep.set("path_ratio_p90", quantile_sorted(&ratios, 0.9));
    rep.set(
        "median_inversions",
        medians.windows(2).filter(|w| w[1] > w[0]).count() as f64,
    );
    Ok(rep)
}

/// Empirical tail of `max_{2<=n<=N} ||U_n||` against the deviation bound on an x grid.
pub fn run_bound_check(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    with_threads(cfg.threads, || bound_inner(cfg))?
}

fn bound_inner(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let model = cfg.model.build()?;
    if !model.is_finite() {
        return Err(Error::NotExact);
    }
    let h = cfg.kernel.build()?;
    check_output_dim(cfg, &h)?;
    let law = exact_law(&model)?;
    let defect = degeneracy_defect(&h, &law);
    if defect > 1e-10 {
        return Err(Error::NotDegenerate(defect));
    }
    let c_r = match cfg.c_r {
        Some(c) => c,
        None => calibrate_cr(
            &ProcessModel::IidFinite(law.clone()),
            &h,
            cfg.r,
            cfg.calibration_n,
            cfg.calibration_reps.unwrap_or(cfg.replications),
            stream_seed(cfg.seed, CALIBRATION_TAG),
        )?,
    };
    if !(c_r > 0.0) {
        return Err(Error::Precondition(
            "C_r is zero: the kernel vanishes on the support".into(),
        ));
    }
    let (m_le, _) = norm_moments(&h, &law, cfg.r, f64::INFINITY);
    let n_top = *cfg.n_values.last().expect("validated");
    let sup_lag = sup_lag_mean_norm(&model, &h, n_top)?;
    let profile = model.mixing_profile(n_top / 2 + 1)?;

    let mut rep = ExperimentReport::new("bound", cfg);
    rep.set("c_r", c_r);
    rep.set("moment_r", m_le);
    rep.set("sup_lag_mean", sup_lag);
    let sampler = Sampler::new(&model, &h)?;
    for &n in &cfg.n_values {
        if n < 3 {
            return Err(Error::Precondition("bound check needs N >= 3".into()));
        }
        let maxima: Vec<f64> = (0..cfg.replications)
            .into_par_iter()
            .map(|r| -> Result<f64> {
                let mut rng = substream(cfg.seed, r as u64, n as u64);
                let path = sampler.path(n, &mut rng)?;
                Ok(path.values().iter().map(|v| v.norm()).fold(0.0, f64::max))
            })
            .collect::<Result<_>>()?;
        for (r, v) in maxima.iter().enumerate() {
            rep.rows.push(RawRow {
                replication: r,
                n,
                metric: "max_stat".into(),
                value: *v,
            });
        }
        let s = sorted(&maxima);
        let median = quantile_sorted(&s, 0.5);
        rep.set(format!("median_max_n{n}"), median);
        let grid = match &cfg.x_grid {
            Some(g) => g.clone(),
            None => default_x_grid(&s, cfg.x_points),
        };
        let base = BoundInputs {
            r: cfg.r,
            q: 1,
            n,
            x: 1.0,
            level: None,
            m_le,
            m_gt: 0.0,
            sup_lag_mean: sup_lag,
            beta_q: 0.0,
            c_r,
        };
        let (mut counted, mut dominated, mut above, mut above_dom, mut saturated) = (0, 0, 0, 0, 0);
        let mut needed = 0.0_f64;
        for &x in &grid {
            let inputs = BoundInputs { x, ..base.clone() };
            let (q, b) = optimize_q(&inputs, 1..=(n - 1) / 2, |q| profile.beta_at(q))?;
            let tail = maxima.iter().filter(|&&m| m > x).count() as f64 / maxima.len() as f64;
            let point = BoundPoint {
                n,
                x,
                empirical_tail: tail,
                bound: b.total,
                terms: b.terms,
                q,
                dominated: b.total >= tail,
                saturated: tail >= 1.0 && b.total < 1.0,
                above_median: x > median,
            };
            let per_unit = (b.terms[0] + b.terms[1] + b.terms[2]) / c_r;
            if tail > b.terms[3] && per_unit > 0.0 {
                needed = needed.max((tail - b.terms[3]) / per_unit);
            }
            if point.saturated {
                saturated += 1;
                rep.flags.push(format!(
                    "N = {n}, x = {x}: empirical tail saturated at 1, point excluded"
                ));
            } else {
                counted += 1;
                dominated += point.dominated as usize;
            }
            if point.above_median {
                above += 1;
                above_dom += point.dominated as usize;
            }
            rep.points.push(point);
        }
        rep.set(
            format!("domination_rate_n{n}"),
            if counted > 0 {
                dominated as f64 / counted as f64
            } else {
                f64::NAN
            },
        );
        rep.set(
            format!("domination_rate_above_median_n{n}"),
            if above > 0 {
                above_dom as f64 / above as f64
            } else {
                f64::NAN
            },
        );
        rep.set(format!("points_above_median_n{n}"), above as f64);
        rep.set(format!("saturated_points_n{n}"), saturated as f64);
        rep.set(format!("min_c_r_n{n}"), needed);
    }
    Ok(rep)
}

/// Log-spaced levels from the 5% quantile to 1.5 times the maximum of the sample.
fn default_x_grid(sorted_sample: &[f64], points: usize) -> Vec<f64> {
    let top = 1.5 * sorted_sample.last().cloned().unwrap_or(1.0).max(1e-12);
    let mut lo = quantile_sorted(sorted_sample, 0.05);
    if !(lo > 0.0) {
        lo = top / 100.0;
    }
    if points == 1 {
        return vec![lo];
    }
    (0..points)
        .map(|i| lo * (top / lo).powf(i as f64 / (points - 1) as f64))
        .collect()
}

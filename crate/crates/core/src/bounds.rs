//! Deviation bound for maxima of degenerate U-statistics, rate planning and
//! mixing-hypothesis checks.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{degeneracy_defect, norm_moments, Kernel};
use crate::processes::{simulate, ProcessModel, TailModel};
use crate::rng::stream;
use crate::ustat::u_stat_prefixes;

/// Inputs of the four-term deviation bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub r: f64,
    pub q: usize,
    pub n: usize,
    pub x: f64,
    /// Truncation level `R`; `None` means `R = infinity`.
    pub level: Option<f64>,
    /// `E[H^r 1{H <= R}]`.
    pub m_le: f64,
    /// `E[H 1{H > R}]`.
    pub m_gt: f64,
    /// `sup_{j >= 2} E ||h(X_1, X_j)||`.
    pub sup_lag_mean: f64,
    /// `beta(q)`.
    pub beta_q: f64,
    pub c_r: f64,
}

/// Evaluated bound and its four terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub total: f64,
    /// Moment term, truncation term, lag-mean term, mixing term.
    pub terms: [f64; 4],
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.r >= 2.0 && self.r.is_finite()) {
            return bad("moment order r must be finite and at least 2");
        }
        if self.q == 0 || self.n <= 2 * self.q {
            return Err(Error::Precondition(format!(
                "need N > 2q >= 2, got N = {}, q = {}",
                self.n, self.q
            )));
        }
        if !(self.x > 0.0) {
            return bad("deviation level x must be positive");
        }
        if let Some(l) = self.level {
            if !(l > 0.0) {
                return bad("truncation level R must be positive");
            }
        }
        for (name, v) in [
            ("m_le", self.m_le),
            ("m_gt", self.m_gt),
            ("sup_lag_mean", self.sup_lag_mean),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and nonnegative"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.beta_q) {
            return bad("beta(q) must lie in [0, 1]");
        }
        if !(self.c_r > 0.0 && self.c_r.is_finite()) {
            return bad("C_r must be positive");
        }
        Ok(())
    }
}

/// `C x^-r q^r N^r m_le + C x^-1 N^2 m_gt + C x^-1 q N sup + 4 N beta(q)`.
pub fn deviation_bound(inputs: &BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let BoundInputs { r, q, n, x, c_r, .. } = *inputs;
    let (q, n) = (q as f64, n as f64);
    let t1 = c_r * x.powf(-r) * q.powf(r) * n.powf(r) * inputs.m_le;
    let t2 = if inputs.level.is_some() {
        c_r / x * n * n * inputs.m_gt
    } else {
        0.0
    };
    let t3 = c_r / x * q * n * inputs.sup_lag_mean;
    let t4 = 4.0 * n * inputs.beta_q;
    Ok(BoundReport {
        total: t1 + t2 + t3 + t4,
        terms: [t1, t2, t3, t4],
    })
}

/// Minimizes the bound over `q`; `beta(q)` comes from `beta`. Ties go to the smaller `q`.
pub fn optimize_q<I, F>(inputs: &BoundInputs, q_range: I, beta: F) -> Result<(usize, BoundReport)>
where
    I: IntoIterator<Item = usize>,
    F: Fn(usize) -> f64,
{
    let mut best: Option<(usize, BoundReport)> = None;
    for q in q_range {
        if q == 0 || 2 * q >= inputs.n {
            continue;
        }
        let cand = BoundInputs {
            q,
            beta_q: beta(q),
            ..inputs.clone()
        };
        let rep = deviation_bound(&cand)?;
        let better = match &best {
            None => true,
            Some((bq, b)) => rep.total < b.total || (rep.total == b.total && q < *bq),
        };
        if better {
            best = Some((q, rep));
        }
    }
    best.ok_or_else(|| Error::Precondition("no feasible q with 2q < N in the range".into()))
}

/// `sup_{j >= 2} E ||h(X_1, X_j)||` for a finite model, exact through `pi` and `P^(j-1)`.
///
/// Lags are scanned until `P^(j-1)` is within `1e-14` of `pi` in total variation,
/// after which the pair is independent to that accuracy and the independent value closes the sup.
pub fn sup_lag_mean_norm(model: &ProcessModel, h: &Kernel, max_lag: usize) -> Result<f64> {
    let chain = model.as_chain()?;
    let states = chain.all_states();
    let pi = chain.stationary();
    let n = states.len();
    let norms: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| h.eval(&states[i], &states[j]).norm())
        .collect();
    let at = |pk: &nalgebra::DMatrix<f64>| -> f64 {
        (0..n)
            .map(|i| pi[i] * (0..n).map(|j| pk[(i, j)] * norms[i * n + j]).sum::<f64>())
            .sum()
    };
    let independent: f64 = (0..n)
        .map(|i| pi[i] * (0..n).map(|j| pi[j] * norms[i * n + j]).sum::<f64>())
        .sum();
    let mut best = independent;
    let mut pk = chain.transition().clone();
    for _ in 1..=max_lag.max(1) {
        best = best.max(at(&pk));
        let tv: f64 = (0..n)
            .map(|i| pi[i] * (0..n).map(|j| (pk[(i, j)] - pi[j]).abs()).sum::<f64>())
            .sum();
        if tv < 1e-14 {
            break;
        }
        pk = &pk * chain.transition();
    }
    Ok(best)
}

/// Theorem whose rate schedule is planned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Theorem {
    /// Non-degenerate, `p + delta >= 2`.
    T2,
    /// Non-degenerate, `p + delta < 2`.
    T3,
    /// Degenerate, `p + delta >= 2`.
    T4,
    /// Degenerate, `p + delta < 2`.
    T5,
    /// Functional CLT.
    Fclt,
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Theorem::T2 => "T2",
            Theorem::T3 => "T3",
            Theorem::T4 => "T4",
            Theorem::T5 => "T5",
            Theorem::Fclt => "FCLT",
        })
    }
}

impl FromStr for Theorem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "T2" => Ok(Theorem::T2),
            "T3" => Ok(Theorem::T3),
            "T4" => Ok(Theorem::T4),
            "T5" => Ok(Theorem::T5),
            "FCLT" | "T1" => Ok(Theorem::Fclt),
            _ => Err(Error::InvalidParameter(format!(
                "unknown theorem `{s}` (expected T2, T3, T4, T5 or FCLT)"
            ))),
        }
    }
}

impl Theorem {
    pub fn is_degenerate(self) -> bool {
        matches!(self, Theorem::T4 | Theorem::T5)
    }
}

/// Exponent schedule of one theorem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePlan {
    pub theorem: Theorem,
    pub p: f64,
    pub delta: f64,
    pub eta: f64,
    /// Weight exponent in the mixing series `sum_k k^gamma beta(k)`.
    pub gamma: Option<f64>,
    /// Comparison exponent `max{p - 2 + p(p-1)/delta, 1}`.
    pub gamma_prime: Option<f64>,
    /// Block-length exponent (`q ~ 2^{Ma}`).
    pub a: Option<f64>,
    /// Truncation exponent (`R ~ 2^{Mb}`).
    pub b: Option<f64>,
    /// Exponent of the normalization `n^e`.
    pub normalization: f64,
}

/// `max{p - 2 + p(p-1)/delta, 1}`.
pub fn gamma_prime(p: f64, delta: f64) -> f64 {
    (p - 2.0 + p * (p - 1.0) / delta).max(1.0)
}

/// `max{p - 1 + eta, p - 2 + p(p-1)/delta}`.
pub fn gamma_t2(p: f64, delta: f64, eta: f64) -> f64 {
    (p - 1.0 + eta).max(p - 2.0 + p * (p - 1.0) / delta)
}

/// `max{p - 2 + p(p-1)/delta, (p(p-1) + (p-1)delta) / (p(p-1) + (p+1)delta)}`.
pub fn gamma_t3(p: f64, delta: f64) -> f64 {
    let pp = p * (p - 1.0);
    (p - 2.0 + pp / delta).max((pp + (p - 1.0) * delta) / (pp + (p + 1.0) * delta))
}

/// Closed-form exponents of the named theorem.
pub fn rate_plan(theorem: Theorem, p: f64, delta: f64, eta: f64) -> Result<RatePlan> {
    let region = |m: String| Err(Error::InvalidParameter(m));
    if theorem != Theorem::Fclt && !(p > 1.0 && p < 2.0) {
        return region(format!("{theorem} needs 1 < p < 2, got p = {p}"));
    }
    if !(delta >= 0.0 && delta.is_finite()) || !(eta >= 0.0 && eta.is_finite()) {
        return region("delta and eta must be finite and nonnegative".into());
    }
    let needs_eta = |eta: f64| {
        if eta > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("{theorem} needs eta > 0")))
        }
    };
    let mut plan = RatePlan {
        theorem,
        p,
        delta,
        eta,
        gamma: None,
        gamma_prime: None,
        a: None,
        b: None,
        normalization: 1.0 + 1.0 / p,
    };
    match theorem {
        Theorem::T2 => {
            if p + delta < 2.0 {
                return region(format!("T2 needs p + delta >= 2, got {}", p + delta));
            }
            needs_eta(eta)?;
            plan.gamma = Some(gamma_t2(p, delta, eta));
            plan.gamma_prime = Some(gamma_prime(p, delta));
            plan.a = Some(1.0 / (p + eta));
        }
        Theorem::T3 => {
            if !(p + delta < 2.0) || delta <= 0.0 {
                return region(format!(
                    "T3 needs 0 < delta and p + delta < 2, got p + delta = {}",
                    p + delta
                ));
            }
            let s = p + delta - 1.0;
            let a = (p * (p - 1.0) + delta * (p + 1.0)) / (2.0 * p * s);
            if !(a < 1.0 / p) {
                return Err(Error::Precondition(format!("T3 schedule a = {a} is not below 1/p")));
            }
            plan.gamma = Some(gamma_t3(p, delta));
            plan.gamma_prime = Some(gamma_prime(p, delta));
            plan.a = Some(a);
            plan.b = Some((p - 1.0) / (p * s));
        }
        Theorem::T4 => {
            if p + delta < 2.0 {
                return region(format!("T4 needs p + delta >= 2, got {}", p + delta));
            }
            needs_eta(eta)?;
            plan.gamma = Some(2.0 * (p - 1.0) / (2.0 - p) + eta);
            plan.a = Some(1.0 / (eta + p / (2.0 - p)));
            plan.normalization = 2.0 / p;
        }
        Theorem::T5 => {
            if !(p + delta < 2.0) || delta <= 0.0 {
                return region(format!(
                    "T5 needs 0 < delta and p + delta < 2, got p + delta = {}",
                    p + delta
                ));
            }
            let s = p + delta - 1.0;
            plan.gamma = Some(p - 1.0 + p * (p - 1.0) / delta);
            plan.a = Some(delta / (p * s));
            plan.b = Some(p * s / (2.0 * (p - 1.0)));
            plan.normalization = 2.0 / p;
        }
        Theorem::Fclt => {
            needs_eta(eta)?;
            // q = floor(eta sqrt(N))
            plan.a = Some(0.5);
            plan.normalization = 1.5;
        }
    }
    Ok(plan)
}

/// Outcome of a mixing-hypothesis check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisOutcome {
    pub pass: bool,
    /// `s - (gamma + 1)` for polynomial tails (`s - 2` for the FCLT condition); infinite for geometric tails.
    pub margin: f64,
    pub condition: String,
}

/// Checks the mixing condition of `theorem` against a closed-form tail of `beta`.
pub fn hypothesis_check(tail: &TailModel, theorem: Theorem, p: f64, delta: f64, eta: f64) -> Result<HypothesisOutcome> {
    let (threshold, condition) = if theorem == Theorem::Fclt {
        (2.0, "lim n^2 beta(n) = 0".to_string())
    } else {
        let plan = rate_plan(theorem, p, delta, eta)?;
        let g = plan.gamma.expect("SLLN plans carry gamma");
        (g + 1.0, format!("sum_k k^{g:.6} beta(k) < infinity"))
    };
    Ok(match *tail {
        TailModel::Geometric { .. } => HypothesisOutcome {
            pass: true,
            margin: f64::INFINITY,
            condition,
        },
        TailModel::Polynomial { s, .. } => HypothesisOutcome {
            pass: s > threshold,
            margin: s - threshold,
            condition,
        },
        TailModel::NonMixing { .. } => HypothesisOutcome {
            pass: false,
            margin: f64::NEG_INFINITY,
            condition: format!("{condition} (beta does not tend to 0)"),
        },
    })
}

/// Ratio of the last two dyadic block sums of a nonnegative series.
///
/// For power-law terms the ratio tends to `2^{e+1}` where `e` is the term exponent;
/// a ratio below one classifies the series as convergent.
pub fn dyadic_block_ratio<F: Fn(u64) -> f64>(term: F, blocks: u32) -> f64 {
    let block = |m: u32| -> f64 { ((1u64 << m)..(1u64 << (m + 1))).map(&term).sum() };
    let last = block(blocks);
    let prev = block(blocks - 1);
    if prev == 0.0 {
        if last == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        last / prev
    }
}

/// Ratio of the last two terms of `sum_M 2^M beta(floor(2^{Ma}))`.
pub fn condensed_term_ratio<F: Fn(u64) -> f64>(beta: F, a: f64, m: u32) -> f64 {
    let t = |m: u32| 2f64.powi(m as i32) * beta(2f64.powf(m as f64 * a).floor() as u64);
    t(m) / t(m - 1)
}

/// Upper-tail quantile function `Q(u) = inf{t >= 0 : P(Y > t) <= u}`.
#[derive(Clone)]
pub enum Quantile {
    /// Finite law: values sorted decreasingly with their cumulative upper-tail masses.
    Finite {
        values: Vec<f64>,
        cum: Vec<f64>,
    },
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Quantile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Quantile::Finite { values, cum } => f
                .debug_struct("Finite")
                .field("values", values)
                .field("cum", cum)
                .finish(),
            Quantile::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl Quantile {
    /// Quantile of a nonnegative variable taking `values[i]` with probability `probs[i]`.
    pub fn from_finite(values: &[f64], probs: &[f64]) -> Result<Self> {
        if values.len() != probs.len() || values.is_empty() {
            return Err(Error::InvalidParameter("values and probabilities must match".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 || probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::NotNormalized(total));
        }
        let mut pairs: Vec<(f64, f64)> = values.iter().map(|v| v.max(0.0)).zip(probs.iter().cloned()).collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut vals: Vec<f64> = Vec::new();
        let mut cum: Vec<f64> = Vec::new();
        let mut acc = 0.0;
        for (v, p) in pairs {
            if p == 0.0 {
                continue;
            }
            acc += p;
            if vals.last() == Some(&v) {
                *cum.last_mut().unwrap() = acc;
            } else {
                vals.push(v);
                cum.push(acc);
            }
        }
        Ok(Quantile::Finite { values: vals, cum })
    }

    /// Quantile given as a function on `(0, 1)`; monotonicity is checked on a grid.
    pub fn from_fn<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Result<Self> {
        let grid: Vec<f64> = (1..=1000).map(|i| i as f64 / 1001.0).collect();
        let vals: Vec<f64> = grid.iter().map(|&u| f(u)).collect();
        if vals.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-12) + 1e-300) {
            return Err(Error::NonMonotoneQuantile);
        }
        Ok(Quantile::Function(Arc::new(f)))
    }

    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Quantile::Finite { values, cum } => {
                // Q(u) = values[j] for u in [cum[j-1], cum[j])
                let j = cum.partition_point(|&c| c <= u);
                values.get(j).cloned().unwrap_or(0.0)
            }
            Quantile::Function(f) => f(u),
        }
    }

    /// `int_0^alpha Q(u)^2 du`.
    pub fn integral_sq(&self, alpha: f64) -> f64 {
        if alpha <= 0.0 {
            return 0.0;
        }
        match self {
            Quantile::Finite { values, cum } => {
                let mut lo = 0.0;
                let mut total = 0.0;
                for (v, &c) in values.iter().zip(cum) {
                    let hi = c.min(alpha);
                    if hi > lo {
                        total += v * v * (hi - lo);
                    }
                    lo = c;
                    if c >= alpha {
                        break;
                    }
                }
                total
            }
            Quantile::Function(f) => {
                let g = |u: f64| f(u).powi(2);
                if g(0.0).is_finite() {
                    adaptive_simpson(&g, 0.0, alpha, 1e-8)
                } else {
                    // integrable singularity at 0: sum dyadic shells towards the origin
                    let mut total = 0.0;
                    let mut hi = alpha;
                    for _ in 0..200 {
                        let lo = hi / 2.0;
                        let piece = adaptive_simpson(&g, lo, hi, 1e-8);
                        total += piece;
                        if piece <= 1e-12 * total {
                            break;
                        }
                        hi = lo;
                    }
                    total
                }
            }
        }
    }
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            left + right + diff / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = simpson(fa, fm, fb, a, b);
    let tol = (rel_tol * whole.abs()).max(1e-300);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `sum_{k=1}^{K} int_0^{alpha(k)} Q(u)^2 du`, with `alpha[k-1] = alpha(k)`.
pub fn c1_integral(alpha: &[f64], q: &Quantile) -> Result<f64> {
    if alpha.iter().any(|a| !(0.0..=0.25 + 1e-15).contains(a)) {
        return Err(Error::InvalidParameter(
            "alpha coefficients must lie in [0, 1/4]".into(),
        ));
    }
    Ok(alpha.iter().map(|&a| q.integral_sq(a)).sum())
}

/// Empirical surrogate for `C_r`.
///
/// On i.i.d. data with `q = 1`, returns twice the smallest `c` with
/// `mean(max_n ||U_n||^r) <= c N^r E[H^r]` over `reps` seeded replications.
pub fn calibrate_cr(model: &ProcessModel, h: &Kernel, r: f64, n: usize, reps: usize, seed: u64) -> Result<f64> {
    let law = match model {
        ProcessModel::IidFinite(law) => law,
        _ => return Err(Error::InvalidModel("calibration runs on an i.i.d. finite model".into())),
    };
    if n < 2 || reps == 0 || !(r >= 1.0) {
        return Err(Error::InvalidParameter(
            "calibration needs N >= 2, reps >= 1 and r >= 1".into(),
        ));
    }
    let defect = degeneracy_defect(h, law);
    if defect > 1e-10 {
        return Err(Error::NotDegenerate(defect));
    }
    let (moment, _) = norm_moments(h, law, r, f64::INFINITY);
    if moment == 0.0 {
        return Ok(0.0);
    }
    let maxima: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| -> Result<f64> {
            let xs = simulate(model, n, &mut stream(seed, rep as u64))?;
            let path = u_stat_prefixes(h, &xs)?;
            Ok(path.values().iter().map(|v| v.norm()).fold(0.0, f64::max).powf(r))
        })
        .collect::<Result<_>>()?;
    let mean = maxima.iter().sum::<f64>() / reps as f64;
    Ok(2.0 * mean / ((n as f64).powf(r) * moment))
}

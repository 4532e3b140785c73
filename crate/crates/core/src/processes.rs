//! Strictly stationary generators with known mixing coefficients, and the
//! Berbee coupling used to replace dependent blocks by independent copies.
//!
//! For a stationary Markov chain the coefficient between the whole past and
//! the whole future at lag `k` reduces to the single-pair coefficient between
//! `X_0` and `X_k`, so the finite models report exact profiles. The Gaussian
//! AR(1) model reports the bound `beta(k) <= sqrt(-ln(1 - rho^(2k))) / 2`
//! (Pinsker's inequality applied to the conditional law), flagged as an upper
//! bound.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{sample_index, FiniteLaw, MarginalLaw, State};

const STOCHASTIC_TOL: f64 = 1e-12;
const STATIONARY_TOL: f64 = 1e-10;

/// Largest state count accepted by the exhaustive alpha search.
pub const ALPHA_MAX_STATES: usize = 12;

/// Finite-state stationary Markov chain with an embedding of states into `R^m`.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovChain {
    p: DMatrix<f64>,
    pi: Vec<f64>,
    embedding: Vec<Vec<f64>>,
}

impl MarkovChain {
    /// Builds a chain; the stationary law is solved for when not supplied.
    pub fn new(transition: Vec<Vec<f64>>, stationary: Option<Vec<f64>>, embedding: Vec<Vec<f64>>) -> Result<Self> {
        let n = transition.len();
        if n == 0 || transition.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidModel(
                "transition matrix must be square and non-empty".into(),
            ));
        }
        let p = DMatrix::from_fn(n, n, |i, j| transition[i][j]);
        check_stochastic(&p)?;
        if embedding.len() != n {
            return Err(Error::InvalidModel(format!(
                "embedding has {} rows for {n} states",
                embedding.len()
            )));
        }
        let m = embedding[0].len();
        if embedding.iter().any(|e| e.len() != m) {
            return Err(Error::InvalidModel("embedding vectors must share one dimension".into()));
        }
        let pi = match stationary {
            Some(pi) => pi,
            None => solve_stationary(&p)?,
        };
        if pi.len() != n || pi.iter().any(|x| !(*x >= -1e-15)) {
            return Err(Error::InvalidModel(
                "stationary law must be a probability vector".into(),
            ));
        }
        let total: f64 = pi.iter().sum();
        if (total - 1.0).abs() > STATIONARY_TOL {
            return Err(Error::NotNormalized(total));
        }
        for j in 0..n {
            let v: f64 = (0..n).map(|i| pi[i] * p[(i, j)]).sum();
            if (v - pi[j]).abs() > STATIONARY_TOL {
                return Err(Error::InvalidModel(format!(
                    "pi P != pi at state {j} ({v} vs {})",
                    pi[j]
                )));
            }
        }
        Ok(MarkovChain { p, pi, embedding })
    }

    /// Symmetric two-state chain flipping with probabilities `a` (0 -> 1) and `b` (1 -> 0),
    /// states embedded as the scalars 0 and 1.
    pub fn two_state(a: f64, b: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a + b == 0.0 {
            return Err(Error::InvalidModel(
                "two-state chain needs a, b in [0,1] with a + b > 0".into(),
            ));
        }
        MarkovChain::new(
            vec![vec![1.0 - a, a], vec![b, 1.0 - b]],
            Some(vec![b / (a + b), a / (a + b)]),
            vec![vec![0.0], vec![1.0]],
        )
    }

    pub fn states(&self) -> usize {
        self.pi.len()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn stationary(&self) -> &[f64] {
        &self.pi
    }

    pub fn embedding(&self) -> &[Vec<f64>] {
        &self.embedding
    }

    pub fn state(&self, i: usize) -> State {
        State::labeled(i, self.embedding[i].clone())
    }

    pub fn all_states(&self) -> Vec<State> {
        (0..self.states()).map(|i| self.state(i)).collect()
    }

    pub fn marginal(&self) -> FiniteLaw {
        FiniteLaw::new(self.all_states(), self.pi.clone()).expect("stationary law is normalized")
    }

    /// `P^k`.
    pub fn power(&self, k: usize) -> DMatrix<f64> {
        matrix_power(&self.p, k)
    }

    /// Joint law of `(X_0, X_k)` as a table indexed `[x0][xk]`.
    pub fn pair_law(&self, k: usize) -> Vec<Vec<f64>> {
        let pk = self.power(k);
        let n = self.states();
        (0..n)
            .map(|i| (0..n).map(|j| self.pi[i] * pk[(i, j)]).collect())
            .collect()
    }
}

fn check_stochastic(p: &DMatrix<f64>) -> Result<()> {
    for i in 0..p.nrows() {
        if p.row(i).iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::NotStochastic { row: i, sum: f64::NAN });
        }
        let sum: f64 = p.row(i).iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::NotStochastic { row: i, sum });
        }
    }
    Ok(())
}

fn solve_stationary(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = p.nrows();
    let mut a = p.transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = nalgebra::DVector::zeros(n);
    b[n - 1] = 1.0;
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::InvalidModel("stationary law is not unique".into()))?;
    Ok(x.iter().map(|v| v.max(0.0)).collect())
}

fn matrix_power(p: &DMatrix<f64>, mut k: usize) -> DMatrix<f64> {
    let n = p.nrows();
    let mut result = DMatrix::identity(n, n);
    let mut base = p.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        base = &base * &base;
        k >>= 1;
    }
    result
}

/// A strictly stationary generator.
#[derive(Clone, Debug, PartialEq)]
pub enum ProcessModel {
    IidFinite(FiniteLaw),
    MarkovFinite(MarkovChain),
    Ar1Gaussian { rho: f64, noise_variance: f64 },
}

impl ProcessModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            ProcessModel::Ar1Gaussian { rho, noise_variance } => {
                if !(rho.abs() < 1.0) {
                    return Err(Error::InvalidModel(format!("AR(1) needs |rho| < 1, got {rho}")));
                }
                if !(*noise_variance > 0.0 && noise_variance.is_finite()) {
                    return Err(Error::InvalidModel("AR(1) noise variance must be positive".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn is_finite(&self) -> bool {
        !matches!(self, ProcessModel::Ar1Gaussian { .. })
    }

    /// The model as a Markov chain (i.i.d. laws become chains with identical rows).
    pub fn as_chain(&self) -> Result<MarkovChain> {
        match self {
            ProcessModel::MarkovFinite(c) => Ok(c.clone()),
            ProcessModel::IidFinite(law) => {
                let n = law.len();
                for (i, s) in law.support().iter().enumerate() {
                    if s.label() != Some(i) {
                        return Err(Error::InvalidModel(
                            "i.i.d. support must be labeled 0..n in order".into(),
                        ));
                    }
                }
                let w = law.weights().to_vec();
                MarkovChain::new(
                    vec![w.clone(); n],
                    Some(w),
                    law.support().iter().map(|s| s.coords().to_vec()).collect(),
                )
            }
            ProcessModel::Ar1Gaussian { .. } => {
                Err(Error::InvalidModel("AR(1) model has no finite state space".into()))
            }
        }
    }

    /// Marginal law of `X_1`.
    pub fn marginal(&self, mc_budget: Option<usize>, seed: u64) -> MarginalLaw {
        match self {
            ProcessModel::IidFinite(law) => law.clone().into(),
            ProcessModel::MarkovFinite(c) => c.marginal().into(),
            ProcessModel::Ar1Gaussian { rho, noise_variance } => {
                let sd = (noise_variance / (1.0 - rho * rho)).sqrt();
                MarginalLaw::sampled(
                    move |rng| State::scalar(Normal::new(0.0, sd).unwrap().sample(rng)),
                    mc_budget,
                    seed,
                )
            }
        }
    }

    /// Mixing profile for `k = 1..=max_lag`.
    pub fn mixing_profile(&self, max_lag: usize) -> Result<MixingProfile> {
        match self {
            ProcessModel::Ar1Gaussian { rho, .. } => {
                self.validate()?;
                let beta: Vec<f64> = (1..=max_lag).map(|k| ar1_beta_bound(*rho, k)).collect();
                let alpha = beta.iter().map(|b| b.min(0.25)).collect();
                Ok(MixingProfile {
                    beta,
                    alpha,
                    kind: ProfileKind::UpperBound,
                })
            }
            _ => {
                let chain = self.as_chain()?;
                let can_alpha = chain.states() <= ALPHA_MAX_STATES;
                let mut beta = Vec::with_capacity(max_lag);
                let mut alpha = Vec::with_capacity(max_lag);
                let mut pk = chain.p.clone();
                for _ in 1..=max_lag {
                    beta.push(beta_from_power(&pk, &chain.pi));
                    alpha.push(if can_alpha {
                        alpha_from_power(&pk, &chain.pi)
                    } else {
                        beta.last().unwrap().min(0.25)
                    });
                    pk = &pk * &chain.p;
                }
                Ok(MixingProfile {
                    beta,
                    alpha,
                    kind: if can_alpha {
                        ProfileKind::Exact
                    } else {
                        ProfileKind::ExactBetaBoundedAlpha
                    },
                })
            }
        }
    }

    /// Closed-form tail model of `beta(k)`.
    pub fn tail_model(&self) -> Result<TailModel> {
        match self {
            ProcessModel::Ar1Gaussian { rho, .. } => {
                self.validate()?;
                // sqrt(-ln(1-x)) / 2 <= sqrt(x / (1-x)) / 2 with x = rho^(2k)
                let c = 0.5 / (1.0 - rho * rho).sqrt();
                Ok(TailModel::Geometric { c, lambda: rho.abs() })
            }
            _ => {
                let chain = self.as_chain()?;
                let (k1, k2) = (64usize, 128usize);
                let b1 = beta_from_power(&chain.power(k1), &chain.pi);
                let b2 = beta_from_power(&chain.power(k2), &chain.pi);
                if b2 < 1e-14 {
                    // decay already below rounding: report the envelope over the early lags
                    let prof = self.mixing_profile(k1)?;
                    let lambda = estimate_rate(&prof.beta);
                    let c = envelope(&prof.beta, lambda);
                    return Ok(TailModel::Geometric { c, lambda });
                }
                if b2 > 0.5 * b1 {
                    return Ok(TailModel::NonMixing { beta_limit: b2 });
                }
                let lambda = (b2 / b1).powf(1.0 / (k2 - k1) as f64);
                let prof = self.mixing_profile(k2)?;
                let c = envelope(&prof.beta, lambda);
                Ok(TailModel::Geometric { c, lambda })
            }
        }
    }
}

fn estimate_rate(beta: &[f64]) -> f64 {
    let pos: Vec<(usize, f64)> = beta.iter().cloned().enumerate().filter(|(_, b)| *b > 1e-13).collect();
    match (pos.first(), pos.last()) {
        (Some(&(i, bi)), Some(&(j, bj))) if j > i => (bj / bi).powf(1.0 / (j - i) as f64),
        _ => 0.0,
    }
}

fn envelope(beta: &[f64], lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return beta.first().cloned().unwrap_or(0.0);
    }
    // lags lost in rounding noise say nothing about the constant
    beta.iter()
        .enumerate()
        .filter(|(_, b)| **b > 1e-13)
        .map(|(i, b)| b / lambda.powi(i as i32 + 1))
        .fold(0.0, f64::max)
}

/// Upper bound on `beta(k)` for a stationary Gaussian AR(1).
pub fn ar1_beta_bound(rho: f64, k: usize) -> f64 {
    let x = rho.abs().powi(k as i32 * 2);
    if x >= 1.0 {
        return 1.0;
    }
    (0.5 * (-(1.0 - x).ln()).sqrt()).min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Exact,
    /// Exact beta; alpha replaced by `min(beta, 1/4)` (too many states to enumerate).
    ExactBetaBoundedAlpha,
    UpperBound,
}

/// `beta(k)` and `alpha(k)` for `k = 1..=K` (index 0 holds lag 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingProfile {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub kind: ProfileKind,
}

impl MixingProfile {
    pub fn beta_at(&self, k: usize) -> f64 {
        if k == 0 {
            return 1.0;
        }
        *self.beta.get(k - 1).unwrap_or_else(|| self.beta.last().unwrap_or(&1.0))
    }

    pub fn alpha_at(&self, k: usize) -> f64 {
        if k == 0 {
            return 0.25;
        }
        *self
            .alpha
            .get(k - 1)
            .unwrap_or_else(|| self.alpha.last().unwrap_or(&0.25))
    }

    /// True when both sequences are nonincreasing up to `tol`.
    pub fn is_monotone(&self, tol: f64) -> bool {
        self.beta.windows(2).all(|w| w[1] <= w[0] + tol) && self.alpha.windows(2).all(|w| w[1] <= w[0] + tol)
    }
}

/// Closed-form tail of the beta coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailModel {
    /// `beta(k) <= c lambda^k`.
    Geometric { c: f64, lambda: f64 },
    /// `beta(k) <= c k^(-s)`.
    Polynomial { c: f64, s: f64 },
    /// `beta(k)` does not tend to zero.
    NonMixing { beta_limit: f64 },
}

fn beta_from_power(pk: &DMatrix<f64>, pi: &[f64]) -> f64 {
    let n = pi.len();
    let mut total = 0.0;
    for i in 0..n {
        let row: f64 = (0..n).map(|j| (pk[(i, j)] - pi[j]).abs()).sum();
        total += pi[i] * row;
    }
    0.5 * total
}

fn alpha_from_power(pk: &DMatrix<f64>, pi: &[f64]) -> f64 {
    let n = pi.len();
    let mut best = 0.0_f64;
    let mut c = vec![0.0; n];
    for a in 1u32..(1u32 << n) {
        let pa: f64 = (0..n).filter(|i| a >> i & 1 == 1).map(|i| pi[i]).sum();
        for (j, cj) in c.iter_mut().enumerate() {
            let joint: f64 = (0..n).filter(|i| a >> i & 1 == 1).map(|i| pi[i] * pk[(i, j)]).sum();
            *cj = joint - pa * pi[j];
        }
        // best B for this A: all positive or all negative deviations
        let pos: f64 = c.iter().filter(|x| **x > 0.0).sum();
        let neg: f64 = -c.iter().filter(|x| **x < 0.0).sum::<f64>();
        best = best.max(pos).max(neg);
    }
    best
}

fn checked_chain_matrix(p: &[Vec<f64>], pi: &[f64]) -> Result<DMatrix<f64>> {
    let n = p.len();
    if n == 0 || p.iter().any(|r| r.len() != n) || pi.len() != n {
        return Err(Error::InvalidModel(
            "transition matrix must be square and match pi".into(),
        ));
    }
    let m = DMatrix::from_fn(n, n, |i, j| p[i][j]);
    check_stochastic(&m)?;
    Ok(m)
}

/// `beta(sigma(X_0), sigma(X_k)) = (1/2) sum_i pi_i sum_j |P^k(i,j) - pi_j|`.
pub fn beta_pair_exact(p: &[Vec<f64>], pi: &[f64], k: usize) -> Result<f64> {
    let m = checked_chain_matrix(p, pi)?;
    if k == 0 {
        return Err(Error::InvalidParameter("lag must be at least 1".into()));
    }
    Ok(beta_from_power(&matrix_power(&m, k), pi))
}

/// `max_{A,B} |P(X_0 in A, X_k in B) - P(X_0 in A) P(X_k in B)|`, exhaustive over `A`.
pub fn alpha_pair_exact(p: &[Vec<f64>], pi: &[f64], k: usize) -> Result<f64> {
    let m = checked_chain_matrix(p, pi)?;
    if p.len() > ALPHA_MAX_STATES {
        return Err(Error::TooManyStates {
            states: p.len(),
            max: ALPHA_MAX_STATES,
        });
    }
    if k == 0 {
        return Err(Error::InvalidParameter("lag must be at least 1".into()));
    }
    Ok(alpha_from_power(&matrix_power(&m, k), pi))
}

/// Indexed sample `X_first, ..., X_last`; `first` may be negative.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    first: i64,
    states: Vec<State>,
}

impl Path {
    pub fn new(first: i64, states: Vec<State>) -> Self {
        Path { first, states }
    }

    /// One-sided path `X_1..X_n`.
    pub fn one_sided(states: Vec<State>) -> Self {
        Path { first: 1, states }
    }

    pub fn first_index(&self) -> i64 {
        self.first
    }

    pub fn last_index(&self) -> i64 {
        self.first + self.states.len() as i64 - 1
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn get(&self, i: i64) -> Result<&State> {
        if i < self.first || i > self.last_index() {
            return Err(Error::IndexOutOfRange {
                index: i,
                first: self.first,
                last: self.last_index(),
            });
        }
        Ok(&self.states[(i - self.first) as usize])
    }

    /// `X_i`; panics outside the sample.
    #[inline]
    pub fn at(&self, i: i64) -> &State {
        &self.states[(i - self.first) as usize]
    }

    /// `X_start, ..., X_{start+len-1}` as a slice.
    pub fn window(&self, start: i64, len: usize) -> Result<&[State]> {
        let end = start + len as i64 - 1;
        if start < self.first || end > self.last_index() {
            let index = if start < self.first { start } else { end };
            return Err(Error::IndexOutOfRange {
                index,
                first: self.first,
                last: self.last_index(),
            });
        }
        let a = (start - self.first) as usize;
        Ok(&self.states[a..a + len])
    }

    /// `X_1, ..., X_n` as a slice.
    pub fn from_one(&self, n: usize) -> Result<&[State]> {
        if self.first > 1 || self.last_index() < n as i64 {
            return Err(Error::SequenceTooShort(format!(
                "need X_1..X_{n}, have X_{}..X_{}",
                self.first,
                self.last_index()
            )));
        }
        let start = (1 - self.first) as usize;
        Ok(&self.states[start..start + n])
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }
}

/// Simulates `X_1..X_n` from the stationary law.
pub fn simulate<R: Rng + ?Sized>(model: &ProcessModel, n: usize, rng: &mut R) -> Result<Vec<State>> {
    Ok(simulate_range(model, 1, n as i64, rng)?.states)
}

/// Simulates `X_first..X_last`; a stationary path re-indexed to start at `first`.
pub fn simulate_range<R: Rng + ?Sized>(model: &ProcessModel, first: i64, last: i64, rng: &mut R) -> Result<Path> {
    model.validate()?;
    if last < first {
        return Err(Error::InvalidParameter("simulation needs at least one point".into()));
    }
    let n = (last - first + 1) as usize;
    let states = match model {
        ProcessModel::IidFinite(law) => (0..n).map(|_| law.sample(rng).clone()).collect(),
        ProcessModel::MarkovFinite(chain) => {
            let cum = CumulativeRows::new(chain);
            let mut s = sample_index(&chain.pi, rng);
            let mut out = Vec::with_capacity(n);
            out.push(chain.state(s));
            for _ in 1..n {
                s = cum.step(s, rng);
                out.push(chain.state(s));
            }
            out
        }
        ProcessModel::Ar1Gaussian { rho, noise_variance } => {
            let noise = Normal::new(0.0, noise_variance.sqrt()).map_err(|e| Error::InvalidModel(e.to_string()))?;
            let stat = Normal::new(0.0, (noise_variance / (1.0 - rho * rho)).sqrt())
                .map_err(|e| Error::InvalidModel(e.to_string()))?;
            let mut x = stat.sample(rng);
            let mut out = Vec::with_capacity(n);
            out.push(State::scalar(x));
            for _ in 1..n {
                x = rho * x + noise.sample(rng);
                out.push(State::scalar(x));
            }
            out
        }
    };
    Ok(Path { first, states })
}

struct CumulativeRows {
    rows: Vec<Vec<f64>>,
}

impl CumulativeRows {
    fn new(chain: &MarkovChain) -> Self {
        let n = chain.states();
        let rows = (0..n)
            .map(|i| {
                let mut acc = 0.0;
                (0..n)
                    .map(|j| {
                        acc += chain.p[(i, j)];
                        acc
                    })
                    .collect()
            })
            .collect();
        CumulativeRows { rows }
    }

    fn step<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let row = &self.rows[from];
        row.iter().position(|&c| u < c).unwrap_or_else(|| {
            let n = row.len();
            (0..n).rev().find(|&j| j == 0 || row[j] > row[j - 1]).unwrap_or(n - 1)
        })
    }
}

/// Conditional maximal coupling of `law(Y | X = x)` with `law(Y)` for every `x`.
#[derive(Clone, Debug)]
struct RowCoupling {
    /// Probability of keeping `Y = y` given `X = x`, indexed `[x][y]`.
    keep: Vec<Vec<f64>>,
    /// Law of the replacement value given `X = x`.
    residual: Vec<Vec<f64>>,
}

impl RowCoupling {
    fn new(conditional: &[Vec<f64>], target: &[f64]) -> Self {
        let mut keep = Vec::with_capacity(conditional.len());
        let mut residual = Vec::with_capacity(conditional.len());
        for row in conditional {
            let overlap: Vec<f64> = row.iter().zip(target).map(|(a, b)| a.min(*b)).collect();
            keep.push(
                row.iter()
                    .zip(&overlap)
                    .map(|(c, m)| if *c > 0.0 { m / c } else { 1.0 })
                    .collect(),
            );
            let excess: Vec<f64> = target.iter().zip(&overlap).map(|(q, m)| (q - m).max(0.0)).collect();
            let tv: f64 = excess.iter().sum();
            residual.push(if tv > 0.0 {
                excess.iter().map(|e| e / tv).collect()
            } else {
                target.to_vec()
            });
        }
        RowCoupling { keep, residual }
    }

    fn couple<R: Rng + ?Sized>(&self, x: usize, y: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        if u < self.keep[x][y] {
            y
        } else {
            sample_index(&self.residual[x], rng)
        }
    }
}

/// Berbee coupling for a finite joint law of `(X, Y)`.
///
/// Samples `(X, Y, Y*)` with `Y*` independent of `X`, distributed as `Y`, and
/// `P(Y != Y*) = beta(sigma(X), sigma(Y))`.
#[derive(Clone, Debug)]
pub struct BerbeeCoupler {
    joint: Vec<Vec<f64>>,
    flat: Vec<f64>,
    y_marginal: Vec<f64>,
    coupling: RowCoupling,
    beta: f64,
}

impl BerbeeCoupler {
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn y_marginal(&self) -> &[f64] {
        &self.y_marginal
    }

    pub fn joint(&self) -> &[Vec<f64>] {
        &self.joint
    }

    /// Draws `Y*` given an observed pair `(x, y)`.
    pub fn couple<R: Rng + ?Sized>(&self, x: usize, y: usize, rng: &mut R) -> usize {
        self.coupling.couple(x, y, rng)
    }

    /// Draws `(X, Y, Y*)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize, usize) {
        let ny = self.y_marginal.len();
        let k = sample_index(&self.flat, rng);
        let (x, y) = (k / ny, k % ny);
        (x, y, self.couple(x, y, rng))
    }
}

/// Builds the Berbee coupler for a joint table indexed `[x][y]`.
pub fn berbee_couple(joint: &[Vec<f64>]) -> Result<BerbeeCoupler> {
    let nx = joint.len();
    let ny = joint.first().map(|r| r.len()).unwrap_or(0);
    if nx == 0 || ny == 0 || joint.iter().any(|r| r.len() != ny) {
        return Err(Error::InvalidParameter(
            "joint table must be a non-empty rectangle".into(),
        ));
    }
    if joint.iter().flatten().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::InvalidParameter(
            "joint probabilities must be nonnegative".into(),
        ));
    }
    let total: f64 = joint.iter().flatten().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::NotNormalized(total));
    }
    let x_marginal: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let y_marginal: Vec<f64> = (0..ny).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
    let conditional: Vec<Vec<f64>> = joint
        .iter()
        .zip(&x_marginal)
        .map(|(r, px)| {
            if *px > 0.0 {
                r.iter().map(|v| v / px).collect()
            } else {
                y_marginal.clone()
            }
        })
        .collect();
    let beta = 0.5
        * joint
            .iter()
            .zip(&x_marginal)
            .map(|(r, px)| {
                r.iter()
                    .zip(&y_marginal)
                    .map(|(pxy, py)| (pxy - px * py).abs())
                    .sum::<f64>()
            })
            .sum::<f64>();
    Ok(BerbeeCoupler {
        joint: joint.to_vec(),
        flat: joint.iter().flatten().cloned().collect(),
        coupling: RowCoupling::new(&conditional, &y_marginal),
        y_marginal,
        beta,
    })
}

/// `V_{k,u} = (X_{2qu+k}, ..., X_{2qu+k+q-1})` for `u = 0..=u_max`.
pub fn block_vectors(path: &Path, q: usize, k: i64, u_max: usize) -> Result<Vec<Vec<State>>> {
    block_vectors_len(path, q, k, u_max, q)
}

/// Blocks of arbitrary length `len` starting at `2qu + k`.
pub fn block_vectors_len(path: &Path, q: usize, k: i64, u_max: usize, len: usize) -> Result<Vec<Vec<State>>> {
    if q == 0 || len == 0 {
        return Err(Error::InvalidParameter("block length must be positive".into()));
    }
    (0..=u_max)
        .map(|u| {
            let start = 2 * (q as i64) * u as i64 + k;
            (0..len as i64).map(|a| path.get(start + a).cloned()).collect()
        })
        .collect()
}

/// Outcome of coupling one block family.
#[derive(Clone, Debug)]
pub struct CoupledFamily {
    /// `V*_{k,u}` for `u = 0..=u_max`.
    pub blocks: Vec<Vec<State>>,
    /// Whether `V*_{k,u} != V_{k,u}`.
    pub mismatched: Vec<bool>,
    /// Whether the coupling replaced the first state of block `u`.
    pub first_state_changed: Vec<bool>,
}

/// Replaces the blocks `V_{k,u}` (length `len`) of a finite-chain path by an
/// independent family with the same marginal laws.
///
/// Block `u` is coupled with the last state of block `u-1` through a Berbee
/// coupling of its first state; by the Markov property this coupling is
/// independent of the whole past, and the expected mismatch rate is the exact
/// `beta` at the gap `2q - len + 1`.
pub fn couple_blocks<R: Rng + ?Sized>(
    chain: &MarkovChain,
    path: &Path,
    q: usize,
    k: i64,
    len: usize,
    u_max: usize,
    rng: &mut R,
) -> Result<CoupledFamily> {
    if len > 2 * q {
        return Err(Error::InvalidParameter("blocks of one family must not overlap".into()));
    }
    let original = block_vectors_len(path, q, k, u_max, len)?;
    let gap = 2 * q - len + 1;
    let pg = chain.power(gap);
    let n = chain.states();
    let conditional: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| pg[(i, j)]).collect()).collect();
    let coupling = RowCoupling::new(&conditional, &chain.pi);
    let cum = CumulativeRows::new(chain);
    let label = |s: &State| {
        s.label()
            .ok_or_else(|| Error::InvalidModel("coupling needs labeled finite states".into()))
    };
    let mut blocks = Vec::with_capacity(original.len());
    let mut mismatched = Vec::with_capacity(original.len());
    let mut first_state_changed = Vec::with_capacity(original.len());
    for (u, block) in original.iter().enumerate() {
        if u == 0 {
            blocks.push(block.clone());
            mismatched.push(false);
            first_state_changed.push(false);
            continue;
        }
        let prev = label(original[u - 1].last().unwrap())?;
        let z = label(&block[0])?;
        let z_star = coupling.couple(prev, z, rng);
        first_state_changed.push(z_star != z);
        if z_star == z {
            blocks.push(block.clone());
            mismatched.push(false);
        } else {
            let mut s = z_star;
            let mut fresh = Vec::with_capacity(len);
            fresh.push(chain.state(s));
            for _ in 1..len {
                s = cum.step(s, rng);
                fresh.push(chain.state(s));
            }
            mismatched.push(fresh != *block);
            blocks.push(fresh);
        }
    }
    Ok(CoupledFamily {
        blocks,
        mismatched,
        first_state_changed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn sym_chain() -> MarkovChain {
        MarkovChain::two_state(0.25, 0.25).unwrap()
    }

    fn rows(c: &MarkovChain) -> Vec<Vec<f64>> {
        let n = c.states();
        (0..n)
            .map(|i| (0..n).map(|j| c.transition()[(i, j)]).collect())
            .collect()
    }

    #[test]
    fn point_mass_iid_is_constant() {
        let law = FiniteLaw::new(vec![State::labeled(0, vec![2.5])], vec![1.0]).unwrap();
        let xs = simulate(&ProcessModel::IidFinite(law), 20, &mut stream(0, 0)).unwrap();
        assert!(xs.iter().all(|s| s.coords() == [2.5]));
    }

    #[test]
    fn two_state_stationary_frequency() {
        let n = 1_000_000;
        let xs = simulate(&ProcessModel::MarkovFinite(sym_chain()), n, &mut stream(1, 0)).unwrap();
        let f0 = xs.iter().filter(|s| s.label() == Some(0)).count() as f64 / n as f64;
        // long-run variance of the indicator: p(1-p)(1+lambda)/(1-lambda) with lambda = 0.5
        let se = (0.25 * 3.0 / n as f64).sqrt();
        assert!((f0 - 0.5).abs() < 3.0 * se, "f0 = {f0}");
    }

    #[test]
    fn ar1_lag_one_autocorrelation() {
        let n = 1_000_000;
        let model = ProcessModel::Ar1Gaussian {
            rho: 0.5,
            noise_variance: 1.0,
        };
        let xs: Vec<f64> = simulate(&model, n, &mut stream(2, 0))
            .unwrap()
            .iter()
            .map(|s| s.coords()[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
        let cov = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>();
        assert!((cov / var - 0.5).abs() < 0.01);
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(ProcessModel::Ar1Gaussian {
            rho: 1.0,
            noise_variance: 1.0
        }
        .validate()
        .is_err());
        assert!(matches!(
            MarkovChain::new(vec![vec![0.5, 0.4], vec![0.5, 0.5]], None, vec![vec![0.0], vec![1.0]]),
            Err(Error::NotStochastic { row: 0, .. })
        ));
        assert!(MarkovChain::new(
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            Some(vec![0.9, 0.1]),
            vec![vec![0.0], vec![1.0]]
        )
        .is_err());
        let err = simulate(
            &ProcessModel::Ar1Gaussian {
                rho: -1.2,
                noise_variance: 1.0,
            },
            5,
            &mut stream(0, 0),
        );
        assert!(err.is_err());
    }

    #[test]
    fn stationary_law_is_solved() {
        let c = MarkovChain::new(
            vec![vec![0.9, 0.1, 0.0], vec![0.2, 0.5, 0.3], vec![0.0, 0.4, 0.6]],
            None,
            vec![vec![0.0], vec![1.0], vec![2.0]],
        )
        .unwrap();
        let pi = c.stationary();
        for j in 0..3 {
            let v: f64 = (0..3).map(|i| pi[i] * c.transition()[(i, j)]).sum();
            assert!((v - pi[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_examples() {
        let c = sym_chain();
        let p = rows(&c);
        assert_eq!(beta_pair_exact(&p, c.stationary(), 1).unwrap(), 0.25);
        assert!(beta_pair_exact(&p, c.stationary(), 50).unwrap() < 1e-6);
        let iid = vec![vec![0.3, 0.7], vec![0.3, 0.7]];
        for k in 1..5 {
            assert_eq!(beta_pair_exact(&iid, &[0.3, 0.7], k).unwrap(), 0.0);
        }
        assert!(beta_pair_exact(&[vec![0.5, 0.6], vec![0.5, 0.5]], &[0.5, 0.5], 1).is_err());
    }

    #[test]
    fn alpha_examples() {
        let c = sym_chain();
        // P(X_0 = 0, X_1 = 0) - 1/4 = 3/8 - 1/4
        assert_eq!(alpha_pair_exact(&rows(&c), c.stationary(), 1).unwrap(), 0.125);
        assert_eq!(
            alpha_pair_exact(&[vec![0.3, 0.7], vec![0.3, 0.7]], &[0.3, 0.7], 2).unwrap(),
            0.0
        );
        let big = vec![vec![1.0 / 13.0; 13]; 13];
        assert!(matches!(
            alpha_pair_exact(&big, &[1.0 / 13.0; 13], 1),
            Err(Error::TooManyStates { states: 13, .. })
        ));
    }

    #[test]
    fn profile_is_monotone_and_tail_geometric() {
        let m = ProcessModel::MarkovFinite(sym_chain());
        let prof = m.mixing_profile(30).unwrap();
        assert!(prof.is_monotone(1e-12));
        assert_eq!(prof.kind, ProfileKind::Exact);
        for k in 1..=30 {
            assert!((prof.beta_at(k) - 0.5 * 0.5f64.powi(k as i32)).abs() < 1e-15);
        }
        match m.tail_model().unwrap() {
            TailModel::Geometric { lambda, c } => {
                assert!((lambda - 0.5).abs() < 1e-9);
                assert!((c - 0.5).abs() < 1e-6, "c = {c}");
            }
            other => panic!("unexpected tail {other:?}"),
        }
        let periodic = ProcessModel::MarkovFinite(MarkovChain::two_state(1.0, 1.0).unwrap());
        assert!(matches!(periodic.tail_model().unwrap(), TailModel::NonMixing { .. }));
        let ar = ProcessModel::Ar1Gaussian {
            rho: 0.6,
            noise_variance: 1.0,
        };
        let prof = ar.mixing_profile(20).unwrap();
        assert_eq!(prof.kind, ProfileKind::UpperBound);
        assert!(prof.is_monotone(0.0));
    }

    #[test]
    fn berbee_independent_pair_never_mismatches() {
        let joint = vec![vec![0.12, 0.28], vec![0.18, 0.42]];
        let c = berbee_couple(&joint).unwrap();
        assert!(c.beta() < 1e-15);
        let mut rng = stream(3, 0);
        for _ in 0..10_000 {
            let (_, y, ys) = c.sample(&mut rng);
            assert_eq!(y, ys);
        }
    }

    #[test]
    fn berbee_identity_pair() {
        let c = berbee_couple(&[vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        assert_eq!(c.beta(), 0.5);
        let n = 100_000;
        let mut rng = stream(4, 0);
        let mism = (0..n).filter(|_| {
            let (_, y, ys) = c.sample(&mut rng);
            y != ys
        });
        let f = mism.count() as f64 / n as f64;
        let se = (0.25 / n as f64).sqrt();
        assert!((f - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn berbee_rejects_bad_tables() {
        assert!(matches!(berbee_couple(&[vec![0.5, 0.4]]), Err(Error::NotNormalized(_))));
        assert!(berbee_couple(&[vec![1.5, -0.5]]).is_err());
    }

    #[test]
    fn block_vector_indexing() {
        let states: Vec<State> = (-5..=20).map(|i| State::labeled(0, vec![i as f64])).collect();
        let path = Path::new(-5, states);
        let v = block_vectors(&path, 2, 1, 0).unwrap();
        assert_eq!(v[0].iter().map(|s| s.coords()[0]).collect::<Vec<_>>(), vec![1.0, 2.0]);
        let v = block_vectors(&path, 1, 1, 3).unwrap();
        assert!(v.iter().all(|b| b.len() == 1));
        assert_eq!(v[3][0].coords()[0], 7.0);
        let v = block_vectors(&path, 2, -1, 1).unwrap();
        assert_eq!(v[1].iter().map(|s| s.coords()[0]).collect::<Vec<_>>(), vec![3.0, 4.0]);
        assert_eq!(v[0][0].coords()[0], -1.0);

        let one_sided = Path::one_sided((1..=10).map(|i| State::scalar(i as f64)).collect());
        assert!(matches!(
            block_vectors(&one_sided, 2, -1, 1),
            Err(Error::IndexOutOfRange { index: -1, .. })
        ));
    }

    #[test]
    fn coupled_iid_family_is_identical() {
        let model = ProcessModel::IidFinite(FiniteLaw::uniform_scalars(&[0.0, 1.0]));
        let chain = model.as_chain().unwrap();
        let mut rng = stream(5, 0);
        let path = simulate_range(&model, -4, 60, &mut rng).unwrap();
        let fam = couple_blocks(&chain, &path, 2, -1, 3, 10, &mut rng).unwrap();
        assert!(fam.mismatched.iter().all(|m| !m));
        assert_eq!(fam.blocks, block_vectors_len(&path, 2, -1, 10, 3).unwrap());
    }
}

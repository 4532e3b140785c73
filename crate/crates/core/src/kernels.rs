//! Kernels `h: S x S -> H` and their transforms.
//!
//! Kernels are behavioral: an evaluation closure plus metadata. Every transform
//! (Hoeffding components, degeneration, truncation) returns a new closure over
//! the original, so identities such as `h = h2 + h10 + h01 + mean` hold by
//! construction up to rounding and can be checked pointwise.
//!
//! Expectations over the marginal law are exact weighted sums when the law has
//! finite support. For sampled laws a fixed Monte-Carlo budget is drawn once
//! and used as an empirical support.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::hilbert::{axpy, norm, HPoint};
use crate::rng::{stream, StreamRng};

/// A point of the state space `S`.
///
/// States produced by finite models carry their label together with the
/// embedding coordinates; table kernels read the label, vector kernels the
/// coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    label: Option<usize>,
    coords: Vec<f64>,
}

impl State {
    pub fn labeled(label: usize, coords: Vec<f64>) -> Self {
        State {
            label: Some(label),
            coords,
        }
    }

    pub fn vector(coords: Vec<f64>) -> Self {
        State { label: None, coords }
    }

    pub fn scalar(x: f64) -> Self {
        State::vector(vec![x])
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

type EvalFn = dyn Fn(&State, &State, &mut [f64]) + Send + Sync;
type UnaryFn = dyn Fn(&State, &mut [f64]) + Send + Sync;

/// Where a kernel may be evaluated.
#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    /// Finitely many labeled states `0..n`.
    Finite(usize),
    /// `R^m`.
    Euclidean(usize),
}

/// A kernel `h: S x S -> H` with output dimension `dim`.
#[derive(Clone)]
pub struct Kernel {
    name: String,
    dim: usize,
    symmetric: bool,
    domain: Domain,
    eval: Arc<EvalFn>,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("symmetric", &self.symmetric)
            .field("domain", &self.domain)
            .finish()
    }
}

impl Kernel {
    pub fn from_fn<F>(name: impl Into<String>, dim: usize, symmetric: bool, domain: Domain, f: F) -> Self
    where
        F: Fn(&State, &State, &mut [f64]) + Send + Sync + 'static,
    {
        Kernel {
            name: name.into(),
            dim,
            symmetric,
            domain,
            eval: Arc::new(f),
        }
    }

    /// Constant kernel `h(x, y) = c`.
    pub fn constant(c: HPoint, domain: Domain) -> Self {
        let dim = c.dim();
        Kernel::from_fn("constant", dim, true, domain, move |_, _, out| {
            out.copy_from_slice(c.coords())
        })
    }

    pub fn zero(dim: usize, domain: Domain) -> Self {
        Kernel::constant(HPoint::zeros(dim), domain)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Writes `h(x, y)` into `out` (overwriting it).
    #[inline]
    pub fn eval_into(&self, x: &State, y: &State, out: &mut [f64]) {
        (self.eval)(x, y, out)
    }

    pub fn eval(&self, x: &State, y: &State) -> HPoint {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, y, &mut out);
        HPoint::from(out)
    }

    /// Multiplies the kernel by a scalar.
    pub fn scaled(&self, c: f64) -> Kernel {
        let inner = self.clone();
        Kernel::from_fn(
            format!("{}*{c}", self.name),
            self.dim,
            self.symmetric,
            self.domain.clone(),
            move |x, y, out| {
                inner.eval_into(x, y, out);
                out.iter_mut().for_each(|v| *v *= c);
            },
        )
    }

    /// Materializes the kernel on `states` (labeled `0..n` in order) as a table.
    pub fn tabulate(&self, states: &[State]) -> Result<Kernel> {
        for (i, s) in states.iter().enumerate() {
            if s.label() != Some(i) {
                return Err(Error::InvalidParameter(format!(
                    "tabulation needs states labeled 0..n in order; position {i} has label {:?}",
                    s.label()
                )));
            }
        }
        let n = states.len();
        let mut values = vec![0.0; n * n * self.dim];
        for (i, x) in states.iter().enumerate() {
            for (j, y) in states.iter().enumerate() {
                let k = (i * n + j) * self.dim;
                self.eval_into(x, y, &mut values[k..k + self.dim]);
            }
        }
        let table = KernelTable::new(n, self.dim, values)?;
        let mut k = table.into_kernel();
        k.name = format!("{}@table", self.name);
        k.symmetric = self.symmetric;
        Ok(k)
    }

    /// Largest `||h(x,y) - h(y,x)||` over the given points.
    pub fn symmetry_defect(&self, points: &[State]) -> f64 {
        let mut a = vec![0.0; self.dim];
        let mut b = vec![0.0; self.dim];
        let mut worst = 0.0_f64;
        for x in points {
            for y in points {
                self.eval_into(x, y, &mut a);
                self.eval_into(y, x, &mut b);
                let d: f64 = a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum();
                worst = worst.max(d.sqrt());
            }
        }
        worst
    }
}

/// Explicit table `h(i, j)` over finitely many labeled states.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelTable {
    states: usize,
    dim: usize,
    values: Vec<f64>,
}

impl KernelTable {
    /// `values` is laid out as `[(i * states + j) * dim + c]`.
    pub fn new(states: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if states == 0 || dim == 0 {
            return Err(Error::InvalidParameter(
                "table needs at least one state and dimension".into(),
            ));
        }
        if values.len() != states * states * dim {
            return Err(Error::InvalidParameter(format!(
                "table has {} values, expected {}",
                values.len(),
                states * states * dim
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("table values must be finite".into()));
        }
        Ok(KernelTable { states, dim, values })
    }

    pub fn from_fn(states: usize, dim: usize, mut f: impl FnMut(usize, usize) -> Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity(states * states * dim);
        for i in 0..states {
            for j in 0..states {
                let v = f(i, j);
                if v.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: v.len(),
                    });
                }
                values.extend(v);
            }
        }
        Self::new(states, dim, values)
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> &[f64] {
        let k = (i * self.states + j) * self.dim;
        &self.values[k..k + self.dim]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.states).all(|i| (0..self.states).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn into_kernel(self) -> Kernel {
        let symmetric = self.is_symmetric();
        let n = self.states;
        let dim = self.dim;
        let values = self.values;
        Kernel::from_fn("custom_table", dim, symmetric, Domain::Finite(n), move |x, y, out| {
            let i = x.label.expect("table kernel evaluated on an unlabeled state");
            let j = y.label.expect("table kernel evaluated on an unlabeled state");
            let k = (i * n + j) * dim;
            out.copy_from_slice(&values[k..k + dim]);
        })
    }

    /// Reads CSV rows `state_i,state_j,coord_1..coord_d`; a header row is optional.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() < 3 {
                return Err(Error::Config(format!(
                    "table row {line}: need state_i,state_j and at least one coordinate"
                )));
            }
            let (Ok(i), Ok(j)) = (rec[0].parse::<usize>(), rec[1].parse::<usize>()) else {
                if line == 0 {
                    continue;
                }
                return Err(Error::Config(format!(
                    "table row {line}: state labels must be integers"
                )));
            };
            let coords = rec
                .iter()
                .skip(2)
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|_| Error::Config(format!("table row {line}: bad number `{c}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push((i, j, coords));
        }
        let Some(dim) = rows.first().map(|r| r.2.len()) else {
            return Err(Error::Config("kernel table is empty".into()));
        };
        let states = rows.iter().map(|r| r.0.max(r.1)).max().unwrap() + 1;
        let mut values = vec![f64::NAN; states * states * dim];
        let mut seen = vec![false; states * states];
        for (i, j, c) in rows {
            if c.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.len(),
                });
            }
            if std::mem::replace(&mut seen[i * states + j], true) {
                return Err(Error::Config(format!("duplicate table entry ({i},{j})")));
            }
            let k = (i * states + j) * dim;
            values[k..k + dim].copy_from_slice(&c);
        }
        if let Some(pos) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!(
                "missing table entry ({},{})",
                pos / states,
                pos % states
            )));
        }
        Self::new(states, dim, values)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["state_i".to_string(), "state_j".to_string()];
        header.extend((1..=self.dim).map(|c| format!("coord_{c}")));
        wtr.write_record(&header)?;
        for i in 0..self.states {
            for j in 0..self.states {
                let mut row = vec![i.to_string(), j.to_string()];
                row.extend(self.get(i, j).iter().map(|v| format!("{v:?}")));
                wtr.write_record(&row)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Kernels available by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelName {
    SpatialSign,
    Product,
    Gini,
    Dot,
    CustomTable,
}

impl FromStr for KernelName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial_sign" => Ok(KernelName::SpatialSign),
            "product" => Ok(KernelName::Product),
            "gini" => Ok(KernelName::Gini),
            "dot" => Ok(KernelName::Dot),
            "custom_table" => Ok(KernelName::CustomTable),
            other => Err(Error::UnknownKernel(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct KernelParams {
    /// Dimension of the data space `R^m` (vector kernels).
    pub dim: Option<usize>,
    pub table: Option<KernelTable>,
}

/// Builds a named kernel.
pub fn kernel_catalog(name: KernelName, params: &KernelParams) -> Result<Kernel> {
    let m = params.dim.unwrap_or(1);
    if m == 0 {
        return Err(Error::InvalidParameter("dimension must be at least 1".into()));
    }
    let k = match name {
        KernelName::SpatialSign => Kernel::from_fn("spatial_sign", m, false, Domain::Euclidean(m), move |x, y, out| {
            for ((o, a), b) in out.iter_mut().zip(x.coords()).zip(y.coords()) {
                *o = a - b;
            }
            let r = norm(out);
            if r > 0.0 {
                out.iter_mut().for_each(|v| *v /= r);
            }
        }),
        KernelName::Product => {
            if m != 1 {
                return Err(Error::InvalidParameter(
                    "product kernel acts on scalars (dim = 1)".into(),
                ));
            }
            Kernel::from_fn("product", 1, true, Domain::Euclidean(1), |x, y, out| {
                out[0] = x.coords()[0] * y.coords()[0]
            })
        }
        KernelName::Gini => Kernel::from_fn("gini", 1, true, Domain::Euclidean(m), |x, y, out| {
            out[0] = x
                .coords()
                .iter()
                .zip(y.coords())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        }),
        KernelName::Dot => Kernel::from_fn("dot", 1, true, Domain::Euclidean(m), |x, y, out| {
            out[0] = x.coords().iter().zip(y.coords()).map(|(a, b)| a * b).sum()
        }),
        KernelName::CustomTable => params
            .table
            .clone()
            .ok_or_else(|| Error::InvalidParameter("custom_table kernel needs a table".into()))?
            .into_kernel(),
    };
    Ok(k)
}

/// A map `S -> H`.
#[derive(Clone)]
pub struct UnaryMap {
    dim: usize,
    f: Arc<UnaryFn>,
}

impl fmt::Debug for UnaryMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UnaryMap").field("dim", &self.dim).finish()
    }
}

impl UnaryMap {
    pub fn from_fn<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&State, &mut [f64]) + Send + Sync + 'static,
    {
        UnaryMap { dim, f: Arc::new(f) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn eval_into(&self, x: &State, out: &mut [f64]) {
        (self.f)(x, out)
    }

    pub fn eval(&self, x: &State) -> HPoint {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out);
        HPoint::from(out)
    }
}

/// Law of `X_1` on a finite support.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteLaw {
    support: Vec<State>,
    weights: Vec<f64>,
}

impl FiniteLaw {
    pub fn new(support: Vec<State>, weights: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != weights.len() {
            return Err(Error::InvalidParameter(
                "support and weights must be non-empty and equally long".into(),
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParameter("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::NotNormalized(total));
        }
        Ok(FiniteLaw { support, weights })
    }

    /// Uniform law on labeled scalar states with the given values.
    pub fn uniform_scalars(values: &[f64]) -> Self {
        let n = values.len();
        let support = values
            .iter()
            .enumerate()
            .map(|(i, &v)| State::labeled(i, vec![v]))
            .collect();
        FiniteLaw::new(support, vec![1.0 / n as f64; n]).expect("uniform law is valid")
    }

    pub fn support(&self) -> &[State] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &State {
        &self.support[sample_index(&self.weights, rng)]
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // rounding: fall back to the last state with positive weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

type Sampler = dyn Fn(&mut StreamRng) -> State + Send + Sync;

/// Marginal law of `X_1`: exact finite support, or a sampler with a budget.
#[derive(Clone)]
pub enum MarginalLaw {
    Finite(FiniteLaw),
    Sampled {
        sampler: Arc<Sampler>,
        budget: Option<usize>,
        seed: u64,
    },
}

impl fmt::Debug for MarginalLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MarginalLaw::Finite(l) => f.debug_tuple("Finite").field(l).finish(),
            MarginalLaw::Sampled { budget, seed, .. } => f
                .debug_struct("Sampled")
                .field("budget", budget)
                .field("seed", seed)
                .finish(),
        }
    }
}

impl From<FiniteLaw> for MarginalLaw {
    fn from(l: FiniteLaw) -> Self {
        MarginalLaw::Finite(l)
    }
}

impl MarginalLaw {
    pub fn sampled<F>(sampler: F, budget: Option<usize>, seed: u64) -> Self
    where
        F: Fn(&mut StreamRng) -> State + Send + Sync + 'static,
    {
        MarginalLaw::Sampled {
            sampler: Arc::new(sampler),
            budget,
            seed,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, MarginalLaw::Finite(_))
    }

    pub fn as_finite(&self) -> Option<&FiniteLaw> {
        match self {
            MarginalLaw::Finite(l) => Some(l),
            MarginalLaw::Sampled { .. } => None,
        }
    }

    /// Support used for expectations: the law itself, or an empirical draw.
    fn expectation_support(&self) -> Result<FiniteLaw> {
        match self {
            MarginalLaw::Finite(l) => Ok(l.clone()),
            MarginalLaw::Sampled { sampler, budget, seed } => {
                let b = budget.ok_or(Error::MissingBudget)?;
                if b == 0 {
                    return Err(Error::MissingBudget);
                }
                let mut rng = stream(*seed, 0);
                let support: Vec<State> = (0..b).map(|_| sampler(&mut rng)).collect();
                Ok(FiniteLaw {
                    support,
                    weights: vec![1.0 / b as f64; b],
                })
            }
        }
    }
}

/// `E h(x, X)` for a fixed first argument.
fn mean_first_fixed(h: &Kernel, law: &FiniteLaw, x: &State, out: &mut [f64], buf: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (y, &w) in law.support.iter().zip(&law.weights) {
        h.eval_into(x, y, buf);
        axpy(out, w, buf);
    }
}

/// `E h(X, y)` for a fixed second argument.
fn mean_second_fixed(h: &Kernel, law: &FiniteLaw, y: &State, out: &mut [f64], buf: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (x, &w) in law.support.iter().zip(&law.weights) {
        h.eval_into(x, y, buf);
        axpy(out, w, buf);
    }
}

/// `E h(X_1, X'_1)` with independent copies.
fn pair_mean(h: &Kernel, law: &FiniteLaw) -> Vec<f64> {
    let mut mean = vec![0.0; h.dim()];
    let mut buf = vec![0.0; h.dim()];
    for (x, &wx) in law.support.iter().zip(&law.weights) {
        for (y, &wy) in law.support.iter().zip(&law.weights) {
            h.eval_into(x, y, &mut buf);
            axpy(&mut mean, wx * wy, &buf);
        }
    }
    mean
}

/// Hoeffding decomposition of a kernel under a marginal law.
#[derive(Clone, Debug)]
pub struct HoeffdingComponents {
    pub h10: UnaryMap,
    pub h01: UnaryMap,
    pub h2: Kernel,
    pub mean: HPoint,
    /// False when expectations came from a Monte-Carlo budget.
    pub exact: bool,
    /// Standard error of `mean` in Monte-Carlo mode.
    pub mean_std_error: Option<f64>,
}

/// Computes `h10`, `h01`, `h2` and `E h(X_1, X'_1)`.
pub fn hoeffding_components(h: &Kernel, law: &MarginalLaw) -> Result<HoeffdingComponents> {
    let support = law.expectation_support()?;
    let mean = pair_mean(h, &support);
    let mean_std_error = if law.is_exact() {
        None
    } else {
        Some(pair_mean_std_error(h, &support))
    };
    let h10 = {
        let (h, s, m) = (h.clone(), support.clone(), mean.clone());
        UnaryMap::from_fn(h.dim(), move |x, out| {
            let mut buf = vec![0.0; m.len()];
            mean_first_fixed(&h, &s, x, out, &mut buf);
            axpy(out, -1.0, &m);
        })
    };
    let h01 = {
        let (h, s, m) = (h.clone(), support.clone(), mean.clone());
        UnaryMap::from_fn(h.dim(), move |y, out| {
            let mut buf = vec![0.0; m.len()];
            mean_second_fixed(&h, &s, y, out, &mut buf);
            axpy(out, -1.0, &m);
        })
    };
    let h2 = degenerate_on(h, support, mean.clone());
    Ok(HoeffdingComponents {
        h10,
        h01,
        h2,
        mean: HPoint::from(mean),
        exact: law.is_exact(),
        mean_std_error,
    })
}

/// Standard error of the empirical pair mean: disjoint pairs of the draw.
fn pair_mean_std_error(h: &Kernel, law: &FiniteLaw) -> f64 {
    let s = &law.support;
    let pairs = s.len() / 2;
    if pairs < 2 {
        return f64::INFINITY;
    }
    let dim = h.dim();
    let mut sum = vec![0.0; dim];
    let mut sum2 = vec![0.0; dim];
    let mut buf = vec![0.0; dim];
    for k in 0..pairs {
        h.eval_into(&s[2 * k], &s[2 * k + 1], &mut buf);
        for c in 0..dim {
            sum[c] += buf[c];
            sum2[c] += buf[c] * buf[c];
        }
    }
    let n = pairs as f64;
    let var: f64 = (0..dim)
        .map(|c| (sum2[c] / n - (sum[c] / n).powi(2)) * n / (n - 1.0))
        .sum();
    (var.max(0.0) / n).sqrt()
}

fn degenerate_on(h: &Kernel, support: FiniteLaw, mean: Vec<f64>) -> Kernel {
    let inner = h.clone();
    Kernel::from_fn(
        format!("{}^deg", h.name()),
        h.dim(),
        h.is_symmetric(),
        h.domain().clone(),
        move |x, y, out| {
            let d = out.len();
            let mut buf = vec![0.0; d];
            let mut acc = vec![0.0; d];
            inner.eval_into(x, y, out);
            mean_second_fixed(&inner, &support, y, &mut acc, &mut buf);
            axpy(out, -1.0, &acc);
            mean_first_fixed(&inner, &support, x, &mut acc, &mut buf);
            axpy(out, -1.0, &acc);
            axpy(out, 1.0, &mean);
        },
    )
}

/// `h^deg(x,y) = h(x,y) - E h(X_1,y) - E h(x,X_1) + E h(X_1,X'_1)`.
///
/// The displayed centering uses the binary kernel in both conditional means;
/// the unary `h_1` would not make the result degenerate.
pub fn degenerate(h: &Kernel, law: &MarginalLaw) -> Result<Kernel> {
    let support = law.expectation_support()?;
    let mean = pair_mean(h, &support);
    Ok(degenerate_on(h, support, mean))
}

/// `h_1(x) = E h(x, X_1) - E h(X_1, X'_1)`.
pub fn h1_component(h: &Kernel, law: &MarginalLaw) -> Result<UnaryMap> {
    Ok(hoeffding_components(h, law)?.h10)
}

/// Splits `h` into `h 1{||h|| <= R}` and `h 1{||h|| > R}`.
pub fn truncate(h: &Kernel, r: f64) -> Result<(Kernel, Kernel)> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "truncation level must be positive, got {r}"
        )));
    }
    let (a, b) = (h.clone(), h.clone());
    let le = Kernel::from_fn(
        format!("{}_le", h.name()),
        h.dim(),
        h.is_symmetric(),
        h.domain().clone(),
        move |x, y, out| {
            a.eval_into(x, y, out);
            if norm(out) > r {
                out.iter_mut().for_each(|v| *v = 0.0);
            }
        },
    );
    let gt = Kernel::from_fn(
        format!("{}_gt", h.name()),
        h.dim(),
        h.is_symmetric(),
        h.domain().clone(),
        move |x, y, out| {
            b.eval_into(x, y, out);
            if norm(out) <= r {
                out.iter_mut().for_each(|v| *v = 0.0);
            }
        },
    );
    Ok((le, gt))
}

/// Largest norm of a conditional mean `E h(x, X)` or `E h(X, y)` over the support.
pub fn degeneracy_defect(h: &Kernel, law: &FiniteLaw) -> f64 {
    let mut out = vec![0.0; h.dim()];
    let mut buf = vec![0.0; h.dim()];
    let mut worst = 0.0_f64;
    for s in law.support() {
        mean_first_fixed(h, law, s, &mut out, &mut buf);
        worst = worst.max(norm(&out));
        mean_second_fixed(h, law, s, &mut out, &mut buf);
        worst = worst.max(norm(&out));
    }
    worst
}

/// `E ||h(X_1, X'_1)||^r 1{||h|| <= R}` and `E ||h|| 1{||h|| > R}` for a finite law.
pub fn norm_moments(h: &Kernel, law: &FiniteLaw, r: f64, level: f64) -> (f64, f64) {
    let mut buf = vec![0.0; h.dim()];
    let (mut m_le, mut m_gt) = (0.0, 0.0);
    for (x, &wx) in law.support().iter().zip(law.weights()) {
        for (y, &wy) in law.support().iter().zip(law.weights()) {
            h.eval_into(x, y, &mut buf);
            let v = norm(&buf);
            if v <= level {
                m_le += wx * wy * v.powf(r);
            } else {
                m_gt += wx * wy * v;
            }
        }
    }
    (m_le, m_gt)
}

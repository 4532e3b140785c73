//! Order-two U-statistics: full sums, prefix paths and the polygonal process.

use std::io::Write;

use crate::error::{Error, Result};
use crate::hilbert::{axpy, HPoint};
use crate::kernels::{hoeffding_components, Kernel, KernelTable, MarginalLaw, State};

/// `U_k(h)` for `k = 2..=n`.
#[derive(Clone, Debug, PartialEq)]
pub struct UStatPath {
    n: usize,
    dim: usize,
    values: Vec<HPoint>,
    kernel: String,
    sequence: String,
    evaluations: u64,
}

impl UStatPath {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kernel_id(&self) -> &str {
        &self.kernel
    }

    pub fn sequence_id(&self) -> &str {
        &self.sequence
    }

    pub fn with_sequence_id(mut self, id: impl Into<String>) -> Self {
        self.sequence = id.into();
        self
    }

    /// Number of kernel evaluations spent building the path.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    /// `U_k`; zero for `k < 2`.
    pub fn get(&self, k: usize) -> HPoint {
        assert!(k <= self.n, "U_{k} requested on a path of length {}", self.n);
        if k < 2 {
            HPoint::zeros(self.dim)
        } else {
            self.values[k - 2].clone()
        }
    }

    /// `U_n`.
    pub fn endpoint(&self) -> HPoint {
        self.get(self.n)
    }

    pub fn values(&self) -> &[HPoint] {
        &self.values
    }

    /// Polygonal process at `t`: linear interpolation of `k / n -> U_k`.
    pub fn polygonal(&self, t: f64) -> Result<HPoint> {
        polygonal_process(self, t)
    }

    /// Writes rows `k, coord_1, ..., coord_d`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["k".to_string()];
        header.extend((1..=self.dim).map(|c| format!("coord_{c}")));
        w.write_record(&header)?;
        for (i, v) in self.values.iter().enumerate() {
            let mut row = vec![(i + 2).to_string()];
            row.extend(v.coords().iter().map(|x| format!("{x:e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_len(seq: &[State]) -> Result<()> {
    if seq.len() < 2 {
        return Err(Error::SequenceTooShort(format!(
            "U-statistic needs n >= 2, got {}",
            seq.len()
        )));
    }
    Ok(())
}

/// `sum_{i<j} h(X_i, X_j)`.
pub fn u_statistic(h: &Kernel, seq: &[State]) -> Result<HPoint> {
    check_len(seq)?;
    let mut acc = vec![0.0; h.dim()];
    let mut buf = vec![0.0; h.dim()];
    for j in 1..seq.len() {
        for i in 0..j {
            h.eval_into(&seq[i], &seq[j], &mut buf);
            axpy(&mut acc, 1.0, &buf);
        }
    }
    Ok(HPoint::from(acc))
}

/// All prefixes `U_2, ..., U_n` in one pass through `U_k = U_{k-1} + sum_{i<k} h(X_i, X_k)`.
pub fn u_stat_prefixes(h: &Kernel, seq: &[State]) -> Result<UStatPath> {
    check_len(seq)?;
    let d = h.dim();
    let mut acc = vec![0.0; d];
    let mut buf = vec![0.0; d];
    let mut values = Vec::with_capacity(seq.len() - 1);
    let mut evaluations = 0u64;
    for k in 1..seq.len() {
        for i in 0..k {
            h.eval_into(&seq[i], &seq[k], &mut buf);
            axpy(&mut acc, 1.0, &buf);
        }
        evaluations += k as u64;
        values.push(HPoint::from(acc.clone()));
    }
    Ok(UStatPath {
        n: seq.len(),
        dim: d,
        values,
        kernel: h.name().to_string(),
        sequence: String::new(),
        evaluations,
    })
}

/// Prefix path for a labeled finite-state sequence and a tabulated kernel.
///
/// Uses running state counts, `sum_{i<k} h(X_i, X_k) = sum_s count_s H[s][X_k]`,
/// so the cost is `O(n S d)` instead of `O(n^2 d)`.
pub fn u_stat_prefixes_tabulated(table: &KernelTable, name: &str, labels: &[usize]) -> Result<UStatPath> {
    if labels.len() < 2 {
        return Err(Error::SequenceTooShort(format!(
            "U-statistic needs n >= 2, got {}",
            labels.len()
        )));
    }
    let (s, d) = (table.states(), table.dim());
    if let Some(bad) = labels.iter().find(|&&l| l >= s) {
        return Err(Error::InvalidParameter(format!(
            "state label {bad} outside the table of {s} states"
        )));
    }
    let mut counts = vec![0.0; s];
    let mut acc = vec![0.0; d];
    let mut values = Vec::with_capacity(labels.len() - 1);
    counts[labels[0]] += 1.0;
    for &x in &labels[1..] {
        for (st, &c) in counts.iter().enumerate() {
            if c > 0.0 {
                axpy(&mut acc, c, table.get(st, x));
            }
        }
        counts[x] += 1.0;
        values.push(HPoint::from(acc.clone()));
    }
    Ok(UStatPath {
        n: labels.len(),
        dim: d,
        values,
        kernel: name.to_string(),
        sequence: String::new(),
        evaluations: 0,
    })
}

/// `U_{n,h}(t) = U_{floor(nt)} + (nt - floor(nt)) sum_{i <= floor(nt)} h(X_i, X_{floor(nt)+1})`.
///
/// The increment sum equals `U_{k+1} - U_k`, so the path alone determines the process.
pub fn polygonal_process(path: &UStatPath, t: f64) -> Result<HPoint> {
    let (k, frac) = polygonal_index(path.n, t)?;
    let mut v = path.get(k);
    if frac > 0.0 && k < path.n {
        let next = path.get(k + 1);
        let step = &next - &v;
        v.axpy(frac, &step);
    }
    Ok(v)
}

/// `(floor(nt), nt - floor(nt))`, snapping `nt` to an integer within rounding.
pub(crate) fn polygonal_index(n: usize, t: f64) -> Result<(usize, f64)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("time {t} outside [0, 1]")));
    }
    let mut nt = n as f64 * t;
    // t = k/n up to rounding must hit U_k exactly
    if (nt - nt.round()).abs() <= 1e-12 * n as f64 {
        nt = nt.round();
    }
    let k = (nt.floor() as usize).min(n);
    Ok((k, nt - k as f64))
}

/// Largest discrepancies between `U_k(h)` and its Hoeffding decomposition over `k = 2..=n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HoeffdingCheck {
    /// `sum_i (n-i) h10(X_i) + sum_j (j-1) h01(X_j) + U_n(h2) + C(n,2) E h`.
    pub general: f64,
    /// `(n-1) sum_k h10(X_k) + U_n(h2) + C(n,2) E h`, for symmetric kernels.
    pub symmetric: Option<f64>,
}

impl HoeffdingCheck {
    pub fn max(&self) -> f64 {
        self.general.max(self.symmetric.unwrap_or(0.0))
    }
}

/// Evaluates both sides of the Hoeffding decomposition for every prefix of `seq`.
pub fn hoeffding_split_check(h: &Kernel, law: &MarginalLaw, seq: &[State]) -> Result<HoeffdingCheck> {
    if !law.is_exact() {
        return Err(Error::NotExact);
    }
    check_len(seq)?;
    let hc = hoeffding_components(h, law)?;
    let lhs = u_stat_prefixes(h, seq)?;
    let rhs_deg = u_stat_prefixes(&hc.h2, seq)?;
    let d = h.dim();
    let h10: Vec<HPoint> = seq.iter().map(|x| hc.h10.eval(x)).collect();
    let h01: Vec<HPoint> = seq.iter().map(|x| hc.h01.eval(x)).collect();

    // running sums for n = k + 1 (0-based k)
    let mut first_sum = HPoint::zeros(d); // sum_{i<=n} h10(X_i)
    let mut weighted_first = HPoint::zeros(d); // sum_{i<=n} (n-i) h10(X_i)
    let mut weighted_second = HPoint::zeros(d); // sum_{j<=n} (j-1) h01(X_j)
    let mut symmetric_sum = HPoint::zeros(d); // sum_{k<=n} h10(X_k)
    let mut general = 0.0_f64;
    let mut symmetric = 0.0_f64;
    for k in 0..seq.len() {
        let n = k + 1;
        weighted_first += &first_sum;
        first_sum += &h10[k];
        weighted_second.axpy(k as f64, &h01[k]);
        symmetric_sum += &h10[k];
        if n < 2 {
            continue;
        }
        let pairs = (n * (n - 1) / 2) as f64;
        let u = lhs.get(n);
        let mut rhs = &weighted_first + &weighted_second;
        rhs += &rhs_deg.get(n);
        rhs.axpy(pairs, &hc.mean);
        general = general.max((&u - &rhs).norm());
        if h.is_symmetric() {
            let mut rs = symmetric_sum.scale((n - 1) as f64);
            rs += &rhs_deg.get(n);
            rs.axpy(pairs, &hc.mean);
            symmetric = symmetric.max((&u - &rs).norm());
        }
    }
    Ok(HoeffdingCheck {
        general,
        symmetric: h.is_symmetric().then_some(symmetric),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{kernel_catalog, Domain, FiniteLaw, KernelName, KernelParams};
    use crate::processes::{simulate, MarkovChain, ProcessModel};
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn product() -> Kernel {
        kernel_catalog(KernelName::Product, &KernelParams::default()).unwrap()
    }

    fn seq(xs: &[f64]) -> Vec<State> {
        xs.iter().map(|&x| State::scalar(x)).collect()
    }

    fn naive(h: &Kernel, s: &[State], k: usize) -> HPoint {
        let mut acc = HPoint::zeros(h.dim());
        for j in 0..k {
            for i in 0..j {
                acc += &h.eval(&s[i], &s[j]);
            }
        }
        acc
    }

    fn random_table(states: usize, dim: usize, rng: &mut impl Rng) -> KernelTable {
        KernelTable::from_fn(states, dim, |_, _| {
            (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()
        })
        .unwrap()
    }

    #[test]
    fn full_sum_examples() {
        assert_eq!(
            u_statistic(&product(), &seq(&[1.0, 2.0, 3.0])).unwrap().coords(),
            &[11.0]
        );
        let c = Kernel::constant(HPoint::from(vec![1.5, -2.0]), Domain::Euclidean(1));
        assert_eq!(u_statistic(&c, &seq(&[0.0; 5])).unwrap().coords(), &[15.0, -20.0]);
        let anti = Kernel::from_fn("diff", 1, false, Domain::Euclidean(1), |x, y, out| {
            out[0] = x.coords()[0] - y.coords()[0];
        });
        assert_eq!(u_statistic(&anti, &seq(&[4.0; 7])).unwrap().coords(), &[0.0]);
        assert!(matches!(
            u_statistic(&product(), &seq(&[1.0])),
            Err(Error::SequenceTooShort(_))
        ));
    }

    #[test]
    fn prefix_examples() {
        let s = seq(&[1.0, 2.0, 3.0]);
        let p = u_stat_prefixes(&product(), &s).unwrap();
        assert_eq!(p.get(2).coords(), &[2.0]);
        assert_eq!(p.get(3).coords(), &[11.0]);
        assert_eq!(p.endpoint(), u_statistic(&product(), &s).unwrap());
        assert_eq!(p.evaluations(), 3);
    }

    #[test]
    fn prefixes_match_naive_recomputation() {
        let mut rng = stream(11, 0);
        let t = random_table(4, 3, &mut rng);
        let h = t.into_kernel();
        let states: Vec<State> = (0..30)
            .map(|_| State::labeled(rng.random_range(0..4), vec![0.0]))
            .collect();
        let p = u_stat_prefixes(&h, &states).unwrap();
        assert_eq!(p.evaluations(), 30 * 29 / 2);
        for k in 2..=30 {
            let want = naive(&h, &states, k);
            assert!(p.get(k).max_abs_diff(&want) <= 1e-12 * want.norm().max(1.0));
        }
    }

    #[test]
    fn tabulated_prefixes_agree_with_direct() {
        let mut rng = stream(12, 0);
        let t = random_table(3, 2, &mut rng);
        let labels: Vec<usize> = (0..200).map(|_| rng.random_range(0..3)).collect();
        let states: Vec<State> = labels.iter().map(|&l| State::labeled(l, vec![l as f64])).collect();
        let direct = u_stat_prefixes(&t.clone().into_kernel(), &states).unwrap();
        let fast = u_stat_prefixes_tabulated(&t, "t", &labels).unwrap();
        for k in 2..=200 {
            assert!(direct.get(k).max_abs_diff(&fast.get(k)) <= 1e-12 * direct.get(k).norm().max(1.0));
        }
    }

    #[test]
    fn polygonal_examples() {
        let s = seq(&[1.0, 2.0, 3.0]);
        let p = u_stat_prefixes(&product(), &s).unwrap();
        assert_eq!(polygonal_process(&p, 0.0).unwrap().coords(), &[0.0]);
        assert_eq!(polygonal_process(&p, 2.0 / 3.0).unwrap().coords(), &[2.0]);
        assert_eq!(polygonal_process(&p, 1.0).unwrap().coords(), &[11.0]);
        assert!((polygonal_process(&p, 5.0 / 6.0).unwrap()[0] - 6.5).abs() < 1e-12);
        assert!(polygonal_process(&p, 1.5).is_err());
        assert!(polygonal_process(&p, -0.1).is_err());
    }

    #[test]
    fn hoeffding_identity_on_chain_paths() {
        let chain = MarkovChain::new(
            vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.5, 0.3], vec![0.3, 0.3, 0.4]],
            None,
            vec![vec![0.0], vec![1.0], vec![3.0]],
        )
        .unwrap();
        let law: MarginalLaw = chain.marginal().into();
        let model = ProcessModel::MarkovFinite(chain);
        let mut rng = stream(13, 0);
        for trial in 0..20 {
            let t = random_table(3, 2, &mut rng);
            let h = t.into_kernel();
            let s = simulate(&model, 50, &mut stream(13, trial + 1)).unwrap();
            let chk = hoeffding_split_check(&h, &law, &s).unwrap();
            assert!(chk.general <= 1e-10, "{chk:?}");
            assert!(chk.symmetric.is_none());
        }
        let gini = kernel_catalog(
            KernelName::Gini,
            &KernelParams {
                dim: Some(1),
                table: None,
            },
        )
        .unwrap();
        let s = simulate(&model, 50, &mut rng).unwrap();
        let chk = hoeffding_split_check(&gini, &law, &s).unwrap();
        assert!(chk.max() <= 1e-10, "{chk:?}");
    }

    #[test]
    fn hoeffding_special_kernels() {
        let law: MarginalLaw = FiniteLaw::uniform_scalars(&[0.0, 1.0]).into();
        let s = seq(&[0.0, 1.0, 1.0, 0.0, 1.0]);
        let deg = crate::kernels::degenerate(&product(), &law).unwrap();
        let hc = hoeffding_components(&deg, &law).unwrap();
        assert!(s.iter().all(|x| hc.h10.eval(x).norm() < 1e-15));
        assert!(hoeffding_split_check(&deg, &law, &s).unwrap().max() < 1e-12);
        let c = Kernel::constant(HPoint::scalar(2.0), Domain::Euclidean(1));
        assert!(hoeffding_split_check(&c, &law, &s).unwrap().max() < 1e-12);
    }

    #[test]
    fn hoeffding_needs_exact_law() {
        let law = MarginalLaw::sampled(|rng| State::scalar(rng.random::<f64>()), Some(10), 0);
        assert_eq!(
            hoeffding_split_check(&product(), &law, &seq(&[0.1, 0.2])).unwrap_err(),
            Error::NotExact
        );
    }

    #[test]
    fn csv_export() {
        let p = u_stat_prefixes(&product(), &seq(&[1.0, 2.0, 3.0])).unwrap();
        let mut out = Vec::new();
        p.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next().unwrap(), "k,coord_1");
        assert_eq!(text.lines().count(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn polygonal_is_piecewise_linear(xs in prop::collection::vec(-3.0f64..3.0, 2..12), frac in 0.01f64..0.99, pick in 0usize..100) {
            let s = seq(&xs);
            let n = xs.len();
            let p = u_stat_prefixes(&product(), &s).unwrap();
            let k = pick % n;
            let t = (k as f64 + frac) / n as f64;
            let v = polygonal_process(&p, t).unwrap();
            let (a, b) = (p.get(k), p.get(k + 1));
            let expect = &a + &(&b - &a).scale(frac);
            prop_assert!(v.max_abs_diff(&expect) <= 1e-10 * (1.0 + a.norm() + b.norm()));
        }
    }
}

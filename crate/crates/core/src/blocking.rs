//! Blocking decomposition of the pair set `{(i, j) : 1 <= i < j <= n}`.
//!
//! Every index is written `i = 2qu + l` with `l` in `1..=2q`. A pair
//! `(2qu + l, 2qv + l')` falls into one of five families according to `u = v`
//! or the offset `l - l'`. The block kernels `h_{l,l'}` read the two relevant
//! coordinates out of block vectors `V_{k,u} = (X_{2qu+k}, ...)`, so each of
//! the first four families becomes a U-statistic of blocks separated by gaps.
//!
//! Component indices of the block kernels follow the remapped convention:
//!
//! | case | offset            | base block `k` | kernel                 |
//! |------|-------------------|----------------|------------------------|
//! | 1    | `0 <= l-l' < q`   | `l'`           | `h(x_{l-l'+1}, y_1)`   |
//! | 2    | `0 < l'-l < q`    | `l`            | `h(x_1, y_{l'-l+1})`   |
//! | 3    | `q <= l-l' < 2q`  | `l - 2q`       | `h(x_1, y_{l'-l+2q+1})`|
//! | 4    | `q <= l'-l < 2q`  | `l'`           | `h(x_{l-l'+2q+1}, y_1)`|
//!
//! Cases 3 and 4 need component `q + 1` when `|l - l'| = q`, so blocks carry
//! `q + 1` states. Consecutive blocks of one family are still `q` steps apart.

use rand::Rng;

use crate::error::{Error, Result};
use crate::hilbert::{axpy, norm, HPoint};
use crate::kernels::{Kernel, State};
use crate::processes::{couple_blocks, simulate_range, Path, ProcessModel};
use crate::ustat::u_stat_prefixes;

/// One pair together with its block coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockPair {
    pub i: usize,
    pub j: usize,
    pub u: usize,
    pub v: usize,
    pub l: usize,
    pub lp: usize,
}

/// The five pair families for fixed `(n, q)`; `families[a - 1]` holds family `a`.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexPartition {
    pub n: usize,
    pub q: usize,
    pub families: [Vec<BlockPair>; 5],
}

impl IndexPartition {
    pub fn family(&self, a: usize) -> &[BlockPair] {
        &self.families[a - 1]
    }

    pub fn cardinalities(&self) -> [usize; 5] {
        std::array::from_fn(|a| self.families[a].len())
    }

    pub fn total(&self) -> usize {
        self.families.iter().map(Vec::len).sum()
    }
}

/// `(u, l)` with `i = 2qu + l`, `l` in `1..=2q`.
pub fn block_coords(i: usize, q: usize) -> (usize, usize) {
    ((i - 1) / (2 * q), (i - 1) % (2 * q) + 1)
}

/// Family (1..=5) of the pair `(2qu + l, 2qv + l')` with `u <= v`.
pub fn family_of(q: usize, u: usize, v: usize, l: usize, lp: usize) -> usize {
    if u == v {
        return 5;
    }
    let d = l as i64 - lp as i64;
    let q = q as i64;
    if (0..q).contains(&d) {
        1
    } else if (1..q).contains(&-d) {
        2
    } else if (q..2 * q).contains(&d) {
        3
    } else {
        4
    }
}

fn check_nq(n: usize, q: usize) -> Result<()> {
    if q == 0 || n <= 2 * q {
        return Err(Error::Precondition(format!(
            "blocking needs n > 2q >= 2, got n = {n}, q = {q}"
        )));
    }
    Ok(())
}

/// Splits `{(i, j) : 1 <= i < j <= n}` into the five families.
pub fn partition_indices(n: usize, q: usize) -> Result<IndexPartition> {
    check_nq(n, q)?;
    let mut families: [Vec<BlockPair>; 5] = Default::default();
    for j in 2..=n {
        let (v, lp) = block_coords(j, q);
        for i in 1..j {
            let (u, l) = block_coords(i, q);
            let a = family_of(q, u, v, l, lp);
            families[a - 1].push(BlockPair { i, j, u, v, l, lp });
        }
    }
    Ok(IndexPartition { n, q, families })
}

/// Case of the block kernel `h_{l,l'}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockCase {
    Near,
    NearUpper,
    Far,
    FarUpper,
}

impl BlockCase {
    pub fn of(q: usize, l: usize, lp: usize) -> Result<Self> {
        if !(1..=2 * q).contains(&l) || !(1..=2 * q).contains(&lp) {
            return Err(Error::InvalidParameter(format!(
                "offsets ({l}, {lp}) outside 1..={}",
                2 * q
            )));
        }
        let d = l as i64 - lp as i64;
        let q = q as i64;
        Ok(if (0..q).contains(&d) {
            BlockCase::Near
        } else if (0..q).contains(&-d) {
            BlockCase::NearUpper
        } else if d >= q {
            BlockCase::Far
        } else {
            BlockCase::FarUpper
        })
    }

    /// Index (0..4) of the M term fed by this case.
    pub fn term(self) -> usize {
        match self {
            BlockCase::Near => 0,
            BlockCase::NearUpper => 1,
            BlockCase::Far => 2,
            BlockCase::FarUpper => 3,
        }
    }
}

/// `h_{l,l'}` acting on pairs of block vectors.
#[derive(Clone, Debug)]
pub struct BlockKernel {
    h: Kernel,
    case: BlockCase,
    /// 1-based component read from the first block.
    x_component: usize,
    /// 1-based component read from the second block.
    y_component: usize,
    block_len: usize,
}

impl BlockKernel {
    /// Component indices exactly as displayed in the lemma; rejects indices outside `1..=q`.
    pub fn literal(h: &Kernel, q: usize, l: usize, lp: usize) -> Result<Self> {
        let case = BlockCase::of(q, l, lp)?;
        let (l, lp, qi) = (l as i64, lp as i64, q as i64);
        let (a, b) = match case {
            BlockCase::Near => (l - lp + 1, 1),
            BlockCase::NearUpper => (1, lp + 1),
            BlockCase::Far => (1, lp - l + 2 * qi + 1),
            BlockCase::FarUpper => (lp - l + 2 * qi + 1, 1),
        };
        for c in [a, b] {
            if !(1..=qi).contains(&c) {
                return Err(Error::ComponentOutOfRange { index: c, q });
            }
        }
        Ok(BlockKernel {
            h: h.clone(),
            case,
            x_component: a as usize,
            y_component: b as usize,
            block_len: q,
        })
    }

    /// Component indices chosen so that the block sums reproduce the pair sums;
    /// blocks have `q + 1` states.
    pub fn remapped(h: &Kernel, q: usize, l: usize, lp: usize) -> Result<Self> {
        let case = BlockCase::of(q, l, lp)?;
        let (a, b) = match case {
            BlockCase::Near => (l - lp + 1, 1),
            BlockCase::NearUpper => (1, lp - l + 1),
            BlockCase::Far => (1, lp + 2 * q + 1 - l),
            BlockCase::FarUpper => (l + 2 * q + 1 - lp, 1),
        };
        Ok(BlockKernel {
            h: h.clone(),
            case,
            x_component: a,
            y_component: b,
            block_len: q + 1,
        })
    }

    pub fn case(&self) -> BlockCase {
        self.case
    }

    pub fn components(&self) -> (usize, usize) {
        (self.x_component, self.y_component)
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn eval_into(&self, x: &[State], y: &[State], out: &mut [f64]) {
        self.h
            .eval_into(&x[self.x_component - 1], &y[self.y_component - 1], out);
    }

    pub fn eval(&self, x: &[State], y: &[State]) -> Result<HPoint> {
        for b in [x, y] {
            if b.len() != self.block_len {
                return Err(Error::DimensionMismatch {
                    expected: self.block_len,
                    got: b.len(),
                });
            }
        }
        let mut out = vec![0.0; self.h.dim()];
        self.eval_into(x, y, &mut out);
        Ok(HPoint::from(out))
    }
}

/// Offset `k` of the blocks `V_{k,u}` feeding the M term of `(l, l')`.
pub fn block_base(q: usize, l: usize, lp: usize) -> Result<i64> {
    Ok(match BlockCase::of(q, l, lp)? {
        BlockCase::Near | BlockCase::FarUpper => lp as i64,
        BlockCase::NearUpper => l as i64,
        BlockCase::Far => l as i64 - 2 * q as i64,
    })
}

/// Range of indices `[first, last]` read by [`block_terms`].
pub fn required_range(n: usize, q: usize) -> (i64, i64) {
    let m = (n / (2 * q)) as i64;
    let q = q as i64;
    (1 - q, 2 * q * m + 3 * q)
}

/// Lemma terms for one path.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockTerms {
    /// `M_{N,q,1..4}`.
    pub m: [f64; 4],
    /// `R_{N,q,1..5}`.
    pub r: [f64; 5],
    /// `max_{2<=n<=N} || sum_{i<j<=n} h(X_i, X_j) ||`.
    pub lhs: f64,
}

impl BlockTerms {
    pub fn rhs(&self) -> f64 {
        self.m.iter().sum::<f64>() + self.r.iter().sum::<f64>()
    }

    pub fn slack(&self) -> f64 {
        self.rhs() - self.lhs
    }
}

/// `sum_{(l,l') in case} max_{1<=m<=M} || sum_{0<=u<v<=m} h_{l,l'}(B(k,u), B(k,v)) ||`,
/// with blocks supplied by `block`.
fn m_terms<'a, F>(h: &Kernel, q: usize, m_max: usize, mut block: F) -> Result<[f64; 4]>
where
    F: FnMut(i64, usize) -> Result<&'a [State]>,
{
    let d = h.dim();
    let mut out = [0.0; 4];
    let mut acc = vec![0.0; d];
    let mut buf = vec![0.0; d];
    for l in 1..=2 * q {
        for lp in 1..=2 * q {
            let bk = BlockKernel::remapped(h, q, l, lp)?;
            let k = block_base(q, l, lp)?;
            let blocks: Vec<&[State]> = (0..=m_max).map(|u| block(k, u)).collect::<Result<_>>()?;
            acc.iter_mut().for_each(|x| *x = 0.0);
            let mut best = 0.0_f64;
            for v in 1..=m_max {
                for u in 0..v {
                    bk.eval_into(blocks[u], blocks[v], &mut buf);
                    axpy(&mut acc, 1.0, &buf);
                }
                best = best.max(norm(&acc));
            }
            out[bk.case().term()] += best;
        }
    }
    Ok(out)
}

/// `max_{lo<=m<=M} || sum_{v=start}^{m} h(X_{f(v)}, X_{g(v)}) ||`.
fn max_partial<F>(h: &Kernel, path: &Path, start: usize, m_max: usize, mut pair: F) -> Result<f64>
where
    F: FnMut(usize) -> (i64, i64),
{
    let mut acc = vec![0.0; h.dim()];
    let mut buf = vec![0.0; h.dim()];
    let mut best = 0.0_f64;
    for v in start..=m_max {
        let (i, j) = pair(v);
        h.eval_into(path.get(i)?, path.get(j)?, &mut buf);
        axpy(&mut acc, 1.0, &buf);
        best = best.max(norm(&acc));
    }
    Ok(best)
}

fn r_terms(h: &Kernel, path: &Path, q: usize, m_max: usize) -> Result<[f64; 5]> {
    let mut r = [0.0; 5];
    let tq = 2 * q as i64;
    for l in 1..=2 * q {
        for lp in 1..=2 * q {
            let (li, lpi) = (l as i64, lp as i64);
            match BlockCase::of(q, l, lp)? {
                BlockCase::Far => {
                    r[0] += max_partial(h, path, 1, m_max, |v| (tq * (v as i64 - 1) + li, tq * v as i64 + lpi))?;
                    r[1] += max_partial(h, path, 1, m_max, |v| (li - tq, tq * v as i64 + lpi))?;
                }
                BlockCase::FarUpper => {
                    r[2] += max_partial(h, path, 1, m_max, |v| (li, tq * v as i64 + lpi))?;
                    r[3] += max_partial(h, path, 1, m_max, |v| (tq * v as i64 + li, tq * v as i64 + lpi))?;
                }
                _ => {}
            }
            if l < lp {
                r[4] += max_partial(h, path, 0, m_max, |u| (tq * u as i64 + li, tq * u as i64 + lpi))?;
            }
        }
    }
    Ok(r)
}

fn path_block(path: &Path, q: usize, k: i64, u: usize) -> Result<&[State]> {
    path.window(2 * q as i64 * u as i64 + k, q + 1)
}

/// Evaluates every M and R term of the lemma on `path` by direct summation.
///
/// The path must cover [`required_range`]`(n, q)`.
pub fn block_terms(h: &Kernel, path: &Path, n: usize, q: usize) -> Result<BlockTerms> {
    check_nq(n, q)?;
    let (first, last) = required_range(n, q);
    if path.first_index() > first || path.last_index() < last {
        return Err(Error::SequenceTooShort(format!(
            "blocking with n = {n}, q = {q} reads X_{first}..X_{last}, path covers X_{}..X_{}",
            path.first_index(),
            path.last_index()
        )));
    }
    let m_max = n / (2 * q);
    let m = m_terms(h, q, m_max, |k, u| path_block(path, q, k, u))?;
    let r = r_terms(h, path, q, m_max)?;
    let prefixes = u_stat_prefixes(h, path.from_one(n)?)?;
    let lhs = (2..=n).map(|k| prefixes.get(k).norm()).fold(0.0, f64::max);
    Ok(BlockTerms { m, r, lhs })
}

/// Largest discrepancy in the exact identities behind the lemma.
///
/// For each `(l, l')` and `m`, the direct sum `sum_{u<v<=m} h(X_{2qu+l}, X_{2qv+l'})`
/// is compared with its block form; in cases 3 and 4 the telescoped remainder
/// `+R_1 - R_2` (resp. `+R_3 - R_4`) is added back.
pub fn reassembly_check(h: &Kernel, path: &Path, n: usize, q: usize) -> Result<f64> {
    check_nq(n, q)?;
    let m_max = n / (2 * q);
    let tq = 2 * q as i64;
    let d = h.dim();
    let mut worst = 0.0_f64;
    let mut buf = vec![0.0; d];
    for l in 1..=2 * q {
        for lp in 1..=2 * q {
            let bk = BlockKernel::remapped(h, q, l, lp)?;
            let k = block_base(q, l, lp)?;
            let (li, lpi) = (l as i64, lp as i64);
            let mut direct = vec![0.0; d];
            let mut blocked = vec![0.0; d];
            let mut rem_plus = vec![0.0; d];
            let mut rem_minus = vec![0.0; d];
            for v in 1..=m_max {
                let vi = v as i64;
                for u in 0..v {
                    let ui = u as i64;
                    h.eval_into(path.get(tq * ui + li)?, path.get(tq * vi + lpi)?, &mut buf);
                    axpy(&mut direct, 1.0, &buf);
                    bk.eval_into(path_block(path, q, k, u)?, path_block(path, q, k, v)?, &mut buf);
                    axpy(&mut blocked, 1.0, &buf);
                }
                let (plus, minus) = match bk.case() {
                    BlockCase::Far => ((tq * (vi - 1) + li, tq * vi + lpi), (li - tq, tq * vi + lpi)),
                    BlockCase::FarUpper => ((li, tq * vi + lpi), (tq * vi + li, tq * vi + lpi)),
                    _ => ((0, 0), (0, 0)),
                };
                if matches!(bk.case(), BlockCase::Far | BlockCase::FarUpper) {
                    h.eval_into(path.get(plus.0)?, path.get(plus.1)?, &mut buf);
                    axpy(&mut rem_plus, 1.0, &buf);
                    h.eval_into(path.get(minus.0)?, path.get(minus.1)?, &mut buf);
                    axpy(&mut rem_minus, 1.0, &buf);
                }
                let mut rebuilt = blocked.clone();
                axpy(&mut rebuilt, 1.0, &rem_plus);
                axpy(&mut rebuilt, -1.0, &rem_minus);
                let scale = 1.0 + norm(&direct);
                axpy(&mut rebuilt, -1.0, &direct);
                worst = worst.max(norm(&rebuilt) / scale);
            }
        }
    }
    Ok(worst)
}

/// Real and coupled M terms for one simulated path.
#[derive(Clone, Debug)]
pub struct CoupledTerms {
    /// `M_{N,q,1..4}` on the original blocks.
    pub m: [f64; 4],
    /// `M*_{N,q,1..4}` on the independent copies.
    pub m_star: [f64; 4],
    /// Blocks with `V* != V`.
    pub mismatches: usize,
    /// Blocks whose first state was replaced by the coupling.
    pub first_state_changes: usize,
    /// Coupled blocks (`u >= 1`) across all families.
    pub coupled_blocks: usize,
    /// Whether any block differs.
    pub any_mismatch: bool,
}

/// Simulates a path, couples every block family and evaluates `M` and `M*`.
///
/// Families `k` in `1-q..=q` carry blocks of `q + 1` states for
/// `u = 0..=floor(n/2q) + 1`; a base offset `k > q` is the family `k - 2q`
/// shifted by one block.
pub fn coupled_block_terms<R: Rng + ?Sized>(
    model: &ProcessModel,
    h: &Kernel,
    n: usize,
    q: usize,
    rng: &mut R,
) -> Result<CoupledTerms> {
    check_nq(n, q)?;
    let chain = model
        .as_chain()
        .map_err(|_| Error::InvalidModel("coupled blocks need a finite-state model".into()))?;
    let (first, last) = required_range(n, q);
    // the shifted families reach one block further
    let path = simulate_range(model, first, last + q as i64, rng)?;
    let m_max = n / (2 * q);
    let u_top = m_max + 1;
    let qi = q as i64;
    let mut families = Vec::with_capacity(2 * q);
    for k in (1 - qi)..=qi {
        families.push(couple_blocks(&chain, &path, q, k, q + 1, u_top, rng)?);
    }
    let locate = |k: i64, u: usize| -> (usize, usize) {
        if k > qi {
            ((k - 2 * qi - (1 - qi)) as usize, u + 1)
        } else {
            ((k - (1 - qi)) as usize, u)
        }
    };
    let m = m_terms(h, q, m_max, |k, u| path_block(&path, q, k, u))?;
    let m_star = m_terms(h, q, m_max, |k, u| {
        let (f, uu) = locate(k, u);
        Ok(families[f].blocks[uu].as_slice())
    })?;
    let mismatches = families
        .iter()
        .map(|f| f.mismatched.iter().filter(|x| **x).count())
        .sum();
    let first_state_changes = families
        .iter()
        .map(|f| f.first_state_changed.iter().filter(|x| **x).count())
        .sum();
    Ok(CoupledTerms {
        m,
        m_star,
        mismatches,
        first_state_changes,
        coupled_blocks: families.len() * u_top,
        any_mismatch: mismatches > 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{FiniteLaw, KernelTable};
    use crate::processes::MarkovChain;
    use crate::rng::stream;
    use std::collections::BTreeSet;

    fn random_kernel(rng: &mut impl Rng, states: usize, dim: usize) -> Kernel {
        KernelTable::from_fn(states, dim, |_, _| {
            (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
        })
        .unwrap()
        .into_kernel()
    }

    #[test]
    fn partition_small_examples() {
        let p = partition_indices(5, 1).unwrap();
        assert_eq!(p.total(), 10);
        let all: BTreeSet<(usize, usize)> = p.families.iter().flatten().map(|e| (e.i, e.j)).collect();
        assert_eq!(all.len(), 10);
        assert!(p
            .family(5)
            .iter()
            .any(|e| (e.i, e.j) == (1, 2) && e.u == 0 && e.v == 0 && e.l == 1 && e.lp == 2));
        assert!(matches!(partition_indices(4, 2), Err(Error::Precondition(_))));
    }

    #[test]
    fn partition_is_exact_up_to_forty() {
        for q in 1..=8 {
            for n in (2 * q + 1)..=40 {
                let p = partition_indices(n, q).unwrap();
                let mut seen = BTreeSet::new();
                for (a, fam) in p.families.iter().enumerate() {
                    for e in fam {
                        assert!(seen.insert((e.i, e.j)), "duplicate pair");
                        assert_eq!(e.i, 2 * q * e.u + e.l);
                        assert_eq!(e.j, 2 * q * e.v + e.lp);
                        assert_eq!(family_of(q, e.u, e.v, e.l, e.lp), a + 1);
                    }
                }
                let want: BTreeSet<(usize, usize)> = (1..=n).flat_map(|j| (1..j).map(move |i| (i, j))).collect();
                assert_eq!(seen, want);
            }
        }
    }

    #[test]
    fn literal_block_kernel_cases() {
        let h = Kernel::from_fn("pair", 2, false, crate::kernels::Domain::Euclidean(1), |x, y, out| {
            out[0] = x.coords()[0];
            out[1] = y.coords()[0];
        });
        let lit = BlockKernel::literal(&h, 3, 2, 2).unwrap();
        assert_eq!(lit.components(), (1, 1));
        let x: Vec<State> = (1..=3).map(|i| State::scalar(i as f64)).collect();
        let y: Vec<State> = (11..=13).map(|i| State::scalar(i as f64)).collect();
        assert_eq!(lit.eval(&x, &y).unwrap().coords(), &[1.0, 11.0]);
        assert!(matches!(
            BlockKernel::literal(&h, 1, 2, 1),
            Err(Error::ComponentOutOfRange { index: 2, q: 1 })
        ));
        assert!(matches!(
            BlockKernel::literal(&h, 2, 1, 2),
            Err(Error::ComponentOutOfRange { index: 3, q: 2 })
        ));
        let re = BlockKernel::remapped(&h, 1, 2, 1).unwrap();
        assert_eq!((re.case(), re.components()), (BlockCase::Far, (1, 2)));
        let re = BlockKernel::remapped(&h, 2, 1, 2).unwrap();
        assert_eq!((re.case(), re.components()), (BlockCase::NearUpper, (1, 2)));
        assert!(re.eval(&x[..2], &y[..2]).is_err());
    }

    #[test]
    fn remapped_kernels_reassemble_pair_sums() {
        let model = ProcessModel::MarkovFinite(MarkovChain::two_state(0.3, 0.2).unwrap());
        let mut rng = stream(21, 0);
        for q in 1..=4 {
            for n in [2 * q + 1, 4 * q + 3, 24] {
                let h = random_kernel(&mut rng, 2, 2);
                let (a, b) = required_range(n, q);
                let path = simulate_range(&model, a, b, &mut rng).unwrap();
                assert!(reassembly_check(&h, &path, n, q).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_kernel_terms_vanish() {
        let model = ProcessModel::MarkovFinite(MarkovChain::two_state(0.25, 0.25).unwrap());
        let h = Kernel::zero(3, crate::kernels::Domain::Finite(2));
        let (a, b) = required_range(24, 2);
        let path = simulate_range(&model, a, b, &mut stream(22, 0)).unwrap();
        let t = block_terms(&h, &path, 24, 2).unwrap();
        assert_eq!(t.rhs(), 0.0);
        assert_eq!(t.lhs, 0.0);
    }

    #[test]
    fn lemma_inequality_on_random_paths() {
        let model = ProcessModel::MarkovFinite(MarkovChain::two_state(0.25, 0.25).unwrap());
        let mut rng = stream(23, 0);
        for trial in 0..300 {
            let q = 1 + trial % 3;
            let h = random_kernel(&mut rng, 2, 1 + trial % 3);
            let (a, b) = required_range(24, q);
            let path = simulate_range(&model, a, b, &mut rng).unwrap();
            let t = block_terms(&h, &path, 24, q).unwrap();
            assert!(t.slack() >= -1e-9, "trial {trial}: {t:?}");
            assert!(t.m.iter().chain(t.r.iter()).all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn block_terms_preconditions() {
        let model = ProcessModel::IidFinite(FiniteLaw::uniform_scalars(&[0.0, 1.0]));
        let h = random_kernel(&mut stream(24, 0), 2, 1);
        let path = simulate_range(&model, 1, 30, &mut stream(24, 1)).unwrap();
        assert!(matches!(block_terms(&h, &path, 4, 2), Err(Error::Precondition(_))));
        assert!(matches!(block_terms(&h, &path, 12, 2), Err(Error::SequenceTooShort(_))));
    }

    #[test]
    fn iid_coupling_keeps_blocks() {
        let model = ProcessModel::IidFinite(FiniteLaw::uniform_scalars(&[0.0, 1.0]));
        let mut rng = stream(25, 0);
        let h = random_kernel(&mut rng, 2, 2);
        for q in 1..=3 {
            let c = coupled_block_terms(&model, &h, 30, q, &mut rng).unwrap();
            assert_eq!(c.mismatches, 0);
            assert_eq!(c.m, c.m_star);
        }
        let ar = ProcessModel::Ar1Gaussian {
            rho: 0.5,
            noise_variance: 1.0,
        };
        assert!(matches!(
            coupled_block_terms(&ar, &h, 30, 2, &mut rng),
            Err(Error::InvalidModel(_))
        ));
    }

    #[test]
    fn chain_coupling_mismatch_rate_is_beta() {
        // beta(q) = 0.5 * 0.5^q for the symmetric chain a = b = 0.25
        let model = ProcessModel::MarkovFinite(MarkovChain::two_state(0.25, 0.25).unwrap());
        let h = random_kernel(&mut stream(26, 0), 2, 1);
        let q = 3;
        let beta = 0.5 * 0.5f64.powi(q as i32);
        let (mut changed, mut mism, mut total) = (0usize, 0usize, 0usize);
        for rep in 0..400 {
            let c = coupled_block_terms(&model, &h, 48, q, &mut stream(26, rep + 1)).unwrap();
            changed += c.first_state_changes;
            mism += c.mismatches;
            total += c.coupled_blocks;
        }
        let f = changed as f64 / total as f64;
        let se = (beta * (1.0 - beta) / total as f64).sqrt();
        assert!((f - beta).abs() < 3.0 * se, "first-state rate {f} vs {beta}");
        assert!((mism as f64 / total as f64) <= beta + 3.0 * se);
    }
}

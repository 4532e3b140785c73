use hilbert_ustat::blocking::{block_terms, partition_indices, required_range};
use hilbert_ustat::bounds::{deviation_bound, rate_plan, BoundInputs, Theorem};
use hilbert_ustat::experiments::{KernelSpec, ModelSpec};
use hilbert_ustat::kernels::KernelTable;
use hilbert_ustat::processes::{simulate, simulate_range};
use hilbert_ustat::rng::stream;
use hilbert_ustat::ustat::{polygonal_process, u_stat_prefixes, u_statistic};
use hilbert_ustat::State;
use proptest::prelude::*;

fn inputs(x: f64, beta_q: f64, q: usize, n: usize) -> BoundInputs {
    BoundInputs {
        r: 2.0,
        q,
        n,
        x,
        level: Some(4.0),
        m_le: 1.5,
        m_gt: 0.2,
        sup_lag_mean: 0.7,
        beta_q,
        c_r: 3.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn bound_decreases_in_x_and_increases_in_beta(
        x in 0.1f64..1e3, dx in 0.01f64..10.0, b in 0.0f64..0.5, db in 0.0f64..0.5, q in 1usize..6, extra in 1usize..50,
    ) {
        let n = 2 * q + extra;
        let lo = deviation_bound(&inputs(x, b, q, n)).unwrap();
        let hi_x = deviation_bound(&inputs(x + dx, b, q, n)).unwrap();
        let hi_b = deviation_bound(&inputs(x, b + db, q, n)).unwrap();
        prop_assert!(hi_x.total <= lo.total);
        prop_assert!(hi_b.total >= lo.total);
        prop_assert!((lo.terms.iter().sum::<f64>() - lo.total).abs() <= 1e-9 * lo.total.max(1.0));
        prop_assert!(lo.terms.iter().all(|t| *t >= 0.0));
    }

    #[test]
    fn families_cover_every_pair(q in 1usize..6, extra in 1usize..30) {
        let n = 2 * q + extra;
        let part = partition_indices(n, q).unwrap();
        prop_assert_eq!(part.total(), n * (n - 1) / 2);
        prop_assert_eq!(part.cardinalities().iter().sum::<usize>(), part.total());
    }

    #[test]
    fn blocking_terms_dominate_the_max(seed in any::<u64>(), q in 1usize..4, extra in 1usize..20) {
        let n = 2 * q + extra;
        let model = ModelSpec::TwoState { a: 0.3, b: 0.2 }.build().unwrap();
        let h = KernelSpec::from_table(vec![vec![vec![1.0, 0.0], vec![-0.5, 2.0]], vec![vec![-0.5, 2.0], vec![0.25, -1.0]]])
            .build()
            .unwrap();
        let (a, b) = required_range(n, q);
        let path = simulate_range(&model, a, b, &mut stream(seed, 0)).unwrap();
        let t = block_terms(&h, &path, n, q).unwrap();
        prop_assert!(t.slack() >= -1e-9 * t.lhs.max(1.0));
    }

    #[test]
    fn u_statistic_is_permutation_invariant(seed in any::<u64>(), n in 2usize..40, rot in 0usize..40) {
        let table = KernelTable::from_fn(3, 2, |i, j| vec![(i + j) as f64, (i * j) as f64 - 1.0]).unwrap();
        let h = table.into_kernel();
        let law = ModelSpec::Iid { support: vec![vec![0.0], vec![1.0], vec![2.0]], weights: Some(vec![0.2, 0.5, 0.3]) }
            .build()
            .unwrap();
        let xs = simulate(&law, n, &mut stream(seed, 1)).unwrap();
        let mut ys: Vec<State> = xs.clone();
        ys.rotate_left(rot % n);
        ys.reverse();
        let u = u_statistic(&h, &xs).unwrap();
        let v = u_statistic(&h, &ys).unwrap();
        prop_assert!(u.max_abs_diff(&v) <= 1e-9 * u.norm().max(1.0));
    }

    #[test]
    fn polygonal_path_interpolates_prefixes(seed in any::<u64>(), n in 2usize..60, k in 0usize..60) {
        let h = KernelSpec::named("product").build().unwrap();
        let model = ModelSpec::Ar1 { rho: 0.4, noise_variance: 1.0 }.build().unwrap();
        let xs = simulate(&model, n, &mut stream(seed, 2)).unwrap();
        let path = u_stat_prefixes(&h, &xs).unwrap();
        let k = k % (n + 1);
        let at_node = polygonal_process(&path, k as f64 / n as f64).unwrap();
        prop_assert!(at_node.max_abs_diff(&path.get(k)) <= 1e-9 * path.get(k).norm().max(1.0));
        prop_assert!(path.endpoint().max_abs_diff(&u_statistic(&h, &xs).unwrap()) <= 1e-9 * path.endpoint().norm().max(1.0));
    }

    #[test]
    fn nondegenerate_block_exponent_is_below_one_over_p(p in 1.05f64..1.95, extra in 0.0f64..4.0, eta in 0.01f64..1.0) {
        let delta = 2.0 - p + extra;
        let plan = rate_plan(Theorem::T2, p, delta, eta).unwrap();
        prop_assert!(plan.a.unwrap() < 1.0 / p);
        prop_assert!(plan.gamma.unwrap() >= plan.gamma_prime.unwrap() - 1.0 - 1e-12);
    }
}

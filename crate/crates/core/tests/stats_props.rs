mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use common::gauss;
use varisk::data::Label;
use varisk::seeding;
use varisk::stats::{bvn_cdf, entropy, info_gain, normal_quantile, polychoric, welch_t, ContingencyTable};

fn sample(seed: u64, n: usize, mean: f64, sd: f64) -> Vec<f64> {
    let mut rng = seeding::rng(seed);
    (0..n).map(|_| mean + sd * gauss(&mut rng)).collect()
}

fn labels(seed: u64, n: usize) -> Vec<Label> {
    let mut rng = seeding::rng(seed);
    (0..n)
        .map(|i| if i == 0 || (i > 1 && rng.random_bool(0.35)) { Label::Var } else { Label::NonVar })
        .collect()
}

/// Log-likelihood of a table under the two-step model, thresholds from the margins.
fn polychoric_loglik(table: &[Vec<u64>], rho: f64) -> f64 {
    let n: u64 = table.iter().flatten().sum();
    let cuts = |totals: Vec<u64>| {
        let mut acc = 0;
        let mut t = vec![f64::NEG_INFINITY];
        for c in &totals[..totals.len() - 1] {
            acc += c;
            t.push(normal_quantile(acc as f64 / n as f64));
        }
        t.push(f64::INFINITY);
        t
    };
    let a = cuts(table.iter().map(|r| r.iter().sum()).collect());
    let b = cuts((0..table[0].len()).map(|j| table.iter().map(|r| r[j]).sum()).collect());
    let f = |h: f64, k: f64| bvn_cdf(h, k, rho).unwrap();
    let mut ll = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            let p = f(a[i + 1], b[j + 1]) - f(a[i], b[j + 1]) - f(a[i + 1], b[j]) + f(a[i], b[j]);
            ll += c as f64 * p.max(1e-300).ln();
        }
    }
    ll
}

fn table_strategy() -> impl Strategy<Value = Vec<Vec<u64>>> {
    (2usize..=4, 2usize..=4).prop_flat_map(|(r, c)| prop::collection::vec(prop::collection::vec(1u64..200, c), r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn welch_is_antisymmetric(seed in any::<u64>(), nx in 2usize..40, ny in 2usize..40, shift in -3.0f64..3.0) {
        let x = sample(seed, nx, 0.0, 1.0);
        let y = sample(seed ^ 1, ny, shift, 2.0);
        let a = welch_t(&x, &y).unwrap();
        let b = welch_t(&y, &x).unwrap();
        prop_assert_eq!(a.t, -b.t);
        prop_assert_eq!(a.p_two_sided, b.p_two_sided);
        prop_assert_eq!(a.df, b.df);
    }

    #[test]
    fn welch_location_scale(seed in any::<u64>(), nx in 2usize..40, ny in 2usize..40,
                            a in 0.25f64..4.0, b in -10.0f64..10.0) {
        let x = sample(seed, nx, 1.0, 1.0);
        let y = sample(seed ^ 7, ny, 0.0, 1.5);
        let r0 = welch_t(&x, &y).unwrap();
        let tx: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let ty: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let r1 = welch_t(&tx, &ty).unwrap();
        prop_assert!((r0.t - r1.t).abs() <= 1e-12 * r0.t.abs().max(1.0), "{} vs {}", r0.t, r1.t);
        prop_assert!((r0.p_two_sided - r1.p_two_sided).abs() <= 1e-12);
        prop_assert!(r1.p_two_sided >= 0.0 && r1.p_two_sided <= 1.0 && r1.df > 0.0);
    }

    #[test]
    fn info_gain_bounds_and_relabeling(seed in any::<u64>(), n in 4usize..120, k in 2usize..5) {
        let mut rng = seeding::rng(seed);
        let y = labels(seed, n);
        let x: Vec<Option<usize>> = (0..n).map(|_| if rng.random_bool(0.1) { None } else { Some(rng.random_range(0..k)) }).collect();
        prop_assume!(x.iter().any(Option::is_some));
        let g = info_gain(&x, &y).unwrap();
        prop_assert!(g.gain >= 0.0 && g.gain <= g.class_entropy + 1e-12);

        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rng);
        let relabeled: Vec<Option<usize>> = x.iter().map(|v| v.map(|c| perm[c])).collect();
        prop_assert!((info_gain(&relabeled, &y).unwrap().gain - g.gain).abs() <= 1e-12);

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let px: Vec<Option<usize>> = order.iter().map(|&i| x[i]).collect();
        let py: Vec<Label> = order.iter().map(|&i| y[i]).collect();
        prop_assert!((info_gain(&px, &py).unwrap().gain - g.gain).abs() <= 1e-12);
    }

    #[test]
    fn entropy_is_bounded(counts in prop::collection::vec(0usize..50, 1..6)) {
        prop_assume!(counts.iter().sum::<usize>() > 0);
        let h = entropy(&counts).unwrap();
        prop_assert!(h >= 0.0 && h <= (counts.len() as f64).log2() + 1e-12);
    }

    #[test]
    fn bvn_symmetric_in_limits(h in -4.0f64..4.0, k in -4.0f64..4.0, rho in -0.99f64..0.99) {
        let a = bvn_cdf(h, k, rho).unwrap();
        let b = bvn_cdf(k, h, rho).unwrap();
        prop_assert!((a - b).abs() <= 1e-15, "{a} vs {b}");
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn polychoric_transpose_and_local_optimum(table in table_strategy()) {
        let t = ContingencyTable::new(table.clone()).unwrap();
        let r = polychoric(&t).unwrap();
        let rt = polychoric(&t.transpose()).unwrap();
        prop_assert!((r.rho - rt.rho).abs() <= 1e-6, "{} vs {}", r.rho, rt.rho);
        let at = polychoric_loglik(&table, r.rho);
        for d in [-0.01, 0.01] {
            let other = r.rho + d;
            if other.abs() <= 0.999 {
                prop_assert!(at >= polychoric_loglik(&table, other) - 1e-9, "rho {} not a local optimum", r.rho);
            }
        }
    }
}

#[test]
fn bvn_monotone_on_grid() {
    let grid: Vec<f64> = (-30..=30).map(|i| i as f64 * 0.15).collect();
    let rhos: Vec<f64> = (-19..=19).map(|i| i as f64 * 0.05).collect();
    for &rho in &[-0.9, -0.5, 0.0, 0.4, 0.95] {
        for &k in &[-2.0, -0.3, 0.0, 1.1] {
            let vals: Vec<f64> = grid.iter().map(|&h| bvn_cdf(h, k, rho).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[1] >= w[0] - 1e-16), "h-monotone fails at k={k} rho={rho}");
            let vals: Vec<f64> = grid.iter().map(|&kk| bvn_cdf(k, kk, rho).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[1] >= w[0] - 1e-16), "k-monotone fails at h={k} rho={rho}");
        }
    }
    for &(h, k) in &[(0.0, 0.0), (-1.0, 0.5), (1.5, 1.5), (-2.0, -2.5)] {
        let vals: Vec<f64> = rhos.iter().map(|&r| bvn_cdf(h, k, r).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] >= w[0] - 1e-16), "rho-monotone fails at ({h}, {k})");
    }
}

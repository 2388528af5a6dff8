mod common;

use dpkit::jointlearn::{jl_gradient, jl_objective, Arch, JlWeights, KlDirection, SplitView};
use dpkit::labelmodels::{cage_posterior, macro_f1, accuracy};
use proptest::prelude::*;
use rand::Rng;

use common::*;

/// Central difference of `f` in coordinate `i` of `x`.
fn central(x: &[f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let up = f(&xp);
    xp[i] -= 2.0 * h;
    let down = f(&xp);
    (up - down) / (2.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn posterior_is_a_distribution(seed in any::<u64>(), k in 2usize..=5, m in 1usize..=8) {
        let mut r = rng(seed);
        let (targets, cont) = layout(&mut r, k, m, true);
        let p = params(&mut r, k, &targets, &cont, 3.0);
        let (votes, scores) = row(&mut r, &targets, &cont);
        let post = cage_posterior(&p, &votes, &scores).unwrap();
        prop_assert_eq!(post.len(), k);
        prop_assert!(post.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn normalizer_matches_enumeration(seed in any::<u64>(), k in 2usize..=4, m in 1usize..=8) {
        let mut r = rng(seed);
        let (targets, _) = layout(&mut r, k, m, false);
        let p = params(&mut r, k, &targets, &vec![false; m], 2.0);
        let mut z = 0.0;
        for y in 0..k {
            for mask in 0u32..(1 << m) {
                let e: f64 = (0..m).filter(|j| mask >> j & 1 == 1).map(|j| p.theta[j * k + y]).sum();
                z += e.exp();
            }
        }
        prop_assert!(rel_err(p.log_normalizer().exp(), z, 0.0) < 1e-9);
    }

    #[test]
    fn posterior_equivariant_under_lf_permutation(seed in any::<u64>(), k in 2usize..=4, m in 2usize..=6) {
        let mut r = rng(seed);
        let (targets, cont) = layout(&mut r, k, m, true);
        let p = params(&mut r, k, &targets, &cont, 2.0);
        let (votes, scores) = row(&mut r, &targets, &cont);
        let mut perm: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            perm.swap(i, r.gen_range(0..=i));
        }
        let mut q = p.clone();
        for (new, &old) in perm.iter().enumerate() {
            q.lf_targets[new] = p.lf_targets[old];
            q.lf_is_continuous[new] = p.lf_is_continuous[old];
            q.quality_guides[new] = p.quality_guides[old];
            q.theta[new * k..(new + 1) * k].copy_from_slice(&p.theta[old * k..(old + 1) * k]);
            q.pi[new * k..(new + 1) * k].copy_from_slice(&p.pi[old * k..(old + 1) * k]);
        }
        let pv: Vec<_> = perm.iter().map(|&o| votes[o]).collect();
        let ps: Vec<_> = perm.iter().map(|&o| scores[o]).collect();
        let a = cage_posterior(&p, &votes, &scores).unwrap();
        let b = cage_posterior(&q, &pv, &ps).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_are_bounded(seed in any::<u64>(), n in 1usize..40, k in 2usize..=4) {
        let mut r = rng(seed);
        let gold = gold(&mut r, n, k);
        let pred: Vec<u32> = (0..n).map(|_| r.gen_range(0..=k as u32)).collect();
        let acc = accuracy(&pred, &gold);
        let f1 = macro_f1(&pred, &gold, k);
        prop_assert!((0.0..=1.0).contains(&acc));
        prop_assert!((0.0..=1.0).contains(&f1));
        prop_assert_eq!(accuracy(&gold, &gold), 1.0);
        prop_assert_eq!(macro_f1(&gold, &gold, k), 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn cage_gradient_matches_finite_differences(
        seed in any::<u64>(), k in 2usize..=3, m in 1usize..=4, n in 1usize..=6, lambda in 0.0f64..2.0,
    ) {
        let mut r = rng(seed);
        let (targets, cont) = layout(&mut r, k, m, true);
        let p = params(&mut r, k, &targets, &cont, 1.0);
        let (vm, sm) = matrices(&mut r, n, &targets, &cont);
        let g = p.gradient(&vm, &sm, lambda);
        let mut x: Vec<f64> = p.theta.clone();
        x.extend(&p.pi);
        let len = p.theta.len();
        let f = |x: &[f64]| {
            let mut q = p.clone();
            q.theta.copy_from_slice(&x[..len]);
            q.pi.copy_from_slice(&x[len..]);
            q.objective(&vm, &sm, lambda)
        };
        let analytic: Vec<f64> = g.theta.iter().chain(&g.pi).copied().collect();
        for (i, a) in analytic.iter().enumerate() {
            let fd = central(&x, i, 1e-5, f);
            prop_assert!(rel_err(*a, fd, 1e-4) < 1e-4, "coord {}: analytic {} fd {}", i, a, fd);
        }
    }

    #[test]
    fn jl_gradient_matches_finite_differences(
        seed in any::<u64>(), mlp in any::<bool>(), fm_gm in any::<bool>(),
    ) {
        let mut r = rng(seed);
        let (k, m, d) = (r.gen_range(2..=3), r.gen_range(1..=3), r.gen_range(1..=3));
        let (targets, cont) = layout(&mut r, k, m, true);
        let gm = params(&mut r, k, &targets, &cont, 1.0);
        let arch = if mlp { Arch::Mlp { hidden: 3 } } else { Arch::Linear };
        let weights = JlWeights {
            fm_sup: r.gen_range(0.1..2.0),
            gm_sup: r.gen_range(0.1..2.0),
            gm_unsup: r.gen_range(0.1..2.0),
            agree: r.gen_range(0.1..2.0),
            qg: r.gen_range(0.1..2.0),
        };
        let p = jl_params(&mut r, gm, arch, d, weights);
        let (nl, nu) = (r.gen_range(1..=4), r.gen_range(1..=4));
        let (lv, ls) = matrices(&mut r, nl, &targets, &cont);
        let (uv, us) = matrices(&mut r, nu, &targets, &cont);
        let (lx, ux) = (features(&mut r, nl, d), features(&mut r, nu, d));
        let lg = gold(&mut r, nl, k);
        let l = SplitView { features: &lx, d, votes: &lv, scores: &ls, gold: Some(&lg) };
        let u = SplitView { features: &ux, d, votes: &uv, scores: &us, gold: None };
        let kl = if fm_gm { KlDirection::FmGm } else { KlDirection::GmFm };
        let analytic = jl_gradient(&p, &l, &u, kl).flat();
        let x = p.flat();
        let f = |x: &[f64]| {
            let mut q = p.clone();
            q.set_flat(x);
            jl_objective(&q, &l, &u, kl)
        };
        for (i, a) in analytic.iter().enumerate() {
            let fd = central(&x, i, 1e-5, f);
            prop_assert!(rel_err(*a, fd, 1e-4) < 1e-4, "coord {}: analytic {} fd {}", i, a, fd);
        }
    }
}

use ergorate::processes::{invariant_exact, invariant_tail, BackwardRecurrence};
use ergorate::rate_calculus::PhiSpec;
use ergorate::subordination::{subordinate_rate, RateFunction, SubordinatorSpec};
use ergorate::wasserstein::{
    kr_duality_check, sinkhorn_with, w_1d, w_exact_lp, EmpiricalMeasure, LipschitzFn, SinkhornOptions,
};
use proptest::prelude::*;

/// Measure on small integers, so that supports overlap often.
fn int_measure() -> impl Strategy<Value = EmpiricalMeasure> {
    prop::collection::vec((-6i32..7, 0.05f64..1.0), 1..9).prop_map(|atoms| {
        let (pts, w): (Vec<f64>, Vec<f64>) = atoms.into_iter().map(|(x, w)| (x as f64, w)).unzip();
        EmpiricalMeasure::normalized(pts, 1, w).unwrap()
    })
}

fn cloud(dim: usize) -> impl Strategy<Value = EmpiricalMeasure> {
    (1usize..7).prop_flat_map(move |k| {
        prop::collection::vec(-3.0f64..3.0, k * dim).prop_map(move |pts| EmpiricalMeasure::uniform(pts, dim).unwrap())
    })
}

/// `∫|x − x0|^p d|μ − ν|(x)` for one-dimensional atoms.
fn weighted_tv(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, x0: f64, p: f64) -> f64 {
    let mut signed: Vec<(f64, f64)> = mu.points().iter().copied().zip(mu.weights().iter().copied()).collect();
    signed.extend(nu.points().iter().copied().zip(nu.weights().iter().map(|w| -w)));
    signed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut i = 0;
    while i < signed.len() {
        let x = signed[i].0;
        let mut mass = 0.0;
        while i < signed.len() && signed[i].0 == x {
            mass += signed[i].1;
            i += 1;
        }
        total += mass.abs() * (x - x0).abs().powf(p);
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn w1d_is_a_metric(a in int_measure(), b in int_measure(), c in int_measure(), p in 1.0f64..3.0) {
        let ab = w_1d(&a, &b, p).unwrap();
        prop_assert!(w_1d(&a, &a, p).unwrap() < 1e-12);
        prop_assert!((ab - w_1d(&b, &a, p).unwrap()).abs() < 1e-12);
        prop_assert!(ab <= w_1d(&a, &c, p).unwrap() + w_1d(&c, &b, p).unwrap() + 1e-9);
    }

    #[test]
    fn wp_is_nondecreasing_in_order(a in int_measure(), b in int_measure(), p in 1.0f64..3.0, dp in 0.0f64..2.0) {
        prop_assert!(w_1d(&a, &b, p).unwrap() <= w_1d(&a, &b, p + dp).unwrap() + 1e-9);
    }

    #[test]
    fn lp_matches_quantile_formula(a in int_measure(), b in int_measure(), p in prop::sample::select(vec![1.0, 1.5, 2.0])) {
        let lp = w_exact_lp(&a, &b, p).unwrap();
        let q = w_1d(&a, &b, p).unwrap();
        prop_assert!((lp.distance() - q).abs() <= 1e-9 * (1.0 + q), "lp {} vs quantile {}", lp.distance(), q);
        prop_assert!(lp.marginal_error() < 1e-9);
    }

    #[test]
    fn lp_is_symmetric_in_two_dimensions(a in cloud(2), b in cloud(2)) {
        let ab = w_exact_lp(&a, &b, 2.0).unwrap().distance();
        let ba = w_exact_lp(&b, &a, 2.0).unwrap().distance();
        prop_assert!((ab - ba).abs() < 1e-9);
    }

    #[test]
    fn kantorovich_rubinstein_lower_bound_holds(
        a in int_measure(),
        b in int_measure(),
        slopes in prop::collection::vec(-1.0f64..1.0, 1..6),
        start in -8.0f64..0.0,
    ) {
        let knots: Vec<f64> = (0..=slopes.len()).map(|i| start + 2.0 * i as f64).collect();
        let mut values = vec![0.0];
        for s in &slopes {
            values.push(values.last().unwrap() + 2.0 * s);
        }
        let f = LipschitzFn::piecewise(knots, values).unwrap();
        let rep = kr_duality_check(&a, &b, &[f, LipschitzFn::affine(1.0, 0.0), LipschitzFn::affine(-1.0, 0.0)]).unwrap();
        prop_assert!(rep.gap >= -1e-12, "test functions beat W1 by {}", -rep.gap);
    }

    #[test]
    fn wp_is_controlled_by_weighted_total_variation(
        a in int_measure(),
        b in int_measure(),
        x0 in -6.0f64..6.0,
        p in prop::sample::select(vec![1.0, 2.0, 3.0]),
    ) {
        let lhs = w_1d(&a, &b, p).unwrap().powf(p);
        let rhs = 2f64.powf(p - 1.0) * weighted_tv(&a, &b, x0, p);
        prop_assert!(lhs <= rhs + 1e-9, "W_p^p = {lhs} > {rhs}");
    }

    #[test]
    fn big_phi_round_trips(kappa in 0.05f64..0.95, c in 0.1f64..5.0, t in 1.0f64..1e6) {
        let phi = PhiSpec::power(kappa, c).unwrap();
        let u = phi.big_phi(t).unwrap();
        let back = phi.big_phi_inv(u).unwrap();
        prop_assert!((back - t).abs() <= 1e-9 * t, "Φ⁻¹(Φ({t})) = {back}");
    }

    #[test]
    fn rate_is_nondecreasing(kappa in 0.05f64..0.95, c in 0.1f64..5.0, t in 0.0f64..1e4, dt in 0.0f64..1e3) {
        let phi = PhiSpec::power(kappa, c).unwrap();
        prop_assert!(phi.rate(t).unwrap() <= phi.rate(t + dt).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn tabulated_linear_phi_agrees_with_closed_form(slope in 0.2f64..3.0, t in 1.0f64..50.0) {
        let grid: Vec<f64> = (0..=20).map(|i| 1.0 + 5.0 * i as f64).collect();
        let values = grid.iter().map(|g| slope * g).collect();
        let tab = PhiSpec::tabulated(grid, values).unwrap();
        let lin = PhiSpec::linear(slope).unwrap();
        prop_assert!((tab.big_phi(t).unwrap() - lin.big_phi(t).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn drift_subordinator_is_a_time_change(d in 0.1f64..3.0, t in 0.0f64..5.0, p in 1.0f64..3.0) {
        let r = RateFunction::Polynomial { exponent: 1.5, scale: 2.0 };
        let spec = SubordinatorSpec::drift_only(d).unwrap();
        let est = subordinate_rate(&r, p, &spec, t, 16, 0).unwrap();
        prop_assert!((est.value - r.eval(d * t)).abs() < 1e-12);
        prop_assert!(est.std_error <= 1e-12 * est.value.powf(p));
    }

    #[test]
    fn stable_laplace_exponent_is_concave(alpha in 0.1f64..0.95, u in 0.01f64..50.0, h in 0.01f64..5.0) {
        let spec = SubordinatorSpec::stable(alpha).unwrap();
        let f = |x: f64| spec.laplace_exponent(x);
        prop_assert!(f(u + h) >= f(u));
        prop_assert!(f(u) + f(u + 2.0 * h) <= 2.0 * f(u + h) + 1e-9 * f(u + 2.0 * h));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn entropic_plan_costs_at_least_the_optimum(a in cloud(2), b in cloud(2), eps in 0.5f64..2.0) {
        let lp = w_exact_lp(&a, &b, 2.0).unwrap().distance().powi(2);
        let opts = SinkhornOptions { tol: 1e-6, max_iter: 100_000, ..SinkhornOptions::new(eps) };
        let rep = sinkhorn_with(&a, &b, 2.0, &opts).unwrap();
        // a plan off the marginals by δ in L¹ can undercut the optimum by at most δ·max C
        let slack = rep.marginal_violation * 36.0 * 2.0 + 1e-9;
        prop_assert!(rep.cost >= lp - slack, "sinkhorn {} < lp {}", rep.cost, lp);
    }

    #[test]
    fn backward_invariant_tail_matches_masses(alpha in 3.0f64..5.0, extra in 1u64..6, m in 0u64..200) {
        let chain = BackwardRecurrence::new(alpha, (1.0 + alpha).ceil() as u64 + extra).unwrap();
        let truncation = 20_000;
        let pi = invariant_exact(&chain, truncation).unwrap();
        let head: f64 = pi[..m as usize].iter().sum();
        let tail = invariant_tail(&chain, m);
        prop_assert!((head + tail - 1.0).abs() < 1e-9, "head {head} + tail {tail}");
    }
}

mod common;

use lyapsens_sim::estimators::Verdict;
use lyapsens_sim::gg1::{GG1Model, LindleyRecursion};
use lyapsens_sim::{check_recursion_lyapunov, Payoff, RngStream, ThetaIndependent};

#[test]
fn huge_constant_certificate_passes() {
    let inst = common::rh_instance(21);
    let f = inst.f.clone();
    let reward = move |x: &usize| f[*x];
    let interior = |x: &usize| *x < 4;
    let payoff = Payoff::undiscounted(&reward, &interior);
    // undiscounted continuation mass is below one, so a large constant v dominates
    let v0 = |_: &usize| 1e4;
    let v1 = |_: &usize| 1e6;
    let grid = inst.rec.family().grid(5);
    let rep = check_recursion_lyapunov(
        &inst.rec,
        &v0,
        &v1,
        &payoff,
        &grid,
        20_000,
        &[0, 1, 2, 3],
        &RngStream::new(1, 0),
    )
    .unwrap();
    assert_eq!(rep.verdict, Verdict::Pass, "{rep:?}");
}

#[test]
fn theta_independent_first_order_check_has_no_envelope_terms() {
    let inst = common::rh_instance(22);
    let rec = ThetaIndependent(inst.rec);
    let f = inst.f.clone();
    let reward = move |x: &usize| f[*x];
    let interior = |x: &usize| *x < 4;
    let payoff = Payoff::undiscounted(&reward, &interior);
    let v0 = |_: &usize| 1e4;
    let v1 = |x: &usize| 10.0 + *x as f64;
    let rep = check_recursion_lyapunov(&rec, &v0, &v1, &payoff, &[0.2], 5_000, &[0, 2], &RngStream::new(2, 0)).unwrap();
    // with zero envelope the first-order condition is the zeroth-order one for v1 with f = 0
    for probe in &rep.probes {
        let x = probe.state;
        assert!(probe.first.slack < v1(&x));
        assert!(probe.first.slack > v1(&x) - 14.0);
    }
}

#[test]
fn queue_certificate_holds_for_large_waits() {
    // f(x) = x on C = (0, inf), v0 = a1 x^2 with a1 above 1 / (2 |E V - E chi|) = 2/3
    let m = GG1Model::mg1_example();
    let rec = LindleyRecursion::new(m.clone());
    let reward = |w: &f64| *w;
    let interior = |w: &f64| *w > 0.0;
    let payoff = Payoff::undiscounted(&reward, &interior);
    let a1 = 2.0;
    let v0 = move |w: &f64| a1 * w * w;
    let v1 = |w: &f64| 50.0 * w.powi(3);
    let grid: Vec<f64> = lyapsens_core::param_family::theta_grid(m.theta0, m.eps, 5);
    let probes = [20.0, 40.0, 80.0];
    let rep =
        check_recursion_lyapunov(&rec, &v0, &v1, &payoff, &grid, 200_000, &probes, &RngStream::new(3, 0)).unwrap();
    for probe in &rep.probes {
        for s in &probe.zeroth {
            assert_eq!(s.verdict, Verdict::Pass, "x = {}: {s:?}", probe.state);
            // slack ~ a1 (2 x |E V_theta - E chi| - E Y^2) - x
            let mu = m.mean_service(s.theta.unwrap()) - 1.0;
            let predicted = 2.0 * a1 * probe.state * mu.abs() - probe.state;
            assert!(
                (s.slack - predicted).abs() < 0.2 * predicted,
                "{} vs {predicted}",
                s.slack
            );
        }
    }
    let near_zero =
        check_recursion_lyapunov(&rec, &v0, &v1, &payoff, &grid, 50_000, &[0.1], &RngStream::new(4, 0)).unwrap();
    assert_ne!(near_zero.probes[0].zeroth[0].verdict, Verdict::Pass);
}

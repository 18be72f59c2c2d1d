use lyapsens_core::kernel_algebra::pair;
use lyapsens_core::random_horizon::{comparison_bound_check, DEFAULT_CERT_GRID};
use lyapsens_core::{FiniteFunction, FiniteKernel, FiniteMeasure, StateSubset, TargetProblem, WeightFunction};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

mod common;

fn ones(n: usize) -> WeightFunction {
    WeightFunction::constant(n)
}

fn central(p: &TargetProblem, h: f64) -> DVector<f64> {
    let t0 = p.theta0();
    let c = p.interior().len();
    let up = p.compute_u_star(t0 + h, &ones(c)).unwrap().into_vector();
    let dn = p.compute_u_star(t0 - h, &ones(c)).unwrap().into_vector();
    (up - dn) / (2.0 * h)
}

fn check_fd(p: &TargetProblem) -> Result<(), TestCaseError> {
    let c = p.interior().len();
    let d = p.derivative_u_star(&ones(c)).unwrap().into_vector();
    let e1 = (central(p, 1e-4) - &d).abs();
    let e2 = (central(p, 5e-5) - &d).abs();
    for x in 0..c {
        let tol = f64::max(1e-6, 1e-4 * d[x].abs());
        prop_assert!(e1[x] <= tol, "state {x}: derivative {} error {}", d[x], e1[x]);
        // Richardson: the O(h^2) error should drop about fourfold when h halves,
        // once it clears the rounding floor
        if e1[x] > 1e-8 {
            let ratio = e1[x] / e2[x];
            prop_assert!((3.0..5.0).contains(&ratio), "state {x}: ratio {ratio}");
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fixed_point_residual(seed in any::<u64>()) {
        let p = common::random_problem(seed, 6, 4);
        for theta in [0.15, 0.2, 0.27] {
            let u = p.compute_u_star(theta, &ones(6)).unwrap().into_vector();
            let ft = p.build_tilde_f(theta).unwrap().into_vector();
            let k = p.interior_kernel(theta).unwrap();
            prop_assert!((&u - &ft - k * &u).amax() <= 1e-10);
        }
    }

    #[test]
    fn derivative_matches_finite_difference(seed in any::<u64>()) {
        check_fd(&common::random_problem(seed, 6, 4))?;
        check_fd(&common::random_tilt_problem(seed, 6, 4))?;
    }

    #[test]
    fn order_one_recursion_is_bit_exact(seed in any::<u64>()) {
        let p = common::random_problem(seed, 6, 3);
        let d = p.derivative_u_star(&ones(3)).unwrap();
        let hs = p.higher_derivatives(&ones(3), 3).unwrap();
        prop_assert_eq!(&hs[1], &d);
        prop_assert_eq!(hs.len(), 4);
    }

    #[test]
    fn second_derivative_matches_fd_of_first(seed in any::<u64>()) {
        let p = common::random_problem(seed, 5, 3);
        let h = 1e-4;
        let up = TargetProblem::new(p.family().recentered(0.2 + h).unwrap(), p.interior().clone(), p.reward().clone(), p.discount().clone()).unwrap();
        let dn = TargetProblem::new(p.family().recentered(0.2 - h).unwrap(), p.interior().clone(), p.reward().clone(), p.discount().clone()).unwrap();
        let fd = (up.derivative_u_star(&ones(3)).unwrap().into_vector() - dn.derivative_u_star(&ones(3)).unwrap().into_vector()) / (2.0 * h);
        let d2 = p.higher_derivatives(&ones(3), 2).unwrap()[2].values().clone();
        for x in 0..3 {
            prop_assert!((fd[x] - d2[x]).abs() <= f64::max(1e-6, 1e-4 * d2[x].abs()));
        }
    }

    #[test]
    fn signed_measure_pairing(seed in any::<u64>()) {
        let p = common::random_problem(seed, 5, 3);
        let mut r = common::rng(seed.wrapping_add(1));
        for _ in 0..3 {
            let f = FiniteFunction::new((0..5).map(|_| r.random_range(-3.0..3.0)).collect()).unwrap();
            let q = TargetProblem::new(p.family().clone(), p.interior().clone(), f.clone(), p.discount().clone()).unwrap();
            let d = q.derivative_u_star(&ones(3)).unwrap();
            for (i, &x) in p.interior().indices().iter().enumerate() {
                let nu = p.signed_measure_representation(&ones(5), x).unwrap();
                let paired = pair(&nu, &f).unwrap();
                prop_assert!((paired - d.as_slice()[i]).abs() <= 1e-10 * d.as_slice()[i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn measure_derivative_duality_and_fd(seed in any::<u64>()) {
        let p = common::random_problem(seed, 6, 4);
        let mut r = common::rng(seed.wrapping_mul(3));
        let mu = FiniteMeasure::new((0..4).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
        let mup = FiniteMeasure::new((0..4).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let md = p.measure_derivative(&mu, &mup, &ones(4)).unwrap();
        let t0 = p.theta0();
        let ft = p.build_tilde_f(t0).unwrap();
        let ftp = p.tilde_f_derivative(1, t0).unwrap();
        let us = p.higher_derivatives(&ones(4), 1).unwrap();
        let lhs = pair(&md.nu_prime, &ft).unwrap() + pair(&md.nu, &ftp).unwrap();
        let rhs = pair(&mu, &us[1]).unwrap() + pair(&mup, &us[0]).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
        let h = 1e-4;
        let nu_at = |t: f64| {
            let m = FiniteMeasure::from_vector(mu.values() + mup.values() * (t - t0));
            p.occupation_measure(t, &m, &ones(4)).unwrap().values().clone()
        };
        let fd = (nu_at(t0 + h) - nu_at(t0 - h)) / (2.0 * h);
        for y in 0..4 {
            let d = md.nu_prime.values()[y];
            prop_assert!((fd[y] - d).abs() <= f64::max(1e-6, 1e-4 * d.abs()));
        }
    }

    #[test]
    fn comparison_bound_on_constructed_certificates(seed in any::<u64>(), n in 1usize..9) {
        let mut r = common::rng(seed);
        let total = r.random_range(0.1..0.95);
        let q = common::sparse_stochastic(&mut r, n, total);
        let f = DVector::from_fn(n, |_, _| r.random_range(0.0..2.0));
        let slack = DVector::from_fn(n, |_, _| r.random_range(0.0..1.0));
        let g = (DMatrix::identity(n, n) - &q).try_inverse().unwrap();
        let v = &g * (&f + slack);
        let rep = comparison_bound_check(
            &FiniteKernel::nonnegative(q).unwrap(),
            &FiniteFunction::from_vector(f),
            &FiniteFunction::from_vector(v),
        ).unwrap();
        prop_assert!(rep.applicable);
        prop_assert!(rep.converged);
        prop_assert!(rep.holds, "min slack {}", rep.min_slack);
    }

    #[test]
    fn certified_bounds_hold(seed in any::<u64>()) {
        let p = common::random_problem(seed, 6, 4);
        let prop = p.propose_certificate(2, 0.05, DEFAULT_CERT_GRID, 33, 1.0 + 1e-9).unwrap();
        let rep = p.verify_lyapunov_rh(&prop.certificate, DEFAULT_CERT_GRID, 33, Some(&ones(4))).unwrap();
        prop_assert!(rep.passed);
        for b in rep.derivative_bounds.unwrap() {
            prop_assert!(b.holds, "order {} slack {}", b.order, b.min_slack);
        }
    }
}

#[test]
fn total_mass_of_signed_measure_is_nonzero() {
    let p = common::random_problem(7, 5, 3);
    let nu = p.signed_measure_representation(&ones(5), 0).unwrap();
    assert!(nu.total_mass().abs() > 1e-6, "{}", nu.total_mass());
}

#[test]
fn refusal_reports_norms() {
    let fam = lyapsens_core::builtin::constant(FiniteKernel::identity(3), 0.0, 1.0).unwrap();
    let p = TargetProblem::undiscounted(fam, StateSubset::full(3), FiniteFunction::constant(3, 1.0)).unwrap();
    let msg = p.derivative_u_star(&ones(3)).unwrap_err().to_string();
    assert!(msg.contains("[contraction]") && msg.contains("inconclusive"), "{msg}");
}

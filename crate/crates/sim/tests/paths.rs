use lyapsens_sim::gg1::{empty_queue, lindley_path, GG1Model, Interarrival, LindleyRecursion};
use lyapsens_sim::recursion::Capped;
use lyapsens_sim::{simulate_path, RngStream, SimError, SimRng, StochasticRecursion, Stop};
use rand::Rng;

struct Frozen;

impl StochasticRecursion for Frozen {
    type State = i64;
    type Noise = f64;
    fn theta0(&self) -> f64 {
        0.0
    }
    fn sample_noise(&self, rng: &mut SimRng) -> f64 {
        rng.random()
    }
    fn update(&self, x: &i64, _z: &f64) -> i64 {
        *x
    }
    fn density_ratio(&self, _t: f64, _z: &f64) -> f64 {
        1.0
    }
    fn score(&self, _t: f64, _z: &f64) -> f64 {
        0.0
    }
}

#[test]
fn horizon_zero_is_the_start_state() {
    let p = simulate_path(&Frozen, 3, Stop::Horizon(0), &RngStream::new(1, 0)).unwrap();
    assert_eq!(p.states, vec![3]);
    assert!(p.noises.is_empty());
}

#[test]
fn identity_update_gives_constant_path() {
    let p = simulate_path(&Frozen, 7, Stop::Horizon(25), &RngStream::new(1, 0)).unwrap();
    assert_eq!(p.states.len(), 26);
    assert!(p.states.iter().all(|x| *x == 7));
    assert_eq!(p.noises.len(), 25);
}

#[test]
fn cap_yields_truncation_with_partial_path() {
    let never = |_: &i64| false;
    let rec = Capped {
        inner: Frozen,
        cap: 100,
    };
    let err = simulate_path(&rec, 0, Stop::Hitting(&never), &RngStream::new(1, 0)).unwrap_err();
    assert_eq!(err.cap, 100);
    assert_eq!(err.partial.states.len(), 101);
    assert_eq!(SimError::from(err), SimError::Truncation { cap: 100 });
}

#[test]
fn paths_are_reproducible_per_stream() {
    let m = GG1Model::mg1_example();
    let a = lindley_path(&m, 2.0, Stop::Horizon(1000), &RngStream::new(9, 4)).unwrap();
    let b = lindley_path(&m, 2.0, Stop::Horizon(1000), &RngStream::new(9, 4)).unwrap();
    let c = lindley_path(&m, 2.0, Stop::Horizon(1000), &RngStream::new(9, 5)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn lindley_deterministic_arithmetic() {
    // fixed service and interarrival times
    struct Det {
        v: f64,
        chi: f64,
    }
    impl StochasticRecursion for Det {
        type State = f64;
        type Noise = ();
        fn theta0(&self) -> f64 {
            1.0
        }
        fn sample_noise(&self, _rng: &mut SimRng) {}
        fn update(&self, w: &f64, _z: &()) -> f64 {
            (w + self.v - self.chi).max(0.0)
        }
        fn density_ratio(&self, _t: f64, _z: &()) -> f64 {
            1.0
        }
        fn score(&self, _t: f64, _z: &()) -> f64 {
            0.0
        }
    }
    let p = simulate_path(&Det { v: 1.0, chi: 2.0 }, 5.0, Stop::Horizon(8), &RngStream::new(0, 0)).unwrap();
    assert_eq!(p.states, vec![5.0, 4.0, 3.0, 2.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    let p = simulate_path(&Det { v: 0.0, chi: 0.5 }, 0.3, Stop::Horizon(4), &RngStream::new(0, 0)).unwrap();
    assert!(p.states[1..].iter().all(|w| *w == 0.0));
}

#[test]
fn stable_queue_empties_on_every_path() {
    let m = GG1Model::new(5.0, 1.0, Interarrival::Exponential { rate: 1.0 }, 1.0, 0.1).unwrap();
    let rec = Capped {
        inner: LindleyRecursion::new(m),
        cap: 1_000_000,
    };
    let base = RngStream::new(3, 0);
    let mut hits = 0;
    for i in 0..10_000 {
        if simulate_path(&rec, 10.0, Stop::Hitting(empty_queue()), &base.substream(i)).is_ok() {
            hits += 1;
        }
    }
    assert_eq!(hits, 10_000);
}

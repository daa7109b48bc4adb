mod common;

use common::oracle;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use superclt::analyze::SampleStats;
use superclt::model::canonical::{deterministic, s1, s3};
use superclt::moments::second_moment_y;
use superclt::simulate::{
    decomposition_ensemble, exact_single_site_step, simulate_ensemble, with_threads, NoiseSource,
    Schedule, SimConfig, SimMode, Stepper,
};
use superclt::SpectralSystem;

fn config(dt: f64, snaps: &[f64], replicates: usize, seed: u64) -> SimConfig {
    SimConfig {
        dt,
        t_snapshots: snaps.to_vec(),
        replicates,
        master_seed: seed,
        mode: SimMode::Full,
    }
}

struct Silent;

impl NoiseSource for Silent {
    fn normal(&mut self) -> f64 {
        0.0
    }

    fn poisson(&mut self, mean: f64) -> f64 {
        mean
    }

    fn gamma(&mut self, shape: f64, scale: f64) -> f64 {
        shape * scale
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let s = s3();
    let sys = SpectralSystem::build(&s).unwrap();
    let cfg = config(0.02, &[0.5, 1.0], 400, 11);
    let one = with_threads(1, || simulate_ensemble(&s, &sys, &cfg)).unwrap().unwrap();
    let three = with_threads(3, || simulate_ensemble(&s, &sys, &cfg)).unwrap().unwrap();
    assert_eq!(one, three);
    let other = simulate_ensemble(&s, &sys, &config(0.02, &[0.5, 1.0], 400, 12)).unwrap();
    assert_ne!(one, other);
}

#[test]
fn noiseless_paths_follow_the_mean_flow() {
    let s = deterministic();
    let sys = SpectralSystem::build(&s).unwrap();
    let ens = simulate_ensemble(&s, &sys, &config(0.05, &[1.0, 3.0], 3, 1)).unwrap();
    for (i, t) in [1.0, 3.0].into_iter().enumerate() {
        let want = oracle::mat_vec(&transpose(&oracle::expm(&oracle::generator(&s), t)), &s.mu0);
        for r in 0..3 {
            let got = ens.state(r, i);
            for x in 0..2 {
                assert!((got[x] - want[x]).abs() < 1e-11 * want[x], "{got:?} vs {want:?}");
            }
        }
    }
}

fn transpose(a: &oracle::Mat) -> oracle::Mat {
    (0..a.len()).map(|i| (0..a.len()).map(|j| a[j][i]).collect()).collect()
}

#[test]
fn compensated_noise_leaves_the_drift_second_order() {
    // With every noise term at its mean the scheme is a midpoint rule for
    // the immigration drift.
    let s = s3();
    let sys = SpectralSystem::build(&s).unwrap();
    let stepper = Stepper::new(&s, &sys, SimMode::Full);
    let one = vec![1.0; 3];
    let want = second_moment_y(&s, &sys, &one, 1.0, &s.mu0).unwrap().mean;
    let mut prev = f64::INFINITY;
    for dt in [0.1, 0.05, 0.025] {
        let z = stepper.run(&Schedule::new(dt, &[1.0]), &mut Silent).unwrap();
        let got: f64 = sys.synthesize(&z).iter().zip(sys.weights()).map(|(v, m)| v * m).sum();
        let err = (got - want).abs();
        assert!(err < 0.3 * prev, "dt {dt}: {err}");
        prev = err;
    }
    assert!(prev < 1e-4);
}

#[test]
fn three_site_moments_within_standard_errors() {
    let s = s3();
    let sys = SpectralSystem::build(&s).unwrap();
    let ens = simulate_ensemble(&s, &sys, &config(0.01, &[1.0, 2.0], 20_000, 5)).unwrap();
    assert_eq!(ens.failures(), 0);
    for f in [vec![1.0; 3], sys.phi1().to_vec()] {
        for (i, t) in [1.0, 2.0].into_iter().enumerate() {
            let st = SampleStats::of(&ens.pairing(&f, i));
            let v = second_moment_y(&s, &sys, &f, t, &s.mu0).unwrap();
            assert!((st.mean - v.mean).abs() < 4.0 * st.se_mean, "mean {} vs {}", st.mean, v.mean);
            assert!(
                (st.variance - v.variance).abs() < 4.0 * st.se_variance,
                "variance {} vs {}",
                st.variance,
                v.variance
            );
        }
    }
}

#[test]
fn decomposition_adds_up() {
    let s = s3();
    let sys = SpectralSystem::build(&s).unwrap();
    let cfg = config(0.01, &[1.5], 20_000, 9);
    let (native, imm) = decomposition_ensemble(&s, &sys, &cfg).unwrap();
    let sum = native.sum(&imm).unwrap();
    let one = vec![1.0; 3];
    let st = SampleStats::of(&sum.pairing(&one, 0));
    let v = second_moment_y(&s, &sys, &one, 1.5, &s.mu0).unwrap();
    assert!((st.mean - v.mean).abs() < 4.0 * st.se_mean);
    assert!((st.variance - v.variance).abs() < 4.0 * st.se_variance);
    let n = SampleStats::of(&native.pairing(&one, 0));
    let native_mean = second_moment_y(&s.without_immigration(), &sys, &one, 1.5, &s.mu0).unwrap().mean;
    assert!((n.mean - native_mean).abs() < 4.0 * n.se_mean);
}

#[test]
fn exact_single_site_sampler_has_the_right_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws: Vec<f64> = (0..100_000)
        .map(|_| exact_single_site_step(1.0, 1.0, 1.0, 0.5, 0.5, &mut rng))
        .collect();
    let st = SampleStats::of(&draws);
    let e = 0.5f64.exp();
    assert!((st.mean - e).abs() < 4.0 * st.se_mean);
    assert!((st.variance - 2.0 * e * (e - 1.0)).abs() < 4.0 * st.se_variance);
    // Extinction by time 1 has probability exp(-y e^{alpha t} / c).
    let c = 0.5 * (e - 1.0) / 0.5;
    let p0 = (-e / c).exp();
    let zeros = draws.iter().filter(|v| **v == 0.0).count() as f64 / draws.len() as f64;
    assert!((zeros - p0).abs() < 4.0 * (p0 * (1.0 - p0) / draws.len() as f64).sqrt());
    for theta in [0.25, 1.0, 4.0] {
        let lap: Vec<f64> = draws.iter().map(|v| (-theta * v).exp()).collect();
        let st = SampleStats::of(&lap);
        let want = (-theta * e / (1.0 + theta * c)).exp();
        assert!((st.mean - want).abs() < 4.0 * st.se_mean);
    }
}

#[test]
fn invalid_configurations_are_refused() {
    let s = s1();
    let sys = SpectralSystem::build(&s).unwrap();
    for cfg in [
        config(0.0, &[1.0], 10, 1),
        config(0.1, &[], 10, 1),
        config(0.1, &[1.0], 0, 1),
        config(0.1, &[1.0, 0.5], 10, 1),
        config(0.5, &[1.0, 1.2], 10, 1),
    ] {
        assert!(simulate_ensemble(&s, &sys, &cfg).is_err(), "{cfg:?}");
    }
}

mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use std::sync::Arc;
use zomd::config::RunConfig;
use zomd::engine::{self, multi_seed, RunSetup, StepSchedules, DELTAS};
use zomd::graph::{mixing_constants, GraphSchedule, ScheduleMode, WeightMatrix};
use zomd::kernels::{check_moments, example_kernel, legendre_kernel};
use zomd::mirror::{md_step, optimality_residual, step_length, MdStepSpec};
use zomd::problems::{sensor_network_problem, OnlineProblem, TrackingLeastSquares};
use zomd::report::{self, Table};
use zomd::rng::{stream, HARNESS_AGENT};
use zomd::{ConstraintSet, Kernel, MirrorMap, NoiseModel};

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

fn schedule() -> impl Strategy<Value = GraphSchedule> {
    (3usize..6).prop_flat_map(|n| {
        prop::collection::vec(permutation(n), 1..5).prop_map(|perms| {
            let ms: Vec<WeightMatrix> =
                perms.iter().map(|p| WeightMatrix::lazy_permutation(p).unwrap()).collect();
            let u = ms.len();
            GraphSchedule::new(ms, ScheduleMode::Cyclic, u).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn connectivity_is_rotation_invariant(g in schedule(), k in 0usize..8) {
        prop_assert_eq!(
            g.check_uniform_connectivity().connected,
            g.rotated(k).check_uniform_connectivity().connected
        );
    }

    #[test]
    fn mixing_preserves_average(
        g in schedule(),
        t in 1usize..20,
        seed in any::<u64>(),
    ) {
        let mut rng = stream(seed, HARNESS_AGENT, 0);
        let states: Vec<Vec<f64>> =
            (0..g.n()).map(|_| (0..2).map(|_| rng.random_range(-10.0..10.0)).collect()).collect();
        let mixed = g.mix(t, &states).unwrap();
        for k in 0..2 {
            let before: f64 = states.iter().map(|x| x[k]).sum::<f64>() / g.n() as f64;
            let after: f64 = mixed.iter().map(|x| x[k]).sum::<f64>() / g.n() as f64;
            prop_assert!((before - after).abs() <= 1e-9);
        }
    }

    #[test]
    fn product_deviation_within_envelope(g in schedule(), s in 1usize..6) {
        prop_assume!(g.check_uniform_connectivity().connected);
        let (c, lambda) = mixing_reference(g.n(), g.window(), 0.5);
        let mix = mixing_constants(g.n(), g.window(), 0.5).unwrap();
        prop_assert!((mix.c - c).abs() <= 1e-9 * c);
        for k in 0..40 {
            let dev = g.product_deviation(s + k, s).unwrap();
            prop_assert!(dev <= c * lambda.powi(k as i32), "k = {k}: {dev}");
        }
    }

    #[test]
    fn euclidean_step_properties(
        seed in any::<u64>(),
        ball in any::<bool>(),
        m in 1usize..4,
        beta in 0.01..1.0f64,
    ) {
        let mut rng = stream(seed, HARNESS_AGENT, 1);
        let set = if ball {
            ConstraintSet::ball((0..m).map(|_| rng.random_range(-1.0..1.0)).collect(), rng.random_range(0.5..3.0))
        } else {
            ConstraintSet::cube(m, -rng.random_range(0.5..3.0), rng.random_range(0.5..3.0))
        };
        let y = set.project(&(0..m).map(|_| rng.random_range(-4.0..4.0)).collect::<Vec<_>>());
        let g: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
        let spec = MdStepSpec { y: &y, g: &g, beta, set: &set };
        let map = MirrorMap::Euclidean;
        let x_plus = md_step(map, &spec).unwrap();
        prop_assert!(set.contains(&x_plus));
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(step_length(&y, &x_plus) <= beta * gnorm / map.mu() + 1e-12);
        for _ in 0..10 {
            let x = set.project(&(0..m).map(|_| rng.random_range(-4.0..4.0)).collect::<Vec<_>>());
            prop_assert!(optimality_residual(map, &spec, &x_plus, &x).unwrap() >= -1e-8);
            let d2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
            prop_assert!(map.bregman(&x, &y).unwrap() >= 0.5 * map.mu() * d2 - 1e-12);
        }
    }

    #[test]
    fn entropy_step_properties(seed in any::<u64>(), m in 2usize..5, beta in 0.01..1.0f64) {
        let mut rng = stream(seed, HARNESS_AGENT, 2);
        let set = ConstraintSet::simplex(m);
        let simplex_point = |rng: &mut zomd::rng::Stream| {
            let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v / s).collect::<Vec<f64>>()
        };
        let y = simplex_point(&mut rng);
        let g: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
        let spec = MdStepSpec { y: &y, g: &g, beta, set: &set };
        let map = MirrorMap::NegativeEntropy;
        let x_plus = md_step(map, &spec).unwrap();
        prop_assert!(set.contains(&x_plus));
        for _ in 0..10 {
            let x = simplex_point(&mut rng);
            prop_assert!(optimality_residual(map, &spec, &x_plus, &x).unwrap() >= -1e-8);
            let l1: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum();
            prop_assert!(map.bregman(&x, &y).unwrap() >= 0.5 * map.mu() * l1 * l1 - 1e-12);
        }
    }

    #[test]
    fn sensor_gradient_matches_finite_differences(
        agent in 0usize..6,
        t in 1usize..200,
        x in -5.0..5.0f64,
    ) {
        let p = sensor_problem();
        let g = p.gradient(agent, t, &[x]).unwrap()[0];
        let h = 1e-5;
        let fd = (p.objective(agent, t, &[x + h]) - p.objective(agent, t, &[x - h])) / (2.0 * h);
        prop_assert!((g - fd).abs() <= 1e-6 * g.abs().max(1.0), "{g} vs {fd}");
        prop_assert_eq!(g, SENSOR_GAINS[agent] * (SENSOR_GAINS[agent] * x - p.measurement(agent, t)[0]));
    }

    #[test]
    fn runs_stay_feasible_with_exact_oracle_budget(seed in 0u64..1000, a in 0.05..0.45f64) {
        let b = -2.0 * a - 0.1 * (1.0 - 2.0 * a);
        let mut config = RunConfig::reproduce_paper(60);
        config.schedules = StepSchedules::power_family(a, b, -0.5);
        config.run.seed = seed;
        let built = config.build().unwrap();
        let metrics = engine::run(&built.setup).unwrap();
        let set = built.setup.problem.constraint();
        for t in 1..=61 {
            for x in &metrics.states[t - 1] {
                prop_assert!(set.contains(x));
            }
        }
        prop_assert_eq!(metrics.oracle_calls, 60 * 6 * 2);
    }
}

fn sensor_problem() -> &'static TrackingLeastSquares {
    use std::sync::OnceLock;
    static P: OnceLock<TrackingLeastSquares> = OnceLock::new();
    P.get_or_init(|| sensor_network_problem(5, 200).unwrap())
}

#[test]
fn kernel_moments_match_exact_polynomial_integrals() {
    let r = check_moments(&example_kernel(), 4.0).unwrap();
    for &(a, v) in &r.moments {
        assert!((v - poly_moment(&EXAMPLE_KERNEL, a)).abs() < 1e-10, "moment {a}");
    }
    assert!((r.kappa - poly_square_integral(&EXAMPLE_KERNEL)).abs() < 1e-9);
    assert!((r.kappa_eps - example_kernel_kappa4()).abs() < 1e-9);
    assert!((poly_moment(&EXAMPLE_KERNEL, 5) + 10.0 / 21.0).abs() < 1e-12);
    let k = example_kernel();
    for i in 0..=40 {
        let x = -1.0 + i as f64 / 20.0;
        let direct: f64 = EXAMPLE_KERNEL.iter().enumerate().map(|(j, c)| c * x.powi(j as i32)).sum();
        assert!((k.eval(x) - direct).abs() < 1e-12);
    }
}

#[test]
fn legendre_kernels_certify_and_even_orders_are_rejected() {
    for ell in [3, 5, 7] {
        let k = legendre_kernel(ell).unwrap();
        let r = check_moments(&k, 4.0).unwrap();
        assert!(r.passed(), "{r}");
        let coeffs = k.coefficients().unwrap();
        for a in 0..=ell {
            let want = if a == 1 { 2.0 } else { 0.0 };
            assert!((poly_moment(coeffs, a) - want).abs() < 1e-10, "ell {ell}, a {a}");
        }
    }
    assert!(legendre_kernel(4).is_err());
    assert!(Kernel::parse("legendre-6").is_err());
}

#[test]
fn fisher_noise_variance() {
    let noise = NoiseModel::FisherF { d1: 3.0, d2: 5.0 };
    let mut rng = stream(17, HARNESS_AGENT, 0);
    let n = 1_000_000;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..n {
        let x = noise.sample(&mut rng);
        let d = x - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (x - mean);
    }
    let var = m2 / (n - 1) as f64;
    let exact = fisher_variance(3.0, 5.0);
    assert!((exact - 100.0 / 9.0).abs() < 1e-12);
    assert!((var - exact).abs() <= 0.1 * exact, "sample variance {var}");
    assert!((mean - 5.0 / 3.0).abs() < 0.05, "sample mean {mean}");
}

#[test]
fn sensor_minimizer_matches_closed_form_and_target() {
    let p = sensor_problem();
    let z = target_path(200);
    for t in 1..=200 {
        assert_eq!(p.target(t)[0], z[t - 1]);
        let ys: Vec<f64> = (0..6).map(|i| p.measurement(i, t)[0]).collect();
        let x = p.minimizer(t).unwrap()[0];
        assert!((x - sensor_minimizer(&ys)).abs() < 1e-12);
    }
}

#[test]
fn quantile_levels_are_ordered() {
    let config = RunConfig::reproduce_paper(256);
    let seeds: Vec<u64> = (0..12).collect();
    let r = multi_seed(|s| Ok(config.build_with_seed(s).unwrap().setup), &seeds).unwrap();
    let q90 = r.curve(DELTAS[0]);
    let q95 = r.curve(DELTAS[1]);
    let q99 = r.curve(DELTAS[2]);
    for k in 0..r.checkpoints.len() {
        assert!(q99[k] >= q95[k] && q95[k] >= q90[k]);
        let max = r.worst.iter().map(|w| w[k]).fold(f64::NEG_INFINITY, f64::max);
        assert!(q99[k] <= max);
    }
}

#[test]
fn noiseless_quadratic_regret_is_sublinear() {
    // fixed target, no measurement noise: every minimizer is the same point
    let targets = vec![vec![0.8]; 2000];
    let p = TrackingLeastSquares::new(
        SENSOR_GAINS.to_vec(),
        targets,
        &NoiseModel::None,
        ConstraintSet::cube(1, -5.0, 5.0),
        0,
    )
    .unwrap();
    let mut setup = RunSetup::new(
        Arc::new(p),
        GraphSchedule::fig1(),
        example_kernel(),
        StepSchedules::power_family(0.2, -0.5, -0.5),
        2000,
        1,
    );
    setup.schedules.gradient_bound = Some(0.0);
    let m = engine::run(&setup).unwrap();
    assert_eq!(m.path_variation(), 0.0);
    for i in 0..6 {
        assert!(m.regret_avg(i, 2000) < 0.25 * m.regret_avg(i, 200), "agent {i}");
    }
}

#[test]
fn emitted_tables_round_trip_byte_identically() {
    let built = RunConfig::reproduce_paper(50).build().unwrap();
    let m = engine::run(&built.setup).unwrap();
    let p = built.tracking.unwrap();
    for table in [
        report::metrics_table(&m),
        report::benchmark_table(&m),
        report::trajectory_table(&m, &p),
        report::regret_over_t_table(&m),
        report::noise_audit_table(&p),
    ] {
        let text = table.to_csv_string();
        let back = Table::read_from(text.as_bytes()).unwrap();
        assert_eq!(back.to_csv_string(), text);
        assert_eq!(back, table);
    }
}

use std::time::Instant;

use hivpop::e0model::{
    calibrate_e0_model, double_logistic, project_e0_step, simulate_e0_trajectories,
    CalibrationConfig, CountryE0, DoubleLogisticParams, E0Model, E0SimulationInput, VarianceModel,
};
use hivpop::rng::{Domain, SeedTree};
use hivpop::stats::quantile;
use hivpop::synthetic::{synthetic_e0_histories, E0World};
use proptest::prelude::*;
use proptest::test_runner::FileFailurePersistence;
use rand::Rng;

#[test]
fn zero_variance_increments_decompose_exactly() {
    let world = E0World::default();
    let mut rng = SeedTree::new(3).stream(Domain::Synthetic, 0, 0);
    for _ in 0..1000 {
        let theta = world.draw_theta(&mut rng);
        let beta = -rng.random_range(0.0..0.01);
        let e0: f64 = rng.random_range(30.0..85.0);
        let delta = rng.random_range(-2500.0..2500.0);
        let next = project_e0_step(e0, &theta, beta, delta, 0.0, &mut rng);
        let expected = double_logistic(e0, &theta) + beta * delta;
        if e0 + expected > 20.0 {
            assert!(((next - e0) - expected).abs() <= 1e-12, "{e0} {expected} {next}");
        }
    }
}

#[test]
fn simulated_trajectories_decompose_with_zero_variance() {
    let theta = DoubleLogisticParams::new(15.77, 40.97, 0.21, 19.82, 2.93, 0.40).unwrap();
    let model = E0Model {
        countries: vec![CountryE0 {
            code: "A".into(),
            theta,
            epidemic: true,
        }],
        beta_hna: -0.004,
        variance: VarianceModel::constant(0.0),
        draws: Vec::new(),
    };
    let paths = vec![vec![1500.0, 1200.0, 800.0, 500.0]; 4];
    let set = simulate_e0_trajectories(
        &model,
        &E0SimulationInput {
            country: "A",
            e0_start: 48.0,
            start_period: 2010,
            hna_paths: &paths,
            trajectories: 4,
        },
        &SeedTree::new(1),
        0,
    )
    .unwrap();
    assert_eq!(set.period_starts, vec![2015, 2020, 2025]);
    for k in 0..4 {
        let mut prev = 48.0;
        for (p, &v) in set.values[k].iter().enumerate() {
            let expected = double_logistic(prev, &theta) - 0.004 * (paths[k][p + 1] - paths[k][p]);
            assert!((v - prev - expected).abs() <= 1e-12);
            prev = v;
        }
    }
}

#[test]
fn calibration_recovers_simulated_truth() {
    let t = Instant::now();
    let world = E0World::default();
    let periods: Vec<i32> = (1950..=2010).step_by(5).collect();
    let fixture = synthetic_e0_histories(&world, 200, 100, &periods, &SeedTree::new(77)).unwrap();
    let out = calibrate_e0_model(&fixture.histories, &CalibrationConfig::default()).unwrap();
    let model = &out.model;
    let rel = (model.beta_hna - world.beta_hna).abs() / world.beta_hna.abs();
    println!("beta {:.5} (true {:.5}), relative error {rel:.3}", model.beta_hna, world.beta_hna);
    assert!(rel <= 0.10);

    let (mut inside, mut total) = (0usize, 0usize);
    for (c, truth) in fixture.theta.iter().enumerate() {
        let idx = model.country_index(&fixture.histories[c].country).unwrap();
        let truth = truth.to_array();
        for j in 0..6 {
            let draws: Vec<f64> = model.draws.iter().map(|d| d.theta[idx].to_array()[j]).collect();
            let lo = quantile(&draws, 0.05);
            let hi = quantile(&draws, 0.95);
            inside += usize::from(lo <= truth[j] && truth[j] <= hi);
            total += 1;
        }
    }
    let coverage = 100.0 * inside as f64 / total as f64;
    println!("90% coverage of country parameters: {coverage:.1} over {total}; {:?}", t.elapsed());
    assert!((coverage - 90.0).abs() <= 5.0);
    assert!(t.elapsed().as_secs() < 600);
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 256,
        failure_persistence: Some(Box::new(FileFailurePersistence::Off)),
        ..ProptestConfig::default()
    })]

    #[test]
    fn expected_gain_is_finite_and_non_negative(
        d1 in 0.5f64..40.0, d2 in 0.5f64..60.0, d3 in 0.01f64..20.0, d4 in 0.5f64..40.0,
        k in 0.01f64..6.0, z in 0.0f64..1.5, e0 in 20u32..=110,
    ) {
        let p = DoubleLogisticParams::from_array([d1, d2, d3, d4, k, z]);
        let g = double_logistic(f64::from(e0), &p);
        prop_assert!(g.is_finite());
        let checked = DoubleLogisticParams::new(d1, d2, d3, d4, k, z);
        prop_assert_eq!(checked.is_ok(), p.is_admissible());
        if checked.is_ok() {
            prop_assert!(g >= 0.0);
        }
    }

    #[test]
    fn step_never_falls_below_floor(e0 in 20.0f64..90.0, delta in -5000.0f64..5000.0, seed in 0u64..1000) {
        let theta = DoubleLogisticParams::new(15.77, 40.97, 0.21, 19.82, 2.93, 0.40).unwrap();
        let mut rng = SeedTree::new(seed).stream(Domain::E0, 0, 0);
        let next = project_e0_step(e0, &theta, -0.01, delta, 3.0, &mut rng);
        prop_assert!(next >= 20.0);
    }
}

use hivpop::prevalence::{
    aggregate_five_year, decay_parameters, scale_trajectories, simulate_epp, AnnualPath,
    Compartments, EppNoise, EppParams, PrevalenceTrajectorySet,
};
use hivpop::rng::{Domain, SeedTree};
use proptest::prelude::*;
use proptest::test_runner::FileFailurePersistence;

/// Forward Euler on the same three compartments, written out long-hand.
fn euler_oracle(p: &EppParams, horizon: i32, dt: f64) -> Vec<f64> {
    let (mut x, mut z, mut y) = (p.initial.not_at_risk, p.initial.at_risk, p.initial.infected);
    let steps = (1.0 / dt).round() as usize;
    let mut out = vec![100.0 * y / (x + z + y)];
    for year in 0..(horizon - p.t0) {
        for s in 0..steps {
            let t = f64::from(year) + s as f64 * dt;
            let r = p.r0 * 0.5f64.powf(t / 30.0);
            let phi = p.phi0 * 0.5f64.powf(t / 20.0);
            let n = x + z + y;
            let e = p.entry_rate * n;
            let inc = r * z * y / n;
            let dx = (1.0 - phi) * e - p.exit_rate * x;
            let dz = phi * e - inc - p.exit_rate * z;
            let dy = inc - (p.exit_rate + 1.0 / p.hiv_survival) * y;
            x += dt * dx;
            z += dt * dz;
            y += dt * dy;
        }
        out.push(100.0 * y / (x + z + y));
    }
    out
}

fn worst_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn default_path() -> Vec<f64> {
    let p = EppParams::default();
    let mut rng = SeedTree::new(1).stream(Domain::Epp, 0, 0);
    simulate_epp(&p, 2100, &EppNoise::default(), &mut rng).unwrap().values
}

#[test]
fn rk4_matches_fine_euler() {
    // Plain Euler at dt = 0.01 carries about 2e-3 of its own truncation error on this
    // path, so the comparison uses the first-order extrapolation 2 E(h/2) - E(h).
    let p = EppParams::default();
    let path = default_path();
    let coarse = euler_oracle(&p, 2100, 0.01);
    let fine = euler_oracle(&p, 2100, 0.005);
    let extrapolated: Vec<f64> = coarse.iter().zip(&fine).map(|(c, f)| 2.0 * f - c).collect();
    let worst = worst_gap(&path, &extrapolated);
    assert!(worst <= 1e-3, "largest difference {worst}");
}

#[test]
fn euler_gap_shrinks_linearly_towards_rk4() {
    let p = EppParams::default();
    let path = default_path();
    let g1 = worst_gap(&path, &euler_oracle(&p, 2100, 0.01));
    let g2 = worst_gap(&path, &euler_oracle(&p, 2100, 0.001));
    assert!((g1 / g2 - 10.0).abs() < 0.5, "{g1} {g2}");
    assert!(g2 <= 1e-3);
}

fn params() -> impl Strategy<Value = EppParams> {
    (0.0f64..2.0, 0.0f64..0.5, 0.0f64..0.3, 0.0f64..0.5).prop_map(|(r0, phi0, infected, at_risk)| {
        let at_risk = at_risk.min(1.0 - infected);
        EppParams {
            r0,
            phi0,
            initial: Compartments {
                not_at_risk: 1.0 - infected - at_risk,
                at_risk,
                infected,
            },
            ..EppParams::default()
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 64,
        failure_persistence: Some(Box::new(FileFailurePersistence::Off)),
        ..ProptestConfig::default()
    })]

    #[test]
    fn prevalence_stays_in_range(p in params(), seed in 0u64..100) {
        let mut rng = SeedTree::new(seed).stream(Domain::Epp, 0, 0);
        let noise = EppNoise { log_r_sd: 0.3, log_phi_sd: 0.3 };
        if let Ok(path) = simulate_epp(&p, 2060, &noise, &mut rng) {
            for v in path.values {
                prop_assert!((0.0..100.0).contains(&v));
            }
        }
    }

    #[test]
    fn decay_is_monotone_and_continuous(r0 in 0.01f64..3.0, phi0 in 0.01f64..1.0, dt in 0.0f64..80.0) {
        let p = EppParams { r0, phi0, ..EppParams::default() };
        let t = f64::from(p.t0) + dt;
        let (r1, f1) = decay_parameters(&p, t);
        let (r2, f2) = decay_parameters(&p, t + 0.5);
        prop_assert!(r2 < r1 && f2 < f1);
        let (r3, f3) = decay_parameters(&p, t + 1e-9);
        prop_assert!((r3 - r1).abs() < 1e-9 && (f3 - f1).abs() < 1e-9);
    }

    #[test]
    fn period_scaling_commutes_with_averaging(
        reference in prop::collection::vec(0.5f64..30.0, 10),
        scalars in prop::collection::vec(0.5f64..1.5, 2),
    ) {
        let raw: Vec<f64> = (0..10).map(|i| 1.0 + i as f64 * 0.3).collect();
        let sample: Vec<f64> = raw.iter().enumerate().map(|(i, r)| r * scalars[i / 5]).collect();
        let set = scale_trajectories(
            "A",
            &AnnualPath::new(2015, reference.clone()),
            &AnnualPath::new(2015, raw.clone()),
            &[AnnualPath::new(2015, sample)],
        ).unwrap();
        let five = aggregate_five_year(&set, &[2015, 2020]).unwrap();
        for (j, start) in [0usize, 5].into_iter().enumerate() {
            let ref_mean: f64 = reference[start..start + 5].iter().sum::<f64>() / 5.0;
            prop_assert!((five.samples[0][j] - ref_mean * scalars[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn five_year_values_are_annual_means(values in prop::collection::vec(0.0f64..50.0, 15)) {
        let set = PrevalenceTrajectorySet {
            country: "A".into(),
            start_year: 2015,
            median: values.clone(),
            samples: vec![values.clone()],
        };
        let five = aggregate_five_year(&set, &[2015, 2020, 2025]).unwrap();
        for j in 0..3 {
            let m: f64 = values[5 * j..5 * j + 5].iter().sum::<f64>() / 5.0;
            prop_assert!((five.samples[0][j] - m).abs() < 1e-12);
            prop_assert!((five.median[j] - m).abs() < 1e-12);
        }
    }
}

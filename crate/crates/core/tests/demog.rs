use std::time::Instant;

use hivpop::demog::{
    build_life_table, survivorship_ratios, summary_index, AConvention, AbridgedLifeTable,
    MortalitySchedule, Sex, SummaryIndex, ABRIDGED_GROUPS,
};
use hivpop::rng::{Domain, SeedTree};
use proptest::prelude::*;
use proptest::test_runner::FileFailurePersistence;
use rand::Rng;

const STARTS: [f64; 22] = [
    0.0, 1.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0, 55.0, 60.0, 65.0, 70.0,
    75.0, 80.0, 85.0, 90.0, 95.0, 100.0,
];

struct Oracle {
    a: Vec<f64>,
    q: Vec<f64>,
    l: Vec<f64>,
    d: Vec<f64>,
    big_l: Vec<f64>,
    t: Vec<f64>,
    e: Vec<f64>,
}

fn oracle_a(sex: Sex, m: &[f64], i: usize) -> f64 {
    let m0 = m[0];
    match (i, sex) {
        (21, _) => 1.0 / m[21],
        (0, Sex::Female) if m0 >= 0.107 => 0.35,
        (0, Sex::Female) => 0.053 + 2.8 * m0,
        (0, Sex::Male) if m0 >= 0.107 => 0.33,
        (0, Sex::Male) => 0.045 + 2.684 * m0,
        (1, Sex::Female) if m0 >= 0.107 => 1.361,
        (1, Sex::Female) => 1.522 - 1.518 * m0,
        (1, Sex::Male) if m0 >= 0.107 => 1.352,
        (1, Sex::Male) => 1.651 - 2.816 * m0,
        _ => (STARTS[i + 1] - STARTS[i]) / 2.0,
    }
}

fn oracle_q(sex: Sex, m: &[f64], i: usize) -> f64 {
    if i == 21 {
        return 1.0;
    }
    let n = STARTS[i + 1] - STARTS[i];
    n * m[i] / (1.0 + (n - oracle_a(sex, m, i)) * m[i])
}

// Each column is evaluated from the rates alone, without reusing earlier columns.
fn oracle_l(sex: Sex, m: &[f64], i: usize) -> f64 {
    (0..i).fold(100_000.0, |acc, j| acc * (1.0 - oracle_q(sex, m, j)))
}

fn oracle_big_l(sex: Sex, m: &[f64], i: usize) -> f64 {
    if i == 21 {
        return oracle_l(sex, m, 21) / m[21];
    }
    let n = STARTS[i + 1] - STARTS[i];
    let (l0, l1) = (oracle_l(sex, m, i), oracle_l(sex, m, i + 1));
    n * l1 + oracle_a(sex, m, i) * (l0 - l1)
}

fn oracle(sex: Sex, m: &[f64]) -> Oracle {
    let n = m.len();
    let a = (0..n).map(|i| oracle_a(sex, m, i)).collect();
    let q = (0..n).map(|i| oracle_q(sex, m, i)).collect();
    let l: Vec<f64> = (0..n).map(|i| oracle_l(sex, m, i)).collect();
    let d = (0..n)
        .map(|i| if i == 21 { l[21] } else { l[i] - oracle_l(sex, m, i + 1) })
        .collect();
    let big_l: Vec<f64> = (0..n).map(|i| oracle_big_l(sex, m, i)).collect();
    let t: Vec<f64> = (0..n).map(|i| (i..n).map(|j| oracle_big_l(sex, m, j)).sum()).collect();
    let e = (0..n).map(|i| t[i] / l[i]).collect();
    Oracle { a, q, l, d, big_l, t, e }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn worst(got: &[f64], want: &[f64]) -> f64 {
    got.iter().zip(want).map(|(g, w)| rel(*g, *w)).fold(0.0, f64::max)
}

fn random_schedule(rng: &mut impl Rng, sex: Sex) -> MortalitySchedule {
    let lo = 1e-4f64.ln();
    let hi = 0.35f64.ln();
    let rates: Vec<f64> = (0..ABRIDGED_GROUPS).map(|_| rng.random_range(lo..hi).exp()).collect();
    MortalitySchedule::new(sex, &rates).unwrap()
}

#[test]
fn life_table_matches_brute_force_columns() {
    let mut rng = SeedTree::new(11).stream(Domain::Synthetic, 0, 0);
    let schedules: Vec<MortalitySchedule> = (0..100)
        .map(|i| random_schedule(&mut rng, if i % 2 == 0 { Sex::Female } else { Sex::Male }))
        .collect();
    let start = Instant::now();
    let tables: Vec<AbridgedLifeTable> = schedules
        .iter()
        .map(|s| build_life_table(s, AConvention::CoaleDemeny).unwrap())
        .collect();
    let elapsed = start.elapsed();
    let mut max_rel = 0.0f64;
    for (s, t) in schedules.iter().zip(&tables) {
        let o = oracle(s.sex(), s.rates());
        for (got, want) in [
            (&t.ax[..], &o.a),
            (&t.qx[..], &o.q),
            (&t.lx[..], &o.l),
            (&t.dx[..], &o.d),
            (&t.person_years[..], &o.big_l),
            (&t.tx[..], &o.t),
            (&t.ex[..], &o.e),
        ] {
            max_rel = max_rel.max(worst(got, want));
        }
    }
    assert!(max_rel <= 1e-9, "largest relative difference {max_rel:e}");
    assert!(elapsed.as_secs_f64() < 1.0, "{elapsed:?}");
}

fn schedule_strategy() -> impl Strategy<Value = MortalitySchedule> {
    (
        prop::collection::vec(1e-4f64.ln()..0.35f64.ln(), ABRIDGED_GROUPS),
        any::<bool>(),
    )
        .prop_map(|(logs, female)| {
            let sex = if female { Sex::Female } else { Sex::Male };
            MortalitySchedule::from_log_rates(sex, &logs).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 128,
        failure_persistence: Some(Box::new(FileFailurePersistence::Off)),
        ..ProptestConfig::default()
    })]

    #[test]
    fn rates_round_trip_through_deaths_over_person_years(s in schedule_strategy()) {
        let t = build_life_table(&s, AConvention::CoaleDemeny).unwrap();
        for i in 0..ABRIDGED_GROUPS {
            prop_assert!(rel(t.dx[i] / t.person_years[i], s.rates()[i]) < 1e-9);
        }
    }

    #[test]
    fn raising_any_rate_lowers_e0(s in schedule_strategy(), group in 0usize..ABRIDGED_GROUPS, bump in 1.01f64..1.5) {
        let base = build_life_table(&s, AConvention::Midpoint).unwrap();
        let mut rates = *s.rates();
        rates[group] = (rates[group] * bump).min(0.39);
        prop_assume!(rates[group] > s.rates()[group]);
        let worse = build_life_table(&MortalitySchedule::new(s.sex(), &rates).unwrap(), AConvention::Midpoint).unwrap();
        prop_assert!(worse.e0() < base.e0());
    }

    #[test]
    fn probabilities_and_survivors_are_well_formed(s in schedule_strategy()) {
        let t = build_life_table(&s, AConvention::CoaleDemeny).unwrap();
        for i in 0..ABRIDGED_GROUPS {
            prop_assert!(t.qx[i] > 0.0 && t.qx[i] <= 1.0);
        }
        prop_assert_eq!(t.qx[ABRIDGED_GROUPS - 1], 1.0);
        for i in 1..ABRIDGED_GROUPS {
            prop_assert!(t.lx[i] < t.lx[i - 1]);
        }
    }

    #[test]
    fn collapsing_to_five_year_groups_keeps_person_years(s in schedule_strategy()) {
        let t = build_life_table(&s, AConvention::CoaleDemeny).unwrap();
        let abridged: f64 = t.person_years.iter().sum();
        let five: f64 = t.five_year_person_years().iter().sum();
        prop_assert!(rel(five, abridged) < 1e-12);
    }

    #[test]
    fn summary_indices_are_probabilities(s in schedule_strategy()) {
        let t = build_life_table(&s, AConvention::CoaleDemeny).unwrap();
        for idx in [SummaryIndex::Q5_0, SummaryIndex::Q45_15, SummaryIndex::Q35_10] {
            let v = summary_index(&t, idx);
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn survivorship_ratios_are_fractions(s in schedule_strategy()) {
        let t = build_life_table(&s, AConvention::CoaleDemeny).unwrap();
        let sv = survivorship_ratios(&t).unwrap();
        prop_assert!(sv.births > 0.0 && sv.births <= 1.0);
        for r in sv.ratios {
            prop_assert!(r > 0.0 && r <= 1.0);
        }
    }
}

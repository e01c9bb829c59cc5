use hivpop::ccmpp::{
    kernel_step, project_step, FertilityPattern, KernelSex, PeriodFertility,
};
use hivpop::demog::{
    build_life_table, survivorship_ratios, AConvention, MortalitySchedule, PopulationPyramid, Sex,
    ABRIDGED_GROUPS, FIVE_YEAR_GROUPS,
};
use hivpop::rng::{Domain, SeedTree};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

struct SexInput {
    start: Vec<f64>,
    ratios: Vec<f64>,
    birth_survival: f64,
    migration: Vec<f64>,
}

/// Two-sex projection matrix on `n` groups, female block first.
fn leslie(sexes: &[SexInput; 2], asfr: &[f64], srb: f64) -> Vec<Vec<f64>> {
    let n = asfr.len();
    let mut m = vec![vec![0.0; 2 * n]; 2 * n];
    for (s, k) in sexes.iter().enumerate() {
        let o = s * n;
        for i in 0..n - 2 {
            m[o + i + 1][o + i] = k.ratios[i];
        }
        m[o + n - 1][o + n - 2] = k.ratios[n - 2];
        m[o + n - 1][o + n - 1] = k.ratios[n - 2];
    }
    // Births per female of each group: exposure averages the start and end counts.
    let mut per_woman = vec![0.0; n];
    for j in 0..n {
        per_woman[j] += 2.5 * asfr[j];
        let dest = if j + 1 >= n - 1 { n - 1 } else { j + 1 };
        per_woman[j] += 2.5 * asfr[dest] * sexes[0].ratios[(n - 2).min(j)];
    }
    let shares = [1.0 / (1.0 + srb), srb / (1.0 + srb)];
    for s in 0..2 {
        for j in 0..n {
            m[s * n][j] = per_woman[j] * shares[s] * sexes[s].birth_survival;
        }
    }
    m
}

fn leslie_step(sexes: &[SexInput; 2], asfr: &[f64], srb: f64) -> Vec<f64> {
    let n = asfr.len();
    let m = leslie(sexes, asfr, srb);
    let mut x = vec![0.0; 2 * n];
    let mut half = vec![0.0; 2 * n];
    for s in 0..2 {
        for i in 0..n {
            half[s * n + i] = 0.5 * sexes[s].migration[i];
            x[s * n + i] = sexes[s].start[i] + half[s * n + i];
        }
    }
    (0..2 * n)
        .map(|r| (0..2 * n).map(|c| m[r][c] * x[c]).sum::<f64>() + half[r])
        .collect()
}

fn as_kernel(s: &SexInput) -> KernelSex<'_> {
    KernelSex {
        start: &s.start,
        ratios: &s.ratios,
        birth_survival: s.birth_survival,
        migration: &s.migration,
    }
}

fn random_sex(rng: &mut ChaCha8Rng, n: usize, floor: f64, migration_scale: f64) -> SexInput {
    SexInput {
        start: (0..n).map(|_| rng.random_range(floor..1000.0)).collect(),
        ratios: (0..n - 1).map(|_| rng.random_range(0.5..1.0)).collect(),
        birth_survival: rng.random_range(0.8..1.0),
        migration: (0..n)
            .map(|_| rng.random_range(-migration_scale..migration_scale))
            .collect(),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

// Starts stay well above the migration outflow so the step is linear.
#[test]
fn three_group_kernel_matches_leslie_matrix() {
    let mut rng = SeedTree::new(5).stream(Domain::Synthetic, 0, 0);
    for _ in 0..200 {
        let sexes = [random_sex(&mut rng, 3, 200.0, 50.0), random_sex(&mut rng, 3, 200.0, 50.0)];
        let asfr = [0.0, rng.random_range(0.0..0.3), rng.random_range(0.0..0.3)];
        let srb = rng.random_range(1.0..1.1);
        let (end, _) = kernel_step([as_kernel(&sexes[0]), as_kernel(&sexes[1])], &asfr, srb).unwrap();
        let want = leslie_step(&sexes, &asfr, srb);
        let got: Vec<f64> = end[0].iter().chain(&end[1]).copied().collect();
        for (g, w) in got.iter().zip(&want) {
            assert!(rel(*g, *w) <= 1e-9, "{got:?} vs {want:?}");
        }
    }
}

#[test]
fn full_grid_step_matches_leslie_matrix() {
    let mut rng = SeedTree::new(6).stream(Domain::Synthetic, 0, 0);
    for _ in 0..20 {
        let tables = [Sex::Female, Sex::Male].map(|sex| {
            let rates: Vec<f64> = (0..ABRIDGED_GROUPS)
                .map(|i| 0.0005 * (0.08 * i as f64).exp() * rng.random_range(0.5..2.0))
                .collect();
            build_life_table(&MortalitySchedule::new(sex, &rates).unwrap(), AConvention::CoaleDemeny)
                .unwrap()
        });
        let surv = [survivorship_ratios(&tables[0]).unwrap(), survivorship_ratios(&tables[1]).unwrap()];
        let sexes: [SexInput; 2] = [0, 1].map(|s| SexInput {
            start: (0..FIVE_YEAR_GROUPS).map(|_| rng.random_range(100.0..5000.0)).collect(),
            ratios: surv[s].ratios.to_vec(),
            birth_survival: surv[s].births,
            migration: (0..FIVE_YEAR_GROUPS).map(|_| rng.random_range(-50.0..50.0)).collect(),
        });
        let pattern = FertilityPattern::new(&[0.10, 0.22, 0.24, 0.20, 0.14, 0.07, 0.03]).unwrap();
        let fertility = PeriodFertility { tfr: rng.random_range(1.5..6.0), pattern, srb: 1.05 };
        let mut asfr = vec![0.0; FIVE_YEAR_GROUPS];
        for (i, p) in pattern.proportions().iter().enumerate() {
            asfr[3 + i] = fertility.tfr * p / 5.0;
        }
        let pyramid = PopulationPyramid::new(2010, &sexes[0].start, &sexes[1].start).unwrap();
        let migration = [0, 1].map(|s| {
            let mut a = [0.0; FIVE_YEAR_GROUPS];
            a.copy_from_slice(&sexes[s].migration);
            a
        });
        let (next, _) = project_step(&pyramid, [&tables[0], &tables[1]], &fertility, &migration).unwrap();
        assert_eq!(next.year, 2015);
        let want = leslie_step(&sexes, &asfr, 1.05);
        let got: Vec<f64> = next.female.iter().chain(&next.male).copied().collect();
        for (g, w) in got.iter().zip(&want) {
            assert!(rel(*g, *w) <= 1e-9, "{g} vs {w}");
        }
    }
}

#[test]
fn random_instances_balance_their_accounts() {
    let mut rng = SeedTree::new(7).stream(Domain::Synthetic, 0, 0);
    for _ in 0..1000 {
        let n = rng.random_range(2..8);
        let sexes = [random_sex(&mut rng, n, 0.0, 800.0), random_sex(&mut rng, n, 0.0, 800.0)];
        let mut asfr: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.4)).collect();
        asfr[0] = 0.0;
        let srb = rng.random_range(0.9..1.2);
        let (end, acc) = kernel_step([as_kernel(&sexes[0]), as_kernel(&sexes[1])], &asfr, srb).unwrap();
        for s in 0..2 {
            let start: f64 = sexes[s].start.iter().sum();
            let finish: f64 = end[s].iter().sum();
            let implied = start + acc.births[s] - acc.deaths[s] + acc.migration[s];
            assert!(end[s].iter().all(|v| *v >= 0.0));
            assert!(
                (finish - implied).abs() <= 1e-6 * finish.abs().max(1.0),
                "sex {s}: {finish} vs {implied}"
            );
        }
    }
}

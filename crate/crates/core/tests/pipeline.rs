use hivpop::ccmpp::{
    project_step, summarize_quantiles, Indicator, PeriodFertility, DEFAULT_QUANTILES, DEFAULT_SRB,
};
use hivpop::demog::{build_life_table, summary_index, AConvention, SummaryIndex};
use hivpop::e0model::CalibrationConfig;
use hivpop::io::{
    read_dataset, read_quantiles, read_trajectories, write_dataset, write_quantiles,
    write_trajectories,
};
use hivpop::pipeline::{calibrate_models, project_countries, Models, ProjectionSettings};
use hivpop::synthetic::{CountryRole, SyntheticWorld, WorldConfig};

fn world() -> SyntheticWorld {
    SyntheticWorld::generate(WorldConfig {
        evaluated: 2,
        background_epidemic: 8,
        background_other: 4,
        trajectories: 50,
        ..WorldConfig::default()
    })
    .unwrap()
}

fn models(world: &SyntheticWorld) -> Models {
    let config = CalibrationConfig {
        iterations: 2000,
        burn_in: 1000,
        draws: 200,
        ..CalibrationConfig::default()
    };
    calibrate_models(&world.dataset, None, &config).unwrap().models
}

fn settings(detail: bool) -> ProjectionSettings {
    ProjectionSettings {
        trajectories: 50,
        horizon: 2050,
        seed: 9,
        detail,
        ..ProjectionSettings::default()
    }
}

#[test]
fn projection_replays_from_recorded_inputs() {
    let world = world();
    let models = models(&world);
    let codes = world.codes(Some(CountryRole::Evaluated));
    let outputs = project_countries(&world.dataset, &models, &codes, &settings(true)).unwrap();
    for (code, out) in codes.iter().zip(&outputs) {
        let data = &world.dataset;
        let tfr = &data.tfr[code];
        let pattern = data.fertility_pattern[code];
        let srb = data.srb.get(code).copied().unwrap_or(DEFAULT_SRB);
        let migration = data.migration.get(code);
        for (k, traj) in out.projection.trajectories.iter().enumerate() {
            let mut pyramid = data.base_population[code].clone();
            for (p, &start) in out.projection.period_starts.iter().enumerate() {
                let pair = &traj.schedules[p];
                let female = build_life_table(&pair.female, AConvention::CoaleDemeny).unwrap();
                let male = build_life_table(&pair.male, AConvention::CoaleDemeny).unwrap();
                let t = tfr.period_starts.iter().position(|&q| q == start).unwrap();
                let fertility = PeriodFertility { tfr: tfr.tfr[k][t], pattern, srb };
                let mig = migration.map_or([[0.0; 21]; 2], |m| m.for_period(start));
                let (next, _) = project_step(&pyramid, [&female, &male], &fertility, &mig).unwrap();
                assert_eq!(next, traj.pyramids[p]);
                let row = traj.indicators[p];
                assert_eq!(row[Indicator::TotalPopulation.index()], next.total());
                assert_eq!(row[Indicator::Population0To4.index()], next.aged_0_4());
                assert_eq!(row[Indicator::Female15To49.index()], next.female_15_49());
                assert_eq!(row[Indicator::FemaleE0.index()], pair.e0_female_input);
                assert_eq!(
                    row[Indicator::FemaleQ35_10.index()],
                    summary_index(&female, SummaryIndex::Q35_10)
                );
                assert_eq!(row[Indicator::Prevalence.index()], out.prevalence.samples[k][p]);
                pyramid = next;
            }
        }
    }
}

#[test]
fn runs_are_deterministic_and_streams_ignore_country_filtering() {
    let world = world();
    let models = models(&world);
    let codes = world.codes(Some(CountryRole::Evaluated));
    let a = project_countries(&world.dataset, &models, &codes, &settings(false)).unwrap();
    let b = project_countries(&world.dataset, &models, &codes, &settings(false)).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.projection, y.projection);
    }
    let only_second = project_countries(&world.dataset, &models, &codes[1..], &settings(false)).unwrap();
    assert_eq!(only_second[0].projection, a[1].projection);

    let other_seed = ProjectionSettings { seed: 10, ..settings(false) };
    let c = project_countries(&world.dataset, &models, &codes, &other_seed).unwrap();
    assert_ne!(c[0].projection, a[0].projection);
}

#[test]
fn dataset_round_trips_through_csv() {
    let world = world();
    let dir = tempfile::tempdir().unwrap();
    let paths = write_dataset(dir.path(), &world.dataset).unwrap();
    let back = read_dataset(&paths, world.config.base_year).unwrap();
    // The reader returns life tables in (country, period) order.
    let mut expected = world.dataset.clone();
    expected
        .life_tables
        .sort_by(|a, b| (&a.country, a.period_start).cmp(&(&b.country, b.period_start)));
    assert_eq!(back, expected);
}

#[test]
fn quantiles_replay_from_trajectory_file() {
    let world = world();
    let models = models(&world);
    let codes = world.codes(Some(CountryRole::Evaluated));
    let outputs = project_countries(&world.dataset, &models, &codes, &settings(false)).unwrap();
    let results: Vec<_> = outputs.into_iter().map(|o| o.projection).collect();
    let rows = summarize_quantiles(&results, &DEFAULT_QUANTILES).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let qpath = dir.path().join("projection_quantiles.csv");
    let tpath = dir.path().join("trajectories.csv");
    write_quantiles(&qpath, &rows).unwrap();
    write_trajectories(&tpath, &results).unwrap();

    let written = read_quantiles(&qpath).unwrap();
    let replayed = summarize_quantiles(&read_trajectories(&tpath).unwrap(), &DEFAULT_QUANTILES).unwrap();
    assert_eq!(written, rows);
    assert_eq!(replayed, written);
}

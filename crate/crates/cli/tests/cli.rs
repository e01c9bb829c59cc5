use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::Instant;

use hivpop::ccmpp::{summarize_quantiles, DEFAULT_QUANTILES};
use hivpop::io::{read_quantiles, read_trajectories};
use hivpop::persist::{e0_model_to_string, load_models, mlt_basis_to_string, save_models};

const BIN: &str = env!("CARGO_BIN_EXE_hivpop");

fn hivpop(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hivpop(dir, args);
    assert!(
        out.status.success(),
        "hivpop {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn failure(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = hivpop(dir, args);
    assert!(!out.status.success(), "hivpop {args:?} unexpectedly succeeded");
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &to.join(entry.file_name()));
        } else {
            fs::copy(entry.path(), to.join(entry.file_name())).unwrap();
        }
    }
}

/// A small synthetic world with calibrated models, built once and copied
/// into a fresh directory for each test.
fn calibrated_world() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli-world");
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        fs::write(
            dir.join("synth.toml"),
            "out = \"w\"\n[synth]\nevaluated = 2\nbackground_epidemic = 6\nbackground_other = 4\ntrajectories = 100\n",
        )
        .unwrap();
        ok(&dir, &["--config", "synth.toml", "synth"]);
        let world = dir.join("w");
        let mut config = fs::read_to_string(world.join("hivpop.toml")).unwrap();
        config = config.replace("horizon = 2100", "horizon = 2040");
        config.push_str("\n[calibrate]\nchains = 2\niterations = 2000\nburn_in = 1000\ndraws = 200\n");
        fs::write(world.join("hivpop.toml"), config).unwrap();
        let summary = ok(&world, &["--config", "hivpop.toml", "calibrate"]);
        assert!(summary.contains("beta_hna"), "{summary}");
        world
    })
}

fn fresh_world(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    copy_dir(calibrated_world(), &dir);
    dir
}

#[test]
fn saved_models_reload_bit_exactly() {
    let world = fresh_world("models-round-trip");
    let models = load_models(&world.join("out/models")).unwrap();
    let again = world.join("again");
    save_models(&models, &again).unwrap();
    let reloaded = load_models(&again).unwrap();
    assert_eq!(reloaded, models);
    assert_eq!(e0_model_to_string(&reloaded.e0), e0_model_to_string(&models.e0));
    assert_eq!(mlt_basis_to_string(&reloaded.mlt), mlt_basis_to_string(&models.mlt));
    for file in ["e0_model.txt", "mlt_basis.txt"] {
        assert_eq!(
            fs::read(world.join("out/models").join(file)).unwrap(),
            fs::read(again.join(file)).unwrap()
        );
    }
}

#[test]
fn same_seed_gives_identical_files_and_quantiles_replay() {
    let world = fresh_world("determinism");
    let args = ["--config", "hivpop.toml", "--emit-trajectories", "project"];
    ok(&world, &args);
    let first = fs::read(world.join("out/projection_quantiles.csv")).unwrap();
    let first_traj = fs::read(world.join("out/trajectories.csv")).unwrap();
    ok(&world, &args);
    assert_eq!(fs::read(world.join("out/projection_quantiles.csv")).unwrap(), first);
    assert_eq!(fs::read(world.join("out/trajectories.csv")).unwrap(), first_traj);

    let written = read_quantiles(&world.join("out/projection_quantiles.csv")).unwrap();
    let results = read_trajectories(&world.join("out/trajectories.csv")).unwrap();
    let replayed = summarize_quantiles(&results, &DEFAULT_QUANTILES).unwrap();
    assert_eq!(replayed, written);

    ok(&world, &["--config", "hivpop.toml", "--seed", "2", "project"]);
    assert_ne!(fs::read(world.join("out/projection_quantiles.csv")).unwrap(), first);
}

#[test]
fn two_trajectories_for_one_country_run_quickly() {
    let world = fresh_world("small-run");
    let t = Instant::now();
    let stdout = ok(
        &world,
        &["--config", "hivpop.toml", "--trajectories", "2", "--countries", "G01", "--horizon", "2100", "project"],
    );
    assert!(t.elapsed().as_secs_f64() < 5.0, "{:?}", t.elapsed());
    assert!(stdout.starts_with("1 countries"), "{stdout}");
    let rows = read_quantiles(&world.join("out/projection_quantiles.csv")).unwrap();
    assert!(rows.iter().all(|r| r.country == "G01"));
    assert_eq!(rows.iter().map(|r| r.period_start).max(), Some(2095));
}

#[test]
fn missing_column_is_named_with_exit_code_two() {
    let world = fresh_world("missing-column");
    let art = world.join("data/art_coverage.csv");
    let text = fs::read_to_string(&art).unwrap();
    fs::write(&art, text.replacen("art_pct", "coverage", 1)).unwrap();
    let (code, stderr) = failure(&world, &["--config", "hivpop.toml", "project"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("missing column 'art_pct'"), "{stderr}");
}

#[test]
fn empty_or_unknown_country_filters_are_rejected() {
    let world = fresh_world("country-filter");
    let (code, stderr) = failure(&world, &["--config", "hivpop.toml", "--countries", "", "project"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("nothing to do"), "{stderr}");
    let (code, stderr) = failure(&world, &["--config", "hivpop.toml", "--countries", "G01,XYZ", "project"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("XYZ"), "{stderr}");
}

#[test]
fn invalid_configuration_is_rejected() {
    let world = fresh_world("bad-config");
    fs::write(world.join("bad.toml"), "horizon = 2043\n").unwrap();
    let (code, stderr) = failure(&world, &["--config", "bad.toml", "project"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("horizon"), "{stderr}");
    fs::write(world.join("typo.toml"), "trajectorys = 10\n").unwrap();
    let (code, _) = failure(&world, &["--config", "typo.toml", "project"]);
    assert_eq!(code, 2);
}

fn median_rows(quantiles: &Path) -> Vec<(String, String, String, f64)> {
    let text = fs::read_to_string(quantiles).unwrap();
    text.lines()
        .skip(1)
        .filter_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[3] == "0.5").then(|| (f[0].to_string(), f[2].to_string(), f[1].to_string(), f[4].parse().unwrap()))
        })
        .collect()
}

fn write_external(path: &Path, rows: &[(String, String, String, f64)], scale: f64) {
    let mut s = String::from("country,period_start,indicator,value\n");
    for (c, p, i, v) in rows {
        s.push_str(&format!("{c},{p},{i},{}\n", v * scale));
    }
    fs::write(path, s).unwrap();
}

fn comparison(dir: &Path) -> Vec<(String, String, f64, f64)> {
    let text = fs::read_to_string(dir.join("out/comparison.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("period_start,indicator,countries,md,mpd"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].to_string(), f[3].parse().unwrap(), f[4].parse().unwrap())
        })
        .collect()
}

#[test]
fn comparison_against_own_medians() {
    let world = fresh_world("compare-self");
    ok(&world, &["--config", "hivpop.toml", "project"]);
    let medians = median_rows(&world.join("out/projection_quantiles.csv"));
    let positive: Vec<_> = medians.into_iter().filter(|r| r.3 != 0.0).collect();

    write_external(&world.join("data/external_projection.csv"), &positive, 1.0);
    let table = ok(&world, &["--config", "hivpop.toml", "compare"]);
    assert!(table.starts_with("period"), "{table}");
    let rows = comparison(&world);
    assert!(!rows.is_empty());
    for (_, _, md, mpd) in &rows {
        assert_eq!((*md, *mpd), (0.0, 0.0));
    }

    write_external(&world.join("data/external_projection.csv"), &positive, 1.01);
    ok(&world, &["--config", "hivpop.toml", "compare"]);
    for (p, ind, _, mpd) in comparison(&world) {
        assert!((mpd - (1.0 / 1.01 - 1.0) * 100.0).abs() < 1e-9, "{p} {ind} {mpd}");
    }
}

#[test]
fn comparison_matches_hand_computed_values() {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("compare-hand");
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    let mut q = String::from("country,indicator,period_start,quantile,value\n");
    for (c, ind, values) in [
        ("A", "total_population", [100.0, 110.0, 120.0]),
        ("B", "total_population", [200.0, 220.0, 240.0]),
        ("A", "prevalence", [10.0, 8.0, 6.0]),
    ] {
        for (p, v) in [2015, 2020, 2025].iter().zip(values) {
            q.push_str(&format!("{c},{ind},{p},0.1,{}\n{c},{ind},{p},0.5,{v}\n", v - 1.0));
        }
    }
    fs::write(dir.join("q.csv"), q).unwrap();
    let mut e = String::from("country,period_start,indicator,value\n");
    for (c, ind, values) in [
        ("A", "total_population", [80.0, 100.0, 150.0]),
        ("B", "total_population", [250.0, 200.0, 240.0]),
        ("A", "prevalence", [12.0, 8.0, 3.0]),
    ] {
        for (p, v) in [2015, 2020, 2025].iter().zip(values) {
            e.push_str(&format!("{c},{p},{ind},{v}\n"));
        }
    }
    fs::write(dir.join("ext.csv"), e).unwrap();
    fs::write(dir.join("c.toml"), "[compare]\nexternal = \"ext.csv\"\nquantiles = \"q.csv\"\n").unwrap();
    ok(&dir, &["--config", "c.toml", "compare"]);
    let expected = [
        ("2015", "prevalence", -2.0, -100.0 / 6.0),
        ("2015", "total_population", -15.0, 2.5),
        ("2020", "prevalence", 0.0, 0.0),
        ("2020", "total_population", 15.0, 10.0),
        ("2025", "prevalence", 3.0, 100.0),
        ("2025", "total_population", -15.0, -10.0),
    ];
    let mut got = comparison(&dir);
    got.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
    assert_eq!(got.len(), expected.len());
    for ((p, ind, md, mpd), (ep, eind, emd, empd)) in got.iter().zip(expected) {
        assert_eq!((p.as_str(), ind.as_str()), (ep, eind));
        assert!((md - emd).abs() < 1e-9 && (mpd - empd).abs() < 1e-9, "{p} {ind} {md} {mpd}");
    }
}

#[test]
fn malformed_external_projection_reports_the_line() {
    let world = fresh_world("compare-bad");
    ok(&world, &["--config", "hivpop.toml", "project"]);
    fs::write(
        world.join("data/external_projection.csv"),
        "country,period_start,indicator,value\nG01,2015,total_population,100\nG01,2020,total_population,lots\n",
    )
    .unwrap();
    let (code, stderr) = failure(&world, &["--config", "hivpop.toml", "compare"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("line 3") && stderr.contains("'value'"), "{stderr}");
}

#[test]
fn validate_writes_metric_files() {
    let world = fresh_world("validate");
    let text = ok(&world, &["--config", "hivpop.toml", "validate"]);
    assert!(text.contains("coverage") && text.contains("q45_15"), "{text}");
    let csv = fs::read_to_string(world.join("out/metrics.csv")).unwrap();
    assert!(csv.lines().count() > 20);
    assert!(world.join("out/metrics.txt").exists());
}

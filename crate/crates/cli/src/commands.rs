//! Subcommand implementations. Each returns what it wrote so callers and
//! tests can inspect results without re-reading files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hivpop::ccmpp::{summarize_quantiles, CcmppError, Indicator, DEFAULT_QUANTILES};
use hivpop::io::{
    read_dataset, read_external_projection, read_quantiles, write_comparison, write_dataset,
    write_metrics, write_quantiles, write_trajectories, IoError,
};
use hivpop::persist::{load_models, save_models, PersistError};
use hivpop::pipeline::{calibrate_models, project_countries, CalibrationReport, Dataset, PipelineError, ProjectionSettings};
use hivpop::prevalence::is_generalized_epidemic;
use hivpop::synthetic::{SyntheticError, SyntheticWorld, WorldConfig};
use hivpop::validate::{compare_with_external, run_holdout, ComparisonRow, HoldoutSpec, MetricReport, ValidateError};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};

pub const QUANTILES_FILE: &str = "projection_quantiles.csv";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_TEXT_FILE: &str = "metrics.txt";
pub const COMPARISON_FILE: &str = "comparison.csv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Validate(#[from] ValidateError),
    #[error(transparent)]
    Projection(#[from] CcmppError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
    #[error("nothing to do: {0}")]
    NoWork(String),
    #[error("unknown countries: {0}")]
    UnknownCountry(String),
    #[error("{path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("worker pool: {0}")]
    Pool(String),
}

impl CliError {
    /// Process exit code: 3 for numerical failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        let numerical = match self {
            CliError::Pipeline(e) | CliError::Validate(ValidateError::Pipeline(e)) => e.is_numerical(),
            CliError::Synthetic(SyntheticError::Pipeline(e)) => e.is_numerical(),
            CliError::Synthetic(SyntheticError::Config(_)) => false,
            CliError::Synthetic(_) => true,
            CliError::Projection(e) => matches!(e, CcmppError::Demog { .. } | CcmppError::Mlt { .. }),
            _ => false,
        };
        if numerical {
            3
        } else {
            2
        }
    }
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    cfg.require_dataset()?;
    log::info!("reading inputs from {}", cfg.data_dir.display());
    Ok(read_dataset(&cfg.paths, cfg.base_year)?)
}

/// Countries to work on: the configured list, or every generalized-epidemic
/// country that `available` accepts.
pub fn select_countries(
    cfg: &RunConfig,
    data: &Dataset,
    available: impl Fn(&str) -> bool,
) -> Result<Vec<String>, CliError> {
    match &cfg.countries {
        Some(list) if list.is_empty() => Err(CliError::NoWork("the country filter is empty".into())),
        Some(list) => {
            let unknown: Vec<&str> = list.iter().map(String::as_str).filter(|c| !available(c)).collect();
            if unknown.is_empty() {
                Ok(list.clone())
            } else {
                Err(CliError::UnknownCountry(unknown.join(", ")))
            }
        }
        None => {
            let picked: Vec<String> = data
                .prevalence_reference
                .iter()
                .filter(|(c, path)| is_generalized_epidemic(path) && available(c))
                .map(|(c, _)| c.clone())
                .collect();
            if picked.is_empty() {
                Err(CliError::NoWork("no generalized-epidemic countries in the data".into()))
            } else {
                Ok(picked)
            }
        }
    }
}

pub fn cmd_calibrate(cfg: &RunConfig) -> Result<CalibrationReport, CliError> {
    let data = load_dataset(cfg)?;
    let start = Instant::now();
    let report = with_pool(cfg.threads, || {
        calibrate_models(&data, cfg.calibrate.last_period, &cfg.calibrate.mcmc)
    })??;
    log::info!("calibrated in {:.1}s", start.elapsed().as_secs_f64());
    save_models(&report.models, &cfg.models_dir)?;
    log::info!("wrote models to {}", cfg.models_dir.display());
    Ok(report)
}

pub fn calibration_summary(report: &CalibrationReport) -> String {
    let d = &report.e0_diagnostics;
    let m = &report.models;
    let mut s = String::new();
    let _ = writeln!(s, "e0 model: {} countries, {} increments", d.countries, d.observations);
    let _ = writeln!(s, "  beta_hna {:.6}", m.e0.beta_hna);
    let _ = writeln!(s, "  standardized residual mean square {:.3}", d.standardized_residual_ms);
    for (i, c) in d.chains.iter().enumerate() {
        let _ = writeln!(
            s,
            "  chain {i} acceptance: theta {:.2}, beta {:.2}, variance {:.2}",
            c.theta_acceptance, c.beta_acceptance, c.variance_acceptance
        );
    }
    let mut sd = m.mlt.residual_sd.to_vec();
    sd.sort_by(f64::total_cmp);
    let _ = writeln!(
        s,
        "mortality model residual sd (log rate): min {:.4}, median {:.4}, max {:.4}",
        sd[0],
        sd[sd.len() / 2],
        sd[sd.len() - 1]
    );
    s
}

#[derive(Debug, Clone)]
pub struct ProjectOutput {
    pub countries: Vec<String>,
    pub quantiles: PathBuf,
    pub trajectories: Option<PathBuf>,
}

pub fn cmd_project(cfg: &RunConfig) -> Result<ProjectOutput, CliError> {
    let models = load_models(&cfg.models_dir)?;
    let data = load_dataset(cfg)?;
    let countries = select_countries(cfg, &data, |c| data.base_population.contains_key(c))?;
    let settings = ProjectionSettings {
        trajectories: cfg.trajectories,
        horizon: cfg.horizon,
        seed: cfg.seed,
        noise: cfg.noise,
        epp_noise: cfg.epp_noise,
        detail: false,
    };
    log::info!(
        "projecting {} countries, {} trajectories, to {}",
        countries.len(),
        cfg.trajectories,
        cfg.horizon
    );
    let start = Instant::now();
    let outputs = with_pool(cfg.threads, || project_countries(&data, &models, &countries, &settings))??;
    log::info!("projected in {:.1}s", start.elapsed().as_secs_f64());
    let results: Vec<_> = outputs.into_iter().map(|o| o.projection).collect();
    let rows = summarize_quantiles(&results, &DEFAULT_QUANTILES)?;
    create_dir(&cfg.out)?;
    let quantiles = cfg.out.join(QUANTILES_FILE);
    write_quantiles(&quantiles, &rows)?;
    let trajectories = if cfg.emit_trajectories {
        let p = cfg.out.join(TRAJECTORIES_FILE);
        write_trajectories(&p, &results)?;
        Some(p)
    } else {
        None
    };
    Ok(ProjectOutput {
        countries,
        quantiles,
        trajectories,
    })
}

pub fn holdout_spec(cfg: &RunConfig, countries: Vec<String>) -> HoldoutSpec {
    HoldoutSpec {
        evaluation_period: cfg.validate.evaluation_period,
        levels: cfg.validate.levels.clone(),
        trajectories: cfg.trajectories,
        seed: cfg.seed,
        noise: cfg.noise,
        epp_noise: cfg.epp_noise,
        mcmc: cfg.calibrate.mcmc.clone(),
        ..HoldoutSpec::new(cfg.validate.calibration_end, countries)
    }
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<MetricReport, CliError> {
    let data = load_dataset(cfg)?;
    let eval_end = cfg.validate.evaluation_period + 5;
    let countries = select_countries(cfg, &data, |c| {
        data.population_history
            .get(c)
            .is_some_and(|h| h.iter().any(|p| p.year == eval_end))
    })?;
    let spec = holdout_spec(cfg, countries);
    log::info!(
        "holdout: calibrate through {}, evaluate {}-{} for {} countries",
        spec.calibration_end,
        spec.evaluation_period,
        eval_end,
        spec.countries.len()
    );
    let report = with_pool(cfg.threads, || run_holdout(&spec, &data))??;
    create_dir(&cfg.out)?;
    write_metrics(&cfg.out.join(METRICS_FILE), &report)?;
    write_text(&cfg.out.join(METRICS_TEXT_FILE), &report.to_text())?;
    Ok(report)
}

pub fn cmd_compare(cfg: &RunConfig) -> Result<Vec<ComparisonRow>, CliError> {
    cfg.require_comparison_inputs()?;
    let quantiles = read_quantiles(&cfg.compare.quantiles)?;
    let external = read_external_projection(&cfg.compare.external)?;
    let rows = compare_with_external(&quantiles, &external)?;
    create_dir(&cfg.out)?;
    write_comparison(&cfg.out.join(COMPARISON_FILE), &rows)?;
    Ok(rows)
}

/// Per-period table: mean differences for prevalence and e0, mean
/// proportional differences (percent) for the population indicators.
pub fn comparison_table(rows: &[ComparisonRow]) -> String {
    let columns: [(Indicator, bool); 5] = [
        (Indicator::Prevalence, false),
        (Indicator::FemaleE0, false),
        (Indicator::TotalPopulation, true),
        (Indicator::Population0To4, true),
        (Indicator::Female15To49, true),
    ];
    let mut by_period: BTreeMap<i32, BTreeMap<Indicator, &ComparisonRow>> = BTreeMap::new();
    for r in rows {
        by_period.entry(r.period_start).or_default().insert(r.indicator, r);
    }
    let mut s = String::from("period     MD prevalence   MD e0   MPD total   MPD 0-4   MPD F15-49\n");
    for (p, cells) in &by_period {
        let _ = write!(s, "{p}-{}", p + 5);
        for (ind, proportional) in columns {
            let v = cells.get(&ind).map(|r| if proportional { r.mpd } else { r.md });
            match v {
                Some(v) => {
                    let _ = write!(s, " {v:>11.2}");
                }
                None => s.push_str("           -"),
            }
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub data_dir: PathBuf,
    pub config: PathBuf,
    pub countries: usize,
}

/// Writes a synthetic dataset to `<out>/data` and a matching config file
/// to `<out>/hivpop.toml`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthOutput, CliError> {
    let s = &cfg.synth;
    let world = with_pool(cfg.threads, || {
        SyntheticWorld::generate(WorldConfig {
            evaluated: s.evaluated,
            background_epidemic: s.background_epidemic,
            background_other: s.background_other,
            base_year: s.base_year,
            horizon: s.horizon,
            trajectories: s.trajectories,
            seed: cfg.seed,
            ..WorldConfig::default()
        })
    })??;
    let data_dir = cfg.out.join("data");
    write_dataset(&data_dir, &world.dataset)?;
    let config = cfg.out.join("hivpop.toml");
    let text = format!(
        "# Synthetic world, seed {seed}. Projections start in {base}; the period\n\
         # {base}-{next} is also observed so the holdout can score it.\n\
         data_dir = \"data\"\n\
         base_year = {base}\n\
         horizon = {horizon}\n\
         trajectories = {k}\n\
         seed = {seed}\n\
         out = \"out\"\n\
         \n\
         [validate]\n\
         calibration_end = {base}\n",
        seed = cfg.seed,
        base = s.base_year,
        next = s.base_year + 5,
        horizon = s.horizon,
        k = s.trajectories,
    );
    create_dir(&cfg.out)?;
    write_text(&config, &text)?;
    Ok(SynthOutput {
        data_dir,
        config,
        countries: world.truths.len(),
    })
}

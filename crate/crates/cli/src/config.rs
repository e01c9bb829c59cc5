//! Run configuration: a TOML file plus command-line overrides.
//!
//! Relative paths in the file resolve against the file's directory; paths
//! given on the command line resolve against the working directory.

use std::path::{Path, PathBuf};

use hivpop::e0model::CalibrationConfig;
use hivpop::io::DatasetPaths;
use hivpop::prevalence::EppNoise;
use hivpop::validate::DEFAULT_LEVELS;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("required input file {0} does not exist")]
    MissingFile(PathBuf),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    data_dir: Option<PathBuf>,
    base_year: Option<i32>,
    countries: Option<Vec<String>>,
    horizon: Option<i32>,
    trajectories: Option<usize>,
    seed: Option<u64>,
    noise: Option<bool>,
    epp_noise_sd: Option<f64>,
    out: Option<PathBuf>,
    models_dir: Option<PathBuf>,
    threads: Option<usize>,
    emit_trajectories: Option<bool>,
    #[serde(default)]
    files: FileOverrides,
    #[serde(default)]
    calibrate: CalibrateSection,
    #[serde(default)]
    validate: ValidateSection,
    #[serde(default)]
    compare: CompareSection,
    #[serde(default)]
    synth: SynthSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileOverrides {
    mortality: Option<PathBuf>,
    e0_history: Option<PathBuf>,
    art_coverage: Option<PathBuf>,
    prevalence_median: Option<PathBuf>,
    prevalence_samples: Option<PathBuf>,
    epp_params: Option<PathBuf>,
    base_population: Option<PathBuf>,
    population_history: Option<PathBuf>,
    tfr_trajectories: Option<PathBuf>,
    fertility_pattern: Option<PathBuf>,
    migration: Option<PathBuf>,
    srb: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrateSection {
    last_period: Option<i32>,
    chains: Option<usize>,
    iterations: Option<usize>,
    burn_in: Option<usize>,
    draws: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ValidateSection {
    calibration_end: Option<i32>,
    evaluation_period: Option<i32>,
    levels: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareSection {
    external: Option<PathBuf>,
    quantiles: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthSection {
    evaluated: Option<usize>,
    background_epidemic: Option<usize>,
    background_other: Option<usize>,
    base_year: Option<i32>,
    horizon: Option<i32>,
    trajectories: Option<usize>,
}

/// Values given on the command line; they win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trajectories: Option<usize>,
    pub countries: Option<Vec<String>>,
    pub horizon: Option<i32>,
    pub out: Option<PathBuf>,
    pub emit_trajectories: bool,
    pub no_noise: bool,
}

/// Parses a comma-separated country list. An empty string is an empty list.
pub fn parse_country_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrateOptions {
    /// Last period start used for calibration; all data when `None`.
    pub last_period: Option<i32>,
    pub mcmc: CalibrationConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidateOptions {
    pub calibration_end: i32,
    pub evaluation_period: i32,
    pub levels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareOptions {
    pub external: PathBuf,
    pub quantiles: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub evaluated: usize,
    pub background_epidemic: usize,
    pub background_other: usize,
    pub base_year: i32,
    pub horizon: i32,
    pub trajectories: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub paths: DatasetPaths,
    pub base_year: i32,
    /// `None` selects every generalized-epidemic country in the data.
    pub countries: Option<Vec<String>>,
    pub horizon: i32,
    pub trajectories: usize,
    pub seed: u64,
    pub noise: bool,
    pub epp_noise: EppNoise,
    pub out: PathBuf,
    pub models_dir: PathBuf,
    /// Worker threads; 0 lets the pool choose.
    pub threads: usize,
    pub emit_trajectories: bool,
    pub calibrate: CalibrateOptions,
    pub validate: ValidateOptions,
    pub compare: CompareOptions,
    pub synth: SynthOptions,
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Reads `path` (if any), applies `overrides` and checks the result.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let (file, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_path_buf(),
                    source,
                })?;
                let file: FileConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
                    path: p.to_path_buf(),
                    message: e.to_string(),
                })?;
                let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (file, dir)
            }
            None => (FileConfig::default(), PathBuf::new()),
        };
        let config = Self::build(file, &base, overrides);
        config.check()?;
        Ok(config)
    }

    fn build(f: FileConfig, base: &Path, o: &Overrides) -> Self {
        let data_dir = resolve(base, f.data_dir.unwrap_or_else(|| "data".into()));
        let mut paths = DatasetPaths::in_dir(&data_dir);
        let fo = f.files;
        let set = |slot: &mut PathBuf, v: Option<PathBuf>| {
            if let Some(v) = v {
                *slot = resolve(base, v);
            }
        };
        set(&mut paths.mortality, fo.mortality);
        set(&mut paths.e0_history, fo.e0_history);
        set(&mut paths.art_coverage, fo.art_coverage);
        set(&mut paths.prevalence_median, fo.prevalence_median);
        set(&mut paths.base_population, fo.base_population);
        set(&mut paths.tfr_trajectories, fo.tfr_trajectories);
        set(&mut paths.fertility_pattern, fo.fertility_pattern);
        let opt = |slot: &mut Option<PathBuf>, v: Option<PathBuf>| {
            if let Some(v) = v {
                *slot = Some(resolve(base, v));
            }
        };
        opt(&mut paths.prevalence_samples, fo.prevalence_samples);
        opt(&mut paths.epp_params, fo.epp_params);
        opt(&mut paths.population_history, fo.population_history);
        opt(&mut paths.migration, fo.migration);
        opt(&mut paths.srb, fo.srb);

        let out = o
            .out
            .clone()
            .unwrap_or_else(|| resolve(base, f.out.unwrap_or_else(|| "out".into())));
        let models_dir = f
            .models_dir
            .map(|p| resolve(base, p))
            .unwrap_or_else(|| out.join("models"));
        let base_year = f.base_year.unwrap_or(2015);
        let seed = o.seed.or(f.seed).unwrap_or(1);
        let trajectories = o.trajectories.or(f.trajectories).unwrap_or(1000);
        let sd = f.epp_noise_sd.unwrap_or(0.2);
        let defaults = CalibrationConfig::default();
        let c = f.calibrate;
        let v = f.validate;
        let s = f.synth;
        let calibration_end = v.calibration_end.unwrap_or(base_year - 5);
        Self {
            paths,
            base_year,
            countries: o.countries.clone().or(f.countries),
            horizon: o.horizon.or(f.horizon).unwrap_or(2100),
            trajectories,
            seed,
            noise: !o.no_noise && f.noise.unwrap_or(true),
            epp_noise: EppNoise {
                log_r_sd: sd,
                log_phi_sd: sd,
            },
            models_dir,
            threads: f.threads.unwrap_or(0),
            emit_trajectories: o.emit_trajectories || f.emit_trajectories.unwrap_or(false),
            calibrate: CalibrateOptions {
                last_period: c.last_period,
                mcmc: CalibrationConfig {
                    chains: c.chains.unwrap_or(defaults.chains),
                    iterations: c.iterations.unwrap_or(defaults.iterations),
                    burn_in: c.burn_in.unwrap_or(defaults.burn_in),
                    draws: c.draws.unwrap_or(defaults.draws),
                    seed,
                    priors: defaults.priors,
                },
            },
            validate: ValidateOptions {
                calibration_end,
                evaluation_period: v.evaluation_period.unwrap_or(calibration_end),
                levels: v.levels.unwrap_or_else(|| DEFAULT_LEVELS.to_vec()),
            },
            compare: CompareOptions {
                external: f
                    .compare
                    .external
                    .map(|p| resolve(base, p))
                    .unwrap_or_else(|| data_dir.join("external_projection.csv")),
                quantiles: f
                    .compare
                    .quantiles
                    .map(|p| resolve(base, p))
                    .unwrap_or_else(|| out.join("projection_quantiles.csv")),
            },
            synth: SynthOptions {
                evaluated: s.evaluated.unwrap_or(5),
                background_epidemic: s.background_epidemic.unwrap_or(35),
                background_other: s.background_other.unwrap_or(40),
                base_year: s.base_year.unwrap_or(base_year),
                horizon: s.horizon.unwrap_or(2100),
                trajectories: s.trajectories.unwrap_or(trajectories),
            },
            data_dir,
            out,
        }
    }

    fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.horizon % 5 != 0 {
            return bad(format!("horizon {} is not on the five-year grid", self.horizon));
        }
        if self.base_year % 5 != 0 {
            return bad(format!("base year {} is not on the five-year grid", self.base_year));
        }
        if self.horizon <= self.base_year {
            return bad(format!("horizon {} is not after the base year {}", self.horizon, self.base_year));
        }
        if self.trajectories < 2 {
            return bad(format!("need at least 2 trajectories, got {}", self.trajectories));
        }
        if let Some(l) = self.validate.levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return bad(format!("interval level {l} is not in (0, 1)"));
        }
        let sd = self.epp_noise.log_r_sd;
        if !(sd.is_finite() && sd >= 0.0) {
            return bad(format!("epp_noise_sd {sd} must be finite and non-negative"));
        }
        let m = &self.calibrate.mcmc;
        if m.chains == 0 || m.burn_in >= m.iterations || m.draws == 0 {
            return bad("calibration needs chains > 0, burn_in < iterations and draws > 0".into());
        }
        Ok(())
    }

    /// Every required dataset file must exist.
    pub fn require_dataset(&self) -> Result<(), ConfigError> {
        let p = &self.paths;
        for f in [
            &p.mortality,
            &p.e0_history,
            &p.art_coverage,
            &p.prevalence_median,
            &p.base_population,
            &p.tfr_trajectories,
            &p.fertility_pattern,
        ] {
            if !f.exists() {
                return Err(ConfigError::MissingFile(f.clone()));
            }
        }
        Ok(())
    }

    /// Files `compare` reads.
    pub fn require_comparison_inputs(&self) -> Result<(), ConfigError> {
        for f in [&self.compare.external, &self.compare.quantiles] {
            if !f.exists() {
                return Err(ConfigError::MissingFile(f.clone()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("run.toml");
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn defaults_without_file() {
        let c = RunConfig::load(None, &Overrides::default()).unwrap();
        assert_eq!(c.horizon, 2100);
        assert_eq!(c.trajectories, 1000);
        assert!(c.noise);
        assert_eq!(c.countries, None);
        assert_eq!(c.models_dir, PathBuf::from("out/models"));
        assert_eq!(c.validate.calibration_end, 2010);
    }

    #[test]
    fn file_values_resolve_and_flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "data_dir = \"d\"\nseed = 4\ntrajectories = 50\ncountries = [\"A\"]\n[files]\nart_coverage = \"x/art.csv\"\n",
        );
        let o = Overrides {
            seed: Some(9),
            no_noise: true,
            ..Overrides::default()
        };
        let c = RunConfig::load(Some(&p), &o).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.calibrate.mcmc.seed, 9);
        assert_eq!(c.trajectories, 50);
        assert!(!c.noise);
        assert_eq!(c.countries, Some(vec!["A".to_string()]));
        assert_eq!(c.paths.mortality, dir.path().join("d/mortality.csv"));
        assert_eq!(c.paths.art_coverage, dir.path().join("x/art.csv"));
    }

    #[test]
    fn invalid_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        for text in ["horizon = 2101\n", "trajectories = 1\n", "bogus = 1\n", "[validate]\nlevels = [1.5]\n"] {
            let p = write(dir.path(), text);
            assert!(RunConfig::load(Some(&p), &Overrides::default()).is_err(), "{text}");
        }
    }

    #[test]
    fn country_lists() {
        assert_eq!(parse_country_list("A, B,"), vec!["A", "B"]);
        assert!(parse_country_list("").is_empty());
    }
}

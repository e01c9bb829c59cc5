//! End-to-end orchestration: the input dataset, model calibration and the
//! per-country projection chain prevalence -> e0 -> mortality -> population.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::ccmpp::{
    run_projection, CcmppError, CountryProjection, FertilityInput, FertilityPattern,
    MigrationInput, ProjectionOptions, ProjectionResult, DEFAULT_SRB,
};
use crate::demog::{MortalitySchedule, PopulationPyramid};
use crate::e0model::{
    calibrate_e0_model, simulate_e0_trajectories, CalibrationConfig, CalibrationDiagnostics,
    E0Error, E0History, E0Model, E0SimulationInput, E0TrajectorySet, HnaSeries,
};
use crate::hivmlt::{calibrate_mlt, CalibrationMatrix, MltBasis, MltError};
use crate::prevalence::{
    aggregate_five_year, five_year_means, pointwise_median, scale_trajectories, simulate_epp,
    AnnualPath, EppNoise, EppParams, FiveYearPrevalence, PrevalenceError,
};
use crate::rng::{Domain, SeedTree};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{country}: missing {what}")]
    MissingInput { country: String, what: String },
    #[error("{country}: {reason}")]
    InvalidInput { country: String, reason: String },
    #[error("{country}: {source}")]
    Prevalence {
        country: String,
        source: PrevalenceError,
    },
    #[error(transparent)]
    E0(#[from] E0Error),
    #[error(transparent)]
    Mlt(#[from] MltError),
    #[error("{country}: {source}")]
    Projection { country: String, source: CcmppError },
}

impl PipelineError {
    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            PipelineError::Prevalence { source, .. } => {
                matches!(source, PrevalenceError::IntegrationFailure { .. })
            }
            PipelineError::Mlt(e) => matches!(e, MltError::MatchingFailure { .. } | MltError::RankDeficient(_)),
            PipelineError::E0(e) => matches!(e, E0Error::Calibration(_)),
            PipelineError::Projection { source, .. } => {
                matches!(source, CcmppError::Demog { .. } | CcmppError::Mlt { .. })
            }
            _ => false,
        }
    }
}

/// Stable per-country stream index (64-bit FNV-1a of the code), so
/// filtering countries never changes another country's draws.
pub fn country_stream(code: &str) -> u64 {
    code.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Historical life table for one country-period.
#[derive(Debug, Clone, PartialEq)]
pub struct LifeTableRecord {
    pub country: String,
    pub period_start: i32,
    pub female: MortalitySchedule,
    pub male: MortalitySchedule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct E0Series {
    pub period_starts: Vec<i32>,
    pub e0: Vec<f64>,
}

/// TFR trajectories, `tfr[k][p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfrSeries {
    pub period_starts: Vec<i32>,
    pub tfr: Vec<Vec<f64>>,
}

/// All inputs, keyed by country code.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub life_tables: Vec<LifeTableRecord>,
    pub e0_history: BTreeMap<String, E0Series>,
    /// `(period_start, percent)` pairs.
    pub art: BTreeMap<String, Vec<(i32, f64)>>,
    /// Reference annual prevalence (history and projection).
    pub prevalence_reference: BTreeMap<String, AnnualPath>,
    /// Optional externally generated raw ensembles replacing the built-in
    /// epidemic model.
    pub prevalence_samples: BTreeMap<String, Vec<AnnualPath>>,
    pub epp: BTreeMap<String, EppParams>,
    pub base_population: BTreeMap<String, PopulationPyramid>,
    /// Observed pyramids by year, used by validation.
    pub population_history: BTreeMap<String, Vec<PopulationPyramid>>,
    pub fertility_pattern: BTreeMap<String, FertilityPattern>,
    pub srb: BTreeMap<String, f64>,
    pub tfr: BTreeMap<String, TfrSeries>,
    pub migration: BTreeMap<String, MigrationInput>,
}

impl Dataset {
    /// Five-year mean of the reference prevalence; zero where the country
    /// has no reference or the period is not covered.
    pub fn period_prevalence(&self, country: &str, period_start: i32) -> f64 {
        self.prevalence_reference
            .get(country)
            .and_then(|p| five_year_means(p.start_year, &p.values, &[period_start]).ok())
            .map_or(0.0, |v| v[0])
    }

    /// ART coverage for a period; the last earlier value carries forward and
    /// periods before the first value count as zero.
    pub fn art_at(&self, country: &str, period_start: i32) -> f64 {
        self.art
            .get(country)
            .and_then(|v| {
                v.iter()
                    .filter(|(p, _)| *p <= period_start)
                    .max_by_key(|(p, _)| *p)
                    .map(|(_, a)| *a)
            })
            .unwrap_or(0.0)
    }

    pub fn hna_series(&self, country: &str, periods: &[i32]) -> Result<HnaSeries, E0Error> {
        HnaSeries::new(
            country,
            periods.to_vec(),
            periods.iter().map(|&p| self.period_prevalence(country, p)).collect(),
            periods.iter().map(|&p| self.art_at(country, p)).collect(),
        )
    }

    /// Calibration histories using periods starting at or before
    /// `last_period`.
    pub fn e0_histories(&self, last_period: Option<i32>) -> Result<Vec<E0History>, E0Error> {
        self.e0_history
            .iter()
            .map(|(code, s)| {
                let keep: Vec<usize> = (0..s.period_starts.len())
                    .filter(|&i| last_period.is_none_or(|l| s.period_starts[i] <= l))
                    .collect();
                let periods: Vec<i32> = keep.iter().map(|&i| s.period_starts[i]).collect();
                let e0: Vec<f64> = keep.iter().map(|&i| s.e0[i]).collect();
                let hna = self.hna_series(code, &periods)?;
                E0History::new(code, periods, e0, Some(&hna))
            })
            .collect()
    }

    pub fn mlt_matrix(&self, last_period: Option<i32>) -> Result<CalibrationMatrix, MltError> {
        let records: Vec<&LifeTableRecord> = self
            .life_tables
            .iter()
            .filter(|r| last_period.is_none_or(|l| r.period_start <= l))
            .collect();
        let pairs: Vec<(MortalitySchedule, MortalitySchedule)> =
            records.iter().map(|r| (r.female.clone(), r.male.clone())).collect();
        let labels: Vec<(String, i32, f64)> = records
            .iter()
            .map(|r| {
                (
                    r.country.clone(),
                    r.period_start,
                    self.period_prevalence(&r.country, r.period_start),
                )
            })
            .collect();
        CalibrationMatrix::from_schedules(&pairs, &labels)
    }
}

/// Calibrated models.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub e0: E0Model,
    pub mlt: MltBasis,
}

#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub models: Models,
    pub e0_diagnostics: CalibrationDiagnostics,
}

/// Fits both models on data from periods starting at or before
/// `last_period` (all data when `None`).
pub fn calibrate_models(
    data: &Dataset,
    last_period: Option<i32>,
    config: &CalibrationConfig,
) -> Result<CalibrationReport, PipelineError> {
    let matrix = data.mlt_matrix(last_period)?;
    let mlt = calibrate_mlt(&matrix)?;
    let histories = data.e0_histories(last_period)?;
    let out = calibrate_e0_model(&histories, config)?;
    Ok(CalibrationReport {
        models: Models { e0: out.model, mlt },
        e0_diagnostics: out.diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSettings {
    pub trajectories: usize,
    /// Year at which the projection ends; periods run from the base year up
    /// to it.
    pub horizon: i32,
    pub seed: u64,
    /// Old-age residual noise on generated mortality schedules.
    pub noise: bool,
    pub epp_noise: EppNoise,
    pub detail: bool,
}

impl Default for ProjectionSettings {
    fn default() -> Self {
        Self {
            trajectories: 1000,
            horizon: 2100,
            seed: 1,
            noise: true,
            epp_noise: EppNoise {
                log_r_sd: 0.2,
                log_phi_sd: 0.2,
            },
            detail: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CountryOutput {
    pub projection: ProjectionResult,
    pub prevalence: FiveYearPrevalence,
    pub e0: E0TrajectorySet,
}

fn missing(country: &str, what: &str) -> PipelineError {
    PipelineError::MissingInput {
        country: country.to_string(),
        what: what.to_string(),
    }
}

/// Raw epidemic-model ensemble for a country: supplied samples when present,
/// otherwise simulated from its parameters.
pub fn raw_prevalence_ensemble(
    data: &Dataset,
    country: &str,
    first_year: i32,
    horizon: i32,
    settings: &ProjectionSettings,
    seeds: &SeedTree,
) -> Result<Vec<AnnualPath>, PipelineError> {
    let k = settings.trajectories;
    if let Some(samples) = data.prevalence_samples.get(country) {
        if samples.len() < k {
            return Err(PipelineError::InvalidInput {
                country: country.to_string(),
                reason: format!("{} prevalence samples for {k} trajectories", samples.len()),
            });
        }
        return Ok(samples[..k].to_vec());
    }
    let params = data
        .epp
        .get(country)
        .ok_or_else(|| missing(country, "epidemic-model parameters or prevalence samples"))?;
    if params.t0 > first_year {
        return Err(PipelineError::InvalidInput {
            country: country.to_string(),
            reason: format!("epidemic model starts in {} after the projection start {first_year}", params.t0),
        });
    }
    let stream = country_stream(country);
    (0..k)
        .into_par_iter()
        .map(|traj| {
            let mut rng = seeds.stream(Domain::Epp, stream, traj as u64);
            simulate_epp(params, horizon, &settings.epp_noise, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| PipelineError::Prevalence {
            country: country.to_string(),
            source,
        })
}

/// Five-year prevalence trajectories for the projected periods.
pub fn prevalence_trajectories(
    data: &Dataset,
    country: &str,
    period_starts: &[i32],
    settings: &ProjectionSettings,
    seeds: &SeedTree,
) -> Result<FiveYearPrevalence, PipelineError> {
    let first = period_starts[0];
    let last_year = period_starts[period_starts.len() - 1] + 5;
    let reference = data.prevalence_reference.get(country);
    let active = reference.is_some_and(|r| {
        (first..last_year).any(|y| r.get(y).is_some_and(|v| v > 0.0))
    });
    if !active {
        let n = period_starts.len();
        return Ok(FiveYearPrevalence {
            country: country.to_string(),
            period_starts: period_starts.to_vec(),
            median: vec![0.0; n],
            samples: vec![vec![0.0; n]; settings.trajectories],
        });
    }
    let reference = reference.expect("checked above");
    let wrap = |source| PipelineError::Prevalence {
        country: country.to_string(),
        source,
    };
    let raw = raw_prevalence_ensemble(data, country, first, last_year, settings, seeds)?;
    let raw_median = pointwise_median(&raw).map_err(wrap)?;
    let from = raw_median.start_year;
    let cropped: Option<Vec<f64>> = (from..=raw_median.end_year()).map(|y| reference.get(y)).collect();
    let cropped = cropped.ok_or_else(|| {
        missing(
            country,
            &format!("reference prevalence for {from}-{}", raw_median.end_year()),
        )
    })?;
    let set = scale_trajectories(country, &AnnualPath::new(from, cropped), &raw_median, &raw)
        .map_err(wrap)?;
    aggregate_five_year(&set, period_starts).map_err(wrap)
}

/// Runs one country from its base population to `settings.horizon`.
pub fn project_country(
    data: &Dataset,
    models: &Models,
    country: &str,
    settings: &ProjectionSettings,
) -> Result<CountryOutput, PipelineError> {
    let base = data
        .base_population
        .get(country)
        .ok_or_else(|| missing(country, "base population"))?;
    project_from(data, models, country, base, settings)
}

/// Projection from an explicit base pyramid.
pub fn project_from(
    data: &Dataset,
    models: &Models,
    country: &str,
    base: &PopulationPyramid,
    settings: &ProjectionSettings,
) -> Result<CountryOutput, PipelineError> {
    let seeds = SeedTree::new(settings.seed);
    let stream = country_stream(country);
    let start = base.year;
    if settings.horizon <= start || (settings.horizon - start) % 5 != 0 {
        return Err(PipelineError::InvalidInput {
            country: country.to_string(),
            reason: format!("horizon {} is not a five-year multiple after {start}", settings.horizon),
        });
    }
    if settings.trajectories < 2 {
        return Err(PipelineError::InvalidInput {
            country: country.to_string(),
            reason: "need at least 2 trajectories".into(),
        });
    }
    let periods = ((settings.horizon - start) / 5) as usize;
    let period_starts: Vec<i32> = (0..periods).map(|p| start + 5 * p as i32).collect();

    let prevalence = prevalence_trajectories(data, country, &period_starts, settings, &seeds)?;

    let history = data
        .e0_history
        .get(country)
        .ok_or_else(|| missing(country, "e0 history"))?;
    let start_period = start - 5;
    let e0_start = history
        .period_starts
        .iter()
        .position(|&p| p == start_period)
        .map(|i| history.e0[i])
        .ok_or_else(|| missing(country, &format!("female e0 for period {start_period}")))?;
    let hna_start = data.period_prevalence(country, start_period)
        * (100.0 - data.art_at(country, start_period));
    let art: Vec<f64> = period_starts.iter().map(|&p| data.art_at(country, p)).collect();
    let hna_paths: Vec<Vec<f64>> = prevalence
        .samples
        .iter()
        .map(|s| {
            std::iter::once(hna_start)
                .chain(s.iter().zip(&art).map(|(h, a)| h * (100.0 - a)))
                .collect()
        })
        .collect();
    let e0 = simulate_e0_trajectories(
        &models.e0,
        &E0SimulationInput {
            country,
            e0_start,
            start_period,
            hna_paths: &hna_paths,
            trajectories: settings.trajectories,
        },
        &seeds,
        stream,
    )?;

    let tfr = data.tfr.get(country).ok_or_else(|| missing(country, "TFR trajectories"))?;
    if tfr.tfr.len() < settings.trajectories {
        return Err(PipelineError::InvalidInput {
            country: country.to_string(),
            reason: format!("{} TFR trajectories for {} requested", tfr.tfr.len(), settings.trajectories),
        });
    }
    let pattern = data
        .fertility_pattern
        .get(country)
        .ok_or_else(|| missing(country, "fertility pattern"))?;
    let projection_error = |source| PipelineError::Projection {
        country: country.to_string(),
        source,
    };
    let fertility = FertilityInput::new(
        country,
        *pattern,
        data.srb.get(country).copied().unwrap_or(DEFAULT_SRB),
        tfr.period_starts.clone(),
        tfr.tfr[..settings.trajectories].to_vec(),
    )
    .map_err(projection_error)?;
    let zero_migration = MigrationInput::zero(country);
    let migration = data.migration.get(country).unwrap_or(&zero_migration);

    let projection = run_projection(
        &CountryProjection {
            country,
            base,
            periods,
            basis: &models.mlt,
            fertility: &fertility,
            migration,
            prevalence: &prevalence,
            e0: &e0,
        },
        ProjectionOptions {
            noise: settings.noise,
            detail: settings.detail,
        },
        &seeds,
        stream,
    )
    .map_err(projection_error)?;
    Ok(CountryOutput {
        projection,
        prevalence,
        e0,
    })
}

/// Projects several countries in parallel; output order follows `countries`.
pub fn project_countries(
    data: &Dataset,
    models: &Models,
    countries: &[String],
    settings: &ProjectionSettings,
) -> Result<Vec<CountryOutput>, PipelineError> {
    countries
        .par_iter()
        .map(|c| {
            log::info!("projecting {c}");
            project_country(data, models, c, settings)
        })
        .collect()
}

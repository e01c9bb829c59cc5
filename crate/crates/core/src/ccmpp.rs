//! Cohort-component projection in five-year steps.
//!
//! Half of each period's net migration joins at the start of the step and is
//! exposed to survival and fertility; the other half is added at the end.
//! Births come from the mean of start and end female exposure in each
//! reproductive group and are survived to ages 0-4 with `L[0,5) / (5 l_0)`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::demog::{
    build_life_table, summary_index, survivorship_ratios, AConvention, AbridgedLifeTable,
    DemogError, PopulationPyramid, Sex, SummaryIndex, Survivorship, FIVE_YEAR_GROUPS,
};
use crate::e0model::E0TrajectorySet;
use crate::hivmlt::{generate_schedule, JointSchedulePair, MltBasis, MltError};
use crate::prevalence::FiveYearPrevalence;
use crate::rng::{Domain, SeedTree};

/// Five-year groups 15-19 through 45-49.
pub const REPRODUCTIVE_GROUPS: std::ops::Range<usize> = 3..10;
pub const DEFAULT_SRB: f64 = 1.05;
pub const DEFAULT_QUANTILES: [f64; 5] = [0.025, 0.1, 0.5, 0.9, 0.975];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CcmppError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("trajectory alignment: {0}")]
    Alignment(String),
    #[error("trajectory {trajectory}, period {period_start}: {source}")]
    Demog {
        trajectory: usize,
        period_start: i32,
        source: DemogError,
    },
    #[error("trajectory {trajectory}, period {period_start}: {source}")]
    Mlt {
        trajectory: usize,
        period_start: i32,
        source: MltError,
    },
    #[error("quantiles need at least 2 trajectories, got {0}")]
    TooFewTrajectories(usize),
}

/// Share of TFR in each reproductive group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FertilityPattern([f64; 7]);

impl FertilityPattern {
    pub fn new(proportions: &[f64]) -> Result<Self, CcmppError> {
        if proportions.len() != REPRODUCTIVE_GROUPS.len() {
            return Err(CcmppError::Shape(format!(
                "fertility pattern needs {} groups, got {}",
                REPRODUCTIVE_GROUPS.len(),
                proportions.len()
            )));
        }
        if proportions.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(CcmppError::InvalidInput("negative fertility proportion".into()));
        }
        let sum: f64 = proportions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CcmppError::InvalidInput(format!(
                "fertility proportions sum to {sum}, not 1"
            )));
        }
        let mut p = [0.0; 7];
        p.copy_from_slice(proportions);
        Ok(Self(p))
    }

    pub fn proportions(&self) -> &[f64; 7] {
        &self.0
    }

    /// Per-year rates on the five-year grid: `TFR * share / 5`.
    pub fn asfr(&self, tfr: f64) -> [f64; FIVE_YEAR_GROUPS] {
        let mut out = [0.0; FIVE_YEAR_GROUPS];
        for (o, p) in out[REPRODUCTIVE_GROUPS].iter_mut().zip(&self.0) {
            *o = tfr * p / 5.0;
        }
        out
    }
}

/// TFR by trajectory and period for one country, with its fixed age pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct FertilityInput {
    pub country: String,
    pub pattern: FertilityPattern,
    pub srb: f64,
    pub period_starts: Vec<i32>,
    /// `tfr[k][p]`, children per woman.
    pub tfr: Vec<Vec<f64>>,
}

impl FertilityInput {
    pub fn new(
        country: &str,
        pattern: FertilityPattern,
        srb: f64,
        period_starts: Vec<i32>,
        tfr: Vec<Vec<f64>>,
    ) -> Result<Self, CcmppError> {
        if !(srb.is_finite() && srb > 0.0) {
            return Err(CcmppError::InvalidInput(format!("sex ratio at birth {srb}")));
        }
        for (k, row) in tfr.iter().enumerate() {
            if row.len() != period_starts.len() {
                return Err(CcmppError::Shape(format!(
                    "{country}: TFR trajectory {k} has {} periods, expected {}",
                    row.len(),
                    period_starts.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(CcmppError::InvalidInput(format!(
                    "{country}: TFR {v} in trajectory {k}"
                )));
            }
        }
        Ok(Self {
            country: country.to_string(),
            pattern,
            srb,
            period_starts,
            tfr,
        })
    }
}

/// Deterministic net migrants by period, sex and five-year group.
#[derive(Debug, Clone, PartialEq)]
pub struct MigrationInput {
    pub country: String,
    pub period_starts: Vec<i32>,
    pub female: Vec<[f64; FIVE_YEAR_GROUPS]>,
    pub male: Vec<[f64; FIVE_YEAR_GROUPS]>,
}

impl MigrationInput {
    pub fn zero(country: &str) -> Self {
        Self {
            country: country.to_string(),
            period_starts: Vec::new(),
            female: Vec::new(),
            male: Vec::new(),
        }
    }

    /// Counts for one period; zero where the period is not listed.
    pub fn for_period(&self, period_start: i32) -> [[f64; FIVE_YEAR_GROUPS]; 2] {
        match self.period_starts.iter().position(|&p| p == period_start) {
            Some(i) => [self.female[i], self.male[i]],
            None => [[0.0; FIVE_YEAR_GROUPS]; 2],
        }
    }
}

/// Flows over one step, `[female, male]`. Migration is the amount actually
/// applied after flooring counts at zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepAccount {
    pub births: [f64; 2],
    pub deaths: [f64; 2],
    pub migration: [f64; 2],
}

/// One sex's inputs to the generic kernel on an `n`-group grid.
#[derive(Debug, Clone, Copy)]
pub struct KernelSex<'a> {
    pub start: &'a [f64],
    /// `n - 1` ratios; the last pools the final two groups into the open group.
    pub ratios: &'a [f64],
    pub birth_survival: f64,
    pub migration: &'a [f64],
}

/// Cohort-component step on an arbitrary grid of `n >= 2` groups, female
/// first. `asfr` holds per-year rates by group and must be zero in group 0.
pub fn kernel_step(
    sexes: [KernelSex<'_>; 2],
    asfr: &[f64],
    srb: f64,
) -> Result<([Vec<f64>; 2], StepAccount), CcmppError> {
    let n = sexes[0].start.len();
    if n < 2 {
        return Err(CcmppError::Shape("need at least two age groups".into()));
    }
    for s in &sexes {
        if s.start.len() != n || s.ratios.len() != n - 1 || s.migration.len() != n {
            return Err(CcmppError::Shape(format!(
                "kernel inputs for {n} groups have mismatched lengths"
            )));
        }
        if s.ratios.iter().chain([&s.birth_survival]).any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(CcmppError::InvalidInput("survival factor not finite and non-negative".into()));
        }
        if s.migration.iter().chain(s.start).any(|v| !v.is_finite()) {
            return Err(CcmppError::InvalidInput("non-finite count".into()));
        }
    }
    if asfr.len() != n || asfr[0] != 0.0 {
        return Err(CcmppError::Shape("fertility rates must cover the grid and be zero at ages 0-4".into()));
    }

    let mut account = StepAccount::default();
    let mut exposed = [vec![0.0; n], vec![0.0; n]];
    let mut end = [vec![0.0; n], vec![0.0; n]];
    for (s, k) in sexes.iter().enumerate() {
        for i in 0..n {
            exposed[s][i] = (k.start[i] + 0.5 * k.migration[i]).max(0.0);
            account.migration[s] += exposed[s][i] - k.start[i];
        }
        for i in 0..n - 2 {
            end[s][i + 1] = exposed[s][i] * k.ratios[i];
            account.deaths[s] += exposed[s][i] * (1.0 - k.ratios[i]);
        }
        let pooled = exposed[s][n - 2] + exposed[s][n - 1];
        end[s][n - 1] = pooled * k.ratios[n - 2];
        account.deaths[s] += pooled * (1.0 - k.ratios[n - 2]);
    }

    let births: f64 = (1..n)
        .map(|a| asfr[a] * 5.0 * 0.5 * (exposed[0][a] + end[0][a]))
        .sum();
    let by_sex = [births / (1.0 + srb), births * srb / (1.0 + srb)];
    for (s, k) in sexes.iter().enumerate() {
        account.births[s] = by_sex[s];
        end[s][0] = by_sex[s] * k.birth_survival;
        account.deaths[s] += by_sex[s] * (1.0 - k.birth_survival);
        for i in 0..n {
            let v = (end[s][i] + 0.5 * k.migration[i]).max(0.0);
            account.migration[s] += v - end[s][i];
            end[s][i] = v;
        }
    }
    Ok((end, account))
}

/// Period fertility for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodFertility {
    pub tfr: f64,
    pub pattern: FertilityPattern,
    pub srb: f64,
}

/// Advances a pyramid by five years using a female and a male life table.
pub fn project_step(
    pyramid: &PopulationPyramid,
    tables: [&AbridgedLifeTable; 2],
    fertility: &PeriodFertility,
    migration: &[[f64; FIVE_YEAR_GROUPS]; 2],
) -> Result<(PopulationPyramid, StepAccount), CcmppError> {
    if tables[0].schedule.sex() != Sex::Female || tables[1].schedule.sex() != Sex::Male {
        return Err(CcmppError::Shape("life tables must be ordered female, male".into()));
    }
    let surv = [
        survivorship_ratios(tables[0]).map_err(|e| CcmppError::InvalidInput(e.to_string()))?,
        survivorship_ratios(tables[1]).map_err(|e| CcmppError::InvalidInput(e.to_string()))?,
    ];
    step_with_survivorship(pyramid, [&surv[0], &surv[1]], fertility, migration)
}

pub fn step_with_survivorship(
    pyramid: &PopulationPyramid,
    surv: [&Survivorship; 2],
    fertility: &PeriodFertility,
    migration: &[[f64; FIVE_YEAR_GROUPS]; 2],
) -> Result<(PopulationPyramid, StepAccount), CcmppError> {
    let asfr = fertility.pattern.asfr(fertility.tfr);
    let sexes = [0, 1].map(|s| KernelSex {
        start: if s == 0 { &pyramid.female } else { &pyramid.male },
        ratios: &surv[s].ratios,
        birth_survival: surv[s].births,
        migration: &migration[s],
    });
    let ([f, m], account) = kernel_step(sexes, &asfr, fertility.srb)?;
    let next = PopulationPyramid::new(pyramid.year + 5, &f, &m)
        .map_err(|e| CcmppError::InvalidInput(e.to_string()))?;
    Ok((next, account))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Indicator {
    TotalPopulation,
    Population0To4,
    Female15To49,
    FemaleE0,
    FemaleQ35_10,
    Prevalence,
}

impl Indicator {
    pub const ALL: [Indicator; 6] = [
        Indicator::TotalPopulation,
        Indicator::Population0To4,
        Indicator::Female15To49,
        Indicator::FemaleE0,
        Indicator::FemaleQ35_10,
        Indicator::Prevalence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Indicator::TotalPopulation => "total_population",
            Indicator::Population0To4 => "population_0_4",
            Indicator::Female15To49 => "female_15_49",
            Indicator::FemaleE0 => "female_e0",
            Indicator::FemaleQ35_10 => "female_q35_10",
            Indicator::Prevalence => "prevalence",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Indicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Indicator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Indicator::ALL
            .into_iter()
            .find(|i| i.as_str() == s)
            .ok_or_else(|| format!("unknown indicator `{s}`"))
    }
}

/// One trajectory's output. Population indicators refer to the end of each
/// period. Female e0 is the simulated input level; 35q10 comes from the
/// period's (possibly perturbed) life table. The detail vectors are filled
/// only when requested.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryResult {
    /// `indicators[p][Indicator::index()]`.
    pub indicators: Vec<[f64; 6]>,
    pub pyramids: Vec<PopulationPyramid>,
    pub schedules: Vec<JointSchedulePair>,
    pub accounts: Vec<StepAccount>,
}

impl TrajectoryResult {
    pub fn series(&self, indicator: Indicator) -> Vec<f64> {
        self.indicators.iter().map(|row| row[indicator.index()]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub country: String,
    pub period_starts: Vec<i32>,
    pub trajectories: Vec<TrajectoryResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProjectionOptions {
    pub noise: bool,
    /// Keep pyramids, schedules and step accounts.
    pub detail: bool,
}

/// Everything one country's projection needs. Trajectory `k` pairs
/// prevalence path `k`, e0 path `k` and TFR path `k`.
#[derive(Debug, Clone, Copy)]
pub struct CountryProjection<'a> {
    pub country: &'a str,
    pub base: &'a PopulationPyramid,
    pub periods: usize,
    pub basis: &'a MltBasis,
    pub fertility: &'a FertilityInput,
    pub migration: &'a MigrationInput,
    pub prevalence: &'a FiveYearPrevalence,
    pub e0: &'a E0TrajectorySet,
}

fn offset(starts: &[i32], first: i32, periods: usize, what: &str) -> Result<usize, CcmppError> {
    let i = starts.iter().position(|&p| p == first).ok_or_else(|| {
        CcmppError::Alignment(format!("{what} does not contain period {first}"))
    })?;
    if i + periods > starts.len() || (0..periods).any(|p| starts[i + p] != first + 5 * p as i32) {
        return Err(CcmppError::Alignment(format!(
            "{what} does not cover {periods} consecutive periods from {first}"
        )));
    }
    Ok(i)
}

pub fn run_projection(
    input: &CountryProjection<'_>,
    options: ProjectionOptions,
    seeds: &SeedTree,
    country_stream: u64,
) -> Result<ProjectionResult, CcmppError> {
    let country = input.country;
    for (what, c) in [
        ("fertility", &input.fertility.country),
        ("prevalence", &input.prevalence.country),
        ("e0", &input.e0.country),
    ] {
        if c != country {
            return Err(CcmppError::Alignment(format!("{what} input is for {c}, not {country}")));
        }
    }
    let k = input.e0.values.len();
    if input.prevalence.samples.len() != k || input.fertility.tfr.len() != k {
        return Err(CcmppError::Alignment(format!(
            "{country}: {k} e0, {} prevalence and {} fertility trajectories",
            input.prevalence.samples.len(),
            input.fertility.tfr.len()
        )));
    }
    if let Some((j, &src)) = input
        .e0
        .hna_path_index
        .iter()
        .enumerate()
        .find(|(j, src)| *j != **src)
    {
        return Err(CcmppError::Alignment(format!(
            "{country}: e0 trajectory {j} was driven by prevalence path {src}"
        )));
    }
    let first = input.base.year;
    let n = input.periods;
    let e0_off = offset(&input.e0.period_starts, first, n, "e0 trajectories")?;
    let prev_off = offset(&input.prevalence.period_starts, first, n, "prevalence trajectories")?;
    let tfr_off = offset(&input.fertility.period_starts, first, n, "fertility trajectories")?;
    let period_starts: Vec<i32> = (0..n).map(|p| first + 5 * p as i32).collect();

    let trajectories = (0..k)
        .into_par_iter()
        .map(|traj| {
            let mut rng = seeds.stream(Domain::MltNoise, country_stream, traj as u64);
            let mut out = TrajectoryResult {
                indicators: Vec::with_capacity(n),
                pyramids: Vec::new(),
                schedules: Vec::new(),
                accounts: Vec::new(),
            };
            let mut pyramid = input.base.clone();
            for p in 0..n {
                let period_start = period_starts[p];
                let e0 = input.e0.values[traj][e0_off + p];
                let prevalence = input.prevalence.samples[traj][prev_off + p];
                let pair = generate_schedule(input.basis, e0, prevalence, &mut rng, options.noise)
                    .map_err(|source| CcmppError::Mlt {
                        trajectory: traj,
                        period_start,
                        source,
                    })?;
                let demog = |source| CcmppError::Demog {
                    trajectory: traj,
                    period_start,
                    source,
                };
                let female = build_life_table(&pair.female, AConvention::default()).map_err(demog)?;
                let male = build_life_table(&pair.male, AConvention::default()).map_err(demog)?;
                let fertility = PeriodFertility {
                    tfr: input.fertility.tfr[traj][tfr_off + p],
                    pattern: input.fertility.pattern,
                    srb: input.fertility.srb,
                };
                let migration = input.migration.for_period(period_start);
                let (next, account) = project_step(&pyramid, [&female, &male], &fertility, &migration)
                    .map_err(|e| match e {
                        CcmppError::InvalidInput(m) => {
                            CcmppError::InvalidInput(format!("trajectory {traj}, period {period_start}: {m}"))
                        }
                        other => other,
                    })?;
                let mut row = [0.0; 6];
                row[Indicator::TotalPopulation.index()] = next.total();
                row[Indicator::Population0To4.index()] = next.aged_0_4();
                row[Indicator::Female15To49.index()] = next.female_15_49();
                row[Indicator::FemaleE0.index()] = e0;
                row[Indicator::FemaleQ35_10.index()] = summary_index(&female, SummaryIndex::Q35_10);
                row[Indicator::Prevalence.index()] = prevalence;
                out.indicators.push(row);
                if options.detail {
                    out.pyramids.push(next.clone());
                    out.schedules.push(pair);
                    out.accounts.push(account);
                }
                pyramid = next;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>, CcmppError>>()?;
    Ok(ProjectionResult {
        country: country.to_string(),
        period_starts,
        trajectories,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileRow {
    pub country: String,
    pub indicator: Indicator,
    pub period_start: i32,
    pub quantile: f64,
    pub value: f64,
}

/// Empirical quantiles per country, indicator and period.
pub fn summarize_quantiles(
    results: &[ProjectionResult],
    probs: &[f64],
) -> Result<Vec<QuantileRow>, CcmppError> {
    let mut rows = Vec::new();
    for r in results {
        if r.trajectories.len() < 2 {
            return Err(CcmppError::TooFewTrajectories(r.trajectories.len()));
        }
        for ind in Indicator::ALL {
            for (p, &period_start) in r.period_starts.iter().enumerate() {
                let mut v: Vec<f64> = r
                    .trajectories
                    .iter()
                    .map(|t| t.indicators[p][ind.index()])
                    .collect();
                v.sort_by(f64::total_cmp);
                for &q in probs {
                    rows.push(QuantileRow {
                        country: r.country.clone(),
                        indicator: ind,
                        period_start,
                        quantile: q,
                        value: crate::stats::quantile_sorted(&v, q),
                    });
                }
            }
        }
    }
    Ok(rows)
}

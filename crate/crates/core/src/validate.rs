//! Out-of-sample evaluation: error and coverage metrics, a one-period
//! holdout runner, and comparison against an external projection export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::ccmpp::{Indicator, QuantileRow};
use crate::demog::{
    build_life_table, life_expectancy_at_birth, summary_index, AConvention, MortalitySchedule,
    Sex, SummaryIndex, ABRIDGED_GROUPS,
};
use crate::e0model::CalibrationConfig;
use crate::pipeline::{calibrate_models, project_from, Dataset, Models, PipelineError, ProjectionSettings};
use crate::prevalence::EppNoise;
use crate::stats::quantile_sorted;

pub const DEFAULT_LEVELS: [f64; 3] = [0.8, 0.9, 0.95];

#[derive(Debug, Error)]
pub enum ValidateError {
    #[error("alignment: {0}")]
    Alignment(String),
    #[error("malformed interval {index}: lower {lower} > upper {upper}")]
    MalformedInterval { index: usize, lower: f64, upper: f64 },
    #[error("external value is zero for {country}, period {period_start}")]
    ZeroExternal { country: String, period_start: i32 },
    #[error("invalid holdout settings: {0}")]
    Spec(String),
    #[error("no countries to evaluate")]
    NoWork,
    #[error("{country}: missing {what}")]
    MissingObservation { country: String, what: String },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

fn keyed(values: &[(String, f64)], what: &str) -> Result<BTreeMap<String, f64>, ValidateError> {
    let mut map = BTreeMap::new();
    for (c, v) in values {
        if map.insert(c.clone(), *v).is_some() {
            return Err(ValidateError::Alignment(format!("{c} appears twice in {what}")));
        }
    }
    Ok(map)
}

/// Pairs values by country; both sides must list the same countries.
fn align(
    ours: &[(String, f64)],
    theirs: &[(String, f64)],
) -> Result<Vec<(String, f64, f64)>, ValidateError> {
    let a = keyed(ours, "predictions")?;
    let b = keyed(theirs, "observations")?;
    if let Some(c) = a.keys().find(|c| !b.contains_key(*c)) {
        return Err(ValidateError::Alignment(format!("no observed value for {c}")));
    }
    if let Some(c) = b.keys().find(|c| !a.contains_key(*c)) {
        return Err(ValidateError::Alignment(format!("no prediction for {c}")));
    }
    Ok(a.into_iter().map(|(c, x)| {
        let y = b[&c];
        (c, x, y)
    }).collect())
}

/// Mean over countries of `|median - observed|`.
pub fn mae(medians: &[(String, f64)], observed: &[(String, f64)]) -> Result<f64, ValidateError> {
    let pairs = align(medians, observed)?;
    if pairs.is_empty() {
        return Err(ValidateError::NoWork);
    }
    Ok(pairs.iter().map(|(_, m, o)| (m - o).abs()).sum::<f64>() / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

/// Percent of observations inside their closed interval.
pub fn coverage(intervals: &[Interval], observed: &[f64]) -> Result<f64, ValidateError> {
    if intervals.len() != observed.len() {
        return Err(ValidateError::Alignment(format!(
            "{} intervals for {} observations",
            intervals.len(),
            observed.len()
        )));
    }
    if observed.is_empty() {
        return Err(ValidateError::NoWork);
    }
    let mut hits = 0usize;
    for (index, (iv, &y)) in intervals.iter().zip(observed).enumerate() {
        if iv.lower > iv.upper {
            return Err(ValidateError::MalformedInterval {
                index,
                lower: iv.lower,
                upper: iv.upper,
            });
        }
        hits += usize::from(iv.lower <= y && y <= iv.upper);
    }
    Ok(100.0 * hits as f64 / observed.len() as f64)
}

/// Mean of `ours - external`.
pub fn mean_difference(ours: &[(String, f64)], external: &[(String, f64)]) -> Result<f64, ValidateError> {
    let pairs = align(ours, external)?;
    if pairs.is_empty() {
        return Err(ValidateError::NoWork);
    }
    Ok(pairs.iter().map(|(_, a, b)| a - b).sum::<f64>() / pairs.len() as f64)
}

/// Mean of `(ours - external) / external`, in percent.
pub fn mean_proportional_difference(
    ours: &[(String, f64)],
    external: &[(String, f64)],
) -> Result<f64, ValidateError> {
    let pairs = align(ours, external)?;
    if pairs.is_empty() {
        return Err(ValidateError::NoWork);
    }
    let mut sum = 0.0;
    for (c, a, b) in &pairs {
        if *b == 0.0 {
            return Err(ValidateError::ZeroExternal {
                country: c.clone(),
                period_start: 0,
            });
        }
        sum += (a - b) / b;
    }
    Ok(100.0 * sum / pairs.len() as f64)
}

/// One line of an external projection export.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalRecord {
    pub country: String,
    pub period_start: i32,
    pub indicator: Indicator,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub period_start: i32,
    pub indicator: Indicator,
    pub countries: usize,
    pub md: f64,
    pub mpd: f64,
}

/// MD and MPD of our medians against an external export, per period and
/// indicator.
pub fn compare_with_external(
    quantiles: &[QuantileRow],
    external: &[ExternalRecord],
) -> Result<Vec<ComparisonRow>, ValidateError> {
    let medians: BTreeMap<(i32, Indicator, &str), f64> = quantiles
        .iter()
        .filter(|q| q.quantile == 0.5)
        .map(|q| ((q.period_start, q.indicator, q.country.as_str()), q.value))
        .collect();
    let mut groups: BTreeMap<(i32, Indicator), (Vec<(String, f64)>, Vec<(String, f64)>)> = BTreeMap::new();
    for r in external {
        let ours = medians
            .get(&(r.period_start, r.indicator, r.country.as_str()))
            .ok_or_else(|| {
                ValidateError::Alignment(format!(
                    "no projection for {} {} {}",
                    r.country, r.indicator, r.period_start
                ))
            })?;
        if r.value == 0.0 {
            return Err(ValidateError::ZeroExternal {
                country: r.country.clone(),
                period_start: r.period_start,
            });
        }
        let g = groups.entry((r.period_start, r.indicator)).or_default();
        g.0.push((r.country.clone(), *ours));
        g.1.push((r.country.clone(), r.value));
    }
    groups
        .into_iter()
        .map(|((period_start, indicator), (ours, theirs))| {
            Ok(ComparisonRow {
                period_start,
                indicator,
                countries: ours.len(),
                md: mean_difference(&ours, &theirs)?,
                mpd: mean_proportional_difference(&ours, &theirs)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutSpec {
    /// Data from periods ending at or before this year are used for
    /// calibration.
    pub calibration_end: i32,
    /// Start of the evaluated five-year period.
    pub evaluation_period: i32,
    pub countries: Vec<String>,
    pub levels: Vec<f64>,
    pub trajectories: usize,
    pub seed: u64,
    pub noise: bool,
    pub epp_noise: EppNoise,
    pub mcmc: CalibrationConfig,
}

impl HoldoutSpec {
    pub fn new(calibration_end: i32, countries: Vec<String>) -> Self {
        let settings = ProjectionSettings::default();
        Self {
            calibration_end,
            evaluation_period: calibration_end,
            countries,
            levels: DEFAULT_LEVELS.to_vec(),
            trajectories: settings.trajectories,
            seed: settings.seed,
            noise: settings.noise,
            epp_noise: settings.epp_noise,
            mcmc: CalibrationConfig::default(),
        }
    }

    pub fn check(&self) -> Result<(), ValidateError> {
        if self.countries.is_empty() {
            return Err(ValidateError::NoWork);
        }
        if self.evaluation_period < self.calibration_end {
            return Err(ValidateError::Spec(format!(
                "evaluation period {} starts before the calibration end {}",
                self.evaluation_period, self.calibration_end
            )));
        }
        if self.trajectories < 100 {
            return Err(ValidateError::Spec("intervals need at least 100 trajectories".into()));
        }
        if self.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return Err(ValidateError::Spec("interval levels must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn settings(&self) -> ProjectionSettings {
        ProjectionSettings {
            trajectories: self.trajectories,
            horizon: self.evaluation_period + 5,
            seed: self.seed,
            noise: self.noise,
            epp_noise: self.epp_noise,
            detail: true,
        }
    }
}

/// Mortality summaries scored by MAE alongside e0.
pub const Q_INDICES: [SummaryIndex; 3] = [SummaryIndex::Q5_0, SummaryIndex::Q45_15, SummaryIndex::Q35_10];

/// Sorted predictive samples for one country and the evaluated period.
#[derive(Debug, Clone, PartialEq)]
pub struct CountryPredictive {
    pub country: String,
    pub e0: [Vec<f64>; 2],
    /// `q[sex][i]` for [`Q_INDICES`]`[i]`, per 1000.
    pub q: [[Vec<f64>; 3]; 2],
    /// `mx[sex][age]`.
    pub mx: [Vec<Vec<f64>>; 2],
    pub total_population: Vec<f64>,
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn interval(sorted: &[f64], level: f64) -> Interval {
    Interval {
        lower: quantile_sorted(sorted, 0.5 * (1.0 - level)),
        upper: quantile_sorted(sorted, 0.5 * (1.0 + level)),
    }
}

#[derive(Debug, Clone)]
pub struct PreparedHoldout {
    pub spec: HoldoutSpec,
    pub models: Models,
    pub predictive: Vec<CountryPredictive>,
}

/// Calibrates on the truncated data and builds predictive distributions for
/// the evaluated period.
pub fn prepare_holdout(spec: &HoldoutSpec, data: &Dataset) -> Result<PreparedHoldout, ValidateError> {
    spec.check()?;
    let report = calibrate_models(data, Some(spec.calibration_end - 5), &spec.mcmc)?;
    for c in &report.e0_diagnostics.chains {
        log::info!(
            "e0 chain acceptance: theta {:.2}, beta {:.2}, variance {:.2}",
            c.theta_acceptance,
            c.beta_acceptance,
            c.variance_acceptance
        );
    }
    prepare_with_models(spec, data, report.models)
}

/// As [`prepare_holdout`] with models already calibrated on the truncated
/// data.
pub fn prepare_with_models(
    spec: &HoldoutSpec,
    data: &Dataset,
    models: Models,
) -> Result<PreparedHoldout, ValidateError> {
    spec.check()?;
    let settings = spec.settings();
    let mut predictive = Vec::with_capacity(spec.countries.len());
    for country in &spec.countries {
        let base = data
            .population_history
            .get(country)
            .and_then(|v| v.iter().find(|p| p.year == spec.evaluation_period))
            .or_else(|| data.base_population.get(country).filter(|p| p.year == spec.evaluation_period))
            .ok_or_else(|| ValidateError::MissingObservation {
                country: country.clone(),
                what: format!("population in {}", spec.evaluation_period),
            })?;
        let out = project_from(data, &models, country, base, &settings)?;
        let mut e0 = [Vec::new(), Vec::new()];
        let mut q: [[Vec<f64>; 3]; 2] = Default::default();
        let mut mx = [vec![Vec::new(); ABRIDGED_GROUPS], vec![Vec::new(); ABRIDGED_GROUPS]];
        let mut total = Vec::new();
        for (k, t) in out.projection.trajectories.iter().enumerate() {
            let pair = &t.schedules[0];
            for (s, sex) in Sex::BOTH.into_iter().enumerate() {
                let sched = pair.schedule(sex);
                let table = build_life_table(sched, AConvention::default())
                    .map_err(|e| PipelineError::InvalidInput {
                        country: country.clone(),
                        reason: e.to_string(),
                    })?;
                for (i, idx) in Q_INDICES.into_iter().enumerate() {
                    q[s][i].push(1000.0 * summary_index(&table, idx));
                }
                for (a, v) in sched.rates().iter().enumerate() {
                    mx[s][a].push(*v);
                }
                if sex == Sex::Male {
                    e0[s].push(table.e0());
                }
            }
            e0[0].push(out.e0.values[k][0]);
            total.push(t.indicators[0][Indicator::TotalPopulation.index()]);
        }
        predictive.push(CountryPredictive {
            country: country.clone(),
            e0: e0.map(sorted),
            q: q.map(|v| v.map(sorted)),
            mx: mx.map(|v| v.into_iter().map(sorted).collect()),
            total_population: sorted(total),
        });
    }
    Ok(PreparedHoldout {
        spec: spec.clone(),
        models,
        predictive,
    })
}

/// Observed values for one country and the evaluated period.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub country: String,
    pub mx: [[f64; ABRIDGED_GROUPS]; 2],
    pub e0: [f64; 2],
    pub total_population: f64,
}

impl Observation {
    /// Summary index per 1000 from the observed rates.
    pub fn q_index(&self, s: usize, index: SummaryIndex) -> Result<f64, ValidateError> {
        let sex = Sex::BOTH[s];
        let sched = MortalitySchedule::new(sex, &self.mx[s]).map_err(|e| ValidateError::MissingObservation {
            country: self.country.clone(),
            what: format!("valid {sex} rates ({e})"),
        })?;
        let table = build_life_table(&sched, AConvention::default()).map_err(|e| {
            ValidateError::MissingObservation {
                country: self.country.clone(),
                what: format!("valid {sex} life table ({e})"),
            }
        })?;
        Ok(1000.0 * summary_index(&table, index))
    }
}

/// Reads the evaluated period's observations from the dataset: life tables,
/// female e0 (male e0 from the male table) and the end-of-period
/// population.
pub fn observations_from(spec: &HoldoutSpec, data: &Dataset) -> Result<Vec<Observation>, ValidateError> {
    let p = spec.evaluation_period;
    spec.countries
        .iter()
        .map(|c| {
            let missing = |what: String| ValidateError::MissingObservation {
                country: c.clone(),
                what,
            };
            let lt = data
                .life_tables
                .iter()
                .find(|r| &r.country == c && r.period_start == p)
                .ok_or_else(|| missing(format!("life table for {p}")))?;
            let e0_f = data
                .e0_history
                .get(c)
                .and_then(|s| s.period_starts.iter().position(|&q| q == p).map(|i| s.e0[i]))
                .ok_or_else(|| missing(format!("female e0 for {p}")))?;
            let pop = data
                .population_history
                .get(c)
                .and_then(|v| v.iter().find(|x| x.year == p + 5))
                .ok_or_else(|| missing(format!("population in {}", p + 5)))?;
            Ok(Observation {
                country: c.clone(),
                mx: [*lt.female.rates(), *lt.male.rates()],
                e0: [
                    e0_f,
                    life_expectancy_at_birth(Sex::Male, lt.male.rates(), AConvention::default()),
                ],
                total_population: pop.total(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub indicator: String,
    pub sex: String,
    /// Nominal interval level in percent for coverage rows.
    pub level: Option<f64>,
    pub value: f64,
}

/// MAE per indicator (q-indices per 1000) and coverage percentages.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub countries: usize,
    pub observations: usize,
}

impl MetricReport {
    pub fn get(&self, metric: &str, indicator: &str, sex: &str, level: Option<f64>) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| {
                r.metric == metric
                    && r.indicator == indicator
                    && r.sex == sex
                    && match (r.level, level) {
                        (Some(a), Some(b)) => (a - b).abs() < 1e-9,
                        (None, None) => true,
                        _ => false,
                    }
            })
            .map(|r| r.value)
    }

    fn push(&mut self, metric: &str, indicator: &str, sex: &str, level: Option<f64>, value: f64) {
        self.rows.push(MetricRow {
            metric: metric.into(),
            indicator: indicator.into(),
            sex: sex.into(),
            level,
            value,
        });
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "holdout evaluation: {} countries, {} observations\n",
            self.countries, self.observations
        );
        for r in &self.rows {
            let level = r.level.map(|l| format!(" {l:.0}%")).unwrap_or_default();
            let _ = writeln!(s, "  {:<8} {:<17} {:<6}{:<5} {:>10.3}", r.metric, r.indicator, r.sex, level, r.value);
        }
        s
    }
}

/// Scores observations against the predictive distributions. Several
/// observations per country (replicates) are pooled.
pub fn evaluate(prepared: &PreparedHoldout, observed: &[Observation]) -> Result<MetricReport, ValidateError> {
    let by_country: BTreeMap<&str, &CountryPredictive> =
        prepared.predictive.iter().map(|p| (p.country.as_str(), p)).collect();
    let seen: BTreeSet<&str> = observed.iter().map(|o| o.country.as_str()).collect();
    if let Some(o) = observed.iter().find(|o| !by_country.contains_key(o.country.as_str())) {
        return Err(ValidateError::Alignment(format!(
            "observation for {} which was not projected",
            o.country
        )));
    }
    if let Some(c) = by_country.keys().find(|c| !seen.contains(*c)) {
        return Err(ValidateError::Alignment(format!("no observation for {c}")));
    }
    if observed.is_empty() {
        return Err(ValidateError::NoWork);
    }

    let mut report = MetricReport {
        rows: Vec::new(),
        countries: by_country.len(),
        observations: observed.len(),
    };
    let sexes = ["female", "male"];
    for (s, sex) in sexes.iter().enumerate() {
        let mut err = 0.0;
        for o in observed {
            err += (quantile_sorted(&by_country[o.country.as_str()].e0[s], 0.5) - o.e0[s]).abs();
        }
        report.push("mae", "e0", sex, None, err / observed.len() as f64);
    }
    for (i, idx) in Q_INDICES.into_iter().enumerate() {
        for (s, sex) in sexes.iter().enumerate() {
            let mut err = 0.0;
            for o in observed {
                err += (quantile_sorted(&by_country[o.country.as_str()].q[s][i], 0.5) - o.q_index(s, idx)?).abs();
            }
            report.push("mae", idx.as_str(), sex, None, err / observed.len() as f64);
        }
    }

    for &level in &prepared.spec.levels {
        let pct = Some(100.0 * level);
        let mut both = (Vec::new(), Vec::new());
        for (s, sex) in sexes.iter().enumerate() {
            let (mut iv, mut ys) = (Vec::new(), Vec::new());
            for o in observed {
                let p = by_country[o.country.as_str()];
                for a in 0..ABRIDGED_GROUPS {
                    iv.push(interval(&p.mx[s][a], level));
                    ys.push(o.mx[s][a]);
                }
            }
            report.push("coverage", "mx", sex, pct, coverage(&iv, &ys)?);
            both.0.extend(iv);
            both.1.extend(ys);
        }
        report.push("coverage", "mx", "both", pct, coverage(&both.0, &both.1)?);
        for (s, sex) in sexes.iter().enumerate() {
            let iv: Vec<Interval> = observed
                .iter()
                .map(|o| interval(&by_country[o.country.as_str()].e0[s], level))
                .collect();
            let ys: Vec<f64> = observed.iter().map(|o| o.e0[s]).collect();
            report.push("coverage", "e0", sex, pct, coverage(&iv, &ys)?);
        }
        let iv: Vec<Interval> = observed
            .iter()
            .map(|o| interval(&by_country[o.country.as_str()].total_population, level))
            .collect();
        let ys: Vec<f64> = observed.iter().map(|o| o.total_population).collect();
        report.push("coverage", "total_population", "both", pct, coverage(&iv, &ys)?);
    }
    Ok(report)
}

/// Calibrate on truncated data, project the evaluated period and score it
/// against the dataset's own observations.
pub fn run_holdout(spec: &HoldoutSpec, data: &Dataset) -> Result<MetricReport, ValidateError> {
    let observed = observations_from(spec, data)?;
    let prepared = prepare_holdout(spec, data)?;
    evaluate(&prepared, &observed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(v: &[(&str, f64)]) -> Vec<(String, f64)> {
        v.iter().map(|(c, x)| (c.to_string(), *x)).collect()
    }

    #[test]
    fn mae_arithmetic() {
        let obs = pairs(&[("A", 60.0), ("B", 50.0)]);
        assert_eq!(mae(&obs, &obs).unwrap(), 0.0);
        let pred = pairs(&[("A", 61.0), ("B", 47.0)]);
        assert_eq!(mae(&pred, &obs).unwrap(), 2.0);
        let shuffled = pairs(&[("A", 61.0), ("C", 47.0)]);
        assert!(matches!(mae(&shuffled, &obs), Err(ValidateError::Alignment(_))));
    }

    #[test]
    fn coverage_counts_closed_intervals() {
        let iv = [
            Interval { lower: 0.0, upper: 2.0 },
            Interval { lower: 1.0, upper: 3.0 },
        ];
        assert_eq!(coverage(&iv, &[1.0, 2.0]).unwrap(), 100.0);
        assert_eq!(coverage(&iv, &[2.0, 4.0]).unwrap(), 50.0);
        let bad = [Interval { lower: 2.0, upper: 1.0 }];
        assert!(matches!(coverage(&bad, &[1.5]), Err(ValidateError::MalformedInterval { index: 0, .. })));
    }

    #[test]
    fn differences() {
        let ext = pairs(&[("A", 100.0), ("B", 200.0)]);
        assert_eq!(mean_difference(&ext, &ext).unwrap(), 0.0);
        assert_eq!(mean_proportional_difference(&ext, &ext).unwrap(), 0.0);
        let ours = pairs(&[("A", 99.0), ("B", 198.0)]);
        assert!((mean_proportional_difference(&ours, &ext).unwrap() + 1.0).abs() < 1e-12);
        let zero = pairs(&[("A", 0.0), ("B", 200.0)]);
        match mean_proportional_difference(&ours, &zero) {
            Err(ValidateError::ZeroExternal { country, .. }) => assert_eq!(country, "A"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn spec_checks() {
        let mut s = HoldoutSpec::new(2010, vec![]);
        assert!(matches!(s.check(), Err(ValidateError::NoWork)));
        s.countries = vec!["A".into()];
        s.evaluation_period = 2005;
        assert!(matches!(s.check(), Err(ValidateError::Spec(_))));
    }
}

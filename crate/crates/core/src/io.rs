//! CSV input and output. Every reader checks its header and reports bad
//! values with file, line and column.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use csv::{ReaderBuilder, StringRecord, Writer};
use thiserror::Error;

use crate::ccmpp::{
    FertilityPattern, Indicator, MigrationInput, ProjectionResult, QuantileRow, TrajectoryResult,
    REPRODUCTIVE_GROUPS,
};
use crate::demog::{MortalitySchedule, PopulationPyramid, Sex, ABRIDGED_GROUPS, FIVE_YEAR_GROUPS};
use crate::pipeline::{Dataset, E0Series, LifeTableRecord, TfrSeries};
use crate::prevalence::{AnnualPath, Compartments, EppParams};
use crate::validate::{ComparisonRow, ExternalRecord, MetricReport, MetricRow};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Open {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: missing column '{column}'")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}, line {line}, column '{column}': {reason}")]
    Field {
        path: PathBuf,
        line: u64,
        column: String,
        reason: String,
    },
    #[error("{path}: {reason}")]
    Content { path: PathBuf, reason: String },
}

impl IoError {
    pub fn path(&self) -> &Path {
        match self {
            IoError::Open { path, .. }
            | IoError::Csv { path, .. }
            | IoError::MissingColumn { path, .. }
            | IoError::Field { path, .. }
            | IoError::Content { path, .. } => path,
        }
    }
}

struct Table {
    path: PathBuf,
    columns: BTreeMap<String, usize>,
    rows: Vec<StringRecord>,
}

struct Row<'a> {
    table: &'a Table,
    record: &'a StringRecord,
}

impl Table {
    fn open(path: &Path, required: &[&str]) -> Result<Self, IoError> {
        let file = File::open(path).map_err(|source| IoError::Open {
            path: path.to_path_buf(),
            source,
        })?;
        let csv_err = |source| IoError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut reader = ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let columns: BTreeMap<String, usize> = reader
            .headers()
            .map_err(csv_err)?
            .iter()
            .enumerate()
            .map(|(i, h)| (h.to_string(), i))
            .collect();
        if let Some(c) = required.iter().find(|c| !columns.contains_key(**c)) {
            return Err(IoError::MissingColumn {
                path: path.to_path_buf(),
                column: c.to_string(),
            });
        }
        let rows = reader.records().collect::<Result<Vec<_>, _>>().map_err(csv_err)?;
        Ok(Self {
            path: path.to_path_buf(),
            columns,
            rows,
        })
    }

    fn rows(&self) -> impl Iterator<Item = Row<'_>> {
        self.rows.iter().map(|record| Row { table: self, record })
    }

    fn content(&self, reason: impl Into<String>) -> IoError {
        IoError::Content {
            path: self.path.clone(),
            reason: reason.into(),
        }
    }
}

impl Row<'_> {
    fn line(&self) -> u64 {
        self.record.position().map_or(0, |p| p.line())
    }

    fn err(&self, column: &str, reason: impl Into<String>) -> IoError {
        IoError::Field {
            path: self.table.path.clone(),
            line: self.line(),
            column: column.to_string(),
            reason: reason.into(),
        }
    }

    fn text(&self, column: &str) -> Result<&str, IoError> {
        let i = self.table.columns[column];
        match self.record.get(i) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(self.err(column, "empty value")),
        }
    }

    fn parse<T: FromStr>(&self, column: &str) -> Result<T, IoError>
    where
        T::Err: Display,
    {
        let v = self.text(column)?;
        v.parse::<T>().map_err(|e| self.err(column, format!("cannot parse '{v}': {e}")))
    }

    fn float(&self, column: &str) -> Result<f64, IoError> {
        let v: f64 = self.parse(column)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(column, "value must be finite"))
        }
    }

    fn non_negative(&self, column: &str) -> Result<f64, IoError> {
        let v = self.float(column)?;
        if v >= 0.0 {
            Ok(v)
        } else {
            Err(self.err(column, format!("{v} is negative")))
        }
    }

    fn index(&self, column: &str, len: usize) -> Result<usize, IoError> {
        let i: usize = self.parse(column)?;
        if i < len {
            Ok(i)
        } else {
            Err(self.err(column, format!("{i} is outside 0..{len}")))
        }
    }

    fn percent(&self, column: &str) -> Result<f64, IoError> {
        let v = self.float(column)?;
        if (0.0..=100.0).contains(&v) {
            Ok(v)
        } else {
            Err(self.err(column, format!("{v} is not a percentage")))
        }
    }
}

type Slots = Vec<Option<f64>>;

fn fill(row: &Row<'_>, slots: &mut Slots, i: usize, value: f64, column: &str) -> Result<(), IoError> {
    if slots[i].replace(value).is_some() {
        return Err(row.err(column, format!("duplicate entry for index {i}")));
    }
    Ok(())
}

fn complete(table: &Table, slots: Slots, what: &str) -> Result<Vec<f64>, IoError> {
    slots
        .iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| table.content(format!("{what}: missing age group {i}"))))
        .collect()
}

/// Consecutive-year path from `(year, value)` pairs.
fn annual_path(table: &Table, what: &str, mut points: Vec<(i32, f64)>) -> Result<AnnualPath, IoError> {
    points.sort_by_key(|p| p.0);
    let start = points[0].0;
    for (i, (y, _)) in points.iter().enumerate() {
        if *y != start + i as i32 {
            return Err(table.content(format!("{what}: years must be consecutive without duplicates (at {y})")));
        }
    }
    Ok(AnnualPath::new(start, points.into_iter().map(|p| p.1).collect()))
}

pub fn read_mortality(path: &Path) -> Result<Vec<LifeTableRecord>, IoError> {
    let t = Table::open(path, &["country", "period_start", "sex", "age_group_index", "mx"])?;
    let mut groups: BTreeMap<(String, i32), [Slots; 2]> = BTreeMap::new();
    for row in t.rows() {
        let sex: Sex = row.parse("sex")?;
        let i = row.index("age_group_index", ABRIDGED_GROUPS)?;
        let mx = row.float("mx")?;
        if mx <= 0.0 {
            return Err(row.err("mx", format!("rate {mx} must be positive")));
        }
        let slots = groups
            .entry((row.text("country")?.to_string(), row.parse("period_start")?))
            .or_insert_with(|| [vec![None; ABRIDGED_GROUPS], vec![None; ABRIDGED_GROUPS]]);
        fill(&row, &mut slots[sex as usize], i, mx, "age_group_index")?;
    }
    groups
        .into_iter()
        .map(|((country, period_start), [f, m])| {
            let what = format!("{country} {period_start}");
            let schedule = |sex: Sex, slots: Slots| {
                let rates = complete(&t, slots, &format!("{what} {sex}"))?;
                MortalitySchedule::new(sex, &rates).map_err(|e| t.content(format!("{what}: {e}")))
            };
            Ok(LifeTableRecord {
                female: schedule(Sex::Female, f)?,
                male: schedule(Sex::Male, m)?,
                country,
                period_start,
            })
        })
        .collect()
}

pub fn read_e0_history(path: &Path) -> Result<BTreeMap<String, E0Series>, IoError> {
    let t = Table::open(path, &["country", "period_start", "e0_female"])?;
    let mut by: BTreeMap<String, BTreeMap<i32, f64>> = BTreeMap::new();
    for row in t.rows() {
        let e0 = row.float("e0_female")?;
        if e0 <= 0.0 {
            return Err(row.err("e0_female", "life expectancy must be positive"));
        }
        let p: i32 = row.parse("period_start")?;
        if by.entry(row.text("country")?.to_string()).or_default().insert(p, e0).is_some() {
            return Err(row.err("period_start", format!("duplicate period {p}")));
        }
    }
    Ok(by
        .into_iter()
        .map(|(c, m)| {
            (
                c,
                E0Series {
                    period_starts: m.keys().copied().collect(),
                    e0: m.values().copied().collect(),
                },
            )
        })
        .collect())
}

pub fn read_art(path: &Path) -> Result<BTreeMap<String, Vec<(i32, f64)>>, IoError> {
    let t = Table::open(path, &["country", "period_start", "art_pct"])?;
    let mut by: BTreeMap<String, Vec<(i32, f64)>> = BTreeMap::new();
    for row in t.rows() {
        by.entry(row.text("country")?.to_string())
            .or_default()
            .push((row.parse("period_start")?, row.percent("art_pct")?));
    }
    for v in by.values_mut() {
        v.sort_by_key(|p| p.0);
    }
    Ok(by)
}

pub fn read_prevalence_median(path: &Path) -> Result<BTreeMap<String, AnnualPath>, IoError> {
    let t = Table::open(path, &["country", "year", "prevalence_pct"])?;
    let mut by: BTreeMap<String, Vec<(i32, f64)>> = BTreeMap::new();
    for row in t.rows() {
        by.entry(row.text("country")?.to_string())
            .or_default()
            .push((row.parse("year")?, row.percent("prevalence_pct")?));
    }
    by.into_iter()
        .map(|(c, pts)| Ok((c.clone(), annual_path(&t, &c, pts)?)))
        .collect()
}

pub fn read_prevalence_samples(path: &Path) -> Result<BTreeMap<String, Vec<AnnualPath>>, IoError> {
    let t = Table::open(path, &["country", "trajectory", "year", "prevalence_pct"])?;
    let mut by: BTreeMap<String, BTreeMap<usize, Vec<(i32, f64)>>> = BTreeMap::new();
    for row in t.rows() {
        by.entry(row.text("country")?.to_string())
            .or_default()
            .entry(row.parse("trajectory")?)
            .or_default()
            .push((row.parse("year")?, row.percent("prevalence_pct")?));
    }
    by.into_iter()
        .map(|(c, trajs)| {
            if trajs.keys().enumerate().any(|(i, k)| i != *k) {
                return Err(t.content(format!("{c}: trajectory indices must run 0, 1, 2, ...")));
            }
            let paths = trajs
                .into_iter()
                .map(|(k, pts)| annual_path(&t, &format!("{c} trajectory {k}"), pts))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((c, paths))
        })
        .collect()
}

fn read_pyramids(
    t: &Table,
    year_of: impl Fn(&Row<'_>) -> Result<i32, IoError>,
) -> Result<BTreeMap<(String, i32), PopulationPyramid>, IoError> {
    let mut by: BTreeMap<(String, i32), [Slots; 2]> = BTreeMap::new();
    for row in t.rows() {
        let sex: Sex = row.parse("sex")?;
        let i = row.index("age_group_index", FIVE_YEAR_GROUPS)?;
        let count = row.non_negative("count")?;
        let slots = by
            .entry((row.text("country")?.to_string(), year_of(&row)?))
            .or_insert_with(|| [vec![None; FIVE_YEAR_GROUPS], vec![None; FIVE_YEAR_GROUPS]]);
        fill(&row, &mut slots[sex as usize], i, count, "age_group_index")?;
    }
    by.into_iter()
        .map(|((c, year), [f, m])| {
            let what = format!("{c} {year}");
            let f = complete(t, f, &format!("{what} female"))?;
            let m = complete(t, m, &format!("{what} male"))?;
            let p = PopulationPyramid::new(year, &f, &m).map_err(|e| t.content(format!("{what}: {e}")))?;
            Ok(((c, year), p))
        })
        .collect()
}

/// Base pyramids; the file has no year column, so the base year is given.
pub fn read_base_population(path: &Path, base_year: i32) -> Result<BTreeMap<String, PopulationPyramid>, IoError> {
    let t = Table::open(path, &["country", "sex", "age_group_index", "count"])?;
    Ok(read_pyramids(&t, |_| Ok(base_year))?
        .into_iter()
        .map(|((c, _), p)| (c, p))
        .collect())
}

pub fn read_population_history(path: &Path) -> Result<BTreeMap<String, Vec<PopulationPyramid>>, IoError> {
    let t = Table::open(path, &["country", "year", "sex", "age_group_index", "count"])?;
    let mut by: BTreeMap<String, Vec<PopulationPyramid>> = BTreeMap::new();
    for ((c, _), p) in read_pyramids(&t, |r| r.parse("year"))? {
        by.entry(c).or_default().push(p);
    }
    Ok(by)
}

pub fn read_tfr(path: &Path) -> Result<BTreeMap<String, TfrSeries>, IoError> {
    let t = Table::open(path, &["country", "trajectory", "period_start", "tfr"])?;
    let mut by: BTreeMap<String, BTreeMap<usize, BTreeMap<i32, f64>>> = BTreeMap::new();
    for row in t.rows() {
        let p: i32 = row.parse("period_start")?;
        let v = row.non_negative("tfr")?;
        let slot = by
            .entry(row.text("country")?.to_string())
            .or_default()
            .entry(row.parse("trajectory")?)
            .or_default();
        if slot.insert(p, v).is_some() {
            return Err(row.err("period_start", format!("duplicate period {p}")));
        }
    }
    by.into_iter()
        .map(|(c, trajs)| {
            if trajs.keys().enumerate().any(|(i, k)| i != *k) {
                return Err(t.content(format!("{c}: trajectory indices must run 0, 1, 2, ...")));
            }
            let periods: Vec<i32> = trajs.values().next().map(|m| m.keys().copied().collect()).unwrap_or_default();
            if trajs.values().any(|m| !m.keys().copied().eq(periods.iter().copied())) {
                return Err(t.content(format!("{c}: all TFR trajectories must cover the same periods")));
            }
            Ok((
                c,
                TfrSeries {
                    period_starts: periods,
                    tfr: trajs.into_values().map(|m| m.into_values().collect()).collect(),
                },
            ))
        })
        .collect()
}

/// Proportions by five-year age group index (3 = ages 15-19 to 9 = 45-49).
pub fn read_fertility_pattern(path: &Path) -> Result<BTreeMap<String, FertilityPattern>, IoError> {
    let t = Table::open(path, &["country", "age_group_index", "proportion"])?;
    let n = REPRODUCTIVE_GROUPS.len();
    let mut by: BTreeMap<String, Slots> = BTreeMap::new();
    for row in t.rows() {
        let i = row.index("age_group_index", REPRODUCTIVE_GROUPS.end)?;
        if i < REPRODUCTIVE_GROUPS.start {
            return Err(row.err("age_group_index", "fertility is limited to ages 15-49 (indices 3-9)"));
        }
        let v = row.non_negative("proportion")?;
        let slots = by.entry(row.text("country")?.to_string()).or_insert_with(|| vec![None; n]);
        fill(&row, slots, i - REPRODUCTIVE_GROUPS.start, v, "age_group_index")?;
    }
    by.into_iter()
        .map(|(c, slots)| {
            let p = complete(&t, slots, &c)?;
            let pattern = FertilityPattern::new(&p).map_err(|e| t.content(format!("{c}: {e}")))?;
            Ok((c, pattern))
        })
        .collect()
}

pub fn read_migration(path: &Path) -> Result<BTreeMap<String, MigrationInput>, IoError> {
    let t = Table::open(path, &["country", "period_start", "sex", "age_group_index", "count"])?;
    let mut by: BTreeMap<String, BTreeMap<i32, [[f64; FIVE_YEAR_GROUPS]; 2]>> = BTreeMap::new();
    for row in t.rows() {
        let sex: Sex = row.parse("sex")?;
        let i = row.index("age_group_index", FIVE_YEAR_GROUPS)?;
        let v = row.float("count")?;
        let period = by
            .entry(row.text("country")?.to_string())
            .or_default()
            .entry(row.parse("period_start")?)
            .or_insert([[0.0; FIVE_YEAR_GROUPS]; 2]);
        period[sex as usize][i] += v;
    }
    Ok(by
        .into_iter()
        .map(|(c, periods)| {
            let m = MigrationInput {
                country: c.clone(),
                period_starts: periods.keys().copied().collect(),
                female: periods.values().map(|p| p[0]).collect(),
                male: periods.values().map(|p| p[1]).collect(),
            };
            (c, m)
        })
        .collect())
}

pub const EPP_COLUMNS: [&str; 10] = [
    "country",
    "t0",
    "r0",
    "phi0",
    "not_at_risk",
    "at_risk",
    "infected",
    "entry_rate",
    "exit_rate",
    "hiv_survival",
];

pub fn read_epp_params(path: &Path) -> Result<BTreeMap<String, EppParams>, IoError> {
    let t = Table::open(path, &EPP_COLUMNS)?;
    let mut by = BTreeMap::new();
    for row in t.rows() {
        let p = EppParams {
            t0: row.parse("t0")?,
            r0: row.non_negative("r0")?,
            phi0: row.non_negative("phi0")?,
            initial: Compartments {
                not_at_risk: row.non_negative("not_at_risk")?,
                at_risk: row.non_negative("at_risk")?,
                infected: row.non_negative("infected")?,
            },
            entry_rate: row.non_negative("entry_rate")?,
            exit_rate: row.non_negative("exit_rate")?,
            hiv_survival: row.float("hiv_survival")?,
        };
        p.validate().map_err(|e| row.err("country", e.to_string()))?;
        let c = row.text("country")?.to_string();
        if by.insert(c.clone(), p).is_some() {
            return Err(row.err("country", format!("duplicate row for {c}")));
        }
    }
    Ok(by)
}

pub fn read_srb(path: &Path) -> Result<BTreeMap<String, f64>, IoError> {
    let t = Table::open(path, &["country", "srb"])?;
    t.rows()
        .map(|row| {
            let v = row.float("srb")?;
            if v <= 0.0 {
                return Err(row.err("srb", "sex ratio must be positive"));
            }
            Ok((row.text("country")?.to_string(), v))
        })
        .collect()
}

pub fn read_external_projection(path: &Path) -> Result<Vec<ExternalRecord>, IoError> {
    let t = Table::open(path, &["country", "period_start", "indicator", "value"])?;
    t.rows()
        .map(|row| {
            Ok(ExternalRecord {
                country: row.text("country")?.to_string(),
                period_start: row.parse("period_start")?,
                indicator: row.parse("indicator")?,
                value: row.float("value")?,
            })
        })
        .collect()
}

/// Input file locations. Optional inputs are `None` when absent.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPaths {
    pub mortality: PathBuf,
    pub e0_history: PathBuf,
    pub art_coverage: PathBuf,
    pub prevalence_median: PathBuf,
    pub prevalence_samples: Option<PathBuf>,
    pub epp_params: Option<PathBuf>,
    pub base_population: PathBuf,
    pub population_history: Option<PathBuf>,
    pub tfr_trajectories: PathBuf,
    pub fertility_pattern: PathBuf,
    pub migration: Option<PathBuf>,
    pub srb: Option<PathBuf>,
}

impl DatasetPaths {
    /// Standard file names inside `dir`; optional files count only if they
    /// exist.
    pub fn in_dir(dir: &Path) -> Self {
        let opt = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
        Self {
            mortality: dir.join("mortality.csv"),
            e0_history: dir.join("e0_history.csv"),
            art_coverage: dir.join("art_coverage.csv"),
            prevalence_median: dir.join("prevalence_median.csv"),
            prevalence_samples: opt("prevalence_samples.csv"),
            epp_params: opt("epp_params.csv"),
            base_population: dir.join("base_population.csv"),
            population_history: opt("population_history.csv"),
            tfr_trajectories: dir.join("tfr_trajectories.csv"),
            fertility_pattern: dir.join("fertility_pattern.csv"),
            migration: opt("migration.csv"),
            srb: opt("srb.csv"),
        }
    }
}

pub fn read_dataset(paths: &DatasetPaths, base_year: i32) -> Result<Dataset, IoError> {
    Ok(Dataset {
        life_tables: read_mortality(&paths.mortality)?,
        e0_history: read_e0_history(&paths.e0_history)?,
        art: read_art(&paths.art_coverage)?,
        prevalence_reference: read_prevalence_median(&paths.prevalence_median)?,
        prevalence_samples: Option::as_deref(&paths.prevalence_samples).map(read_prevalence_samples).transpose()?.unwrap_or_default(),
        epp: Option::as_deref(&paths.epp_params).map(read_epp_params).transpose()?.unwrap_or_default(),
        base_population: read_base_population(&paths.base_population, base_year)?,
        population_history: Option::as_deref(&paths.population_history)
            .map(read_population_history)
            .transpose()?
            .unwrap_or_default(),
        fertility_pattern: read_fertility_pattern(&paths.fertility_pattern)?,
        srb: Option::as_deref(&paths.srb).map(read_srb).transpose()?.unwrap_or_default(),
        tfr: read_tfr(&paths.tfr_trajectories)?,
        migration: Option::as_deref(&paths.migration).map(read_migration).transpose()?.unwrap_or_default(),
    })
}

struct Out {
    path: PathBuf,
    writer: Writer<File>,
}

impl Out {
    fn create(path: &Path, header: &[&str]) -> Result<Self, IoError> {
        let file = File::create(path).map_err(|source| IoError::Open {
            path: path.to_path_buf(),
            source,
        })?;
        let mut out = Self {
            path: path.to_path_buf(),
            writer: Writer::from_writer(file),
        };
        out.record(header.iter().map(|s| s.to_string()))?;
        Ok(out)
    }

    fn record<I: IntoIterator<Item = String>>(&mut self, fields: I) -> Result<(), IoError> {
        self.writer
            .write_record(fields.into_iter().collect::<Vec<_>>())
            .map_err(|source| IoError::Csv {
                path: self.path.clone(),
                source,
            })
    }

    fn finish(mut self) -> Result<(), IoError> {
        self.writer.flush().map_err(|source| IoError::Open {
            path: self.path.clone(),
            source,
        })
    }
}

macro_rules! rec {
    ($($x:expr),* $(,)?) => { [$($x.to_string()),*] };
}

pub fn write_mortality(path: &Path, records: &[LifeTableRecord]) -> Result<(), IoError> {
    let mut out = Out::create(path, &["country", "period_start", "sex", "age_group_index", "mx"])?;
    for r in records {
        for s in [&r.female, &r.male] {
            for (i, m) in s.rates().iter().enumerate() {
                out.record(rec![r.country, r.period_start, s.sex(), i, m])?;
            }
        }
    }
    out.finish()
}

pub fn write_e0_history(path: &Path, series: &BTreeMap<String, E0Series>) -> Result<(), IoError> {
    let mut out = Out::create(path, &["country", "period_start", "e0_female"])?;
    for (c, s) in series {
        for (p, e) in s.period_starts.iter().zip(&s.e0) {
            out.record(rec![c, p, e])?;
        }
    }
    out.finish()
}

pub fn write_art(path: &Path, art: &BTreeMap<String, Vec<(i32, f64)>>) -> Result<(), IoError> {
    let mut out = Out::create(path, &["country", "period_start", "art_pct"])?;
    for (c, v) in art {
        for (p, a) in v {
            out.record(rec![c, p, a])?;
        }
    }
    out.finish()
}

pub fn write_prevalence_median(path: &Path, paths: &BTreeMap<String, AnnualPath>) -> Result<(), IoError> {
    let mut out = Out::create(path, &["country", "year", "prevalence_pct"])?;
    for (c, p) in paths {
        for (i, v) in p.values.iter().enumerate() {
            out.record(rec![c, p.start_year + i as i32, v])?;
        }
    }
    out.finish()
}

pub fn write_prevalence_samples(path: &Path, samples: &BTreeMap<String, Vec<AnnualPath>>) -> Result<(), IoError> {
    let mut out = Out::create(path, &["country", "trajectory", "year", "prevalence_pct"])?;
    for (c, paths) in samples {
        for (k, p) in paths.iter().enumerate() {
            for (i, v) in p.values.iter().enumerate() {
                out.record(rec![c, k, p.start_year + i as i32, v])?;
            }
        }
    }
    out.finish()
}

pub fn write_epp_params(path: &Path, params: &BTreeMap<String, EppParams>) -> Result<(), IoError> {
    let mut out = Out::create(path, &EPP_COLUMNS)?;
    for (c, p) in params {
        let i = p.initial;
        out.record(rec![
            c,
            p.t0,
            p.r0,
            p.phi0,
            i.not_at_risk,
            i.at_risk,
            i.infected,
            p.entry_rate,
            p.exit_rate,
            p.hiv_survival
        ])?;
    }
    out.finish()
}

pub fn write_base_population(path: &Path, pyramids: &BTreeMap<String, PopulationPyramid>) -> Result<(), IoError> {
    let mut out = Out::create(path, &["country", "sex", "age_group_index", "count"])?;
    for (c, p) in pyramids {
        for sex in Sex::BOTH {
            for (i, v) in p.counts(sex).iter().enumerate() {
                out.record(rec![c, sex, i, v])?;
            }
        }
    }
    out.finish()
}

pub fn write_population_history(
    path: &Path,
    history: &BTreeMap<String, Vec<PopulationPyramid>>,
) -> Result<(), IoError> {
    let mut out = Out::create(path, &["country", "year", "sex", "age_group_index", "count"])?;
    for (c, ps) in history {
        for p in ps {
            for sex in Sex::BOTH {
                for (i, v) in p.counts(sex).iter().enumerate() {
                    out.record(rec![c, p.year, sex, i, v])?;
                }
            }
        }
    }
    out.finish()
}

pub fn write_tfr(path: &Path, tfr: &BTreeMap<String, TfrSeries>) -> Result<(), IoError> {
    let mut out = Out::create(path, &["country", "trajectory", "period_start", "tfr"])?;
    for (c, s) in tfr {
        for (k, traj) in s.tfr.iter().enumerate() {
            for (p, v) in s.period_starts.iter().zip(traj) {
                out.record(rec![c, k, p, v])?;
            }
        }
    }
    out.finish()
}

pub fn write_fertility_pattern(path: &Path, patterns: &BTreeMap<String, FertilityPattern>) -> Result<(), IoError> {
    let mut out = Out::create(path, &["country", "age_group_index", "proportion"])?;
    for (c, p) in patterns {
        for (j, v) in p.proportions().iter().enumerate() {
            out.record(rec![c, REPRODUCTIVE_GROUPS.start + j, v])?;
        }
    }
    out.finish()
}

pub fn write_migration(path: &Path, migration: &BTreeMap<String, MigrationInput>) -> Result<(), IoError> {
    let mut out = Out::create(path, &["country", "period_start", "sex", "age_group_index", "count"])?;
    for (c, m) in migration {
        for (p, period) in m.period_starts.iter().enumerate() {
            for (sex, counts) in [(Sex::Female, &m.female[p]), (Sex::Male, &m.male[p])] {
                for (i, v) in counts.iter().enumerate() {
                    out.record(rec![c, period, sex, i, v])?;
                }
            }
        }
    }
    out.finish()
}

pub fn write_srb(path: &Path, srb: &BTreeMap<String, f64>) -> Result<(), IoError> {
    let mut out = Out::create(path, &["country", "srb"])?;
    for (c, v) in srb {
        out.record(rec![c, v])?;
    }
    out.finish()
}

/// Writes every non-empty part of a dataset under the standard names.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<DatasetPaths, IoError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::Open {
        path: dir.to_path_buf(),
        source,
    })?;
    let p = |n: &str| dir.join(n);
    write_mortality(&p("mortality.csv"), &data.life_tables)?;
    write_e0_history(&p("e0_history.csv"), &data.e0_history)?;
    write_art(&p("art_coverage.csv"), &data.art)?;
    write_prevalence_median(&p("prevalence_median.csv"), &data.prevalence_reference)?;
    if !data.prevalence_samples.is_empty() {
        write_prevalence_samples(&p("prevalence_samples.csv"), &data.prevalence_samples)?;
    }
    if !data.epp.is_empty() {
        write_epp_params(&p("epp_params.csv"), &data.epp)?;
    }
    write_base_population(&p("base_population.csv"), &data.base_population)?;
    if !data.population_history.is_empty() {
        write_population_history(&p("population_history.csv"), &data.population_history)?;
    }
    write_tfr(&p("tfr_trajectories.csv"), &data.tfr)?;
    write_fertility_pattern(&p("fertility_pattern.csv"), &data.fertility_pattern)?;
    if !data.migration.is_empty() {
        write_migration(&p("migration.csv"), &data.migration)?;
    }
    if !data.srb.is_empty() {
        write_srb(&p("srb.csv"), &data.srb)?;
    }
    Ok(DatasetPaths::in_dir(dir))
}

pub const QUANTILE_COLUMNS: [&str; 5] = ["country", "indicator", "period_start", "quantile", "value"];

pub fn write_quantiles(path: &Path, rows: &[QuantileRow]) -> Result<(), IoError> {
    let mut out = Out::create(path, &QUANTILE_COLUMNS)?;
    for r in rows {
        out.record(rec![r.country, r.indicator, r.period_start, r.quantile, r.value])?;
    }
    out.finish()
}

pub fn read_quantiles(path: &Path) -> Result<Vec<QuantileRow>, IoError> {
    let t = Table::open(path, &QUANTILE_COLUMNS)?;
    t.rows()
        .map(|row| {
            Ok(QuantileRow {
                country: row.text("country")?.to_string(),
                indicator: row.parse("indicator")?,
                period_start: row.parse("period_start")?,
                quantile: row.float("quantile")?,
                value: row.float("value")?,
            })
        })
        .collect()
}

pub const TRAJECTORY_COLUMNS: [&str; 5] = ["country", "trajectory", "period_start", "indicator", "value"];

pub fn write_trajectories(path: &Path, results: &[ProjectionResult]) -> Result<(), IoError> {
    let mut out = Out::create(path, &TRAJECTORY_COLUMNS)?;
    for r in results {
        for (k, t) in r.trajectories.iter().enumerate() {
            for (p, period) in r.period_starts.iter().enumerate() {
                for ind in Indicator::ALL {
                    out.record(rec![r.country, k, period, ind, t.indicators[p][ind.index()]])?;
                }
            }
        }
    }
    out.finish()
}

/// Indicator-only projection results rebuilt from a trajectories file.
pub fn read_trajectories(path: &Path) -> Result<Vec<ProjectionResult>, IoError> {
    let t = Table::open(path, &TRAJECTORY_COLUMNS)?;
    let mut by: BTreeMap<String, BTreeMap<usize, BTreeMap<i32, [Option<f64>; 6]>>> = BTreeMap::new();
    for row in t.rows() {
        let ind: Indicator = row.parse("indicator")?;
        let cell = &mut by
            .entry(row.text("country")?.to_string())
            .or_default()
            .entry(row.parse("trajectory")?)
            .or_default()
            .entry(row.parse("period_start")?)
            .or_default()[ind.index()];
        if cell.replace(row.float("value")?).is_some() {
            return Err(row.err("indicator", format!("duplicate value for {ind}")));
        }
    }
    by.into_iter()
        .map(|(country, trajs)| {
            let period_starts: Vec<i32> =
                trajs.values().next().map(|m| m.keys().copied().collect()).unwrap_or_default();
            let trajectories = trajs
                .into_iter()
                .map(|(k, periods)| {
                    if !periods.keys().copied().eq(period_starts.iter().copied()) {
                        return Err(t.content(format!("{country} trajectory {k}: periods differ")));
                    }
                    let indicators = periods
                        .into_iter()
                        .map(|(p, cells)| {
                            let mut row = [0.0; 6];
                            for (i, c) in cells.iter().enumerate() {
                                row[i] = c.ok_or_else(|| {
                                    t.content(format!("{country} trajectory {k} {p}: missing {}", Indicator::ALL[i]))
                                })?;
                            }
                            Ok(row)
                        })
                        .collect::<Result<Vec<_>, IoError>>()?;
                    Ok(TrajectoryResult {
                        indicators,
                        pyramids: Vec::new(),
                        schedules: Vec::new(),
                        accounts: Vec::new(),
                    })
                })
                .collect::<Result<Vec<_>, IoError>>()?;
            Ok(ProjectionResult {
                country,
                period_starts,
                trajectories,
            })
        })
        .collect()
}

pub const METRIC_COLUMNS: [&str; 5] = ["metric", "indicator", "sex", "level", "value"];

pub fn write_metrics(path: &Path, report: &MetricReport) -> Result<(), IoError> {
    let mut out = Out::create(path, &METRIC_COLUMNS)?;
    for r in &report.rows {
        let level = r.level.map(|l| l.to_string()).unwrap_or_default();
        out.record([r.metric.clone(), r.indicator.clone(), r.sex.clone(), level, r.value.to_string()])?;
    }
    out.finish()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>, IoError> {
    let t = Table::open(path, &METRIC_COLUMNS)?;
    t.rows()
        .map(|row| {
            let level = match row.record.get(t.columns["level"]) {
                Some("") | None => None,
                Some(_) => Some(row.float("level")?),
            };
            Ok(MetricRow {
                metric: row.text("metric")?.to_string(),
                indicator: row.text("indicator")?.to_string(),
                sex: row.text("sex")?.to_string(),
                level,
                value: row.float("value")?,
            })
        })
        .collect()
}

pub const COMPARISON_COLUMNS: [&str; 5] = ["period_start", "indicator", "countries", "md", "mpd"];

pub fn write_comparison(path: &Path, rows: &[ComparisonRow]) -> Result<(), IoError> {
    let mut out = Out::create(path, &COMPARISON_COLUMNS)?;
    for r in rows {
        out.record(rec![r.period_start, r.indicator, r.countries, r.md, r.mpd])?;
    }
    out.finish()
}

pub fn write_external_projection(path: &Path, records: &[ExternalRecord]) -> Result<(), IoError> {
    let mut out = Out::create(path, &["country", "period_start", "indicator", "value"])?;
    for r in records {
        out.record(rec![r.country, r.period_start, r.indicator, r.value])?;
    }
    out.finish()
}

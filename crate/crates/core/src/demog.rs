//! Shared demographic types: age grids, mortality schedules, abridged life
//! tables and population pyramids.
//!
//! Abridged tables use 22 groups per sex, `[0,1)`, `[1,5)`, `[5,10)`, ...,
//! `[95,100)`, `[100,inf)`. Population counts live on the 21-group five-year
//! grid, where `[0,5)` merges the first two abridged groups.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Number of abridged age groups per sex.
pub const ABRIDGED_GROUPS: usize = 22;
/// Number of five-year age groups per sex (last one open-ended).
pub const FIVE_YEAR_GROUPS: usize = 21;
/// Life-table radix.
pub const RADIX: f64 = 100_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DemogError {
    #[error("expected {expected} age groups, got {actual}")]
    WrongLength { expected: usize, actual: usize },
    #[error("mortality rate for age group {label} (index {group}) must be finite and positive, got {value}")]
    InvalidRate {
        group: usize,
        label: String,
        value: f64,
    },
    #[error("degenerate life table at age group {label} (index {group}): {reason}")]
    Degenerate {
        group: usize,
        label: String,
        reason: &'static str,
    },
    #[error("population count for {sex} age group {group} must be finite and non-negative, got {value}")]
    InvalidCount { sex: Sex, group: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    pub const BOTH: [Sex; 2] = [Sex::Female, Sex::Male];

    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" | "f" => Ok(Sex::Female),
            "male" | "m" => Ok(Sex::Male),
            other => Err(format!("unknown sex `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgeGrid {
    /// `[0,1)`, `[1,5)`, then five-year groups to `[95,100)`, then `100+`.
    Abridged22,
    /// Five-year groups `[0,5)` to `[95,100)`, then `100+`.
    FiveYear21,
}

impl AgeGrid {
    pub fn len(self) -> usize {
        match self {
            AgeGrid::Abridged22 => ABRIDGED_GROUPS,
            AgeGrid::FiveYear21 => FIVE_YEAR_GROUPS,
        }
    }

    pub fn is_empty(self) -> bool {
        false
    }

    /// Exact age at the start of group `i`.
    pub fn start(self, i: usize) -> f64 {
        match (self, i) {
            (AgeGrid::Abridged22, 0) => 0.0,
            (AgeGrid::Abridged22, 1) => 1.0,
            (AgeGrid::Abridged22, i) => 5.0 * (i as f64 - 1.0),
            (AgeGrid::FiveYear21, i) => 5.0 * i as f64,
        }
    }

    /// Interval width in years, `None` for the open-ended last group.
    pub fn width(self, i: usize) -> Option<f64> {
        if i + 1 >= self.len() {
            return None;
        }
        Some(self.start(i + 1) - self.start(i))
    }

    pub fn label(self, i: usize) -> String {
        match self.width(i) {
            Some(w) => format!("{}-{}", self.start(i), self.start(i) + w - 1.0),
            None => format!("{}+", self.start(i)),
        }
    }

    /// Index of the group starting exactly at `age`.
    pub fn index_of_start(self, age: f64) -> Option<usize> {
        (0..self.len()).find(|&i| self.start(i) == age)
    }
}

/// Period age-specific mortality rates for one sex on the abridged grid,
/// in deaths per person-year.
#[derive(Debug, Clone, PartialEq)]
pub struct MortalitySchedule {
    sex: Sex,
    rates: [f64; ABRIDGED_GROUPS],
}

impl MortalitySchedule {
    pub fn new(sex: Sex, rates: &[f64]) -> Result<Self, DemogError> {
        if rates.len() != ABRIDGED_GROUPS {
            return Err(DemogError::WrongLength {
                expected: ABRIDGED_GROUPS,
                actual: rates.len(),
            });
        }
        for (group, &value) in rates.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(DemogError::InvalidRate {
                    group,
                    label: AgeGrid::Abridged22.label(group),
                    value,
                });
            }
        }
        let mut arr = [0.0; ABRIDGED_GROUPS];
        arr.copy_from_slice(rates);
        Ok(Self { sex, rates: arr })
    }

    /// Builds a schedule from log rates.
    pub fn from_log_rates(sex: Sex, log_rates: &[f64]) -> Result<Self, DemogError> {
        let rates: Vec<f64> = log_rates.iter().map(|x| x.exp()).collect();
        Self::new(sex, &rates)
    }

    pub fn sex(&self) -> Sex {
        self.sex
    }

    pub fn rates(&self) -> &[f64; ABRIDGED_GROUPS] {
        &self.rates
    }

    pub fn log_rates(&self) -> [f64; ABRIDGED_GROUPS] {
        self.rates.map(f64::ln)
    }
}

/// Rule for the mean person-years lived in an interval by those dying in it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AConvention {
    /// Coale-Demeny infant and child rules keyed to `m_0`, mid-interval elsewhere.
    #[default]
    CoaleDemeny,
    /// Mid-interval everywhere.
    Midpoint,
}

/// Separation factors for the closed groups; the open group uses `1/m`.
pub fn separation_factors(
    sex: Sex,
    rates: &[f64; ABRIDGED_GROUPS],
    convention: AConvention,
) -> [f64; ABRIDGED_GROUPS] {
    let grid = AgeGrid::Abridged22;
    let mut ax = [0.0; ABRIDGED_GROUPS];
    for (i, a) in ax.iter_mut().enumerate().take(ABRIDGED_GROUPS - 1) {
        *a = grid.width(i).unwrap_or(0.0) / 2.0;
    }
    ax[ABRIDGED_GROUPS - 1] = 1.0 / rates[ABRIDGED_GROUPS - 1];
    if convention == AConvention::CoaleDemeny {
        let m0 = rates[0];
        let (a0, a1) = match (sex, m0 >= 0.107) {
            (Sex::Female, true) => (0.35, 1.361),
            (Sex::Female, false) => (0.053 + 2.8 * m0, 1.522 - 1.518 * m0),
            (Sex::Male, true) => (0.33, 1.352),
            (Sex::Male, false) => (0.045 + 2.684 * m0, 1.651 - 2.816 * m0),
        };
        ax[0] = a0;
        ax[1] = a1;
    }
    ax
}

/// Abridged life table with radix [`RADIX`].
#[derive(Debug, Clone, PartialEq)]
pub struct AbridgedLifeTable {
    pub schedule: MortalitySchedule,
    pub ax: [f64; ABRIDGED_GROUPS],
    pub qx: [f64; ABRIDGED_GROUPS],
    pub lx: [f64; ABRIDGED_GROUPS],
    pub dx: [f64; ABRIDGED_GROUPS],
    /// Person-years lived in each interval.
    pub person_years: [f64; ABRIDGED_GROUPS],
    pub tx: [f64; ABRIDGED_GROUPS],
    pub ex: [f64; ABRIDGED_GROUPS],
}

struct Columns {
    ax: [f64; ABRIDGED_GROUPS],
    qx: [f64; ABRIDGED_GROUPS],
    lx: [f64; ABRIDGED_GROUPS],
    dx: [f64; ABRIDGED_GROUPS],
    person_years: [f64; ABRIDGED_GROUPS],
}

// q is capped at 1 so that the computation stays total for extreme rates.
fn columns(sex: Sex, rates: &[f64; ABRIDGED_GROUPS], convention: AConvention) -> Columns {
    let grid = AgeGrid::Abridged22;
    let ax = separation_factors(sex, rates, convention);
    let mut qx = [0.0; ABRIDGED_GROUPS];
    let mut lx = [0.0; ABRIDGED_GROUPS];
    let mut dx = [0.0; ABRIDGED_GROUPS];
    let mut person_years = [0.0; ABRIDGED_GROUPS];
    let last = ABRIDGED_GROUPS - 1;
    let mut l = RADIX;
    for i in 0..last {
        let n = grid.width(i).unwrap_or(0.0);
        let m = rates[i];
        let q = (n * m / (1.0 + (n - ax[i]) * m)).min(1.0);
        let d = l * q;
        lx[i] = l;
        qx[i] = q;
        dx[i] = d;
        let next = l - d;
        person_years[i] = n * next + ax[i] * d;
        l = next;
    }
    lx[last] = l;
    qx[last] = 1.0;
    dx[last] = l;
    person_years[last] = l / rates[last];
    Columns {
        ax,
        qx,
        lx,
        dx,
        person_years,
    }
}

/// Life expectancy at birth without building a full table. Total for any
/// positive rates: death probabilities are capped at one.
pub fn life_expectancy_at_birth(
    sex: Sex,
    rates: &[f64; ABRIDGED_GROUPS],
    convention: AConvention,
) -> f64 {
    let c = columns(sex, rates, convention);
    c.person_years.iter().sum::<f64>() / RADIX
}

pub fn build_life_table(
    schedule: &MortalitySchedule,
    convention: AConvention,
) -> Result<AbridgedLifeTable, DemogError> {
    let c = columns(schedule.sex, &schedule.rates, convention);
    for i in 0..ABRIDGED_GROUPS - 1 {
        if c.qx[i] >= 1.0 || c.lx[i] - c.dx[i] <= 0.0 {
            return Err(DemogError::Degenerate {
                group: i,
                label: AgeGrid::Abridged22.label(i),
                reason: "no survivors leave a closed age group",
            });
        }
    }
    let mut tx = [0.0; ABRIDGED_GROUPS];
    let mut acc = 0.0;
    for i in (0..ABRIDGED_GROUPS).rev() {
        acc += c.person_years[i];
        tx[i] = acc;
    }
    let mut ex = [0.0; ABRIDGED_GROUPS];
    for i in 0..ABRIDGED_GROUPS {
        ex[i] = tx[i] / c.lx[i];
    }
    Ok(AbridgedLifeTable {
        schedule: schedule.clone(),
        ax: c.ax,
        qx: c.qx,
        lx: c.lx,
        dx: c.dx,
        person_years: c.person_years,
        tx,
        ex,
    })
}

impl AbridgedLifeTable {
    pub fn e0(&self) -> f64 {
        self.ex[0]
    }

    /// Survivors at exact age `age`, which must be a group boundary.
    pub fn survivors_at(&self, age: f64) -> Option<f64> {
        AgeGrid::Abridged22
            .index_of_start(age)
            .map(|i| self.lx[i])
    }

    /// Person-years collapsed onto the five-year grid.
    pub fn five_year_person_years(&self) -> [f64; FIVE_YEAR_GROUPS] {
        let mut out = [0.0; FIVE_YEAR_GROUPS];
        out[0] = self.person_years[0] + self.person_years[1];
        out[1..].copy_from_slice(&self.person_years[2..]);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SummaryIndex {
    /// Probability of dying before age 5.
    Q5_0,
    /// Probability of dying between 15 and 60.
    Q45_15,
    /// Probability of dying between 10 and 45.
    Q35_10,
    E0,
}

impl SummaryIndex {
    pub const ALL: [SummaryIndex; 4] = [
        SummaryIndex::E0,
        SummaryIndex::Q5_0,
        SummaryIndex::Q45_15,
        SummaryIndex::Q35_10,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SummaryIndex::Q5_0 => "q5_0",
            SummaryIndex::Q45_15 => "q45_15",
            SummaryIndex::Q35_10 => "q35_10",
            SummaryIndex::E0 => "e0",
        }
    }
}

pub fn summary_index(table: &AbridgedLifeTable, index: SummaryIndex) -> f64 {
    let q = |from: f64, to: f64| {
        let a = table.survivors_at(from).expect("group boundary");
        let b = table.survivors_at(to).expect("group boundary");
        1.0 - b / a
    };
    match index {
        SummaryIndex::Q5_0 => q(0.0, 5.0),
        SummaryIndex::Q45_15 => q(15.0, 60.0),
        SummaryIndex::Q35_10 => q(10.0, 45.0),
        SummaryIndex::E0 => table.e0(),
    }
}

/// Survival factors for a five-year projection step.
#[derive(Debug, Clone, PartialEq)]
pub struct Survivorship {
    /// Fraction of births alive in `[0,5)` at the end of the step: `L[0,5) / (5 l_0)`.
    pub births: f64,
    /// `ratios[i]` moves group `i` into group `i + 1`; the last entry pools the
    /// final closed group and the open group into the open group.
    pub ratios: [f64; FIVE_YEAR_GROUPS - 1],
}

pub fn survivorship_ratios(table: &AbridgedLifeTable) -> Result<Survivorship, DemogError> {
    let big_l = table.five_year_person_years();
    let n = FIVE_YEAR_GROUPS;
    let mut ratios = [0.0; FIVE_YEAR_GROUPS - 1];
    for i in 0..n - 2 {
        if !(big_l[i] > 0.0) {
            return Err(DemogError::Degenerate {
                group: i,
                label: AgeGrid::FiveYear21.label(i),
                reason: "zero person-years",
            });
        }
        ratios[i] = big_l[i + 1] / big_l[i];
    }
    let t_open = big_l[n - 1];
    let t_prev = big_l[n - 2] + t_open;
    if !(t_prev > 0.0) {
        return Err(DemogError::Degenerate {
            group: n - 2,
            label: AgeGrid::FiveYear21.label(n - 2),
            reason: "zero person-years",
        });
    }
    ratios[n - 2] = t_open / t_prev;
    Ok(Survivorship {
        births: big_l[0] / (5.0 * table.lx[0]),
        ratios,
    })
}

/// Population counts by sex on the five-year grid, labeled by year.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationPyramid {
    pub year: i32,
    pub female: [f64; FIVE_YEAR_GROUPS],
    pub male: [f64; FIVE_YEAR_GROUPS],
}

impl PopulationPyramid {
    pub fn new(year: i32, female: &[f64], male: &[f64]) -> Result<Self, DemogError> {
        let mut out = Self {
            year,
            female: [0.0; FIVE_YEAR_GROUPS],
            male: [0.0; FIVE_YEAR_GROUPS],
        };
        for (sex, src) in [(Sex::Female, female), (Sex::Male, male)] {
            if src.len() != FIVE_YEAR_GROUPS {
                return Err(DemogError::WrongLength {
                    expected: FIVE_YEAR_GROUPS,
                    actual: src.len(),
                });
            }
            for (group, &value) in src.iter().enumerate() {
                if !(value.is_finite() && value >= 0.0) {
                    return Err(DemogError::InvalidCount { sex, group, value });
                }
            }
            out.counts_mut(sex).copy_from_slice(src);
        }
        Ok(out)
    }

    pub fn counts(&self, sex: Sex) -> &[f64; FIVE_YEAR_GROUPS] {
        match sex {
            Sex::Female => &self.female,
            Sex::Male => &self.male,
        }
    }

    pub fn counts_mut(&mut self, sex: Sex) -> &mut [f64; FIVE_YEAR_GROUPS] {
        match sex {
            Sex::Female => &mut self.female,
            Sex::Male => &mut self.male,
        }
    }

    pub fn total(&self) -> f64 {
        self.female.iter().sum::<f64>() + self.male.iter().sum::<f64>()
    }

    pub fn aged_0_4(&self) -> f64 {
        self.female[0] + self.male[0]
    }

    /// Women in the reproductive groups 15-19 through 45-49.
    pub fn female_15_49(&self) -> f64 {
        self.female[3..10].iter().sum()
    }
}

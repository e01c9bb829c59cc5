//! Female life expectancy at birth projected in five-year steps.
//!
//! Each step adds the double-logistic expected gain at the current level, a
//! linear effect of the change in untreated HIV burden (`HnA`), and a
//! Gaussian perturbation whose standard deviation depends on the current
//! level and on whether the country has a generalized epidemic.

mod calibrate;

pub use calibrate::{
    calibrate_e0_model, CalibrationConfig, CalibrationDiagnostics, CalibrationOutput,
    E0History, Priors,
};

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::rng::{Domain, SeedTree};

/// Steepness constant: each logistic rises from 10% to 90% across its segment.
pub const A1: f64 = 4.394_449_154_672_439; // ln 81
/// Midpoint of each logistic sits at the centre of its segment.
pub const A2: f64 = 0.5;
/// Simulated female e0 never drops below this, years.
pub const E0_FLOOR: f64 = 20.0;
/// Levels at which the double logistic must be finite and non-negative.
pub const ADMISSIBLE_RANGE: (f64, f64) = (20.0, 110.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum E0Error {
    #[error("invalid double-logistic parameters: {0}")]
    InvalidParams(String),
    #[error("invalid HIV/ART series for {country}: {reason}")]
    InvalidHna { country: String, reason: String },
    #[error("trajectory alignment: {0}")]
    Alignment(String),
    #[error("unknown country `{0}`")]
    UnknownCountry(String),
    #[error("insufficient calibration data (need at least 5 increments): {}", .0.join(", "))]
    InsufficientData(Vec<String>),
    #[error("calibration failed: {0}")]
    Calibration(String),
}

/// Six-parameter double logistic: segment widths `d1..d4` (years of e0) and
/// asymptotic gains `k`, `z` (years per five-year period).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleLogisticParams {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
    pub k: f64,
    pub z: f64,
}

impl DoubleLogisticParams {
    pub fn new(d1: f64, d2: f64, d3: f64, d4: f64, k: f64, z: f64) -> Result<Self, E0Error> {
        let p = Self {
            d1,
            d2,
            d3,
            d4,
            k,
            z,
        };
        if ![d1, d2, d3, d4, k, z].iter().all(|v| v.is_finite()) {
            return Err(E0Error::InvalidParams("non-finite value".into()));
        }
        if !(d1 > 0.0 && d2 > 0.0 && d3 > 0.0 && d4 > 0.0) {
            return Err(E0Error::InvalidParams("segment widths must be positive".into()));
        }
        if !(k > 0.0 && z >= 0.0) {
            return Err(E0Error::InvalidParams("need k > 0 and z >= 0".into()));
        }
        if !p.is_admissible() {
            return Err(E0Error::InvalidParams(
                "expected gain is negative somewhere in [20, 110]".into(),
            ));
        }
        Ok(p)
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.d1, self.d2, self.d3, self.d4, self.k, self.z]
    }

    /// Unchecked construction from an array in `to_array` order.
    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            d1: a[0],
            d2: a[1],
            d3: a[2],
            d4: a[3],
            k: a[4],
            z: a[5],
        }
    }

    /// Expected gain finite and non-negative on a one-year grid over
    /// [`ADMISSIBLE_RANGE`].
    pub fn is_admissible(&self) -> bool {
        let (lo, hi) = ADMISSIBLE_RANGE;
        let n = (hi - lo) as usize;
        (0..=n).all(|i| {
            let g = double_logistic(lo + i as f64, self);
            g.is_finite() && g >= 0.0
        })
    }
}

/// Expected five-year gain in female e0 at level `e0`.
#[inline]
pub fn double_logistic(e0: f64, p: &DoubleLogisticParams) -> f64 {
    let first = p.k / (1.0 + (-(A1 / p.d2) * (e0 - p.d1 - A2 * p.d2)).exp());
    let second =
        (p.z - p.k) / (1.0 + (-(A1 / p.d4) * (e0 - p.d1 - p.d2 - p.d3 - A2 * p.d4)).exp());
    first + second
}

/// Untreated HIV burden: prevalence (percent) times the untreated share
/// (percent), so units are percent squared.
pub fn hna(hiv_pct: f64, art_pct: f64) -> f64 {
    hiv_pct * (100.0 - art_pct)
}

/// Period HIV prevalence and ART coverage for one country.
#[derive(Debug, Clone, PartialEq)]
pub struct HnaSeries {
    pub country: String,
    pub period_starts: Vec<i32>,
    pub hiv: Vec<f64>,
    pub art: Vec<f64>,
}

impl HnaSeries {
    pub fn new(
        country: &str,
        period_starts: Vec<i32>,
        hiv: Vec<f64>,
        art: Vec<f64>,
    ) -> Result<Self, E0Error> {
        let bad = |reason: String| E0Error::InvalidHna {
            country: country.to_string(),
            reason,
        };
        if hiv.len() != period_starts.len() || art.len() != period_starts.len() {
            return Err(bad("series lengths differ".into()));
        }
        if let Some(v) = hiv.iter().find(|v| !(**v >= 0.0 && **v < 100.0)) {
            return Err(bad(format!("HIV prevalence {v} outside [0, 100)")));
        }
        if let Some(v) = art.iter().find(|v| !(**v >= 0.0 && **v <= 100.0)) {
            return Err(bad(format!("ART coverage {v} outside [0, 100]")));
        }
        Ok(Self {
            country: country.to_string(),
            period_starts,
            hiv,
            art,
        })
    }

    /// Series with zero prevalence throughout.
    pub fn zero(country: &str, period_starts: Vec<i32>) -> Self {
        let n = period_starts.len();
        Self {
            country: country.to_string(),
            period_starts,
            hiv: vec![0.0; n],
            art: vec![0.0; n],
        }
    }

    pub fn hna(&self) -> Vec<f64> {
        self.hiv.iter().zip(&self.art).map(|(&h, &a)| hna(h, a)).collect()
    }

    /// First differences `HnA[p+1] - HnA[p]`.
    pub fn delta_hna(&self) -> Vec<f64> {
        self.hna().windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Any period starting in or after 1980 with prevalence above 2%.
    pub fn is_generalized_epidemic(&self) -> bool {
        self.period_starts
            .iter()
            .zip(&self.hiv)
            .any(|(&p, &h)| p >= 1980 && h > 2.0)
    }
}

/// Standard deviation of the e0 perturbation as a function of the level.
///
/// Piecewise linear in e0 through fixed knots (constant outside); the
/// epidemic regime multiplies it by `epidemic_factor >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceModel {
    pub knots: Vec<f64>,
    pub sd: Vec<f64>,
    pub epidemic_factor: f64,
}

pub const DEFAULT_VARIANCE_KNOTS: [f64; 3] = [40.0, 60.0, 80.0];

impl VarianceModel {
    pub fn new(knots: Vec<f64>, sd: Vec<f64>, epidemic_factor: f64) -> Result<Self, E0Error> {
        if knots.is_empty() || knots.len() != sd.len() {
            return Err(E0Error::InvalidParams("variance knots and values differ".into()));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(E0Error::InvalidParams("variance knots must increase".into()));
        }
        if sd.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(E0Error::InvalidParams("variance values must be non-negative".into()));
        }
        if !(epidemic_factor.is_finite() && epidemic_factor >= 1.0) {
            return Err(E0Error::InvalidParams("epidemic factor must be >= 1".into()));
        }
        Ok(Self {
            knots,
            sd,
            epidemic_factor,
        })
    }

    /// Same standard deviation at every level in both regimes.
    pub fn constant(sd: f64) -> Self {
        Self {
            knots: vec![DEFAULT_VARIANCE_KNOTS[0]],
            sd: vec![sd],
            epidemic_factor: 1.0,
        }
    }

    pub fn sd_nonepidemic(&self, e0: f64) -> f64 {
        piecewise_linear(&self.knots, &self.sd, e0)
    }

    pub fn sd_epidemic(&self, e0: f64) -> f64 {
        self.epidemic_factor * self.sd_nonepidemic(e0)
    }

    pub fn sd(&self, e0: f64, epidemic: bool) -> f64 {
        if epidemic {
            self.sd_epidemic(e0)
        } else {
            self.sd_nonepidemic(e0)
        }
    }

    pub fn variance(&self, e0: f64, epidemic: bool) -> f64 {
        self.sd(e0, epidemic).powi(2)
    }
}

pub(crate) fn piecewise_linear(knots: &[f64], values: &[f64], x: f64) -> f64 {
    let n = knots.len();
    if x <= knots[0] {
        return values[0];
    }
    if x >= knots[n - 1] {
        return values[n - 1];
    }
    let j = knots.partition_point(|&k| k <= x);
    let (x0, x1) = (knots[j - 1], knots[j]);
    let w = (x - x0) / (x1 - x0);
    values[j - 1] * (1.0 - w) + values[j] * w
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountryE0 {
    pub code: String,
    pub theta: DoubleLogisticParams,
    pub epidemic: bool,
}

/// One joint posterior draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterDraw {
    pub beta_hna: f64,
    pub variance: VarianceModel,
    /// In the order of [`E0Model::countries`].
    pub theta: Vec<DoubleLogisticParams>,
}

/// Calibrated life-expectancy model. Point estimates drive simulation unless
/// posterior draws are attached, in which case trajectory `k` uses draw
/// `k mod draws.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct E0Model {
    pub countries: Vec<CountryE0>,
    pub beta_hna: f64,
    pub variance: VarianceModel,
    pub draws: Vec<ParameterDraw>,
}

impl E0Model {
    pub fn country_index(&self, code: &str) -> Option<usize> {
        self.countries.iter().position(|c| c.code == code)
    }

    pub fn country(&self, code: &str) -> Option<&CountryE0> {
        self.countries.iter().find(|c| c.code == code)
    }

    /// `(theta, beta, variance)` used for trajectory `k` of country `idx`.
    pub fn parameters_for(
        &self,
        idx: usize,
        k: usize,
    ) -> (&DoubleLogisticParams, f64, &VarianceModel) {
        if self.draws.is_empty() {
            (&self.countries[idx].theta, self.beta_hna, &self.variance)
        } else {
            let d = &self.draws[k % self.draws.len()];
            (&d.theta[idx], d.beta_hna, &d.variance)
        }
    }

    /// Same model without posterior draws.
    pub fn point_estimate(&self) -> Self {
        Self {
            draws: Vec::new(),
            ..self.clone()
        }
    }
}

/// One five-year step of the e0 model. A standard-normal draw is always
/// consumed, so streams stay aligned whatever `sigma` is.
pub fn project_e0_step<R: Rng + ?Sized>(
    e0_prev: f64,
    theta: &DoubleLogisticParams,
    beta_hna: f64,
    delta_hna: f64,
    sigma: f64,
    rng: &mut R,
) -> f64 {
    let eps: f64 = rng.sample(StandardNormal);
    let next = e0_prev + double_logistic(e0_prev, theta) + beta_hna * delta_hna + sigma * eps;
    next.max(E0_FLOOR)
}

/// Female e0 by trajectory for the periods after the start period.
#[derive(Debug, Clone, PartialEq)]
pub struct E0TrajectorySet {
    pub country: String,
    pub period_starts: Vec<i32>,
    /// `values[k][p]`, years.
    pub values: Vec<Vec<f64>>,
    /// Index of the HnA (prevalence) path that drove each trajectory.
    pub hna_path_index: Vec<usize>,
}

/// Inputs for simulating one country.
#[derive(Debug, Clone)]
pub struct E0SimulationInput<'a> {
    pub country: &'a str,
    /// Female e0 of the last observed period.
    pub e0_start: f64,
    /// Start year of the last observed period.
    pub start_period: i32,
    /// `hna_paths[k]` holds HnA for the start period followed by every
    /// projected period; its index must match the prevalence trajectory.
    pub hna_paths: &'a [Vec<f64>],
    pub trajectories: usize,
}

pub fn simulate_e0_trajectories(
    model: &E0Model,
    input: &E0SimulationInput<'_>,
    seeds: &SeedTree,
    country_stream: u64,
) -> Result<E0TrajectorySet, E0Error> {
    let idx = model
        .country_index(input.country)
        .ok_or_else(|| E0Error::UnknownCountry(input.country.to_string()))?;
    if input.hna_paths.len() != input.trajectories {
        return Err(E0Error::Alignment(format!(
            "{} HnA paths for {} trajectories",
            input.hna_paths.len(),
            input.trajectories
        )));
    }
    let horizon = input.hna_paths.first().map_or(0, |p| p.len().saturating_sub(1));
    if let Some(k) = input.hna_paths.iter().position(|p| p.len() != horizon + 1) {
        return Err(E0Error::Alignment(format!("HnA path {k} has a different length")));
    }
    let epidemic = model.countries[idx].epidemic;
    let values = (0..input.trajectories)
        .map(|k| {
            let (theta, beta, variance) = model.parameters_for(idx, k);
            let mut rng = seeds.stream(Domain::E0, country_stream, k as u64);
            let path = &input.hna_paths[k];
            let mut e0 = input.e0_start;
            (0..horizon)
                .map(|p| {
                    let sigma = variance.sd(e0, epidemic);
                    e0 = project_e0_step(e0, theta, beta, path[p + 1] - path[p], sigma, &mut rng);
                    e0
                })
                .collect()
        })
        .collect();
    Ok(E0TrajectorySet {
        country: input.country.to_string(),
        period_starts: (1..=horizon as i32)
            .map(|j| input.start_period + 5 * j)
            .collect(),
        values,
        hna_path_index: (0..input.trajectories).collect(),
    })
}

/// HnA for the start period followed by each projected period, using one
/// five-year prevalence path and the deterministic ART path.
pub fn hna_path(prevalence: &[f64], art: &[f64]) -> Vec<f64> {
    prevalence.iter().zip(art).map(|(&h, &a)| hna(h, a)).collect()
}

/// Country lookup table used by persistence and the CLI.
pub fn countries_by_code(model: &E0Model) -> BTreeMap<&str, &CountryE0> {
    model.countries.iter().map(|c| (c.code.as_str(), c)).collect()
}

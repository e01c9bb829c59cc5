//! HIV prevalence trajectories.
//!
//! A three-compartment epidemic model (not-at-risk, at-risk susceptible,
//! infected) generates an ensemble of annual adult prevalence paths. The
//! force of infection and the at-risk recruitment share decay with fixed
//! half-lives from the projection start. The ensemble is then re-anchored on
//! a reference median path by ratio scaling and averaged to five-year periods.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Half-life of the at-risk recruitment share, years.
pub const PHI_HALF_LIFE: f64 = 20.0;
/// Half-life of the force of infection, years.
pub const R_HALF_LIFE: f64 = 30.0;
/// Upper clamp keeping prevalence inside `[0, 100)`.
pub const MAX_PREVALENCE: f64 = 99.999;
/// Integration step, years.
pub const RK4_STEP: f64 = 0.1;
/// Default ensemble size.
pub const DEFAULT_TRAJECTORIES: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrevalenceError {
    #[error("invalid epidemic parameters: {0}")]
    InvalidParams(String),
    #[error("integration produced a non-finite state at t = {time:.2}")]
    IntegrationFailure { time: f64 },
    #[error("paths do not share a year grid: {0}")]
    GridMismatch(String),
    #[error("ratio scaling undefined in {year} for trajectory {trajectory}: reference median is zero")]
    ScalingUndefined { year: i32, trajectory: usize },
    #[error("five-year period starting {period_start} is not covered by the annual grid")]
    IncompleteCoverage { period_start: i32 },
    #[error("prevalence {value} in {year} is outside [0, 100)")]
    OutOfRange { year: i32, value: f64 },
}

/// Compartment shares of the adult population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Compartments {
    pub not_at_risk: f64,
    pub at_risk: f64,
    pub infected: f64,
}

impl Compartments {
    pub fn total(&self) -> f64 {
        self.not_at_risk + self.at_risk + self.infected
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EppParams {
    /// Projection start year; decay clocks start here.
    pub t0: i32,
    /// Force of infection at `t0`, per year.
    pub r0: f64,
    /// Share of entrants recruited into the at-risk group at `t0`.
    pub phi0: f64,
    pub initial: Compartments,
    /// Entrants per year as a fraction of the adult population.
    pub entry_rate: f64,
    /// Non-AIDS exit rate (ageing out and background mortality), per year.
    pub exit_rate: f64,
    /// Mean survival after infection without treatment, years.
    pub hiv_survival: f64,
}

impl Default for EppParams {
    fn default() -> Self {
        Self {
            t0: 2015,
            r0: 0.8,
            phi0: 0.1,
            initial: Compartments {
                not_at_risk: 0.72,
                at_risk: 0.18,
                infected: 0.10,
            },
            entry_rate: 0.035,
            exit_rate: 0.025,
            hiv_survival: 11.0,
        }
    }
}

impl EppParams {
    pub fn validate(&self) -> Result<(), PrevalenceError> {
        let bad = |msg: &str| Err(PrevalenceError::InvalidParams(msg.to_string()));
        if !(self.r0.is_finite() && self.r0 >= 0.0) {
            return bad("r0 must be finite and non-negative");
        }
        if !(self.phi0.is_finite() && self.phi0 >= 0.0) {
            return bad("phi0 must be finite and non-negative");
        }
        let c = self.initial;
        if [c.not_at_risk, c.at_risk, c.infected]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return bad("compartment shares must be non-negative");
        }
        if (c.total() - 1.0).abs() > 1e-12 {
            return bad("compartment shares must sum to 1");
        }
        if !(self.entry_rate >= 0.0 && self.exit_rate >= 0.0) {
            return bad("entry and exit rates must be non-negative");
        }
        if !(self.hiv_survival.is_finite() && self.hiv_survival > 0.0) {
            return bad("mean survival with HIV must be positive");
        }
        Ok(())
    }
}

/// Force of infection and recruitment share at `year`. Before `t0` the start
/// values apply.
pub fn decay_parameters(params: &EppParams, year: f64) -> (f64, f64) {
    let elapsed = (year - f64::from(params.t0)).max(0.0);
    let r = params.r0 * (-elapsed / R_HALF_LIFE).exp2();
    let phi = params.phi0 * (-elapsed / PHI_HALF_LIFE).exp2();
    (r, phi)
}

/// Log-normal multiplicative uncertainty on `r0` and `phi0`, drawn once per
/// trajectory. All-zero is the deterministic model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EppNoise {
    pub log_r_sd: f64,
    pub log_phi_sd: f64,
}

impl EppNoise {
    pub fn is_deterministic(&self) -> bool {
        self.log_r_sd == 0.0 && self.log_phi_sd == 0.0
    }
}

/// Annual values on consecutive mid-year points `start_year..`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnualPath {
    pub start_year: i32,
    pub values: Vec<f64>,
}

impl AnnualPath {
    pub fn new(start_year: i32, values: Vec<f64>) -> Self {
        Self { start_year, values }
    }

    pub fn end_year(&self) -> i32 {
        self.start_year + self.values.len() as i32 - 1
    }

    pub fn get(&self, year: i32) -> Option<f64> {
        let i = year.checked_sub(self.start_year)?;
        usize::try_from(i).ok().and_then(|i| self.values.get(i).copied())
    }

    fn same_grid(&self, other: &AnnualPath) -> bool {
        self.start_year == other.start_year && self.values.len() == other.values.len()
    }
}

fn derivatives(params: &EppParams, t: f64, y: [f64; 3]) -> [f64; 3] {
    let [x, z, inf] = y;
    let n = x + z + inf;
    let (r, phi) = decay_parameters(params, t);
    let entrants = params.entry_rate * n;
    let incidence = if n > 0.0 { r * z * inf / n } else { 0.0 };
    let mu = params.exit_rate;
    [
        (1.0 - phi).max(0.0) * entrants - mu * x,
        phi * entrants - incidence - mu * z,
        incidence - (mu + 1.0 / params.hiv_survival) * inf,
    ]
}

fn rk4(params: &EppParams, t: f64, y: [f64; 3], h: f64) -> [f64; 3] {
    let add = |a: [f64; 3], b: [f64; 3], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
    let k1 = derivatives(params, t, y);
    let k2 = derivatives(params, t + h / 2.0, add(y, k1, h / 2.0));
    let k3 = derivatives(params, t + h / 2.0, add(y, k2, h / 2.0));
    let k4 = derivatives(params, t + h, add(y, k3, h));
    let mut out = y;
    for i in 0..3 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn prevalence_pct(y: [f64; 3]) -> f64 {
    let n = y[0] + y[1] + y[2];
    if n <= 0.0 {
        return 0.0;
    }
    (100.0 * y[2] / n).clamp(0.0, MAX_PREVALENCE)
}

/// Integrates the epidemic model from `t0` to `horizon_year` with RK4 and
/// returns adult prevalence (percent) at each year.
pub fn simulate_epp<R: Rng + ?Sized>(
    params: &EppParams,
    horizon_year: i32,
    noise: &EppNoise,
    rng: &mut R,
) -> Result<AnnualPath, PrevalenceError> {
    params.validate()?;
    if horizon_year <= params.t0 {
        return Err(PrevalenceError::InvalidParams(format!(
            "horizon {horizon_year} must be after the start year {}",
            params.t0
        )));
    }
    let mut p = params.clone();
    if !noise.is_deterministic() {
        let zr: f64 = rng.sample(StandardNormal);
        let zp: f64 = rng.sample(StandardNormal);
        p.r0 *= (noise.log_r_sd * zr).exp();
        p.phi0 *= (noise.log_phi_sd * zp).exp();
    }
    let steps_per_year = (1.0 / RK4_STEP).round() as usize;
    let years = (horizon_year - p.t0) as usize;
    let c = p.initial;
    let mut y = [c.not_at_risk, c.at_risk, c.infected];
    let mut values = Vec::with_capacity(years + 1);
    values.push(prevalence_pct(y));
    let mut t = f64::from(p.t0);
    for year in 0..years {
        for s in 0..steps_per_year {
            y = rk4(&p, t, y, RK4_STEP);
            t = f64::from(p.t0) + year as f64 + (s + 1) as f64 * RK4_STEP;
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(PrevalenceError::IntegrationFailure { time: t });
        }
        // clip tiny negative round-off
        for v in &mut y {
            *v = v.max(0.0);
        }
        values.push(prevalence_pct(y));
    }
    Ok(AnnualPath::new(p.t0, values))
}

/// Pointwise median across an ensemble sharing one grid.
pub fn pointwise_median(samples: &[AnnualPath]) -> Result<AnnualPath, PrevalenceError> {
    let first = samples
        .first()
        .ok_or_else(|| PrevalenceError::GridMismatch("empty ensemble".into()))?;
    if let Some(bad) = samples.iter().position(|s| !s.same_grid(first)) {
        return Err(PrevalenceError::GridMismatch(format!("trajectory {bad}")));
    }
    let mut col = vec![0.0; samples.len()];
    let values = (0..first.values.len())
        .map(|t| {
            for (c, s) in col.iter_mut().zip(samples) {
                *c = s.values[t];
            }
            crate::stats::quantile(&col, 0.5)
        })
        .collect();
    Ok(AnnualPath::new(first.start_year, values))
}

/// Reference median path plus ratio-scaled ensemble for one country.
#[derive(Debug, Clone, PartialEq)]
pub struct PrevalenceTrajectorySet {
    pub country: String,
    pub start_year: i32,
    pub median: Vec<f64>,
    /// `samples[k][t]`, percent.
    pub samples: Vec<Vec<f64>>,
}

impl PrevalenceTrajectorySet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn years(&self) -> std::ops::Range<i32> {
        self.start_year..self.start_year + self.median.len() as i32
    }
}

/// Multiplies the reference path by `raw_k(t) / raw_median(t)` for every
/// trajectory `k` and clamps to `[0, MAX_PREVALENCE]`.
pub fn scale_trajectories(
    country: &str,
    reference: &AnnualPath,
    raw_median: &AnnualPath,
    raw_samples: &[AnnualPath],
) -> Result<PrevalenceTrajectorySet, PrevalenceError> {
    if !reference.same_grid(raw_median) {
        return Err(PrevalenceError::GridMismatch(
            "reference and raw median differ".into(),
        ));
    }
    let mut samples = Vec::with_capacity(raw_samples.len());
    for (k, raw) in raw_samples.iter().enumerate() {
        if !raw.same_grid(raw_median) {
            return Err(PrevalenceError::GridMismatch(format!("trajectory {k}")));
        }
        let mut out = Vec::with_capacity(raw.values.len());
        for (t, ((&z_k, &z), &target)) in raw
            .values
            .iter()
            .zip(&raw_median.values)
            .zip(&reference.values)
            .enumerate()
        {
            let v = if z > 0.0 {
                target * z_k / z
            } else if z_k > 0.0 {
                return Err(PrevalenceError::ScalingUndefined {
                    year: raw.start_year + t as i32,
                    trajectory: k,
                });
            } else {
                0.0
            };
            out.push(v.clamp(0.0, MAX_PREVALENCE));
        }
        samples.push(out);
    }
    Ok(PrevalenceTrajectorySet {
        country: country.to_string(),
        start_year: reference.start_year,
        median: reference
            .values
            .iter()
            .map(|v| v.clamp(0.0, MAX_PREVALENCE))
            .collect(),
        samples,
    })
}

/// Five-year period means of annual prevalence.
#[derive(Debug, Clone, PartialEq)]
pub struct FiveYearPrevalence {
    pub country: String,
    pub period_starts: Vec<i32>,
    pub median: Vec<f64>,
    /// `samples[k][p]`, percent.
    pub samples: Vec<Vec<f64>>,
}

/// Mean of the five annual values `[start, start + 5)` for each period.
pub fn five_year_means(
    start_year: i32,
    values: &[f64],
    period_starts: &[i32],
) -> Result<Vec<f64>, PrevalenceError> {
    period_starts
        .iter()
        .map(|&ps| {
            let off = ps - start_year;
            if off < 0 || (off as usize + 5) > values.len() {
                return Err(PrevalenceError::IncompleteCoverage { period_start: ps });
            }
            let off = off as usize;
            Ok(values[off..off + 5].iter().sum::<f64>() / 5.0)
        })
        .collect()
}

pub fn aggregate_five_year(
    set: &PrevalenceTrajectorySet,
    period_starts: &[i32],
) -> Result<FiveYearPrevalence, PrevalenceError> {
    let median = five_year_means(set.start_year, &set.median, period_starts)?;
    let samples = set
        .samples
        .iter()
        .map(|s| five_year_means(set.start_year, s, period_starts))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FiveYearPrevalence {
        country: set.country.clone(),
        period_starts: period_starts.to_vec(),
        median,
        samples,
    })
}

/// Generalized-epidemic test: prevalence above 2% at any time since 1980.
pub fn is_generalized_epidemic(path: &AnnualPath) -> bool {
    path.values
        .iter()
        .enumerate()
        .any(|(i, &v)| path.start_year + i as i32 >= 1980 && v > 2.0)
}

//! HIV-calibrated model life table.
//!
//! Joint female/male log mortality (44 rows, female groups first) is
//! row-centered and decomposed by SVD. Three components are kept; their
//! per-column scores are regressed on female e0 and HIV prevalence. A
//! prediction evaluates the regression, adds a scalar intercept chosen so the
//! female table reproduces the requested e0, and optionally perturbs each log
//! rate with per-age residual noise.

use nalgebra::{DMatrix, DVector, SVD};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::demog::{
    life_expectancy_at_birth, AConvention, DemogError, MortalitySchedule, Sex, ABRIDGED_GROUPS,
};

pub const MLT_ROWS: usize = 2 * ABRIDGED_GROUPS;
pub const COMPONENTS: usize = 3;
/// Terms of the weight regression: 1, e0, e0², prev, prev², e0·prev.
pub const DESIGN_TERMS: usize = 6;
pub const INTERCEPT_BRACKET: (f64, f64) = (-10.0, 10.0);
pub const BISECTION_TOLERANCE: f64 = 1e-4;
pub const BISECTION_MAX_ITER: usize = 200;
/// Required agreement between matched and requested female e0, years.
pub const E0_MATCH_TOLERANCE: f64 = 0.01;
pub const MIN_E0_SPAN: f64 = 20.0;
pub const MIN_PREVALENCE_SPAN: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MltError {
    #[error("calibration matrix: {0}")]
    Shape(String),
    #[error("calibration matrix entry (row {row}, column {column}) is not finite: {value}")]
    NonFinite { row: usize, column: usize, value: f64 },
    #[error("need at least {need} calibration columns, got {have}")]
    InsufficientColumns { have: usize, need: usize },
    #[error("covariate range too narrow: {0}")]
    CovariateRange(String),
    #[error("rank-deficient weight-regression design: {0}")]
    RankDeficient(String),
    #[error("cannot match female e0 {target}: {reason}")]
    MatchingFailure { target: f64, reason: String },
    #[error(transparent)]
    Demog(#[from] DemogError),
}

/// Identifies one calibration life table.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMeta {
    pub country: String,
    pub period_start: i32,
    pub e0_female: f64,
    /// Percent.
    pub prevalence: f64,
}

/// Stacked joint log mortality, one column per country-period.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationMatrix {
    data: DMatrix<f64>,
    meta: Vec<ColumnMeta>,
}

impl CalibrationMatrix {
    /// `columns[j]` holds 44 log rates (female groups then male groups).
    pub fn new(columns: &[Vec<f64>], meta: Vec<ColumnMeta>) -> Result<Self, MltError> {
        if columns.len() != meta.len() {
            return Err(MltError::Shape(format!(
                "{} columns but {} metadata entries",
                columns.len(),
                meta.len()
            )));
        }
        if let Some((j, c)) = columns.iter().enumerate().find(|(_, c)| c.len() != MLT_ROWS) {
            return Err(MltError::Shape(format!(
                "column {j} has {} rows, expected {MLT_ROWS}",
                c.len()
            )));
        }
        for (j, m) in meta.iter().enumerate() {
            if !(m.e0_female.is_finite() && m.prevalence.is_finite()) || m.country.is_empty() {
                return Err(MltError::Shape(format!("incomplete metadata for column {j}")));
            }
        }
        let data = DMatrix::from_fn(MLT_ROWS, columns.len(), |i, j| columns[j][i]);
        for j in 0..data.ncols() {
            for i in 0..MLT_ROWS {
                let value = data[(i, j)];
                if !value.is_finite() {
                    return Err(MltError::NonFinite { row: i, column: j, value });
                }
            }
        }
        Ok(Self { data, meta })
    }

    /// Builds a matrix from paired schedules, taking each column's female
    /// e0 from its life table.
    pub fn from_schedules(
        pairs: &[(MortalitySchedule, MortalitySchedule)],
        labels: &[(String, i32, f64)],
    ) -> Result<Self, MltError> {
        if pairs.len() != labels.len() {
            return Err(MltError::Shape("schedule and label counts differ".into()));
        }
        let mut columns = Vec::with_capacity(pairs.len());
        let mut meta = Vec::with_capacity(pairs.len());
        for ((f, m), (country, period, prev)) in pairs.iter().zip(labels) {
            let mut col = f.log_rates().to_vec();
            col.extend_from_slice(&m.log_rates());
            columns.push(col);
            meta.push(ColumnMeta {
                country: country.clone(),
                period_start: *period,
                e0_female: life_expectancy_at_birth(Sex::Female, f.rates(), AConvention::default()),
                prevalence: *prev,
            });
        }
        Self::new(&columns, meta)
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn meta(&self) -> &[ColumnMeta] {
        &self.meta
    }

    pub fn column(&self, j: usize) -> [f64; MLT_ROWS] {
        let mut out = [0.0; MLT_ROWS];
        for (i, v) in out.iter_mut().enumerate() {
            *v = self.data[(i, j)];
        }
        out
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }
}

/// Covariate box outside of which predictions are flagged as extrapolated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Guardrails {
    pub e0: (f64, f64),
    pub prevalence: (f64, f64),
}

impl Guardrails {
    pub fn contains(&self, e0: f64, prevalence: f64) -> bool {
        e0 >= self.e0.0 && e0 <= self.e0.1 && prevalence >= self.prevalence.0 && prevalence <= self.prevalence.1
    }
}

/// OLS coefficients of each component score on the standardized covariate
/// design.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightRegression {
    pub coefficients: [[f64; DESIGN_TERMS]; COMPONENTS],
    pub e0_center: f64,
    pub e0_scale: f64,
    pub prevalence_center: f64,
    pub prevalence_scale: f64,
}

impl WeightRegression {
    fn design(&self, e0: f64, prevalence: f64) -> [f64; DESIGN_TERMS] {
        let e = (e0 - self.e0_center) / self.e0_scale;
        let p = (prevalence - self.prevalence_center) / self.prevalence_scale;
        [1.0, e, e * e, p, p * p, e * p]
    }

    pub fn evaluate(&self, e0: f64, prevalence: f64) -> [f64; COMPONENTS] {
        let x = self.design(e0, prevalence);
        self.coefficients
            .map(|c| c.iter().zip(&x).map(|(a, b)| a * b).sum())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MltBasis {
    /// Row means of the calibration matrix.
    pub mean: [f64; MLT_ROWS],
    /// Orthonormal components, each summing to a positive value.
    pub components: [[f64; MLT_ROWS]; COMPONENTS],
    pub regression: WeightRegression,
    /// Per-row predictive residual standard deviation, log-rate units.
    pub residual_sd: [f64; MLT_ROWS],
    pub guardrails: Guardrails,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedWeights {
    pub omega: [f64; COMPONENTS],
    pub extrapolated: bool,
}

/// Female and male schedules generated from one set of inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSchedulePair {
    pub female: MortalitySchedule,
    pub male: MortalitySchedule,
    /// Matched intercept, log-rate units.
    pub intercept: f64,
    pub e0_female_input: f64,
    pub prevalence: f64,
}

impl JointSchedulePair {
    pub fn schedule(&self, sex: Sex) -> &MortalitySchedule {
        match sex {
            Sex::Female => &self.female,
            Sex::Male => &self.male,
        }
    }

    pub fn stacked_log_rates(&self) -> [f64; MLT_ROWS] {
        let mut out = [0.0; MLT_ROWS];
        out[..ABRIDGED_GROUPS].copy_from_slice(&self.female.log_rates());
        out[ABRIDGED_GROUPS..].copy_from_slice(&self.male.log_rates());
        out
    }
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

pub fn calibrate_mlt(matrix: &CalibrationMatrix) -> Result<MltBasis, MltError> {
    let n = matrix.ncols();
    if n < MLT_ROWS {
        return Err(MltError::InsufficientColumns { have: n, need: MLT_ROWS });
    }
    let e0_range = span(matrix.meta.iter().map(|m| m.e0_female));
    let prev_range = span(matrix.meta.iter().map(|m| m.prevalence));
    if e0_range.1 - e0_range.0 < MIN_E0_SPAN {
        return Err(MltError::CovariateRange(format!(
            "female e0 spans {:.2} years, need {MIN_E0_SPAN}",
            e0_range.1 - e0_range.0
        )));
    }
    if prev_range.1 - prev_range.0 < MIN_PREVALENCE_SPAN {
        return Err(MltError::CovariateRange(format!(
            "prevalence spans {:.2} points, need {MIN_PREVALENCE_SPAN}",
            prev_range.1 - prev_range.0
        )));
    }

    let mean_vec = matrix.data.column_mean();
    let mut centered = matrix.data.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean_vec;
    }
    let svd = SVD::new(centered.clone(), true, false);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let mut components = [[0.0; MLT_ROWS]; COMPONENTS];
    for (c, comp) in components.iter_mut().enumerate() {
        let col = u.column(c);
        let sign = if col.sum() < 0.0 { -1.0 } else { 1.0 };
        for i in 0..MLT_ROWS {
            comp[i] = sign * col[i];
        }
    }

    // scores of each column on the retained components
    let b = DMatrix::from_fn(MLT_ROWS, COMPONENTS, |i, c| components[c][i]);
    let scores = b.transpose() * &centered;

    let e0s: Vec<f64> = matrix.meta.iter().map(|m| m.e0_female).collect();
    let prevs: Vec<f64> = matrix.meta.iter().map(|m| m.prevalence).collect();
    let mut regression = WeightRegression {
        coefficients: [[0.0; DESIGN_TERMS]; COMPONENTS],
        e0_center: crate::stats::mean(&e0s),
        e0_scale: crate::stats::sd(&e0s),
        prevalence_center: crate::stats::mean(&prevs),
        prevalence_scale: crate::stats::sd(&prevs),
    };
    let x = DMatrix::from_fn(n, DESIGN_TERMS, |j, t| regression.design(e0s[j], prevs[j])[t]);
    let design_svd = SVD::new(x.clone(), true, true);
    let sv = &design_svd.singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-10 * smax) {
        return Err(MltError::RankDeficient(format!(
            "condition number {:.3e}",
            smax / smin
        )));
    }
    for c in 0..COMPONENTS {
        let y = DVector::from_iterator(n, scores.row(c).iter().copied());
        let coef = design_svd
            .solve(&y, 0.0)
            .map_err(|e| MltError::RankDeficient(e.to_string()))?;
        for t in 0..DESIGN_TERMS {
            regression.coefficients[c][t] = coef[t];
        }
    }

    let mut mean = [0.0; MLT_ROWS];
    mean.copy_from_slice(mean_vec.as_slice());
    let mut basis = MltBasis {
        mean,
        components,
        regression,
        residual_sd: [0.0; MLT_ROWS],
        guardrails: Guardrails {
            e0: e0_range,
            prevalence: prev_range,
        },
    };

    // predictive residuals: observed minus regression prediction matched to
    // the column's female e0
    let mut ss = [0.0; MLT_ROWS];
    for j in 0..n {
        let m = &matrix.meta[j];
        let omega = basis.regression.evaluate(m.e0_female, m.prevalence);
        let pair = match_e0(&basis, &omega, m.e0_female)?;
        let fitted = pair.stacked_log_rates();
        for i in 0..MLT_ROWS {
            ss[i] += (matrix.data[(i, j)] - fitted[i]).powi(2);
        }
    }
    basis.residual_sd = ss.map(|s| (s / n as f64).sqrt());
    Ok(basis)
}

impl MltBasis {
    /// Regression weights at `(e0, prevalence)`, flagged and logged when the
    /// inputs fall outside the calibration range.
    pub fn predict_weights(&self, e0_female: f64, prevalence: f64) -> PredictedWeights {
        let extrapolated = !self.guardrails.contains(e0_female, prevalence);
        if extrapolated {
            log::warn!(
                "model life table extrapolating: e0 {e0_female:.2}, prevalence {prevalence:.2} outside e0 [{:.1}, {:.1}], prevalence [{:.1}, {:.1}]",
                self.guardrails.e0.0,
                self.guardrails.e0.1,
                self.guardrails.prevalence.0,
                self.guardrails.prevalence.1
            );
        }
        PredictedWeights {
            omega: self.regression.evaluate(e0_female, prevalence),
            extrapolated,
        }
    }

    /// `mean + Σ ω_i b_i` before intercept matching.
    pub fn unmatched_log_rates(&self, omega: &[f64; COMPONENTS]) -> [f64; MLT_ROWS] {
        let mut out = self.mean;
        for (w, comp) in omega.iter().zip(&self.components) {
            for (o, b) in out.iter_mut().zip(comp) {
                *o += w * b;
            }
        }
        out
    }
}

fn female_e0(base: &[f64; MLT_ROWS], c: f64) -> f64 {
    let mut rates = [0.0; ABRIDGED_GROUPS];
    for (r, v) in rates.iter_mut().zip(&base[..ABRIDGED_GROUPS]) {
        *r = (v + c).exp();
    }
    life_expectancy_at_birth(Sex::Female, &rates, AConvention::default())
}

/// Finds the shared intercept giving the female schedule the target e0.
pub fn match_e0(
    basis: &MltBasis,
    omega: &[f64; COMPONENTS],
    e0_target: f64,
) -> Result<JointSchedulePair, MltError> {
    let fail = |reason: String| MltError::MatchingFailure {
        target: e0_target,
        reason,
    };
    if !(20.0..=110.0).contains(&e0_target) {
        return Err(fail("target outside [20, 110]".into()));
    }
    let base = basis.unmatched_log_rates(omega);
    let (mut lo, mut hi) = INTERCEPT_BRACKET;
    let (e_lo, e_hi) = (female_e0(&base, lo), female_e0(&base, hi));
    if !(e_lo >= e0_target && e_hi <= e0_target) {
        return Err(fail(format!(
            "root not bracketed: e0 ranges over [{e_hi:.3}, {e_lo:.3}] for intercepts in [{lo}, {hi}]"
        )));
    }
    // e0 decreases in c
    let mut c = 0.5 * (lo + hi);
    let mut e = female_e0(&base, c);
    for _ in 0..BISECTION_MAX_ITER {
        if hi - lo < BISECTION_TOLERANCE && (e - e0_target).abs() <= 0.5 * E0_MATCH_TOLERANCE {
            break;
        }
        if e > e0_target {
            lo = c;
        } else {
            hi = c;
        }
        c = 0.5 * (lo + hi);
        e = female_e0(&base, c);
    }
    if (e - e0_target).abs() > E0_MATCH_TOLERANCE {
        return Err(fail(format!("bisection ended at e0 {e:.4}")));
    }
    let shifted: Vec<f64> = base.iter().map(|v| v + c).collect();
    Ok(JointSchedulePair {
        female: MortalitySchedule::from_log_rates(Sex::Female, &shifted[..ABRIDGED_GROUPS])?,
        male: MortalitySchedule::from_log_rates(Sex::Male, &shifted[ABRIDGED_GROUPS..])?,
        intercept: c,
        e0_female_input: e0_target,
        prevalence: f64::NAN,
    })
}

/// Perturbs every log rate by independent `Normal(0, s_x²)`. One draw per
/// row is always consumed.
pub fn add_rate_noise<R: Rng + ?Sized>(
    pair: &JointSchedulePair,
    basis: &MltBasis,
    rng: &mut R,
) -> Result<JointSchedulePair, MltError> {
    let mut log_rates = pair.stacked_log_rates();
    for (v, s) in log_rates.iter_mut().zip(&basis.residual_sd) {
        let z: f64 = rng.sample(StandardNormal);
        *v += s * z;
    }
    Ok(JointSchedulePair {
        female: MortalitySchedule::from_log_rates(Sex::Female, &log_rates[..ABRIDGED_GROUPS])?,
        male: MortalitySchedule::from_log_rates(Sex::Male, &log_rates[ABRIDGED_GROUPS..])?,
        ..pair.clone()
    })
}

pub fn generate_schedule<R: Rng + ?Sized>(
    basis: &MltBasis,
    e0_female: f64,
    prevalence: f64,
    rng: &mut R,
    noise: bool,
) -> Result<JointSchedulePair, MltError> {
    let w = basis.predict_weights(e0_female, prevalence);
    let mut pair = match_e0(basis, &w.omega, e0_female)?;
    pair.prevalence = prevalence;
    if noise {
        pair = add_rate_noise(&pair, basis, rng)?;
    }
    Ok(pair)
}

/// Representative age of each abridged group.
pub fn group_midpoint(i: usize) -> f64 {
    match i {
        0 => 0.5,
        1 => 3.0,
        i if i < ABRIDGED_GROUPS - 1 => 5.0 * (i - 1) as f64 + 2.5,
        _ => 102.5,
    }
}

/// Largest excess of log mortality at ages 30-44 over the straight line
/// through the 25-29 and 50-54 groups. Positive values indicate an adult
/// mortality hump.
pub fn hump_excess(rates: &[f64; ABRIDGED_GROUPS]) -> f64 {
    let (a, b) = (6, 11);
    let (xa, xb) = (group_midpoint(a), group_midpoint(b));
    let (ya, yb) = (rates[a].ln(), rates[b].ln());
    (7..=9)
        .map(|i| {
            let w = (group_midpoint(i) - xa) / (xb - xa);
            rates[i].ln() - (ya * (1.0 - w) + yb * w)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Domain, SeedTree};
    use crate::synthetic::{synthetic_mlt_matrix, MltWorld};

    fn fixture() -> (MltWorld, CalibrationMatrix, MltBasis) {
        let world = MltWorld::default();
        let matrix = synthetic_mlt_matrix(&world, 120, 0.0, &SeedTree::new(4)).unwrap();
        let basis = calibrate_mlt(&matrix).unwrap();
        (world, matrix, basis)
    }

    #[test]
    fn components_are_orthonormal_with_positive_sums() {
        let (_, _, basis) = fixture();
        for a in 0..COMPONENTS {
            for b in 0..COMPONENTS {
                let dot: f64 = basis.components[a].iter().zip(&basis.components[b]).map(|(x, y)| x * y).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-8);
            }
            assert!(basis.components[a].iter().sum::<f64>() > 0.0);
        }
    }

    #[test]
    fn too_few_columns() {
        let world = MltWorld::default();
        let matrix = synthetic_mlt_matrix(&world, 30, 0.0, &SeedTree::new(1)).unwrap();
        assert!(matches!(calibrate_mlt(&matrix), Err(MltError::InsufficientColumns { have: 30, .. })));
    }

    #[test]
    fn narrow_prevalence_is_rejected() {
        let world = MltWorld {
            prevalence_range: (0.0, 5.0),
            ..MltWorld::default()
        };
        let matrix = synthetic_mlt_matrix(&world, 80, 0.0, &SeedTree::new(1)).unwrap();
        assert!(matches!(calibrate_mlt(&matrix), Err(MltError::CovariateRange(_))));
    }

    #[test]
    fn matching_hits_target_and_shares_intercept() {
        let (_, _, basis) = fixture();
        let w = basis.predict_weights(58.0, 12.0);
        let pair = match_e0(&basis, &w.omega, 58.0).unwrap();
        let e0 = life_expectancy_at_birth(Sex::Female, pair.female.rates(), AConvention::default());
        assert!((e0 - 58.0).abs() <= E0_MATCH_TOLERANCE);
        let base = basis.unmatched_log_rates(&w.omega);
        for (got, want) in pair.stacked_log_rates().iter().zip(&base) {
            assert!((got - want - pair.intercept).abs() < 1e-12);
        }
    }

    #[test]
    fn intercept_shift_lowers_e0() {
        let (_, _, basis) = fixture();
        let w = basis.predict_weights(60.0, 5.0);
        let base = basis.unmatched_log_rates(&w.omega);
        let mut prev = f64::INFINITY;
        for i in 0..40 {
            let e = female_e0(&base, -2.0 + 0.1 * i as f64);
            assert!(e < prev);
            prev = e;
        }
    }

    #[test]
    fn unreachable_target_fails() {
        let (_, _, basis) = fixture();
        let w = basis.predict_weights(60.0, 5.0);
        assert!(matches!(match_e0(&basis, &w.omega, 15.0), Err(MltError::MatchingFailure { .. })));
    }

    #[test]
    fn zero_residual_sd_means_no_noise() {
        let (_, _, mut basis) = fixture();
        basis.residual_sd = [0.0; MLT_ROWS];
        let mut rng = SeedTree::new(2).stream(Domain::MltNoise, 0, 0);
        let pair = generate_schedule(&basis, 55.0, 10.0, &mut rng, false).unwrap();
        let noisy = add_rate_noise(&pair, &basis, &mut rng).unwrap();
        assert_eq!(pair, noisy);
    }

    #[test]
    fn noise_is_seeded() {
        let (_, _, basis) = fixture();
        let run = || {
            let mut rng = SeedTree::new(2).stream(Domain::MltNoise, 3, 7);
            generate_schedule(&basis, 55.0, 10.0, &mut rng, true).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn extrapolation_is_flagged() {
        let (_, _, basis) = fixture();
        assert!(!basis.predict_weights(60.0, 10.0).extrapolated);
        assert!(basis.predict_weights(60.0, 80.0).extrapolated);
    }

    #[test]
    fn hump_statistic_on_shapes() {
        let mut rates = [0.01; ABRIDGED_GROUPS];
        assert!(hump_excess(&rates).abs() < 1e-12);
        rates[8] = 0.02;
        assert!((hump_excess(&rates) - 2f64.ln()).abs() < 1e-12);
    }
}

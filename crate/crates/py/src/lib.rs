//! Python bindings: life tables, the HIV-calibrated model life table, the
//! life expectancy gain curve, the epidemic model, one projection step and
//! full projections from a data directory.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::PathBuf;

use engine::ccmpp::{project_step as step, summarize_quantiles, FertilityPattern, PeriodFertility, DEFAULT_QUANTILES};
use engine::demog::{
    build_life_table, summary_index, AConvention, MortalitySchedule, PopulationPyramid, Sex, SummaryIndex,
    FIVE_YEAR_GROUPS,
};
use engine::e0model::{double_logistic as gain, DoubleLogisticParams};
use engine::hivmlt::{self, generate_schedule, hump_excess};
use engine::io::{read_dataset, DatasetPaths};
use engine::persist::{load_mlt_basis, load_models, save_mlt_basis};
use engine::pipeline::{project_countries, ProjectionSettings};
use engine::prevalence::{simulate_epp, EppNoise, EppParams};
use engine::rng::{Domain, SeedTree};
use engine::synthetic::{synthetic_mlt_matrix, MltWorld};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(hivpop, HivpopError, PyException);

fn err(e: impl Display) -> PyErr {
    HivpopError::new_err(e.to_string())
}

fn schedule(sex: &str, rates: &[f64]) -> PyResult<MortalitySchedule> {
    let sex: Sex = sex.parse().map_err(err)?;
    MortalitySchedule::new(sex, rates).map_err(err)
}

/// Abridged life table as a dict of columns: ax, qx, lx, dx, Lx, Tx, ex.
#[pyfunction]
fn life_table(sex: &str, rates: Vec<f64>) -> PyResult<BTreeMap<&'static str, Vec<f64>>> {
    let t = build_life_table(&schedule(sex, &rates)?, AConvention::CoaleDemeny).map_err(err)?;
    Ok(BTreeMap::from([
        ("ax", t.ax.to_vec()),
        ("qx", t.qx.to_vec()),
        ("lx", t.lx.to_vec()),
        ("dx", t.dx.to_vec()),
        ("Lx", t.person_years.to_vec()),
        ("Tx", t.tx.to_vec()),
        ("ex", t.ex.to_vec()),
    ]))
}

/// 5q0, 45q15 and 35q10 as probabilities.
#[pyfunction]
fn summary_indices(sex: &str, rates: Vec<f64>) -> PyResult<BTreeMap<&'static str, f64>> {
    let t = build_life_table(&schedule(sex, &rates)?, AConvention::CoaleDemeny).map_err(err)?;
    Ok([SummaryIndex::Q5_0, SummaryIndex::Q45_15, SummaryIndex::Q35_10]
        .into_iter()
        .map(|i| (i.as_str(), summary_index(&t, i)))
        .collect())
}

/// Expected five-year gain in e0 for parameters (d1, d2, d3, d4, k, z).
#[pyfunction]
fn double_logistic(e0: f64, params: [f64; 6]) -> PyResult<f64> {
    let [d1, d2, d3, d4, k, z] = params;
    let theta = DoubleLogisticParams::new(d1, d2, d3, d4, k, z).map_err(err)?;
    Ok(gain(e0, &theta))
}

/// Deterministic annual prevalence path (percent) from `t0` to `horizon`.
/// Returns the first year and the values.
#[pyfunction]
#[pyo3(signature = (t0, r0, phi0, horizon, infected=0.10, at_risk=0.18))]
fn epp_prevalence(t0: i32, r0: f64, phi0: f64, horizon: i32, infected: f64, at_risk: f64) -> PyResult<(i32, Vec<f64>)> {
    let mut params = EppParams {
        t0,
        r0,
        phi0,
        ..EppParams::default()
    };
    params.initial.infected = infected;
    params.initial.at_risk = at_risk;
    params.initial.not_at_risk = 1.0 - infected - at_risk;
    let mut rng = SeedTree::new(0).stream(Domain::Epp, 0, 0);
    let path = simulate_epp(&params, horizon, &EppNoise::default(), &mut rng).map_err(err)?;
    Ok((path.start_year, path.values))
}

/// One five-year cohort-component step. Returns the female and male counts
/// at the end of the period.
#[pyfunction]
#[pyo3(signature = (female, male, female_rates, male_rates, tfr, pattern, srb=1.05, migration_female=None, migration_male=None))]
#[allow(clippy::too_many_arguments)]
fn project_step(
    female: Vec<f64>,
    male: Vec<f64>,
    female_rates: Vec<f64>,
    male_rates: Vec<f64>,
    tfr: f64,
    pattern: Vec<f64>,
    srb: f64,
    migration_female: Option<Vec<f64>>,
    migration_male: Option<Vec<f64>>,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let pyramid = PopulationPyramid::new(0, &female, &male).map_err(err)?;
    let tables = [
        build_life_table(&schedule("female", &female_rates)?, AConvention::CoaleDemeny).map_err(err)?,
        build_life_table(&schedule("male", &male_rates)?, AConvention::CoaleDemeny).map_err(err)?,
    ];
    let fertility = PeriodFertility {
        tfr,
        pattern: FertilityPattern::new(&pattern).map_err(err)?,
        srb,
    };
    let mut migration = [[0.0; FIVE_YEAR_GROUPS]; 2];
    for (slot, given) in migration.iter_mut().zip([migration_female, migration_male]) {
        if let Some(v) = given {
            if v.len() != FIVE_YEAR_GROUPS {
                return Err(err(format!("migration needs {FIVE_YEAR_GROUPS} age groups, got {}", v.len())));
            }
            slot.copy_from_slice(&v);
        }
    }
    let (next, _) = step(&pyramid, [&tables[0], &tables[1]], &fertility, &migration).map_err(err)?;
    Ok((next.female.to_vec(), next.male.to_vec()))
}

/// Calibrated HIV model life table.
#[pyclass(module = "hivpop")]
struct MltBasis {
    inner: hivmlt::MltBasis,
}

#[pymethods]
impl MltBasis {
    /// Basis calibrated on a synthetic matrix of `columns` life tables.
    #[staticmethod]
    #[pyo3(signature = (seed=1, columns=200))]
    fn synthetic(seed: u64, columns: usize) -> PyResult<Self> {
        let matrix = synthetic_mlt_matrix(&MltWorld::default(), columns, 0.0, &SeedTree::new(seed)).map_err(err)?;
        Ok(Self {
            inner: hivmlt::calibrate_mlt(&matrix).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_mlt_basis(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_mlt_basis(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn residual_sd(&self) -> Vec<f64> {
        self.inner.residual_sd.to_vec()
    }

    /// Female and male rates for a female e0 and prevalence. Residual noise
    /// is added when `seed` is given.
    #[pyo3(signature = (e0_female, prevalence, seed=None))]
    fn generate(&self, e0_female: f64, prevalence: f64, seed: Option<u64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let mut rng = SeedTree::new(seed.unwrap_or(0)).stream(Domain::MltNoise, 0, 0);
        let pair = generate_schedule(&self.inner, e0_female, prevalence, &mut rng, seed.is_some()).map_err(err)?;
        Ok((pair.female.rates().to_vec(), pair.male.rates().to_vec()))
    }

    /// Largest excess of female log mortality at ages 30-44 over the line
    /// through ages 25-29 and 50-54.
    fn hump_excess(&self, e0_female: f64, prevalence: f64) -> PyResult<f64> {
        let (female, _) = self.generate(e0_female, prevalence, None)?;
        let rates: [f64; engine::demog::ABRIDGED_GROUPS] = female.try_into().expect("full schedule");
        Ok(hump_excess(&rates))
    }
}

/// Projects countries from a data directory with models saved by
/// `hivpop calibrate`. Returns (country, indicator, period_start, quantile,
/// value) rows.
#[pyfunction]
#[pyo3(signature = (data_dir, models_dir, countries, base_year=2015, horizon=2100, trajectories=1000, seed=1))]
#[allow(clippy::too_many_arguments)]
fn project(
    py: Python<'_>,
    data_dir: PathBuf,
    models_dir: PathBuf,
    countries: Vec<String>,
    base_year: i32,
    horizon: i32,
    trajectories: usize,
    seed: u64,
) -> PyResult<Vec<(String, String, i32, f64, f64)>> {
    let data = read_dataset(&DatasetPaths::in_dir(&data_dir), base_year).map_err(err)?;
    let models = load_models(&models_dir).map_err(err)?;
    let settings = ProjectionSettings {
        trajectories,
        horizon,
        seed,
        ..ProjectionSettings::default()
    };
    let outputs = py
        .detach(|| project_countries(&data, &models, &countries, &settings))
        .map_err(err)?;
    let results: Vec<_> = outputs.into_iter().map(|o| o.projection).collect();
    let rows = summarize_quantiles(&results, &DEFAULT_QUANTILES).map_err(err)?;
    Ok(rows
        .into_iter()
        .map(|r| (r.country, r.indicator.to_string(), r.period_start, r.quantile, r.value))
        .collect())
}

#[pymodule]
fn hivpop(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HivpopError", m.py().get_type::<HivpopError>())?;
    m.add_class::<MltBasis>()?;
    m.add_function(wrap_pyfunction!(life_table, m)?)?;
    m.add_function(wrap_pyfunction!(summary_indices, m)?)?;
    m.add_function(wrap_pyfunction!(double_logistic, m)?)?;
    m.add_function(wrap_pyfunction!(epp_prevalence, m)?)?;
    m.add_function(wrap_pyfunction!(project_step, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    Ok(())
}

//! Synthetic worlds with known parameters, used by the test suites, the
//! `synth` command and the Python smoke test.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::ccmpp::{project_step, CcmppError, FertilityPattern, MigrationInput, PeriodFertility, DEFAULT_SRB};
use crate::demog::{
    build_life_table, AConvention, DemogError, MortalitySchedule, PopulationPyramid, Sex,
    ABRIDGED_GROUPS, FIVE_YEAR_GROUPS,
};
use crate::e0model::{
    project_e0_step, DoubleLogisticParams, E0Error, E0History, HnaSeries, Priors, VarianceModel,
    DEFAULT_VARIANCE_KNOTS,
};
use crate::hivmlt::{
    generate_schedule, group_midpoint, match_e0, CalibrationMatrix, Guardrails, MltBasis, MltError,
    WeightRegression, COMPONENTS, DESIGN_TERMS, MLT_ROWS,
};
use crate::pipeline::{
    country_stream, raw_prevalence_ensemble, Dataset, E0Series, LifeTableRecord, PipelineError,
    ProjectionSettings, TfrSeries,
};
use crate::prevalence::{
    aggregate_five_year, pointwise_median, scale_trajectories, simulate_epp, AnnualPath,
    Compartments, EppNoise, EppParams, PrevalenceError,
};
use crate::rng::{Domain, SeedTree};
use crate::validate::Observation;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid world configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mlt(#[from] MltError),
    #[error(transparent)]
    E0(#[from] E0Error),
    #[error(transparent)]
    Prevalence(#[from] PrevalenceError),
    #[error(transparent)]
    Demog(#[from] DemogError),
    #[error(transparent)]
    Projection(#[from] CcmppError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Ground truth for a model life table: a convex female log-mortality curve,
/// a constant male excess, and three components (level, age tilt, adult
/// hump at ages 30-44) whose weights depend on e0 and prevalence.
#[derive(Debug, Clone, PartialEq)]
pub struct MltWorld {
    pub e0_range: (f64, f64),
    pub prevalence_range: (f64, f64),
    /// Tilt weight per year of e0 above 60.
    pub tilt_slope: f64,
    /// Hump weight per prevalence point.
    pub hump_slope: f64,
    /// Male minus female log rate.
    pub male_offset: f64,
    /// Years by which the male hump centre follows the female one.
    pub male_hump_lag: f64,
    /// Standard deviation of independent row noise added to each column.
    pub row_noise_sd: f64,
}

impl Default for MltWorld {
    fn default() -> Self {
        Self {
            e0_range: (30.0, 85.0),
            prevalence_range: (0.0, 30.0),
            tilt_slope: 0.13,
            hump_slope: 0.2,
            male_offset: 0.25,
            male_hump_lag: 2.5,
            row_noise_sd: 0.05,
        }
    }
}

fn normalize(v: &mut [f64; MLT_ROWS]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
}

fn remove_projection(v: &mut [f64; MLT_ROWS], on: &[f64; MLT_ROWS]) {
    let dot: f64 = v.iter().zip(on).map(|(a, b)| a * b).sum();
    v.iter_mut().zip(on).for_each(|(a, b)| *a -= dot * b);
}

impl MltWorld {
    /// Female log mortality: infant, constant and Gompertz terms, so log
    /// rates are convex in age.
    pub fn female_mean(&self) -> [f64; ABRIDGED_GROUPS] {
        std::array::from_fn(|i| {
            let x = group_midpoint(i);
            (0.04 * (-0.8 * x).exp() + 0.003 + 0.00001 * (0.095 * x).exp()).ln()
        })
    }

    pub fn mean(&self) -> [f64; MLT_ROWS] {
        let f = self.female_mean();
        std::array::from_fn(|i| {
            if i < ABRIDGED_GROUPS {
                f[i]
            } else {
                f[i - ABRIDGED_GROUPS] + self.male_offset
            }
        })
    }

    /// Orthonormal true components.
    pub fn components(&self) -> [[f64; MLT_ROWS]; COMPONENTS] {
        let mut level = [1.0; MLT_ROWS];
        normalize(&mut level);
        let age = |i: usize| group_midpoint(i % ABRIDGED_GROUPS);
        let mut tilt: [f64; MLT_ROWS] = std::array::from_fn(|i| age(i) / 100.0);
        remove_projection(&mut tilt, &level);
        normalize(&mut tilt);
        let mut hump: [f64; MLT_ROWS] = std::array::from_fn(|i| {
            let centre = if i < ABRIDGED_GROUPS { 37.5 } else { 37.5 + self.male_hump_lag };
            (-0.5 * ((age(i) - centre) / 8.0).powi(2)).exp()
        });
        remove_projection(&mut hump, &level);
        remove_projection(&mut hump, &tilt);
        normalize(&mut hump);
        if hump[7] < 0.0 {
            hump.iter_mut().for_each(|x| *x = -*x);
        }
        [level, tilt, hump]
    }

    pub fn weights(&self, e0: f64, prevalence: f64) -> [f64; COMPONENTS] {
        [0.0, self.tilt_slope * (e0 - 60.0), self.hump_slope * prevalence]
    }

    /// Basis that generates the world exactly.
    pub fn true_basis(&self) -> MltBasis {
        let mut coefficients = [[0.0; DESIGN_TERMS]; COMPONENTS];
        coefficients[1][0] = -60.0 * self.tilt_slope;
        coefficients[1][1] = self.tilt_slope;
        coefficients[2][3] = self.hump_slope;
        MltBasis {
            mean: self.mean(),
            components: self.components(),
            regression: WeightRegression {
                coefficients,
                e0_center: 0.0,
                e0_scale: 1.0,
                prevalence_center: 0.0,
                prevalence_scale: 1.0,
            },
            residual_sd: [self.row_noise_sd; MLT_ROWS],
            guardrails: Guardrails {
                e0: self.e0_range,
                prevalence: self.prevalence_range,
            },
        }
    }
}

/// Draws `columns` life tables with uniform (e0, prevalence), matched to
/// their e0 under the true basis, plus row noise of `extra_noise_sd` on top
/// of the world's own.
pub fn synthetic_mlt_matrix(
    world: &MltWorld,
    columns: usize,
    extra_noise_sd: f64,
    seeds: &SeedTree,
) -> Result<CalibrationMatrix, SyntheticError> {
    let basis = world.true_basis();
    let mut rng = seeds.stream(Domain::Synthetic, 0, 0);
    let noise = (world.row_noise_sd.powi(2) + extra_noise_sd.powi(2)).sqrt();
    let mut pairs = Vec::with_capacity(columns);
    let mut labels = Vec::with_capacity(columns);
    for j in 0..columns {
        let e0 = rng.random_range(world.e0_range.0..=world.e0_range.1);
        let prev = rng.random_range(world.prevalence_range.0..=world.prevalence_range.1);
        let pair = match_e0(&basis, &basis.regression.evaluate(e0, prev), e0)?;
        let mut log_rates = pair.stacked_log_rates();
        for v in log_rates.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += noise * z;
        }
        pairs.push((
            MortalitySchedule::from_log_rates(Sex::Female, &log_rates[..ABRIDGED_GROUPS])?,
            MortalitySchedule::from_log_rates(Sex::Male, &log_rates[ABRIDGED_GROUPS..])?,
        ));
        labels.push((format!("S{:03}", j / 5), 1970 + 5 * (j % 5) as i32, prev));
    }
    Ok(CalibrationMatrix::from_schedules(&pairs, &labels)?)
}

/// Hierarchical truth for the life-expectancy model: log-normal country
/// parameters around world means, one HnA coefficient and one variance
/// function.
#[derive(Debug, Clone, PartialEq)]
pub struct E0World {
    /// World means of `ln(d1, d2, d3, d4, k, z)`.
    pub log_mean: [f64; 6],
    /// Between-country sd of each log parameter.
    pub tau: [f64; 6],
    pub beta_hna: f64,
    pub variance: VarianceModel,
}

impl Default for E0World {
    fn default() -> Self {
        Self {
            log_mean: Priors::default().theta_location.map(f64::ln),
            tau: [0.1, 0.1, 0.3, 0.1, 0.15, 0.3],
            beta_hna: -0.003,
            variance: VarianceModel {
                knots: DEFAULT_VARIANCE_KNOTS.to_vec(),
                sd: vec![1.2, 0.9, 0.5],
                epidemic_factor: 1.5,
            },
        }
    }
}

impl E0World {
    /// One country parameter vector inside the default prior support.
    pub fn draw_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> DoubleLogisticParams {
        let priors = Priors::default();
        loop {
            let a: [f64; 6] = std::array::from_fn(|j| {
                let z: f64 = rng.sample(StandardNormal);
                (self.log_mean[j] + self.tau[j] * z).exp()
            });
            let theta = DoubleLogisticParams::from_array(a);
            if priors.supports(&theta) {
                return theta;
            }
        }
    }

    /// e0 path starting at `e0_first`, one step per HnA increment.
    pub fn simulate_history<R: Rng + ?Sized>(
        &self,
        theta: &DoubleLogisticParams,
        epidemic: bool,
        e0_first: f64,
        hna: &[f64],
        rng: &mut R,
    ) -> Vec<f64> {
        let mut e0 = vec![e0_first];
        for p in 1..hna.len() {
            let prev = e0[p - 1];
            let sigma = self.variance.sd(prev, epidemic);
            e0.push(project_e0_step(prev, theta, self.beta_hna, hna[p] - hna[p - 1], sigma, rng));
        }
        e0
    }
}

/// Rise-peak-plateau prevalence curve (percent).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpidemicShape {
    pub peak: f64,
    pub onset: f64,
    pub peak_year: f64,
    /// Long-run level as a share of the peak.
    pub plateau: f64,
}

impl EpidemicShape {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, peak: (f64, f64)) -> Self {
        let onset = rng.random_range(1978.0..1986.0);
        Self {
            peak: rng.random_range(peak.0..peak.1),
            onset,
            peak_year: onset + rng.random_range(12.0..18.0),
            plateau: rng.random_range(0.4..0.7),
        }
    }

    pub fn prevalence_at(&self, year: f64) -> f64 {
        if year <= self.onset {
            0.0
        } else if year <= self.peak_year {
            let x = (year - self.onset) / (self.peak_year - self.onset);
            self.peak * x * x * (3.0 - 2.0 * x)
        } else {
            self.peak * (self.plateau + (1.0 - self.plateau) * (-(year - self.peak_year) / 8.0).exp())
        }
    }

    pub fn period_mean(&self, period_start: i32) -> f64 {
        (0..5).map(|y| self.prevalence_at(f64::from(period_start + y))).sum::<f64>() / 5.0
    }
}

/// ART coverage ramp starting in 2005, scaled by `reach`.
pub fn art_ramp(period_start: i32, reach: f64) -> f64 {
    let full = match period_start {
        ..=2000 => 0.0,
        2001..=2005 => 10.0,
        2006..=2010 => 35.0,
        2011..=2015 => 55.0,
        2016..=2020 => 70.0,
        _ => 80.0,
    };
    full * reach
}

/// Calibration histories from a known hierarchical truth.
#[derive(Debug, Clone)]
pub struct E0Fixture {
    pub histories: Vec<E0History>,
    pub theta: Vec<DoubleLogisticParams>,
}

/// `countries` e0 histories over `periods`, the first `epidemic` of them with
/// an HIV epidemic and ART scale-up.
pub fn synthetic_e0_histories(
    world: &E0World,
    countries: usize,
    epidemic: usize,
    periods: &[i32],
    seeds: &SeedTree,
) -> Result<E0Fixture, SyntheticError> {
    let mut histories = Vec::with_capacity(countries);
    let mut thetas = Vec::with_capacity(countries);
    for c in 0..countries {
        let code = format!("C{c:03}");
        let mut rng = seeds.stream(Domain::Synthetic, country_stream(&code), 0);
        let theta = world.draw_theta(&mut rng);
        let hna = if c < epidemic {
            let shape = EpidemicShape::draw(&mut rng, (5.0, 25.0));
            let reach = rng.random_range(0.6..1.0);
            HnaSeries::new(
                &code,
                periods.to_vec(),
                periods.iter().map(|&p| shape.period_mean(p)).collect(),
                periods.iter().map(|&p| art_ramp(p, reach)).collect(),
            )?
        } else {
            HnaSeries::zero(&code, periods.to_vec())
        };
        let e0_first = rng.random_range(35.0..60.0);
        let epi = hna.is_generalized_epidemic();
        let e0 = world.simulate_history(&theta, epi, e0_first, &hna.hna(), &mut rng);
        histories.push(E0History::new(&code, periods.to_vec(), e0, Some(&hna))?);
        thetas.push(theta);
    }
    Ok(E0Fixture {
        histories,
        theta: thetas,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountryRole {
    /// Epidemic country scored in holdout runs.
    Evaluated,
    /// Epidemic country used only for calibration.
    Epidemic,
    /// Country without an HIV epidemic.
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub evaluated: usize,
    pub background_epidemic: usize,
    pub background_other: usize,
    /// First projected period; data end with the period before it.
    pub base_year: i32,
    /// Last year covered by projection inputs.
    pub horizon: i32,
    /// TFR trajectories stored per country.
    pub trajectories: usize,
    /// Add one observed period starting at `base_year` (life tables, e0 and
    /// the population five years later), for holdout runs.
    pub observe_evaluation: bool,
    pub mlt: MltWorld,
    pub e0: E0World,
    pub epp_noise: EppNoise,
    /// Per-period sd of the log-TFR random walk.
    pub tfr_walk_sd: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            evaluated: 5,
            background_epidemic: 35,
            background_other: 40,
            base_year: 2010,
            horizon: 2100,
            trajectories: 1000,
            observe_evaluation: true,
            mlt: MltWorld::default(),
            e0: E0World::default(),
            epp_noise: EppNoise {
                log_r_sd: 0.2,
                log_phi_sd: 0.2,
            },
            tfr_walk_sd: 0.05,
            seed: 2015,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountryTruth {
    pub code: String,
    pub role: CountryRole,
    pub theta: DoubleLogisticParams,
    /// Regime used for the e0 perturbations.
    pub epidemic: bool,
    pub tfr_level: f64,
}

const FIRST_E0_PERIOD: i32 = 1950;
const FIRST_MLT_PERIOD: i32 = 1970;
const FIRST_REFERENCE_YEAR: i32 = 1970;
const FERTILITY_SHAPE: [f64; 7] = [0.10, 0.22, 0.24, 0.20, 0.14, 0.07, 0.03];

fn tfr_mean(level: f64, period: usize) -> f64 {
    1.9 + (level - 1.9) * (-0.12 * period as f64).exp()
}

fn base_pyramid<R: Rng + ?Sized>(year: i32, rng: &mut R) -> Result<PopulationPyramid, DemogError> {
    let size = rng.random_range(2.0e6..2.0e7);
    let growth = rng.random_range(0.015..0.03);
    let shape: Vec<f64> = (0..FIVE_YEAR_GROUPS)
        .map(|i| {
            let x = 5.0 * i as f64 + 2.5;
            (-growth * x - (x / 75.0).powi(4)).exp()
        })
        .collect();
    let total: f64 = shape.iter().sum();
    let female: Vec<f64> = shape.iter().map(|s| size * s / (2.0 * total)).collect();
    let male: Vec<f64> = female
        .iter()
        .enumerate()
        .map(|(i, f)| f * (1.04 - 0.01 * i as f64).max(0.6))
        .collect();
    PopulationPyramid::new(year, &female, &male)
}

/// A complete synthetic input dataset with the parameters that generated it.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    pub dataset: Dataset,
    pub truths: Vec<CountryTruth>,
    pub basis: MltBasis,
}

impl SyntheticWorld {
    pub fn generate(config: WorldConfig) -> Result<Self, SyntheticError> {
        if config.base_year % 5 != 0 || config.horizon % 5 != 0 || config.horizon <= config.base_year + 5 {
            return Err(SyntheticError::Config(
                "base year and horizon must be on the five-year grid, horizon after the first period".into(),
            ));
        }
        if config.evaluated + config.background_epidemic + config.background_other == 0 {
            return Err(SyntheticError::Config("world has no countries".into()));
        }
        let seeds = SeedTree::new(config.seed);
        let basis = config.mlt.true_basis();
        let base = config.base_year;
        let mut ds = Dataset::default();
        let mut truths = Vec::new();
        let roles = std::iter::repeat_n(CountryRole::Evaluated, config.evaluated)
            .chain(std::iter::repeat_n(CountryRole::Epidemic, config.background_epidemic))
            .chain(std::iter::repeat_n(CountryRole::Other, config.background_other));
        let mut counters = [0usize; 3];
        for role in roles {
            let prefix = ["H", "G", "N"][role as usize];
            counters[role as usize] += 1;
            let code = format!("{prefix}{:02}", counters[role as usize]);
            let cs = country_stream(&code);
            let mut rng = seeds.stream(Domain::Synthetic, cs, 0);
            let theta = config.e0.draw_theta(&mut rng);

            if role != CountryRole::Other {
                let peak = if role == CountryRole::Evaluated { (10.0, 25.0) } else { (3.0, 25.0) };
                let shape = EpidemicShape::draw(&mut rng, peak);
                let mut values: Vec<f64> =
                    (FIRST_REFERENCE_YEAR..base).map(|y| shape.prevalence_at(f64::from(y))).collect();
                let infected = shape.prevalence_at(f64::from(base)) / 100.0;
                let at_risk = (2.5 * infected).min(0.6);
                let mut epp = EppParams {
                    t0: base,
                    initial: Compartments {
                        not_at_risk: 1.0 - infected - at_risk,
                        at_risk,
                        infected,
                    },
                    ..EppParams::default()
                };
                epp.initial.not_at_risk = 1.0 - epp.initial.at_risk - epp.initial.infected;
                epp.r0 = (epp.exit_rate + 1.0 / epp.hiv_survival) / at_risk * rng.random_range(0.9..1.3);
                epp.phi0 = at_risk * rng.random_range(0.8..1.2);
                let deterministic = EppNoise {
                    log_r_sd: 0.0,
                    log_phi_sd: 0.0,
                };
                let future = simulate_epp(&epp, config.horizon, &deterministic, &mut rng)?;
                values.extend(future.values);
                ds.prevalence_reference
                    .insert(code.clone(), AnnualPath::new(FIRST_REFERENCE_YEAR, values));
                ds.epp.insert(code.clone(), epp);
            }
            let reach = rng.random_range(0.7..1.0);
            ds.art.insert(
                code.clone(),
                (FIRST_E0_PERIOD..config.horizon).step_by(5).map(|p| (p, art_ramp(p, reach))).collect(),
            );

            let periods: Vec<i32> = (FIRST_E0_PERIOD..base).step_by(5).collect();
            let hna = ds.hna_series(&code, &periods)?;
            let epidemic = hna.is_generalized_epidemic();
            let e0_first = if role == CountryRole::Other {
                rng.random_range(35.0..72.0)
            } else {
                rng.random_range(38.0..50.0)
            };
            let e0 = config.e0.simulate_history(&theta, epidemic, e0_first, &hna.hna(), &mut rng);
            for (&p, &e) in periods.iter().zip(&e0) {
                if p < FIRST_MLT_PERIOD {
                    continue;
                }
                let pair = generate_schedule(&basis, e, ds.period_prevalence(&code, p), &mut rng, true)?;
                ds.life_tables.push(LifeTableRecord {
                    country: code.clone(),
                    period_start: p,
                    female: pair.female,
                    male: pair.male,
                });
            }
            ds.e0_history.insert(
                code.clone(),
                E0Series {
                    period_starts: periods,
                    e0,
                },
            );

            let pyramid = base_pyramid(base, &mut rng)?;
            let tfr_level = if role == CountryRole::Other {
                rng.random_range(1.8..5.0)
            } else {
                rng.random_range(3.0..6.5)
            };
            let projected: Vec<i32> = (base..config.horizon).step_by(5).collect();
            let tfr = (0..config.trajectories)
                .map(|k| {
                    let mut r = seeds.stream(Domain::Fertility, cs, k as u64);
                    let mut walk = 0.0;
                    (0..projected.len())
                        .map(|p| {
                            let z: f64 = r.sample(StandardNormal);
                            walk += config.tfr_walk_sd * z;
                            tfr_mean(tfr_level, p) * walk.exp()
                        })
                        .collect()
                })
                .collect();
            ds.tfr.insert(
                code.clone(),
                TfrSeries {
                    period_starts: projected.clone(),
                    tfr,
                },
            );
            ds.fertility_pattern.insert(code.clone(), FertilityPattern::new(&FERTILITY_SHAPE)?);
            let outflow = |counts: &[f64; FIVE_YEAR_GROUPS]| {
                let mut m = [0.0; FIVE_YEAR_GROUPS];
                for i in 4..=6 {
                    m[i] = -0.004 * counts[i];
                }
                m
            };
            ds.migration.insert(
                code.clone(),
                MigrationInput {
                    country: code.clone(),
                    period_starts: projected.clone(),
                    female: vec![outflow(&pyramid.female); projected.len()],
                    male: vec![outflow(&pyramid.male); projected.len()],
                },
            );
            ds.population_history.insert(code.clone(), vec![pyramid.clone()]);
            ds.base_population.insert(code.clone(), pyramid);
            truths.push(CountryTruth {
                code,
                role,
                theta,
                epidemic,
                tfr_level,
            });
        }

        let mut world = Self {
            config,
            dataset: ds,
            truths,
            basis,
        };
        if world.config.observe_evaluation {
            let settings = ProjectionSettings {
                trajectories: world.config.trajectories,
                horizon: base + 5,
                seed: world.config.seed,
                noise: true,
                epp_noise: world.config.epp_noise,
                detail: false,
            };
            let codes: Vec<String> = world.truths.iter().map(|t| t.code.clone()).collect();
            let sampler = TruthSampler::new(&world, &codes, &settings)?;
            let observed = sampler.draw(0)?;
            for (o, pyramid) in observed {
                let ds = &mut world.dataset;
                ds.life_tables.push(LifeTableRecord {
                    country: o.country.clone(),
                    period_start: base,
                    female: MortalitySchedule::new(Sex::Female, &o.mx[0])?,
                    male: MortalitySchedule::new(Sex::Male, &o.mx[1])?,
                });
                let s = ds.e0_history.get_mut(&o.country).expect("generated above");
                s.period_starts.push(base);
                s.e0.push(o.e0[0]);
                ds.population_history.get_mut(&o.country).expect("generated above").push(pyramid);
            }
        }
        Ok(world)
    }

    pub fn truth(&self, code: &str) -> Option<&CountryTruth> {
        self.truths.iter().find(|t| t.code == code)
    }

    pub fn codes(&self, role: Option<CountryRole>) -> Vec<String> {
        self.truths
            .iter()
            .filter(|t| role.is_none_or(|r| t.role == r))
            .map(|t| t.code.clone())
            .collect()
    }
}

struct SamplerCountry<'a> {
    truth: &'a CountryTruth,
    reference: Option<AnnualPath>,
    raw_median: Option<AnnualPath>,
    e0_last: f64,
    hna_start: f64,
    art: f64,
    base: &'a PopulationPyramid,
    pattern: FertilityPattern,
    srb: f64,
    migration: [[f64; FIVE_YEAR_GROUPS]; 2],
}

/// Draws fresh truths for the first projected period from the generating
/// process: a new epidemic-model run, an e0 step with the true parameters,
/// a true-basis schedule with residual noise, a TFR draw and one
/// cohort-component step. Prevalence is ratio-scaled against the same raw
/// median the projection uses, so truth and forecast share one reference.
pub struct TruthSampler<'a> {
    world: &'a SyntheticWorld,
    settings: ProjectionSettings,
    countries: Vec<SamplerCountry<'a>>,
}

impl<'a> TruthSampler<'a> {
    pub fn new(
        world: &'a SyntheticWorld,
        codes: &[String],
        settings: &ProjectionSettings,
    ) -> Result<Self, SyntheticError> {
        let ds = &world.dataset;
        let base = world.config.base_year;
        let seeds = SeedTree::new(settings.seed);
        let mut countries = Vec::with_capacity(codes.len());
        for code in codes {
            let truth = world
                .truth(code)
                .ok_or_else(|| SyntheticError::Config(format!("unknown country {code}")))?;
            let (reference, raw_median) = match ds.prevalence_reference.get(code) {
                Some(r) => {
                    let raw = raw_prevalence_ensemble(ds, code, base, base + 5, settings, &seeds)?;
                    let median = pointwise_median(&raw)?;
                    let cropped = (median.start_year..=median.end_year())
                        .map(|y| r.get(y))
                        .collect::<Option<Vec<f64>>>()
                        .ok_or_else(|| SyntheticError::Config(format!("{code}: reference too short")))?;
                    (Some(AnnualPath::new(median.start_year, cropped)), Some(median))
                }
                None => (None, None),
            };
            let hist = &ds.e0_history[code];
            let last = hist
                .period_starts
                .iter()
                .position(|&p| p == base - 5)
                .ok_or_else(|| SyntheticError::Config(format!("{code}: no e0 for {}", base - 5)))?;
            countries.push(SamplerCountry {
                truth,
                reference,
                raw_median,
                e0_last: hist.e0[last],
                hna_start: ds.period_prevalence(code, base - 5) * (100.0 - ds.art_at(code, base - 5)),
                art: ds.art_at(code, base),
                base: &ds.base_population[code],
                pattern: ds.fertility_pattern[code],
                srb: ds.srb.get(code).copied().unwrap_or(DEFAULT_SRB),
                migration: ds.migration[code].for_period(base),
            });
        }
        Ok(Self {
            world,
            settings: settings.clone(),
            countries,
        })
    }

    /// One truth per country for `replicate`, with the end-of-period
    /// pyramid.
    pub fn draw(&self, replicate: u64) -> Result<Vec<(Observation, PopulationPyramid)>, SyntheticError> {
        let seeds = SeedTree::new(self.world.config.seed);
        let base = self.world.config.base_year;
        let e0w = &self.world.config.e0;
        self.countries
            .iter()
            .map(|c| {
                let code = &c.truth.code;
                let mut rng = seeds.stream(Domain::Observation, country_stream(code), replicate);
                let prevalence = match (&c.reference, &c.raw_median) {
                    (Some(reference), Some(median)) => {
                        let epp = &self.world.dataset.epp[code];
                        let raw = simulate_epp(epp, base + 5, &self.settings.epp_noise, &mut rng)?;
                        let set = scale_trajectories(code, reference, median, &[raw])?;
                        aggregate_five_year(&set, &[base])?.samples[0][0]
                    }
                    _ => 0.0,
                };
                let delta = prevalence * (100.0 - c.art) - c.hna_start;
                let sigma = e0w.variance.sd(c.e0_last, c.truth.epidemic);
                let e0 = project_e0_step(c.e0_last, &c.truth.theta, e0w.beta_hna, delta, sigma, &mut rng);
                let pair = generate_schedule(&self.world.basis, e0, prevalence, &mut rng, self.settings.noise)?;
                let z: f64 = rng.sample(StandardNormal);
                let tfr = tfr_mean(c.truth.tfr_level, 0) * (self.world.config.tfr_walk_sd * z).exp();
                let tables = [
                    build_life_table(&pair.female, AConvention::default())?,
                    build_life_table(&pair.male, AConvention::default())?,
                ];
                let (end, _) = project_step(
                    c.base,
                    [&tables[0], &tables[1]],
                    &PeriodFertility {
                        tfr,
                        pattern: c.pattern,
                        srb: c.srb,
                    },
                    &c.migration,
                )?;
                Ok((
                    Observation {
                        country: code.clone(),
                        mx: [*pair.female.rates(), *pair.male.rates()],
                        e0: [e0, tables[1].e0()],
                        total_population: end.total(),
                    },
                    end,
                ))
            })
            .collect()
    }
}

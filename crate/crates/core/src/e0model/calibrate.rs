//! Hierarchical calibration of the life-expectancy model.
//!
//! Country parameters are modelled on the log scale as draws from world
//! normal distributions whose means and variances get conjugate normal /
//! inverse-gamma updates. Country parameters, the HnA coefficient and the
//! variance-function parameters are updated by random-walk Metropolis with
//! per-parameter step sizes tuned during burn-in only. Chains run in parallel
//! on independent streams.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use super::{
    double_logistic, piecewise_linear, CountryE0, DoubleLogisticParams, E0Error, E0Model,
    HnaSeries, ParameterDraw, VarianceModel, DEFAULT_VARIANCE_KNOTS,
};
use crate::rng::{Domain, SeedTree};

const TARGET_ACCEPTANCE: f64 = 0.44;
const ADAPT_BATCH: usize = 50;

/// Observed five-year female e0 series and the aligned HnA values.
#[derive(Debug, Clone, PartialEq)]
pub struct E0History {
    pub country: String,
    pub period_starts: Vec<i32>,
    pub e0: Vec<f64>,
    pub hna: Vec<f64>,
    pub epidemic: bool,
}

impl E0History {
    /// Aligns an e0 series with HIV/ART data by period. Periods without HIV
    /// data count as zero burden.
    pub fn new(
        country: &str,
        period_starts: Vec<i32>,
        e0: Vec<f64>,
        hna: Option<&HnaSeries>,
    ) -> Result<Self, E0Error> {
        if period_starts.len() != e0.len() {
            return Err(E0Error::Calibration(format!("{country}: e0 series length mismatch")));
        }
        if period_starts.windows(2).any(|w| w[1] - w[0] != 5) {
            return Err(E0Error::Calibration(format!(
                "{country}: e0 periods must be consecutive five-year periods"
            )));
        }
        if e0.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(E0Error::Calibration(format!("{country}: non-finite e0")));
        }
        let (values, epidemic) = match hna {
            Some(s) => {
                let all = s.hna();
                let values = period_starts
                    .iter()
                    .map(|p| {
                        s.period_starts
                            .iter()
                            .position(|q| q == p)
                            .map_or(0.0, |i| all[i])
                    })
                    .collect();
                (values, s.is_generalized_epidemic())
            }
            None => (vec![0.0; period_starts.len()], false),
        };
        Ok(Self {
            country: country.to_string(),
            period_starts,
            e0,
            hna: values,
            epidemic,
        })
    }

    pub fn increments(&self) -> usize {
        self.e0.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Priors {
    /// Location of the world means, natural scale, in
    /// `(d1, d2, d3, d4, k, z)` order.
    pub theta_location: [f64; 6],
    /// Prior sd of each world mean on the log scale.
    pub mean_sd: f64,
    /// Inverse-gamma shape and scale for each world variance (log scale).
    pub tau_shape: f64,
    pub tau_scale: f64,
    /// Half-normal scale of the (non-positive) HnA coefficient.
    pub beta_scale: f64,
    /// Uniform support of the perturbation sd at each knot.
    pub sd_bounds: (f64, f64),
    pub max_epidemic_factor: f64,
    pub variance_knots: Vec<f64>,
    /// Upper end of the support of each country's asymptotic gain `z`.
    pub z_max: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            theta_location: [15.77, 40.97, 0.21, 19.82, 2.93, 0.40],
            mean_sd: 1.0,
            tau_shape: 2.0,
            tau_scale: 0.05,
            beta_scale: 0.01,
            sd_bounds: (0.005, 5.0),
            max_epidemic_factor: 10.0,
            variance_knots: DEFAULT_VARIANCE_KNOTS.to_vec(),
            z_max: 0.653,
        }
    }
}

impl Priors {
    /// Admissible and inside the prior support.
    pub fn supports(&self, theta: &DoubleLogisticParams) -> bool {
        theta.z <= self.z_max && theta.is_admissible()
    }

    fn log_location(&self) -> [f64; 6] {
        self.theta_location.map(f64::ln)
    }

    /// Log density of the HnA coefficient up to a constant.
    fn log_beta(&self, beta: f64) -> f64 {
        if beta > 0.0 {
            f64::NEG_INFINITY
        } else {
            -0.5 * (beta / self.beta_scale).powi(2)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    /// Total retained draws across chains.
    pub draws: usize,
    pub seed: u64,
    pub priors: Priors,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            chains: 3,
            iterations: 20_000,
            burn_in: 10_000,
            draws: 1000,
            seed: 1,
            priors: Priors::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainDiagnostics {
    pub theta_acceptance: f64,
    pub beta_acceptance: f64,
    pub variance_acceptance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationDiagnostics {
    pub chains: Vec<ChainDiagnostics>,
    pub countries: usize,
    pub observations: usize,
    /// Posterior median of the mean squared standardized residual; near one
    /// when the variance function fits.
    pub standardized_residual_ms: f64,
}

#[derive(Debug, Clone)]
pub struct CalibrationOutput {
    pub model: E0Model,
    pub diagnostics: CalibrationDiagnostics,
}

struct Data {
    /// Level at the start of each increment.
    e0: Vec<f64>,
    /// Observed increment.
    y: Vec<f64>,
    /// Change in HnA over the increment.
    dh: Vec<f64>,
    epidemic: Vec<bool>,
    /// Observation range of each country.
    ranges: Vec<std::ops::Range<usize>>,
}

impl Data {
    fn new(history: &[E0History]) -> Self {
        let mut d = Data {
            e0: Vec::new(),
            y: Vec::new(),
            dh: Vec::new(),
            epidemic: Vec::new(),
            ranges: Vec::new(),
        };
        for h in history {
            let start = d.e0.len();
            for i in 0..h.increments() {
                d.e0.push(h.e0[i]);
                d.y.push(h.e0[i + 1] - h.e0[i]);
                d.dh.push(h.hna[i + 1] - h.hna[i]);
                d.epidemic.push(h.epidemic);
            }
            d.ranges.push(start..d.e0.len());
        }
        d
    }
}

#[derive(Clone)]
struct State {
    log_theta: Vec<[f64; 6]>,
    g: Vec<f64>,
    mu: [f64; 6],
    tau2: [f64; 6],
    beta: f64,
    log_sd: Vec<f64>,
    log_factor: f64,
    sd: Vec<f64>,
}

struct Steps {
    theta: Vec<[f64; 6]>,
    beta: f64,
    log_sd: Vec<f64>,
    log_factor: f64,
}

#[derive(Default, Clone, Copy)]
struct Counter {
    accepted: usize,
    proposed: usize,
}

impl Counter {
    fn record(&mut self, ok: bool) {
        self.proposed += 1;
        self.accepted += usize::from(ok);
    }

    fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

fn theta_of(log_theta: &[f64; 6]) -> DoubleLogisticParams {
    DoubleLogisticParams::from_array(log_theta.map(f64::exp))
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

struct Sampler<'a> {
    data: &'a Data,
    priors: &'a Priors,
}

impl Sampler<'_> {
    fn fill_sd(&self, log_sd: &[f64], log_factor: f64, out: &mut [f64]) {
        let values: Vec<f64> = log_sd.iter().map(|v| v.exp()).collect();
        let factor = log_factor.exp();
        for (i, s) in out.iter_mut().enumerate() {
            let base = piecewise_linear(&self.priors.variance_knots, &values, self.data.e0[i]);
            *s = if self.data.epidemic[i] { base * factor } else { base };
        }
    }

    fn loglik_range(&self, range: std::ops::Range<usize>, g: &[f64], beta: f64, sd: &[f64]) -> f64 {
        let d = self.data;
        range
            .map(|i| {
                let r = d.y[i] - g[i] - beta * d.dh[i];
                -sd[i].ln() - 0.5 * (r / sd[i]).powi(2)
            })
            .sum()
    }

    fn init<R: Rng + ?Sized>(&self, rng: &mut R, jitter: f64) -> State {
        let loc = self.priors.log_location();
        let n_c = self.data.ranges.len();
        let mut log_theta = Vec::with_capacity(n_c);
        for _ in 0..n_c {
            let mut cand = loc;
            for v in cand.iter_mut() {
                *v += jitter * normal(rng);
            }
            if !self.priors.supports(&theta_of(&cand)) {
                cand = loc;
            }
            log_theta.push(cand);
        }
        let mut g = vec![0.0; self.data.e0.len()];
        for (c, range) in self.data.ranges.iter().enumerate() {
            let th = theta_of(&log_theta[c]);
            for i in range.clone() {
                g[i] = double_logistic(self.data.e0[i], &th);
            }
        }
        let n_knots = self.priors.variance_knots.len();
        let mut s = State {
            log_theta,
            g,
            mu: loc,
            tau2: [self.priors.tau_scale; 6],
            beta: -0.5 * self.priors.beta_scale * rng.random::<f64>(),
            log_sd: vec![0.0; n_knots],
            log_factor: 0.1,
            sd: vec![0.0; self.data.e0.len()],
        };
        self.fill_sd(&s.log_sd, s.log_factor, &mut s.sd);
        s
    }

    fn update_theta<R: Rng + ?Sized>(
        &self,
        s: &mut State,
        steps: &Steps,
        counters: &mut [[Counter; 6]],
        rng: &mut R,
        scratch: &mut Vec<f64>,
    ) {
        let d = self.data;
        for (c, range) in d.ranges.iter().enumerate() {
            let mut current_ll = self.loglik_range(range.clone(), &s.g, s.beta, &s.sd);
            for j in 0..6 {
                let mut prop = s.log_theta[c];
                prop[j] += steps.theta[c][j] * normal(rng);
                let th = theta_of(&prop);
                scratch.clear();
                scratch.extend(range.clone().map(|i| double_logistic(d.e0[i], &th)));
                let mut new_ll = 0.0;
                for (off, i) in range.clone().enumerate() {
                    let r = d.y[i] - scratch[off] - s.beta * d.dh[i];
                    new_ll += -s.sd[i].ln() - 0.5 * (r / s.sd[i]).powi(2);
                }
                let prior = |v: f64| -0.5 * (v - s.mu[j]).powi(2) / s.tau2[j];
                let log_ratio = new_ll - current_ll + prior(prop[j]) - prior(s.log_theta[c][j]);
                let ok = log_ratio.is_finite()
                    && rng.random::<f64>().ln() < log_ratio
                    && self.priors.supports(&th);
                counters[c][j].record(ok);
                if ok {
                    s.log_theta[c] = prop;
                    s.g[range.clone()].copy_from_slice(scratch);
                    current_ll = new_ll;
                }
            }
        }
    }

    fn update_hyper<R: Rng + ?Sized>(&self, s: &mut State, rng: &mut R) {
        let loc = self.priors.log_location();
        let n = s.log_theta.len() as f64;
        let prior_prec = 1.0 / self.priors.mean_sd.powi(2);
        for j in 0..6 {
            let sum: f64 = s.log_theta.iter().map(|t| t[j]).sum();
            let prec = prior_prec + n / s.tau2[j];
            let mean = (loc[j] * prior_prec + sum / s.tau2[j]) / prec;
            s.mu[j] = mean + normal(rng) / prec.sqrt();
            let ss: f64 = s.log_theta.iter().map(|t| (t[j] - s.mu[j]).powi(2)).sum();
            let shape = self.priors.tau_shape + n / 2.0;
            let rate = self.priors.tau_scale + ss / 2.0;
            let gamma = Gamma::new(shape, 1.0 / rate).expect("valid gamma parameters");
            s.tau2[j] = 1.0 / gamma.sample(rng);
        }
    }

    fn update_beta<R: Rng + ?Sized>(&self, s: &mut State, steps: &Steps, counter: &mut Counter, rng: &mut R) {
        let d = self.data;
        let prop = s.beta + steps.beta * normal(rng);
        let lp_new = self.priors.log_beta(prop);
        if !lp_new.is_finite() {
            counter.record(false);
            return;
        }
        let mut delta = lp_new - self.priors.log_beta(s.beta);
        for i in 0..d.y.len() {
            if d.dh[i] == 0.0 {
                continue;
            }
            let base = d.y[i] - s.g[i];
            let r_old = base - s.beta * d.dh[i];
            let r_new = base - prop * d.dh[i];
            delta -= 0.5 * (r_new * r_new - r_old * r_old) / (s.sd[i] * s.sd[i]);
        }
        let ok = rng.random::<f64>().ln() < delta;
        counter.record(ok);
        if ok {
            s.beta = prop;
        }
    }

    fn update_variance<R: Rng + ?Sized>(
        &self,
        s: &mut State,
        steps: &Steps,
        counter: &mut Counter,
        rng: &mut R,
        scratch: &mut Vec<f64>,
    ) {
        let all = 0..self.data.y.len();
        let (lo, hi) = (self.priors.sd_bounds.0.ln(), self.priors.sd_bounds.1.ln());
        let mut current = self.loglik_range(all.clone(), &s.g, s.beta, &s.sd);
        scratch.resize(self.data.y.len(), 0.0);
        let n_knots = s.log_sd.len();
        for j in 0..=n_knots {
            let mut log_sd = s.log_sd.clone();
            let mut log_factor = s.log_factor;
            let in_support = if j < n_knots {
                log_sd[j] += steps.log_sd[j] * normal(rng);
                log_sd[j] >= lo && log_sd[j] <= hi
            } else {
                log_factor += steps.log_factor * normal(rng);
                log_factor >= 0.0 && log_factor <= self.priors.max_epidemic_factor.ln()
            };
            if !in_support {
                counter.record(false);
                continue;
            }
            self.fill_sd(&log_sd, log_factor, scratch);
            let new = self.loglik_range(all.clone(), &s.g, s.beta, scratch);
            let ok = rng.random::<f64>().ln() < new - current;
            counter.record(ok);
            if ok {
                s.log_sd = log_sd;
                s.log_factor = log_factor;
                s.sd.copy_from_slice(scratch);
                current = new;
            }
        }
    }
}

fn adapt(step: &mut f64, counter: &mut Counter, batch: usize) {
    let delta = (1.0 / (batch as f64).sqrt()).min(0.1);
    if counter.rate() > TARGET_ACCEPTANCE {
        *step *= delta.exp();
    } else {
        *step *= (-delta).exp();
    }
    *counter = Counter::default();
}

struct ChainResult {
    draws: Vec<State>,
    diagnostics: ChainDiagnostics,
}

fn run_chain(
    sampler: &Sampler<'_>,
    config: &CalibrationConfig,
    chain: usize,
    keep: usize,
) -> ChainResult {
    let seeds = SeedTree::new(config.seed);
    let mut rng = seeds.stream(Domain::Calibration, 0, chain as u64);
    let n_c = sampler.data.ranges.len();
    let n_knots = sampler.priors.variance_knots.len();
    let mut state = sampler.init(&mut rng, if chain == 0 { 0.0 } else { 0.05 });
    let mut steps = Steps {
        theta: vec![[0.1; 6]; n_c],
        beta: 0.1 * sampler.priors.beta_scale,
        log_sd: vec![0.1; n_knots],
        log_factor: 0.1,
    };
    let mut theta_counters = vec![[Counter::default(); 6]; n_c];
    let mut beta_counter = Counter::default();
    let mut var_counter = Counter::default();
    let mut totals = [Counter::default(); 3];
    let mut scratch = Vec::new();
    let sampling = config.iterations.saturating_sub(config.burn_in);
    let thin = if keep == 0 { usize::MAX } else { (sampling / keep).max(1) };
    let first_kept = config.iterations - thin * keep.min(sampling);
    let mut draws = Vec::with_capacity(keep);
    let mut batch = 0;

    for it in 0..config.iterations {
        sampler.update_theta(&mut state, &steps, &mut theta_counters, &mut rng, &mut scratch);
        sampler.update_hyper(&mut state, &mut rng);
        sampler.update_beta(&mut state, &steps, &mut beta_counter, &mut rng);
        sampler.update_variance(&mut state, &steps, &mut var_counter, &mut rng, &mut scratch);

        if it < config.burn_in {
            if (it + 1) % ADAPT_BATCH == 0 {
                batch += 1;
                for (c, row) in theta_counters.iter_mut().enumerate() {
                    for (j, counter) in row.iter_mut().enumerate() {
                        adapt(&mut steps.theta[c][j], counter, batch);
                    }
                }
                adapt(&mut steps.beta, &mut beta_counter, batch);
                let rate = var_counter;
                for st in steps.log_sd.iter_mut() {
                    let mut c = rate;
                    adapt(st, &mut c, batch);
                }
                let mut c = rate;
                adapt(&mut steps.log_factor, &mut c, batch);
                var_counter = Counter::default();
            }
        } else {
            if it == config.burn_in {
                for row in theta_counters.iter_mut() {
                    *row = [Counter::default(); 6];
                }
                beta_counter = Counter::default();
                var_counter = Counter::default();
            }
            if it >= first_kept && (it + 1 - first_kept) % thin == 0 && draws.len() < keep {
                draws.push(state.clone());
            }
        }
    }
    for row in &theta_counters {
        for c in row {
            totals[0].accepted += c.accepted;
            totals[0].proposed += c.proposed;
        }
    }
    totals[1] = beta_counter;
    totals[2] = var_counter;
    ChainResult {
        draws,
        diagnostics: ChainDiagnostics {
            theta_acceptance: totals[0].rate(),
            beta_acceptance: totals[1].rate(),
            variance_acceptance: totals[2].rate(),
        },
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    crate::stats::quantile_sorted(&v, 0.5)
}

/// Fits the hierarchical life-expectancy model. Returns posterior-median
/// point estimates with the retained draws attached.
pub fn calibrate_e0_model(
    history: &[E0History],
    config: &CalibrationConfig,
) -> Result<CalibrationOutput, E0Error> {
    if history.is_empty() {
        return Err(E0Error::InsufficientData(vec!["<no countries>".into()]));
    }
    let short: Vec<String> = history
        .iter()
        .filter(|h| h.increments() < 5)
        .map(|h| h.country.clone())
        .collect();
    if !short.is_empty() {
        return Err(E0Error::InsufficientData(short));
    }
    if config.chains == 0 || config.burn_in >= config.iterations || config.draws == 0 {
        return Err(E0Error::Calibration(
            "need at least one chain, burn-in shorter than the run, and draws > 0".into(),
        ));
    }
    let data = Data::new(history);
    let sampler = Sampler {
        data: &data,
        priors: &config.priors,
    };
    let per_chain: Vec<usize> = (0..config.chains)
        .map(|c| config.draws / config.chains + usize::from(c < config.draws % config.chains))
        .collect();
    let results: Vec<ChainResult> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(&sampler, config, c, per_chain[c]))
        .collect();

    let states: Vec<&State> = results.iter().flat_map(|r| r.draws.iter()).collect();
    if states.is_empty() {
        return Err(E0Error::Calibration("no draws retained".into()));
    }
    let knots = config.priors.variance_knots.clone();
    let draws: Vec<ParameterDraw> = states
        .iter()
        .map(|s| ParameterDraw {
            beta_hna: s.beta,
            variance: VarianceModel {
                knots: knots.clone(),
                sd: s.log_sd.iter().map(|v| v.exp()).collect(),
                epidemic_factor: s.log_factor.exp(),
            },
            theta: s.log_theta.iter().map(theta_of).collect(),
        })
        .collect();

    let countries = history
        .iter()
        .enumerate()
        .map(|(c, h)| {
            let mut comp = [0.0; 6];
            for (j, v) in comp.iter_mut().enumerate() {
                *v = median(draws.iter().map(|d| d.theta[c].to_array()[j]).collect());
            }
            let mut theta = DoubleLogisticParams::from_array(comp);
            if !theta.is_admissible() {
                // nearest retained draw on the log scale
                let target = comp.map(f64::ln);
                theta = draws
                    .iter()
                    .map(|d| d.theta[c])
                    .min_by(|a, b| {
                        let dist = |t: &DoubleLogisticParams| -> f64 {
                            t.to_array()
                                .iter()
                                .zip(&target)
                                .map(|(x, y)| (x.ln() - y).powi(2))
                                .sum()
                        };
                        dist(a).total_cmp(&dist(b))
                    })
                    .expect("draws are non-empty");
            }
            CountryE0 {
                code: h.country.clone(),
                theta,
                epidemic: h.epidemic,
            }
        })
        .collect();

    let n_knots = knots.len();
    let variance = VarianceModel {
        knots,
        sd: (0..n_knots)
            .map(|j| median(draws.iter().map(|d| d.variance.sd[j]).collect()))
            .collect(),
        epidemic_factor: median(draws.iter().map(|d| d.variance.epidemic_factor).collect())
            .max(1.0),
    };
    let beta_hna = median(draws.iter().map(|d| d.beta_hna).collect());

    let standardized_residual_ms = median(
        states
            .iter()
            .map(|s| {
                (0..data.y.len())
                    .map(|i| {
                        let r = data.y[i] - s.g[i] - s.beta * data.dh[i];
                        (r / s.sd[i]).powi(2)
                    })
                    .sum::<f64>()
                    / data.y.len() as f64
            })
            .collect(),
    );

    Ok(CalibrationOutput {
        model: E0Model {
            countries,
            beta_hna,
            variance,
            draws,
        },
        diagnostics: CalibrationDiagnostics {
            chains: results.into_iter().map(|r| r.diagnostics).collect(),
            countries: history.len(),
            observations: data.y.len(),
            standardized_residual_ms,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(country: &str, start: f64, inc: f64, n: usize) -> E0History {
        let periods: Vec<i32> = (0..n as i32).map(|i| 1950 + 5 * i).collect();
        let e0 = (0..n).map(|i| start + inc * i as f64).collect();
        E0History::new(country, periods, e0, None).unwrap()
    }

    #[test]
    fn short_series_are_listed() {
        let h = vec![series("AAA", 40.0, 2.0, 10), series("BBB", 40.0, 2.0, 5), series("CCC", 40.0, 2.0, 3)];
        match calibrate_e0_model(&h, &CalibrationConfig::default()) {
            Err(E0Error::InsufficientData(c)) => assert_eq!(c, vec!["BBB".to_string(), "CCC".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn history_alignment() {
        let hna = HnaSeries::new("AAA", vec![1985, 1990], vec![5.0, 10.0], vec![0.0, 20.0]).unwrap();
        let h = E0History::new("AAA", vec![1980, 1985, 1990], vec![50.0, 51.0, 50.5], Some(&hna)).unwrap();
        assert_eq!(h.hna, vec![0.0, 500.0, 800.0]);
        assert!(h.epidemic);
        assert!(E0History::new("AAA", vec![1980, 1990], vec![50.0, 51.0], None).is_err());
    }

    #[test]
    fn hna_free_data_leaves_beta_at_its_prior() {
        let h: Vec<E0History> = (0..4)
            .map(|c| series(&format!("C{c}"), 40.0 + 5.0 * c as f64, 2.0, 12))
            .collect();
        let config = CalibrationConfig {
            iterations: 6000,
            burn_in: 2000,
            draws: 1500,
            seed: 3,
            ..Default::default()
        };
        let out = calibrate_e0_model(&h, &config).unwrap();
        let betas: Vec<f64> = out.model.draws.iter().map(|d| d.beta_hna).collect();
        assert!(betas.iter().all(|b| *b <= 0.0));
        // half-normal moments
        let s = config.priors.beta_scale;
        let mean = crate::stats::mean(&betas);
        let want_mean = -s * (2.0 / std::f64::consts::PI).sqrt();
        let want_sd = s * (1.0 - 2.0 / std::f64::consts::PI).sqrt();
        assert!((mean - want_mean).abs() < 0.15 * s, "mean {mean} vs {want_mean}");
        let sd = crate::stats::sd(&betas);
        assert!((sd - want_sd).abs() < 0.15 * s, "sd {sd} vs {want_sd}");
    }

    #[test]
    fn constant_increments_fit_a_flat_gain() {
        let h: Vec<E0History> = (0..5)
            .map(|c| series(&format!("C{c}"), 35.0 + 4.0 * c as f64, 2.5, 12))
            .collect();
        let config = CalibrationConfig {
            iterations: 8000,
            burn_in: 4000,
            draws: 500,
            seed: 9,
            ..Default::default()
        };
        let out = calibrate_e0_model(&h, &config).unwrap();
        for (c, hist) in out.model.countries.iter().zip(&h) {
            for &e0 in &hist.e0[..hist.e0.len() - 1] {
                let g = double_logistic(e0, &c.theta);
                assert!((g - 2.5).abs() < 0.05, "{}: g({e0}) = {g}", c.code);
            }
        }
        let sd = &out.model.variance.sd;
        assert!(sd.iter().all(|s| *s < 0.05), "residual sd {sd:?}");
    }
}

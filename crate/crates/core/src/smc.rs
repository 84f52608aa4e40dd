//! MCMC-within-SMC day step: marginalise occult notification days, adjust
//! particles to the new notifications, weight, resample, propagate new
//! infections and jitter with MCMC.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::diagnostics::{effective_sample_size, mean_sd};
use crate::error::{Error, Result};
use crate::likelihood::{observation_log, Augmentation, Model, Observation, Workspace};
use crate::mcmc::{empirical_covariance, ChainState, run_mcmc, LambdaProposal, McmcConfig, McmcTuning, MoveStats, Sampler};
use crate::model::{Params, NEVER};
use crate::rng::{self, purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Uniform,
    Hazard,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Strategy::Uniform),
            "hazard" => Ok(Strategy::Hazard),
            other => Err(Error::Config(format!("unknown strategy `{other}` (uniform|hazard)"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Uniform => "uniform",
            Strategy::Hazard => "hazard",
        })
    }
}

/// How the day's particle weight is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Adjustment weight times the day-`t` observation factor.
    Incremental,
    /// Adjustment weight times prior, likelihood through day `t - 1` and
    /// the day-`t` observation factor.
    Verbatim,
    /// Backward-kernel weight: an exact adjustment weight times the change
    /// in the day `t - 1` likelihood caused by the adjustment, times the
    /// day-`t` observation factor. Unbiased for any kernel; the other modes
    /// are only exact under homogeneous mixing.
    Exact,
}

impl std::str::FromStr for WeightMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "incremental" => Ok(WeightMode::Incremental),
            "verbatim" => Ok(WeightMode::Verbatim),
            "exact" => Ok(WeightMode::Exact),
            other => Err(Error::Config(format!("unknown weight mode `{other}` (incremental|verbatim|exact)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub params: Params,
    pub aug: Augmentation,
    pub log_weight: f64,
    /// Index of the parent in the previous day's population.
    pub ancestor: usize,
}

impl Particle {
    pub fn is_alive(&self) -> bool {
        self.log_weight > f64::NEG_INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjustmentReport {
    /// Notifications on day `t`.
    pub v: usize,
    /// Occults before adjustment.
    pub u_prev: usize,
    /// Notified cases that had to take over an occult's infection day.
    pub switched: usize,
    pub log_a: f64,
    pub strategy: Strategy,
    /// Log of the number of pre-adjustment states that could have produced
    /// the adjusted one.
    pub log_preimage: f64,
    /// Day `t - 1` log-likelihood before adjustment; needed by
    /// [`WeightMode::Exact`].
    pub log_lik_before: Option<f64>,
}

impl AdjustmentReport {
    pub fn is_dead(&self) -> bool {
        self.log_a == f64::NEG_INFINITY
    }
}

fn ln_choose(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let k = k.min(n - k);
    if k < 64 {
        return (0..k).map(|j| ((n - j) as f64 / (j + 1) as f64).ln()).sum();
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Make `aug` (infection days through `t - 1`, occult notifications
/// marginalised) consistent with the day-`t` notifications in `obs` by
/// moving infection days from occults onto newly notified cases that lack
/// one. Returns the report with `log A_t`; `-∞` marks a dead particle.
pub fn adjust<R: Rng + ?Sized>(
    aug: &mut Augmentation,
    obs: &Observation,
    params: &Params,
    strategy: Strategy,
    rng: &mut R,
) -> AdjustmentReport {
    let t = obs.horizon();
    let new_cases = obs.notified_on(t);
    // Occults at t - 1: infected and not notified before day t.
    let occult_prev: Vec<usize> = (0..aug.len())
        .filter(|&k| aug.infection[k] != NEVER && aug.infection[k] < t && !obs.notification(k).is_some_and(|n| n < t))
        .collect();
    let (v, u) = (new_cases.len(), occult_prev.len());
    let mut lacking: Vec<usize> = new_cases.iter().copied().filter(|&j| !(aug.infection[j] < t)).collect();
    let mut report = AdjustmentReport {
        v,
        u_prev: u,
        switched: lacking.len(),
        log_a: 0.0,
        strategy,
        log_preimage: 0.0,
        log_lik_before: None,
    };
    if v > u {
        report.log_a = f64::NEG_INFINITY;
        return report;
    }
    let mut candidates: Vec<usize> = occult_prev.iter().copied().filter(|k| !new_cases.contains(k)).collect();
    lacking.shuffle(rng);
    let mut log_q = 0.0;
    for &j in &lacking {
        let pick = match strategy {
            Strategy::Uniform => rng.random_range(0..candidates.len()),
            Strategy::Hazard => {
                let w: Vec<f64> = candidates
                    .iter()
                    .map(|&c| params.period.hazard_or_one((t - aug.infection[c]) as i64))
                    .collect();
                let total: f64 = w.iter().sum();
                if !(total > 0.0) {
                    report.log_a = f64::NEG_INFINITY;
                    return report;
                }
                let mut x = rng.random::<f64>() * total;
                let mut pick = w.len() - 1;
                for (idx, wi) in w.iter().enumerate() {
                    if x < *wi {
                        pick = idx;
                        break;
                    }
                    x -= wi;
                }
                log_q += (w[pick] / total).ln();
                pick
            }
        };
        let c = candidates.swap_remove(pick);
        aug.infection[j] = aug.infection[c];
        aug.infection[c] = NEVER;
        aug.notification[c] = NEVER;
    }
    for &j in &new_cases {
        aug.notification[j] = t;
    }
    // Any subset of the day's cases may have been the lacking ones, each
    // taking its day from a distinct never-infected individual.
    let s = aug.infection.iter().filter(|&&i| i == NEVER).count();
    let preimage: f64 = (0..=v.min(s))
        .map(|b| ln_choose(v, b).exp() * (0..b).map(|i| (s - i) as f64).product::<f64>())
        .sum();
    report.log_preimage = preimage.ln();
    report.log_a = match strategy {
        Strategy::Uniform => ln_choose(u, v),
        Strategy::Hazard => -log_q,
    };
    report
}

/// Incremental log-weight of an adjusted particle.
pub fn incremental_log_weight(
    model: &Model,
    params: &Params,
    aug: &Augmentation,
    obs: &Observation,
    report: &AdjustmentReport,
    mode: WeightMode,
    ws: &mut Workspace,
) -> f64 {
    if report.is_dead() {
        return f64::NEG_INFINITY;
    }
    let obs_factor = observation_log(obs, aug, params);
    match mode {
        WeightMode::Incremental => report.log_a + obs_factor,
        WeightMode::Verbatim => {
            let prev = obs.at(obs.horizon() - 1);
            let mut before = aug.clone();
            before.marginalize_occults(&prev);
            let lp = model.log_prior(params);
            if lp == f64::NEG_INFINITY {
                return lp;
            }
            report.log_a + lp + ws.log_likelihood_unchecked(model, params, &prev, &before) + obs_factor
        }
        WeightMode::Exact => {
            let before_ll = report.log_lik_before.expect("exact weighting needs the pre-adjustment likelihood");
            let prev = obs.at(obs.horizon() - 1);
            let mut after = aug.clone();
            after.marginalize_occults(&prev);
            let log_a = match report.strategy {
                Strategy::Uniform => report.log_a,
                Strategy::Hazard => report.log_a - report.log_preimage,
            };
            log_a + ws.log_likelihood_unchecked(model, params, &prev, &after) - before_ll + obs_factor
        }
    }
}

/// Multinomial resampling. Returns ancestor indices.
pub fn resample<R: Rng + ?Sized>(log_weights: &[f64], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    let m = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return Err(Error::Degenerate { day: 0 });
    }
    let mut cum = Vec::with_capacity(log_weights.len());
    let mut acc = 0.0;
    for &lw in log_weights {
        acc += (lw - m).exp();
        cum.push(acc);
    }
    Ok((0..n)
        .map(|_| {
            let x = rng.random::<f64>() * acc;
            cum.partition_point(|&c| c <= x).min(log_weights.len() - 1)
        })
        .map(|mut i| {
            // never land on a zero-weight slot through rounding at the end
            while log_weights[i] == f64::NEG_INFINITY && i > 0 {
                i -= 1;
            }
            i
        })
        .collect())
}

/// New infections on day `t` and fresh notification days for every occult.
/// Returns `false` if some occult cannot be given a notification day after
/// `t` (the particle dies).
pub fn propagate<R: Rng + ?Sized>(
    model: &Model,
    params: &Params,
    aug: &mut Augmentation,
    obs: &Observation,
    ws: &mut Workspace,
    pressure: &mut Vec<f64>,
    rng: &mut R,
) -> bool {
    let t = obs.horizon();
    aug.marginalize_occults(obs);
    ws.pressure_logs(model, params, obs, aug, t, pressure);
    for l in 0..aug.len() {
        if aug.infection[l] == NEVER && rng.random::<f64>() < -pressure[l].exp_m1() {
            aug.infection[l] = t;
        }
    }
    for k in 0..aug.len() {
        let i = aug.infection[k];
        if i != NEVER && !obs.is_notified(k) {
            match params.period.sample_at_least((t + 1 - i) as i64, rng) {
                Some(q) => aug.notification[k] = i + q as i32,
                None => return false,
            }
        }
    }
    true
}

/// `n_p` MCMC sweeps targeting the day's posterior. A particle whose state
/// has zero posterior density is marked dead.
pub fn jitter<R: Rng + ?Sized>(
    model: &Model,
    obs: &Observation,
    p: &mut Particle,
    n_p: usize,
    tuning: &McmcTuning,
    ws: &mut Workspace,
    rng: &mut R,
) -> MoveStats {
    let mut stats = MoveStats::default();
    if !p.is_alive() {
        return stats;
    }
    let mut sampler = Sampler::with_workspace(model, obs, std::mem::take(ws));
    let log_post = sampler.log_post(&p.params, &p.aug);
    if log_post == f64::NEG_INFINITY {
        p.log_weight = f64::NEG_INFINITY;
    } else {
        let mut st = ChainState { params: p.params.clone(), aug: std::mem::take(&mut p.aug), log_post };
        let mut tun = tuning.clone();
        for _ in 0..n_p {
            sampler.sweep(&mut st, &mut tun, &mut stats, rng);
        }
        p.params = st.params;
        p.aug = st.aug;
    }
    *ws = sampler.into_workspace();
    stats
}

#[derive(Debug, Clone)]
pub struct SmcConfig {
    pub particles: usize,
    pub n_p: usize,
    pub strategy: Strategy,
    pub weight_mode: WeightMode,
    pub workers: usize,
    pub seed: u64,
    pub e_u: usize,
    pub per_individual: bool,
    /// Include `A_t` in the weight. Switching it off is only useful as a
    /// negative control.
    pub adjustment_weight: bool,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig {
            particles: 1000,
            n_p: 50,
            strategy: Strategy::Uniform,
            weight_mode: WeightMode::Incremental,
            workers: 1,
            seed: 1,
            e_u: 3,
            per_individual: false,
            adjustment_weight: true,
        }
    }
}

/// Particle population after the most recent completed day.
#[derive(Debug, Clone)]
pub struct SmcState {
    pub day: i32,
    pub particles: Vec<Particle>,
    pub m: usize,
    pub m_u: usize,
    /// Jitter acceptance counters of the last day (used to retune block sizes).
    pub stats: MoveStats,
}

/// Wall-clock time of each phase of a day step.
#[derive(Debug, Clone, Default)]
pub struct PhaseTimes {
    pub adjust: Duration,
    pub resample: Duration,
    pub propagate: Duration,
    pub jitter: Duration,
}

#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub day: i32,
    pub ess: f64,
    pub unique: usize,
    pub dead: usize,
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub mean_occults: f64,
    pub mean_switched: f64,
    pub stats: MoveStats,
    pub times: PhaseTimes,
    pub m: usize,
    pub m_u: usize,
}

/// Build the worker pool.
pub fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

/// Equally weighted particles from an MCMC run on `x_{0:T}`.
pub fn init(model: &Model, obs: &Observation, mcmc: &McmcConfig, initial: Option<Params>) -> Result<SmcState> {
    let out = run_mcmc(model, obs, mcmc, initial)?;
    let particles = out
        .draws
        .into_iter()
        .enumerate()
        .map(|(idx, (params, aug))| Particle { params, aug, log_weight: 0.0, ancestor: idx })
        .collect();
    Ok(SmcState { day: obs.horizon(), particles, m: out.tuning.m, m_u: out.tuning.m_u, stats: out.stats })
}

/// Advance `state` from day `t - 1` to day `t = obs.horizon()`.
pub fn smc_step(model: &Model, obs: &Observation, state: &mut SmcState, config: &SmcConfig, workers: &rayon::ThreadPool) -> Result<StepDiagnostics> {
    let t = obs.horizon();
    if t != state.day + 1 {
        return Err(Error::Usage(format!("cannot step from day {} to day {t}", state.day)));
    }
    let n = state.particles.len();
    if n == 0 {
        return Err(Error::Usage("empty particle population".into()));
    }
    let mut times = PhaseTimes::default();

    // Tuning for the day: λ covariance from yesterday's cloud, block sizes
    // from yesterday's acceptance.
    let live: Vec<Vec<f64>> = state.particles.iter().filter(|p| p.is_alive()).map(|p| model.lambda(&p.params)).collect();
    let mut tuning = McmcTuning::new(model, config.e_u);
    tuning.adapting = false;
    tuning.per_individual = config.per_individual;
    tuning.lambda = LambdaProposal::freeze(&if live.len() >= 2 {
        empirical_covariance(&live)
    } else {
        let d = model.lambda_names().len();
        DMatrix::identity(d, d)
    });
    tuning.m = state.m;
    tuning.m_u = state.m_u;
    tuning.retune_blocks(&state.stats, obs.num_notified());

    // Adjust and weight.
    let clock = Instant::now();
    let reports: Vec<AdjustmentReport> = workers.install(|| {
        state
            .particles
            .par_iter_mut()
            .enumerate()
            .map_init(Workspace::new, |ws, (idx, p)| {
                if !p.is_alive() {
                    return AdjustmentReport {
                        v: 0,
                        u_prev: 0,
                        switched: 0,
                        log_a: f64::NEG_INFINITY,
                        strategy: config.strategy,
                        log_preimage: 0.0,
                        log_lik_before: None,
                    };
                }
                let mut rng = rng::stream(config.seed, t as i64, purpose::ADJUST, idx as u64);
                let before = (config.weight_mode == WeightMode::Exact).then(|| {
                    let prev = obs.at(t - 1);
                    let mut a = p.aug.clone();
                    a.marginalize_occults(&prev);
                    ws.log_likelihood_unchecked(model, &p.params, &prev, &a)
                });
                p.aug.marginalize_occults(obs);
                let mut report = adjust(&mut p.aug, obs, &p.params, config.strategy, &mut rng);
                report.log_lik_before = before;
                if !config.adjustment_weight && !report.is_dead() {
                    report.log_a = 0.0;
                }
                p.log_weight = incremental_log_weight(model, &p.params, &p.aug, obs, &report, config.weight_mode, ws);
                report
            })
            .collect()
    });
    times.adjust = clock.elapsed();

    let log_weights: Vec<f64> = state.particles.iter().map(|p| p.log_weight).collect();
    let dead = log_weights.iter().filter(|w| **w == f64::NEG_INFINITY).count();
    let live_reports: Vec<&AdjustmentReport> = reports.iter().filter(|r| !r.is_dead()).collect();
    let mean_switched = live_reports.iter().map(|r| r.switched as f64).sum::<f64>() / live_reports.len().max(1) as f64;

    // Resample.
    let clock = Instant::now();
    let ess = effective_sample_size(&log_weights);
    let mut rng = rng::stream(config.seed, t as i64, purpose::RESAMPLE, 0);
    let ancestors = resample(&log_weights, n, &mut rng).map_err(|_| Error::Degenerate { day: t })?;
    let mut distinct = ancestors.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let unique = distinct.len();
    let mut next: Vec<Particle> = ancestors
        .iter()
        .map(|&a| Particle { log_weight: 0.0, ancestor: a, ..state.particles[a].clone() })
        .collect();
    times.resample = clock.elapsed();

    // Propagate.
    let clock = Instant::now();
    workers.install(|| {
        next.par_iter_mut().enumerate().for_each_init(
            || (Workspace::new(), Vec::new()),
            |(ws, pressure), (idx, p)| {
                let mut rng = rng::stream(config.seed, t as i64, purpose::MOVE, idx as u64);
                if !propagate(model, &p.params, &mut p.aug, obs, ws, pressure, &mut rng) {
                    p.log_weight = f64::NEG_INFINITY;
                }
            },
        )
    });
    times.propagate = clock.elapsed();

    // Jitter.
    let clock = Instant::now();
    let stats = workers.install(|| {
        next.par_iter_mut()
            .enumerate()
            .map_init(Workspace::new, |ws, (idx, p)| {
                let mut rng = rng::stream(config.seed, t as i64, purpose::JITTER, idx as u64);
                jitter(model, obs, p, config.n_p, &tuning, ws, &mut rng)
            })
            .reduce(MoveStats::default, |mut a, b| {
                a.merge(&b);
                a
            })
    });
    times.jitter = clock.elapsed();

    state.particles = next;
    state.day = t;
    state.m = tuning.m;
    state.m_u = tuning.m_u;
    state.stats = stats;

    let names = model.parameter_names();
    let live: Vec<&Particle> = state.particles.iter().filter(|p| p.is_alive()).collect();
    let mut means = Vec::with_capacity(names.len());
    let mut sds = Vec::with_capacity(names.len());
    for j in 0..names.len() {
        let xs: Vec<f64> = live.iter().map(|p| model.parameter_values(&p.params)[j]).collect();
        let (m, s) = mean_sd(&xs);
        means.push(m);
        sds.push(s);
    }
    let mean_occults = live.iter().map(|p| p.aug.occult_count(obs) as f64).sum::<f64>() / live.len().max(1) as f64;
    Ok(StepDiagnostics {
        day: t,
        ess,
        unique,
        dead,
        names,
        means,
        sds,
        mean_occults,
        mean_switched,
        stats,
        times,
        m: tuning.m,
        m_u: tuning.m_u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InfectiousPeriod;
    use crate::model::KernelSpec;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn params() -> Params {
        Params {
            kernel: KernelSpec::Homogeneous { contact: 0.3 },
            period: InfectiousPeriod::poisson_plus_one(3.0).unwrap(),
            kappa: 0.0,
        }
    }

    fn obs_with(n: usize, t: i32, notified: &[(usize, i32)]) -> Observation {
        let mut note = vec![None; n];
        for &(k, d) in notified {
            note[k] = Some(d);
        }
        Observation::new(t, note.clone(), note).unwrap()
    }

    #[test]
    fn no_new_cases_leaves_the_particle_alone() {
        let obs = obs_with(4, 3, &[(0, 0)]);
        let mut aug = Augmentation { infection: vec![-2, 1, NEVER, NEVER], notification: vec![0, NEVER, NEVER, NEVER] };
        let before = aug.clone();
        let r = adjust(&mut aug, &obs, &params(), Strategy::Uniform, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
        assert_eq!(aug, before);
        assert_eq!(r.log_a, 0.0);
    }

    #[test]
    fn uniform_weight_is_a_binomial_coefficient() {
        // five occults, two new notifications
        let obs = obs_with(8, 5, &[(0, 0), (6, 5), (7, 5)]);
        let mut aug = Augmentation {
            infection: vec![-2, 0, 1, 2, 3, 4, NEVER, NEVER],
            notification: vec![0, NEVER, NEVER, NEVER, NEVER, NEVER, NEVER, NEVER],
        };
        let r = adjust(&mut aug, &obs, &params(), Strategy::Uniform, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
        assert_relative_eq!(r.log_a.exp(), 10.0, max_relative = 1e-12);
        assert_eq!(r.switched, 2);
        assert_eq!(aug.occults(&obs.at(4)).len(), 5, "occult count is preserved");
        assert!(aug.infection[6] < 5 && aug.infection[7] < 5);
    }

    #[test]
    fn too_many_notifications_kill_the_particle() {
        let obs = obs_with(6, 4, &[(0, 0), (3, 4), (4, 4), (5, 4)]);
        let mut aug = Augmentation {
            infection: vec![-2, 1, 2, NEVER, NEVER, NEVER],
            notification: vec![0, NEVER, NEVER, NEVER, NEVER, NEVER],
        };
        let r = adjust(&mut aug, &obs, &params(), Strategy::Uniform, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
        assert!(r.is_dead());
        let mut ws = Workspace::new();
        let model = crate::likelihood::Model::new(
            std::sync::Arc::new(crate::model::Population::uniform_square(6, 1.0, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1))),
            crate::model::KernelFamily::Homogeneous,
            vec![crate::likelihood::PriorSpec::Uniform01],
            crate::likelihood::KappaModel::Fixed(0.0),
            crate::likelihood::PeriodModel::Fixed(params().period),
        )
        .unwrap();
        let w = incremental_log_weight(&model, &params(), &aug, &obs, &r, WeightMode::Incremental, &mut ws);
        assert_eq!(w, f64::NEG_INFINITY);
    }

    #[test]
    fn hazard_weights_for_symmetric_and_single_occults() {
        let obs = obs_with(4, 3, &[(0, 0), (3, 3)]);
        let mut aug = Augmentation { infection: vec![-2, 1, NEVER, NEVER], notification: vec![0, NEVER, NEVER, NEVER] };
        let r = adjust(&mut aug, &obs, &params(), Strategy::Hazard, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
        assert_relative_eq!(r.log_a, 0.0);
        let mut aug = Augmentation { infection: vec![-2, 1, 1, NEVER], notification: vec![0, NEVER, NEVER, NEVER] };
        let r = adjust(&mut aug, &obs, &params(), Strategy::Hazard, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
        assert_relative_eq!(r.log_a.exp(), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn resampling_extremes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let a = resample(&[f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY], 50, &mut rng).unwrap();
        assert!(a.iter().all(|&i| i == 1));
        assert!(resample(&[f64::NEG_INFINITY; 3], 3, &mut rng).is_err());
        let a = resample(&[-1.0; 4], 40_000, &mut rng).unwrap();
        for k in 0..4 {
            let f = a.iter().filter(|&&i| i == k).count() as f64 / 40_000.0;
            assert!((f - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn new_infections_get_notifications_after_today() {
        let model = crate::likelihood::Model::new(
            std::sync::Arc::new(crate::model::Population::uniform_square(5, 1.0, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1))),
            crate::model::KernelFamily::Homogeneous,
            vec![crate::likelihood::PriorSpec::Uniform01],
            crate::likelihood::KappaModel::Fixed(0.0),
            crate::likelihood::PeriodModel::Fixed(params().period),
        )
        .unwrap();
        let p = Params { kernel: KernelSpec::Homogeneous { contact: 0.9 }, ..params() };
        let obs = obs_with(5, 2, &[(0, 2)]);
        let mut ws = Workspace::new();
        let mut buf = Vec::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let mut aug = Augmentation { infection: vec![-1, NEVER, NEVER, NEVER, NEVER], notification: vec![2, NEVER, NEVER, NEVER, NEVER] };
            assert!(propagate(&model, &p, &mut aug, &obs, &mut ws, &mut buf, &mut rng));
            for k in 1..5 {
                if aug.infection[k] != NEVER {
                    assert_eq!(aug.infection[k], 2);
                    assert!(aug.notification[k] > 2);
                }
            }
        }
        // nobody infectious on day 2: no infections
        let obs = obs_with(5, 2, &[(0, 1)]);
        let mut aug = Augmentation { infection: vec![-1, NEVER, NEVER, NEVER, NEVER], notification: vec![1, NEVER, NEVER, NEVER, NEVER] };
        assert!(propagate(&model, &p, &mut aug, &obs, &mut ws, &mut buf, &mut rng));
        assert_eq!(aug.final_size(), 1);
    }
}

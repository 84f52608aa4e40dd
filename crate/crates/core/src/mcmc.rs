//! Data-augmented MCMC: random-walk λ updates, Gibbs ζ updates, block
//! updates of notified-case infection days and of occult (infection,
//! notification) pairs, and add/remove moves on the occult count.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::likelihood::{check, Augmentation, Model, Observation, PeriodModel, PriorSpec, Workspace};
use crate::model::{InfectiousPeriod, Params, NEVER};
use crate::rng::{self, purpose};

/// Weight of the fixed isotropic component of the frozen proposal.
pub const XI: f64 = 0.05;
/// Scale of the fixed isotropic component of the frozen proposal.
pub const ALPHA_TILDE: f64 = 0.1;
/// Multiplicative step of the burn-in scale adaptation.
const ALPHA_STEP: f64 = 1.01;
/// Target acceptance rate for every tuned move.
pub const TARGET_ACCEPTANCE: f64 = 0.25;

/// Optimal random-walk scaling `2.38² / d`.
pub fn optimal_scale(d: usize) -> f64 {
    2.38 * 2.38 / d as f64
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

/// Random-walk proposal for the λ block.
#[derive(Debug, Clone)]
pub enum LambdaProposal {
    /// `N(0, α · diag(scales²))`; `α` adapts during burn-in.
    Adaptive { alpha: f64, scales: Vec<f64> },
    /// Mixture drawing `N(0, s_d Σ_B)` with probability `1 - ξ` and
    /// `N(0, α̃ s_d I)` otherwise; its covariance is
    /// `(1 - ξ) s_d Σ_B + ξ α̃ s_d I`.
    Frozen { sigma_b: DMatrix<f64>, chol: DMatrix<f64>, s_d: f64 },
}

impl LambdaProposal {
    /// Burn-in proposal with unit scale in prior-standard-deviation units.
    pub fn adaptive(priors: &[PriorSpec], alpha: f64) -> Self {
        let scales = priors.iter().map(|p| 0.1 * p.sd()).collect();
        LambdaProposal::Adaptive { alpha, scales }
    }

    /// Freeze at an empirical covariance `Σ_B`. A non positive-definite
    /// `Σ_B` is regularised with a ridge and, failing that, replaced by its
    /// diagonal.
    pub fn freeze(sigma_b: &DMatrix<f64>) -> Self {
        let d = sigma_b.nrows();
        let s_d = optimal_scale(d);
        let scaled = sigma_b * s_d;
        let chol = match scaled.clone().cholesky() {
            Some(c) => c.l(),
            None => {
                let mean_diag = (0..d).map(|j| scaled[(j, j)].abs()).sum::<f64>() / d as f64;
                let ridge = (mean_diag * 1e-6).max(1e-300);
                let reg = &scaled + DMatrix::identity(d, d) * ridge;
                match reg.cholesky() {
                    Some(c) => c.l(),
                    None => DMatrix::from_diagonal(&DVector::from_iterator(
                        d,
                        (0..d).map(|j| scaled[(j, j)].abs().max(ridge).sqrt()),
                    )),
                }
            }
        };
        LambdaProposal::Frozen { sigma_b: sigma_b.clone(), chol, s_d }
    }

    pub fn dim(&self) -> usize {
        match self {
            LambdaProposal::Adaptive { scales, .. } => scales.len(),
            LambdaProposal::Frozen { sigma_b, .. } => sigma_b.nrows(),
        }
    }

    /// Covariance of the proposal increment.
    pub fn covariance(&self) -> DMatrix<f64> {
        match self {
            LambdaProposal::Adaptive { alpha, scales } => {
                DMatrix::from_diagonal(&DVector::from_iterator(scales.len(), scales.iter().map(|s| alpha * s * s)))
            }
            LambdaProposal::Frozen { sigma_b, s_d, .. } => {
                let d = sigma_b.nrows();
                sigma_b * ((1.0 - XI) * s_d) + DMatrix::identity(d, d) * (XI * ALPHA_TILDE * s_d)
            }
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        match self {
            LambdaProposal::Adaptive { alpha, scales } => {
                z.iter().zip(scales).map(|(z, s)| z * s * alpha.sqrt()).collect()
            }
            LambdaProposal::Frozen { chol, s_d, .. } => {
                if rng.random::<f64>() < XI {
                    z.iter().map(|z| z * (ALPHA_TILDE * s_d).sqrt()).collect()
                } else {
                    (chol * z).iter().copied().collect()
                }
            }
        }
    }
}

/// Proposal and block-size tuning.
#[derive(Debug, Clone)]
pub struct McmcTuning {
    pub lambda: LambdaProposal,
    /// Notified-case infection days updated per sweep.
    pub m: usize,
    /// Occult pairs updated per sweep.
    pub m_u: usize,
    /// Largest change of the occult count per move.
    pub e_u: usize,
    /// Adapt the burn-in scale `α` after each λ proposal.
    pub adapting: bool,
    /// Accept each individual of a block separately instead of jointly.
    pub per_individual: bool,
}

impl McmcTuning {
    pub fn new(model: &Model, e_u: usize) -> Self {
        McmcTuning {
            lambda: LambdaProposal::adaptive(&model.lambda_priors(), 1.0),
            m: 1,
            m_u: 1,
            e_u: e_u.max(1),
            adapting: true,
            per_individual: false,
        }
    }

    /// Move `m` and `m_u` toward the target acceptance rate, treating block
    /// acceptance as roughly geometric in block size.
    pub fn retune_blocks(&mut self, stats: &MoveStats, n_notified: usize) {
        self.m = retune(self.m, &stats.notified).clamp(1, n_notified.max(1));
        self.m_u = retune(self.m_u, &stats.occult_times).max(1);
    }
}

fn retune(size: usize, c: &Counter) -> usize {
    if c.proposed < 20 {
        return size;
    }
    let rate = c.rate();
    let target = if rate <= 0.0 {
        size as f64 / 2.0
    } else if rate >= 1.0 {
        size as f64 * 2.0
    } else {
        size as f64 * TARGET_ACCEPTANCE.ln() / rate.ln()
    };
    let target = target.clamp(size as f64 / 2.0, size as f64 * 2.0);
    (target.round() as usize).max(1)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counter {
    pub proposed: u64,
    pub accepted: u64,
}

impl Counter {
    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn merge(&mut self, other: &Counter) {
        self.proposed += other.proposed;
        self.accepted += other.accepted;
    }
}

/// Acceptance counters per move type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MoveStats {
    pub lambda: Counter,
    pub zeta: Counter,
    pub notified: Counter,
    pub occult_times: Counter,
    pub occult_count: Counter,
}

impl MoveStats {
    pub fn merge(&mut self, o: &MoveStats) {
        self.lambda.merge(&o.lambda);
        self.zeta.merge(&o.zeta);
        self.notified.merge(&o.notified);
        self.occult_times.merge(&o.occult_times);
        self.occult_count.merge(&o.occult_count);
    }
}

/// Parameters and augmentation with their cached log-posterior.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub params: Params,
    pub aug: Augmentation,
    pub log_post: f64,
}

/// Runs MCMC moves against one observation. Holds the likelihood
/// workspace; one sampler per thread.
pub struct Sampler<'a> {
    model: &'a Model,
    obs: &'a Observation,
    ws: Workspace,
    notified: Vec<usize>,
    scratch: Vec<(usize, i32, i32)>,
}

impl<'a> Sampler<'a> {
    pub fn new(model: &'a Model, obs: &'a Observation) -> Self {
        Self::with_workspace(model, obs, Workspace::new())
    }

    pub fn with_workspace(model: &'a Model, obs: &'a Observation, ws: Workspace) -> Self {
        Sampler { model, obs, ws, notified: obs.notified(), scratch: Vec::new() }
    }

    pub fn into_workspace(self) -> Workspace {
        self.ws
    }

    pub fn observation(&self) -> &Observation {
        self.obs
    }

    /// Log-posterior of a state already known to be consistent with the
    /// observation.
    pub fn log_post(&mut self, params: &Params, aug: &Augmentation) -> f64 {
        let lp = self.model.log_prior(params);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        lp + self.ws.log_likelihood_unchecked(self.model, params, self.obs, aug)
    }

    /// Build a chain state, validating consistency.
    pub fn state(&mut self, params: Params, aug: Augmentation) -> Result<ChainState> {
        check(self.obs, &aug, false)?;
        for k in 0..aug.len() {
            if aug.infection[k] != NEVER && aug.notification[k] == NEVER {
                return Err(Error::Validation(format!("occult {k} has no imputed notification day")));
            }
        }
        let log_post = self.log_post(&params, &aug);
        Ok(ChainState { params, aug, log_post })
    }

    /// One sweep: λ, ζ, notified infection days, occult pairs, occult count.
    pub fn sweep<R: Rng + ?Sized>(&mut self, st: &mut ChainState, tuning: &mut McmcTuning, stats: &mut MoveStats, rng: &mut R) {
        self.update_lambda(st, tuning, stats, rng);
        self.update_zeta(st, stats, rng);
        self.update_notified_times(st, tuning, stats, rng);
        self.update_occult_times(st, tuning, stats, rng);
        self.update_occult_count(st, tuning, stats, rng);
        debug_assert!({
            let fresh = self.log_post(&st.params, &st.aug);
            (fresh == st.log_post) || (fresh - st.log_post).abs() <= 1e-9 * (1.0 + fresh.abs())
        });
    }

    fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
        if log_ratio >= 0.0 {
            return true;
        }
        if log_ratio.is_nan() || log_ratio == f64::NEG_INFINITY {
            return false;
        }
        rng.random::<f64>().ln() < log_ratio
    }

    pub fn update_lambda<R: Rng + ?Sized>(&mut self, st: &mut ChainState, tuning: &mut McmcTuning, stats: &mut MoveStats, rng: &mut R) {
        let step = tuning.lambda.draw(rng);
        let current = self.model.lambda(&st.params);
        let proposed: Vec<f64> = current.iter().zip(&step).map(|(c, s)| c + s).collect();
        let accepted = match self.model.with_lambda(&st.params, &proposed) {
            None => false,
            Some(p) => {
                let lp = self.log_post(&p, &st.aug);
                if Self::accept(lp - st.log_post, rng) {
                    st.params = p;
                    st.log_post = lp;
                    true
                } else {
                    false
                }
            }
        };
        stats.lambda.record(accepted);
        if tuning.adapting {
            if let LambdaProposal::Adaptive { alpha, .. } = &mut tuning.lambda {
                if accepted {
                    *alpha *= ALPHA_STEP;
                } else {
                    *alpha *= ALPHA_STEP.powf(-TARGET_ACCEPTANCE / (1.0 - TARGET_ACCEPTANCE));
                }
            }
        }
    }

    /// Conjugate draw of the Poisson mean; a no-op when the period is fixed.
    pub fn update_zeta<R: Rng + ?Sized>(&mut self, st: &mut ChainState, stats: &mut MoveStats, rng: &mut R) {
        let PeriodModel::PoissonGamma { shape, rate } = self.model.period else {
            return;
        };
        let (mut sum, mut count) = (0.0, 0.0);
        for k in 0..st.aug.len() {
            let (i, n) = (st.aug.infection[k], st.aug.notification[k]);
            if i != NEVER && n != NEVER {
                sum += (n - i - 1) as f64;
                count += 1.0;
            }
        }
        let a = conjugate_poisson_mean(shape, rate, sum, count, rng);
        if let Ok(period) = InfectiousPeriod::poisson_plus_one(a) {
            st.params.period = period;
            st.log_post = self.log_post(&st.params, &st.aug);
            stats.zeta.record(true);
        } else {
            stats.zeta.record(false);
        }
    }

    /// Independence-sampler block update of notified-case infection days.
    pub fn update_notified_times<R: Rng + ?Sized>(&mut self, st: &mut ChainState, tuning: &McmcTuning, stats: &mut MoveStats, rng: &mut R) {
        let total = self.notified.len();
        if total == 0 {
            return;
        }
        let m = tuning.m.clamp(1, total);
        let picks = index::sample(rng, total, m).into_vec();
        let period = st.params.period.clone();
        if tuning.per_individual {
            for j in picks {
                let l = self.notified[j];
                let q = period.sample(rng) as i32;
                let old = st.aug.infection[l];
                let n = st.aug.notification[l];
                let correction = period.log_pmf(q as i64) - period.log_pmf((n - old) as i64);
                st.aug.infection[l] = n - q;
                let lp = self.log_post(&st.params, &st.aug);
                if Self::accept(lp - st.log_post - correction, rng) {
                    st.log_post = lp;
                    stats.notified.record(true);
                } else {
                    st.aug.infection[l] = old;
                    stats.notified.record(false);
                }
            }
            return;
        }
        self.scratch.clear();
        let mut correction = 0.0;
        for j in picks {
            let l = self.notified[j];
            let q = period.sample(rng) as i32;
            let (old, n) = (st.aug.infection[l], st.aug.notification[l]);
            correction += period.log_pmf(q as i64) - period.log_pmf((n - old) as i64);
            self.scratch.push((l, old, n));
            st.aug.infection[l] = n - q;
        }
        let lp = self.log_post(&st.params, &st.aug);
        if Self::accept(lp - st.log_post - correction, rng) {
            st.log_post = lp;
            stats.notified.record(true);
        } else {
            for &(l, old, _) in &self.scratch {
                st.aug.infection[l] = old;
            }
            stats.notified.record(false);
        }
    }

    /// Draw `(i', n')` for an occult: `q ~ g_Q`, `h ~ U{0..q-1}`,
    /// `i' = t - h`, `n' = i' + q`. Returns the pair and `ln(g_Q(q) / q)`.
    fn draw_occult_pair<R: Rng + ?Sized>(period: &InfectiousPeriod, t: i32, rng: &mut R) -> (i32, i32, f64) {
        let q = period.sample(rng);
        let h = rng.random_range(0..q) as i32;
        let i = t - h;
        (i, i + q as i32, period.log_pmf(q) - (q as f64).ln())
    }

    fn occult_pair_log_density(period: &InfectiousPeriod, i: i32, n: i32) -> f64 {
        let q = (n - i) as i64;
        period.log_pmf(q) - (q as f64).ln()
    }

    pub fn update_occult_times<R: Rng + ?Sized>(&mut self, st: &mut ChainState, tuning: &McmcTuning, stats: &mut MoveStats, rng: &mut R) {
        let occults = st.aug.occults(self.obs);
        if occults.is_empty() || tuning.m_u == 0 {
            return;
        }
        let t = self.obs.horizon();
        let m = tuning.m_u.min(occults.len());
        let picks = index::sample(rng, occults.len(), m).into_vec();
        let period = st.params.period.clone();
        if tuning.per_individual {
            for j in picks {
                let l = occults[j];
                let (oi, on) = (st.aug.infection[l], st.aug.notification[l]);
                let (ni, nn, new_density) = Self::draw_occult_pair(&period, t, rng);
                let correction = new_density - Self::occult_pair_log_density(&period, oi, on);
                st.aug.infection[l] = ni;
                st.aug.notification[l] = nn;
                let lp = self.log_post(&st.params, &st.aug);
                if Self::accept(lp - st.log_post - correction, rng) {
                    st.log_post = lp;
                    stats.occult_times.record(true);
                } else {
                    st.aug.infection[l] = oi;
                    st.aug.notification[l] = on;
                    stats.occult_times.record(false);
                }
            }
            return;
        }
        self.scratch.clear();
        let mut correction = 0.0;
        for j in picks {
            let l = occults[j];
            let (oi, on) = (st.aug.infection[l], st.aug.notification[l]);
            let (ni, nn, new_density) = Self::draw_occult_pair(&period, t, rng);
            correction += new_density - Self::occult_pair_log_density(&period, oi, on);
            self.scratch.push((l, oi, on));
            st.aug.infection[l] = ni;
            st.aug.notification[l] = nn;
        }
        let lp = self.log_post(&st.params, &st.aug);
        if Self::accept(lp - st.log_post - correction, rng) {
            st.log_post = lp;
            stats.occult_times.record(true);
        } else {
            for &(l, oi, on) in &self.scratch {
                st.aug.infection[l] = oi;
                st.aug.notification[l] = on;
            }
            stats.occult_times.record(false);
        }
    }

    /// Add or remove up to `e_u` occults in one Metropolis–Hastings move.
    pub fn update_occult_count<R: Rng + ?Sized>(&mut self, st: &mut ChainState, tuning: &McmcTuning, stats: &mut MoveStats, rng: &mut R) {
        let e_u = tuning.e_u.max(1);
        let magnitude = rng.random_range(1..=e_u);
        let add = rng.random::<bool>();
        let t = self.obs.horizon();
        let susceptible: Vec<usize> = (0..st.aug.len()).filter(|&k| !st.aug.is_infected(k)).collect();
        let occults = st.aug.occults(self.obs);
        let (s, u) = (susceptible.len(), occults.len());
        let period = st.params.period.clone();
        self.scratch.clear();
        let log_proposal;
        if add {
            if magnitude > s {
                stats.occult_count.record(false);
                return;
            }
            let mut density = 0.0;
            for j in index::sample(rng, s, magnitude) {
                let l = susceptible[j];
                let (i, n, d) = Self::draw_occult_pair(&period, t, rng);
                density += d;
                self.scratch.push((l, NEVER, NEVER));
                st.aug.infection[l] = i;
                st.aug.notification[l] = n;
            }
            log_proposal = ln_choose(s, magnitude) - ln_choose(u + magnitude, magnitude) - density;
        } else {
            if magnitude > u {
                stats.occult_count.record(false);
                return;
            }
            let mut density = 0.0;
            for j in index::sample(rng, u, magnitude) {
                let l = occults[j];
                let (i, n) = (st.aug.infection[l], st.aug.notification[l]);
                density += Self::occult_pair_log_density(&period, i, n);
                self.scratch.push((l, i, n));
                st.aug.infection[l] = NEVER;
                st.aug.notification[l] = NEVER;
            }
            log_proposal = ln_choose(u, magnitude) - ln_choose(s + magnitude, magnitude) + density;
        }
        let lp = self.log_post(&st.params, &st.aug);
        if Self::accept(lp - st.log_post + log_proposal, rng) {
            st.log_post = lp;
            stats.occult_count.record(true);
        } else {
            for &(l, i, n) in &self.scratch {
                st.aug.infection[l] = i;
                st.aug.notification[l] = n;
            }
            stats.occult_count.record(false);
        }
    }
}

/// `a | data ~ Gamma(shape + Σ(q - 1), rate + count)`.
pub fn conjugate_poisson_mean<R: Rng + ?Sized>(shape: f64, rate: f64, sum: f64, count: f64, rng: &mut R) -> f64 {
    Gamma::new(shape + sum, 1.0 / (rate + count)).expect("positive shape and rate").sample(rng)
}

/// Starting parameters: 0.1 for probability-valued components, the prior
/// mean otherwise.
pub fn default_initial_params(model: &Model) -> Result<Params> {
    let lambda: Vec<f64> = model
        .lambda_priors()
        .iter()
        .map(|p| match p {
            PriorSpec::Uniform01 => 0.1,
            other => other.mean(),
        })
        .collect();
    let period = match &model.period {
        PeriodModel::Fixed(q) => q.clone(),
        PeriodModel::PoissonGamma { shape, rate } => InfectiousPeriod::poisson_plus_one(shape / rate)?,
    };
    let nk = model.family.parameter_names().len();
    let kernel = crate::model::KernelSpec::from_values(model.family, &lambda[..nk])?;
    let kappa = match model.kappa {
        crate::likelihood::KappaModel::Fixed(k) => k,
        crate::likelihood::KappaModel::Inferred(_) => lambda[nk],
    };
    let p = Params { kernel, period, kappa };
    p.validate()?;
    Ok(p)
}

/// A starting augmentation with positive posterior density: random
/// back-filled infection days plus a few occults, falling back to a
/// deterministic construction seeded from the earliest notification.
pub fn initial_augmentation<R: Rng + ?Sized>(
    sampler: &mut Sampler,
    params: &Params,
    occults: usize,
    rng: &mut R,
) -> Result<Augmentation> {
    let obs = sampler.obs;
    let n = obs.len();
    let t = obs.horizon();
    let notified = obs.notified();
    if notified.is_empty() {
        return Err(Error::Init("no notified cases".into()));
    }
    for _ in 0..100 {
        let mut aug = Augmentation::empty(n);
        for &l in &notified {
            let nl = obs.notification(l).unwrap();
            aug.notification[l] = nl;
            aug.infection[l] = nl - params.period.sample(rng) as i32;
        }
        let susceptible: Vec<usize> = (0..n).filter(|&k| !obs.is_notified(k)).collect();
        let extra = occults.min(susceptible.len());
        for j in index::sample(rng, susceptible.len(), extra) {
            let (i, nn, _) = Sampler::draw_occult_pair(&params.period, t, rng);
            aug.infection[susceptible[j]] = i;
            aug.notification[susceptible[j]] = nn;
        }
        if sampler.log_post(params, &aug).is_finite() {
            return Ok(aug);
        }
    }

    let first = *notified.iter().min_by_key(|&&k| (obs.notification(k).unwrap(), k)).unwrap();
    let n_first = obs.notification(first).unwrap();
    let qbar = (params.period.mean().round() as i32).max(2);
    let i_first = n_first - qbar;
    let mut candidates = Vec::new();
    for spread in [true, false] {
        let mut aug = Augmentation::empty(n);
        for &l in &notified {
            let nl = obs.notification(l).unwrap();
            aug.notification[l] = nl;
            aug.infection[l] = if l == first {
                i_first
            } else if spread {
                (nl - qbar).max(i_first + 1)
            } else {
                i_first + 1
            };
        }
        candidates.push(aug);
    }
    for aug in candidates {
        if sampler.log_post(params, &aug).is_finite() {
            return Ok(aug);
        }
    }
    Err(Error::Init(format!("no augmentation with positive density found for day {t}")))
}

#[derive(Debug, Clone)]
pub struct McmcConfig {
    pub burn_in: usize,
    pub samples: usize,
    pub thin: usize,
    pub e_u: usize,
    pub seed: u64,
    /// Occults placed in the starting augmentation.
    pub initial_occults: usize,
    pub per_individual: bool,
    pub record_trace: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            burn_in: 10_000,
            samples: 1_000,
            thin: 50,
            e_u: 3,
            seed: 1,
            initial_occults: 2,
            per_individual: false,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub sweep: usize,
    pub values: Vec<f64>,
    pub log_lik: f64,
    pub occults: usize,
    pub tau: i32,
}

#[derive(Debug, Clone)]
pub struct McmcOutput {
    /// Every `thin`-th state after burn-in.
    pub draws: Vec<(Params, Augmentation)>,
    pub tuning: McmcTuning,
    /// Counters over the post-burn-in sweeps.
    pub stats: MoveStats,
    pub trace: Vec<TraceRow>,
}

/// Sample covariance of rows of `xs`.
pub fn empirical_covariance(xs: &[Vec<f64>]) -> DMatrix<f64> {
    let d = xs.first().map_or(0, |x| x.len());
    let n = xs.len() as f64;
    let mut mean = vec![0.0; d];
    for x in xs {
        for j in 0..d {
            mean[j] += x[j] / n;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for x in xs {
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += (x[a] - mean[a]) * (x[b] - mean[b]);
            }
        }
    }
    if xs.len() > 1 {
        cov /= n - 1.0;
    }
    cov
}

/// Burn-in of `B` sweeps with adaptive tuning, then `N · M` sweeps keeping
/// every `M`-th state.
pub fn run_mcmc(model: &Model, obs: &Observation, config: &McmcConfig, initial: Option<Params>) -> Result<McmcOutput> {
    if obs.num_notified() == 0 {
        return Err(Error::Init("observation has no notified cases".into()));
    }
    let params = match initial {
        Some(p) => p,
        None => default_initial_params(model)?,
    };
    let t = obs.horizon() as i64;
    let mut rng = rng::stream(config.seed, t, purpose::INIT, 0);
    let mut sampler = Sampler::new(model, obs);
    let aug = initial_augmentation(&mut sampler, &params, config.initial_occults, &mut rng)?;
    let mut st = sampler.state(params, aug)?;
    let mut tuning = McmcTuning::new(model, config.e_u);
    tuning.per_individual = config.per_individual;
    let n_notified = obs.num_notified();

    let mut window = MoveStats::default();
    let mut history = Vec::with_capacity(config.burn_in / 2 + 1);
    for sweep in 0..config.burn_in {
        sampler.sweep(&mut st, &mut tuning, &mut window, &mut rng);
        if (sweep + 1) % 100 == 0 {
            tuning.retune_blocks(&window, n_notified);
            window = MoveStats::default();
        }
        if sweep >= config.burn_in / 2 {
            history.push(model.lambda(&st.params));
        }
    }
    tuning.adapting = false;
    if history.len() >= 2 {
        tuning.lambda = LambdaProposal::freeze(&empirical_covariance(&history));
    }

    let mut stats = MoveStats::default();
    let mut draws = Vec::with_capacity(config.samples);
    let mut trace = Vec::new();
    let thin = config.thin.max(1);
    for sweep in 0..config.samples * thin {
        sampler.sweep(&mut st, &mut tuning, &mut stats, &mut rng);
        if (sweep + 1) % thin == 0 {
            draws.push((st.params.clone(), st.aug.clone()));
            if config.record_trace {
                let log_lik = st.log_post - model.log_prior(&st.params);
                trace.push(TraceRow {
                    sweep: config.burn_in + sweep + 1,
                    values: model.parameter_values(&st.params),
                    log_lik,
                    occults: st.aug.occult_count(obs),
                    tau: st.aug.tau().unwrap_or(NEVER),
                });
            }
        }
    }
    Ok(McmcOutput { draws, tuning, stats, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::KappaModel;
    use crate::model::{Individual, KernelFamily, KernelSpec, Population};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use std::sync::Arc;

    fn small_model(period: PeriodModel) -> Model {
        let individuals = (0..4)
            .map(|k| Individual { id: k + 1, x: k as f64 * 0.1, y: 0.0, covariates: vec![] })
            .collect();
        let pop = Arc::new(Population::new(individuals, vec![]).unwrap());
        Model::new(pop, KernelFamily::Homogeneous, vec![PriorSpec::Uniform01], KappaModel::Fixed(0.0), period).unwrap()
    }

    #[test]
    fn eq6_freeze_with_identity() {
        for d in 1..5 {
            let p = LambdaProposal::freeze(&DMatrix::identity(d, d));
            let c = p.covariance();
            let want = 0.955 * 2.38 * 2.38 / d as f64;
            for a in 0..d {
                for b in 0..d {
                    let w = if a == b { want } else { 0.0 };
                    assert!((c[(a, b)] - w).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn singular_sigma_still_gives_a_positive_definite_proposal() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = LambdaProposal::freeze(&s);
        assert!(p.covariance().cholesky().is_some());
        let z = DMatrix::zeros(2, 2);
        let p = LambdaProposal::freeze(&z);
        assert!(p.covariance().cholesky().is_some());
    }

    #[test]
    fn all_rejections_shrink_alpha() {
        let model = small_model(PeriodModel::Fixed(InfectiousPeriod::poisson_plus_one(2.0).unwrap()));
        let obs = Observation::new(2, vec![Some(0), None, None, None], vec![Some(0), None, None, None]).unwrap();
        let mut sampler = Sampler::new(&model, &obs);
        let params = Params {
            kernel: KernelSpec::Homogeneous { contact: 0.5 },
            period: InfectiousPeriod::poisson_plus_one(2.0).unwrap(),
            kappa: 0.0,
        };
        let aug = Augmentation { infection: vec![-2, NEVER, NEVER, NEVER], notification: vec![0, NEVER, NEVER, NEVER] };
        let mut st = sampler.state(params, aug).unwrap();
        st.log_post = f64::INFINITY; // forces every proposal to be rejected
        let mut tuning = McmcTuning::new(&model, 3);
        let mut stats = MoveStats::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut last = 1.0;
        for _ in 0..20 {
            sampler.update_lambda(&mut st, &mut tuning, &mut stats, &mut rng);
            let LambdaProposal::Adaptive { alpha, .. } = tuning.lambda else { panic!() };
            assert!(alpha < last);
            last = alpha;
        }
        assert_eq!(stats.lambda.accepted, 0);
    }

    #[test]
    fn alpha_rule_has_a_quarter_fixed_point() {
        let down = ALPHA_STEP.powf(-TARGET_ACCEPTANCE / (1.0 - TARGET_ACCEPTANCE));
        let drift = TARGET_ACCEPTANCE * ALPHA_STEP.ln() + (1.0 - TARGET_ACCEPTANCE) * down.ln();
        assert!(drift.abs() < 1e-15);
    }

    #[test]
    fn gibbs_draw_is_conjugate() {
        // one individual with n - i = 4 under a Gamma(1, 1) prior: Gamma(4, 2)
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| conjugate_poisson_mean(1.0, 1.0, 3.0, 1.0, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 0.02, "{mean}");
        assert!((var - 1.0).abs() < 0.03, "{var}");
    }

    #[test]
    fn fixed_period_zeta_is_a_no_op() {
        let q = InfectiousPeriod::poisson_plus_one(2.0).unwrap();
        let model = small_model(PeriodModel::Fixed(q.clone()));
        let obs = Observation::new(2, vec![Some(0), None, None, None], vec![Some(0), None, None, None]).unwrap();
        let mut sampler = Sampler::new(&model, &obs);
        let params = Params { kernel: KernelSpec::Homogeneous { contact: 0.5 }, period: q, kappa: 0.0 };
        let aug = Augmentation { infection: vec![-2, NEVER, NEVER, NEVER], notification: vec![0, NEVER, NEVER, NEVER] };
        let mut st = sampler.state(params.clone(), aug.clone()).unwrap();
        let mut stats = MoveStats::default();
        sampler.update_zeta(&mut st, &mut stats, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
        assert_eq!(st.params, params);
        assert_eq!(st.aug, aug);
        assert_eq!(stats.zeta.proposed, 0);
    }

    #[test]
    fn cached_posterior_tracks_every_move() {
        let q = InfectiousPeriod::poisson_plus_one(2.0).unwrap();
        let model = small_model(PeriodModel::PoissonGamma { shape: 2.0, rate: 1.0 });
        let obs = Observation::new(3, vec![Some(0), Some(2), None, None], vec![Some(0), Some(2), None, None]).unwrap();
        let mut sampler = Sampler::new(&model, &obs);
        let params = Params { kernel: KernelSpec::Homogeneous { contact: 0.5 }, period: q, kappa: 0.0 };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let aug = initial_augmentation(&mut sampler, &params, 1, &mut rng).unwrap();
        let mut st = sampler.state(params, aug).unwrap();
        let mut tuning = McmcTuning::new(&model, 2);
        tuning.m = 2;
        let mut stats = MoveStats::default();
        for _ in 0..2000 {
            sampler.sweep(&mut st, &mut tuning, &mut stats, &mut rng);
            let fresh = crate::likelihood::log_posterior(&obs, &st.aug, &st.params, &model).unwrap();
            assert_relative_eq!(st.log_post, fresh, epsilon = 1e-9, max_relative = 1e-12);
            check(&obs, &st.aug, false).unwrap();
        }
        assert!(stats.occult_count.accepted > 0);
        assert!(stats.notified.accepted > 0);
    }

    #[test]
    fn run_mcmc_counts_sweeps_and_keeps_draws_consistent() {
        let q = InfectiousPeriod::poisson_plus_one(2.0).unwrap();
        let model = small_model(PeriodModel::Fixed(q));
        let obs = Observation::new(3, vec![Some(0), Some(1), None, None], vec![Some(0), Some(1), None, None]).unwrap();
        let cfg = McmcConfig { burn_in: 300, samples: 20, thin: 5, record_trace: true, ..Default::default() };
        let out = run_mcmc(&model, &obs, &cfg, None).unwrap();
        assert_eq!(out.draws.len(), 20);
        assert_eq!(out.stats.lambda.proposed, 100);
        assert_eq!(out.trace.last().unwrap().sweep, 400);
        for (_, aug) in &out.draws {
            check(&obs, aug, false).unwrap();
        }
    }

    #[test]
    fn block_size_never_exceeds_the_notified_count() {
        let mut t = McmcTuning::new(&small_model(PeriodModel::Fixed(InfectiousPeriod::poisson_plus_one(2.0).unwrap())), 3);
        let stats = MoveStats { notified: Counter { proposed: 100, accepted: 100 }, ..Default::default() };
        for _ in 0..10 {
            t.retune_blocks(&stats, 3);
        }
        assert_eq!(t.m, 3);
    }
}

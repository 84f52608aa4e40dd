//! Augmented-data likelihood, day increments and log-posterior.
//!
//! Day indexing follows [`crate::model::state_at`]: an individual whose
//! infection day is `d` was exposed to the infectious and notified sets of
//! day `d`, and escaped on every earlier day `s < d`. The initial infective
//! `ν` (the unique individual infected on day `τ`) carries no transmission
//! factor. Every infected individual contributes `ln g_Q(n - i)`; an occult
//! whose notification day has been marginalised out (stored as [`NEVER`])
//! contributes `ln P(Q > t - i)` instead.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DayState, EventHistory, InfectiousPeriod, KernelFamily, KernelSpec, Params, Population, NEVER};

/// Notification and removal days observed up to and including `horizon`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    horizon: i32,
    notification: Vec<i32>,
    removal: Vec<i32>,
}

impl Observation {
    pub fn new(horizon: i32, notification: Vec<Option<i32>>, removal: Vec<Option<i32>>) -> Result<Self> {
        if notification.len() != removal.len() {
            return Err(Error::Validation("notification and removal columns differ in length".into()));
        }
        for k in 0..notification.len() {
            match (notification[k], removal[k]) {
                (Some(n), _) if n > horizon => {
                    return Err(Error::Validation(format!("individual {k} notified on day {n} after horizon {horizon}")))
                }
                (_, Some(r)) if r > horizon => {
                    return Err(Error::Validation(format!("individual {k} removed on day {r} after horizon {horizon}")))
                }
                (None, Some(_)) => return Err(Error::Validation(format!("individual {k} removed but never notified"))),
                (Some(n), Some(r)) if r < n => {
                    return Err(Error::Validation(format!("individual {k} removed (day {r}) before notification (day {n})")))
                }
                _ => {}
            }
        }
        Ok(Observation {
            horizon,
            notification: notification.into_iter().map(|v| v.unwrap_or(NEVER)).collect(),
            removal: removal.into_iter().map(|v| v.unwrap_or(NEVER)).collect(),
        })
    }

    pub fn empty(n: usize, horizon: i32) -> Self {
        Observation { horizon, notification: vec![NEVER; n], removal: vec![NEVER; n] }
    }

    pub fn horizon(&self) -> i32 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.notification.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notification.is_empty()
    }

    pub fn notification(&self, k: usize) -> Option<i32> {
        some(self.notification[k])
    }

    pub fn removal(&self, k: usize) -> Option<i32> {
        some(self.removal[k])
    }

    /// Notification days with [`NEVER`] for individuals not yet notified.
    pub fn notification_days(&self) -> &[i32] {
        &self.notification
    }

    /// Removal days with [`NEVER`] for individuals not yet removed.
    pub fn removal_days(&self) -> &[i32] {
        &self.removal
    }

    pub fn is_notified(&self, k: usize) -> bool {
        self.notification[k] != NEVER
    }

    pub fn notified(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.is_notified(k)).collect()
    }

    pub fn num_notified(&self) -> usize {
        self.notification.iter().filter(|&&n| n != NEVER).count()
    }

    pub fn notified_on(&self, day: i32) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.notification[k] == day).collect()
    }

    pub fn removed_on(&self, day: i32) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.removal[k] == day).collect()
    }

    pub fn first_notification_day(&self) -> Option<i32> {
        self.notification.iter().copied().filter(|&n| n != NEVER).min()
    }

    pub fn last_event_day(&self) -> Option<i32> {
        self.notification.iter().chain(self.removal.iter()).copied().filter(|&d| d != NEVER).max()
    }

    /// The same feed seen on day `t`. Days after the current horizon are
    /// taken to be event-free.
    pub fn at(&self, t: i32) -> Observation {
        let cut = |d: i32| if d <= t { d } else { NEVER };
        Observation {
            horizon: t,
            notification: self.notification.iter().map(|&d| cut(d)).collect(),
            removal: self.removal.iter().map(|&d| cut(d)).collect(),
        }
    }
}

#[inline]
fn some(d: i32) -> Option<i32> {
    (d != NEVER).then_some(d)
}

/// Latent part of the state: infection days for everyone infected by the
/// horizon and notification days (observed for notified cases, imputed for
/// occults, or [`NEVER`] when marginalised).
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Augmentation {
    pub infection: Vec<i32>,
    pub notification: Vec<i32>,
}

impl Augmentation {
    pub fn empty(n: usize) -> Self {
        Augmentation { infection: vec![NEVER; n], notification: vec![NEVER; n] }
    }

    pub fn len(&self) -> usize {
        self.infection.len()
    }

    pub fn is_empty(&self) -> bool {
        self.infection.is_empty()
    }

    #[inline]
    pub fn is_infected(&self, k: usize) -> bool {
        self.infection[k] != NEVER
    }

    /// `τ`, the earliest infection day.
    pub fn tau(&self) -> Option<i32> {
        self.infection.iter().copied().filter(|&i| i != NEVER).min()
    }

    /// `ν`, the individual infected on day `τ` (lowest index on ties).
    pub fn nu(&self) -> Option<usize> {
        let tau = self.tau()?;
        self.infection.iter().position(|&i| i == tau)
    }

    pub fn infected(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.is_infected(k)).collect()
    }

    pub fn final_size(&self) -> usize {
        self.infection.iter().filter(|&&i| i != NEVER).count()
    }

    /// Infected but not notified by the observation horizon.
    pub fn occults(&self, obs: &Observation) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.is_infected(k) && !obs.is_notified(k)).collect()
    }

    pub fn occult_count(&self, obs: &Observation) -> usize {
        (0..self.len()).filter(|&k| self.is_infected(k) && !obs.is_notified(k)).count()
    }

    /// Forget imputed notification days of occults.
    pub fn marginalize_occults(&mut self, obs: &Observation) {
        for k in 0..self.len() {
            if !obs.is_notified(k) {
                self.notification[k] = NEVER;
            }
        }
    }

    /// The augmentation implied by a complete history seen on day `obs.horizon()`.
    pub fn from_history(history: &EventHistory, obs: &Observation) -> Result<Self> {
        history.validate()?;
        let t = obs.horizon();
        let mut aug = Augmentation::empty(history.len());
        for k in 0..history.len() {
            if let Some(i) = history.infection[k] {
                if i <= t {
                    aug.infection[k] = i;
                    aug.notification[k] = history.notification[k].unwrap_or(NEVER);
                }
            }
        }
        check(obs, &aug, false)?;
        Ok(aug)
    }

    /// Event history through the horizon (removals from the observation).
    pub fn to_history(&self, obs: &Observation) -> EventHistory {
        EventHistory {
            infection: self.infection.iter().map(|&d| some(d)).collect(),
            notification: self.notification.iter().map(|&d| some(d)).collect(),
            removal: obs.removal.iter().map(|&d| some(d)).collect(),
        }
    }
}

/// Structural consistency of `(obs, aug)`. With `lenient`, notified cases
/// may lack an infection day (that is a zero-probability state, not an
/// inconsistency).
pub fn check(obs: &Observation, aug: &Augmentation, lenient: bool) -> Result<()> {
    let n = obs.len();
    if aug.infection.len() != n || aug.notification.len() != n {
        return Err(Error::Validation(format!(
            "augmentation covers {} individuals, observation {}",
            aug.infection.len(),
            n
        )));
    }
    let t = obs.horizon;
    for k in 0..n {
        let (i, an) = (aug.infection[k], aug.notification[k]);
        let on = obs.notification[k];
        if on != NEVER {
            if i == NEVER {
                if lenient {
                    continue;
                }
                return Err(Error::Validation(format!("notified individual {k} has no infection day")));
            }
            if an != on {
                return Err(Error::Validation(format!(
                    "individual {k}: augmented notification {an} differs from observed {on}"
                )));
            }
            if i >= on {
                return Err(Error::Validation(format!("individual {k}: infection day {i} not before notification {on}")));
            }
        } else if i != NEVER {
            if i > t {
                return Err(Error::Validation(format!("occult {k} infected on day {i} after horizon {t}")));
            }
            if an != NEVER && an <= t {
                return Err(Error::Validation(format!(
                    "occult {k} has imputed notification {an} within the horizon {t}"
                )));
            }
        } else if an != NEVER {
            return Err(Error::Validation(format!("susceptible {k} has a notification day")));
        }
    }
    Ok(())
}

/// Independent prior for one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    Uniform01,
    Exponential { mean: f64 },
    Gamma { shape: f64, rate: f64 },
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            PriorSpec::Uniform01 => true,
            PriorSpec::Exponential { mean } => mean.is_finite() && mean > 0.0,
            PriorSpec::Gamma { shape, rate } => shape.is_finite() && rate.is_finite() && shape > 0.0 && rate > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid prior {self:?}")))
        }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        if !x.is_finite() {
            return f64::NEG_INFINITY;
        }
        match *self {
            PriorSpec::Uniform01 => {
                if (0.0..=1.0).contains(&x) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            PriorSpec::Exponential { mean } => {
                if x < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    -mean.ln() - x / mean
                }
            }
            PriorSpec::Gamma { shape, rate } => {
                if x < 0.0 || (x == 0.0 && shape != 1.0) {
                    return if x == 0.0 && shape < 1.0 { f64::INFINITY } else { f64::NEG_INFINITY };
                }
                shape * rate.ln() - statrs::function::gamma::ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            PriorSpec::Uniform01 => 0.5,
            PriorSpec::Exponential { mean } => mean,
            PriorSpec::Gamma { shape, rate } => shape / rate,
        }
    }

    pub fn sd(&self) -> f64 {
        match *self {
            PriorSpec::Uniform01 => (1.0f64 / 12.0).sqrt(),
            PriorSpec::Exponential { mean } => mean,
            PriorSpec::Gamma { shape, rate } => shape.sqrt() / rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KappaModel {
    Fixed(f64),
    Inferred(PriorSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PeriodModel {
    /// Known infectious period law.
    Fixed(InfectiousPeriod),
    /// `Q = Po(a) + 1` with a conjugate `Gamma(shape, rate)` prior on `a`.
    PoissonGamma { shape: f64, rate: f64 },
}

/// Everything that stays fixed during inference: the population, kernel
/// family and the priors.
#[derive(Debug, Clone)]
pub struct Model {
    pub population: Arc<Population>,
    pub family: KernelFamily,
    pub kernel_priors: Vec<PriorSpec>,
    pub kappa: KappaModel,
    pub period: PeriodModel,
}

impl Model {
    pub fn new(
        population: Arc<Population>,
        family: KernelFamily,
        kernel_priors: Vec<PriorSpec>,
        kappa: KappaModel,
        period: PeriodModel,
    ) -> Result<Self> {
        if kernel_priors.len() != family.parameter_names().len() {
            return Err(Error::Config(format!(
                "{family:?} needs {} kernel priors, got {}",
                family.parameter_names().len(),
                kernel_priors.len()
            )));
        }
        for p in &kernel_priors {
            p.validate()?;
        }
        match &kappa {
            KappaModel::Fixed(k) if !(0.0..=1.0).contains(k) => {
                return Err(Error::Domain(format!("kappa must lie in [0, 1], got {k}")))
            }
            KappaModel::Inferred(p) => p.validate()?,
            _ => {}
        }
        if let PeriodModel::PoissonGamma { shape, rate } = period {
            PriorSpec::Gamma { shape, rate }.validate()?;
        }
        if family == KernelFamily::FmdCe
            && (population.covariate_names().iter().all(|c| c != "sheep")
                || population.covariate_names().iter().all(|c| c != "cattle"))
        {
            return Err(Error::Config("the FMD kernel needs `sheep` and `cattle` covariates".into()));
        }
        Ok(Model { population, family, kernel_priors, kappa, period })
    }

    pub fn infers_kappa(&self) -> bool {
        matches!(self.kappa, KappaModel::Inferred(_))
    }

    pub fn infers_period(&self) -> bool {
        matches!(self.period, PeriodModel::PoissonGamma { .. })
    }

    /// Names of the random-walk block `λ`.
    pub fn lambda_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.family.parameter_names().iter().map(|s| s.to_string()).collect();
        if self.infers_kappa() {
            v.push("kappa".into());
        }
        v
    }

    pub fn lambda_priors(&self) -> Vec<PriorSpec> {
        let mut v = self.kernel_priors.clone();
        if let KappaModel::Inferred(p) = self.kappa {
            v.push(p);
        }
        v
    }

    pub fn lambda(&self, p: &Params) -> Vec<f64> {
        let mut v = p.kernel.values();
        if self.infers_kappa() {
            v.push(p.kappa);
        }
        v
    }

    /// `p` with `λ` replaced; `None` if `v` leaves the parameter space.
    pub fn with_lambda(&self, p: &Params, v: &[f64]) -> Option<Params> {
        let nk = self.family.parameter_names().len();
        let kernel = KernelSpec::from_values(self.family, &v[..nk]).ok()?;
        if !kernel.is_valid() {
            return None;
        }
        let kappa = if self.infers_kappa() { v[nk] } else { p.kappa };
        if !(0.0..=1.0).contains(&kappa) {
            return None;
        }
        Some(Params { kernel, period: p.period.clone(), kappa })
    }

    /// All reported parameter names: `λ` then `a` when inferred.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut v = self.lambda_names();
        if self.infers_period() {
            v.push("a".into());
        }
        v
    }

    pub fn parameter_values(&self, p: &Params) -> Vec<f64> {
        let mut v = self.lambda(p);
        if self.infers_period() {
            v.push(p.period.poisson_mean().unwrap_or(f64::NAN));
        }
        v
    }

    pub fn log_prior(&self, p: &Params) -> f64 {
        let mut lp: f64 = self.lambda_priors().iter().zip(self.lambda(p)).map(|(pr, x)| pr.log_density(x)).sum();
        if let PeriodModel::PoissonGamma { shape, rate } = self.period {
            lp += match p.period.poisson_mean() {
                Some(a) => PriorSpec::Gamma { shape, rate }.log_density(a),
                None => f64::NEG_INFINITY,
            };
        }
        lp
    }

    /// Parameters rebuilt from reported values (inverse of
    /// [`Model::parameter_values`]); `base` supplies fixed components.
    pub fn params_from_values(&self, base: &Params, v: &[f64]) -> Result<Params> {
        let nl = self.lambda_names().len();
        if v.len() != self.parameter_names().len() {
            return Err(Error::Validation(format!(
                "expected {} parameter values, got {}",
                self.parameter_names().len(),
                v.len()
            )));
        }
        let mut p = self
            .with_lambda(base, &v[..nl])
            .ok_or_else(|| Error::Domain(format!("parameter values out of range: {v:?}")))?;
        if self.infers_period() {
            p.period = InfectiousPeriod::poisson_plus_one(v[nl])?;
        }
        Ok(p)
    }
}

/// Pairwise log-escape rows for one parameter value, filled lazily.
#[derive(Debug, Default)]
struct RowCache {
    /// Population the rows were computed for.
    pop: u64,
    key: Vec<f64>,
    n: usize,
    li: Vec<f64>,
    ln: Vec<f64>,
    have_i: Vec<bool>,
    have_n: Vec<bool>,
    stamp: u64,
}

impl RowCache {
    fn reset(&mut self, key: Vec<f64>, n: usize) {
        self.key = key;
        if self.n != n {
            self.n = n;
            self.li = vec![0.0; n * n];
            self.ln = vec![0.0; n * n];
            self.have_i = vec![false; n];
            self.have_n = vec![false; n];
        } else {
            self.have_i.iter_mut().for_each(|b| *b = false);
            self.have_n.iter_mut().for_each(|b| *b = false);
        }
    }

    fn ensure_i(&mut self, pop: &Population, kernel: &KernelSpec, k: usize) {
        if self.have_i[k] {
            return;
        }
        let row = &mut self.li[k * self.n..(k + 1) * self.n];
        for (l, v) in row.iter_mut().enumerate() {
            *v = if l == k { 0.0 } else { kernel.log_escape(pop, k, l) };
        }
        self.have_i[k] = true;
    }

    fn ensure_n(&mut self, pop: &Population, kernel: &KernelSpec, kappa: f64, k: usize) {
        if self.have_n[k] {
            return;
        }
        let row = &mut self.ln[k * self.n..(k + 1) * self.n];
        for (l, v) in row.iter_mut().enumerate() {
            *v = if l == k { 0.0 } else { (-kappa * kernel.prob_unchecked(pop, k, l)).ln_1p() };
        }
        self.have_n[k] = true;
    }
}

/// Reusable scratch space for likelihood evaluation. Keeps pairwise escape
/// rows for the two most recently used parameter values, so a rejected
/// random-walk proposal does not force the current rows to be rebuilt.
/// One workspace per thread; never shared.
#[derive(Debug, Default)]
pub struct Workspace {
    caches: [RowCache; 2],
    clock: u64,
    infected: Vec<usize>,
    escape_until: Vec<i32>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    fn select(&mut self, params: &Params, pop: &Population) -> usize {
        let n = pop.len();
        let mut key = params.kernel.values();
        key.push(params.kappa);
        let uid = pop.uid();
        self.clock += 1;
        let hit = (0..2).find(|&c| self.caches[c].pop == uid && self.caches[c].n == n && self.caches[c].key == key);
        let c = match hit {
            Some(c) => c,
            None => {
                let c = if self.caches[0].stamp <= self.caches[1].stamp { 0 } else { 1 };
                self.caches[c].reset(key, n);
                self.caches[c].pop = uid;
                c
            }
        };
        self.caches[c].stamp = self.clock;
        c
    }

    /// `ln π(x_{0:t}, y | θ)`; see the module docs for marginalised occults.
    pub fn log_likelihood(&mut self, model: &Model, params: &Params, obs: &Observation, aug: &Augmentation) -> Result<f64> {
        check(obs, aug, false)?;
        Ok(self.log_likelihood_unchecked(model, params, obs, aug))
    }

    /// [`Workspace::log_likelihood`] without the consistency check; callers
    /// guarantee `check(obs, aug, false)` holds.
    pub fn log_likelihood_unchecked(&mut self, model: &Model, params: &Params, obs: &Observation, aug: &Augmentation) -> f64 {
        let pop = &*model.population;
        let n = pop.len();
        let t = obs.horizon;
        let (inf, notif, rem) = (&aug.infection, &aug.notification, &obs.removal);

        self.infected.clear();
        self.infected.extend((0..n).filter(|&k| inf[k] != NEVER));
        if self.infected.is_empty() {
            return 0.0;
        }
        let tau = self.infected.iter().map(|&k| inf[k]).min().unwrap();
        let mut nu = usize::MAX;
        for &k in &self.infected {
            if inf[k] == tau {
                if nu != usize::MAX {
                    return f64::NEG_INFINITY;
                }
                nu = k;
            }
        }

        // Last day on which each individual escaped infection.
        self.escape_until.clear();
        self.escape_until.extend(inf.iter().map(|&i| if i == NEVER { t } else { i - 1 }));

        let c = self.select(params, pop);
        let kappa = params.kappa;
        let use_n = kappa > 0.0;
        let period = &params.period;
        let mut ll = 0.0;

        for &k in &self.infected {
            let cache = &mut self.caches[c];
            cache.ensure_i(pop, &params.kernel, k);
            let (ik, nk, rk) = (inf[k], notif[k], rem[k]);
            // N-window non-empty only for notified cases.
            let n_window = use_n && nk < t;
            if n_window {
                cache.ensure_n(pop, &params.kernel, kappa, k);
            }
            let cache = &self.caches[c];
            let row_i = &cache.li[k * n..(k + 1) * n];
            let row_n = &cache.ln[k * n..(k + 1) * n];
            let mut acc = 0.0;
            for l in 0..n {
                let e = self.escape_until[l];
                let ci = nk.min(e) - ik;
                if ci > 0 && l != k {
                    acc += ci as f64 * row_i[l];
                }
                if n_window {
                    let cn = rk.min(e) - nk;
                    if cn > 0 {
                        acc += cn as f64 * row_n[l];
                    }
                }
            }
            ll += acc;

            ll += if nk == NEVER {
                period.survival((t + 1 - ik) as i64).ln()
            } else {
                period.log_pmf((nk - ik) as i64)
            };
        }

        let cache = &self.caches[c];
        for &l in &self.infected {
            if l == nu {
                continue;
            }
            let il = inf[l];
            let mut log_escape = 0.0;
            let mut exposed = false;
            for &k in &self.infected {
                if k == l {
                    continue;
                }
                let (ik, nk, rk) = (inf[k], notif[k], rem[k]);
                if ik < il && il <= nk {
                    log_escape += cache.li[k * n + l];
                    exposed = true;
                } else if use_n && nk < il && il <= rk {
                    log_escape += cache.ln[k * n + l];
                    exposed = true;
                }
            }
            if !exposed || log_escape == 0.0 {
                return f64::NEG_INFINITY;
            }
            ll += (-log_escape.exp_m1()).ln();
        }
        ll
    }

    /// Log escape probability of every individual against the infectious and
    /// notified sets of `day` (notification days of occults are taken to be
    /// later than `day`). Entries for individuals already infected are
    /// meaningless and set to 0.
    pub fn pressure_logs(
        &mut self,
        model: &Model,
        params: &Params,
        obs: &Observation,
        aug: &Augmentation,
        day: i32,
        out: &mut Vec<f64>,
    ) {
        let pop = &*model.population;
        let n = pop.len();
        out.clear();
        out.resize(n, 0.0);
        let c = self.select(params, pop);
        let kappa = params.kappa;
        for k in 0..n {
            let ik = aug.infection[k];
            if ik == NEVER || ik >= day {
                continue;
            }
            let nk = obs.notification[k];
            let rk = obs.removal[k];
            let cache = &mut self.caches[c];
            let row = if day <= nk {
                cache.ensure_i(pop, &params.kernel, k);
                &cache.li[k * n..(k + 1) * n]
            } else if kappa > 0.0 && day <= rk {
                cache.ensure_n(pop, &params.kernel, kappa, k);
                &cache.ln[k * n..(k + 1) * n]
            } else {
                continue;
            };
            for (o, r) in out.iter_mut().zip(row) {
                *o += r;
            }
        }
        for k in 0..n {
            if aug.infection[k] != NEVER {
                out[k] = 0.0;
            }
        }
    }
}

/// `ln P_s(l; θ)`, the log probability that `l` escapes infection against
/// the infectious and notified sets of `state`.
pub fn avoidance_log(state: &DayState, l: usize, params: &Params, pop: &Population) -> Result<f64> {
    if !state.susceptible.contains(&l) {
        return Err(Error::Usage(format!("individual {l} is not susceptible on day {}", state.day)));
    }
    params.validate()?;
    let mut acc = 0.0;
    for &k in &state.infectious {
        acc += (-params.kernel.prob(pop, k, l)?).ln_1p();
    }
    if params.kappa > 0.0 {
        for &k in &state.notified {
            acc += (-params.kappa * params.kernel.prob(pop, k, l)?).ln_1p();
        }
    }
    Ok(acc)
}

/// `ln π(x_{0:t}, y_{τ:t} | θ)`.
pub fn log_likelihood(obs: &Observation, aug: &Augmentation, params: &Params, model: &Model) -> Result<f64> {
    params.validate()?;
    Workspace::new().log_likelihood(model, params, obs, aug)
}

/// `ln π(y, θ | x)` up to an additive constant.
pub fn log_posterior(obs: &Observation, aug: &Augmentation, params: &Params, model: &Model) -> Result<f64> {
    let lp = model.log_prior(params);
    if lp == f64::NEG_INFINITY || params.validate().is_err() {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(lp + log_likelihood(obs, aug, params, model)?)
}

/// Contribution of the transition from day `s` to day `s + 1`: infections
/// on day `s + 1` and escapes against the sets of day `s + 1`, plus the
/// notification hazard factors of everyone infectious on day `s + 1`.
///
/// Summed over `s = τ..t-1` this equals the likelihood with the
/// notification days of occults marginalised; adding
/// [`occult_future_log`] recovers [`log_likelihood`].
///
/// Evaluated literally from [`DayState`] sets, independently of the cached
/// pairwise route in [`Workspace`].
pub fn day_increment_log(obs: &Observation, aug: &Augmentation, params: &Params, model: &Model, s: i32) -> Result<f64> {
    check(obs, aug, true)?;
    params.validate()?;
    let t = obs.horizon;
    let tau = aug.tau().ok_or_else(|| Error::Usage("no infected individuals".into()))?;
    if s < tau || s >= t {
        return Err(Error::Usage(format!("day {s} outside [{tau}, {})", t)));
    }
    if s == tau && aug.infection.iter().filter(|&&i| i == tau).count() > 1 {
        return Ok(f64::NEG_INFINITY);
    }
    let pop = &*model.population;
    let d = s + 1;
    let state = DayState::from_times(&aug.infection, &obs.notification, &obs.removal, d);
    let mut total = 0.0;
    for &l in &state.susceptible {
        let il = aug.infection[l];
        if obs.notification[l] == d && il == NEVER {
            return Ok(f64::NEG_INFINITY);
        }
        let log_p = avoidance_log(&state, l, params, pop)?;
        total += if il == d { (-log_p.exp_m1()).ln() } else { log_p };
    }
    for &k in &state.infectious {
        let h = params.period.hazard_or_one((d - aug.infection[k]) as i64);
        total += if obs.notification[k] == d { h.ln() } else { (-h).ln_1p() };
    }
    Ok(total)
}

/// `Σ_occult [ln g_Q(n - i) - ln P(Q > t - i)]` over occults with an imputed
/// notification day.
pub fn occult_future_log(obs: &Observation, aug: &Augmentation, params: &Params) -> f64 {
    let t = obs.horizon;
    let mut acc = 0.0;
    for k in 0..aug.len() {
        let (i, n) = (aug.infection[k], aug.notification[k]);
        if i != NEVER && !obs.is_notified(k) && n != NEVER {
            acc += params.period.log_pmf((n - i) as i64) - params.period.survival((t + 1 - i) as i64).ln();
        }
    }
    acc
}

/// Day-`t` observation factor `ln π(x_t | θ, x_{0:t-1}, i_{τ:t-1})`: the
/// notification hazards of everyone infected before day `t` and not yet
/// notified. Infection days equal to `t` are ignored; a day-`t` notified
/// case without an earlier infection day gives `-∞`.
pub fn observation_log(obs: &Observation, aug: &Augmentation, params: &Params) -> f64 {
    let t = obs.horizon;
    let mut acc = 0.0;
    for k in 0..obs.len() {
        let i = aug.infection[k];
        let n = obs.notification[k];
        if n == t && (i == NEVER || i >= t) {
            return f64::NEG_INFINITY;
        }
        if i == NEVER || i >= t || n < t {
            continue;
        }
        let h = params.period.hazard_or_one((t - i) as i64);
        acc += if n == t { h.ln() } else { (-h).ln_1p() };
    }
    acc
}

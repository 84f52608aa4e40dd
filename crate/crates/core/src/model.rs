//! Domain types for the discrete-time S → I → N → R process.
//!
//! Timing convention (shared by every module, see [`state_at`]): an
//! individual infected on day `i` with notification day `n` and removal day
//! `r` is susceptible up to and including day `i`, infectious on days
//! `i+1..=n`, notified on days `n+1..=r` and removed from day `r+1`. So
//! `n - i` is its infectious period `Q`. Transmission pressure acting on an
//! individual whose infection day is `d` comes from the sets of day `d`.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel for "no event" (never infected, not yet notified, not removed).
pub const NEVER: i32 = i32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    pub covariates: Vec<f64>,
}

/// A closed population. Individuals are addressed internally by their
/// position (`0..len()`); external ids are kept for I/O.
#[derive(Debug, Clone)]
pub struct Population {
    individuals: Vec<Individual>,
    covariate_names: Vec<String>,
    index: HashMap<u64, usize>,
    herd: Option<(usize, usize)>,
    /// Distinguishes populations in likelihood caches.
    uid: u64,
}

static NEXT_POPULATION: AtomicU64 = AtomicU64::new(1);

impl Population {
    pub fn new(individuals: Vec<Individual>, covariate_names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(individuals.len());
        for (k, ind) in individuals.iter().enumerate() {
            if index.insert(ind.id, k).is_some() {
                return Err(Error::Validation(format!("duplicate individual id {}", ind.id)));
            }
            if !ind.x.is_finite() || !ind.y.is_finite() {
                return Err(Error::Validation(format!("individual {} has a non-finite location", ind.id)));
            }
            if ind.covariates.len() != covariate_names.len() {
                return Err(Error::Validation(format!(
                    "individual {} has {} covariates, expected {}",
                    ind.id,
                    ind.covariates.len(),
                    covariate_names.len()
                )));
            }
            if ind.covariates.iter().any(|c| !c.is_finite() || *c < 0.0) {
                return Err(Error::Validation(format!(
                    "individual {} has a negative or non-finite covariate",
                    ind.id
                )));
            }
        }
        let find = |name: &str| covariate_names.iter().position(|c| c == name);
        let herd = find("sheep").zip(find("cattle"));
        let uid = NEXT_POPULATION.fetch_add(1, Ordering::Relaxed);
        Ok(Population { individuals, covariate_names, index, herd, uid })
    }

    /// `n` individuals placed uniformly on `[0, side]²`, ids `1..=n`.
    pub fn uniform_square<R: Rng + ?Sized>(n: usize, side: f64, rng: &mut R) -> Self {
        let individuals = (0..n)
            .map(|k| Individual {
                id: k as u64 + 1,
                x: rng.random::<f64>() * side,
                y: rng.random::<f64>() * side,
                covariates: Vec::new(),
            })
            .collect();
        Population::new(individuals, Vec::new()).expect("generated population is valid")
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    pub fn individuals(&self) -> &[Individual] {
        &self.individuals
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn id(&self, k: usize) -> u64 {
        self.individuals[k].id
    }

    pub fn covariate(&self, k: usize, name: &str) -> Option<f64> {
        let c = self.covariate_names.iter().position(|c| c == name)?;
        Some(self.individuals[k].covariates[c])
    }

    /// Euclidean distance in the population's native units.
    #[inline]
    pub fn distance(&self, k: usize, l: usize) -> f64 {
        let a = &self.individuals[k];
        let b = &self.individuals[l];
        (a.x - b.x).hypot(a.y - b.y)
    }

    #[inline]
    fn herd(&self, k: usize) -> (f64, f64) {
        match self.herd {
            Some((s, c)) => {
                let cov = &self.individuals[k].covariates;
                (cov[s], cov[c])
            }
            None => (0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Homogeneous,
    SpatialExp,
    FmdCe,
}

impl KernelFamily {
    pub fn parameter_names(self) -> &'static [&'static str] {
        match self {
            KernelFamily::Homogeneous => &["contact"],
            KernelFamily::SpatialExp => &["contact", "gamma"],
            KernelFamily::FmdCe => &["beta0", "beta1", "beta2", "chi1", "chi2", "gamma"],
        }
    }
}

/// Transmission kernel with its parameter values.
///
/// `contact` is the daily contact probability at distance zero, i.e. `1 - p`
/// where `p` is the avoidance probability of the homogeneous model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    Homogeneous { contact: f64 },
    SpatialExp { contact: f64, gamma: f64 },
    FmdCe { beta0: f64, beta1: f64, beta2: f64, chi1: f64, chi2: f64, gamma: f64 },
}

impl KernelSpec {
    pub fn family(&self) -> KernelFamily {
        match self {
            KernelSpec::Homogeneous { .. } => KernelFamily::Homogeneous,
            KernelSpec::SpatialExp { .. } => KernelFamily::SpatialExp,
            KernelSpec::FmdCe { .. } => KernelFamily::FmdCe,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match *self {
            KernelSpec::Homogeneous { contact } => vec![contact],
            KernelSpec::SpatialExp { contact, gamma } => vec![contact, gamma],
            KernelSpec::FmdCe { beta0, beta1, beta2, chi1, chi2, gamma } => {
                vec![beta0, beta1, beta2, chi1, chi2, gamma]
            }
        }
    }

    pub fn from_values(family: KernelFamily, v: &[f64]) -> Result<Self> {
        let want = family.parameter_names().len();
        if v.len() != want {
            return Err(Error::Usage(format!("{family:?} takes {want} parameters, got {}", v.len())));
        }
        Ok(match family {
            KernelFamily::Homogeneous => KernelSpec::Homogeneous { contact: v[0] },
            KernelFamily::SpatialExp => KernelSpec::SpatialExp { contact: v[0], gamma: v[1] },
            KernelFamily::FmdCe => KernelSpec::FmdCe {
                beta0: v[0],
                beta1: v[1],
                beta2: v[2],
                chi1: v[3],
                chi2: v[4],
                gamma: v[5],
            },
        })
    }

    pub fn is_valid(&self) -> bool {
        let finite = self.values().iter().all(|v| v.is_finite());
        finite
            && match *self {
                KernelSpec::Homogeneous { contact } => (0.0..=1.0).contains(&contact),
                KernelSpec::SpatialExp { contact, gamma } => (0.0..=1.0).contains(&contact) && gamma >= 0.0,
                KernelSpec::FmdCe { .. } => self.values().iter().all(|v| *v >= 0.0),
            }
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::Domain(format!("kernel parameters out of range: {self:?}")))
        }
    }

    /// Daily probability that `k` makes infectious contact with `l`.
    pub fn prob(&self, pop: &Population, k: usize, l: usize) -> Result<f64> {
        if k == l {
            return Err(Error::Usage(format!("kernel_prob called with k = l = {k}")));
        }
        if k >= pop.len() || l >= pop.len() {
            return Err(Error::Usage(format!("individual index out of range ({k}, {l})")));
        }
        self.validate()?;
        if matches!(self, KernelSpec::FmdCe { .. }) && pop.herd.is_none() {
            return Err(Error::Usage("the FMD kernel needs `sheep` and `cattle` covariates".into()));
        }
        Ok(self.prob_unchecked(pop, k, l))
    }

    #[inline]
    pub(crate) fn prob_unchecked(&self, pop: &Population, k: usize, l: usize) -> f64 {
        match *self {
            KernelSpec::Homogeneous { contact } => contact,
            KernelSpec::SpatialExp { contact, gamma } => contact * (-gamma * pop.distance(k, l)).exp(),
            KernelSpec::FmdCe { .. } => -(-self.fmd_rate(pop, k, l)).exp_m1(),
        }
    }

    /// `ln(1 - p_kl)` without forming `1 - p_kl`.
    #[inline]
    pub(crate) fn log_escape(&self, pop: &Population, k: usize, l: usize) -> f64 {
        match *self {
            KernelSpec::FmdCe { .. } => -self.fmd_rate(pop, k, l),
            _ => (-self.prob_unchecked(pop, k, l)).ln_1p(),
        }
    }

    #[inline]
    fn fmd_rate(&self, pop: &Population, k: usize, l: usize) -> f64 {
        let KernelSpec::FmdCe { beta0, beta1, beta2, chi1, chi2, gamma } = *self else {
            unreachable!()
        };
        let (sk, ck) = pop.herd(k);
        let (sl, cl) = pop.herd(l);
        let infectivity = size_power(sk + beta1 * ck, chi1);
        let susceptibility = size_power(sl + beta2 * cl, chi2);
        beta0 * infectivity * susceptibility * (-gamma * pop.distance(k, l)).exp()
    }
}

/// `base^chi` with `0^chi = 0` for every `chi`, including `chi = 0`.
#[inline]
fn size_power(base: f64, chi: f64) -> f64 {
    if base <= 0.0 {
        0.0
    } else {
        base.powf(chi)
    }
}

/// Law of the infectious period `Q` on `{1, 2, ...}`.
#[derive(Debug, Clone, PartialEq)]
pub enum PeriodKind {
    /// `Q = 1 + Poisson(a)`.
    PoissonPlusOne { a: f64 },
    /// `P(Q = q) = pmf[q - 1]`.
    Categorical { pmf: Vec<f64> },
}

/// Cumulative mass at which Poisson tables stop.
const TAIL_CUTOFF: f64 = 1e-14;

#[derive(Debug)]
struct PeriodTable {
    /// `pmf[q]`, `q = 0..=q_max`; `pmf[0] = 0`.
    pmf: Vec<f64>,
    log_pmf: Vec<f64>,
    /// `tail[q] = P(Q >= q)` for `q = 0..=q_max`.
    tail: Vec<f64>,
}

/// An infectious-period distribution with precomputed pmf, tail and
/// hazard tables. Cheap to clone.
#[derive(Debug, Clone)]
pub struct InfectiousPeriod {
    kind: PeriodKind,
    table: Arc<PeriodTable>,
}

impl PartialEq for InfectiousPeriod {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

fn poisson_log_pmf(a: f64, q: i64) -> f64 {
    if q < 1 {
        return f64::NEG_INFINITY;
    }
    let k = (q - 1) as f64;
    if a == 0.0 {
        return if q == 1 { 0.0 } else { f64::NEG_INFINITY };
    }
    -a + k * a.ln() - statrs::function::gamma::ln_gamma(k + 1.0)
}

impl InfectiousPeriod {
    pub fn poisson_plus_one(a: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::Domain(format!("Poisson mean must be positive, got {a}")));
        }
        // Table stops once the cumulative mass reaches 1 - 1e-14; tails inside
        // the table are summed from far beyond it so hazards stay accurate.
        let mut pmf = vec![0.0];
        let mut cum = 0.0;
        let mut q = 1i64;
        loop {
            let p = poisson_log_pmf(a, q).exp();
            pmf.push(p);
            cum += p;
            // Past the mode the mass beyond q is at most p·a/(q+1-a), which
            // ends the table even when rounding keeps `cum` short of the cutoff.
            let past_mode = (q as f64) > a;
            if past_mode && (cum >= 1.0 - TAIL_CUTOFF || p * a / (q as f64 + 1.0 - a) < TAIL_CUTOFF) {
                break;
            }
            q += 1;
        }
        let q_max = pmf.len() - 1;
        let mut beyond = 0.0;
        let mut j = q_max as i64 + 1;
        loop {
            let p = poisson_log_pmf(a, j).exp();
            beyond += p;
            if p <= beyond * 1e-18 || p == 0.0 {
                break;
            }
            j += 1;
        }
        Ok(Self::from_table(PeriodKind::PoissonPlusOne { a }, pmf, beyond))
    }

    pub fn categorical(pmf: Vec<f64>) -> Result<Self> {
        if pmf.is_empty() || pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Domain("categorical pmf must be non-empty and non-negative".into()));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("categorical pmf sums to {total}, expected 1")));
        }
        let mut table = vec![0.0];
        table.extend(pmf.iter().map(|p| p / total));
        let kind = PeriodKind::Categorical { pmf: table[1..].to_vec() };
        Ok(Self::from_table(kind, table, 0.0))
    }

    fn from_table(kind: PeriodKind, pmf: Vec<f64>, beyond: f64) -> Self {
        let n = pmf.len();
        let mut tail = vec![0.0; n];
        let mut acc = beyond;
        for q in (0..n).rev() {
            acc += pmf[q];
            tail[q] = acc;
        }
        let log_pmf = match &kind {
            PeriodKind::PoissonPlusOne { a } => (0..n as i64).map(|q| poisson_log_pmf(*a, q)).collect(),
            PeriodKind::Categorical { .. } => pmf.iter().map(|p| p.ln()).collect(),
        };
        InfectiousPeriod { kind, table: Arc::new(PeriodTable { pmf, log_pmf, tail }) }
    }

    pub fn kind(&self) -> &PeriodKind {
        &self.kind
    }

    /// Poisson mean `a`, when the law is `Po(a) + 1`.
    pub fn poisson_mean(&self) -> Option<f64> {
        match self.kind {
            PeriodKind::PoissonPlusOne { a } => Some(a),
            PeriodKind::Categorical { .. } => None,
        }
    }

    /// Largest tabulated period. For Poisson laws this is the truncation
    /// point; for categorical laws it is the end of the support.
    pub fn q_max(&self) -> i64 {
        self.table.pmf.len() as i64 - 1
    }

    pub fn mean(&self) -> f64 {
        match &self.kind {
            PeriodKind::PoissonPlusOne { a } => a + 1.0,
            PeriodKind::Categorical { pmf } => pmf.iter().enumerate().map(|(j, p)| (j + 1) as f64 * p).sum(),
        }
    }

    /// `g_Q(q)`.
    pub fn pmf(&self, q: i64) -> f64 {
        match self.kind {
            PeriodKind::PoissonPlusOne { a } => poisson_log_pmf(a, q).exp(),
            PeriodKind::Categorical { .. } => self.table_pmf(q),
        }
    }

    #[inline]
    fn table_pmf(&self, q: i64) -> f64 {
        if q < 1 || q > self.q_max() {
            0.0
        } else {
            self.table.pmf[q as usize]
        }
    }

    /// `ln g_Q(q)`.
    #[inline]
    pub fn log_pmf(&self, q: i64) -> f64 {
        if q >= 0 && q <= self.q_max() {
            return self.table.log_pmf[q as usize];
        }
        match self.kind {
            PeriodKind::PoissonPlusOne { a } => poisson_log_pmf(a, q),
            PeriodKind::Categorical { .. } => f64::NEG_INFINITY,
        }
    }

    /// `P(Q >= q)`; zero beyond the table.
    #[inline]
    pub fn survival(&self, q: i64) -> f64 {
        if q <= 1 {
            1.0
        } else if q > self.q_max() {
            0.0
        } else {
            self.table.tail[q as usize]
        }
    }

    /// `h_Q(q) = g_Q(q) / P(Q >= q)`.
    pub fn hazard(&self, q: i64) -> Result<f64> {
        if q < 1 {
            return Err(Error::Domain(format!("hazard undefined at q = {q} (support starts at 1)")));
        }
        if matches!(self.kind, PeriodKind::Categorical { .. }) && self.survival(q) == 0.0 {
            return Err(Error::Domain(format!("hazard undefined at q = {q}: P(Q >= q) = 0")));
        }
        Ok(self.hazard_or_one(q))
    }

    /// Hazard with the truncation convention: 1 beyond the table.
    #[inline]
    pub(crate) fn hazard_or_one(&self, q: i64) -> f64 {
        if q < 1 || q > self.q_max() {
            return 1.0;
        }
        let tail = self.table.tail[q as usize];
        if tail <= 0.0 {
            1.0
        } else {
            (self.table.pmf[q as usize] / tail).min(1.0)
        }
    }

    /// Draw `Q`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        self.sample_at_least(1, rng).expect("the full support has positive mass")
    }

    /// Draw `Q` conditioned on `Q >= q_min`; `None` when that event has zero
    /// tabulated mass.
    pub fn sample_at_least<R: Rng + ?Sized>(&self, q_min: i64, rng: &mut R) -> Option<i64> {
        let q_min = q_min.max(1);
        if q_min > self.q_max() {
            return None;
        }
        let t = &self.table;
        let mass: f64 = t.pmf[q_min as usize..].iter().sum();
        if mass <= 0.0 {
            return None;
        }
        let mut u = rng.random::<f64>() * mass;
        for q in q_min as usize..t.pmf.len() {
            u -= t.pmf[q];
            if u < 0.0 {
                return Some(q as i64);
            }
        }
        // Rounding left a sliver of mass; return the last supported value.
        (q_min as usize..t.pmf.len()).rev().find(|&q| t.pmf[q] > 0.0).map(|q| q as i64)
    }
}

/// Model parameters `θ = (λ, ζ)`: transmission kernel and relative
/// infectiousness of notified individuals form `λ`, the infectious period
/// law is `ζ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub kernel: KernelSpec,
    pub period: InfectiousPeriod,
    pub kappa: f64,
}

impl Params {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(Error::Domain(format!("kappa must lie in [0, 1], got {}", self.kappa)));
        }
        Ok(())
    }
}

/// Complete (or partially known) event times per individual.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EventHistory {
    pub infection: Vec<Option<i32>>,
    pub notification: Vec<Option<i32>>,
    pub removal: Vec<Option<i32>>,
}

impl EventHistory {
    pub fn empty(n: usize) -> Self {
        EventHistory { infection: vec![None; n], notification: vec![None; n], removal: vec![None; n] }
    }

    pub fn len(&self) -> usize {
        self.infection.len()
    }

    pub fn is_empty(&self) -> bool {
        self.infection.is_empty()
    }

    pub fn final_size(&self) -> usize {
        self.infection.iter().filter(|i| i.is_some()).count()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.notification.len() != n || self.removal.len() != n {
            return Err(Error::Validation("history columns differ in length".into()));
        }
        for k in 0..n {
            match (self.infection[k], self.notification[k], self.removal[k]) {
                (None, None, None) => {}
                (Some(_), None, None) => {}
                (Some(i), Some(nt), r) => {
                    if i >= nt {
                        return Err(Error::Validation(format!(
                            "individual {k}: infection day {i} not before notification day {nt}"
                        )));
                    }
                    if let Some(r) = r {
                        if r < nt {
                            return Err(Error::Validation(format!(
                                "individual {k}: removal day {r} precedes notification day {nt}"
                            )));
                        }
                    }
                }
                _ => {
                    return Err(Error::Validation(format!(
                        "individual {k}: notification or removal without infection"
                    )))
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Compartment {
    Susceptible,
    Infectious,
    Notified,
    Removed,
}

/// Compartment of one individual on day `s`. Missing notification or
/// removal days are treated as lying beyond `s`.
#[inline]
pub fn compartment(infection: i32, notification: i32, removal: i32, s: i32) -> Compartment {
    if infection == NEVER || s <= infection {
        Compartment::Susceptible
    } else if s <= notification {
        Compartment::Infectious
    } else if s <= removal {
        Compartment::Notified
    } else {
        Compartment::Removed
    }
}

/// The partition `(S_s, I_s, N_s, R_s)` of the population on day `s`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DayState {
    pub day: i32,
    pub susceptible: Vec<usize>,
    pub infectious: Vec<usize>,
    pub notified: Vec<usize>,
    pub removed: Vec<usize>,
}

impl DayState {
    pub fn from_times(inf: &[i32], notif: &[i32], rem: &[i32], s: i32) -> Self {
        let mut st = DayState {
            day: s,
            susceptible: Vec::new(),
            infectious: Vec::new(),
            notified: Vec::new(),
            removed: Vec::new(),
        };
        for k in 0..inf.len() {
            match compartment(inf[k], notif[k], rem[k], s) {
                Compartment::Susceptible => st.susceptible.push(k),
                Compartment::Infectious => st.infectious.push(k),
                Compartment::Notified => st.notified.push(k),
                Compartment::Removed => st.removed.push(k),
            }
        }
        st
    }

    pub fn population_size(&self) -> usize {
        self.susceptible.len() + self.infectious.len() + self.notified.len() + self.removed.len()
    }
}

/// Day-`s` partition of a history.
pub fn state_at(history: &EventHistory, s: i32) -> Result<DayState> {
    history.validate()?;
    let inf: Vec<i32> = history.infection.iter().map(|v| v.unwrap_or(NEVER)).collect();
    let notif: Vec<i32> = history.notification.iter().map(|v| v.unwrap_or(NEVER)).collect();
    let rem: Vec<i32> = history.removal.iter().map(|v| v.unwrap_or(NEVER)).collect();
    Ok(DayState::from_times(&inf, &notif, &rem, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn line(points: &[(f64, f64)]) -> Population {
        let individuals = points
            .iter()
            .enumerate()
            .map(|(k, &(x, y))| Individual { id: k as u64 + 1, x, y, covariates: vec![] })
            .collect();
        Population::new(individuals, vec![]).unwrap()
    }

    #[test]
    fn spatial_kernel_at_zero_distance_is_the_contact_probability() {
        let pop = line(&[(0.3, 0.3), (0.3, 0.3)]);
        let k = KernelSpec::SpatialExp { contact: 0.025, gamma: 15.0 };
        assert_relative_eq!(k.prob(&pop, 0, 1).unwrap(), 0.025);
    }

    #[test]
    fn spatial_kernel_vanishes_far_away_and_is_monotone() {
        let pop = line(&[(0.0, 0.0), (0.1, 0.0), (1.0, 0.0), (1e6, 0.0)]);
        let k = KernelSpec::SpatialExp { contact: 0.5, gamma: 2.0 };
        let p: Vec<f64> = (1..4).map(|l| k.prob(&pop, 0, l).unwrap()).collect();
        assert!(p[0] > p[1] && p[1] > p[2]);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn kernel_rejects_self_pairs_and_bad_parameters() {
        let pop = line(&[(0.0, 0.0), (1.0, 0.0)]);
        let k = KernelSpec::Homogeneous { contact: 0.2 };
        assert!(matches!(k.prob(&pop, 1, 1), Err(Error::Usage(_))));
        let bad = KernelSpec::SpatialExp { contact: 1.2, gamma: 1.0 };
        assert!(matches!(bad.prob(&pop, 0, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn fmd_kernel_with_empty_farm_is_zero() {
        let individuals = vec![
            Individual { id: 1, x: 0.0, y: 0.0, covariates: vec![0.0, 0.0] },
            Individual { id: 2, x: 10.0, y: 0.0, covariates: vec![200.0, 50.0] },
        ];
        let pop = Population::new(individuals, vec!["sheep".into(), "cattle".into()]).unwrap();
        let k = KernelSpec::FmdCe { beta0: 1e-3, beta1: 2.0, beta2: 3.0, chi1: 0.0, chi2: 0.7, gamma: 0.01 };
        assert_eq!(k.prob(&pop, 0, 1).unwrap(), 0.0);
        // 0^0 = 1 for a non-empty farm
        let p = k.prob(&pop, 1, 0).unwrap();
        assert_eq!(p, 0.0, "the susceptible farm is empty as well");
        let rate = 1e-3 * 1.0 * (200.0f64 + 3.0 * 50.0).powf(0.7) * (-0.1f64).exp();
        let individuals = vec![
            Individual { id: 1, x: 0.0, y: 0.0, covariates: vec![10.0, 0.0] },
            Individual { id: 2, x: 10.0, y: 0.0, covariates: vec![200.0, 50.0] },
        ];
        let pop = Population::new(individuals, vec!["sheep".into(), "cattle".into()]).unwrap();
        assert_relative_eq!(k.prob(&pop, 0, 1).unwrap(), 1.0 - (-rate).exp(), max_relative = 1e-12);
    }

    #[test]
    fn poisson_period_pmf_values() {
        let q = InfectiousPeriod::poisson_plus_one(3.0).unwrap();
        assert_relative_eq!(q.pmf(1), (-3.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(q.pmf(1), 0.049_787_068_367_863_94, max_relative = 1e-12);
        assert_eq!(q.pmf(0), 0.0);
        assert_eq!(q.pmf(-2), 0.0);
        assert_relative_eq!(q.hazard(1).unwrap(), (-3.0f64).exp(), max_relative = 1e-12);
        assert!(q.hazard(0).is_err());
    }

    #[test]
    fn poisson_pmf_normalises() {
        for a in [3.0, 4.0, 5.0, 7.0] {
            let q = InfectiousPeriod::poisson_plus_one(a).unwrap();
            let total: f64 = (1..=200).map(|j| q.pmf(j)).sum();
            assert!((total - 1.0).abs() <= 1e-12, "a = {a}: {total}");
        }
    }

    #[test]
    fn large_means_build_finite_tables() {
        // Rounding once kept the running sum just short of the cutoff here.
        for a in [17.93, 40.0, 250.0] {
            let q = InfectiousPeriod::poisson_plus_one(a).unwrap();
            let total: f64 = (1..=q.q_max()).map(|j| q.pmf(j)).sum();
            assert!((total - 1.0).abs() <= 1e-12, "a = {a}: {total}");
            assert!(q.q_max() < (a + 20.0 * a.sqrt() + 50.0) as i64);
        }
    }

    #[test]
    fn hazard_matches_direct_tail_summation() {
        let q = InfectiousPeriod::poisson_plus_one(4.0).unwrap();
        let direct = |j: i64| q.pmf(j) / (j..400).map(|m| q.pmf(m)).sum::<f64>();
        assert!((q.hazard(6).unwrap() - direct(6)).abs() < 1e-12);
        for j in 1..q.q_max() {
            assert!((q.hazard(j).unwrap() - direct(j)).abs() < 1e-12, "q = {j}");
        }
        assert_eq!(q.hazard(q.q_max() + 5).unwrap(), 1.0);
    }

    #[test]
    fn categorical_period_support() {
        let q = InfectiousPeriod::categorical(vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(q.q_max(), 3);
        assert_relative_eq!(q.hazard(2).unwrap(), 0.5 / 0.8);
        assert_relative_eq!(q.hazard(3).unwrap(), 1.0);
        assert!(q.hazard(4).is_err());
        assert!(InfectiousPeriod::categorical(vec![0.2, 0.2]).is_err());
    }

    #[test]
    fn truncated_sampling_respects_the_bound() {
        let q = InfectiousPeriod::poisson_plus_one(2.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            assert!(q.sample_at_least(4, &mut rng).unwrap() >= 4);
            assert!(q.sample(&mut rng) >= 1);
        }
        assert!(q.sample_at_least(q.q_max() + 1, &mut rng).is_none());
    }

    #[test]
    fn state_at_follows_the_timing_convention() {
        let h = EventHistory { infection: vec![Some(0)], notification: vec![Some(3)], removal: vec![Some(5)] };
        let got: Vec<Compartment> = (0..8)
            .map(|s| {
                let st = state_at(&h, s).unwrap();
                if !st.susceptible.is_empty() {
                    Compartment::Susceptible
                } else if !st.infectious.is_empty() {
                    Compartment::Infectious
                } else if !st.notified.is_empty() {
                    Compartment::Notified
                } else {
                    Compartment::Removed
                }
            })
            .collect();
        use Compartment::*;
        assert_eq!(got, vec![Susceptible, Infectious, Infectious, Infectious, Notified, Notified, Removed, Removed]);
    }

    #[test]
    fn empty_history_is_all_susceptible() {
        let h = EventHistory::empty(5);
        let st = state_at(&h, 17).unwrap();
        assert_eq!(st.susceptible, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn inconsistent_history_is_rejected() {
        let h = EventHistory { infection: vec![Some(3)], notification: vec![Some(3)], removal: vec![None] };
        assert!(matches!(state_at(&h, 0), Err(Error::Validation(_))));
    }
}

//! Exhaustive oracles for tiny instances: forward enumeration of the
//! process and exact enumeration of the augmented posterior.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::likelihood::{Augmentation, Model, Observation, Workspace};
use crate::model::{InfectiousPeriod, KernelSpec, Params, PeriodKind, Population, NEVER};

/// Largest state space either oracle will walk.
pub const MAX_CONFIGURATIONS: u64 = 10_000_000;

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

struct Forward<'a> {
    pop: &'a Population,
    kernel: KernelSpec,
    pmf: Vec<(i32, f64)>,
    kappa: f64,
    delay: i32,
    horizon: i32,
}

impl Forward<'_> {
    fn record(&self, inf: &[i32], notif: &[i32], prob: f64, out: &mut HashMap<Observation, f64>) {
        let first = notif.iter().copied().filter(|&n| n != NEVER).min().expect("ν is always infected");
        let t = self.horizon;
        let notification = notif
            .iter()
            .map(|&n| (n != NEVER && n - first <= t).then(|| n - first))
            .collect();
        let removal = notif
            .iter()
            .zip(inf)
            .map(|(&n, &i)| (i != NEVER && n + self.delay - first <= t).then(|| n + self.delay - first))
            .collect();
        let obs = Observation::new(t, notification, removal).expect("forward histories are consistent");
        *out.entry(obs).or_insert(0.0) += prob;
    }

    /// Enumerate infections on day `d` and everything after it.
    fn walk(&self, d: i32, inf: &mut Vec<i32>, notif: &mut Vec<i32>, prob: f64, out: &mut HashMap<Observation, f64>) {
        let n = inf.len();
        let first = notif.iter().copied().filter(|&x| x != NEVER).min().unwrap();
        let active = (0..n).any(|k| inf[k] != NEVER && notif[k] + self.delay >= d);
        if !active || d > first + self.horizon - 1 {
            self.record(inf, notif, prob, out);
            return;
        }
        let mut p_inf = vec![0.0; n];
        let susceptible: Vec<usize> = (0..n).filter(|&l| inf[l] == NEVER).collect();
        for &l in &susceptible {
            let mut log_escape = 0.0;
            for k in 0..n {
                if inf[k] == NEVER || inf[k] >= d {
                    continue;
                }
                let p = self.kernel.prob_unchecked(self.pop, k, l);
                if d <= notif[k] {
                    log_escape += (-p).ln_1p();
                } else if d <= notif[k] + self.delay {
                    log_escape += (-self.kappa * p).ln_1p();
                }
            }
            p_inf[l] = -log_escape.exp_m1();
        }
        for mask in 0u32..(1 << susceptible.len()) {
            let mut p = prob;
            let mut newly = Vec::new();
            for (b, &l) in susceptible.iter().enumerate() {
                if mask >> b & 1 == 1 {
                    p *= p_inf[l];
                    newly.push(l);
                } else {
                    p *= 1.0 - p_inf[l];
                }
            }
            if p == 0.0 {
                continue;
            }
            self.assign_periods(d, &newly, 0, inf, notif, p, out);
        }
    }

    fn assign_periods(
        &self,
        d: i32,
        newly: &[usize],
        j: usize,
        inf: &mut Vec<i32>,
        notif: &mut Vec<i32>,
        prob: f64,
        out: &mut HashMap<Observation, f64>,
    ) {
        if j == newly.len() {
            self.walk(d + 1, inf, notif, prob, out);
            return;
        }
        let l = newly[j];
        for &(q, g) in &self.pmf {
            inf[l] = d;
            notif[l] = d + q;
            self.assign_periods(d, newly, j + 1, inf, notif, prob * g, out);
        }
        inf[l] = NEVER;
        notif[l] = NEVER;
    }
}

fn finite_pmf(period: &InfectiousPeriod) -> Result<Vec<(i32, f64)>> {
    match period.kind() {
        PeriodKind::Categorical { pmf } => {
            Ok(pmf.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(j, &p)| (j as i32 + 1, p)).collect())
        }
        PeriodKind::PoissonPlusOne { .. } => {
            Err(Error::Usage("forward enumeration needs an infectious period with finite support".into()))
        }
    }
}

/// Probability of every observation `x_{0:t}` (calendar anchored at the
/// first notification) under the forward process with a uniformly chosen
/// initial infective. Removals follow notification after `removal_delay`
/// days.
pub fn forward_observation_probabilities(
    pop: &Population,
    params: &Params,
    removal_delay: u32,
    horizon: i32,
) -> Result<HashMap<Observation, f64>> {
    params.validate()?;
    let pmf = finite_pmf(&params.period)?;
    let n = pop.len();
    if n == 0 || n > 6 {
        return Err(Error::TooLarge(n as u64));
    }
    let fwd = Forward { pop, kernel: params.kernel, pmf, kappa: params.kappa, delay: removal_delay as i32, horizon };
    let mut out = HashMap::new();
    for nu in 0..n {
        for &(q, g) in &fwd.pmf {
            let mut inf = vec![NEVER; n];
            let mut notif = vec![NEVER; n];
            inf[nu] = 0;
            notif[nu] = q;
            fwd.walk(1, &mut inf, &mut notif, g / n as f64, &mut out);
        }
    }
    Ok(out)
}

/// Exhaustively enumerated posterior over augmentations for fixed `θ`.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    options: Vec<Vec<(i32, i32)>>,
    /// `(configuration index, probability)` for configurations with positive mass.
    entries: Vec<(u64, f64)>,
    log_evidence: f64,
}

impl ExactPosterior {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `ln Σ_y π(x, y | θ)`.
    pub fn log_evidence(&self) -> f64 {
        self.log_evidence
    }

    fn decode(options: &[Vec<(i32, i32)>], mut idx: u64) -> Augmentation {
        let n = options.len();
        let mut aug = Augmentation::empty(n);
        for k in 0..n {
            let r = options[k].len() as u64;
            let (i, nn) = options[k][(idx % r) as usize];
            idx /= r;
            aug.infection[k] = i;
            aug.notification[k] = nn;
        }
        aug
    }

    pub fn iter(&self) -> impl Iterator<Item = (Augmentation, f64)> + '_ {
        self.entries.iter().map(|&(idx, p)| (Self::decode(&self.options, idx), p))
    }

    /// Push the posterior through `f`.
    pub fn marginal<K: Ord, F: Fn(&Augmentation) -> K>(&self, f: F) -> BTreeMap<K, f64> {
        let mut m = BTreeMap::new();
        for (aug, p) in self.iter() {
            *m.entry(f(&aug)).or_insert(0.0) += p;
        }
        m
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }
}

/// Candidate `(i, n)` values per individual. Infection days of notified
/// cases lie within `q_max` of notification; occults are infected within
/// `q_max - 1` days of the horizon. With `marginal`, occult notification
/// days are left unimputed.
fn candidate_options(params: &Params, obs: &Observation, marginal: bool) -> Vec<Vec<(i32, i32)>> {
    let t = obs.horizon();
    let q_max = params.period.q_max() as i32;
    (0..obs.len())
        .map(|k| match obs.notification(k) {
            Some(n) => (n - q_max..n).map(|i| (i, n)).collect(),
            None => {
                let mut v = vec![(NEVER, NEVER)];
                for i in (t + 1 - q_max)..=t {
                    if marginal {
                        v.push((i, NEVER));
                    } else {
                        for n in (t + 1)..=(i + q_max) {
                            v.push((i, n));
                        }
                    }
                }
                v
            }
        })
        .collect()
}

fn configurations(options: &[Vec<(i32, i32)>]) -> Option<u64> {
    options.iter().try_fold(1u64, |acc, o| acc.checked_mul(o.len() as u64))
}

/// Enumerate every augmentation consistent with `obs` and normalise
/// `π(x, y | θ)` over them. With `marginal`, occult notification days are
/// integrated out analytically instead of enumerated.
pub fn enumerate_exact(model: &Model, params: &Params, obs: &Observation, marginal: bool) -> Result<ExactPosterior> {
    params.validate()?;
    let options = candidate_options(params, obs, marginal);
    let total = configurations(&options).unwrap_or(u64::MAX);
    if total > MAX_CONFIGURATIONS {
        return Err(Error::TooLarge(total));
    }
    const CHUNK: u64 = 4096;
    let chunks = total.div_ceil(CHUNK);
    let found: Vec<(u64, f64)> = (0..chunks)
        .into_par_iter()
        .map_init(Workspace::new, |ws, c| {
            let mut local = Vec::new();
            for idx in c * CHUNK..((c + 1) * CHUNK).min(total) {
                let aug = ExactPosterior::decode(&options, idx);
                let ll = ws.log_likelihood_unchecked(model, params, obs, &aug);
                if ll > f64::NEG_INFINITY && aug.final_size() > 0 {
                    local.push((idx, ll));
                }
            }
            local
        })
        .flatten()
        .collect();
    let log_evidence = log_sum_exp(found.iter().map(|e| e.1));
    if log_evidence == f64::NEG_INFINITY {
        return Err(Error::Validation("observation has zero probability under these parameters".into()));
    }
    let entries = found.into_iter().map(|(idx, ll)| (idx, (ll - log_evidence).exp())).collect();
    Ok(ExactPosterior { options, entries, log_evidence })
}

/// Posterior mass of each grid point, proportional to prior × evidence.
pub fn grid_posterior(model: &Model, grid: &[Params], obs: &Observation, marginal: bool) -> Result<Vec<f64>> {
    let mut logs = Vec::with_capacity(grid.len());
    for p in grid {
        let lp = model.log_prior(p);
        logs.push(if lp == f64::NEG_INFINITY {
            lp
        } else {
            match enumerate_exact(model, p, obs, marginal) {
                Ok(e) => lp + e.log_evidence(),
                Err(Error::Validation(_)) => f64::NEG_INFINITY,
                Err(e) => return Err(e),
            }
        });
    }
    let z = log_sum_exp(logs.iter().copied());
    Ok(logs.iter().map(|l| (l - z).exp()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::{KappaModel, PeriodModel, PriorSpec};
    use crate::model::{Individual, KernelFamily};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn setup(n: usize, contact: f64, pmf: Vec<f64>) -> (Model, Params) {
        let individuals = (0..n).map(|k| Individual { id: k as u64 + 1, x: 0.0, y: 0.0, covariates: vec![] }).collect();
        let pop = Arc::new(Population::new(individuals, vec![]).unwrap());
        let q = InfectiousPeriod::categorical(pmf).unwrap();
        let model =
            Model::new(pop, KernelFamily::Homogeneous, vec![PriorSpec::Uniform01], KappaModel::Fixed(0.0), PeriodModel::Fixed(q.clone()))
                .unwrap();
        (model, Params { kernel: KernelSpec::Homogeneous { contact }, period: q, kappa: 0.0 })
    }

    #[test]
    fn single_individual_posterior_is_the_period_law() {
        let (model, params) = setup(1, 0.3, vec![0.2, 0.5, 0.3]);
        let obs = Observation::new(0, vec![Some(0)], vec![Some(0)]).unwrap();
        let post = enumerate_exact(&model, &params, &obs, false).unwrap();
        let m = post.marginal(|a| a.infection[0]);
        assert_relative_eq!(m[&-1], 0.2, max_relative = 1e-12);
        assert_relative_eq!(m[&-2], 0.5, max_relative = 1e-12);
        assert_relative_eq!(m[&-3], 0.3, max_relative = 1e-12);
        assert_relative_eq!(post.total(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn two_individuals_match_hand_posterior() {
        // Individual 0 notified day 0, 1 notified day 1, Q ∈ {1, 2}.
        let (c, g1, g2) = (0.4, 0.6, 0.4);
        let (model, params) = setup(2, c, vec![g1, g2]);
        let obs = Observation::new(1, vec![Some(0), Some(1)], vec![Some(0), Some(1)]).unwrap();
        let post = enumerate_exact(&model, &params, &obs, false).unwrap();
        // (-1, -1) puts two individuals on day τ and has zero probability.
        let w_a = g1 * c * g1; // i0=-1, i1=0: 1 infected day 0 by 0
        let w_b = g2 * c * g2; // i0=-2, i1=-1
        let w_c = g2 * (1.0 - c) * c * g1; // escapes day -1, infected day 0
        let z = w_a + w_b + w_c;
        let m = post.marginal(|a| (a.infection[0], a.infection[1]));
        assert_eq!(m.len(), 3);
        assert_relative_eq!(m[&(-1, 0)], w_a / z, max_relative = 1e-12);
        assert_relative_eq!(m[&(-2, -1)], w_b / z, max_relative = 1e-12);
        assert_relative_eq!(m[&(-2, 0)], w_c / z, max_relative = 1e-12);
    }

    #[test]
    fn forward_probabilities_sum_to_one() {
        let (model, params) = setup(3, 0.35, vec![0.3, 0.4, 0.3]);
        for t in 0..4 {
            let fwd = forward_observation_probabilities(&model.population, &params, 0, t).unwrap();
            let total: f64 = fwd.values().sum();
            assert!((total - 1.0).abs() < 1e-12, "t = {t}: {total}");
        }
    }

    #[test]
    fn evidence_matches_forward_enumeration() {
        let (model, params) = setup(3, 0.35, vec![0.3, 0.4, 0.3]);
        let fwd = forward_observation_probabilities(&model.population, &params, 0, 2).unwrap();
        for (obs, p) in fwd {
            let post = enumerate_exact(&model, &params, &obs, false).unwrap();
            assert!((post.log_evidence().exp() - 3.0 * p).abs() < 1e-10);
        }
    }

    #[test]
    fn marginalised_and_imputed_enumerations_agree_on_infection_days() {
        let (model, params) = setup(3, 0.35, vec![0.3, 0.4, 0.3]);
        let obs = Observation::new(2, vec![Some(0), None, None], vec![Some(0), None, None]).unwrap();
        let full = enumerate_exact(&model, &params, &obs, false).unwrap();
        let marg = enumerate_exact(&model, &params, &obs, true).unwrap();
        assert_relative_eq!(full.log_evidence(), marg.log_evidence(), max_relative = 1e-12);
        let a = full.marginal(|a| a.infection.clone());
        let b = marg.marginal(|a| a.infection.clone());
        for (k, v) in &a {
            assert!((v - b[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn refuses_large_state_spaces() {
        let (model, _) = setup(12, 0.3, vec![0.2, 0.5, 0.3]);
        let params = Params {
            kernel: KernelSpec::Homogeneous { contact: 0.3 },
            period: InfectiousPeriod::poisson_plus_one(4.0).unwrap(),
            kappa: 0.0,
        };
        let obs = Observation::new(6, vec![Some(0); 12], vec![Some(0); 12]).unwrap();
        assert!(matches!(enumerate_exact(&model, &params, &obs, false), Err(Error::TooLarge(_))));
    }
}

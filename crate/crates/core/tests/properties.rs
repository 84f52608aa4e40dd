//! Invariants checked over random inputs.

use std::sync::Arc;

use epi_smc::diagnostics::{effective_sample_size, normalize_log_weights};
use epi_smc::likelihood::{Augmentation, KappaModel, Model, Observation, PeriodModel, PriorSpec, Workspace};
use epi_smc::model::{
    state_at, EventHistory, Individual, InfectiousPeriod, KernelFamily, KernelSpec, Params, Population, NEVER,
};
use proptest::prelude::*;

fn population(coords: &[(f64, f64)]) -> Arc<Population> {
    let individuals = coords
        .iter()
        .enumerate()
        .map(|(k, &(x, y))| Individual { id: k as u64 + 1, x, y, covariates: vec![] })
        .collect();
    Arc::new(Population::new(individuals, vec![]).unwrap())
}

fn spatial(pop: Arc<Population>) -> Model {
    Model::new(
        pop,
        KernelFamily::SpatialExp,
        vec![PriorSpec::Uniform01, PriorSpec::Uniform01],
        KappaModel::Fixed(0.3),
        PeriodModel::Fixed(InfectiousPeriod::poisson_plus_one(2.0).unwrap()),
    )
    .unwrap()
}

/// Random SIR-type augmentation: `None` for never infected, otherwise
/// `(infection day, period)`.
fn arb_cases(n: usize) -> impl Strategy<Value = Vec<Option<(i32, i32)>>> {
    prop::collection::vec(prop::option::of((0i32..5, 1i32..4)), n)
}

fn build(cases: &[Option<(i32, i32)>], horizon: i32) -> Option<(Observation, Augmentation)> {
    let n = cases.len();
    let mut aug = Augmentation::empty(n);
    let mut notes = vec![None; n];
    for (k, c) in cases.iter().enumerate() {
        if let Some((i, q)) = *c {
            aug.infection[k] = i;
            aug.notification[k] = i + q;
            if i + q <= horizon {
                notes[k] = Some(i + q);
            }
        }
    }
    let obs = Observation::new(horizon, notes.clone(), notes).ok()?;
    aug.marginalize_occults(&obs);
    Some((obs, aug))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spatial_kernel_is_a_probability(contact in 0.0f64..=1.0, gamma in 0.0f64..50.0,
                                       x in -3.0f64..3.0, y in -3.0f64..3.0) {
        let pop = population(&[(0.0, 0.0), (x, y)]);
        let p = KernelSpec::SpatialExp { contact, gamma }.prob(&pop, 0, 1).unwrap();
        prop_assert!((0.0..=contact + 1e-15).contains(&p));
    }

    #[test]
    fn period_pmf_normalises_and_hazard_is_conditional(a in 0.2f64..60.0, q in 1i64..60) {
        let law = InfectiousPeriod::poisson_plus_one(a).unwrap();
        let total: f64 = (1..=law.q_max()).map(|k| law.pmf(k)).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let s = law.survival(q);
        if s > 1e-300 {
            let h = law.hazard(q).unwrap();
            prop_assert!((h - law.pmf(q) / s).abs() <= 1e-9 * h.max(1e-300));
            prop_assert!((0.0..=1.0 + 1e-12).contains(&h));
        }
    }

    #[test]
    fn ess_lies_between_one_and_n(w in prop::collection::vec(-30.0f64..5.0, 1..60)) {
        let ess = effective_sample_size(&w);
        prop_assert!(ess >= 1.0 - 1e-9 && ess <= w.len() as f64 + 1e-9);
        let s: f64 = normalize_log_weights(&w).iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn likelihood_is_invariant_under_relabelling(
        cases in arb_cases(5),
        coords in prop::collection::vec((0.0f64..2.0, 0.0f64..2.0), 5),
        perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let Some((obs, aug)) = build(&cases, 6) else { return Ok(()) };
        let params = Params {
            kernel: KernelSpec::SpatialExp { contact: 0.4, gamma: 1.5 },
            period: InfectiousPeriod::poisson_plus_one(2.0).unwrap(),
            kappa: 0.3,
        };
        let mut ws = Workspace::new();
        let base = ws.log_likelihood_unchecked(&spatial(population(&coords)), &params, &obs, &aug);

        let pc: Vec<(f64, f64)> = perm.iter().map(|&k| coords[k]).collect();
        let pcases: Vec<_> = perm.iter().map(|&k| cases[k]).collect();
        let (pobs, paug) = build(&pcases, 6).unwrap();
        // The same workspace serves both populations.
        let permuted = ws.log_likelihood_unchecked(&spatial(population(&pc)), &params, &pobs, &paug);
        if base == f64::NEG_INFINITY {
            prop_assert_eq!(permuted, f64::NEG_INFINITY);
        } else {
            prop_assert!((base - permuted).abs() < 1e-9 * base.abs().max(1.0), "{} vs {}", base, permuted);
        }
    }

    #[test]
    fn every_day_partitions_the_population(cases in arb_cases(6), s in 0i32..10) {
        let mut h = EventHistory::empty(cases.len());
        for (k, c) in cases.iter().enumerate() {
            if let Some((i, q)) = *c {
                h.infection[k] = Some(i);
                h.notification[k] = Some(i + q);
                h.removal[k] = Some(i + q);
            }
        }
        let st = state_at(&h, s).unwrap();
        prop_assert_eq!(st.population_size(), cases.len());
    }

    #[test]
    fn marginalising_occults_keeps_infection_days(cases in arb_cases(5), horizon in 0i32..7) {
        let Some((obs, aug)) = build(&cases, horizon) else { return Ok(()) };
        for k in 0..aug.len() {
            match cases[k] {
                Some((i, _)) => prop_assert_eq!(aug.infection[k], i),
                None => prop_assert_eq!(aug.infection[k], NEVER),
            }
            if !obs.is_notified(k) {
                prop_assert_eq!(aug.notification[k], NEVER);
            }
        }
    }
}

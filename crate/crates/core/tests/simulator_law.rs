//! Forward simulation against closed-form transmission probabilities.

use std::sync::Arc;

use epi_smc::model::{Individual, InfectiousPeriod, KernelSpec, Population};
use epi_smc::simulate::Simulator;

fn pair(x: f64) -> Arc<Population> {
    let individuals = [(0.0, 0.0), (x, 0.0)]
        .into_iter()
        .enumerate()
        .map(|(k, (x, y))| Individual { id: k as u64 + 1, x, y, covariates: vec![] })
        .collect();
    Arc::new(Population::new(individuals, vec![]).unwrap())
}

/// Fraction of replicates in which both individuals get infected.
fn both_infected(kernel: KernelSpec, period: &InfectiousPeriod, kappa: f64, delay: u32, reps: u64) -> f64 {
    let pop = pair(0.5);
    let hits = (0..reps)
        .filter(|&r| {
            let mut sim = Simulator::new(pop.clone(), kernel, period.clone(), kappa, delay, 77, r);
            sim.run_to_end();
            sim.history().final_size() == 2
        })
        .count();
    hits as f64 / reps as f64
}

fn check(p_hat: f64, p: f64, reps: u64) {
    let se = (p * (1.0 - p) / reps as f64).sqrt();
    assert!((p_hat - p).abs() < 4.0 * se, "{p_hat} vs {p} (se {se})");
}

#[test]
fn second_infection_probability_with_infectious_period_only() {
    // Exposure lasts Q days: P = 1 - E[(1 - c)^Q].
    let period = InfectiousPeriod::categorical(vec![0.3, 0.4, 0.3]).unwrap();
    let c: f64 = 0.3;
    let p = 1.0 - (1..=3).map(|q| period.pmf(q) * (1.0 - c).powi(q as i32)).sum::<f64>();
    let reps = 20_000;
    check(both_infected(KernelSpec::Homogeneous { contact: c }, &period, 0.0, 0, reps), p, reps);
}

#[test]
fn notified_days_add_reduced_exposure() {
    // Q infectious days at full rate, then `d` notified days at rate κc.
    let period = InfectiousPeriod::categorical(vec![0.5, 0.5]).unwrap();
    let (c, kappa, d): (f64, f64, i32) = (0.2, 0.5, 2);
    let p = 1.0
        - (1..=2).map(|q| period.pmf(q) * (1.0 - c).powi(q as i32) * (1.0 - kappa * c).powi(d)).sum::<f64>();
    let reps = 20_000;
    check(both_infected(KernelSpec::Homogeneous { contact: c }, &period, kappa, d as u32, reps), p, reps);
}

//! Forward simulation and the daily observation extractor.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::likelihood::Observation;
use crate::model::{EventHistory, InfectiousPeriod, KernelSpec, Population, NEVER};
use crate::rng::{self, purpose};

#[derive(Debug, Clone)]
pub enum Layout {
    /// `n` individuals uniform on `[0, side]²`.
    UniformSquare { n: usize, side: f64 },
    Given(Arc<Population>),
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub kernel: KernelSpec,
    pub period: InfectiousPeriod,
    pub kappa: f64,
    /// Days from notification to removal; 0 gives an SIR epidemic.
    pub removal_delay: u32,
    pub layout: Layout,
    pub seed: u64,
    /// Outbreaks smaller than this are discarded and re-simulated.
    pub min_final_size: usize,
    pub max_attempts: usize,
}

impl SimConfig {
    /// Small-population analogue of the SIR study: same kernel and density
    /// as 500 individuals on the unit square.
    pub fn desk_sir(seed: u64) -> Self {
        SimConfig {
            kernel: KernelSpec::SpatialExp { contact: 0.025, gamma: 15.0 },
            period: InfectiousPeriod::poisson_plus_one(3.0).expect("valid"),
            kappa: 0.0,
            removal_delay: 0,
            layout: Layout::UniformSquare { n: 100, side: (100.0f64 / 500.0).sqrt() },
            seed,
            min_final_size: 10,
            max_attempts: 10_000,
        }
    }

    /// Small-population analogue of the SINR study (density of 300
    /// individuals on the unit square).
    pub fn desk_sinr(seed: u64) -> Self {
        SimConfig {
            kernel: KernelSpec::SpatialExp { contact: 0.015, gamma: 10.0 },
            period: InfectiousPeriod::poisson_plus_one(4.0).expect("valid"),
            kappa: 0.2,
            removal_delay: 4,
            layout: Layout::UniformSquare { n: 100, side: (100.0f64 / 300.0).sqrt() },
            seed,
            min_final_size: 10,
            max_attempts: 10_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(Error::Domain(format!("kappa must lie in [0, 1], got {}", self.kappa)));
        }
        match &self.layout {
            Layout::UniformSquare { n, side } if *n == 0 || !(side.is_finite() && *side > 0.0) => {
                Err(Error::Config("population must be non-empty with a positive side".into()))
            }
            Layout::Given(p) if p.is_empty() => Err(Error::Config("population is empty".into())),
            _ => Ok(()),
        }
    }

    pub fn population(&self) -> Arc<Population> {
        match &self.layout {
            Layout::UniformSquare { n, side } => {
                let mut rng = rng::stream(self.seed, 0, purpose::LAYOUT, 0);
                Arc::new(Population::uniform_square(*n, *side, &mut rng))
            }
            Layout::Given(p) => p.clone(),
        }
    }
}

/// Day-by-day forward simulator in relative time (`ν` infected on day 0).
///
/// Each day draws from its own random stream, so a clone taken mid-run
/// continues exactly as the original would.
#[derive(Debug, Clone)]
pub struct Simulator {
    pop: Arc<Population>,
    kernel: KernelSpec,
    period: InfectiousPeriod,
    kappa: f64,
    removal_delay: i32,
    seed: u64,
    replicate: u64,
    day: i32,
    infection: Vec<i32>,
    notification: Vec<i32>,
    removal: Vec<i32>,
    log_escape: Vec<f64>,
}

impl Simulator {
    pub fn new(
        pop: Arc<Population>,
        kernel: KernelSpec,
        period: InfectiousPeriod,
        kappa: f64,
        removal_delay: u32,
        seed: u64,
        replicate: u64,
    ) -> Self {
        let n = pop.len();
        let mut sim = Simulator {
            pop,
            kernel,
            period,
            kappa,
            removal_delay: removal_delay as i32,
            seed,
            replicate,
            day: 0,
            infection: vec![NEVER; n],
            notification: vec![NEVER; n],
            removal: vec![NEVER; n],
            log_escape: vec![0.0; n],
        };
        let mut rng = sim.day_rng(0);
        let nu = rng.random_range(0..n);
        sim.infect(nu, 0, &mut rng);
        sim
    }

    fn day_rng(&self, day: i32) -> rng::StreamRng {
        rng::stream(self.seed, day as i64, purpose::SIMULATE, self.replicate)
    }

    fn infect<R: Rng + ?Sized>(&mut self, k: usize, day: i32, rng: &mut R) {
        let q = self.period.sample(rng) as i32;
        self.infection[k] = day;
        self.notification[k] = day + q;
        self.removal[k] = day + q + self.removal_delay;
    }

    /// Last simulated day.
    pub fn day(&self) -> i32 {
        self.day
    }

    /// True while someone is infectious or notified on a future day.
    pub fn is_active(&self) -> bool {
        self.removal.iter().any(|&r| r != NEVER && r > self.day)
    }

    /// Simulate infections on the next day.
    pub fn step(&mut self) {
        let d = self.day + 1;
        let n = self.pop.len();
        self.log_escape.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..n {
            let ik = self.infection[k];
            if ik == NEVER || ik >= d {
                continue;
            }
            let infectious = d <= self.notification[k];
            let notified = !infectious && d <= self.removal[k];
            if !(infectious || (notified && self.kappa > 0.0)) {
                continue;
            }
            for l in 0..n {
                if self.infection[l] != NEVER {
                    continue;
                }
                self.log_escape[l] += if infectious {
                    self.kernel.log_escape(&self.pop, k, l)
                } else {
                    (-self.kappa * self.kernel.prob_unchecked(&self.pop, k, l)).ln_1p()
                };
            }
        }
        let mut rng = self.day_rng(d);
        for l in 0..n {
            if self.infection[l] != NEVER {
                continue;
            }
            let p = -self.log_escape[l].exp_m1();
            if rng.random::<f64>() < p {
                self.infect(l, d, &mut rng);
            }
        }
        self.day = d;
    }

    pub fn run_to_end(&mut self) {
        while self.is_active() {
            self.step();
        }
    }

    /// History in relative time.
    pub fn history(&self) -> EventHistory {
        let opt = |v: &Vec<i32>| v.iter().map(|&d| (d != NEVER).then_some(d)).collect();
        EventHistory { infection: opt(&self.infection), notification: opt(&self.notification), removal: opt(&self.removal) }
    }
}

/// Shift a history so that its first notification falls on day 0.
pub fn anchor_to_first_notification(history: &EventHistory) -> EventHistory {
    let Some(first) = history.notification.iter().flatten().copied().min() else {
        return history.clone();
    };
    let shift = |v: &Vec<Option<i32>>| v.iter().map(|d| d.map(|d| d - first)).collect();
    EventHistory {
        infection: shift(&history.infection),
        notification: shift(&history.notification),
        removal: shift(&history.removal),
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub population: Arc<Population>,
    /// Complete history with the first notification on day 0.
    pub history: EventHistory,
    /// Outbreaks discarded for being smaller than `min_final_size`.
    pub rejected: usize,
}

/// Simulate one outbreak of at least `min_final_size` cases.
pub fn simulate(config: &SimConfig) -> Result<SimOutput> {
    config.validate()?;
    let population = config.population();
    let min = config.min_final_size.min(population.len());
    for attempt in 0..config.max_attempts.max(1) {
        let mut sim = Simulator::new(
            population.clone(),
            config.kernel,
            config.period.clone(),
            config.kappa,
            config.removal_delay,
            config.seed,
            attempt as u64,
        );
        sim.run_to_end();
        let history = sim.history();
        if history.final_size() >= min {
            if attempt > 0 {
                log::info!("discarded {attempt} outbreaks smaller than {min}");
            }
            return Ok(SimOutput { population, history: anchor_to_first_notification(&history), rejected: attempt });
        }
    }
    Err(Error::Usage(format!(
        "no outbreak of size {min} or more in {} attempts",
        config.max_attempts
    )))
}

/// What has been observed by day `t`: notification and removal days up to
/// `t`, nothing about infections.
pub fn observe(history: &EventHistory, t: i32) -> Result<Observation> {
    history.validate()?;
    let cut = |v: &Vec<Option<i32>>| v.iter().map(|d| d.filter(|&d| d <= t)).collect();
    Observation::new(t, cut(&history.notification), cut(&history.removal))
}

/// Everything the history will ever reveal.
pub fn observe_all(history: &EventHistory) -> Result<Observation> {
    let last = history.notification.iter().chain(history.removal.iter()).flatten().copied().max().unwrap_or(0);
    observe(history, last)
}

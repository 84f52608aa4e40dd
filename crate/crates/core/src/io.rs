//! Configuration, CSV data files, per-day outputs, checkpoints and the
//! day-by-day orchestration of a run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{batch_means_se, estimate_functional, mean_sd, quantile, Comparison, FunctionalEstimate};
use crate::error::{Error, Result};
use crate::likelihood::{Augmentation, KappaModel, Model, Observation, PeriodModel, PriorSpec};
use crate::mcmc::{default_initial_params, run_mcmc, Counter, McmcConfig, MoveStats, TraceRow};
use crate::model::{EventHistory, InfectiousPeriod, Individual, KernelFamily, KernelSpec, Params, Population, NEVER};
use crate::simulate::{Layout, SimConfig};
use crate::smc::{self, Particle, SmcConfig, SmcState, StepDiagnostics, Strategy, WeightMode};

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kernel: KernelFamily,
    /// Kernel priors by parameter name; missing entries take defaults.
    pub priors: BTreeMap<String, PriorSpec>,
    /// Fixed notified-state infectivity discount.
    pub kappa: Option<f64>,
    /// Prior when `kappa` is inferred.
    pub kappa_prior: Option<PriorSpec>,
    /// Known mean of `Q - 1` for `Q = Po(a) + 1`.
    pub fixed_a: Option<f64>,
    /// Conjugate prior on `a` when it is inferred.
    pub a_prior: Option<PriorSpec>,
    /// Known categorical law of `Q`: `P(Q = 1), P(Q = 2), ...`.
    pub period_pmf: Option<Vec<f64>>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kernel: KernelFamily::SpatialExp,
            priors: BTreeMap::new(),
            kappa: None,
            kappa_prior: None,
            fixed_a: None,
            a_prior: None,
            period_pmf: None,
        }
    }
}

fn default_prior(family: KernelFamily, name: &str) -> PriorSpec {
    match (family, name) {
        (KernelFamily::SpatialExp, "gamma") => PriorSpec::Gamma { shape: 1.69, rate: 0.13 },
        (KernelFamily::FmdCe, "beta0") => PriorSpec::Exponential { mean: 1e-4 },
        (KernelFamily::FmdCe, "beta1" | "beta2") => PriorSpec::Exponential { mean: 1.0 },
        (KernelFamily::FmdCe, "chi1" | "chi2") => PriorSpec::Exponential { mean: 0.5 },
        (KernelFamily::FmdCe, "gamma") => PriorSpec::Exponential { mean: 1e-3 },
        _ => PriorSpec::Uniform01,
    }
}

impl ModelSection {
    pub fn build(&self, population: Arc<Population>) -> Result<Model> {
        let names = self.kernel.parameter_names();
        for key in self.priors.keys() {
            if !names.contains(&key.as_str()) {
                return Err(Error::Config(format!("no kernel parameter `{key}` in {:?}", self.kernel)));
            }
        }
        let priors = names
            .iter()
            .map(|n| self.priors.get(*n).copied().unwrap_or_else(|| default_prior(self.kernel, n)))
            .collect();
        let kappa = match (self.kappa, self.kappa_prior) {
            (Some(_), Some(_)) => return Err(Error::Config("give either `kappa` or `kappa_prior`, not both".into())),
            (Some(k), None) => KappaModel::Fixed(k),
            (None, Some(p)) => KappaModel::Inferred(p),
            (None, None) => KappaModel::Fixed(0.0),
        };
        let period = match (self.fixed_a, self.a_prior, &self.period_pmf) {
            (None, None, None) => PeriodModel::Fixed(InfectiousPeriod::poisson_plus_one(3.0)?),
            (Some(a), None, None) => PeriodModel::Fixed(InfectiousPeriod::poisson_plus_one(a)?),
            (None, Some(PriorSpec::Gamma { shape, rate }), None) => PeriodModel::PoissonGamma { shape, rate },
            (None, Some(_), None) => return Err(Error::Config("`a_prior` must be a gamma prior".into())),
            (None, None, Some(pmf)) => PeriodModel::Fixed(InfectiousPeriod::categorical(pmf.clone())?),
            _ => return Err(Error::Config("give one of `fixed_a`, `a_prior` or `period_pmf`".into())),
        };
        Model::new(population, self.kernel, priors, kappa, period)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSection {
    #[serde(alias = "B")]
    pub burn_in: usize,
    #[serde(alias = "N")]
    pub samples: usize,
    #[serde(alias = "M")]
    pub thin: usize,
    pub e_u: usize,
    pub initial_occults: usize,
    pub per_individual: bool,
    pub trace: bool,
    /// Days analysed by the `mcmc` command; empty means every fifth day.
    pub days: Vec<i32>,
}

impl Default for McmcSection {
    fn default() -> Self {
        let d = McmcConfig::default();
        McmcSection {
            burn_in: d.burn_in,
            samples: d.samples,
            thin: d.thin,
            e_u: d.e_u,
            initial_occults: d.initial_occults,
            per_individual: d.per_individual,
            trace: false,
            days: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmcSection {
    #[serde(alias = "N")]
    pub particles: usize,
    pub n_p: usize,
    pub strategy: Strategy,
    pub weight: WeightMode,
    pub workers: usize,
    #[serde(alias = "T")]
    pub from_day: i32,
    /// Last analysed day; the last event day when absent.
    pub to_day: Option<i32>,
    pub dump_particles: bool,
}

impl Default for SmcSection {
    fn default() -> Self {
        let d = SmcConfig::default();
        SmcSection {
            particles: d.particles,
            n_p: d.n_p,
            strategy: d.strategy,
            weight: d.weight_mode,
            workers: d.workers,
            from_day: 3,
            to_day: None,
            dump_particles: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    DeskSir,
    DeskSinr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub preset: Preset,
    pub n: Option<usize>,
    pub side: Option<f64>,
    /// Kernel values in the order of the kernel family's parameters.
    pub kernel: Option<KernelFamily>,
    pub values: Option<Vec<f64>>,
    pub a: Option<f64>,
    pub kappa: Option<f64>,
    pub removal_delay: Option<u32>,
    pub min_final_size: Option<usize>,
    pub max_attempts: Option<usize>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            preset: Preset::DeskSir,
            n: None,
            side: None,
            kernel: None,
            values: None,
            a: None,
            kappa: None,
            removal_delay: None,
            min_final_size: None,
            max_attempts: None,
        }
    }
}

impl SimulateSection {
    pub fn build(&self, seed: u64, population: Option<Arc<Population>>) -> Result<SimConfig> {
        let mut c = match self.preset {
            Preset::DeskSir => SimConfig::desk_sir(seed),
            Preset::DeskSinr => SimConfig::desk_sinr(seed),
        };
        if let Layout::UniformSquare { n, side } = &mut c.layout {
            *n = self.n.unwrap_or(*n);
            *side = self.side.unwrap_or(*side);
        }
        if let Some(p) = population {
            c.layout = Layout::Given(p);
        }
        match (self.kernel, &self.values) {
            (Some(f), Some(v)) => c.kernel = KernelSpec::from_values(f, v)?,
            (None, Some(v)) => c.kernel = KernelSpec::from_values(c.kernel.family(), v)?,
            (Some(_), None) => return Err(Error::Config("simulate.kernel needs simulate.values".into())),
            (None, None) => {}
        }
        if let Some(a) = self.a {
            c.period = InfectiousPeriod::poisson_plus_one(a)?;
        }
        c.kappa = self.kappa.unwrap_or(c.kappa);
        c.removal_delay = self.removal_delay.unwrap_or(c.removal_delay);
        c.min_final_size = self.min_final_size.unwrap_or(c.min_final_size);
        c.max_attempts = self.max_attempts.unwrap_or(c.max_attempts);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub population: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsSection,
    pub model: ModelSection,
    pub mcmc: McmcSection,
    pub smc: SmcSection,
    pub simulate: SimulateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            paths: PathsSection::default(),
            model: ModelSection::default(),
            mcmc: McmcSection::default(),
            smc: SmcSection::default(),
            simulate: SimulateSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.smc.particles < 2 {
            return Err(Error::Config("smc.particles must be at least 2".into()));
        }
        if self.smc.workers == 0 {
            return Err(Error::Config("smc.workers must be at least 1".into()));
        }
        if let Some(end) = self.smc.to_day {
            if end < self.smc.from_day {
                return Err(Error::Config(format!("smc.to_day {end} precedes smc.from_day {}", self.smc.from_day)));
            }
        }
        if self.mcmc.samples == 0 || self.mcmc.thin == 0 {
            return Err(Error::Config("mcmc.samples and mcmc.thin must be positive".into()));
        }
        Ok(())
    }

    pub fn mcmc_config(&self, samples: usize) -> McmcConfig {
        McmcConfig {
            burn_in: self.mcmc.burn_in,
            samples,
            thin: self.mcmc.thin,
            e_u: self.mcmc.e_u,
            seed: self.seed,
            initial_occults: self.mcmc.initial_occults,
            per_individual: self.mcmc.per_individual,
            record_trace: self.mcmc.trace,
        }
    }

    pub fn smc_config(&self) -> SmcConfig {
        SmcConfig {
            particles: self.smc.particles,
            n_p: self.smc.n_p,
            strategy: self.smc.strategy,
            weight_mode: self.smc.weight,
            workers: self.smc.workers,
            seed: self.seed,
            e_u: self.mcmc.e_u,
            per_individual: self.mcmc.per_individual,
            adjustment_weight: true,
        }
    }
}

// ---------------------------------------------------------------- CSV data

fn load_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Load { path: path.to_path_buf(), line, msg: msg.into() }
}

fn record_line(r: &csv::StringRecord) -> u64 {
    r.position().map_or(0, |p| p.line())
}

fn parse_field<T: std::str::FromStr>(path: &Path, r: &csv::StringRecord, col: usize, what: &str) -> Result<T> {
    let raw = r.get(col).unwrap_or("").trim();
    raw.parse().map_err(|_| load_err(path, record_line(r), format!("bad {what} `{raw}`")))
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?)
}

/// Population CSV: `id,x,y,<covariates...>`.
pub fn read_population(path: &Path) -> Result<Population> {
    let mut rdr = reader(path)?;
    let header = rdr.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 3 || cols[0] != "id" || cols[1] != "x" || cols[2] != "y" {
        return Err(load_err(path, 1, "header must start with `id,x,y`"));
    }
    let covariate_names: Vec<String> = cols[3..].iter().map(|s| s.to_string()).collect();
    let mut individuals = Vec::new();
    let mut seen = BTreeMap::new();
    for rec in rdr.records() {
        let r = rec?;
        let line = record_line(&r);
        let id: u64 = parse_field(path, &r, 0, "id")?;
        if let Some(first) = seen.insert(id, line) {
            return Err(load_err(path, line, format!("duplicate id {id} (first on line {first})")));
        }
        let covariates = (3..cols.len()).map(|c| parse_field(path, &r, c, "covariate")).collect::<Result<Vec<f64>>>()?;
        let ind = Individual { id, x: parse_field(path, &r, 1, "x")?, y: parse_field(path, &r, 2, "y")?, covariates };
        if !ind.x.is_finite() || !ind.y.is_finite() || ind.covariates.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(load_err(path, line, "non-finite location or negative covariate"));
        }
        individuals.push(ind);
    }
    Population::new(individuals, covariate_names)
}

pub fn write_population(path: &Path, pop: &Population) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "x".into(), "y".into()];
    header.extend(pop.covariate_names().iter().cloned());
    w.write_record(&header)?;
    for ind in pop.individuals() {
        let mut row = vec![ind.id.to_string(), ind.x.to_string(), ind.y.to_string()];
        row.extend(ind.covariates.iter().map(|c| c.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn opt_day(d: Option<i32>) -> String {
    d.map_or_else(String::new, |d| d.to_string())
}

/// Truth CSV: `id,i,n,r`, blank for events that never happen.
pub fn write_truth(path: &Path, pop: &Population, h: &EventHistory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "i", "n", "r"])?;
    for k in 0..pop.len() {
        w.write_record([pop.id(k).to_string(), opt_day(h.infection[k]), opt_day(h.notification[k]), opt_day(h.removal[k])])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth(path: &Path, pop: &Population) -> Result<EventHistory> {
    let mut rdr = reader(path)?;
    let mut h = EventHistory::empty(pop.len());
    for rec in rdr.records() {
        let r = rec?;
        let line = record_line(&r);
        let id: u64 = parse_field(path, &r, 0, "id")?;
        let k = pop.index_of(id).ok_or_else(|| load_err(path, line, format!("unknown id {id}")))?;
        let day = |c: usize| -> Result<Option<i32>> {
            match r.get(c).unwrap_or("") {
                "" => Ok(None),
                _ => parse_field(path, &r, c, "day").map(Some),
            }
        };
        h.infection[k] = day(1)?;
        h.notification[k] = day(2)?;
        h.removal[k] = day(3)?;
    }
    h.validate()?;
    Ok(h)
}

/// Notification and removal days read from a `day,id,event` file.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub notification: Vec<Option<i32>>,
    pub removal: Vec<Option<i32>>,
}

impl EventLog {
    pub fn from_history(h: &EventHistory) -> Self {
        EventLog { notification: h.notification.clone(), removal: h.removal.clone() }
    }

    pub fn is_empty(&self) -> bool {
        self.notification.iter().all(Option::is_none)
    }

    pub fn last_day(&self) -> Option<i32> {
        self.notification.iter().chain(self.removal.iter()).flatten().copied().max()
    }

    /// Everything known at the end of day `t`.
    pub fn observation(&self, t: i32) -> Result<Observation> {
        let cut = |v: &Vec<Option<i32>>| v.iter().map(|d| d.filter(|&d| d <= t)).collect();
        Observation::new(t, cut(&self.notification), cut(&self.removal))
    }
}

/// Events CSV: `day,id,event` with `event` in `{N, R}`.
pub fn read_events(path: &Path, pop: &Population) -> Result<EventLog> {
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if !header.is_empty() && header != ["day", "id", "event"] {
        return Err(load_err(path, 1, "header must be `day,id,event`"));
    }
    let n = pop.len();
    let mut log = EventLog { notification: vec![None; n], removal: vec![None; n] };
    let mut removal_line = vec![0u64; n];
    for rec in rdr.records() {
        let r = rec?;
        let line = record_line(&r);
        let day: i32 = parse_field(path, &r, 0, "day")?;
        if day < 0 {
            return Err(load_err(path, line, format!("negative day {day}")));
        }
        let id: u64 = parse_field(path, &r, 1, "id")?;
        let k = pop.index_of(id).ok_or_else(|| load_err(path, line, format!("unknown id {id}")))?;
        let slot = match r.get(2).unwrap_or("") {
            "N" => &mut log.notification[k],
            "R" => {
                removal_line[k] = line;
                &mut log.removal[k]
            }
            other => return Err(load_err(path, line, format!("unknown event `{other}` (expected N or R)"))),
        };
        if slot.is_some() {
            return Err(load_err(path, line, format!("duplicate {} event for id {id}", &r[2])));
        }
        *slot = Some(day);
    }
    for k in 0..n {
        match (log.notification[k], log.removal[k]) {
            (None, Some(_)) => {
                return Err(load_err(path, removal_line[k], format!("id {} removed without notification", pop.id(k))))
            }
            (Some(nd), Some(rd)) if rd < nd => {
                return Err(load_err(path, removal_line[k], format!("id {} removed before notification", pop.id(k))))
            }
            _ => {}
        }
    }
    Ok(log)
}

pub fn write_events(path: &Path, pop: &Population, log: &EventLog) -> Result<()> {
    let mut rows = Vec::new();
    for k in 0..pop.len() {
        if let Some(d) = log.notification[k] {
            rows.push((d, 0u8, pop.id(k)));
        }
        if let Some(d) = log.removal[k] {
            rows.push((d, 1u8, pop.id(k)));
        }
    }
    rows.sort_unstable();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["day", "id", "event"])?;
    for (d, e, id) in rows {
        w.write_record([d.to_string(), id.to_string(), if e == 0 { "N" } else { "R" }.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace(path: &Path, names: &[String], rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sweep".to_string()];
    header.extend(names.iter().cloned());
    header.extend(["loglik".to_string(), "u_t".into(), "tau".into()]);
    w.write_record(&header)?;
    for r in rows {
        let mut row = vec![r.sweep.to_string()];
        row.extend(r.values.iter().map(f64::to_string));
        row.extend([r.log_lik.to_string(), r.occults.to_string(), opt_day((r.tau != NEVER).then_some(r.tau))]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- day outputs

pub fn day_dir(out: &Path, day: i32) -> PathBuf {
    out.join(format!("day_{day}"))
}

/// One row of a summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub quantity: String,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
    pub quantiles: [f64; 5],
}

const QUANTILES: [f64; 5] = [0.025, 0.25, 0.5, 0.75, 0.975];

fn summary_row(name: &str, values: &[f64], se: f64) -> SummaryRow {
    let (mean, sd) = mean_sd(values);
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    SummaryRow { quantity: name.to_string(), mean, sd, se, quantiles: QUANTILES.map(|p| quantile(&sorted, p)) }
}

/// Parameter and `u_t` columns for a set of equally weighted draws.
fn draw_columns(model: &Model, obs: &Observation, draws: &[(&Params, &Augmentation)]) -> Vec<(String, Vec<f64>)> {
    let names = model.parameter_names();
    let mut cols: Vec<(String, Vec<f64>)> = names.iter().map(|n| (n.clone(), Vec::with_capacity(draws.len()))).collect();
    let mut u = Vec::with_capacity(draws.len());
    for (p, a) in draws {
        for (j, v) in model.parameter_values(p).into_iter().enumerate() {
            cols[j].1.push(v);
        }
        u.push(a.occult_count(obs) as f64);
    }
    cols.push(("u_t".into(), u));
    cols
}

/// Summary of an SMC particle population. Standard errors use the number
/// of distinct ancestors as the effective size.
pub fn particle_summary(model: &Model, obs: &Observation, particles: &[Particle], unique: usize) -> Result<Vec<SummaryRow>> {
    let live: Vec<(&Params, &Augmentation)> = particles.iter().filter(|p| p.is_alive()).map(|p| (&p.params, &p.aug)).collect();
    draw_columns(model, obs, &live)
        .into_iter()
        .map(|(name, v)| {
            let e: FunctionalEstimate = estimate_functional(&name, &v, unique)?;
            Ok(summary_row(&name, &v, e.se))
        })
        .collect()
}

/// Summary of thinned MCMC draws with batch-means standard errors.
pub fn chain_summary(model: &Model, obs: &Observation, draws: &[(Params, Augmentation)]) -> Result<Vec<SummaryRow>> {
    if draws.is_empty() {
        return Err(Error::Usage("no draws to summarise".into()));
    }
    let refs: Vec<(&Params, &Augmentation)> = draws.iter().map(|(p, a)| (p, a)).collect();
    Ok(draw_columns(model, obs, &refs)
        .into_iter()
        .map(|(name, v)| {
            let se = batch_means_se(&v, 20.min(v.len()));
            summary_row(&name, &v, se)
        })
        .collect())
}

/// `quantity,mean,sd,se,q025,q250,q500,q750,q975`, then `P(u_t = k)` rows
/// and scalar diagnostics (`ess`, `unique`, `dead`) in the mean column.
pub fn write_summary(path: &Path, rows: &[SummaryRow], u_law: &BTreeMap<usize, f64>, scalars: &[(&str, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["quantity", "mean", "sd", "se", "q025", "q250", "q500", "q750", "q975"])?;
    for r in rows {
        let mut row = vec![r.quantity.clone(), r.mean.to_string(), r.sd.to_string(), r.se.to_string()];
        row.extend(r.quantiles.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    let blank = || std::iter::repeat_n(String::new(), 7);
    for (k, p) in u_law {
        w.write_record([format!("P(u_t={k})"), p.to_string()].into_iter().chain(blank()))?;
    }
    for (name, v) in scalars {
        w.write_record([name.to_string(), v.to_string()].into_iter().chain(blank()))?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of a summary file keyed by quantity: `(mean, se)`.
pub fn read_summary(path: &Path) -> Result<BTreeMap<String, (f64, f64)>> {
    let mut rdr = reader(path)?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let r = rec?;
        let se = r.get(3).unwrap_or("");
        if se.is_empty() {
            continue;
        }
        out.insert(r[0].to_string(), (parse_field(path, &r, 1, "mean")?, parse_field(path, &r, 3, "se")?));
    }
    Ok(out)
}

fn u_law(obs: &Observation, augs: &[&Augmentation]) -> BTreeMap<usize, f64> {
    crate::diagnostics::empirical(augs.iter().map(|a| a.occult_count(obs)))
}

/// Histogram densities: `quantity,lo,hi,density`, 40 bins per quantity.
pub fn write_density(path: &Path, columns: &[(String, Vec<f64>)]) -> Result<()> {
    const BINS: usize = 40;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["quantity", "lo", "hi", "density"])?;
    for (name, v) in columns {
        if v.is_empty() {
            continue;
        }
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / BINS as f64 } else { 1.0 };
        let mut counts = [0usize; BINS];
        for x in v {
            counts[(((x - lo) / width) as usize).min(BINS - 1)] += 1;
        }
        for (b, c) in counts.iter().enumerate() {
            let a = lo + b as f64 * width;
            let d = *c as f64 / (v.len() as f64 * width);
            w.write_record([name.clone(), a.to_string(), (a + width).to_string(), d.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Checkpoint: `particles_<t>.csv` (`particle,<params>,logw`),
/// `aug_<t>.csv` (`particle,id,i,n`) and `state_<t>.toml`.
pub fn write_particles(dir: &Path, day: i32, model: &Model, state: &SmcState) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(format!("particles_{day}.csv")))?;
    let mut header = vec!["particle".to_string()];
    header.extend(model.parameter_names());
    header.push("logw".into());
    w.write_record(&header)?;
    let mut a = csv::Writer::from_path(dir.join(format!("aug_{day}.csv")))?;
    a.write_record(["particle", "id", "i", "n"])?;
    let pop = &model.population;
    for (j, p) in state.particles.iter().enumerate() {
        let mut row = vec![j.to_string()];
        row.extend(model.parameter_values(&p.params).iter().map(f64::to_string));
        row.push(p.log_weight.to_string());
        w.write_record(&row)?;
        for k in 0..p.aug.len() {
            if p.aug.infection[k] != NEVER {
                let n = p.aug.notification[k];
                a.write_record([j.to_string(), pop.id(k).to_string(), p.aug.infection[k].to_string(), opt_day((n != NEVER).then_some(n))])?;
            }
        }
    }
    w.flush()?;
    a.flush()?;
    let meta = Checkpoint { day, m: state.m, m_u: state.m_u, stats: state.stats.into() };
    fs::write(dir.join(format!("state_{day}.toml")), toml::to_string(&meta).expect("checkpoint serialises"))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct CounterRecord {
    proposed: u64,
    accepted: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct StatsRecord {
    lambda: CounterRecord,
    zeta: CounterRecord,
    notified: CounterRecord,
    occult_times: CounterRecord,
    occult_count: CounterRecord,
}

impl From<MoveStats> for StatsRecord {
    fn from(s: MoveStats) -> Self {
        let c = |c: Counter| CounterRecord { proposed: c.proposed, accepted: c.accepted };
        StatsRecord {
            lambda: c(s.lambda),
            zeta: c(s.zeta),
            notified: c(s.notified),
            occult_times: c(s.occult_times),
            occult_count: c(s.occult_count),
        }
    }
}

impl From<StatsRecord> for MoveStats {
    fn from(s: StatsRecord) -> Self {
        let c = |c: CounterRecord| Counter { proposed: c.proposed, accepted: c.accepted };
        MoveStats {
            lambda: c(s.lambda),
            zeta: c(s.zeta),
            notified: c(s.notified),
            occult_times: c(s.occult_times),
            occult_count: c(s.occult_count),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    day: i32,
    m: usize,
    m_u: usize,
    stats: StatsRecord,
}

pub fn read_particles(dir: &Path, day: i32, model: &Model) -> Result<SmcState> {
    let state_path = dir.join(format!("state_{day}.toml"));
    let meta: Checkpoint = toml::from_str(&fs::read_to_string(&state_path)?)
        .map_err(|e| Error::Config(format!("{}: {e}", state_path.display())))?;
    let base = default_initial_params(model)?;
    let names = model.parameter_names();
    let path = dir.join(format!("particles_{day}.csv"));
    let mut rdr = reader(&path)?;
    let mut particles = Vec::new();
    let n_pop = model.population.len();
    for rec in rdr.records() {
        let r = rec?;
        let j: usize = parse_field(&path, &r, 0, "particle")?;
        if j != particles.len() {
            return Err(load_err(&path, record_line(&r), "particles out of order"));
        }
        let values = (0..names.len()).map(|c| parse_field(&path, &r, c + 1, "value")).collect::<Result<Vec<f64>>>()?;
        let params = model.params_from_values(&base, &values)?;
        let log_weight: f64 = parse_field(&path, &r, names.len() + 1, "logw")?;
        particles.push(Particle { params, aug: Augmentation::empty(n_pop), log_weight, ancestor: j });
    }
    let path = dir.join(format!("aug_{day}.csv"));
    let mut rdr = reader(&path)?;
    for rec in rdr.records() {
        let r = rec?;
        let line = record_line(&r);
        let j: usize = parse_field(&path, &r, 0, "particle")?;
        let id: u64 = parse_field(&path, &r, 1, "id")?;
        let k = model.population.index_of(id).ok_or_else(|| load_err(&path, line, format!("unknown id {id}")))?;
        let p = particles.get_mut(j).ok_or_else(|| load_err(&path, line, format!("unknown particle {j}")))?;
        p.aug.infection[k] = parse_field(&path, &r, 2, "i")?;
        p.aug.notification[k] = if r.get(3).unwrap_or("").is_empty() { NEVER } else { parse_field(&path, &r, 3, "n")? };
    }
    Ok(SmcState { day: meta.day, particles, m: meta.m, m_u: meta.m_u, stats: meta.stats.into() })
}

fn write_diagnostics(path: &Path, d: &StepDiagnostics) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["key", "value"])?;
    let rate = |c: &Counter| c.rate().to_string();
    let rows: Vec<(&str, String)> = vec![
        ("day", d.day.to_string()),
        ("ess", d.ess.to_string()),
        ("unique", d.unique.to_string()),
        ("dead", d.dead.to_string()),
        ("mean_switched", d.mean_switched.to_string()),
        ("m", d.m.to_string()),
        ("m_u", d.m_u.to_string()),
        ("accept_lambda", rate(&d.stats.lambda)),
        ("accept_notified", rate(&d.stats.notified)),
        ("accept_occult_times", rate(&d.stats.occult_times)),
        ("accept_occult_count", rate(&d.stats.occult_count)),
        ("seconds_adjust", d.times.adjust.as_secs_f64().to_string()),
        ("seconds_resample", d.times.resample.as_secs_f64().to_string()),
        ("seconds_propagate", d.times.propagate.as_secs_f64().to_string()),
        ("seconds_jitter", d.times.jitter.as_secs_f64().to_string()),
    ];
    for (k, v) in rows {
        w.write_record([k, v.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// Write every per-day artifact for a particle population.
pub fn write_smc_day(
    out: &Path,
    model: &Model,
    obs: &Observation,
    state: &SmcState,
    diag: Option<&StepDiagnostics>,
    checkpoint: bool,
) -> Result<()> {
    let day = state.day;
    let dir = day_dir(out, day);
    fs::create_dir_all(&dir)?;
    let unique = diag.map_or(state.particles.len(), |d| d.unique);
    let rows = particle_summary(model, obs, &state.particles, unique)?;
    let live: Vec<&Particle> = state.particles.iter().filter(|p| p.is_alive()).collect();
    let augs: Vec<&Augmentation> = live.iter().map(|p| &p.aug).collect();
    let mut scalars = vec![("particles", state.particles.len() as f64), ("unique", unique as f64)];
    if let Some(d) = diag {
        scalars.push(("ess", d.ess));
        scalars.push(("dead", d.dead as f64));
    }
    write_summary(&dir.join(format!("summary_{day}.csv")), &rows, &u_law(obs, &augs), &scalars)?;
    let draws: Vec<(&Params, &Augmentation)> = live.iter().map(|p| (&p.params, &p.aug)).collect();
    write_density(&dir.join(format!("density_{day}.csv")), &draw_columns(model, obs, &draws))?;
    if let Some(d) = diag {
        write_diagnostics(&dir.join(format!("diagnostics_{day}.csv")), d)?;
    }
    if checkpoint {
        write_particles(&dir, day, model, state)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- orchestration

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub from_day: i32,
    pub to_day: i32,
    pub completed_day: Option<i32>,
    pub population: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn write(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out)?;
        fs::write(out.join("manifest.toml"), toml::to_string(self).expect("manifest serialises"))?;
        Ok(())
    }

    pub fn read(out: &Path) -> Result<Self> {
        let path = out.join("manifest.toml");
        toml::from_str(&fs::read_to_string(&path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Initialise at `from_day` and step through `to_day`, writing outputs for
/// every day. With `resume`, continue from the latest checkpoint in `out`.
/// Outputs written before a failing day are kept.
pub fn run_smc(
    config: &RunConfig,
    model: &Model,
    events: &EventLog,
    out: &Path,
    resume: bool,
    mut on_day: impl FnMut(&SmcState, Option<&StepDiagnostics>),
) -> Result<Vec<StepDiagnostics>> {
    let from = config.smc.from_day;
    let to = match config.smc.to_day {
        Some(t) => t,
        None => events.last_day().ok_or_else(|| Error::Usage("event file has no events".into()))?.max(from),
    };
    let mut manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: "run".into(),
        seed: config.seed,
        from_day: from,
        to_day: to,
        completed_day: None,
        population: config.paths.population.clone(),
        events: config.paths.events.clone(),
        config: config.clone(),
    };
    let mut state = None;
    if resume {
        if let Ok(old) = Manifest::read(out) {
            if let Some(day) = old.completed_day {
                state = Some(read_particles(&day_dir(out, day), day, model)?);
                manifest.completed_day = Some(day);
                log::info!("resuming after day {day}");
            }
        }
    }
    manifest.write(out)?;
    let smc_cfg = config.smc_config();
    let mut state = match state {
        Some(s) => s,
        None => {
            let obs = events.observation(from)?;
            let s = smc::init(model, &obs, &config.mcmc_config(config.smc.particles), None)?;
            write_smc_day(out, model, &obs, &s, None, true)?;
            manifest.completed_day = Some(from);
            manifest.write(out)?;
            on_day(&s, None);
            s
        }
    };
    let pool = smc::pool(smc_cfg.workers)?;
    let mut all = Vec::new();
    for t in state.day + 1..=to {
        let obs = events.observation(t)?;
        let d = smc::smc_step(model, &obs, &mut state, &smc_cfg, &pool)?;
        write_smc_day(out, model, &obs, &state, Some(&d), config.smc.dump_particles || t == to)?;
        manifest.completed_day = Some(t);
        manifest.write(out)?;
        on_day(&state, Some(&d));
        all.push(d);
    }
    Ok(all)
}

/// Independent MCMC analyses on the given days, written as
/// `<out>/day_<t>/summary_<t>.csv` (and `trace_<t>.csv` when tracing).
pub fn run_mcmc_days(config: &RunConfig, model: &Model, events: &EventLog, days: &[i32], out: &Path) -> Result<()> {
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: "mcmc".into(),
        seed: config.seed,
        from_day: days.iter().copied().min().unwrap_or(0),
        to_day: days.iter().copied().max().unwrap_or(0),
        completed_day: None,
        population: config.paths.population.clone(),
        events: config.paths.events.clone(),
        config: config.clone(),
    };
    manifest.write(out)?;
    for &t in days {
        let obs = events.observation(t)?;
        let res = run_mcmc(model, &obs, &config.mcmc_config(config.mcmc.samples), None)?;
        let dir = day_dir(out, t);
        fs::create_dir_all(&dir)?;
        let rows = chain_summary(model, &obs, &res.draws)?;
        let augs: Vec<&Augmentation> = res.draws.iter().map(|(_, a)| a).collect();
        let scalars = [
            ("accept_lambda", res.stats.lambda.rate()),
            ("accept_notified", res.stats.notified.rate()),
            ("accept_occult_times", res.stats.occult_times.rate()),
        ];
        write_summary(&dir.join(format!("summary_{t}.csv")), &rows, &u_law(&obs, &augs), &scalars)?;
        if config.mcmc.trace {
            write_trace(&dir.join(format!("trace_{t}.csv")), &model.parameter_names(), &res.trace)?;
        }
        log::info!("mcmc day {t} done");
    }
    Ok(())
}

fn summary_days(dir: &Path) -> Result<BTreeMap<i32, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(day) = name.strip_prefix("day_").and_then(|d| d.parse::<i32>().ok()) {
            let f = entry.path().join(format!("summary_{day}.csv"));
            if f.exists() {
                out.insert(day, f);
            }
        }
    }
    Ok(out)
}

/// Compare every quantity of every MCMC day against the SMC summary of the
/// same day.
pub fn compare_dirs(smc_dir: &Path, mcmc_dir: &Path) -> Result<Vec<(i32, Comparison)>> {
    let smc = summary_days(smc_dir)?;
    let mcmc = summary_days(mcmc_dir)?;
    if mcmc.is_empty() {
        return Err(Error::Misaligned(format!("no summaries under {}", mcmc_dir.display())));
    }
    let mut out = Vec::new();
    for (day, mpath) in &mcmc {
        let spath = smc.get(day).ok_or_else(|| Error::Misaligned(format!("no SMC summary for day {day}")))?;
        let s = read_summary(spath)?;
        let m = read_summary(mpath)?;
        for (q, (mm, mse)) in &m {
            let (sm, sse) = s.get(q).ok_or_else(|| Error::Misaligned(format!("day {day}: SMC summary lacks `{q}`")))?;
            out.push((*day, Comparison::new(q, *sm, *sse, *mm, *mse)));
        }
    }
    Ok(out)
}

pub fn write_comparison(path: &Path, rows: &[(i32, Comparison)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["day", "quantity", "smc_mean", "smc_se", "mcmc_mean", "mcmc_se", "delta"])?;
    for (day, c) in rows {
        w.write_record([day.to_string(), c.name.clone(), c.a.to_string(), c.se_a.to_string(), c.b.to_string(), c.se_b.to_string(), c.z.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn pop3() -> Population {
        let ind = |id, x| Individual { id, x, y: 0.0, covariates: vec![] };
        Population::new(vec![ind(10, 0.0), ind(11, 1.0), ind(12, 2.0)], vec![]).unwrap()
    }

    fn file(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::File::create(&p).unwrap().write_all(text.as_bytes()).unwrap();
        p
    }

    #[test]
    fn events_load_errors_carry_line_numbers() {
        let d = tempfile::tempdir().unwrap();
        let pop = pop3();
        let cases = [
            ("day,id,event\n0,10,N\n1,99,N\n", 3, "unknown id"),
            ("day,id,event\n0,10,N\n2,10,N\n", 3, "duplicate"),
            ("day,id,event\n3,10,N\n2,10,R\n", 3, "before notification"),
            ("day,id,event\n0,10,N\n1,11,X\n", 3, "unknown event"),
            ("day,id,event\n0,10,N\n1,11,R\n", 3, "without notification"),
        ];
        for (text, line, what) in cases {
            let p = file(d.path(), "e.csv", text);
            match read_events(&p, &pop) {
                Err(Error::Load { line: l, msg, .. }) => {
                    assert_eq!(l, line, "{text}");
                    assert!(msg.contains(what), "{msg}");
                }
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn empty_event_file_is_an_empty_stream() {
        let d = tempfile::tempdir().unwrap();
        let p = file(d.path(), "e.csv", "day,id,event\n");
        let log = read_events(&p, &pop3()).unwrap();
        assert!(log.is_empty());
        assert_eq!(log.last_day(), None);
    }

    #[test]
    fn config_defaults_and_aliases() {
        let c = RunConfig::from_toml("seed = 7\n[mcmc]\nB = 20\nM = 2\n[smc]\nN = 30\nT = 4\nstrategy = \"hazard\"\n").unwrap();
        assert_eq!((c.seed, c.mcmc.burn_in, c.mcmc.thin, c.smc.particles, c.smc.from_day), (7, 20, 2, 30, 4));
        assert_eq!(c.smc.strategy, Strategy::Hazard);
        let again = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(again, c);
        assert!(RunConfig::from_toml("[smc]\nN = 1\n").is_err());
        assert!(RunConfig::from_toml("[smc]\nbogus = 1\n").is_err());
    }

    #[test]
    fn model_section_builds_priors() {
        let c = RunConfig::from_toml(
            "[model]\nkernel = \"spatial_exp\"\nkappa_prior = { dist = \"uniform01\" }\n[model.priors]\ngamma = { dist = \"gamma\", shape = 2.25, rate = 0.25 }\n",
        )
        .unwrap();
        let m = c.model.build(Arc::new(pop3())).unwrap();
        assert_eq!(m.kernel_priors[1], PriorSpec::Gamma { shape: 2.25, rate: 0.25 });
        assert!(m.infers_kappa());
        let bad = RunConfig::from_toml("[model.priors]\nbeta9 = { dist = \"uniform01\" }\n").unwrap();
        assert!(bad.model.build(Arc::new(pop3())).is_err());
    }
}

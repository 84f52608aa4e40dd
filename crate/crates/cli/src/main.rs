use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use epi_smc::io::{self, EventLog, RunConfig};
use epi_smc::model::Population;
use epi_smc::simulate::simulate;
use epi_smc::smc::{Strategy, WeightMode};
use epi_smc::Error;

#[derive(Parser)]
#[command(name = "epi-smc", version, about = "Real-time Bayesian inference for discrete-time S-I-N-R epidemics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an outbreak and write population, truth and event files.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw the initial particles by MCMC at the first analysis day.
    Init(RunArgs),
    /// Initialise (or resume) and filter day by day.
    Run(RunArgs),
    /// Independent MCMC analyses on selected days.
    Mcmc {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated analysis days; default every fifth day.
        #[arg(long, value_delimiter = ',')]
        days: Vec<i32>,
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare SMC and MCMC summaries day by day.
    Compare {
        #[arg(long)]
        smc: PathBuf,
        #[arg(long)]
        mcmc: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    population: PathBuf,
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long = "from-day")]
    from_day: Option<i32>,
    #[arg(long = "to-day")]
    to_day: Option<i32>,
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Particle weighting: incremental, verbatim or exact.
    #[arg(long)]
    weight: Option<WeightMode>,
    #[arg(long)]
    np: Option<usize>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Continue from the last checkpoint in `--out`.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn load_data(data: &DataArgs, cfg: &mut RunConfig) -> Result<(Arc<Population>, EventLog)> {
    if let Some(s) = data.seed {
        cfg.seed = s;
    }
    cfg.paths.population = Some(data.population.clone());
    cfg.paths.events = Some(data.events.clone());
    let pop = Arc::new(io::read_population(&data.population)?);
    let events = io::read_events(&data.events, &pop)?;
    Ok((pop, events))
}

fn run(args: RunArgs, init_only: bool) -> Result<()> {
    let mut cfg = load_config(args.data.config.as_deref())?;
    let (pop, events) = load_data(&args.data, &mut cfg)?;
    let s = &mut cfg.smc;
    s.from_day = args.from_day.unwrap_or(s.from_day);
    s.to_day = if init_only { Some(s.from_day) } else { args.to_day.or(s.to_day) };
    s.strategy = args.strategy.unwrap_or(s.strategy);
    s.weight = args.weight.unwrap_or(s.weight);
    s.n_p = args.np.unwrap_or(s.n_p);
    s.particles = args.particles.unwrap_or(s.particles);
    s.workers = args.workers.unwrap_or(s.workers);
    cfg.paths.out = Some(args.out.clone());
    cfg.validate()?;
    let model = cfg.model.build(pop)?;
    io::run_smc(&cfg, &model, &events, &args.out, args.resume, |state, diag| match diag {
        Some(d) => log::info!(
            "day {}: ess {:.1}, unique {}, dead {}, means {:?}",
            d.day,
            d.ess,
            d.unique,
            d.dead,
            d.names.iter().zip(&d.means).map(|(n, m)| format!("{n}={m:.4}")).collect::<Vec<_>>()
        ),
        None => log::info!("initialised {} particles at day {}", state.particles.len(), state.day),
    })?;
    Ok(())
}

fn main_inner(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let given = match &cfg.paths.population {
                Some(p) => Some(Arc::new(io::read_population(p)?)),
                None => None,
            };
            let sim = simulate(&cfg.simulate.build(cfg.seed, given)?)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            io::write_population(&out.join("population.csv"), &sim.population)?;
            io::write_truth(&out.join("truth.csv"), &sim.population, &sim.history)?;
            io::write_events(&out.join("events.csv"), &sim.population, &EventLog::from_history(&sim.history))?;
            std::fs::write(out.join("config.toml"), cfg.to_toml())?;
            println!(
                "final size {} of {}; {} small outbreaks discarded",
                sim.history.final_size(),
                sim.population.len(),
                sim.rejected
            );
        }
        Command::Init(args) => run(args, true)?,
        Command::Run(args) => run(args, false)?,
        Command::Mcmc { data, days, trace, out } => {
            let mut cfg = load_config(data.config.as_deref())?;
            let (pop, events) = load_data(&data, &mut cfg)?;
            cfg.mcmc.trace |= trace;
            let days = if !days.is_empty() {
                days
            } else if !cfg.mcmc.days.is_empty() {
                cfg.mcmc.days.clone()
            } else {
                let Some(last) = events.last_day() else { bail!("event file has no events") };
                (cfg.smc.from_day..=last).filter(|d| d % 5 == 0).collect()
            };
            let model = cfg.model.build(pop)?;
            io::run_mcmc_days(&cfg, &model, &events, &days, &out)?;
        }
        Command::Compare { smc, mcmc, out } => {
            let rows = io::compare_dirs(&smc, &mcmc)?;
            io::write_comparison(&out, &rows)?;
            let worst = rows.iter().map(|(_, c)| c.z.abs()).fold(0.0, f64::max);
            let outside = rows.iter().filter(|(_, c)| !c.within(3.0)).count();
            println!("{} comparisons, max |delta| {worst:.2}, {outside} beyond 3 standard errors", rows.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Degenerate { .. }) => ExitCode::from(3),
                Some(Error::Load { .. } | Error::Config(_)) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

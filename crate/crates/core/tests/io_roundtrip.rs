use epi_smc::io::{self, EventLog, RunConfig};
use epi_smc::mcmc::McmcConfig;
use epi_smc::simulate::{simulate, SimConfig};
use epi_smc::smc::{self, Strategy, WeightMode};
use epi_smc::Error;

#[test]
fn simulated_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(&SimConfig::desk_sinr(4)).unwrap();
    let (pop_path, truth_path, ev_path) =
        (dir.path().join("population.csv"), dir.path().join("truth.csv"), dir.path().join("events.csv"));
    io::write_population(&pop_path, &sim.population).unwrap();
    io::write_truth(&truth_path, &sim.population, &sim.history).unwrap();
    let log = EventLog::from_history(&sim.history);
    io::write_events(&ev_path, &sim.population, &log).unwrap();

    let pop = io::read_population(&pop_path).unwrap();
    assert_eq!(pop.individuals(), sim.population.individuals());
    assert_eq!(io::read_truth(&truth_path, &pop).unwrap(), sim.history);
    assert_eq!(io::read_events(&ev_path, &pop).unwrap(), log);
}

#[test]
fn event_file_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let pop_path = dir.path().join("population.csv");
    std::fs::write(&pop_path, "id,x,y\n1,0,0\n2,1,0\n").unwrap();
    let pop = io::read_population(&pop_path).unwrap();
    let cases = [
        "day,id,event\n0,1,N\n1,9,N\n",
        "day,id,event\n0,1,N\n1,1,N\n",
        "day,id,event\n0,1,R\n",
        "day,id,event\n0,1,N\n1,2,X\n",
        "day,id,event\n-1,1,N\n",
    ];
    for text in cases {
        let p = dir.path().join("events.csv");
        std::fs::write(&p, text).unwrap();
        match io::read_events(&p, &pop) {
            Err(Error::Load { line, .. }) => assert!(line >= 2, "{text}: line {line}"),
            other => panic!("{text}: {other:?}"),
        }
    }
}

#[test]
fn config_round_trips_through_toml() {
    let mut cfg = RunConfig::default();
    cfg.seed = 42;
    cfg.smc.strategy = Strategy::Hazard;
    cfg.smc.weight = WeightMode::Exact;
    cfg.smc.particles = 123;
    cfg.mcmc.days = vec![5, 10];
    let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
    assert!(RunConfig::from_toml("[smc]\nparticles = 1\n").is_err());
    assert!(RunConfig::from_toml("[smc]\nbogus = 1\n").is_err());
}

#[test]
fn checkpoints_restore_the_particle_population() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(&SimConfig::desk_sir(3)).unwrap();
    let model = RunConfig::default().model.build(sim.population.clone()).unwrap();
    let events = EventLog::from_history(&sim.history);
    let cfg = McmcConfig { burn_in: 100, samples: 20, thin: 2, seed: 1, ..McmcConfig::default() };
    let state = smc::init(&model, &events.observation(3).unwrap(), &cfg, None).unwrap();
    io::write_particles(dir.path(), 3, &model, &state).unwrap();
    let back = io::read_particles(dir.path(), 3, &model).unwrap();
    assert_eq!(back.day, state.day);
    assert_eq!(back.particles.len(), state.particles.len());
    for (a, b) in back.particles.iter().zip(&state.particles) {
        assert_eq!(a.aug, b.aug);
        for (x, y) in model.parameter_values(&a.params).iter().zip(model.parameter_values(&b.params)) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }
}

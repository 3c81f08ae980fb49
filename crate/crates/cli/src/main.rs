use clap::{Args, Parser, Subcommand};
use hjbflow::config::{self, ScenarioConfig, SUITES};
use hjbflow::run::{run_scenario, CliError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hjbflow", version, about = "Mild HJB solver, flow sensitivity and MFG fixed point")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the HJB equation along flow 1 and write value and control paths.
    SolveHjb(Common),
    /// Lipschitz sensitivity of the value along the segment between flows 1 and 2.
    Sensitivity(Common),
    /// Damped fixed point of the coupled backward-forward system.
    Mfg(Common),
    /// Run a verification suite and write criteria.csv.
    Verify {
        /// propagator | hjb | sensitivity | mfg | all
        #[arg(default_value = "all")]
        suite: String,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario TOML, or a manifest.json from an earlier run.
    #[arg(long, env = "HJBFLOW_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "HJBFLOW_OUT", default_value = "out")]
    out: PathBuf,
    /// Overrides run.seed.
    #[arg(long, env = "HJBFLOW_SEED")]
    seed: Option<u64>,
    /// Worker threads; 0 lets rayon decide.
    #[arg(long, env = "HJBFLOW_THREADS", default_value_t = 0)]
    threads: usize,
}

fn prepare(command: &str, common: &Common) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => config::load(p)?,
        None => ScenarioConfig::default(),
    };
    cfg.run.command = command.into();
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if common.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build_global()
            .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common, suite) = match &cli.command {
        Command::SolveHjb(c) => ("solve-hjb", c, None),
        Command::Sensitivity(c) => ("sensitivity", c, None),
        Command::Mfg(c) => ("mfg", c, None),
        Command::Verify { suite, common } => ("verify", common, Some(suite.clone())),
    };
    let result = prepare(command, common).and_then(|mut cfg| {
        if let Some(s) = suite {
            if !SUITES.contains(&s.as_str()) {
                return Err(CliError::Config(config::ConfigError {
                    path: "run.suite".into(),
                    message: format!("unknown suite {s:?} (expected one of {})", SUITES.join(", ")),
                }));
            }
            cfg.run.suite = s;
        }
        run_scenario(&cfg, &common.out)
    });
    match result {
        Ok(outcome) => {
            for (name, _) in &outcome.artifacts {
                println!("{}", common.out.join(name).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("hjbflow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

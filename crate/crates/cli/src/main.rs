use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use consensus_core::harness::{
    self, build_system, parse_axis_value, preset, preset_names, run_experiment, sweep, write_sweep_csv,
    ExperimentConfig,
};
use consensus_core::Error;

/// Switched-topology consensus experiments.
#[derive(Parser)]
#[command(name = "consensus", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and check its declared verdicts
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Run an experiment over a grid of values of one config field
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted config path, e.g. `smoothing.tau_blend`
        #[arg(long)]
        axis: String,
        /// Comma-separated values
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        /// Comma-separated seeds (default: the config seed)
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Build the switching signal and check its uniform connectivity
    VerifyConnectivity {
        #[command(flatten)]
        common: Common,
    },
    /// List the bundled experiment presets
    ListPresets,
}

#[derive(Args)]
struct Common {
    /// Config file, or the name of a bundled preset
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Integrator step
    #[arg(long)]
    step: Option<f64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let path = Path::new(&self.config);
        let mut cfg = if path.exists() {
            ExperimentConfig::load(path)?
        } else {
            preset(&self.config)?
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(step) = self.step {
            cfg.run.step = step;
        }
        if let Some(dir) = &self.out_dir {
            cfg.output.dir = Some(dir.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(command: Command) -> Result<bool, Error> {
    match command {
        Command::Run { common } => {
            let cfg = common.load()?;
            let result = run_experiment(&cfg)?;
            let text = toml::to_string(&result.summary).map_err(|e| Error::Config(e.to_string()))?;
            print!("{text}");
            for m in &result.summary.mismatches {
                eprintln!("mismatch: {m}");
            }
            Ok(result.summary.verdicts_as_declared)
        }
        Command::Sweep {
            common,
            axis,
            values,
            seeds,
        } => {
            let cfg = common.load()?;
            let values: Vec<toml::Value> = values.iter().map(|v| parse_axis_value(v)).collect();
            let rows = sweep(&cfg, &axis, &values, &seeds)?;
            if let Some(dir) = &cfg.output.dir {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                write_sweep_csv(&rows, &dir.join("sweep.csv"))?;
            }
            println!("value\tseed\tconsensus\tdeclared\ttime_to_threshold\tdist_final");
            for r in &rows {
                match &r.error {
                    Some(e) => println!("{}\t{}\terror: {e}", r.value, r.seed),
                    None => println!(
                        "{}\t{}\t{}\t{}\t{}\t{}",
                        r.value,
                        r.seed,
                        r.consensus_reached.unwrap_or(false),
                        r.verdicts_as_declared.unwrap_or(false),
                        r.time_to_threshold.map(|t| t.to_string()).unwrap_or_else(|| "-".into()),
                        r.dist_final.map(|d| format!("{d:e}")).unwrap_or_default(),
                    ),
                }
            }
            if let Some(r) = rows.iter().find(|r| r.error.is_some()) {
                return Err(Error::Config(format!(
                    "sweep cell {}={} seed {} failed",
                    r.axis, r.value, r.seed
                )));
            }
            Ok(rows.iter().all(|r| r.verdicts_as_declared == Some(true)))
        }
        Command::VerifyConnectivity { common } => {
            let cfg = common.load()?;
            let built = build_system(&cfg)?;
            let Some(c) = built.connectivity else {
                return Err(Error::Config(
                    "no connectivity notion: use a generated signal or set monitor.connectivity".into(),
                ));
            };
            println!(
                "{:?} connectivity with window {}: {} ({} windows checked)",
                c.kind,
                c.window,
                if c.passed { "passed" } else { "failed" },
                c.windows_checked
            );
            if let Some(t) = c.witness {
                println!("first failing window starts at t = {t}");
            }
            Ok(c.passed == cfg.expect.connectivity.unwrap_or(true))
        }
        Command::ListPresets => {
            for name in preset_names() {
                let cfg = harness::preset(name)?;
                println!("{name}\t{}", cfg.description);
            }
            Ok(true)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand};
use detlab::par::Execution;
use detlab_cli::run::{run_to_dir, RunError};
use detlab_cli::scenario::{self, Scenario, ScenarioError, Source};

#[derive(Parser)]
#[command(name = "detlab", version, about = "Run deterministic-dynamics scenarios and write plot-ready data")]
struct Cli {
    /// Extra directory of `*.toml` scenarios, searched before the bundled set.
    #[arg(long, global = true, env = "DETLAB_SCENARIO_DIR")]
    scenario_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios (paths or names) and write their artifacts.
    Run {
        #[arg(required = true)]
        scenarios: Vec<String>,
        /// Output root; each scenario writes to `<out>/<name>/`.
        #[arg(long, default_value = "detlab-out")]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the integration tolerance.
        #[arg(long)]
        tol: Option<f64>,
        /// Scenarios to run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Disable data-parallel execution inside each scenario.
        #[arg(long)]
        sequential: bool,
    },
    /// List bundled and custom scenarios.
    ListScenarios,
    /// Parse and range-check scenarios without running them.
    Validate {
        #[arg(required = true)]
        scenarios: Vec<String>,
    },
}

fn scenario_exit(e: &ScenarioError) -> u8 {
    match e {
        ScenarioError::Io { .. } | ScenarioError::Parse { .. } | ScenarioError::Invalid { .. } | ScenarioError::NotFound(_) => 2,
    }
}

fn load_all(names: &[String], dir: Option<&std::path::Path>) -> Result<Vec<(Scenario, Source)>, u8> {
    let mut out = Vec::new();
    let mut worst = 0;
    for n in names {
        match scenario::resolve(n, dir) {
            Ok(x) => out.push(x),
            Err(e) => {
                eprintln!("error: {e}");
                worst = worst.max(scenario_exit(&e));
            }
        }
    }
    if worst > 0 {
        Err(worst)
    } else {
        Ok(out)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let dir = cli.scenario_dir.as_deref();
    match cli.command {
        Command::ListScenarios => match scenario::catalog(dir) {
            Ok(entries) => {
                let width = entries.iter().map(|e| e.name.len()).max().unwrap_or(0);
                for e in entries {
                    println!("{:width$}  {}  [{}]", e.name, e.description, e.source);
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(scenario_exit(&e))
            }
        },
        Command::Validate { scenarios } => match load_all(&scenarios, dir) {
            Ok(list) => {
                for (s, src) in list {
                    println!("ok {} ({}, {src})", s.name, s.experiment.kind());
                }
                ExitCode::SUCCESS
            }
            Err(code) => ExitCode::from(code),
        },
        Command::Run { scenarios, out, seed, tol, jobs, sequential } => {
            let mut list = match load_all(&scenarios, dir) {
                Ok(l) => l,
                Err(code) => return ExitCode::from(code),
            };
            let mut invalid = false;
            for (s, _) in &mut list {
                if let Some(seed) = seed {
                    s.seed = seed;
                }
                if let Some(tol) = tol {
                    s.tol = tol;
                }
                if let Err(msg) = s.validate() {
                    eprintln!("error: {}: {msg}", s.name);
                    invalid = true;
                }
            }
            if invalid {
                return ExitCode::from(2);
            }
            let exec = if sequential { Execution::Sequential } else { Execution::Parallel };
            let results: Vec<Mutex<Option<Result<PathBuf, RunError>>>> =
                list.iter().map(|_| Mutex::new(None)).collect();
            let next = AtomicUsize::new(0);
            std::thread::scope(|scope| {
                for _ in 0..jobs.clamp(1, list.len()) {
                    scope.spawn(|| loop {
                        let k = next.fetch_add(1, Ordering::Relaxed);
                        let Some((s, src)) = list.get(k) else { break };
                        let r = run_to_dir(s, src, &out, exec);
                        *results[k].lock().unwrap() = Some(r);
                    });
                }
            });
            let mut code = 0;
            for ((s, _), r) in list.iter().zip(results) {
                match r.into_inner().unwrap().expect("every scenario ran") {
                    Ok(dir) => println!("ok {} -> {}", s.name, dir.display()),
                    Err(e) => {
                        eprintln!("error: {}: {e}", s.name);
                        code = code.max(e.exit_code());
                    }
                }
            }
            ExitCode::from(code as u8)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ergolab::scenario::{self, RunRecord, Scenario};

mod output;
mod overrides;

/// Exit codes.
const OK: u8 = 0;
/// A verdict failed, a replay check failed, or `--strict` saw a warning.
const FAILED: u8 = 1;
/// Unreadable or invalid scenario, bad arguments.
const CONFIG: u8 = 2;
/// The run itself or writing its artifacts failed.
const RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "ergolab", version, about = "Run entropy and Lyapunov-exponent scenarios on smooth maps")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a built-in scenario by name.
    Run {
        scenario: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Treat warnings as failures.
        #[arg(long)]
        strict: bool,
        /// `key.path=value`, applied after loading; repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// List built-in scenarios.
    ListScenarios,
    /// Show a built-in scenario and what it exercises.
    Describe {
        name: String,
        /// Print only the scenario file.
        #[arg(long)]
        toml: bool,
    },
    /// Re-check the verdicts and certificates stored in a run's JSON sidecar.
    VerifyReplay { record: PathBuf },
}

fn load(spec: &str) -> Result<Scenario, String> {
    let path = Path::new(spec);
    if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        return toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()));
    }
    scenario::find(spec).ok_or_else(|| format!("`{spec}` is neither a file nor a built-in scenario (see list-scenarios)"))
}

fn print_verdicts(record: &RunRecord) {
    for v in &record.verdicts {
        let tag = if !v.passed {
            "FAIL"
        } else if v.vacuous {
            "PASS (vacuous)"
        } else {
            "PASS"
        };
        println!("{tag:<15} {:<24} margin {:+.4}  [{}]", v.name, v.margin, v.inequality);
    }
}

fn run(scenario: &str, out: &Path, seed: Option<u64>, strict: bool, assignments: &[String]) -> u8 {
    let mut sc = match load(scenario).and_then(|s| overrides::apply(&s, assignments)) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return CONFIG;
        }
    };
    if let Some(seed) = seed {
        sc.experiment.seed = seed;
    }
    if let Err(e) = sc.validate() {
        eprintln!("error: scenario `{}`: {e}", sc.name);
        return CONFIG;
    }
    let record = match sc.run() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: run failed: {e}");
            return RUNTIME;
        }
    };
    let files = match output::write_all(&record, out) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return RUNTIME;
        }
    };
    println!("scenario {} ({} rows, {:.1} s)", sc.name, record.rows.len(), record.wall_clock_s);
    print_verdicts(&record);
    for row in &record.rows {
        for w in &row.warnings {
            eprintln!("warning: t = {}: {w}", row.t);
        }
    }
    for (i, p) in record.probes.iter().enumerate() {
        if let Some(e) = &p.error {
            eprintln!("warning: probe {i}: {e}");
        }
    }
    println!("wrote {}, {}, {}", files.csv.display(), files.json.display(), files.gnuplot.display());
    let warnings = record.warning_count();
    if !record.passed() {
        FAILED
    } else if strict && warnings > 0 {
        eprintln!("{warnings} warnings under --strict");
        FAILED
    } else {
        OK
    }
}

fn describe(name: &str, toml_only: bool) -> u8 {
    let Some(sc) = scenario::find(name) else {
        eprintln!("error: no built-in scenario `{name}`");
        return CONFIG;
    };
    let text = match toml::to_string(&sc) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return RUNTIME;
        }
    };
    if !toml_only {
        println!("{}: {}", sc.name, sc.description);
        println!("exercises:");
        for a in &sc.anchors {
            println!("  - {a}");
        }
        println!();
    }
    print!("{text}");
    OK
}

fn verify(path: &Path) -> u8 {
    let record: RunRecord = match std::fs::read_to_string(path)
        .map_err(|e| e.to_string())
        .and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string()))
    {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return CONFIG;
        }
    };
    let report = scenario::verify_replay(&record);
    for f in &report.failures {
        println!("FAIL {f}");
    }
    println!("{} checks, {} failed", report.checks, report.failures.len());
    if report.passed() {
        OK
    } else {
        FAILED
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(CONFIG);
        }
    }
    let code = match cli.command {
        Command::Run { scenario, out, seed, strict, overrides } => run(&scenario, &out, seed, strict, &overrides),
        Command::ListScenarios => {
            for s in scenario::builtin() {
                println!("{:<24} {}", s.name, s.description);
            }
            OK
        }
        Command::Describe { name, toml } => describe(&name, toml),
        Command::VerifyReplay { record } => verify(&record),
    };
    ExitCode::from(code)
}

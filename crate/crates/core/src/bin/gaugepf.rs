//! `gaugepf` command-line interface.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gaugepf::bp::SolverConfig;
use gaugepf::cli::{self, ContractMode, InputInfo, OrderSpec, Outcome, Report, VerifyTarget};
use gaugepf::format::parse_model;
use gaugepf::model::ENUMERATION_GUARD;
use gaugepf::verify::Fault;
use gaugepf::{Error, MultiGM};

#[derive(Parser, Debug)]
#[command(name = "gaugepf", version, about = "Partition functions of binary multi-graph models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Convergence tolerance on the largest BP residual.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Weight kept on the previous value in each pair update.
    #[arg(long, default_value_t = 0.5)]
    damping: f64,
    #[arg(long, default_value_t = 16)]
    restarts: usize,
    #[arg(long, default_value_t = 10_000)]
    max_sweeps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative softening applied to hard models before BP.
    #[arg(long, default_value_t = 1e-12)]
    soften: f64,
    /// Largest edge count for which exact enumeration is attempted.
    #[arg(long, default_value_t = ENUMERATION_GUARD)]
    guard: usize,
    /// Also write the report to this file.
    #[arg(long, value_name = "OUT")]
    json: Option<PathBuf>,
}

impl Common {
    fn solver(&self) -> SolverConfig {
        SolverConfig {
            damping: self.damping,
            tol: self.tol,
            max_sweeps: self.max_sweeps,
            restarts: self.restarts,
            seed: self.seed,
            soften: self.soften,
            ..SolverConfig::default()
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact Z, log Z and MAP by enumeration.
    Exact {
        model: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Maximal BP gauge, beliefs and Bethe free energy.
    Bp {
        model: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Edge contraction, exact or as a BP contraction sequence.
    Contract {
        model: PathBuf,
        /// normal-first, ids, min-arity, or a comma-separated list of edge ids.
        #[arg(long, default_value = "normal-first")]
        order: String,
        /// exact or bp-sequence.
        #[arg(long, default_value = "exact")]
        mode: String,
        #[command(flatten)]
        common: Common,
    },
    /// Loop series at the maximal BP gauge.
    Loops {
        model: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Invariant suite on a model file or on random soft models.
    Verify {
        model: Option<PathBuf>,
        /// Number of random models to check instead of a file.
        #[arg(long, conflicts_with = "model", requires = "edges")]
        random: Option<usize>,
        /// Edge count of each random model.
        #[arg(long)]
        edges: Option<usize>,
        /// Inject a fault to exercise the checks: none or gauge-sign.
        #[arg(long, default_value = "none")]
        inject_fault: String,
        #[command(flatten)]
        common: Common,
    },
}

fn load(path: &Path) -> Result<(MultiGM, InputInfo), (Error, InputInfo)> {
    let bytes = std::fs::read(path).map_err(|e| {
        (Error::Io(format!("{}: {e}", path.display())), InputInfo { source: "file".into(), digest: String::new() })
    })?;
    let info = cli::file_input(&bytes);
    let text = String::from_utf8(bytes).map_err(|e| (Error::Parse(format!("{}: {e}", path.display())), info.clone()))?;
    let m = parse_model(&text).map_err(|e| {
        let msg = match e {
            Error::Parse(msg) => msg,
            other => other.to_string(),
        };
        (Error::Parse(format!("{}: {msg}", path.display())), info.clone())
    })?;
    Ok((m, info))
}

fn run(cmd: Command) -> (Report, Option<PathBuf>) {
    let (name, common) = match &cmd {
        Command::Exact { common, .. } => ("exact", common),
        Command::Bp { common, .. } => ("bp", common),
        Command::Contract { common, .. } => ("contract", common),
        Command::Loops { common, .. } => ("loops", common),
        Command::Verify { common, .. } => ("verify", common),
    };
    let out = common.json.clone();
    let cfg = common.solver();
    let seed = common.seed;
    let guard = common.guard;
    let result = (|| -> Result<Report, (Error, InputInfo)> {
        match &cmd {
            Command::Exact { model, .. } => {
                let (m, info) = load(model)?;
                cli::exact(&m, info.clone(), seed, guard).map_err(|e| (e, info))
            }
            Command::Bp { model, .. } => {
                let (m, info) = load(model)?;
                cli::bp(&m, info.clone(), &cfg, guard).map_err(|e| (e, info))
            }
            Command::Contract { model, order, mode, .. } => {
                let (m, info) = load(model)?;
                let parsed = order
                    .parse::<OrderSpec>()
                    .and_then(|o| mode.parse::<ContractMode>().map(|md| (o, md)))
                    .map_err(|e| (e, info.clone()))?;
                cli::contract(&m, info.clone(), &parsed.0, parsed.1, &cfg, guard).map_err(|e| (e, info))
            }
            Command::Loops { model, .. } => {
                let (m, info) = load(model)?;
                cli::loops(&m, info.clone(), &cfg, guard).map_err(|e| (e, info))
            }
            Command::Verify { model, random, edges, inject_fault, .. } => {
                let (m, info, target) = match (model, random) {
                    (Some(path), _) => {
                        let (m, info) = load(path)?;
                        (Some(m), info, VerifyTarget::Model)
                    }
                    (None, Some(count)) => {
                        let edges = edges.unwrap_or(0);
                        (None, cli::random_input(*count, edges, seed), VerifyTarget::Random { count: *count, edges })
                    }
                    (None, None) => {
                        let info = InputInfo { source: "none".into(), digest: String::new() };
                        return Err((Error::InvalidConfig("verify needs a model file or --random".into()), info));
                    }
                };
                let fault = inject_fault.parse::<Fault>().map_err(|e| (e, info.clone()))?;
                cli::verify(m.as_ref(), &target, info.clone(), &cfg, fault).map_err(|e| (e, info))
            }
        }
    })();
    let report = result.unwrap_or_else(|(e, info)| Report::failure(name, info, seed, &e));
    (report, out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { Outcome::InputError.code() } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let (report, out) = run(cli.command);
    let text = report.to_json();
    // a closed pipe downstream is not an error worth reporting
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    if let Some(err) = &report.error {
        eprintln!("error: {err}");
    }
    if let Some(path) = out {
        if let Err(e) = std::fs::write(&path, format!("{text}\n")) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return ExitCode::from(Outcome::InputError.code() as u8);
        }
    }
    ExitCode::from(report.exit_code as u8)
}

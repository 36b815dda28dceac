use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use encon_core::export::{
    outcome_rows, sweep_rows, trajectory_rows, write_csv, write_json, write_outcome_csv, write_sweep_csv,
    write_trajectory_csv, write_transcript_jsonl, OUTCOME_HEADER, SWEEP_HEADER, TRAJECTORY_HEADER,
};
use encon_core::{
    consensus_experiment, load_config, max_profitable_gain, mechanism_experiment, outcome_oracle,
    privacy_experiment, sweep_experiment, validate, verify_taxes, BackendKind, ConfigError, ExperimentConfig,
    ExportError, OutcomeRecord, ProtocolError, Verdict, ViewError,
};

const EXIT_USAGE: u8 = 1;
const EXIT_BOUND: u8 = 2;
const EXIT_PROTOCOL: u8 = 3;
const EXIT_NEGATIVE: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "encon", version, about = "Encrypted average consensus and tax mechanism simulator")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalOpts {
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the backend in the config.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    /// Artifact directory. Defaults to the config's `output_dir`, then `./out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Rendering of the summary printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    ExactMask,
    Lattice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check strong connectivity and the in-neighbor floor.
    ValidateGraph { config: PathBuf },
    /// Run the encrypted consensus protocol.
    RunConsensus { config: PathBuf },
    /// Run the mechanism: consensus, decision broadcast and taxes.
    RunMechanism { config: PathBuf },
    /// Compare built-in deviations of one agent against honest play.
    SweepDeviations {
        config: PathBuf,
        /// 1-based agent index.
        #[arg(long)]
        deviator: usize,
        #[arg(long, value_delimiter = ',', default_value = "10,30,100")]
        horizons: Vec<u32>,
    },
    /// Check reported payments against the mechanism's outcome.
    VerifyTaxes {
        config: PathBuf,
        /// JSON array of payments, or an object keyed by 1-based agent.
        #[arg(long)]
        payments: PathBuf,
    },
    /// Uniformity test on the masked values a coalition decrypts.
    PrivacyTest {
        config: PathBuf,
        /// Comma separated 1-based agent indices.
        #[arg(long, value_delimiter = ',', required = true)]
        coalition: Vec<usize>,
        #[arg(long, default_value_t = 5000)]
        runs: usize,
    },
}

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Export { path: PathBuf, source: ExportError },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("{0}")]
    Negative(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) | Failure::Config(_) | Failure::Io { .. } | Failure::Export { .. } => EXIT_USAGE,
            Failure::Protocol(e) if e.is_bound_violation() => EXIT_BOUND,
            Failure::Protocol(_) => EXIT_PROTOCOL,
            Failure::Negative(_) => EXIT_NEGATIVE,
        }
    }
}

impl From<ViewError> for Failure {
    fn from(e: ViewError) -> Self {
        match e {
            ViewError::Protocol(p) => Failure::Protocol(p),
            other => Failure::Usage(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ENCON_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

struct Context {
    config: ExperimentConfig,
    out: PathBuf,
    format: Format,
}

impl Context {
    fn load(path: &Path, global: &GlobalOpts) -> Result<Self, Failure> {
        let mut config = load_config(path)?;
        if let Some(seed) = global.seed {
            config.seed = seed;
        }
        if let Some(b) = global.backend {
            config.backend = match b {
                BackendArg::ExactMask => BackendKind::ExactMask,
                BackendArg::Lattice => BackendKind::Lattice,
            };
        }
        let out = global
            .out
            .clone()
            .or_else(|| config.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        log::info!(
            "{}: N = {}, n = {}, backend {}, seed {}",
            path.display(),
            config.n_agents(),
            config.n,
            config.backend.as_str(),
            config.seed
        );
        Ok(Self {
            config,
            out,
            format: global.format,
        })
    }

    fn artifact(
        &self,
        name: &str,
        write: impl FnOnce(&mut BufWriter<File>) -> Result<(), ExportError>,
    ) -> Result<(), Failure> {
        let path = self.out.join(name);
        let io_err = |source| Failure::Io {
            path: path.clone(),
            source,
        };
        fs::create_dir_all(&self.out).map_err(io_err)?;
        let mut w = BufWriter::new(File::create(&path).map_err(io_err)?);
        write(&mut w)
            .and_then(|()| w.flush().map_err(ExportError::from))
            .map_err(|source| Failure::Export {
                path: path.clone(),
                source,
            })?;
        log::info!("wrote {}", path.display());
        Ok(())
    }

    /// Prints `rows` as CSV or as a JSON array, depending on `--format`.
    fn print<T: serde::Serialize>(&self, header: &[&str], rows: &[T]) -> Result<(), Failure> {
        let stdout = io::stdout().lock();
        match self.format {
            Format::Csv => write_csv(stdout, header, rows),
            Format::Json => write_json(stdout, rows),
        }
        .map_err(|source| Failure::Export {
            path: PathBuf::from("<stdout>"),
            source,
        })
    }

    fn print_json<T: serde::Serialize + ?Sized>(&self, value: &T) -> Result<(), Failure> {
        write_json(io::stdout().lock(), value).map_err(|source| Failure::Export {
            path: PathBuf::from("<stdout>"),
            source,
        })
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match &cli.command {
        Command::ValidateGraph { config } => validate_graph(&Context::load(config, g)?),
        Command::RunConsensus { config } => run_consensus(&Context::load(config, g)?),
        Command::RunMechanism { config } => run_mechanism(&Context::load(config, g)?),
        Command::SweepDeviations {
            config,
            deviator,
            horizons,
        } => sweep(&Context::load(config, g)?, *deviator, horizons),
        Command::VerifyTaxes { config, payments } => {
            let ctx = Context::load(config, g)?;
            let payments = read_payments(payments, ctx.config.n_agents())?;
            verify(&ctx, &payments)
        }
        Command::PrivacyTest {
            config,
            coalition,
            runs,
        } => privacy(&Context::load(config, g)?, coalition, *runs),
    }
}

fn validate_graph(ctx: &Context) -> Result<(), Failure> {
    let report = validate(&ctx.config.graph, ctx.config.min_in_neighbors);
    match ctx.format {
        Format::Json => ctx.print_json(&report)?,
        Format::Csv => {
            println!(
                "agents={} edges={} min_in_degree={} floor={}",
                report.n_agents, report.edges, report.min_in_degree, report.floor
            );
            for v in &report.violations {
                println!("violation: {}", serde_json::to_string(v).expect("serializable"));
            }
        }
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Negative(format!("graph fails validation with {} violation(s)", report.violations.len())))
    }
}

fn run_consensus(ctx: &Context) -> Result<(), Failure> {
    let start = Instant::now();
    let run = consensus_experiment(&ctx.config)?;
    log::info!("consensus finished in {:.3} s", start.elapsed().as_secs_f64());
    ctx.artifact("trajectory.csv", |w| write_trajectory_csv(w, &run.trajectories))?;
    ctx.artifact("transcript.jsonl", |w| write_transcript_jsonl(w, &run.transcript))?;
    ctx.artifact("bounds.json", |w| write_json(w, &run.bounds))?;
    let last = ctx.config.n as usize;
    let rows: Vec<_> = trajectory_rows(&run.trajectories)
        .into_iter()
        .filter(|r| r.round == last)
        .collect();
    ctx.print(&TRAJECTORY_HEADER, &rows)
}

fn run_mechanism(ctx: &Context) -> Result<(), Failure> {
    let start = Instant::now();
    let run = mechanism_experiment(&ctx.config)?;
    log::info!("mechanism finished in {:.3} s", start.elapsed().as_secs_f64());
    let outcome = &run.outcome;
    let verification = verify_taxes(&outcome.transfer, outcome_oracle(outcome, ctx.config.tau));
    let record = OutcomeRecord::new(outcome, verification.verdict);
    ctx.artifact("trajectory.csv", |w| write_trajectory_csv(w, &run.consensus.trajectories))?;
    ctx.artifact("outcome.json", |w| write_json(w, &record))?;
    ctx.artifact("outcome.csv", |w| write_outcome_csv(w, outcome))?;
    ctx.artifact("transcript.jsonl", |w| write_transcript_jsonl(w, run.transcript()))?;
    match ctx.format {
        Format::Csv => ctx.print(&OUTCOME_HEADER, &outcome_rows(outcome)),
        Format::Json => ctx.print_json(&record),
    }
}

fn sweep(ctx: &Context, deviator: usize, horizons: &[u32]) -> Result<(), Failure> {
    let n_agents = ctx.config.n_agents();
    if !(1..=n_agents).contains(&deviator) {
        return Err(Failure::Usage(format!("--deviator must be in 1..={n_agents}")));
    }
    if horizons.is_empty() {
        return Err(Failure::Usage("--horizons is empty".into()));
    }
    let cells = sweep_experiment(&ctx.config, deviator - 1, horizons)?;
    for failure in cells.iter().filter_map(|c| c.as_ref().err()) {
        log::warn!("{} {} at n = {}: {}", failure.strategy, failure.param, failure.n, failure.message);
    }
    ctx.artifact("sweep.csv", |w| write_sweep_csv(w, &cells))?;
    ctx.print(&SWEEP_HEADER, &sweep_rows(&cells))?;
    let last = *horizons.iter().max().expect("non-empty");
    let gain = max_profitable_gain(&cells, last);
    eprintln!("max profitable gain at n = {last}: {gain:.4}");
    if gain > ctx.config.gap_tolerance {
        Err(Failure::Negative(format!(
            "a deviation gains {gain:.4} > {} at n = {last}",
            ctx.config.gap_tolerance
        )))
    } else {
        Ok(())
    }
}

fn read_payments(path: &Path, n_agents: usize) -> Result<Vec<f64>, Failure> {
    let text = fs::read_to_string(path).map_err(|source| Failure::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |msg: String| Failure::Usage(format!("{}: {msg}", path.display()));
    let value: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let number = |v: &Value| v.as_f64().ok_or_else(|| bad(format!("{v} is not a number")));
    let payments = match &value {
        Value::Array(items) => items.iter().map(number).collect::<Result<Vec<f64>, _>>()?,
        Value::Object(map) => {
            let mut by_agent = BTreeMap::new();
            for (key, v) in map {
                let agent: usize = key
                    .parse()
                    .ok()
                    .filter(|a| (1..=n_agents).contains(a))
                    .ok_or_else(|| bad(format!("agent key {key:?} must be in 1..={n_agents}")))?;
                by_agent.insert(agent, number(v)?);
            }
            by_agent.into_values().collect()
        }
        _ => return Err(bad("expected an array or an object".into())),
    };
    if payments.len() != n_agents {
        return Err(bad(format!("expected {n_agents} payments, found {}", payments.len())));
    }
    Ok(payments)
}

fn verify(ctx: &Context, payments: &[f64]) -> Result<(), Failure> {
    let run = mechanism_experiment(&ctx.config)?;
    let verification = verify_taxes(payments, outcome_oracle(&run.outcome, ctx.config.tau));
    ctx.artifact("verification.json", |w| write_json(w, &verification))?;
    ctx.artifact("verification.jsonl", |w| write_transcript_jsonl(w, &verification.transcript))?;
    match ctx.format {
        Format::Json => ctx.print_json(&verification)?,
        Format::Csv => println!("verdict,query\n{},{}", verdict_word(verification.verdict), verification.query),
    }
    match verification.verdict {
        Verdict::Accept => Ok(()),
        Verdict::Reject => Err(Failure::Negative("payments rejected".into())),
    }
}

fn verdict_word(v: Verdict) -> &'static str {
    match v {
        Verdict::Accept => "ACCEPT",
        Verdict::Reject => "REJECT",
    }
}

fn privacy(ctx: &Context, coalition: &[usize], runs: usize) -> Result<(), Failure> {
    let n_agents = ctx.config.n_agents();
    if let Some(bad) = coalition.iter().find(|a| !(1..=n_agents).contains(*a)) {
        return Err(Failure::Usage(format!("coalition member {bad} must be in 1..={n_agents}")));
    }
    let members: Vec<usize> = coalition.iter().map(|a| a - 1).collect();
    let start = Instant::now();
    let report = privacy_experiment(&ctx.config, &members, runs)?;
    log::info!("{} runs x {} attempt(s) in {:.2} s", runs, report.attempts, start.elapsed().as_secs_f64());
    ctx.artifact("privacy.json", |w| write_json(w, &report))?;
    match ctx.format {
        Format::Json => ctx.print_json(&report)?,
        Format::Csv => {
            println!("receiver,sender,statistic,p_value");
            for p in &report.pairs {
                println!("{},{},{},{}", p.receiver.0, p.sender.0, p.statistic, p.p_value);
            }
        }
    }
    let kind = if report.control { "control coalition" } else { "coalition" };
    let verdict = if report.passed { "uniform" } else { "not uniform" };
    eprintln!("{kind} of size {} (h = {}): {verdict}, min p = {:.3e}", coalition.len(), report.threshold, report.min_p_value);
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Negative(format!("masked values of coalition {coalition:?} are not uniform")))
    }
}

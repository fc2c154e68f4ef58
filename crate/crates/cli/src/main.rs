use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pseudoscore::data::{generate_synthetic, write_dataset, SynthSpec};
use pseudoscore::pipeline::{render_summary, Command, Pipeline, PipelineConfig, PipelineError};
use pseudoscore::seed;

const CONFIG_ERROR: u8 = 1;
const RUNTIME_ERROR: u8 = 2;

/// Credit scoring with pseudo-social network features.
#[derive(Debug, Parser)]
#[command(name = "pseudoscore", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Write a synthetic dataset as four CSV files.
    Synth(SynthArgs),
    /// Ingest the data and build the bipartite and projected networks.
    BuildNet(Common),
    /// Compute every feature group from the cached networks.
    Featurize(Common),
    /// Cross-validate every model on every feature-group combination.
    Train(Common),
    /// Compute metrics, significance tests and importances.
    Evaluate(Common),
    /// Render the report of a finished run.
    Report(Common),
    /// Run every stage, reusing cached outputs.
    Run(Common),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Run directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Takes the generator settings and seed from `data.synthetic` when given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    users: Option<usize>,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let mut msg = e.to_string();
        let mut source = std::error::Error::source(&e);
        while let Some(s) = source {
            let text = s.to_string();
            if !msg.contains(&text) {
                msg.push_str(": ");
                msg.push_str(&text);
            }
            source = s.source();
        }
        if e.is_config() {
            Failure::Config(msg)
        } else {
            Failure::Runtime(msg)
        }
    }
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            let stage = record.target().rsplit("::").next().unwrap_or("pseudoscore");
            match record.level() {
                log::Level::Info => writeln!(buf, "[{stage}] {}", record.args()),
                level => writeln!(buf, "[{stage}] {}: {}", level.as_str().to_lowercase(), record.args()),
            }
        })
        .init();
}

fn set_threads(threads: Option<usize>) -> Result<(), Failure> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<PipelineConfig, Failure> {
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run_stage(args: &Common, cmd: Command) -> Result<(), Failure> {
    set_threads(args.threads)?;
    let cfg = load_config(&args.config, args.seed)?;
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Failure::Config("no run directory: pass --out or set `output` in the config".into()))?;
    let pipeline = Pipeline::new(cfg, out);
    if let Some(report) = pipeline.execute(cmd)? {
        print!("{}", render_summary(&report));
    }
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<(), Failure> {
    set_threads(args.threads)?;
    let (mut spec, mut root_seed, cfg_out) = match &args.config {
        Some(path) => {
            let cfg = load_config(path, None)?;
            let spec = cfg
                .data
                .synthetic
                .clone()
                .ok_or_else(|| Failure::Config("the config has no data.synthetic block".into()))?;
            (spec, cfg.seed, cfg.output.map(|o| o.join("synth")))
        }
        None => (SynthSpec::default(), 0, None),
    };
    if let Some(n) = args.users {
        spec.users = n;
    }
    if let Some(s) = args.seed {
        root_seed = s;
    }
    spec.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let out = args
        .out
        .clone()
        .or(cfg_out)
        .ok_or_else(|| Failure::Config("pass --out for the dataset files".into()))?;
    std::fs::create_dir_all(&out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    // same stream as the data stage of a run with this seed
    let dataset = generate_synthetic(&spec, seed::derive(root_seed, "data")).map_err(|e| Failure::Runtime(e.to_string()))?;
    let paths = write_dataset(&dataset, &out).map_err(|e| Failure::Runtime(e.to_string()))?;
    log::info!(
        target: "data",
        "{} users, {} usage rows, {} call events, {} loans written to {}",
        dataset.users.len(),
        dataset.app_usage.len(),
        dataset.calls.len(),
        dataset.loans.len(),
        paths.users.parent().unwrap_or(&out).display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(CONFIG_ERROR)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging();
    let result = match &cli.command {
        Cmd::Synth(a) => synth(a),
        Cmd::BuildNet(a) => run_stage(a, Command::BuildNet),
        Cmd::Featurize(a) => run_stage(a, Command::Featurize),
        Cmd::Train(a) => run_stage(a, Command::Train),
        Cmd::Evaluate(a) => run_stage(a, Command::Evaluate),
        Cmd::Report(a) => run_stage(a, Command::Report),
        Cmd::Run(a) => run_stage(a, Command::Run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(CONFIG_ERROR)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(RUNTIME_ERROR)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use doorbell_core::backends::DEFAULT_COLLECTION;
use doorbell_core::cloud::{http, CloudConfig, CloudService, CloudState, QueryKind, QueryRequest, TimeRange};
use doorbell_core::eval::{
    compare_backends, generate_dataset, run_experiment, simulate, write_csv, DatasetSpec, ExperimentConfig,
    ExperimentReport,
};
use doorbell_core::model::{DeviceId, FaceCategory};
use doorbell_core::Error;
use serde::Serialize;

/// Smart doorbell analytics simulator.
#[derive(Debug, Parser)]
#[command(name = "doorbell", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Overrides the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON configuration for the command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labelled frame manifest (NDJSON) from a dataset spec.
    GenDataset,
    /// Run the concurrent edge pipeline against a local cloud.
    Simulate {
        /// Cloud state to start from and write back.
        #[arg(long)]
        state: Option<PathBuf>,
        /// Where to write undeliverable records.
        #[arg(long)]
        dead_letters: Option<PathBuf>,
    },
    /// Run an experiment and write its report.
    Evaluate {
        /// Also write per-scenario metrics as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Rank backends from several experiment reports.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Serve the cloud API over HTTP until interrupted.
    ServeCloud {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long)]
        state: Option<PathBuf>,
    },
    /// Add a face to a collection in the saved cloud state.
    Enroll {
        #[arg(long)]
        identity: String,
        /// family, friend, visitor or unknown.
        #[arg(long)]
        category: String,
        #[arg(long, default_value = DEFAULT_COLLECTION)]
        collection: String,
        #[arg(long, default_value = "cloud-state.json")]
        state: PathBuf,
    },
    /// Ask what happened at a device.
    Query {
        /// latest-activity, daily-snapshot or range-query.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        device: String,
        #[arg(long)]
        from: Option<u64>,
        #[arg(long)]
        to: Option<u64>,
        #[arg(long, default_value = "cloud-state.json")]
        state: PathBuf,
    },
}

/// Exit 1 for bad input, 2 for failures while running.
#[derive(Debug)]
enum Failure {
    Invalid(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Validation(_)
            | Error::Dataset(_)
            | Error::Json(_)
            | Error::Conflict(_)
            | Error::NotFound(_)
            | Error::Routing(_) => Failure::Invalid(e),
            other => Failure::Runtime(other),
        }
    }
}

type CmdResult = Result<(), Failure>;

/// Errors reading the user's inputs are validation failures.
fn input<T>(r: doorbell_core::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Invalid)
}

fn require_config(g: &Global) -> Result<&Path, Failure> {
    g.config
        .as_deref()
        .ok_or_else(|| Failure::Invalid(Error::validation("--config is required")))
}

fn emit(out: Option<&Path>, text: &str) -> CmdResult {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Runtime(Error::io(p, e))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)? + "\n";
    emit(out, &text)
}

fn load_state(path: &Path) -> Result<CloudState, Failure> {
    if path.exists() {
        input(CloudState::load(path))
    } else {
        Ok(CloudState::default())
    }
}

fn save_state(cloud: &CloudService, path: &Path) -> CmdResult {
    cloud.state().save(path).map_err(Failure::Runtime)
}

fn load_experiment(g: &Global) -> Result<doorbell_core::eval::Experiment, Failure> {
    let mut cfg = input(ExperimentConfig::load(require_config(g)?))?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    input(cfg.into_experiment())
}

fn gen_dataset(g: &Global) -> CmdResult {
    let spec = match &g.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Invalid(Error::io(p, e)))?;
            serde_json::from_str(&text).map_err(|e| Failure::Invalid(e.into()))?
        }
        None => DatasetSpec::default(),
    };
    let dataset = generate_dataset(&spec, g.seed.unwrap_or(0))?;
    emit(g.out.as_deref(), &dataset.to_ndjson()?)?;
    if let Some(p) = &g.out {
        eprintln!("wrote {} frames to {}", dataset.len(), p.display());
    }
    Ok(())
}

fn simulate_cmd(g: &Global, state: Option<&Path>, dead_letters: Option<&Path>) -> CmdResult {
    let exp = load_experiment(g)?;
    let initial = match state {
        Some(p) => load_state(p)?,
        None => CloudState::default(),
    };
    let cloud = exp.build_cloud_with_state(initial)?;
    let (summary, out) = simulate(&exp, &cloud)?;
    if let Some(p) = state {
        save_state(&cloud, p)?;
    }
    if let Some(p) = dead_letters {
        let text = serde_json::to_string_pretty(&out.dead_letters).map_err(Error::from)? + "\n";
        std::fs::write(p, text).map_err(|e| Failure::Runtime(Error::io(p, e)))?;
    }
    emit_json(g.out.as_deref(), &summary)
}

fn evaluate(g: &Global, csv: Option<&Path>) -> CmdResult {
    let exp = load_experiment(g)?;
    let report = run_experiment(&exp)?;
    emit(g.out.as_deref(), &report.to_json()?)?;
    if let Some(p) = csv {
        let f = std::fs::File::create(p).map_err(|e| Failure::Runtime(Error::io(p, e)))?;
        write_csv(std::slice::from_ref(&report), f)?;
    }
    if g.out.is_some() {
        let m = &report.overall.metrics;
        eprintln!(
            "{}: accuracy {:.4}, f1 {}",
            report.backend_id,
            m.accuracy,
            m.f1.map(|f| format!("{f:.4}")).unwrap_or_else(|| "n/a".into())
        );
    }
    Ok(())
}

fn compare(g: &Global, paths: &[PathBuf], csv: Option<&Path>) -> CmdResult {
    let mut reports: Vec<ExperimentReport> = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(p).map_err(|e| Failure::Invalid(Error::io(p, e)))?;
        reports.push(serde_json::from_str(&text).map_err(|e| Failure::Invalid(e.into()))?);
    }
    let comparison = compare_backends(&reports)?;
    if let Some(p) = csv {
        let f = std::fs::File::create(p).map_err(|e| Failure::Runtime(Error::io(p, e)))?;
        write_csv(&reports, f)?;
    }
    emit_json(g.out.as_deref(), &comparison)
}

fn serve_cloud(g: &Global, addr: &str, state: Option<&Path>) -> CmdResult {
    let mut config = match &g.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Invalid(Error::io(p, e)))?;
            serde_json::from_str::<CloudConfig>(&text).map_err(|e| Failure::Invalid(e.into()))?
        }
        None => CloudConfig::default(),
    };
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    let initial = match state {
        Some(p) => load_state(p)?,
        None => CloudState::default(),
    };
    let cloud = CloudService::with_state(config, initial)?;
    cloud.faces().create_collection(DEFAULT_COLLECTION);
    let server = http::serve(addr, Arc::new(cloud))?;
    eprintln!("listening on {}", server.base_url());
    server.join();
    Ok(())
}

fn enroll(identity: &str, category: &str, collection: &str, state: &Path) -> CmdResult {
    let category = input(FaceCategory::parse(category))?;
    let cloud = CloudService::with_state(CloudConfig::default(), load_state(state)?)?;
    cloud.enroll_face(collection, identity, category)?;
    save_state(&cloud, state)?;
    println!("enrolled {identity} in {collection}");
    Ok(())
}

fn query(g: &Global, kind: &str, device: &str, from: Option<u64>, to: Option<u64>, state: &Path) -> CmdResult {
    let range = match (from, to) {
        (None, None) => None,
        (Some(from), Some(to)) => Some(TimeRange { from, to }),
        _ => return Err(Failure::Invalid(Error::validation("--from and --to go together"))),
    };
    let request = QueryRequest {
        kind: input(QueryKind::parse(kind))?,
        device_id: input(DeviceId::new(device))?,
        range,
    };
    let cloud = CloudService::with_state(CloudConfig::default(), load_state(state)?)?;
    let answer = cloud.answer_query(&request)?;
    match &g.out {
        Some(p) => emit_json(Some(p), &answer)?,
        None => println!("{}", answer.summary),
    }
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    let g = &cli.global;
    match &cli.command {
        Command::GenDataset => gen_dataset(g),
        Command::Simulate { state, dead_letters } => simulate_cmd(g, state.as_deref(), dead_letters.as_deref()),
        Command::Evaluate { csv } => evaluate(g, csv.as_deref()),
        Command::Compare { reports, csv } => compare(g, reports, csv.as_deref()),
        Command::ServeCloud { addr, state } => serve_cloud(g, addr, state.as_deref()),
        Command::Enroll {
            identity,
            category,
            collection,
            state,
        } => enroll(identity, category, collection, state),
        Command::Query {
            kind,
            device,
            from,
            to,
            state,
        } => query(g, kind, device, *from, *to, state),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = if cli.global.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            if let Error::Experiment {
                trace_dump: Some(p), ..
            } = &e
            {
                eprintln!("partial trace written to {}", p.display());
            }
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

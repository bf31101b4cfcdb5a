use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use speedloss::config::RunConfig;
use speedloss::data::{generate_synthetic, write_csv};
use speedloss::metrics::Scope;
use speedloss::pipeline::{self, RunOutcome};
use speedloss::Error;

#[derive(Parser)]
#[command(name = "speedloss", version, about = "Congestion-aware evaluation of traffic speed forecasting losses")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON); missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Speed CSV; overrides `data` in the config.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Output directory; overrides `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run seed; overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Error scope of the VaR columns; overrides `var_scope`.
    #[arg(long, global = true, value_enum)]
    var_scope: Option<VarScope>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VarScope {
    Congestion,
    Overall,
}

#[derive(Subcommand)]
enum Command {
    /// Classify every sensor's speed distribution as significantly bimodal or not.
    Bimodality,
    /// Detect change points on bimodal sensors and write interval masks.
    Changepoints,
    /// KDE curve and 1 mph histogram of one sensor.
    Histogram {
        #[arg(long)]
        sensor: String,
    },
    /// Train one linear baseline per configured loss.
    Train,
    /// Evaluate trained models on the test split.
    Evaluate,
    /// Run every stage end to end.
    Pipeline,
    /// Write the configured synthetic panel as CSV.
    Synth {
        /// Destination file; defaults to `<out>/synthetic.csv`.
        #[arg(long)]
        path: Option<PathBuf>,
    },
}

fn resolve(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &common.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(v) = common.var_scope {
        cfg.var_scope = match v {
            VarScope::Congestion => Scope::Congestion,
            VarScope::Overall => Scope::Overall,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

/// 2 for unreadable or invalid input, 1 for everything else.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::NonUniformTimestamps { .. }
        | Error::DuplicateSensor { .. }
        | Error::UnknownSensor(_)
        | Error::Config(_)
        | Error::Json(_)
        | Error::SplitTooSmall { .. }
        | Error::InsufficientRows { .. } => 2,
        _ => 1,
    }
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn finish_run(outcome: RunOutcome) -> ExitCode {
    print_paths(&outcome.written);
    for s in outcome.summary.losses.iter().filter(|s| !s.ok) {
        eprintln!("loss {} failed: {}", s.loss, s.error.as_deref().unwrap_or("unknown error"));
    }
    if outcome.summary.failures > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    let cfg = resolve(&cli.common)?;
    match cli.command {
        Command::Bimodality => {
            let (summary, written) = pipeline::cmd_bimodality(&cfg)?;
            print_paths(&written);
            println!(
                "{} of {} sensors significantly bimodal ({:.1}%)",
                summary.significant,
                summary.sensors,
                100.0 * summary.fraction
            );
        }
        Command::Changepoints => print_paths(&pipeline::cmd_changepoints(&cfg)?),
        Command::Histogram { sensor } => print_paths(&pipeline::cmd_histogram(&cfg, &sensor)?),
        Command::Train => return Ok(finish_run(pipeline::cmd_train(&cfg)?)),
        Command::Evaluate => return Ok(finish_run(pipeline::cmd_evaluate(&cfg)?)),
        Command::Pipeline => return Ok(finish_run(pipeline::cmd_pipeline(&cfg)?)),
        Command::Synth { path } => {
            let path = path.unwrap_or_else(|| cfg.out_dir.join("synthetic.csv"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let panel = generate_synthetic(&cfg.synthetic)?;
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_csv(&panel, std::io::BufWriter::new(file))?;
            println!("wrote {}", path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

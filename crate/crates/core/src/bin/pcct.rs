use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pcct::io::{self, Method, PipelineConfig, StageReport};
use pcct::Error;

#[derive(Parser)]
#[command(name = "pcct", version, about = "Photon-counting CT material decomposition pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    method: Option<MethodArg>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides every seed in the config (calibration uses seed + 1).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Scans the configured phantom and writes transmission sinograms.
    Simulate,
    /// Fits the detector response from slab scans.
    Calibrate,
    /// Estimates material pathlengths (MLE unless --method mace).
    Decompose,
    /// Filtered backprojection and virtual mono images.
    Reconstruct,
    /// ROI statistics and CNR, written to stats.csv.
    Evaluate,
    /// Runs every stage, skipping those already up to date.
    Pipeline,
}

#[derive(ValueEnum, Clone, Copy)]
enum MethodArg {
    Mle,
    Mace,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Mle => Method::Mle,
            MethodArg::Mace => Method::Mace,
        }
    }
}

fn print(report: &StageReport) {
    println!("{}", report.summary.trim_end());
}

fn run(cli: Cli) -> pcct::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::config("--threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config("--threads", e.to_string()))?;
    }
    let (mut config, base) = match &cli.config {
        Some(p) => (
            PipelineConfig::load(p)?,
            p.parent().map(PathBuf::from).unwrap_or_default(),
        ),
        None => (PipelineConfig::default(), PathBuf::from(".")),
    };
    if let Some(s) = cli.seed {
        config.seeds.simulate = s;
        config.seeds.calibrate = s.wrapping_add(1);
    }
    if let Some(out) = cli.out {
        config.output_dir = std::env::current_dir().map_err(|e| Error::io(".", e))?.join(out);
    }
    let setup = config.resolve(&base)?;
    let method: Option<Method> = cli.method.map(Into::into);
    match cli.command {
        Command::Simulate => print(&io::cmd_simulate(&setup)?),
        Command::Calibrate => print(&io::cmd_calibrate(&setup)?),
        Command::Decompose => print(&io::cmd_decompose(&setup, method.unwrap_or(Method::Mle))?),
        Command::Reconstruct => print(&io::cmd_reconstruct(&setup)?),
        Command::Evaluate => print(&io::cmd_evaluate(&setup)?),
        Command::Pipeline => {
            let methods: Vec<Method> = method.into_iter().collect();
            for r in io::cmd_pipeline(&setup, &methods)? {
                print(&r);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

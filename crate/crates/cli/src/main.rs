use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use vlmshape_core::{Fault, RunConfig};

mod commands;

/// Exit status for invalid configuration, unreadable inputs and usage errors.
const EXIT_INPUT: u8 = 2;
/// Exit status for failures after inputs were accepted.
const EXIT_RUNTIME: u8 = 1;

#[derive(Parser)]
#[command(name = "vlmshape", version, about = "Vision-language reward shaping experiments")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags that override fields of the JSON run configuration.
#[derive(Args, Debug, Default)]
pub struct Overrides {
    /// Run configuration (JSON). Missing fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Replaces the seed list with a single seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Projection strength in [0, 1].
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Weight of the shaping reward added to the task reward.
    #[arg(long, global = true)]
    pub rho: Option<f64>,
    /// Gate steepness.
    #[arg(long, global = true)]
    pub kappa: Option<f64>,
    /// Noise-floor quantile.
    #[arg(long, global = true)]
    pub m: Option<f64>,
    /// Goal similarity that counts toward a stage transition.
    #[arg(long, global = true)]
    pub transition_threshold: Option<f64>,
    /// Consecutive steps above the transition threshold.
    #[arg(long, global = true)]
    pub patience: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

impl Overrides {
    fn resolve(&self) -> vlmshape_core::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
            cfg.disentangle.train.seed = seed;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.rho {
            cfg.rho = v;
        }
        if let Some(v) = self.kappa {
            cfg.kappa = v;
        }
        if let Some(v) = self.m {
            cfg.quantile = v;
        }
        if let Some(v) = self.transition_threshold {
            cfg.transition_threshold = v;
        }
        if let Some(v) = self.patience {
            cfg.patience = v;
        }
        if let Some(v) = &self.out {
            cfg.output_dir = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Where observations come from: an embedding file plus manifest, or the
/// synthetic single-stage scenario.
#[derive(Args, Debug)]
pub struct SourceArgs {
    /// Embedding file; overrides the config's `dataset`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Stage manifest; overrides the config's `manifest`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Image ids to score, one per line. Defaults to every image entry.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Synthetic trajectory length.
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    /// Per-coordinate noise of synthetic observations.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Score a trajectory and print per-step rewards as CSV.
    Shape {
        #[command(flatten)]
        source: SourceArgs,
        /// Gate against this threshold instead of calibrating online.
        #[arg(long)]
        theta: Option<f64>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Estimate the noise-floor threshold from a score stream.
    Calibrate {
        #[command(flatten)]
        source: SourceArgs,
    },
    /// Q-learning on the gridworld, shaped and sparse arms.
    Train,
    /// Train the toy scene/view disentangler.
    Disentangle,
    /// Run the property suite and print a JSON report.
    Verify {
        /// Deliberately break one component to confirm the suite catches it.
        #[arg(long, value_enum)]
        inject_fault: Option<FaultArg>,
        /// Also write the report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Embed texts and images through a remote service into an embedding file.
    Fetch {
        /// Base URL of the embedding service; requests go to `<endpoint>/embed`.
        #[arg(long)]
        endpoint: String,
        /// Text file with one string per line; each line is also its id.
        #[arg(long)]
        texts: Option<PathBuf>,
        /// Image files; ids are the file names.
        #[arg(long, num_args = 1..)]
        images: Vec<PathBuf>,
        /// Embedding file to write.
        #[arg(long)]
        output: PathBuf,
        /// Tries per request, counting the first.
        #[arg(long, default_value_t = 3)]
        attempts: u32,
        /// Environment variable holding a bearer token.
        #[arg(long, default_value = "VLMSHAPE_TOKEN")]
        token_env: String,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FaultArg {
    AlphaOffByOne,
}

impl From<FaultArg> for Fault {
    fn from(f: FaultArg) -> Self {
        match f {
            FaultArg::AlphaOffByOne => Fault::AlphaOffByOne,
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use vlmshape_core::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::Network(_) | E::BadResponse(_) | E::Diverged { .. } | E::NonFinite(_)) => EXIT_RUNTIME,
        _ => EXIT_INPUT,
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = cli.overrides.resolve()?;
    match cli.command {
        Command::Shape { source, theta, output } => commands::shape(&cfg, &source, theta, output.as_deref()),
        Command::Calibrate { source } => commands::calibrate(&cfg, &source),
        Command::Train => commands::train(&cfg),
        Command::Disentangle => commands::disentangle(&cfg),
        Command::Verify { inject_fault, report } => {
            let fault = inject_fault.map(Fault::from).unwrap_or_default();
            return commands::verify(&cfg, fault, report.as_deref());
        }
        Command::Fetch {
            endpoint,
            texts,
            images,
            output,
            attempts,
            token_env,
        } => commands::fetch(&endpoint, texts.as_deref(), &images, &output, attempts, &token_env),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

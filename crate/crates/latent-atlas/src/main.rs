//! `latent-atlas` — config-driven latent-space analytics.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use latent_atlas::pipeline::artifacts::RunLayout;
use latent_atlas::pipeline::config::PipelineConfig;
use latent_atlas::pipeline::report::{plan, run_named_stage, run_pipeline};
use latent_atlas::pipeline::stages::{self, MapOptions};
use latent_atlas::statmap::CorrMethod;
use latent_atlas::Error;

#[derive(Parser)]
#[command(name = "latent-atlas", version, about = "Maps emergent properties in high-dimensional data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Pipeline configuration (JSON).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Output directory (overrides the config and LATENT_ATLAS_OUT).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (overrides the config and LATENT_ATLAS_THREADS).
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage the configuration calls for.
    Run(Common),
    /// Load, split, scale, and persist the datasets.
    Ingest(Common),
    /// Fit the embedding on the embedding split.
    Embed(Common),
    /// Project the statistics and prediction splits into the fitted space.
    Transform(Common),
    /// Discretize the embedding at an automatically chosen resolution.
    Dls(Common),
    /// Compute statistical maps and extract clusters.
    Map {
        #[command(flatten)]
        common: Common,
        /// Only this target.
        #[arg(long)]
        target: Option<String>,
        /// Correlation method (pearson | point-biserial).
        #[arg(long)]
        method: Option<String>,
    },
    /// Profile per-feature effect sizes for every cluster.
    Profile {
        #[command(flatten)]
        common: Common,
        /// Only this target.
        #[arg(long)]
        target: Option<String>,
    },
    /// Train the cross-validated predictor.
    Train(Common),
    /// Predict the prediction split with the trained model.
    Predict(Common),
    /// Assemble the run report from the artifacts on disk.
    Report(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Run(c)
            | Command::Ingest(c)
            | Command::Embed(c)
            | Command::Transform(c)
            | Command::Dls(c)
            | Command::Train(c)
            | Command::Predict(c)
            | Command::Report(c) => c,
            Command::Map { common, .. } | Command::Profile { common, .. } => common,
        }
    }
}

fn parse_method(raw: &str) -> Result<CorrMethod, Error> {
    match raw {
        "pearson" => Ok(CorrMethod::Pearson),
        "point-biserial" => Ok(CorrMethod::PointBiserial),
        other => Err(Error::Config(format!(
            "unknown method `{other}`; expected pearson or point-biserial"
        ))),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let common = cli.command.common();
    let rc = PipelineConfig::load(&common.config, common.out.clone(), common.threads)?;
    if let Some(threads) = rc.config.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let layout = RunLayout::new(&rc.output_dir);
    match &cli.command {
        Command::Run(_) => {
            let report = run_pipeline(&rc)?;
            println!("completed stages: {}", report.stages_completed.join(", "));
            for warning in &report.warnings {
                eprintln!("warning: {warning}");
            }
            println!("report: {}", layout.report().display());
        }
        Command::Map { target, method, .. } => {
            let opts = MapOptions {
                target: target.clone(),
                method: method.as_deref().map(parse_method).transpose()?,
            };
            stages::run_stage(&layout, "map", || stages::map(&rc, &layout, &opts))?;
        }
        Command::Profile { target, .. } => {
            stages::run_stage(&layout, "profile", || {
                stages::profile(&rc, &layout, target.as_deref())
            })?;
        }
        Command::Ingest(_) => run_named_stage(&rc, &layout, "ingest")?,
        Command::Embed(_) => run_named_stage(&rc, &layout, "embed")?,
        Command::Transform(_) => run_named_stage(&rc, &layout, "transform")?,
        Command::Dls(_) => run_named_stage(&rc, &layout, "dls")?,
        Command::Train(_) => {
            if !plan(&rc).contains(&"train") {
                return Err(Error::Invalid(
                    "no split has targets to train the predictor on".into(),
                ));
            }
            run_named_stage(&rc, &layout, "train")?;
        }
        Command::Predict(_) => run_named_stage(&rc, &layout, "predict")?,
        Command::Report(_) => run_named_stage(&rc, &layout, "report")?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

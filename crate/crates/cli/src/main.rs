use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use opid_core::cstage::{AccumulationMode, CStageStats};
use opid_core::ensemble::Combination;
use opid_core::harness::{
    emit_report, parse_records, run_experiment, DataSource, ExperimentSpec, HyperGrid, Method,
    ResultTable,
};
use opid_core::ingest::{
    generate_synthetic, parse_manifest, stream_batches_from, write_stream, SignalFractions,
    SynthConfig,
};
use opid_core::model::save_json;
use opid_core::{FeatureSchema, Hyperparams};

#[derive(Parser)]
#[command(
    name = "opid",
    version,
    about = "One-pass learning with vanishing and augmented features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic evolving-feature stream and its manifest.
    Synth {
        #[command(flatten)]
        synth: SynthArgs,
        /// Output directory for the data files and manifest.toml.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the compressing stage over a manifest and save statistics and model.
    Cstage {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        mode: Option<AccumulationMode>,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 0.1)]
        rho: f64,
        /// Resume from a saved statistics snapshot instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Output directory for stats.json and cstage_model.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full experiment protocol and write a report.
    Run(RunArgs),
    /// Re-render report.txt from a records.csv file.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct SynthArgs {
    #[arg(long, default_value_t = 25)]
    dv: usize,
    #[arg(long, default_value_t = 50)]
    ds: usize,
    #[arg(long, default_value_t = 25)]
    da: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Number of C-stage batches.
    #[arg(long, default_value_t = 10)]
    batches: usize,
    #[arg(long, default_value_t = 120)]
    batch_size: usize,
    /// Size of each E-stage part (train and test).
    #[arg(long, default_value_t = 60)]
    estage_n: usize,
    #[arg(long, default_value_t = 0.5)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 1.0)]
    signal_v: f64,
    #[arg(long, default_value_t = 1.0)]
    signal_s: f64,
    #[arg(long, default_value_t = 1.0)]
    signal_a: f64,
    /// Seeds both the synthetic generator and the E-stage splits.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SynthArgs {
    fn config(&self) -> Result<SynthConfig> {
        Ok(SynthConfig {
            schema: FeatureSchema::new(self.dv, self.ds, self.da, self.classes)?,
            batches: self.batches,
            n_per_batch: self.batch_size,
            estage_n: self.estage_n,
            separation: self.separation,
            noise: self.noise,
            signal: SignalFractions {
                vanished: self.signal_v,
                survived: self.signal_s,
                augmented: self.signal_a,
            },
            seed: self.seed,
        })
    }
}

#[derive(Args)]
struct RunArgs {
    /// Stream manifest; without it a synthetic stream is generated.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    synth: SynthArgs,
    #[arg(long)]
    mode: Option<AccumulationMode>,
    /// Comma-separated subset of OPID,OPIDe,BASE_ALL,BASE_S,BASE_A.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "OPID,OPIDe,BASE_ALL,BASE_S,BASE_A"
    )]
    methods: Vec<Method>,
    /// Comma-separated grid; more than one value triggers cross validation.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    lambda: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    rho: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    gamma: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    alpha: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Combine ensemble members by raw scores instead of probabilities.
    #[arg(long)]
    score_average: bool,
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth { synth, out } => {
            let stream = generate_synthetic(&synth.config()?)?;
            let manifest = write_stream(&out, &stream)?;
            println!("{}", manifest.display());
        }
        Command::Cstage {
            manifest,
            mode,
            lambda,
            rho,
            resume,
            out,
        } => {
            let manifest = parse_manifest(&manifest)?;
            let mut stats = match resume {
                Some(path) => {
                    let stats = CStageStats::load(&path)?;
                    if stats.schema() != &manifest.schema {
                        bail!("snapshot schema does not match the manifest");
                    }
                    stats
                }
                None => {
                    let h = Hyperparams {
                        lambda,
                        rho,
                        ..Hyperparams::default()
                    };
                    let mode =
                        mode.unwrap_or_else(|| AccumulationMode::for_schema(&manifest.schema));
                    CStageStats::new(manifest.schema, &h, mode)?
                }
            };
            for batch in stream_batches_from(&manifest, stats.batches()) {
                stats.absorb(&batch?)?;
            }
            info!("absorbed {} batches", stats.batches());
            std::fs::create_dir_all(&out)?;
            stats.save(&out.join("stats.json"))?;
            save_json(&out.join("cstage_model.json"), &stats.solve()?)?;
            println!("{}", out.display());
        }
        Command::Run(args) => {
            let source = match &args.manifest {
                Some(path) => DataSource::Manifest(path.clone()),
                None => DataSource::Synthetic(args.synth.config()?),
            };
            let spec = ExperimentSpec {
                source,
                methods: args.methods,
                grid: HyperGrid {
                    lambda: args.lambda,
                    rho: args.rho,
                    gamma: args.gamma,
                    alpha: args.alpha,
                },
                repeats: args.repeats,
                seed: args.synth.seed,
                mode: args.mode,
                folds: args.folds,
                combination: if args.score_average {
                    Combination::Score
                } else {
                    Combination::Probability
                },
            };
            let table = run_experiment(&spec)?;
            let (report, _) = emit_report(&table, &args.out)?;
            print!("{}", std::fs::read_to_string(report)?);
            return Ok(table.aborted.is_empty());
        }
        Command::Report { input, out } => {
            let methods = parse_records(&input)?;
            let table = ResultTable::from_results(methods, Vec::new())?;
            let (report, _) = emit_report(&table, &out)?;
            print!("{}", std::fs::read_to_string(report)?);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more repeats were aborted");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

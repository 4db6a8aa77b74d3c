//! Command-line front end. Every flag has a config-file key of the same
//! meaning; flags are applied after the file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pdc_core::metrics::EvalConfig;
use pdc_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::checkpoint::Checkpoint;
use crate::config::{parse_assignment, resolve};
use crate::dataset::{generate_dataset, DatasetDir, GenerateConfig};
use crate::error::{Failure, Result};
use crate::experiment::{compare_report, run_experiment, ExperimentSpec, RESULTS_CSV, RESULTS_TABLE};
use crate::run::{evaluate_on_test, train_to_dir, write_record, RunRecord};

#[derive(Parser, Debug)]
#[command(name = "pdc", version, about = "Dual-head semi-supervised 3D segmentation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default)]
pub struct Common {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra override as a dotted key path, e.g. `train.momentum=0.8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic dataset and its manifest.
    GenerateData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        /// Edge length of the cubic volumes.
        #[arg(long)]
        shape: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long)]
        labeled_fraction: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one variant and write its log and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        iterations: Option<u64>,
        /// Seeds the split (with --labeled-fraction), data order and initialization.
        #[arg(long)]
        seed: Option<u64>,
        /// Re-split the training pool instead of using the manifest's split.
        #[arg(long)]
        labeled_fraction: Option<f64>,
        /// Edge length of the cubic training crops.
        #[arg(long)]
        crop: Option<usize>,
    },
    /// Evaluate a checkpoint on the manifest's test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Also write the JSON record here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Run a variant × fraction × seed sweep.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        crop: Option<usize>,
    },
    /// Compare pdc against vnet_gc across result CSVs.
    Report {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateJob {
    pub out: PathBuf,
    #[serde(flatten)]
    pub generate: GenerateConfig,
}

impl Default for GenerateJob {
    fn default() -> Self {
        Self { out: PathBuf::from("data"), generate: GenerateConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainJob {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub labeled_fraction: Option<f64>,
    /// When set, replaces `train.seed` and `train.network.seed`.
    pub seed: Option<u64>,
    pub train: TrainConfig,
}

impl Default for TrainJob {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("data"),
            out: PathBuf::from("run"),
            labeled_fraction: None,
            seed: None,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalJob {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub out: Option<PathBuf>,
    pub eval: EvalConfig,
}

fn overrides(common: &Common, flags: Vec<(&str, Option<Value>)>) -> Result<Vec<(String, Value)>> {
    let mut out: Vec<(String, Value)> = common.set.iter().map(|s| parse_assignment(s)).collect::<Result<_>>()?;
    out.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
    Ok(out)
}

fn cube(v: Option<usize>) -> Option<Value> {
    v.map(|s| json!([s, s, s]))
}

fn path_value(p: &Option<PathBuf>) -> Option<Value> {
    p.as_ref().map(|p| json!(p.to_string_lossy()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Failure::write(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::write(path, e))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData { common, n, shape, seed, noise_sigma, labeled_fraction, out } => {
            let ov = overrides(
                &common,
                vec![
                    ("n", n.map(|v| json!(v))),
                    ("synthetic.shape", cube(shape)),
                    ("seed", seed.map(|v| json!(v))),
                    ("synthetic.noise_sigma", noise_sigma.map(|v| json!(v))),
                    ("labeled_fraction", labeled_fraction.map(|v| json!(v))),
                    ("out", path_value(&out)),
                ],
            )?;
            let job: GenerateJob = resolve(common.config.as_deref(), &ov)?;
            let m = generate_dataset(&job.generate, &job.out)?;
            eprintln!(
                "wrote {} volumes to {} ({} labeled, {} unlabeled, {} test)",
                m.samples.len(),
                job.out.display(),
                m.splits.train_labeled.len(),
                m.splits.train_unlabeled.len(),
                m.splits.test.len()
            );
        }
        Command::Train { common, manifest, out, variant, iterations, seed, labeled_fraction, crop } => {
            let ov = overrides(
                &common,
                vec![
                    ("manifest", path_value(&manifest)),
                    ("out", path_value(&out)),
                    ("train.variant", variant.map(|v| json!(v))),
                    ("train.total_iterations", iterations.map(|v| json!(v))),
                    ("seed", seed.map(|v| json!(v))),
                    ("labeled_fraction", labeled_fraction.map(|v| json!(v))),
                    ("train.crop", cube(crop)),
                ],
            )?;
            let mut job: TrainJob = resolve(common.config.as_deref(), &ov)?;
            if let Some(s) = job.seed {
                job.train.seed = s;
                job.train.network.seed = s;
            }
            let data = DatasetDir::open(&job.manifest)?;
            let (labeled, unlabeled) = data.training_split(job.labeled_fraction, job.train.seed)?;
            let run = train_to_dir(&job.train, &data, &labeled, &unlabeled, &job.out)?;
            let resolved = serde_json::to_string_pretty(&job).expect("job serializes") + "\n";
            write_text(&job.out.join("config.json"), &resolved)?;
            let last = run.log.last().expect("at least one log row");
            eprintln!(
                "trained {} for {} iterations: loss_s {:.4}, qcd {:.4}; checkpoint {}",
                job.train.variant.name(),
                job.train.total_iterations,
                last.loss_s,
                last.qcd,
                run.checkpoint.display()
            );
        }
        Command::Evaluate { common, checkpoint, manifest, out, window, stride } => {
            let ov = overrides(
                &common,
                vec![
                    ("checkpoint", path_value(&checkpoint)),
                    ("manifest", path_value(&manifest)),
                    ("out", path_value(&out)),
                    ("eval.window", cube(window)),
                    ("eval.stride", cube(stride)),
                ],
            )?;
            let job: EvalJob = resolve(common.config.as_deref(), &ov)?;
            let ck = Checkpoint::load(&job.checkpoint)?;
            let data = DatasetDir::open(&job.manifest)?;
            let report = evaluate_on_test(&ck.params, &data, &job.eval)?;
            let record =
                RunRecord { report, config_hash: ck.config_hash(), checkpoint: job.checkpoint.to_string_lossy().into_owned() };
            println!("{}", serde_json::to_string_pretty(&record).expect("record serializes"));
            if let Some(path) = &job.out {
                write_record(path, &record)?;
            }
        }
        Command::Ablate { common, manifest, out, variants, fractions, seeds, iterations, crop } => {
            let ov = overrides(
                &common,
                vec![
                    ("manifest", path_value(&manifest)),
                    ("out", path_value(&out)),
                    ("variants", variants.map(|v| json!(v))),
                    ("fractions", fractions.map(|v| json!(v))),
                    ("seeds", seeds.map(|v| json!(v))),
                    ("train.total_iterations", iterations.map(|v| json!(v))),
                    ("train.crop", cube(crop)),
                ],
            )?;
            let spec: ExperimentSpec = resolve(common.config.as_deref(), &ov)?;
            run_experiment(&spec, &mut |r| {
                eprintln!(
                    "{} fraction {} seed {}: dice {:.2}%",
                    r.variant,
                    r.fraction,
                    r.seed,
                    100.0 * r.dice
                )
            })?;
            let table = std::fs::read_to_string(spec.out.join(RESULTS_TABLE)).unwrap_or_default();
            print!("{table}");
            eprintln!("results in {}", spec.out.join(RESULTS_CSV).display());
        }
        Command::Report { csv, out } => {
            let (_, text) = compare_report(&csv)?;
            print!("{text}");
            if let Some(path) = out {
                write_text(&path, &text)?;
            }
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and maps failures to exit codes.
pub fn main_with_args<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

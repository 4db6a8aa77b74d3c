//! Single training runs and evaluations backed by files.

use std::fs::File;
use std::path::{Path, PathBuf};

use pdc_core::data::Dataset;
use pdc_core::metrics::{evaluate, EvalConfig, MetricsReport};
use pdc_core::trainer::{train_run, LogRow, RunObserver, TrainConfig};
use pdc_core::volnet::ParameterStore;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{checkpoint_name, Checkpoint, CheckpointConfig};
use crate::dataset::DatasetDir;
use crate::error::{Failure, Result};

pub const LOG_FILE: &str = "log.csv";
pub const REPORT_FILE: &str = "report.json";

/// Streams log rows to CSV and checkpoints to `ckpt_<iter>.bin`.
struct DirObserver {
    dir: PathBuf,
    log: csv::Writer<File>,
    config: CheckpointConfig,
    last_checkpoint: Option<PathBuf>,
}

fn sink(path: &Path, e: impl std::fmt::Display) -> pdc_core::Error {
    pdc_core::Error::Sink(format!("{}: {e}", path.display()))
}

impl RunObserver<f32> for DirObserver {
    fn on_log(&mut self, row: &LogRow) -> pdc_core::Result<()> {
        let path = self.dir.join(LOG_FILE);
        self.log.serialize(row).map_err(|e| sink(&path, e))?;
        self.log.flush().map_err(|e| sink(&path, e))
    }

    fn on_checkpoint(&mut self, iteration: u64, params: &ParameterStore<f32>) -> pdc_core::Result<()> {
        let path = self.dir.join(checkpoint_name(iteration));
        let ck = Checkpoint::new(iteration, &self.config, params.clone());
        std::fs::write(&path, ck.to_bytes()).map_err(|e| sink(&path, e))?;
        self.last_checkpoint = Some(path);
        Ok(())
    }
}

/// Outcome of [`train_to_dir`].
pub struct TrainedRun {
    pub checkpoint: PathBuf,
    pub params: ParameterStore<f32>,
    pub log: Vec<LogRow>,
    pub config_hash: String,
}

/// Trains on the given split and writes the log and checkpoints into `dir`.
pub fn train_to_dir(
    cfg: &TrainConfig,
    data: &DatasetDir,
    labeled: &[String],
    unlabeled: &[String],
    dir: &Path,
) -> Result<TrainedRun> {
    cfg.validate()?;
    let unlabeled: &[String] = if cfg.variant.uses_unlabeled() { unlabeled } else { &[] };
    let ds = Dataset::new(data.read_all(labeled, true)?, data.read_all(unlabeled, false)?)?;
    std::fs::create_dir_all(dir).map_err(|e| Failure::write(dir, e))?;
    let log_path = dir.join(LOG_FILE);
    let log = csv::Writer::from_path(&log_path).map_err(|e| Failure::write(&log_path, e))?;
    let config = CheckpointConfig { network: cfg.network.clone(), train: Some(cfg.clone()), labeled: labeled.to_vec() };
    let config_hash = crate::checkpoint::config_hash(&config.to_json());
    let mut obs = DirObserver { dir: dir.to_path_buf(), log, config, last_checkpoint: None };
    let out = train_run::<f32>(cfg, &ds, &mut obs)?;
    let checkpoint = obs.last_checkpoint.ok_or_else(|| Failure::Runtime("training wrote no checkpoint".into()))?;
    Ok(TrainedRun { checkpoint, params: out.params, log: out.log, config_hash })
}

/// One evaluation record as written to `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    #[serde(flatten)]
    pub report: MetricsReport,
    pub config_hash: String,
    pub checkpoint: String,
}

/// Evaluates parameters on the manifest's test split.
pub fn evaluate_on_test(params: &ParameterStore<f32>, data: &DatasetDir, eval: &EvalConfig) -> Result<MetricsReport> {
    let test = data.read_all(&data.manifest.splits.test, true)?;
    Ok(evaluate(params, &test, eval)?)
}

pub fn write_record(path: &Path, record: &RunRecord) -> Result<()> {
    let text = serde_json::to_string_pretty(record).expect("record serializes") + "\n";
    std::fs::write(path, text).map_err(|e| Failure::write(path, e))
}

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{learning_rate, train_step, PhaseOptimizers, TrainConfig};
use crate::data::{BatchComposer, Dataset};
use crate::error::{Error, Result};
use crate::metrics::head_coupling;
use crate::objectives::LossBundle;
use crate::real::Real;
use crate::volnet::{build_network, ParameterStore};

/// One line of the training log: losses and weights of iteration `iter`, and
/// CD/QCD of the parameters after it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: u64,
    pub loss_s: f64,
    pub loss_c: f64,
    pub loss_pd: f64,
    pub lambda_c: f64,
    pub lambda_pd: f64,
    pub lr: f64,
    pub cd: f64,
    pub qcd: f64,
}

impl LogRow {
    pub const HEADER: [&'static str; 9] = ["iter", "loss_s", "loss_c", "loss_pd", "lambda_c", "lambda_pd", "lr", "cd", "qcd"];
}

/// Receives log rows and checkpoints as training progresses.
pub trait RunObserver<T> {
    fn on_log(&mut self, _row: &LogRow) -> Result<()> {
        Ok(())
    }

    /// `iteration` is the number of completed iterations.
    fn on_checkpoint(&mut self, _iteration: u64, _params: &ParameterStore<T>) -> Result<()> {
        Ok(())
    }
}

pub struct NullObserver;

impl<T> RunObserver<T> for NullObserver {}

#[derive(Clone, Debug)]
pub struct RunOutput<T> {
    pub params: ParameterStore<T>,
    pub log: Vec<LogRow>,
    pub last_losses: LossBundle,
}

/// Trains a freshly initialized network for `cfg.total_iterations` steps.
pub fn train_run<T: Real>(cfg: &TrainConfig, data: &Dataset, observer: &mut dyn RunObserver<T>) -> Result<RunOutput<T>> {
    cfg.validate()?;
    let (nl, nu) = (cfg.labeled_count(), cfg.unlabeled_count());
    if data.n_labeled() < nl || data.n_unlabeled() < nu {
        return Err(Error::Data(format!(
            "batch needs {nl} labeled and {nu} unlabeled volumes, dataset has {} and {}",
            data.n_labeled(),
            data.n_unlabeled()
        )));
    }
    let mut params = build_network::<T>(&cfg.network)?;
    let mut opt = PhaseOptimizers::new(&params);
    let mut composer = BatchComposer::new(data, cfg.seed);
    let mut log = Vec::new();
    let mut last = LossBundle::default();
    for t in 0..cfg.total_iterations {
        let (labeled, unlabeled) = composer.compose_batch(data, nl, nu, cfg.crop)?;
        last = train_step(&mut params, &mut opt, &labeled, &unlabeled, cfg, t, &mut |_, _, _| {})?;
        let done = t + 1;
        if t % cfg.log_every == 0 || done == cfg.total_iterations {
            let c = head_coupling(&params)?;
            let row = LogRow {
                iter: t,
                loss_s: last.supervised,
                loss_c: last.consistency,
                loss_pd: last.decoupling,
                lambda_c: last.lambda_c,
                lambda_pd: last.lambda_pd,
                lr: learning_rate(t, cfg),
                cd: c.cd,
                qcd: c.qcd,
            };
            observer.on_log(&row)?;
            log.push(row);
        }
        if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) || done == cfg.total_iterations {
            observer.on_checkpoint(done, &params)?;
        }
    }
    Ok(RunOutput { params, log, last_losses: last })
}

//! Alternating optimization: supervised, decoupling and consistency phases
//! with group-restricted momentum SGD.

mod run;
mod step;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{ramp_weight, LossParams};
use crate::real::Real;
use crate::tensor::Dims3;
use crate::volnet::{EntryKind, Gradients, GroupSet, NetworkConfig, ParameterStore};

pub use run::{train_run, LogRow, NullObserver, RunObserver, RunOutput};
pub use step::{train_step, PhaseOptimizers};

/// Training recipe being compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Supervised loss on labeled data only.
    SupervisedOnly,
    /// One joint step on supervised + consistency loss over all parameters.
    VnetGc,
    /// Consistency loss updates the extractor alone; no decoupling.
    VnetEc,
    /// Extractor-only consistency plus head decoupling.
    Pdc,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::SupervisedOnly, Variant::VnetGc, Variant::VnetEc, Variant::Pdc];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SupervisedOnly => "supervised_only",
            Variant::VnetGc => "vnet_gc",
            Variant::VnetEc => "vnet_ec",
            Variant::Pdc => "pdc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    /// Whether the variant trains on unlabeled volumes.
    pub fn uses_unlabeled(self) -> bool {
        self != Variant::SupervisedOnly
    }
}

/// One of the three per-iteration updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Supervised loss on labeled samples; updates every group.
    Supervised,
    /// Weighted decoupling loss on head parameters; updates the heads.
    Decoupling,
    /// Weighted consistency loss on the full batch; updates the extractor.
    Consistency,
}

impl Phase {
    fn slot(self) -> usize {
        match self {
            Phase::Supervised => 0,
            Phase::Decoupling => 1,
            Phase::Consistency => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub network: NetworkConfig,
    pub total_iterations: u64,
    pub base_lr: f64,
    pub lr_decay_every: u64,
    pub lr_decay_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Labeled samples per batch; defaults to half the batch, or the whole
    /// batch for `supervised_only`.
    pub labeled_per_batch: Option<usize>,
    /// Warm-up length of both loss weights; defaults to `total_iterations`.
    pub ramp_t_max: Option<u64>,
    pub lambda_c_scale: f64,
    pub lambda_pd_scale: f64,
    /// The decoupling phase runs on iterations divisible by this.
    pub decouple_every: u64,
    pub phase_order: [Phase; 3],
    pub crop: Dims3,
    /// Drives data order and augmentation; initialization uses `network.seed`.
    pub seed: u64,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub loss: LossParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Pdc,
            network: NetworkConfig::default(),
            total_iterations: 6000,
            base_lr: 0.01,
            lr_decay_every: 2500,
            lr_decay_factor: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 4,
            labeled_per_batch: None,
            ramp_t_max: None,
            lambda_c_scale: 0.1,
            lambda_pd_scale: 0.1,
            decouple_every: 1,
            phase_order: [Phase::Supervised, Phase::Decoupling, Phase::Consistency],
            crop: [32; 3],
            seed: 0,
            checkpoint_every: 0,
            log_every: 1,
            loss: LossParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn labeled_count(&self) -> usize {
        match (self.labeled_per_batch, self.variant) {
            (Some(n), _) => n,
            (None, Variant::SupervisedOnly) => self.batch_size,
            (None, _) => self.batch_size / 2,
        }
    }

    pub fn unlabeled_count(&self) -> usize {
        if self.variant.uses_unlabeled() {
            self.batch_size.saturating_sub(self.labeled_count())
        } else {
            0
        }
    }

    pub fn ramp_t_max(&self) -> u64 {
        self.ramp_t_max.unwrap_or(self.total_iterations)
    }

    pub fn lambda_c(&self, t: u64) -> Result<f64> {
        ramp_weight(t, self.ramp_t_max(), self.lambda_c_scale)
    }

    pub fn lambda_pd(&self, t: u64) -> Result<f64> {
        ramp_weight(t, self.ramp_t_max(), self.lambda_pd_scale)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        let nl = self.labeled_count();
        if self.batch_size == 0 || nl == 0 || nl > self.batch_size {
            return bad("labeled_per_batch must be in [1, batch_size]");
        }
        if self.variant.uses_unlabeled() && nl >= self.batch_size {
            return bad("semi-supervised variants need at least one unlabeled sample per batch");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return bad("lr_decay_factor must be in (0, 1)");
        }
        if !(self.base_lr > 0.0) || self.lr_decay_every == 0 {
            return bad("base_lr must be positive and lr_decay_every nonzero");
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("momentum must be in [0, 1) and weight_decay non-negative");
        }
        if !(self.lambda_c_scale >= 0.0) || !(self.lambda_pd_scale >= 0.0) {
            return bad("loss weight scales must be non-negative");
        }
        if self.ramp_t_max() == 0 || self.decouple_every == 0 || self.log_every == 0 {
            return bad("ramp_t_max, decouple_every and log_every must be nonzero");
        }
        let mut seen = [false; 3];
        for p in self.phase_order {
            seen[p.slot()] = true;
        }
        if seen.contains(&false) {
            return bad("phase_order must list every phase once");
        }
        let div = self.network.spatial_divisor();
        if self.crop.iter().any(|&c| c == 0 || c % div != 0) {
            return Err(Error::Config(format!("crop {:?} must be a positive multiple of {div}", self.crop)));
        }
        Ok(())
    }
}

/// Step-decayed learning rate `base·factor^⌊t / every⌋`.
pub fn learning_rate(t: u64, cfg: &TrainConfig) -> f64 {
    let k = (t / cfg.lr_decay_every) as i32;
    cfg.base_lr * num_traits::Float::powi(cfg.lr_decay_factor, k)
}

/// Momentum and weight decay of one update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdParams {
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Momentum buffers aligned with the entries of a [`ParameterStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub buffers: Vec<Vec<T>>,
    /// Number of updates applied so far.
    pub iteration: u64,
    /// Learning rate of the most recent update.
    pub lr: f64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &ParameterStore<T>) -> Self {
        Self { buffers: params.entries().iter().map(|e| vec![T::zero(); e.values.len()]).collect(), iteration: 0, lr: 0.0 }
    }
}

/// Momentum SGD with coupled weight decay on the trainable entries of `groups`:
/// `g ← g + wd·w`, `b ← μ·b + g`, `w ← w − lr·b`. Everything else, including
/// its momentum buffer, is left untouched.
pub fn sgd_update<T: Real>(
    params: &mut ParameterStore<T>,
    grads: &Gradients<T>,
    state: &mut OptimizerState<T>,
    lr: f64,
    groups: GroupSet,
    hp: SgdParams,
) -> Result<()> {
    grads.check_aligned(params)?;
    if groups.is_empty() {
        return Err(Error::Config("sgd_update needs at least one group".into()));
    }
    if state.buffers.len() != params.len()
        || state.buffers.iter().zip(params.entries()).any(|(b, e)| b.len() != e.values.len())
    {
        return Err(Error::Alignment("momentum buffers do not match parameters".into()));
    }
    let (lr_t, mu, wd) = (T::from_f64_lossy(lr), T::from_f64_lossy(hp.momentum), T::from_f64_lossy(hp.weight_decay));
    for i in 0..params.len() {
        let e = &params.entries()[i];
        if e.kind != EntryKind::Param || !groups.contains(e.group) {
            continue;
        }
        let buf = &mut state.buffers[i];
        let w = params.values_mut(i);
        for ((w, b), &g) in w.iter_mut().zip(buf.iter_mut()).zip(&grads.values[i]) {
            let g = g + wd * *w;
            *b = mu * *b + g;
            *w = *w - lr_t * *b;
        }
    }
    state.iteration += 1;
    state.lr = lr;
    Ok(())
}

use alloc::format;
use alloc::vec::Vec;

use super::{learning_rate, sgd_update, OptimizerState, Phase, SgdParams, TrainConfig, Variant};
use crate::data::VolumeSample;
use crate::error::{Error, Result};
use crate::objectives::{consistency_loss_grad, decoupling_loss_grad, supervised_loss_grad, LossBundle};
use crate::real::Real;
use crate::tensor::{Mask, Tensor};
use crate::volnet::{forward_tape, Gradients, Group, GroupSet, Mode, ParameterStore, BN_MOMENTUM};

/// Separate momentum buffers for each phase, so one phase's velocity never
/// carries into another phase's objective.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseOptimizers<T> {
    pub states: [OptimizerState<T>; 3],
}

impl<T: Real> PhaseOptimizers<T> {
    pub fn new(params: &ParameterStore<T>) -> Self {
        Self { states: [OptimizerState::new(params), OptimizerState::new(params), OptimizerState::new(params)] }
    }

    pub fn get(&self, phase: Phase) -> &OptimizerState<T> {
        &self.states[phase.slot()]
    }

    fn get_mut(&mut self, phase: Phase) -> &mut OptimizerState<T> {
        &mut self.states[phase.slot()]
    }
}

fn input_tensor<T: Real>(samples: &[&VolumeSample]) -> Result<Tensor<T>> {
    let grids: Vec<_> = samples.iter().map(|s| s.intensity.map(|v| T::from_f64_lossy(v as f64))).collect();
    Tensor::stack_grids(grids.iter())
}

fn target_tensor<T: Real>(samples: &[VolumeSample], classes: usize) -> Result<Tensor<T>> {
    let masks = samples
        .iter()
        .map(|s| s.label.as_ref().ok_or_else(|| Error::Data(format!("{} has no label", s.id))))
        .collect::<Result<Vec<&Mask>>>()?;
    Tensor::one_hot(masks, classes)
}

fn finite(v: f64, what: &str, t: u64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Diverged(format!("{what} loss is {v} at iteration {t}")))
    }
}

/// `a + s·b` elementwise on equally shaped tensors.
fn axpy<T: Real>(a: &mut Tensor<T>, s: T, b: &Tensor<T>) {
    for (x, &y) in a.data.iter_mut().zip(&b.data) {
        *x = *x + s * y;
    }
}

/// Zero-pads a gradient over the first samples of a batch to `total` samples.
fn pad_batch<T: Real>(g: Tensor<T>, total: usize) -> Tensor<T> {
    let mut shape = g.shape;
    shape[0] = total;
    let mut data = g.data;
    data.resize(shape.iter().product(), T::zero());
    Tensor { shape, data }
}

/// One training iteration at step `t`.
///
/// `on_phase` is called after each phase that ran, with the parameters and
/// optimizer buffers as that phase left them. Loss values in the returned
/// bundle are unweighted; terms of phases that did not run are 0 with weight 0.
pub fn train_step<T: Real>(
    params: &mut ParameterStore<T>,
    opt: &mut PhaseOptimizers<T>,
    labeled: &[VolumeSample],
    unlabeled: &[VolumeSample],
    cfg: &TrainConfig,
    t: u64,
    on_phase: &mut dyn FnMut(Phase, &ParameterStore<T>, &PhaseOptimizers<T>),
) -> Result<LossBundle> {
    if t >= cfg.total_iterations {
        return Err(Error::Config(format!("iteration {t} is past total_iterations {}", cfg.total_iterations)));
    }
    if labeled.is_empty() {
        return Err(Error::Config("training step needs labeled samples".into()));
    }
    if !cfg.variant.uses_unlabeled() && !unlabeled.is_empty() {
        return Err(Error::Config(format!("{} does not take unlabeled samples", cfg.variant.name())));
    }
    if cfg.variant.uses_unlabeled() && unlabeled.is_empty() {
        return Err(Error::Config(format!("{} needs unlabeled samples", cfg.variant.name())));
    }
    let lr = learning_rate(t, cfg);
    let classes = params.config().num_classes;
    let mut bundle = LossBundle::default();
    let target = target_tensor::<T>(labeled, classes)?;
    let all: Vec<&VolumeSample> = labeled.iter().chain(unlabeled).collect();
    let bn = T::from_f64_lossy(BN_MOMENTUM);
    let full_decay = SgdParams { momentum: cfg.momentum, weight_decay: cfg.weight_decay };
    let no_decay = SgdParams { momentum: cfg.momentum, weight_decay: 0.0 };

    if cfg.variant == Variant::VnetGc {
        let lambda_c = cfg.lambda_c(t)?;
        let x = input_tensor::<T>(&all)?;
        let (pred, tape) = forward_tape(params, &x, Mode::Train)?;
        let (ls, [s1, s2]) = supervised_loss_grad(&pred.slice_batch(0, labeled.len()), &target, &cfg.loss)?;
        let (lc, [mut c1, mut c2]) = consistency_loss_grad(&pred)?;
        let (s1, s2) = (pad_batch(s1, all.len()), pad_batch(s2, all.len()));
        // c ← λ·c + s
        let lam = T::from_f64_lossy(lambda_c);
        for c in [&mut c1, &mut c2] {
            c.data.iter_mut().for_each(|v| *v = lam * *v);
        }
        axpy(&mut c1, T::one(), &s1);
        axpy(&mut c2, T::one(), &s2);
        bundle.supervised = finite(ls.to_f64_lossy(), "supervised", t)?;
        bundle.consistency = finite(lc.to_f64_lossy(), "consistency", t)?;
        bundle.lambda_c = lambda_c;
        let grads = tape.backward(params, [Some(&c1), Some(&c2)], GroupSet::all())?;
        tape.apply_running_stats(params, bn);
        sgd_update(params, &grads, opt.get_mut(Phase::Supervised), lr, GroupSet::all(), full_decay)?;
        on_phase(Phase::Supervised, params, opt);
        return Ok(bundle);
    }

    for phase in cfg.phase_order {
        match phase {
            Phase::Supervised => {
                let refs: Vec<&VolumeSample> = labeled.iter().collect();
                let x = input_tensor::<T>(&refs)?;
                let (pred, tape) = forward_tape(params, &x, Mode::Train)?;
                let (ls, [d1, d2]) = supervised_loss_grad(&pred, &target, &cfg.loss)?;
                bundle.supervised = finite(ls.to_f64_lossy(), "supervised", t)?;
                let grads = tape.backward(params, [Some(&d1), Some(&d2)], GroupSet::all())?;
                tape.apply_running_stats(params, bn);
                sgd_update(params, &grads, opt.get_mut(phase), lr, GroupSet::all(), full_decay)?;
            }
            Phase::Decoupling => {
                if cfg.variant != Variant::Pdc || t % cfg.decouple_every != 0 {
                    continue;
                }
                let lambda_pd = cfg.lambda_pd(t)?;
                let eps = T::from_f64_lossy(cfg.loss.norm_eps);
                let (lpd, (g1, g2)) =
                    decoupling_loss_grad(&params.head_tensors(Group::Head1), &params.head_tensors(Group::Head2), eps)?;
                bundle.decoupling = finite(lpd.to_f64_lossy(), "decoupling", t)?;
                bundle.lambda_pd = lambda_pd;
                let mut grads = Gradients::zeros_like(params);
                for (head, g) in [(Group::Head1, g1), (Group::Head2, g2)] {
                    for (idx, gv) in params.group_params(head).into_iter().zip(g) {
                        grads.values[idx] = gv;
                    }
                }
                grads.scale(T::from_f64_lossy(lambda_pd));
                sgd_update(params, &grads, opt.get_mut(phase), lr, GroupSet::heads(), no_decay)?;
            }
            Phase::Consistency => {
                if !matches!(cfg.variant, Variant::VnetEc | Variant::Pdc) {
                    continue;
                }
                let lambda_c = cfg.lambda_c(t)?;
                let x = input_tensor::<T>(&all)?;
                let (pred, tape) = forward_tape(params, &x, Mode::Train)?;
                let (lc, [mut d1, mut d2]) = consistency_loss_grad(&pred)?;
                bundle.consistency = finite(lc.to_f64_lossy(), "consistency", t)?;
                bundle.lambda_c = lambda_c;
                let lam = T::from_f64_lossy(lambda_c);
                for d in [&mut d1, &mut d2] {
                    d.data.iter_mut().for_each(|v| *v = lam * *v);
                }
                let grads = tape.backward(params, [Some(&d1), Some(&d2)], GroupSet::only(Group::Extractor))?;
                tape.apply_running_stats(params, bn);
                sgd_update(params, &grads, opt.get_mut(phase), lr, GroupSet::only(Group::Extractor), no_decay)?;
            }
        }
        on_phase(phase, params, opt);
    }
    Ok(bundle)
}

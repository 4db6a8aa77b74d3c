//! Encoder–decoder feature extractor with two independent classification heads.
//!
//! The extractor is a small V-Net-style network: each encoder level applies
//! two `conv → norm → relu` blocks followed by a strided 2³ convolution; the
//! decoder mirrors it with 2³ transposed convolutions and additive skip
//! connections. Each head is a `k³` convolution, relu, and a `1³` projection to
//! class logits, with no normalization.

mod infer;
pub(crate) mod ops;
mod params;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;
use ops::{ConvGeom, NormStats};

pub use infer::{count_windows, infer_mask, infer_probs, window_starts, HeadFusion, InferenceOutput};
pub use ops::{softmax_backward, softmax_channels};
pub use params::{Entry, EntryKind, Group, GroupSet, Gradients, ParameterStore};

/// Normalization used inside the extractor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    #[default]
    Batch,
    Instance,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub encoder_channels: Vec<usize>,
    /// Hidden width of each head; `None` means the final feature width.
    pub head_hidden_channels: Option<usize>,
    pub kernel_size: usize,
    pub norm: NormKind,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            num_classes: 2,
            encoder_channels: vec![8, 16, 32],
            head_hidden_channels: None,
            kernel_size: 3,
            norm: NormKind::Batch,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be >= 2, got {}", self.num_classes)));
        }
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return Err(Error::Config(format!(
                "encoder_channels must be non-empty and positive, got {:?}",
                self.encoder_channels
            )));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!("kernel_size must be odd, got {}", self.kernel_size)));
        }
        if self.head_hidden_channels == Some(0) {
            return Err(Error::Config("head_hidden_channels must be positive".into()));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.encoder_channels.len()
    }

    /// Every spatial axis must be a multiple of this.
    pub fn spatial_divisor(&self) -> usize {
        1 << (self.levels() - 1)
    }

    pub fn head_hidden(&self) -> usize {
        self.head_hidden_channels.unwrap_or(self.encoder_channels[0])
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvIdx {
    w: usize,
    b: usize,
    cout: usize,
}

#[derive(Clone, Copy, Debug)]
struct NormIdx {
    gamma: usize,
    beta: usize,
    running: Option<(usize, usize)>,
}

#[derive(Clone, Copy, Debug)]
struct Block {
    conv: ConvIdx,
    norm: NormIdx,
}

#[derive(Clone, Copy, Debug)]
struct HeadIdx {
    conv: ConvIdx,
    out: ConvIdx,
}

/// Entry indices for every layer, derived deterministically from the config.
#[derive(Clone, Debug)]
struct Layout {
    enc: Vec<[Block; 2]>,
    down: Vec<Block>,
    up: Vec<Block>,
    dec: Vec<[Block; 2]>,
    heads: [HeadIdx; 2],
}

#[derive(Clone, Copy, Debug)]
enum Init {
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    He(usize),
    /// Uniform in `±1/sqrt(fan_in)`.
    Bias(usize),
    Const(f64),
}

struct EntrySpec {
    name: String,
    group: Group,
    kind: EntryKind,
    shape: Vec<usize>,
    init: Init,
}

#[derive(Default)]
struct LayoutBuilder {
    specs: Vec<EntrySpec>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, group: Group, kind: EntryKind, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(EntrySpec { name, group, kind, shape, init });
        self.specs.len() - 1
    }

    fn conv(&mut self, name: &str, group: Group, cin: usize, cout: usize, k: usize) -> ConvIdx {
        let fan_in = cin * k * k * k;
        let w = self.push(format!("{name}.weight"), group, EntryKind::Param, vec![cout, cin, k, k, k], Init::He(fan_in));
        let b = self.push(format!("{name}.bias"), group, EntryKind::Param, vec![cout], Init::Bias(fan_in));
        ConvIdx { w, b, cout }
    }

    /// Transposed 2³ convolution, weight layout `(cin, cout, 2, 2, 2)`.
    fn up_conv(&mut self, name: &str, cin: usize, cout: usize) -> ConvIdx {
        let g = Group::Extractor;
        let fan_in = cin * 8;
        let w = self.push(format!("{name}.weight"), g, EntryKind::Param, vec![cin, cout, 2, 2, 2], Init::He(fan_in));
        let b = self.push(format!("{name}.bias"), g, EntryKind::Param, vec![cout], Init::Bias(fan_in));
        ConvIdx { w, b, cout }
    }

    fn norm(&mut self, name: &str, c: usize, kind: NormKind) -> NormIdx {
        let g = Group::Extractor;
        let gamma = self.push(format!("{name}.gamma"), g, EntryKind::Param, vec![c], Init::Const(1.0));
        let beta = self.push(format!("{name}.beta"), g, EntryKind::Param, vec![c], Init::Const(0.0));
        let running = match kind {
            NormKind::Batch => Some((
                self.push(format!("{name}.running_mean"), g, EntryKind::Buffer, vec![c], Init::Const(0.0)),
                self.push(format!("{name}.running_var"), g, EntryKind::Buffer, vec![c], Init::Const(1.0)),
            )),
            NormKind::Instance => None,
        };
        NormIdx { gamma, beta, running }
    }

    fn block(&mut self, name: &str, cin: usize, cout: usize, k: usize, norm: NormKind) -> Block {
        Block { conv: self.conv(&format!("{name}.conv"), Group::Extractor, cin, cout, k), norm: self.norm(&format!("{name}.norm"), cout, norm) }
    }
}

impl Layout {
    fn build(cfg: &NetworkConfig) -> (Self, Vec<EntrySpec>) {
        let mut b = LayoutBuilder::default();
        let ch = &cfg.encoder_channels;
        let (k, nk) = (cfg.kernel_size, cfg.norm);
        let levels = ch.len();
        let mut enc = Vec::new();
        let mut down = Vec::new();
        for l in 0..levels {
            let cin = if l == 0 { cfg.in_channels } else { ch[l] };
            let b1 = b.block(&format!("enc{l}.block1"), cin, ch[l], k, nk);
            let b2 = b.block(&format!("enc{l}.block2"), ch[l], ch[l], k, nk);
            enc.push([b1, b2]);
            if l + 1 < levels {
                down.push(b.block(&format!("down{l}"), ch[l], ch[l + 1], 2, nk));
            }
        }
        let mut up = Vec::new();
        let mut dec = Vec::new();
        for l in 0..levels.saturating_sub(1) {
            let conv = b.up_conv(&format!("up{l}.conv"), ch[l + 1], ch[l]);
            let norm = b.norm(&format!("up{l}.norm"), ch[l], nk);
            up.push(Block { conv, norm });
            let b1 = b.block(&format!("dec{l}.block1"), ch[l], ch[l], k, nk);
            let b2 = b.block(&format!("dec{l}.block2"), ch[l], ch[l], k, nk);
            dec.push([b1, b2]);
        }
        let hidden = cfg.head_hidden();
        let mut head = |name: &str, g: Group| HeadIdx {
            conv: b.conv(&format!("{name}.conv"), g, ch[0], hidden, k),
            out: b.conv(&format!("{name}.out"), g, hidden, cfg.num_classes, 1),
        };
        let heads = [head("head1", Group::Head1), head("head2", Group::Head2)];
        (Self { enc, down, up, dec, heads }, b.specs)
    }
}

/// Creates freshly initialized parameters.
///
/// The extractor and each head draw from separate ChaCha streams of the same
/// seed, so the two heads start from different values.
pub fn build_network<T: Real>(cfg: &NetworkConfig) -> Result<ParameterStore<T>> {
    cfg.validate()?;
    let (_, specs) = Layout::build(cfg);
    let mut rngs: Vec<ChaCha8Rng> = (0..3)
        .map(|s| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
            r.set_stream(s);
            r
        })
        .collect();
    let entries = specs
        .into_iter()
        .map(|s| {
            let n: usize = s.shape.iter().product();
            let rng = &mut rngs[s.group.tag() as usize];
            let values: Vec<T> = match s.init {
                Init::He(fan_in) => {
                    let d = Normal::new(0.0, num_traits::Float::sqrt(2.0 / fan_in as f64)).expect("finite std");
                    (0..n).map(|_| T::from_f64_lossy(d.sample(rng))).collect()
                }
                Init::Bias(fan_in) => {
                    let bound = 1.0 / num_traits::Float::sqrt(fan_in as f64);
                    let d = Uniform::new(-bound, bound);
                    (0..n).map(|_| T::from_f64_lossy(d.sample(rng))).collect()
                }
                Init::Const(c) => vec![T::from_f64_lossy(c); n],
            };
            Entry { name: s.name, group: s.group, kind: s.kind, shape: s.shape, values }
        })
        .collect();
    ParameterStore::from_entries(cfg.clone(), entries)
}

/// Rebuilds a store from saved entries, which must follow exactly the layout
/// (names, groups, kinds, shapes and order) that `cfg` produces.
pub fn restore_network<T: Real>(cfg: &NetworkConfig, entries: Vec<Entry<T>>) -> Result<ParameterStore<T>> {
    cfg.validate()?;
    let (_, specs) = Layout::build(cfg);
    if specs.len() != entries.len() {
        return Err(Error::Shape(format!("config expects {} entries, got {}", specs.len(), entries.len())));
    }
    for (s, e) in specs.iter().zip(&entries) {
        if s.name != e.name || s.group != e.group || s.kind != e.kind || s.shape != e.shape {
            return Err(Error::Shape(format!(
                "entry {} {:?} does not match expected {} {:?}",
                e.name, e.shape, s.name, s.shape
            )));
        }
    }
    ParameterStore::from_entries(cfg.clone(), entries)
}

/// Both heads' outputs for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct DualPrediction<T> {
    pub logits1: Tensor<T>,
    pub logits2: Tensor<T>,
    pub probs1: Tensor<T>,
    pub probs2: Tensor<T>,
}

impl<T: Real> DualPrediction<T> {
    fn from_logits(logits1: Tensor<T>, logits2: Tensor<T>) -> Self {
        let probs1 = softmax_channels(&logits1);
        let probs2 = softmax_channels(&logits2);
        Self { logits1, logits2, probs1, probs2 }
    }

    /// Restricts every map to samples `start..end`.
    pub fn slice_batch(&self, start: usize, end: usize) -> Self {
        Self {
            logits1: self.logits1.slice_batch(start, end),
            logits2: self.logits2.slice_batch(start, end),
            probs1: self.probs1.slice_batch(start, end),
            probs2: self.probs2.slice_batch(start, end),
        }
    }
}

/// Whether normalization uses batch statistics (and records running-stat
/// updates) or the stored running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op<T> {
    Input,
    Conv { x: usize, c: ConvIdx, geom: ConvGeom },
    Up { x: usize, c: ConvIdx },
    Norm { x: usize, n: NormIdx, stats: NormStats<T> },
    Relu { x: usize },
    Add { a: usize, b: usize },
}

/// Recorded forward pass; replayed in reverse by [`Tape::backward`].
pub struct Tape<T> {
    nodes: Vec<(Op<T>, Tensor<T>)>,
    logits: [usize; 2],
    running: Vec<(usize, usize, Vec<T>, Vec<T>)>,
}

pub const BN_MOMENTUM: f64 = 0.1;

struct Recorder<'p, T: Real> {
    params: &'p ParameterStore<T>,
    mode: Mode,
    nodes: Vec<(Op<T>, Tensor<T>)>,
    running: Vec<(usize, usize, Vec<T>, Vec<T>)>,
}

impl<'p, T: Real> Recorder<'p, T> {
    fn push(&mut self, op: Op<T>, v: Tensor<T>) -> usize {
        self.nodes.push((op, v));
        self.nodes.len() - 1
    }

    fn val(&self, i: usize) -> &Tensor<T> {
        &self.nodes[i].1
    }

    fn conv(&mut self, x: usize, c: ConvIdx, geom: ConvGeom) -> usize {
        let p = self.params;
        let y = ops::conv_forward(self.val(x), p.values(c.w), p.values(c.b), c.cout, geom);
        self.push(Op::Conv { x, c, geom }, y)
    }

    fn up(&mut self, x: usize, c: ConvIdx) -> usize {
        let p = self.params;
        let y = ops::up_forward(self.val(x), p.values(c.w), p.values(c.b), c.cout);
        self.push(Op::Up { x, c }, y)
    }

    fn norm(&mut self, x: usize, n: NormIdx) -> usize {
        let p = self.params;
        let stats = match (n.running, self.mode) {
            (Some((m, v)), Mode::Eval) => ops::norm_stats_running(p.values(m), p.values(v)),
            (Some((m, v)), Mode::Train) => {
                let s = ops::norm_stats(self.val(x), false);
                self.running.push((m, v, s.mean.clone(), s.var_unbiased.clone()));
                s
            }
            (None, _) => ops::norm_stats(self.val(x), true),
        };
        let y = ops::norm_forward(self.val(x), &stats, p.values(n.gamma), p.values(n.beta));
        self.push(Op::Norm { x, n, stats }, y)
    }

    fn relu(&mut self, x: usize) -> usize {
        let y = ops::relu_forward(self.val(x));
        self.push(Op::Relu { x }, y)
    }

    fn add(&mut self, a: usize, b: usize) -> usize {
        let mut y = self.val(a).clone();
        for (o, &v) in y.data.iter_mut().zip(&self.val(b).data) {
            *o = *o + v;
        }
        self.push(Op::Add { a, b }, y)
    }

    fn block(&mut self, x: usize, b: Block, geom: ConvGeom) -> usize {
        let c = self.conv(x, b.conv, geom);
        let n = self.norm(c, b.norm);
        self.relu(n)
    }
}

fn check_input<T: Real>(cfg: &NetworkConfig, input: &Tensor<T>) -> Result<()> {
    if input.channels() != cfg.in_channels {
        return Err(Error::Shape(format!(
            "input has {} channels, network expects {}",
            input.channels(),
            cfg.in_channels
        )));
    }
    let div = cfg.spatial_divisor();
    if input.spatial().iter().any(|&d| d == 0 || d % div != 0) {
        return Err(Error::Shape(format!(
            "spatial size {:?} must be a positive multiple of {div} for {} levels",
            input.spatial(),
            cfg.levels()
        )));
    }
    Ok(())
}

/// Runs the network and keeps everything needed for a backward pass.
pub fn forward_tape<T: Real>(
    params: &ParameterStore<T>,
    input: &Tensor<T>,
    mode: Mode,
) -> Result<(DualPrediction<T>, Tape<T>)> {
    let cfg = params.config();
    check_input(cfg, input)?;
    let (layout, _) = Layout::build(cfg);
    let same = ConvGeom::same(cfg.kernel_size);
    let mut r = Recorder { params, mode, nodes: Vec::new(), running: Vec::new() };
    let mut h = r.push(Op::Input, input.clone());
    let levels = cfg.levels();
    let mut skips = Vec::with_capacity(levels);
    for l in 0..levels {
        h = r.block(h, layout.enc[l][0], same);
        h = r.block(h, layout.enc[l][1], same);
        if l + 1 < levels {
            skips.push(h);
            h = r.block(h, layout.down[l], ConvGeom::down2());
        }
    }
    for l in (0..levels - 1).rev() {
        let u = r.up(h, layout.up[l].conv);
        let u = r.norm(u, layout.up[l].norm);
        let u = r.relu(u);
        h = r.add(u, skips[l]);
        h = r.block(h, layout.dec[l][0], same);
        h = r.block(h, layout.dec[l][1], same);
    }
    let feature = h;
    let mut logits = [0usize; 2];
    for (m, head) in layout.heads.iter().enumerate() {
        let z = r.conv(feature, head.conv, same);
        let z = r.relu(z);
        logits[m] = r.conv(z, head.out, ConvGeom::same(1));
    }
    let pred = DualPrediction::from_logits(r.val(logits[0]).clone(), r.val(logits[1]).clone());
    Ok((pred, Tape { nodes: r.nodes, logits, running: r.running }))
}

/// Evaluation-mode forward pass.
pub fn forward<T: Real>(params: &ParameterStore<T>, input: &Tensor<T>) -> Result<DualPrediction<T>> {
    forward_tape(params, input, Mode::Eval).map(|(p, _)| p)
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            for (a, &b) in acc.data.iter_mut().zip(&g.data) {
                *a = *a + b;
            }
        }
    }
}

impl<T: Real> Tape<T> {
    /// Back-propagates gradients w.r.t. the two heads' logits.
    ///
    /// Gradients are accumulated only for parameters whose group is in
    /// `groups`; the rest stay zero. Signals still flow through every layer.
    pub fn backward(
        &self,
        params: &ParameterStore<T>,
        dlogits: [Option<&Tensor<T>>; 2],
        groups: GroupSet,
    ) -> Result<Gradients<T>> {
        let mut grads = Gradients::zeros_like(params);
        let mut node_grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (m, d) in dlogits.iter().enumerate() {
            if let Some(d) = d {
                let id = self.logits[m];
                if d.shape != self.nodes[id].1.shape {
                    return Err(Error::Shape(format!(
                        "logit gradient {:?} vs logits {:?}",
                        d.shape, self.nodes[id].1.shape
                    )));
                }
                accumulate(&mut node_grads[id], (*d).clone());
            }
        }
        let want = |idx: usize| groups.contains(params.entries()[idx].group);
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = node_grads[i].take() else { continue };
            let (op, value) = &self.nodes[i];
            match op {
                Op::Input => {}
                Op::Conv { x, c, geom } => {
                    let need_dx = !matches!(self.nodes[*x].0, Op::Input);
                    let (gw, gb) = two_mut(&mut grads.values, c.w, c.b);
                    let dx = ops::conv_backward(
                        &self.nodes[*x].1,
                        params.values(c.w),
                        &g,
                        *geom,
                        need_dx,
                        want(c.w).then_some(gw),
                        want(c.b).then_some(gb),
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut node_grads[*x], dx);
                    }
                }
                Op::Up { x, c } => {
                    let need_dx = !matches!(self.nodes[*x].0, Op::Input);
                    let (gw, gb) = two_mut(&mut grads.values, c.w, c.b);
                    let dx = ops::up_backward(
                        &self.nodes[*x].1,
                        params.values(c.w),
                        &g,
                        need_dx,
                        want(c.w).then_some(gw),
                        want(c.b).then_some(gb),
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut node_grads[*x], dx);
                    }
                }
                Op::Norm { x, n, stats } => {
                    let (gg, gb) = two_mut(&mut grads.values, n.gamma, n.beta);
                    let dx = ops::norm_backward(
                        &self.nodes[*x].1,
                        stats,
                        params.values(n.gamma),
                        &g,
                        want(n.gamma).then_some(gg),
                        want(n.beta).then_some(gb),
                    );
                    accumulate(&mut node_grads[*x], dx);
                }
                Op::Relu { x } => {
                    let dx = ops::relu_backward(value, &g);
                    accumulate(&mut node_grads[*x], dx);
                }
                Op::Add { a, b } => {
                    accumulate(&mut node_grads[*b], g.clone());
                    accumulate(&mut node_grads[*a], g);
                }
            }
        }
        Ok(grads)
    }

    /// Folds this pass's batch statistics into the running buffers
    /// (`r ← (1 − m)·r + m·batch`). No-op for instance normalization or
    /// evaluation-mode passes.
    pub fn apply_running_stats(&self, params: &mut ParameterStore<T>, momentum: T) {
        for (mi, vi, mean, var) in &self.running {
            for (r, &b) in params.values_mut(*mi).iter_mut().zip(mean) {
                *r = (T::one() - momentum) * *r + momentum * b;
            }
            for (r, &b) in params.values_mut(*vi).iter_mut().zip(var) {
                *r = (T::one() - momentum) * *r + momentum * b;
            }
        }
    }
}

fn two_mut<T>(v: &mut [Vec<T>], a: usize, b: usize) -> (&mut [T], &mut [T]) {
    assert!(a < b, "weight entry precedes its companion");
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

#[cfg(test)]
mod tests;

use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::Grid;

fn tiny(levels: usize, norm: NormKind) -> NetworkConfig {
    NetworkConfig {
        encoder_channels: (0..levels).map(|l| 2 + l).collect(),
        norm,
        seed: 3,
        ..NetworkConfig::default()
    }
}

fn random_input<T: Real>(shape: [usize; 5], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| T::from_f64_lossy(rng.gen_range(-1.0..1.0))).collect()).unwrap()
}

#[test]
fn heads_share_shapes_but_not_values() {
    let cfg = NetworkConfig { seed: 7, ..NetworkConfig::default() };
    let p = build_network::<f32>(&cfg).unwrap();
    let pairs = p.head_pairs().unwrap();
    assert_eq!(pairs.len(), 4);
    let mut any_diff = false;
    for (a, b) in pairs {
        assert_eq!(p.entries()[a].shape, p.entries()[b].shape);
        any_diff |= p.values(a) != p.values(b);
    }
    assert!(any_diff);
}

#[test]
fn build_is_deterministic() {
    let cfg = NetworkConfig { seed: 7, ..NetworkConfig::default() };
    let a = build_network::<f32>(&cfg).unwrap();
    let b = build_network::<f32>(&cfg).unwrap();
    for (x, y) in a.entries().iter().zip(b.entries()) {
        let xb: Vec<u32> = x.values.iter().map(|v| v.to_bits()).collect();
        let yb: Vec<u32> = y.values.iter().map(|v| v.to_bits()).collect();
        assert_eq!(xb, yb, "{}", x.name);
    }
}

#[test]
fn head_output_has_num_classes_channels() {
    let p = build_network::<f32>(&NetworkConfig::default()).unwrap();
    for name in ["head1.out.weight", "head2.out.weight"] {
        let e = &p.entries()[p.index_of(name).unwrap()];
        assert_eq!(e.shape[0], 2);
    }
}

#[test]
fn partition_is_exhaustive_and_disjoint() {
    let p = build_network::<f32>(&NetworkConfig::default()).unwrap();
    let total: usize = Group::ALL.iter().map(|&g| p.param_count(g)).sum();
    assert_eq!(total, p.total_param_count());
    assert_eq!(p.param_count(Group::Head1), p.param_count(Group::Head2));
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        NetworkConfig { encoder_channels: vec![], ..Default::default() },
        NetworkConfig { encoder_channels: vec![4, 0], ..Default::default() },
        NetworkConfig { num_classes: 1, ..Default::default() },
        NetworkConfig { kernel_size: 4, ..Default::default() },
    ];
    for cfg in bad {
        assert!(matches!(build_network::<f32>(&cfg), Err(Error::Config(_))));
    }
}

#[test]
fn forward_shape_and_normalization() {
    let p = build_network::<f32>(&NetworkConfig::default()).unwrap();
    let x = random_input::<f32>([1, 1, 32, 32, 32], 1);
    let pred = forward(&p, &x).unwrap();
    assert_eq!(pred.logits1.shape, [1, 2, 32, 32, 32]);
    assert_eq!(pred.logits2.shape, [1, 2, 32, 32, 32]);
    let v = pred.probs1.voxels();
    for probs in [&pred.probs1, &pred.probs2] {
        for i in 0..v {
            let s = probs.data[i] + probs.data[v + i];
            assert!((s - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn identical_heads_give_identical_probs() {
    let mut p = build_network::<f32>(&tiny(3, NormKind::Batch)).unwrap();
    p.copy_head(Group::Head1, Group::Head2).unwrap();
    let x = random_input::<f32>([2, 1, 8, 8, 8], 2);
    let pred = forward_tape(&p, &x, Mode::Train).unwrap().0;
    assert_eq!(pred.probs1, pred.probs2);
}

#[test]
fn indivisible_input_names_divisor() {
    let p = build_network::<f32>(&tiny(3, NormKind::Batch)).unwrap();
    let x = random_input::<f32>([1, 1, 8, 8, 6], 2);
    match forward(&p, &x) {
        Err(Error::Shape(msg)) => assert!(msg.contains("multiple of 4"), "{msg}"),
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn eval_forward_is_deterministic() {
    let p = build_network::<f32>(&tiny(2, NormKind::Batch)).unwrap();
    let x = random_input::<f32>([1, 1, 8, 8, 8], 9);
    assert_eq!(forward(&p, &x).unwrap(), forward(&p, &x).unwrap());
}

/// Scalar objective on both heads: a fixed random linear functional of the
/// probabilities, so gradients pass through the softmax too.
fn objective(params: &ParameterStore<f64>, x: &Tensor<f64>, w1: &[f64], w2: &[f64]) -> f64 {
    let (pred, _) = forward_tape(params, x, Mode::Train).unwrap();
    let a: f64 = pred.probs1.data.iter().zip(w1).map(|(p, w)| p * w).sum();
    let b: f64 = pred.probs2.data.iter().zip(w2).map(|(p, w)| p * w).sum();
    a + b
}

fn gradient_check(norm: NormKind, h: f64) {
    let cfg = tiny(2, norm);
    let params = build_network::<f64>(&cfg).unwrap();
    let x = random_input::<f64>([2, 1, 8, 8, 8], 11);
    let n_out = 2 * 2 * 512;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w1: Vec<f64> = (0..n_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w2: Vec<f64> = (0..n_out).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let (pred, tape) = forward_tape(&params, &x, Mode::Train).unwrap();
    let dp1 = Tensor::from_vec(pred.probs1.shape, w1.clone()).unwrap();
    let dp2 = Tensor::from_vec(pred.probs2.shape, w2.clone()).unwrap();
    let dl1 = softmax_backward(&pred.probs1, &dp1);
    let dl2 = softmax_backward(&pred.probs2, &dp2);
    let grads = tape.backward(&params, [Some(&dl1), Some(&dl2)], GroupSet::all()).unwrap();

    let trainable: Vec<usize> =
        (0..params.len()).filter(|&i| params.entries()[i].kind == EntryKind::Param).collect();
    for _ in 0..10 {
        let e = trainable[rng.gen_range(0..trainable.len())];
        let j = rng.gen_range(0..params.values(e).len());
        let mut plus = params.clone();
        plus.values_mut(e)[j] += h;
        let mut minus = params.clone();
        minus.values_mut(e)[j] -= h;
        let numeric = (objective(&plus, &x, &w1, &w2) - objective(&minus, &x, &w1, &w2)) / (2.0 * h);
        let analytic = grads.values[e][j];
        // Biases feeding a normalization layer have an exactly zero gradient,
        // hence the absolute floor on the denominator.
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
        assert!(rel < 1e-3, "{}[{j}]: analytic {analytic} numeric {numeric} rel {rel}", params.entries()[e].name);
    }
}

#[test]
fn gradients_match_finite_differences_batch_norm() {
    gradient_check(NormKind::Batch, 1e-4);
}

#[test]
fn gradients_match_finite_differences_instance_norm() {
    // 4³ instance-norm groups put a relu kink within 1e-4 of one sampled weight.
    gradient_check(NormKind::Instance, 1e-5);
}

#[test]
fn backward_restricted_to_groups_leaves_others_zero() {
    let params = build_network::<f64>(&tiny(2, NormKind::Batch)).unwrap();
    let x = random_input::<f64>([1, 1, 8, 8, 8], 4);
    let (pred, tape) = forward_tape(&params, &x, Mode::Train).unwrap();
    let ones = Tensor::from_vec(pred.logits1.shape, vec![1.0; pred.logits1.data.len()]).unwrap();
    let g = tape.backward(&params, [Some(&ones), Some(&ones)], GroupSet::only(Group::Extractor)).unwrap();
    for (e, gv) in params.entries().iter().zip(&g.values) {
        if e.group != Group::Extractor {
            assert!(gv.iter().all(|&v| v == 0.0), "{}", e.name);
        }
    }
    assert!(g.values[0].iter().any(|&v| v != 0.0));
}

#[test]
fn running_stats_move_toward_batch_stats() {
    let mut params = build_network::<f32>(&tiny(2, NormKind::Batch)).unwrap();
    let x = random_input::<f32>([2, 1, 8, 8, 8], 4);
    let (_, tape) = forward_tape(&params, &x, Mode::Train).unwrap();
    let before = params.clone();
    tape.apply_running_stats(&mut params, 0.1);
    let i = params.index_of("enc0.block1.norm.running_mean").unwrap();
    assert_ne!(before.values(i), params.values(i));
    let g = params.index_of("enc0.block1.norm.gamma").unwrap();
    assert_eq!(before.values(g), params.values(g));
}

#[test]
fn window_counts() {
    assert_eq!(count_windows([64; 3], [32; 3], [32; 3]), 8);
    assert_eq!(window_starts(64, 32, 32), vec![0, 32]);
    assert_eq!(window_starts(48, 16, 12), vec![0, 12, 24, 32]);
    assert_eq!(window_starts(10, 16, 8), vec![0]);
}

#[test]
fn inference_tiles_exactly_eight_windows() {
    let p = build_network::<f32>(&tiny(2, NormKind::Instance)).unwrap();
    let vol = Grid::from_vec([64, 64, 64], random_input::<f32>([1, 1, 64, 64, 64], 5).data).unwrap();
    let out = infer_probs(&p, &vol, [32; 3], [32; 3], HeadFusion::Mean).unwrap();
    assert_eq!(out.windows, 8);
    assert_eq!(out.probs.spatial(), [64, 64, 64]);
}

#[test]
fn single_window_equals_plain_forward() {
    let p = build_network::<f32>(&tiny(2, NormKind::Batch)).unwrap();
    let x = random_input::<f32>([1, 1, 8, 8, 8], 6);
    let vol = Grid::from_vec([8, 8, 8], x.data.clone()).unwrap();
    let out = infer_probs(&p, &vol, [8; 3], [4; 3], HeadFusion::Head1).unwrap();
    assert_eq!(out.windows, 1);
    assert_eq!(out.probs, forward(&p, &x).unwrap().probs1);
}

#[test]
fn identical_heads_fusion_equals_single_head() {
    let mut p = build_network::<f32>(&tiny(2, NormKind::Batch)).unwrap();
    p.copy_head(Group::Head2, Group::Head1).unwrap();
    let vol = Grid::from_vec([12, 12, 12], random_input::<f32>([1, 1, 12, 12, 12], 8).data).unwrap();
    let fused = infer_probs(&p, &vol, [8; 3], [4; 3], HeadFusion::Mean).unwrap();
    let single = infer_probs(&p, &vol, [8; 3], [4; 3], HeadFusion::Head1).unwrap();
    assert_eq!(fused.mask(), single.mask());
    for (a, b) in fused.probs.data.iter().zip(&single.probs.data) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn small_volume_is_padded_and_cropped_back() {
    let p = build_network::<f32>(&tiny(2, NormKind::Instance)).unwrap();
    let vol = Grid::from_vec([5, 8, 7], random_input::<f32>([1, 1, 5, 8, 7], 8).data).unwrap();
    let m = infer_mask(&p, &vol, [8; 3], [8; 3]).unwrap();
    assert_eq!(m.dims, [5, 8, 7]);
}

#[test]
fn bad_stride_is_rejected() {
    let p = build_network::<f32>(&tiny(2, NormKind::Instance)).unwrap();
    let vol = Grid::filled([8, 8, 8], 0.0f32);
    assert!(infer_mask(&p, &vol, [8; 3], [9, 8, 8]).is_err());
    assert!(infer_mask(&p, &vol, [8; 3], [0, 8, 8]).is_err());
}

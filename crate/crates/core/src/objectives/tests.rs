use alloc::vec;
use alloc::vec::Vec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn binary(fg: &[f64]) -> Tensor<f64> {
    let n = fg.len();
    let mut data: Vec<f64> = fg.iter().map(|p| 1.0 - p).collect();
    data.extend_from_slice(fg);
    Tensor::from_vec([1, 2, 1, 1, n], data).unwrap()
}

fn dual(fg1: &[f64], fg2: &[f64]) -> DualPrediction<f64> {
    let p1 = binary(fg1);
    let p2 = binary(fg2);
    DualPrediction { logits1: p1.clone(), logits2: p2.clone(), probs1: p1, probs2: p2 }
}

const HALF_FG: [f64; 8] = [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];

#[test]
fn dice_examples() {
    let target = binary(&HALF_FG);
    assert!(soft_dice_loss(&target, &target, 1e-5).unwrap().abs() < 1e-12);
    let l = soft_dice_loss(&binary(&[0.5; 8]), &target, 1e-5).unwrap();
    assert!((l - 0.5).abs() < 1e-5, "{l}");
    let empty = binary(&[0.0; 8]);
    assert!(soft_dice_loss(&empty, &empty, 1e-5).unwrap().abs() < 1e-12);
}

#[test]
fn cross_entropy_examples() {
    let target = binary(&HALF_FG);
    assert_eq!(cross_entropy_loss(&target, &target, 1e-7).unwrap(), 0.0);
    let l = cross_entropy_loss(&binary(&[0.5; 8]), &target, 1e-7).unwrap();
    assert!((l - core::f64::consts::LN_2).abs() < 1e-12);
    // true-class probability 0.25 everywhere
    let p: Vec<f64> = HALF_FG.iter().map(|&g| if g == 1.0 { 0.25 } else { 0.75 }).collect();
    let l = cross_entropy_loss(&binary(&p), &target, 1e-7).unwrap();
    assert!((l - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn shape_mismatch_is_error() {
    let a = binary(&[0.5; 8]);
    let b = binary(&[0.5; 4]);
    assert!(matches!(soft_dice_loss(&a, &b, 1e-5), Err(Error::Shape(_))));
    assert!(matches!(cross_entropy_loss(&a, &b, 1e-7), Err(Error::Shape(_))));
    assert!(matches!(mse(&a, &b), Err(Error::Shape(_))));
}

#[test]
fn supervised_examples() {
    let lp = LossParams::default();
    let target = binary(&HALF_FG);
    assert!(supervised_loss(&dual(&HALF_FG, &HALF_FG), &target, &lp).unwrap().abs() < 1e-12);
    let l = supervised_loss(&dual(&HALF_FG, &[0.5; 8]), &target, &lp).unwrap();
    let expected = 0.5 * (0.5 + core::f64::consts::LN_2);
    assert!((l - expected).abs() < 1e-5, "{l} vs {expected}");
    assert!((expected - 0.5966).abs() < 1e-4);
    let swapped = supervised_loss(&dual(&[0.5; 8], &HALF_FG), &target, &lp).unwrap();
    assert_eq!(l, swapped);
}

#[test]
fn consistency_examples() {
    assert_eq!(consistency_loss(&dual(&[0.3; 8], &[0.3; 8])).unwrap(), 0.0);
    let l = consistency_loss(&dual(&[0.6; 8], &[0.4; 8])).unwrap();
    assert!((l - 0.04).abs() < 1e-12);
    assert_eq!(l, consistency_loss(&dual(&[0.4; 8], &[0.6; 8])).unwrap());
}

#[test]
fn decoupling_examples() {
    let eps = 1e-12f64;
    let a = [1.0f64, 2.0, -3.0];
    assert!((decoupling_loss(&[&a[..]], &[&a[..]], eps).unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(decoupling_loss(&[&[1.0, 0.0][..]], &[&[0.0, 1.0][..]], eps).unwrap(), 0.0);
    let l = decoupling_loss(&[&[1.0, 1.0][..]], &[&[1.0, 0.0][..]], eps).unwrap();
    assert!((l - 0.5).abs() < 1e-9);
    let z = [0.0f64, 0.0];
    assert!(decoupling_loss(&[&z[..]], &[&[1.0, 0.0][..]], eps).unwrap().abs() < 1e-12);
}

#[test]
fn decoupling_pairing_errors() {
    let a = [1.0, 2.0];
    let b = [1.0, 2.0, 3.0];
    assert!(matches!(decoupling_loss(&[&a[..]], &[&b[..]], 1e-12), Err(Error::Pairing(_))));
    assert!(matches!(decoupling_loss(&[&a[..], &a[..]], &[&a[..]], 1e-12), Err(Error::Pairing(_))));
}

#[test]
fn ramp_examples() {
    assert_eq!(ramp_weight(100, 100, 0.1).unwrap(), 0.1);
    assert_eq!(ramp_weight(250, 100, 0.1).unwrap(), 0.1);
    assert!((ramp_weight(0, 100, 0.1).unwrap() - 6.7379e-4).abs() < 1e-8);
    assert!((ramp_weight(50, 100, 0.1).unwrap() - 2.8650e-2).abs() < 1e-6);
    assert!(matches!(ramp_weight(0, 0, 0.1), Err(Error::Config(_))));
}

/// Central differences of `f` at `x`.
fn numeric_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

fn assert_close(analytic: &[f64], numeric: &[f64], what: &str) {
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-7);
        assert!(rel < 1e-4, "{what}[{i}]: analytic {a} numeric {n}");
    }
}

fn random_probs(rng: &mut ChaCha8Rng, shape: [usize; 5]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(0.05..1.0)).collect()).unwrap()
}

fn random_target(rng: &mut ChaCha8Rng, shape: [usize; 5]) -> Tensor<f64> {
    let v = shape[2] * shape[3] * shape[4];
    let masks: Vec<crate::Mask> = (0..shape[0])
        .map(|_| crate::Grid::from_vec([shape[2], shape[3], shape[4]], (0..v).map(|_| rng.gen_range(0..shape[1]) as u8).collect()).unwrap())
        .collect();
    Tensor::one_hot(masks.iter(), shape[1]).unwrap()
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for trial in 0..20 {
        let classes = 2 + trial % 2;
        let shape = [2, classes, 1, 2, 3 + trial % 4];
        let p = random_probs(&mut rng, shape);
        let q = random_probs(&mut rng, shape);
        let g = random_target(&mut rng, shape);
        let with = |x: &[f64]| Tensor::from_vec(shape, x.to_vec()).unwrap();

        let (_, dd) = soft_dice_loss_grad(&p, &g, 1e-5).unwrap();
        let nd = numeric_grad(&|x| soft_dice_loss(&with(x), &g, 1e-5).unwrap(), &p.data, 1e-5);
        assert_close(&dd.data, &nd, "dice");

        let (_, dc) = cross_entropy_loss_grad(&p, &g, 1e-7).unwrap();
        let nc = numeric_grad(&|x| cross_entropy_loss(&with(x), &g, 1e-7).unwrap(), &p.data, 1e-5);
        assert_close(&dc.data, &nc, "ce");

        let (_, dm) = mse_grad(&p, &q).unwrap();
        let nm = numeric_grad(&|x| mse(&with(x), &q).unwrap(), &p.data, 1e-5);
        assert_close(&dm.data, &nm, "mse");
    }
}

#[test]
fn logit_gradients_match_finite_differences() {
    use crate::volnet::softmax_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let shape = [2, 2, 1, 2, 3];
    let n: usize = shape.iter().product();
    let z1: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let z2: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let g = random_target(&mut rng, shape);
    let lp = LossParams::default();
    let pred = |a: &[f64], b: &[f64]| {
        let l1 = Tensor::from_vec(shape, a.to_vec()).unwrap();
        let l2 = Tensor::from_vec(shape, b.to_vec()).unwrap();
        DualPrediction { probs1: softmax_channels(&l1), probs2: softmax_channels(&l2), logits1: l1, logits2: l2 }
    };
    let p = pred(&z1, &z2);
    let (_, [s1, s2]) = supervised_loss_grad(&p, &g, &lp).unwrap();
    assert_close(&s1.data, &numeric_grad(&|x| supervised_loss(&pred(x, &z2), &g, &lp).unwrap(), &z1, 1e-5), "sup1");
    assert_close(&s2.data, &numeric_grad(&|x| supervised_loss(&pred(&z1, x), &g, &lp).unwrap(), &z2, 1e-5), "sup2");
    let (_, [c1, c2]) = consistency_loss_grad(&p).unwrap();
    assert_close(&c1.data, &numeric_grad(&|x| consistency_loss(&pred(x, &z2)).unwrap(), &z1, 1e-5), "cons1");
    assert_close(&c2.data, &numeric_grad(&|x| consistency_loss(&pred(&z1, x)).unwrap(), &z2, 1e-5), "cons2");
}

#[test]
fn decoupling_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let sizes = [rng.gen_range(2..30), rng.gen_range(2..20)];
        let a: Vec<Vec<f64>> = sizes.iter().map(|&s| (0..s).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let b: Vec<Vec<f64>> = sizes.iter().map(|&s| (0..s).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let refs = |v: &[Vec<f64>]| -> Vec<Vec<f64>> { v.to_vec() };
        let (_, (ga, gb)) = decoupling_loss_grad(
            &a.iter().map(Vec::as_slice).collect::<Vec<_>>(),
            &b.iter().map(Vec::as_slice).collect::<Vec<_>>(),
            1e-12,
        )
        .unwrap();
        let flat_a: Vec<f64> = a.concat();
        let split = |x: &[f64]| -> Vec<Vec<f64>> { vec![x[..sizes[0]].to_vec(), x[sizes[0]..].to_vec()] };
        let f = |x: &[f64]| {
            let s = split(x);
            let bb = refs(&b);
            decoupling_loss(
                &s.iter().map(Vec::as_slice).collect::<Vec<_>>(),
                &bb.iter().map(Vec::as_slice).collect::<Vec<_>>(),
                1e-12,
            )
            .unwrap()
        };
        assert_close(&ga.concat(), &numeric_grad(&f, &flat_a, 1e-5), "pd-a");
        // symmetric role for b
        let flat_b: Vec<f64> = b.concat();
        let fb = |x: &[f64]| {
            let s = split(x);
            decoupling_loss(
                &a.iter().map(Vec::as_slice).collect::<Vec<_>>(),
                &s.iter().map(Vec::as_slice).collect::<Vec<_>>(),
                1e-12,
            )
            .unwrap()
        };
        assert_close(&gb.concat(), &numeric_grad(&fb, &flat_b, 1e-5), "pd-b");
    }
}

fn nonzero_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

proptest! {
    #[test]
    fn decoupling_self_and_negation_is_one(a in nonzero_vec(12), b in nonzero_vec(5)) {
        let neg_a: Vec<f64> = a.iter().map(|v| -v).collect();
        let neg_b: Vec<f64> = b.iter().map(|v| -v).collect();
        let same = decoupling_loss(&[&a[..], &b[..]], &[&a[..], &b[..]], 1e-12).unwrap();
        let flipped = decoupling_loss(&[&a[..], &b[..]], &[&neg_a[..], &neg_b[..]], 1e-12).unwrap();
        prop_assert!((same - 1.0).abs() < 1e-6);
        prop_assert!((flipped - 1.0).abs() < 1e-6);
    }

    #[test]
    fn decoupling_is_scale_invariant(a in nonzero_vec(9), b in nonzero_vec(9), c in 0.01f64..100.0) {
        let scaled: Vec<f64> = b.iter().map(|v| v * c).collect();
        let l = decoupling_loss(&[&a[..]], &[&b[..]], 1e-12).unwrap();
        let ls = decoupling_loss(&[&a[..]], &[&scaled[..]], 1e-12).unwrap();
        prop_assert!((l - ls).abs() < 1e-6);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&l));
    }

    #[test]
    fn consistency_nonnegative_and_symmetric(p in prop::collection::vec(0.0f64..1.0, 6), q in prop::collection::vec(0.0f64..1.0, 6)) {
        let a = dual(&p, &q);
        let b = dual(&q, &p);
        let l = consistency_loss(&a).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l, consistency_loss(&b).unwrap());
        prop_assert_eq!(l == 0.0, p == q);
    }

    #[test]
    fn ramp_is_monotone(t in 0u64..1000, dt in 0u64..1000, t_max in 1u64..2000) {
        let a = ramp_weight(t, t_max, 0.1).unwrap();
        let b = ramp_weight(t + dt, t_max, 0.1).unwrap();
        prop_assert!(a <= b);
        prop_assert!(a > 0.0 && b <= 0.1);
    }
}

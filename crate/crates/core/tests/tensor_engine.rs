//! Finite-difference checks for every primitive, plus hand-computed cases.

mod common;

use common::gradients::{self, random, EPS, TOL};
use neurocam::tensor::{
    grad_check, multihead_attention, AttentionParams, BackwardMode, BatchNormMode, RngState, Tape,
    Tensor, TensorError,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn check<F>(name: &str, seeds: u64, build: F)
where
    F: Fn(&mut ChaCha8Rng, u64) -> f64,
{
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let err = build(&mut rng, seed);
        assert!(err < TOL, "{name} seed {seed}: relative error {err:e}");
    }
}

#[test]
fn add_sub_mul_gradients() {
    check("add/sub/mul", 10, gradients::add_sub_mul);
}

#[test]
fn matmul_gradients_both_sides() {
    check("matmul", 10, gradients::matmul);
}

#[test]
fn batched_matmul_gradients() {
    check("batched matmul", 10, gradients::batched_matmul);
}

#[test]
fn conv2d_hand_case() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::new(vec![1, 1, 1, 3], vec![1., 2., 3.]).unwrap());
    let k = t.constant(Tensor::new(vec![1, 1, 1, 2], vec![1., 1.]).unwrap());
    let y = t.conv2d(x, k, (1, 1)).unwrap();
    assert_eq!(t.shape(y), &[1, 1, 1, 2]);
    assert_eq!(t.value(y), &[3., 5.]);
}

#[test]
fn conv2d_output_shape_for_temporal_stage() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::zeros(&[1, 1, 64, 160]));
    let k = t.constant(Tensor::zeros(&[40, 1, 1, 25]));
    let y = t.conv2d(x, k, (1, 1)).unwrap();
    assert_eq!(t.shape(y), &[1, 40, 64, 136]);
}

#[test]
fn conv2d_rejects_bad_shapes() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::zeros(&[1, 2, 3, 3]));
    let big = t.constant(Tensor::zeros(&[1, 2, 4, 1]));
    assert!(matches!(
        t.conv2d(x, big, (1, 1)),
        Err(TensorError::Shape { .. })
    ));
    let wrong_c = t.constant(Tensor::zeros(&[1, 3, 1, 1]));
    assert!(matches!(
        t.conv2d(x, wrong_c, (1, 1)),
        Err(TensorError::Shape { .. })
    ));
}

#[test]
fn conv2d_gradients_input_and_kernel() {
    check("conv2d", 10, gradients::conv2d);
}

#[test]
fn depthwise_conv_gradients() {
    check("depthwise conv", 10, gradients::depthwise_conv);
}

#[test]
fn avg_pool_gradients() {
    check("avg_pool2d", 10, gradients::avg_pool2d);
}

#[test]
fn batch_norm_gradients_train_and_eval() {
    check("batch_norm", 10, gradients::batch_norm);
}

#[test]
fn batch_norm_eval_has_no_batch_coupling() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, &[4, 2, 1, 5]);
    let mean = [0.1, -0.2];
    let var = [1.5, 0.7];
    let run = |data: Tensor| {
        let mut t = Tape::new();
        let xv = t.constant(data);
        let g = t.constant(Tensor::new(vec![2], vec![1.3, 0.4]).unwrap());
        let b = t.constant(Tensor::new(vec![2], vec![0.0, 0.5]).unwrap());
        let (y, stats) = t
            .batch_norm(
                xv,
                g,
                b,
                BatchNormMode::Eval {
                    mean: &mean,
                    var: &var,
                },
                1e-5,
            )
            .unwrap();
        assert!(stats.is_none());
        t.value(y).to_vec()
    };
    let batch = run(x.clone());
    for i in 0..4 {
        let single =
            Tensor::new(vec![1, 2, 1, 5], x.data()[i * 10..(i + 1) * 10].to_vec()).unwrap();
        assert_eq!(run(single), batch[i * 10..(i + 1) * 10].to_vec());
    }
}

#[test]
fn layer_norm_gradients() {
    check("layer_norm", 10, gradients::layer_norm);
}

#[test]
fn elu_and_gelu_gradients() {
    check("elu/gelu", 10, gradients::elu_gelu);
}

#[test]
fn elu_far_from_zero_is_tight() {
    let x = Tensor::new(vec![4], vec![-3.0, -1.5, 1.2, 2.5]).unwrap();
    let err = grad_check(
        |t, v| {
            let y = t.elu(v);
            t.mean(y)
        },
        &x,
        EPS,
    )
    .unwrap();
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn linear_function_check_is_exact() {
    let x = Tensor::new(vec![3], vec![0.3, -1.0, 2.0]).unwrap();
    let err = grad_check(
        |t, v| {
            let y = t.scale(v, 2.5);
            Ok(t.sum(y))
        },
        &x,
        EPS,
    )
    .unwrap();
    assert!(err < 1e-9, "{err:e}");
}

#[test]
fn softmax_values_and_gradients() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::zeros(&[1, 3]));
    let y = t.softmax(x).unwrap();
    for v in t.value(y) {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    check("softmax", 10, gradients::softmax);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&mut rng, &[7, 5]);
    let mut t = Tape::new();
    let xv = t.constant(x);
    let y = t.softmax(xv).unwrap();
    for row in t.value(y).chunks(5) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn softmax_over_empty_axis_errors() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::new(vec![2, 0], vec![]).unwrap());
    assert!(matches!(t.softmax(x), Err(TensorError::EmptyAxis(_))));
}

#[test]
fn dropout_gradients_with_replayed_mask() {
    check("dropout", 10, gradients::dropout);
}

#[test]
fn dropout_is_identity_in_eval_and_replayable_in_train() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::filled(&[50], 1.0));
    assert_eq!(t.dropout(x, 0.5, None).unwrap(), x);
    let state = RngState {
        seed: 9,
        counter: 2,
    };
    let a = t.dropout(x, 0.5, Some(state)).unwrap();
    let b = t.dropout(x, 0.5, Some(state)).unwrap();
    assert_eq!(t.value(a), t.value(b));
    assert_eq!(t.dropout_masks().len(), 2);
    assert!(t.value(a).iter().all(|&v| v == 0.0 || v == 2.0));
}

#[test]
fn shape_ops_gradients() {
    check("reshape/permute/concat", 10, gradients::shape_ops);
}

#[test]
fn mean_and_add_bias_gradients() {
    check("mean/add_bias", 10, gradients::mean_add_bias);
}

#[test]
fn cross_entropy_gradient_closed_form() {
    let logits = [0.2, -1.0, 0.5, 1.5, 0.0, -0.3];
    let targets = [2usize, 0];
    let mut t = Tape::new();
    let l = t.leaf(Tensor::new(vec![2, 3], logits.to_vec()).unwrap(), true);
    let loss = t.cross_entropy(l, &targets).unwrap();
    t.backward(loss).unwrap();
    let g = t.grad(l).unwrap();
    for (row, &target) in targets.iter().enumerate() {
        let r = &logits[row * 3..row * 3 + 3];
        let m = r.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = r.iter().map(|v| (v - m).exp()).sum();
        for j in 0..3 {
            let p = (r[j] - m).exp() / z;
            let expected = (p - if j == target { 1.0 } else { 0.0 }) / 2.0;
            assert!((g[row * 3 + j] - expected).abs() < 1e-15);
        }
    }
    check("cross_entropy", 10, gradients::cross_entropy);
}

#[test]
fn backward_hand_cases() {
    // y = x², x = 3
    let mut t = Tape::new();
    let x = t.leaf(Tensor::scalar(3.0), true);
    let y = t.mul(x, x).unwrap();
    t.backward(y).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[6.0]);

    // sum over a 2x2 tensor
    let mut t = Tape::new();
    let x = t.leaf(
        Tensor::new(vec![2, 2], vec![1., -2., 3., 4.]).unwrap(),
        true,
    );
    let y = t.sum(x);
    t.backward(y).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[1.0; 4]);

    // diamond z = x·x + x at 0.7
    let mut t = Tape::new();
    let x = t.leaf(Tensor::scalar(0.7), true);
    let sq = t.mul(x, x).unwrap();
    let z = t.add(sq, x).unwrap();
    t.backward(z).unwrap();
    assert!((t.grad(x).unwrap()[0] - 2.4).abs() < 1e-15);
}

#[test]
fn backward_errors() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::new(vec![2], vec![1., 2.]).unwrap(), true);
    let y = t.scale(x, 2.0);
    assert!(matches!(t.backward(y), Err(TensorError::NonScalarLoss(_))));
    let s = t.sum(y);
    t.backward(s).unwrap();
    assert!(matches!(t.backward(s), Err(TensorError::BackwardTwice)));
    t.reset_grads();
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[2.0, 2.0]);

    let mut t = Tape::new();
    let c = t.constant(Tensor::scalar(1.0));
    let d = t.scale(c, 3.0);
    assert!(matches!(t.backward(d), Err(TensorError::Detached)));
}

#[test]
fn hooks_expose_intermediate_gradients() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::new(vec![3], vec![1., 2., 3.]).unwrap());
    let h = t.scale(x, 2.0);
    t.hook("doubled", h);
    let y = t.mul(h, h).unwrap();
    let s = t.sum(y);
    t.backward(s).unwrap();
    let hv = t.hooked("doubled").unwrap();
    assert_eq!(t.grad(hv).unwrap(), &[4., 8., 12.]);
    assert!(t.grad(x).is_none());
    assert!(matches!(
        t.hooked("missing"),
        Err(TensorError::UnknownHook(_))
    ));
}

#[test]
fn guided_mode_gates_elu() {
    let run = |mode| {
        let mut t = Tape::new();
        let x = t.leaf(
            Tensor::new(vec![4], vec![-1.0, 0.5, 2.0, 1.0]).unwrap(),
            true,
        );
        let y = t.elu(x);
        let w = t.constant(Tensor::new(vec![4], vec![1.0, 1.0, -1.0, 2.0]).unwrap());
        let p = t.mul(y, w).unwrap();
        let s = t.sum(p);
        t.backward_with(s, mode).unwrap();
        t.grad(x).unwrap().to_vec()
    };
    let plain = run(BackwardMode::Standard);
    let guided = run(BackwardMode::Guided);
    assert!((plain[0] - (-1.0f64).exp()).abs() < 1e-15);
    assert_eq!(guided, vec![0.0, 1.0, 0.0, 2.0]);
}

fn attention_params(t: &mut Tape, rng: &mut ChaCha8Rng, d: usize) -> AttentionParams {
    let mut mk = |shape: &[usize]| {
        let v = random(rng, shape);
        t.constant(v)
    };
    AttentionParams {
        wq: mk(&[d, d]),
        bq: mk(&[d]),
        wk: mk(&[d, d]),
        bk: mk(&[d]),
        wv: mk(&[d, d]),
        bv: mk(&[d]),
        wo: mk(&[d, d]),
        bo: mk(&[d]),
    }
}

#[test]
fn attention_single_token_is_value_then_output_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = 4;
    let x = random(&mut rng, &[2, 1, d]);
    let mut t = Tape::new();
    let p = attention_params(&mut t, &mut rng, d);
    let xv = t.constant(x.clone());
    let out = multihead_attention(&mut t, xv, 2, &p).unwrap();

    let x2 = t.reshape(xv, &[2, d]).unwrap();
    let v = t.matmul(x2, p.wv).unwrap();
    let v = t.add_bias(v, p.bv).unwrap();
    let o = t.matmul(v, p.wo).unwrap();
    let o = t.add_bias(o, p.bo).unwrap();
    for (a, b) in t.value(out.output).iter().zip(t.value(o)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (n, tt, d) = (1, 4, 6);
    let x = random(&mut rng, &[n, tt, d]);
    let perm = [2usize, 0, 3, 1];
    let mut xp = vec![0.0; x.len()];
    for (dst, &src) in perm.iter().enumerate() {
        xp[dst * d..(dst + 1) * d].copy_from_slice(&x.data()[src * d..(src + 1) * d]);
    }
    let mut t = Tape::new();
    let p = attention_params(&mut t, &mut rng, d);
    let a = t.constant(x);
    let b = t.constant(Tensor::new(vec![n, tt, d], xp).unwrap());
    let ya = multihead_attention(&mut t, a, 3, &p).unwrap();
    let yb = multihead_attention(&mut t, b, 3, &p).unwrap();
    let (va, vb) = (t.value(ya.output).to_vec(), t.value(yb.output).to_vec());
    for (dst, &src) in perm.iter().enumerate() {
        for j in 0..d {
            assert!((vb[dst * d + j] - va[src * d + j]).abs() < 1e-12);
        }
    }
    for row in t.value(ya.weights).chunks(tt) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn attention_rejects_indivisible_heads() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut t = Tape::new();
    let p = attention_params(&mut t, &mut rng, 4);
    let x = t.constant(Tensor::zeros(&[1, 2, 4]));
    assert!(multihead_attention(&mut t, x, 3, &p).is_err());
}

#[test]
fn attention_gradient_check() {
    check("attention", 10, gradients::attention);
}

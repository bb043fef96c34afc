//! Finite-difference gradient checks shared by the tensor, model and
//! acceptance suites.

use neurocam::model::{Conformer, ConformerConfig, Mode};
use neurocam::tensor::{
    grad_check, grad_check_at, multihead_attention, nudge_off_kinks, AttentionParams,
    BatchNormMode, RngState, Tape, Tensor, TensorError, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-4;
pub const EPS: f64 = 1e-5;

/// One seeded trial of a primitive check; returns the max relative error.
pub type Primitive = fn(&mut ChaCha8Rng, u64) -> f64;

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

pub fn random_shape(rng: &mut ChaCha8Rng, ndim: usize) -> Vec<usize> {
    (0..ndim).map(|_| rng.random_range(1..=6)).collect()
}

/// Contracts `y` with a fixed random projection so every output coordinate
/// contributes to the scalar under test.
pub fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let w = random(&mut rng, tape.shape(y));
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

/// Runs `f` for seeds `0..seeds`; returns the worst error and its seed.
pub fn worst_over_seeds(seeds: u64, f: Primitive) -> (f64, u64) {
    (0..seeds)
        .map(|seed| (f(&mut ChaCha8Rng::seed_from_u64(seed), seed), seed))
        .fold((0.0, 0), |a, b| if b.0 > a.0 { b } else { a })
}

pub fn add_sub_mul(rng: &mut ChaCha8Rng, seed: u64) -> f64 {
    let shape = random_shape(rng, 2);
    let other = random(rng, &shape);
    let input = random(rng, &shape);
    grad_check(
        |t, x| {
            let o = t.constant(other.clone());
            let a = t.add(x, o)?;
            let b = t.mul(a, x)?;
            let c = t.sub(b, o)?;
            let d = t.scale(c, 0.7);
            project(t, d, seed)
        },
        &input,
        EPS,
    )
    .unwrap()
}

pub fn matmul(rng: &mut ChaCha8Rng, seed: u64) -> f64 {
    let (m, k, n) = (
        rng.random_range(1..=6),
        rng.random_range(1..=6),
        rng.random_range(1..=6),
    );
    let a = random(rng, &[m, k]);
    let b = random(rng, &[k, n]);
    let e1 = grad_check(
        |t, x| {
            let bb = t.constant(b.clone());
            let y = t.matmul(x, bb)?;
            project(t, y, seed)
        },
        &a,
        EPS,
    )
    .unwrap();
    let e2 = grad_check(
        |t, x| {
            let aa = t.constant(a.clone());
            let y = t.matmul(aa, x)?;
            project(t, y, seed)
        },
        &b,
        EPS,
    )
    .unwrap();
    e1.max(e2)
}

pub fn batched_matmul(rng: &mut ChaCha8Rng, seed: u64) -> f64 {
    let bsz = rng.random_range(1..=4);
    let a = random(rng, &[bsz, 3, 4]);
    let b = random(rng, &[bsz, 4, 2]);
    grad_check(
        |t, x| {
            let bb = t.constant(b.clone());
            let y = t.matmul(x, bb)?;
            project(t, y, seed)
        },
        &a,
        EPS,
    )
    .unwrap()
}

pub fn conv2d(rng: &mut ChaCha8Rng, seed: u64) -> f64 {
    let (n, c, h, w) = (
        rng.random_range(1..=2),
        rng.random_range(1..=3),
        rng.random_range(2..=5),
        rng.random_range(3..=6),
    );
    let (kh, kw) = (rng.random_range(1..=h), rng.random_range(1..=w));
    let stride = (rng.random_range(1..=2), rng.random_range(1..=2));
    let kout = rng.random_range(1..=3);
    let x = random(rng, &[n, c, h, w]);
    let k = random(rng, &[kout, c, kh, kw]);
    let e1 = grad_check(
        |t, v| {
            let kk = t.constant(k.clone());
            let y = t.conv2d(v, kk, stride)?;
            project(t, y, seed)
        },
        &x,
        EPS,
    )
    .unwrap();
    let e2 = grad_check(
        |t, v| {
            let xx = t.constant(x.clone());
            let y = t.conv2d(xx, v, stride)?;
            project(t, y, seed)
        },
        &k,
        EPS,
    )
    .unwrap();
    e1.max(e2)
}

pub fn depthwise_conv(rng: &mut ChaCha8Rng, seed: u64) -> f64 {
    let c = rng.random_range(1..=4);
    let x = random(rng, &[2, c, 5, 4]);
    let k = random(rng, &[c, 1, 5, 1]);
    let e1 = grad_check(
        |t, v| {
            let kk = t.constant(k.clone());
            let y = t.conv2d_grouped(v, kk, (1, 1), c)?;
            project(t, y, seed)
        },
        &x,
        EPS,
    )
    .unwrap();
    let e2 = grad_check(
        |t, v| {
            let xx = t.constant(x.clone());
            let y = t.conv2d_grouped(xx, v, (1, 1), c)?;
            project(t, y, seed)
        },
        &k,
        EPS,
    )
    .unwrap();
    e1.max(e2)
}

pub fn avg_pool2d(rng: &mut ChaCha8Rng, seed: u64) -> f64 {
    let x = random(rng, &[2, 2, 3, 6]);
    let win = (rng.random_range(1..=3), rng.random_range(1..=4));
    let stride = (rng.random_range(1..=2), rng.random_range(1..=3));
    grad_check(
        |t, v| {
            let y = t.avg_pool2d(v, win, stride)?;
            project(t, y, seed)
        },
        &x,
        EPS,
    )
    .unwrap()
}

pub fn batch_norm(rng: &mut ChaCha8Rng, seed: u64) -> f64 {
    let c = rng.random_range(1..=4);
    let x = random(rng, &[3, c, 2, 3]);
    let gamma = random(rng, &[c]);
    let beta = random(rng, &[c]);
    let mean: Vec<f64> = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
    let var: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
    let mut worst: f64 = 0.0;
    for train in [true, false] {
        let e_x = grad_check(
            |t, v| {
                let g = t.constant(gamma.clone());
                let b = t.constant(beta.clone());
                let mode = if train {
                    BatchNormMode::Train
                } else {
                    BatchNormMode::Eval {
                        mean: &mean,
                        var: &var,
                    }
                };
                let (y, _) = t.batch_norm(v, g, b, mode, 1e-5)?;
                project(t, y, seed)
            },
            &x,
            EPS,
        )
        .unwrap();
        let e_g = grad_check(
            |t, v| {
                let xx = t.constant(x.clone());
                let b = t.constant(beta.clone());
                let mode = if train {
                    BatchNormMode::Train
                } else {
                    BatchNormMode::Eval {
                        mean: &mean,
                        var: &var,
                    }
                };
                let (y, _) = t.batch_norm(xx, v, b, mode, 1e-5)?;
                project(t, y, seed)
            },
            &gamma,
            EPS,
        )
        .unwrap();
        worst = worst.max(e_x).max(e_g);
    }
    worst
}

pub fn layer_norm(rng: &mut ChaCha8Rng, seed: u64) -> f64 {
    // Width 2 is degenerate: the normalized row is ±1 and its input
    // gradient is O(eps), i.e. pure finite-difference noise.
    let d = rng.random_range(3..=6);
    let x = random(rng, &[3, d]);
    let gamma = random(rng, &[d]);
    let beta = random(rng, &[d]);
    let e1 = grad_check(
        |t, v| {
            let g = t.constant(gamma.clone());
            let b = t.constant(beta.clone());
            let y = t.layer_norm(v, g, b, 1e-5)?;
            project(t, y, seed)
        },
        &x,
        EPS,
    )
    .unwrap();
    let e2 = grad_check(
        |t, v| {
            let xx = t.constant(x.clone());
            let b = t.constant(beta.clone());
            let y = t.layer_norm(xx, v, b, 1e-5)?;
            project(t, y, seed)
        },
        &gamma,
        EPS,
    )
    .unwrap();
    e1.max(e2)
}

pub fn elu_gelu(rng: &mut ChaCha8Rng, seed: u64) -> f64 {
    let shape = random_shape(rng, 2);
    let mut x = random(rng, &shape);
    nudge_off_kinks(&mut x, 1e-3);
    let e1 = grad_check(
        |t, v| {
            let y = t.elu(v);
            project(t, y, seed)
        },
        &x,
        EPS,
    )
    .unwrap();
    let e2 = grad_check(
        |t, v| {
            let y = t.gelu(v);
            project(t, y, seed)
        },
        &x,
        EPS,
    )
    .unwrap();
    e1.max(e2)
}

pub fn softmax(rng: &mut ChaCha8Rng, seed: u64) -> f64 {
    let shape = random_shape(rng, 2);
    let x = random(rng, &shape);
    grad_check(
        |t, v| {
            let y = t.softmax(v)?;
            project(t, y, seed)
        },
        &x,
        EPS,
    )
    .unwrap()
}

pub fn dropout(rng: &mut ChaCha8Rng, seed: u64) -> f64 {
    let x = random(rng, &[3, 4]);
    let state = RngState { seed, counter: 3 };
    grad_check(
        |t, v| {
            let y = t.dropout(v, 0.4, Some(state))?;
            project(t, y, seed)
        },
        &x,
        EPS,
    )
    .unwrap()
}

pub fn shape_ops(rng: &mut ChaCha8Rng, seed: u64) -> f64 {
    let x = random(rng, &[2, 3, 4]);
    let other = random(rng, &[2, 2, 4]);
    grad_check(
        |t, v| {
            let r = t.reshape(v, &[6, 4])?;
            let r = t.reshape(r, &[2, 3, 4])?;
            let o = t.constant(other.clone());
            let c = t.concat(&[v, o, r], 1)?;
            let p = t.permute(c, &[2, 0, 1])?;
            let tr = t.transpose(p)?;
            project(t, tr, seed)
        },
        &x,
        EPS,
    )
    .unwrap()
}

pub fn mean_add_bias(rng: &mut ChaCha8Rng, _seed: u64) -> f64 {
    let x = random(rng, &[3, 4]);
    let b = random(rng, &[4]);
    let e1 = grad_check(
        |t, v| {
            let bb = t.constant(b.clone());
            let y = t.add_bias(v, bb)?;
            let y2 = t.mul(y, y)?;
            t.mean(y2)
        },
        &x,
        EPS,
    )
    .unwrap();
    let e2 = grad_check(
        |t, v| {
            let xx = t.constant(x.clone());
            let y = t.add_bias(xx, v)?;
            let y2 = t.mul(y, y)?;
            t.mean(y2)
        },
        &b,
        EPS,
    )
    .unwrap();
    e1.max(e2)
}

pub fn cross_entropy(rng: &mut ChaCha8Rng, _seed: u64) -> f64 {
    let n = rng.random_range(1..=5);
    let c = rng.random_range(2..=5);
    let x = random(rng, &[n, c]);
    let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    grad_check(|t, v| t.cross_entropy(v, &targets), &x, EPS).unwrap()
}

pub fn attention(rng: &mut ChaCha8Rng, seed: u64) -> f64 {
    let d = 4;
    let x = random(rng, &[1, 3, d]);
    let params: Vec<Tensor> = (0..8)
        .map(|i| {
            if i % 2 == 0 {
                random(rng, &[d, d])
            } else {
                random(rng, &[d])
            }
        })
        .collect();
    let bind = |t: &mut Tape| {
        let v: Vec<Var> = params.iter().map(|p| t.constant(p.clone())).collect();
        AttentionParams {
            wq: v[0],
            bq: v[1],
            wk: v[2],
            bk: v[3],
            wv: v[4],
            bv: v[5],
            wo: v[6],
            bo: v[7],
        }
    };
    let e_x = grad_check(
        |t, v| {
            let p = bind(t);
            let y = multihead_attention(t, v, 2, &p)?;
            project(t, y.output, seed)
        },
        &x,
        EPS,
    )
    .unwrap();
    let e_wq = grad_check(
        |t, v| {
            let mut p = bind(t);
            p.wq = v;
            let xx = t.constant(x.clone());
            let y = multihead_attention(t, xx, 2, &p)?;
            project(t, y.output, seed)
        },
        &params[0],
        EPS,
    )
    .unwrap();
    e_x.max(e_wq)
}

/// Every primitive check, in tape-op order.
pub const PRIMITIVES: &[(&str, Primitive)] = &[
    ("add/sub/mul", add_sub_mul as Primitive),
    ("matmul", matmul as Primitive),
    ("batched matmul", batched_matmul as Primitive),
    ("conv2d", conv2d as Primitive),
    ("depthwise conv", depthwise_conv as Primitive),
    ("avg_pool2d", avg_pool2d as Primitive),
    ("batch_norm", batch_norm as Primitive),
    ("layer_norm", layer_norm as Primitive),
    ("elu/gelu", elu_gelu as Primitive),
    ("softmax", softmax as Primitive),
    ("dropout", dropout as Primitive),
    ("reshape/permute/concat", shape_ops as Primitive),
    ("mean/add_bias", mean_add_bias as Primitive),
    ("cross_entropy", cross_entropy as Primitive),
    ("attention", attention as Primitive),
];

pub fn random_input(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Finite-difference check of the full network: for every parameter tensor
/// (and the input) a few coordinates are perturbed while everything else is
/// held fixed. Training mode is used so batch-norm batch statistics and fixed
/// dropout masks are part of the checked function. Returns the worst
/// relative error, or the offending tensor.
pub fn full_model_grad_check(
    cfg: ConformerConfig,
    seed: u64,
    coords_per_tensor: usize,
) -> Result<f64, String> {
    let model = Conformer::build(cfg, RngState::new(seed)).unwrap();
    let n = 2;
    let input = random_input(&model.input_shape(n), seed + 100);
    let labels = [0usize, 1];
    let mode = Mode::Train {
        rng: RngState::new(seed + 200),
    };
    let mut pick = ChaCha8Rng::seed_from_u64(seed + 300);

    let mut names: Vec<Option<String>> =
        model.params.names().map(|s| Some(s.to_string())).collect();
    names.push(None);
    let mut worst: f64 = 0.0;
    for name in names {
        let label = name.as_deref().unwrap_or("input").to_string();
        let point = match &name {
            Some(nm) => model.params.get(nm).unwrap().clone(),
            None => input.clone(),
        };
        let coords: Vec<usize> = (0..coords_per_tensor.min(point.len()))
            .map(|_| pick.random_range(0..point.len()))
            .collect();
        let f = |tape: &mut Tape, v: Var| -> neurocam::tensor::Result<Var> {
            let mut p = model.bind(tape, false);
            let x = match &name {
                Some(nm) => {
                    p.0.insert(nm.clone(), v);
                    tape.constant(input.clone())
                }
                None => v,
            };
            let out = model.forward(tape, &p, x, mode).expect("forward");
            tape.cross_entropy(out.logits, &labels)
        };
        if label.ends_with("attn.bk") {
            // Softmax is invariant to a per-query shift, and q·b_k shifts every
            // key score of a query equally: this gradient is identically zero,
            // where a relative error only measures rounding noise.
            let mut tape = Tape::new();
            let v = tape.leaf(point.clone(), true);
            let y = f(&mut tape, v).unwrap();
            tape.backward(y).unwrap();
            let g = tape.grad(v).unwrap();
            if g.iter().any(|x| x.abs() >= 1e-12) {
                return Err(format!(
                    "seed {seed}: `{label}` gradient should vanish, got {g:?}"
                ));
            }
            continue;
        }
        let err = grad_check_at(f, &point, EPS, &coords).unwrap();
        if err.is_nan() || err >= TOL {
            return Err(format!("seed {seed}: `{label}` relative error {err:e}"));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

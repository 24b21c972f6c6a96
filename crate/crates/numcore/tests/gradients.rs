//! Every tape op checked against central differences on random inputs.

use numcore::{grad_check, NdArray, Result, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 20;
const TOL: f64 = 1e-4;
const H: f64 = 1e-5;

fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize]) -> NdArray {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    NdArray::from_vec(shape.to_vec(), data).unwrap()
}

/// Reduces an arbitrary output to a scalar with fixed random weights so that
/// every output element contributes a distinct cotangent.
fn weighted_sum(t: &mut Tape, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = rand_array(&mut rng, t.shape(y));
    let wv = t.constant(w);
    let p = t.mul(y, wv);
    t.sum(p)
}

/// Runs `build` with `x` as the differentiated input (and any other tensors
/// baked in as constants), for each seed.
fn check_op(name: &str, shape: &[usize], build: impl Fn(&mut Tape, Var, &mut ChaCha8Rng) -> Var) {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_array(&mut rng, shape);
        let f = |t: &mut Tape, xv: Var| -> Result<Var> {
            let mut r = ChaCha8Rng::seed_from_u64(1000 + seed);
            let y = build(t, xv, &mut r);
            Ok(weighted_sum(t, y, seed))
        };
        let err = grad_check(f, &x, H).unwrap();
        assert!(err <= TOL, "{name}: seed {seed} relative error {err:e}");
    }
}

fn param(t: &mut Tape, rng: &mut ChaCha8Rng, shape: &[usize]) -> Var {
    let a = rand_array(rng, shape);
    t.param(a)
}

#[test]
fn elementwise_ops() {
    check_op("add", &[3, 4], |t, x, r| {
        let y = param(t, r, &[3, 4]);
        t.add(x, y)
    });
    check_op("sub", &[3, 4], |t, x, r| {
        let y = param(t, r, &[3, 4]);
        t.sub(y, x)
    });
    check_op("mul", &[3, 4], |t, x, r| {
        let y = param(t, r, &[3, 4]);
        t.mul(x, y)
    });
    check_op("scale", &[5], |t, x, _| t.scale(x, -2.5));
    check_op("gelu", &[2, 6], |t, x, _| t.gelu(x));
    check_op("tanh", &[2, 6], |t, x, _| t.tanh(x));
    check_op("sigmoid", &[2, 6], |t, x, _| t.sigmoid(x));
    check_op("exp", &[7], |t, x, _| t.exp(x));
    check_op("relu", &[9], |t, x, _| t.relu(x));
}

#[test]
fn broadcast_ops() {
    check_op("add_last/x", &[2, 3, 4], |t, x, r| {
        let b = param(t, r, &[4]);
        t.add_last(x, b)
    });
    check_op("add_last/bias", &[4], |t, b, r| {
        let x = param(t, r, &[2, 3, 4]);
        t.add_last(x, b)
    });
    check_op("mul_last/x", &[2, 3, 4], |t, x, r| {
        let w = param(t, r, &[4]);
        t.mul_last(x, w)
    });
    check_op("mul_last/w", &[4], |t, w, r| {
        let x = param(t, r, &[2, 3, 4]);
        t.mul_last(x, w)
    });
    check_op("add_const", &[2, 3, 4], |t, x, r| {
        let c = rand_array(r, &[3, 4]);
        t.add_const(x, &c)
    });
}

#[test]
fn shape_ops() {
    check_op("reshape", &[2, 6], |t, x, _| t.reshape(x, &[3, 4]));
    check_op("slice_flat", &[10], |t, x, _| t.slice_flat(x, 3, &[2, 3]));
    check_op("pad_time", &[2, 3, 2], |t, x, _| t.pad_time(x, 2, 1));
    check_op("slice_time", &[2, 5, 2], |t, x, _| t.slice_time(x, 1, 3));
    check_op("avg_pool_time", &[2, 7, 3], |t, x, _| t.avg_pool_time(x, 2));
    check_op("mean_time", &[2, 5, 3], |t, x, _| t.mean_time(x));
    check_op("reverse_time", &[2, 5, 3], |t, x, _| t.reverse_time(x));
    check_op("concat_last", &[2, 3, 2], |t, x, r| {
        let y = param(t, r, &[2, 3, 4]);
        t.concat_last(y, x)
    });
    check_op("mean", &[4, 2], |t, x, _| t.mean(x));
}

#[test]
fn dense_ops() {
    check_op("linear/x", &[2, 5, 3], |t, x, r| {
        let w = param(t, r, &[4, 3]);
        let b = param(t, r, &[4]);
        t.linear(x, w, Some(b))
    });
    check_op("linear/w", &[4, 3], |t, w, r| {
        let x = param(t, r, &[6, 3]);
        t.linear(x, w, None)
    });
    for stride in [1, 2] {
        check_op("conv1d/x", &[2, 9, 3], |t, x, r| {
            let w = param(t, r, &[4, 3, 3]);
            t.conv1d(x, w, stride)
        });
        check_op("conv1d/w", &[4, 3, 3], |t, w, r| {
            let x = param(t, r, &[2, 9, 3]);
            t.conv1d(x, w, stride)
        });
    }
}

#[test]
fn normalization_ops() {
    check_op("layer_norm/x", &[2, 3, 5], |t, x, r| {
        let g = param(t, r, &[5]);
        let b = param(t, r, &[5]);
        t.layer_norm(x, g, b, 1e-5)
    });
    check_op("layer_norm/gamma", &[5], |t, g, r| {
        let x = param(t, r, &[2, 3, 5]);
        let b = param(t, r, &[5]);
        t.layer_norm(x, g, b, 1e-5)
    });
    check_op("batch_norm/x", &[3, 4, 5], |t, x, r| {
        let g = param(t, r, &[5]);
        let b = param(t, r, &[5]);
        t.batch_norm(x, g, b, 1e-5).0
    });
    check_op("batch_norm/gamma", &[5], |t, g, r| {
        let x = param(t, r, &[3, 4, 5]);
        let b = param(t, r, &[5]);
        t.batch_norm(x, g, b, 1e-5).0
    });
    check_op("batch_norm_eval", &[3, 4, 5], |t, x, r| {
        let g = param(t, r, &[5]);
        let b = param(t, r, &[5]);
        t.batch_norm_eval(
            x,
            g,
            b,
            &[0.1, -0.2, 0.0, 0.3, 0.5],
            &[1.0, 0.5, 2.0, 0.9, 1.1],
            1e-5,
        )
    });
    check_op("dropout", &[4, 6], |t, x, r| t.dropout(x, 0.3, r));
}

#[test]
fn attention_ops() {
    check_op("self_attention/q", &[2, 4, 6], |t, q, r| {
        let k = param(t, r, &[2, 4, 6]);
        let v = param(t, r, &[2, 4, 6]);
        t.self_attention(q, k, v, 2)
    });
    check_op("self_attention/k", &[2, 4, 6], |t, k, r| {
        let q = param(t, r, &[2, 4, 6]);
        let v = param(t, r, &[2, 4, 6]);
        t.self_attention(q, k, v, 3)
    });
    check_op("self_attention/v", &[2, 4, 6], |t, v, r| {
        let q = param(t, r, &[2, 4, 6]);
        let k = param(t, r, &[2, 4, 6]);
        t.self_attention(q, k, v, 2)
    });
    check_op("attention_pool/x", &[2, 5, 3], |t, x, r| {
        let w = param(t, r, &[3]);
        t.attention_pool(x, w)
    });
    check_op("attention_pool/w", &[3], |t, w, r| {
        let x = param(t, r, &[2, 5, 3]);
        t.attention_pool(x, w)
    });
}

#[test]
fn cross_entropy_op() {
    check_op("cross_entropy", &[3, 4], |t, z, _| {
        t.cross_entropy(z, &[0, 3, 2]).unwrap()
    });
}

#[test]
fn cross_entropy_rejects_bad_label() {
    let mut t = Tape::new();
    let z = t.param(NdArray::zeros(vec![1, 4]));
    assert!(t.cross_entropy(z, &[4]).is_err());
}

#[test]
fn attention_weights_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = rand_array(&mut rng, &[2, 7, 8]);
    let k = rand_array(&mut rng, &[2, 7, 8]);
    let w = numcore::ops::attention_weights(&q, &k, 4);
    for row in w.data().chunks(7) {
        let s: f64 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn unused_leaf_gets_no_gradient() {
    let mut t = Tape::new();
    let a = t.param(NdArray::vector(&[1.0, 2.0]));
    let b = t.param(NdArray::vector(&[3.0]));
    let s = t.sum(a);
    let g = t.backward(s).unwrap();
    assert!(g.get(b).is_none());
    assert_eq!(g.get(a).unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn shared_subexpression_accumulates() {
    // y = sum(x*x + x) → dy/dx = 2x + 1, with x used three times.
    let mut t = Tape::new();
    let x = t.param(NdArray::vector(&[0.5, -2.0]));
    let sq = t.mul(x, x);
    let y = t.add(sq, x);
    let s = t.sum(y);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[2.0, -3.0]);
}

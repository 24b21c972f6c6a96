use eegbench::baselines::{count_params, positional_encoding};
use eegbench::model::layers::{Conv1d, Linear};
use eegbench::model::*;
use eegbench::ssm::classifier::S5Block;
use eegbench::BenchError;
use numcore::ops::{attention_pool_weights, attention_weights, reverse_time_array};
use numcore::{grad_check, NdArray, Tape, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(seed: u64, shape: Vec<usize>) -> NdArray {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    NdArray::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn spec(kind: ModelKind) -> ModelSpec {
    ModelSpec {
        kind,
        ..ModelSpec::default()
    }
}

/// Small configurations of every family used for gradient checks.
fn tiny(kind: ModelKind) -> ModelSpec {
    let mut s = ModelSpec {
        kind,
        seed: 5,
        in_channels: 3,
        ..ModelSpec::default()
    };
    s.s5 = S5Config {
        hidden: 6,
        state: 4,
        blocks: 2,
        bidirectional: true,
        dropout: 0.1,
    };
    s.s4 = S4Config {
        hidden: 5,
        state: 3,
        layers: 2,
        dropout: 0.1,
    };
    s.cnn = CnnConfig {
        channels: vec![4, 5],
        kernel: 3,
        pool: 2,
        dropout: 0.1,
    };
    s.lstm = LstmConfig {
        hidden: 8,
        layers: 2,
        bidirectional: true,
        dropout: 0.1,
    };
    s.eegxf = EegxfConfig {
        d_model: 16,
        heads: 2,
        layers: 1,
        ff: 24,
        dropout: 0.1,
        patch: 8,
        input_gain: 2.0,
    };
    s
}

fn tiny_len(kind: ModelKind) -> usize {
    match kind {
        ModelKind::Lstm => 16,
        ModelKind::Eegxf => 32,
        _ => 24,
    }
}

fn logits_eval(model: &Model, x: &NdArray) -> NdArray {
    let mut tape = Tape::new();
    let params = Bound::frozen(&mut tape, &model.store);
    let mut pass = Pass::eval(&model.store);
    let out = model.logits(&mut tape, &params, &mut pass, x).unwrap();
    tape.value(out).clone()
}

fn probe(tape: &mut Tape, out: Var, w: &NdArray) -> Var {
    let wv = tape.constant(w.clone());
    let prod = tape.mul(out, wv);
    tape.sum(prod)
}

#[test]
fn linear_and_conv_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    Linear::new(&mut store, &mut rng, "fc", 4, 3);
    assert_eq!(store.count(), 15);
    let mut store = ParamStore::new();
    Conv1d::new(&mut store, &mut rng, "conv", 2, 3, 5);
    assert_eq!(store.count(), 33);
}

#[test]
fn parameter_economy() {
    let s5 = count_params(&Model::new(spec(ModelKind::S5)).unwrap());
    let cnn = count_params(&Model::new(spec(ModelKind::Cnn)).unwrap());
    assert!((155_000..=210_000).contains(&s5), "s5 has {s5} parameters");
    assert!(
        (3_500_000..=5_300_000).contains(&cnn),
        "cnn has {cnn} parameters"
    );
    assert!(s5 as f64 <= 0.1 * cnn as f64);
}

#[test]
fn running_statistics_are_not_counted() {
    let model = Model::new(spec(ModelKind::Cnn)).unwrap();
    let total: usize = model.store.params.iter().map(|p| p.value.len()).sum();
    assert_eq!(count_params(&model), total);
    assert!(!model.store.buffers.is_empty());
}

#[test]
fn construction_is_deterministic_per_seed() {
    for kind in ModelKind::ALL {
        let a = Model::new(tiny(kind)).unwrap();
        let b = Model::new(tiny(kind)).unwrap();
        assert_eq!(a.store, b.store, "{kind}");
        let c = Model::new(tiny(kind).with_seed(6)).unwrap();
        assert_ne!(a.store.flatten(), c.store.flatten(), "{kind}");
    }
}

#[test]
fn default_models_map_to_four_logits() {
    let cases = [
        (ModelKind::S5, 2000),
        (ModelKind::S4, 2000),
        (ModelKind::Cnn, 2000),
        (ModelKind::Lstm, 500),
        (ModelKind::Eegxf, 2000),
    ];
    for (kind, t) in cases {
        let model = Model::new(spec(kind)).unwrap();
        let x = random(1, vec![2, 64, t]);
        let out = logits_eval(&model, &x);
        assert_eq!(out.shape(), &[2, 4], "{kind}");
        assert!(out.data().iter().all(|v| v.is_finite()), "{kind}");
        let probs = model.predict_proba(&x).unwrap();
        for row in probs.data().chunks(4) {
            assert!(
                (row.iter().sum::<f64>() - 1.0).abs() < 1e-12,
                "{kind}: {row:?}"
            );
        }
    }
}

#[test]
fn s5_accepts_any_length() {
    let model = Model::new(spec(ModelKind::S5)).unwrap();
    for t in [512, 2000, 8192] {
        let out = logits_eval(&model, &random(t as u64, vec![1, 64, t]));
        assert_eq!(out.shape(), &[1, 4]);
        assert!(out.data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn inputs_are_validated() {
    let model = Model::new(tiny(ModelKind::S5)).unwrap();
    let mut tape = Tape::new();
    assert!(matches!(
        model.input(&mut tape, &NdArray::zeros(vec![1, 4, 10])),
        Err(BenchError::Data(_))
    ));
    assert!(matches!(
        model.input(&mut tape, &NdArray::zeros(vec![3, 10])),
        Err(BenchError::Data(_))
    ));
}

#[test]
fn cnn_rejects_inputs_shorter_than_its_receptive_field() {
    let model = Model::new(spec(ModelKind::Cnn)).unwrap();
    // three valid k=11 convolutions, each followed by halving
    let need = ((2 + 10) * 2 + 10) * 2 + 10;
    assert_eq!(model.min_len(), need);
    let mut tape = Tape::new();
    let err = model
        .input(&mut tape, &NdArray::zeros(vec![1, 64, need - 1]))
        .unwrap_err();
    assert!(matches!(err, BenchError::Data(_)));
    assert_eq!(
        logits_eval(&model, &random(2, vec![1, 64, need])).shape(),
        &[1, 4]
    );
}

#[test]
fn lstm_zero_input_and_biases_give_head_bias() {
    let mut model = Model::new(spec(ModelKind::Lstm)).unwrap();
    for p in model.store.params.iter_mut() {
        if p.name.ends_with(".bias") && p.name.starts_with("layers.") {
            p.value = NdArray::zeros(p.value.shape().to_vec());
        }
    }
    let head_bias = NdArray::vector(&[0.3, -1.2, 0.7, 2.5]);
    let id = model.store.find("head.bias").unwrap();
    *model.store.param_mut(id) = head_bias.clone();
    let out = logits_eval(&model, &NdArray::zeros(vec![2, 64, 500]));
    for row in out.data().chunks(4) {
        assert_eq!(row, head_bias.data());
    }
}

#[test]
fn eegxf_tokenizer_has_doubled_fan_in_variance() {
    let model = Model::new(spec(ModelKind::Eegxf)).unwrap();
    let w = model.store.param(model.store.find("embed.weight").unwrap());
    let fan_in = w.shape()[1];
    assert_eq!(fan_in, 8 * 64);
    let n = w.len() as f64;
    let mean = w.data().iter().sum::<f64>() / n;
    let var = w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let ratio = var * fan_in as f64;
    assert!((1.8..=2.2).contains(&ratio), "variance ratio {ratio}");
}

#[test]
fn eegxf_truncates_ragged_inputs() {
    let model = Model::new(spec(ModelKind::Eegxf)).unwrap();
    assert!(model.input_warning(2000).is_none());
    assert!(model.input_warning(2003).unwrap().contains("patch"));
    let x = random(3, vec![1, 64, 2003]);
    let mut head = vec![0.0; 64 * 2000];
    for (ch, row) in head.chunks_mut(2000).enumerate() {
        row.copy_from_slice(&x.data()[ch * 2003..ch * 2003 + 2000]);
    }
    let trimmed = NdArray::from_vec(vec![1, 64, 2000], head).unwrap();
    assert_eq!(logits_eval(&model, &x), logits_eval(&model, &trimmed));
}

#[test]
fn eegxf_attention_rows_are_distributions() {
    let q = random(4, vec![2, 250, 128]);
    let k = random(5, vec![2, 250, 128]);
    let w = attention_weights(&q, &k, 4);
    assert_eq!(w.shape(), &[2, 4, 250, 250]);
    for row in w.data().chunks(250) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
    }
}

#[test]
fn positional_table_alternates_sine_and_cosine() {
    let pe = positional_encoding(3, 4);
    assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
    let f = 10_000f64.powf(-0.5);
    let expect = [2f64.sin(), 2f64.cos(), (2.0 * f).sin(), (2.0 * f).cos()];
    for (a, b) in pe.row(2).iter().zip(expect) {
        assert!((a - b).abs() < 1e-15);
    }
}

fn pool(x: &NdArray, w: &NdArray) -> NdArray {
    let mut tape = Tape::new();
    let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
    let out = tape.attention_pool(xv, wv);
    tape.value(out).clone()
}

#[test]
fn attention_pool_with_uniform_scores_is_the_mean() {
    let x = random(6, vec![2, 7, 3]);
    let out = pool(&x, &NdArray::zeros(vec![3]));
    for b in 0..2 {
        for j in 0..3 {
            let mean = (0..7).map(|t| x.data()[(b * 7 + t) * 3 + j]).sum::<f64>() / 7.0;
            assert!((out.data()[b * 3 + j] - mean).abs() < 1e-14);
        }
    }
}

#[test]
fn attention_pool_of_one_step_is_that_step() {
    let x = random(7, vec![2, 1, 5]);
    let out = pool(&x, &random(8, vec![5]));
    assert_eq!(out.data(), x.data());
}

proptest! {
    #[test]
    fn attention_pool_weights_sum_to_one(seed in any::<u64>(), t in 1usize..40, d in 1usize..9) {
        let x = random(seed, vec![2, t, d]).data().iter().map(|v| 10.0 * v).collect::<Vec<_>>();
        let x = NdArray::from_vec(vec![2, t, d], x).unwrap();
        let w = attention_pool_weights(&x, &random(seed ^ 1, vec![d]));
        for row in w.data().chunks(t) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&a| a >= 0.0));
        }
    }
}

fn block_setup() -> (ParamStore, S5Block) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let block = S5Block::new(&mut store, &mut rng, "block", 6, 4, true, 0.1).unwrap();
    (store, block)
}

fn run_block(store: &ParamStore, block: &S5Block, x: &NdArray) -> NdArray {
    let mut tape = Tape::new();
    let params = Bound::frozen(&mut tape, store);
    let mut pass = Pass::eval(store);
    let xv = tape.constant(x.clone());
    let y = block.forward(&mut tape, &params, &mut pass, xv);
    tape.value(y).clone()
}

#[test]
fn s5_block_with_silent_readout_is_identity() {
    let (mut store, block) = block_setup();
    for layer in [&block.fwd, block.bwd.as_ref().unwrap()] {
        for id in [layer.c_re, layer.c_im, layer.d] {
            let shape = store.param(id).shape().to_vec();
            *store.param_mut(id) = NdArray::zeros(shape);
        }
    }
    let x = random(10, vec![2, 30, 6]);
    assert_eq!(run_block(&store, &block, &x), x);
}

#[test]
fn s5_block_is_time_reversal_symmetric_under_direction_swap() {
    let (store, block) = block_setup();
    let swapped = S5Block {
        fwd: block.bwd.clone().unwrap(),
        bwd: Some(block.fwd.clone()),
        ..block.clone()
    };
    let x = random(11, vec![2, 40, 6]);
    let y = run_block(&store, &block, &x);
    let y_rev = run_block(&store, &swapped, &reverse_time_array(&x));
    assert!(reverse_time_array(&y_rev).max_abs_diff(&y) < 1e-12);
}

#[test]
fn batch_norm_running_statistics_track_unbiased_variance() {
    let mut store = ParamStore::new();
    let norm = BatchNorm::new(&mut store, "bn", 2);
    let x = NdArray::from_vec(vec![4, 2], vec![1.0, 0.0, 2.0, 0.0, 3.0, 4.0, 4.0, 4.0]).unwrap();
    let mut tape = Tape::new();
    let params = Bound::frozen(&mut tape, &store);
    let mut pass = Pass::train(&store, 0);
    let xv = tape.constant(x);
    norm.forward(&mut tape, &params, &mut pass, xv);
    let updates = std::mem::take(&mut pass.updates);
    drop(pass);
    for u in &updates {
        u.apply(&mut store, BN_MOMENTUM);
    }
    // means 2.5 and 2; unbiased variances 5/3 and 16/3
    let mean = store.buffer(norm.running_mean).data().to_vec();
    let var = store.buffer(norm.running_var).data().to_vec();
    assert!((mean[0] - 0.25).abs() < 1e-15 && (mean[1] - 0.2).abs() < 1e-15);
    assert!((var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-14);
    assert!((var[1] - (0.9 + 0.1 * 16.0 / 3.0)).abs() < 1e-14);
}

fn model_grad_error(kind: ModelKind) -> f64 {
    let model = Model::new(tiny(kind)).unwrap();
    let x = random(12, vec![3, 3, tiny_len(kind)]);
    let w = random(13, vec![3, 4]);
    let f = |tape: &mut Tape, flat: Var| {
        let params = Bound::from_flat(tape, flat, &model.store);
        let mut pass = Pass::train(&model.store, 21);
        let out = model.logits(tape, &params, &mut pass, &x).unwrap();
        Ok(probe(tape, out, &w))
    };
    grad_check(f, &model.store.flatten(), 1e-5).unwrap()
}

#[test]
fn s5_parameter_gradients() {
    let err = model_grad_error(ModelKind::S5);
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn s4_parameter_gradients() {
    let err = model_grad_error(ModelKind::S4);
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn cnn_parameter_gradients() {
    let err = model_grad_error(ModelKind::Cnn);
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn lstm_parameter_gradients() {
    let err = model_grad_error(ModelKind::Lstm);
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn eegxf_parameter_gradients() {
    let err = model_grad_error(ModelKind::Eegxf);
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn input_gradients_for_every_model() {
    for kind in ModelKind::ALL {
        let model = Model::new(tiny(kind)).unwrap();
        let w = random(14, vec![2, 4]);
        let f = |tape: &mut Tape, xv: Var| {
            let params = Bound::frozen(tape, &model.store);
            let mut pass = Pass::train(&model.store, 3);
            let out = model.forward(tape, &params, &mut pass, xv).unwrap();
            Ok(probe(tape, out, &w))
        };
        let x = random(15, vec![2, tiny_len(kind), 3]);
        let err = grad_check(f, &x, 1e-5).unwrap();
        assert!(err <= 1e-4, "{kind}: {err}");
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    for kind in ModelKind::ALL {
        let mut model = Model::new(tiny(kind)).unwrap();
        let id = model.store.find("head.bias").unwrap();
        model.store.param_mut(id).data_mut()[0] = 0.123;
        for b in model.store.buffers.iter_mut() {
            b.value.data_mut().iter_mut().for_each(|v| *v += 0.5);
        }
        let path = dir.path().join(kind.as_str());
        save_checkpoint(&path, &model).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.store, model.store);
        assert_eq!(loaded.spec(), model.spec());
        let x = random(16, vec![2, 3, tiny_len(kind)]);
        assert_eq!(
            loaded.predict_proba(&x).unwrap(),
            model.predict_proba(&x).unwrap()
        );
    }
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::new(tiny(ModelKind::Cnn)).unwrap();
    save_checkpoint(dir.path(), &model).unwrap();
    let weights = dir.path().join(checkpoint::WEIGHTS_FILE);
    let bytes = std::fs::read(&weights).unwrap();
    std::fs::write(&weights, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(
        load_checkpoint(dir.path()),
        Err(BenchError::Corrupt { .. })
    ));
}

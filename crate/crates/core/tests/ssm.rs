use eegbench::ssm::*;
use numcore::{grad_check, Complex64, ComplexArray, NdArray, Tape, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn random_complex(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> ComplexArray {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    NdArray::from_vec(shape, data).unwrap()
}

fn random_real(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> NdArray {
    let n = shape.iter().product();
    NdArray::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// A stable random discrete system: `|Λ̄| ∈ [0.5, 0.999]`, arbitrary phase.
fn random_system(rng: &mut ChaCha8Rng, p: usize, h: usize) -> (DiscreteS5, ComplexArray, NdArray) {
    let lambda_bar: Vec<Complex64> = (0..p)
        .map(|_| Complex64::from_polar(rng.random_range(0.5..0.999), rng.random_range(-3.1..3.1)))
        .collect();
    let disc = DiscreteS5 {
        lambda_bar: NdArray::vector(&lambda_bar),
        b_bar: random_complex(rng, vec![p, h]),
    };
    (
        disc,
        random_complex(rng, vec![h, p]),
        random_real(rng, vec![h]),
    )
}

/// `max|a − b| / max|b|`.
fn rel_err(a: &NdArray, reference: &NdArray) -> f64 {
    let scale = reference.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.max_abs_diff(reference) / scale
}

// ---------------------------------------------------------------- init

#[test]
fn init_follows_diagonal_hippo() {
    let params = init_s5(16, 8, 3).unwrap();
    let lambda = params.lambda();
    for (p, l) in lambda.iter().enumerate() {
        assert!((l.re + 0.5).abs() < 1e-15);
        assert_eq!(l.im, std::f64::consts::PI * p as f64);
    }
    assert!(lambda.windows(2).all(|w| w[1].im > w[0].im));
    assert!(params.dt().iter().all(|&d| (DT_MIN..=DT_MAX).contains(&d)));
    assert_eq!(params.b.shape(), [16, 8]);
    assert_eq!(params.c.shape(), [8, 16]);
    assert_eq!(params.d.shape(), [8]);
}

#[test]
fn init_is_deterministic() {
    assert_eq!(init_s5(8, 4, 11).unwrap(), init_s5(8, 4, 11).unwrap());
    assert_ne!(init_s5(8, 4, 11).unwrap(), init_s5(8, 4, 12).unwrap());
}

#[test]
fn init_variances_are_close_to_target() {
    let params = init_s5(64, 192, 0).unwrap();
    let var =
        |a: &ComplexArray| a.data().iter().map(|z| z.norm_sqr()).sum::<f64>() / a.len() as f64;
    assert!((var(&params.b) * 64.0 - 1.0).abs() < 0.05);
    assert!((var(&params.c) * 192.0 - 1.0).abs() < 0.05);
    let d_var = params.d.data().iter().map(|v| v * v).sum::<f64>() / 192.0;
    assert!((d_var - 1.0).abs() < 0.25);
}

#[test]
fn zero_dimensions_are_rejected() {
    assert!(init_s5(0, 4, 0).is_err());
    assert!(init_s5(4, 0, 0).is_err());
}

// ---------------------------------------------------------------- discretization

fn scalar_params(lambda: Complex64, dt: f64, b: Complex64) -> S5LayerParams {
    S5LayerParams::from_lambda(
        &[lambda],
        NdArray::from_vec(vec![1, 1], vec![b]).unwrap(),
        NdArray::from_vec(vec![1, 1], vec![c(1.0, 0.0)]).unwrap(),
        NdArray::vector(&[0.0]),
        &[dt],
    )
    .unwrap()
}

#[test]
fn zoh_closed_form_example() {
    let params = scalar_params(c(-1.0, 0.0), 0.5, c(1.0, 0.0));
    let (lb, bb) = params.zoh_discretize(0);
    // oracle: e^{-1/2} from its power series
    let e_half: f64 = (0..30)
        .map(|k| (-0.5f64).powi(k) / (1..=k).map(|v| v as f64).product::<f64>())
        .sum();
    assert!((lb - e_half).norm() < 1e-14);
    assert!((bb[0] - (1.0 - e_half)).norm() < 1e-14);
    assert!((lb.re - 0.60653).abs() < 5e-6);
    assert!((bb[0].re - 0.39347).abs() < 5e-6);
}

#[test]
fn zoh_small_eigenvalue_limit() {
    let params = scalar_params(c(-1e-13, 0.0), 0.25, c(2.0, -1.0));
    let (lb, bb) = params.zoh_discretize(0);
    assert!((lb - 1.0).norm() < 1e-12);
    assert!((bb[0] - c(0.5, -0.25)).norm() < 1e-12);
    let t = ZohTerms::new(c(0.0, 0.0), 0.25);
    assert_eq!(t.q, c(0.25, 0.0));
}

#[test]
fn zoh_zero_step_is_identity() {
    let t = ZohTerms::new(c(-0.7, 2.0), 0.0);
    assert_eq!(t.lambda_bar, c(1.0, 0.0));
    assert_eq!(t.q, c(0.0, 0.0));
}

#[test]
fn discretize_matches_per_state_rows() {
    let params = init_s5(6, 3, 5).unwrap();
    let disc = params.discretize();
    for p in 0..6 {
        let (lb, row) = params.zoh_discretize(p);
        assert_eq!(disc.lambda_bar.data()[p], lb);
        assert_eq!(disc.b_bar.row(p), row.as_slice());
    }
}

proptest! {
    #[test]
    fn discrete_eigenvalues_are_stable(rho in -8.0f64..4.0, imag in -100.0f64..100.0, log_dt in -12.0f64..3.0) {
        let t = ZohTerms::new(c(-rho.exp(), imag), log_dt.exp());
        prop_assert!(t.lambda_bar.norm() < 1.0);
    }
}

// ---------------------------------------------------------------- recurrence and scan

#[test]
fn zero_input_gives_zero_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (disc, cm, d) = random_system(&mut rng, 4, 3);
    let u = NdArray::zeros(vec![3, 20]);
    assert!(sequential_recurrence(&disc, &cm, &d, &u)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));
    assert!(parallel_scan(&disc, &cm, &d, &u)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));
}

#[test]
fn single_step_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (disc, cm, d) = random_system(&mut rng, 5, 3);
    let u = random_real(&mut rng, vec![3, 1]);
    let y = sequential_recurrence(&disc, &cm, &d, &u).unwrap();
    for j in 0..3 {
        let mut acc = c(0.0, 0.0);
        for p in 0..5 {
            let bu: Complex64 = (0..3).map(|i| disc.b_bar.row(p)[i] * u.data()[i]).sum();
            acc += cm.row(j)[p] * bu;
        }
        let expected = acc.re + d.data()[j] * u.data()[j];
        assert!((y.data()[j] - expected).abs() < 1e-14);
    }
}

fn scalar_system(lambda_bar: f64) -> (DiscreteS5, ComplexArray, NdArray) {
    (
        DiscreteS5 {
            lambda_bar: NdArray::vector(&[c(lambda_bar, 0.0)]),
            b_bar: NdArray::from_vec(vec![1, 1], vec![c(1.0, 0.0)]).unwrap(),
        },
        NdArray::from_vec(vec![1, 1], vec![c(1.0, 0.0)]).unwrap(),
        NdArray::vector(&[0.0]),
    )
}

#[test]
fn hand_unrolled_recurrence() {
    let (disc, cm, d) = scalar_system(0.5);
    let u = NdArray::from_vec(vec![1, 3], vec![1.0; 3]).unwrap();
    assert_eq!(
        sequential_recurrence(&disc, &cm, &d, &u).unwrap().data(),
        &[1.0, 1.5, 1.75]
    );
    assert_eq!(
        parallel_scan(&disc, &cm, &d, &u).unwrap().data(),
        &[1.0, 1.5, 1.75]
    );
}

#[test]
fn unit_eigenvalue_gives_prefix_sums() {
    let (disc, cm, d) = scalar_system(1.0);
    let u = NdArray::from_vec(vec![1, 300], (0..300).map(|v| v as f64).collect()).unwrap();
    let y = parallel_scan(&disc, &cm, &d, &u).unwrap();
    for (t, v) in y.data().iter().enumerate() {
        assert_eq!(*v, (t * (t + 1) / 2) as f64);
    }
}

#[test]
fn single_element_scan_is_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (disc, cm, _) = random_system(&mut rng, 3, 2);
    let d = NdArray::zeros(vec![2]);
    let u = random_real(&mut rng, vec![2, 1]);
    let y = parallel_scan(&disc, &cm, &d, &u).unwrap();
    let mut v = vec![c(0.7, -0.2)];
    scan_constant(c(0.3, 0.1), &mut v, &mut Vec::new());
    assert_eq!(v, [c(0.7, -0.2)]);
    assert_eq!(y, sequential_recurrence(&disc, &cm, &d, &u).unwrap());
}

#[test]
fn random_system_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (disc, cm, d) = random_system(&mut rng, 8, 4);
    let u = random_real(&mut rng, vec![4, 64]);
    let seq = sequential_recurrence(&disc, &cm, &d, &u).unwrap();
    let par = parallel_scan(&disc, &cm, &d, &u).unwrap();
    assert!(rel_err(&par, &seq) <= 1e-10);
}

#[test]
fn scan_is_independent_of_thread_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (disc, cm, d) = random_system(&mut rng, 6, 3);
    let u = random_real(&mut rng, vec![3, 700]);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| parallel_scan(&disc, &cm, &d, &u).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn mismatched_shapes_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (disc, cm, d) = random_system(&mut rng, 4, 3);
    let u = random_real(&mut rng, vec![2, 10]);
    assert!(sequential_recurrence(&disc, &cm, &d, &u).is_err());
    assert!(parallel_scan(&disc, &cm, &d, &u).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn scan_equals_recurrence(seed in any::<u64>(), p in 1usize..=16, h in 1usize..=4, l in 1usize..=256) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (disc, cm, d) = random_system(&mut rng, p, h);
        let u = random_real(&mut rng, vec![h, l]);
        let seq = sequential_recurrence(&disc, &cm, &d, &u).unwrap();
        let par = parallel_scan(&disc, &cm, &d, &u).unwrap();
        prop_assert!(rel_err(&par, &seq) <= 1e-10);
    }
}

// ---------------------------------------------------------------- convolution path

#[test]
fn first_kernel_tap_is_direct_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (disc, cm, _) = random_system(&mut rng, 5, 3);
    let k = s4_kernel(&disc, &cm, 4).unwrap();
    for o in 0..3 {
        for i in 0..3 {
            let k0: Complex64 = (0..5).map(|p| cm.row(o)[p] * disc.b_bar.row(p)[i]).sum();
            assert!((k.data()[(o * 3 + i) * 4] - k0.re).abs() < 1e-14);
        }
    }
}

#[test]
fn impulse_response_is_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (disc, cm, d) = random_system(&mut rng, 4, 2);
    let l = 16;
    let k = s4_kernel(&disc, &cm, l).unwrap();
    // impulse on input channel 1
    let mut u = NdArray::zeros(vec![2, l]);
    u.set(&[1, 0], 1.0);
    let y = s4_forward(&k, &d, &u).unwrap();
    for o in 0..2 {
        for t in 0..l {
            let feed = if o == 1 && t == 0 { d.data()[1] } else { 0.0 };
            let expected = k.data()[(o * 2 + 1) * l + t] + feed;
            assert!((y.get(&[o, t]) - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn convolution_matches_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (disc, cm, d) = random_system(&mut rng, 6, 3);
    let u = random_real(&mut rng, vec![3, 32]);
    let k = s4_kernel(&disc, &cm, 32).unwrap();
    let conv = s4_forward(&k, &d, &u).unwrap();
    let scan = parallel_scan(&disc, &cm, &d, &u).unwrap();
    assert!(conv.max_abs_diff(&scan) <= 1e-6);
}

#[test]
fn short_kernel_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (disc, cm, d) = random_system(&mut rng, 2, 2);
    let k = s4_kernel(&disc, &cm, 8).unwrap();
    assert!(s4_forward(&k, &d, &random_real(&mut rng, vec![2, 9])).is_err());
}

// ---------------------------------------------------------------- tape ops

/// Continuous parameters as the seven real arrays the tape ops consume.
fn param_arrays(params: &S5LayerParams) -> Vec<NdArray> {
    vec![
        params.log_neg_real.clone(),
        params.imag.clone(),
        params.log_dt.clone(),
        params.b.re(),
        params.b.im(),
        params.c.re(),
        params.c.im(),
    ]
}

fn bind(tape: &mut Tape, arrays: &[NdArray], probe: Option<(usize, Var)>) -> SsmVars {
    let v: Vec<Var> = arrays
        .iter()
        .enumerate()
        .map(|(k, a)| match probe {
            Some((slot, var)) if slot == k => var,
            _ => tape.constant(a.clone()),
        })
        .collect();
    SsmVars {
        log_neg_real: v[0],
        imag: v[1],
        log_dt: v[2],
        b_re: v[3],
        b_im: v[4],
        c_re: v[5],
        c_im: v[6],
    }
}

/// `[B, T, H]` tape layout of row `b` of a `[H, T]` array.
fn to_btc(rows: &[NdArray]) -> NdArray {
    let (h, t) = (rows[0].shape()[0], rows[0].shape()[1]);
    let mut data = Vec::with_capacity(rows.len() * t * h);
    for r in rows {
        data.extend(r.transpose().into_data());
    }
    NdArray::from_vec(vec![rows.len(), t, h], data).unwrap()
}

fn weights(rng: &mut ChaCha8Rng, shape: &[usize]) -> NdArray {
    random_real(rng, shape.to_vec())
}

#[test]
fn tape_scan_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut params = init_s5(5, 3, 1).unwrap();
    params.log_dt = NdArray::full(vec![5], 0.2f64.ln());
    let arrays = param_arrays(&params);
    let us: Vec<NdArray> = (0..2).map(|_| random_real(&mut rng, vec![3, 70])).collect();
    let mut tape = Tape::new();
    let vars = bind(&mut tape, &arrays, None);
    let u = tape.constant(to_btc(&us));
    let y = s5_scan(&mut tape, u, &vars);
    let disc = params.discretize();
    let zero_d = NdArray::zeros(vec![3]);
    let expected: Vec<NdArray> = us
        .iter()
        .map(|u| sequential_recurrence(&disc, &params.c, &zero_d, u).unwrap())
        .collect();
    assert!(tape.value(y).max_abs_diff(&to_btc(&expected)) < 1e-12);
}

#[test]
fn tape_kernel_and_conv_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = init_s5(4, 3, 2).unwrap();
    let arrays = param_arrays(&params);
    let u_rows: Vec<NdArray> = (0..2).map(|_| random_real(&mut rng, vec![3, 20])).collect();
    let mut tape = Tape::new();
    let vars = bind(&mut tape, &arrays, None);
    let k = s4_kernel_op(&mut tape, &vars, 24);
    let reference = s4_kernel(&params.discretize(), &params.c, 24).unwrap();
    assert!(tape.value(k).max_abs_diff(&reference) < 1e-13);
    let u = tape.constant(to_btc(&u_rows));
    let y = causal_conv(&mut tape, u, k);
    let zero_d = NdArray::zeros(vec![3]);
    let expected: Vec<NdArray> = u_rows
        .iter()
        .map(|u| s4_forward(&reference, &zero_d, u).unwrap())
        .collect();
    assert!(tape.value(y).max_abs_diff(&to_btc(&expected)) < 1e-12);
}

/// Scalar probe `Σ w ⊙ out` with fixed random weights.
fn probe(tape: &mut Tape, out: Var, w: &NdArray) -> Var {
    let wv = tape.constant(w.clone());
    let prod = tape.mul(out, wv);
    tape.sum(prod)
}

fn gradient_params(seed: u64) -> Vec<NdArray> {
    let mut params = init_s5(4, 3, seed).unwrap();
    // timescales large enough that every parameter visibly moves the output
    params.log_dt = NdArray::vector(&[0.05f64.ln(), 0.2f64.ln(), 0.5f64.ln(), 1.0f64.ln()]);
    param_arrays(&params)
}

#[test]
fn scan_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let arrays = gradient_params(3);
    let u = random_real(&mut rng, vec![2, 17, 3]);
    let w = weights(&mut rng, &[2, 17, 3]);
    let err = grad_check(
        |t, x| {
            let vars = bind(t, &arrays, None);
            let y = s5_scan(t, x, &vars);
            Ok(probe(t, y, &w))
        },
        &u,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-4, "input: {err:e}");
    for slot in 0..7 {
        let err = grad_check(
            |t, x| {
                let vars = bind(t, &arrays, Some((slot, x)));
                let uv = t.constant(u.clone());
                let y = s5_scan(t, uv, &vars);
                Ok(probe(t, y, &w))
            },
            &arrays[slot],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "parameter {slot}: {err:e}");
    }
}

#[test]
fn kernel_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let arrays = gradient_params(4);
    let w = weights(&mut rng, &[3, 3, 12]);
    for slot in 0..7 {
        let err = grad_check(
            |t, x| {
                let vars = bind(t, &arrays, Some((slot, x)));
                let k = s4_kernel_op(t, &vars, 12);
                Ok(probe(t, k, &w))
            },
            &arrays[slot],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "parameter {slot}: {err:e}");
    }
}

#[test]
fn causal_conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let u = random_real(&mut rng, vec![2, 9, 3]);
    let k = random_real(&mut rng, vec![2, 3, 11]);
    let w = weights(&mut rng, &[2, 9, 2]);
    let wrt_u = grad_check(
        |t, x| {
            let kv = t.constant(k.clone());
            let y = causal_conv(t, x, kv);
            Ok(probe(t, y, &w))
        },
        &u,
        1e-5,
    )
    .unwrap();
    let wrt_k = grad_check(
        |t, x| {
            let uv = t.constant(u.clone());
            let y = causal_conv(t, uv, x);
            Ok(probe(t, y, &w))
        },
        &k,
        1e-5,
    )
    .unwrap();
    assert!(wrt_u <= 1e-4 && wrt_k <= 1e-4, "{wrt_u:e} {wrt_k:e}");
}

use eegbench::evaluation::*;
use eegbench::BenchError;
use numcore::NdArray;
use proptest::prelude::*;

#[test]
fn accuracy_and_f1_examples() {
    assert_eq!(
        accuracy_macro_f1(&[0, 1, 2, 3], &[0, 1, 2, 3], 4).unwrap(),
        (1.0, 1.0)
    );
    let (acc, f1) = accuracy_macro_f1(&[0, 1, 0, 1], &[0, 0, 1, 1], 2).unwrap();
    assert_eq!(acc, 0.5);
    assert!((f1 - 0.5).abs() < 1e-15);
    let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
    let (acc, f1) = accuracy_macro_f1(&[0; 40], &labels, 4).unwrap();
    assert_eq!(acc, 0.25);
    assert!((f1 - 0.1).abs() < 1e-15);
}

#[test]
fn absent_classes_pull_macro_f1_down() {
    // perfect on two classes of four: absent classes contribute zero
    let (acc, f1) = accuracy_macro_f1(&[0, 1], &[0, 1], 4).unwrap();
    assert_eq!((acc, f1), (1.0, 0.5));
}

#[test]
fn metric_input_errors() {
    assert!(matches!(
        accuracy_macro_f1(&[], &[], 4),
        Err(BenchError::Data(_))
    ));
    assert!(accuracy_macro_f1(&[0], &[0, 1], 4).is_err());
    assert!(accuracy_macro_f1(&[4], &[0], 4).is_err());
}

fn confusion(rows: [[usize; 4]; 4]) -> Confusion {
    Confusion {
        counts: rows.iter().map(|r| r.to_vec()).collect(),
    }
}

#[test]
fn movie_confusion_examples() {
    let diag = confusion([[10, 0, 0, 0], [0, 10, 0, 0], [0, 0, 10, 0], [0, 0, 0, 10]]);
    assert_eq!(movie_confusion_rate(&diag).unwrap(), 0.0);
    let c = confusion([[8, 1, 1, 0], [0, 10, 0, 0], [0, 0, 10, 0], [0, 0, 0, 5]]);
    assert!((movie_confusion_rate(&c).unwrap() - 200.0 / 30.0).abs() < 1e-12);
    let c = confusion([[9, 0, 0, 1], [0, 10, 0, 0], [0, 0, 10, 0], [0, 0, 0, 5]]);
    assert_eq!(movie_confusion_rate(&c).unwrap(), 0.0);
    let c = confusion([[0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 5]]);
    assert!(movie_confusion_rate(&c).is_err());
}

proptest! {
    #[test]
    fn confusion_totals_and_accuracy_agree(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..200)) {
        let (preds, labels): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let c = Confusion::new(&preds, &labels, 4).unwrap();
        prop_assert_eq!(c.total(), preds.len());
        for k in 0..4 {
            prop_assert_eq!(c.counts[k].iter().sum::<usize>(), labels.iter().filter(|&&y| y == k).count());
        }
        let streaming = preds.iter().zip(&labels).filter(|(p, y)| p == y).count() as f64 / preds.len() as f64;
        prop_assert_eq!(c.accuracy().to_bits(), streaming.to_bits());
    }
}

#[test]
fn calibration_anchors() {
    let perfect: Vec<Vec<f64>> = (0..4)
        .map(|k| (0..4).map(|j| f64::from(u8::from(j == k))).collect())
        .collect();
    let cal = calibration(&perfect, &[0, 1, 2, 3]).unwrap();
    assert_eq!((cal.nll, cal.brier, cal.ece), (0.0, 0.0, 0.0));

    let uniform = vec![vec![0.25; 4]; 8];
    let labels = [0, 1, 2, 3, 0, 0, 0, 3];
    let cal = calibration(&uniform, &labels).unwrap();
    assert!((cal.nll - 4f64.ln()).abs() < 1e-9);
    assert!((cal.brier - 0.75).abs() < 1e-9);
    // arg-max ties go to class 0
    let acc = labels.iter().filter(|&&y| y == 0).count() as f64 / 8.0;
    assert!((cal.ece - (acc - 0.25).abs() * 100.0).abs() < 1e-9);

    let two = vec![vec![0.6, 0.4], vec![0.6, 0.4]];
    let cal = calibration(&two, &[0, 1]).unwrap();
    assert!((cal.ece - 10.0).abs() < 1e-12);
}

#[test]
fn nll_is_floored() {
    let cal = calibration(&[vec![1.0, 0.0]], &[1]).unwrap();
    assert!((cal.nll + NLL_FLOOR.ln()).abs() < 1e-12);
    assert_eq!(cal.brier, 2.0);
}

#[test]
fn calibration_rejects_unnormalized_rows() {
    assert!(matches!(
        calibration(&[vec![0.5, 0.6]], &[0]),
        Err(BenchError::Data(_))
    ));
    assert!(calibration(&[vec![0.5, 0.5]], &[2]).is_err());
}

proptest! {
    #[test]
    fn ece_vanishes_when_bins_are_calibrated(
        groups in prop::collection::vec((1usize..6, 2usize..12), 1..8)
    ) {
        // within each group the confidence equals the fraction of correct samples
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        for (extra, n) in groups {
            let correct = (n / 2 + extra).min(n);
            let conf = correct as f64 / n as f64;
            for i in 0..n {
                probs.push(vec![conf, 1.0 - conf]);
                labels.push(usize::from(i >= correct));
            }
        }
        let cal = calibration(&probs, &labels).unwrap();
        prop_assert!(cal.ece.abs() < 1e-10, "ece {}", cal.ece);
    }

    #[test]
    fn nll_zero_iff_brier_zero(rows in prop::collection::vec((0usize..3, 0.0f64..1.0, prop::bool::ANY), 1..30)) {
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        for (y, mass, exact) in rows {
            let mut p = vec![0.0; 3];
            if exact {
                p[y] = 1.0;
            } else {
                p[y] = mass;
                p[(y + 1) % 3] = 1.0 - mass;
            }
            probs.push(p);
            labels.push(y);
        }
        let cal = calibration(&probs, &labels).unwrap();
        prop_assert_eq!(cal.nll == 0.0, cal.brier == 0.0);
    }
}

/// Student-t density integrated by composite Simpson's rule from 0 to |t|;
/// independent of the incomplete-beta route.
fn t_tail_by_quadrature(t: f64, df: f64) -> f64 {
    let norm = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp()
        / (df * std::f64::consts::PI).sqrt();
    let pdf = |x: f64| norm * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
    let n = 20_000;
    let h = t.abs() / n as f64;
    let mut s = pdf(0.0) + pdf(t.abs());
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(i as f64 * h);
    }
    1.0 - 2.0 * s * h / 3.0
}

#[test]
fn student_t_closed_forms() {
    // df = 1 is Cauchy, df = 2 has an algebraic CDF
    for t in [0.0, 0.5, 2.0, 7.0] {
        let cauchy = 1.0 - 2.0 * f64::atan(t) / std::f64::consts::PI;
        assert!((student_t_two_sided(t, 1.0) - cauchy).abs() < 1e-12);
        let df2 = 1.0 - t / (t * t + 2.0).sqrt();
        assert!((student_t_two_sided(t, 2.0) - df2).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn student_t_matches_quadrature(t in 0.0f64..6.0, df in 1usize..40) {
        let a = student_t_two_sided(t, df as f64);
        let b = t_tail_by_quadrature(t, df as f64);
        prop_assert!((a - b).abs() < 1e-8, "t={t} df={df}: {a} vs {b}");
    }
}

#[test]
fn ln_gamma_matches_factorials() {
    let mut fact = 1.0f64;
    for n in 1..20 {
        fact *= n as f64;
        assert!((ln_gamma(n as f64 + 1.0) - fact.ln()).abs() < 1e-12);
    }
    assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
}

#[test]
fn paired_t_examples() {
    let r = paired_t_test(&[-1.0, 1.0, -2.0, 2.0]).unwrap();
    assert_eq!(r.t, 0.0);
    assert!((r.p - 1.0).abs() < 1e-12);

    let r = paired_t_test(&[1.0, 3.0]).unwrap();
    assert!((r.t - 2.0).abs() < 1e-12);
    assert_eq!(r.df, 1);
    assert!((r.p - (1.0 - 2.0 * 2f64.atan() / std::f64::consts::PI)).abs() < 1e-12);
    assert!((r.p - 0.295).abs() < 5e-4);
}

#[test]
fn paired_t_reproduces_reported_fold_statistics() {
    // twenty differences with mean 10.6 and sample sd 15.1
    let base: Vec<f64> = (0..20).map(|i| i as f64 - 9.5).collect();
    let sd = (base.iter().map(|v| v * v).sum::<f64>() / 19.0).sqrt();
    let diffs: Vec<f64> = base.iter().map(|v| 10.6 + 15.1 * v / sd).collect();
    let r = paired_t_test(&diffs).unwrap();
    assert_eq!(r.df, 19);
    assert!((r.t - 3.13).abs() <= 0.01, "t = {}", r.t);
    assert!((r.p - 0.0055).abs() <= 0.0005, "p = {}", r.p);
    let s = t_test_from_summary(10.6, 15.1, 20).unwrap();
    assert!((s.t - r.t).abs() < 1e-12 && (s.p - r.p).abs() < 1e-12);
}

#[test]
fn paired_t_errors() {
    let err = paired_t_test(&[2.0, 2.0, 2.0]).unwrap_err();
    assert!(
        err.to_string().contains("degenerate: constant differences"),
        "{err}"
    );
    assert!(matches!(paired_t_test(&[1.0]), Err(BenchError::Data(_))));
}

#[test]
fn mcnemar_examples() {
    let m = mcnemar(12, 0).unwrap();
    assert_eq!(m.chi2, 12.0);
    assert!((4.8e-4..=5.0e-4).contains(&m.p_exact));
    assert!((m.p_exact - 2.0 * 0.5f64.powi(12)).abs() < 1e-18);
    assert_eq!(mcnemar(7, 7).unwrap().p_exact, 1.0);
    assert_eq!(mcnemar(5, 5).unwrap().chi2, 0.0);
    let err = mcnemar(0, 0).unwrap_err();
    assert!(err.to_string().contains("no discordant pairs"));
}

/// Exact two-sided binomial tail by summing Pascal's triangle in integers.
fn binomial_tail_exact(b: u64, c: u64) -> f64 {
    let n = (b + c) as usize;
    let mut row = vec![1u128];
    for _ in 0..n {
        let mut next = vec![1u128; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    let tail: u128 = row[..=b.min(c) as usize].iter().sum();
    (2.0 * tail as f64 / 2f64.powi(n as i32)).min(1.0)
}

proptest! {
    #[test]
    fn mcnemar_matches_integer_enumeration(b in 0u64..60, c in 0u64..60) {
        prop_assume!(b + c > 0);
        let m = mcnemar(b, c).unwrap();
        let exact = binomial_tail_exact(b, c);
        prop_assert!((m.p_exact - exact).abs() <= 1e-11 * exact, "{} vs {exact}", m.p_exact);
        prop_assert_eq!(m.chi2, mcnemar(c, b).unwrap().chi2);
    }
}

#[test]
fn dominant_prediction_of_uniform_outputs() {
    let (dom, conf, counts) = dominant_prediction(&vec![vec![0.25; 4]; 6]).unwrap();
    assert_eq!((dom, conf), (0, 0.25));
    assert_eq!(counts, [6, 0, 0, 0]);
    let (dom, _, _) = dominant_prediction(&[vec![0.1, 0.9], vec![0.9, 0.1]]).unwrap();
    assert_eq!(dom, 0);
    assert!(dominant_prediction(&[]).is_err());
}

#[test]
fn predictions_report_is_consistent() {
    let logits = NdArray::from_vec(
        vec![3, 4],
        vec![2.0, 0.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
    )
    .unwrap();
    let preds = Predictions::from_logits(&logits, &[0, 1, 2]).unwrap();
    for row in &preds.probs {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
    let report = preds.report(4).unwrap();
    assert_eq!(report.accuracy, preds.accuracy());
    assert_eq!(report.confusion.counts[2][3], 1);
    assert!((report.movie_confusion_rate.unwrap() - 0.0).abs() < 1e-15);
    assert_eq!(report.recall, [1.0, 1.0, 0.0, 0.0]);
    assert_eq!(report.precision, [1.0, 1.0, 0.0, 0.0]);
}

//! Paired t-test and McNemar's test, with the Student-t CDF evaluated via a
//! continued-fraction regularized incomplete beta function.

use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

/// Lanczos approximation (g = 7, nine terms) of `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let series = COEF[1..]
        .iter()
        .enumerate()
        .fold(COEF[0], |acc, (i, &c)| acc + c / (x + i as f64 + 1.0));
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + series.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const MAX_ITER: usize = 500;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let even = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + even * d;
        d = if d.abs() < TINY { TINY } else { d };
        c = 1.0 + even / c;
        c = if c.abs() < TINY { TINY } else { c };
        d = 1.0 / d;
        h *= d * c;
        let odd = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + odd * d;
        d = if d.abs() < TINY { TINY } else { d };
        c = 1.0 + odd / c;
        c = if c.abs() < TINY { TINY } else { c };
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // the fraction converges fast on the side of the mean
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail `P(|T| ≥ |t|)` of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    incomplete_beta(0.5 * df, 0.5, df / (df + t * t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    pub p: f64,
}

/// One-sample t-test of the mean difference against zero from summary
/// statistics (`sd` is the sample standard deviation).
pub fn t_test_from_summary(mean: f64, sd: f64, n: usize) -> Result<TTest> {
    if n < 2 {
        return Err(BenchError::Data(format!(
            "a paired t-test needs at least two differences, got {n}"
        )));
    }
    if !(sd > 0.0) {
        return Err(BenchError::Degenerate("constant differences".into()));
    }
    let t = mean / (sd / (n as f64).sqrt());
    let df = n - 1;
    Ok(TTest {
        t,
        df,
        p: student_t_two_sided(t, df as f64),
    })
}

/// Paired t-test on per-fold differences.
pub fn paired_t_test(diffs: &[f64]) -> Result<TTest> {
    let n = diffs.len();
    if n < 2 {
        return Err(BenchError::Data(format!(
            "a paired t-test needs at least two differences, got {n}"
        )));
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let ss: f64 = diffs.iter().map(|d| (d - mean) * (d - mean)).sum();
    if ss == 0.0 {
        return Err(BenchError::Degenerate("constant differences".into()));
    }
    t_test_from_summary(mean, (ss / (n - 1) as f64).sqrt(), n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    /// Uncorrected `(b − c)² / (b + c)`.
    pub chi2: f64,
    /// Two-sided exact binomial p-value, capped at 1.
    pub p_exact: f64,
}

/// McNemar's test on the discordant counts `b` (only A right) and `c`
/// (only B right).
pub fn mcnemar(b: u64, c: u64) -> Result<McNemar> {
    let n = b + c;
    if n == 0 {
        return Err(BenchError::Degenerate("no discordant pairs".into()));
    }
    let diff = b.abs_diff(c) as f64;
    let chi2 = diff * diff / n as f64;
    let ln_half_n = n as f64 * std::f64::consts::LN_2;
    // Σ_{k ≤ min(b,c)} C(n, k) / 2ⁿ with log-binomials built incrementally
    let mut ln_choose = 0.0;
    let mut tail = 0.0;
    for k in 0..=b.min(c) {
        if k > 0 {
            ln_choose += ((n - k + 1) as f64 / k as f64).ln();
        }
        tail += (ln_choose - ln_half_n).exp();
    }
    Ok(McNemar {
        chi2,
        p_exact: (2.0 * tail).min(1.0),
    })
}

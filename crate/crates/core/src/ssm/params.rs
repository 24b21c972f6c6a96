//! Continuous-time diagonal SSM parameters and their ZOH discretization.

use std::f64::consts::PI;

use numcore::{Complex64, ComplexArray, NdArray};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{BenchError, Result};

/// Bounds of the log-uniform timescale initialization.
pub const DT_MIN: f64 = 0.001;
pub const DT_MAX: f64 = 0.1;

/// One diagonal SSM layer with `P` complex states over `H` real features.
///
/// The state eigenvalues are stored as `Re = −exp(log_neg_real)` and
/// `Im = imag`, so the real part stays negative under any update.
#[derive(Debug, Clone, PartialEq)]
pub struct S5LayerParams {
    pub log_neg_real: NdArray,
    pub imag: NdArray,
    /// Input matrix `[P, H]`.
    pub b: ComplexArray,
    /// Output matrix `[H, P]`.
    pub c: ComplexArray,
    /// Feedthrough `[H]`.
    pub d: NdArray,
    pub log_dt: NdArray,
}

impl S5LayerParams {
    pub fn state_dim(&self) -> usize {
        self.log_neg_real.len()
    }

    pub fn model_dim(&self) -> usize {
        self.d.len()
    }

    pub fn lambda(&self) -> Vec<Complex64> {
        self.log_neg_real
            .data()
            .iter()
            .zip(self.imag.data())
            .map(|(&r, &i)| Complex64::new(-r.exp(), i))
            .collect()
    }

    pub fn dt(&self) -> Vec<f64> {
        self.log_dt.data().iter().map(|v| v.exp()).collect()
    }

    /// Parameters with explicitly given eigenvalues. Every real part must be
    /// negative.
    pub fn from_lambda(
        lambda: &[Complex64],
        b: ComplexArray,
        c: ComplexArray,
        d: NdArray,
        dt: &[f64],
    ) -> Result<Self> {
        if lambda.iter().any(|l| !(l.re < 0.0)) {
            return Err(BenchError::Config(
                "state eigenvalues need negative real parts".into(),
            ));
        }
        if dt.iter().any(|&v| !(v > 0.0)) {
            return Err(BenchError::Config("timescales must be positive".into()));
        }
        let params = Self {
            log_neg_real: NdArray::vector(&lambda.iter().map(|l| (-l.re).ln()).collect::<Vec<_>>()),
            imag: NdArray::vector(&lambda.iter().map(|l| l.im).collect::<Vec<_>>()),
            b,
            c,
            d,
            log_dt: NdArray::vector(&dt.iter().map(|v| v.ln()).collect::<Vec<_>>()),
        };
        params.check_shapes()?;
        Ok(params)
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (p, h) = (self.state_dim(), self.model_dim());
        let ok = self.imag.shape() == [p]
            && self.log_dt.shape() == [p]
            && self.b.shape() == [p, h]
            && self.c.shape() == [h, p];
        if !ok {
            return Err(BenchError::Config(format!(
                "inconsistent SSM shapes: states {p}, features {h}, B {:?}, C {:?}",
                self.b.shape(),
                self.c.shape()
            )));
        }
        Ok(())
    }

    /// Discretizes one state: `(Λ̄_p, B̄_p row)`.
    pub fn zoh_discretize(&self, p: usize) -> (Complex64, Vec<Complex64>) {
        let terms = ZohTerms::new(self.lambda()[p], self.dt()[p]);
        (
            terms.lambda_bar,
            self.b.row(p).iter().map(|b| terms.q * b).collect(),
        )
    }

    pub fn discretize(&self) -> DiscreteS5 {
        let (lambda, dt) = (self.lambda(), self.dt());
        let h = self.model_dim();
        let mut lambda_bar = Vec::with_capacity(lambda.len());
        let mut b_bar = Vec::with_capacity(lambda.len() * h);
        for (p, (&l, &d)) in lambda.iter().zip(&dt).enumerate() {
            let terms = ZohTerms::new(l, d);
            lambda_bar.push(terms.lambda_bar);
            b_bar.extend(self.b.row(p).iter().map(|b| terms.q * b));
        }
        DiscreteS5 {
            lambda_bar: NdArray::vector(&lambda_bar),
            b_bar: NdArray::from_vec(vec![lambda.len(), h], b_bar).unwrap(),
        }
    }
}

/// Discrete-time diagonal system `x_t = Λ̄ ⊙ x_{t−1} + B̄ u_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteS5 {
    pub lambda_bar: ComplexArray,
    /// `[P, H]`.
    pub b_bar: ComplexArray,
}

impl DiscreteS5 {
    pub fn state_dim(&self) -> usize {
        self.lambda_bar.len()
    }

    pub fn model_dim(&self) -> usize {
        self.b_bar.shape()[1]
    }
}

/// Below this `|ΛΔ|` the input scale and its derivative come from power series.
const SERIES_RADIUS: f64 = 1e-2;
const SERIES_TERMS: usize = 10;

/// ZOH quantities for one state: `Λ̄ = exp(ΛΔ)`, the input scale
/// `q = (Λ̄ − 1)/Λ` (so `B̄ = q·B`) and `∂q/∂Λ`.
#[derive(Debug, Clone, Copy)]
pub struct ZohTerms {
    pub lambda: Complex64,
    pub dt: f64,
    pub lambda_bar: Complex64,
    pub q: Complex64,
    pub dq_dlambda: Complex64,
}

impl ZohTerms {
    pub fn new(lambda: Complex64, dt: f64) -> Self {
        let z = lambda * dt;
        let lambda_bar = z.exp();
        let (q, dq_dlambda) = if z.norm() < SERIES_RADIUS {
            // q = Δ·Σ zⁿ/(n+1)!,  ∂q/∂Λ = Δ²·Σ n·zⁿ⁻¹/(n+1)!
            let zero = Complex64::new(0.0, 0.0);
            let (mut phi, mut dphi) = (zero, zero);
            let (mut pow, mut prev) = (Complex64::new(1.0, 0.0), zero);
            let mut fact = 1.0;
            for n in 0..SERIES_TERMS {
                fact *= (n + 1) as f64;
                phi += pow / fact;
                dphi += prev * n as f64 / fact;
                prev = pow;
                pow *= z;
            }
            (phi * dt, dphi * dt * dt)
        } else {
            let q = (lambda_bar - 1.0) / lambda;
            let dq = (lambda_bar * z - (lambda_bar - 1.0)) / (lambda * lambda);
            (q, dq)
        };
        Self {
            lambda,
            dt,
            lambda_bar,
            q,
            dq_dlambda,
        }
    }

    /// Pulls cotangents of `(Λ̄, q)` back to `(Λ, Δ)`.
    pub fn backprop(&self, g_lambda_bar: Complex64, g_q: Complex64) -> (Complex64, f64) {
        let d_bar_d_lambda = self.lambda_bar * self.dt;
        let d_bar_d_dt = self.lambda * self.lambda_bar;
        let g_lambda = d_bar_d_lambda.conj() * g_lambda_bar + self.dq_dlambda.conj() * g_q;
        let g_dt = (d_bar_d_dt.conj() * g_lambda_bar + self.lambda_bar.conj() * g_q).re;
        (g_lambda, g_dt)
    }
}

fn complex_gaussian<R: Rng + ?Sized>(
    rng: &mut R,
    shape: [usize; 2],
    variance: f64,
) -> ComplexArray {
    let sd = (variance / 2.0).sqrt();
    let data = (0..shape[0] * shape[1])
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re * sd, im * sd)
        })
        .collect();
    NdArray::from_vec(shape.to_vec(), data).unwrap()
}

/// Diagonal HiPPO-LegS style initialization: `Λ_p = −1/2 + iπp`, complex
/// Gaussian `B` (variance `1/P`) and `C` (variance `1/H`), standard normal `D`
/// and log-uniform timescales in `[DT_MIN, DT_MAX]`.
pub fn init_s5_with<R: Rng + ?Sized>(
    state_dim: usize,
    model_dim: usize,
    rng: &mut R,
) -> Result<S5LayerParams> {
    if state_dim == 0 || model_dim == 0 {
        return Err(BenchError::Config(format!(
            "SSM dimensions must be positive (states {state_dim}, features {model_dim})"
        )));
    }
    let b = complex_gaussian(rng, [state_dim, model_dim], 1.0 / state_dim as f64);
    let c = complex_gaussian(rng, [model_dim, state_dim], 1.0 / model_dim as f64);
    let d: Vec<f64> = (0..model_dim).map(|_| rng.sample(StandardNormal)).collect();
    let log_dt: Vec<f64> = (0..state_dim)
        .map(|_| rng.random_range(DT_MIN.ln()..=DT_MAX.ln()))
        .collect();
    Ok(S5LayerParams {
        log_neg_real: NdArray::full(vec![state_dim], 0.5f64.ln()),
        imag: NdArray::vector(&(0..state_dim).map(|p| PI * p as f64).collect::<Vec<_>>()),
        b,
        c,
        d: NdArray::vector(&d),
        log_dt: NdArray::vector(&log_dt),
    })
}

pub fn init_s5(state_dim: usize, model_dim: usize, seed: u64) -> Result<S5LayerParams> {
    init_s5_with(state_dim, model_dim, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn series_and_closed_form_agree_near_the_switch() {
        for &lambda in &[c(-0.7, 0.3), c(-2.0, 5.0)] {
            let dt_closed = 1.01 * SERIES_RADIUS / lambda.norm();
            let dt_series = 0.99 * SERIES_RADIUS / lambda.norm();
            let a = ZohTerms::new(lambda, dt_closed);
            let b = ZohTerms::new(lambda, dt_series);
            // q ≈ Δ, so compare q/Δ and ∂q/∂Λ / Δ²
            assert!((a.q / dt_closed - b.q / dt_series).norm() < 0.02 * SERIES_RADIUS);
            assert!(
                (a.dq_dlambda / (dt_closed * dt_closed) - b.dq_dlambda / (dt_series * dt_series))
                    .norm()
                    < 0.02
            );
        }
    }

    #[test]
    fn dq_matches_finite_difference() {
        for &(lambda, dt) in &[
            (c(-0.5, 3.0), 0.05),
            (c(-0.5, 0.0), 0.001),
            (c(-1.2, -40.0), 0.1),
        ] {
            let t = ZohTerms::new(lambda, dt);
            let h = 1e-6;
            let num =
                (ZohTerms::new(lambda + h, dt).q - ZohTerms::new(lambda - h, dt).q) / (2.0 * h);
            assert!(
                (num - t.dq_dlambda).norm() <= 1e-7 * (1.0 + num.norm()),
                "{num} vs {}",
                t.dq_dlambda
            );
        }
    }
}

//! The same linear time-invariant system evaluated as an explicit
//! convolution kernel applied through the FFT.

use numcore::signal::{fft_in_place, ifft_in_place};
use numcore::{Complex64, ComplexArray, NdArray};

use super::params::DiscreteS5;
use crate::error::{BenchError, Result};

/// Impulse responses `k_s = Re(C·diag(Λ̄ˢ)·B̄)` for `s = 0..len`, laid out
/// `[H_out, H_in, len]`.
pub fn s4_kernel(disc: &DiscreteS5, c: &ComplexArray, len: usize) -> Result<NdArray> {
    let (p, h) = (disc.state_dim(), disc.model_dim());
    if c.shape() != [h, p] {
        return Err(BenchError::Data(format!(
            "C must be [{h}, {p}], got {:?}",
            c.shape()
        )));
    }
    let mut k = vec![0.0; h * h * len];
    let mut power: Vec<Complex64> = vec![Complex64::new(1.0, 0.0); p];
    for s in 0..len {
        for o in 0..h {
            let crow = c.row(o);
            for i in 0..h {
                let acc: Complex64 = (0..p)
                    .map(|j| crow[j] * power[j] * disc.b_bar.row(j)[i])
                    .sum();
                k[(o * h + i) * len + s] = acc.re;
            }
        }
        power
            .iter_mut()
            .zip(disc.lambda_bar.data())
            .for_each(|(w, l)| *w *= l);
    }
    Ok(NdArray::from_vec(vec![h, h, len], k).unwrap())
}

fn spectrum(x: &[f64], n: usize) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    buf.iter_mut().zip(x).for_each(|(b, &v)| b.re = v);
    fft_in_place(&mut buf);
    buf
}

/// Causal convolution of `u: [H, T]` with a `[H, H, L]` kernel (`L ≥ T`)
/// plus the feedthrough `D ⊙ u`. Every channel pair is zero-padded to at
/// least `2T − 1` so the circular FFT product equals the linear convolution.
pub fn s4_forward(kernel: &NdArray, d: &NdArray, u: &NdArray) -> Result<NdArray> {
    let (&[ho, hi, len], &[h, t]) = (kernel.shape(), u.shape()) else {
        return Err(BenchError::Data(format!(
            "kernel must be [H, H, L] and input [H, T]; got {:?} and {:?}",
            kernel.shape(),
            u.shape()
        )));
    };
    if ho != h || hi != h || d.shape() != [h] || len < t {
        return Err(BenchError::Data(format!(
            "kernel {:?}, feedthrough {:?} and input {:?} disagree",
            kernel.shape(),
            d.shape(),
            u.shape()
        )));
    }
    let n = (2 * t).next_power_of_two();
    let inputs: Vec<Vec<Complex64>> = (0..h).map(|i| spectrum(u.row(i), n)).collect();
    let mut y = Vec::with_capacity(h * t);
    for o in 0..h {
        let mut acc = vec![Complex64::new(0.0, 0.0); n];
        for (i, ui) in inputs.iter().enumerate() {
            let start = (o * h + i) * len;
            let kf = spectrum(&kernel.data()[start..start + t], n);
            acc.iter_mut()
                .zip(kf.iter().zip(ui))
                .for_each(|(a, (k, x))| *a += k * x);
        }
        ifft_in_place(&mut acc);
        let (dv, urow) = (d.data()[o], u.row(o));
        y.extend(acc[..t].iter().zip(urow).map(|(a, x)| a.re + dv * x));
    }
    Ok(NdArray::from_vec(vec![h, t], y).unwrap())
}

//! Linear recurrence evaluation: a strictly sequential reference and a
//! chunked associative scan.

use numcore::{Complex64, ComplexArray, NdArray};
use rayon::prelude::*;

use super::params::DiscreteS5;
use crate::error::{BenchError, Result};

/// Chunk length of the blocked scan. The combination order depends only on
/// this constant, never on the number of worker threads.
pub const SCAN_CHUNK: usize = 64;

/// Element of the first-order recurrence `x_t = a_t·x_{t−1} + b_t`.
pub type Affine = (Complex64, Complex64);

/// `(a₁,b₁)∘(a₂,b₂) = (a₂a₁, a₂b₁ + b₂)`: apply the earlier map, then the later.
#[inline]
pub fn compose(earlier: Affine, later: Affine) -> Affine {
    (later.0 * earlier.0, later.0 * earlier.1 + later.1)
}

/// Inclusive prefix scan under an associative `combine(earlier, later)`.
///
/// Three phases over fixed-size chunks: local scans, a sequential scan of the
/// chunk totals, then each chunk absorbs the carry of everything before it.
pub fn inclusive_scan<T, F>(items: &mut [T], combine: F)
where
    T: Copy + Send + Sync,
    F: Fn(T, T) -> T + Sync,
{
    let local = |chunk: &mut [T]| {
        for i in 1..chunk.len() {
            chunk[i] = combine(chunk[i - 1], chunk[i]);
        }
    };
    if items.len() <= SCAN_CHUNK {
        local(items);
        return;
    }
    items.par_chunks_mut(SCAN_CHUNK).for_each(local);
    let totals: Vec<T> = items.chunks(SCAN_CHUNK).map(|c| c[c.len() - 1]).collect();
    let mut carries = Vec::with_capacity(totals.len());
    let mut acc = totals[0];
    carries.push(acc);
    for &t in &totals[1..totals.len() - 1] {
        acc = combine(acc, t);
        carries.push(acc);
    }
    items
        .par_chunks_mut(SCAN_CHUNK)
        .skip(1)
        .zip(carries.par_iter())
        .for_each(|(chunk, &carry)| chunk.iter_mut().for_each(|x| *x = combine(carry, *x)));
}

/// States of `x_t = a·x_{t−1} + v_t` from `x_{−1} = 0`, written over `v`.
pub fn scan_constant(a: Complex64, v: &mut [Complex64], scratch: &mut Vec<Affine>) {
    scratch.clear();
    scratch.extend(v.iter().map(|&b| (a, b)));
    inclusive_scan(scratch, compose);
    v.iter_mut().zip(scratch.iter()).for_each(|(x, e)| *x = e.1);
}

fn check_inputs(
    disc: &DiscreteS5,
    c: &ComplexArray,
    d: &NdArray,
    u: &NdArray,
) -> Result<(usize, usize, usize)> {
    let (p, h) = (disc.state_dim(), disc.model_dim());
    let &[uh, l] = u.shape() else {
        return Err(BenchError::Data(format!(
            "input must be [features, time], got {:?}",
            u.shape()
        )));
    };
    if uh != h || c.shape() != [h, p] || d.shape() != [h] || disc.b_bar.shape() != [p, h] {
        return Err(BenchError::Data(format!(
            "shape mismatch: u {:?}, B̄ {:?}, C {:?}, D {:?}",
            u.shape(),
            disc.b_bar.shape(),
            c.shape(),
            d.shape()
        )));
    }
    Ok((p, h, l))
}

/// `B̄ u_t` for every state and step, `[P][L]`.
fn driven_inputs(
    disc: &DiscreteS5,
    u: &NdArray,
    p: usize,
    h: usize,
    l: usize,
) -> Vec<Vec<Complex64>> {
    (0..p)
        .map(|s| {
            let row = disc.b_bar.row(s);
            (0..l)
                .map(|t| (0..h).map(|j| row[j] * u.data()[j * l + t]).sum())
                .collect()
        })
        .collect()
}

/// `y_t = Re(C x_t) + D ⊙ u_t` from states `[P][L]`.
fn read_out(
    states: &[Vec<Complex64>],
    c: &ComplexArray,
    d: &NdArray,
    u: &NdArray,
    h: usize,
    l: usize,
) -> NdArray {
    let mut y = vec![0.0; h * l];
    for j in 0..h {
        let crow = c.row(j);
        for t in 0..l {
            let acc: f64 = states.iter().zip(crow).map(|(x, cj)| (cj * x[t]).re).sum();
            y[j * l + t] = acc + d.data()[j] * u.data()[j * l + t];
        }
    }
    NdArray::from_vec(vec![h, l], y).unwrap()
}

/// Reference evaluation with one loop over time; `u` is `[H, L]`.
pub fn sequential_recurrence(
    disc: &DiscreteS5,
    c: &ComplexArray,
    d: &NdArray,
    u: &NdArray,
) -> Result<NdArray> {
    let (p, h, l) = check_inputs(disc, c, d, u)?;
    let mut states = vec![vec![Complex64::new(0.0, 0.0); l]; p];
    let mut x = vec![Complex64::new(0.0, 0.0); p];
    for t in 0..l {
        for s in 0..p {
            let bu: Complex64 = (0..h)
                .map(|j| disc.b_bar.row(s)[j] * u.data()[j * l + t])
                .sum();
            x[s] = disc.lambda_bar.data()[s] * x[s] + bu;
            states[s][t] = x[s];
        }
    }
    Ok(read_out(&states, c, d, u, h, l))
}

/// Same output as [`sequential_recurrence`], with the state trajectories
/// computed by the chunked associative scan.
pub fn parallel_scan(
    disc: &DiscreteS5,
    c: &ComplexArray,
    d: &NdArray,
    u: &NdArray,
) -> Result<NdArray> {
    let (p, h, l) = check_inputs(disc, c, d, u)?;
    let mut states = driven_inputs(disc, u, p, h, l);
    states.par_iter_mut().enumerate().for_each(|(s, v)| {
        scan_constant(disc.lambda_bar.data()[s], v, &mut Vec::new());
    });
    Ok(read_out(&states, c, d, u, h, l))
}

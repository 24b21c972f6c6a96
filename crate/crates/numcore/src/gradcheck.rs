use crate::array::NdArray;
use crate::error::{NumError, Result};
use crate::tape::{Tape, Var};

/// Compares tape gradients of a scalar function against central differences.
///
/// `f` builds the function on a fresh tape from the input variable. Returns
/// `max_i |analytic_i − numeric_i| / max(1, |numeric_i|)`.
pub fn grad_check<F>(f: F, x: &NdArray, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&h) {
        return Err(NumError::Invalid(format!(
            "finite-difference step {h} outside [1e-6, 1e-4]"
        )));
    }
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let out = f(&mut tape, xv)?;
    let analytic = match tape.backward(out)?.take(xv) {
        Some(g) => g,
        None => NdArray::zeros(x.shape().to_vec()),
    };

    let eval = |probe: NdArray| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.param(probe);
        let o = f(&mut t, v)?;
        t.value(o).item()
    };

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(probe.clone())?;
        probe.data_mut()[i] = orig - h;
        let down = eval(probe.clone())?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic.data()[i] - numeric).abs() / numeric.abs().max(1.0);
        if !err.is_finite() {
            return Err(NumError::NonFinite("grad_check"));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

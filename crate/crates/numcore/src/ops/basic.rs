use crate::array::NdArray;
use crate::tape::{Tape, Var};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn zip_map(a: &NdArray, b: &NdArray, f: impl Fn(f64, f64) -> f64) -> NdArray {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    NdArray::from_vec(a.shape().to_vec(), data).unwrap()
}

fn last_dim(x: &NdArray) -> usize {
    *x.shape().last().expect("need at least one dimension")
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.op(
            out,
            &[a, b],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.op(
            out,
            &[a, b],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.map(|v| -v))]),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.shared(a), self.shared(b));
        let out = zip_map(&av, &bv, |x, y| x * y);
        self.op(
            out,
            &[a, b],
            Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| zip_map(g, &bv, |x, y| x * y)),
                    needs[1].then(|| zip_map(g, &av, |x, y| x * y)),
                ]
            }),
        )
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.op(
            out,
            &[a],
            Box::new(move |g, _| vec![Some(g.map(|v| v * s))]),
        )
    }

    /// `x[..., c] + bias[c]`.
    pub fn add_last(&mut self, x: Var, bias: Var) -> Var {
        let c = last_dim(self.value(x));
        assert_eq!(self.shape(bias), &[c], "bias must match the last dimension");
        let mut out = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for row in out.data_mut().chunks_mut(c) {
            for (o, bv) in row.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        self.op(
            out,
            &[x, bias],
            Box::new(move |g, needs| {
                let gb = needs[1].then(|| {
                    let mut acc = vec![0.0; c];
                    for row in g.data().chunks(c) {
                        for (a, v) in acc.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    NdArray::vector(&acc)
                });
                vec![Some(g.clone()), gb]
            }),
        )
    }

    /// `x[..., c] · w[c]`.
    pub fn mul_last(&mut self, x: Var, w: Var) -> Var {
        let c = last_dim(self.value(x));
        assert_eq!(self.shape(w), &[c], "scale must match the last dimension");
        let (xv, wv) = (self.shared(x), self.shared(w));
        let mut out = (*xv).clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, s) in row.iter_mut().zip(wv.data()) {
                *o *= s;
            }
        }
        self.op(
            out,
            &[x, w],
            Box::new(move |g, needs| {
                let gx = needs[0].then(|| {
                    let mut gx = g.clone();
                    for row in gx.data_mut().chunks_mut(c) {
                        for (o, s) in row.iter_mut().zip(wv.data()) {
                            *o *= s;
                        }
                    }
                    gx
                });
                let gw = needs[1].then(|| {
                    let mut acc = vec![0.0; c];
                    for (gr, xr) in g.data().chunks(c).zip(xv.data().chunks(c)) {
                        for i in 0..c {
                            acc[i] += gr[i] * xr[i];
                        }
                    }
                    NdArray::vector(&acc)
                });
                vec![gx, gw]
            }),
        )
    }

    /// Adds a constant tensor broadcast over leading dimensions
    /// (e.g. a `[T, D]` positional table onto `[B, T, D]`).
    pub fn add_const(&mut self, x: Var, c: &NdArray) -> Var {
        let xs = self.shape(x);
        assert!(
            xs.ends_with(c.shape()),
            "constant {:?} does not broadcast onto {:?}",
            c.shape(),
            xs
        );
        let mut out = self.value(x).clone();
        for chunk in out.data_mut().chunks_mut(c.len()) {
            for (o, v) in chunk.iter_mut().zip(c.data()) {
                *o += v;
            }
        }
        self.op(out, &[x], Box::new(|g, _| vec![Some(g.clone())]))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Var {
        let xv = self.shared(x);
        let out = xv.map(f);
        let yv = std::rc::Rc::new(out.clone());
        self.op(
            out,
            &[x],
            Box::new(move |g, _| {
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data().iter().zip(yv.data()))
                    .map(|(&gv, (&xi, &yi))| gv * df(xi, yi))
                    .collect();
                vec![Some(NdArray::from_vec(g.shape().to_vec(), data).unwrap())]
            }),
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu, |x, _| gelu_grad(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, |_, y| y)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let old = self.shape(x).to_vec();
        let out = self
            .value(x)
            .clone()
            .reshape(shape.to_vec())
            .expect("reshape must preserve the element count");
        self.op(
            out,
            &[x],
            Box::new(move |g, _| vec![Some(g.clone().reshape(old.clone()).unwrap())]),
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let out = NdArray::scalar(self.value(x).sum());
        self.op(
            out,
            &[x],
            Box::new(move |g, _| vec![Some(NdArray::full(shape.clone(), g.data()[0]))]),
        )
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Contiguous slice of a flat view, reshaped. Lets a single parameter
    /// vector feed several differently shaped tensors.
    pub fn slice_flat(&mut self, x: Var, offset: usize, shape: &[usize]) -> Var {
        let n: usize = shape.iter().product();
        let total = self.value(x).len();
        let full_shape = self.shape(x).to_vec();
        assert!(offset + n <= total, "slice out of range");
        let out = NdArray::from_vec(
            shape.to_vec(),
            self.value(x).data()[offset..offset + n].to_vec(),
        )
        .unwrap();
        self.op(
            out,
            &[x],
            Box::new(move |g, _| {
                let mut full = NdArray::zeros(full_shape.clone());
                full.data_mut()[offset..offset + n].copy_from_slice(g.data());
                vec![Some(full)]
            }),
        )
    }
}

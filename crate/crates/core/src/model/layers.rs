//! Parameterized building blocks shared by all architectures.

use numcore::ops::BatchStats;
use numcore::{NdArray, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::store::{Bound, BufferId, ParamId, ParamStore};

pub const NORM_EPS: f64 = 1e-5;
/// Weight of the newest batch in batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

pub fn gaussian<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], variance: f64) -> NdArray {
    let sd = variance.sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    NdArray::from_vec(shape.to_vec(), data).unwrap()
}

/// Affine map over the last dimension; weight `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    /// Gaussian weights with the given variance and zero bias.
    pub fn with_variance<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        variance: f64,
    ) -> Self {
        let w = store.add(
            format!("{name}.weight"),
            gaussian(rng, &[fan_out, fan_in], variance),
        );
        let b = bias.then(|| store.add(format!("{name}.bias"), NdArray::zeros(vec![fan_out])));
        Self { w, b }
    }

    /// LeCun-normal initialization (variance `1/fan_in`) with bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        Self::with_variance(store, rng, name, fan_in, fan_out, true, 1.0 / fan_in as f64)
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        tape.linear(x, p[self.w], self.b.map(|b| p[b]))
    }
}

/// Valid convolution over time; weight `[out, kernel, in]`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
    ) -> Self {
        let fan_in = c_in * kernel;
        let w = store.add(
            format!("{name}.weight"),
            gaussian(rng, &[c_out, kernel, c_in], 1.0 / fan_in as f64),
        );
        let b = store.add(format!("{name}.bias"), NdArray::zeros(vec![c_out]));
        Self { w, b, kernel }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        let y = tape.conv1d(x, p[self.w], 1);
        tape.add_last(y, p[self.b])
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), NdArray::full(vec![dim], 1.0)),
            beta: store.add(format!("{name}.beta"), NdArray::zeros(vec![dim])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        tape.layer_norm(x, p[self.gamma], p[self.beta], NORM_EPS)
    }
}

/// Batch normalization over the last dimension with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), NdArray::full(vec![dim], 1.0)),
            beta: store.add(format!("{name}.beta"), NdArray::zeros(vec![dim])),
            running_mean: store
                .add_buffer(format!("{name}.running_mean"), NdArray::zeros(vec![dim])),
            running_var: store
                .add_buffer(format!("{name}.running_var"), NdArray::full(vec![dim], 1.0)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, pass: &mut Pass, x: Var) -> Var {
        let (gamma, beta) = (p[self.gamma], p[self.beta]);
        if pass.training {
            let (y, stats) = tape.batch_norm(x, gamma, beta, NORM_EPS);
            pass.updates.push(StatsUpdate {
                mean: self.running_mean,
                var: self.running_var,
                stats,
            });
            y
        } else {
            let mean = pass.store.buffer(self.running_mean).data();
            let var = pass.store.buffer(self.running_var).data();
            tape.batch_norm_eval(x, gamma, beta, mean, var, NORM_EPS)
        }
    }
}

/// Batch statistics destined for a pair of running buffers.
#[derive(Debug, Clone)]
pub struct StatsUpdate {
    pub mean: BufferId,
    pub var: BufferId,
    pub stats: BatchStats,
}

impl StatsUpdate {
    /// Exponential running averages; the variance is stored unbiased.
    pub fn apply(&self, store: &mut ParamStore, momentum: f64) {
        let n = self.stats.count as f64;
        let correction = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        for (r, m) in store
            .buffer_mut(self.mean)
            .data_mut()
            .iter_mut()
            .zip(&self.stats.mean)
        {
            *r = (1.0 - momentum) * *r + momentum * m;
        }
        for (r, v) in store
            .buffer_mut(self.var)
            .data_mut()
            .iter_mut()
            .zip(&self.stats.var)
        {
            *r = (1.0 - momentum) * *r + momentum * v * correction;
        }
    }
}

/// Per-forward context: training or inference behaviour, the dropout
/// stream, and batch statistics gathered for the running buffers.
pub struct Pass<'a> {
    pub training: bool,
    store: &'a ParamStore,
    rng: ChaCha8Rng,
    pub updates: Vec<StatsUpdate>,
}

impl<'a> Pass<'a> {
    pub fn train(store: &'a ParamStore, seed: u64) -> Self {
        Self {
            training: true,
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
            updates: Vec::new(),
        }
    }

    pub fn eval(store: &'a ParamStore) -> Self {
        Self {
            training: false,
            store,
            rng: ChaCha8Rng::seed_from_u64(0),
            updates: Vec::new(),
        }
    }

    pub fn dropout(&mut self, tape: &mut Tape, x: Var, p: f64) -> Var {
        if self.training && p > 0.0 {
            tape.dropout(x, p, &mut self.rng)
        } else {
            x
        }
    }
}

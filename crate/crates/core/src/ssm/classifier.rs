//! Sequence classifiers built from SSM layers.

use numcore::{Tape, Var};
use rand::Rng;

use super::ops::{causal_conv, s4_kernel_op, s5_scan, SsmVars};
use super::params::{init_s5_with, S5LayerParams};
use crate::error::Result;
use crate::model::{
    Architecture, Bound, LayerNorm, Linear, ParamId, ParamStore, Pass, S4Config, S5Config,
};

/// Parameters of one SSM layer (one direction) registered in a store.
#[derive(Debug, Clone)]
pub struct SsmLayer {
    pub log_neg_real: ParamId,
    pub imag: ParamId,
    pub log_dt: ParamId,
    pub b_re: ParamId,
    pub b_im: ParamId,
    pub c_re: ParamId,
    pub c_im: ParamId,
    pub d: ParamId,
}

impl SsmLayer {
    pub fn register(store: &mut ParamStore, name: &str, params: S5LayerParams) -> Self {
        let mut add = |field: &str, value| store.add(format!("{name}.{field}"), value);
        Self {
            log_neg_real: add("log_neg_real", params.log_neg_real),
            imag: add("imag", params.imag),
            log_dt: add("log_dt", params.log_dt),
            b_re: add("b_re", params.b.re()),
            b_im: add("b_im", params.b.im()),
            c_re: add("c_re", params.c.re()),
            c_im: add("c_im", params.c.im()),
            d: add("d", params.d),
        }
    }

    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        state_dim: usize,
        model_dim: usize,
    ) -> Result<Self> {
        Ok(Self::register(
            store,
            name,
            init_s5_with(state_dim, model_dim, rng)?,
        ))
    }

    pub fn vars(&self, p: &Bound) -> SsmVars {
        SsmVars {
            log_neg_real: p[self.log_neg_real],
            imag: p[self.imag],
            log_dt: p[self.log_dt],
            b_re: p[self.b_re],
            b_im: p[self.b_im],
            c_re: p[self.c_re],
            c_im: p[self.c_im],
        }
    }

    fn feedthrough(&self, tape: &mut Tape, p: &Bound, u: Var, y: Var) -> Var {
        let du = tape.mul_last(u, p[self.d]);
        tape.add(y, du)
    }

    /// `Re(C x_t) + D ⊙ u_t` through the associative scan.
    pub fn scan(&self, tape: &mut Tape, p: &Bound, u: Var) -> Var {
        let y = s5_scan(tape, u, &self.vars(p));
        self.feedthrough(tape, p, u, y)
    }

    /// Same system through its materialized kernel and an FFT convolution.
    pub fn convolve(&self, tape: &mut Tape, p: &Bound, u: Var) -> Var {
        let len = tape.shape(u)[1];
        let kernel = s4_kernel_op(tape, &self.vars(p), len);
        let y = causal_conv(tape, u, kernel);
        self.feedthrough(tape, p, u, y)
    }
}

/// Pre-norm residual block: `x + Dropout(GELU(fwd(z) + rev(bwd(rev(z)))))`
/// with `z = LayerNorm(x)`. Without a backward direction only `fwd` is used.
#[derive(Debug, Clone)]
pub struct S5Block {
    pub norm: LayerNorm,
    pub fwd: SsmLayer,
    pub bwd: Option<SsmLayer>,
    pub dropout: f64,
}

impl S5Block {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        hidden: usize,
        state_per_direction: usize,
        bidirectional: bool,
        dropout: f64,
    ) -> Result<Self> {
        let norm = LayerNorm::new(store, &format!("{name}.norm"), hidden);
        let fwd = SsmLayer::init(
            store,
            rng,
            &format!("{name}.fwd"),
            state_per_direction,
            hidden,
        )?;
        let bwd = if bidirectional {
            Some(SsmLayer::init(
                store,
                rng,
                &format!("{name}.bwd"),
                state_per_direction,
                hidden,
            )?)
        } else {
            None
        };
        Ok(Self {
            norm,
            fwd,
            bwd,
            dropout,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, pass: &mut Pass, x: Var) -> Var {
        let z = self.norm.forward(tape, p, x);
        let mut y = self.fwd.scan(tape, p, z);
        if let Some(bwd) = &self.bwd {
            let zr = tape.reverse_time(z);
            let yr = bwd.scan(tape, p, zr);
            let yb = tape.reverse_time(yr);
            y = tape.add(y, yb);
        }
        let a = tape.gelu(y);
        let a = pass.dropout(tape, a, self.dropout);
        tape.add(x, a)
    }
}

/// Input projection, stacked [`S5Block`]s, mean over time, linear head.
#[derive(Debug, Clone)]
pub struct S5Classifier {
    pub input: Linear,
    pub blocks: Vec<S5Block>,
    pub head: Linear,
}

impl S5Classifier {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        in_channels: usize,
        n_classes: usize,
        cfg: &S5Config,
    ) -> Result<Self> {
        let input = Linear::new(store, rng, "input", in_channels, cfg.hidden);
        let per_direction = if cfg.bidirectional {
            cfg.state / 2
        } else {
            cfg.state
        };
        let blocks = (0..cfg.blocks)
            .map(|i| {
                S5Block::new(
                    store,
                    rng,
                    &format!("blocks.{i}"),
                    cfg.hidden,
                    per_direction,
                    cfg.bidirectional,
                    cfg.dropout,
                )
            })
            .collect::<Result<_>>()?;
        let head = Linear::new(store, rng, "head", cfg.hidden, n_classes);
        Ok(Self {
            input,
            blocks,
            head,
        })
    }
}

impl Architecture for S5Classifier {
    fn forward(&self, tape: &mut Tape, p: &Bound, pass: &mut Pass, x: Var) -> Result<Var> {
        let mut h = self.input.forward(tape, p, x);
        for block in &self.blocks {
            h = block.forward(tape, p, pass, h);
        }
        let pooled = tape.mean_time(h);
        Ok(self.head.forward(tape, p, pooled))
    }
}

/// Pre-norm residual layer applying the SSM as a causal FFT convolution.
#[derive(Debug, Clone)]
pub struct S4Layer {
    pub norm: LayerNorm,
    pub ssm: SsmLayer,
    pub dropout: f64,
}

impl S4Layer {
    pub fn forward(&self, tape: &mut Tape, p: &Bound, pass: &mut Pass, x: Var) -> Var {
        let z = self.norm.forward(tape, p, x);
        let y = self.ssm.convolve(tape, p, z);
        let a = tape.gelu(y);
        let a = pass.dropout(tape, a, self.dropout);
        tape.add(x, a)
    }
}

#[derive(Debug, Clone)]
pub struct S4Classifier {
    pub input: Linear,
    pub layers: Vec<S4Layer>,
    pub head: Linear,
}

impl S4Classifier {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        in_channels: usize,
        n_classes: usize,
        cfg: &S4Config,
    ) -> Result<Self> {
        let input = Linear::new(store, rng, "input", in_channels, cfg.hidden);
        let layers = (0..cfg.layers)
            .map(|i| {
                let name = format!("layers.{i}");
                Ok(S4Layer {
                    norm: LayerNorm::new(store, &format!("{name}.norm"), cfg.hidden),
                    ssm: SsmLayer::init(store, rng, &format!("{name}.ssm"), cfg.state, cfg.hidden)?,
                    dropout: cfg.dropout,
                })
            })
            .collect::<Result<_>>()?;
        let head = Linear::new(store, rng, "head", cfg.hidden, n_classes);
        Ok(Self {
            input,
            layers,
            head,
        })
    }
}

impl Architecture for S4Classifier {
    fn forward(&self, tape: &mut Tape, p: &Bound, pass: &mut Pass, x: Var) -> Result<Var> {
        let mut h = self.input.forward(tape, p, x);
        for layer in &self.layers {
            h = layer.forward(tape, p, pass, h);
        }
        let pooled = tape.mean_time(h);
        Ok(self.head.forward(tape, p, pooled))
    }
}

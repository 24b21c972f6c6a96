//! Temporal convolutional network.

use numcore::{Tape, Var};
use rand::Rng;

use crate::error::Result;
use crate::model::{Architecture, BatchNorm, Bound, CnnConfig, Conv1d, Linear, ParamStore, Pass};

#[derive(Debug, Clone)]
pub struct CnnStage {
    pub conv: Conv1d,
    pub norm: BatchNorm,
}

/// Stages of valid conv → batch norm → GELU → average pooling, then a global
/// average over time and a linear head.
#[derive(Debug, Clone)]
pub struct Cnn {
    pub stages: Vec<CnnStage>,
    pub head: Linear,
    pool: usize,
    dropout: f64,
}

impl Cnn {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        in_channels: usize,
        n_classes: usize,
        cfg: &CnnConfig,
    ) -> Self {
        let mut c_in = in_channels;
        let stages = cfg
            .channels
            .iter()
            .enumerate()
            .map(|(i, &c_out)| {
                let name = format!("stages.{i}");
                let stage = CnnStage {
                    conv: Conv1d::new(store, rng, &format!("{name}.conv"), c_in, c_out, cfg.kernel),
                    norm: BatchNorm::new(store, &format!("{name}.norm"), c_out),
                };
                c_in = c_out;
                stage
            })
            .collect();
        let head = Linear::new(store, rng, "head", c_in, n_classes);
        Self {
            stages,
            head,
            pool: cfg.pool,
            dropout: cfg.dropout,
        }
    }
}

impl Architecture for Cnn {
    fn forward(&self, tape: &mut Tape, p: &Bound, pass: &mut Pass, x: Var) -> Result<Var> {
        let mut h = x;
        for stage in &self.stages {
            h = stage.conv.forward(tape, p, h);
            h = stage.norm.forward(tape, p, pass, h);
            h = tape.gelu(h);
            h = tape.avg_pool_time(h, self.pool);
        }
        let pooled = tape.mean_time(h);
        let pooled = pass.dropout(tape, pooled, self.dropout);
        Ok(self.head.forward(tape, p, pooled))
    }

    /// Receptive field: the input length that leaves one step after the
    /// last pooling.
    fn min_len(&self) -> usize {
        self.stages
            .iter()
            .rev()
            .fold(1, |need, s| need * self.pool + s.conv.kernel - 1)
    }
}

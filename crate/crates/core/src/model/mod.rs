//! Model construction, parameter binding and inference shared by every
//! architecture.
//!
//! Models consume `[batch, channels, time]` arrays and produce
//! `[batch, classes]` logits. Internally sequences are time-major
//! (`[batch, time, features]`).

pub mod checkpoint;
pub mod layers;
pub mod spec;
pub mod store;

use std::fmt;

use numcore::{softmax, NdArray, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{Cnn, Eegxf, Lstm};
use crate::error::{BenchError, Result};
use crate::ssm::classifier::{S4Classifier, S5Classifier};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use layers::{BatchNorm, Conv1d, LayerNorm, Linear, Pass, StatsUpdate, BN_MOMENTUM};
pub use spec::{CnnConfig, EegxfConfig, LstmConfig, ModelKind, ModelSpec, S4Config, S5Config};
pub use store::{Bound, BufferId, Named, ParamId, ParamStore};

/// A network body registered in a [`ParamStore`].
pub trait Architecture: Send + Sync + fmt::Debug {
    /// `x: [B, T, C]` to logits `[B, K]`.
    fn forward(&self, tape: &mut Tape, params: &Bound, pass: &mut Pass, x: Var) -> Result<Var>;

    /// Shortest input the architecture can process.
    fn min_len(&self) -> usize {
        1
    }

    /// Note about inputs that are silently adapted (for example truncated).
    fn input_warning(&self, _len: usize) -> Option<String> {
        None
    }
}

/// A deterministic network instance: spec, parameters and architecture.
#[derive(Debug)]
pub struct Model {
    spec: ModelSpec,
    pub store: ParamStore,
    arch: Box<dyn Architecture>,
}

impl Model {
    /// Builds the architecture with parameters drawn from `spec.seed`.
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (c, k) = (spec.in_channels, spec.n_classes);
        let arch: Box<dyn Architecture> = match spec.kind {
            ModelKind::S5 => Box::new(S5Classifier::new(&mut store, &mut rng, c, k, &spec.s5)?),
            ModelKind::S4 => Box::new(S4Classifier::new(&mut store, &mut rng, c, k, &spec.s4)?),
            ModelKind::Cnn => Box::new(Cnn::new(&mut store, &mut rng, c, k, &spec.cnn)),
            ModelKind::Lstm => Box::new(Lstm::new(&mut store, &mut rng, c, k, &spec.lstm)),
            ModelKind::Eegxf => Box::new(Eegxf::new(&mut store, &mut rng, c, k, &spec.eegxf)),
        };
        Ok(Self { spec, store, arch })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    /// Number of trainable scalars.
    pub fn count_params(&self) -> usize {
        self.store.count()
    }

    pub fn min_len(&self) -> usize {
        self.arch.min_len()
    }

    pub fn input_warning(&self, len: usize) -> Option<String> {
        self.arch.input_warning(len)
    }

    /// Checks a `[B, C, T]` batch and places it on the tape time-major.
    pub fn input(&self, tape: &mut Tape, x: &NdArray) -> Result<Var> {
        let &[bsz, c, t] = x.shape() else {
            return Err(BenchError::Data(format!(
                "model input must be [batch, channels, time], got {:?}",
                x.shape()
            )));
        };
        if c != self.spec.in_channels {
            return Err(BenchError::Data(format!(
                "model expects {} channels, input has {c}",
                self.spec.in_channels
            )));
        }
        if t < self.min_len() {
            return Err(BenchError::Data(format!(
                "{} model needs at least {} time steps, input has {t}",
                self.spec.kind,
                self.min_len()
            )));
        }
        Ok(tape.constant(channels_last(x, bsz, c, t)))
    }

    /// Logits from an input already on the tape as `[B, T, C]`.
    pub fn forward(&self, tape: &mut Tape, params: &Bound, pass: &mut Pass, x: Var) -> Result<Var> {
        self.arch.forward(tape, params, pass, x)
    }

    /// Logits `[B, K]` for a `[B, C, T]` batch.
    pub fn logits(
        &self,
        tape: &mut Tape,
        params: &Bound,
        pass: &mut Pass,
        x: &NdArray,
    ) -> Result<Var> {
        let xv = self.input(tape, x)?;
        self.arch.forward(tape, params, pass, xv)
    }

    /// Class probabilities in inference mode.
    pub fn predict_proba(&self, x: &NdArray) -> Result<NdArray> {
        let mut tape = Tape::new();
        let params = Bound::frozen(&mut tape, &self.store);
        let mut pass = Pass::eval(&self.store);
        let logits = self.logits(&mut tape, &params, &mut pass, x)?;
        let logits = tape.value(logits);
        let k = self.spec.n_classes;
        let mut probs = Vec::with_capacity(logits.len());
        for row in logits.data().chunks(k) {
            probs.extend_from_slice(softmax(&NdArray::vector(row))?.data());
        }
        Ok(NdArray::from_vec(logits.shape().to_vec(), probs)?)
    }
}

fn channels_last(x: &NdArray, bsz: usize, c: usize, t: usize) -> NdArray {
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for b in 0..bsz {
        for ch in 0..c {
            for s in 0..t {
                out[(b * t + s) * c + ch] = src[(b * c + ch) * t + s];
            }
        }
    }
    NdArray::from_vec(vec![bsz, t, c], out).unwrap()
}

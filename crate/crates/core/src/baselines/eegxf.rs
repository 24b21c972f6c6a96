//! Patch-token transformer encoder.

use numcore::{NdArray, Tape, Var};
use rand::Rng;

use crate::error::Result;
use crate::model::layers::gaussian;
use crate::model::{
    Architecture, BatchNorm, Bound, EegxfConfig, LayerNorm, Linear, ParamId, ParamStore, Pass,
};

/// Sinusoidal position table `[tokens, dim]`: even columns sine, odd cosine.
pub fn positional_encoding(tokens: usize, dim: usize) -> NdArray {
    let mut table = vec![0.0; tokens * dim];
    for (pos, row) in table.chunks_mut(dim).enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let freq = 10_000f64.powf(-((j / 2 * 2) as f64) / dim as f64);
            let angle = pos as f64 * freq;
            *v = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    NdArray::from_vec(vec![tokens, dim], table).unwrap()
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attn_norm: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub ff_norm: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub post_norm: BatchNorm,
}

impl EncoderLayer {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d: usize,
        ff: usize,
    ) -> Self {
        let n = |part: &str| format!("{name}.{part}");
        Self {
            attn_norm: LayerNorm::new(store, &n("attn_norm"), d),
            q: Linear::new(store, rng, &n("q"), d, d),
            k: Linear::new(store, rng, &n("k"), d, d),
            v: Linear::new(store, rng, &n("v"), d, d),
            out: Linear::new(store, rng, &n("out"), d, d),
            ff_norm: LayerNorm::new(store, &n("ff_norm"), d),
            ff1: Linear::new(store, rng, &n("ff1"), d, ff),
            ff2: Linear::new(store, rng, &n("ff2"), ff, d),
            post_norm: BatchNorm::new(store, &n("post_norm"), d),
        }
    }

    fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        pass: &mut Pass,
        x: Var,
        heads: usize,
        dropout: f64,
    ) -> Var {
        let z = self.attn_norm.forward(tape, p, x);
        let (q, k, v) = (
            self.q.forward(tape, p, z),
            self.k.forward(tape, p, z),
            self.v.forward(tape, p, z),
        );
        let a = tape.self_attention(q, k, v, heads);
        let a = self.out.forward(tape, p, a);
        let a = pass.dropout(tape, a, dropout);
        let x = tape.add(x, a);

        let z = self.ff_norm.forward(tape, p, x);
        let f = self.ff1.forward(tape, p, z);
        let f = tape.gelu(f);
        let f = pass.dropout(tape, f, dropout);
        let f = self.ff2.forward(tape, p, f);
        let f = pass.dropout(tape, f, dropout);
        let x = tape.add(x, f);
        self.post_norm.forward(tape, p, pass, x)
    }
}

/// Non-overlapping patches of `patch` samples are flattened and projected to
/// tokens (ReLU, batch norm, positional encoding), run through pre-norm
/// encoder layers, pooled with learned attention and classified.
#[derive(Debug, Clone)]
pub struct Eegxf {
    pub embed: Linear,
    pub embed_norm: BatchNorm,
    pub layers: Vec<EncoderLayer>,
    pub pool: ParamId,
    pub head: Linear,
    patch: usize,
    heads: usize,
    d_model: usize,
    dropout: f64,
}

impl Eegxf {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        in_channels: usize,
        n_classes: usize,
        cfg: &EegxfConfig,
    ) -> Self {
        let d = cfg.d_model;
        let fan_in = cfg.patch * in_channels;
        let embed = Linear::with_variance(
            store,
            rng,
            "embed",
            fan_in,
            d,
            true,
            cfg.input_gain / fan_in as f64,
        );
        let embed_norm = BatchNorm::new(store, "embed_norm", d);
        let layers = (0..cfg.layers)
            .map(|i| EncoderLayer::new(store, rng, &format!("layers.{i}"), d, cfg.ff))
            .collect();
        let pool = store.add("pool.weight", gaussian(rng, &[d], 1.0 / d as f64));
        let head = Linear::new(store, rng, "head", d, n_classes);
        Self {
            embed,
            embed_norm,
            layers,
            pool,
            head,
            patch: cfg.patch,
            heads: cfg.heads,
            d_model: d,
            dropout: cfg.dropout,
        }
    }
}

impl Architecture for Eegxf {
    fn forward(&self, tape: &mut Tape, p: &Bound, pass: &mut Pass, x: Var) -> Result<Var> {
        let &[bsz, t, c] = tape.shape(x) else {
            unreachable!("model input is [batch, time, channels]");
        };
        let tokens = t / self.patch;
        let x = if tokens * self.patch == t {
            x
        } else {
            tape.slice_time(x, 0, tokens * self.patch)
        };
        let patches = tape.reshape(x, &[bsz, tokens, self.patch * c]);
        let h = self.embed.forward(tape, p, patches);
        let h = tape.relu(h);
        let h = self.embed_norm.forward(tape, p, pass, h);
        let mut h = tape.add_const(h, &positional_encoding(tokens, self.d_model));
        for layer in &self.layers {
            h = layer.forward(tape, p, pass, h, self.heads, self.dropout);
        }
        let pooled = tape.attention_pool(h, p[self.pool]);
        let pooled = pass.dropout(tape, pooled, self.dropout);
        Ok(self.head.forward(tape, p, pooled))
    }

    fn min_len(&self) -> usize {
        self.patch
    }

    fn input_warning(&self, len: usize) -> Option<String> {
        let rem = len % self.patch;
        (rem != 0).then(|| {
            format!(
                "input length {len} is not a multiple of patch size {}; dropping the last {rem} samples",
                self.patch
            )
        })
    }
}

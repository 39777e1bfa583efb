// SPDX-License-Identifier: MIT OR Apache-2.0

//! A small deterministic decoder-only transformer.
//!
//! Byte-level tokens, rotary positions on queries and keys, pre-norm blocks of
//! causal multi-head self-attention and a GELU feed-forward, each added back
//! into the residual stream, then a final layer norm and an untied output
//! projection. Weights are random (never trained); the model exists to give
//! probes and steering a real layered residual stream to work on.
//!
//! All arithmetic is `f64` with fixed loop order, so identical inputs give
//! bit-identical outputs.

mod format;
pub mod rng;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::steering::{SteeringPlan, SteeringScope};
use rng::SplitMix64;

pub use format::{load_model, save_model};

pub const BOS: u32 = 256;
pub const EOS: u32 = 257;
pub const PAD: u32 = 258;
pub const VOCAB_SIZE: usize = 259;

/// Standard deviation of projection weights.
pub const PROJ_SCALE: f64 = 0.02;
/// Standard deviation of token-embedding entries.
pub const EMBED_SCALE: f64 = 0.02;

const LN_EPS: f64 = 1e-5;
const ROPE_BASE: f64 = 10000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_mult: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 8,
            n_heads: 4,
            ff_mult: 4,
            vocab_size: VOCAB_SIZE,
            max_seq: 1024,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("ff_mult", self.ff_mult),
            ("max_seq", self.max_seq),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidArgument(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size != VOCAB_SIZE {
            return Err(Error::InvalidArgument(format!(
                "vocab_size must be {VOCAB_SIZE}, got {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn ff_dim(&self) -> usize {
        self.d_model * self.ff_mult
    }
}

/// BOS followed by one token per UTF-8 byte.
pub fn tokenize(text: &str) -> Vec<u32> {
    std::iter::once(BOS)
        .chain(text.bytes().map(u32::from))
        .collect()
}

/// The byte sequence behind `tokens`; special tokens are dropped.
pub fn detokenize(tokens: &[u32]) -> Vec<u8> {
    tokens
        .iter()
        .filter(|&&t| t < 256)
        .map(|&t| t as u8)
        .collect()
}

/// Last-position hidden state at the output of one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEmbedding {
    /// 1-based block index.
    pub layer: usize,
    pub vector: Vec<f64>,
}

/// One [`LayerEmbedding`] per block, ascending.
pub type CaptureTrace = Vec<LayerEmbedding>;

/// Called after each block on the hidden state at the final position of the
/// current pass, before the next block reads it.
pub trait LayerHook {
    fn apply(&self, layer: usize, hidden: &mut [f64]);
}

impl LayerHook for SteeringPlan {
    fn apply(&self, layer: usize, hidden: &mut [f64]) {
        let steered = crate::steering::steer_layer_pass(self, layer, hidden);
        hidden.copy_from_slice(&steered);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Block {
    pub ln1_g: Vec<f64>,
    pub ln1_b: Vec<f64>,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
    pub ln2_g: Vec<f64>,
    pub ln2_b: Vec<f64>,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

/// Immutable model weights. Share freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub(crate) config: ModelConfig,
    pub(crate) tok_emb: Vec<f64>,
    pub(crate) blocks: Vec<Block>,
    pub(crate) lnf_g: Vec<f64>,
    pub(crate) lnf_b: Vec<f64>,
    pub(crate) w_out: Vec<f64>,
}

fn gaussian_vec(rng: &mut SplitMix64, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.next_gaussian() * scale).collect()
}

impl Model {
    /// Initialise weights from `config.seed`.
    ///
    /// Draw order: token embeddings, then per block `wq, wk, wv, wo, w1, w2`,
    /// then the output projection. Layer-norm gains are ones and biases zeros.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let ff = config.ff_dim();
        let mut rng = SplitMix64::new(config.seed);
        let tok_emb = gaussian_vec(&mut rng, config.vocab_size * d, EMBED_SCALE);
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                ln1_g: vec![1.0; d],
                ln1_b: vec![0.0; d],
                wq: gaussian_vec(&mut rng, d * d, PROJ_SCALE),
                wk: gaussian_vec(&mut rng, d * d, PROJ_SCALE),
                wv: gaussian_vec(&mut rng, d * d, PROJ_SCALE),
                wo: gaussian_vec(&mut rng, d * d, PROJ_SCALE),
                ln2_g: vec![1.0; d],
                ln2_b: vec![0.0; d],
                w1: gaussian_vec(&mut rng, d * ff, PROJ_SCALE),
                w2: gaussian_vec(&mut rng, ff * d, PROJ_SCALE),
            })
            .collect();
        let w_out = gaussian_vec(&mut rng, d * config.vocab_size, PROJ_SCALE);
        Ok(Model {
            config,
            tok_emb,
            blocks,
            lnf_g: vec![1.0; d],
            lnf_b: vec![0.0; d],
            w_out,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// First token-embedding weight; handy for determinism checks.
    pub fn first_weight(&self) -> f64 {
        self.tok_emb[0]
    }

    pub fn session(&self) -> Session<'_> {
        Session::new(self)
    }

    /// Next-token logits at the last position and the per-layer last-token
    /// hidden states.
    pub fn forward_capture(&self, tokens: &[u32]) -> Result<(Vec<f64>, CaptureTrace)> {
        let out = self.session().run(tokens, None, false)?;
        Ok((out.logits, out.trace))
    }

    /// Hidden states at every position: `[layer][position][d_model]`.
    pub fn forward_all_positions(&self, tokens: &[u32]) -> Result<Vec<Vec<Vec<f64>>>> {
        let out = self.session().run(tokens, None, true)?;
        Ok(out.all_positions.unwrap_or_default())
    }

    /// Per-layer last-token embeddings of `text`.
    pub fn embed(&self, text: &str) -> Result<CaptureTrace> {
        Ok(self.forward_capture(&tokenize(text))?.1)
    }

    /// Greedy decoding, optionally steered.
    pub fn generate(
        &self,
        prompt: &str,
        max_new_tokens: usize,
        steering: Option<&SteeringPlan>,
    ) -> Result<String> {
        let all_steps = steering.is_some_and(|p| p.scope == SteeringScope::AllSteps);
        let hook = steering.map(|p| p as &dyn LayerHook);
        let tokens = self.generate_tokens(&tokenize(prompt), max_new_tokens, hook, all_steps)?;
        Ok(String::from_utf8_lossy(&detokenize(&tokens)).into_owned())
    }

    /// Greedy decoding from token ids with an arbitrary hook.
    ///
    /// The hook runs on the prompt pass and, when `hook_every_step` is set,
    /// on every decode step. Returns only the generated ids (EOS excluded).
    pub fn generate_tokens(
        &self,
        prompt: &[u32],
        max_new_tokens: usize,
        hook: Option<&dyn LayerHook>,
        hook_every_step: bool,
    ) -> Result<Vec<u32>> {
        let budget = prompt.len() + max_new_tokens;
        if budget > self.config.max_seq {
            return Err(Error::SequenceTooLong {
                len: budget,
                max: self.config.max_seq,
            });
        }
        let mut session = self.session();
        let mut logits = session.run(prompt, hook, false)?.logits;
        let mut generated = Vec::new();
        while generated.len() < max_new_tokens {
            let next = argmax_token(&logits);
            if next == EOS {
                break;
            }
            generated.push(next);
            if generated.len() == max_new_tokens {
                break;
            }
            let step_hook = if hook_every_step { hook } else { None };
            logits = session.run(&[next], step_hook, false)?.logits;
        }
        Ok(generated)
    }
}

/// Highest-scoring byte or EOS; BOS and PAD are never emitted. Ties go to
/// the lowest id.
fn argmax_token(logits: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        let id = i as u32;
        if id == BOS || id == PAD {
            continue;
        }
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// Output of one [`Session::run`] call.
#[derive(Debug, Clone)]
pub struct PassOutput {
    pub logits: Vec<f64>,
    /// Hidden state at the final position after each block (post-hook).
    pub trace: CaptureTrace,
    pub all_positions: Option<Vec<Vec<Vec<f64>>>>,
}

/// Incremental decoding state: per-layer key/value caches for the positions
/// processed so far. Cached positions are never rewritten.
pub struct Session<'m> {
    model: &'m Model,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
}

impl<'m> Session<'m> {
    pub fn new(model: &'m Model) -> Self {
        let n = model.config.n_layers;
        Session {
            model,
            keys: vec![Vec::new(); n],
            values: vec![Vec::new(); n],
            len: 0,
        }
    }

    /// Positions processed so far.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Append `tokens` and run them through every block.
    pub fn run(
        &mut self,
        tokens: &[u32],
        hook: Option<&dyn LayerHook>,
        capture_all: bool,
    ) -> Result<PassOutput> {
        let cfg = &self.model.config;
        if tokens.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        if self.len + tokens.len() > cfg.max_seq {
            return Err(Error::SequenceTooLong {
                len: self.len + tokens.len(),
                max: cfg.max_seq,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::InvalidArgument(format!(
                "token id {bad} out of vocabulary"
            )));
        }
        let d = cfg.d_model;
        let start = self.len;

        let mut xs: Vec<Vec<f64>> = tokens
            .iter()
            .map(|&tok| self.model.tok_emb[tok as usize * d..(tok as usize + 1) * d].to_vec())
            .collect();

        let mut trace = Vec::with_capacity(cfg.n_layers);
        let mut all = capture_all.then(Vec::new);
        for (l, block) in self.model.blocks.iter().enumerate() {
            self.block_forward(l, block, &mut xs, start);
            if let Some(h) = hook {
                h.apply(l + 1, xs.last_mut().expect("non-empty chunk"));
            }
            trace.push(LayerEmbedding {
                layer: l + 1,
                vector: xs.last().expect("non-empty chunk").clone(),
            });
            if let Some(a) = all.as_mut() {
                a.push(xs.clone());
            }
        }
        self.len += tokens.len();

        let last = layer_norm(
            xs.last().expect("non-empty chunk"),
            &self.model.lnf_g,
            &self.model.lnf_b,
        );
        let logits = matvec(&last, &self.model.w_out, cfg.vocab_size);
        Ok(PassOutput {
            logits,
            trace,
            all_positions: all,
        })
    }

    fn block_forward(&mut self, l: usize, block: &Block, xs: &mut [Vec<f64>], start: usize) {
        let cfg = &self.model.config;
        let d = cfg.d_model;
        let hd = cfg.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();

        let mut queries = Vec::with_capacity(xs.len());
        for (t, x) in xs.iter().enumerate() {
            let h = layer_norm(x, &block.ln1_g, &block.ln1_b);
            let mut q = matvec(&h, &block.wq, d);
            let mut k = matvec(&h, &block.wk, d);
            rotate(&mut q, start + t, hd);
            rotate(&mut k, start + t, hd);
            queries.push(q);
            self.keys[l].extend(k);
            self.values[l].extend(matvec(&h, &block.wv, d));
        }

        let keys = &self.keys[l];
        let values = &self.values[l];
        for (t, x) in xs.iter_mut().enumerate() {
            let q = &queries[t];
            let visible = start + t + 1;
            let mut mixed = vec![0.0; d];
            let mut scores = vec![0.0; visible];
            for head in 0..cfg.n_heads {
                let off = head * hd;
                let qh = &q[off..off + hd];
                let mut max = f64::NEG_INFINITY;
                for (p, s) in scores.iter_mut().enumerate() {
                    let kh = &keys[p * d + off..p * d + off + hd];
                    *s = dot(qh, kh) * scale;
                    max = max.max(*s);
                }
                let mut total = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    total += *s;
                }
                for (p, s) in scores.iter().enumerate() {
                    let w = s / total;
                    let vh = &values[p * d + off..p * d + off + hd];
                    for (m, v) in mixed[off..off + hd].iter_mut().zip(vh) {
                        *m += w * v;
                    }
                }
            }
            let attn = matvec(&mixed, &block.wo, d);
            for (xi, a) in x.iter_mut().zip(&attn) {
                *xi += a;
            }

            let h = layer_norm(x, &block.ln2_g, &block.ln2_b);
            let mut hidden = matvec(&h, &block.w1, cfg.ff_dim());
            hidden.iter_mut().for_each(|v| *v = gelu(*v));
            let ff = matvec(&hidden, &block.w2, d);
            for (xi, f) in x.iter_mut().zip(&ff) {
                *xi += f;
            }
        }
    }
}

/// Rotary position encoding: within each head, the pair `(2i, 2i + 1)` is
/// rotated by `pos * ROPE_BASE^(-2i / head_dim)`.
fn rotate(v: &mut [f64], pos: usize, head_dim: usize) {
    for head in v.chunks_exact_mut(head_dim) {
        for (i, pair) in head.chunks_exact_mut(2).enumerate() {
            let theta = pos as f64 * ROPE_BASE.powf(-((2 * i) as f64) / head_dim as f64);
            let (sin, cos) = theta.sin_cos();
            let (a, b) = (pair[0], pair[1]);
            pair[0] = a * cos - b * sin;
            pair[1] = a * sin + b * cos;
        }
    }
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    x.iter()
        .zip(gain.iter().zip(bias))
        .map(|(v, (g, b))| (v - mean) * inv * g + b)
        .collect()
}

/// `x · W` with `W` stored row-major as `[x.len()][out]`.
fn matvec(x: &[f64], w: &[f64], out: usize) -> Vec<f64> {
    let mut y = vec![0.0; out];
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * out..(i + 1) * out];
        for (yj, wij) in y.iter_mut().zip(row) {
            *yj += xi * wij;
        }
    }
    y
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Tanh approximation of GELU.
fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

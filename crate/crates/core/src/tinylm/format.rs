// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary model files.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic      4 bytes   "TLM1"
//! d_model    u32
//! n_layers   u32
//! n_heads    u32
//! ff_mult    u32
//! vocab_size u32
//! max_seq    u32
//! seed       u64
//! weights    f64 * count, in this order:
//!   tok_emb [vocab][d]
//!   per block: ln1_g [d], ln1_b [d], wq [d][d], wk [d][d], wv [d][d],
//!              wo [d][d], ln2_g [d], ln2_b [d], w1 [d][ff], w2 [ff][d]
//!   lnf_g [d], lnf_b [d], w_out [d][vocab]
//! ```
//!
//! Matrices are row-major `[input][output]`.

use std::fs;
use std::path::Path;

use super::{Block, Model, ModelConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TLM1";
const HEADER_LEN: usize = 4 + 6 * 4 + 8;

fn tensors(model: &Model) -> Vec<&[f64]> {
    let mut t: Vec<&[f64]> = vec![&model.tok_emb];
    for b in &model.blocks {
        t.extend([
            &b.ln1_g[..],
            &b.ln1_b,
            &b.wq,
            &b.wk,
            &b.wv,
            &b.wo,
            &b.ln2_g,
            &b.ln2_b,
            &b.w1,
            &b.w2,
        ]);
    }
    t.extend([&model.lnf_g[..], &model.lnf_b, &model.w_out]);
    t
}

/// Serialize to the `TLM1` layout.
pub fn to_bytes(model: &Model) -> Vec<u8> {
    let c = &model.config;
    let mut out = Vec::with_capacity(HEADER_LEN + weight_count(c) * 8);
    out.extend_from_slice(MAGIC);
    for v in [
        c.d_model,
        c.n_layers,
        c.n_heads,
        c.ff_mult,
        c.vocab_size,
        c.max_seq,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.seed.to_le_bytes());
    for t in tensors(model) {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn weight_count(c: &ModelConfig) -> usize {
    let d = c.d_model;
    let ff = c.ff_dim();
    let block = 4 * d + 4 * d * d + 2 * d * ff;
    c.vocab_size * d + c.n_layers * block + 2 * d + d * c.vocab_size
}

/// Parse the `TLM1` layout.
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::ModelFormat("missing TLM1 header".into()));
    }
    let u32_at = |i: usize| {
        let o = 4 + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize
    };
    let config = ModelConfig {
        d_model: u32_at(0),
        n_layers: u32_at(1),
        n_heads: u32_at(2),
        ff_mult: u32_at(3),
        vocab_size: u32_at(4),
        max_seq: u32_at(5),
        seed: u64::from_le_bytes(bytes[28..36].try_into().expect("8 bytes")),
    };
    config.validate()?;
    let expected = HEADER_LEN + weight_count(&config) * 8;
    if bytes.len() != expected {
        return Err(Error::ModelFormat(format!(
            "expected {expected} bytes for this config, found {}",
            bytes.len()
        )));
    }

    let mut floats = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |n: usize| -> Vec<f64> { floats.by_ref().take(n).collect() };

    let d = config.d_model;
    let ff = config.ff_dim();
    let tok_emb = take(config.vocab_size * d);
    let blocks = (0..config.n_layers)
        .map(|_| Block {
            ln1_g: take(d),
            ln1_b: take(d),
            wq: take(d * d),
            wk: take(d * d),
            wv: take(d * d),
            wo: take(d * d),
            ln2_g: take(d),
            ln2_b: take(d),
            w1: take(d * ff),
            w2: take(ff * d),
        })
        .collect();
    let lnf_g = take(d);
    let lnf_b = take(d);
    let w_out = take(d * config.vocab_size);
    Ok(Model {
        config,
        tok_emb,
        blocks,
        lnf_g,
        lnf_b,
        w_out,
    })
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, &to_bytes(model))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

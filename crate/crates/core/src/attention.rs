//! A toy single-head cross-attention layer.
//!
//! Token embeddings are seeded pseudo-random unit vectors standing in for a
//! text encoder. Keys and values are the embeddings themselves (no learned
//! projections), so every attended feature is a convex combination of the
//! prompt's rows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{dims_mismatch, Error, Result};
use crate::graph::SceneObject;
use crate::grid::{FeatureGrid, ScalarMap};

/// `K x C` token embeddings with unit-norm rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding {
    channels: usize,
    rows: Vec<f64>,
}

impl PromptEmbedding {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn tokens(&self) -> usize {
        self.rows.len() / self.channels
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * self.channels..(k + 1) * self.channels]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.rows.chunks_exact(self.channels)
    }

    /// Builds an embedding from explicit rows, normalizing each to unit length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let channels = rows.first().map_or(0, Vec::len);
        if channels == 0 {
            return Err(Error::Config("prompt embedding needs at least one non-empty row".into()));
        }
        let mut flat = Vec::with_capacity(rows.len() * channels);
        for row in rows {
            if row.len() != channels {
                return Err(dims_mismatch(format!("{channels} channels"), format!("{} channels", row.len())));
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::Config(format!("cannot normalize embedding row with norm {norm}")));
            }
            flat.extend(row.iter().map(|v| v / norm));
        }
        Ok(Self { channels, rows: flat })
    }

    /// Stacks several prompts into one, as a vanilla layer attending to the
    /// whole scene description would see them.
    pub fn concat(prompts: &[&PromptEmbedding]) -> Result<Self> {
        let channels = prompts
            .first()
            .map(|p| p.channels)
            .ok_or_else(|| Error::Config("cannot concatenate zero prompts".into()))?;
        let mut rows = Vec::new();
        for p in prompts {
            if p.channels != channels {
                return Err(dims_mismatch(format!("{channels} channels"), format!("{} channels", p.channels)));
            }
            rows.extend_from_slice(&p.rows);
        }
        Ok(Self { channels, rows })
    }
}

// FNV-1a keeps token hashes stable across platforms and toolchains.
fn token_hash(token: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    token
        .bytes()
        .fold(OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

fn token_row(token: &str, seed: u64, channels: usize) -> Vec<f64> {
    let mixed = token_hash(token) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    let mut row: Vec<f64> = (0..channels).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        row.iter_mut().for_each(|v| *v /= norm);
    } else {
        row[0] = 1.0;
    }
    row
}

/// Deterministic embedding of `tokens`. An empty token list embeds the
/// blank prompt `""` as a single row.
pub fn embed_prompt<S: AsRef<str>>(tokens: &[S], seed: u64, channels: usize) -> Result<PromptEmbedding> {
    if channels == 0 {
        return Err(Error::Config("embedding needs at least one channel".into()));
    }
    let rows = if tokens.is_empty() {
        token_row("", seed, channels)
    } else {
        tokens
            .iter()
            .flat_map(|t| token_row(t.as_ref(), seed, channels))
            .collect()
    };
    Ok(PromptEmbedding { channels, rows })
}

/// Row-stochastic `(H*W) x K` attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    tokens: usize,
    values: Vec<f64>,
}

impl AttentionWeights {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let tokens = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != tokens) {
            return Err(dims_mismatch(format!("{tokens} tokens"), format!("{} tokens", bad.len())));
        }
        Ok(Self {
            tokens,
            values: rows.concat(),
        })
    }

    pub fn pixels(&self) -> usize {
        self.values.len().checked_div(self.tokens).unwrap_or(0)
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn row(&self, p: usize) -> &[f64] {
        &self.values[p * self.tokens..(p + 1) * self.tokens]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.tokens.max(1))
    }
}

/// Every latent cell attends over the prompt tokens:
/// `softmax(q k^T / sqrt(C)) V` with keys and values equal to the prompt rows.
pub fn cross_attention(latent: &FeatureGrid, prompt: &PromptEmbedding) -> Result<(FeatureGrid, AttentionWeights)> {
    let c = latent.channels();
    if c != prompt.channels() {
        return Err(dims_mismatch(format!("{} channels", prompt.channels()), format!("{c} channels")));
    }
    let k = prompt.tokens();
    let scale = 1.0 / (c as f64).sqrt();
    let mut out = FeatureGrid::zeros(latent.width(), latent.height(), c);
    let mut weights = Vec::with_capacity(latent.pixel_count() * k);
    let mut logits = vec![0.0; k];

    for (p, query) in latent.pixels().enumerate() {
        for (logit, key) in logits.iter_mut().zip(prompt.iter_rows()) {
            *logit = query.iter().zip(key).map(|(a, b)| a * b).sum::<f64>() * scale;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        logits.iter_mut().for_each(|l| *l = (*l - max).exp());
        let total: f64 = logits.iter().sum();

        let cell = out.pixel_mut(p);
        for (l, value) in logits.iter().zip(prompt.iter_rows()) {
            let w = l / total;
            weights.push(w);
            for (o, v) in cell.iter_mut().zip(value) {
                *o += w * v;
            }
        }
    }
    Ok((out, AttentionWeights { tokens: k, values: weights }))
}

/// Column `subject_index` of the weights as a `height x width` map.
pub fn subject_attention_map(
    weights: &AttentionWeights,
    subject_index: usize,
    width: usize,
    height: usize,
) -> Result<ScalarMap> {
    if subject_index >= weights.tokens() {
        return Err(Error::Index {
            index: subject_index,
            len: weights.tokens(),
        });
    }
    if weights.pixels() != width * height {
        return Err(dims_mismatch(
            format!("{} attention rows for {width}x{height}", width * height),
            format!("{} rows", weights.pixels()),
        ));
    }
    let column = weights.iter_rows().map(|row| row[subject_index]).collect();
    ScalarMap::from_vec(width, height, column)
}

/// Explicit subject index when given, otherwise the last prompt token.
pub fn subject_token_index(object: &SceneObject) -> Result<usize> {
    match (object.subject_index, object.prompt_tokens.len()) {
        (Some(i), n) if i < n => Ok(i),
        (Some(i), n) => Err(Error::Index { index: i, len: n }),
        (None, 0) => Err(Error::EmptyPrompt(object.id.clone())),
        (None, n) => Ok(n - 1),
    }
}

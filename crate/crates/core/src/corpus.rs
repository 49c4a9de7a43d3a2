//! Synthetic gray-image corpora and the empirical entropies used to judge
//! what a trained model has learned.

use std::collections::HashMap;
use std::hash::Hash;

use crate::cuboid::GrayImage;
use crate::error::{Error, Result};
use crate::tensor::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CorpusKind {
    /// Every pixel of an image equal; the level is drawn per image.
    Constant,
    /// Independent uniform pixels.
    IidUniform,
    /// Two-level binary field: a horizontal chain along the first row, a
    /// vertical chain down the first column, and in the interior
    /// `b = majority(left, up, up_left) ^ flip`, with flips Bernoulli(`flip`).
    MarkovTexture { flip: f64 },
}

impl CorpusKind {
    pub fn parse(name: &str, flip: f64) -> Result<Self> {
        match name {
            "constant" => Ok(CorpusKind::Constant),
            "iid-uniform" => Ok(CorpusKind::IidUniform),
            "markov-texture" => {
                if !(0.0..=1.0).contains(&flip) {
                    return Err(Error::InvalidArgument(format!("flip probability {flip} not in [0, 1]")));
                }
                Ok(CorpusKind::MarkovTexture { flip })
            }
            other => Err(Error::InvalidArgument(format!(
                "corpus kind must be constant, iid-uniform or markov-texture; got {other:?}"
            ))),
        }
    }
}

/// Binary field behind [`CorpusKind::MarkovTexture`], row-major.
pub fn markov_field(width: usize, height: usize, flip: f64, rng: &mut Rng) -> Vec<bool> {
    let mut b = vec![false; width * height];
    for j in 0..height {
        for i in 0..width {
            let e = rng.bernoulli(flip);
            b[j * width + i] = match (i, j) {
                (0, 0) => rng.bernoulli(0.5),
                (_, 0) => b[i - 1] ^ e,
                (0, _) => b[(j - 1) * width] ^ e,
                _ => {
                    let (l, u, ul) = (b[j * width + i - 1], b[(j - 1) * width + i], b[(j - 1) * width + i - 1]);
                    ((l & u) | (l & ul) | (u & ul)) ^ e
                }
            };
        }
    }
    b
}

pub fn generate(kind: CorpusKind, count: usize, size: usize, seed: u64) -> Result<Vec<GrayImage>> {
    if count == 0 || size == 0 {
        return Err(Error::InvalidArgument("count and size must be positive".into()));
    }
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|_| {
            let pixels = match kind {
                CorpusKind::Constant => vec![rng.below(256) as u8; size * size],
                CorpusKind::IidUniform => (0..size * size).map(|_| rng.below(256) as u8).collect(),
                CorpusKind::MarkovTexture { flip } => markov_field(size, size, flip, &mut rng)
                    .into_iter()
                    .map(|b| if b { 255 } else { 0 })
                    .collect(),
            };
            GrayImage::new(size, size, pixels)
        })
        .collect()
}

/// Empirical (order-0) entropy of a symbol stream in bits per symbol.
pub fn order0_entropy<T: Eq + Hash>(symbols: impl IntoIterator<Item = T>) -> f64 {
    let mut counts: HashMap<T, usize> = HashMap::new();
    let mut n = 0usize;
    for s in symbols {
        *counts.entry(s).or_default() += 1;
        n += 1;
    }
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.log2()
        })
        .sum()
}

/// Empirical `H(X | context)` from `(context, symbol)` pairs.
pub fn conditional_entropy<C: Eq + Hash + Clone, T: Eq + Hash>(pairs: impl IntoIterator<Item = (C, T)>) -> f64 {
    let mut joint: HashMap<(C, T), usize> = HashMap::new();
    let mut ctx: HashMap<C, usize> = HashMap::new();
    let mut n = 0usize;
    for (c, t) in pairs {
        *ctx.entry(c.clone()).or_default() += 1;
        *joint.entry((c, t)).or_default() += 1;
        n += 1;
    }
    joint
        .iter()
        .map(|((c, _), &k)| {
            let p_joint = k as f64 / n as f64;
            -p_joint * (k as f64 / ctx[c] as f64).log2()
        })
        .sum()
}

/// Binary entropy `H(p)` in bits.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

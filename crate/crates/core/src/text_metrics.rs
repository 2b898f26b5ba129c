//! Explanation scoring: ROUGE-L over word tokens and embedding cosine similarity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Embedder};

#[derive(Debug, Error)]
pub enum TextMetricError {
    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero-norm embedding")]
    ZeroVector,
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("embedding has dimension 0")]
    EmptyEmbedding,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Lowercased word tokens; punctuation and whitespace separate tokens and are dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn new(text: &str) -> Self {
        Self(
            text.split(|c: char| !c.is_alphanumeric())
                .filter(|t| !t.is_empty())
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Length of the longest common subsequence, in O(n*m) time and O(m) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure (balanced) between token sequences, in `[0, 100]`.
/// Two empty sequences score 100; one empty sequence scores 0.
pub fn rouge_l_tokens<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() && reference.is_empty() {
        return 100.0;
    }
    let l = lcs_len(candidate, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / candidate.len() as f64;
    let r = l / reference.len() as f64;
    100.0 * 2.0 * p * r / (p + r)
}

pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    rouge_l_tokens(TokenSeq::new(candidate).tokens(), TokenSeq::new(reference).tokens())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, TextMetricError> {
        if values.is_empty() {
            return Err(TextMetricError::EmptyEmbedding);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TextMetricError::NonFinite);
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn cosine_sim(a: &Embedding, b: &Embedding) -> Result<f64, TextMetricError> {
    if a.dim() != b.dim() {
        return Err(TextMetricError::DimensionMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(TextMetricError::ZeroVector);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CssScore {
    pub cosine: f64,
    /// `100 * max(0, cosine)`.
    pub score: f64,
}

pub fn css_score(candidate: &str, reference: &str, embedder: &dyn Embedder) -> Result<CssScore, TextMetricError> {
    let a = Embedding::new(embedder.embed_text(candidate)?)?;
    let b = Embedding::new(embedder.embed_text(reference)?)?;
    let cosine = cosine_sim(&a, &b)?;
    Ok(CssScore {
        cosine,
        score: 100.0 * cosine.max(0.0),
    })
}

/// Canonical per-region response layout: one `"<location>: <explanation>"` line per region.
pub fn format_regions<'a>(regions: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    regions
        .into_iter()
        .map(|(loc, exp)| format!("{}: {}", loc.trim(), exp.trim()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Reformats free-form text into the per-region layout. Text that already
/// has a `location: explanation` shape on every line is returned unchanged;
/// otherwise each sentence becomes a line `"region <i>: <sentence>"`.
pub fn align_format(text: &str) -> String {
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let structured = !lines.is_empty()
        && lines
            .iter()
            .all(|l| l.split_once(':').is_some_and(|(a, b)| !a.trim().is_empty() && !b.trim().is_empty()));
    if structured {
        return lines.join("\n");
    }
    let mut out = Vec::new();
    for sentence in text.split(['.', '!', '?', '\n']) {
        let s = sentence.trim();
        if !s.is_empty() {
            out.push(format!("region {}: {s}", out.len() + 1));
        }
    }
    out.join("\n")
}

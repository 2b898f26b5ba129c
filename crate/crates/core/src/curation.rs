//! Dataset curation: feature clustering, per-cluster uniform sampling and
//! judge filtering.
//!
//! All randomness goes through [`crate::rng`], so a seed fully determines
//! clustering and sampling.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotation::DatasetManifest;
use crate::backends::{BackendError, Captioner, Embedder};
use crate::parallel::bounded_map;
use crate::rng;

/// Judge system and user prompt, shipped verbatim. The user part carries an
/// `{image}` placeholder.
pub const CURATION_PROMPT: &str = include_str!("../assets/curation_prompt.txt");
/// Summary of the three artifact families, used as a prompt prior.
pub const ARTIFACT_PRIOR: &str = include_str!("../assets/artifact_prior.txt");

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CurationError {
    #[error("feature set is empty")]
    Empty,
    #[error("feature dimension mismatch: {id} has {got}, expected {expected}")]
    DimMismatch { id: String, got: usize, expected: usize },
    #[error("feature vector for {0} is empty or non-finite")]
    BadVector(String),
    #[error("{ids} ids for {vectors} vectors")]
    Misaligned { ids: usize, vectors: usize },
    #[error("k must be in [1, {count}], got {k}")]
    BadK { k: usize, count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl FeatureSet {
    pub fn new(ids: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self, CurationError> {
        if ids.len() != vectors.len() {
            return Err(CurationError::Misaligned {
                ids: ids.len(),
                vectors: vectors.len(),
            });
        }
        let Some(first) = vectors.first() else {
            return Err(CurationError::Empty);
        };
        let dim = first.len();
        for (id, v) in ids.iter().zip(&vectors) {
            if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                return Err(CurationError::BadVector(id.clone()));
            }
            if v.len() != dim {
                return Err(CurationError::DimMismatch {
                    id: id.clone(),
                    got: v.len(),
                    expected: dim,
                });
            }
        }
        Ok(Self { ids, vectors })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }
}

/// Embeds every manifest image through the embedder's image variant.
pub fn extract_features(
    manifest: &DatasetManifest,
    embedder: &dyn Embedder,
    max_concurrency: usize,
) -> Result<FeatureSet, BackendError> {
    let vectors = bounded_map(&manifest.entries, max_concurrency, |_, e| {
        let img = manifest
            .load_image(e)
            .map_err(|err| BackendError::Config(format!("{}: {err}", e.id)))?;
        embedder.embed_image(&img)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let ids = manifest.entries.iter().map(|e| e.id.clone()).collect();
    FeatureSet::new(ids, vectors).map_err(|e| BackendError::Config(e.to_string()))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(v: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(i, c)| (i, sq_dist(v, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn assign(vectors: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut cost = 0.0;
    let a = vectors
        .iter()
        .map(|v| {
            let (i, d) = nearest(v, centroids);
            cost += d;
            i
        })
        .collect();
    (a, cost)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub k: usize,
    pub seed: u64,
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// Sum of squared distances after each assignment step.
    pub objective: Vec<f64>,
}

/// k-means++ seeding.
fn seed_centroids(vectors: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let pick = |draw: u64, n: usize| ((rng::unit_f64(rng::keyed(seed, draw)) * n as f64) as usize).min(n - 1);
    let mut centroids = vec![vectors[pick(0, n)].clone()];
    let mut d2: Vec<f64> = vectors.iter().map(|v| sq_dist(v, &centroids[0])).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let target = rng::unit_f64(rng::keyed(seed, c as u64)) * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave the target just past the last positive weight
            chosen.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("total is positive"))
        } else {
            pick(c as u64, n)
        };
        centroids.push(vectors[idx].clone());
        for (d, v) in d2.iter_mut().zip(vectors) {
            *d = d.min(sq_dist(v, &centroids[c]));
        }
    }
    centroids
}

/// Lloyd's algorithm from k-means++ seeds. An emptied cluster keeps its
/// previous centroid.
pub fn kmeans_cluster(features: &FeatureSet, k: usize, seed: u64, max_iters: usize) -> Result<KMeansResult, CurationError> {
    let vectors = features.vectors();
    if k == 0 || k > vectors.len() {
        return Err(CurationError::BadK { k, count: vectors.len() });
    }
    let dim = features.dim();
    let mut centroids = seed_centroids(vectors, k, seed);
    let mut assignments: Vec<usize> = Vec::new();
    let mut objective = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters.max(1) {
        iterations += 1;
        let (next, cost) = assign(vectors, &centroids);
        objective.push(cost);
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (v, &a) in vectors.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(v) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    if !converged {
        // out of iterations: reassign against the last centroid update
        let (a, cost) = assign(vectors, &centroids);
        assignments = a;
        objective.push(cost);
    }
    Ok(KMeansResult {
        k,
        seed,
        assignments,
        centroids,
        iterations,
        converged,
        objective,
    })
}

/// Draws up to `n_per_cluster` members of each cluster uniformly without
/// replacement. Returns indices in ascending order.
pub fn stratified_sample(assignments: &[usize], n_per_cluster: usize, seed: u64) -> Vec<usize> {
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in assignments.iter().enumerate() {
        clusters.entry(c).or_default().push(i);
    }
    let mut picked = Vec::new();
    for (c, mut members) in clusters {
        let take = n_per_cluster.min(members.len());
        // partial Fisher-Yates
        for j in 0..take {
            let r = rng::unit_f64(rng::combine(&[seed, c as u64, j as u64]));
            let swap = j + ((r * (members.len() - j) as f64) as usize).min(members.len() - j - 1);
            members.swap(j, swap);
        }
        picked.extend_from_slice(&members[..take]);
    }
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JudgeLabel {
    Acceptable,
    #[serde(rename = "Rejected[Clarity]")]
    RejectedClarity,
    #[serde(rename = "Rejected[Safety]")]
    RejectedSafety,
    #[serde(rename = "Rejected[Realism]")]
    RejectedRealism,
}

impl JudgeLabel {
    pub const ALL: [JudgeLabel; 4] = [
        JudgeLabel::Acceptable,
        JudgeLabel::RejectedClarity,
        JudgeLabel::RejectedSafety,
        JudgeLabel::RejectedRealism,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            JudgeLabel::Acceptable => "Acceptable",
            JudgeLabel::RejectedClarity => "Rejected[Clarity]",
            JudgeLabel::RejectedSafety => "Rejected[Safety]",
            JudgeLabel::RejectedRealism => "Rejected[Realism]",
        }
    }
}

impl fmt::Display for JudgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("unrecognized judge label `{0}`")]
pub struct JudgeParseError(pub String);

/// Exact match on one canonical label; only surrounding whitespace is ignored.
impl FromStr for JudgeLabel {
    type Err = JudgeParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == t)
            .ok_or_else(|| JudgeParseError(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeResult {
    pub id: String,
    /// The judge's answer, verbatim.
    pub raw: Option<String>,
    pub label: Option<JudgeLabel>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeReport {
    pub results: Vec<JudgeResult>,
    pub kept: Vec<String>,
    pub failed: Vec<String>,
}

impl JudgeReport {
    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut m: BTreeMap<String, usize> = JudgeLabel::ALL.iter().map(|l| (l.to_string(), 0)).collect();
        m.insert("failed".into(), 0);
        for r in &self.results {
            let key = r.label.map_or_else(|| "failed".to_string(), |l| l.to_string());
            *m.entry(key).or_default() += 1;
        }
        m
    }

    /// The manifest restricted to kept entries.
    pub fn kept_manifest(&self, manifest: &DatasetManifest) -> DatasetManifest {
        let mut out = manifest.clone();
        out.entries.retain(|e| self.kept.contains(&e.id));
        out
    }
}

/// Asks the judge about every image with `prompt` as the instruction. Images
/// whose answer is not a canonical label, or whose call fails, are excluded
/// and listed under `failed`.
pub fn judge_filter(
    manifest: &DatasetManifest,
    judge: &dyn Captioner,
    prompt: &str,
    max_concurrency: usize,
) -> JudgeReport {
    let results = bounded_map(&manifest.entries, max_concurrency, |_, e| {
        let raw = manifest
            .load_image(e)
            .map_err(|err| err.to_string())
            .and_then(|img| judge.caption(&img, Some(prompt), Some(&e.id)).map_err(|err| err.to_string()));
        let (raw, label, error) = match raw {
            Ok(text) => match text.parse::<JudgeLabel>() {
                Ok(l) => (Some(text), Some(l), None),
                Err(err) => (Some(text), None, Some(err.to_string())),
            },
            Err(err) => (None, None, Some(err)),
        };
        if let Some(err) = &error {
            log::warn!("judge: {}: {err}", e.id);
        }
        JudgeResult {
            id: e.id.clone(),
            raw,
            label,
            error,
        }
    });
    let kept = results
        .iter()
        .filter(|r| r.label == Some(JudgeLabel::Acceptable))
        .map(|r| r.id.clone())
        .collect();
    let failed = results.iter().filter(|r| r.label.is_none()).map(|r| r.id.clone()).collect();
    JudgeReport { results, kept, failed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fs(vs: Vec<Vec<f64>>) -> FeatureSet {
        let ids = (0..vs.len()).map(|i| format!("p{i}")).collect();
        FeatureSet::new(ids, vs).unwrap()
    }

    #[test]
    fn assets_are_verbatim() {
        assert!(CURATION_PROMPT.contains("Rejected[Realism]: If the image is stylized, animated, or lacks realism."));
        assert!(CURATION_PROMPT.contains("{image}"));
        assert!(ARTIFACT_PRIOR.starts_with("Physics artifacts"));
    }

    #[test]
    fn label_roundtrip() {
        for l in JudgeLabel::ALL {
            assert_eq!(l.as_str().parse::<JudgeLabel>().unwrap(), l);
            assert_eq!(serde_json::to_string(&l).unwrap(), format!("\"{l}\""));
        }
        for bad in ["acceptable", "Rejected", "Rejected[clarity]", "maybe ok", "", "Acceptable."] {
            assert!(bad.parse::<JudgeLabel>().is_err(), "{bad}");
        }
        assert_eq!(" Acceptable\n".parse::<JudgeLabel>().unwrap(), JudgeLabel::Acceptable);
    }

    #[test]
    fn k1_is_mean() {
        let f = fs(vec![vec![0.0, 0.0], vec![2.0, 4.0], vec![4.0, 2.0]]);
        let r = kmeans_cluster(&f, 1, 9, 100).unwrap();
        assert_eq!(r.centroids, vec![vec![2.0, 2.0]]);
        assert!(r.converged);
    }

    #[test]
    fn bad_k() {
        let f = fs(vec![vec![0.0]]);
        assert_eq!(kmeans_cluster(&f, 2, 0, 10), Err(CurationError::BadK { k: 2, count: 1 }));
        assert!(kmeans_cluster(&f, 0, 0, 10).is_err());
    }

    #[test]
    fn feature_set_checks() {
        assert_eq!(FeatureSet::new(vec![], vec![]), Err(CurationError::Empty));
        assert!(matches!(
            FeatureSet::new(vec!["a".into(), "b".into()], vec![vec![1.0], vec![1.0, 2.0]]),
            Err(CurationError::DimMismatch { .. })
        ));
        assert!(FeatureSet::new(vec!["a".into()], vec![vec![f64::NAN]]).is_err());
    }

    #[test]
    fn sampling_edges() {
        let a = [0, 1, 0, 2, 1, 0];
        assert!(stratified_sample(&a, 0, 1).is_empty());
        assert_eq!(stratified_sample(&a, 10, 1), (0..6).collect::<Vec<_>>());
        assert_eq!(stratified_sample(&a, 2, 5), stratified_sample(&a, 2, 5));
    }

    proptest! {
        #[test]
        fn objective_non_increasing(
            pts in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 3), 2..40),
            k in 1usize..5,
            seed in any::<u64>(),
        ) {
            let k = k.min(pts.len());
            let r = kmeans_cluster(&fs(pts.clone()), k, seed, 100).unwrap();
            for w in r.objective.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
            }
            for (v, &a) in pts.iter().zip(&r.assignments) {
                let best = r.centroids.iter().map(|c| sq_dist(v, c)).fold(f64::INFINITY, f64::min);
                prop_assert!(sq_dist(v, &r.centroids[a]) <= best + 1e-9);
            }
        }

        #[test]
        fn sample_sizes(a in proptest::collection::vec(0usize..6, 0..60), n in 0usize..8, seed in any::<u64>()) {
            let s = stratified_sample(&a, n, seed);
            let mut dedup = s.clone();
            dedup.dedup();
            prop_assert_eq!(&dedup, &s);
            let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
            for &c in &a { *sizes.entry(c).or_default() += 1; }
            for (c, size) in sizes {
                let got = s.iter().filter(|&&i| a[i] == c).count();
                prop_assert_eq!(got, n.min(size));
            }
        }
    }
}

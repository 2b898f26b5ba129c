//! Dataset-level evaluation: detection accuracy, preference-score growth,
//! and batch segmentation / explanation reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotatedImage, BinaryMask, DatasetManifest, Label, RleMask};
use crate::backends::Embedder;
use crate::seg_metrics::{Aggregation, Confusion, SegAccumulator, SegScore};
use crate::text_metrics::{css_score, format_regions, rouge_l, CssScore};

pub const REPORT_SCHEMA_VERSION: &str = "1";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("no records to evaluate")]
    Empty,
    #[error("record {id}: fake_prob {prob} outside [0, 1]")]
    BadProbability { id: String, prob: f64 },
    #[error("pre has {pre} scores, post has {post}")]
    LengthMismatch { pre: usize, post: usize },
    #[error("score {index} is not finite")]
    NonFinite { index: usize },
    #[error("mean pre score is zero; growth is undefined")]
    ZeroBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub id: String,
    pub fake_prob: f64,
    pub label: Label,
    pub group: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub n: usize,
    pub correct: usize,
    /// Percent.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub schema_version: String,
    pub threshold: f64,
    pub overall: GroupAccuracy,
    pub groups: BTreeMap<String, GroupAccuracy>,
}

fn accuracy(n: usize, correct: usize) -> GroupAccuracy {
    GroupAccuracy {
        n,
        correct,
        accuracy: 100.0 * correct as f64 / n as f64,
    }
}

/// Predicts fake iff `fake_prob >= threshold`. Records with an empty group
/// count toward the overall figure only.
pub fn detection_accuracy(records: &[DetectionRecord], threshold: f64) -> Result<DetectionReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut groups: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut correct = 0;
    let mut ungrouped = 0;
    for r in records {
        if !(0.0..=1.0).contains(&r.fake_prob) {
            return Err(EvalError::BadProbability {
                id: r.id.clone(),
                prob: r.fake_prob,
            });
        }
        let predicted = if r.fake_prob >= threshold { Label::Fake } else { Label::Real };
        let hit = usize::from(predicted == r.label);
        correct += hit;
        if r.group.trim().is_empty() {
            ungrouped += 1;
            continue;
        }
        let g = groups.entry(r.group.clone()).or_default();
        g.0 += 1;
        g.1 += hit;
    }
    if ungrouped > 0 {
        log::warn!("{ungrouped} record(s) without a group are omitted from per-group accuracy");
    }
    Ok(DetectionReport {
        schema_version: REPORT_SCHEMA_VERSION.into(),
        threshold,
        overall: accuracy(records.len(), correct),
        groups: groups.into_iter().map(|(k, (n, c))| (k, accuracy(n, c))).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub schema_version: String,
    pub n: usize,
    pub pre_mean: f64,
    pub post_mean: f64,
    /// `(mean(post) - mean(pre)) / mean(pre)`, percent.
    pub growth_ratio_of_means: f64,
    /// Mean of `(post_i - pre_i) / pre_i`, percent, over samples with `pre_i != 0`.
    pub growth_per_sample_mean: Option<f64>,
    /// Indices left out of the per-sample mean because `pre_i == 0`.
    pub excluded: Vec<usize>,
}

pub fn growth_rate(pre: &[f64], post: &[f64]) -> Result<GrowthReport, EvalError> {
    if pre.len() != post.len() {
        return Err(EvalError::LengthMismatch {
            pre: pre.len(),
            post: post.len(),
        });
    }
    if pre.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(index) = pre.iter().chain(post).position(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite { index: index % pre.len() });
    }
    let n = pre.len() as f64;
    let pre_mean = pre.iter().sum::<f64>() / n;
    let post_mean = post.iter().sum::<f64>() / n;
    if pre_mean == 0.0 {
        return Err(EvalError::ZeroBaseline);
    }
    let mut excluded = Vec::new();
    let mut ratios = Vec::new();
    for (i, (&a, &b)) in pre.iter().zip(post).enumerate() {
        if a == 0.0 {
            excluded.push(i);
        } else {
            ratios.push((b - a) / a);
        }
    }
    if !excluded.is_empty() {
        log::warn!("{} sample(s) with a zero pre score excluded from the per-sample growth", excluded.len());
    }
    Ok(GrowthReport {
        schema_version: REPORT_SCHEMA_VERSION.into(),
        n: pre.len(),
        pre_mean,
        post_mean,
        growth_ratio_of_means: 100.0 * (post_mean - pre_mean) / pre_mean,
        growth_per_sample_mean: (!ratios.is_empty()).then(|| 100.0 * ratios.iter().sum::<f64>() / ratios.len() as f64),
        excluded,
    })
}

/// A predicted mask for one manifest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPrediction {
    pub id: String,
    pub mask: RleMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSegScore {
    pub id: String,
    pub content_type: String,
    /// Percent.
    pub score: SegScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegSummary {
    pub n: usize,
    pub r#macro: SegScore,
    pub micro: SegScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegEvalReport {
    pub schema_version: String,
    pub overall: Option<SegSummary>,
    pub by_content_type: BTreeMap<String, SegSummary>,
    pub per_image: Vec<ImageSegScore>,
    /// Entries with no prediction, or whose prediction could not be scored.
    pub errors: Vec<String>,
}

fn summary(acc: &SegAccumulator) -> Option<SegSummary> {
    Some(SegSummary {
        n: acc.len(),
        r#macro: acc.aggregate(Aggregation::Macro)?.scaled(),
        micro: acc.aggregate(Aggregation::Micro)?.scaled(),
    })
}

/// Scores predicted masks against manifest ground truth. Scores are percent.
pub fn segmentation_report(manifest: &DatasetManifest, predictions: &BTreeMap<String, BinaryMask>) -> SegEvalReport {
    let mut overall = SegAccumulator::default();
    let mut by_type: BTreeMap<String, SegAccumulator> = BTreeMap::new();
    let mut per_image = Vec::new();
    let mut errors = Vec::new();
    for e in &manifest.entries {
        let Some(pred) = predictions.get(&e.id) else {
            errors.push(format!("{}: no prediction", e.id));
            continue;
        };
        let c = match e.ground_truth_mask().map_err(|err| err.to_string()).and_then(|gt| {
            Confusion::between(pred, &gt).map_err(|err| err.to_string())
        }) {
            Ok(c) => c,
            Err(err) => {
                errors.push(format!("{}: {err}", e.id));
                continue;
            }
        };
        overall.push(c);
        by_type.entry(e.content_type.as_str().to_owned()).or_default().push(c);
        per_image.push(ImageSegScore {
            id: e.id.clone(),
            content_type: e.content_type.as_str().to_owned(),
            score: c.scores().scaled(),
        });
    }
    SegEvalReport {
        schema_version: REPORT_SCHEMA_VERSION.into(),
        overall: summary(&overall),
        by_content_type: by_type.iter().filter_map(|(k, a)| Some((k.clone(), summary(a)?))).collect(),
        per_image,
        errors,
    }
}

/// The reference explanation for an entry in per-region layout.
pub fn reference_explanation(entry: &AnnotatedImage) -> String {
    format_regions(entry.regions.iter().map(|r| (r.location.as_str(), r.explanation.as_str())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextSample {
    pub id: String,
    pub content_type: String,
    pub rouge_l: f64,
    pub css: Option<CssScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextMeans {
    pub n: usize,
    pub rouge_l: f64,
    pub css: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEvalReport {
    pub schema_version: String,
    pub overall: Option<TextMeans>,
    pub by_content_type: BTreeMap<String, TextMeans>,
    pub samples: Vec<TextSample>,
    pub errors: Vec<String>,
}

fn means(samples: &[&TextSample]) -> Option<TextMeans> {
    if samples.is_empty() {
        return None;
    }
    let n = samples.len() as f64;
    let css: Option<Vec<f64>> = samples.iter().map(|s| s.css.map(|c| c.score)).collect();
    Some(TextMeans {
        n: samples.len(),
        rouge_l: samples.iter().map(|s| s.rouge_l).sum::<f64>() / n,
        css: css.map(|v| v.iter().sum::<f64>() / n),
    })
}

/// Scores candidate explanations against each entry's reference. Real
/// images and entries without a candidate are skipped. CSS is computed only
/// when an embedder is given.
pub fn text_report(
    manifest: &DatasetManifest,
    candidates: &BTreeMap<String, String>,
    embedder: Option<&dyn Embedder>,
) -> TextEvalReport {
    let mut samples = Vec::new();
    let mut errors = Vec::new();
    for e in manifest.entries.iter().filter(|e| e.label == Label::Fake) {
        let Some(cand) = candidates.get(&e.id) else {
            errors.push(format!("{}: no candidate explanation", e.id));
            continue;
        };
        let reference = reference_explanation(e);
        let css = match embedder.map(|emb| css_score(cand, &reference, emb)).transpose() {
            Ok(c) => c,
            Err(err) => {
                errors.push(format!("{}: {err}", e.id));
                continue;
            }
        };
        samples.push(TextSample {
            id: e.id.clone(),
            content_type: e.content_type.as_str().to_owned(),
            rouge_l: rouge_l(cand, &reference),
            css,
        });
    }
    let mut groups: BTreeMap<String, Vec<&TextSample>> = BTreeMap::new();
    for s in &samples {
        groups.entry(s.content_type.clone()).or_default().push(s);
    }
    TextEvalReport {
        schema_version: REPORT_SCHEMA_VERSION.into(),
        overall: means(&samples.iter().collect::<Vec<_>>()),
        by_content_type: groups.iter().filter_map(|(k, v)| Some((k.clone(), means(v)?))).collect(),
        samples,
        errors,
    }
}

/// Detection records from analyzer probabilities keyed by id. The group is
/// the entry's generator, or its content type when no generator is recorded.
pub fn detection_records(manifest: &DatasetManifest, probs: &BTreeMap<String, f64>) -> Vec<DetectionRecord> {
    manifest
        .entries
        .iter()
        .filter_map(|e| {
            let p = *probs.get(&e.id)?;
            Some(DetectionRecord {
                id: e.id.clone(),
                fake_prob: p,
                label: e.label,
                group: e.generator.clone().unwrap_or_else(|| e.content_type.as_str().to_owned()),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(p: f64, label: Label, group: &str) -> DetectionRecord {
        DetectionRecord {
            id: "x".into(),
            fake_prob: p,
            label,
            group: group.into(),
        }
    }

    #[test]
    fn tie_counts_as_fake() {
        let r = detection_accuracy(&[rec(0.5, Label::Fake, "sd"), rec(0.5, Label::Fake, "mj")], 0.5).unwrap();
        assert_eq!(r.overall.accuracy, 100.0);
        assert_eq!(r.groups["sd"].accuracy, 100.0);
    }

    #[test]
    fn detection_errors() {
        assert_eq!(detection_accuracy(&[], 0.5), Err(EvalError::Empty));
        assert!(matches!(
            detection_accuracy(&[rec(1.5, Label::Fake, "g")], 0.5),
            Err(EvalError::BadProbability { .. })
        ));
    }

    #[test]
    fn ungrouped_counted_overall_only() {
        let r = detection_accuracy(&[rec(0.9, Label::Fake, ""), rec(0.1, Label::Fake, "g")], 0.5).unwrap();
        assert_eq!(r.overall.correct, 1);
        assert_eq!(r.groups.len(), 1);
        assert_eq!(r.groups["g"].accuracy, 0.0);
    }

    #[test]
    fn growth_basics() {
        let r = growth_rate(&[10.0, 20.0], &[10.0, 20.0]).unwrap();
        assert_eq!(r.growth_ratio_of_means, 0.0);
        assert_eq!(r.growth_per_sample_mean, Some(0.0));
        let r = growth_rate(&[0.0, 10.0], &[5.0, 11.0]).unwrap();
        assert_eq!(r.excluded, vec![0]);
        assert!((r.growth_per_sample_mean.unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(growth_rate(&[1.0], &[]), Err(EvalError::LengthMismatch { pre: 1, post: 0 }));
        assert_eq!(growth_rate(&[0.0], &[1.0]), Err(EvalError::ZeroBaseline));
    }

    proptest! {
        #[test]
        fn accuracy_invariant_under_monotone_map(
            probs in proptest::collection::vec(0.0f64..=1.0, 1..60),
            labels in proptest::collection::vec(any::<bool>(), 60),
        ) {
            let recs: Vec<_> = probs.iter().zip(&labels)
                .map(|(&p, &f)| rec(p, if f { Label::Fake } else { Label::Real }, "g"))
                .collect();
            // strictly increasing on [0, 1], fixes 0.5
            let warped: Vec<_> = recs.iter().map(|r| DetectionRecord { fake_prob: r.fake_prob.powf(3.0) / (r.fake_prob.powf(3.0) + (1.0 - r.fake_prob).powf(3.0)), ..r.clone() }).collect();
            let a = detection_accuracy(&recs, 0.5).unwrap();
            let b = detection_accuracy(&warped, 0.5).unwrap();
            prop_assert_eq!(a.overall.correct, b.overall.correct);
        }

        #[test]
        fn ratio_of_means_scale_invariant(
            pairs in proptest::collection::vec((1.0f64..100.0, 1.0f64..100.0), 1..30),
            k in 0.01f64..100.0,
        ) {
            let (pre, post): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let a = growth_rate(&pre, &post).unwrap();
            let scale = |v: &[f64]| v.iter().map(|x| x * k).collect::<Vec<_>>();
            let b = growth_rate(&scale(&pre), &scale(&post)).unwrap();
            prop_assert!((a.growth_ratio_of_means - b.growth_ratio_of_means).abs() < 1e-9);
        }
    }
}

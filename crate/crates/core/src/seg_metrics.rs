//! Pixel-level localization scores and the training-loss formulas.
//!
//! Scores are ratios in `[0, 1]`; reports multiply by 100.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{BinaryMask, Label};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("dimension mismatch: prediction {pred:?} vs ground truth {gt:?}")]
    DimensionMismatch { pred: (u32, u32), gt: (u32, u32) },
    #[error("probability {value} at index {index} is outside [0, 1]")]
    ProbabilityOutOfRange { index: usize, value: f64 },
    #[error("distribution {index} sums to {sum}, expected 1")]
    NotNormalized { index: usize, sum: f64 },
    #[error("token index {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("{dists} token distributions but {tokens} target tokens")]
    TokenCountMismatch { dists: usize, tokens: usize },
    #[error("negative loss weight")]
    NegativeWeight,
}

/// Confusion counts over the foreground class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn between(pred: &BinaryMask, gt: &BinaryMask) -> Result<Self, MetricError> {
        if pred.dims() != gt.dims() {
            return Err(MetricError::DimensionMismatch {
                pred: pred.dims(),
                gt: gt.dims(),
            });
        }
        let mut c = Confusion::default();
        for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn scores(&self) -> SegScore {
        let iou_fg = ratio_or_one(self.tp, self.tp + self.fp + self.fn_);
        let iou_bg = ratio_or_one(self.tn, self.tn + self.fp + self.fn_);
        let f1 = ratio_or_one(2 * self.tp, 2 * self.tp + self.fp + self.fn_);
        SegScore {
            iou_fg,
            iou_bg,
            miou: (iou_fg + iou_bg) / 2.0,
            f1,
        }
    }
}

impl std::ops::AddAssign for Confusion {
    fn add_assign(&mut self, rhs: Self) {
        self.tp += rhs.tp;
        self.fp += rhs.fp;
        self.fn_ += rhs.fn_;
        self.tn += rhs.tn;
    }
}

// 0/0 counts as a perfect match.
fn ratio_or_one(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegScore {
    pub iou_fg: f64,
    pub iou_bg: f64,
    pub miou: f64,
    pub f1: f64,
}

impl SegScore {
    pub fn scaled(&self) -> SegScore {
        SegScore {
            iou_fg: self.iou_fg * 100.0,
            iou_bg: self.iou_bg * 100.0,
            miou: self.miou * 100.0,
            f1: self.f1 * 100.0,
        }
    }
}

pub fn segmentation_scores(pred: &BinaryMask, gt: &BinaryMask) -> Result<SegScore, MetricError> {
    Ok(Confusion::between(pred, gt)?.scores())
}

/// Dataset-level aggregation of per-image results.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Mean of per-image scores.
    #[default]
    Macro,
    /// Scores of the summed confusion counts.
    Micro,
}

/// Accumulates per-image confusion counts and reports both aggregations.
#[derive(Debug, Clone, Default)]
pub struct SegAccumulator {
    per_image: Vec<SegScore>,
    total: Confusion,
}

impl SegAccumulator {
    pub fn push(&mut self, c: Confusion) {
        self.per_image.push(c.scores());
        self.total += c;
    }

    pub fn len(&self) -> usize {
        self.per_image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_image.is_empty()
    }

    pub fn aggregate(&self, mode: Aggregation) -> Option<SegScore> {
        if self.per_image.is_empty() {
            return None;
        }
        Some(match mode {
            Aggregation::Micro => self.total.scores(),
            Aggregation::Macro => {
                let n = self.per_image.len() as f64;
                let mean = |f: fn(&SegScore) -> f64| self.per_image.iter().map(f).sum::<f64>() / n;
                SegScore {
                    iou_fg: mean(|s| s.iou_fg),
                    iou_bg: mean(|s| s.iou_bg),
                    miou: mean(|s| s.miou),
                    f1: mean(|s| s.f1),
                }
            }
        })
    }
}

/// Relative weights of the three stage-one loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_bce: f64,
    pub lambda_dice: f64,
    pub lambda_ce: f64,
}

impl Default for LossWeights {
    /// ce = 1.0, dice = 0.2, bce = 0.4.
    fn default() -> Self {
        Self {
            lambda_bce: 0.4,
            lambda_dice: 0.2,
            lambda_ce: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bce: f64,
    pub dice: f64,
    pub ce: f64,
    pub total: f64,
}

/// Floor for log arguments.
pub const LOG_EPS: f64 = 1e-12;
/// Additive smoothing in both numerator and denominator of soft Dice.
pub const DICE_SMOOTH: f64 = 1e-6;
/// Allowed deviation of a probability vector's sum from 1.
pub const NORMALIZATION_TOL: f64 = 1e-6;

fn check_probability(index: usize, value: f64) -> Result<(), MetricError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(MetricError::ProbabilityOutOfRange { index, value })
    }
}

fn check_distribution(index: usize, dist: &[f64]) -> Result<(), MetricError> {
    for (i, &p) in dist.iter().enumerate() {
        check_probability(i, p)?;
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(MetricError::NotNormalized { index, sum });
    }
    Ok(())
}

/// Mean per-pixel binary cross-entropy of soft predictions against a hard mask.
pub fn bce_loss(probs: &[f64], gt: &BinaryMask) -> Result<f64, MetricError> {
    if probs.len() != gt.bits().len() {
        return Err(MetricError::DimensionMismatch {
            pred: (probs.len() as u32, 1),
            gt: gt.dims(),
        });
    }
    let mut sum = 0.0;
    for (i, (&p, &g)) in probs.iter().zip(gt.bits()).enumerate() {
        check_probability(i, p)?;
        sum -= if g { p.max(LOG_EPS).ln() } else { (1.0 - p).max(LOG_EPS).ln() };
    }
    Ok(sum / probs.len() as f64)
}

/// `1 - (2 sum(p g) + s) / (sum(p) + sum(g) + s)` with `s = DICE_SMOOTH`.
pub fn dice_loss(probs: &[f64], gt: &BinaryMask) -> Result<f64, MetricError> {
    if probs.len() != gt.bits().len() {
        return Err(MetricError::DimensionMismatch {
            pred: (probs.len() as u32, 1),
            gt: gt.dims(),
        });
    }
    let (mut inter, mut psum, mut gsum) = (0.0, 0.0, 0.0);
    for (i, (&p, &g)) in probs.iter().zip(gt.bits()).enumerate() {
        check_probability(i, p)?;
        psum += p;
        if g {
            inter += p;
            gsum += 1.0;
        }
    }
    Ok(1.0 - (2.0 * inter + DICE_SMOOTH) / (psum + gsum + DICE_SMOOTH))
}

/// Mean negative log-probability of the target tokens. An empty sequence
/// yields 0 (with a warning).
pub fn token_ce_loss(dists: &[Vec<f64>], targets: &[usize]) -> Result<f64, MetricError> {
    if dists.len() != targets.len() {
        return Err(MetricError::TokenCountMismatch {
            dists: dists.len(),
            tokens: targets.len(),
        });
    }
    if dists.is_empty() {
        log::warn!("empty token sequence: cross-entropy term defined as 0");
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (i, (dist, &t)) in dists.iter().zip(targets).enumerate() {
        check_distribution(i, dist)?;
        let p = *dist.get(t).ok_or(MetricError::TokenOutOfRange {
            token: t,
            vocab: dist.len(),
        })?;
        sum -= p.max(LOG_EPS).ln();
    }
    Ok(sum / dists.len() as f64)
}

/// Stage-one objective: weighted BCE + Dice on the mask plus token CE on the explanation.
pub fn stage1_loss(
    mask_probs: &[f64],
    gt_mask: &BinaryMask,
    token_dists: &[Vec<f64>],
    gt_tokens: &[usize],
    w: &LossWeights,
) -> Result<LossBreakdown, MetricError> {
    if w.lambda_bce < 0.0 || w.lambda_dice < 0.0 || w.lambda_ce < 0.0 {
        return Err(MetricError::NegativeWeight);
    }
    let bce = bce_loss(mask_probs, gt_mask)?;
    let dice = dice_loss(mask_probs, gt_mask)?;
    let ce = token_ce_loss(token_dists, gt_tokens)?;
    Ok(LossBreakdown {
        bce,
        dice,
        ce,
        total: w.lambda_bce * bce + w.lambda_dice * dice + w.lambda_ce * ce,
    })
}

/// Stage-two objective: `-ln p(gt)` over the (real, fake) distribution.
pub fn stage2_loss(pred: [f64; 2], gt: Label) -> Result<f64, MetricError> {
    check_distribution(0, &pred)?;
    let p = match gt {
        Label::Real => pred[0],
        Label::Fake => pred[1],
    };
    if p < LOG_EPS {
        log::warn!("probability of ground-truth class {p} clamped to {LOG_EPS}");
    }
    Ok(-p.max(LOG_EPS).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn mask(w: u32, h: u32, bits: &[u8]) -> BinaryMask {
        BinaryMask::from_bits(w, h, bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn identity_is_perfect() {
        let m = mask(2, 2, &[1, 0, 0, 1]);
        let s = segmentation_scores(&m, &m).unwrap();
        assert_eq!(s, SegScore { iou_fg: 1.0, iou_bg: 1.0, miou: 1.0, f1: 1.0 });
    }

    #[test]
    fn opposite_columns_score_zero() {
        let pred = mask(2, 2, &[1, 0, 1, 0]);
        let gt = mask(2, 2, &[0, 1, 0, 1]);
        let s = segmentation_scores(&pred, &gt).unwrap();
        assert_eq!(s, SegScore { iou_fg: 0.0, iou_bg: 0.0, miou: 0.0, f1: 0.0 });
    }

    #[test]
    fn both_empty_is_perfect() {
        let m = BinaryMask::new(3, 3).unwrap();
        assert_eq!(segmentation_scores(&m, &m).unwrap().f1, 1.0);
        let full = BinaryMask::filled(3, 3).unwrap();
        let s = segmentation_scores(&full, &full).unwrap();
        assert_eq!((s.iou_bg, s.miou), (1.0, 1.0));
    }

    #[test]
    fn dimension_mismatch() {
        let a = BinaryMask::new(2, 2).unwrap();
        let b = BinaryMask::new(2, 3).unwrap();
        assert!(matches!(segmentation_scores(&a, &b), Err(MetricError::DimensionMismatch { .. })));
    }

    #[test]
    fn micro_vs_macro() {
        let mut acc = SegAccumulator::default();
        // image 1: perfect small object; image 2: complete miss.
        acc.push(Confusion { tp: 1, fp: 0, fn_: 0, tn: 3 });
        acc.push(Confusion { tp: 0, fp: 0, fn_: 3, tn: 1 });
        let macro_ = acc.aggregate(Aggregation::Macro).unwrap();
        let micro = acc.aggregate(Aggregation::Micro).unwrap();
        assert_eq!(macro_.f1, 0.5);
        assert_eq!(micro.f1, 2.0 / (2.0 + 3.0));
        assert!(SegAccumulator::default().aggregate(Aggregation::Macro).is_none());
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let gt = mask(2, 2, &[1, 0, 0, 1]);
        let probs = [1.0, 0.0, 0.0, 1.0];
        let dists = vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]];
        let l = stage1_loss(&probs, &gt, &dists, &[1, 0], &LossWeights::default()).unwrap();
        assert_eq!(l, LossBreakdown { bce: 0.0, dice: 0.0, ce: 0.0, total: 0.0 });
    }

    #[test]
    fn uniform_bce_is_ln2() {
        let gt = mask(3, 1, &[1, 0, 1]);
        assert!((bce_loss(&[0.5; 3], &gt).unwrap() - LN_2).abs() < 1e-15);
        assert!((stage2_loss([0.5, 0.5], Label::Fake).unwrap() - LN_2).abs() < 1e-15);
        assert!((token_ce_loss(&[vec![0.5, 0.5]], &[1]).unwrap() - LN_2).abs() < 1e-15);
    }

    #[test]
    fn stage2_edges() {
        assert_eq!(stage2_loss([1.0, 0.0], Label::Real).unwrap(), 0.0);
        assert!((stage2_loss([1.0, 0.0], Label::Fake).unwrap() - (-LOG_EPS.ln())).abs() < 1e-9);
        assert!(matches!(stage2_loss([0.7, 0.7], Label::Real), Err(MetricError::NotNormalized { .. })));
    }

    #[test]
    fn loss_errors() {
        let gt = mask(2, 1, &[1, 0]);
        assert!(matches!(
            bce_loss(&[1.2, 0.0], &gt),
            Err(MetricError::ProbabilityOutOfRange { index: 0, .. })
        ));
        let w = LossWeights { lambda_ce: 1.0, ..Default::default() };
        assert_eq!(stage1_loss(&[1.0, 0.0], &gt, &[], &[], &w).unwrap().ce, 0.0);
    }

    fn arb_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
        (1u32..10, 1u32..10).prop_flat_map(|(w, h)| {
            let n = (w * h) as usize;
            (proptest::collection::vec(any::<bool>(), n), proptest::collection::vec(any::<bool>(), n)).prop_map(
                move |(a, b)| (BinaryMask::from_bits(w, h, a).unwrap(), BinaryMask::from_bits(w, h, b).unwrap()),
            )
        })
    }

    proptest! {
        #[test]
        fn symmetric((a, b) in arb_pair()) {
            prop_assert_eq!(segmentation_scores(&a, &b).unwrap(), segmentation_scores(&b, &a).unwrap());
        }

        #[test]
        fn complement_duality((a, b) in arb_pair()) {
            let s = segmentation_scores(&a, &b).unwrap();
            let c = segmentation_scores(&a.complement(), &b.complement()).unwrap();
            prop_assert_eq!(s.iou_fg, c.iou_bg);
            prop_assert_eq!(s.iou_bg, c.iou_fg);
            prop_assert!((s.miou - c.miou).abs() < 1e-15);
        }

        #[test]
        fn scores_in_unit_interval((a, b) in arb_pair()) {
            let s = segmentation_scores(&a, &b).unwrap();
            for v in [s.iou_fg, s.iou_bg, s.miou, s.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert_eq!(s.miou, (s.iou_fg + s.iou_bg) / 2.0);
        }

        #[test]
        fn dice_in_unit_interval(
            (probs, gt) in (1usize..20).prop_flat_map(|n| (
                proptest::collection::vec(0.0f64..=1.0, n),
                proptest::collection::vec(any::<bool>(), n),
            ))
        ) {
            let gt = BinaryMask::from_bits(gt.len() as u32, 1, gt).unwrap();
            let d = dice_loss(&probs, &gt).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
        }

        #[test]
        fn total_linear_in_weights(lb in 0.0f64..3.0, ld in 0.0f64..3.0, lc in 0.0f64..3.0, k in 0.0f64..4.0) {
            let gt = mask(2, 2, &[1, 0, 1, 1]);
            let probs = [0.9, 0.2, 0.4, 0.7];
            let dists = vec![vec![0.2, 0.3, 0.5]];
            let w = LossWeights { lambda_bce: lb, lambda_dice: ld, lambda_ce: lc };
            let base = stage1_loss(&probs, &gt, &dists, &[2], &w).unwrap();
            let w2 = LossWeights { lambda_bce: lb * k, ..w };
            let scaled = stage1_loss(&probs, &gt, &dists, &[2], &w2).unwrap();
            prop_assert!((scaled.total - (base.total + (k - 1.0) * lb * base.bce)).abs() < 1e-12);
        }
    }
}

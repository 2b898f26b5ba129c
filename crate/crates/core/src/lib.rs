//! Non-neural machinery for artifact-aware synthetic image forensics:
//! artifact annotations and masks, segmentation and text metrics, the
//! model-backend protocol with mocks, refinement loops, robustness sweeps
//! and data curation.

pub mod annotation;
pub mod backends;
pub mod curation;
pub mod eval;
pub mod fixtures;
pub mod parallel;
pub mod perturb;
pub mod refine;
pub mod rng;
pub mod seg_metrics;
pub mod text_metrics;

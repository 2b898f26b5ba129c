//! Pluggable model backends.
//!
//! Every model the pipelines talk to sits behind one of seven role traits.
//! Implementations are either HTTP clients speaking the JSON protocol in
//! [`wire`] or the deterministic mocks in [`mock`].

pub mod config;
pub mod conformance;
pub mod http;
pub mod mock;
pub mod server;
pub mod wire;

use std::fmt;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{ArtifactType, BinaryMask, Label, RleMask};

pub use config::{BackendConfig, EndpointConfig};
pub use mock::{build_mock_suite, MockConfig};

/// Reports with `fake_prob` at or above this are labelled fake.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Analyzer,
    Generator,
    Inpainter,
    Reviser,
    Captioner,
    Embedder,
    Scorer,
}

impl Role {
    pub const ALL: [Role; 7] = [
        Role::Analyzer,
        Role::Generator,
        Role::Inpainter,
        Role::Reviser,
        Role::Captioner,
        Role::Embedder,
        Role::Scorer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Analyzer => "analyzer",
            Role::Generator => "generator",
            Role::Inpainter => "inpainter",
            Role::Reviser => "reviser",
            Role::Captioner => "captioner",
            Role::Embedder => "embedder",
            Role::Scorer => "scorer",
        }
    }

    /// HTTP path of the role's endpoint.
    pub fn path(self) -> &'static str {
        match self {
            Role::Analyzer => "/analyze",
            Role::Generator => "/generate",
            Role::Inpainter => "/inpaint",
            Role::Reviser => "/revise",
            Role::Captioner => "/caption",
            Role::Embedder => "/embed",
            Role::Scorer => "/score",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    /// The endpoint could not be reached, timed out, or answered non-2xx.
    #[error("transport error from {endpoint}: {message}")]
    Transport { endpoint: String, message: String },
    /// The endpoint answered, but the payload violates the protocol.
    #[error("protocol error from {endpoint}: {message}")]
    Protocol { endpoint: String, message: String },
    #[error("backend configuration error: {0}")]
    Config(String),
    /// A mock refused the request (e.g. an id it has no ground truth for).
    #[error("{endpoint} failed: {message}")]
    Failed { endpoint: String, message: String },
}

impl BackendError {
    pub fn protocol(endpoint: impl fmt::Display, message: impl Into<String>) -> Self {
        Self::Protocol {
            endpoint: endpoint.to_string(),
            message: message.into(),
        }
    }

    pub fn failed(endpoint: impl fmt::Display, message: impl Into<String>) -> Self {
        Self::Failed {
            endpoint: endpoint.to_string(),
            message: message.into(),
        }
    }
}

/// One localized artifact in an analyzer answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRegion {
    pub location: String,
    pub mask: RleMask,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_type: Option<ArtifactType>,
    pub explanation: String,
}

/// An analyzer's answer for one image: detection probability, free-text
/// explanation and localized regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerReport {
    pub label: Label,
    pub fake_prob: f64,
    pub explanation: String,
    #[serde(default)]
    pub regions: Vec<ReportRegion>,
}

impl AnalyzerReport {
    pub fn from_regions(regions: Vec<ReportRegion>, fake_prob: f64) -> Self {
        let explanation = regions
            .iter()
            .map(|r| r.explanation.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        Self {
            label: label_for(fake_prob),
            fake_prob,
            explanation,
            regions,
        }
    }

    /// Checks label/probability consistency and that every mask decodes to `width` x `height`.
    pub fn validate(&self, width: u32, height: u32) -> Result<Vec<BinaryMask>, String> {
        if !(0.0..=1.0).contains(&self.fake_prob) {
            return Err(format!("fake_prob {} outside [0, 1]", self.fake_prob));
        }
        if self.label != label_for(self.fake_prob) {
            return Err(format!(
                "label {} inconsistent with fake_prob {} (threshold {DECISION_THRESHOLD})",
                self.label, self.fake_prob
            ));
        }
        self.regions
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let m = r.mask.decode().map_err(|e| format!("regions[{i}].mask: {e}"))?;
                if m.dims() != (width, height) {
                    return Err(format!(
                        "regions[{i}].mask is {}x{}, image is {width}x{height}",
                        m.width(),
                        m.height()
                    ));
                }
                Ok(m)
            })
            .collect()
    }

    /// Union of all region masks.
    pub fn union_mask(&self, width: u32, height: u32) -> Result<BinaryMask, String> {
        let masks = self.validate(width, height)?;
        BinaryMask::union(width, height, &masks).map_err(|e| e.to_string())
    }
}

pub fn label_for(fake_prob: f64) -> Label {
    if fake_prob >= DECISION_THRESHOLD {
        Label::Fake
    } else {
        Label::Real
    }
}

/// The detector/explainer/localizer.
pub trait Analyzer: Send + Sync {
    fn analyze(&self, image: &RgbImage, id: Option<&str>) -> Result<AnalyzerReport, BackendError>;
}

/// Text-to-image regeneration.
pub trait Generator: Send + Sync {
    fn generate(
        &self,
        prompt: &str,
        width: u32,
        height: u32,
        seed: u64,
        id: Option<&str>,
    ) -> Result<RgbImage, BackendError>;
}

/// Mask-conditioned inpainting. Returns a full image; only masked pixels are used.
pub trait Inpainter: Send + Sync {
    fn inpaint(
        &self,
        image: &RgbImage,
        mask: &BinaryMask,
        explanation: &str,
        id: Option<&str>,
    ) -> Result<RgbImage, BackendError>;
}

/// Prompt revision from accumulated artifact explanations.
pub trait Reviser: Send + Sync {
    fn revise(&self, prompt: &str, memory: &[String]) -> Result<String, BackendError>;
}

/// Image-to-text. With an `instruction` it doubles as a vision-language judge.
pub trait Captioner: Send + Sync {
    fn caption(&self, image: &RgbImage, instruction: Option<&str>, id: Option<&str>) -> Result<String, BackendError>;
}

pub trait Embedder: Send + Sync {
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, BackendError>;
    fn embed_image(&self, image: &RgbImage) -> Result<Vec<f64>, BackendError>;
}

/// Image preference / quality score.
pub trait Scorer: Send + Sync {
    fn score(&self, image: &RgbImage, prompt: Option<&str>, id: Option<&str>) -> Result<f64, BackendError>;
}

/// The seven endpoints. Pipelines ask for the subset they need and fail at
/// startup when one is missing.
#[derive(Clone, Default)]
pub struct BackendSuite {
    pub analyzer: Option<Arc<dyn Analyzer>>,
    pub generator: Option<Arc<dyn Generator>>,
    pub inpainter: Option<Arc<dyn Inpainter>>,
    pub reviser: Option<Arc<dyn Reviser>>,
    pub captioner: Option<Arc<dyn Captioner>>,
    pub embedder: Option<Arc<dyn Embedder>>,
    pub scorer: Option<Arc<dyn Scorer>>,
}

impl fmt::Debug for BackendSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendSuite")
            .field("configured", &self.configured())
            .finish()
    }
}

fn missing(role: Role) -> BackendError {
    BackendError::Config(format!("missing required endpoint: {role}"))
}

impl BackendSuite {
    pub fn configured(&self) -> Vec<Role> {
        let present = [
            self.analyzer.is_some(),
            self.generator.is_some(),
            self.inpainter.is_some(),
            self.reviser.is_some(),
            self.captioner.is_some(),
            self.embedder.is_some(),
            self.scorer.is_some(),
        ];
        Role::ALL.into_iter().zip(present).filter(|(_, p)| *p).map(|(r, _)| r).collect()
    }

    pub fn analyzer(&self) -> Result<Arc<dyn Analyzer>, BackendError> {
        self.analyzer.clone().ok_or_else(|| missing(Role::Analyzer))
    }

    pub fn generator(&self) -> Result<Arc<dyn Generator>, BackendError> {
        self.generator.clone().ok_or_else(|| missing(Role::Generator))
    }

    pub fn inpainter(&self) -> Result<Arc<dyn Inpainter>, BackendError> {
        self.inpainter.clone().ok_or_else(|| missing(Role::Inpainter))
    }

    pub fn reviser(&self) -> Result<Arc<dyn Reviser>, BackendError> {
        self.reviser.clone().ok_or_else(|| missing(Role::Reviser))
    }

    pub fn captioner(&self) -> Result<Arc<dyn Captioner>, BackendError> {
        self.captioner.clone().ok_or_else(|| missing(Role::Captioner))
    }

    pub fn embedder(&self) -> Result<Arc<dyn Embedder>, BackendError> {
        self.embedder.clone().ok_or_else(|| missing(Role::Embedder))
    }

    pub fn scorer(&self) -> Result<Arc<dyn Scorer>, BackendError> {
        self.scorer.clone().ok_or_else(|| missing(Role::Scorer))
    }

    /// Rejects the suite unless every role in `roles` is configured.
    pub fn require(&self, roles: &[Role]) -> Result<(), BackendError> {
        let have = self.configured();
        match roles.iter().find(|r| !have.contains(r)) {
            Some(&r) => Err(missing(r)),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_validation() {
        let mask = BinaryMask::filled(2, 2).unwrap().to_rle();
        let region = ReportRegion {
            location: "sky".into(),
            mask,
            artifact_type: None,
            explanation: "two suns".into(),
        };
        let r = AnalyzerReport::from_regions(vec![region], 0.5);
        assert_eq!(r.label, Label::Fake);
        assert_eq!(r.validate(2, 2).unwrap().len(), 1);
        assert!(r.validate(3, 2).is_err());
        let mut bad = r.clone();
        bad.label = Label::Real;
        assert!(bad.validate(2, 2).unwrap_err().contains("inconsistent"));
    }

    #[test]
    fn empty_suite_names_missing_role() {
        let s = BackendSuite::default();
        let err = s.require(&[Role::Analyzer, Role::Inpainter]).unwrap_err();
        assert_eq!(err, BackendError::Config("missing required endpoint: analyzer".into()));
    }
}

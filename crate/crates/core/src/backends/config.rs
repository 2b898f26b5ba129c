//! Backend configuration file.
//!
//! ```json
//! {
//!   "endpoints": {
//!     "analyzer": { "url": "http://127.0.0.1:8700", "timeout_ms": 60000 },
//!     "inpainter": { "mock": "perfect" }
//!   },
//!   "mock": { "seed": 3, "perturb_radius": 1 }
//! }
//! ```
//!
//! Roles that are not listed default to their mock. `FORGELINE_<ROLE>_URL`
//! environment variables replace a role's endpoint with an HTTP one.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::http::{HttpBackend, RetryPolicy};
use super::mock;
use super::*;
use crate::annotation::DatasetManifest;

fn default_timeout_ms() -> u64 {
    60_000
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum EndpointConfig {
    Http {
        url: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_retries")]
        retries: u32,
        #[serde(default = "default_backoff_ms")]
        backoff_ms: u64,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
    /// `"mock"` selects the role's mock as set up by the `mock` section; a
    /// kind name (`"perfect"`, `"constant_fill"`, `"area"`, ...) overrides it.
    Mock { mock: String },
    Disabled { disabled: bool },
}

impl EndpointConfig {
    pub fn http(url: &str) -> Self {
        Self::Http {
            url: url.to_owned(),
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            max_in_flight: default_in_flight(),
        }
    }

    pub fn mock() -> Self {
        Self::Mock { mock: "mock".into() }
    }

    pub fn describe(&self) -> String {
        match self {
            Self::Http { url, .. } => url.clone(),
            Self::Mock { mock } => format!("mock:{mock}"),
            Self::Disabled { .. } => "disabled".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub endpoints: BTreeMap<Role, EndpointConfig>,
    pub mock: MockConfig,
}

pub fn env_var_for(role: Role) -> String {
    format!("FORGELINE_{}_URL", role.as_str().to_uppercase())
}

impl BackendConfig {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))
    }

    pub fn endpoint(&self, role: Role) -> EndpointConfig {
        self.endpoints.get(&role).cloned().unwrap_or_else(EndpointConfig::mock)
    }

    /// Applies `FORGELINE_<ROLE>_URL` overrides read through `lookup`.
    pub fn apply_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        for role in Role::ALL {
            if let Some(url) = lookup(&env_var_for(role)).filter(|u| !u.is_empty()) {
                let ep = match self.endpoints.get(&role) {
                    Some(EndpointConfig::Http {
                        timeout_ms,
                        retries,
                        backoff_ms,
                        max_in_flight,
                        ..
                    }) => EndpointConfig::Http {
                        url,
                        timeout_ms: *timeout_ms,
                        retries: *retries,
                        backoff_ms: *backoff_ms,
                        max_in_flight: *max_in_flight,
                    },
                    _ => EndpointConfig::http(&url),
                };
                self.endpoints.insert(role, ep);
            }
        }
    }

    pub fn apply_env(&mut self) {
        self.apply_overrides(|k| std::env::var(k).ok());
    }

    /// Instantiates every endpoint. Mocks read ground truth from `manifest`.
    pub fn build(&self, manifest: &DatasetManifest) -> Result<BackendSuite, BackendError> {
        let mut mock_cfg = self.mock.clone();
        for role in [Role::Inpainter, Role::Scorer, Role::Generator] {
            let EndpointConfig::Mock { mock } = self.endpoint(role) else {
                continue;
            };
            if mock == "mock" {
                continue;
            }
            let quoted = serde_json::Value::String(mock.clone());
            let bad = |_| BackendError::Config(format!("unknown {role} mock kind `{mock}`"));
            match role {
                Role::Inpainter => mock_cfg.inpainter_kind = serde_json::from_value(quoted).map_err(bad)?,
                Role::Scorer => mock_cfg.scorer_kind = serde_json::from_value(quoted).map_err(bad)?,
                _ => mock_cfg.generator_kind = serde_json::from_value(quoted).map_err(bad)?,
            }
        }
        if !matches!(self.endpoint(Role::Inpainter), EndpointConfig::Mock { .. }) {
            // keeps the perfect-inpainter reference check out of non-mock setups
            mock_cfg.inpainter_kind = mock::InpainterKind::Identity;
        }
        let needs_mocks = Role::ALL
            .iter()
            .any(|&r| matches!(self.endpoint(r), EndpointConfig::Mock { .. }));
        let mocks = if needs_mocks {
            mock::build_mock_suite(manifest, &mock_cfg)?
        } else {
            BackendSuite::default()
        };

        let mut suite = BackendSuite::default();
        for role in Role::ALL {
            match self.endpoint(role) {
                EndpointConfig::Disabled { .. } => {}
                EndpointConfig::Mock { mock } => {
                    let known = matches!(role, Role::Inpainter | Role::Scorer | Role::Generator) || mock == "mock";
                    if !known {
                        return Err(BackendError::Config(format!("unknown {role} mock kind `{mock}`")));
                    }
                    match role {
                        Role::Analyzer => suite.analyzer = mocks.analyzer.clone(),
                        Role::Generator => suite.generator = mocks.generator.clone(),
                        Role::Inpainter => suite.inpainter = mocks.inpainter.clone(),
                        Role::Reviser => suite.reviser = mocks.reviser.clone(),
                        Role::Captioner => suite.captioner = mocks.captioner.clone(),
                        Role::Embedder => suite.embedder = mocks.embedder.clone(),
                        Role::Scorer => suite.scorer = mocks.scorer.clone(),
                    }
                }
                EndpointConfig::Http {
                    url,
                    timeout_ms,
                    retries,
                    backoff_ms,
                    max_in_flight,
                } => {
                    let b = Arc::new(HttpBackend::new(
                        role,
                        &url,
                        Duration::from_millis(timeout_ms),
                        RetryPolicy {
                            retries,
                            backoff: Duration::from_millis(backoff_ms),
                        },
                        max_in_flight,
                    ));
                    match role {
                        Role::Analyzer => suite.analyzer = Some(b),
                        Role::Generator => suite.generator = Some(b),
                        Role::Inpainter => suite.inpainter = Some(b),
                        Role::Reviser => suite.reviser = Some(b),
                        Role::Captioner => suite.captioner = Some(b),
                        Role::Embedder => suite.embedder = Some(b),
                        Role::Scorer => suite.scorer = Some(b),
                    }
                }
            }
        }
        Ok(suite)
    }
}

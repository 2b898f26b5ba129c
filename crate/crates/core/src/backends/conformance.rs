//! Protocol conformance checks run against a live endpoint.

use std::time::Duration;

use image::{Rgb, RgbImage};
use serde::Serialize;

use super::http::{HttpBackend, RetryPolicy};
use super::wire::EmbedResponse;
use super::*;
use crate::text_metrics::{cosine_sim, Embedding};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConformanceReport {
    pub role: Role,
    pub url: String,
    pub checks: Vec<Check>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    fn record(&mut self, name: &str, result: Result<String, String>) {
        let (passed, detail) = match result {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail,
        });
    }
}

/// The input sent to image-taking endpoints. Mock servers only answer for
/// ids in their manifest, so a probe can be drawn from the dataset.
#[derive(Debug, Clone)]
pub struct Probe {
    pub image: RgbImage,
    pub id: Option<String>,
}

impl Default for Probe {
    fn default() -> Self {
        Self {
            image: RgbImage::from_fn(16, 12, |x, y| Rgb([(x * 13) as u8, (y * 17) as u8, ((x + y) * 5) as u8])),
            id: None,
        }
    }
}

/// Runs the checks defined for `role` against the server at `url`.
pub fn check_endpoint(role: Role, url: &str, timeout: Duration) -> ConformanceReport {
    check_endpoint_with(role, url, timeout, &Probe::default())
}

pub fn check_endpoint_with(role: Role, url: &str, timeout: Duration, probe: &Probe) -> ConformanceReport {
    let client = HttpBackend::new(
        role,
        url,
        timeout,
        RetryPolicy {
            retries: 0,
            backoff: Duration::ZERO,
        },
        1,
    );
    let mut report = ConformanceReport {
        role,
        url: url.to_owned(),
        checks: Vec::new(),
    };
    let health = client.health();
    report.record(
        "health",
        match &health {
            Ok(h) if h.status == "ok" => Ok(format!("{h:?}")),
            Ok(h) => Err(format!("status is `{}`", h.status)),
            Err(e) => Err(e.to_string()),
        },
    );
    let advertised_dim = health.ok().and_then(|h| h.dim);
    let image = &probe.image;
    let id = probe.id.as_deref();
    let (w, h) = image.dimensions();

    match role {
        Role::Embedder => {
            let text = "the left hand has six fingers";
            let first: Result<EmbedResponse, _> = client.post(&wire::EmbedRequest {
                text: Some(text.into()),
                image: None,
            });
            report.record(
                "embed schema",
                match &first {
                    Ok(r) if r.vector.len() == r.dim && r.dim > 0 => Ok(format!("dim {}", r.dim)),
                    Ok(r) => Err(format!("vector length {} vs dim {}", r.vector.len(), r.dim)),
                    Err(e) => Err(e.to_string()),
                },
            );
            if let (Ok(r), Some(dim)) = (&first, advertised_dim) {
                report.record(
                    "advertised dim",
                    if r.dim == dim {
                        Ok(format!("{dim}"))
                    } else {
                        Err(format!("health says {dim}, response has {}", r.dim))
                    },
                );
            }
            let second = client.embed_text(text);
            report.record(
                "deterministic",
                match (&first, &second) {
                    (Ok(a), Ok(b)) if a.vector.len() == b.len() => {
                        let max = a.vector.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                        if max <= 1e-6 {
                            Ok(format!("max deviation {max:e}"))
                        } else {
                            Err(format!("max deviation {max:e}"))
                        }
                    }
                    (Err(e), _) | (_, Err(e)) => Err(e.to_string()),
                    _ => Err("lengths differ".into()),
                },
            );
            report.record(
                "self similarity",
                second
                    .map_err(|e| e.to_string())
                    .and_then(|v| Embedding::new(v).map_err(|e| e.to_string()))
                    .and_then(|e| cosine_sim(&e, &e).map_err(|e| e.to_string()))
                    .and_then(|c| {
                        let css = 100.0 * c.max(0.0);
                        if (css - 100.0).abs() < 1e-6 {
                            Ok(format!("CSS {css}"))
                        } else {
                            Err(format!("CSS {css}"))
                        }
                    }),
            );
        }
        Role::Analyzer => {
            report.record(
                "analyze schema",
                client
                    .analyze(image, id)
                    .map_err(|e| e.to_string())
                    .and_then(|r| {
                        r.validate(w, h)?;
                        Ok(format!("{} region(s), fake_prob {}", r.regions.len(), r.fake_prob))
                    }),
            );
        }
        Role::Generator => {
            report.record(
                "generate",
                client
                    .generate("a red apple on a table", w, h, 0, id)
                    .map(|i| format!("{}x{}", i.width(), i.height()))
                    .map_err(|e| e.to_string()),
            );
        }
        Role::Inpainter => {
            let mask = BinaryMask::from_fn(w, h, |x, y| x < w.div_ceil(4) && y < h.div_ceil(4)).unwrap();
            report.record(
                "inpaint dims",
                client
                    .inpaint(image, &mask, "probe", id)
                    .map_err(|e| e.to_string())
                    .and_then(|i| {
                        if i.dimensions() == image.dimensions() {
                            Ok(format!("{w}x{h}"))
                        } else {
                            Err(format!("returned {:?}", i.dimensions()))
                        }
                    }),
            );
        }
        Role::Reviser => {
            report.record(
                "revise",
                client
                    .revise("a portrait", &["fingers are deformed".into()])
                    .map_err(|e| e.to_string()),
            );
        }
        Role::Captioner => {
            report.record("caption", client.caption(image, None, id).map_err(|e| e.to_string()));
        }
        Role::Scorer => {
            report.record(
                "score",
                client.score(image, None, id).map(|s| s.to_string()).map_err(|e| e.to_string()),
            );
        }
    }
    report
}

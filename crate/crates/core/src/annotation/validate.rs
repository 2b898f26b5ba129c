//! Manifest invariant checks.

use std::collections::HashSet;

use serde::Serialize;

use super::manifest::{DatasetManifest, Label};
use super::polygon::PolygonError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Schema,
    UnknownArtifactType,
    RealImageHasRegions,
    DuplicateId,
    EmptyId,
    InvalidDimensions,
    RegionWithoutPolygons,
    EmptyExplanation,
    DegeneratePolygon,
    NonFiniteCoordinate,
    CountMismatch,
}

impl ViolationKind {
    pub fn describe(&self) -> &'static str {
        match self {
            Self::Schema => "schema error",
            Self::UnknownArtifactType => "unknown artifact type",
            Self::RealImageHasRegions => "real image has regions",
            Self::DuplicateId => "duplicate id",
            Self::EmptyId => "empty id",
            Self::InvalidDimensions => "invalid image dimensions",
            Self::RegionWithoutPolygons => "region has no polygons",
            Self::EmptyExplanation => "empty explanation",
            Self::DegeneratePolygon => "degenerate polygon",
            Self::NonFiniteCoordinate => "non-finite coordinate",
            Self::CountMismatch => "entry count mismatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Human-readable kind, e.g. "real image has regions".
    pub violation: &'static str,
    pub id: Option<String>,
    pub line: Option<usize>,
    pub field: String,
    pub detail: String,
}

impl Violation {
    fn new(kind: ViolationKind, id: Option<String>, field: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            violation: kind.describe(),
            kind,
            id,
            line: None,
            field: field.into(),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Warning {
    pub id: String,
    pub field: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub entries: usize,
    pub violations: Vec<Violation>,
    pub warnings: Vec<Warning>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: &ViolationKind) -> bool {
        self.violations.iter().any(|v| &v.kind == kind)
    }
}

/// Checks every manifest invariant, including lines that failed to parse.
/// Out-of-bounds vertices are only warnings; see [`clamp_manifest`].
pub fn validate_manifest(manifest: &DatasetManifest) -> ValidationReport {
    let mut report = ValidationReport {
        entries: manifest.entries.len() + manifest.rejected.len(),
        ..Default::default()
    };

    for r in &manifest.rejected {
        let kind = if r.message.contains("unknown artifact type") {
            ViolationKind::UnknownArtifactType
        } else {
            ViolationKind::Schema
        };
        let mut v = Violation::new(kind, r.id.clone(), r.path.clone(), r.message.clone());
        v.line = Some(r.line);
        report.violations.push(v);
    }

    let mut seen = HashSet::new();
    for e in &manifest.entries {
        let id = Some(e.id.clone());
        if e.id.is_empty() {
            report.violations.push(Violation::new(ViolationKind::EmptyId, id.clone(), "id", "id is empty"));
        } else if !seen.insert(e.id.as_str()) {
            report.violations.push(Violation::new(
                ViolationKind::DuplicateId,
                id.clone(),
                "id",
                format!("id `{}` appears more than once", e.id),
            ));
        }
        if e.width == 0 || e.height == 0 {
            report.violations.push(Violation::new(
                ViolationKind::InvalidDimensions,
                id.clone(),
                "width",
                format!("{}x{}", e.width, e.height),
            ));
        }
        if e.label == Label::Real && !e.regions.is_empty() {
            report.violations.push(Violation::new(
                ViolationKind::RealImageHasRegions,
                id.clone(),
                "regions",
                format!("label is real but {} region(s) are annotated", e.regions.len()),
            ));
        }
        for (ri, region) in e.regions.iter().enumerate() {
            if region.polygons.is_empty() {
                report.violations.push(Violation::new(
                    ViolationKind::RegionWithoutPolygons,
                    id.clone(),
                    format!("regions[{ri}].polygons"),
                    "at least one polygon is required",
                ));
            }
            if region.explanation.trim().is_empty() {
                report.violations.push(Violation::new(
                    ViolationKind::EmptyExplanation,
                    id.clone(),
                    format!("regions[{ri}].explanation"),
                    "explanation is empty",
                ));
            }
            for (pi, poly) in region.polygons.iter().enumerate() {
                let field = format!("regions[{ri}].polygons[{pi}]");
                match poly.validate() {
                    Err(PolygonError::TooFewVertices(n)) => report.violations.push(Violation::new(
                        ViolationKind::DegeneratePolygon,
                        id.clone(),
                        field,
                        format!("{n} vertices, at least 3 required"),
                    )),
                    Err(err @ PolygonError::NonFinite { .. }) => report.violations.push(Violation::new(
                        ViolationKind::NonFiniteCoordinate,
                        id.clone(),
                        field,
                        err.to_string(),
                    )),
                    Err(PolygonError::Mask(_)) => unreachable!("validate never rasterizes"),
                    Ok(()) => {
                        if poly.out_of_bounds(e.width, e.height) {
                            report.warnings.push(Warning {
                                id: e.id.clone(),
                                field,
                                detail: format!("vertices outside {}x{} will be clamped", e.width, e.height),
                            });
                        }
                    }
                }
            }
        }
    }
    report
}

/// Adds a count-mismatch violation when `expected` disagrees with the number of lines.
pub fn check_count(report: &mut ValidationReport, expected: usize) {
    if report.entries != expected {
        report.violations.push(Violation::new(
            ViolationKind::CountMismatch,
            None,
            "",
            format!("expected {expected} entries, found {}", report.entries),
        ));
    }
}

/// Clamps every out-of-bounds polygon vertex into its image, logging each one.
pub fn clamp_manifest(manifest: &mut DatasetManifest) -> usize {
    let mut clamped = 0;
    for e in &mut manifest.entries {
        let (w, h) = (e.width, e.height);
        for r in &mut e.regions {
            for p in &mut r.polygons {
                if p.out_of_bounds(w, h) {
                    log::warn!("{}: clamping polygon vertices into {w}x{h}", e.id);
                    p.clamp_to(w, h);
                    clamped += 1;
                }
            }
        }
    }
    clamped
}

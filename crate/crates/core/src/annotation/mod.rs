//! Annotation data model: polygons, masks, manifests, validation and statistics.

pub mod manifest;
pub mod mask;
pub mod polygon;
pub mod stats;
pub mod validate;

pub use manifest::{
    AnnotatedImage, ArtifactRegion, ArtifactType, ContentType, DatasetManifest, ImageRef, Label, ManifestError,
    Split,
};
pub use mask::{rle_decode, rle_encode, BinaryMask, CodecError, RleMask};
pub use polygon::{rasterize_polygon, rasterize_polygons, Polygon, PolygonError};
pub use stats::{dataset_stats, DatasetStats};
pub use validate::{check_count, clamp_manifest, validate_manifest, ValidationReport, Violation, ViolationKind};

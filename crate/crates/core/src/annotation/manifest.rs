//! Dataset schema and JSON-Lines manifest I/O.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::mask::BinaryMask;
use super::polygon::{rasterize_polygons, Polygon, PolygonError};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot load image {path}: {message}")]
    Image { path: String, message: String },
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArtifactType {
    Physics,
    Distortion,
    Structure,
}

impl ArtifactType {
    pub const ALL: [ArtifactType; 3] = [Self::Physics, Self::Distortion, Self::Structure];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Physics => "physics",
            Self::Distortion => "distortion",
            Self::Structure => "structure",
        }
    }
}

impl fmt::Display for ArtifactType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArtifactType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "physics" => Ok(Self::Physics),
            "distortion" => Ok(Self::Distortion),
            "structure" => Ok(Self::Structure),
            other => Err(format!("unknown artifact type `{other}`")),
        }
    }
}

impl Serialize for ArtifactType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ArtifactType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Real => "real",
            Label::Fake => "fake",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContentType {
    Human,
    Object,
    Animal,
    Scene,
}

impl ContentType {
    pub const ALL: [ContentType; 4] = [Self::Human, Self::Object, Self::Animal, Self::Scene];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Human => "human",
            Self::Object => "object",
            Self::Animal => "animal",
            Self::Scene => "scene",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    #[default]
    Unsplit,
}

/// Where an image's pixels live: a path (relative to the manifest's
/// directory unless absolute) or inline base64 PNG bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageRef {
    Path(String),
    Inline { png_base64: String },
}

impl ImageRef {
    pub fn load(&self, base_dir: &Path) -> Result<image::RgbImage, ManifestError> {
        match self {
            ImageRef::Path(p) => {
                let path = base_dir.join(p);
                image::open(&path)
                    .map(|img| img.into_rgb8())
                    .map_err(|e| ManifestError::Image {
                        path: path.display().to_string(),
                        message: e.to_string(),
                    })
            }
            ImageRef::Inline { png_base64 } => {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(png_base64)
                    .map_err(|e| ManifestError::Image {
                        path: "<inline>".into(),
                        message: e.to_string(),
                    })?;
                image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
                    .map(|img| img.into_rgb8())
                    .map_err(|e| ManifestError::Image {
                        path: "<inline>".into(),
                        message: e.to_string(),
                    })
            }
        }
    }
}

/// One annotated artifact: a location phrase, its polygons, a type and an
/// explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRegion {
    pub location: String,
    pub polygons: Vec<Polygon>,
    pub artifact_type: ArtifactType,
    pub explanation: String,
}

impl ArtifactRegion {
    pub fn rasterize(&self, width: u32, height: u32) -> Result<BinaryMask, PolygonError> {
        rasterize_polygons(&self.polygons, width, height)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    pub id: String,
    pub image: ImageRef,
    pub width: u32,
    pub height: u32,
    pub label: Label,
    pub content_type: ContentType,
    #[serde(default)]
    pub regions: Vec<ArtifactRegion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    /// Artifact-free counterpart of `image`, used by fixture mocks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ImageRef>,
}

impl AnnotatedImage {
    /// Union of all region masks (all-zero for images without regions).
    pub fn ground_truth_mask(&self) -> Result<BinaryMask, PolygonError> {
        let mut out = BinaryMask::new(self.width, self.height)?;
        for r in &self.regions {
            out.or_assign(&r.rasterize(self.width, self.height)?);
        }
        Ok(out)
    }
}

/// A line that could not be turned into an [`AnnotatedImage`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedLine {
    pub line: usize,
    pub id: Option<String>,
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    pub entries: Vec<AnnotatedImage>,
    pub split: Split,
    /// Lines that failed schema parsing; surfaced by validation.
    pub rejected: Vec<RejectedLine>,
    /// Directory image paths are resolved against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<AnnotatedImage>) -> Self {
        Self {
            entries,
            ..Default::default()
        }
    }

    /// Reads a JSON-Lines manifest. Blank lines are skipped. Lines that are
    /// not valid entries are kept in `rejected` instead of failing the load;
    /// only I/O problems are errors here.
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let file = std::fs::File::open(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut manifest = Self::from_reader(BufReader::new(file)).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn from_reader(reader: impl BufRead) -> std::io::Result<Self> {
        let mut manifest = Self::default();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match parse_line(&line) {
                Ok(entry) => manifest.entries.push(entry),
                Err((id, path, message)) => manifest.rejected.push(RejectedLine {
                    line: idx + 1,
                    id,
                    path,
                    message,
                }),
            }
        }
        Ok(manifest)
    }

    pub fn write(&self, mut out: impl Write) -> std::io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write(&mut w)?;
        w.flush()
    }

    pub fn get(&self, id: &str) -> Option<&AnnotatedImage> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn index(&self) -> HashMap<&str, &AnnotatedImage> {
        self.entries.iter().map(|e| (e.id.as_str(), e)).collect()
    }

    pub fn load_image(&self, entry: &AnnotatedImage) -> Result<image::RgbImage, ManifestError> {
        entry.image.load(&self.base_dir)
    }

    pub fn load_reference(&self, entry: &AnnotatedImage) -> Result<Option<image::RgbImage>, ManifestError> {
        entry.reference.as_ref().map(|r| r.load(&self.base_dir)).transpose()
    }

    pub fn concat(mut self, other: DatasetManifest) -> Self {
        self.entries.extend(other.entries);
        self.rejected.extend(other.rejected);
        self
    }
}

fn parse_line(line: &str) -> Result<AnnotatedImage, (Option<String>, String, String)> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| (None, String::new(), format!("invalid JSON: {e}")))?;
    let id = value.get("id").and_then(|v| v.as_str()).map(str::to_owned);
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let message = e.into_inner().to_string();
        (id, path, message)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"id":"a","image":"a.png","width":4,"height":4,"label":"fake","content_type":"human","regions":[{"location":"left hand","polygons":[[[1,1],[3,1],[3,3]]],"artifact_type":"structure","explanation":"extra finger"}]}"#;

    #[test]
    fn parses_entry() {
        let m = DatasetManifest::from_reader(LINE.as_bytes()).unwrap();
        assert!(m.rejected.is_empty());
        let e = &m.entries[0];
        assert_eq!(e.regions[0].artifact_type, ArtifactType::Structure);
        assert_eq!(e.image, ImageRef::Path("a.png".into()));
    }

    #[test]
    fn unknown_artifact_type_is_rejected_with_path() {
        let line = LINE.replace("\"structure\"", "\"texture\"");
        let m = DatasetManifest::from_reader(line.as_bytes()).unwrap();
        assert!(m.entries.is_empty());
        let r = &m.rejected[0];
        assert_eq!(r.id.as_deref(), Some("a"));
        assert_eq!(r.path, "regions[0].artifact_type");
        assert!(r.message.contains("unknown artifact type `texture`"), "{}", r.message);
    }

    #[test]
    fn serde_roundtrip_line() {
        let m = DatasetManifest::from_reader(LINE.as_bytes()).unwrap();
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        let again = DatasetManifest::from_reader(buf.as_slice()).unwrap();
        assert_eq!(again.entries, m.entries);
    }

    #[test]
    fn inline_image_ref() {
        let img = image::RgbImage::from_pixel(2, 1, image::Rgb([1, 2, 3]));
        let mut png = Vec::new();
        img.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png).unwrap();
        let r = ImageRef::Inline {
            png_base64: base64::engine::general_purpose::STANDARD.encode(png),
        };
        let json = serde_json::to_string(&r).unwrap();
        let back: ImageRef = serde_json::from_str(&json).unwrap();
        assert_eq!(back.load(Path::new(".")).unwrap(), img);
    }
}

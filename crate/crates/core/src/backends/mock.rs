//! Deterministic mock backends driven by manifest ground truth.
//!
//! Every mock is a pure function of its arguments and the configured seed:
//! equal calls give equal answers, in any order and from any thread.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::*;
use crate::annotation::{DatasetManifest, ImageRef};
use crate::rng;
use crate::text_metrics::TokenSeq;

/// Dimension of [`HashEmbedder`] text vectors.
pub const HASH_EMBED_DIM: usize = 32;
/// Grid side of [`HashEmbedder`] image vectors (`GRID * GRID * 3` values).
pub const IMAGE_EMBED_GRID: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InpainterKind {
    #[default]
    Identity,
    Perfect,
    ConstantFill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    #[default]
    Area,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    /// Report annotated regions regardless of pixels.
    GroundTruth,
    /// Report only the part of each region that still differs from the
    /// entry's clean reference (falls back to ground truth without one).
    #[default]
    Residual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Returns the entry's image with every region whose explanation appears
    /// in the prompt restored from the clean reference.
    #[default]
    Oracle,
    /// Returns the entry's image unchanged.
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    pub perturb_radius: u32,
    pub drop_prob: f64,
    pub seed: u64,
    pub inpainter_kind: InpainterKind,
    pub scorer_kind: ScorerKind,
    pub oracle_mode: OracleMode,
    pub generator_kind: GeneratorKind,
    pub fill_color: [u8; 3],
    pub caption: String,
    pub constant_score: f64,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            perturb_radius: 0,
            drop_prob: 0.0,
            seed: 0,
            inpainter_kind: InpainterKind::default(),
            scorer_kind: ScorerKind::default(),
            oracle_mode: OracleMode::default(),
            generator_kind: GeneratorKind::default(),
            fill_color: [128, 128, 128],
            caption: "a photo".into(),
            constant_score: 50.0,
        }
    }
}

type Lazy = OnceLock<Result<Arc<RgbImage>, String>>;

#[derive(Debug)]
pub struct OracleRegion {
    pub location: String,
    pub mask: BinaryMask,
    pub artifact_type: ArtifactType,
    pub explanation: String,
}

#[derive(Debug)]
pub struct OracleEntry {
    pub width: u32,
    pub height: u32,
    pub regions: Vec<OracleRegion>,
    image_ref: ImageRef,
    reference_ref: Option<ImageRef>,
    image: Lazy,
    reference: Lazy,
}

/// Ground truth by image id, with lazily loaded pixels.
#[derive(Debug)]
pub struct Oracle {
    entries: HashMap<String, OracleEntry>,
    base_dir: PathBuf,
}

fn load_lazy(cell: &Lazy, r: &ImageRef, base: &std::path::Path) -> Result<Arc<RgbImage>, String> {
    cell.get_or_init(|| r.load(base).map(Arc::new).map_err(|e| e.to_string()))
        .clone()
}

impl Oracle {
    pub fn from_manifest(manifest: &DatasetManifest) -> Result<Self, BackendError> {
        let mut entries = HashMap::new();
        for e in &manifest.entries {
            let mut regions = Vec::with_capacity(e.regions.len());
            for r in &e.regions {
                let mask = r
                    .rasterize(e.width, e.height)
                    .map_err(|err| BackendError::Config(format!("{}: {err}", e.id)))?;
                regions.push(OracleRegion {
                    location: r.location.clone(),
                    mask,
                    artifact_type: r.artifact_type,
                    explanation: r.explanation.clone(),
                });
            }
            entries.insert(
                e.id.clone(),
                OracleEntry {
                    width: e.width,
                    height: e.height,
                    regions,
                    image_ref: e.image.clone(),
                    reference_ref: e.reference.clone(),
                    image: OnceLock::new(),
                    reference: OnceLock::new(),
                },
            );
        }
        Ok(Self {
            entries,
            base_dir: manifest.base_dir.clone(),
        })
    }

    pub fn entry(&self, endpoint: Role, id: Option<&str>) -> Result<&OracleEntry, BackendError> {
        let id = id.ok_or_else(|| BackendError::failed(endpoint, "mock needs an image id"))?;
        self.entries
            .get(id)
            .ok_or_else(|| BackendError::failed(endpoint, format!("no ground truth for id `{id}`")))
    }

    pub fn image(&self, e: &OracleEntry) -> Result<Arc<RgbImage>, String> {
        load_lazy(&e.image, &e.image_ref, &self.base_dir)
    }

    pub fn reference(&self, e: &OracleEntry) -> Option<Result<Arc<RgbImage>, String>> {
        e.reference_ref
            .as_ref()
            .map(|r| load_lazy(&e.reference, r, &self.base_dir))
    }

    /// Pixels of `image` that differ from the entry's reference, if it has one.
    fn difference(&self, e: &OracleEntry, image: &RgbImage) -> Option<Result<BinaryMask, String>> {
        let reference = self.reference(e)?;
        Some(reference.and_then(|reference| {
            if reference.dimensions() != image.dimensions() {
                return Err(format!(
                    "reference is {:?}, image is {:?}",
                    reference.dimensions(),
                    image.dimensions()
                ));
            }
            BinaryMask::from_fn(image.width(), image.height(), |x, y| {
                image.get_pixel(x, y) != reference.get_pixel(x, y)
            })
            .map_err(|e| e.to_string())
        }))
    }

    /// Remaining artifact pixels of `image`: annotated pixels that still differ
    /// from the clean reference, or the whole annotated area without one.
    pub fn artifact_pixels(&self, id: &str, image: &RgbImage) -> Result<usize, BackendError> {
        let e = self.entry(Role::Scorer, Some(id))?;
        let gt = BinaryMask::union(e.width, e.height, e.regions.iter().map(|r| &r.mask))
            .map_err(|err| BackendError::failed(Role::Scorer, err.to_string()))?;
        match self.difference(e, image) {
            None => Ok(gt.area()),
            Some(diff) => {
                let diff = diff.map_err(|m| BackendError::failed(Role::Scorer, m))?;
                Ok(gt.intersect(&diff).area())
            }
        }
    }
}

fn check_dims(role: Role, e: &OracleEntry, image: &RgbImage) -> Result<(), BackendError> {
    if image.dimensions() != (e.width, e.height) {
        return Err(BackendError::failed(
            role,
            format!(
                "image is {}x{}, ground truth is {}x{}",
                image.width(),
                image.height(),
                e.width,
                e.height
            ),
        ));
    }
    Ok(())
}

/// Reports ground-truth regions, optionally dilated and randomly dropped.
#[derive(Debug)]
pub struct OracleAnalyzer {
    pub oracle: Arc<Oracle>,
    pub radius: u32,
    pub drop_prob: f64,
    pub seed: u64,
    pub mode: OracleMode,
}

impl Analyzer for OracleAnalyzer {
    fn analyze(&self, image: &RgbImage, id: Option<&str>) -> Result<AnalyzerReport, BackendError> {
        let e = self.oracle.entry(Role::Analyzer, id)?;
        check_dims(Role::Analyzer, e, image)?;
        let diff = match self.mode {
            OracleMode::GroundTruth => None,
            OracleMode::Residual => self
                .oracle
                .difference(e, image)
                .transpose()
                .map_err(|m| BackendError::failed(Role::Analyzer, m))?,
        };
        let image_key = if self.drop_prob > 0.0 { rng::fnv1a64(image.as_raw()) } else { 0 };
        let id_key = rng::fnv1a64(id.unwrap_or_default().as_bytes());
        let mut regions = Vec::new();
        for (i, r) in e.regions.iter().enumerate() {
            let mask = match &diff {
                Some(d) => r.mask.intersect(d),
                None => r.mask.clone(),
            };
            if mask.is_empty() {
                continue;
            }
            if self.drop_prob > 0.0 {
                let u = rng::unit_f64(rng::combine(&[self.seed, id_key, i as u64, image_key]));
                if u < self.drop_prob {
                    continue;
                }
            }
            regions.push(ReportRegion {
                location: r.location.clone(),
                mask: mask.dilate(self.radius).to_rle(),
                artifact_type: Some(r.artifact_type),
                explanation: r.explanation.clone(),
            });
        }
        let fake_prob = if regions.is_empty() { 0.0 } else { 1.0 };
        Ok(AnalyzerReport::from_regions(regions, fake_prob))
    }
}

/// Returns its input.
#[derive(Debug, Default)]
pub struct IdentityInpainter;

impl Inpainter for IdentityInpainter {
    fn inpaint(&self, image: &RgbImage, _: &BinaryMask, _: &str, _: Option<&str>) -> Result<RgbImage, BackendError> {
        Ok(image.clone())
    }
}

/// Restores masked pixels from the entry's clean reference.
#[derive(Debug)]
pub struct PerfectInpainter {
    pub oracle: Arc<Oracle>,
}

impl Inpainter for PerfectInpainter {
    fn inpaint(&self, image: &RgbImage, mask: &BinaryMask, _: &str, id: Option<&str>) -> Result<RgbImage, BackendError> {
        let e = self.oracle.entry(Role::Inpainter, id)?;
        check_dims(Role::Inpainter, e, image)?;
        let reference = self
            .oracle
            .reference(e)
            .ok_or_else(|| BackendError::failed(Role::Inpainter, "entry has no reference image"))?
            .map_err(|m| BackendError::failed(Role::Inpainter, m))?;
        let mut out = image.clone();
        for (x, y) in mask.ones() {
            out.put_pixel(x, y, *reference.get_pixel(x, y));
        }
        Ok(out)
    }
}

/// Returns an image of one constant colour.
#[derive(Debug)]
pub struct ConstantFillInpainter {
    pub color: [u8; 3],
}

impl Inpainter for ConstantFillInpainter {
    fn inpaint(&self, image: &RgbImage, _: &BinaryMask, _: &str, _: Option<&str>) -> Result<RgbImage, BackendError> {
        Ok(RgbImage::from_pixel(image.width(), image.height(), Rgb(self.color)))
    }
}

/// Marker separating the base prompt from the avoidance list.
pub const AVOID_MARKER: &str = " Avoid: ";

/// Appends `" Avoid: m1; m2; ..."` to the prompt with any earlier suffix removed.
#[derive(Debug, Default)]
pub struct EchoReviser;

impl Reviser for EchoReviser {
    fn revise(&self, prompt: &str, memory: &[String]) -> Result<String, BackendError> {
        let base = prompt.split(AVOID_MARKER).next().unwrap_or(prompt);
        if memory.is_empty() {
            return Ok(base.to_owned());
        }
        Ok(format!("{base}{AVOID_MARKER}{}", memory.join("; ")))
    }
}

#[derive(Debug)]
pub struct ConstantCaptioner {
    pub text: String,
}

impl Captioner for ConstantCaptioner {
    fn caption(&self, _: &RgbImage, _: Option<&str>, _: Option<&str>) -> Result<String, BackendError> {
        Ok(self.text.clone())
    }
}

/// Feature-hashing embedder.
///
/// Text: each lowercased word token `t` (see [`TokenSeq`]) adds `±1` to
/// component `fnv1a64(t) % 32`, with sign `-` when bit 63 of the hash is set;
/// the sum is scaled to unit length (left at zero when it cancels out).
///
/// Images: mean of each RGB channel over a 4x4 grid of cells, divided by 255,
/// row-major cells then channels (48 values).
#[derive(Debug, Default)]
pub struct HashEmbedder;

impl HashEmbedder {
    pub fn token_slot(token: &str) -> (usize, f64) {
        let h = rng::fnv1a64(token.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        ((h % HASH_EMBED_DIM as u64) as usize, sign)
    }
}

impl Embedder for HashEmbedder {
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let mut v = vec![0.0; HASH_EMBED_DIM];
        for t in TokenSeq::new(text).tokens() {
            let (slot, sign) = Self::token_slot(t);
            v[slot] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }

    fn embed_image(&self, image: &RgbImage) -> Result<Vec<f64>, BackendError> {
        let g = IMAGE_EMBED_GRID;
        let (w, h) = image.dimensions();
        let mut out = Vec::with_capacity((g * g * 3) as usize);
        for gy in 0..g {
            for gx in 0..g {
                let (x0, x1) = (gx * w / g, ((gx + 1) * w / g).max(gx * w / g + 1).min(w));
                let (y0, y1) = (gy * h / g, ((gy + 1) * h / g).max(gy * h / g + 1).min(h));
                let mut sum = [0.0f64; 3];
                let mut n = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let p = image.get_pixel(x, y).0;
                        for c in 0..3 {
                            sum[c] += f64::from(p[c]);
                        }
                        n += 1.0;
                    }
                }
                out.extend(sum.iter().map(|s| if n > 0.0 { s / n / 255.0 } else { 0.0 }));
            }
        }
        Ok(out)
    }
}

/// `100 * (1 - remaining artifact pixels / image pixels)`, per the oracle.
#[derive(Debug)]
pub struct AreaScorer {
    pub oracle: Arc<Oracle>,
}

impl Scorer for AreaScorer {
    fn score(&self, image: &RgbImage, _: Option<&str>, id: Option<&str>) -> Result<f64, BackendError> {
        let e = self.oracle.entry(Role::Scorer, id)?;
        check_dims(Role::Scorer, e, image)?;
        let remaining = self.oracle.artifact_pixels(id.unwrap_or_default(), image)?;
        Ok(100.0 * (1.0 - remaining as f64 / (f64::from(e.width) * f64::from(e.height))))
    }
}

#[derive(Debug)]
pub struct ConstantScorer {
    pub value: f64,
}

impl Scorer for ConstantScorer {
    fn score(&self, _: &RgbImage, _: Option<&str>, _: Option<&str>) -> Result<f64, BackendError> {
        Ok(self.value)
    }
}

/// See [`GeneratorKind`].
#[derive(Debug)]
pub struct OracleGenerator {
    pub oracle: Arc<Oracle>,
    pub kind: GeneratorKind,
}

impl Generator for OracleGenerator {
    fn generate(&self, prompt: &str, _w: u32, _h: u32, _seed: u64, id: Option<&str>) -> Result<RgbImage, BackendError> {
        let e = self.oracle.entry(Role::Generator, id)?;
        let base = self
            .oracle
            .image(e)
            .map_err(|m| BackendError::failed(Role::Generator, m))?;
        let mut out = (*base).clone();
        if self.kind == GeneratorKind::Static {
            return Ok(out);
        }
        let Some(reference) = self.oracle.reference(e) else {
            return Ok(out);
        };
        let reference = reference.map_err(|m| BackendError::failed(Role::Generator, m))?;
        for r in &e.regions {
            if prompt.contains(r.explanation.trim()) {
                for (x, y) in r.mask.ones() {
                    out.put_pixel(x, y, *reference.get_pixel(x, y));
                }
            }
        }
        Ok(out)
    }
}

/// Builds the all-mock suite over a manifest's ground truth.
pub fn build_mock_suite(manifest: &DatasetManifest, config: &MockConfig) -> Result<BackendSuite, BackendError> {
    if !(0.0..=1.0).contains(&config.drop_prob) {
        return Err(BackendError::Config(format!("drop_prob {} outside [0, 1]", config.drop_prob)));
    }
    let oracle = Arc::new(Oracle::from_manifest(manifest)?);
    let inpainter: Arc<dyn Inpainter> = match config.inpainter_kind {
        InpainterKind::Identity => Arc::new(IdentityInpainter),
        InpainterKind::ConstantFill => Arc::new(ConstantFillInpainter {
            color: config.fill_color,
        }),
        InpainterKind::Perfect => {
            if let Some(e) = manifest.entries.iter().find(|e| !e.regions.is_empty() && e.reference.is_none()) {
                return Err(BackendError::Config(format!(
                    "perfect inpainter needs reference images; `{}` has none",
                    e.id
                )));
            }
            Arc::new(PerfectInpainter { oracle: oracle.clone() })
        }
    };
    let scorer: Arc<dyn Scorer> = match config.scorer_kind {
        ScorerKind::Area => Arc::new(AreaScorer { oracle: oracle.clone() }),
        ScorerKind::Constant => Arc::new(ConstantScorer {
            value: config.constant_score,
        }),
    };
    Ok(BackendSuite {
        analyzer: Some(Arc::new(OracleAnalyzer {
            oracle: oracle.clone(),
            radius: config.perturb_radius,
            drop_prob: config.drop_prob,
            seed: config.seed,
            mode: config.oracle_mode,
        })),
        generator: Some(Arc::new(OracleGenerator {
            oracle,
            kind: config.generator_kind,
        })),
        inpainter: Some(inpainter),
        reviser: Some(Arc::new(EchoReviser)),
        captioner: Some(Arc::new(ConstantCaptioner {
            text: config.caption.clone(),
        })),
        embedder: Some(Arc::new(HashEmbedder)),
        scorer: Some(scorer),
    })
}

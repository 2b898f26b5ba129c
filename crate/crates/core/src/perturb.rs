//! Image perturbations for robustness sweeps, and the sweep itself.
//!
//! Gaussian noise is drawn from a counter-based generator: the value for
//! channel `k = 3 * (y * width + x) + c` uses Box-Muller on
//! `u1 = unit_f64_open(keyed(seed, 2k))` and `u2 = unit_f64(keyed(seed, 2k + 1))`
//! (see [`crate::rng`]), taking the cosine branch. The result depends only on
//! `(image, sigma, seed)`.

use std::fmt;
use std::str::FromStr;

use image::codecs::jpeg::JpegEncoder;
use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::annotation::{BinaryMask, DatasetManifest};
use crate::backends::Analyzer;
use crate::parallel::bounded_map;
use crate::rng;
use crate::seg_metrics::{Aggregation, Confusion, SegAccumulator, SegScore};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PerturbError {
    #[error("JPEG quality factor {0} outside [1, 100]")]
    Quality(f64),
    #[error("noise sigma must be a positive finite number, got {0}")]
    Sigma(f64),
    #[error("blur kernel size must be an odd integer >= 3, got {0}")]
    Ksize(f64),
    #[error("cannot parse perturbation `{0}` (expected none, jpeg:QF, noise:SIGMA or blur:KSIZE)")]
    Parse(String),
    #[error("codec error: {0}")]
    Codec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    None,
    Jpeg,
    GaussianNoise,
    GaussianBlur,
}

/// One robustness grid cell. `param` is the quality factor, the noise sigma
/// on the [0, 1] intensity scale, or the blur kernel size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct PerturbSpec {
    pub kind: PerturbKind,
    pub param: f64,
    pub seed: u64,
}

#[derive(Deserialize)]
struct RawSpec {
    kind: PerturbKind,
    #[serde(default)]
    param: f64,
    #[serde(default)]
    seed: u64,
}

impl TryFrom<RawSpec> for PerturbSpec {
    type Error = PerturbError;

    fn try_from(r: RawSpec) -> Result<Self, Self::Error> {
        let s = PerturbSpec {
            kind: r.kind,
            param: r.param,
            seed: r.seed,
        };
        s.validate()?;
        Ok(s)
    }
}

impl PerturbSpec {
    pub fn none() -> Self {
        Self {
            kind: PerturbKind::None,
            param: 0.0,
            seed: 0,
        }
    }

    pub fn jpeg(qf: u8) -> Self {
        Self {
            kind: PerturbKind::Jpeg,
            param: f64::from(qf),
            seed: 0,
        }
    }

    pub fn noise(sigma: f64, seed: u64) -> Self {
        Self {
            kind: PerturbKind::GaussianNoise,
            param: sigma,
            seed,
        }
    }

    pub fn blur(ksize: u32) -> Self {
        Self {
            kind: PerturbKind::GaussianBlur,
            param: f64::from(ksize),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), PerturbError> {
        let p = self.param;
        match self.kind {
            PerturbKind::None => Ok(()),
            PerturbKind::Jpeg if p.fract() == 0.0 && (1.0..=100.0).contains(&p) => Ok(()),
            PerturbKind::Jpeg => Err(PerturbError::Quality(p)),
            PerturbKind::GaussianNoise if p.is_finite() && p > 0.0 => Ok(()),
            PerturbKind::GaussianNoise => Err(PerturbError::Sigma(p)),
            PerturbKind::GaussianBlur if p.fract() == 0.0 && p >= 3.0 && p % 2.0 == 1.0 && p < 1e6 => Ok(()),
            PerturbKind::GaussianBlur => Err(PerturbError::Ksize(p)),
        }
    }

    /// Applies the perturbation. `salt` is mixed into the noise seed so that
    /// different images in one sweep receive independent noise.
    pub fn apply(&self, image: &RgbImage, salt: u64) -> Result<RgbImage, PerturbError> {
        self.validate()?;
        match self.kind {
            PerturbKind::None => Ok(image.clone()),
            PerturbKind::Jpeg => jpeg_compress(image, self.param as u8),
            PerturbKind::GaussianNoise => gaussian_noise(image, self.param, rng::combine(&[self.seed, salt])),
            PerturbKind::GaussianBlur => gaussian_blur(image, self.param as u32),
        }
    }

    /// The grid used for the robustness table: clean, three JPEG qualities,
    /// three noise levels and three blur sizes.
    pub fn standard_grid(seed: u64) -> Vec<Self> {
        let mut grid = vec![Self::none()];
        grid.extend([50, 35, 20].map(Self::jpeg));
        grid.extend([0.1, 0.2, 0.3].map(|s| Self::noise(s, seed)));
        grid.extend([5, 9, 15].map(Self::blur));
        grid
    }
}

impl fmt::Display for PerturbSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            PerturbKind::None => write!(f, "No Distortion"),
            PerturbKind::Jpeg => write!(f, "JPEG Comp. (QF = {})", self.param),
            PerturbKind::GaussianNoise => write!(f, "Gaussian Noise (σ = {})", self.param),
            PerturbKind::GaussianBlur => write!(f, "Gaussian Blur (Ksize = {})", self.param),
        }
    }
}

/// Accepts `none`, `jpeg:50`, `noise:0.1`, `blur:5` (optionally `noise:0.1@SEED`).
impl FromStr for PerturbSpec {
    type Err = PerturbError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PerturbError::Parse(s.to_owned());
        let s_trim = s.trim();
        if s_trim.eq_ignore_ascii_case("none") || s_trim == "No Distortion" {
            return Ok(Self::none());
        }
        let (kind, rest) = s_trim.split_once(':').ok_or_else(bad)?;
        let (param, seed) = match rest.split_once('@') {
            Some((p, seed)) => (p, seed.parse::<u64>().map_err(|_| bad())?),
            None => (rest, 0),
        };
        let param: f64 = param.trim().parse().map_err(|_| bad())?;
        let kind = match kind.trim().to_ascii_lowercase().as_str() {
            "jpeg" => PerturbKind::Jpeg,
            "noise" => PerturbKind::GaussianNoise,
            "blur" => PerturbKind::GaussianBlur,
            _ => return Err(bad()),
        };
        let spec = Self { kind, param, seed };
        spec.validate()?;
        Ok(spec)
    }
}

/// Baseline JPEG encode at quality `qf`, then decode.
pub fn jpeg_compress(image: &RgbImage, qf: u8) -> Result<RgbImage, PerturbError> {
    if !(1..=100).contains(&qf) {
        return Err(PerturbError::Quality(f64::from(qf)));
    }
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, qf)
        .encode_image(image)
        .map_err(|e| PerturbError::Codec(e.to_string()))?;
    let out = image::load_from_memory_with_format(&buf, ImageFormat::Jpeg)
        .map_err(|e| PerturbError::Codec(e.to_string()))?
        .to_rgb8();
    debug_assert_eq!(out.dimensions(), image.dimensions());
    Ok(out)
}

/// Standard normal deviate for counter `k` under `seed`.
pub fn normal_sample(seed: u64, k: u64) -> f64 {
    let u1 = rng::unit_f64_open(rng::keyed(seed, 2 * k));
    let u2 = rng::unit_f64(rng::keyed(seed, 2 * k + 1));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Adds N(0, sigma^2) per channel on the [0, 1] scale, clamps and requantizes.
pub fn gaussian_noise(image: &RgbImage, sigma: f64, seed: u64) -> Result<RgbImage, PerturbError> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(PerturbError::Sigma(sigma));
    }
    let mut out = image.clone();
    for (k, v) in out.iter_mut().enumerate() {
        let x = f64::from(*v) / 255.0 + sigma * normal_sample(seed, k as u64);
        *v = (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    }
    Ok(out)
}

/// Sigma used for a blur kernel of size `ksize`.
pub fn blur_sigma(ksize: u32) -> f64 {
    0.3 * ((f64::from(ksize) - 1.0) * 0.5 - 1.0) + 0.8
}

/// Normalized 1-D Gaussian weights of length `ksize`.
pub fn gaussian_kernel(ksize: u32) -> Vec<f64> {
    let sigma = blur_sigma(ksize);
    let r = f64::from(ksize / 2);
    let w: Vec<f64> = (0..ksize)
        .map(|i| (-(f64::from(i) - r).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    w.into_iter().map(|v| v / sum).collect()
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(image: &RgbImage, ksize: u32) -> Result<RgbImage, PerturbError> {
    if ksize < 3 || ksize.is_multiple_of(2) {
        return Err(PerturbError::Ksize(f64::from(ksize)));
    }
    let kernel = gaussian_kernel(ksize);
    let r = (ksize / 2) as i64;
    let (w, h) = image.dimensions();
    let (wi, hi) = (i64::from(w), i64::from(h));
    let src: Vec<f64> = image.iter().map(|&v| f64::from(v)).collect();
    let idx = |x: i64, y: i64, c: usize| (y as usize * w as usize + x as usize) * 3 + c;

    let mut horiz = vec![0.0; src.len()];
    for y in 0..hi {
        for x in 0..wi {
            for c in 0..3 {
                horiz[idx(x, y, c)] = kernel
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k * src[idx((x + i as i64 - r).clamp(0, wi - 1), y, c)])
                    .sum();
            }
        }
    }
    let mut out = RgbImage::new(w, h);
    for y in 0..hi {
        for x in 0..wi {
            let mut px = [0u8; 3];
            for (c, p) in px.iter_mut().enumerate() {
                let v: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k * horiz[idx(x, (y + i as i64 - r).clamp(0, hi - 1), c)])
                    .sum();
                *p = v.round().clamp(0.0, 255.0) as u8;
            }
            out.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessCell {
    pub label: String,
    pub spec: PerturbSpec,
    /// Macro-averaged, in percent.
    pub miou: Option<f64>,
    pub f1: Option<f64>,
    /// `(clean - cell) / clean`, in percent.
    pub miou_degradation: Option<f64>,
    pub f1_degradation: Option<f64>,
    pub images: usize,
    pub failed: bool,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub schema_version: String,
    pub aggregation: Aggregation,
    pub clean: Option<SegScore>,
    pub cells: Vec<RobustnessCell>,
}

/// `(clean - perturbed) / clean` in percent; `None` when clean is zero.
pub fn degradation(clean: f64, perturbed: f64) -> Option<f64> {
    (clean != 0.0).then(|| 100.0 * (clean - perturbed) / clean)
}

fn evaluate_cell(
    manifest: &DatasetManifest,
    analyzer: &dyn Analyzer,
    spec: &PerturbSpec,
) -> (SegAccumulator, Vec<String>) {
    let mut acc = SegAccumulator::default();
    let mut errors = Vec::new();
    for entry in &manifest.entries {
        let result = (|| -> Result<Confusion, String> {
            let gt = entry.ground_truth_mask().map_err(|e| e.to_string())?;
            let img = manifest.load_image(entry).map_err(|e| e.to_string())?;
            let salt = rng::fnv1a64(entry.id.as_bytes());
            let perturbed = spec.apply(&img, salt).map_err(|e| e.to_string())?;
            let report = analyzer.analyze(&perturbed, Some(&entry.id)).map_err(|e| e.to_string())?;
            let pred: BinaryMask = report.union_mask(entry.width, entry.height)?;
            Confusion::between(&pred, &gt).map_err(|e| e.to_string())
        })();
        match result {
            Ok(c) => acc.push(c),
            Err(e) => errors.push(format!("{}: {e}", entry.id)),
        }
    }
    (acc, errors)
}

/// Perturbs every manifest image under each grid cell and scores the
/// analyzer's union mask against ground truth. The clean row is always
/// evaluated and reported first. A cell with any failed image is marked
/// failed; the sweep itself never aborts.
pub fn robustness_report(
    manifest: &DatasetManifest,
    analyzer: &dyn Analyzer,
    grid: &[PerturbSpec],
    max_concurrency: usize,
) -> RobustnessReport {
    let mut specs = vec![PerturbSpec::none()];
    specs.extend(grid.iter().filter(|s| s.kind != PerturbKind::None).copied());
    let results = bounded_map(&specs, max_concurrency, |_, spec| evaluate_cell(manifest, analyzer, spec));

    let mode = Aggregation::Macro;
    let clean = results[0].0.aggregate(mode).filter(|_| results[0].1.is_empty()).map(|s| s.scaled());
    let cells = specs
        .iter()
        .zip(results)
        .map(|(spec, (acc, errors))| {
            let failed = !errors.is_empty();
            let score = if failed { None } else { acc.aggregate(mode).map(|s| s.scaled()) };
            let deg = |f: fn(&SegScore) -> f64| match (clean, score) {
                (Some(c), Some(s)) => degradation(f(&c), f(&s)),
                _ => None,
            };
            RobustnessCell {
                label: spec.to_string(),
                spec: *spec,
                miou: score.map(|s| s.miou),
                f1: score.map(|s| s.f1),
                miou_degradation: deg(|s| s.miou),
                f1_degradation: deg(|s| s.f1),
                images: acc.len(),
                failed,
                errors,
            }
        })
        .collect();
    RobustnessReport {
        schema_version: "1".into(),
        aggregation: mode,
        clean,
        cells,
    }
}

impl RobustnessReport {
    /// Plain-text table: one row per perturbation with mIoU and F1 and the
    /// relative drop from the clean row in parentheses.
    pub fn render_table(&self) -> String {
        let width = self.cells.iter().map(|c| c.label.chars().count()).max().unwrap_or(0).max(12);
        let cell = |v: Option<f64>, d: Option<f64>, clean_row: bool| match (v, d) {
            (None, _) => "failed".to_string(),
            (Some(v), _) if clean_row => format!("{v:.2}"),
            (Some(v), Some(d)) => format!("{v:.2} ({:+.2}%)", -d),
            (Some(v), None) => format!("{v:.2} (n/a)"),
        };
        let mut out = format!("{:<width$}  {:>18}  {:>18}\n", "Perturbation", "mIoU", "F1");
        out.push_str(&format!("{}\n", "-".repeat(width + 40)));
        for (i, c) in self.cells.iter().enumerate() {
            let pad = width - c.label.chars().count();
            out.push_str(&format!(
                "{}{}  {:>18}  {:>18}\n",
                c.label,
                " ".repeat(pad),
                cell(c.miou, c.miou_degradation, i == 0),
                cell(c.f1, c.f1_degradation, i == 0)
            ));
        }
        out
    }
}

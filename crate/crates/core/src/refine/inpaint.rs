//! Region-wise inpainting.
//!
//! Every iteration asks the analyzer for (location, mask, explanation)
//! triplets and replaces each masked region with the inpainter's output.
//! Two compositions are offered:
//!
//! * [`InpaintMode::PaperFaithful`]: every region is inpainted against the
//!   same input image and the patches are composited in report order, so a
//!   later region wins on overlapping pixels.
//! * [`InpaintMode::Sequential`]: each region is inpainted against the image
//!   produced by the previous region.
//!
//! The two agree exactly when the masks are pairwise disjoint.

use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{composite_region, image_name, shape_error, RunAbort, RunStatus, RUN_LOG_SCHEMA_VERSION};
use crate::annotation::{BinaryMask, RleMask};
use crate::backends::{Analyzer, BackendError, BackendSuite, Inpainter, Role, Scorer};
use crate::parallel::bounded_map;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InpaintMode {
    #[default]
    PaperFaithful,
    Sequential,
}

impl std::str::FromStr for InpaintMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper_faithful" => Ok(Self::PaperFaithful),
            "sequential" => Ok(Self::Sequential),
            _ => Err(format!("unknown inpaint mode `{s}` (expected paper_faithful or sequential)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InpaintConfig {
    pub max_iters: usize,
    pub mode: InpaintMode,
    pub seed: u64,
    /// Upper bound on concurrent inpaint calls within one iteration.
    pub max_concurrency: usize,
    /// Keep every raw inpainter output as an image of its own.
    pub persist_regions: bool,
    pub score: bool,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        Self {
            max_iters: 3,
            mode: InpaintMode::PaperFaithful,
            seed: 0,
            max_concurrency: 4,
            persist_regions: false,
            score: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub location: String,
    pub mask: BinaryMask,
    pub explanation: String,
}

/// Analyzer feedback for one image, in report order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegionTripletSet {
    pub triplets: Vec<Triplet>,
}

impl RegionTripletSet {
    /// Builds the set from an analyzer report, checking every mask against `width` x `height`.
    pub fn from_report(report: &crate::backends::AnalyzerReport, width: u32, height: u32) -> Result<Self, String> {
        let masks = report.validate(width, height)?;
        Ok(Self {
            triplets: report
                .regions
                .iter()
                .zip(masks)
                .map(|(r, mask)| Triplet {
                    location: r.location.clone(),
                    mask,
                    explanation: r.explanation.clone(),
                })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn union_mask(&self, width: u32, height: u32) -> BinaryMask {
        BinaryMask::union(width, height, self.triplets.iter().map(|t| &t.mask))
            .expect("masks were checked against the image size")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedTriplet {
    pub location: String,
    pub mask: RleMask,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintStep {
    pub iteration: usize,
    pub input_ref: String,
    pub triplets: Vec<LoggedTriplet>,
    pub region_refs: Vec<String>,
    /// `None` when the iteration found nothing to inpaint.
    pub composed_ref: Option<String>,
    pub changed_pixels: usize,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintRunLog {
    pub schema_version: String,
    pub kind: String,
    pub id: Option<String>,
    pub seed: u64,
    pub config: InpaintConfig,
    pub initial_score: Option<f64>,
    pub iterations: Vec<InpaintStep>,
    pub stopped_early: bool,
    pub status: RunStatus,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct InpaintOutput {
    pub log: InpaintRunLog,
    /// Starting image, every composed image and, when requested, raw region outputs.
    pub images: Vec<(String, RgbImage)>,
    pub final_image: RgbImage,
}

pub type InpaintAbort = RunAbort<InpaintRunLog>;

pub fn region_image_name(iteration: usize, region: usize) -> String {
    format!("iter_{iteration:03}_region_{region:02}.png")
}

/// Applies one triplet set to `image` according to `mode`. Returns the
/// composed image and the raw inpainter output of every region.
pub fn apply_triplets(
    image: &RgbImage,
    set: &RegionTripletSet,
    inpainter: &dyn Inpainter,
    mode: InpaintMode,
    max_concurrency: usize,
    id: Option<&str>,
) -> Result<(RgbImage, Vec<RgbImage>), BackendError> {
    let dims = image.dimensions();
    let checked = |out: RgbImage| {
        if out.dimensions() == dims {
            Ok(out)
        } else {
            Err(shape_error(Role::Inpainter, out.dimensions(), dims))
        }
    };
    let composite = |base: &RgbImage, patch: &RgbImage, mask: &BinaryMask| {
        composite_region(base, patch, mask).expect("dimensions were checked")
    };
    match mode {
        InpaintMode::PaperFaithful => {
            let patches = bounded_map(&set.triplets, max_concurrency, |_, t| {
                inpainter.inpaint(image, &t.mask, &t.explanation, id).and_then(checked)
            })
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
            let mut out = image.clone();
            for (t, patch) in set.triplets.iter().zip(&patches) {
                out = composite(&out, patch, &t.mask);
            }
            Ok((out, patches))
        }
        InpaintMode::Sequential => {
            let mut out = image.clone();
            let mut patches = Vec::with_capacity(set.len());
            for t in &set.triplets {
                let patch = checked(inpainter.inpaint(&out, &t.mask, &t.explanation, id)?)?;
                out = composite(&out, &patch, &t.mask);
                patches.push(patch);
            }
            Ok((out, patches))
        }
    }
}

fn changed_pixels(a: &RgbImage, b: &RgbImage) -> usize {
    a.pixels().zip(b.pixels()).filter(|(p, q)| p != q).count()
}

struct Roles {
    analyzer: Arc<dyn Analyzer>,
    inpainter: Arc<dyn Inpainter>,
    scorer: Option<Arc<dyn Scorer>>,
}

/// Runs up to `config.max_iters` inpainting rounds on `image`.
pub fn run_inpainting(
    image: &RgbImage,
    id: Option<&str>,
    suite: &BackendSuite,
    config: &InpaintConfig,
) -> Result<InpaintOutput, Box<InpaintAbort>> {
    let mut log = InpaintRunLog {
        schema_version: RUN_LOG_SCHEMA_VERSION.into(),
        kind: "inpaint".into(),
        id: id.map(str::to_owned),
        seed: config.seed,
        config: config.clone(),
        initial_score: None,
        iterations: Vec::new(),
        stopped_early: false,
        status: RunStatus::Completed,
        error: None,
    };
    let mut images = vec![(image_name(0), image.clone())];
    let mut current = image.clone();
    match drive(&mut log, &mut images, &mut current, id, suite, config) {
        Ok(()) => Ok(InpaintOutput {
            log,
            images,
            final_image: current,
        }),
        Err(error) => {
            log.status = RunStatus::Aborted;
            log.error = Some(error.to_string());
            Err(Box::new(RunAbort { log, images, error }))
        }
    }
}

fn drive(
    log: &mut InpaintRunLog,
    images: &mut Vec<(String, RgbImage)>,
    current: &mut RgbImage,
    id: Option<&str>,
    suite: &BackendSuite,
    config: &InpaintConfig,
) -> Result<(), BackendError> {
    suite.require(&[Role::Analyzer, Role::Inpainter])?;
    let roles = Roles {
        analyzer: suite.analyzer()?,
        inpainter: suite.inpainter()?,
        scorer: if config.score { suite.scorer.clone() } else { None },
    };
    let (w, h) = current.dimensions();
    let score = |img: &RgbImage| roles.scorer.as_ref().map(|s| s.score(img, None, id)).transpose();
    log.initial_score = score(current)?;

    for t in 0..config.max_iters {
        let report = roles.analyzer.analyze(current, id)?;
        let set = RegionTripletSet::from_report(&report, w, h).map_err(|m| BackendError::protocol(Role::Analyzer, m))?;
        let mut step = InpaintStep {
            iteration: t,
            input_ref: image_name(t),
            triplets: set
                .triplets
                .iter()
                .map(|tr| LoggedTriplet {
                    location: tr.location.clone(),
                    mask: tr.mask.to_rle(),
                    explanation: tr.explanation.clone(),
                })
                .collect(),
            region_refs: Vec::new(),
            composed_ref: None,
            changed_pixels: 0,
            score: None,
        };
        if set.is_empty() {
            log::info!("no regions reported at iteration {t}; stopping");
            log.iterations.push(step);
            log.stopped_early = true;
            break;
        }

        let (next, patches) = apply_triplets(
            current,
            &set,
            roles.inpainter.as_ref(),
            config.mode,
            config.max_concurrency,
            id,
        )?;
        debug_assert!({
            let union = set.union_mask(w, h);
            current
                .enumerate_pixels()
                .all(|(x, y, p)| union.get(x, y) || next.get_pixel(x, y) == p)
        });
        if config.persist_regions {
            for (i, patch) in patches.into_iter().enumerate() {
                let name = region_image_name(t, i);
                step.region_refs.push(name.clone());
                images.push((name, patch));
            }
        }
        step.changed_pixels = changed_pixels(current, &next);
        step.score = score(&next)?;
        let name = image_name(t + 1);
        step.composed_ref = Some(name.clone());
        log.iterations.push(step);
        images.push((name, next.clone()));
        *current = next;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::ConstantFillInpainter;
    use image::Rgb;

    fn triplet(mask: BinaryMask) -> Triplet {
        Triplet {
            location: "l".into(),
            mask,
            explanation: "e".into(),
        }
    }

    #[test]
    fn modes_agree_on_disjoint_masks() {
        let img = RgbImage::from_fn(8, 8, |x, y| Rgb([(x * 30) as u8, (y * 30) as u8, 1]));
        let set = RegionTripletSet {
            triplets: vec![
                triplet(BinaryMask::from_fn(8, 8, |x, y| x < 3 && y < 3).unwrap()),
                triplet(BinaryMask::from_fn(8, 8, |x, y| x > 4 && y > 4).unwrap()),
            ],
        };
        let fill = ConstantFillInpainter { color: [9, 9, 9] };
        let (a, _) = apply_triplets(&img, &set, &fill, InpaintMode::PaperFaithful, 4, None).unwrap();
        let (b, _) = apply_triplets(&img, &set, &fill, InpaintMode::Sequential, 4, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(changed_pixels(&img, &a), 18);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("sequential".parse::<InpaintMode>().unwrap(), InpaintMode::Sequential);
        assert!("parallel".parse::<InpaintMode>().is_err());
    }
}

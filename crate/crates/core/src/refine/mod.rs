//! Analyzer-guided refinement loops: prompt revision with regeneration, and
//! region-wise inpainting.

pub mod inpaint;
pub mod regen;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::annotation::BinaryMask;
use crate::backends::BackendError;

pub use inpaint::{apply_triplets, run_inpainting, InpaintAbort, InpaintConfig, InpaintMode, InpaintOutput, InpaintRunLog, RegionTripletSet};
pub use regen::{revise_step, run_regeneration, MemoryBank, RegenAbort, RegenConfig, RegenOutput, RegenRunLog};

pub const RUN_LOG_SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Aborted,
}

/// A run that hit a backend failure. `log` and `images` hold everything
/// produced up to the failure so the caller can persist them.
#[derive(Debug)]
pub struct RunAbort<L> {
    pub log: L,
    pub images: Vec<(String, RgbImage)>,
    pub error: BackendError,
}

pub fn image_name(iteration: usize) -> String {
    format!("iter_{iteration:03}.png")
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("composite dimension mismatch: base {base:?}, patch {patch:?}, mask {mask:?}")]
pub struct CompositeError {
    pub base: (u32, u32),
    pub patch: (u32, u32),
    pub mask: (u32, u32),
}

/// `patch` where `mask` is set, `base` elsewhere.
pub fn composite_region(base: &RgbImage, patch: &RgbImage, mask: &BinaryMask) -> Result<RgbImage, CompositeError> {
    if base.dimensions() != patch.dimensions() || base.dimensions() != mask.dims() {
        return Err(CompositeError {
            base: base.dimensions(),
            patch: patch.dimensions(),
            mask: mask.dims(),
        });
    }
    let mut out = base.clone();
    for (x, y) in mask.ones() {
        out.put_pixel(x, y, *patch.get_pixel(x, y));
    }
    Ok(out)
}

pub(crate) fn shape_error(role: crate::backends::Role, got: (u32, u32), want: (u32, u32)) -> BackendError {
    BackendError::protocol(role, format!("returned a {}x{} image, expected {}x{}", got.0, got.1, want.0, want.1))
}

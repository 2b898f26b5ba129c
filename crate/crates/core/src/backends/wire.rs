//! JSON bodies of the backend protocol. Images travel as base64 PNG, masks as RLE.

use std::io::Cursor;

use base64::Engine;
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::annotation::RleMask;

pub const PROTOCOL_VERSION: &str = "1";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum WireError {
    #[error("invalid base64 payload: {0}")]
    Base64(String),
    #[error("payload is not a PNG image: {0}")]
    NotPng(String),
}

pub fn encode_png(image: &RgbImage) -> Vec<u8> {
    let mut out = Vec::new();
    image
        .write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    out
}

pub fn encode_image(image: &RgbImage) -> String {
    base64::engine::general_purpose::STANDARD.encode(encode_png(image))
}

pub fn decode_image(payload: &str) -> Result<RgbImage, WireError> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(payload.trim())
        .map_err(|e| WireError::Base64(e.to_string()))?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map(|img| img.into_rgb8())
        .map_err(|e| WireError::NotPng(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeRequest {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

// The analyze response body is `AnalyzerReport` itself.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResponse {
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintRequest {
    pub image: String,
    pub mask: RleMask,
    pub explanation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviseRequest {
    pub prompt: String,
    pub memory: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviseResponse {
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRequest {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionResponse {
    pub text: String,
}

/// Exactly one of `text` / `image` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vector: Vec<f64>,
    pub dim: usize,
    #[serde(default)]
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub roles: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_black_pixel() {
        let img = RgbImage::new(1, 1);
        assert_eq!(decode_image(&encode_image(&img)).unwrap(), img);
    }

    #[test]
    fn truncated_payload() {
        let enc = encode_image(&RgbImage::from_pixel(8, 8, image::Rgb([9, 8, 7])));
        let cut = &enc[..enc.len() / 2];
        // Cut on a 4-char boundary so it is valid base64 of a truncated PNG.
        let cut = &cut[..cut.len() / 4 * 4];
        assert!(matches!(decode_image(cut), Err(WireError::NotPng(_))));
        assert!(matches!(decode_image("@@not base64@@"), Err(WireError::Base64(_))));
        let jpeg_like = base64::engine::general_purpose::STANDARD.encode(b"\xff\xd8\xff\xe0garbage");
        assert!(matches!(decode_image(&jpeg_like), Err(WireError::NotPng(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn image_roundtrip(bytes in proptest::collection::vec(any::<u8>(), 64 * 64 * 3)) {
            let img = RgbImage::from_raw(64, 64, bytes).unwrap();
            let back = decode_image(&encode_image(&img)).unwrap();
            prop_assert_eq!(back.as_raw(), img.as_raw());
        }
    }
}

//! Deterministic synthetic datasets for tests and demos.
//!
//! Each fake entry pairs an artifact image with a clean reference: the
//! reference is a smooth colour ramp, and inside every annotated polygon the
//! artifact image holds the channel-wise complement `255 - ref`. Since no
//! 8-bit value equals its own complement, every annotated pixel differs from
//! the reference, which lets the oracle mocks measure remaining artifacts
//! exactly. Regions of one entry are disjoint and every explanation is unique.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::annotation::{
    AnnotatedImage, ArtifactRegion, ArtifactType, ContentType, DatasetManifest, ImageRef, Label, Polygon,
};
use crate::backends::wire::encode_image;
use crate::rng;

pub const FIXTURE_SIZE: u32 = 48;

const LOCATIONS: [&str; 3] = ["upper band", "middle band", "lower band"];
const DEFECTS: [&str; 6] = [
    "has a malformed outline",
    "casts a shadow in the wrong direction",
    "shows a smeared texture",
    "has an extra limb",
    "floats without support",
    "contains garbled lettering",
];

#[derive(Debug, Clone)]
pub struct Fixture {
    pub entry: AnnotatedImage,
    pub image: RgbImage,
    pub reference: RgbImage,
}

fn reference_image(seed: u64, size: u32) -> RgbImage {
    let a = (rng::keyed(seed, 100) % 4 + 1) as u32;
    let b = (rng::keyed(seed, 101) % 4 + 1) as u32;
    let base = (rng::keyed(seed, 102) % 64) as u32;
    RgbImage::from_fn(size, size, |x, y| {
        Rgb([
            ((base + a * x + y) % 256) as u8,
            ((base + b * y + 2 * x) % 256) as u8,
            ((base * 2 + x + y) % 256) as u8,
        ])
    })
}

/// A convex polygon inside rows `[top, top + band)`.
fn region_polygon(seed: u64, top: f64, band: f64, size: f64) -> Polygon {
    let u = |k: u64| rng::unit_f64(rng::keyed(seed, k));
    let x0 = 2.0 + u(1) * (size * 0.4);
    let w = 8.0 + u(2) * (size * 0.4);
    let y0 = top + 1.0 + u(3) * 2.0;
    let y1 = top + band - 1.0 - u(4) * 2.0;
    if u(5) < 0.5 {
        Polygon::new(vec![[x0, y0], [x0 + w, y0], [x0 + w, y1], [x0, y1]])
    } else {
        Polygon::new(vec![[x0, y1], [x0 + w / 2.0, y0], [x0 + w, y1]])
    }
}

/// Builds `n` fixtures. Every fifth entry (index 4, 9, ...) is real.
pub fn generate(n: usize, seed: u64) -> Vec<Fixture> {
    let size = FIXTURE_SIZE;
    (0..n)
        .map(|i| {
            let key = rng::combine(&[seed, i as u64]);
            let id = format!("fx{i:03}");
            let reference = reference_image(key, size);
            let real = i % 5 == 4;
            let n_regions = if real { 0 } else { 1 + (rng::keyed(key, 7) % 3) as usize };
            let band = f64::from(size) / 3.0;
            let mut regions = Vec::new();
            let mut image = reference.clone();
            for r in 0..n_regions {
                let poly = region_polygon(rng::keyed(key, 20 + r as u64), band * r as f64, band, f64::from(size));
                let artifact_type = ArtifactType::ALL[(i + r) % 3];
                let region = ArtifactRegion {
                    location: LOCATIONS[r].to_owned(),
                    polygons: vec![poly],
                    artifact_type,
                    explanation: format!(
                        "the object in the {} {} [{id}/{r}]",
                        LOCATIONS[r],
                        DEFECTS[(rng::keyed(key, 30 + r as u64) % DEFECTS.len() as u64) as usize]
                    ),
                };
                let mask = region.rasterize(size, size).expect("fixture polygons are valid");
                for (x, y) in mask.ones() {
                    let p = reference.get_pixel(x, y).0;
                    image.put_pixel(x, y, Rgb(p.map(|c| 255 - c)));
                }
                regions.push(region);
            }
            let entry = AnnotatedImage {
                id: id.clone(),
                image: ImageRef::Path(format!("images/{id}.png")),
                width: size,
                height: size,
                label: if real { Label::Real } else { Label::Fake },
                content_type: ContentType::ALL[i % 4],
                regions,
                generator: Some(["sdxl", "flux", "midjourney"][i % 3].to_owned()),
                reference: Some(ImageRef::Path(format!("references/{id}.png"))),
            };
            Fixture {
                entry,
                image,
                reference,
            }
        })
        .collect()
}

/// A manifest whose images are embedded as base64 PNG.
pub fn inline_manifest(n: usize, seed: u64) -> DatasetManifest {
    DatasetManifest::new(
        generate(n, seed)
            .into_iter()
            .map(|f| AnnotatedImage {
                image: ImageRef::Inline {
                    png_base64: encode_image(&f.image),
                },
                reference: Some(ImageRef::Inline {
                    png_base64: encode_image(&f.reference),
                }),
                ..f.entry
            })
            .collect(),
    )
}

/// Writes `manifest.jsonl`, `images/` and `references/` under `dir` and
/// returns the loaded manifest.
pub fn write_dataset(dir: &Path, n: usize, seed: u64) -> std::io::Result<DatasetManifest> {
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("references"))?;
    let fixtures = generate(n, seed);
    let save = |img: &RgbImage, rel: &str| img.save(dir.join(rel)).map_err(std::io::Error::other);
    for f in &fixtures {
        save(&f.image, &format!("images/{}.png", f.entry.id))?;
        save(&f.reference, &format!("references/{}.png", f.entry.id))?;
    }
    let mut manifest = DatasetManifest::new(fixtures.into_iter().map(|f| f.entry).collect());
    manifest.base_dir = dir.to_owned();
    manifest.save(&dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// Corrupted variants of a valid manifest line set, each breaking exactly
/// one invariant. Yields `(name, jsonl, expected violation)` where the
/// violation is the human-readable kind reported by validation.
pub fn corruptions(manifest: &DatasetManifest) -> Vec<(&'static str, String, &'static str)> {
    let lines: Vec<serde_json::Value> = manifest
        .entries
        .iter()
        .map(|e| serde_json::to_value(e).expect("entries serialize"))
        .collect();
    let fake = manifest
        .entries
        .iter()
        .position(|e| !e.regions.is_empty())
        .expect("manifest has a fake entry");
    let real = manifest
        .entries
        .iter()
        .position(|e| e.label == Label::Real)
        .expect("manifest has a real entry");
    let join = |ls: &[serde_json::Value]| ls.iter().map(|l| l.to_string() + "\n").collect::<String>();
    let with = |f: &dyn Fn(&mut Vec<serde_json::Value>)| {
        let mut ls = lines.clone();
        f(&mut ls);
        join(&ls)
    };
    vec![
        (
            "unknown_artifact_type",
            with(&|ls| ls[fake]["regions"][0]["artifact_type"] = "texture".into()),
            "unknown artifact type",
        ),
        (
            "real_with_regions",
            with(&|ls| ls[real]["regions"] = ls[fake]["regions"].clone()),
            "real image has regions",
        ),
        (
            "duplicate_id",
            with(&|ls| {
                let dup = ls[fake].clone();
                ls.push(dup);
            }),
            "duplicate id",
        ),
        (
            "degenerate_polygon",
            with(&|ls| {
                let p = &mut ls[fake]["regions"][0]["polygons"][0];
                let first_two: Vec<serde_json::Value> = p.as_array().unwrap()[..2].to_vec();
                *p = first_two.into();
            }),
            "degenerate polygon",
        ),
        (
            "empty_explanation",
            with(&|ls| ls[fake]["regions"][0]["explanation"] = "  ".into()),
            "empty explanation",
        ),
        (
            "missing_label",
            with(&|ls| {
                ls[fake].as_object_mut().unwrap().remove("label");
            }),
            "schema error",
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::validate_manifest;
    use std::io::Cursor;

    #[test]
    fn deterministic_and_valid() {
        let a = inline_manifest(10, 3);
        let b = inline_manifest(10, 3);
        assert_eq!(a.entries, b.entries);
        assert!(validate_manifest(&a).is_valid());
        assert_eq!(a.entries.iter().filter(|e| e.label == Label::Real).count(), 2);
    }

    #[test]
    fn artifacts_differ_exactly_on_regions() {
        for f in generate(10, 1) {
            let gt = f.entry.ground_truth_mask().unwrap();
            assert!(gt.area() > 0 || f.entry.label == Label::Real);
            for (x, y, p) in f.image.enumerate_pixels() {
                assert_eq!(gt.get(x, y), p != f.reference.get_pixel(x, y));
            }
        }
    }

    #[test]
    fn explanations_unique_and_not_nested() {
        let all: Vec<String> = generate(20, 0)
            .into_iter()
            .flat_map(|f| f.entry.regions.into_iter().map(|r| r.explanation))
            .collect();
        for (i, a) in all.iter().enumerate() {
            for (j, b) in all.iter().enumerate() {
                assert!(i == j || !a.contains(b.as_str()));
            }
        }
    }

    #[test]
    fn each_corruption_is_caught() {
        let m = inline_manifest(5, 0);
        for (name, text, expected) in corruptions(&m) {
            let loaded = DatasetManifest::from_reader(Cursor::new(text)).unwrap();
            let report = validate_manifest(&loaded);
            assert!(
                report.violations.iter().any(|v| v.violation == expected),
                "{name}: {:?}",
                report.violations
            );
        }
    }
}

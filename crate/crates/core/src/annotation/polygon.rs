//! Polygon annotations and pixel-center scanline rasterization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::mask::{BinaryMask, CodecError};

#[derive(Debug, Error, PartialEq)]
pub enum PolygonError {
    #[error("polygon has {0} vertices, at least 3 are required")]
    TooFewVertices(usize),
    #[error("polygon vertex {index} has a non-finite coordinate ({x}, {y})")]
    NonFinite { index: usize, x: f64, y: f64 },
    #[error(transparent)]
    Mask(#[from] CodecError),
}

/// Vertices in pixel units; origin top-left, x rightward, y downward.
/// Serialized as a list of `[x, y]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polygon {
    pub vertices: Vec<[f64; 2]>,
}

impl Polygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Self {
        Self { vertices }
    }

    pub fn validate(&self) -> Result<(), PolygonError> {
        if self.vertices.len() < 3 {
            return Err(PolygonError::TooFewVertices(self.vertices.len()));
        }
        for (index, &[x, y]) in self.vertices.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() {
                return Err(PolygonError::NonFinite { index, x, y });
            }
        }
        Ok(())
    }

    /// True if any vertex lies outside `[0, width] x [0, height]`.
    pub fn out_of_bounds(&self, width: u32, height: u32) -> bool {
        self.vertices.iter().any(|&[x, y]| {
            x < 0.0 || y < 0.0 || x > f64::from(width) || y > f64::from(height)
        })
    }

    pub fn clamp_to(&mut self, width: u32, height: u32) {
        for v in &mut self.vertices {
            v[0] = v[0].clamp(0.0, f64::from(width));
            v[1] = v[1].clamp(0.0, f64::from(height));
        }
    }

    /// Absolute shoelace area.
    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        let twice: f64 = (0..n)
            .map(|i| {
                let [x0, y0] = self.vertices[i];
                let [x1, y1] = self.vertices[(i + 1) % n];
                x0 * y1 - x1 * y0
            })
            .sum();
        twice.abs() / 2.0
    }

    pub fn perimeter(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let [x0, y0] = self.vertices[i];
                let [x1, y1] = self.vertices[(i + 1) % n];
                (x1 - x0).hypot(y1 - y0)
            })
            .sum()
    }
}

/// Fills every pixel whose center lies inside `polygon` under the even-odd rule.
///
/// An edge crosses the scanline at `y` when exactly one endpoint lies strictly
/// below it, which treats each edge as half-open and avoids double counting at
/// shared vertices.
pub fn rasterize_polygon(polygon: &Polygon, width: u32, height: u32) -> Result<BinaryMask, PolygonError> {
    polygon.validate()?;
    let mut mask = BinaryMask::new(width, height)?;
    fill_polygon(&mut mask, polygon);
    Ok(mask)
}

/// Rasterizes each polygon independently and ORs the results.
pub fn rasterize_polygons(polygons: &[Polygon], width: u32, height: u32) -> Result<BinaryMask, PolygonError> {
    let mut mask = BinaryMask::new(width, height)?;
    for p in polygons {
        p.validate()?;
        fill_polygon(&mut mask, p);
    }
    Ok(mask)
}

fn fill_polygon(mask: &mut BinaryMask, polygon: &Polygon) {
    let (width, height) = mask.dims();
    let v = &polygon.vertices;
    let n = v.len();
    let mut crossings: Vec<f64> = Vec::with_capacity(n);
    for row in 0..height {
        let cy = f64::from(row) + 0.5;
        crossings.clear();
        for i in 0..n {
            let [xi, yi] = v[i];
            let [xj, yj] = v[(i + n - 1) % n];
            if (yi > cy) != (yj > cy) {
                crossings.push((xj - xi) * (cy - yi) / (yj - yi) + xi);
            }
        }
        crossings.sort_by(f64::total_cmp);
        // A center is inside iff an odd number of crossings lie at or left of it,
        // i.e. x[2k] <= cx < x[2k+1].
        for pair in crossings.chunks_exact(2) {
            let (x0, x1) = (pair[0], pair[1]);
            // smallest column with center >= x0, first column with center >= x1
            let start = (x0 - 0.5).ceil().max(0.0);
            let end = (x1 - 0.5).ceil().min(f64::from(width));
            if end <= start {
                continue;
            }
            for col in start as u32..end as u32 {
                mask.set(col, row, true);
            }
        }
    }
}

//! Rectangle arithmetic, Jaccard overlap, candidate labeling and mask coverage.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Overlap a candidate must strictly exceed to be labeled positive.
pub const POSITIVE_OVERLAP: f64 = 0.5;

/// Axis-aligned box in pixel coordinates: left edge, top edge, width, height.
///
/// Width and height are always finite and strictly positive. Serialized as a
/// `[x, y, w, h]` array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let valid = x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite();
        if !valid || w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBox { x, y, w, h });
        }
        Ok(Self { x, y, w, h })
    }

    /// Box from its center point and size.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    #[inline]
    pub fn x(&self) -> f64 {
        self.x
    }

    #[inline]
    pub fn y(&self) -> f64 {
        self.y
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.w
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.h
    }

    #[inline]
    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Width over height.
    pub fn aspect_ratio(&self) -> f64 {
        self.w / self.h
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from([x, y, w, h]: [f64; 4]) -> Result<Self> {
        Self::new(x, y, w, h)
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x, self.y, self.w, self.h)
    }
}

/// Intersection over union of two boxes.
pub fn jaccard(a: &BoundingBox, b: &BoundingBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Annotation category vocabulary of the Caltech benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "person")]
    Person,
    /// A large group of individuals.
    #[serde(rename = "people")]
    People,
    /// Unclear identification, written `person?`.
    #[serde(rename = "person?")]
    PersonUnclear,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Person => "person",
            Category::People => "people",
            Category::PersonUnclear => "person?",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A labeled ground-truth box.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthAnnotation {
    pub frame_id: String,
    pub bbox: BoundingBox,
    pub category: Category,
    visible_box: Option<BoundingBox>,
    occlusion: f64,
}

impl GroundTruthAnnotation {
    /// Fully visible annotation.
    pub fn new(frame_id: impl Into<String>, bbox: BoundingBox, category: Category) -> Self {
        Self {
            frame_id: frame_id.into(),
            bbox,
            category,
            visible_box: None,
            occlusion: 0.0,
        }
    }

    /// Attaches a visible-region box; occlusion becomes `1 - area(visible) / area(box)`,
    /// clamped to `[0, 1]`.
    pub fn with_visible_box(mut self, visible: BoundingBox) -> Result<Self> {
        if jaccard(&visible, &self.bbox) <= 0.0 {
            return Err(Error::DisjointVisibleBox);
        }
        self.occlusion = (1.0 - visible.area() / self.bbox.area()).clamp(0.0, 1.0);
        self.visible_box = Some(visible);
        Ok(self)
    }

    /// Sets an explicit occlusion fraction and drops any visible box.
    pub fn with_occlusion(mut self, occlusion: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&occlusion) {
            return Err(Error::OutOfDomain {
                name: "occlusion",
                value: occlusion,
                domain: "[0, 1]",
            });
        }
        self.visible_box = None;
        self.occlusion = occlusion;
        Ok(self)
    }

    pub fn visible_box(&self) -> Option<&BoundingBox> {
        self.visible_box.as_ref()
    }

    pub fn occlusion_fraction(&self) -> f64 {
        self.occlusion
    }

    /// Full (not visible) box height.
    pub fn height(&self) -> f64 {
        self.bbox.height()
    }
}

/// Positive/negative labels: a candidate is positive iff its best Jaccard
/// overlap with any ground-truth box is strictly greater than 0.5.
pub fn label_candidates(candidates: &[BoundingBox], gt: &[GroundTruthAnnotation]) -> Vec<bool> {
    candidates
        .iter()
        .map(|c| gt.iter().any(|g| jaccard(c, &g.bbox) > POSITIVE_OVERLAP))
        .collect()
}

/// Binary per-frame raster: `true` marks a pedestrian pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    pub frame_id: String,
    width: usize,
    height: usize,
    pixels: Vec<bool>,
}

impl SegmentationMask {
    /// Row-major raster of exactly `width * height` pixels.
    pub fn new(frame_id: impl Into<String>, width: usize, height: usize, pixels: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::MaskDimensions {
                width,
                height,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            frame_id: frame_id.into(),
            width,
            height,
            pixels,
        })
    }

    pub fn filled(frame_id: impl Into<String>, width: usize, height: usize, value: bool) -> Result<Self> {
        Self::new(frame_id, width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    pub fn get(&self, col: usize, row: usize) -> bool {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, value: bool) {
        self.pixels[row * self.width + col] = value;
    }

    pub fn pedestrian_pixels(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    /// Column and row index ranges of pixels whose centers fall inside `bbox`,
    /// clipped to the raster.
    pub fn pixel_span(&self, bbox: &BoundingBox) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        (
            center_span(bbox.x(), bbox.width(), self.width),
            center_span(bbox.y(), bbox.height(), self.height),
        )
    }

    /// Fraction of the box's pixels that are pedestrian pixels.
    ///
    /// A pixel `(i, j)` belongs to the box when its center `(i + 0.5, j + 0.5)`
    /// lies in `[x, x + w) x [y, y + h)`. The box is clipped to the raster; a
    /// box containing no pixel centers has coverage 0.
    pub fn coverage(&self, bbox: &BoundingBox) -> f64 {
        let (cols, rows) = self.pixel_span(bbox);
        let total = cols.len() * rows.len();
        if total == 0 {
            return 0.0;
        }
        let hits: usize = rows
            .map(|r| {
                let row = &self.pixels[r * self.width..(r + 1) * self.width];
                row[cols.clone()].iter().filter(|&&p| p).count()
            })
            .sum();
        hits as f64 / total as f64
    }
}

fn center_span(start: f64, len: f64, limit: usize) -> std::ops::Range<usize> {
    let clip = |v: f64| v.max(0.0).min(limit as f64) as usize;
    let lo = clip((start - 0.5).ceil());
    let hi = clip((start + len - 0.5).ceil());
    lo..hi.max(lo)
}

/// Coverage of `bbox` by `mask`, checking that the mask belongs to `frame_id`.
pub fn mask_coverage(frame_id: &str, bbox: &BoundingBox, mask: &SegmentationMask) -> Result<f64> {
    if mask.frame_id != frame_id {
        return Err(Error::FrameMismatch {
            expected: frame_id.to_string(),
            mask: mask.frame_id.clone(),
        });
    }
    Ok(mask.coverage(bbox))
}

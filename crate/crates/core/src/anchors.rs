//! Default-box (anchor) layout for the seven-layer single-shot candidate generator.

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// Number of output layers and of default boxes per grid cell.
pub const NUM_LAYERS: usize = 7;
pub const BOXES_PER_CELL: usize = 7;

/// One default-box shape: its numeric aspect ratio (w/h) and which height
/// table it draws from.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorShape {
    pub name: &'static str,
    pub ratio: f64,
    pub alt_heights: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorConfig {
    pub shapes: [AnchorShape; BOXES_PER_CELL],
    /// Per-layer heights relative to image height.
    pub heights_main: [f64; NUM_LAYERS],
    /// Per-layer heights used by shapes with `alt_heights` set.
    pub heights_alt: [f64; NUM_LAYERS],
    pub image_w: f64,
    pub image_h: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        let shape = |name, ratio, alt_heights| AnchorShape {
            name,
            ratio,
            alt_heights,
        };
        Self {
            shapes: [
                shape("0.1", 0.1, false),
                shape("0.2", 0.2, false),
                shape("0.41a", 0.41, false),
                shape("0.41b", 0.41, true),
                shape("0.8", 0.8, false),
                shape("1.6", 1.6, false),
                shape("3.0", 3.0, false),
            ],
            heights_main: [0.05, 0.1, 0.24, 0.38, 0.52, 0.66, 0.80],
            heights_alt: [0.1, 0.24, 0.38, 0.52, 0.66, 0.80, 0.94],
            image_w: 640.0,
            image_h: 480.0,
        }
    }
}

impl AnchorConfig {
    pub fn with_image_size(mut self, width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "image size must be positive, got {width}x{height}"
            )));
        }
        self.image_w = width;
        self.image_h = height;
        Ok(self)
    }

    /// Absolute box height in pixels for `shape` on layer `layer_index`.
    pub fn box_height(&self, shape: &AnchorShape, layer_index: usize) -> f64 {
        let table = if shape.alt_heights {
            &self.heights_alt
        } else {
            &self.heights_main
        };
        table[layer_index] * self.image_h
    }
}

/// Feature-map grid of one output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    grid_w: usize,
    grid_h: usize,
    layer_index: usize,
}

impl LayerSpec {
    pub fn new(grid_w: usize, grid_h: usize, layer_index: usize) -> Result<Self> {
        if grid_w == 0 || grid_h == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid must be at least 1x1, got {grid_w}x{grid_h}"
            )));
        }
        if layer_index >= NUM_LAYERS {
            return Err(Error::InvalidParameter(format!(
                "layer index {layer_index} outside 0..{NUM_LAYERS}"
            )));
        }
        Ok(Self {
            grid_w,
            grid_h,
            layer_index,
        })
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }
}

/// A default box together with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DefaultBox {
    pub col: usize,
    pub row: usize,
    pub shape_index: usize,
    pub bbox: BoundingBox,
}

/// Full layout of a layer, row-major over cells, shapes in configured order
/// within a cell. Boxes are not clipped to the image.
pub fn default_box_layout(layer: LayerSpec, config: &AnchorConfig) -> Vec<DefaultBox> {
    let sizes: Vec<(f64, f64)> = config
        .shapes
        .iter()
        .map(|s| {
            let h = config.box_height(s, layer.layer_index);
            (s.ratio * h, h)
        })
        .collect();

    let mut out = Vec::with_capacity(layer.grid_w * layer.grid_h * BOXES_PER_CELL);
    for row in 0..layer.grid_h {
        let cy = (row as f64 + 0.5) / layer.grid_h as f64 * config.image_h;
        for col in 0..layer.grid_w {
            let cx = (col as f64 + 0.5) / layer.grid_w as f64 * config.image_w;
            for (shape_index, &(w, h)) in sizes.iter().enumerate() {
                let bbox =
                    BoundingBox::from_center(cx, cy, w, h).expect("anchor config yields positive sizes");
                out.push(DefaultBox {
                    col,
                    row,
                    shape_index,
                    bbox,
                });
            }
        }
    }
    out
}

pub fn generate_default_boxes(layer: LayerSpec, config: &AnchorConfig) -> Vec<BoundingBox> {
    default_box_layout(layer, config)
        .into_iter()
        .map(|d| d.bbox)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_cell_is_centered() {
        let boxes = generate_default_boxes(LayerSpec::new(1, 1, 0).unwrap(), &AnchorConfig::default());
        assert_eq!(boxes.len(), 7);
        for b in &boxes {
            let (cx, cy) = b.center();
            assert!((cx - 320.0).abs() < 1e-9 && (cy - 240.0).abs() < 1e-9);
        }
    }

    #[test]
    fn count_for_38x38() {
        let boxes = generate_default_boxes(LayerSpec::new(38, 38, 0).unwrap(), &AnchorConfig::default());
        assert_eq!(boxes.len(), 10108);
    }

    #[test]
    fn alt_height_shape_on_first_layer() {
        let layout = default_box_layout(LayerSpec::new(1, 1, 0).unwrap(), &AnchorConfig::default());
        let b = &layout[3].bbox;
        assert_eq!(AnchorConfig::default().shapes[3].name, "0.41b");
        assert!((b.height() - 48.0).abs() < 1e-9);
        assert!((b.width() - 19.68).abs() < 1e-9);
        // 0.41a uses the main table: 0.05 * 480
        assert!((layout[2].bbox.height() - 24.0).abs() < 1e-9);
    }

    #[test]
    fn mean_of_041_variants_is_041() {
        let cfg = AnchorConfig::default();
        let mean = (cfg.shapes[2].ratio + cfg.shapes[3].ratio) / 2.0;
        assert!((mean - 0.41).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_layers() {
        assert!(LayerSpec::new(0, 3, 0).is_err());
        assert!(LayerSpec::new(3, 3, 7).is_err());
        assert!(AnchorConfig::default().with_image_size(0.0, 10.0).is_err());
    }

    proptest! {
        #[test]
        fn counts_and_ratios(gw in 1usize..20, gh in 1usize..20, layer in 0usize..7,
                             iw in 32.0..2000.0f64, ih in 32.0..2000.0f64) {
            let cfg = AnchorConfig::default().with_image_size(iw, ih).unwrap();
            let layout = default_box_layout(LayerSpec::new(gw, gh, layer).unwrap(), &cfg);
            prop_assert_eq!(layout.len(), gw * gh * 7);
            for d in &layout {
                let expected = cfg.shapes[d.shape_index].ratio;
                prop_assert!((d.bbox.aspect_ratio() - expected).abs() < 1e-9);
            }
        }
    }
}

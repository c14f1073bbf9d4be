use std::ops::Range;

use ndarray::{s, Array3};
use serde::{Deserialize, Serialize};

use crate::datamodel::{Mask, MaskedRGB};
use crate::error::{Error, Result};

/// Outpainting canvas: an H×2H grid whose centred H×H square is known and
/// whose H/2-wide side strips are to be filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub height: usize,
    pub width: usize,
}

impl Layout {
    pub const STANDARD: Layout = Layout { height: 256, width: 512 };
    pub const REDUCED: Layout = Layout { height: 128, width: 256 };

    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || height % 2 != 0 || width != 2 * height {
            return Err(Error::InvalidInput(format!(
                "layout must be H x 2H with even H, got {height}x{width}"
            )));
        }
        Ok(Layout { height, width })
    }

    pub fn known_cols(&self) -> Range<usize> {
        self.width / 4..3 * self.width / 4
    }

    pub fn known_mask(&self) -> Mask {
        let cols = self.known_cols();
        Mask::from_fn(self.height, self.width, |_, j| cols.contains(&j))
    }

    /// Zeroes `full` outside the known square.
    pub fn apply(&self, full: &Array3<f32>) -> Result<MaskedRGB> {
        if full.dim() != (3, self.height, self.width) {
            return Err(Error::ShapeMismatch(format!(
                "expected 3x{}x{} image, got {:?}",
                self.height,
                self.width,
                full.dim()
            )));
        }
        let cols = self.known_cols();
        let mut rgb = Array3::zeros(full.dim());
        rgb.slice_mut(s![.., .., cols.clone()]).assign(&full.slice(s![.., .., cols]));
        MaskedRGB::new(rgb, self.known_mask())
    }
}

/// Standard 256×512 layout with the centre 256×256 square known.
pub fn make_layout(full: &Array3<f32>) -> Result<MaskedRGB> {
    Layout::STANDARD.apply(full)
}

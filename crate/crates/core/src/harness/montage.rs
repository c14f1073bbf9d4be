use std::path::Path;

use ndarray::{s, Array3};

use crate::datamodel::Mask;
use crate::error::{Error, Result};
use crate::ingestion::io::{load_rgb_png, save_rgb_png};

pub const GAP: usize = 2;
pub const PANEL_FILES: [&str; 4] = ["input.png", "pred.png", "gt.png", "edges.png"];

/// White-on-black rendering of a binary map.
pub fn mask_image(m: &Mask) -> Array3<f32> {
    let (h, w) = m.dim();
    Array3::from_shape_fn((3, h, w), |(_, i, j)| if m.get(i, j) { 1.0 } else { 0.0 })
}

/// Tiles panels row by row with a gray gutter; all panels share one size.
pub fn montage(rows: &[Vec<Array3<f32>>]) -> Result<Array3<f32>> {
    let first = rows
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| Error::InvalidInput("montage needs at least one panel".into()))?;
    let (_, h, w) = first.dim();
    let ncols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let out_h = rows.len() * h + (rows.len() - 1) * GAP;
    let out_w = ncols * w + (ncols - 1) * GAP;
    let mut out = Array3::from_elem((3, out_h, out_w), 0.5f32);
    for (r, row) in rows.iter().enumerate() {
        for (c, panel) in row.iter().enumerate() {
            if panel.dim() != (3, h, w) {
                return Err(Error::ShapeMismatch(format!("panel {:?} vs {:?}", panel.dim(), (3, h, w))));
            }
            let (y, x) = (r * (h + GAP), c * (w + GAP));
            out.slice_mut(s![.., y..y + h, x..x + w]).assign(panel);
        }
    }
    Ok(out)
}

/// One row per inference directory: input, prediction, ground truth, edges.
pub fn montage_dirs(dirs: &[&Path], out: &Path) -> Result<()> {
    let rows = dirs
        .iter()
        .map(|d| PANEL_FILES.iter().map(|f| load_rgb_png(&d.join(f))).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    save_rgb_png(&montage(&rows)?, out)
}

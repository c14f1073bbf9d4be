//! Samples: LiDAR projection, the outpainting layout, synthetic scenes and
//! the on-disk format.

pub mod camera;
pub mod io;
pub mod layout;
pub mod synth;

use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::datamodel::{validate_pair, MaskedRGB, SparseDepthMap};
use crate::error::{Error, Result};

pub use camera::{project_points, CameraIntrinsics, PointCloud, Projection, NEAR_PLANE};
pub use io::{load_sample, save_sample};
pub use layout::{make_layout, Layout};
pub use synth::{render_scene, synth_scene, synth_scene_with, Scene, DEFAULT_SPARSITY};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub seed: u64,
    pub sparsity: f64,
    pub intrinsics: CameraIntrinsics,
}

/// Ground truth, masked input and sparse depth on one layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub full_rgb: Array3<f32>,
    pub input_rgb: MaskedRGB,
    pub depth: SparseDepthMap,
    pub meta: SampleMeta,
}

impl Sample {
    pub fn layout(&self) -> Result<Layout> {
        let (h, w) = self.input_rgb.dim();
        Layout::new(h, w)
    }

    pub fn validate(&self) -> Result<()> {
        validate_pair(&self.depth, &self.input_rgb)?;
        let layout = self.layout()?;
        if self.input_rgb.mask() != &layout.known_mask() {
            return Err(Error::Inconsistent("known region is not the centred square".into()));
        }
        if self.full_rgb.dim() != self.input_rgb.rgb().dim() {
            return Err(Error::ShapeMismatch(format!(
                "ground truth {:?} vs input {:?}",
                self.full_rgb.dim(),
                self.input_rgb.rgb().dim()
            )));
        }
        if self.full_rgb.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput("ground truth outside [0, 1]".into()));
        }
        let m = self.input_rgb.mask();
        let mut consistent = true;
        Zip::indexed(&self.full_rgb).and(self.input_rgb.rgb()).for_each(|(_, i, j), &f, &r| {
            let expect = if m.get(i, j) { f } else { 0.0 };
            consistent &= expect == r;
        });
        if !consistent {
            return Err(Error::Inconsistent("input rgb differs from masked ground truth".into()));
        }
        let valid = self.depth.mask();
        let inside = valid.and(m)?.count();
        let outside = valid.count() - inside;
        if inside == 0 || outside == 0 {
            return Err(Error::Inconsistent(format!(
                "depth needs valid pixels on both sides of the known region ({inside} inside, {outside} outside)"
            )));
        }
        Ok(())
    }

    /// Ground truth in network precision.
    pub fn target<T: crate::Real>(&self) -> Array3<T> {
        self.full_rgb.mapv(|v| T::of(v as f64))
    }
}

//! Value types shared by every stage: binary masks, the two network inputs,
//! feature maps and the loss weighting.

use ndarray::{s, Array2, Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Binary H×W grid. Values are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask(Array2<u8>);

impl Mask {
    pub fn zeros(h: usize, w: usize) -> Self {
        Mask(Array2::zeros((h, w)))
    }

    pub fn ones(h: usize, w: usize) -> Self {
        Mask(Array2::ones((h, w)))
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        Mask(Array2::from_shape_fn((h, w), |(i, j)| f(i, j) as u8))
    }

    /// Wraps a grid, rejecting any value other than 0 or 1.
    pub fn from_array(a: Array2<u8>) -> Result<Self> {
        if a.iter().any(|&v| v > 1) {
            return Err(Error::InvalidInput("mask values must be 0 or 1".into()));
        }
        Ok(Mask(a))
    }

    /// Builds a mask from real values, rejecting anything not exactly 0 or 1.
    pub fn from_real<T: Real>(a: &Array2<T>) -> Result<Self> {
        let mut out = Array2::zeros(a.dim());
        for (o, &v) in out.iter_mut().zip(a.iter()) {
            if v == T::one() {
                *o = 1;
            } else if v != T::zero() {
                return Err(Error::InvalidInput(format!("non-binary mask value {v}")));
            }
        }
        Ok(Mask(out))
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.0[[i, j]] != 0
    }

    pub fn count(&self) -> usize {
        self.0.iter().map(|&v| v as usize).sum()
    }

    pub fn view(&self) -> ndarray::ArrayView2<'_, u8> {
        self.0.view()
    }

    pub fn to_real<T: Real>(&self) -> Array2<T> {
        self.0.mapv(|v| if v != 0 { T::one() } else { T::zero() })
    }

    /// Pointwise complement `1 - m`.
    pub fn complement(&self) -> Mask {
        Mask(self.0.mapv(|v| 1 - v))
    }

    /// Pointwise product `m1 ⊙ m2`.
    pub fn and(&self, other: &Mask) -> Result<Mask> {
        if self.dim() != other.dim() {
            return Err(Error::ShapeMismatch(format!(
                "mask {:?} vs {:?}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(Mask(&self.0 * &other.0))
    }

    /// True when `self >= other` at every pixel.
    pub fn covers(&self, other: &Mask) -> bool {
        self.dim() == other.dim() && Zip::from(&self.0).and(&other.0).all(|&a, &b| a >= b)
    }

    /// Bounding box `(row0, row1, col0, col1)` (half-open) of the ones, if any.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let (h, w) = self.dim();
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for i in 0..h {
            for j in 0..w {
                if self.get(i, j) {
                    bb = Some(match bb {
                        None => (i, i + 1, j, j + 1),
                        Some((r0, r1, c0, c1)) => (r0.min(i), r1.max(i + 1), c0.min(j), c1.max(j + 1)),
                    });
                }
            }
        }
        bb
    }

    /// Whether the ones form a single axis-aligned rectangle (the empty mask counts).
    pub fn is_rectangle(&self) -> bool {
        match self.bounding_box() {
            None => true,
            Some((r0, r1, c0, c1)) => self.count() == (r1 - r0) * (c1 - c0),
        }
    }
}

/// Nearest-neighbour downsampling by `2^level`.
pub fn downsample_mask(mask: &Mask, level: u32) -> Result<Mask> {
    if level == 0 {
        return Ok(mask.clone());
    }
    let f = 1usize << level;
    let (h, w) = mask.dim();
    if h % f != 0 || w % f != 0 {
        return Err(Error::InvalidInput(format!(
            "mask {h}x{w} not divisible by 2^{level}"
        )));
    }
    Ok(Mask(mask.0.slice(s![..;f, ..;f]).to_owned()))
}

/// Single-channel metric depth grid with its LiDAR validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepthMap {
    depth: Array2<f32>,
    mask: Mask,
}

impl SparseDepthMap {
    pub fn new(depth: Array2<f32>, mask: Mask) -> Result<Self> {
        let d = SparseDepthMap { depth, mask };
        d.validate()?;
        Ok(d)
    }

    /// Derives the mask from `depth > 0`.
    pub fn from_depth(depth: Array2<f32>) -> Result<Self> {
        let (h, w) = depth.dim();
        let mask = Mask::from_fn(h, w, |i, j| depth[[i, j]] > 0.0);
        Self::new(depth, mask)
    }

    /// Skips validation. Callers must run [`validate_pair`] or
    /// [`SparseDepthMap::validate`] before use.
    pub fn from_parts_unchecked(depth: Array2<f32>, mask: Mask) -> Self {
        SparseDepthMap { depth, mask }
    }

    pub fn empty(h: usize, w: usize) -> Self {
        SparseDepthMap { depth: Array2::zeros((h, w)), mask: Mask::zeros(h, w) }
    }

    pub fn depth(&self) -> &Array2<f32> {
        &self.depth
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn dim(&self) -> (usize, usize) {
        self.depth.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth.dim() != self.mask.dim() {
            return Err(Error::ShapeMismatch(format!(
                "depth {:?} vs mask {:?}",
                self.depth.dim(),
                self.mask.dim()
            )));
        }
        for ((i, j), &v) in self.depth.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("depth at ({i}, {j})")));
            }
            if v < 0.0 {
                return Err(Error::InvalidInput(format!("negative depth {v} at ({i}, {j})")));
            }
            if !self.mask.get(i, j) && v != 0.0 {
                return Err(Error::Inconsistent(format!(
                    "depth {v} at masked-out pixel ({i}, {j})"
                )));
            }
        }
        Ok(())
    }
}

/// RGB image in [0, 1] with the known-region mask; zero outside the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedRGB {
    rgb: Array3<f32>,
    mask: Mask,
}

impl MaskedRGB {
    pub fn new(rgb: Array3<f32>, mask: Mask) -> Result<Self> {
        let r = MaskedRGB { rgb, mask };
        r.validate()?;
        Ok(r)
    }

    /// Skips validation; see [`SparseDepthMap::from_parts_unchecked`].
    pub fn from_parts_unchecked(rgb: Array3<f32>, mask: Mask) -> Self {
        MaskedRGB { rgb, mask }
    }

    pub fn rgb(&self) -> &Array3<f32> {
        &self.rgb
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn dim(&self) -> (usize, usize) {
        self.mask.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.rgb.dim();
        if c != 3 {
            return Err(Error::ShapeMismatch(format!("rgb has {c} channels, expected 3")));
        }
        if (h, w) != self.mask.dim() {
            return Err(Error::ShapeMismatch(format!(
                "rgb {h}x{w} vs mask {:?}",
                self.mask.dim()
            )));
        }
        if !self.mask.is_rectangle() {
            return Err(Error::InvalidInput("known-region mask is not a rectangle".into()));
        }
        for ((ch, i, j), &v) in self.rgb.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("rgb at ({ch}, {i}, {j})")));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("rgb value {v} outside [0, 1]")));
            }
            if !self.mask.get(i, j) && v != 0.0 {
                return Err(Error::Inconsistent(format!(
                    "rgb {v} at masked-out pixel ({ch}, {i}, {j})"
                )));
            }
        }
        Ok(())
    }
}

/// Checks that a depth map and a masked image share a grid and are each well formed.
pub fn validate_pair(d: &SparseDepthMap, r: &MaskedRGB) -> Result<()> {
    if d.dim() != r.dim() {
        return Err(Error::ShapeMismatch(format!(
            "depth {:?} vs rgb {:?}",
            d.dim(),
            r.dim()
        )));
    }
    d.validate()?;
    r.validate()
}

/// C×H×W feature grid tagged with how many 2× reductions produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub data: Array3<T>,
    pub scale_level: u32,
}

impl<T: Real> FeatureMap<T> {
    pub fn new(data: Array3<T>, scale_level: u32) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::ShapeMismatch(format!("empty feature map {c}x{h}x{w}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature map at level {scale_level}")));
        }
        Ok(FeatureMap { data, scale_level })
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn spatial(&self) -> (usize, usize) {
        let (_, h, w) = self.data.dim();
        (h, w)
    }
}

/// Trade-off factors of the total generator objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_p: f64,
    pub lambda_e: f64,
    pub lambda_cm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_adv: 0.1, lambda_p: 1.0, lambda_e: 0.5, lambda_cm: 0.05 }
    }
}

impl LossWeights {
    pub fn new(lambda_adv: f64, lambda_p: f64, lambda_e: f64, lambda_cm: f64) -> Result<Self> {
        let w = LossWeights { lambda_adv, lambda_p, lambda_e, lambda_cm };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_adv, self.lambda_p, self.lambda_e, self.lambda_cm];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput(format!("loss weights must be finite and >= 0: {all:?}")));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::InvalidInput("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn downsample_constant_and_identity() {
        let ones = Mask::ones(4, 4);
        assert_eq!(downsample_mask(&ones, 1).unwrap(), Mask::ones(2, 2));
        let m = Mask::from_fn(4, 6, |i, j| (i * 7 + j) % 3 == 0);
        assert_eq!(downsample_mask(&m, 0).unwrap(), m);
    }

    #[test]
    fn downsample_left_half() {
        let m = Mask::from_fn(4, 4, |_, j| j < 2);
        let d = downsample_mask(&m, 1).unwrap();
        // nearest-neighbour picks columns 0 and 2
        assert_eq!(d, Mask::from_fn(2, 2, |_, j| j == 0));
    }

    #[test]
    fn downsample_rejects_indivisible() {
        assert!(matches!(downsample_mask(&Mask::ones(6, 5), 1), Err(Error::InvalidInput(_))));
        assert!(matches!(downsample_mask(&Mask::ones(6, 8), 2), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn validate_pair_cases() {
        let d = SparseDepthMap::empty(256, 512);
        let r = MaskedRGB::new(Array3::zeros((3, 256, 512)), Mask::zeros(256, 512)).unwrap();
        assert!(validate_pair(&d, &r).is_ok());

        let small = MaskedRGB::new(Array3::zeros((3, 256, 256)), Mask::zeros(256, 256)).unwrap();
        assert!(matches!(validate_pair(&d, &small), Err(Error::ShapeMismatch(_))));

        let mut depth = Array2::zeros((256, 512));
        depth[[10, 10]] = 5.0;
        let bad = SparseDepthMap::from_parts_unchecked(depth, Mask::zeros(256, 512));
        assert!(matches!(validate_pair(&bad, &r), Err(Error::Inconsistent(_))));

        let mut depth = Array2::zeros((256, 512));
        depth[[0, 0]] = f32::NAN;
        let nan = SparseDepthMap::from_parts_unchecked(depth, Mask::ones(256, 512));
        assert!(matches!(validate_pair(&nan, &r), Err(Error::NonFinite(_))));
    }

    #[test]
    fn non_binary_masks_rejected() {
        let a = Array2::from_elem((2, 2), 0.5f64);
        assert!(Mask::from_real(&a).is_err());
        assert!(Mask::from_array(Array2::from_elem((2, 2), 2u8)).is_err());
    }

    #[test]
    fn non_rectangular_known_region_rejected() {
        let m = Mask::from_fn(4, 4, |i, j| i == j);
        assert!(MaskedRGB::new(Array3::zeros((3, 4, 4)), m).is_err());
    }

    #[test]
    fn loss_weights_rules() {
        assert!(LossWeights::new(0.0, 0.0, 0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0, 0.0, 0.0).is_err());
        assert!(LossWeights::new(0.0, 1.0, 0.0, 0.0).is_ok());
        assert!(LossWeights::default().validate().is_ok());
    }

    fn mask_strategy() -> impl Strategy<Value = Mask> {
        (1usize..5, 1usize..5, any::<u64>()).prop_map(|(hb, wb, seed)| {
            let (h, w) = (hb * 4, wb * 4);
            Mask::from_fn(h, w, |i, j| {
                let x = seed.wrapping_mul(6364136223846793005).wrapping_add((i * 131 + j) as u64);
                (x >> 33) % 2 == 1
            })
        })
    }

    proptest! {
        #[test]
        fn mask_product_idempotent(m in mask_strategy()) {
            prop_assert_eq!(m.and(&m).unwrap(), m);
        }

        #[test]
        fn downsample_composes(m in mask_strategy()) {
            let twice = downsample_mask(&downsample_mask(&m, 1).unwrap(), 1).unwrap();
            prop_assert_eq!(twice, downsample_mask(&m, 2).unwrap());
        }
    }
}

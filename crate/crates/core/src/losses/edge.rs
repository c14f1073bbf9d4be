//! Berhu penalty and the Canny edge loss.

use ndarray::{Array2, Array3, Zip};

use super::canny::{canny_edges, gaussian_kernel, separable_blur, Border, EdgeMap};
use crate::error::{Error, Result};
use crate::real::Real;

/// Blur applied to binary edge maps before comparison.
pub const EDGE_BLUR_SIGMA: f64 = 1.0;
pub const EDGE_BLUR_RADIUS: usize = 2;
pub const DEFAULT_BERHU_C: f64 = 0.2;

fn berhu_term<T: Real>(x: T, c: T) -> T {
    let a = x.abs();
    if a <= c {
        a
    } else {
        (x * x + c * c) / (T::of(2.0) * c)
    }
}

fn berhu_slope<T: Real>(x: T, c: T) -> T {
    if x.abs() <= c {
        if x > T::zero() {
            T::one()
        } else if x < T::zero() {
            -T::one()
        } else {
            T::zero()
        }
    } else {
        x / c
    }
}

/// Mean reverse-Huber penalty: `|x|` up to `c`, `(x² + c²) / 2c` beyond.
pub fn berhu<T: Real>(x: &Array2<T>, c: f64) -> Result<T> {
    berhu_grad(x, c).map(|(l, _)| l)
}

pub fn berhu_grad<T: Real>(x: &Array2<T>, c: f64) -> Result<(T, Array2<T>)> {
    if !(c > 0.0) {
        return Err(Error::InvalidInput(format!("berhu threshold must be > 0, got {c}")));
    }
    let n = T::of(x.len().max(1) as f64);
    let ct = T::of(c);
    let loss = x.iter().fold(T::zero(), |acc, &v| acc + berhu_term(v, ct)) / n;
    let grad = x.mapv(|v| berhu_slope(v, ct) / n);
    Ok((loss, grad))
}

pub fn blur_edges<T: Real>(e: &EdgeMap) -> Array2<T> {
    separable_blur(&e.to_real::<T>(), &gaussian_kernel(EDGE_BLUR_RADIUS, EDGE_BLUR_SIGMA), Border::Zero)
}

/// Berhu of the difference of the blurred edge maps.
pub fn edge_map_loss<T: Real>(e_pred: &EdgeMap, e_gt: &EdgeMap, c: f64) -> Result<T> {
    if e_pred.dim() != e_gt.dim() {
        return Err(Error::ShapeMismatch(format!("edge maps {:?} vs {:?}", e_pred.dim(), e_gt.dim())));
    }
    berhu(&(blur_edges::<T>(e_pred) - blur_edges::<T>(e_gt)), c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeLossConfig {
    pub low: f64,
    pub high: f64,
    pub berhu_c: f64,
}

impl Default for EdgeLossConfig {
    fn default() -> Self {
        EdgeLossConfig { low: super::canny::DEFAULT_LOW, high: super::canny::DEFAULT_HIGH, berhu_c: DEFAULT_BERHU_C }
    }
}

pub fn edge_loss<T: Real>(pred: &Array3<T>, gt: &Array3<T>, cfg: &EdgeLossConfig) -> Result<T> {
    edge_loss_grad(pred, gt, cfg).map(|(l, _)| l)
}

/// Edge loss and a surrogate gradient w.r.t. `pred`.
///
/// Edge extraction is piecewise constant, so the gradient is passed straight
/// through it: the loss gradient on the prediction's edge map, pulled back
/// through the blur, becomes a per-pixel weight on an L1 pull of `pred`
/// toward `gt`. Only pixels near mismatching edges receive gradient.
pub fn edge_loss_grad<T: Real>(pred: &Array3<T>, gt: &Array3<T>, cfg: &EdgeLossConfig) -> Result<(T, Array3<T>)> {
    if pred.dim() != gt.dim() {
        return Err(Error::ShapeMismatch(format!("edge loss: {:?} vs {:?}", pred.dim(), gt.dim())));
    }
    let e_pred = canny_edges(pred, cfg.low, cfg.high)?;
    let e_gt = canny_edges(gt, cfg.low, cfg.high)?;
    let diff = blur_edges::<T>(&e_pred) - blur_edges::<T>(&e_gt);
    let (loss, g_diff) = berhu_grad(&diff, cfg.berhu_c)?;
    // the zero-padded Gaussian is symmetric, so its adjoint is itself
    let weight = separable_blur(&g_diff, &gaussian_kernel(EDGE_BLUR_RADIUS, EDGE_BLUR_SIGMA), Border::Zero);
    let mut grad = pred - gt;
    let (c, _, _) = grad.dim();
    let third = T::one() / T::of(c as f64);
    for mut plane in grad.outer_iter_mut() {
        Zip::from(&mut plane).and(&weight).for_each(|g, &wv| {
            let s = if *g > T::zero() {
                T::one()
            } else if *g < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            *g = s * wv.abs() * third;
        });
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::Mask;
    use ndarray::arr2;

    #[test]
    fn berhu_branches() {
        assert_eq!(berhu(&Array2::<f64>::zeros((2, 2)), 1.0).unwrap(), 0.0);
        assert_eq!(berhu(&arr2(&[[0.5f64]]), 1.0).unwrap(), 0.5);
        assert_eq!(berhu(&arr2(&[[2.0f64]]), 1.0).unwrap(), 2.5);
        assert_eq!(berhu(&arr2(&[[-2.0f64]]), 1.0).unwrap(), 2.5);
        assert!(berhu(&arr2(&[[1.0f64]]), 0.0).is_err());
    }

    #[test]
    fn berhu_continuous_at_threshold() {
        let c = 0.2;
        let lo = berhu(&arr2(&[[c - 1e-9f64]]), c).unwrap();
        let hi = berhu(&arr2(&[[c + 1e-9f64]]), c).unwrap();
        assert!((lo - hi).abs() < 1e-8);
    }

    #[test]
    fn identical_images_zero_loss() {
        let img = Array3::from_shape_fn((3, 16, 16), |(_, i, j)| ((i / 4 + j / 4) % 2) as f64);
        assert_eq!(edge_loss(&img, &img, &EdgeLossConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn constant_vs_step_positive() {
        let flat = Array3::from_elem((3, 16, 16), 0.5f64);
        let step = Array3::from_shape_fn((3, 16, 16), |(_, _, j)| if j < 8 { 0.0 } else { 1.0 });
        assert!(edge_loss(&flat, &step, &EdgeLossConfig::default()).unwrap() > 0.0);
        let (_, g) = edge_loss_grad(&flat, &step, &EdgeLossConfig::default()).unwrap();
        assert!(g.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn single_pixel_difference_closed_form() {
        let a = Mask::from_fn(8, 8, |i, j| i == 3 && j == 4);
        let b = Mask::zeros(8, 8);
        let got: f64 = edge_map_loss(&a, &b, DEFAULT_BERHU_C).unwrap();
        // the blurred delta is the outer product of the 1-D kernel
        let k = gaussian_kernel(EDGE_BLUR_RADIUS, EDGE_BLUR_SIGMA);
        let c = DEFAULT_BERHU_C;
        let mut sum = 0.0;
        for ki in &k {
            for kj in &k {
                let x: f64 = ki * kj;
                sum += if x <= c { x } else { (x * x + c * c) / (2.0 * c) };
            }
        }
        assert!((got - sum / 64.0).abs() < 1e-12);
    }
}

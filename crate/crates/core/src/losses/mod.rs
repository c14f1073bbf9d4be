//! Training objectives.

pub mod adversarial;
pub mod attention;
pub mod canny;
pub mod edge;

use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

pub use adversarial::{discriminate, hinge_d_loss, hinge_g_loss, Discriminator, DiscriminatorSpec, SnWeights};
pub use attention::{attention_map, cross_modal_loss, cross_modal_loss_grad};
pub use canny::{canny_edges, EdgeMap};
pub use edge::{berhu, edge_loss, EdgeLossConfig};

use crate::datamodel::{LossWeights, Mask};
use crate::error::{Error, Result};
use crate::real::Real;

/// Weight of unknown-region pixels relative to known ones in the pixel loss.
pub const UNKNOWN_WEIGHT: f64 = 5.0;

/// Weighted mean absolute error and its gradient w.r.t. `pred`.
pub fn pixel_loss_grad<T: Real>(pred: &Array3<T>, gt: &Array3<T>, m_alpha: &Mask) -> Result<(T, Array3<T>)> {
    let (c, h, w) = pred.dim();
    if gt.dim() != (c, h, w) || m_alpha.dim() != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "pixel loss: pred {:?}, gt {:?}, mask {:?}",
            pred.dim(),
            gt.dim(),
            m_alpha.dim()
        )));
    }
    let weight = m_alpha.to_real::<T>().mapv(|k| if k > T::zero() { T::one() } else { T::of(UNKNOWN_WEIGHT) });
    let norm = weight.sum() * T::of(c as f64);
    let mut loss = T::zero();
    let mut grad = Array3::zeros((c, h, w));
    for ch in 0..c {
        Zip::from(grad.index_axis_mut(ndarray::Axis(0), ch))
            .and(pred.index_axis(ndarray::Axis(0), ch))
            .and(gt.index_axis(ndarray::Axis(0), ch))
            .and(&weight)
            .for_each(|g, &p, &t, &wv| {
                let d = p - t;
                loss += wv * d.abs();
                *g = if d > T::zero() {
                    wv / norm
                } else if d < T::zero() {
                    -wv / norm
                } else {
                    T::zero()
                };
            });
    }
    Ok((loss / norm, grad))
}

pub fn pixel_loss<T: Real>(pred: &Array3<T>, gt: &Array3<T>, m_alpha: &Mask) -> Result<T> {
    pixel_loss_grad(pred, gt, m_alpha).map(|(l, _)| l)
}

/// Individual generator loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub adv: f64,
    pub pixel: f64,
    pub edge: f64,
    pub cm: f64,
}

/// `λ_adv·adv + λ_p·pixel + λ_e·edge + λ_cm·cm`.
pub fn total_loss(parts: &LossParts, w: &LossWeights) -> Result<f64> {
    let all = [w.lambda_adv, w.lambda_p, w.lambda_e, w.lambda_cm];
    if all.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidInput(format!("negative loss weight in {all:?}")));
    }
    Ok(w.lambda_adv * parts.adv + w.lambda_p * parts.pixel + w.lambda_e * parts.edge + w.lambda_cm * parts.cm)
}

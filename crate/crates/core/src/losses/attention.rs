//! Channel-mean-squared attention maps and the cross-modal loss.

use ndarray::{Array2, Array3, Axis, Zip};

use crate::datamodel::Mask;
use crate::error::{Error, Result};
use crate::real::Real;

/// Per-pixel mean over channels of the squared feature.
pub fn attention_map<T: Real>(f: &Array3<T>) -> Array2<T> {
    let c = f.dim().0.max(1);
    f.mapv(|v| v * v).sum_axis(Axis(0)) / T::of(c as f64)
}

/// Attention map of `f ⊙ w` for a per-pixel weight grid.
fn weighted_attention<T: Real>(f: &Array3<T>, w: &Array2<T>) -> Array2<T> {
    let mut a = attention_map(f);
    // (f w)^2 = f^2 w^2 and w is binary
    a *= w;
    a
}

fn check<T: Real>(f_d: &Array3<T>, f_r: &Array3<T>, m_sd: &Mask, m_alpha: &Mask) -> Result<()> {
    let (_, h, w) = f_d.dim();
    if f_d.dim() != f_r.dim() || m_sd.dim() != (h, w) || m_alpha.dim() != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "cross-modal: depth {:?}, rgb {:?}, m_sd {:?}, m_alpha {:?}",
            f_d.dim(),
            f_r.dim(),
            m_sd.dim(),
            m_alpha.dim()
        )));
    }
    Ok(())
}

/// L2 distance between the attention map of the depth features on the
/// unknown region and that of the RGB features on the unknown, depth-valid
/// region. Returns the loss and its gradient w.r.t. `f_r`; the depth side is
/// a constant target.
pub fn cross_modal_loss_grad<T: Real>(
    f_d: &Array3<T>,
    f_r: &Array3<T>,
    m_sd: &Mask,
    m_alpha: &Mask,
) -> Result<(T, Array3<T>)> {
    check(f_d, f_r, m_sd, m_alpha)?;
    let unknown = m_alpha.complement();
    let w_d = unknown.to_real::<T>();
    let w_r = m_sd.and(&unknown)?.to_real::<T>();
    let phi_d = weighted_attention(f_d, &w_d);
    let phi_r = weighted_attention(f_r, &w_r);
    let diff = &phi_d - &phi_r;
    let loss = diff.mapv(|v| v * v).sum().sqrt();
    let mut grad = Array3::zeros(f_r.dim());
    if loss > T::zero() {
        let c = T::of(f_r.dim().0 as f64);
        let two = T::of(2.0);
        // dL/dphi_r = -diff / L ; dphi_r/df_r = 2 f_r w / C
        let coef = Zip::from(&diff).and(&w_r).map_collect(|&d, &w| -d / loss * two * w / c);
        for (mut g, f) in grad.axis_iter_mut(Axis(0)).zip(f_r.axis_iter(Axis(0))) {
            Zip::from(&mut g).and(&f).and(&coef).for_each(|g, &f, &k| *g = f * k);
        }
    }
    Ok((loss, grad))
}

pub fn cross_modal_loss<T: Real>(f_d: &Array3<T>, f_r: &Array3<T>, m_sd: &Mask, m_alpha: &Mask) -> Result<T> {
    cross_modal_loss_grad(f_d, f_r, m_sd, m_alpha).map(|(l, _)| l)
}

//! Pointwise activations and their derivatives.

use ndarray::{Array3, Zip};

use crate::real::Real;

pub fn elu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp() - T::one()
    }
}

/// dELU/dx expressed through the output `y`.
pub fn elu_grad_from_output<T: Real>(y: T) -> T {
    if y > T::zero() {
        T::one()
    } else {
        y + T::one()
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x * T::of(LEAKY_SLOPE)
    }
}

pub fn elu_inplace<T: Real>(x: &mut Array3<T>) {
    x.mapv_inplace(elu);
}

/// `dx = dy * elu'(x)` given the activation output.
pub fn elu_backward<T: Real>(y: &Array3<T>, dy: &Array3<T>) -> Array3<T> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(y).for_each(|d, &y| *d *= elu_grad_from_output(y));
    dx
}

//! Square-kernel 2-D convolution via im2col + GEMM.
//!
//! Padding is always `k / 2` (zero), so a stride-1 convolution preserves the
//! spatial size and a stride-2 convolution halves even sizes.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView1, ArrayView2, ArrayView3, Axis, Ix2};
use rand::Rng;

use super::params::{Grads, ParamId, ParamStore};
use crate::real::Real;

pub fn out_len(n: usize, k: usize, stride: usize) -> usize {
    (n + 2 * (k / 2) - k) / stride + 1
}

/// Unfolds `x` (C×H×W) into a `(C·k·k) × (Ho·Wo)` patch matrix.
pub fn im2col<T: Real>(x: ArrayView3<T>, k: usize, stride: usize) -> Array2<T> {
    let (c, h, w) = x.dim();
    let (ho, wo) = (out_len(h, k, stride), out_len(w, k, stride));
    if k == 1 && stride == 1 {
        return x.to_owned().into_shape_with_order((c, h * w)).expect("contiguous");
    }
    let pad = (k / 2) as isize;
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("standard layout");
    let mut cols = Array2::zeros((c * k * k, ho * wo));
    let out = cols.as_slice_mut().expect("fresh array");
    let plane = ho * wo;
    for ci in 0..c {
        let src_plane = &xs[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut out[row * plane..(row + 1) * plane];
                for oi in 0..ho {
                    let ii = (oi * stride + ki) as isize - pad;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let src = &src_plane[ii as usize * w..(ii as usize + 1) * w];
                    let drow = &mut dst[oi * wo..(oi + 1) * wo];
                    for (oj, d) in drow.iter_mut().enumerate() {
                        let jj = (oj * stride + kj) as isize - pad;
                        if jj >= 0 && jj < w as isize {
                            *d = src[jj as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto a C×H×W grid.
pub fn col2im<T: Real>(
    cols: ArrayView2<T>,
    dim: (usize, usize, usize),
    k: usize,
    stride: usize,
) -> Array3<T> {
    let (c, h, w) = dim;
    let (ho, wo) = (out_len(h, k, stride), out_len(w, k, stride));
    if k == 1 && stride == 1 {
        return cols.to_owned().into_shape_with_order((c, h, w)).expect("contiguous");
    }
    let pad = (k / 2) as isize;
    let cs = cols.as_standard_layout();
    let cs = cs.as_slice().expect("standard layout");
    let mut x = Array3::zeros((c, h, w));
    let xs = x.as_slice_mut().expect("fresh array");
    let plane = ho * wo;
    for ci in 0..c {
        let dst_plane = &mut xs[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cs[row * plane..(row + 1) * plane];
                for oi in 0..ho {
                    let ii = (oi * stride + ki) as isize - pad;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let drow = &mut dst_plane[ii as usize * w..(ii as usize + 1) * w];
                    let srow = &src[oi * wo..(oi + 1) * wo];
                    for (oj, &g) in srow.iter().enumerate() {
                        let jj = (oj * stride + kj) as isize - pad;
                        if jj >= 0 && jj < w as isize {
                            drow[jj as usize] += g;
                        }
                    }
                }
            }
        }
    }
    x
}

/// `y = W · im2col(x) + b`. Returns the output and the patch matrix.
pub fn conv_forward<T: Real>(
    weight: ArrayView2<T>,
    bias: Option<ArrayView1<T>>,
    x: ArrayView3<T>,
    k: usize,
    stride: usize,
) -> (Array3<T>, Array2<T>) {
    let (_, h, w) = x.dim();
    let (ho, wo) = (out_len(h, k, stride), out_len(w, k, stride));
    let cols = im2col(x, k, stride);
    let mut y = weight.dot(&cols);
    if let Some(b) = bias {
        for (mut row, &bv) in y.axis_iter_mut(Axis(0)).zip(b.iter()) {
            row.mapv_inplace(|v| v + bv);
        }
    }
    let cout = weight.nrows();
    (y.into_shape_with_order((cout, ho, wo)).expect("contiguous"), cols)
}

pub struct ConvGrads<T> {
    pub dx: Option<Array3<T>>,
    pub dweight: Array2<T>,
    pub dbias: Array1<T>,
}

/// Backward of [`conv_forward`] given the saved patch matrix.
pub fn conv_backward<T: Real>(
    weight: ArrayView2<T>,
    cols: &Array2<T>,
    in_dim: (usize, usize, usize),
    k: usize,
    stride: usize,
    dy: &Array3<T>,
    need_dx: bool,
) -> ConvGrads<T> {
    let (cout, ho, wo) = dy.dim();
    let dy2 = dy.view().into_shape_with_order((cout, ho * wo)).expect("contiguous");
    let dweight = dy2.dot(&cols.t());
    let dbias = dy2.sum_axis(Axis(1));
    let dx = need_dx.then(|| {
        let dcols = weight.t().dot(&dy2);
        col2im(dcols.view(), in_dim, k, stride)
    });
    ConvGrads { dx, dweight, dbias }
}

/// Convolution layer whose weights live in a [`ParamStore`].
///
/// Weight shape is `[cout, cin, k, k]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
}

/// Saved forward state for [`Conv2d::backward`].
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    pub cols: Array2<T>,
    pub in_dim: (usize, usize, usize),
}

impl Conv2d {
    /// Normal-initialised weights with standard deviation `gain / sqrt(fan_in)`; zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        ps: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        gain: f64,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd");
        let std = gain / ((cin * k * k) as f64).sqrt();
        let weight = ps.add_normal(format!("{name}.weight"), &[cout, cin, k, k], std, rng);
        let bias = bias.then(|| ps.add_zeros(format!("{name}.bias"), &[cout]));
        Conv2d { weight, bias, cin, cout, k, stride }
    }

    pub fn from_weights<T: Real>(
        ps: &mut ParamStore<T>,
        name: &str,
        weight: Array4<T>,
        bias: Option<Array1<T>>,
        stride: usize,
    ) -> Self {
        let (cout, cin, k, k2) = weight.dim();
        assert_eq!(k, k2, "square kernels only");
        assert!(k % 2 == 1, "kernel size must be odd");
        let weight = ps.add(format!("{name}.weight"), weight.into_dyn());
        let bias = bias.map(|b| ps.add(format!("{name}.bias"), b.into_dyn()));
        Conv2d { weight, bias, cin, cout, k, stride }
    }

    pub fn weight_matrix<'a, T: Real>(&self, ps: &'a ParamStore<T>) -> ArrayView2<'a, T> {
        ps.get(self.weight)
            .view()
            .into_shape_with_order((self.cout, self.cin * self.k * self.k))
            .expect("contiguous weight")
            .into_dimensionality::<Ix2>()
            .expect("2-D view")
    }

    pub fn bias_vector<'a, T: Real>(&self, ps: &'a ParamStore<T>) -> Option<ArrayView1<'a, T>> {
        self.bias.map(|b| {
            ps.get(b).view().into_dimensionality().expect("1-D bias")
        })
    }

    pub fn out_dim(&self, h: usize, w: usize) -> (usize, usize) {
        (out_len(h, self.k, self.stride), out_len(w, self.k, self.stride))
    }

    pub fn forward<T: Real>(&self, ps: &ParamStore<T>, x: ArrayView3<T>) -> (Array3<T>, ConvCache<T>) {
        assert_eq!(x.dim().0, self.cin, "conv input channels");
        let in_dim = x.dim();
        let (y, cols) =
            conv_forward(self.weight_matrix(ps), self.bias_vector(ps), x, self.k, self.stride);
        (y, ConvCache { cols, in_dim })
    }

    /// Accumulates parameter gradients and returns the input gradient if requested.
    pub fn backward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        cache: &ConvCache<T>,
        dy: &Array3<T>,
        grads: &mut Grads<T>,
        need_dx: bool,
    ) -> Option<Array3<T>> {
        let g = conv_backward(
            self.weight_matrix(ps),
            &cache.cols,
            cache.in_dim,
            self.k,
            self.stride,
            dy,
            need_dx,
        );
        let dw = g.dweight.into_shape_with_order(ps.get(self.weight).raw_dim()).expect("weight shape");
        *grads.get_mut(self.weight) += &dw;
        if let Some(b) = self.bias {
            *grads.get_mut(b) += &g.dbias.into_dyn();
        }
        g.dx
    }
}


#[cfg(test)]
mod tests {
    use super::reference::naive_conv;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Array3<f64> {
        Array3::from_shape_fn(shape, |_| StandardNormal.sample(rng))
    }

    #[test]
    fn matches_naive_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(k, stride, h, w) in &[(3, 1, 5, 7), (3, 2, 6, 8), (1, 1, 4, 4), (5, 1, 6, 5), (3, 2, 5, 5)] {
            let mut ps = ParamStore::<f64>::new();
            let conv = Conv2d::new(&mut ps, "c", 2, 3, k, stride, 1.0, true, &mut rng);
            *ps.get_mut(conv.bias.unwrap()) = ndarray::arr1(&[0.1, -0.2, 0.3]).into_dyn();
            let x = randn(&mut rng, (2, h, w));
            let (y, _) = conv.forward(&ps, x.view());
            let w4 = ps.get(conv.weight).clone().into_dimensionality().unwrap();
            let b1 = ps.get(conv.bias.unwrap()).clone().into_dimensionality().unwrap();
            let expect = naive_conv(&w4, Some(&b1), &x, stride);
            assert_eq!(y.dim(), expect.dim());
            for (a, b) in y.iter().zip(expect.iter()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &(k, stride) in &[(3, 1), (3, 2), (5, 2), (1, 1)] {
            let x = randn(&mut rng, (2, 6, 5));
            let cols = im2col(x.view(), k, stride);
            let c: Array2<f64> = Array2::from_shape_fn(cols.dim(), |_| StandardNormal.sample(&mut rng));
            let lhs: f64 = (&cols * &c).sum();
            let rhs: f64 = (&x * &col2im(c.view(), x.dim(), k, stride)).sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}

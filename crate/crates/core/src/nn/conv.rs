//! Convolution primitives: same-padded strided/dilated convolution and the
//! exactly-doubling transposed convolution, with analytic gradients.
//!
//! All kernels are odd so same padding is symmetric: `pad = ((k-1)*d)/2`.
//! A convolution then maps size `n` to `floor((n-1)/s) + 1` (which is `n/s`
//! for even `n`), and a transposed convolution maps `n` to `s*n`.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView3, ArrayView4, Zip};
use rayon::prelude::*;

/// Spatial geometry shared by the gather (`im2col`) and scatter (`col2im`)
/// passes: `positions` output sites striding over a padded plane.
#[derive(Debug, Clone, Copy)]
struct PatchGrid {
    kh: usize,
    kw: usize,
    stride: usize,
    dilation: usize,
    /// Number of sites along (h, w).
    positions: (usize, usize),
}

/// Output size of a same-padded convolution.
pub(crate) fn conv_output_size(n: usize, stride: usize) -> usize {
    (n - 1) / stride + 1
}

/// Symmetric same padding for an odd kernel.
pub(crate) fn same_pad(kernel: usize, dilation: usize) -> usize {
    (kernel - 1) * dilation / 2
}

fn pad_plane(x: &ArrayView3<f64>, pad_h: usize, pad_w: usize) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut out = Array3::zeros((c, h + 2 * pad_h, w + 2 * pad_w));
    out.slice_mut(s![.., pad_h..pad_h + h, pad_w..pad_w + w])
        .assign(x);
    out
}

/// Gathers sliding-window patches of a padded plane into a matrix of shape
/// `[c*kh*kw, positions.0 * positions.1]`.
fn im2col(padded: &Array3<f64>, grid: PatchGrid) -> Array2<f64> {
    let c = padded.dim().0;
    let (oh, ow) = grid.positions;
    let mut col = Array2::zeros((c * grid.kh * grid.kw, oh * ow));
    for ci in 0..c {
        for ki in 0..grid.kh {
            for kj in 0..grid.kw {
                let row = (ci * grid.kh + ki) * grid.kw + kj;
                let mut dst = col.row_mut(row);
                for po in 0..oh {
                    let src = padded.slice(s![
                        ci,
                        po * grid.stride + ki * grid.dilation,
                        kj * grid.dilation..;grid.stride
                    ]);
                    dst.slice_mut(s![po * ow..(po + 1) * ow])
                        .assign(&src.slice(s![..ow]));
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-adds patch columns back onto a padded plane.
fn col2im(col: &Array2<f64>, c: usize, padded_h: usize, padded_w: usize, grid: PatchGrid) -> Array3<f64> {
    let (oh, ow) = grid.positions;
    let mut padded = Array3::zeros((c, padded_h, padded_w));
    for ci in 0..c {
        for ki in 0..grid.kh {
            for kj in 0..grid.kw {
                let row = (ci * grid.kh + ki) * grid.kw + kj;
                let src = col.row(row);
                for po in 0..oh {
                    let mut dst = padded.slice_mut(s![
                        ci,
                        po * grid.stride + ki * grid.dilation,
                        kj * grid.dilation..;grid.stride
                    ]);
                    Zip::from(dst.slice_mut(s![..ow]))
                        .and(src.slice(s![po * ow..(po + 1) * ow]))
                        .for_each(|d, &v| *d += v);
                }
            }
        }
    }
    padded
}

fn conv_single(
    x: &ArrayView3<f64>,
    weight: &ArrayView4<f64>, // [f, c, kh, kw]
    bias: &Array1<f64>,
    stride: usize,
    dilation: usize,
) -> Array3<f64> {
    let (f, c, kh, kw) = weight.dim();
    let (_, h, w) = x.dim();
    let (ph, pw) = (same_pad(kh, dilation), same_pad(kw, dilation));
    let (oh, ow) = (conv_output_size(h, stride), conv_output_size(w, stride));
    let grid = PatchGrid { kh, kw, stride, dilation, positions: (oh, ow) };

    let padded = pad_plane(x, ph, pw);
    let col = im2col(&padded, grid);
    let wmat = weight
        .to_shape((f, c * kh * kw))
        .expect("kernel is standard layout");
    let mut out = wmat.dot(&col);
    for (fi, mut row) in out.outer_iter_mut().enumerate() {
        row += bias[fi];
    }
    out.into_shape_with_order((f, oh, ow)).unwrap()
}

fn conv_single_backward(
    x: &ArrayView3<f64>,
    weight: &ArrayView4<f64>,
    grad_out: &ArrayView3<f64>,
    stride: usize,
    dilation: usize,
) -> (Array3<f64>, Array4<f64>, Array1<f64>) {
    let (f, c, kh, kw) = weight.dim();
    let (_, h, w) = x.dim();
    let (ph, pw) = (same_pad(kh, dilation), same_pad(kw, dilation));
    let (_, oh, ow) = grad_out.dim();
    let grid = PatchGrid { kh, kw, stride, dilation, positions: (oh, ow) };

    let padded = pad_plane(x, ph, pw);
    let col = im2col(&padded, grid);
    let gmat = grad_out
        .to_shape((f, oh * ow))
        .expect("grad is standard layout");

    let grad_w = gmat
        .dot(&col.t())
        .into_shape_with_order((f, c, kh, kw))
        .unwrap();
    let grad_b = gmat.sum_axis(ndarray::Axis(1));

    let wmat = weight.to_shape((f, c * kh * kw)).unwrap();
    let dcol = wmat.t().dot(&gmat);
    let grad_padded = col2im(&dcol, c, h + 2 * ph, w + 2 * pw, grid);
    let grad_x = grad_padded.slice(s![.., ph..ph + h, pw..pw + w]).to_owned();
    (grad_x, grad_w, grad_b)
}

fn deconv_single(
    x: &ArrayView3<f64>,
    weight: &ArrayView4<f64>, // [c, f, kh, kw]
    bias: &Array1<f64>,
    stride: usize,
) -> Array3<f64> {
    let (c, f, kh, kw) = weight.dim();
    let (_, h, w) = x.dim();
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let (oh, ow) = (h * stride, w * stride);
    let grid = PatchGrid { kh, kw, stride, dilation: 1, positions: (h, w) };

    let wmat = weight.to_shape((c, f * kh * kw)).unwrap();
    let xmat = x.to_shape((c, h * w)).unwrap();
    let tmp = wmat.t().dot(&xmat); // [f*kh*kw, h*w]
    let padded = col2im(&tmp, f, oh + 2 * ph, ow + 2 * pw, grid);
    let mut out = padded.slice(s![.., ph..ph + oh, pw..pw + ow]).to_owned();
    for (fi, mut plane) in out.outer_iter_mut().enumerate() {
        plane += bias[fi];
    }
    out
}

fn deconv_single_backward(
    x: &ArrayView3<f64>,
    weight: &ArrayView4<f64>,
    grad_out: &ArrayView3<f64>,
    stride: usize,
) -> (Array3<f64>, Array4<f64>, Array1<f64>) {
    let (c, f, kh, kw) = weight.dim();
    let (_, h, w) = x.dim();
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let grid = PatchGrid { kh, kw, stride, dilation: 1, positions: (h, w) };

    let padded_grad = pad_plane(grad_out, ph, pw);
    let col = im2col(&padded_grad, grid); // [f*kh*kw, h*w]

    let wmat = weight.to_shape((c, f * kh * kw)).unwrap();
    let grad_x = wmat
        .dot(&col)
        .into_shape_with_order((c, h, w))
        .unwrap();

    let xmat = x.to_shape((c, h * w)).unwrap();
    let grad_w = xmat
        .dot(&col.t())
        .into_shape_with_order((c, f, kh, kw))
        .unwrap();

    let grad_b = Array1::from_iter(
        grad_out
            .outer_iter()
            .map(|plane| plane.sum()),
    );
    (grad_x, grad_w, grad_b)
}

/// Batched same-padded convolution, `weight: [f, c, kh, kw]`.
pub(crate) fn conv2d(
    x: &Array4<f64>,
    weight: &Array4<f64>,
    bias: &Array1<f64>,
    stride: usize,
    dilation: usize,
) -> Array4<f64> {
    let n = x.dim().0;
    let per: Vec<Array3<f64>> = (0..n)
        .into_par_iter()
        .map(|i| conv_single(&x.index_axis(ndarray::Axis(0), i), &weight.view(), bias, stride, dilation))
        .collect();
    stack_batch(per)
}

/// Batched convolution backward. Returns `(grad_x, grad_w, grad_b)` with the
/// parameter gradients summed over the batch in index order.
pub(crate) fn conv2d_backward(
    x: &Array4<f64>,
    weight: &Array4<f64>,
    grad_out: &Array4<f64>,
    stride: usize,
    dilation: usize,
) -> (Array4<f64>, Array4<f64>, Array1<f64>) {
    let n = x.dim().0;
    let per: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| {
            conv_single_backward(
                &x.index_axis(ndarray::Axis(0), i),
                &weight.view(),
                &grad_out.index_axis(ndarray::Axis(0), i),
                stride,
                dilation,
            )
        })
        .collect();
    reduce_batch(per)
}

/// Batched transposed convolution, `weight: [c, f, kh, kw]`; doubles the
/// spatial size when `stride == 2`.
pub(crate) fn deconv2d(
    x: &Array4<f64>,
    weight: &Array4<f64>,
    bias: &Array1<f64>,
    stride: usize,
) -> Array4<f64> {
    let n = x.dim().0;
    let per: Vec<Array3<f64>> = (0..n)
        .into_par_iter()
        .map(|i| deconv_single(&x.index_axis(ndarray::Axis(0), i), &weight.view(), bias, stride))
        .collect();
    stack_batch(per)
}

pub(crate) fn deconv2d_backward(
    x: &Array4<f64>,
    weight: &Array4<f64>,
    grad_out: &Array4<f64>,
    stride: usize,
) -> (Array4<f64>, Array4<f64>, Array1<f64>) {
    let n = x.dim().0;
    let per: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| {
            deconv_single_backward(
                &x.index_axis(ndarray::Axis(0), i),
                &weight.view(),
                &grad_out.index_axis(ndarray::Axis(0), i),
                stride,
            )
        })
        .collect();
    reduce_batch(per)
}

fn stack_batch(per: Vec<Array3<f64>>) -> Array4<f64> {
    let (c, h, w) = per[0].dim();
    let mut out = Array4::zeros((per.len(), c, h, w));
    for (i, item) in per.into_iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(0), i).assign(&item);
    }
    out
}

/// Stacks per-item input gradients and sums parameter gradients in batch
/// order, so results do not depend on thread scheduling.
fn reduce_batch(
    per: Vec<(Array3<f64>, Array4<f64>, Array1<f64>)>,
) -> (Array4<f64>, Array4<f64>, Array1<f64>) {
    let mut iter = per.into_iter();
    let (gx0, mut gw, mut gb) = iter.next().expect("batch is nonempty");
    let mut grads = vec![gx0];
    for (gx, w, b) in iter {
        grads.push(gx);
        gw += &w;
        gb += &b;
    }
    (stack_batch(grads), gw, gb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array3, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct-summation convolution, the independent oracle for the
    /// im2col/GEMM path.
    fn conv_oracle(
        x: &Array4<f64>,
        weight: &Array4<f64>,
        bias: &Array1<f64>,
        stride: usize,
        dilation: usize,
    ) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        let (f, _, kh, kw) = weight.dim();
        let (ph, pw) = (same_pad(kh, dilation), same_pad(kw, dilation));
        let (oh, ow) = (conv_output_size(h, stride), conv_output_size(w, stride));
        let mut out = Array4::zeros((n, f, oh, ow));
        for ni in 0..n {
            for fi in 0..f {
                for po in 0..oh {
                    for qo in 0..ow {
                        let mut acc = bias[fi];
                        for ci in 0..c {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let yi = (po * stride + ki * dilation) as isize - ph as isize;
                                    let xi = (qo * stride + kj * dilation) as isize - pw as isize;
                                    if yi >= 0 && xi >= 0 && (yi as usize) < h && (xi as usize) < w
                                    {
                                        acc += x[[ni, ci, yi as usize, xi as usize]]
                                            * weight[[fi, ci, ki, kj]];
                                    }
                                }
                            }
                        }
                        out[[ni, fi, po, qo]] = acc;
                    }
                }
            }
        }
        out
    }

    /// Direct-summation transposed convolution oracle.
    fn deconv_oracle(
        x: &Array4<f64>,
        weight: &Array4<f64>,
        bias: &Array1<f64>,
        stride: usize,
    ) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        let (_, f, kh, kw) = weight.dim();
        let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
        let (oh, ow) = (h * stride, w * stride);
        let mut out = Array4::zeros((n, f, oh, ow));
        for ni in 0..n {
            for fi in 0..f {
                for pi in 0..h {
                    for qi in 0..w {
                        for ci in 0..c {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let yo = (pi * stride + ki) as isize - ph as isize;
                                    let xo = (qi * stride + kj) as isize - pw as isize;
                                    if yo >= 0
                                        && xo >= 0
                                        && (yo as usize) < oh
                                        && (xo as usize) < ow
                                    {
                                        out[[ni, fi, yo as usize, xo as usize]] +=
                                            x[[ni, ci, pi, qi]] * weight[[ci, fi, ki, kj]];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        for fi in 0..f {
            out.slice_mut(s![.., fi, .., ..]).mapv_inplace(|v| v + bias[fi]);
        }
        out
    }

    fn assert_close(a: &Array4<f64>, b: &Array4<f64>, tol: f64) {
        assert_eq!(a.dim(), b.dim());
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < tol, "{x} vs {y}");
        }
    }

    #[test]
    fn conv_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(stride, dilation, k) in &[(1usize, 1usize, 3usize), (2, 1, 9), (1, 2, 3), (1, 3, 3), (2, 1, 5)] {
            let x = randn(&mut rng, (2, 3, 8, 10));
            let w = randn(&mut rng, (4, 3, k, k));
            let b = Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0));
            let fast = conv2d(&x, &w, &b, stride, dilation);
            let slow = conv_oracle(&x, &w, &b, stride, dilation);
            assert_close(&fast, &slow, 1e-10);
        }
    }

    #[test]
    fn deconv_matches_direct_summation_and_doubles() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &k in &[3usize, 5] {
            let x = randn(&mut rng, (2, 3, 4, 5));
            let w = randn(&mut rng, (3, 2, k, k));
            let b = Array1::from_shape_fn(2, |_| rng.random_range(-1.0..1.0));
            let fast = deconv2d(&x, &w, &b, 2);
            assert_eq!(fast.dim(), (2, 2, 8, 10));
            let slow = deconv_oracle(&x, &w, &b, 2);
            assert_close(&fast, &slow, 1e-10);
        }
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> pins the gather/scatter indexing
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = PatchGrid { kh: 3, kw: 3, stride: 2, dilation: 2, positions: (3, 4) };
        let padded = Array3::from_shape_fn((2, 10, 12), |_| rng.random_range(-1.0..1.0));
        let col_shape = (2 * 9, 12);
        let y = Array2::from_shape_fn(col_shape, |_| rng.random_range(-1.0..1.0));

        let cx = im2col(&padded, grid);
        let iy = col2im(&y, 2, 10, 12, grid);

        let lhs: f64 = cx.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = padded.iter().zip(iy.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    /// Central-difference check of both backward passes through a scalar
    /// probe `sum(conv(x) * probe)`.
    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = randn(&mut rng, (1, 2, 6, 6));
        let w = randn(&mut rng, (3, 2, 3, 3));
        let b = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
        let probe = randn(&mut rng, (1, 3, 3, 3));
        let stride = 2;

        let (gx, gw, gb) = conv2d_backward(&x, &w, &probe, stride, 1);
        let f = |x: &Array4<f64>, w: &Array4<f64>, b: &Array1<f64>| -> f64 {
            (conv2d(x, w, b, stride, 1) * &probe).sum()
        };
        check_fd(&x, &w, &b, f, &gx, &gw, &gb, &mut rng);
    }

    #[test]
    fn deconv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = randn(&mut rng, (1, 2, 3, 3));
        let w = randn(&mut rng, (2, 3, 5, 5));
        let b = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
        let probe = randn(&mut rng, (1, 3, 6, 6));

        let (gx, gw, gb) = deconv2d_backward(&x, &w, &probe, 2);
        let f = |x: &Array4<f64>, w: &Array4<f64>, b: &Array1<f64>| -> f64 {
            (deconv2d(x, w, b, 2) * &probe).sum()
        };
        check_fd(&x, &w, &b, f, &gx, &gw, &gb, &mut rng);
    }

    #[allow(clippy::too_many_arguments)]
    fn check_fd<F>(
        x: &Array4<f64>,
        w: &Array4<f64>,
        b: &Array1<f64>,
        f: F,
        gx: &Array4<f64>,
        gw: &Array4<f64>,
        gb: &Array1<f64>,
        rng: &mut ChaCha8Rng,
    ) where
        F: Fn(&Array4<f64>, &Array4<f64>, &Array1<f64>) -> f64,
    {
        let h = 1e-6;
        let probe_indices =
            |len: usize, rng: &mut ChaCha8Rng| -> Vec<usize> { (0..6).map(|_| rng.random_range(0..len)).collect() };

        for &i in &probe_indices(x.len(), rng) {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[i] += h;
            xm.as_slice_mut().unwrap()[i] -= h;
            let fd = (f(&xp, w, b) - f(&xm, w, b)) / (2.0 * h);
            let an = gx.as_slice().unwrap()[i];
            assert!((fd - an).abs() < 1e-6 * fd.abs().max(an.abs()).max(1.0), "input grad: {fd} vs {an}");
        }
        for &i in &probe_indices(w.len(), rng) {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp.as_slice_mut().unwrap()[i] += h;
            wm.as_slice_mut().unwrap()[i] -= h;
            let fd = (f(x, &wp, b) - f(x, &wm, b)) / (2.0 * h);
            let an = gw.as_slice().unwrap()[i];
            assert!((fd - an).abs() < 1e-6 * fd.abs().max(an.abs()).max(1.0), "weight grad: {fd} vs {an}");
        }
        for i in 0..b.len() {
            let mut bp = b.clone();
            let mut bm = b.clone();
            bp[i] += h;
            bm[i] -= h;
            let fd = (f(x, w, &bp) - f(x, w, &bm)) / (2.0 * h);
            let an = gb[i];
            assert!((fd - an).abs() < 1e-6 * fd.abs().max(an.abs()).max(1.0), "bias grad: {fd} vs {an}");
        }
    }
}

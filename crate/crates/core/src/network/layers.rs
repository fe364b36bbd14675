//! Forward/backward kernels on instance tensors laid out `(N, C, T, V)`.
//!
//! Padded joints are described by a boolean joint mask. Every kernel here
//! leaves masked joints at exactly zero in its output.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView2, ArrayViewMut2, Axis, Zip};

pub const BN_EPS: f64 = 1e-5;

fn as_mat(x: &Array4<f64>, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    x.view().into_shape_with_order((rows, cols)).expect("contiguous tensor")
}

fn instance_mat(x: &Array4<f64>, i: usize) -> ArrayView2<'_, f64> {
    let (_, c, t, v) = x.dim();
    x.index_axis(Axis(0), i).into_shape_with_order((c, t * v)).expect("contiguous instance")
}

fn instance_mat_mut(x: &mut Array4<f64>, i: usize) -> ArrayViewMut2<'_, f64> {
    let (_, c, t, v) = x.dim();
    x.index_axis_mut(Axis(0), i).into_shape_with_order((c, t * v)).expect("contiguous instance")
}

/// Effective aggregation matrices: normalized partitions, optionally scaled
/// elementwise by the learned edge importance.
pub fn effective_adjacency(partitions: &Array3<f64>, importance: Option<&Array3<f64>>) -> Array3<f64> {
    match importance {
        Some(m) => partitions * m,
        None => partitions.clone(),
    }
}

pub struct SpatialCache {
    /// Per-partition aggregated inputs `x A_p^T`, each `(N, C_in, T, V)`.
    pub aggregated: Vec<Array4<f64>>,
}

/// Partitioned graph convolution:
/// `out[n, o, t, i] = sum_p sum_c W_p[o, c] sum_j A_p[i, j] x[n, c, t, j]`.
pub fn spatial_forward(x: &Array4<f64>, adjacency: &Array3<f64>, weight: &Array3<f64>) -> (Array4<f64>, SpatialCache) {
    let (n, cin, t, v) = x.dim();
    let (parts, cout, wcin) = weight.dim();
    assert_eq!(wcin, cin, "graph conv input channels");
    assert_eq!(adjacency.dim(), (parts, v, v), "adjacency shape");
    let x2 = as_mat(x, n * cin * t, v);
    let mut out = Array4::zeros((n, cout, t, v));
    let mut aggregated = Vec::with_capacity(parts);
    for p in 0..parts {
        let a = adjacency.index_axis(Axis(0), p);
        let agg = x2.dot(&a.t()).into_shape_with_order((n, cin, t, v)).expect("reshape");
        let w = weight.index_axis(Axis(0), p);
        for i in 0..n {
            let src = instance_mat(&agg, i);
            let mut dst = instance_mat_mut(&mut out, i);
            general_mat_mul(1.0, &w, &src, 1.0, &mut dst);
        }
        aggregated.push(agg);
    }
    (out, SpatialCache { aggregated })
}

pub struct SpatialGrads {
    pub dx: Array4<f64>,
    pub dweight: Array3<f64>,
    /// Gradient with respect to the effective adjacency entries.
    pub dadjacency: Array3<f64>,
}

pub fn spatial_backward(
    dout: &Array4<f64>,
    x: &Array4<f64>,
    adjacency: &Array3<f64>,
    weight: &Array3<f64>,
    cache: &SpatialCache,
) -> SpatialGrads {
    let (n, cin, t, v) = x.dim();
    let (parts, cout, _) = weight.dim();
    let x2 = as_mat(x, n * cin * t, v);
    let mut dx = Array4::zeros((n, cin, t, v));
    let mut dweight = Array3::zeros((parts, cout, cin));
    let mut dadjacency = Array3::zeros((parts, v, v));
    for p in 0..parts {
        let w = weight.index_axis(Axis(0), p);
        let mut dagg = Array4::zeros((n, cin, t, v));
        {
            let mut dw = dweight.index_axis_mut(Axis(0), p);
            for i in 0..n {
                let g = instance_mat(dout, i);
                general_mat_mul(1.0, &g, &instance_mat(&cache.aggregated[p], i).t(), 1.0, &mut dw);
                let mut da = instance_mat_mut(&mut dagg, i);
                general_mat_mul(1.0, &w.t(), &g, 0.0, &mut da);
            }
        }
        let dagg2 = as_mat(&dagg, n * cin * t, v);
        let a = adjacency.index_axis(Axis(0), p);
        {
            let mut dx2 = dx.view_mut().into_shape_with_order((n * cin * t, v)).expect("contiguous");
            general_mat_mul(1.0, &dagg2, &a, 1.0, &mut dx2);
        }
        let mut dadj = dadjacency.index_axis_mut(Axis(0), p);
        general_mat_mul(1.0, &dagg2.t(), &x2, 0.0, &mut dadj);
    }
    SpatialGrads { dx, dweight, dadjacency }
}

pub fn temporal_output_len(frames: usize, kernel: usize, stride: usize) -> usize {
    let pad = kernel / 2;
    (frames + 2 * pad - kernel) / stride + 1
}

fn im2col(x: &Array4<f64>, i: usize, kernel: usize, stride: usize, t_out: usize) -> Array2<f64> {
    let (_, cin, t, v) = x.dim();
    let pad = kernel / 2;
    let mut cols = Array2::zeros((cin * kernel, t_out * v));
    let xi = x.index_axis(Axis(0), i);
    for c in 0..cin {
        for k in 0..kernel {
            let mut row = cols.row_mut(c * kernel + k);
            for to in 0..t_out {
                let src = (to * stride + k) as isize - pad as isize;
                if src < 0 || src >= t as isize {
                    continue;
                }
                row.slice_mut(s![to * v..(to + 1) * v]).assign(&xi.slice(s![c, src as usize, ..]));
            }
        }
    }
    cols
}

fn col2im_add(dcols: &Array2<f64>, dx: &mut Array4<f64>, i: usize, kernel: usize, stride: usize, t_out: usize) {
    let (_, cin, t, v) = dx.dim();
    let pad = kernel / 2;
    let mut dxi = dx.index_axis_mut(Axis(0), i);
    for c in 0..cin {
        for k in 0..kernel {
            let row = dcols.row(c * kernel + k);
            for to in 0..t_out {
                let src = (to * stride + k) as isize - pad as isize;
                if src < 0 || src >= t as isize {
                    continue;
                }
                let mut dst = dxi.slice_mut(s![c, src as usize, ..]);
                dst += &row.slice(s![to * v..(to + 1) * v]);
            }
        }
    }
}

/// Convolution along frames with a `kernel`-tap filter, zero padding of
/// `kernel / 2` and the given stride. Weight is `(C_out, C_in, kernel)`.
pub fn temporal_forward(x: &Array4<f64>, weight: &Array3<f64>, stride: usize) -> Array4<f64> {
    let (n, cin, t, v) = x.dim();
    let (cout, wcin, kernel) = weight.dim();
    assert_eq!(wcin, cin, "temporal conv input channels");
    let t_out = temporal_output_len(t, kernel, stride);
    let w2 = weight.view().into_shape_with_order((cout, cin * kernel)).expect("contiguous weight");
    let mut out = Array4::zeros((n, cout, t_out, v));
    for i in 0..n {
        let cols = im2col(x, i, kernel, stride, t_out);
        let mut dst = instance_mat_mut(&mut out, i);
        general_mat_mul(1.0, &w2, &cols, 0.0, &mut dst);
    }
    out
}

pub fn temporal_backward(dout: &Array4<f64>, x: &Array4<f64>, weight: &Array3<f64>, stride: usize) -> (Array4<f64>, Array3<f64>) {
    let (n, cin, _, _) = x.dim();
    let (cout, _, kernel) = weight.dim();
    let t_out = dout.dim().2;
    let w2 = weight.view().into_shape_with_order((cout, cin * kernel)).expect("contiguous weight");
    let mut dx = Array4::zeros(x.dim());
    let mut dw2 = Array2::zeros((cout, cin * kernel));
    for i in 0..n {
        let cols = im2col(x, i, kernel, stride, t_out);
        let g = instance_mat(dout, i);
        general_mat_mul(1.0, &g, &cols.t(), 1.0, &mut dw2);
        let dcols = w2.t().dot(&g);
        col2im_add(&dcols, &mut dx, i, kernel, stride, t_out);
    }
    let dweight = dw2.into_shape_with_order((cout, cin, kernel)).expect("reshape");
    (dx, dweight)
}

/// Statistics and normalized activations kept for the backward pass.
pub struct BnCache {
    pub xhat: Array4<f64>,
    pub inv_std: Array1<f64>,
    pub mean: Array1<f64>,
    /// Biased batch variance.
    pub var: Array1<f64>,
    /// Number of valid positions per channel.
    pub count: usize,
    pub train: bool,
}

/// Batch normalization per channel with statistics over valid joints only.
/// `running` selects evaluation mode with the given `(mean, var)`.
pub fn batchnorm_forward(
    x: &Array4<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
    mask: &[bool],
    running: Option<(&Array1<f64>, &Array1<f64>)>,
) -> (Array4<f64>, BnCache) {
    let (n, c, t, v) = x.dim();
    let valid_joints = mask.iter().filter(|&&m| m).count();
    let count = n * t * valid_joints;
    let (mean, var) = match running {
        Some((m, var)) => (m.clone(), var.clone()),
        None => {
            let mut mean = Array1::zeros(c);
            let mut var = Array1::zeros(c);
            for ch in 0..c {
                let view = x.slice(s![.., ch, .., ..]);
                let mut sum = 0.0;
                for ((_, _, j), &val) in view.indexed_iter() {
                    if mask[j] {
                        sum += val;
                    }
                }
                let m = sum / count.max(1) as f64;
                let mut sq = 0.0;
                for ((_, _, j), &val) in view.indexed_iter() {
                    if mask[j] {
                        sq += (val - m) * (val - m);
                    }
                }
                mean[ch] = m;
                var[ch] = sq / count.max(1) as f64;
            }
            (mean, var)
        }
    };
    let inv_std = var.mapv(|s| 1.0 / (s + BN_EPS).sqrt());
    let mut xhat = Array4::zeros((n, c, t, v));
    let mut y = Array4::zeros((n, c, t, v));
    for ch in 0..c {
        let (m, is, g, b) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
        Zip::indexed(xhat.slice_mut(s![.., ch, .., ..]))
            .and(y.slice_mut(s![.., ch, .., ..]))
            .and(x.slice(s![.., ch, .., ..]))
            .for_each(|(_, _, j), xh, yv, &xv| {
                if mask[j] {
                    *xh = (xv - m) * is;
                    *yv = g * *xh + b;
                }
            });
    }
    let cache = BnCache {
        xhat,
        inv_std,
        mean,
        var,
        count,
        train: running.is_none(),
    };
    (y, cache)
}

pub fn batchnorm_backward(dy: &Array4<f64>, gamma: &Array1<f64>, cache: &BnCache, mask: &[bool]) -> (Array4<f64>, Array1<f64>, Array1<f64>) {
    let (n, c, t, v) = dy.dim();
    let mut dx = Array4::zeros((n, c, t, v));
    let mut dgamma = Array1::zeros(c);
    let mut dbeta = Array1::zeros(c);
    let m = cache.count.max(1) as f64;
    for ch in 0..c {
        let dyc = dy.slice(s![.., ch, .., ..]);
        let xh = cache.xhat.slice(s![.., ch, .., ..]);
        let mut sum_dy = 0.0;
        let mut sum_dy_xh = 0.0;
        Zip::indexed(&dyc).and(&xh).for_each(|(_, _, j), &d, &h| {
            if mask[j] {
                sum_dy += d;
                sum_dy_xh += d * h;
            }
        });
        dgamma[ch] = sum_dy_xh;
        dbeta[ch] = sum_dy;
        let g = gamma[ch];
        let is = cache.inv_std[ch];
        let train = cache.train;
        Zip::indexed(dx.slice_mut(s![.., ch, .., ..]))
            .and(&dyc)
            .and(&xh)
            .for_each(|(_, _, j), dxv, &d, &h| {
                if mask[j] {
                    *dxv = if train {
                        g * is * (d - sum_dy / m - h * sum_dy_xh / m)
                    } else {
                        g * is * d
                    };
                }
            });
    }
    (dx, dgamma, dbeta)
}

pub fn relu_inplace(x: &mut Array4<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Zeroes `grad` wherever the post-activation `out` is not positive.
pub fn relu_backward_inplace(grad: &mut Array4<f64>, out: &Array4<f64>) {
    Zip::from(grad).and(out).for_each(|g, &o| {
        if o <= 0.0 {
            *g = 0.0;
        }
    });
}

pub fn zero_masked(x: &mut Array4<f64>, mask: &[bool]) {
    for (j, &m) in mask.iter().enumerate() {
        if !m {
            x.slice_mut(s![.., .., .., j]).fill(0.0);
        }
    }
}

//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use cnnflow::autodiff::{Gradients, ParamStore};
use cnnflow::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Direct quadruple-loop cross-correlation with zero padding.
pub fn brute_conv2d(x: &Tensor, k: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let at = |c: usize, i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= h as isize || j >= w as isize {
            0.0
        } else {
            x.data()[(c * h + i as usize) * w + j as usize]
        }
    };
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        for i in 0..oh {
            for j in 0..ow {
                let mut s = bias.map_or(0.0, |b| b.data()[o]);
                for c in 0..ci {
                    for m in 0..kh {
                        for n in 0..kw {
                            let ii = (i * stride + m) as isize - pad as isize;
                            let jj = (j * stride + n) as isize - pad as isize;
                            s += at(c, ii, jj) * k.data()[((o * ci + c) * kh + m) * kw + n];
                        }
                    }
                }
                out[(o * oh + i) * ow + j] = s;
            }
        }
    }
    Tensor::new(&[co, oh, ow], out).unwrap()
}

/// Dense matrix `C` of the convolution (rows: flattened output, cols: flattened
/// input), built by pushing every unit input through the brute-force oracle.
pub fn conv_matrix(in_shape: &[usize], k: &Tensor, stride: usize, pad: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let n_in: usize = in_shape.iter().product();
    let mut cols = Vec::with_capacity(n_in);
    let mut out_shape = Vec::new();
    for idx in 0..n_in {
        let e = Tensor::from_fn(in_shape, |i| if i == idx { 1.0 } else { 0.0 });
        let y = brute_conv2d(&e, k, None, stride, pad);
        out_shape = y.shape().to_vec();
        cols.push(y.into_data());
    }
    let n_out = cols[0].len();
    let c = (0..n_out).map(|r| (0..n_in).map(|c| cols[c][r]).collect()).collect();
    (c, out_shape)
}

/// `C^T v`
pub fn matvec_t(c: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let n_in = c[0].len();
    let mut out = vec![0.0; n_in];
    for (row, &vr) in c.iter().zip(v) {
        for (o, &cr) in out.iter_mut().zip(row) {
            *o += cr * vr;
        }
    }
    out
}

/// Relative error between analytic and numeric derivatives. Magnitudes below
/// `1e-6` are treated as `1e-6` so that vanishing gradients compare on an
/// absolute scale.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central finite differences (step `eps`) of `loss` with respect to every
/// scalar of every parameter; returns the worst relative error against
/// `grads`.
pub fn max_fd_rel_err(
    store: &ParamStore,
    grads: &Gradients,
    eps: f64,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> f64 {
    let mut work = store.clone();
    let mut worst = 0.0f64;
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = store.get(id).value.len();
        for i in 0..n {
            let w0 = store.get(id).value.data()[i];
            work.get_mut(id).value.data_mut()[i] = w0 + eps;
            let lp = loss(&work);
            work.get_mut(id).value.data_mut()[i] = w0 - eps;
            let lm = loss(&work);
            work.get_mut(id).value.data_mut()[i] = w0;
            let numeric = (lp - lm) / (2.0 * eps);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
            worst = worst.max(rel_err(analytic, numeric));
        }
    }
    worst
}

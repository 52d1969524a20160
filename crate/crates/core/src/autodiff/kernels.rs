//! Forward and adjoint kernels for the taped operations.
//!
//! Convolutions are lowered to GEMM through an im2col buffer laid out as
//! `[channels * kh * kw, out_h * out_w]`. The transposed convolution reuses the
//! same lowering with the roles of image and columns swapped, so the two are
//! exact adjoints of each other by construction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Geometry shared by a convolution and its transpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// Geometry of a forward convolution over a `[channels, h, w]` image.
    pub fn forward(
        channels: usize,
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Dimension("stride must be >= 1".into()));
        }
        let ph = h + 2 * padding;
        let pw = w + 2 * padding;
        if kh > ph || kw > pw {
            return Err(Error::Dimension(format!(
                "kernel {kh}x{kw} larger than padded input {ph}x{pw}"
            )));
        }
        Ok(ConvGeom {
            channels,
            h,
            w,
            kh,
            kw,
            stride,
            padding,
            out_h: (ph - kh) / stride + 1,
            out_w: (pw - kw) / stride + 1,
        })
    }

    fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unrolls `image` (`[channels, h, w]`) into columns.
pub(crate) fn im2col(image: &[f64], g: &ConvGeom) -> Vec<f64> {
    let n = g.col_cols();
    let mut cols = vec![0.0; g.col_rows() * n];
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &image[c * g.h * g.w..(c + 1) * g.h * g.w];
        for m in 0..g.kh {
            for k in 0..g.kw {
                let row = (c * g.kh + m) * g.kw + k;
                let dst = &mut cols[row * n..(row + 1) * n];
                for i in 0..g.out_h {
                    let ii = (i * g.stride + m) as isize - pad;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let src = &plane[ii as usize * g.w..(ii as usize + 1) * g.w];
                    let out_row = &mut dst[i * g.out_w..(i + 1) * g.out_w];
                    for (j, slot) in out_row.iter_mut().enumerate() {
                        let jj = (j * g.stride + k) as isize - pad;
                        if jj >= 0 && jj < g.w as isize {
                            *slot = src[jj as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back, summing overlaps.
pub(crate) fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let n = g.col_cols();
    let mut image = vec![0.0; g.channels * g.h * g.w];
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &mut image[c * g.h * g.w..(c + 1) * g.h * g.w];
        for m in 0..g.kh {
            for k in 0..g.kw {
                let row = (c * g.kh + m) * g.kw + k;
                let src = &cols[row * n..(row + 1) * n];
                for i in 0..g.out_h {
                    let ii = (i * g.stride + m) as isize - pad;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * g.w..(ii as usize + 1) * g.w];
                    let col_row = &src[i * g.out_w..(i + 1) * g.out_w];
                    for (j, &v) in col_row.iter().enumerate() {
                        let jj = (j * g.stride + k) as isize - pad;
                        if jj >= 0 && jj < g.w as isize {
                            dst[jj as usize] += v;
                        }
                    }
                }
            }
        }
    }
    image
}

/// Row-major matrix view for [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Mat {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Mat {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = a * b + beta * c`, with `c` row-major `[m, n]`.
pub(crate) fn gemm(a: Mat<'_>, b: Mat<'_>, beta: f64, c: &mut [f64]) {
    let (m, k) = a.logical();
    let (kb, n) = b.logical();
    assert_eq!(k, kb, "gemm inner dimensions");
    assert_eq!(c.len(), m * n, "gemm output size");
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: extents and strides describe in-bounds views of the slices
    // checked above; `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn expect_rank(t: &Tensor, rank: usize, what: &str) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::Dimension(format!(
            "{what} must have rank {rank}, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

fn check_bias(bias: Option<&Tensor>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(Error::Dimension(format!(
                "bias shape {:?} does not match {channels} output channels",
                b.shape()
            )));
        }
    }
    Ok(())
}

fn add_bias(out: &mut [f64], bias: Option<&Tensor>, plane: usize) {
    if let Some(b) = bias {
        for (chunk, &bv) in out.chunks_mut(plane).zip(b.data()) {
            for v in chunk {
                *v += bv;
            }
        }
    }
}

fn bias_grad(gout: &[f64], channels: usize, plane: usize) -> Tensor {
    let sums = gout
        .chunks(plane)
        .take(channels)
        .map(|c| c.iter().sum())
        .collect();
    Tensor::from_parts(vec![channels], sums)
}

/// Geometry of a `conv2d` call, validated against input and kernel shapes.
pub(crate) fn conv2d_geom(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(ConvGeom, usize)> {
    expect_rank(input, 3, "conv2d input")?;
    expect_rank(kernel, 4, "conv2d kernel")?;
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let ks = kernel.shape();
    if ks[1] != c_in {
        return Err(Error::Dimension(format!(
            "conv2d kernel expects {} input channels, input has {c_in}",
            ks[1]
        )));
    }
    let g = ConvGeom::forward(c_in, h, w, ks[2], ks[3], stride, padding)?;
    Ok((g, ks[0]))
}

/// Cross-correlation `S(i,j) = sum_c sum_m sum_n I_c(i*s+m, j*s+n) K(m,n) + b`
/// over a zero-padded input.
pub(crate) fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (g, c_out) = conv2d_geom(input, kernel, stride, padding)?;
    check_bias(bias, c_out)?;
    let cols = im2col(input.data(), &g);
    let n = g.col_cols();
    let mut out = vec![0.0; c_out * n];
    gemm(
        Mat::new(kernel.data(), c_out, g.col_rows()),
        Mat::new(&cols, g.col_rows(), n),
        0.0,
        &mut out,
    );
    add_bias(&mut out, bias, n);
    Ok(Tensor::from_parts(vec![c_out, g.out_h, g.out_w], out))
}

pub(crate) struct ConvGrads {
    pub input: Option<Tensor>,
    pub kernel: Tensor,
    pub bias: Tensor,
}

pub(crate) fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    gout: &Tensor,
    stride: usize,
    padding: usize,
    need_input: bool,
) -> Result<ConvGrads> {
    let (g, c_out) = conv2d_geom(input, kernel, stride, padding)?;
    let n = g.col_cols();
    let k = g.col_rows();
    let cols = im2col(input.data(), &g);
    let mut dk = vec![0.0; c_out * k];
    gemm(
        Mat::new(gout.data(), c_out, n),
        Mat::new(&cols, k, n).t(),
        0.0,
        &mut dk,
    );
    let input_grad = if need_input {
        let mut dcols = vec![0.0; k * n];
        gemm(
            Mat::new(kernel.data(), c_out, k).t(),
            Mat::new(gout.data(), c_out, n),
            0.0,
            &mut dcols,
        );
        Some(Tensor::from_parts(
            input.shape().to_vec(),
            col2im(&dcols, &g),
        ))
    } else {
        None
    };
    Ok(ConvGrads {
        input: input_grad,
        kernel: Tensor::from_parts(kernel.shape().to_vec(), dk),
        bias: bias_grad(gout.data(), c_out, n),
    })
}

/// Geometry of a transposed convolution. The returned [`ConvGeom`] describes
/// the *forward* convolution whose adjoint is being applied, i.e. its image is
/// the transposed convolution's output.
pub(crate) fn conv_transpose2d_geom(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(ConvGeom, usize)> {
    expect_rank(input, 3, "transposed conv input")?;
    expect_rank(kernel, 4, "transposed conv kernel")?;
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let ks = kernel.shape();
    if ks[0] != c_in {
        return Err(Error::Dimension(format!(
            "transposed conv kernel expects {} input channels, input has {c_in}",
            ks[0]
        )));
    }
    if stride == 0 {
        return Err(Error::Dimension("stride must be >= 1".into()));
    }
    let (c_out, kh, kw) = (ks[1], ks[2], ks[3]);
    let full_h = (h - 1) * stride + kh;
    let full_w = (w - 1) * stride + kw;
    if full_h <= 2 * padding || full_w <= 2 * padding {
        return Err(Error::Dimension(format!(
            "padding {padding} consumes the whole {full_h}x{full_w} transposed output"
        )));
    }
    let g = ConvGeom::forward(
        c_out,
        full_h - 2 * padding,
        full_w - 2 * padding,
        kh,
        kw,
        stride,
        padding,
    )?;
    debug_assert_eq!((g.out_h, g.out_w), (h, w));
    Ok((g, c_out))
}

/// `O = C^T I`: the adjoint of [`conv2d_forward`] with respect to its image.
pub(crate) fn conv_transpose2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (g, c_out) = conv_transpose2d_geom(input, kernel, stride, padding)?;
    check_bias(bias, c_out)?;
    let c_in = input.shape()[0];
    let n = g.col_cols();
    let k = g.col_rows();
    let mut cols = vec![0.0; k * n];
    gemm(
        Mat::new(kernel.data(), c_in, k).t(),
        Mat::new(input.data(), c_in, n),
        0.0,
        &mut cols,
    );
    let mut out = col2im(&cols, &g);
    add_bias(&mut out, bias, g.h * g.w);
    Ok(Tensor::from_parts(vec![c_out, g.h, g.w], out))
}

pub(crate) fn conv_transpose2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    gout: &Tensor,
    stride: usize,
    padding: usize,
    need_input: bool,
) -> Result<ConvGrads> {
    let (g, c_out) = conv_transpose2d_geom(input, kernel, stride, padding)?;
    let c_in = input.shape()[0];
    let n = g.col_cols();
    let k = g.col_rows();
    let dcols = im2col(gout.data(), &g);
    let mut dk = vec![0.0; c_in * k];
    gemm(
        Mat::new(input.data(), c_in, n),
        Mat::new(&dcols, k, n).t(),
        0.0,
        &mut dk,
    );
    let input_grad = if need_input {
        let mut dx = vec![0.0; c_in * n];
        gemm(
            Mat::new(kernel.data(), c_in, k),
            Mat::new(&dcols, k, n),
            0.0,
            &mut dx,
        );
        Some(Tensor::from_parts(input.shape().to_vec(), dx))
    } else {
        None
    };
    Ok(ConvGrads {
        input: input_grad,
        kernel: Tensor::from_parts(kernel.shape().to_vec(), dk),
        bias: bias_grad(gout.data(), c_out, g.h * g.w),
    })
}

/// Non-overlapping max pooling. Ties resolve to the first element in
/// row-major scan order of the window. Returns the pooled tensor and, per
/// output element, the flat input index of its maximum.
pub(crate) fn max_pool2d_forward(input: &Tensor, window: usize) -> Result<(Tensor, Vec<usize>)> {
    expect_rank(input, 3, "max_pool2d input")?;
    if window == 0 {
        return Err(Error::Dimension("pool window must be >= 1".into()));
    }
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if h % window != 0 || w % window != 0 {
        return Err(Error::Dimension(format!(
            "pool window {window} does not divide {h}x{w}"
        )));
    }
    let (oh, ow) = (h / window, w / window);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut best_idx = (ch * h + i * window) * w + j * window;
                let mut best = x[best_idx];
                for m in 0..window {
                    for n in 0..window {
                        let idx = (ch * h + i * window + m) * w + j * window + n;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((Tensor::from_parts(vec![c, oh, ow], out), argmax))
}

pub(crate) fn max_pool2d_backward(input_shape: &[usize], argmax: &[usize], gout: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(gout.data()) {
        d[idx] += g;
    }
    dx
}

/// Elementwise activation functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Sigmoid,
    Tanh,
    Relu,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ActivationKind {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    pub(crate) fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => y * (1.0 - y),
            ActivationKind::Tanh => 1.0 - y * y,
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

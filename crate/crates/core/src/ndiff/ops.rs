//! Forward and backward kernels for the handful of ops the HQARF networks use.
//!
//! Every op is a pair of free functions: the forward pass and a backward pass
//! that maps the upstream gradient to gradients of its inputs. Convolutions
//! act on a single `[channels, width]` sample; batching happens one level up.

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Output width of a 1-D convolution, `floor((w + 2p - k)/s) + 1`.
pub fn conv1d_out_width(
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    if stride == 0 {
        return Err(Error::dim("conv1d", "stride must be at least 1"));
    }
    if width + 2 * padding < kernel {
        return Err(Error::dim(
            "conv1d",
            format!(
                "padded width {} shorter than kernel {kernel}",
                width + 2 * padding
            ),
        ));
    }
    Ok((width + 2 * padding - kernel) / stride + 1)
}

/// Output width of a 1-D transposed convolution, `(w - 1)s - 2p + k`.
pub fn conv_transpose1d_out_width(
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    if stride == 0 || width == 0 {
        return Err(Error::dim(
            "conv_transpose1d",
            "stride and width must be positive",
        ));
    }
    ((width - 1) * stride + kernel)
        .checked_sub(2 * padding)
        .filter(|&w| w > 0)
        .ok_or_else(|| Error::dim("conv_transpose1d", "padding exceeds output extent"))
}

// cols[(c*k + j), o] = x[c, o*stride + j - pad]
#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    x: &[T],
    channels: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_width: usize,
    cols: &mut [T],
) {
    for c in 0..channels {
        let row_in = &x[c * width..(c + 1) * width];
        for j in 0..kernel {
            let row = &mut cols[(c * kernel + j) * out_width..(c * kernel + j + 1) * out_width];
            for (o, v) in row.iter_mut().enumerate() {
                let pos = (o * stride + j) as isize - padding as isize;
                *v = if pos >= 0 && (pos as usize) < width {
                    row_in[pos as usize]
                } else {
                    T::zero()
                };
            }
        }
    }
}

// Adjoint of im2col: x[c, o*stride + j - pad] += cols[(c*k + j), o]
#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    cols: &[T],
    channels: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_width: usize,
    x: &mut [T],
) {
    for c in 0..channels {
        let row_out = &mut x[c * width..(c + 1) * width];
        for j in 0..kernel {
            let row = &cols[(c * kernel + j) * out_width..(c * kernel + j + 1) * out_width];
            for (o, &v) in row.iter().enumerate() {
                let pos = (o * stride + j) as isize - padding as isize;
                if pos >= 0 && (pos as usize) < width {
                    row_out[pos as usize] += v;
                }
            }
        }
    }
}

fn expect_rank<T: Real>(t: &Tensor<T>, rank: usize, op: &'static str, what: &str) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::dim(
            op,
            format!("{what} must have rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

/// Gradients returned by the convolution backward passes.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// `input` is `[c_in, w]`, `weight` is `[c_out, c_in, k]`, `bias` is `[c_out]`.
pub fn conv1d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    expect_rank(input, 2, "conv1d", "input")?;
    expect_rank(weight, 3, "conv1d", "kernel")?;
    let (c_in, w) = (input.dim(0), input.dim(1));
    let (c_out, k) = (weight.dim(0), weight.dim(2));
    if weight.dim(1) != c_in {
        return Err(Error::dim(
            "conv1d",
            format!(
                "kernel expects {} input channels, got {c_in}",
                weight.dim(1)
            ),
        ));
    }
    let w_out = conv1d_out_width(w, k, stride, padding)?;
    let mut cols = vec![T::zero(); c_in * k * w_out];
    im2col(input.data(), c_in, w, k, stride, padding, w_out, &mut cols);
    let mut out = vec![T::zero(); c_out * w_out];
    T::gemm(
        c_out,
        c_in * k,
        w_out,
        weight.data(),
        false,
        &cols,
        false,
        &mut out,
        false,
    );
    if let Some(b) = bias {
        add_channel_bias(&mut out, b, c_out, w_out, "conv1d")?;
    }
    Tensor::from_vec(&[c_out, w_out], out)?.check_finite("conv1d")
}

pub fn conv1d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGrads<T>> {
    let (c_in, w) = (input.dim(0), input.dim(1));
    let (c_out, k) = (weight.dim(0), weight.dim(2));
    let w_out = conv1d_out_width(w, k, stride, padding)?;
    if grad_out.shape() != [c_out, w_out] {
        return Err(Error::dim(
            "conv1d_backward",
            format!(
                "grad shape {:?}, expected [{c_out}, {w_out}]",
                grad_out.shape()
            ),
        ));
    }
    let mut cols = vec![T::zero(); c_in * k * w_out];
    im2col(input.data(), c_in, w, k, stride, padding, w_out, &mut cols);
    let mut gw = vec![T::zero(); c_out * c_in * k];
    T::gemm(
        c_out,
        w_out,
        c_in * k,
        grad_out.data(),
        false,
        &cols,
        true,
        &mut gw,
        false,
    );
    let mut gcols = vec![T::zero(); c_in * k * w_out];
    T::gemm(
        c_in * k,
        c_out,
        w_out,
        weight.data(),
        true,
        grad_out.data(),
        false,
        &mut gcols,
        false,
    );
    let mut gx = vec![T::zero(); c_in * w];
    col2im(&gcols, c_in, w, k, stride, padding, w_out, &mut gx);
    Ok(ConvGrads {
        input: Tensor::from_vec(&[c_in, w], gx)?.check_finite("conv1d_backward")?,
        weight: Tensor::from_vec(&[c_out, c_in, k], gw)?.check_finite("conv1d_backward")?,
        bias: channel_sums(grad_out.data(), c_out, w_out)?,
    })
}

/// `input` is `[c_in, w]`, `weight` is `[c_in, c_out, k]`, `bias` is `[c_out]`.
pub fn conv_transpose1d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    expect_rank(input, 2, "conv_transpose1d", "input")?;
    expect_rank(weight, 3, "conv_transpose1d", "kernel")?;
    let (c_in, w) = (input.dim(0), input.dim(1));
    let (c_out, k) = (weight.dim(1), weight.dim(2));
    if weight.dim(0) != c_in {
        return Err(Error::dim(
            "conv_transpose1d",
            format!(
                "kernel expects {} input channels, got {c_in}",
                weight.dim(0)
            ),
        ));
    }
    let w_out = conv_transpose1d_out_width(w, k, stride, padding)?;
    let mut cols = vec![T::zero(); c_out * k * w];
    T::gemm(
        c_out * k,
        c_in,
        w,
        weight.data(),
        true,
        input.data(),
        false,
        &mut cols,
        false,
    );
    let mut out = vec![T::zero(); c_out * w_out];
    col2im(&cols, c_out, w_out, k, stride, padding, w, &mut out);
    if let Some(b) = bias {
        add_channel_bias(&mut out, b, c_out, w_out, "conv_transpose1d")?;
    }
    Tensor::from_vec(&[c_out, w_out], out)?.check_finite("conv_transpose1d")
}

pub fn conv_transpose1d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGrads<T>> {
    let (c_in, w) = (input.dim(0), input.dim(1));
    let (c_out, k) = (weight.dim(1), weight.dim(2));
    let w_out = conv_transpose1d_out_width(w, k, stride, padding)?;
    if grad_out.shape() != [c_out, w_out] {
        return Err(Error::dim(
            "conv_transpose1d_backward",
            format!(
                "grad shape {:?}, expected [{c_out}, {w_out}]",
                grad_out.shape()
            ),
        ));
    }
    let mut gcols = vec![T::zero(); c_out * k * w];
    im2col(
        grad_out.data(),
        c_out,
        w_out,
        k,
        stride,
        padding,
        w,
        &mut gcols,
    );
    let mut gx = vec![T::zero(); c_in * w];
    T::gemm(
        c_in,
        c_out * k,
        w,
        weight.data(),
        false,
        &gcols,
        false,
        &mut gx,
        false,
    );
    let mut gw = vec![T::zero(); c_in * c_out * k];
    T::gemm(
        c_in,
        w,
        c_out * k,
        input.data(),
        false,
        &gcols,
        true,
        &mut gw,
        false,
    );
    Ok(ConvGrads {
        input: Tensor::from_vec(&[c_in, w], gx)?.check_finite("conv_transpose1d_backward")?,
        weight: Tensor::from_vec(&[c_in, c_out, k], gw)?
            .check_finite("conv_transpose1d_backward")?,
        bias: channel_sums(grad_out.data(), c_out, w_out)?,
    })
}

fn add_channel_bias<T: Real>(
    out: &mut [T],
    bias: &Tensor<T>,
    channels: usize,
    width: usize,
    op: &'static str,
) -> Result<()> {
    if bias.len() != channels {
        return Err(Error::dim(
            op,
            format!("bias length {} != {channels}", bias.len()),
        ));
    }
    for (row, &b) in out.chunks_mut(width).zip(bias.data()) {
        row.iter_mut().for_each(|v| *v += b);
    }
    Ok(())
}

fn channel_sums<T: Real>(grad: &[T], channels: usize, width: usize) -> Result<Tensor<T>> {
    let sums = grad
        .chunks(width)
        .take(channels)
        .map(|r| r.iter().copied().sum())
        .collect();
    Tensor::from_vec(&[channels], sums)
}

pub fn leaky_relu<T: Real>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { v * slope })
}

/// Gradient of leaky-ReLU, evaluated at the pre-activation `x`.
pub fn leaky_relu_backward<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>, slope: T) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { g * slope })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// `exp` that returns exactly zero below `e^-80`, keeping f32 results out of
/// the (slow) subnormal range.
pub fn exp_ftz<T: Real>(v: T) -> T {
    if v < T::lit(-80.0) {
        T::zero()
    } else {
        v.exp()
    }
}

/// Softmax along `axis` of a rank-1 or rank-2 tensor.
pub fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let logp = log_softmax(x, axis)?;
    Ok(logp.map(exp_ftz))
}

/// Log-softmax along `axis` of a rank-1 or rank-2 tensor.
pub fn log_softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    with_rows(x, axis, "log_softmax", |row, out| {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        // Subtract the shift before the log-sum: `max + ln Σ` alone rounds
        // to the ulp of `max`, which for f32 logits near -1e3 is 1e-4.
        let log_sum = row.iter().map(|&v| exp_ftz(v - max)).sum::<T>().ln();
        for (o, &v) in out.iter_mut().zip(row) {
            *o = (v - max) - log_sum;
        }
    })?
    .check_finite("log_softmax")
}

/// Backward of softmax given its output `y`.
pub fn softmax_backward<T: Real>(
    y: &Tensor<T>,
    grad_out: &Tensor<T>,
    axis: usize,
) -> Result<Tensor<T>> {
    let yg = zip_rows(y, grad_out, axis, "softmax_backward", |yr, gr, out| {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((o, &yv), &gv) in out.iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot);
        }
    })?;
    Ok(yg)
}

/// Backward of log-softmax given its output `log_p`.
pub fn log_softmax_backward<T: Real>(
    log_p: &Tensor<T>,
    grad_out: &Tensor<T>,
    axis: usize,
) -> Result<Tensor<T>> {
    zip_rows(
        log_p,
        grad_out,
        axis,
        "log_softmax_backward",
        |lr, gr, out| {
            let total: T = gr.iter().copied().sum();
            for ((o, &lv), &gv) in out.iter_mut().zip(lr).zip(gr) {
                *o = gv - lv.exp() * total;
            }
        },
    )
}

fn row_layout<T: Real>(
    x: &Tensor<T>,
    axis: usize,
    op: &'static str,
) -> Result<(usize, usize, bool)> {
    match (x.rank(), axis) {
        (1, 0) => Ok((1, x.dim(0), false)),
        (2, 1) => Ok((x.dim(0), x.dim(1), false)),
        (2, 0) => Ok((x.dim(1), x.dim(0), true)),
        _ => Err(Error::dim(
            op,
            format!("invalid axis {axis} for shape {:?}", x.shape()),
        )),
    }
}

fn with_rows<T: Real>(
    x: &Tensor<T>,
    axis: usize,
    op: &'static str,
    f: impl Fn(&[T], &mut [T]),
) -> Result<Tensor<T>> {
    let (rows, cols, transposed) = row_layout(x, axis, op)?;
    let src = if transposed {
        x.transpose()?
    } else {
        x.clone()
    };
    let mut out = vec![T::zero(); rows * cols];
    for (r, o) in src.data().chunks(cols).zip(out.chunks_mut(cols)) {
        f(r, o);
    }
    let t = Tensor::from_vec(src.shape(), out)?;
    if transposed {
        t.transpose()
    } else {
        Ok(t)
    }
}

fn zip_rows<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    axis: usize,
    op: &'static str,
    f: impl Fn(&[T], &[T], &mut [T]),
) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let (rows, cols, transposed) = row_layout(a, axis, op)?;
    let (sa, sb) = if transposed {
        (a.transpose()?, b.transpose()?)
    } else {
        (a.clone(), b.clone())
    };
    let mut out = vec![T::zero(); rows * cols];
    for ((ra, rb), o) in sa
        .data()
        .chunks(cols)
        .zip(sb.data().chunks(cols))
        .zip(out.chunks_mut(cols))
    {
        f(ra, rb, o);
    }
    let t = Tensor::from_vec(sa.shape(), out)?;
    if transposed {
        t.transpose()
    } else {
        Ok(t)
    }
}

/// Mean squared error and its gradient with respect to `prediction`.
pub fn mse<T: Real>(target: &Tensor<T>, prediction: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if target.shape() != prediction.shape() {
        return Err(Error::dim(
            "mse",
            format!("{:?} vs {:?}", target.shape(), prediction.shape()),
        ));
    }
    let n = T::from_usize(target.len().max(1)).unwrap();
    let two = T::lit(2.0);
    let mut loss = T::zero();
    let grad = target
        .data()
        .iter()
        .zip(prediction.data())
        .map(|(&t, &p)| {
            let d = p - t;
            loss += d * d;
            two * d / n
        })
        .collect();
    Ok((loss / n, Tensor::from_vec(target.shape(), grad)?))
}

/// Affine map `w·x + b` with `w` `[out, in]`.
pub fn linear<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n_out, n_in) = (weight.dim(0), weight.dim(1));
    if x.len() != n_in || bias.len() != n_out {
        return Err(Error::dim(
            "linear",
            format!("x {:?} w {:?}", x.shape(), weight.shape()),
        ));
    }
    let mut out = bias.data().to_vec();
    T::gemm(
        n_out,
        n_in,
        1,
        weight.data(),
        false,
        x.data(),
        false,
        &mut out,
        true,
    );
    Tensor::from_vec(&[n_out], out)?.check_finite("linear")
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub fn linear_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n_out, n_in) = (weight.dim(0), weight.dim(1));
    let mut gx = vec![T::zero(); n_in];
    T::gemm(
        n_in,
        n_out,
        1,
        weight.data(),
        true,
        grad_out.data(),
        false,
        &mut gx,
        false,
    );
    let mut gw = vec![T::zero(); n_out * n_in];
    T::gemm(
        n_out,
        1,
        n_in,
        grad_out.data(),
        false,
        x.data(),
        false,
        &mut gw,
        false,
    );
    Ok((
        Tensor::from_vec(&[n_in], gx)?,
        Tensor::from_vec(&[n_out, n_in], gw)?,
        grad_out.clone(),
    ))
}

/// Softmax cross-entropy of one logit vector against a class label.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, label: usize) -> Result<(T, Tensor<T>)> {
    if logits.rank() != 1 || label >= logits.len() {
        return Err(Error::dim(
            "cross_entropy",
            format!("label {label} for logits {:?}", logits.shape()),
        ));
    }
    let logp = log_softmax(logits, 0)?;
    let mut grad = logp.map(|v| v.exp());
    grad.data_mut()[label] -= T::one();
    Ok((-logp.data()[label], grad))
}

/// Mean over the width axis of a `[c, w]` tensor, giving `[c]`.
pub fn global_mean_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank(x, 2, "global_mean_pool", "input")?;
    let w = T::from_usize(x.dim(1)).unwrap();
    let data = x
        .data()
        .chunks(x.dim(1))
        .map(|r| r.iter().copied().sum::<T>() / w)
        .collect();
    Tensor::from_vec(&[x.dim(0)], data)
}

pub fn global_mean_pool_backward<T: Real>(grad_out: &Tensor<T>, width: usize) -> Tensor<T> {
    let w = T::from_usize(width).unwrap();
    let mut data = Vec::with_capacity(grad_out.len() * width);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g / w, width));
    }
    Tensor::from_vec(&[grad_out.len(), width], data).expect("consistent shape")
}

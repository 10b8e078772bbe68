use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    /// `None` when the caller did not ask for the input gradient.
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(input: &[usize], weights: &[usize], pad: usize) -> Result<Self> {
        let (&[batch, cin, h, w], &[cout, wcin, kh, kw]) = (input, weights) else {
            return Err(Error::shape(
                "conv2d",
                format!("expected 4-d input and weights, got {input:?} and {weights:?}"),
            ));
        };
        if cin != wcin {
            return Err(Error::shape(
                "conv2d",
                format!("input has {cin} channels, weights expect {wcin}"),
            ));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::shape(
                "conv2d",
                format!("{kh}x{kw} kernel larger than padded {h}x{w} input (pad {pad})"),
            ));
        }
        Ok(Geometry {
            batch,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            pad,
            oh: h + 2 * pad - kh + 1,
            ow: w + 2 * pad - kw + 1,
        })
    }

    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Column range `ox` for which `ox + kj - pad` lands inside the input.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kj);
        let hi = (self.w + self.pad).saturating_sub(kj).min(self.ow);
        (lo, hi.max(lo))
    }
}

/// Lays out every receptive field as a column: rows are (cin, ki, kj),
/// columns are (example, oy, ox).
fn im2col<T: Scalar>(input: &[T], g: &Geometry) -> Vec<T> {
    let cols_n = g.batch * g.positions();
    let mut cols = vec![T::zero(); g.patch() * cols_n];
    for c in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let (x_lo, x_hi) = g.valid_cols(kj);
                for b in 0..g.batch {
                    let plane = &input[(b * g.cin + c) * g.h * g.w..][..g.h * g.w];
                    let dst = &mut cols[row * cols_n + b * g.positions()..][..g.positions()];
                    for oy in 0..g.oh {
                        let iy = oy + ki;
                        if iy < g.pad || iy - g.pad >= g.h || x_lo >= x_hi {
                            continue;
                        }
                        let src = &plane[(iy - g.pad) * g.w..][..g.w];
                        let start = x_lo + kj - g.pad;
                        dst[oy * g.ow + x_lo..oy * g.ow + x_hi]
                            .copy_from_slice(&src[start..start + (x_hi - x_lo)]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &Geometry) -> Vec<T> {
    let cols_n = g.batch * g.positions();
    let mut out = vec![T::zero(); g.batch * g.cin * g.h * g.w];
    for c in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let (x_lo, x_hi) = g.valid_cols(kj);
                for b in 0..g.batch {
                    let plane = &mut out[(b * g.cin + c) * g.h * g.w..][..g.h * g.w];
                    let src = &cols[row * cols_n + b * g.positions()..][..g.positions()];
                    for oy in 0..g.oh {
                        let iy = oy + ki;
                        if iy < g.pad || iy - g.pad >= g.h || x_lo >= x_hi {
                            continue;
                        }
                        let start = (iy - g.pad) * g.w + x_lo + kj - g.pad;
                        let dst = &mut plane[start..start + (x_hi - x_lo)];
                        for (d, &s) in dst.iter_mut().zip(&src[oy * g.ow + x_lo..oy * g.ow + x_hi]) {
                            *d = *d + s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Valid (unpadded, stride-1) cross-correlation plus per-channel bias.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &[T],
) -> Result<Tensor<T>> {
    conv2d_forward_padded(input, weights, bias, 0)
}

/// Stride-1 cross-correlation over an input zero-padded by `pad` on every
/// side. `pad = kernel - 1` gives the "full" convolution.
pub fn conv2d_forward_padded<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &[T],
    pad: usize,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input.shape(), weights.shape(), pad)?;
    if bias.len() != g.cout {
        return Err(Error::shape(
            "conv2d",
            format!("bias has {} entries for {} filters", bias.len(), g.cout),
        ));
    }
    let cols = im2col(input.data(), &g);
    let p = g.positions();
    let n = g.batch * p;
    let mut prod = vec![T::zero(); g.cout * n];
    T::gemm(g.cout, g.patch(), n, weights.data(), false, &cols, false, T::zero(), &mut prod);

    let mut out = vec![T::zero(); g.batch * g.cout * p];
    for co in 0..g.cout {
        for b in 0..g.batch {
            let src = &prod[co * n + b * p..][..p];
            let dst = &mut out[(b * g.cout + co) * p..][..p];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s + bias[co];
            }
        }
    }
    Ok(Tensor::from_parts(vec![g.batch, g.cout, g.oh, g.ow], out))
}

pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    conv2d_backward_padded(grad_out, input, weights, 0, true)
}

/// Gradients of [`conv2d_forward_padded`]. The input gradient is skipped when
/// `want_input` is false (first layer of a network).
pub fn conv2d_backward_padded<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    pad: usize,
    want_input: bool,
) -> Result<ConvGrads<T>> {
    let g = Geometry::new(input.shape(), weights.shape(), pad)?;
    if grad_out.shape() != [g.batch, g.cout, g.oh, g.ow] {
        return Err(Error::shape(
            "conv2d backward",
            format!(
                "gradient shape {:?}, forward output was {:?}",
                grad_out.shape(),
                [g.batch, g.cout, g.oh, g.ow]
            ),
        ));
    }
    let p = g.positions();
    let n = g.batch * p;

    // [batch, cout, p] -> [cout, batch*p]
    let mut gt = vec![T::zero(); g.cout * n];
    for b in 0..g.batch {
        for co in 0..g.cout {
            gt[co * n + b * p..][..p].copy_from_slice(&grad_out.data()[(b * g.cout + co) * p..][..p]);
        }
    }
    let bias: Vec<T> = gt
        .chunks_exact(n)
        .map(|row| row.iter().fold(T::zero(), |acc, &v| acc + v))
        .collect();

    let cols = im2col(input.data(), &g);
    let k = g.patch();
    let mut gw = vec![T::zero(); g.cout * k];
    T::gemm(g.cout, n, k, &gt, false, &cols, true, T::zero(), &mut gw);

    let input_grad = if want_input {
        let mut gcols = cols;
        T::gemm(k, g.cout, n, weights.data(), true, &gt, false, T::zero(), &mut gcols);
        Some(Tensor::from_parts(input.shape().to_vec(), col2im(&gcols, &g)))
    } else {
        None
    };

    Ok(ConvGrads {
        input: input_grad,
        weights: Tensor::from_parts(weights.shape().to_vec(), gw),
        bias,
    })
}

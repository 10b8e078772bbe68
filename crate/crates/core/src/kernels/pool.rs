use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// What to do when the window does not tile the spatial extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolEdge {
    /// Non-divisible extents are an error.
    #[default]
    Strict,
    /// Trailing rows/columns that do not fill a window are dropped.
    Floor,
}

#[derive(Debug, Clone)]
pub struct Pooled<T> {
    pub output: Tensor<T>,
    /// Flat input index of each output's maximum.
    pub argmax: Vec<usize>,
}

/// Non-overlapping max pooling with window (and stride) `pool`.
///
/// Ties resolve to the first element in row-major order within the window.
pub fn maxpool_forward<T: Scalar>(
    input: &Tensor<T>,
    pool: (usize, usize),
    edge: PoolEdge,
) -> Result<Pooled<T>> {
    let &[batch, chans, h, w] = input.shape() else {
        return Err(Error::shape("maxpool", format!("expected 4-d input, got {:?}", input.shape())));
    };
    let (ph, pw) = pool;
    if ph == 0 || pw == 0 {
        return Err(Error::shape("maxpool", "zero-sized window"));
    }
    if edge == PoolEdge::Strict && (h % ph != 0 || w % pw != 0) {
        return Err(Error::shape(
            "maxpool",
            format!("{h}x{w} input not divisible by {ph}x{pw} window"),
        ));
    }
    let (oh, ow) = (h / ph, w / pw);
    if oh == 0 || ow == 0 {
        return Err(Error::shape(
            "maxpool",
            format!("{ph}x{pw} window larger than {h}x{w} input"),
        ));
    }

    let src = input.data();
    let mut out = Vec::with_capacity(batch * chans * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane in 0..batch * chans {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * ph * w + ox * pw;
                for dy in 0..ph {
                    let row = base + (oy * ph + dy) * w + ox * pw;
                    for idx in row..row + pw {
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
    }
    Ok(Pooled {
        output: Tensor::from_parts(vec![batch, chans, oh, ow], out),
        argmax,
    })
}

/// Routes each output gradient to the input position that produced it.
pub fn maxpool_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::shape(
            "maxpool backward",
            format!("{} gradients for {} pooled outputs", grad_out.len(), argmax.len()),
        ));
    }
    let mut grad = Tensor::zeros(input_shape);
    let data = grad.data_mut();
    for (&g, &idx) in grad_out.data().iter().zip(argmax) {
        let slot = data.get_mut(idx).ok_or_else(|| {
            Error::shape("maxpool backward", format!("argmax {idx} outside input {input_shape:?}"))
        })?;
        *slot = *slot + g;
    }
    Ok(grad)
}

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

fn dims(input: &[usize], weights: &[usize]) -> Result<(usize, usize, usize)> {
    match (input, weights) {
        (&[batch, k], &[wk, m]) if k == wk => Ok((batch, k, m)),
        _ => Err(Error::shape(
            "dense",
            format!("input {input:?} incompatible with weights {weights:?}"),
        )),
    }
}

/// `input[batch,k] · weights[k,m] + bias[m]`.
pub fn dense_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &[T],
) -> Result<Tensor<T>> {
    let (batch, k, m) = dims(input.shape(), weights.shape())?;
    if bias.len() != m {
        return Err(Error::shape("dense", format!("bias has {} entries for {m} units", bias.len())));
    }
    let mut out: Vec<T> = bias.iter().copied().cycle().take(batch * m).collect();
    T::gemm(batch, k, m, input.data(), false, weights.data(), false, T::one(), &mut out);
    Ok(Tensor::from_parts(vec![batch, m], out))
}

pub fn dense_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    want_input: bool,
) -> Result<DenseGrads<T>> {
    let (batch, k, m) = dims(input.shape(), weights.shape())?;
    if grad_out.shape() != [batch, m] {
        return Err(Error::shape(
            "dense backward",
            format!("gradient shape {:?}, expected {:?}", grad_out.shape(), [batch, m]),
        ));
    }
    let g = grad_out.data();
    let mut gw = vec![T::zero(); k * m];
    T::gemm(k, batch, m, input.data(), true, g, false, T::zero(), &mut gw);
    let mut bias = vec![T::zero(); m];
    for row in g.chunks_exact(m) {
        for (b, &v) in bias.iter_mut().zip(row) {
            *b = *b + v;
        }
    }
    let input_grad = want_input.then(|| {
        let mut gi = vec![T::zero(); batch * k];
        T::gemm(batch, m, k, g, false, weights.data(), true, T::zero(), &mut gi);
        Tensor::from_parts(vec![batch, k], gi)
    });
    Ok(DenseGrads {
        input: input_grad,
        weights: Tensor::from_parts(vec![k, m], gw),
        bias,
    })
}

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn tanh_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.tanh())
}

/// Backward of tanh given its forward output `y`: `grad · (1 - y²)`.
pub fn tanh_backward<T: Scalar>(grad_out: &Tensor<T>, output: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != output.shape() {
        return Err(Error::shape(
            "tanh backward",
            format!("{:?} vs {:?}", grad_out.shape(), output.shape()),
        ));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &y)| g * (T::one() - y * y))
        .collect();
    Ok(Tensor::from_parts(output.shape().to_vec(), data))
}

/// Row-wise softmax of a `[batch, classes]` tensor, max-subtracted.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let &[_, classes] = logits.shape() else {
        return Err(Error::shape("softmax", format!("expected 2-d logits, got {:?}", logits.shape())));
    };
    let mut out = logits.data().to_vec();
    for row in out.chunks_exact_mut(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(Tensor::from_parts(logits.shape().to_vec(), out))
}

/// Mean negative log-likelihood of `labels` under softmax(`logits`) and its
/// gradient `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, Tensor<T>)> {
    let &[batch, classes] = logits.shape() else {
        return Err(Error::shape(
            "softmax cross-entropy",
            format!("expected 2-d logits, got {:?}", logits.shape()),
        ));
    };
    if labels.len() != batch {
        return Err(Error::shape(
            "softmax cross-entropy",
            format!("{batch} rows but {} labels", labels.len()),
        ));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Label { label, classes });
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite("logits".into()));
    }

    let mut grad = softmax(logits)?;
    let mut nll = 0.0;
    let scale = T::of_f64(1.0 / batch as f64);
    for ((row, logit_row), &label) in grad
        .data_mut()
        .chunks_exact_mut(classes)
        .zip(logits.data().chunks_exact(classes))
        .zip(labels)
    {
        // log p = z_label - max - log(sum exp(z - max)), evaluated in f64
        let max = logit_row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let lse = logit_row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
        nll -= logit_row[label].as_f64() - max - lse;

        row[label] = row[label] - T::one();
        for v in row.iter_mut() {
            *v = *v * scale;
        }
    }
    Ok((nll / batch as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::testutil::*;

    #[test]
    fn uniform_logits_give_ln_classes() {
        let logits = Tensor::<f64>::full(&[3, 10], 0.25);
        let (nll, _) = softmax_cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert!((nll - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn large_margin_drives_loss_to_zero() {
        let mut logits = Tensor::<f64>::zeros(&[1, 10]);
        logits.data_mut()[3] = 50.0;
        let (nll, grad) = softmax_cross_entropy(&logits, &[3]).unwrap();
        assert!(nll < 1e-20);
        assert!(grad.data().iter().all(|v| v.abs() < 1e-20));
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::<f64>::zeros(&[2, 10]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[1, 10]),
            Err(Error::Label { label: 10, classes: 10 })
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut r = rng(9);
        let logits = random(&[50, 10], &mut r).map(|v| v * 30.0);
        let p = softmax(&logits).unwrap();
        for row in p.data().chunks(10) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng(10);
        for trial in 0..20 {
            let (b, c) = (1 + trial % 5, 2 + trial % 9);
            let logits = random(&[b, c], &mut r).map(|v| v * 3.0);
            let labels: Vec<usize> = (0..b).map(|i| (i * 7 + trial) % c).collect();
            let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
            let fd = numeric_grad(logits.data(), |v| {
                let li = Tensor::new(logits.shape().to_vec(), v.to_vec()).unwrap();
                softmax_cross_entropy(&li, &labels).unwrap().0
            });
            assert!(rel_err(grad.data(), &fd) < 1e-6, "trial {trial}");
        }
    }

    #[test]
    fn tanh_backward_matches_finite_differences() {
        let mut r = rng(12);
        for trial in 0..20 {
            let x = random(&[2, 3 + trial], &mut r).map(|v| v * 2.0);
            let coeff = random(x.shape(), &mut r);
            let g = tanh_backward(&coeff, &tanh_forward(&x)).unwrap();
            let fd = numeric_grad(x.data(), |v| {
                v.iter().zip(coeff.data()).map(|(a, c)| a.tanh() * c).sum()
            });
            assert!(rel_err(g.data(), &fd) < 1e-6);
        }
    }
}

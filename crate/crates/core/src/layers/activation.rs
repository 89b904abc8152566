use crate::error::{Error, Result};
use crate::glm::sigmoid as logistic;
use crate::tensor::Tensor;

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Subgradient 0 at the kink.
pub fn relu_grad(x: &Tensor, grad_y: &Tensor) -> Result<Tensor> {
    x.zip_map(grad_y, |v, g| if v > 0.0 { g } else { 0.0 })
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(logistic)
}

/// Takes the sigmoid *output* `y`.
pub fn sigmoid_grad(y: &Tensor, grad_y: &Tensor) -> Result<Tensor> {
    y.zip_map(grad_y, |v, g| g * v * (1.0 - v))
}

/// Row-wise softmax.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (_, k) = logits.dims2()?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(out)
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (batch, k) = logits.dims2()?;
    if labels.len() != batch {
        return Err(Error::Dimension(format!("{} labels for batch of {batch}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Input(format!("label {bad} out of range for {k} classes")));
    }
    let mut grad = softmax(logits)?;
    let mut loss = 0.0;
    let inv = 1.0 / batch as f64;
    for ((row, logit_row), &label) in grad.data_mut().chunks_mut(k).zip(logits.data().chunks(k)).zip(labels) {
        let m = logit_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logit_row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - logit_row[label];
        row[label] -= 1.0;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    Ok((loss * inv, grad))
}

/// `mean_b ½‖y_b − t_b‖²` and its gradient.
pub fn squared_error(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    let (batch, _) = pred.dims2()?;
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    let inv = 1.0 / batch as f64;
    let diff = pred.sub(target)?;
    let loss = 0.5 * diff.data().iter().map(|d| d * d).sum::<f64>() * inv;
    Ok((loss, diff.scale(inv)))
}

pub fn argmax_rows(x: &Tensor) -> Result<Vec<usize>> {
    let (_, k) = x.dims2()?;
    Ok(x.data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        assert_eq!(relu(&Tensor::from_vec(vec![-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        let g = relu_grad(&Tensor::from_vec(vec![-1.0, 0.0, 2.0]), &Tensor::full(&[3], 5.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        for k in [2usize, 10, 37] {
            let (loss, _) = softmax_xent(&Tensor::zeros(&[3, k]), &[0, 1, k - 1]).unwrap();
            assert!((loss - (k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn large_logits_stay_finite() {
        let logits = Tensor::from_rows(&[vec![1000.0, -1000.0, 999.0]]);
        let (loss, g) = softmax_xent(&logits, &[1]).unwrap();
        assert!(loss.is_finite() && g.is_finite());
        assert!((loss - 2000.0 - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-9);
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(softmax_xent(&Tensor::zeros(&[1, 3]), &[3]), Err(Error::Input(_))));
    }

    #[test]
    fn xent_gradient_finite_difference() {
        let logits = Tensor::from_rows(&[vec![0.3, -1.2, 2.0, 0.1], vec![-0.5, 0.7, 0.0, 1.1]]);
        let labels = [2, 0];
        let (_, g) = softmax_xent(&logits, &labels).unwrap();
        let h = 1e-6;
        for i in 0..logits.len() {
            let mut p = logits.clone();
            p.data_mut()[i] += h;
            let mut m = logits.clone();
            m.data_mut()[i] -= h;
            let fd = (softmax_xent(&p, &labels).unwrap().0 - softmax_xent(&m, &labels).unwrap().0) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-6, "{i}: {fd} vs {}", g.data()[i]);
        }
    }

    #[test]
    fn squared_error_gradient() {
        let p = Tensor::from_rows(&[vec![0.5, 1.0], vec![0.0, 0.0]]);
        let t = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let (loss, g) = squared_error(&p, &t).unwrap();
        assert!((loss - 0.5 * (0.25 + 1.0) / 2.0).abs() < 1e-15);
        assert_eq!(g.data(), &[0.25, 0.0, -0.5, 0.0]);
    }

    #[test]
    fn sigmoid_grad_matches_derivative() {
        let x = Tensor::from_vec(vec![-2.0, 0.0, 3.0]);
        let y = sigmoid(&x);
        let g = sigmoid_grad(&y, &Tensor::full(&[3], 1.0)).unwrap();
        for (i, &v) in x.data().iter().enumerate() {
            let h = 1e-6;
            let fd = (logistic(v + h) - logistic(v - h)) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn argmax_first_on_tie() {
        let x = Tensor::from_rows(&[vec![1.0, 3.0, 3.0], vec![-1.0, -2.0, -3.0]]);
        assert_eq!(argmax_rows(&x).unwrap(), vec![1, 0]);
    }
}

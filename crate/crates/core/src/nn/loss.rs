//! Softmax and categorical cross-entropy.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn rows<T: Scalar>(t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        [n, k] => Ok((*n, *k)),
        s => Err(Error::invalid(format!("expected [batch, classes], got {s:?}"))),
    }
}

/// Row-wise max-subtracted softmax.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = rows(logits)?;
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        let m = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v.as_f64() - m).exp()).collect();
        let z: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| T::lit(v / z)));
    }
    Ok(Tensor::from_parts(logits.shape().to_vec(), out))
}

pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut t = Tensor::zeros(&[labels.len(), classes])?;
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::invalid(format!("label {l} out of range for {classes} classes")));
        }
        t.set(&[i, l], T::one());
    }
    Ok(t)
}

/// Mean cross-entropy over the batch and its gradient `(softmax - label) / n`.
pub fn softmax_crossentropy<T: Scalar>(logits: &Tensor<T>, labels: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    let (n, k) = rows(logits)?;
    if labels.shape() != logits.shape() {
        return Err(Error::ShapeMismatch {
            op: "softmax_crossentropy",
            left: logits.shape().to_vec(),
            right: labels.shape().to_vec(),
        });
    }
    for row in labels.data().chunks_exact(k) {
        let ones = row.iter().filter(|&&v| v == T::one()).count();
        let zeros = row.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || zeros != k - 1 {
            return Err(Error::invalid("labels must be one-hot rows"));
        }
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, lab) in logits.data().chunks_exact(k).zip(labels.data().chunks_exact(k)) {
        let m = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v.as_f64() - m).exp()).sum::<f64>().ln();
        for (&z, &y) in row.iter().zip(lab) {
            let (z, y) = (z.as_f64(), y.as_f64());
            loss -= y * (z - lse);
            grad.push(T::lit(((z - lse).exp() - y) / n as f64));
        }
    }
    Ok((loss / n as f64, Tensor::from_parts(logits.shape().to_vec(), grad)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn uniform_two_class_loss_is_ln2() {
        let z = Tensor::<f64>::zeros(&[3, 2]).unwrap();
        let y = one_hot(&[0, 1, 1], 2).unwrap();
        let (loss, _) = softmax_crossentropy(&z, &y).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn huge_margin_is_stable() {
        let z = Tensor::<f32>::from_vec(&[1, 2], vec![1000.0, 0.0]).unwrap();
        let y = one_hot(&[0], 2).unwrap();
        let (loss, g) = softmax_crossentropy(&z, &y).unwrap();
        assert!(loss.is_finite() && loss < 1e-6);
        assert!(g.data().iter().all(|v| v.is_finite()));
        let wrong = one_hot(&[1], 2).unwrap();
        let (loss, _) = softmax_crossentropy(&z, &wrong).unwrap();
        assert!((loss - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn matches_direct_formula() {
        let mut rng = SeededRng::new(4);
        let z: Tensor<f64> = rng.normal(&[5, 3], 0.0, 2.0).unwrap();
        let labels = [0, 2, 1, 1, 0];
        let y = one_hot(&labels, 3).unwrap();
        let (loss, g) = softmax_crossentropy(&z, &y).unwrap();
        let mut want = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            let row: Vec<f64> = (0..3).map(|j| z.at(&[i, j])).collect();
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            want -= (row[l].exp() / s).ln();
            for j in 0..3 {
                let p = row[j].exp() / s;
                let e = (p - if j == l { 1.0 } else { 0.0 }) / 5.0;
                assert!((g.at(&[i, j]) - e).abs() < 1e-6);
            }
        }
        assert!((loss - want / 5.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = SeededRng::new(5);
        let z: Tensor<f32> = rng.normal(&[16, 4], 0.0, 10.0).unwrap();
        let p = softmax(&z).unwrap();
        for row in p.data().chunks_exact(4) {
            let s: f64 = row.iter().map(|&v| v as f64).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_non_one_hot() {
        let z = Tensor::<f32>::zeros(&[1, 2]).unwrap();
        let y = Tensor::from_vec(&[1, 2], vec![0.5, 0.5]).unwrap();
        assert!(softmax_crossentropy(&z, &y).is_err());
    }
}

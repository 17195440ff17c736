//! Categorical cross-entropy over softmax probabilities.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Floor added inside the logarithm.
pub const EPS_LOG: f64 = 1e-12;

/// `[n, classes]` one-hot rows for integer labels.
pub fn one_hot<T: Real>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    if labels.is_empty() {
        return Err(Error::Empty("no labels to encode".into()));
    }
    let mut data = vec![T::zero(); labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::InvalidParam(format!("label {l} out of range for {classes} classes")));
        }
        data[i * classes + l] = T::one();
    }
    Tensor::new(vec![labels.len(), classes], data)
}

/// Label index of every row, rejecting rows that are not exactly one-hot.
pub fn one_hot_labels<T: Real>(onehot: &Tensor<T>) -> Result<Vec<usize>> {
    let [_, k] = onehot.dims()[..] else {
        return Err(Error::shape(format!("one-hot needs [n, k], got {:?}", onehot.dims())));
    };
    onehot
        .data()
        .chunks(k)
        .enumerate()
        .map(|(i, row)| {
            let ones: Vec<usize> = (0..k).filter(|&j| row[j] == T::one()).collect();
            let zeros = row.iter().filter(|&&v| v == T::zero()).count();
            match ones[..] {
                [j] if zeros == k - 1 => Ok(j),
                _ => Err(Error::InvalidParam(format!("row {i} is not a valid one-hot vector"))),
            }
        })
        .collect()
}

fn check_pair<T: Real>(p: &Tensor<T>, y: &Tensor<T>) -> Result<usize> {
    if p.dims() != y.dims() || p.rank() != 2 {
        return Err(Error::shape(format!(
            "cross-entropy needs matching [n, k] tensors, got {:?} and {:?}",
            p.dims(),
            y.dims()
        )));
    }
    Ok(p.dims()[1])
}

/// Mean over the batch of `-sum(y * ln(p + eps))`.
pub fn cross_entropy<T: Real>(p: &Tensor<T>, onehot: &Tensor<T>) -> Result<T> {
    check_pair(p, onehot)?;
    let labels = one_hot_labels(onehot)?;
    cross_entropy_labels(p, &labels)
}

/// Same loss with integer labels.
pub fn cross_entropy_labels<T: Real>(p: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let [n, k] = p.dims()[..] else {
        return Err(Error::shape(format!("cross-entropy needs [n, k], got {:?}", p.dims())));
    };
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for {n} rows", labels.len())));
    }
    let eps = T::of(EPS_LOG);
    let mut total = 0.0f64;
    for (row, &l) in p.data().chunks(k).zip(labels) {
        if l >= k {
            return Err(Error::InvalidParam(format!("label {l} out of range for {k} classes")));
        }
        total -= (row[l] + eps).ln().as_f64();
    }
    Ok(T::of(total / n as f64))
}

/// Gradient of [`cross_entropy`] w.r.t. the probabilities.
pub fn cross_entropy_backward<T: Real>(p: &Tensor<T>, onehot: &Tensor<T>) -> Result<Tensor<T>> {
    check_pair(p, onehot)?;
    one_hot_labels(onehot)?;
    let n = T::of(p.batch() as f64);
    let eps = T::of(EPS_LOG);
    let data = p
        .data()
        .iter()
        .zip(onehot.data())
        .map(|(&pi, &yi)| -yi / (pi + eps) / n)
        .collect();
    Tensor::new(p.dims().to_vec(), data)
}

/// Gradient of softmax followed by cross-entropy w.r.t. the logits: `(p - y) / n`.
pub fn softmax_cross_entropy_backward<T: Real>(p: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let [n, k] = p.dims()[..] else {
        return Err(Error::shape(format!("softmax-CE needs [n, k], got {:?}", p.dims())));
    };
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for {n} rows", labels.len())));
    }
    let inv_n = T::one() / T::of(n as f64);
    let mut g = p.data().to_vec();
    for (row, &l) in g.chunks_mut(k).zip(labels) {
        if l >= k {
            return Err(Error::InvalidParam(format!("label {l} out of range for {k} classes")));
        }
        row[l] -= T::one();
        row.iter_mut().for_each(|v| *v = *v * inv_n);
    }
    Tensor::new(p.dims().to_vec(), g)
}

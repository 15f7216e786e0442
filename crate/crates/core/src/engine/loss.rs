use super::Scalar;

/// Mean softmax cross-entropy over a `[N][classes]` logit block.
#[derive(Debug, Clone)]
pub struct CrossEntropy<T> {
    pub loss: f64,
    /// Gradient of the mean loss with respect to the logits.
    pub grad: Vec<T>,
    pub correct: usize,
}

pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], labels: &[usize], classes: usize) -> CrossEntropy<T> {
    let n = labels.len();
    assert_eq!(logits.len(), n * classes, "logit block does not match labels");
    let inv_n = 1.0 / n as f64;
    let mut grad = vec![T::zero(); logits.len()];
    let mut loss = 0.0;
    let mut correct = 0;
    for (b, &label) in labels.iter().enumerate() {
        let row = &logits[b * classes..(b + 1) * classes];
        let (arg, max) = argmax(row);
        if arg == label {
            correct += 1;
        }
        let max = max.as_f64();
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() + max - row[label].as_f64();
        for (k, e) in exps.iter().enumerate() {
            let p = e / z - if k == label { 1.0 } else { 0.0 };
            grad[b * classes + k] = T::from_f64_lossy(p * inv_n);
        }
    }
    CrossEntropy {
        loss: loss * inv_n,
        grad,
        correct,
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax<T: Scalar>(row: &[T]) -> (usize, T) {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    (best, row[best])
}

use crate::dataset::Labels;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Row-wise argmax as class ids; ties go to the smaller class.
pub fn argmax(logits: &Matrix) -> Vec<u8> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

/// Mean cross-entropy of softmax(logits) over masked nodes, and its
/// gradient with respect to the logits (zero outside the mask).
pub fn softmax_cross_entropy(logits: &Matrix, y: &Labels, mask: &[bool]) -> Result<(f64, Matrix)> {
    if logits.rows() != y.len() || mask.len() != y.len() {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{} logit rows, {} labels, {} mask", logits.rows(), y.len(), mask.len()),
        ));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::EmptyMask("softmax_cross_entropy"));
    }
    let scale = 1.0 / count as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for i in (0..mask.len()).filter(|&i| mask[i]) {
        let target = y
            .get(i)
            .ok_or_else(|| Error::Data(format!("node {i} in loss mask has no label")))?
            as usize;
        if target >= logits.cols() {
            return Err(Error::Data(format!("label {target} exceeds logit width")));
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        loss += log_sum - row[target];
        for (c, g) in grad.row_mut(i).iter_mut().enumerate() {
            let p = (row[c] - log_sum).exp();
            *g = scale * (p - if c == target { 1.0 } else { 0.0 });
        }
    }
    let loss = loss * scale;
    if !loss.is_finite() {
        return Err(Error::NonFinite("softmax_cross_entropy".into()));
    }
    Ok((loss, grad))
}

/// Mean binary cross-entropy of `sigmoid(logits)` against `targets` over
/// masked nodes, computed in log space. `logits` is `N × 1`.
pub fn bce_with_logits(logits: &Matrix, targets: &[f64], mask: &[bool]) -> Result<(f64, Matrix)> {
    if logits.cols() != 1 || logits.rows() != targets.len() || mask.len() != targets.len() {
        return Err(Error::shape(
            "bce_with_logits",
            format!("logits {:?}, {} targets, {} mask", logits.shape(), targets.len(), mask.len()),
        ));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::EmptyMask("bce_with_logits"));
    }
    let scale = 1.0 / count as f64;
    let mut grad = Matrix::zeros(logits.rows(), 1);
    let mut loss = 0.0;
    for i in (0..mask.len()).filter(|&i| mask[i]) {
        let z = logits.get(i, 0);
        let t = targets[i];
        // −[t log σ(z) + (1−t) log(1−σ(z))] = max(z, 0) − t z + log(1 + e^{−|z|})
        loss += z.max(0.0) - t * z + (-z.abs()).exp().ln_1p();
        grad.set(i, 0, scale * (sigmoid(z) - t));
    }
    let loss = loss * scale;
    if !loss.is_finite() {
        return Err(Error::NonFinite("bce_with_logits".into()));
    }
    Ok((loss, grad))
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

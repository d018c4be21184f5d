//! The three training objectives and their gradients with respect to their
//! direct inputs (projections, logits).

use super::TrainError;
use crate::model::Matrix;
use crate::tokenize::TokenId;

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

fn similarity(a: &[Vec<f64>], b: &[Vec<f64>], temperature: f64) -> Matrix {
    let n = a.len();
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            s.data[i * n + j] = a[i].iter().zip(&b[j]).map(|(x, y)| x * y).sum::<f64>() / temperature;
        }
    }
    s
}

fn transpose(m: &Matrix) -> Matrix {
    let mut t = Matrix::zeros(m.cols, m.rows);
    for i in 0..m.rows {
        for j in 0..m.cols {
            t.data[j * m.rows + i] = m.get(i, j);
        }
    }
    t
}

/// Mean over rows of the cross-entropy against the diagonal, plus the
/// row-softmax minus identity, divided by the row count.
fn diagonal_ce(s: &Matrix) -> (f64, Matrix) {
    let n = s.rows;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(n, n);
    for i in 0..n {
        let logp = log_softmax_row(s.row(i));
        loss -= logp[i];
        let g = grad.row_mut(i);
        for j in 0..n {
            g[j] = (logp[j].exp() - if i == j { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (loss / n as f64, grad)
}

fn check_pair_batch(code: &[Vec<f64>], text: &[Vec<f64>]) -> Result<(), TrainError> {
    if code.len() != text.len() {
        return Err(TrainError::ShapeMismatch("code and text batches differ in size"));
    }
    if code.len() < 2 {
        return Err(TrainError::BatchTooSmall(code.len()));
    }
    Ok(())
}

/// Symmetric InfoNCE over the similarity matrix `s_ij = code_i . text_j / t`.
pub fn ctc_loss(code: &[Vec<f64>], text: &[Vec<f64>], temperature: f64) -> Result<f64, TrainError> {
    Ok(ctc_loss_grad(code, text, temperature)?.0)
}

/// Loss plus gradients with respect to every code and text vector.
pub fn ctc_loss_grad(
    code: &[Vec<f64>],
    text: &[Vec<f64>],
    temperature: f64,
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>), TrainError> {
    check_pair_batch(code, text)?;
    let n = code.len();
    let s = similarity(code, text, temperature);
    let (row_loss, row_grad) = diagonal_ce(&s);
    // Column terms are the row terms of the transpose.
    let (col_loss, col_grad_t) = diagonal_ce(&transpose(&s));
    let loss = 0.5 * (row_loss + col_loss);

    let col_grad = transpose(&col_grad_t);
    let dim = code[0].len();
    let mut d_code = vec![vec![0.0; dim]; n];
    let mut d_text = vec![vec![0.0; dim]; n];
    for i in 0..n {
        for j in 0..n {
            let ds = 0.5 * (row_grad.get(i, j) + col_grad.get(i, j)) / temperature;
            for k in 0..dim {
                d_code[i][k] += ds * text[j][k];
                d_text[j][k] += ds * code[i][k];
            }
        }
    }
    Ok((loss, d_code, d_text))
}

/// Mean sigmoid binary cross-entropy; `true` marks an inconsistent pair.
pub fn bc_loss(logits: &[f64], labels: &[bool]) -> Result<f64, TrainError> {
    Ok(bc_loss_grad(logits, labels)?.0)
}

pub fn bc_loss_grad(logits: &[f64], labels: &[bool]) -> Result<(f64, Vec<f64>), TrainError> {
    if logits.len() != labels.len() {
        return Err(TrainError::ShapeMismatch("logits and labels differ in length"));
    }
    if logits.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let m = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(labels) {
        let y = if y { 1.0 } else { 0.0 };
        loss += softplus(z) - y * z;
        grad.push((sigmoid(z) - y) / m);
    }
    Ok((loss / m, grad))
}

/// Mean token cross-entropy over rows with `mask[t] == true`.
pub fn tg_loss(logits: &Matrix, targets: &[TokenId], mask: &[bool]) -> Result<f64, TrainError> {
    let (sum, count, _) = tg_loss_sum(logits, targets, mask, false)?;
    Ok(sum / count as f64)
}

/// Loss and the gradient with respect to `logits`.
pub fn tg_loss_grad(logits: &Matrix, targets: &[TokenId], mask: &[bool]) -> Result<(f64, Matrix), TrainError> {
    let (sum, count, grad) = tg_loss_sum(logits, targets, mask, true)?;
    let mut grad = grad.expect("requested");
    grad.data.iter_mut().for_each(|g| *g /= count as f64);
    Ok((sum / count as f64, grad))
}

/// Summed (not averaged) cross-entropy, the unmasked count, and optionally
/// the gradient of the sum.
pub(crate) fn tg_loss_sum(
    logits: &Matrix,
    targets: &[TokenId],
    mask: &[bool],
    want_grad: bool,
) -> Result<(f64, usize, Option<Matrix>), TrainError> {
    if logits.rows != targets.len() || targets.len() != mask.len() {
        return Err(TrainError::ShapeMismatch("logits, targets and mask differ in length"));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(TrainError::AllPositionsMasked);
    }
    let mut sum = 0.0;
    let mut grad = want_grad.then(|| Matrix::zeros(logits.rows, logits.cols));
    for t in 0..logits.rows {
        if !mask[t] {
            continue;
        }
        let target = targets[t] as usize;
        if target >= logits.cols {
            return Err(TrainError::ShapeMismatch("target id outside the logit width"));
        }
        let logp = log_softmax_row(logits.row(t));
        sum -= logp[target];
        if let Some(g) = grad.as_mut() {
            let row = g.row_mut(t);
            for (v, lp) in row.iter_mut().zip(&logp) {
                *v = lp.exp();
            }
            row[target] -= 1.0;
        }
    }
    Ok((sum, count, grad))
}

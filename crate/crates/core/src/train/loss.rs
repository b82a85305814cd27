use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

fn check(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{b:?}"), format!("{a:?}")));
    }
    Ok(())
}

fn slot_loss(p: f64, t: f64) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

/// Mean binary cross-entropy over every (sample, label) slot, or over the
/// slots where `mask` is 1.
pub fn bce_multilabel_loss(
    probs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    mask: Option<ArrayView2<f64>>,
) -> Result<f64> {
    check(probs.dim(), targets.dim())?;
    let mut sum = 0.0;
    let mut count = 0.0;
    match mask {
        Some(m) => {
            check(m.dim(), targets.dim())?;
            Zip::from(probs).and(targets).and(m).for_each(|&p, &t, &w| {
                if w != 0.0 {
                    sum += w * slot_loss(p, t);
                    count += w;
                }
            });
        }
        None => {
            Zip::from(probs)
                .and(targets)
                .for_each(|&p, &t| sum += slot_loss(p, t));
            count = probs.len() as f64;
        }
    }
    Ok(if count > 0.0 { sum / count } else { 0.0 })
}

/// Loss from logits and its gradient with respect to the logits,
/// `(sigmoid(z) - t) * mask / N` with N the (masked) slot count.
pub fn bce_with_logits_grad(
    logits: ArrayView2<f32>,
    targets: ArrayView2<f64>,
    mask: Option<ArrayView2<f64>>,
) -> Result<(f64, Array2<f32>)> {
    check(logits.dim(), targets.dim())?;
    let probs = logits.mapv(|z| 1.0 / (1.0 + (-f64::from(z)).exp()));
    let loss = bce_multilabel_loss(probs.view(), targets, mask)?;
    let n = match mask {
        Some(m) => m.sum(),
        None => probs.len() as f64,
    };
    let mut grad = Array2::zeros(logits.dim());
    if n > 0.0 {
        match mask {
            Some(m) => Zip::from(&mut grad)
                .and(&probs)
                .and(targets)
                .and(m)
                .for_each(|g, &p, &t, &w| {
                    *g = ((p - t) * w / n) as f32;
                }),
            None => Zip::from(&mut grad)
                .and(&probs)
                .and(targets)
                .for_each(|g, &p, &t| {
                    *g = ((p - t) / n) as f32;
                }),
        }
    }
    Ok((loss, grad))
}

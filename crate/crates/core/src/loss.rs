//! Loss functions and their gradients with respect to the stacked outputs.
//!
//! Squared error is reported unhalved, `Σᵢ ‖yᵢ − fᵢ‖²`, while its output
//! gradient is the residual `f − y`. With that pair the gradient flow
//! `ḟ = −ηΘ(f − y)` has the solution `f_t = (I − e^{−ηΘt})𝒴 + e^{−ηΘt}f₀`
//! and the reported loss decays as `δyᵀ e^{−2ηΘt} δy`.

use crate::error::{Error, Result};
use crate::types::{argmax, LabelSet, LossKind, OutputVector};

fn class_labels(y: &LabelSet) -> Result<Vec<usize>> {
    if y.n_outputs() < 2 {
        return Err(Error::Usage(
            "cross-entropy needs at least two outputs; use MSE with ±1 targets for a single output"
                .into(),
        ));
    }
    y.class_indices()
        .ok_or_else(|| Error::Usage("cross-entropy needs class labels".into()))
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_into(z: &[f64], out: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

pub fn loss_value(f: &OutputVector, y: &LabelSet, kind: LossKind) -> Result<f64> {
    y.check_compatible(f)?;
    match kind {
        LossKind::Mse => {
            let targets = y.dense_targets();
            Ok(f.values
                .iter()
                .zip(&targets)
                .map(|(a, b)| (b - a) * (b - a))
                .sum())
        }
        LossKind::CrossEntropy => {
            let classes = class_labels(y)?;
            Ok(classes
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    let z = f.sample(i);
                    log_sum_exp(z) - z[c]
                })
                .sum())
        }
    }
}

pub fn loss_grad_outputs(f: &OutputVector, y: &LabelSet, kind: LossKind) -> Result<Vec<f64>> {
    y.check_compatible(f)?;
    match kind {
        LossKind::Mse => {
            let targets = y.dense_targets();
            Ok(f.values.iter().zip(&targets).map(|(a, b)| a - b).collect())
        }
        LossKind::CrossEntropy => {
            let classes = class_labels(y)?;
            let c = f.n_outputs;
            let mut g = vec![0.0; f.len()];
            for (i, &cls) in classes.iter().enumerate() {
                let block = &mut g[i * c..(i + 1) * c];
                softmax_into(f.sample(i), block);
                block[cls] -= 1.0;
            }
            Ok(g)
        }
    }
}

/// Fraction of misclassified samples. Multi-output predictions use argmax
/// (ties toward the lowest index); a single output is thresholded at zero.
pub fn error_rate(f: &OutputVector, y: &LabelSet) -> Result<f64> {
    y.check_compatible(f)?;
    let classes = y.class_indices().ok_or_else(|| {
        Error::Usage("error rate needs class labels, multi-output targets or ±1 targets".into())
    })?;
    if classes.is_empty() {
        return Ok(0.0);
    }
    let wrong = classes
        .iter()
        .enumerate()
        .filter(|&(i, &c)| {
            let pred = if f.n_outputs == 1 {
                usize::from(f.values[i] > 0.0)
            } else {
                argmax(f.sample(i))
            };
            pred != c
        })
        .count();
    Ok(wrong as f64 / classes.len() as f64)
}

use rand::Rng;

use crate::error::{contract, Result};

/// Log-probabilities of the softmax restricted to legal actions; illegal
/// actions get `-inf`.
pub fn masked_log_policy(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(contract(format!(
            "{} logits but a mask of length {}",
            logits.len(),
            mask.len()
        )));
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&z, _)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(contract("every action is masked"));
    }
    let log_norm = max
        + logits
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&z, _)| (z - max).exp())
            .sum::<f64>()
            .ln();
    Ok(logits
        .iter()
        .zip(mask)
        .map(|(&z, &m)| if m { z - log_norm } else { f64::NEG_INFINITY })
        .collect())
}

/// Softmax over legal actions. Masked entries are exactly zero.
pub fn masked_policy(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    Ok(masked_log_policy(logits, mask)?.into_iter().map(f64::exp).collect())
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Draw an action index; zero-probability actions are never returned.
pub fn sample<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Loss `-advantage * log pi(action) - beta * H(pi)` and its gradient with
/// respect to the logits. Masked logits get zero gradient.
pub fn policy_loss_grad(
    logits: &[f64],
    mask: &[bool],
    action: usize,
    advantage: f64,
    beta: f64,
) -> Result<(f64, Vec<f64>)> {
    let logp = masked_log_policy(logits, mask)?;
    if action >= logp.len() || logp[action] == f64::NEG_INFINITY {
        return Err(contract(format!("action {action} has zero probability")));
    }
    let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    let h = entropy(&probs);
    let loss = -advantage * logp[action] - beta * h;
    let grad = probs
        .iter()
        .zip(&logp)
        .enumerate()
        .map(|(j, (&p, &lp))| {
            if p == 0.0 {
                return 0.0;
            }
            let onehot = if j == action { 1.0 } else { 0.0 };
            advantage * (p - onehot) + beta * p * (lp + h)
        })
        .collect();
    Ok((loss, grad))
}

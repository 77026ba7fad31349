//! Pairwise click loss and popularity weights.

use crate::diffcore::{softplus, DiffError, Graph, Tensor, Var};

use super::{TrainError, Variant};

/// `-ln σ(s_p - s_n)` for one triple, given its two scores.
pub fn bpr_value(pos_score: f64, neg_score: f64) -> f64 {
    softplus(neg_score - pos_score)
}

/// Mean BPR loss over the rows of `n x d` embeddings. With `weights`, each
/// triple's loss is multiplied by its weight before averaging.
pub fn bpr_loss(graph: &mut Graph, wu: Var, wp: Var, wn: Var, weights: Option<&[f64]>) -> Result<Var, DiffError> {
    let sp = graph.dot(wu, wp)?;
    let sn = graph.dot(wu, wn)?;
    let gap = graph.sub(sn, sp)?;
    let mut l = graph.softplus(gap)?;
    if let Some(w) = weights {
        let wt = graph.constant(Tensor::new(vec![w.len(), 1], w.to_vec())?);
        l = graph.mul(l, wt)?;
    }
    graph.mean(l)
}

/// Per-item propensity weights for the IPS baselines, normalized so their
/// mean over train positives is 1. Items without train positives get 0;
/// other variants get all ones.
pub fn ips_weights(popularity: &[usize], variant: Variant, cap: f64) -> Vec<f64> {
    if !matches!(variant, Variant::Ips | Variant::IpsC) {
        return vec![1.0; popularity.len()];
    }
    let n: usize = popularity.iter().sum();
    let seen = popularity.iter().filter(|&&c| c > 0).count();
    let raw = |c: usize| n as f64 / c as f64;
    let clipped = variant == Variant::IpsC && popularity.iter().any(|&c| c > 0 && raw(c) > cap);
    if !clipped {
        // 1/c over mean(1/c) across positives, which is n / (c * seen)
        return popularity
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { n as f64 / (c * seen) as f64 })
            .collect();
    }
    let capped: Vec<f64> = popularity
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { raw(c).min(cap) })
        .collect();
    let mean = popularity.iter().zip(&capped).map(|(&c, w)| c as f64 * w).sum::<f64>() / n as f64;
    capped.into_iter().map(|w| w / mean).collect()
}

/// Weight of a single item; an item never seen in training is rejected.
pub fn ips_weight(item: usize, popularity: &[usize], variant: Variant, cap: f64) -> Result<f64, TrainError> {
    match popularity.get(item) {
        Some(&c) if c > 0 => Ok(ips_weights(popularity, variant, cap)[item]),
        _ => Err(TrainError::UnseenItem(item)),
    }
}

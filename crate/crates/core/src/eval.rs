//! Top-K ranking evaluation on held-out positives, plus popularity overlap.

use std::collections::HashSet;

use thiserror::Error;

use crate::data::{popular_set, DataError, DatasetBundle, SplitKind};
use crate::par::{self, Execution};

/// Cut-offs reported by default.
pub const DEFAULT_KS: [usize; 2] = [20, 50];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("K={k} exceeds the {candidates} candidate items of user {user}")]
    KTooLarge { user: usize, k: usize, candidates: usize },
    #[error("split has no positives to evaluate")]
    EmptySplit,
    #[error("score table holds {found} {what}, bundle has {expected}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{0}")]
    Data(String),
}

impl From<DataError> for EvalError {
    fn from(e: DataError) -> Self {
        EvalError::Data(e.to_string())
    }
}

/// Aggregated metrics at one cut-off; every value lies in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub k: usize,
    pub recall: f64,
    pub hr: f64,
    pub ndcg: f64,
    pub iou: f64,
    pub users: usize,
}

/// Final user and item representations; the score of a pair is their inner
/// product.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub dim: usize,
    pub users: Vec<f64>,
    pub items: Vec<f64>,
}

impl ScoreTable {
    pub fn n_users(&self) -> usize {
        self.users.len() / self.dim
    }

    pub fn n_items(&self) -> usize {
        self.items.len() / self.dim
    }

    pub fn user(&self, u: usize) -> &[f64] {
        &self.users[u * self.dim..(u + 1) * self.dim]
    }

    pub fn item(&self, i: usize) -> &[f64] {
        &self.items[i * self.dim..(i + 1) * self.dim]
    }

    /// Scores of `user` against every item.
    pub fn scores(&self, user: usize) -> Vec<f64> {
        let u = self.user(user);
        self.items
            .chunks_exact(self.dim)
            .map(|it| it.iter().zip(u).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Top-K items for `user`, excluding the user's train positives.
    pub fn rank_topk(&self, user: usize, k: usize, bundle: &DatasetBundle) -> Result<Vec<usize>, EvalError> {
        rank_topk(&self.scores(user), bundle.train_items(user), k).map_err(|e| match e {
            EvalError::KTooLarge { k, candidates, .. } => EvalError::KTooLarge { user, k, candidates },
            other => other,
        })
    }
}

/// Indices of the `k` highest scores, descending, skipping the sorted
/// `exclude` list. Ties go to the lower index.
pub fn rank_topk(scores: &[f64], exclude: &[usize], k: usize) -> Result<Vec<usize>, EvalError> {
    let mut cand: Vec<usize> = (0..scores.len())
        .filter(|i| exclude.binary_search(i).is_err())
        .collect();
    if k > cand.len() {
        return Err(EvalError::KTooLarge {
            user: 0,
            k,
            candidates: cand.len(),
        });
    }
    // adding 0.0 folds -0.0 into 0.0 so signed zeros tie
    let key = |i: usize| scores[i] + 0.0;
    let cmp = |a: &usize, b: &usize| key(*b).total_cmp(&key(*a)).then(a.cmp(b));
    if k < cand.len() && k > 0 {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_by(cmp);
    cand.truncate(k);
    Ok(cand)
}

fn hits(topk: &[usize], relevant: &HashSet<usize>) -> usize {
    topk.iter().filter(|i| relevant.contains(i)).count()
}

/// `|topk ∩ relevant| / |relevant|`; `None` when nothing is relevant.
pub fn recall_at_k(topk: &[usize], relevant: &HashSet<usize>) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    Some(hits(topk, relevant) as f64 / relevant.len() as f64)
}

/// 1 if any relevant item is in the list.
pub fn hr_at_k(topk: &[usize], relevant: &HashSet<usize>) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    Some(if hits(topk, relevant) > 0 { 1.0 } else { 0.0 })
}

/// Binary-relevance NDCG with `1 / log2(rank + 1)` discounts.
pub fn ndcg_at_k(topk: &[usize], relevant: &HashSet<usize>) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let dcg: f64 = topk
        .iter()
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..topk.len().min(relevant.len()))
        .map(|r| 1.0 / ((r + 2) as f64).log2())
        .sum();
    if ideal == 0.0 {
        return Some(0.0);
    }
    Some(dcg / ideal)
}

/// Intersection over union of two item sets.
pub fn iou_at_k(topk: &[usize], popular: &HashSet<usize>) -> f64 {
    let rec: HashSet<usize> = topk.iter().copied().collect();
    let inter = rec.intersection(popular).count();
    let union = rec.union(popular).count();
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

#[derive(Debug, Clone, Copy, Default)]
struct UserMetrics {
    recall: f64,
    hr: f64,
    ndcg: f64,
    iou: f64,
}

/// Mean per-user metrics over every user with at least one positive in
/// `split`, for each cut-off in `ks`.
pub fn evaluate(
    table: &ScoreTable,
    bundle: &DatasetBundle,
    split: SplitKind,
    ks: &[usize],
    exec: Execution,
) -> Result<Vec<MetricReport>, EvalError> {
    if table.n_users() != bundle.n_users() {
        return Err(EvalError::SizeMismatch {
            what: "users",
            expected: bundle.n_users(),
            found: table.n_users(),
        });
    }
    if table.n_items() != bundle.n_items() {
        return Err(EvalError::SizeMismatch {
            what: "items",
            expected: bundle.n_items(),
            found: table.n_items(),
        });
    }
    let relevant_by_user = bundle.split(split).by_user(bundle.n_users());
    let users: Vec<usize> = (0..bundle.n_users())
        .filter(|&u| !relevant_by_user[u].is_empty())
        .collect();
    if users.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    let Some(&k_max) = ks.iter().max() else {
        return Ok(Vec::new());
    };
    let popular: Vec<HashSet<usize>> = ks
        .iter()
        .map(|&k| popular_set(bundle, k).map(|v| v.into_iter().collect()))
        .collect::<Result<_, _>>()?;

    let per_user: Vec<Result<Vec<UserMetrics>, EvalError>> = par::map_range(users.len(), exec, |j| {
        let u = users[j];
        let relevant: HashSet<usize> = relevant_by_user[u].iter().copied().collect();
        let top = table.rank_topk(u, k_max, bundle)?;
        Ok(ks
            .iter()
            .zip(&popular)
            .map(|(&k, pop)| {
                let t = &top[..k];
                UserMetrics {
                    recall: recall_at_k(t, &relevant).unwrap_or(0.0),
                    hr: hr_at_k(t, &relevant).unwrap_or(0.0),
                    ndcg: ndcg_at_k(t, &relevant).unwrap_or(0.0),
                    iou: iou_at_k(t, pop),
                }
            })
            .collect())
    });

    let mut sums = vec![UserMetrics::default(); ks.len()];
    for r in per_user {
        for (s, m) in sums.iter_mut().zip(r?) {
            s.recall += m.recall;
            s.hr += m.hr;
            s.ndcg += m.ndcg;
            s.iou += m.iou;
        }
    }
    let n = users.len() as f64;
    Ok(ks
        .iter()
        .zip(sums)
        .map(|(&k, s)| MetricReport {
            k,
            recall: s.recall / n,
            hr: s.hr / n,
            ndcg: s.ndcg / n,
            iou: s.iou / n,
            users: users.len(),
        })
        .collect())
}

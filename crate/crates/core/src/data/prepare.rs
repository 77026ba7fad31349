use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{binarize, k_core_filter, split_biased_unbiased, DataError, DatasetBundle, IndexMap, InteractionRecord};

/// Knobs of the raw-log pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrepareOptions {
    pub threshold: u8,
    pub k: usize,
    pub seed: u64,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions {
            threshold: 5,
            k: 10,
            seed: 0,
        }
    }
}

/// Binarize, keep positives (first occurrence of each pair), apply the k-core
/// filter, re-index survivors in order of first appearance, then split.
pub fn prepare_bundle(records: &[InteractionRecord], opts: PrepareOptions) -> Result<(DatasetBundle, IndexMap), DataError> {
    let mut raw = IndexMap::default();
    let mut seen = HashSet::new();
    let mut positives = Vec::new();
    for r in binarize(records, opts.threshold).into_iter().filter(|r| r.label) {
        let u = raw.users.intern(&r.user);
        let i = raw.items.intern(&r.item);
        if seen.insert((u, i)) {
            positives.push((u, i));
        }
    }
    let kept = k_core_filter(&positives, opts.k.max(1));
    if kept.is_empty() {
        return Err(DataError::Empty);
    }
    let mut maps = IndexMap::default();
    let mut user_idx = vec![usize::MAX; raw.users.len()];
    let mut item_idx = vec![usize::MAX; raw.items.len()];
    let compact: Vec<(usize, usize)> = kept
        .iter()
        .map(|&(u, i)| {
            if user_idx[u] == usize::MAX {
                user_idx[u] = maps.users.intern(raw.users.external(u).unwrap_or_default());
            }
            if item_idx[i] == usize::MAX {
                item_idx[i] = maps.items.intern(raw.items.external(i).unwrap_or_default());
            }
            (user_idx[u], item_idx[i])
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let bundle = split_biased_unbiased(&compact, maps.users.len(), maps.items.len(), opts.seed, &mut rng)?;
    Ok((bundle, maps))
}

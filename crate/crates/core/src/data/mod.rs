//! Interaction data: ingestion, preprocessing, splits and sampling.

mod io;
mod kcore;
mod load;
mod prepare;
mod split;
mod synthetic;

pub use io::{read_bundle, write_bundle, BUNDLE_FILES};
pub use kcore::k_core_filter;
pub use load::{binarize, load_interactions, parse_interactions, BinaryRecord, InteractionRecord};
pub use prepare::{prepare_bundle, PrepareOptions};
pub use split::split_biased_unbiased;
pub use synthetic::{generate_synthetic, SyntheticSpec, SyntheticTruth};

use std::collections::HashMap;
use std::path::PathBuf;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: rating out of range ({rating})")]
    RatingOutOfRange { line: usize, rating: String },
    #[error("input contains no interactions")]
    Empty,
    #[error("need at least 10 positives to split, got {0}")]
    TooFewPositives(usize),
    #[error("user {0} has interacted with every item; no negative to sample")]
    NoNegative(usize),
    #[error("{what} index {index} out of range ({count})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        count: usize,
    },
    #[error("pair ({0}, {1}) appears in more than one split")]
    Overlap(usize, usize),
    #[error("K={k} exceeds item count {items}")]
    TooManyItems { k: usize, items: usize },
    #[error("invalid synthetic spec: {0}")]
    BadSpec(String),
    #[error("bundle metadata: {0}")]
    BadMeta(String),
}

/// Where a positive came from in the biased/unbiased protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    /// Drawn into the uniformly sampled subset.
    Random,
    /// Part of the logged remainder.
    Biased,
}

/// External id to dense index bijection for one entity kind.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        IdMap::default()
    }

    /// Index of `id`, assigning the next free index on first sight.
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn external(&self, idx: usize) -> Option<&str> {
        self.ids.get(idx).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// User and item id maps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IndexMap {
    pub users: IdMap,
    pub items: IdMap,
}

/// Positive `(user, item)` pairs of one split with per-record provenance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub pairs: Vec<(usize, usize)>,
    pub provenance: Vec<Provenance>,
}

impl Split {
    pub fn new(pairs: Vec<(usize, usize)>, provenance: Vec<Provenance>) -> Self {
        assert_eq!(pairs.len(), provenance.len());
        Split { pairs, provenance }
    }

    pub fn uniform(pairs: Vec<(usize, usize)>, p: Provenance) -> Self {
        let provenance = vec![p; pairs.len()];
        Split { pairs, provenance }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Positives grouped per user, each list sorted and deduplicated.
    pub fn by_user(&self, n_users: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); n_users];
        for &(u, i) in &self.pairs {
            out[u].push(i);
        }
        for v in &mut out {
            v.sort_unstable();
            v.dedup();
        }
        out
    }
}

/// Preprocessed dataset: three disjoint positive splits plus train popularity.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    n_users: usize,
    n_items: usize,
    train: Split,
    valid: Split,
    test: Split,
    popularity: Vec<usize>,
    train_by_user: Vec<Vec<usize>>,
    seed: u64,
}

/// Which split to address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for SplitKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(SplitKind::Train),
            "valid" | "val" | "validation" => Ok(SplitKind::Valid),
            "test" => Ok(SplitKind::Test),
            other => Err(format!("unknown split {other:?} (train|valid|test)")),
        }
    }
}

impl DatasetBundle {
    /// Validates the splits and derives popularity counts.
    pub fn new(
        n_users: usize,
        n_items: usize,
        train: Split,
        valid: Split,
        test: Split,
        seed: u64,
    ) -> Result<Self, DataError> {
        let mut seen: HashMap<(usize, usize), ()> = HashMap::new();
        for split in [&train, &valid, &test] {
            let mut own = HashMap::new();
            for &(u, i) in &split.pairs {
                if u >= n_users {
                    return Err(DataError::IndexOutOfRange {
                        what: "user",
                        index: u,
                        count: n_users,
                    });
                }
                if i >= n_items {
                    return Err(DataError::IndexOutOfRange {
                        what: "item",
                        index: i,
                        count: n_items,
                    });
                }
                own.insert((u, i), ());
            }
            for k in own.keys() {
                if seen.contains_key(k) {
                    return Err(DataError::Overlap(k.0, k.1));
                }
            }
            seen.extend(own);
        }
        let mut popularity = vec![0usize; n_items];
        for &(_, i) in &train.pairs {
            popularity[i] += 1;
        }
        let train_by_user = train.by_user(n_users);
        Ok(DatasetBundle {
            n_users,
            n_items,
            train,
            valid,
            test,
            popularity,
            train_by_user,
            seed,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn train(&self) -> &Split {
        &self.train
    }

    pub fn valid(&self) -> &Split {
        &self.valid
    }

    pub fn test(&self) -> &Split {
        &self.test
    }

    pub fn split(&self, kind: SplitKind) -> &Split {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Valid => &self.valid,
            SplitKind::Test => &self.test,
        }
    }

    /// Train-positive count of every item.
    pub fn popularity(&self) -> &[usize] {
        &self.popularity
    }

    /// Sorted train positives of `user`.
    pub fn train_items(&self, user: usize) -> &[usize] {
        &self.train_by_user[user]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_interactions(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }
}

/// Draws an item uniformly from those `user` has no train positive for.
pub fn sample_negative<R: Rng + ?Sized>(
    user: usize,
    rng: &mut R,
    bundle: &DatasetBundle,
) -> Result<usize, DataError> {
    if user >= bundle.n_users() {
        return Err(DataError::IndexOutOfRange {
            what: "user",
            index: user,
            count: bundle.n_users(),
        });
    }
    let positives = bundle.train_items(user);
    let n = bundle.n_items();
    if positives.len() >= n {
        return Err(DataError::NoNegative(user));
    }
    // rejection is exact-uniform over the complement; fall back to
    // enumeration when the complement is small
    if positives.len() * 2 <= n {
        loop {
            let i = rng.random_range(0..n);
            if positives.binary_search(&i).is_err() {
                return Ok(i);
            }
        }
    }
    let k = rng.random_range(0..n - positives.len());
    let mut skipped = 0;
    let mut candidate = k;
    // k-th item (0-based) not in the sorted positive list
    for &p in positives {
        if p <= candidate {
            skipped += 1;
            candidate = k + skipped;
        } else {
            break;
        }
    }
    Ok(candidate)
}

/// The `k` items with the most train positives, most popular first; ties go
/// to the lower item index.
pub fn popular_set(bundle: &DatasetBundle, k: usize) -> Result<Vec<usize>, DataError> {
    popular_from_counts(bundle.popularity(), k)
}

pub fn popular_from_counts(counts: &[usize], k: usize) -> Result<Vec<usize>, DataError> {
    if k > counts.len() {
        return Err(DataError::TooManyItems {
            k,
            items: counts.len(),
        });
    }
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

//! Confounded interaction generator with known ground truth.
//!
//! Every user has a latent preference for every item. Items additionally carry
//! a confounder score (think popularity pressure) that inflates exposure but
//! has no bearing on preference. Training positives are exposed-and-liked
//! events, so they mix preference with the confounder; validation and test
//! positives are drawn from preference alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DataError, DatasetBundle, Provenance, Split};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub latent_dim: usize,
    /// Weight of the confounder in the exposure logits.
    pub confounder_strength: f64,
    /// Exponent applied to uniform draws to get confounder scores; larger
    /// values concentrate the confounder on fewer items.
    pub exposure_skew: f64,
    pub positives_per_user: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_users: 200,
            n_items: 100,
            latent_dim: 8,
            confounder_strength: 3.0,
            exposure_skew: 2.0,
            positives_per_user: 14,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::BadSpec(m.to_string()));
        if self.n_users == 0 || self.n_items == 0 || self.latent_dim == 0 || self.positives_per_user == 0 {
            return bad("counts must be positive");
        }
        if !self.confounder_strength.is_finite() || self.confounder_strength < 0.0 {
            return bad("confounder strength must be finite and non-negative");
        }
        if !self.exposure_skew.is_finite() || self.exposure_skew <= 0.0 {
            return bad("exposure skew must be positive");
        }
        let (valid, test) = self.holdout_per_user();
        if self.positives_per_user + valid + test > self.n_items {
            return bad("positives plus held-out items per user exceed item count");
        }
        Ok(())
    }

    /// Validation and test positives per user, in the 70:10:20 proportion.
    pub fn holdout_per_user(&self) -> (usize, usize) {
        let p = self.positives_per_user as f64;
        let valid = ((p / 7.0).round() as usize).max(1);
        let test = ((p * 2.0 / 7.0).round() as usize).max(1);
        (valid, test)
    }
}

/// Generator ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub n_users: usize,
    pub n_items: usize,
    /// Row-major `n_users x n_items` preference logits.
    pub preference: Vec<f64>,
    /// Confounder score of every item, in `[0, 1]`.
    pub confounder: Vec<f64>,
    pub confounder_strength: f64,
}

impl SyntheticTruth {
    pub fn preference_row(&self, user: usize) -> &[f64] {
        &self.preference[user * self.n_items..(user + 1) * self.n_items]
    }

    /// Exposure distribution of `user`: softmax(preference + strength * confounder).
    pub fn exposure_distribution(&self, user: usize) -> Vec<f64> {
        let logits: Vec<f64> = self
            .preference_row(user)
            .iter()
            .zip(&self.confounder)
            .map(|(p, c)| p + self.confounder_strength * c)
            .collect();
        softmax(&logits)
    }

    /// Preference-only distribution of `user`: softmax(preference).
    pub fn preference_distribution(&self, user: usize) -> Vec<f64> {
        softmax(self.preference_row(user))
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

// draws one index from `weights` restricted to `allowed`
fn draw<R: Rng>(rng: &mut R, weights: &[f64], allowed: &[bool]) -> Option<usize> {
    let total: f64 = weights.iter().zip(allowed).filter(|(_, a)| **a).map(|(w, _)| w).sum();
    if total <= 0.0 {
        return None;
    }
    let mut r = rng.random::<f64>() * total;
    let mut last = None;
    for (i, (w, a)) in weights.iter().zip(allowed).enumerate() {
        if !*a {
            continue;
        }
        last = Some(i);
        if r < *w {
            return Some(i);
        }
        r -= w;
    }
    last
}

/// Scale of preference logits; the latent inner product is normalised to unit
/// variance first.
const PREFERENCE_SCALE: f64 = 2.0;

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(DatasetBundle, SyntheticTruth), DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.latent_dim;
    let mut normal = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let users = normal(spec.n_users * d);
    let items = normal(spec.n_items * d);
    let norm = PREFERENCE_SCALE / (d as f64).sqrt();
    let mut preference = Vec::with_capacity(spec.n_users * spec.n_items);
    for u in 0..spec.n_users {
        for i in 0..spec.n_items {
            let dot: f64 = users[u * d..(u + 1) * d]
                .iter()
                .zip(&items[i * d..(i + 1) * d])
                .map(|(a, b)| a * b)
                .sum();
            preference.push(dot * norm);
        }
    }
    let confounder: Vec<f64> = (0..spec.n_items)
        .map(|_| rng.random::<f64>().powf(spec.exposure_skew))
        .collect();
    let truth = SyntheticTruth {
        n_users: spec.n_users,
        n_items: spec.n_items,
        preference,
        confounder,
        confounder_strength: spec.confounder_strength,
    };

    let (n_valid, n_test) = spec.holdout_per_user();
    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    for u in 0..spec.n_users {
        let exposure = truth.exposure_distribution(u);
        let pref = truth.preference_row(u);
        let mut allowed = vec![true; spec.n_items];
        let mut liked = 0;
        while liked < spec.positives_per_user {
            let Some(i) = draw(&mut rng, &exposure, &allowed) else {
                break;
            };
            allowed[i] = false;
            // exposure alone is not enough; the user must also like the item
            if rng.random::<f64>() < crate::diffcore::sigmoid(pref[i]) {
                train.push((u, i));
                liked += 1;
            }
        }
        // held-out positives ignore exposure: preference only, over items
        // that are not train positives
        let mut free: Vec<bool> = vec![true; spec.n_items];
        for &(_, i) in train.iter().rev().take_while(|p| p.0 == u) {
            free[i] = false;
        }
        let target = truth.preference_distribution(u);
        for (bucket, count) in [(&mut test, n_test), (&mut valid, n_valid)] {
            for _ in 0..count {
                if let Some(i) = draw(&mut rng, &target, &free) {
                    free[i] = false;
                    bucket.push((u, i));
                }
            }
        }
    }
    let bundle = DatasetBundle::new(
        spec.n_users,
        spec.n_items,
        Split::uniform(train, Provenance::Biased),
        Split::uniform(valid, Provenance::Random),
        Split::uniform(test, Provenance::Random),
        spec.seed,
    )?;
    Ok((bundle, truth))
}

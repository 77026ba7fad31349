use rand::seq::SliceRandom;
use rand::Rng;

use super::{DataError, DatasetBundle, Provenance, Split};

/// Share of all positives drawn uniformly as the "random" subset.
pub const RANDOM_SHARE: f64 = 0.4;
/// Validation and test shares of the whole, both taken from the random subset.
pub const VALID_SHARE: f64 = 0.1;
pub const TEST_SHARE: f64 = 0.2;

/// Sizes `(random, valid, test)` for `n` positives.
pub(crate) fn split_sizes(n: usize) -> (usize, usize, usize) {
    let valid = (n as f64 * VALID_SHARE).round() as usize;
    let test = (n as f64 * TEST_SHARE).round() as usize;
    let random = ((n as f64 * RANDOM_SHARE).round() as usize).max(valid + test);
    (random, valid, test)
}

/// Uniformly draws 40% of `positives` as the random subset; validation (10% of
/// the whole) and test (20%) come from it, and the rest of it joins the
/// biased 60% as training data.
///
/// Training pairs are ordered random-subset first.
pub fn split_biased_unbiased<R: Rng + ?Sized>(
    positives: &[(usize, usize)],
    n_users: usize,
    n_items: usize,
    seed: u64,
    rng: &mut R,
) -> Result<DatasetBundle, DataError> {
    let n = positives.len();
    if n < 10 {
        return Err(DataError::TooFewPositives(n));
    }
    let (n_random, n_valid, n_test) = split_sizes(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let (random, biased) = order.split_at(n_random);
    let pick = |idx: &[usize]| idx.iter().map(|&e| positives[e]).collect::<Vec<_>>();

    let valid = pick(&random[..n_valid]);
    let test = pick(&random[n_valid..n_valid + n_test]);
    let train_random = pick(&random[n_valid + n_test..]);
    let train_biased = pick(biased);

    let mut provenance = vec![Provenance::Random; train_random.len()];
    provenance.extend(std::iter::repeat_n(Provenance::Biased, train_biased.len()));
    let mut train = train_random;
    train.extend(train_biased);

    DatasetBundle::new(
        n_users,
        n_items,
        Split::new(train, provenance),
        Split::uniform(valid, Provenance::Random),
        Split::uniform(test, Provenance::Random),
        seed,
    )
}

//! Shared fixtures for the criterion benches.

use loadcast::data::{split_train_test, synthesize_dataset, DatasetSplit, SplitSpec, SynthProfile};
use loadcast::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform values in (-1, 1).
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Synthetic days with the last week held out.
pub fn synthetic_split(days: usize, seed: u64) -> DatasetSplit {
    let recs = synthesize_dataset(seed, days, &SynthProfile::default()).expect("synthetic data");
    let spec = SplitSpec::test_window(recs[recs.len() - 7].date, recs[recs.len() - 1].date);
    split_train_test(&recs, &spec).expect("split")
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` i.i.d. uniform scores in `[0, 1)`.
pub fn random_scores(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

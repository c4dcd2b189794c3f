//! Per-stage random streams derived from one build seed, so each stage and
//! each item draws from its own generator and resumes identically.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(seed: u64, stage: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((stage.len() as u64).to_le_bytes());
    h.update(stage.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stage_rng(seed: u64, stage: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stage, index))
}

/// Picks `amount` distinct positions out of `len`, in draw order.
pub fn sample_indices(rng: &mut ChaCha8Rng, len: usize, amount: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, len, amount.min(len)).into_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_and_stable() {
        assert_eq!(derive_seed(7, "commands", 0), derive_seed(7, "commands", 0));
        assert_ne!(derive_seed(7, "commands", 0), derive_seed(7, "commands", 1));
        assert_ne!(derive_seed(7, "commands", 0), derive_seed(7, "steps", 0));
        assert_ne!(derive_seed(7, "ab", 0), derive_seed(7, "a", 0));
        let a: u64 = stage_rng(1, "x", 2).random();
        let b: u64 = stage_rng(1, "x", 2).random();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_without_replacement() {
        let mut rng = stage_rng(3, "s", 0);
        let mut picks = sample_indices(&mut rng, 10, 4);
        assert_eq!(picks.len(), 4);
        picks.sort_unstable();
        picks.dedup();
        assert_eq!(picks.len(), 4);
        assert_eq!(sample_indices(&mut rng, 3, 10).len(), 3);
    }
}

//! Deterministic derivation of per-stream RNG seeds and stable hashing.

/// Derive an independent stream seed from a base seed (splitmix64
/// finalizer). Used for per-epoch shuffles and per-sequence generators so
/// streams never alias across indices.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over a seed and an id list. Stable across platforms and runs;
/// backs the synthetic generator's lazy transition table.
pub fn fnv1a(seed: u64, ids: &[u32]) -> u64 {
    const BASIS: u64 = 0xCBF2_9CE4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01B3;
    let mut h = BASIS;
    for byte in seed.to_le_bytes() {
        h = (h ^ byte as u64).wrapping_mul(PRIME);
    }
    for id in ids {
        for byte in id.to_le_bytes() {
            h = (h ^ byte as u64).wrapping_mul(PRIME);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_seeds_differ_across_streams() {
        let s: Vec<u64> = (0..100).map(|i| mix_seed(42, i)).collect();
        let mut uniq = s.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), s.len());
        assert_eq!(mix_seed(42, 7), mix_seed(42, 7));
        assert_ne!(mix_seed(42, 7), mix_seed(43, 7));
    }

    #[test]
    fn fnv_is_stable_and_input_sensitive() {
        assert_eq!(fnv1a(1, &[2, 3]), fnv1a(1, &[2, 3]));
        assert_ne!(fnv1a(1, &[2, 3]), fnv1a(1, &[3, 2]));
        assert_ne!(fnv1a(1, &[2, 3]), fnv1a(2, &[2, 3]));
        assert_ne!(fnv1a(1, &[]), fnv1a(2, &[]));
    }
}

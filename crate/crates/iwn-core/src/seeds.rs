//! Deterministic seed derivation.
//!
//! Every source of randomness in a run (parameter init, per-step attack
//! sampling, evaluation seeds) is derived from one master seed so that a run
//! is reproducible from its manifest alone.

/// SplitMix64 step. Small, well-mixed, and stable across platforms.
fn splitmix64(state: &mut u64) {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    *state = z ^ (z >> 31);
}

/// Derive a child seed from `(master, domain, index)`.
///
/// Distinct domains (e.g. "init" vs "attack") give unrelated streams even for
/// equal indices.
pub fn derive_seed(master: u64, domain: &str, index: u64) -> u64 {
    let mut state = master;
    splitmix64(&mut state);
    for &b in domain.as_bytes() {
        state ^= u64::from(b);
        splitmix64(&mut state);
    }
    state ^= index;
    splitmix64(&mut state);
    state
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        assert_eq!(derive_seed(7, "attack", 3), derive_seed(7, "attack", 3));
    }

    #[test]
    fn domains_and_indices_separate_streams() {
        let a = derive_seed(7, "attack", 3);
        assert_ne!(a, derive_seed(7, "init", 3));
        assert_ne!(a, derive_seed(7, "attack", 4));
        assert_ne!(a, derive_seed(8, "attack", 3));
    }
}

//! Stable seed derivation: per-image, per-stage seeds are a pure function
//! of the run seed and a label, never of scheduling order.

/// FNV-1a over the base seed's bytes followed by the label.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for byte in base.to_le_bytes().into_iter().chain(label.bytes()) {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

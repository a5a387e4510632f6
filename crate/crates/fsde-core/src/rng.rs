use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Counter-based generator for one `(seed, stream)` pair.
///
/// ChaCha keyed by the master seed with the stream id in the nonce words: paths
/// with different streams are independent, and generation order across workers
/// is irrelevant because each path owns its stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&seed.rotate_left(17).wrapping_mul(0x9e37_79b9_7f4a_7c15).to_le_bytes());
    let mut rng = ChaCha12Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Stable derivation of a sub-stream id from labeled components, so that
/// adding paths or reordering jobs never perturbs existing draws.
/// FNV-1a over the label and indices.
pub fn derive_stream(label: &str, indices: &[u64]) -> u64 {
    let mut h = fnv1a(label.as_bytes());
    for ix in indices {
        h = fnv1a_continue(h, &ix.to_le_bytes());
    }
    h
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    fnv1a_continue(0xcbf2_9ce4_8422_2325, bytes)
}

pub fn fnv1a_continue(mut hash: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Checksum of a slice of floats by their bit patterns. Used to assert that two
/// integrators consumed identical noise increments.
pub fn float_checksum(values: &[f64]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for v in values {
        h = fnv1a_continue(h, &v.to_bits().to_le_bytes());
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn same_seed_stream_reproduces() {
        let mut a = stream_rng(42, 7);
        let mut b = stream_rng(42, 7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = stream_rng(42, 0);
        let mut b = stream_rng(42, 1);
        let same = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn derive_stream_is_stable_and_label_sensitive() {
        let s1 = derive_stream("slow-noise", &[3, 1]);
        let s2 = derive_stream("slow-noise", &[3, 1]);
        let s3 = derive_stream("fast-noise", &[3, 1]);
        let s4 = derive_stream("slow-noise", &[1, 3]);
        assert_eq!(s1, s2);
        assert_ne!(s1, s3);
        assert_ne!(s1, s4);
    }

    #[test]
    fn float_checksum_sees_sign_and_order() {
        assert_ne!(float_checksum(&[1.0, 2.0]), float_checksum(&[2.0, 1.0]));
        assert_ne!(float_checksum(&[0.0]), float_checksum(&[-0.0]));
    }
}

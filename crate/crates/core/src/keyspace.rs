//! Key splitting, prefix hashing and address derivation.
//!
//! Every key is a fixed-width unsigned integer. Its low `r` bits are the
//! *memento* (the key's position inside its universe partition) and the
//! remaining high bits are the *prefix*, which identifies the partition.
//! Only prefixes are hashed; the hash supplies both the canonical slot and
//! the fingerprint.

/// A key split into its partition prefix and in-partition memento.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyParts {
    pub prefix: u64,
    pub memento: u64,
}

impl KeyParts {
    /// Reassembles the original key.
    #[inline]
    pub fn key(&self, memento_bits: u32) -> u64 {
        (self.prefix << memento_bits) | self.memento
    }
}

/// Splits `key` into `(key >> r, key & (2^r - 1))`.
#[inline]
pub fn split_key(key: u64, memento_bits: u32) -> KeyParts {
    debug_assert!((1..64).contains(&memento_bits));
    KeyParts {
        prefix: key >> memento_bits,
        memento: key & low_mask(memento_bits),
    }
}

/// Number of memento bits needed to answer ranges of length up to
/// `max_range`: `ceil(log2(R))`, never less than one.
pub fn memento_bits_for(max_range: u64) -> u32 {
    assert!(max_range >= 1, "range length must be at least one");
    let bits = 64 - (max_range - 1).leading_zeros();
    bits.max(1)
}

/// Mask with the low `bits` bits set. `bits` may be 0 or 64.
#[inline]
pub fn low_mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

/// Seeded 64-bit hash of a prefix.
///
/// The seed is folded in before a murmur3-style finalizer, so for a fixed
/// seed the map is a bijection on `u64` and distinct prefixes never share a
/// full hash.
#[inline]
pub fn hash_prefix(prefix: u64, seed: u64) -> u64 {
    fmix64(prefix ^ fmix64(seed ^ 0x9e37_79b9_7f4a_7c15))
}

#[inline]
fn fmix64(mut k: u64) -> u64 {
    k ^= k >> 33;
    k = k.wrapping_mul(0xff51_afd7_ed55_8ccd);
    k ^= k >> 33;
    k = k.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    k ^= k >> 33;
    k
}

/// Canonical slot and fingerprint derived from a prefix hash.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HashAddress {
    pub canonical_slot: usize,
    pub fingerprint: u64,
}

impl HashAddress {
    /// Low `log2(n)` bits become the slot, the next `f` bits the fingerprint.
    #[inline]
    pub fn from_hash(hash: u64, n_slots: usize, fingerprint_bits: u32) -> Self {
        debug_assert!(n_slots.is_power_of_two());
        let address_bits = n_slots.trailing_zeros();
        HashAddress {
            canonical_slot: (hash & (n_slots as u64 - 1)) as usize,
            fingerprint: hash.checked_shr(address_bits).unwrap_or(0) & low_mask(fingerprint_bits),
        }
    }
}

/// Hashes `prefix` and derives its address in a table of `n_slots` slots.
#[inline]
pub fn address_of(prefix: u64, n_slots: usize, fingerprint_bits: u32, seed: u64) -> HashAddress {
    HashAddress::from_hash(hash_prefix(prefix, seed), n_slots, fingerprint_bits)
}

/// Restricts keys to a fixed width narrower than 64 bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KeyWidth(u32);

impl KeyWidth {
    pub const FULL: KeyWidth = KeyWidth(64);

    pub fn new(bits: u32) -> Option<Self> {
        (1..=64).contains(&bits).then_some(KeyWidth(bits))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn max_key(self) -> u64 {
        low_mask(self.0)
    }

    #[inline]
    pub fn mask(self, key: u64) -> u64 {
        key & low_mask(self.0)
    }
}

/// Maps a variable-length byte string to a fixed-width key by zero-padding
/// short inputs and truncating long ones to `width_bytes` (at most 8).
///
/// Bytes are taken big-endian, so lexicographic order of the inputs is
/// preserved up to truncation.
pub fn fixed_width_key(bytes: &[u8], width_bytes: usize) -> u64 {
    assert!((1..=8).contains(&width_bytes), "key width must be 1..=8 bytes");
    let mut buf = [0u8; 8];
    let n = bytes.len().min(width_bytes);
    buf[8 - width_bytes..8 - width_bytes + n].copy_from_slice(&bytes[..n]);
    u64::from_be_bytes(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_examples() {
        assert_eq!(split_key(0, 4), KeyParts { prefix: 0, memento: 0 });
        assert_eq!(
            split_key(0b1011_0111, 2),
            KeyParts {
                prefix: 0b10_1101,
                memento: 0b11
            }
        );
        assert_eq!(split_key((1 << 5) - 1, 5), KeyParts { prefix: 0, memento: 31 });
        assert_eq!(split_key(u64::MAX, 63), KeyParts { prefix: 1, memento: u64::MAX >> 1 });
    }

    #[test]
    fn memento_bits_examples() {
        assert_eq!(memento_bits_for(1), 1);
        assert_eq!(memento_bits_for(2), 1);
        assert_eq!(memento_bits_for(3), 2);
        assert_eq!(memento_bits_for(32), 5);
        assert_eq!(memento_bits_for(33), 6);
        assert_eq!(memento_bits_for(1024), 10);
    }

    #[test]
    fn address_from_hash_examples() {
        // 16 slots, 4-bit fingerprints.
        let a = HashAddress::from_hash(0b0110_0000, 16, 4);
        assert_eq!((a.canonical_slot, a.fingerprint), (0b0000, 0b0110));
        let b = HashAddress::from_hash(0b1010_0011, 16, 4);
        assert_eq!((b.canonical_slot, b.fingerprint), (0b0011, 0b1010));
        for p in 0..100 {
            assert_eq!(address_of(p, 1, 8, 3).canonical_slot, 0);
        }
    }

    #[test]
    fn address_is_deterministic_and_seeded() {
        let a = address_of(12345, 1 << 10, 9, 1);
        assert_eq!(a, address_of(12345, 1 << 10, 9, 1));
        let differs = (0..64).any(|p| address_of(p, 1 << 10, 9, 1) != address_of(p, 1 << 10, 9, 2));
        assert!(differs);
    }

    #[test]
    fn hash_is_injective_on_small_domain() {
        let mut seen = std::collections::HashSet::new();
        for p in 0..100_000u64 {
            assert!(seen.insert(hash_prefix(p, 42)));
        }
    }

    #[test]
    fn slot_occupancy_is_roughly_uniform() {
        // Coarse chi-square sanity bound over 2^20 prefixes into 1024 slots.
        let n = 1024usize;
        let samples = 1u64 << 20;
        let mut counts = vec![0u64; n];
        for p in 0..samples {
            counts[address_of(p, n, 8, 7).canonical_slot] += 1;
        }
        let expected = samples as f64 / n as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 1023 degrees of freedom: mean 1023, sd ~45.
        assert!(chi2 < 1023.0 + 6.0 * 45.2, "chi2 = {chi2}");
        assert!(chi2 > 1023.0 - 6.0 * 45.2, "chi2 = {chi2}");
    }

    #[test]
    fn fixed_width_keys_preserve_order() {
        assert_eq!(fixed_width_key(b"", 4), 0);
        assert_eq!(fixed_width_key(b"a", 2), 0x6100);
        assert_eq!(fixed_width_key(b"abcdef", 2), 0x6162);
        assert!(fixed_width_key(b"ab", 8) < fixed_width_key(b"abc", 8));
        assert!(fixed_width_key(b"abd", 8) > fixed_width_key(b"abc", 8));
    }

    #[test]
    fn key_width_masks() {
        let w = KeyWidth::new(10).unwrap();
        assert_eq!(w.max_key(), 1023);
        assert_eq!(w.mask(0x7ff), 0x3ff);
        assert!(KeyWidth::new(0).is_none());
        assert_eq!(KeyWidth::FULL.mask(u64::MAX), u64::MAX);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn split_round_trips(key in any::<u64>(), r in 1u32..63) {
                let parts = split_key(key, r);
                prop_assert!(parts.memento < (1 << r));
                prop_assert_eq!(parts.key(r), key);
            }

            #[test]
            fn short_ranges_touch_at_most_two_partitions(ql in any::<u64>(), r in 1u32..20, len in 1u64..=(1 << 19)) {
                let len = len.min(1 << r);
                let qr = ql.saturating_add(len - 1);
                prop_assert!(split_key(qr, r).prefix - split_key(ql, r).prefix <= 1);
            }

            #[test]
            fn same_prefix_same_address(prefix in any::<u64>(), m1 in 0u64..32, m2 in 0u64..32) {
                let k1 = (prefix >> 5 << 5) | m1;
                let k2 = (prefix >> 5 << 5) | m2;
                let a1 = address_of(split_key(k1, 5).prefix, 1 << 12, 8, 9);
                let a2 = address_of(split_key(k2, 5).prefix, 1 << 12, 8, 9);
                prop_assert_eq!(a1, a2);
            }
        }
    }
}

//! Word-level rank and select.

/// Number of set bits in `word` at positions `0..=index`.
#[inline]
pub fn rank(word: u64, index: u32) -> u32 {
    debug_assert!(index < 64);
    (word & (u64::MAX >> (63 - index))).count_ones()
}

/// Position of the `k`-th set bit of `word` (0-indexed), or `None` when
/// `word` has `k` or fewer set bits.
#[inline]
pub fn select(word: u64, k: u32) -> Option<u32> {
    if k >= word.count_ones() {
        return None;
    }
    Some(select_unchecked(word, k))
}

#[cfg(all(target_arch = "x86_64", target_feature = "bmi2"))]
#[inline]
fn select_unchecked(word: u64, k: u32) -> u32 {
    // SAFETY: guarded by the bmi2 target feature.
    unsafe { core::arch::x86_64::_pdep_u64(1u64 << k, word).trailing_zeros() }
}

#[cfg(not(all(target_arch = "x86_64", target_feature = "bmi2")))]
#[inline]
fn select_unchecked(word: u64, k: u32) -> u32 {
    // Byte-wise prefix popcounts via one multiplication, then finish the
    // search inside the selected byte.
    const ONES: u64 = 0x0101_0101_0101_0101;
    let mut s = word - ((word >> 1) & 0x5555_5555_5555_5555);
    s = (s & 0x3333_3333_3333_3333) + ((s >> 2) & 0x3333_3333_3333_3333);
    s = (s + (s >> 4)) & 0x0f0f_0f0f_0f0f_0f0f;
    let prefix = s.wrapping_mul(ONES);
    // Byte i of `prefix` counts set bits in bytes 0..=i.
    let mut byte = 0u32;
    while byte < 7 && ((prefix >> (8 * byte)) & 0xff) as u32 <= k {
        byte += 1;
    }
    let before = if byte == 0 {
        0
    } else {
        ((prefix >> (8 * (byte - 1))) & 0xff) as u32
    };
    let mut b = (word >> (8 * byte)) & 0xff;
    for _ in 0..(k - before) {
        b &= b - 1;
    }
    8 * byte + b.trailing_zeros()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_rank(word: u64, index: u32) -> u32 {
        (0..=index).filter(|&i| word >> i & 1 == 1).count() as u32
    }

    fn naive_select(word: u64, k: u32) -> Option<u32> {
        (0..64).filter(|&i| word >> i & 1 == 1).nth(k as usize)
    }

    #[test]
    fn examples() {
        assert_eq!(rank(0b0110, 2), 2);
        assert_eq!(rank(0b0110, 0), 0);
        assert_eq!(select(0b0110, 0), Some(1));
        assert_eq!(select(0b0110, 1), Some(2));
        assert_eq!(select(0b0110, 2), None);
        assert_eq!(select(0, 0), None);
        assert_eq!(select(u64::MAX, 63), Some(63));
        assert_eq!(rank(u64::MAX, 63), 64);
    }

    #[test]
    fn fuzz_against_per_bit_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..100_000u32 {
            // Mix dense, sparse and uniform words.
            let word = match i % 3 {
                0 => rng.random::<u64>(),
                1 => rng.random::<u64>() & rng.random::<u64>() & rng.random::<u64>(),
                _ => rng.random::<u64>() | rng.random::<u64>(),
            };
            let idx = rng.random_range(0..64);
            assert_eq!(rank(word, idx), naive_rank(word, idx));
            let k = rng.random_range(0..65);
            assert_eq!(select(word, k), naive_select(word, k), "word={word:#x} k={k}");
        }
    }
}

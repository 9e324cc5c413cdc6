use crate::error::{Error, Result};

pub const DEFAULT_MAX_LOAD_FACTOR: f64 = 0.95;

/// Sizing and hashing parameters of a filter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterParams {
    /// Number of slots. Must be a power of two.
    pub n_slots: usize,
    /// Fingerprint bits `f`. In expandable mode this is the full-length
    /// payload; the stored fluid field is one bit wider.
    pub fingerprint_bits: u32,
    /// Memento bits `r`.
    pub memento_bits: u32,
    /// Maximum fraction of slots in use, in `(0, 0.95]`.
    pub max_load_factor: f64,
    pub seed: u64,
}

impl FilterParams {
    pub fn new(n_slots: usize, fingerprint_bits: u32, memento_bits: u32) -> Self {
        FilterParams {
            n_slots,
            fingerprint_bits,
            memento_bits,
            max_load_factor: DEFAULT_MAX_LOAD_FACTOR,
            seed: 0,
        }
    }

    /// Smallest power-of-two table that holds `n_keys` single-slot keys at
    /// the default load factor.
    pub fn for_keys(n_keys: usize, fingerprint_bits: u32, memento_bits: u32) -> Self {
        let mut n = 1usize;
        while ((n as f64) * DEFAULT_MAX_LOAD_FACTOR).floor() < n_keys as f64 {
            n *= 2;
        }
        Self::new(n, fingerprint_bits, memento_bits)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_load_factor(mut self, alpha: f64) -> Self {
        self.max_load_factor = alpha;
        self
    }

    pub fn address_bits(&self) -> u32 {
        self.n_slots.trailing_zeros()
    }

    /// Maximum number of used slots.
    pub fn capacity(&self) -> usize {
        capacity(self.n_slots, self.max_load_factor)
    }

    /// Checks parameter ranges. `extra_bits` is the width added on top of
    /// `f + r` per slot (one for fluid fingerprints).
    pub(crate) fn validate(&self, extra_bits: u32) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.n_slots == 0 || !self.n_slots.is_power_of_two() {
            return bad(format!("n_slots {} is not a power of two", self.n_slots));
        }
        if self.fingerprint_bits == 0 {
            return bad("fingerprint_bits must be at least 1".into());
        }
        if self.memento_bits == 0 || self.memento_bits >= 64 {
            return bad(format!("memento_bits {} outside 1..64", self.memento_bits));
        }
        if self.fingerprint_bits + self.memento_bits + extra_bits > 64 {
            return bad("slot wider than 64 bits".into());
        }
        if self.address_bits() + self.fingerprint_bits > 64 {
            return bad("address and fingerprint bits exceed the 64-bit hash".into());
        }
        if !(self.max_load_factor > 0.0 && self.max_load_factor <= DEFAULT_MAX_LOAD_FACTOR) {
            return bad(format!("max_load_factor {} outside (0, 0.95]", self.max_load_factor));
        }
        Ok(())
    }
}

pub(crate) fn capacity(n_slots: usize, alpha: f64) -> usize {
    (n_slots as f64 * alpha).floor() as usize
}

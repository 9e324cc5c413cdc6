//! Datasets, query workloads and filter sizing.

use std::path::PathBuf;

use memento_filter::keyspace::memento_bits_for;
use memento_filter::oracle::ExactSet;
use memento_filter::DEFAULT_MAX_LOAD_FACTOR;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{BenchError, Result};

/// Fixed metadata cost per slot assumed by the budget formula.
pub const METADATA_BITS: f64 = 3.125;

#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    /// Keys uniform over the full 64-bit universe.
    Uniform,
    /// Keys from N(2^63, (0.1 * 2^63)^2), clamped to the universe.
    Normal,
    /// Raw little-endian u64 records.
    File(PathBuf),
}

impl Dataset {
    pub fn name(&self) -> String {
        match self {
            Dataset::Uniform => "uniform".into(),
            Dataset::Normal => "normal".into(),
            Dataset::File(p) => format!("file:{}", p.display()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum QueryKind {
    Uncorrelated,
    /// Left endpoints within `2^(30 (1 - D))` above a random key.
    Correlated(f64),
    /// Left endpoints are keys removed from the dataset.
    Real,
}

impl QueryKind {
    pub fn name(&self) -> &'static str {
        match self {
            QueryKind::Uncorrelated => "uncorrelated",
            QueryKind::Correlated(_) => "correlated",
            QueryKind::Real => "real",
        }
    }

    pub fn correlation(&self) -> Option<f64> {
        match *self {
            QueryKind::Correlated(d) => Some(d),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadSpec {
    pub dataset: Dataset,
    pub n_keys: usize,
    pub queries: QueryKind,
    pub range_len: u64,
    pub n_queries: usize,
    pub seed: u64,
    pub bits_per_key: f64,
    pub expandable: bool,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            dataset: Dataset::Uniform,
            n_keys: 1_000_000,
            queries: QueryKind::Uncorrelated,
            range_len: 32,
            n_queries: 100_000,
            seed: 7,
            bits_per_key: 20.0,
            expandable: false,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_keys == 0 {
            return Err(BenchError::InvalidSpec("n_keys must be positive".into()));
        }
        if self.range_len == 0 {
            return Err(BenchError::InvalidSpec("range length must be positive".into()));
        }
        if let QueryKind::Correlated(d) = self.queries {
            if !(0.0..=1.0).contains(&d) {
                return Err(BenchError::InvalidSpec(format!("correlation {d} outside [0, 1]")));
            }
        }
        if !(self.bits_per_key.is_finite() && self.bits_per_key > 0.0) {
            return Err(BenchError::InvalidSpec("bits per key must be positive".into()));
        }
        Ok(())
    }

    pub fn memento_bits(&self) -> u32 {
        memento_bits_for(self.range_len)
    }

    /// Independent RNG stream for one purpose of this workload.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Filter dimensions derived from a workload.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sizing {
    pub n_slots: usize,
    /// Keys that fit at the target load factor (at most the requested count).
    pub n_keys: usize,
    /// Fingerprint bits; payload bits for the expandable filter.
    pub fingerprint_bits: u32,
    pub memento_bits: u32,
}

/// Chooses the largest power-of-two table whose capacity does not exceed
/// `n_keys`, and the fingerprint length that spends the bits-per-key
/// budget after metadata and mementos.
pub fn size_for(n_keys: usize, bits_per_key: f64, memento_bits: u32, expandable: bool) -> Result<Sizing> {
    let alpha = DEFAULT_MAX_LOAD_FACTOR;
    let extra = if expandable { 1.0 } else { 0.0 };
    let needed = METADATA_BITS + memento_bits as f64 + 1.0 + extra;
    if bits_per_key < needed {
        return Err(BenchError::BudgetInfeasible {
            budget: bits_per_key,
            memento_bits,
            needed,
        });
    }
    let f = (bits_per_key * alpha - METADATA_BITS - memento_bits as f64 - extra).round().max(1.0) as u32;
    let k = (n_keys as f64 / alpha).log2().floor().max(0.0) as u32;
    let n_slots = 1usize << k;
    let fit = ((n_slots as f64 * alpha).floor() as usize).max(1);
    Ok(Sizing {
        n_slots,
        n_keys: n_keys.min(fit),
        fingerprint_bits: f,
        memento_bits,
    })
}

/// Deterministic dataset of `n` keys.
pub fn gen_dataset(dataset: &Dataset, n: usize, rng: &mut impl Rng) -> Result<Vec<u64>> {
    match dataset {
        Dataset::Uniform => Ok((0..n).map(|_| rng.random()).collect()),
        Dataset::Normal => {
            let mean = 2f64.powi(63);
            let normal = Normal::new(mean, 0.1 * mean).expect("valid normal parameters");
            Ok((0..n)
                .map(|_| {
                    let x = normal.sample(rng);
                    // `as` saturates at both ends of the universe.
                    x as u64
                })
                .collect())
        }
        Dataset::File(path) => {
            let bytes = std::fs::read(path)?;
            if bytes.len() % 8 != 0 {
                return Err(BenchError::Dataset(format!(
                    "{}: length {} is not a multiple of 8",
                    path.display(),
                    bytes.len()
                )));
            }
            let mut keys: Vec<u64> = bytes
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            keys.truncate(n);
            Ok(keys)
        }
    }
}

/// Keys to insert plus the left endpoints reserved for real queries.
#[derive(Clone, Debug)]
pub struct PreparedWorkload {
    pub keys: Vec<u64>,
    pub held_out: Vec<u64>,
}

/// Generates the dataset for `spec`, sized to `n_keys` inserted keys. For
/// real queries, extra keys are generated and then removed to serve as
/// query endpoints.
pub fn prepare(spec: &WorkloadSpec, n_keys: usize) -> Result<PreparedWorkload> {
    let mut rng = spec.rng(1);
    if spec.queries != QueryKind::Real {
        return Ok(PreparedWorkload {
            keys: gen_dataset(&spec.dataset, n_keys, &mut rng)?,
            held_out: Vec::new(),
        });
    }
    let pool = (2 * spec.n_queries).max(1);
    let mut all = gen_dataset(&spec.dataset, n_keys + pool, &mut rng)?;
    if all.len() < 2 {
        return Err(BenchError::Dataset("need at least two keys for real queries".into()));
    }
    // Short files give up keys rather than queries, down to half the data.
    let pool = all.len().saturating_sub(n_keys).max(pool.min(all.len() / 2));
    let mut picked = sample(&mut rng, all.len(), pool).into_vec();
    picked.sort_unstable();
    let mut held_out = Vec::with_capacity(pool);
    for &i in picked.iter().rev() {
        held_out.push(all.swap_remove(i));
    }
    held_out.reverse();
    Ok(PreparedWorkload { keys: all, held_out })
}

/// Empty queries `[x, x + R - 1]` for an FPR run. Candidates that overlap
/// a key are regenerated; gives up after `50 * n + 1000` attempts.
pub fn gen_queries(spec: &WorkloadSpec, data: &PreparedWorkload, set: &ExactSet) -> Result<Vec<(u64, u64)>> {
    let mut rng = spec.rng(2);
    let span = spec.range_len - 1;
    let top = u64::MAX - span;
    let wanted = spec.n_queries;
    let max_attempts = 50 * wanted + 1000;
    let mut out = Vec::with_capacity(wanted);
    let mut attempts = 0;
    let mut held = data.held_out.iter();
    while out.len() < wanted && attempts < max_attempts {
        attempts += 1;
        let x = match spec.queries {
            QueryKind::Uncorrelated => rng.random_range(0..=top),
            QueryKind::Correlated(d) => {
                if data.keys.is_empty() {
                    return Err(BenchError::InvalidSpec("correlated queries need keys".into()));
                }
                let k = data.keys[rng.random_range(0..data.keys.len())];
                let window = correlation_window(d);
                k.saturating_add(rng.random_range(0..=window)).min(top)
            }
            QueryKind::Real => match held.next() {
                Some(&x) => x.min(top),
                None => break,
            },
        };
        if !set.range_nonempty(x, x + span) {
            out.push((x, x + span));
        }
    }
    if out.len() < wanted {
        return Err(BenchError::GenerationExhausted {
            wanted,
            found: out.len(),
            attempts,
        });
    }
    Ok(out)
}

/// Width `2^(30 (1 - D))` of the correlated offset window.
pub fn correlation_window(d: f64) -> u64 {
    2f64.powf(30.0 * (1.0 - d)).floor() as u64
}

/// Average number of keys per non-empty partition.
pub fn keys_per_partition(keys: &[u64], memento_bits: u32) -> f64 {
    if keys.is_empty() {
        return 0.0;
    }
    let mut prefixes: Vec<u64> = keys.iter().map(|k| k >> memento_bits).collect();
    prefixes.sort_unstable();
    prefixes.dedup();
    keys.len() as f64 / prefixes.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn deterministic_datasets() {
        let spec = WorkloadSpec::default();
        let a = gen_dataset(&Dataset::Uniform, 10, &mut spec.rng(1)).unwrap();
        let b = gen_dataset(&Dataset::Uniform, 10, &mut spec.rng(1)).unwrap();
        assert_eq!(a, b);
        let c = gen_dataset(&Dataset::Uniform, 10, &mut spec.rng(2)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn normal_mean() {
        let keys = gen_dataset(&Dataset::Normal, 1_000_000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mean = keys.iter().map(|&k| k as f64).sum::<f64>() / keys.len() as f64;
        let target = 2f64.powi(63);
        assert!((mean - target).abs() / target < 0.01, "{mean}");
    }

    #[test]
    fn window_endpoints() {
        assert_eq!(correlation_window(1.0), 1);
        assert_eq!(correlation_window(0.0), 1 << 30);
        assert_eq!(correlation_window(0.5), 1 << 15);
    }

    #[test]
    fn sizing() {
        let s = size_for(1_000_000, 20.0, 5, false).unwrap();
        assert_eq!(s.n_slots, 1 << 20);
        assert_eq!(s.n_keys, 996_147);
        // round(20 * 0.95 - 3.125 - 5) = round(10.875)
        assert_eq!(s.fingerprint_bits, 11);
        assert_eq!(size_for(1_000_000, 20.0, 5, true).unwrap().fingerprint_bits, 10);
        assert!(matches!(size_for(10, 8.0, 5, false), Err(BenchError::BudgetInfeasible { .. })));
        assert_eq!(size_for(10, 9.125, 5, false).unwrap().fingerprint_bits, 1);
    }

    #[test]
    fn file_dataset() {
        let path = std::env::temp_dir().join(format!("memento-ds-{}.bin", std::process::id()));
        let keys = [5u64, u64::MAX, 0, 77];
        let bytes: Vec<u8> = keys.iter().flat_map(|k| k.to_le_bytes()).collect();
        std::fs::write(&path, &bytes).unwrap();
        let ds = Dataset::File(path.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(gen_dataset(&ds, 10, &mut rng).unwrap(), keys);
        assert_eq!(gen_dataset(&ds, 2, &mut rng).unwrap(), &keys[..2]);
        std::fs::write(&path, &bytes[..5]).unwrap();
        assert!(matches!(gen_dataset(&ds, 10, &mut rng), Err(BenchError::Dataset(_))));
        std::fs::remove_file(&path).unwrap();
        assert!(matches!(gen_dataset(&ds, 10, &mut rng), Err(BenchError::Io(_))));
    }

    #[test]
    fn real_queries_use_removed_keys() {
        let spec = WorkloadSpec {
            n_queries: 200,
            queries: QueryKind::Real,
            ..WorkloadSpec::default()
        };
        let data = prepare(&spec, 5000).unwrap();
        assert_eq!(data.keys.len(), 5000);
        assert_eq!(data.held_out.len(), 400);
        let set = ExactSet::new(data.keys.clone());
        let qs = gen_queries(&spec, &data, &set).unwrap();
        assert_eq!(qs.len(), 200);
        assert!(qs.iter().all(|&(l, _)| data.held_out.contains(&l)));
    }

    #[test]
    fn dense_data_exhausts_generation() {
        // Every possible left endpoint near the keys overlaps a key.
        let keys: Vec<u64> = (0..1000).collect();
        let spec = WorkloadSpec {
            queries: QueryKind::Correlated(1.0),
            n_queries: 10,
            range_len: 4,
            ..WorkloadSpec::default()
        };
        let data = PreparedWorkload {
            keys: keys.clone(),
            held_out: Vec::new(),
        };
        let err = gen_queries(&spec, &data, &ExactSet::new(keys)).unwrap_err();
        assert!(matches!(err, BenchError::GenerationExhausted { .. }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn queries_are_empty_and_well_formed(d in 0.0f64..=1.0, range_len in 1u64..200, seed in any::<u64>()) {
            let spec = WorkloadSpec {
                queries: QueryKind::Correlated(d),
                n_queries: 200,
                range_len,
                seed,
                ..WorkloadSpec::default()
            };
            let data = prepare(&spec, 2000).unwrap();
            let set = ExactSet::new(data.keys.clone());
            let qs = gen_queries(&spec, &data, &set).unwrap();
            prop_assert_eq!(qs.len(), 200);
            for (l, r) in qs {
                prop_assert_eq!(r - l + 1, range_len);
                prop_assert!(!set.range_nonempty(l, r));
            }
        }
    }
}

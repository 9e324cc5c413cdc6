use memento_filter::keyspace::{address_of, split_key};
use memento_filter::oracle::{reference_decode, ExactSet, FilterState};
use memento_filter::{Error, FilterParams, MementoFilter};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn production_state(f: &MementoFilter) -> FilterState {
    f.boxes()
        .into_iter()
        .map(|b| ((b.canonical_slot, b.fingerprint), b.mementos))
        .collect()
}

/// Expected state computed straight from the keys: group mementos by
/// (canonical slot, fingerprint).
fn expected_state(params: &FilterParams, keys: &[u64]) -> FilterState {
    let mut state = FilterState::new();
    for &k in keys {
        let parts = split_key(k, params.memento_bits);
        let a = address_of(parts.prefix, params.n_slots, params.fingerprint_bits, params.seed);
        state
            .entry((a.canonical_slot, a.fingerprint))
            .or_default()
            .push(parts.memento);
    }
    for ms in state.values_mut() {
        ms.sort_unstable();
    }
    state
}

#[test]
fn stored_state_matches_keys() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let params = FilterParams::new(1 << 12, 5, 6).with_seed(8);
    let mut f = MementoFilter::new(params).unwrap();
    let mut keys = Vec::new();
    for _ in 0..3500 {
        let k = rng.random_range(0..1u64 << 24);
        f.insert(k).unwrap();
        keys.push(k);
    }
    let expected = expected_state(&params, &keys);
    assert_eq!(production_state(&f), expected);
    assert_eq!(reference_decode(&f.to_bytes()).unwrap(), expected);
}

#[test]
fn insert_then_delete_restores_bytes() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let params = FilterParams::new(1 << 10, 6, 5);
    let mut f = MementoFilter::new(params).unwrap();
    for _ in 0..800 {
        f.insert(rng.random_range(0..1u64 << 20)).unwrap();
    }
    let before = f.to_bytes();
    let extra: Vec<u64> = (0..100).map(|_| rng.random_range(0..1u64 << 20)).collect();
    for &k in &extra {
        f.insert(k).unwrap();
    }
    for &k in extra.iter().rev() {
        f.delete(k).unwrap();
    }
    assert_eq!(f.to_bytes(), before);
}

#[test]
fn errors() {
    assert!(matches!(MementoFilter::new(FilterParams::new(100, 8, 8)), Err(Error::InvalidParams(_))));
    assert!(matches!(MementoFilter::new(FilterParams::new(64, 0, 8)), Err(Error::InvalidParams(_))));
    assert!(matches!(MementoFilter::new(FilterParams::new(64, 40, 30)), Err(Error::InvalidParams(_))));
    let mut f = MementoFilter::new(FilterParams::new(64, 8, 8)).unwrap();
    assert_eq!(f.delete(5), Err(Error::NotFound));
    assert!(matches!(MementoFilter::from_bytes(b"nope"), Err(Error::Format(_))));
    let bytes = f.to_bytes();
    assert!(MementoFilter::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    f.insert(1).unwrap();
    assert_eq!(f.len(), 1);
}

#[test]
fn save_and_load() {
    let dir = std::env::temp_dir().join(format!("memento-api-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("f.bin");
    let f = MementoFilter::bulk_load(FilterParams::new(256, 8, 8), &[1, 2, 3, 1 << 20]).unwrap();
    f.save(&path).unwrap();
    let g = MementoFilter::load(&path).unwrap();
    assert_eq!(g.to_bytes(), f.to_bytes());
    assert!(g.range_query(0, 3));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn range_fpr_within_bound() {
    // Range answers for empty ranges are false positives; with every
    // prefix probed at most twice the rate stays under 2 * 2^-f * (α/ℓ)
    // plus sampling slack.
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let n = 1 << 14;
    let params = FilterParams::new(n, 8, 5).with_seed(3);
    let keys: Vec<u64> = (0..params.capacity()).map(|_| rng.random()).collect();
    let f = MementoFilter::bulk_load(params, &keys).unwrap();
    let set = ExactSet::new(keys);
    let (mut fp, mut q) = (0u32, 0u32);
    while q < 100_000 {
        let l = rng.random::<u64>() >> 1;
        let r = l + rng.random_range(1..32);
        if set.range_nonempty(l, r) {
            continue;
        }
        q += 1;
        fp += f.range_query(l, r) as u32;
    }
    let measured = fp as f64 / q as f64;
    let bound = 0.95 * 2.0 / 256.0;
    let tol = 3.0 * (bound * (1.0 - bound) / q as f64).sqrt();
    assert!(measured <= bound + tol, "{measured} > {bound}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn no_false_negatives(keys in prop::collection::vec(0u64..1 << 18, 0..400),
                          queries in prop::collection::vec((0u64..1 << 18, 0u64..300), 50),
                          seed in any::<u64>()) {
        let params = FilterParams::new(1 << 9, 4, 4).with_seed(seed);
        let f = MementoFilter::bulk_load(params, &keys).unwrap();
        let set = ExactSet::new(keys.clone());
        for &k in &keys {
            prop_assert!(f.point_query(k));
        }
        for (l, len) in queries {
            if set.range_nonempty(l, l + len) {
                prop_assert!(f.range_query(l, l + len));
            }
        }
    }

    #[test]
    fn bulk_equals_incremental_and_roundtrips(keys in prop::collection::vec(any::<u64>(), 0..300), seed in any::<u64>()) {
        let params = FilterParams::new(1 << 9, 7, 9).with_seed(seed);
        let bulk = MementoFilter::bulk_load(params, &keys).unwrap();
        let mut inc = MementoFilter::new(params).unwrap();
        for &k in &keys {
            inc.insert(k).unwrap();
        }
        prop_assert_eq!(bulk.to_bytes(), inc.to_bytes());
        let back = MementoFilter::from_bytes(&bulk.to_bytes()).unwrap();
        prop_assert_eq!(back.to_bytes(), bulk.to_bytes());
        prop_assert_eq!(back.len(), keys.len());
        prop_assert_eq!(reference_decode(&bulk.to_bytes()).unwrap(), expected_state(&params, &keys));
    }
}

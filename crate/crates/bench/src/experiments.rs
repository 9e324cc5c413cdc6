//! Experiment drivers.

use std::hint::black_box;
use std::time::Instant;

use memento_filter::oracle::ExactSet;
use memento_filter::{ConcurrentMementoFilter, Error, ExpandableMementoFilter, FilterParams, FilterStats, MementoFilter};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{BenchError, Result};
use crate::report::BenchReport;
use crate::workload::{gen_queries, keys_per_partition, prepare, size_for, QueryKind, Sizing, WorkloadSpec};

/// Expansions performed by the expansion experiment.
pub const EXPANSION_STEPS: u32 = 6;

/// Queries run untimed before latency measurement starts.
const WARMUP_QUERIES: usize = 10_000;

/// Most partitions a range of `range_len` keys can touch.
pub fn partitions_spanned(range_len: u64, memento_bits: u32) -> u64 {
    (range_len - 1).div_ceil(1 << memento_bits) + 1
}

/// Upper bound on the false positive rate of an empty query.
///
/// Every probed partition is a false positive with probability at most
/// `(α/ℓ) 2^-f`. The expandable filter loses one fingerprint bit per
/// expansion for its oldest keys, which costs a factor `E + 2` instead of
/// the two partitions of a fixed filter.
pub fn fpr_bound(alpha: f64, ell: f64, f: u32, memento_bits: u32, range_len: u64, expansions: Option<u32>) -> f64 {
    let per_partition = alpha / ell.max(1.0) * 2f64.powi(-(f as i32));
    let spanned = partitions_spanned(range_len, memento_bits) as f64;
    let bound = match expansions {
        None => spanned * per_partition,
        Some(e) => (e as f64 + 2.0) * (spanned - 1.0).max(1.0) * per_partition,
    };
    bound.min(1.0)
}

enum AnyFilter {
    Static(MementoFilter),
    Expandable(ExpandableMementoFilter),
}

impl AnyFilter {
    fn range_with_probes(&self, l: u64, r: u64) -> (bool, usize) {
        match self {
            AnyFilter::Static(f) => f.range_query_with_probes(l, r),
            AnyFilter::Expandable(f) => f.range_query_with_probes(l, r),
        }
    }

    fn point(&self, k: u64) -> bool {
        match self {
            AnyFilter::Static(f) => f.point_query(k),
            AnyFilter::Expandable(f) => f.point_query(k),
        }
    }

    fn stats(&self) -> FilterStats {
        match self {
            AnyFilter::Static(f) => f.stats(),
            AnyFilter::Expandable(f) => f.stats(),
        }
    }

    fn size_in_bytes(&self) -> usize {
        match self {
            AnyFilter::Static(f) => f.size_in_bytes(),
            AnyFilter::Expandable(f) => f.size_in_bytes(),
        }
    }

    fn len(&self) -> usize {
        match self {
            AnyFilter::Static(f) => f.len(),
            AnyFilter::Expandable(f) => f.len(),
        }
    }

    fn expansions(&self) -> Option<u32> {
        match self {
            AnyFilter::Static(_) => None,
            AnyFilter::Expandable(f) => Some(f.expansions()),
        }
    }
}

struct QueryRun {
    false_positives: usize,
    probes: usize,
    mean_ns: f64,
    p99_ns: f64,
}

fn run_queries(filter: &AnyFilter, queries: &[(u64, u64)]) -> QueryRun {
    for &(l, r) in queries.iter().take(WARMUP_QUERIES) {
        black_box(filter.range_with_probes(l, r));
    }
    let mut latencies = Vec::with_capacity(queries.len());
    let mut false_positives = 0;
    let mut probes = 0;
    for &(l, r) in queries {
        let t = Instant::now();
        let (hit, p) = black_box(filter.range_with_probes(black_box(l), black_box(r)));
        latencies.push(t.elapsed().as_nanos() as u64);
        false_positives += hit as usize;
        probes += p;
    }
    latencies.sort_unstable();
    let mean_ns = latencies.iter().sum::<u64>() as f64 / latencies.len().max(1) as f64;
    let p99_ns = latencies
        .get((latencies.len() * 99 / 100).min(latencies.len().saturating_sub(1)))
        .copied()
        .unwrap_or(0) as f64;
    QueryRun {
        false_positives,
        probes,
        mean_ns,
        p99_ns,
    }
}

fn base_report(experiment: &str, spec: &WorkloadSpec, sizing: &Sizing, filter: &AnyFilter, ell: f64) -> BenchReport {
    let stats = filter.stats();
    let n_keys = filter.len();
    BenchReport {
        experiment: experiment.into(),
        dataset: spec.dataset.name(),
        query_kind: spec.queries.name().into(),
        correlation: spec.queries.correlation(),
        range_len: spec.range_len,
        n_keys,
        n_slots: stats.n_slots,
        fingerprint_bits: sizing.fingerprint_bits,
        memento_bits: sizing.memento_bits,
        expansions: filter.expansions().unwrap_or(0),
        ell,
        load_factor: stats.load_factor,
        bits_per_key: filter.size_in_bytes() as f64 * 8.0 / n_keys.max(1) as f64,
        mean_cluster_length: stats.mean_cluster_length,
        max_cluster_length: stats.max_cluster_length,
        cluster_histogram: stats.cluster_lengths,
        ..Default::default()
    }
}

fn fill_fpr(report: &mut BenchReport, run: &QueryRun, n_queries: usize, bound: f64) {
    report.n_queries = n_queries;
    report.false_positives = run.false_positives;
    report.measured_fpr = run.false_positives as f64 / n_queries.max(1) as f64;
    report.fpr_bound = bound;
    report.probes_per_query = run.probes as f64 / n_queries.max(1) as f64;
    report.mean_query_ns = Some(run.mean_ns);
    report.p99_query_ns = Some(run.p99_ns);
}

/// Builds a filter over the workload's keys and measures the false
/// positive rate of empty range queries.
pub fn run_fpr_experiment(spec: &WorkloadSpec) -> Result<BenchReport> {
    spec.validate()?;
    let sizing = size_for(spec.n_keys, spec.bits_per_key, spec.memento_bits(), spec.expandable)?;
    run_sized(spec, &sizing, "fpr")
}

fn run_sized(spec: &WorkloadSpec, sizing: &Sizing, experiment: &str) -> Result<BenchReport> {
    let data = prepare(spec, sizing.n_keys)?;
    let set = ExactSet::new(data.keys.clone());
    let queries = gen_queries(spec, &data, &set)?;
    let params = FilterParams::new(sizing.n_slots, sizing.fingerprint_bits, sizing.memento_bits).with_seed(spec.seed);

    let t = Instant::now();
    let (filter, insert_rate) = if spec.expandable {
        let mut f = ExpandableMementoFilter::new(params)?;
        for &k in &data.keys {
            f.insert(k)?;
        }
        let secs = t.elapsed().as_secs_f64();
        (AnyFilter::Expandable(f), Some(data.keys.len() as f64 / secs))
    } else {
        (AnyFilter::Static(MementoFilter::bulk_load(params, &data.keys)?), None)
    };
    let construction = t.elapsed().as_secs_f64();

    let ell = keys_per_partition(&data.keys, sizing.memento_bits);
    let mut report = base_report(experiment, spec, sizing, &filter, ell);
    let run = run_queries(&filter, &queries);
    let bound = fpr_bound(
        report.load_factor,
        ell,
        sizing.fingerprint_bits,
        sizing.memento_bits,
        spec.range_len,
        filter.expansions(),
    );
    fill_fpr(&mut report, &run, queries.len(), bound);
    report.construction_secs = Some(construction);
    report.insert_ops_per_sec = insert_rate;
    Ok(report)
}

/// Grows an expandable filter from 1/64 of the final size through
/// [`EXPANSION_STEPS`] doublings, measuring the FPR when the filter is full
/// at each size. Fails if an inserted key stops being reported.
pub fn run_expansion_experiment(spec: &WorkloadSpec) -> Result<Vec<BenchReport>> {
    spec.validate()?;
    let sizing = size_for(spec.n_keys, spec.bits_per_key, spec.memento_bits(), true)?;
    let n0 = (sizing.n_slots >> EXPANSION_STEPS).max(1);
    let data = prepare(spec, sizing.n_keys)?;
    let set = ExactSet::new(data.keys.clone());
    let queries = gen_queries(spec, &data, &set)?;
    let params = FilterParams::new(n0, sizing.fingerprint_bits, sizing.memento_bits).with_seed(spec.seed);
    let mut filter = AnyFilter::Expandable(ExpandableMementoFilter::new(params)?);

    let keys = &data.keys;
    let mut cursor = 0;
    let mut reports = Vec::new();
    for e in 0..=EXPANSION_STEPS {
        let AnyFilter::Expandable(f) = &mut filter else { unreachable!() };
        if e > 0 {
            f.expand()?;
        }
        let start = cursor;
        let t = Instant::now();
        while cursor < keys.len() && f.used_slots() + 2 <= f.capacity() {
            f.insert(keys[cursor])?;
            cursor += 1;
        }
        let rate = (cursor - start) as f64 / t.elapsed().as_secs_f64().max(1e-9);
        if f.expansions() != e {
            return Err(BenchError::Check(format!("expected {e} expansions, found {}", f.expansions())));
        }

        let inserted = &keys[..cursor];
        if let Some(&k) = inserted.iter().find(|&&k| !filter.point(k)) {
            return Err(BenchError::Check(format!("false negative for key {k} after {e} expansions")));
        }
        let ell = keys_per_partition(inserted, sizing.memento_bits);
        let mut report = base_report("expand", spec, &sizing, &filter, ell);
        let run = run_queries(&filter, &queries);
        let bound = fpr_bound(
            report.load_factor,
            ell,
            sizing.fingerprint_bits,
            sizing.memento_bits,
            spec.range_len,
            Some(e),
        );
        fill_fpr(&mut report, &run, queries.len(), bound);
        report.insert_ops_per_sec = Some(rate);
        reports.push(report);
    }
    Ok(reports)
}

/// Memento length giving the best FPR for the workload's range length.
pub fn optimal_memento_bits(range_len: u64) -> u32 {
    memento_filter::keyspace::memento_bits_for(range_len)
}

/// Same budget, different memento lengths: shorter mementos leave more
/// fingerprint bits but make each query probe more partitions.
pub fn run_memento_size_sweep(spec: &WorkloadSpec, memento_bits: &[u32]) -> Result<Vec<BenchReport>> {
    spec.validate()?;
    memento_bits
        .iter()
        .map(|&r| {
            let sizing = size_for(spec.n_keys, spec.bits_per_key, r, spec.expandable)?;
            run_sized(spec, &sizing, "sweep")
        })
        .collect()
}

/// Construction and query throughput. With `threads > 1` the incremental
/// inserts go through the concurrent filter.
pub fn run_bulkbench(spec: &WorkloadSpec, threads: usize) -> Result<BenchReport> {
    spec.validate()?;
    let sizing = size_for(spec.n_keys, spec.bits_per_key, spec.memento_bits(), false)?;
    let data = prepare(&WorkloadSpec { queries: QueryKind::Uncorrelated, ..spec.clone() }, sizing.n_keys)?;
    let keys = &data.keys;
    let params = FilterParams::new(sizing.n_slots, sizing.fingerprint_bits, sizing.memento_bits).with_seed(spec.seed);

    let t = Instant::now();
    let bulk = MementoFilter::bulk_load(params, keys)?;
    let construction = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let incremental = if threads > 1 {
        let c = ConcurrentMementoFilter::new(params)?;
        let chunk = keys.len().div_ceil(threads);
        std::thread::scope(|s| -> Result<()> {
            let handles: Vec<_> = keys
                .chunks(chunk.max(1))
                .map(|part| {
                    let c = &c;
                    s.spawn(move || part.iter().try_for_each(|&k| c.insert(k)))
                })
                .collect();
            for h in handles {
                h.join().expect("insert thread panicked")?;
            }
            Ok(())
        })?;
        c.into_filter()
    } else {
        let mut f = MementoFilter::new(params)?;
        for &k in keys {
            f.insert(k)?;
        }
        f
    };
    let insert_rate = keys.len() as f64 / t.elapsed().as_secs_f64();
    if incremental.to_bytes() != bulk.to_bytes() {
        return Err(BenchError::Check("bulk load differs from incremental insertion".into()));
    }

    let mut rng = spec.rng(3);
    let n_q = spec.n_queries.max(1);
    let points: Vec<u64> = (0..n_q)
        .map(|i| if i % 2 == 0 { rng.random() } else { *keys.choose(&mut rng).unwrap() })
        .collect();
    let span = spec.range_len - 1;
    let ranges: Vec<(u64, u64)> = (0..n_q)
        .map(|_| {
            let l = rng.random_range(0..=u64::MAX - span);
            (l, l + span)
        })
        .collect();

    let t = Instant::now();
    let mut hits = 0usize;
    for &k in &points {
        hits += bulk.point_query(black_box(k)) as usize;
    }
    let point_rate = n_q as f64 / t.elapsed().as_secs_f64();
    let t = Instant::now();
    for &(l, r) in &ranges {
        hits += bulk.range_query(black_box(l), black_box(r)) as usize;
    }
    let range_rate = n_q as f64 / t.elapsed().as_secs_f64();
    black_box(hits);

    let filter = AnyFilter::Static(bulk);
    let ell = keys_per_partition(keys, sizing.memento_bits);
    let mut report = base_report("bulkbench", spec, &sizing, &filter, ell);
    report.query_kind = QueryKind::Uncorrelated.name().into();
    report.correlation = None;
    report.construction_secs = Some(construction);
    report.insert_ops_per_sec = Some(insert_rate);
    report.point_ops_per_sec = Some(point_rate);
    report.range_ops_per_sec = Some(range_rate);
    Ok(report)
}

/// Outcome of randomized operation sequences checked against an exact set.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FuzzReport {
    pub rounds: usize,
    pub operations: usize,
    pub queries: usize,
    /// Queries the exact set answers positively but the filter does not,
    /// plus failed deletes or rejuvenations of present keys.
    pub disagreements: usize,
}

/// Keys in fuzz rounds are drawn from `[0, 2^FUZZ_UNIVERSE_BITS)`.
pub const FUZZ_UNIVERSE_BITS: u32 = 16;

/// Runs `rounds` random operation sequences, alternating fixed-size and
/// expandable filters.
pub fn run_fuzz(seed: u64, rounds: usize) -> FuzzReport {
    let mut report = FuzzReport {
        rounds,
        ..Default::default()
    };
    for round in 0..rounds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(round as u64);
        if round % 2 == 0 {
            fuzz_static(&mut rng, &mut report);
        } else {
            fuzz_expandable(&mut rng, &mut report);
        }
    }
    report
}

fn universe_key(rng: &mut impl Rng) -> u64 {
    rng.random_range(0..1u64 << FUZZ_UNIVERSE_BITS)
}

fn random_range(rng: &mut impl Rng) -> (u64, u64) {
    let l = universe_key(rng);
    let len = rng.random_range(1..=64);
    (l, (l + len - 1).min((1 << FUZZ_UNIVERSE_BITS) - 1))
}

/// Picks a stored key, or a random one when the set is empty.
fn stored_or_random(rng: &mut impl Rng, set: &ExactSet) -> u64 {
    match set.keys().choose(rng) {
        Some(&k) if rng.random_bool(0.8) => k,
        _ => universe_key(rng),
    }
}

fn fuzz_static(rng: &mut ChaCha8Rng, report: &mut FuzzReport) {
    let r = rng.random_range(1..=5);
    let f = rng.random_range(1..=8);
    let n = 1 << rng.random_range(6..=8);
    let mut filter = MementoFilter::new(FilterParams::new(n, f, r).with_seed(rng.random())).unwrap();
    let mut set = ExactSet::new(Vec::new());
    for _ in 0..rng.random_range(1..=64) {
        report.operations += 1;
        match rng.random_range(0..100) {
            0..40 => {
                let k = universe_key(rng);
                match filter.insert(k) {
                    Ok(()) => set.insert(k),
                    Err(Error::CapacityExceeded) => {}
                    Err(_) => report.disagreements += 1,
                }
            }
            40..55 => {
                if let Some(&k) = set.keys().choose(rng) {
                    set.remove(k);
                    if filter.delete(k).is_err() {
                        report.disagreements += 1;
                    }
                }
            }
            55..75 => {
                let k = stored_or_random(rng, &set);
                report.queries += 1;
                report.disagreements += (set.contains(k) && !filter.point_query(k)) as usize;
            }
            _ => {
                let (l, h) = random_range(rng);
                report.queries += 1;
                report.disagreements += (set.range_nonempty(l, h) && !filter.range_query(l, h)) as usize;
            }
        }
    }
    for &k in set.keys() {
        report.queries += 1;
        report.disagreements += !filter.point_query(k) as usize;
    }
}

fn fuzz_expandable(rng: &mut ChaCha8Rng, report: &mut FuzzReport) {
    let r = rng.random_range(1..=5);
    let f = rng.random_range(1..=6);
    let n = 1 << rng.random_range(2..=6);
    let mut filter = ExpandableMementoFilter::new(FilterParams::new(n, f, r).with_seed(rng.random())).unwrap();
    let mut set = ExactSet::new(Vec::new());
    for _ in 0..rng.random_range(1..=64) {
        report.operations += 1;
        match rng.random_range(0..100) {
            0..40 => {
                let k = universe_key(rng);
                match filter.insert(k) {
                    Ok(()) => set.insert(k),
                    Err(_) => report.disagreements += 1,
                }
            }
            40..50 => {
                if let Some(&k) = set.keys().choose(rng) {
                    set.remove(k);
                    if filter.delete(k).is_err() {
                        report.disagreements += 1;
                    }
                }
            }
            50..55 => {
                if filter.expand().is_err() {
                    report.disagreements += 1;
                }
            }
            55..60 => {
                if let Some(&k) = set.keys().choose(rng) {
                    if filter.rejuvenate(k).is_err() {
                        report.disagreements += 1;
                    }
                }
            }
            60..78 => {
                let k = stored_or_random(rng, &set);
                report.queries += 1;
                report.disagreements += (set.contains(k) && !filter.point_query(k)) as usize;
            }
            _ => {
                let (l, h) = random_range(rng);
                report.queries += 1;
                report.disagreements += (set.range_nonempty(l, h) && !filter.range_query(l, h)) as usize;
            }
        }
    }
    for &k in set.keys() {
        report.queries += 1;
        report.disagreements += !filter.point_query(k) as usize;
    }
}

/// Result of checking every short range over a tiny universe.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExhaustiveReport {
    pub draws: usize,
    pub queries: usize,
    pub oracle_positives: usize,
    pub filter_positives: usize,
    pub false_negatives: usize,
}

/// Universe of `2^10` keys, 4-bit fingerprints, 3-bit mementos: for
/// `draws` random key sets of at most 8 keys, compares every range of
/// length at most 8 against the exact answer.
pub fn run_exhaustive(seed: u64, draws: usize) -> ExhaustiveReport {
    const UNIVERSE: u64 = 1 << 10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ExhaustiveReport {
        draws,
        ..Default::default()
    };
    for _ in 0..draws {
        let size = rng.random_range(0..=8);
        let keys: Vec<u64> = (0..size).map(|_| rng.random_range(0..UNIVERSE)).collect();
        let params = FilterParams::new(16, 4, 3).with_seed(rng.random());
        let filter = MementoFilter::bulk_load(params, &keys).unwrap();
        let set = ExactSet::new(keys);
        for l in 0..UNIVERSE {
            for len in 1..=8 {
                let r = l + len - 1;
                if r >= UNIVERSE {
                    break;
                }
                let truth = set.range_nonempty(l, r);
                let answer = filter.range_query(l, r);
                report.queries += 1;
                report.oracle_positives += truth as usize;
                report.filter_positives += answer as usize;
                report.false_negatives += (truth && !answer) as usize;
            }
        }
    }
    report
}

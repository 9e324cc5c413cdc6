//! The fixed-size Memento filter.

use std::path::Path;

use crate::codec::{box_mementos, Layout};
use crate::engine::{decompose_range, Engine, FilterStats, KeepsakeBox, Matcher};
use crate::error::{Error, Result};
use crate::keyspace::{address_of, split_key, HashAddress};
use crate::params::FilterParams;
use crate::rsqf::{ByteReader, RsqfTable};

pub(crate) const FILTER_MAGIC: &[u8; 4] = b"MEMF";
pub(crate) const FILTER_VERSION: u32 = 1;
pub(crate) const MODE_STATIC: u8 = 0;
pub(crate) const MODE_FLUID: u8 = 1;

/// A dynamic range filter over 64-bit keys.
///
/// Keys sharing everything but their low `r` bits form a partition; the
/// filter stores one hashed fingerprint per partition plus the exact low
/// bits (mementos) of its keys, so range queries of length up to `2^r`
/// need at most two partition probes.
#[derive(Clone, Debug)]
pub struct MementoFilter {
    params: FilterParams,
    engine: Engine,
}

impl MementoFilter {
    pub fn new(params: FilterParams) -> Result<Self> {
        params.validate(0)?;
        let engine = Engine::new(params.n_slots, Self::layout_for(&params), params.max_load_factor, params.seed)?;
        Ok(MementoFilter { params, engine })
    }

    fn layout_for(params: &FilterParams) -> Layout {
        Layout {
            fp_bits: params.fingerprint_bits,
            memento_bits: params.memento_bits,
            fluid: false,
        }
    }

    /// Builds a filter from unsorted keys in one pass.
    ///
    /// The result is byte-identical to inserting the keys one at a time.
    pub fn bulk_load(params: FilterParams, keys: &[u64]) -> Result<Self> {
        params.validate(0)?;
        let r = params.memento_bits;
        let mut entries: Vec<(usize, u64, u64)> = keys
            .iter()
            .map(|&k| {
                let parts = split_key(k, r);
                let a = address_of(parts.prefix, params.n_slots, params.fingerprint_bits, params.seed);
                (a.canonical_slot, a.fingerprint, parts.memento)
            })
            .collect();
        entries.sort_unstable();
        let boxes = entries
            .chunk_by(|a, b| a.0 == b.0 && a.1 == b.1)
            .map(|group| KeepsakeBox {
                canonical_slot: group[0].0,
                fingerprint: group[0].1,
                mementos: group.iter().map(|e| e.2).collect(),
            });
        let engine = Engine::from_boxes(
            params.n_slots,
            Self::layout_for(&params),
            params.max_load_factor,
            params.seed,
            boxes,
        )?;
        Ok(MementoFilter { params, engine })
    }

    pub fn params(&self) -> &FilterParams {
        &self.params
    }

    pub(crate) fn from_parts(params: FilterParams, engine: Engine) -> Self {
        MementoFilter { params, engine }
    }

    pub(crate) fn into_parts(self) -> (FilterParams, Engine) {
        (self.params, self.engine)
    }

    #[inline]
    fn locate(&self, key: u64) -> (HashAddress, u64) {
        let parts = split_key(key, self.params.memento_bits);
        (self.address(parts.prefix), parts.memento)
    }

    #[inline]
    fn address(&self, prefix: u64) -> HashAddress {
        address_of(prefix, self.params.n_slots, self.params.fingerprint_bits, self.params.seed)
    }

    pub fn insert(&mut self, key: u64) -> Result<()> {
        let (a, m) = self.locate(key);
        self.engine.add(a.canonical_slot, a.fingerprint, &[m])
    }

    /// Removes one copy of `key`. Fails with `NotFound` when no matching
    /// memento is stored.
    pub fn delete(&mut self, key: u64) -> Result<()> {
        let (a, m) = self.locate(key);
        let hdr = self
            .engine
            .find_box_with(a.canonical_slot, Matcher::Exact(a.fingerprint), m)
            .ok_or(Error::NotFound)?;
        self.engine.remove_from(a.canonical_slot, &hdr, m)
    }

    pub fn point_query(&self, key: u64) -> bool {
        let (a, m) = self.locate(key);
        self.engine.partition_has(a.canonical_slot, Matcher::Exact(a.fingerprint), m, m)
    }

    /// Whether `[ql, qr]` may contain a key. Ranges longer than `2^r` are
    /// handled by probing every covered partition.
    pub fn range_query(&self, ql: u64, qr: u64) -> bool {
        self.range_query_with_probes(ql, qr).0
    }

    /// Same as [`range_query`](Self::range_query); kept as a separate
    /// entry point for ranges that span many partitions.
    pub fn multi_range_query(&self, ql: u64, qr: u64) -> bool {
        self.range_query_with_probes(ql, qr).0
    }

    /// Range query that also reports how many partitions it probed.
    pub fn range_query_with_probes(&self, ql: u64, qr: u64) -> (bool, usize) {
        if self.is_empty() {
            return (false, 0);
        }
        decompose_range(self.params.memento_bits, ql, qr, |prefix, lo, hi| {
            let a = self.address(prefix);
            Ok(self.engine.partition_has(a.canonical_slot, Matcher::Exact(a.fingerprint), lo, hi))
        })
        .expect("corrupt filter")
    }

    pub fn len(&self) -> usize {
        self.engine.keys
    }

    pub fn is_empty(&self) -> bool {
        self.engine.keys == 0
    }

    pub fn used_slots(&self) -> usize {
        self.engine.used
    }

    pub fn load_factor(&self) -> f64 {
        self.engine.used as f64 / self.params.n_slots as f64
    }

    pub fn size_in_bytes(&self) -> usize {
        self.engine.table.size_in_bytes()
    }

    pub fn table(&self) -> &RsqfTable {
        &self.engine.table
    }

    /// Decoded boxes in table order.
    pub fn boxes(&self) -> Vec<KeepsakeBox> {
        self.engine.boxes()
    }

    pub fn stats(&self) -> FilterStats {
        self.engine.stats()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_header(&mut out, &self.params, MODE_STATIC);
        self.engine.table.write_to(&mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (f, used) = Self::read_from(bytes)?;
        if used != bytes.len() {
            return Err(Error::Format("trailing bytes".into()));
        }
        Ok(f)
    }

    pub(crate) fn read_from(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut r = ByteReader::new(bytes);
        let (params, mode) = read_header(&mut r)?;
        if mode != MODE_STATIC {
            return Err(Error::Format("not a fixed-fingerprint filter".into()));
        }
        let (table, used) = RsqfTable::read_from(r.rest())?;
        let params = FilterParams { seed: table.seed(), n_slots: table.n_slots(), ..params };
        params.validate(0).map_err(|e| Error::Format(e.to_string()))?;
        let engine = Engine::from_table(table, Self::layout_for(&params), params.max_load_factor)?;
        Ok((MementoFilter { params, engine }, r.pos + used))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Mementos stored for the partition of `key`'s prefix (including
    /// those of colliding partitions), for diagnostics.
    pub fn partition_mementos(&self, key: u64) -> Vec<u64> {
        let (a, _) = self.locate(key);
        let view = self.engine.table.view();
        let layout = self.engine.layout;
        let mut out = Vec::new();
        crate::engine::any_matching_box(&view, &layout, a.canonical_slot, Matcher::Exact(a.fingerprint), |h| {
            out = box_mementos(&view, &layout, h);
            true
        })
        .expect("corrupt filter");
        out
    }
}

pub(crate) fn write_header(out: &mut Vec<u8>, params: &FilterParams, mode: u8) {
    out.extend_from_slice(FILTER_MAGIC);
    out.extend_from_slice(&FILTER_VERSION.to_le_bytes());
    out.push(mode);
    out.extend_from_slice(&params.fingerprint_bits.to_le_bytes());
    out.extend_from_slice(&params.memento_bits.to_le_bytes());
    out.extend_from_slice(&params.max_load_factor.to_bits().to_le_bytes());
    out.extend_from_slice(&params.seed.to_le_bytes());
}

pub(crate) fn read_header(r: &mut ByteReader) -> Result<(FilterParams, u8)> {
    if r.take(4)? != FILTER_MAGIC {
        return Err(Error::Format("bad filter magic".into()));
    }
    let version = r.u32()?;
    if version != FILTER_VERSION {
        return Err(Error::Format(format!("unsupported filter version {version}")));
    }
    let mode = r.u8()?;
    let f = r.u32()?;
    let m = r.u32()?;
    let alpha = r.f64()?;
    let seed = r.u64()?;
    let params = FilterParams::new(1, f, m).with_max_load_factor(alpha).with_seed(seed);
    Ok((params, mode))
}

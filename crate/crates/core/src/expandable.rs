//! Expandable Memento filter built on fluid fingerprints.
//!
//! A fluid fingerprint of a box with payload length `L` is stored as
//! `(1 << L) | payload` in an `f + 1` bit field: a unary age counter
//! `0..01` followed by the payload. The payload is made of the hash bits
//! directly above the current address bits, so doubling the table moves
//! the lowest payload bit into the slot address and shortens the payload
//! by one. A box inserted at full length `f` survives `f` doublings; the
//! next one depletes it and it moves to a secondary filter in the chain.

use std::path::Path;

use crate::codec::Layout;
use crate::engine::{decompose_range, fluid_len, fluid_payload, Engine, FilterStats, KeepsakeBox, Matcher};
use crate::error::{Error, Result};
use crate::filter::{read_header, write_header, MODE_FLUID};
use crate::keyspace::{hash_prefix, low_mask, split_key};
use crate::params::FilterParams;
use crate::rsqf::{ByteReader, RsqfTable};

const CHAIN_MAGIC: &[u8; 4] = b"MEMX";
const CHAIN_VERSION: u32 = 1;

/// A box whose payload ran out during an expansion. Its `known_bits` low
/// hash bits are exactly its former slot address.
#[derive(Clone, Debug)]
struct Depleted {
    hash: u64,
    known_bits: u32,
    mementos: Vec<u64>,
}

/// One member of the chain: a table with fluid fingerprints.
#[derive(Clone, Debug)]
struct FluidFilter {
    engine: Engine,
    /// Address bits at creation.
    base_bits: u32,
    /// Full payload length `f`.
    payload_bits: u32,
}

impl FluidFilter {
    fn layout(payload_bits: u32, memento_bits: u32) -> Layout {
        Layout {
            fp_bits: payload_bits + 1,
            memento_bits,
            fluid: true,
        }
    }

    fn new(params: &FilterParams) -> Result<Self> {
        Ok(FluidFilter {
            engine: Engine::new(
                params.n_slots,
                Self::layout(params.fingerprint_bits, params.memento_bits),
                params.max_load_factor,
                params.seed,
            )?,
            base_bits: params.address_bits(),
            payload_bits: params.fingerprint_bits,
        })
    }

    #[inline]
    fn address_bits(&self) -> u32 {
        self.engine.address_bits()
    }

    #[inline]
    fn slot_of(&self, hash: u64) -> usize {
        (hash & low_mask(self.address_bits())) as usize
    }

    #[inline]
    fn matcher(&self, hash: u64) -> Matcher {
        Matcher::Fluid {
            hash_hi: hash.checked_shr(self.address_bits()).unwrap_or(0),
        }
    }

    /// Full-length fluid value for a fresh insert.
    #[inline]
    fn full_fluid(&self, hash: u64) -> u64 {
        let f = self.payload_bits;
        (1 << f) | (hash.checked_shr(self.address_bits()).unwrap_or(0) & low_mask(f))
    }

    fn has_depleted(&self) -> bool {
        let mut found = false;
        self.engine
            .for_each_box(|_, h| {
                found |= h.fp == 1;
                Ok(())
            })
            .expect("corrupt filter");
        found
    }

    /// Doubled copy plus the boxes that ran out of payload.
    fn expanded(&self) -> Result<(FluidFilter, Vec<Depleted>)> {
        let a = self.address_bits();
        if a + 1 + self.payload_bits > 64 {
            return Err(Error::CapacityExceeded);
        }
        let mut kept = Vec::new();
        let mut depleted = Vec::new();
        for b in self.engine.boxes() {
            let len = fluid_len(b.fingerprint);
            if len == 0 {
                depleted.push(Depleted {
                    hash: b.canonical_slot as u64,
                    known_bits: a,
                    mementos: b.mementos,
                });
                continue;
            }
            let payload = fluid_payload(b.fingerprint);
            kept.push(KeepsakeBox {
                canonical_slot: b.canonical_slot | (((payload & 1) as usize) << a),
                fingerprint: (1 << (len - 1)) | (payload >> 1),
                mementos: b.mementos,
            });
        }
        kept.sort_unstable();
        let engine = Engine::from_boxes(
            self.engine.n_slots() * 2,
            self.engine.layout,
            self.engine.max_load,
            self.engine.table.seed(),
            kept,
        )?;
        Ok((
            FluidFilter {
                engine,
                base_bits: self.base_bits,
                payload_bits: self.payload_bits,
            },
            depleted,
        ))
    }

    /// Halved copy. The top address bit moves back into the payloads;
    /// full-length payloads drop their highest bit instead of growing.
    fn contracted(&self) -> Result<FluidFilter> {
        let a = self.address_bits();
        if a == 0 {
            return Err(Error::InvalidParams("cannot contract a single-slot filter".into()));
        }
        let f = self.payload_bits;
        let half = self.engine.n_slots() / 2;
        let mut boxes: Vec<KeepsakeBox> = self
            .engine
            .boxes()
            .into_iter()
            .map(|b| {
                let top = (b.canonical_slot >> (a - 1)) as u64 & 1;
                let len = fluid_len(b.fingerprint);
                let payload = (fluid_payload(b.fingerprint) << 1) | top;
                let len = (len + 1).min(f);
                KeepsakeBox {
                    canonical_slot: b.canonical_slot & (half - 1),
                    fingerprint: (1 << len) | (payload & low_mask(len)),
                    mementos: b.mementos,
                }
            })
            .collect();
        boxes.sort_unstable();
        let engine = Engine::from_boxes(
            half,
            self.engine.layout,
            self.engine.max_load,
            self.engine.table.seed(),
            boxes,
        )?;
        Ok(FluidFilter {
            engine,
            base_bits: self.base_bits,
            payload_bits: self.payload_bits,
        })
    }

    /// Fluid value for a depleted box re-homed here, or `None` when this
    /// filter's addresses are already wider than the known hash bits.
    fn rehome(&self, d: &Depleted) -> Option<(usize, u64)> {
        let a = self.address_bits();
        if a > d.known_bits {
            return None;
        }
        let len = self.payload_bits.min(d.known_bits - a);
        let payload = d.hash.checked_shr(a).unwrap_or(0) & low_mask(len);
        Some((self.slot_of(d.hash), (1 << len) | payload))
    }

    fn write_to(&self, out: &mut Vec<u8>, params: &FilterParams) {
        let p = FilterParams {
            n_slots: self.engine.n_slots(),
            ..*params
        };
        write_header(out, &p, MODE_FLUID);
        self.engine.table.write_to(out);
    }

    fn read_from(r: &mut ByteReader, base_bits: u32) -> Result<(FluidFilter, FilterParams)> {
        let (params, mode) = read_header(r)?;
        if mode != MODE_FLUID {
            return Err(Error::Format("expected a fluid-fingerprint table".into()));
        }
        let (table, used) = RsqfTable::read_from(r.rest())?;
        r.take(used)?;
        let params = FilterParams {
            n_slots: table.n_slots(),
            seed: table.seed(),
            ..params
        };
        params.validate(1).map_err(|e| Error::Format(e.to_string()))?;
        let layout = Self::layout(params.fingerprint_bits, params.memento_bits);
        let engine = Engine::from_table(table, layout, params.max_load_factor)?;
        let filter = FluidFilter {
            engine,
            base_bits,
            payload_bits: params.fingerprint_bits,
        };
        Ok((filter, params))
    }
}

/// A Memento filter that doubles when full.
///
/// `params.n_slots` is the initial size and `params.fingerprint_bits` the
/// full fingerprint length `f`; slots are `f + 1 + r` bits wide. New keys
/// always get full-length fingerprints. Boxes whose fingerprints run out
/// after more than `f` doublings move to a chain of secondary filters,
/// which queries and deletes also consult.
#[derive(Clone, Debug)]
pub struct ExpandableMementoFilter {
    params: FilterParams,
    main: FluidFilter,
    /// Secondary filters, oldest first. Only the last one receives boxes.
    chain: Vec<FluidFilter>,
}

/// Where the longest matching box for a key lives.
#[derive(Clone, Copy, Debug)]
struct Hit {
    filter: usize,
    slot: usize,
    header: crate::codec::BoxHeader,
    /// Address bits plus payload length: how many hash bits it matched.
    known_bits: u32,
}

impl ExpandableMementoFilter {
    pub fn new(params: FilterParams) -> Result<Self> {
        params.validate(1)?;
        Ok(ExpandableMementoFilter {
            params,
            main: FluidFilter::new(&params)?,
            chain: Vec::new(),
        })
    }

    /// Parameters at creation (`n_slots` is the initial size).
    pub fn params(&self) -> &FilterParams {
        &self.params
    }

    #[inline]
    fn hash_of(&self, key: u64) -> (u64, u64) {
        let parts = split_key(key, self.params.memento_bits);
        (hash_prefix(parts.prefix, self.params.seed), parts.memento)
    }

    fn filters(&self) -> impl Iterator<Item = &FluidFilter> {
        std::iter::once(&self.main).chain(self.chain.iter())
    }

    fn filter_mut(&mut self, idx: usize) -> &mut FluidFilter {
        if idx == 0 {
            &mut self.main
        } else {
            &mut self.chain[idx - 1]
        }
    }

    pub fn insert(&mut self, key: u64) -> Result<()> {
        let (h, m) = self.hash_of(key);
        self.insert_hashed(h, &[m])
    }

    fn insert_hashed(&mut self, hash: u64, mementos: &[u64]) -> Result<()> {
        loop {
            let slot = self.main.slot_of(hash);
            let fluid = self.main.full_fluid(hash);
            match self.main.engine.add(slot, fluid, mementos) {
                Err(Error::CapacityExceeded | Error::TableFull) => self.expand()?,
                other => return other,
            }
        }
    }

    /// Doubles the main filter. Boxes with exhausted fingerprints move to
    /// the secondary chain.
    pub fn expand(&mut self) -> Result<()> {
        let (main, depleted) = self.main.expanded()?;
        let mut chain = self.chain.clone();
        for d in depleted {
            Self::rehome(&self.params, &mut chain, d)?;
        }
        self.main = main;
        self.chain = chain;
        Ok(())
    }

    fn rehome(params: &FilterParams, chain: &mut Vec<FluidFilter>, d: Depleted) -> Result<()> {
        // A main filter contracted below its initial size can deplete boxes
        // that know fewer bits than a fresh secondary would address.
        let fresh = |d: &Depleted| {
            let n = params.n_slots.min(1usize << d.known_bits.min(40));
            FluidFilter::new(&FilterParams { n_slots: n, ..*params })
        };
        loop {
            let Some(sec) = chain.last_mut() else {
                chain.push(fresh(&d)?);
                continue;
            };
            let Some((slot, fluid)) = sec.rehome(&d) else {
                chain.push(fresh(&d)?);
                continue;
            };
            match sec.engine.add(slot, fluid, &d.mementos) {
                Err(Error::CapacityExceeded | Error::TableFull) => {
                    if sec.has_depleted() || sec.address_bits() >= d.known_bits {
                        // Out of bits: freeze it and open a new secondary.
                        if sec.engine.keys == 0 {
                            return Err(Error::CapacityExceeded);
                        }
                        chain.push(fresh(&d)?);
                    } else {
                        let (bigger, none) = sec.expanded()?;
                        debug_assert!(none.is_empty());
                        *sec = bigger;
                    }
                }
                other => return other,
            }
        }
    }

    /// Halves the main filter. Fails with `CapacityExceeded` (leaving the
    /// filter unchanged) when the contents do not fit.
    pub fn contract(&mut self) -> Result<()> {
        self.main = self.main.contracted()?;
        Ok(())
    }

    /// Every matching box that holds `memento`, across the chain.
    fn hits(&self, hash: u64, memento: u64) -> Vec<Hit> {
        let mut out = Vec::new();
        for (i, f) in self.filters().enumerate() {
            let slot = f.slot_of(hash);
            for header in f.engine.boxes_with(slot, f.matcher(hash), memento) {
                out.push(Hit {
                    filter: i,
                    slot,
                    header,
                    known_bits: f.address_bits() + fluid_len(header.fp),
                });
            }
        }
        out
    }

    fn longest_hit(&self, hash: u64, memento: u64) -> Option<Hit> {
        // Ties go to the earliest filter (main first).
        self.hits(hash, memento)
            .into_iter()
            .rev()
            .max_by_key(|h| h.known_bits)
    }

    /// Removes one copy of `key` from the box with the longest matching
    /// fingerprint.
    pub fn delete(&mut self, key: u64) -> Result<()> {
        let (h, m) = self.hash_of(key);
        let hit = self.longest_hit(h, m).ok_or(Error::NotFound)?;
        self.filter_mut(hit.filter).engine.remove_from(hit.slot, &hit.header, m)
    }

    /// Moves `key`'s memento back to a full-length fingerprint in the main
    /// filter. A no-op when it already sits in one.
    pub fn rejuvenate(&mut self, key: u64) -> Result<()> {
        let (h, m) = self.hash_of(key);
        let hit = self.longest_hit(h, m).ok_or(Error::NotFound)?;
        if hit.filter == 0 && fluid_len(hit.header.fp) == self.params.fingerprint_bits {
            return Ok(());
        }
        self.filter_mut(hit.filter).engine.remove_from(hit.slot, &hit.header, m)?;
        self.insert_hashed(h, &[m])
    }

    fn partition_has(&self, hash: u64, lo: u64, hi: u64) -> bool {
        self.filters()
            .any(|f| f.engine.partition_has(f.slot_of(hash), f.matcher(hash), lo, hi))
    }

    pub fn point_query(&self, key: u64) -> bool {
        let (h, m) = self.hash_of(key);
        self.partition_has(h, m, m)
    }

    pub fn range_query(&self, ql: u64, qr: u64) -> bool {
        self.range_query_with_probes(ql, qr).0
    }

    pub fn multi_range_query(&self, ql: u64, qr: u64) -> bool {
        self.range_query_with_probes(ql, qr).0
    }

    /// Range query that also reports the number of partitions probed.
    pub fn range_query_with_probes(&self, ql: u64, qr: u64) -> (bool, usize) {
        if self.is_empty() {
            return (false, 0);
        }
        decompose_range(self.params.memento_bits, ql, qr, |prefix, lo, hi| {
            Ok(self.partition_has(hash_prefix(prefix, self.params.seed), lo, hi))
        })
        .expect("corrupt filter")
    }

    /// Net number of doublings of the main filter.
    pub fn expansions(&self) -> u32 {
        self.main.address_bits().saturating_sub(self.main.base_bits)
    }

    pub fn n_slots(&self) -> usize {
        self.main.engine.n_slots()
    }

    /// Slot budget of the main filter before it must expand.
    pub fn capacity(&self) -> usize {
        self.main.engine.capacity()
    }

    pub fn secondary_count(&self) -> usize {
        self.chain.len()
    }

    pub fn len(&self) -> usize {
        self.filters().map(|f| f.engine.keys).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn used_slots(&self) -> usize {
        self.filters().map(|f| f.engine.used).sum()
    }

    /// Load factor of the main filter.
    pub fn load_factor(&self) -> f64 {
        self.main.engine.used as f64 / self.n_slots() as f64
    }

    pub fn size_in_bytes(&self) -> usize {
        self.filters().map(|f| f.engine.table.size_in_bytes()).sum()
    }

    /// Statistics of the main filter.
    pub fn stats(&self) -> FilterStats {
        self.main.engine.stats()
    }

    /// Decoded boxes of each filter, main first. Fingerprints are the raw
    /// fluid values.
    pub fn boxes(&self) -> Vec<Vec<KeepsakeBox>> {
        self.filters().map(|f| f.engine.boxes()).collect()
    }

    /// Each filter of the chain serialized on its own, main first.
    pub fn filter_blobs(&self) -> Vec<Vec<u8>> {
        self.filters()
            .map(|f| {
                let mut out = Vec::new();
                f.write_to(&mut out, &self.params);
                out
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHAIN_MAGIC);
        out.extend_from_slice(&CHAIN_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.n_slots as u64).to_le_bytes());
        out.extend_from_slice(&(self.filters().count() as u32).to_le_bytes());
        for f in self.filters() {
            f.write_to(&mut out, &self.params);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != CHAIN_MAGIC {
            return Err(Error::Format("bad expandable filter magic".into()));
        }
        let version = r.u32()?;
        if version != CHAIN_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let n0 = r.u64()? as usize;
        let count = r.u32()?;
        if count == 0 {
            return Err(Error::Format("missing main filter".into()));
        }
        let base_bits = n0.trailing_zeros();
        let (main, p) = FluidFilter::read_from(&mut r, base_bits)?;
        let params = FilterParams { n_slots: n0, ..p };
        params.validate(1).map_err(|e| Error::Format(e.to_string()))?;
        let mut chain = Vec::new();
        for _ in 1..count {
            let (f, q) = FluidFilter::read_from(&mut r, base_bits)?;
            if (q.fingerprint_bits, q.memento_bits, q.seed) != (p.fingerprint_bits, p.memento_bits, p.seed) {
                return Err(Error::Format("secondary parameters differ from main".into()));
            }
            chain.push(f);
        }
        if !r.rest().is_empty() {
            return Err(Error::Format("trailing bytes".into()));
        }
        Ok(ExpandableMementoFilter { params, main, chain })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

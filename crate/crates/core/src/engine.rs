//! Box-level operations on an RSQF table, shared by the fixed and fluid
//! fingerprint filters.
//!
//! Mutations are split into a read-only *plan* step that decodes the
//! affected box and computes its new encoding, and an *apply* step that
//! splices the new slots into the run. The concurrent wrapper runs the two
//! steps under region locks with a capacity reservation in between.

use std::collections::BTreeMap;

use crate::codec::{box_has_in_range, box_mementos, encode_box, BoxHeader, Layout, RunBoxes};
use crate::error::{Error, Result};
use crate::keyspace::{low_mask, split_key};
use crate::params::capacity;
use crate::rsqf::{RsqfTable, RunWriter, View};

/// Ranges spanning more interior partitions than this are answered
/// positive without probing.
pub const MAX_INTERIOR_PARTITIONS: u64 = 1 << 20;

/// One decoded keepsake box.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct KeepsakeBox {
    pub canonical_slot: usize,
    /// Stored fingerprint field (fluid value in expandable mode).
    pub fingerprint: u64,
    /// Sorted memento multiset.
    pub mementos: Vec<u64>,
}

/// Replacement of one box (or insertion of a new one) inside a run.
#[derive(Clone, Debug)]
pub(crate) struct Splice {
    canonical: usize,
    /// Start of the replaced box, or of the insertion point for a new box.
    /// `None` when the run does not exist yet.
    at: Option<usize>,
    old_len: usize,
    slots: Vec<u64>,
    pub keys_delta: isize,
}

impl Splice {
    pub fn slots_delta(&self) -> isize {
        self.slots.len() as isize - self.old_len as isize
    }
}

/// Fails with `RegionConflict` when the view read outside its window,
/// since any other result may be based on garbage.
#[inline]
pub(crate) fn checked<T>(view: &View, r: Result<T>) -> Result<T> {
    if view.faulted() {
        Err(Error::RegionConflict)
    } else {
        r
    }
}

fn merge_sorted(a: &[u64], b: &[u64]) -> Vec<u64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Plans adding the sorted mementos `add` to the box with fingerprint
/// field `fp` in `canonical`'s run, creating the box if needed.
pub(crate) fn plan_add(view: &View, layout: &Layout, canonical: usize, fp: u64, add: &[u64]) -> Result<Splice> {
    debug_assert!(add.windows(2).all(|w| w[0] <= w[1]));
    let run = view.locate_run(canonical);
    let run = checked(view, Ok(run))?;
    let Some((start, end)) = run else {
        return Ok(Splice {
            canonical,
            at: None,
            old_len: 0,
            slots: encode_box(layout, fp, add),
            keys_delta: add.len() as isize,
        });
    };
    let mut pos = start;
    for hdr in RunBoxes::new(view, *layout, start, end) {
        let hdr = checked(view, hdr)?;
        if hdr.fp == fp {
            let merged = merge_sorted(&box_mementos(view, layout, &hdr), add);
            return checked(
                view,
                Ok(Splice {
                    canonical,
                    at: Some(hdr.pos),
                    old_len: hdr.len,
                    slots: encode_box(layout, fp, &merged),
                    keys_delta: add.len() as isize,
                }),
            );
        }
        if hdr.fp > fp {
            break;
        }
        pos = hdr.end();
    }
    checked(
        view,
        Ok(Splice {
            canonical,
            at: Some(pos),
            old_len: 0,
            slots: encode_box(layout, fp, add),
            keys_delta: add.len() as isize,
        }),
    )
}

/// Plans removing one copy of `memento` from the box `hdr`.
pub(crate) fn plan_remove(view: &View, layout: &Layout, canonical: usize, hdr: &BoxHeader, memento: u64) -> Result<Splice> {
    let mut ms = box_mementos(view, layout, hdr);
    let idx = ms.binary_search(&memento).map_err(|_| Error::NotFound)?;
    ms.remove(idx);
    checked(
        view,
        Ok(Splice {
            canonical,
            at: Some(hdr.pos),
            old_len: hdr.len,
            slots: encode_box(layout, hdr.fp, &ms),
            keys_delta: -1,
        }),
    )
}

/// Applies a planned splice. Fails before writing anything if the table
/// lacks free slots or the view's window is too small.
pub(crate) fn apply(view: &View, s: &Splice) -> Result<()> {
    let new_len = s.slots.len();
    let base = if s.old_len < new_len {
        let grow = new_len - s.old_len;
        match s.at {
            None => {
                let start = view.new_run_position(s.canonical);
                checked(view, Ok(()))?;
                view.ensure_free(start, grow)?;
                let first = view.insert_empty(s.canonical, None)?;
                for k in 1..grow {
                    view.insert_empty(s.canonical, Some(first + k))?;
                }
                first
            }
            Some(at) => {
                view.ensure_free(at + s.old_len, grow)?;
                for k in 0..grow {
                    view.insert_empty(s.canonical, Some(at + s.old_len + k))?;
                }
                at
            }
        }
    } else {
        let at = s.at.expect("shrinking splice without a box");
        for _ in new_len..s.old_len {
            view.remove(s.canonical, at + new_len)?;
        }
        at
    };
    for (i, &v) in s.slots.iter().enumerate() {
        view.set_slot(base + i, v);
    }
    Ok(())
}

/// Selects which boxes of a run belong to a query hash.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Matcher {
    /// Fixed-length fingerprint equality. Boxes are sorted, so the scan
    /// stops at the first larger fingerprint.
    Exact(u64),
    /// Fluid fingerprints: a box matches when its payload equals the low
    /// payload-length bits of `hash_hi` (the hash above the address bits).
    Fluid { hash_hi: u64 },
}

/// Payload length of a fluid value (position of its guard bit).
#[inline]
pub(crate) fn fluid_len(fluid: u64) -> u32 {
    debug_assert!(fluid != 0);
    63 - fluid.leading_zeros()
}

#[inline]
pub(crate) fn fluid_payload(fluid: u64) -> u64 {
    fluid & low_mask(fluid_len(fluid))
}

impl Matcher {
    #[inline]
    pub fn matches(&self, fp: u64) -> bool {
        match *self {
            Matcher::Exact(t) => fp == t,
            Matcher::Fluid { hash_hi } => {
                let len = fluid_len(fp);
                fluid_payload(fp) == hash_hi & low_mask(len)
            }
        }
    }

    #[inline]
    fn past(&self, fp: u64) -> bool {
        matches!(*self, Matcher::Exact(t) if fp > t)
    }
}

/// Visits each box in `canonical`'s run matched by `matcher` until `visit`
/// returns true. Returns whether it did.
pub(crate) fn any_matching_box(
    view: &View,
    layout: &Layout,
    canonical: usize,
    matcher: Matcher,
    mut visit: impl FnMut(&BoxHeader) -> bool,
) -> Result<bool> {
    let run = checked(view, Ok(view.locate_run(canonical)))?;
    let Some((start, end)) = run else {
        return Ok(false);
    };
    for hdr in RunBoxes::new(view, *layout, start, end) {
        let hdr = checked(view, hdr)?;
        if matcher.matches(hdr.fp) {
            if visit(&hdr) {
                return checked(view, Ok(true));
            }
            if let Matcher::Exact(_) = matcher {
                break;
            }
        } else if matcher.past(hdr.fp) {
            break;
        }
    }
    checked(view, Ok(false))
}

/// Whether a matching box holds a memento in `[lo, hi]`.
pub(crate) fn partition_has(view: &View, layout: &Layout, canonical: usize, matcher: Matcher, lo: u64, hi: u64) -> Result<bool> {
    any_matching_box(view, layout, canonical, matcher, |h| box_has_in_range(view, layout, h, lo, hi))
}

/// Splits `[ql, qr]` into partition checks.
///
/// `probe(prefix, lo, hi)` answers whether partition `prefix` may hold a
/// memento in `[lo, hi]`. The end partitions are checked against the
/// query's mementos, interior partitions against their full memento range.
/// Returns the answer and the number of partitions probed.
pub(crate) fn decompose_range(
    memento_bits: u32,
    ql: u64,
    qr: u64,
    mut probe: impl FnMut(u64, u64, u64) -> Result<bool>,
) -> Result<(bool, usize)> {
    assert!(ql <= qr, "empty range [{ql}, {qr}]");
    let left = split_key(ql, memento_bits);
    let right = split_key(qr, memento_bits);
    let top = low_mask(memento_bits);
    if left.prefix == right.prefix {
        return Ok((probe(left.prefix, left.memento, right.memento)?, 1));
    }
    if probe(left.prefix, left.memento, top)? {
        return Ok((true, 1));
    }
    let interior = right.prefix - left.prefix - 1;
    if interior > MAX_INTERIOR_PARTITIONS {
        return Ok((true, 1));
    }
    let mut probes = 1;
    for p in left.prefix + 1..right.prefix {
        probes += 1;
        if probe(p, 0, top)? {
            return Ok((true, probes));
        }
    }
    Ok((probe(right.prefix, 0, right.memento)?, probes + 1))
}

/// Summary statistics of a filter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilterStats {
    pub n_slots: usize,
    pub used_slots: usize,
    pub n_keys: usize,
    pub n_boxes: usize,
    pub n_runs: usize,
    pub load_factor: f64,
    pub size_in_bytes: usize,
    /// Allocated bits per stored key (infinite for an empty filter).
    pub bits_per_key: f64,
    /// Mean keys per keepsake box. Estimates the average partition size
    /// (collisions between partitions merge their boxes).
    pub avg_box_size: f64,
    pub mean_cluster_length: f64,
    pub max_cluster_length: usize,
    /// Cluster length in slots -> number of clusters.
    pub cluster_lengths: BTreeMap<usize, usize>,
    /// Mementos per box -> number of boxes.
    pub box_sizes: BTreeMap<usize, usize>,
    /// Slots per box -> number of boxes.
    pub box_slot_spans: BTreeMap<usize, usize>,
}

/// A table plus the counters every filter keeps.
#[derive(Clone, Debug)]
pub(crate) struct Engine {
    pub table: RsqfTable,
    pub layout: Layout,
    pub max_load: f64,
    pub used: usize,
    pub keys: usize,
}

impl Engine {
    pub fn new(n_slots: usize, layout: Layout, max_load: f64, seed: u64) -> Result<Self> {
        Ok(Engine {
            table: RsqfTable::new(n_slots, layout.width(), seed)?,
            layout,
            max_load,
            used: 0,
            keys: 0,
        })
    }

    /// Rebuilds counters from a table loaded from bytes, validating every
    /// box on the way.
    pub fn from_table(table: RsqfTable, layout: Layout, max_load: f64) -> Result<Self> {
        if table.slot_width() != layout.width() {
            return Err(Error::Format(format!(
                "slot width {} does not match parameters ({})",
                table.slot_width(),
                layout.width()
            )));
        }
        let mut e = Engine { table, layout, max_load, used: 0, keys: 0 };
        e.used = e.table.count_used();
        let mut keys = 0;
        e.for_each_box(|_, hdr| {
            keys += hdr.count();
            Ok(())
        })?;
        e.keys = keys;
        Ok(e)
    }

    pub fn n_slots(&self) -> usize {
        self.table.n_slots()
    }

    pub fn address_bits(&self) -> u32 {
        self.n_slots().trailing_zeros()
    }

    pub fn capacity(&self) -> usize {
        capacity(self.n_slots(), self.max_load)
    }

    pub fn add(&mut self, canonical: usize, fp: u64, add: &[u64]) -> Result<()> {
        let view = self.table.view_mut();
        let splice = plan_add(&view, &self.layout, canonical, fp, add)?;
        let delta = splice.slots_delta();
        if delta > 0 && self.used + delta as usize > capacity(view.geometry().n_slots, self.max_load) {
            return Err(Error::CapacityExceeded);
        }
        apply(&view, &splice)?;
        self.used = (self.used as isize + delta) as usize;
        self.keys = (self.keys as isize + splice.keys_delta) as usize;
        Ok(())
    }

    pub fn remove_from(&mut self, canonical: usize, hdr: &BoxHeader, memento: u64) -> Result<()> {
        let view = self.table.view_mut();
        let splice = plan_remove(&view, &self.layout, canonical, hdr, memento)?;
        apply(&view, &splice)?;
        self.used = (self.used as isize + splice.slots_delta()) as usize;
        self.keys -= 1;
        Ok(())
    }

    /// First matching box (in run order) that contains `memento`.
    pub fn find_box_with(&self, canonical: usize, matcher: Matcher, memento: u64) -> Option<BoxHeader> {
        let view = self.table.view();
        let mut found = None;
        any_matching_box(&view, &self.layout, canonical, matcher, |h| {
            if box_has_in_range(&view, &self.layout, h, memento, memento) {
                found = Some(*h);
                true
            } else {
                false
            }
        })
        .expect("corrupt filter");
        found
    }

    /// All matching boxes that contain `memento`.
    pub fn boxes_with(&self, canonical: usize, matcher: Matcher, memento: u64) -> Vec<BoxHeader> {
        let view = self.table.view();
        let mut out = Vec::new();
        any_matching_box(&view, &self.layout, canonical, matcher, |h| {
            if box_has_in_range(&view, &self.layout, h, memento, memento) {
                out.push(*h);
            }
            false
        })
        .expect("corrupt filter");
        out
    }

    pub fn partition_has(&self, canonical: usize, matcher: Matcher, lo: u64, hi: u64) -> bool {
        let view = self.table.view();
        partition_has(&view, &self.layout, canonical, matcher, lo, hi).expect("corrupt filter")
    }

    pub fn for_each_box(&self, mut f: impl FnMut(usize, &BoxHeader) -> Result<()>) -> Result<()> {
        let view = self.table.view();
        for (canonical, start, end) in view.runs() {
            for hdr in RunBoxes::new(&view, self.layout, start, end) {
                f(canonical, &hdr?)?;
            }
        }
        Ok(())
    }

    pub fn boxes(&self) -> Vec<KeepsakeBox> {
        let view = self.table.view();
        let mut out = Vec::new();
        self.for_each_box(|canonical, hdr| {
            out.push(KeepsakeBox {
                canonical_slot: canonical,
                fingerprint: hdr.fp,
                mementos: box_mementos(&view, &self.layout, hdr),
            });
            Ok(())
        })
        .expect("corrupt filter");
        out
    }

    /// Builds a table from boxes sorted by `(canonical_slot, fingerprint)`;
    /// equal neighbours are merged.
    pub fn from_boxes(
        n_slots: usize,
        layout: Layout,
        max_load: f64,
        seed: u64,
        boxes: impl IntoIterator<Item = KeepsakeBox>,
    ) -> Result<Self> {
        let mut engine = Engine::new(n_slots, layout, max_load, seed)?;
        let cap = engine.capacity();
        let view = engine.table.view_mut();
        let mut writer = RunWriter::new(&view);
        let mut run: Vec<u64> = Vec::new();
        let mut run_slot = None;
        let mut pending: Option<KeepsakeBox> = None;
        let mut keys = 0;

        let flush_box = |b: KeepsakeBox, run: &mut Vec<u64>, run_slot: &mut Option<usize>, writer: &mut RunWriter| -> Result<()> {
            if *run_slot != Some(b.canonical_slot) {
                if let Some(s) = *run_slot {
                    writer.push_run(s, run)?;
                }
                run.clear();
                *run_slot = Some(b.canonical_slot);
            }
            run.extend(encode_box(&layout, b.fingerprint, &b.mementos));
            if writer.used + run.len() > cap {
                return Err(Error::CapacityExceeded);
            }
            Ok(())
        };

        for b in boxes {
            keys += b.mementos.len();
            match pending.as_mut() {
                Some(p) if p.canonical_slot == b.canonical_slot && p.fingerprint == b.fingerprint => {
                    p.mementos = merge_sorted(&p.mementos, &b.mementos);
                }
                Some(p) => {
                    assert!(
                        (p.canonical_slot, p.fingerprint) < (b.canonical_slot, b.fingerprint),
                        "boxes out of order"
                    );
                    let done = std::mem::replace(p, b);
                    flush_box(done, &mut run, &mut run_slot, &mut writer)?;
                }
                None => pending = Some(b),
            }
        }
        if let Some(p) = pending {
            flush_box(p, &mut run, &mut run_slot, &mut writer)?;
        }
        if let Some(s) = run_slot {
            writer.push_run(s, &run)?;
        }
        let used = writer.finish();
        drop(view);
        engine.used = used;
        engine.keys = keys;
        Ok(engine)
    }

    pub fn stats(&self) -> FilterStats {
        let mut s = FilterStats {
            n_slots: self.n_slots(),
            used_slots: self.used,
            n_keys: self.keys,
            size_in_bytes: self.table.size_in_bytes(),
            ..Default::default()
        };
        s.load_factor = self.used as f64 / self.n_slots() as f64;
        s.bits_per_key = if self.keys == 0 {
            f64::INFINITY
        } else {
            s.size_in_bytes as f64 * 8.0 / self.keys as f64
        };
        self.for_each_box(|_, hdr| {
            s.n_boxes += 1;
            *s.box_sizes.entry(hdr.count()).or_default() += 1;
            *s.box_slot_spans.entry(hdr.len).or_default() += 1;
            Ok(())
        })
        .expect("corrupt filter");
        s.n_runs = self.table.runs().len();
        let clusters = self.table.clusters();
        for &(_, len) in &clusters {
            *s.cluster_lengths.entry(len).or_default() += 1;
            s.max_cluster_length = s.max_cluster_length.max(len);
        }
        if !clusters.is_empty() {
            s.mean_cluster_length = clusters.iter().map(|c| c.1).sum::<usize>() as f64 / clusters.len() as f64;
        }
        if s.n_boxes > 0 {
            s.avg_box_size = self.keys as f64 / s.n_boxes as f64;
        }
        s
    }
}

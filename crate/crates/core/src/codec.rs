//! Keepsake box encoding.
//!
//! All mementos of one partition that share a canonical slot and a
//! fingerprint live in one *keepsake box*: a run of consecutive slots, each
//! holding `(fingerprint << r) | memento`. Mementos are kept sorted.
//!
//! * one memento: `<fp, m>`
//! * two: `<fp, m1><fp, m2>`
//! * three or more: `<fp, min><0, max>` followed by a counter holding
//!   `count - 2` and then the remaining mementos, all bit-packed MSB first
//!   across the full slot values and zero padded at the end.
//!
//! A zero fingerprint in the second slot marks the counted form, so in
//! fixed-fingerprint mode boxes with fingerprint zero use one `<0, m>` slot
//! per memento instead. Fluid fingerprints always carry a leading one bit
//! and never hit that case.

use crate::error::{Error, Result};
use crate::keyspace::low_mask;
use crate::rsqf::View;

/// Boxes with at most this many packed mementos are scanned linearly.
const LINEAR_SCAN_MAX: usize = 8;

/// How slot values split into fingerprint and memento fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    /// Width of the fingerprint field (for fluid layouts this includes the
    /// length marker bit).
    pub fp_bits: u32,
    pub memento_bits: u32,
    pub fluid: bool,
}

impl Layout {
    #[inline]
    pub fn width(&self) -> u32 {
        self.fp_bits + self.memento_bits
    }

    #[inline]
    pub fn slot_value(&self, fp: u64, memento: u64) -> u64 {
        (fp << self.memento_bits) | memento
    }

    #[inline]
    pub fn split(&self, value: u64) -> (u64, u64) {
        (value >> self.memento_bits, value & low_mask(self.memento_bits))
    }

    #[inline]
    pub fn max_memento(&self) -> u64 {
        low_mask(self.memento_bits)
    }

    /// Whether fingerprint zero uses the one-slot-per-memento form.
    #[inline]
    pub fn zero_fp_singletons(&self, fp: u64) -> bool {
        !self.fluid && fp == 0
    }

    /// Width of one counter chunk. One-bit chunks would leave no digits
    /// below the escape value, so they are widened to two bits.
    #[inline]
    pub fn counter_chunk_bits(&self) -> u32 {
        self.memento_bits.max(2)
    }
}

/// Random access to slot values.
pub trait SlotSource {
    fn slot_at(&self, index: usize) -> u64;
}

impl SlotSource for [u64] {
    fn slot_at(&self, index: usize) -> u64 {
        self[index]
    }
}

impl SlotSource for Vec<u64> {
    fn slot_at(&self, index: usize) -> u64 {
        self[index]
    }
}

impl SlotSource for View<'_> {
    fn slot_at(&self, index: usize) -> u64 {
        self.slot(index)
    }
}

/// Counter chunks for `value` with chunk width `chunk_bits`.
///
/// Values below the escape `B = 2^chunk_bits - 1` take a single chunk.
/// Larger values take `c` escape chunks followed by their `c + 1` base-`B`
/// digits, most significant first.
pub fn encode_counter(value: u64, chunk_bits: u32) -> Vec<u64> {
    let escape = low_mask(chunk_bits);
    if value < escape {
        return vec![value];
    }
    let mut digits = Vec::new();
    let mut v = value;
    while v > 0 {
        digits.push(v % escape);
        v /= escape;
    }
    digits.reverse();
    let mut out = vec![escape; digits.len() - 1];
    out.extend(digits);
    out
}

/// Decodes a counter from a chunk stream, returning `(value, chunks_read)`.
pub fn decode_counter(mut next: impl FnMut() -> u64, chunk_bits: u32) -> (u64, usize) {
    let escape = low_mask(chunk_bits);
    let first = next();
    if first < escape {
        return (first, 1);
    }
    let mut escapes = 1;
    let mut chunk = next();
    while chunk == escape {
        escapes += 1;
        chunk = next();
    }
    let mut value = chunk;
    for _ in 0..escapes {
        value = value.wrapping_mul(escape).wrapping_add(next());
    }
    (value, 2 * escapes + 1)
}

/// MSB-first packing of variable-width fields into `width`-bit slots.
pub struct BitWriter {
    width: u32,
    slots: Vec<u64>,
    current: u64,
    filled: u32,
}

impl BitWriter {
    pub fn new(width: u32) -> Self {
        BitWriter {
            width,
            slots: Vec::new(),
            current: 0,
            filled: 0,
        }
    }

    pub fn push(&mut self, value: u64, mut bits: u32) {
        while bits > 0 {
            let take = (self.width - self.filled).min(bits);
            let chunk = (value >> (bits - take)) & low_mask(take);
            self.current = if take == 64 { chunk } else { (self.current << take) | chunk };
            self.filled += take;
            bits -= take;
            if self.filled == self.width {
                self.slots.push(self.current);
                self.current = 0;
                self.filled = 0;
            }
        }
    }

    pub fn finish(mut self) -> Vec<u64> {
        if self.filled > 0 {
            self.slots.push(self.current << (self.width - self.filled));
        }
        self.slots
    }
}

/// Reads `bits` bits at stream offset `offset` of the MSB-first stream that
/// starts at slot `base`.
pub fn read_bits<S: SlotSource + ?Sized>(src: &S, width: u32, base: usize, offset: u64, bits: u32) -> u64 {
    let mut out = 0u64;
    let mut pos = offset;
    let mut left = bits;
    while left > 0 {
        let slot = base + (pos / width as u64) as usize;
        let within = (pos % width as u64) as u32;
        let avail = width - within;
        let take = avail.min(left);
        let v = (src.slot_at(slot) >> (avail - take)) & low_mask(take);
        out = if take == 64 { v } else { (out << take) | v };
        left -= take;
        pos += take as u64;
    }
    out
}

/// Slot values for a box holding `mementos` (sorted ascending).
pub fn encode_box(layout: &Layout, fp: u64, mementos: &[u64]) -> Vec<u64> {
    debug_assert!(mementos.windows(2).all(|w| w[0] <= w[1]));
    let slot = |m: u64| layout.slot_value(fp, m);
    if layout.zero_fp_singletons(fp) {
        return mementos.iter().map(|&m| slot(m)).collect();
    }
    match mementos {
        [] => Vec::new(),
        [a] => vec![slot(*a)],
        [a, b] => vec![slot(*a), slot(*b)],
        [first, inner @ .., last] => {
            let mut out = vec![slot(*first), layout.slot_value(0, *last)];
            let mut w = BitWriter::new(layout.width());
            let chunk_bits = layout.counter_chunk_bits();
            for c in encode_counter(inner.len() as u64, chunk_bits) {
                w.push(c, chunk_bits);
            }
            for &m in inner {
                w.push(m, layout.memento_bits);
            }
            out.extend(w.finish());
            out
        }
    }
}

/// Number of slots [`encode_box`] uses for `count` mementos.
pub fn box_slots(layout: &Layout, fp: u64, count: usize) -> usize {
    if layout.zero_fp_singletons(fp) || count <= 2 {
        return count;
    }
    let inner = (count - 2) as u64;
    let counter_bits = encode_counter(inner, layout.counter_chunk_bits()).len() as u64 * layout.counter_chunk_bits() as u64;
    let bits = counter_bits + inner * layout.memento_bits as u64;
    2 + bits.div_ceil(layout.width() as u64) as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoxKind {
    One(u64),
    Two(u64, u64),
    /// Counted form: `inner` packed mementos follow `counter_bits` bits of
    /// counter in the stream starting two slots after the box start.
    Many {
        min: u64,
        max: u64,
        inner: usize,
        counter_bits: u32,
    },
    /// Fingerprint-zero singletons.
    Singletons { count: usize },
}

/// Location and summary of one decoded box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoxHeader {
    pub fp: u64,
    pub pos: usize,
    pub len: usize,
    pub kind: BoxKind,
}

impl BoxHeader {
    pub fn count(&self) -> usize {
        match self.kind {
            BoxKind::One(_) => 1,
            BoxKind::Two(..) => 2,
            BoxKind::Many { inner, .. } => inner + 2,
            BoxKind::Singletons { count } => count,
        }
    }

    pub fn end(&self) -> usize {
        self.pos + self.len
    }
}

/// Decodes the box starting at `pos` in a run that ends at `run_end`.
pub fn read_box<S: SlotSource + ?Sized>(src: &S, layout: &Layout, pos: usize, run_end: usize) -> Result<BoxHeader> {
    let (fp, m1) = layout.split(src.slot_at(pos));
    if layout.zero_fp_singletons(fp) {
        let mut end = pos;
        while end < run_end && layout.split(src.slot_at(end + 1)).0 == 0 {
            end += 1;
        }
        let count = end - pos + 1;
        return Ok(BoxHeader { fp, pos, len: count, kind: BoxKind::Singletons { count } });
    }
    if fp == 0 {
        return Err(Error::Malformed(pos));
    }
    let one = BoxHeader { fp, pos, len: 1, kind: BoxKind::One(m1) };
    if pos == run_end {
        return Ok(one);
    }
    let (fp2, m2) = layout.split(src.slot_at(pos + 1));
    if fp2 == fp {
        return Ok(BoxHeader { fp, pos, len: 2, kind: BoxKind::Two(m1, m2) });
    }
    if fp2 != 0 {
        // The next box must carry a larger fingerprint.
        return if fp2 > fp { Ok(one) } else { Err(Error::Malformed(pos + 1)) };
    }
    if pos + 2 > run_end {
        return Err(Error::Malformed(pos));
    }
    let width = layout.width();
    let chunk_bits = layout.counter_chunk_bits();
    let mut offset = 0u64;
    let (inner, chunks) = decode_counter(
        || {
            let c = read_bits(src, width, pos + 2, offset, chunk_bits);
            offset += chunk_bits as u64;
            c
        },
        chunk_bits,
    );
    if inner == 0 || inner > (run_end - pos) as u64 * width as u64 {
        return Err(Error::Malformed(pos));
    }
    let counter_bits = chunks as u32 * chunk_bits;
    let bits = counter_bits as u64 + inner * layout.memento_bits as u64;
    let len = 2 + bits.div_ceil(width as u64) as usize;
    if pos + len - 1 > run_end {
        return Err(Error::Malformed(pos));
    }
    Ok(BoxHeader {
        fp,
        pos,
        len,
        kind: BoxKind::Many {
            min: m1,
            max: m2,
            inner: inner as usize,
            counter_bits,
        },
    })
}

/// The `i`-th memento of a box in sorted order.
pub fn memento_at<S: SlotSource + ?Sized>(src: &S, layout: &Layout, hdr: &BoxHeader, i: usize) -> u64 {
    match hdr.kind {
        BoxKind::One(a) => a,
        BoxKind::Two(a, b) => [a, b][i],
        BoxKind::Singletons { .. } => layout.split(src.slot_at(hdr.pos + i)).1,
        BoxKind::Many { min, max, inner, counter_bits } => {
            if i == 0 {
                min
            } else if i == inner + 1 {
                max
            } else {
                let off = counter_bits as u64 + (i as u64 - 1) * layout.memento_bits as u64;
                read_bits(src, layout.width(), hdr.pos + 2, off, layout.memento_bits)
            }
        }
    }
}

/// All mementos of a box, sorted.
pub fn box_mementos<S: SlotSource + ?Sized>(src: &S, layout: &Layout, hdr: &BoxHeader) -> Vec<u64> {
    match hdr.kind {
        BoxKind::Many { min, max, inner, counter_bits } => {
            let mut out = Vec::with_capacity(inner + 2);
            out.push(min);
            let r = layout.memento_bits;
            let mut off = counter_bits as u64;
            for _ in 0..inner {
                out.push(read_bits(src, layout.width(), hdr.pos + 2, off, r));
                off += r as u64;
            }
            out.push(max);
            out
        }
        _ => (0..hdr.count()).map(|i| memento_at(src, layout, hdr, i)).collect(),
    }
}

/// Whether the box holds a memento in `[lo, hi]`.
pub fn box_has_in_range<S: SlotSource + ?Sized>(src: &S, layout: &Layout, hdr: &BoxHeader, lo: u64, hi: u64) -> bool {
    let count = hdr.count();
    let min = memento_at(src, layout, hdr, 0);
    let max = memento_at(src, layout, hdr, count - 1);
    if hi < min || lo > max {
        return false;
    }
    if lo <= min || hi >= max {
        return true;
    }
    // Both ends fall strictly between min and max: find the first memento
    // at or above `lo` among the interior ones.
    let (mut a, mut b) = (1usize, count - 1);
    if b - a <= LINEAR_SCAN_MAX {
        return (a..b).map(|i| memento_at(src, layout, hdr, i)).any(|m| m >= lo && m <= hi);
    }
    while a < b {
        let mid = a + (b - a) / 2;
        if memento_at(src, layout, hdr, mid) < lo {
            a = mid + 1;
        } else {
            b = mid;
        }
    }
    memento_at(src, layout, hdr, a) <= hi
}

#[inline]
pub fn box_contains<S: SlotSource + ?Sized>(src: &S, layout: &Layout, hdr: &BoxHeader, m: u64) -> bool {
    box_has_in_range(src, layout, hdr, m, m)
}

/// Iterates the boxes of the run `[start, end]`.
pub struct RunBoxes<'s, S: SlotSource + ?Sized> {
    src: &'s S,
    layout: Layout,
    pos: usize,
    end: usize,
}

impl<'s, S: SlotSource + ?Sized> RunBoxes<'s, S> {
    pub fn new(src: &'s S, layout: Layout, start: usize, end: usize) -> Self {
        RunBoxes { src, layout, pos: start, end }
    }
}

impl<S: SlotSource + ?Sized> Iterator for RunBoxes<'_, S> {
    type Item = Result<BoxHeader>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos > self.end {
            return None;
        }
        let hdr = read_box(self.src, &self.layout, self.pos, self.end);
        match &hdr {
            Ok(h) => self.pos = h.end(),
            Err(_) => self.pos = self.end + 1,
        }
        Some(hdr)
    }
}

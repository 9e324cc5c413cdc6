//! Rank-and-select quotient filter table.
//!
//! Slots are grouped into blocks of 64. Each block is stored as
//! `3 + slot_width` little 64-bit words in one contiguous allocation:
//!
//! ```text
//! [occupieds][runends][offset][payload: 64 slots * slot_width bits]
//! ```
//!
//! `occupieds[i]` is set when some stored entry has canonical slot `i`;
//! `runends[i]` is set on the last slot of every run. A block's `offset` is
//! the number of its slots (counting from its first) that hold entries whose
//! canonical slot lies in an earlier block.
//!
//! All mutation goes through [`View`], a window over the raw words. A view
//! that covers the whole table is used for ordinary single-threaded access;
//! the concurrent wrapper builds views restricted to the regions it has
//! locked, and any read outside that window raises a fault so the
//! operation can be retried with wider access before it writes anything.

use std::cell::Cell;
use std::marker::PhantomData;

use crate::bits::{rank, select};
use crate::error::{Error, Result};
use crate::keyspace::low_mask;

pub const BLOCK_SLOTS: usize = 64;

const OCCUPIEDS: usize = 0;
const RUNENDS: usize = 1;
const OFFSET: usize = 2;
const PAYLOAD: usize = 3;

const MAGIC: &[u8; 4] = b"RSQF";
const VERSION: u32 = 1;

/// Shape of a table: slot count, slot width and the derived block stride.
///
/// Canonical slots range over `0..n_slots`. Behind them sit extra spill
/// slots (at least 64, about `10 * sqrt(n_slots)`) that only receive
/// entries shifted right out of the last clusters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub n_slots: usize,
    /// Physical slot count, spill slots included. A multiple of 64.
    pub total_slots: usize,
    pub slot_width: u32,
    pub n_blocks: usize,
    stride: usize,
}

impl Geometry {
    pub fn new(n_slots: usize, slot_width: u32) -> Result<Self> {
        if n_slots == 0 {
            return Err(Error::InvalidParams("table needs at least one slot".into()));
        }
        if !(1..=64).contains(&slot_width) {
            return Err(Error::InvalidParams(format!(
                "slot width {slot_width} outside 1..=64"
            )));
        }
        let spill = ((n_slots as f64).sqrt() * 10.0).ceil() as usize;
        let n_blocks = (n_slots + spill.max(BLOCK_SLOTS)).div_ceil(BLOCK_SLOTS);
        Ok(Geometry {
            n_slots,
            total_slots: n_blocks * BLOCK_SLOTS,
            slot_width,
            n_blocks,
            stride: PAYLOAD + slot_width as usize,
        })
    }

    pub fn n_words(&self) -> usize {
        self.n_blocks * self.stride
    }

    /// Bits of allocation per slot, metadata included.
    pub fn bits_per_slot(&self) -> f64 {
        (self.stride * 64) as f64 / BLOCK_SLOTS as f64
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct RsqfTable {
    geom: Geometry,
    seed: u64,
    words: Vec<u64>,
}

impl std::fmt::Debug for RsqfTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RsqfTable")
            .field("n_slots", &self.geom.n_slots)
            .field("slot_width", &self.geom.slot_width)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

impl RsqfTable {
    pub fn new(n_slots: usize, slot_width: u32, seed: u64) -> Result<Self> {
        let geom = Geometry::new(n_slots, slot_width)?;
        Ok(RsqfTable {
            geom,
            seed,
            words: vec![0; geom.n_words()],
        })
    }

    pub fn geometry(&self) -> Geometry {
        self.geom
    }

    pub fn n_slots(&self) -> usize {
        self.geom.n_slots
    }

    /// Physical slots including the spill area.
    pub fn total_slots(&self) -> usize {
        self.geom.total_slots
    }

    pub fn slot_width(&self) -> u32 {
        self.geom.slot_width
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn size_in_bytes(&self) -> usize {
        self.words.len() * 8
    }

    pub(crate) fn view(&self) -> View<'_> {
        View {
            ptr: self.words.as_ptr() as *mut u64,
            geom: self.geom,
            lo: 0,
            hi: self.geom.n_blocks * BLOCK_SLOTS,
            writable: false,
            fault: Cell::new(false),
            _marker: PhantomData,
        }
    }

    pub(crate) fn view_mut(&mut self) -> View<'_> {
        View {
            ptr: self.words.as_mut_ptr(),
            geom: self.geom,
            lo: 0,
            hi: self.geom.n_blocks * BLOCK_SLOTS,
            writable: true,
            fault: Cell::new(false),
            _marker: PhantomData,
        }
    }

    pub(crate) fn raw_ptr(&mut self) -> *mut u64 {
        self.words.as_mut_ptr()
    }

    pub fn is_occupied(&self, slot: usize) -> bool {
        self.view().occupied(slot)
    }

    pub fn is_runend(&self, slot: usize) -> bool {
        self.view().runend(slot)
    }

    pub fn slot(&self, slot: usize) -> u64 {
        self.view().slot(slot)
    }

    pub fn offset(&self, block: usize) -> usize {
        self.view().offset(block)
    }

    /// `[start, end]` of the run for canonical slot `slot`, if one exists.
    pub fn locate_run(&self, slot: usize) -> Option<(usize, usize)> {
        assert!(slot < self.geom.n_slots);
        self.view().locate_run(slot)
    }

    /// Inserts `value` as a new slot of `canonical`'s run.
    ///
    /// With `position == None` the slot is appended at the end of the run,
    /// creating the run if needed. Otherwise `position` must lie in
    /// `[run_start, run_end + 1]`. Returns the physical position written.
    pub fn insert_slot(&mut self, canonical: usize, position: Option<usize>, value: u64) -> Result<usize> {
        assert!(canonical < self.geom.n_slots);
        let view = self.view_mut();
        let position = match position {
            Some(p) => Some(p),
            None => view.locate_run(canonical).map(|(_, end)| end + 1),
        };
        let at = view.insert_empty(canonical, position)?;
        view.set_slot(at, value);
        Ok(at)
    }

    /// Removes the slot at `position`, which must belong to `canonical`'s run.
    pub fn delete_slot(&mut self, canonical: usize, position: usize) -> Result<()> {
        assert!(canonical < self.geom.n_slots);
        self.view_mut().remove(canonical, position)
    }

    /// Every stored slot, left to right, as `(canonical_slot, payload)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        let view = self.view();
        let runs: Vec<_> = view.runs().collect();
        runs.into_iter().flat_map(move |(canonical, start, end)| {
            (start..=end).map(move |i| (canonical, self.slot(i)))
        })
    }

    /// Every run as `(canonical_slot, start, end)`.
    pub fn runs(&self) -> Vec<(usize, usize, usize)> {
        self.view().runs().collect()
    }

    /// Maximal groups of contiguous used slots as `(start, length)`.
    pub fn clusters(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for (_, start, end) in self.view().runs() {
            match out.last_mut() {
                Some((s, len)) if *s + *len == start => *len += end - start + 1,
                _ => out.push((start, end - start + 1)),
            }
        }
        out
    }

    pub fn count_used(&self) -> usize {
        self.view().runs().map(|(_, s, e)| e - s + 1).sum()
    }

    /// Appends the little-endian encoding of the table to `out`.
    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.geom.n_slots as u64).to_le_bytes());
        out.extend_from_slice(&self.geom.slot_width.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.words.len() as u64).to_le_bytes());
        out.reserve(self.words.len() * 8);
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out);
        out
    }

    /// Parses a table from the front of `bytes`, returning it with the
    /// number of bytes consumed.
    pub fn read_from(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad table magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported table version {version}")));
        }
        let n_slots = usize::try_from(r.u64()?).map_err(|_| Error::Format("slot count overflow".into()))?;
        let slot_width = r.u32()?;
        let seed = r.u64()?;
        let n_words = r.u64()? as usize;
        let geom = Geometry::new(n_slots, slot_width).map_err(|e| Error::Format(e.to_string()))?;
        if n_words != geom.n_words() {
            return Err(Error::Format(format!(
                "expected {} words, header says {n_words}",
                geom.n_words()
            )));
        }
        let raw = r.take(n_words * 8)?;
        let words = raw
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((RsqfTable { geom, seed, words }, r.pos))
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("unexpected end of input".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

/// Windowed access to a table's words.
///
/// Reads outside `[lo, hi)` return zero and set the fault flag; writes
/// outside the window are a bug and panic. Every mutating operation
/// performs all of its out-of-place reads before its first write, so a
/// fault always leaves the table untouched.
pub(crate) struct View<'a> {
    ptr: *mut u64,
    geom: Geometry,
    lo: usize,
    hi: usize,
    writable: bool,
    fault: Cell<bool>,
    _marker: PhantomData<&'a [u64]>,
}

impl<'a> View<'a> {
    /// # Safety
    ///
    /// `ptr` must point to a live table with geometry `geom`. For the
    /// lifetime of the view no other thread may access words of blocks
    /// inside `[lo, hi)`, and `lo`/`hi` must be multiples of 64.
    pub unsafe fn from_raw(ptr: *mut u64, geom: Geometry, lo: usize, hi: usize) -> Self {
        debug_assert!(lo % BLOCK_SLOTS == 0 && hi % BLOCK_SLOTS == 0);
        View {
            ptr,
            geom,
            lo,
            hi: hi.min(geom.n_blocks * BLOCK_SLOTS),
            writable: true,
            fault: Cell::new(false),
            _marker: PhantomData,
        }
    }

    #[inline]
    pub fn geometry(&self) -> Geometry {
        self.geom
    }

    #[inline]
    pub fn faulted(&self) -> bool {
        self.fault.get()
    }

    #[inline]
    fn in_window(&self, slot: usize) -> bool {
        if slot >= self.lo && slot < self.hi {
            true
        } else {
            self.fault.set(true);
            false
        }
    }

    #[inline]
    fn word(&self, idx: usize) -> u64 {
        debug_assert!(idx < self.geom.n_words());
        // SAFETY: idx is within the allocation and the block is in window.
        unsafe { *self.ptr.add(idx) }
    }

    #[inline]
    fn set_word(&self, idx: usize, value: u64) {
        assert!(self.writable, "write through read-only view");
        debug_assert!(idx < self.geom.n_words());
        // SAFETY: as in `word`, plus exclusivity guaranteed by the owner.
        unsafe { *self.ptr.add(idx) = value }
    }

    #[inline]
    fn block_word(&self, block: usize, field: usize) -> u64 {
        if !self.in_window(block * BLOCK_SLOTS) {
            return 0;
        }
        self.word(block * self.geom.stride + field)
    }

    #[inline]
    fn set_block_word(&self, block: usize, field: usize, value: u64) {
        assert!(
            block * BLOCK_SLOTS >= self.lo && block * BLOCK_SLOTS < self.hi,
            "write outside view window"
        );
        self.set_word(block * self.geom.stride + field, value)
    }

    #[inline]
    pub fn occupieds_word(&self, block: usize) -> u64 {
        self.block_word(block, OCCUPIEDS)
    }

    #[inline]
    pub fn runends_word(&self, block: usize) -> u64 {
        self.block_word(block, RUNENDS)
    }

    #[inline]
    pub fn offset(&self, block: usize) -> usize {
        self.block_word(block, OFFSET) as usize
    }

    #[inline]
    fn set_offset(&self, block: usize, value: usize) {
        self.set_block_word(block, OFFSET, value as u64)
    }

    #[inline]
    pub fn occupied(&self, slot: usize) -> bool {
        self.occupieds_word(slot / BLOCK_SLOTS) >> (slot % BLOCK_SLOTS) & 1 == 1
    }

    #[inline]
    pub fn runend(&self, slot: usize) -> bool {
        self.runends_word(slot / BLOCK_SLOTS) >> (slot % BLOCK_SLOTS) & 1 == 1
    }

    #[inline]
    fn set_bit(&self, field: usize, slot: usize, value: bool) {
        let block = slot / BLOCK_SLOTS;
        let bit = 1u64 << (slot % BLOCK_SLOTS);
        let w = self.block_word(block, field);
        self.set_block_word(block, field, if value { w | bit } else { w & !bit });
    }

    #[inline]
    pub fn set_occupied(&self, slot: usize, value: bool) {
        self.set_bit(OCCUPIEDS, slot, value)
    }

    #[inline]
    pub fn set_runend(&self, slot: usize, value: bool) {
        self.set_bit(RUNENDS, slot, value)
    }

    #[inline]
    pub fn slot(&self, slot: usize) -> u64 {
        if !self.in_window(slot) {
            return 0;
        }
        let w = self.geom.slot_width as usize;
        let base = (slot / BLOCK_SLOTS) * self.geom.stride + PAYLOAD;
        let bit = (slot % BLOCK_SLOTS) * w;
        let (idx, shift) = (base + bit / 64, bit % 64);
        let mut v = self.word(idx) >> shift;
        if shift + w > 64 {
            v |= self.word(idx + 1) << (64 - shift);
        }
        v & low_mask(w as u32)
    }

    #[inline]
    pub fn set_slot(&self, slot: usize, value: u64) {
        let w = self.geom.slot_width as usize;
        let mask = low_mask(w as u32);
        debug_assert!(value <= mask, "slot value wider than slot");
        let block = slot / BLOCK_SLOTS;
        assert!(slot >= self.lo && slot < self.hi, "write outside view window");
        let base = block * self.geom.stride + PAYLOAD;
        let bit = (slot % BLOCK_SLOTS) * w;
        let (idx, shift) = (base + bit / 64, bit % 64);
        let lo = self.word(idx);
        self.set_word(idx, (lo & !(mask << shift)) | ((value & mask) << shift));
        if shift + w > 64 {
            let spill = shift + w - 64;
            let hi = self.word(idx + 1);
            let hi_mask = low_mask(spill as u32);
            self.set_word(idx + 1, (hi & !hi_mask) | ((value & mask) >> (64 - shift)));
        }
    }

    /// End of the last run whose canonical slot is at most `slot`, as long
    /// as that run reaches into `slot`'s block (directly or through the
    /// block offset). `None` when no such run exists.
    pub fn run_end(&self, slot: usize) -> Option<usize> {
        let block = slot / BLOCK_SLOTS;
        let start = block * BLOCK_SLOTS;
        let offset = self.offset(block);
        let d = rank(self.occupieds_word(block), (slot % BLOCK_SLOTS) as u32);
        if d == 0 {
            return (offset > 0).then(|| start + offset - 1);
        }
        self.select_runend_from(start + offset, d - 1)
    }

    /// Position of the `k`-th set runends bit at or after `pos`.
    pub fn select_runend_from(&self, pos: usize, mut k: u32) -> Option<usize> {
        let mut block = pos / BLOCK_SLOTS;
        if block >= self.geom.n_blocks {
            return None;
        }
        let mut word = self.runends_word(block) & (u64::MAX << (pos % BLOCK_SLOTS));
        loop {
            let c = word.count_ones();
            if k < c {
                return Some(block * BLOCK_SLOTS + select(word, k).unwrap() as usize);
            }
            k -= c;
            block += 1;
            if block >= self.geom.n_blocks || self.faulted() {
                return None;
            }
            word = self.runends_word(block);
        }
    }

    /// First canonical slot in `(after, limit]` with its occupieds bit set.
    fn next_occupied(&self, after: usize, limit: usize) -> Option<usize> {
        let pos = after + 1;
        if pos > limit {
            return None;
        }
        let mut block = pos / BLOCK_SLOTS;
        let mut word = self.occupieds_word(block) & (u64::MAX << (pos % BLOCK_SLOTS));
        loop {
            if word != 0 {
                let s = block * BLOCK_SLOTS + word.trailing_zeros() as usize;
                return (s <= limit).then_some(s);
            }
            block += 1;
            if block * BLOCK_SLOTS > limit || block >= self.geom.n_blocks || self.faulted() {
                return None;
            }
            word = self.occupieds_word(block);
        }
    }

    fn run_start(&self, slot: usize) -> usize {
        if slot % BLOCK_SLOTS == 0 {
            slot.max(slot + self.offset(slot / BLOCK_SLOTS))
        } else {
            match self.run_end(slot - 1) {
                Some(e) => slot.max(e + 1),
                None => slot,
            }
        }
    }

    pub fn locate_run(&self, slot: usize) -> Option<(usize, usize)> {
        if !self.occupied(slot) {
            return None;
        }
        let end = self.run_end(slot)?;
        Some((self.run_start(slot), end))
    }

    /// Where a new run for an unoccupied canonical slot would begin.
    pub fn new_run_position(&self, slot: usize) -> usize {
        debug_assert!(!self.occupied(slot));
        match self.run_end(slot) {
            Some(e) => slot.max(e + 1),
            None => slot,
        }
    }

    /// First unused slot at or after `pos`.
    pub fn first_empty_from(&self, mut pos: usize) -> Option<usize> {
        loop {
            if pos >= self.geom.total_slots || self.faulted() {
                return None;
            }
            match self.run_end(pos) {
                Some(e) if e >= pos => pos = e + 1,
                _ => return Some(pos),
            }
        }
    }

    /// Checks that `count` unused slots exist at or after `pos` (so that
    /// `count` successive single-slot insertions there succeed).
    pub fn ensure_free(&self, pos: usize, count: usize) -> Result<()> {
        let mut from = pos;
        for _ in 0..count {
            match self.first_empty_from(from) {
                Some(e) => from = e + 1,
                None if self.faulted() => return Err(Error::RegionConflict),
                None => return Err(Error::TableFull),
            }
        }
        if self.faulted() {
            return Err(Error::RegionConflict);
        }
        Ok(())
    }

    /// Opens an empty slot in `canonical`'s run and returns its position.
    ///
    /// `position` is required when the run exists and must lie in
    /// `[start, end + 1]`; it is ignored when the run is created.
    pub fn insert_empty(&self, canonical: usize, position: Option<usize>) -> Result<usize> {
        let existing = self.locate_run(canonical);
        if self.faulted() {
            return Err(Error::RegionConflict);
        }
        let at = match existing {
            Some((start, end)) => {
                let p = position.expect("position required for an existing run");
                assert!(p >= start && p <= end + 1, "position {p} outside run [{start}, {end}]");
                p
            }
            None => self.new_run_position(canonical),
        };
        let empty = match self.first_empty_from(at) {
            Some(e) => e,
            None if self.faulted() => return Err(Error::RegionConflict),
            None => return Err(Error::TableFull),
        };
        if self.faulted() {
            return Err(Error::RegionConflict);
        }

        for i in (at + 1..=empty).rev() {
            self.set_slot(i, self.slot(i - 1));
            self.set_runend(i, self.runend(i - 1));
        }
        self.set_slot(at, 0);
        match existing {
            None => {
                self.set_occupied(canonical, true);
                self.set_runend(at, true);
            }
            Some((_, end)) if at == end + 1 => {
                self.set_runend(end, false);
                self.set_runend(at, true);
            }
            Some(_) => self.set_runend(at, false),
        }
        self.repair_offsets(canonical, empty);
        Ok(at)
    }

    /// Removes the slot at `position` from `canonical`'s run, shifting the
    /// rest of the cluster left where Robin Hood order allows.
    pub fn remove(&self, canonical: usize, position: usize) -> Result<()> {
        let run = self.locate_run(canonical);
        if self.faulted() {
            return Err(Error::RegionConflict);
        }
        let (start, end) = run.ok_or(Error::NotFound)?;
        assert!(position >= start && position <= end, "position outside run");
        // The shift never passes the end of the current cluster.
        let limit = self.first_empty_from(position).unwrap_or(self.geom.total_slots);
        if self.faulted() {
            return Err(Error::RegionConflict);
        }

        if start == end {
            self.set_occupied(canonical, false);
        } else if position == end {
            self.set_runend(end - 1, true);
        }
        self.shift_left(position + 1, end);
        let mut hole = end;
        let mut current = canonical;
        while hole + 1 < limit {
            let Some(next) = self.next_occupied(current, hole) else {
                break;
            };
            let next_end = self
                .select_runend_from(hole + 1, 0)
                .expect("shifted run without an end");
            self.shift_left(hole + 1, next_end);
            hole = next_end;
            current = next;
        }
        self.set_slot(hole, 0);
        self.set_runend(hole, false);
        self.repair_offsets(canonical, hole);
        Ok(())
    }

    fn shift_left(&self, from: usize, to: usize) {
        for i in from..=to {
            self.set_slot(i - 1, self.slot(i));
            self.set_runend(i - 1, self.runend(i));
        }
    }

    /// Recomputes offsets of blocks whose first slot is in `(from, to]`.
    fn repair_offsets(&self, from: usize, to: usize) {
        let mut block = from / BLOCK_SLOTS + 1;
        while block * BLOCK_SLOTS <= to && block < self.geom.n_blocks {
            let start = block * BLOCK_SLOTS;
            let offset = match self.run_end(start - 1) {
                Some(e) if e >= start => e - start + 1,
                _ => 0,
            };
            self.set_offset(block, offset);
            block += 1;
        }
    }

    /// Runs in canonical order as `(canonical, start, end)`.
    pub fn runs(&self) -> Runs<'_, 'a> {
        Runs {
            view: self,
            block: 0,
            word: self.occupieds_word(0),
            next_free: 0,
        }
    }
}

pub(crate) struct Runs<'v, 'a> {
    view: &'v View<'a>,
    block: usize,
    word: u64,
    next_free: usize,
}

impl Iterator for Runs<'_, '_> {
    type Item = (usize, usize, usize);

    fn next(&mut self) -> Option<Self::Item> {
        while self.word == 0 {
            self.block += 1;
            if self.block >= self.view.geom.n_blocks {
                return None;
            }
            self.word = self.view.occupieds_word(self.block);
        }
        let canonical = self.block * BLOCK_SLOTS + self.word.trailing_zeros() as usize;
        self.word &= self.word - 1;
        let start = canonical.max(self.next_free);
        let end = self.view.select_runend_from(start, 0)?;
        self.next_free = end + 1;
        Some((canonical, start, end))
    }
}

/// Writes runs into an empty table in canonical order, filling in block
/// offsets as it goes.
pub(crate) struct RunWriter<'v, 'a> {
    view: &'v View<'a>,
    next_free: usize,
    next_block: usize,
    last_canonical: Option<usize>,
    pub used: usize,
}

impl<'v, 'a> RunWriter<'v, 'a> {
    pub fn new(view: &'v View<'a>) -> Self {
        RunWriter {
            view,
            next_free: 0,
            next_block: 0,
            last_canonical: None,
            used: 0,
        }
    }

    fn settle_offsets_upto(&mut self, slot: usize) {
        while self.next_block < self.view.geom.n_blocks && self.next_block * BLOCK_SLOTS <= slot {
            let start = self.next_block * BLOCK_SLOTS;
            self.view.set_offset(self.next_block, self.next_free.saturating_sub(start));
            self.next_block += 1;
        }
    }

    pub fn push_run(&mut self, canonical: usize, slots: &[u64]) -> Result<()> {
        assert!(!slots.is_empty());
        assert!(self.last_canonical.is_none_or(|c| c < canonical), "runs out of order");
        self.settle_offsets_upto(canonical);
        let start = canonical.max(self.next_free);
        let end = start + slots.len() - 1;
        if end >= self.view.geom.total_slots {
            return Err(Error::TableFull);
        }
        for (i, &v) in slots.iter().enumerate() {
            self.view.set_slot(start + i, v);
        }
        self.view.set_occupied(canonical, true);
        self.view.set_runend(end, true);
        self.next_free = end + 1;
        self.last_canonical = Some(canonical);
        self.used += slots.len();
        Ok(())
    }

    pub fn finish(mut self) -> usize {
        self.settle_offsets_upto(usize::MAX);
        self.used
    }
}

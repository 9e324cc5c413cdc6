//! Exact reference implementations for testing.
//!
//! [`ExactSet`] answers range emptiness exactly. [`reference_decode`]
//! rebuilds a filter's logical contents straight from its serialized bytes
//! with a plain bit-by-bit scan; it deliberately shares no decoding code
//! with the filter itself.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};

/// A sorted multiset of keys.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExactSet {
    keys: Vec<u64>,
}

impl ExactSet {
    pub fn new(mut keys: Vec<u64>) -> Self {
        keys.sort_unstable();
        ExactSet { keys }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[u64] {
        &self.keys
    }

    pub fn insert(&mut self, key: u64) {
        let at = self.keys.partition_point(|&k| k < key);
        self.keys.insert(at, key);
    }

    /// Removes one copy of `key`; returns whether it was present.
    pub fn remove(&mut self, key: u64) -> bool {
        match self.keys.binary_search(&key) {
            Ok(i) => {
                self.keys.remove(i);
                true
            }
            Err(_) => false,
        }
    }

    pub fn contains(&self, key: u64) -> bool {
        self.keys.binary_search(&key).is_ok()
    }

    /// Whether some key lies in `[ql, qr]`.
    pub fn range_nonempty(&self, ql: u64, qr: u64) -> bool {
        debug_assert!(ql <= qr);
        let i = self.keys.partition_point(|&k| k < ql);
        i < self.keys.len() && self.keys[i] <= qr
    }
}

/// Logical filter contents: `(canonical slot, fingerprint field)` to the
/// sorted memento multiset of that box.
pub type FilterState = BTreeMap<(usize, u64), Vec<u64>>;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + N)
            .ok_or_else(|| Error::Format("truncated".into()))?;
        self.pos += N;
        Ok(s.try_into().unwrap())
    }
}

/// Decodes a serialized fixed or fluid filter (`MementoFilter::to_bytes`)
/// into its logical contents.
pub fn reference_decode(bytes: &[u8]) -> Result<FilterState> {
    let mut c = Cursor { bytes, pos: 0 };
    if &c.take::<4>()? != b"MEMF" {
        return Err(Error::Format("not a filter blob".into()));
    }
    let _version = u32::from_le_bytes(c.take()?);
    let fluid = c.take::<1>()?[0] == 1;
    let f = u32::from_le_bytes(c.take()?);
    let r = u32::from_le_bytes(c.take()?);
    let _alpha = c.take::<8>()?;
    let _seed = c.take::<8>()?;
    if &c.take::<4>()? != b"RSQF" {
        return Err(Error::Format("missing table".into()));
    }
    let _table_version = u32::from_le_bytes(c.take()?);
    let n = u64::from_le_bytes(c.take()?) as usize;
    let width = u32::from_le_bytes(c.take()?) as usize;
    let _table_seed = c.take::<8>()?;
    let n_words = u64::from_le_bytes(c.take()?) as usize;
    let fp_width = if fluid { f + 1 } else { f } as usize;
    if fp_width + r as usize != width {
        return Err(Error::Format("slot width mismatch".into()));
    }
    let mut words = Vec::with_capacity(n_words);
    for _ in 0..n_words {
        words.push(u64::from_le_bytes(c.take()?));
    }
    if n_words % (3 + width) != 0 || n_words / (3 + width) * 64 < n {
        return Err(Error::Format("word count does not fit the slot count".into()));
    }
    let total = n_words / (3 + width) * 64;
    decode_words(&words, n, total, width, r as usize, fluid)
}

fn bit(words: &[u64], index: usize) -> bool {
    words[index / 64] >> (index % 64) & 1 == 1
}

/// Slot payloads, metadata bits and stored offsets, read one bit at a time.
struct RawTable {
    occupied: Vec<bool>,
    runend: Vec<bool>,
    slots: Vec<u64>,
    offsets: Vec<u64>,
}

fn raw_table(words: &[u64], n: usize, width: usize) -> RawTable {
    let stride_bits = (3 + width) * 64;
    let n_blocks = n / 64;
    let mut t = RawTable {
        occupied: vec![false; n],
        runend: vec![false; n],
        slots: vec![0; n],
        offsets: vec![0; n_blocks],
    };
    for i in 0..n {
        let block_bit = (i / 64) * stride_bits;
        t.occupied[i] = bit(words, block_bit + i % 64);
        t.runend[i] = bit(words, block_bit + 64 + i % 64);
        let payload = block_bit + 3 * 64 + (i % 64) * width;
        let mut v = 0u64;
        for b in (0..width).rev() {
            v = (v << 1) | bit(words, payload + b) as u64;
        }
        t.slots[i] = v;
    }
    for (b, o) in t.offsets.iter_mut().enumerate() {
        *o = words[b * (3 + width) + 2];
    }
    t
}

/// `n` canonical slots, `total` physical slots (a multiple of 64).
fn decode_words(words: &[u64], n: usize, total: usize, width: usize, r: usize, fluid: bool) -> Result<FilterState> {
    let t = raw_table(words, total, width);
    if let Some(i) = (n..total).find(|&i| t.occupied[i]) {
        return Err(Error::Malformed(i));
    }
    let n = total;

    // Assign each used slot to a run with a queue of pending canonical slots.
    let mut pending = VecDeque::new();
    let mut runs: Vec<(usize, Vec<u64>)> = Vec::new();
    let mut current: Vec<u64> = Vec::new();
    let mut ends: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        if t.occupied[i] {
            pending.push_back(i);
        }
        match pending.front() {
            Some(&canonical) => {
                current.push(t.slots[i]);
                if t.runend[i] {
                    pending.pop_front();
                    runs.push((canonical, std::mem::take(&mut current)));
                    ends.push((canonical, i));
                }
            }
            None => {
                if t.runend[i] {
                    return Err(Error::Malformed(i));
                }
                if t.slots[i] != 0 {
                    return Err(Error::Malformed(i));
                }
            }
        }
    }
    if !pending.is_empty() {
        return Err(Error::Malformed(n - 1));
    }

    // Offsets recomputed from scratch must match the stored ones.
    for (b, &stored) in t.offsets.iter().enumerate() {
        let start = b * 64;
        // Runs end in canonical order, so the last run starting before the
        // block reaches furthest.
        let before = ends.partition_point(|&(c, _)| c < start);
        let expect = match before {
            0 => 0,
            k => (ends[k - 1].1 + 1).saturating_sub(start),
        };
        if stored != expect as u64 {
            return Err(Error::Malformed(start));
        }
    }

    let mut state = FilterState::new();
    for (canonical, slots) in runs {
        for (fp, mementos) in parse_run(&slots, width, r, fluid).map_err(|_| Error::Malformed(canonical))? {
            let entry = state.entry((canonical, fp)).or_default();
            if !entry.is_empty() && !(fp == 0 && !fluid) {
                return Err(Error::Malformed(canonical));
            }
            entry.extend(mementos);
        }
    }
    Ok(state)
}

/// Parses the boxes of one run from its raw slot values.
fn parse_run(slots: &[u64], width: usize, r: usize, fluid: bool) -> std::result::Result<Vec<(u64, Vec<u64>)>, ()> {
    let split = |v: u64| (v >> r, v & ((1u64 << r) - 1));
    let mut out: Vec<(u64, Vec<u64>)> = Vec::new();
    let mut i = 0;
    while i < slots.len() {
        let (fp, m) = split(slots[i]);
        if fp == 0 {
            if fluid {
                return Err(());
            }
            out.push((0, vec![m]));
            i += 1;
            continue;
        }
        let next = slots.get(i + 1).map(|&v| split(v));
        match next {
            Some((fp2, m2)) if fp2 == fp => {
                out.push((fp, vec![m, m2]));
                i += 2;
            }
            Some((0, last)) => {
                // Counted box: expand the remaining run into a bit list.
                let bits: Vec<bool> = slots[i + 2..]
                    .iter()
                    .flat_map(|&v| (0..width).rev().map(move |b| v >> b & 1 == 1))
                    .collect();
                let mut pos = 0;
                let mut read = |n: usize| -> std::result::Result<u64, ()> {
                    let chunk = bits.get(pos..pos + n).ok_or(())?;
                    pos += n;
                    Ok(chunk.iter().fold(0, |acc, &b| (acc << 1) | b as u64))
                };
                let cw = r.max(2);
                let escape = (1u64 << cw) - 1;
                let mut escapes = 0;
                let mut first = read(cw)?;
                while first == escape {
                    escapes += 1;
                    first = read(cw)?;
                }
                let mut count = first;
                for _ in 0..escapes {
                    count = count * escape + read(cw)?;
                }
                let mut ms = vec![m];
                for _ in 0..count {
                    ms.push(read(r)?);
                }
                ms.push(last);
                out.push((fp, ms));
                i += 2 + pos.div_ceil(width);
            }
            _ => {
                out.push((fp, vec![m]));
                i += 1;
            }
        }
    }
    if i != slots.len() {
        return Err(());
    }
    for pair in out.windows(2) {
        if pair[1].0 < pair[0].0 {
            return Err(());
        }
    }
    for (_, ms) in &mut out {
        if ms.windows(2).any(|w| w[0] > w[1]) {
            return Err(());
        }
    }
    Ok(out)
}

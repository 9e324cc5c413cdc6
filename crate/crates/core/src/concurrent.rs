//! Thread-safe fixed-size filter with region locking.
//!
//! The table is split into regions of [`REGION_SLOTS`] slots, each with
//! its own mutex. An operation on canonical slot `c` in region `i` locks
//! regions `i` and `i + 1` (in index order, so there are no deadlocks) and
//! works through a view restricted to those two regions. Shifts that would
//! leave the window, or runs that start before it, are detected before
//! anything is written; the operation then retries with the whole table
//! under an exclusive global lock.

use std::cell::UnsafeCell;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, MutexGuard, RwLock};

use crate::codec::{box_has_in_range, Layout};
use crate::engine::{apply, decompose_range, partition_has, plan_add, plan_remove, any_matching_box, Engine, Matcher};
use crate::error::{Error, Result};
use crate::filter::MementoFilter;
use crate::keyspace::{address_of, split_key, HashAddress};
use crate::params::{capacity, FilterParams};
use crate::rsqf::{Geometry, RsqfTable, View, BLOCK_SLOTS};

/// Slots per lock region.
pub const REGION_SLOTS: usize = 4096;

/// A fixed-size Memento filter that supports concurrent inserts, deletes
/// and queries through `&self`.
pub struct ConcurrentMementoFilter {
    params: FilterParams,
    layout: Layout,
    table: UnsafeCell<RsqfTable>,
    ptr: *mut u64,
    geom: Geometry,
    regions: Vec<Mutex<()>>,
    global: RwLock<()>,
    used: AtomicUsize,
    keys: AtomicUsize,
    capacity: usize,
}

// All access to the table words goes through views created while holding
// the region locks covering their window, or the global write lock.
unsafe impl Sync for ConcurrentMementoFilter {}
unsafe impl Send for ConcurrentMementoFilter {}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl ConcurrentMementoFilter {
    pub fn new(params: FilterParams) -> Result<Self> {
        Ok(Self::from_filter(MementoFilter::new(params)?))
    }

    /// Wraps an existing filter.
    pub fn from_filter(filter: MementoFilter) -> Self {
        let (params, engine) = filter.into_parts();
        let Engine {
            mut table,
            layout,
            used,
            keys,
            ..
        } = engine;
        let geom = table.geometry();
        let ptr = table.raw_ptr();
        let n_regions = geom.total_slots.div_ceil(REGION_SLOTS);
        ConcurrentMementoFilter {
            params,
            layout,
            table: UnsafeCell::new(table),
            ptr,
            geom,
            regions: (0..n_regions).map(|_| Mutex::new(())).collect(),
            global: RwLock::new(()),
            used: AtomicUsize::new(used),
            keys: AtomicUsize::new(keys),
            capacity: capacity(params.n_slots, params.max_load_factor),
        }
    }

    /// Unwraps into a single-threaded filter.
    pub fn into_filter(self) -> MementoFilter {
        let layout = self.layout;
        let engine = Engine::from_table(self.table.into_inner(), layout, self.params.max_load_factor)
            .expect("corrupt filter");
        MementoFilter::from_parts(self.params, engine)
    }

    /// Consistent copy of the current contents.
    pub fn snapshot(&self) -> MementoFilter {
        let _g = self.global.write().unwrap_or_else(|e| e.into_inner());
        // SAFETY: the write lock excludes every other table access.
        let table = unsafe { (*self.table.get()).clone() };
        let engine = Engine::from_table(table, self.layout, self.params.max_load_factor).expect("corrupt filter");
        MementoFilter::from_parts(self.params, engine)
    }

    pub fn params(&self) -> &FilterParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.keys.load(Ordering::Relaxed)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn used_slots(&self) -> usize {
        self.used.load(Ordering::Relaxed)
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

    /// Runs `op` on a two-region view around `canonical`, falling back to
    /// an exclusive whole-table view on `RegionConflict`. `op` must not
    /// write anything when it fails.
    fn with_view<T>(&self, canonical: usize, op: impl Fn(&View) -> Result<T>) -> Result<T> {
        let all = self.geom.n_blocks * BLOCK_SLOTS;
        {
            let _g = self.global.read().unwrap_or_else(|e| e.into_inner());
            let i = canonical / REGION_SLOTS;
            let _a = lock(&self.regions[i]);
            let _b = self.regions.get(i + 1).map(lock);
            // SAFETY: the window covers exactly the locked regions.
            let view = unsafe { View::from_raw(self.ptr, self.geom, i * REGION_SLOTS, ((i + 2) * REGION_SLOTS).min(all)) };
            match op(&view) {
                Err(Error::RegionConflict) => {}
                other => return other,
            }
        }
        let _g = self.global.write().unwrap_or_else(|e| e.into_inner());
        // SAFETY: the write lock excludes every other table access.
        let view = unsafe { View::from_raw(self.ptr, self.geom, 0, all) };
        op(&view)
    }

    pub fn insert(&self, key: u64) -> Result<()> {
        let (a, m) = self.locate(key);
        self.with_view(a.canonical_slot, |view| {
            let splice = plan_add(view, &self.layout, a.canonical_slot, a.fingerprint, &[m])?;
            let grow = splice.slots_delta().max(0) as usize;
            self.used
                .fetch_update(Ordering::AcqRel, Ordering::Acquire, |u| {
                    (u + grow <= self.capacity).then_some(u + grow)
                })
                .map_err(|_| Error::CapacityExceeded)?;
            if let Err(e) = apply(view, &splice) {
                self.used.fetch_sub(grow, Ordering::AcqRel);
                return Err(e);
            }
            self.keys.fetch_add(1, Ordering::Relaxed);
            Ok(())
        })
    }

    pub fn delete(&self, key: u64) -> Result<()> {
        let (a, m) = self.locate(key);
        self.with_view(a.canonical_slot, |view| {
            let mut found = None;
            any_matching_box(view, &self.layout, a.canonical_slot, Matcher::Exact(a.fingerprint), |h| {
                let hit = box_has_in_range(view, &self.layout, h, m, m);
                if hit {
                    found = Some(*h);
                }
                hit
            })?;
            let hdr = found.ok_or(Error::NotFound)?;
            let splice = plan_remove(view, &self.layout, a.canonical_slot, &hdr, m)?;
            apply(view, &splice)?;
            self.used.fetch_sub(splice.slots_delta().unsigned_abs(), Ordering::AcqRel);
            self.keys.fetch_sub(1, Ordering::Relaxed);
            Ok(())
        })
    }

    fn partition(&self, prefix: u64, lo: u64, hi: u64) -> bool {
        let a = self.address(prefix);
        self.with_view(a.canonical_slot, |view| {
            partition_has(view, &self.layout, a.canonical_slot, Matcher::Exact(a.fingerprint), lo, hi)
        })
        .expect("corrupt filter")
    }

    pub fn point_query(&self, key: u64) -> bool {
        let parts = split_key(key, self.params.memento_bits);
        self.partition(parts.prefix, parts.memento, parts.memento)
    }

    /// Range query. Each partition is checked atomically; the query as a
    /// whole is not isolated from concurrent updates.
    pub fn range_query(&self, ql: u64, qr: u64) -> bool {
        if self.is_empty() {
            return false;
        }
        decompose_range(self.params.memento_bits, ql, qr, |p, lo, hi| Ok(self.partition(p, lo, hi)))
            .expect("corrupt filter")
            .0
    }
}

impl std::fmt::Debug for ConcurrentMementoFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConcurrentMementoFilter")
            .field("params", &self.params)
            .field("keys", &self.len())
            .field("used_slots", &self.used_slots())
            .finish()
    }
}

//! Memento filter: a dynamic, expandable range filter.
//!
//! Keys are 64-bit integers. Each key is split into a prefix, which is
//! hashed to a slot and fingerprint of a rank-and-select quotient filter,
//! and a memento (its low `r` bits), which is stored exactly. Range queries
//! of length up to `2^r` touch at most two prefixes, so they cost at most
//! two table probes and their false positive rate does not depend on how
//! queries relate to the stored keys.
//!
//! * [`MementoFilter`]: fixed-size filter.
//! * [`ExpandableMementoFilter`]: grows by doubling, using fluid
//!   fingerprints that donate one bit to the slot address per expansion.
//! * [`ConcurrentMementoFilter`]: fixed-size filter with region locks.
//!
//! ```
//! use memento_filter::{FilterParams, MementoFilter};
//!
//! let mut f = MementoFilter::new(FilterParams::new(1 << 10, 8, 5)).unwrap();
//! f.insert(1_000).unwrap();
//! assert!(f.point_query(1_000));
//! assert!(f.range_query(990, 1_010));
//! ```

pub mod bits;
pub mod codec;
pub mod concurrent;
mod engine;
pub mod error;
pub mod expandable;
pub mod filter;
pub mod keyspace;
pub mod oracle;
pub mod params;
pub mod rsqf;

pub use concurrent::ConcurrentMementoFilter;
pub use engine::{FilterStats, KeepsakeBox, MAX_INTERIOR_PARTITIONS};
pub use error::{Error, Result};
pub use expandable::ExpandableMementoFilter;
pub use filter::MementoFilter;
pub use params::{FilterParams, DEFAULT_MAX_LOAD_FACTOR};

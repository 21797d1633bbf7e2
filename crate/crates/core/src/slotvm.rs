//! Cleartext simulator of CKKS slot arithmetic.
//!
//! A [`SlotVector`] stands in for a ciphertext: it carries the exact slot
//! values and a level counter, and every operation on it goes through an
//! [`HEContext`], which enforces the level budget and counts operations.
//! There is no encryption, noise or scale tracking; values are exact `f64`.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, AddAssign, Sub};
use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Default number of slots per ciphertext (ring degree 2^16).
pub const DEFAULT_SLOT_COUNT: usize = 1 << 15;
/// Default multiplicative level budget of a fresh ciphertext.
pub const DEFAULT_MAX_LEVEL: u32 = 20;

static NEXT_CONTEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Operation counters.
///
/// Counters add under [`Add`]; `max_depth` combines by maximum, so merging is
/// associative and commutative.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OpCounts {
    pub rotations: u64,
    pub ct_ct_mults: u64,
    pub pt_ct_mults: u64,
    pub adds: u64,
    pub bootstraps: u64,
    /// Levels consumed by the operation (or the largest such value when
    /// merged).
    pub max_depth: u32,
}

impl OpCounts {
    pub const ZERO: OpCounts = OpCounts {
        rotations: 0,
        ct_ct_mults: 0,
        pt_ct_mults: 0,
        adds: 0,
        bootstraps: 0,
        max_depth: 0,
    };

    /// Counters multiplied by `n`, e.g. a per-ciphertext cost applied to `n`
    /// ciphertexts. `max_depth` is unchanged.
    pub fn times(self, n: u64) -> OpCounts {
        OpCounts {
            rotations: self.rotations * n,
            ct_ct_mults: self.ct_ct_mults * n,
            pt_ct_mults: self.pt_ct_mults * n,
            adds: self.adds * n,
            bootstraps: self.bootstraps * n,
            max_depth: self.max_depth,
        }
    }

    /// True when every counter is zero (depth is ignored).
    pub fn is_free(&self) -> bool {
        self.rotations == 0
            && self.ct_ct_mults == 0
            && self.pt_ct_mults == 0
            && self.adds == 0
            && self.bootstraps == 0
    }
}

impl Add for OpCounts {
    type Output = OpCounts;

    fn add(self, rhs: OpCounts) -> OpCounts {
        OpCounts {
            rotations: self.rotations + rhs.rotations,
            ct_ct_mults: self.ct_ct_mults + rhs.ct_ct_mults,
            pt_ct_mults: self.pt_ct_mults + rhs.pt_ct_mults,
            adds: self.adds + rhs.adds,
            bootstraps: self.bootstraps + rhs.bootstraps,
            max_depth: self.max_depth.max(rhs.max_depth),
        }
    }
}

impl AddAssign for OpCounts {
    fn add_assign(&mut self, rhs: OpCounts) {
        *self = *self + rhs;
    }
}

/// Counter difference between two snapshots of the same context. `max_depth`
/// is taken from the left operand.
impl Sub for OpCounts {
    type Output = OpCounts;

    fn sub(self, rhs: OpCounts) -> OpCounts {
        OpCounts {
            rotations: self.rotations - rhs.rotations,
            ct_ct_mults: self.ct_ct_mults - rhs.ct_ct_mults,
            pt_ct_mults: self.pt_ct_mults - rhs.pt_ct_mults,
            adds: self.adds - rhs.adds,
            bootstraps: self.bootstraps - rhs.bootstraps,
            max_depth: self.max_depth,
        }
    }
}

impl core::iter::Sum for OpCounts {
    fn sum<I: Iterator<Item = OpCounts>>(iter: I) -> OpCounts {
        iter.fold(OpCounts::ZERO, Add::add)
    }
}

#[derive(Debug, Default)]
struct Counters {
    rotations: AtomicU64,
    ct_ct_mults: AtomicU64,
    pt_ct_mults: AtomicU64,
    adds: AtomicU64,
    bootstraps: AtomicU64,
}

impl Counters {
    fn snapshot(&self) -> OpCounts {
        OpCounts {
            rotations: self.rotations.load(Ordering::Relaxed),
            ct_ct_mults: self.ct_ct_mults.load(Ordering::Relaxed),
            pt_ct_mults: self.pt_ct_mults.load(Ordering::Relaxed),
            adds: self.adds.load(Ordering::Relaxed),
            bootstraps: self.bootstraps.load(Ordering::Relaxed),
            max_depth: 0,
        }
    }

    fn reset(&self) {
        for c in [
            &self.rotations,
            &self.ct_ct_mults,
            &self.pt_ct_mults,
            &self.adds,
            &self.bootstraps,
        ] {
            c.store(0, Ordering::Relaxed);
        }
    }
}

fn bump(counter: &AtomicU64) {
    counter.fetch_add(1, Ordering::Relaxed);
}

/// Simulated ciphertext: `S` real slots plus a level.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotVector {
    ctx: u64,
    level: u32,
    slots: Vec<f64>,
}

impl SlotVector {
    pub fn slots(&self) -> &[f64] {
        &self.slots
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn into_slots(self) -> Vec<f64> {
        self.slots
    }

    pub(crate) fn context_id(&self) -> u64 {
        self.ctx
    }
}

/// Unencrypted operand of a plaintext-ciphertext operation.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainVector {
    slots: Vec<f64>,
}

impl PlainVector {
    pub fn slots(&self) -> &[f64] {
        &self.slots
    }
}

/// Parameters and operation counters shared by every ciphertext created
/// through it.
///
/// Counting uses relaxed atomics, so a context can be shared across threads;
/// per-operation counts read back with [`HEContext::counters`] are exact only
/// while a single thread drives the context.
#[derive(Debug)]
pub struct HEContext {
    id: u64,
    slot_count: usize,
    max_level: u32,
    refresh_level: u32,
    counters: Counters,
}

impl HEContext {
    /// Context with bootstrap refreshing to `max_level`.
    pub fn new(slot_count: usize, max_level: u32) -> Result<Self> {
        Self::with_refresh_level(slot_count, max_level, max_level)
    }

    pub fn with_refresh_level(slot_count: usize, max_level: u32, refresh_level: u32) -> Result<Self> {
        if slot_count < 4 || !slot_count.is_power_of_two() {
            return Err(Error::InvalidSlotCount(slot_count));
        }
        if refresh_level == 0 || refresh_level > max_level {
            return Err(Error::InvalidRefreshLevel {
                refresh: refresh_level,
                max_level,
            });
        }
        Ok(Self {
            id: NEXT_CONTEXT_ID.fetch_add(1, Ordering::Relaxed),
            slot_count,
            max_level,
            refresh_level,
            counters: Counters::default(),
        })
    }

    pub fn slot_count(&self) -> usize {
        self.slot_count
    }

    pub fn max_level(&self) -> u32 {
        self.max_level
    }

    pub fn refresh_level(&self) -> u32 {
        self.refresh_level
    }

    pub fn counters(&self) -> OpCounts {
        self.counters.snapshot()
    }

    pub fn reset_counters(&self) {
        self.counters.reset();
    }

    /// Fresh ciphertext at the maximum level.
    pub fn encrypt(&self, slots: Vec<f64>) -> Result<SlotVector> {
        self.encrypt_at(slots, self.max_level)
    }

    pub fn encrypt_at(&self, slots: Vec<f64>, level: u32) -> Result<SlotVector> {
        self.check_len(slots.len())?;
        Ok(SlotVector {
            ctx: self.id,
            level,
            slots,
        })
    }

    /// All-zero ciphertext at `level`. Not counted.
    pub fn zero(&self, level: u32) -> SlotVector {
        SlotVector {
            ctx: self.id,
            level,
            slots: vec![0.0; self.slot_count],
        }
    }

    pub fn plain(&self, slots: Vec<f64>) -> Result<PlainVector> {
        self.check_len(slots.len())?;
        Ok(PlainVector { slots })
    }

    pub fn add_ct(&self, a: &SlotVector, b: &SlotVector) -> Result<SlotVector> {
        self.check_owned(a)?;
        self.check_owned(b)?;
        let slots = a.slots.iter().zip(&b.slots).map(|(x, y)| x + y).collect();
        bump(&self.counters.adds);
        Ok(SlotVector {
            ctx: self.id,
            level: a.level.min(b.level),
            slots,
        })
    }

    /// Plaintext addition; consumes no level.
    pub fn add_plain(&self, a: &SlotVector, p: &PlainVector) -> Result<SlotVector> {
        self.check_owned(a)?;
        self.check_len(p.slots.len())?;
        let slots = a.slots.iter().zip(&p.slots).map(|(x, y)| x + y).collect();
        bump(&self.counters.adds);
        Ok(SlotVector {
            ctx: self.id,
            level: a.level,
            slots,
        })
    }

    pub fn mul_plain(&self, a: &SlotVector, p: &PlainVector) -> Result<SlotVector> {
        self.check_owned(a)?;
        self.check_len(p.slots.len())?;
        if a.level == 0 {
            return Err(Error::LevelExhausted { needed: 1, level: 0 });
        }
        let slots = a.slots.iter().zip(&p.slots).map(|(x, y)| x * y).collect();
        bump(&self.counters.pt_ct_mults);
        Ok(SlotVector {
            ctx: self.id,
            level: a.level - 1,
            slots,
        })
    }

    pub fn mul_ct(&self, a: &SlotVector, b: &SlotVector) -> Result<SlotVector> {
        self.check_owned(a)?;
        self.check_owned(b)?;
        let level = a.level.min(b.level);
        if level == 0 {
            return Err(Error::LevelExhausted { needed: 1, level: 0 });
        }
        let slots = a.slots.iter().zip(&b.slots).map(|(x, y)| x * y).collect();
        bump(&self.counters.ct_ct_mults);
        Ok(SlotVector {
            ctx: self.id,
            level: level - 1,
            slots,
        })
    }

    /// Cyclic left shift by `r` (right shift for negative `r`):
    /// `out[i] = a[(i + r) mod S]`. Shifts that are multiples of `S` are free.
    pub fn rotate(&self, a: &SlotVector, r: i64) -> Result<SlotVector> {
        self.check_owned(a)?;
        let shift = r.rem_euclid(self.slot_count as i64) as usize;
        let mut slots = a.slots.clone();
        if shift != 0 {
            slots.rotate_left(shift);
            bump(&self.counters.rotations);
        }
        Ok(SlotVector {
            ctx: self.id,
            level: a.level,
            slots,
        })
    }

    pub fn bootstrap(&self, a: &SlotVector) -> Result<SlotVector> {
        self.check_owned(a)?;
        bump(&self.counters.bootstraps);
        Ok(SlotVector {
            ctx: self.id,
            level: self.refresh_level,
            slots: a.slots.clone(),
        })
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.slot_count {
            return Err(Error::SlotLength {
                expected: self.slot_count,
                got: len,
            });
        }
        Ok(())
    }

    fn check_owned(&self, a: &SlotVector) -> Result<()> {
        if a.ctx != self.id {
            return Err(Error::ContextMismatch);
        }
        Ok(())
    }
}

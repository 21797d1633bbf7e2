//! Generalized interleaved packing.
//!
//! A `C x H x H` feature map is laid out on ciphertexts whose active slots
//! form a `base x base` grid, stored row-major. The channel packing factor
//! `g = H / base` picks the layout family:
//!
//! * `g >= 1`, interleaved: pixel `(c, y, x)` goes to ciphertext
//!   `c*g^2 + (y mod g)*g + (x mod g)` at grid cell `(y div g, x div g)`, so each
//!   ciphertext holds one "color" class of one channel.
//! * `g <= 1`, multiplexed: with `t = 1/g`, ciphertext `c div t^2` holds `t^2`
//!   channels; channel offset `m = c mod t^2` places pixel `(y, x)` at grid cell
//!   `(y*t + m div t, x*t + m mod t)`.
//!
//! At `g = 1` both rules give the plain row-major layout, which is why the
//! two families join without moving data.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::slotvm::{HEContext, SlotVector};

/// Channel packing factor `g`, always a power of two or its reciprocal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PackingFactor {
    log2: i32,
}

impl PackingFactor {
    pub const ONE: PackingFactor = PackingFactor { log2: 0 };

    pub const fn from_log2(log2: i32) -> Self {
        Self { log2 }
    }

    /// `height / base`, both powers of two.
    pub fn from_ratio(height: usize, base: usize) -> Result<Self> {
        if !height.is_power_of_two() || !base.is_power_of_two() {
            return Err(Error::InvalidLayout(format!(
                "height {height} and base size {base} must be powers of two"
            )));
        }
        Ok(Self {
            log2: height.trailing_zeros() as i32 - base.trailing_zeros() as i32,
        })
    }

    pub fn log2(self) -> i32 {
        self.log2
    }

    pub fn as_f64(self) -> f64 {
        libm::exp2(self.log2 as f64)
    }

    pub fn is_interleaved(self) -> bool {
        self.log2 > 0
    }

    pub fn is_multiplexed(self) -> bool {
        self.log2 < 0
    }

    /// `g` for `g >= 1`.
    pub fn interleave(self) -> Option<usize> {
        (self.log2 >= 0).then(|| 1usize << self.log2)
    }

    /// `t = 1/g` for `g <= 1`.
    pub fn gap(self) -> Option<usize> {
        (self.log2 <= 0).then(|| 1usize << (-self.log2))
    }
}

impl fmt::Display for PackingFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.log2 >= 0 {
            write!(f, "{}", 1u64 << self.log2)
        } else {
            write!(f, "1/{}", 1u64 << (-self.log2))
        }
    }
}

/// How an operator changes spatial resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resampling {
    Downsample,
    Upsample,
    Preserve,
}

/// Output packing factor of an operator: `g/s` when downsampling by stride
/// `s`, `g*s` when upsampling, `g` otherwise.
///
/// Panics if `stride` is not a power of two.
pub fn propagate_factor(g: PackingFactor, kind: Resampling, stride: usize) -> PackingFactor {
    assert!(stride.is_power_of_two(), "stride {stride} is not a power of two");
    let shift = stride.trailing_zeros() as i32;
    match kind {
        Resampling::Downsample => PackingFactor::from_log2(g.log2 - shift),
        Resampling::Upsample => PackingFactor::from_log2(g.log2 + shift),
        Resampling::Preserve => g,
    }
}

/// Whether moving from `from` to `to` keeps every slot where it is.
///
/// Transitions inside one family, or into/out of `g = 1`, are seamless. A
/// direct jump from interleaved to multiplexed (or back) is not.
pub fn relayout_boundary_check(from: PackingFactor, to: PackingFactor) -> bool {
    !(from.log2 > 0 && to.log2 < 0 || from.log2 < 0 && to.log2 > 0)
}

/// Position of one pixel in a packed tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotIndex {
    pub ct: usize,
    pub slot: usize,
}

/// Pixel position with its grid decomposition, used by the operator planner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Location {
    pub ct: usize,
    pub slot: usize,
    /// Cell offset of the channel inside its `t x t` multiplexing cell, zero
    /// for interleaved layouts.
    pub offset: (usize, usize),
}

/// Packing of a `channels x height x height` map onto a `base x base` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GipLayout {
    channels: usize,
    height: usize,
    base: usize,
    factor: PackingFactor,
}

impl GipLayout {
    pub fn new(channels: usize, height: usize, base: usize) -> Result<Self> {
        if channels == 0 || !channels.is_power_of_two() {
            return Err(Error::InvalidLayout(format!(
                "channel count {channels} must be a power of two"
            )));
        }
        if height == 0 || base == 0 {
            return Err(Error::InvalidLayout("dimensions must be positive".into()));
        }
        let factor = PackingFactor::from_ratio(height, base)?;
        Ok(Self {
            channels,
            height,
            base,
            factor,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.height
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn factor(&self) -> PackingFactor {
        self.factor
    }

    /// Slots a ciphertext needs for this layout.
    pub fn grid_slots(&self) -> usize {
        self.base * self.base
    }

    /// Channels multiplexed in one ciphertext (1 for `g >= 1`).
    pub fn channels_per_ct(&self) -> usize {
        match self.factor.gap() {
            Some(t) => t * t,
            None => 1,
        }
    }

    pub fn ciphertext_count(&self) -> usize {
        match self.factor.interleave() {
            Some(g) => self.channels * g * g,
            None => self.channels.div_ceil(self.channels_per_ct()),
        }
    }

    /// Same base grid, new channel count and resolution.
    pub fn resized(&self, channels: usize, height: usize) -> Result<Self> {
        Self::new(channels, height, self.base)
    }

    pub fn check_capacity(&self, slot_count: usize) -> Result<()> {
        if self.grid_slots() > slot_count {
            return Err(Error::InvalidLayout(format!(
                "base size {} needs {} slots, ciphertexts have {slot_count}",
                self.base,
                self.grid_slots()
            )));
        }
        Ok(())
    }

    pub fn index_map(&self, c: usize, y: usize, x: usize) -> Result<SlotIndex> {
        if c >= self.channels || y >= self.height || x >= self.height {
            return Err(Error::IndexOutOfRange { c, y, x });
        }
        let loc = self.locate(c, y, x);
        Ok(SlotIndex {
            ct: loc.ct,
            slot: loc.slot,
        })
    }

    /// Unchecked index map with the multiplexing offset.
    pub(crate) fn locate(&self, c: usize, y: usize, x: usize) -> Location {
        let b = self.base;
        match self.factor.interleave() {
            Some(g) => Location {
                ct: c * g * g + (y % g) * g + (x % g),
                slot: (y / g) * b + x / g,
                offset: (0, 0),
            },
            None => {
                let t = self.factor.gap().unwrap();
                let m = c % (t * t);
                let (my, mx) = (m / t, m % t);
                Location {
                    ct: c / (t * t),
                    slot: (y * t + my) * b + (x * t + mx),
                    offset: (my, mx),
                }
            }
        }
    }

    /// Channels present in ciphertext `ct`.
    pub fn channels_in_ct(&self, ct: usize) -> core::ops::Range<usize> {
        match self.factor.interleave() {
            Some(g) => {
                let c = ct / (g * g);
                c..c + 1
            }
            None => {
                let per = self.channels_per_ct();
                let start = ct * per;
                start..(start + per).min(self.channels)
            }
        }
    }

    /// Slot vector for ciphertext `ct` holding `value(c)` on every active slot
    /// of channel `c` and zero elsewhere.
    pub fn channel_vector(
        &self,
        ct: usize,
        slot_count: usize,
        mut value: impl FnMut(usize) -> f64,
    ) -> Vec<f64> {
        let mut out = vec![0.0; slot_count];
        for c in self.channels_in_ct(ct) {
            let v = value(c);
            self.for_each_slot_of(ct, c, |slot| out[slot] = v);
        }
        out
    }

    /// Calls `f(slot)` for every active slot of channel `c` in ciphertext `ct`.
    fn for_each_slot_of(&self, ct: usize, c: usize, mut f: impl FnMut(usize)) {
        let b = self.base;
        match self.factor.interleave() {
            Some(_) => {
                // Every grid cell of an interleaved ciphertext is active.
                let _ = (ct, c);
                (0..b * b).for_each(f);
            }
            None => {
                let t = self.factor.gap().unwrap();
                let m = c % (t * t);
                let (my, mx) = (m / t, m % t);
                for y in 0..self.height {
                    for x in 0..self.height {
                        f((y * t + my) * b + x * t + mx);
                    }
                }
            }
        }
    }
}

/// Plain `C x H x W` tensor, stored `(c, y, x)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl PlainTensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for shape {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Largest absolute elementwise difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &PlainTensor) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max)
    }
}

/// Ciphertexts of one feature map plus the layout that describes them.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedTensor {
    layout: GipLayout,
    cts: Vec<SlotVector>,
}

impl PackedTensor {
    pub fn new(layout: GipLayout, cts: Vec<SlotVector>) -> Result<Self> {
        if cts.len() != layout.ciphertext_count() {
            return Err(Error::CiphertextCount {
                expected: layout.ciphertext_count(),
                got: cts.len(),
            });
        }
        if let Some(first) = cts.first() {
            if cts.iter().any(|ct| ct.context_id() != first.context_id()) {
                return Err(Error::ContextMismatch);
            }
            if cts.iter().any(|ct| ct.level() != first.level()) {
                return Err(Error::MixedLevels);
            }
        }
        Ok(Self { layout, cts })
    }

    pub fn layout(&self) -> &GipLayout {
        &self.layout
    }

    pub fn cts(&self) -> &[SlotVector] {
        &self.cts
    }

    pub fn into_cts(self) -> Vec<SlotVector> {
        self.cts
    }

    pub fn level(&self) -> u32 {
        self.cts.first().map_or(0, SlotVector::level)
    }
}

/// Packs a square power-of-two tensor on a `base x base` grid at the
/// context's maximum level.
pub fn pack(x: &PlainTensor, base: usize, ctx: &HEContext) -> Result<PackedTensor> {
    if x.height() != x.width() {
        return Err(Error::InvalidLayout(format!(
            "feature map {}x{} is not square",
            x.height(),
            x.width()
        )));
    }
    let layout = GipLayout::new(x.channels(), x.height(), base)?;
    layout.check_capacity(ctx.slot_count())?;
    let mut slots = vec![vec![0.0; ctx.slot_count()]; layout.ciphertext_count()];
    for c in 0..x.channels() {
        for y in 0..x.height() {
            for xx in 0..x.width() {
                let loc = layout.locate(c, y, xx);
                slots[loc.ct][loc.slot] = x.get(c, y, xx);
            }
        }
    }
    let cts = slots
        .into_iter()
        .map(|s| ctx.encrypt(s))
        .collect::<Result<Vec<_>>>()?;
    PackedTensor::new(layout, cts)
}

/// Inverse of [`pack`]. Inactive slots are ignored.
pub fn unpack(p: &PackedTensor) -> Result<PlainTensor> {
    let layout = p.layout();
    if p.cts().len() != layout.ciphertext_count() {
        return Err(Error::CiphertextCount {
            expected: layout.ciphertext_count(),
            got: p.cts().len(),
        });
    }
    let h = layout.height();
    let mut out = PlainTensor::zeros(layout.channels(), h, h);
    for c in 0..layout.channels() {
        for y in 0..h {
            for x in 0..h {
                let loc = layout.locate(c, y, x);
                let ct = &p.cts()[loc.ct];
                if loc.slot >= ct.slots().len() {
                    return Err(Error::InvalidLayout(format!(
                        "slot {} outside ciphertext of {} slots",
                        loc.slot,
                        ct.slots().len()
                    )));
                }
                out.set(c, y, x, ct.slots()[loc.slot]);
            }
        }
    }
    Ok(out)
}

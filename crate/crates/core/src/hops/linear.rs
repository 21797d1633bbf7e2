//! Rotate-multiply-accumulate schedules for packed linear operators.
//!
//! Every spatial linear operator here (convolution, transposed convolution,
//! pooling, multiplexed upsampling) is described as a list of contributions
//! `out[(co, oy, ox)] += w * in[(ci, iy, ix)]`. Each contribution is mapped to
//! slot positions and its slot displacement `d = in_slot - out_slot` is split
//! in two:
//!
//! * `post`, the difference of the multiplexing cell offsets, applied as a
//!   rotation of the accumulated output (shared by all inputs), and
//! * `pre = d - post`, the kernel tap displacement, applied as a rotation of
//!   the input ciphertext (shared by all outputs).
//!
//! Contributions with the same `(out_ct, post, in_ct, pre)` share one
//! plaintext mask, so an output ciphertext is
//! `sum_post rot(sum_{in_ct, pre} rot(in, pre) * mask, post)`. Masks are zero
//! wherever a tap falls outside the image, so the whole operator costs one
//! level and never writes to inactive slots.
//!
//! For interleaved layouts `post` is always zero and the schedule reduces to
//! per-tap rotations of input sub-channels.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::packing::{GipLayout, PackedTensor};
use crate::slotvm::{HEContext, OpCounts, SlotVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct GroupKey {
    out_ct: usize,
    post: usize,
    in_ct: usize,
    pre: usize,
}

pub(crate) struct LinearMap {
    input: GipLayout,
    output: GipLayout,
    slot_count: usize,
    /// Sparse mask entries `(slot, weight)` per group.
    groups: BTreeMap<GroupKey, Vec<(usize, f64)>>,
    /// Per-output-channel constant added after accumulation.
    bias: Option<Vec<f64>>,
}

impl LinearMap {
    pub fn new(input: GipLayout, output: GipLayout, slot_count: usize) -> Result<Self> {
        input.check_capacity(slot_count)?;
        output.check_capacity(slot_count)?;
        if input.base() != output.base() {
            return Err(Error::InvalidLayout(alloc::format!(
                "base size changes from {} to {}",
                input.base(),
                output.base()
            )));
        }
        Ok(Self {
            input,
            output,
            slot_count,
            groups: BTreeMap::new(),
            bias: None,
        })
    }

    pub fn output_layout(&self) -> GipLayout {
        self.output
    }

    pub fn set_bias(&mut self, bias: Vec<f64>) {
        debug_assert_eq!(bias.len(), self.output.channels());
        self.bias = Some(bias);
    }

    /// Adds `w * in[ci, iy, ix]` to `out[co, oy, ox]`. Indices must be in
    /// range for the respective layouts.
    pub fn push(&mut self, out: (usize, usize, usize), inp: (usize, usize, usize), w: f64) {
        let o = self.output.locate(out.0, out.1, out.2);
        let i = self.input.locate(inp.0, inp.1, inp.2);
        let s = self.slot_count as i64;
        let b = self.output.base() as i64;
        let post = (i.offset.0 as i64 - o.offset.0 as i64) * b
            + (i.offset.1 as i64 - o.offset.1 as i64);
        let pre = (i.slot as i64 - o.slot as i64) - post;
        let key = GroupKey {
            out_ct: o.ct,
            post: post.rem_euclid(s) as usize,
            in_ct: i.ct,
            pre: pre.rem_euclid(s) as usize,
        };
        let slot = (o.slot as i64 + post).rem_euclid(s) as usize;
        self.groups.entry(key).or_default().push((slot, w));
    }

    /// Operation counts of [`LinearMap::apply`], derived from the schedule
    /// structure alone.
    pub fn cost(&self) -> OpCounts {
        let pre: BTreeSet<(usize, usize)> = self
            .groups
            .keys()
            .filter(|k| k.pre != 0)
            .map(|k| (k.in_ct, k.pre))
            .collect();
        let mut per_post: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for k in self.groups.keys() {
            *per_post.entry((k.out_ct, k.post)).or_default() += 1;
        }
        let post_rotations = per_post.keys().filter(|(_, p)| *p != 0).count() as u64;
        let mut posts_per_out: BTreeMap<usize, u64> = BTreeMap::new();
        let mut adds = 0;
        for (&(out_ct, _), &n) in &per_post {
            adds += n - 1;
            *posts_per_out.entry(out_ct).or_default() += 1;
        }
        adds += posts_per_out.values().map(|n| n - 1).sum::<u64>();
        if self.bias.is_some() {
            adds += self.output.ciphertext_count() as u64;
        }
        OpCounts {
            rotations: pre.len() as u64 + post_rotations,
            pt_ct_mults: self.groups.len() as u64,
            adds,
            max_depth: 1,
            ..OpCounts::ZERO
        }
    }

    pub fn apply(&self, ctx: &HEContext, x: &PackedTensor) -> Result<PackedTensor> {
        if *x.layout() != self.input {
            return Err(Error::InvalidLayout(alloc::format!(
                "operator expects {:?}, got {:?}",
                self.input,
                x.layout()
            )));
        }
        let level = x.level();
        if level == 0 {
            return Err(Error::LevelExhausted { needed: 1, level });
        }

        let mut rotated: BTreeMap<(usize, usize), SlotVector> = BTreeMap::new();
        for k in self.groups.keys() {
            if k.pre != 0 && !rotated.contains_key(&(k.in_ct, k.pre)) {
                let r = ctx.rotate(&x.cts()[k.in_ct], k.pre as i64)?;
                rotated.insert((k.in_ct, k.pre), r);
            }
        }

        let mut outputs: Vec<Option<SlotVector>> = vec![None; self.output.ciphertext_count()];
        let mut partial: Option<SlotVector> = None;
        let mut current: Option<(usize, usize)> = None;
        for (k, entries) in &self.groups {
            if current != Some((k.out_ct, k.post)) {
                if let (Some((out_ct, post)), Some(acc)) = (current, partial.take()) {
                    self.finish(ctx, &mut outputs[out_ct], acc, post)?;
                }
                current = Some((k.out_ct, k.post));
            }
            let source = if k.pre == 0 {
                &x.cts()[k.in_ct]
            } else {
                &rotated[&(k.in_ct, k.pre)]
            };
            let mut mask = vec![0.0; self.slot_count];
            for &(slot, w) in entries {
                mask[slot] += w;
            }
            let term = ctx.mul_plain(source, &ctx.plain(mask)?)?;
            partial = Some(match partial {
                Some(acc) => ctx.add_ct(&acc, &term)?,
                None => term,
            });
        }
        if let (Some((out_ct, post)), Some(acc)) = (current, partial.take()) {
            self.finish(ctx, &mut outputs[out_ct], acc, post)?;
        }

        let mut cts = Vec::with_capacity(outputs.len());
        for (ct, out) in outputs.into_iter().enumerate() {
            let mut v = out.unwrap_or_else(|| ctx.zero(level - 1));
            if let Some(bias) = &self.bias {
                let p = self
                    .output
                    .channel_vector(ct, self.slot_count, |c| bias[c]);
                v = ctx.add_plain(&v, &ctx.plain(p)?)?;
            }
            cts.push(v);
        }
        PackedTensor::new(self.output, cts)
    }

    fn finish(
        &self,
        ctx: &HEContext,
        out: &mut Option<SlotVector>,
        acc: SlotVector,
        post: usize,
    ) -> Result<()> {
        let moved = if post == 0 {
            acc
        } else {
            ctx.rotate(&acc, post as i64)?
        };
        *out = Some(match out.take() {
            Some(prev) => ctx.add_ct(&prev, &moved)?,
            None => moved,
        });
        Ok(())
    }
}

//! Homomorphic CNN operators over packed tensors.
//!
//! Each operator has a `*_plan` twin that returns the output layout and the
//! exact operation counts without touching ciphertexts; the graph planner
//! relies on those matching what the operator actually does.

mod linear;

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::packing::{
    propagate_factor, relayout_boundary_check, GipLayout, PackedTensor, Resampling,
};
use crate::polyact::Monomial;
use crate::slotvm::{HEContext, OpCounts};

use linear::LinearMap;

/// Output layout and predicted cost of an operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpPlan {
    pub output: GipLayout,
    pub counts: OpCounts,
    /// Levels the operator consumes.
    pub depth: u32,
}

/// 2-D convolution (cross-correlation) with zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `out_channels x in_channels x kernel x kernel`, row-major.
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl ConvSpec {
    /// SAME-padded convolution (`padding = (kernel - 1) / 2`) without bias.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let spec = Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel.saturating_sub(1) / 2,
            weights,
            bias: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_bias(mut self, bias: Vec<f64>) -> Result<Self> {
        self.bias = Some(bias);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.in_channels == 0 || self.out_channels == 0
        {
            return Err(Error::InvalidParameter(
                "convolution sizes must be positive".into(),
            ));
        }
        let expected = self.out_channels * self.in_channels * self.kernel * self.kernel;
        if self.weights.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "convolution weights have {} values, expected {expected}",
                self.weights.len()
            )));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.out_channels {
                return Err(Error::ShapeMismatch(format!(
                    "convolution bias has {} values, expected {}",
                    b.len(),
                    self.out_channels
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn weight(&self, co: usize, ci: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((co * self.in_channels + ci) * self.kernel + ky) * self.kernel + kx]
    }
}

/// 2-D transposed convolution, weights laid out like `ConvTranspose2d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeconvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `in_channels x out_channels x kernel x kernel`, row-major.
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl DeconvSpec {
    /// Size-doubling geometry for the given kernel: block scatter
    /// (`kernel == stride`, no padding) or `kernel == 2*stride - 1` with
    /// `padding = stride - 1`.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let padding = if kernel == stride { 0 } else { stride.saturating_sub(1) };
        let spec = Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weights,
            bias: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_bias(mut self, bias: Vec<f64>) -> Result<Self> {
        self.bias = Some(bias);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidParameter(
                "deconvolution sizes must be positive".into(),
            ));
        }
        if self.stride < 2 || !self.stride.is_power_of_two() {
            return Err(Error::UnsupportedGeometry(format!(
                "deconvolution stride {} must be a power of two >= 2",
                self.stride
            )));
        }
        let block = self.kernel == self.stride && self.padding == 0;
        let odd = self.kernel == 2 * self.stride - 1 && self.padding == self.stride - 1;
        if !block && !odd {
            return Err(Error::UnsupportedGeometry(format!(
                "deconvolution kernel {} stride {} padding {}; supported are kernel = stride \
                 (padding 0) and kernel = 2*stride - 1 (padding stride - 1)",
                self.kernel, self.stride, self.padding
            )));
        }
        let expected = self.out_channels * self.in_channels * self.kernel * self.kernel;
        if self.weights.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "deconvolution weights have {} values, expected {expected}",
                self.weights.len()
            )));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.out_channels {
                return Err(Error::ShapeMismatch(format!(
                    "deconvolution bias has {} values, expected {}",
                    b.len(),
                    self.out_channels
                )));
            }
        }
        Ok(())
    }

    /// Extra rows/columns appended so the output is exactly `stride` times
    /// the input size.
    pub fn output_padding(&self) -> usize {
        if self.kernel == self.stride {
            0
        } else {
            self.stride - 1
        }
    }

    #[inline]
    pub fn weight(&self, ci: usize, co: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((ci * self.out_channels + co) * self.kernel + ky) * self.kernel + kx]
    }
}

/// Per-channel `scale * x + shift` (inference-time batch normalization).
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSpec {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl AffineSpec {
    pub fn new(scale: Vec<f64>, shift: Vec<f64>) -> Result<Self> {
        if scale.len() != shift.len() {
            return Err(Error::ShapeMismatch(format!(
                "affine scale has {} channels, shift has {}",
                scale.len(),
                shift.len()
            )));
        }
        Ok(Self { scale, shift })
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }
}

fn check_channels(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::ChannelMismatch { expected, got });
    }
    Ok(())
}

fn resampled_layout(
    layout: &GipLayout,
    channels: usize,
    kind: Resampling,
    stride: usize,
) -> Result<GipLayout> {
    if !stride.is_power_of_two() {
        return Err(Error::UnsupportedGeometry(format!(
            "stride {stride} is not a power of two"
        )));
    }
    let g_out = propagate_factor(layout.factor(), kind, stride);
    if !relayout_boundary_check(layout.factor(), g_out) {
        return Err(Error::SizeBarrier {
            from: layout.factor(),
            to: g_out,
        });
    }
    let height = match kind {
        Resampling::Downsample => {
            if stride > layout.height() {
                return Err(Error::UnsupportedGeometry(format!(
                    "stride {stride} exceeds feature map size {}",
                    layout.height()
                )));
            }
            layout.height() / stride
        }
        Resampling::Upsample => layout.height() * stride,
        Resampling::Preserve => layout.height(),
    };
    let out = layout.resized(channels, height)?;
    debug_assert_eq!(out.factor(), g_out);
    Ok(out)
}

fn stride_kind(stride: usize) -> Resampling {
    if stride > 1 {
        Resampling::Downsample
    } else {
        Resampling::Preserve
    }
}

fn conv_map(layout: &GipLayout, spec: &ConvSpec, slot_count: usize) -> Result<LinearMap> {
    spec.validate()?;
    check_channels(spec.in_channels, layout.channels())?;
    if spec.kernel.is_multiple_of(2) {
        return Err(Error::UnsupportedGeometry(format!(
            "convolution kernel {} must be odd",
            spec.kernel
        )));
    }
    if spec.padding != (spec.kernel - 1) / 2 {
        return Err(Error::UnsupportedGeometry(format!(
            "convolution padding {} must be (kernel - 1) / 2 = {}",
            spec.padding,
            (spec.kernel - 1) / 2
        )));
    }
    let out_layout = resampled_layout(
        layout,
        spec.out_channels,
        stride_kind(spec.stride),
        spec.stride,
    )?;
    let mut map = LinearMap::new(*layout, out_layout, slot_count)?;
    let (h_in, h_out) = (layout.height() as isize, out_layout.height());
    let (k, s, p) = (spec.kernel, spec.stride as isize, spec.padding as isize);
    for oy in 0..h_out {
        for ox in 0..h_out {
            for ky in 0..k {
                let iy = oy as isize * s + ky as isize - p;
                if iy < 0 || iy >= h_in {
                    continue;
                }
                for kx in 0..k {
                    let ix = ox as isize * s + kx as isize - p;
                    if ix < 0 || ix >= h_in {
                        continue;
                    }
                    for co in 0..spec.out_channels {
                        for ci in 0..spec.in_channels {
                            map.push(
                                (co, oy, ox),
                                (ci, iy as usize, ix as usize),
                                spec.weight(co, ci, ky, kx),
                            );
                        }
                    }
                }
            }
        }
    }
    if let Some(b) = &spec.bias {
        map.set_bias(b.clone());
    }
    Ok(map)
}

fn plan_of(map: &LinearMap) -> OpPlan {
    OpPlan {
        output: map.output_layout(),
        counts: map.cost(),
        depth: 1,
    }
}

/// Strided SAME convolution on a packed tensor. Consumes one level; the
/// output packing factor is `g / stride`.
pub fn conv2d(ctx: &HEContext, x: &PackedTensor, spec: &ConvSpec) -> Result<PackedTensor> {
    conv_map(x.layout(), spec, ctx.slot_count())?.apply(ctx, x)
}

pub fn conv2d_plan(layout: &GipLayout, spec: &ConvSpec, slot_count: usize) -> Result<OpPlan> {
    Ok(plan_of(&conv_map(layout, spec, slot_count)?))
}

fn deconv_map(layout: &GipLayout, spec: &DeconvSpec, slot_count: usize) -> Result<LinearMap> {
    spec.validate()?;
    check_channels(spec.in_channels, layout.channels())?;
    let out_layout = resampled_layout(layout, spec.out_channels, Resampling::Upsample, spec.stride)?;
    let mut map = LinearMap::new(*layout, out_layout, slot_count)?;
    let (h_in, h_out) = (layout.height(), out_layout.height() as isize);
    let (k, s, p) = (spec.kernel, spec.stride as isize, spec.padding as isize);
    for iy in 0..h_in {
        for ix in 0..h_in {
            for ky in 0..k {
                let oy = iy as isize * s + ky as isize - p;
                if oy < 0 || oy >= h_out {
                    continue;
                }
                for kx in 0..k {
                    let ox = ix as isize * s + kx as isize - p;
                    if ox < 0 || ox >= h_out {
                        continue;
                    }
                    for ci in 0..spec.in_channels {
                        for co in 0..spec.out_channels {
                            map.push(
                                (co, oy as usize, ox as usize),
                                (ci, iy, ix),
                                spec.weight(ci, co, ky, kx),
                            );
                        }
                    }
                }
            }
        }
    }
    if let Some(b) = &spec.bias {
        map.set_bias(b.clone());
    }
    Ok(map)
}

/// Transposed convolution. Each output sub-channel class gathers the kernel
/// taps that scatter onto it; the output factor is `g * stride`.
pub fn deconv2d(ctx: &HEContext, x: &PackedTensor, spec: &DeconvSpec) -> Result<PackedTensor> {
    deconv_map(x.layout(), spec, ctx.slot_count())?.apply(ctx, x)
}

pub fn deconv2d_plan(layout: &GipLayout, spec: &DeconvSpec, slot_count: usize) -> Result<OpPlan> {
    Ok(plan_of(&deconv_map(layout, spec, slot_count)?))
}

fn avgpool_map(
    layout: &GipLayout,
    window: usize,
    stride: usize,
    slot_count: usize,
) -> Result<LinearMap> {
    if window != stride {
        return Err(Error::OverlappingWindow { window, stride });
    }
    if stride == 0 {
        return Err(Error::InvalidParameter("pooling stride must be positive".into()));
    }
    let out_layout = resampled_layout(layout, layout.channels(), stride_kind(stride), stride)?;
    let mut map = LinearMap::new(*layout, out_layout, slot_count)?;
    let w = 1.0 / (stride * stride) as f64;
    for c in 0..layout.channels() {
        for oy in 0..out_layout.height() {
            for ox in 0..out_layout.height() {
                for u in 0..stride {
                    for v in 0..stride {
                        map.push((c, oy, ox), (c, oy * stride + u, ox * stride + v), w);
                    }
                }
            }
        }
    }
    Ok(map)
}

/// Non-overlapping average pooling (`window == stride`), a depthwise
/// convolution with a constant `1/s^2` kernel.
pub fn avgpool(ctx: &HEContext, x: &PackedTensor, window: usize, stride: usize) -> Result<PackedTensor> {
    avgpool_map(x.layout(), window, stride, ctx.slot_count())?.apply(ctx, x)
}

pub fn avgpool_plan(
    layout: &GipLayout,
    window: usize,
    stride: usize,
    slot_count: usize,
) -> Result<OpPlan> {
    Ok(plan_of(&avgpool_map(layout, window, stride, slot_count)?))
}

fn upsample_map(layout: &GipLayout, factor: usize, slot_count: usize) -> Result<LinearMap> {
    let out_layout = resampled_layout(layout, layout.channels(), Resampling::Upsample, factor)?;
    let mut map = LinearMap::new(*layout, out_layout, slot_count)?;
    for c in 0..layout.channels() {
        for oy in 0..out_layout.height() {
            for ox in 0..out_layout.height() {
                map.push((c, oy, ox), (c, oy / factor, ox / factor), 1.0);
            }
        }
    }
    Ok(map)
}

/// Nearest-neighbour upsampling by `factor`.
///
/// On interleaved inputs (`g >= 1`) every output sub-channel is a copy of an
/// input ciphertext: no rotations, no multiplications, no level. Multiplexed
/// inputs have to separate channels that share a ciphertext, which costs one
/// masked pass (one level).
pub fn upsample_nearest(ctx: &HEContext, x: &PackedTensor, factor: usize) -> Result<PackedTensor> {
    let layout = x.layout();
    if factor == 0 || !factor.is_power_of_two() {
        return Err(Error::UnsupportedGeometry(format!(
            "upsampling factor {factor} is not a power of two"
        )));
    }
    match layout.factor().interleave() {
        Some(g) => {
            let out = resampled_layout(layout, layout.channels(), Resampling::Upsample, factor)?;
            let g_out = g * factor;
            let mut cts = Vec::with_capacity(out.ciphertext_count());
            for c in 0..layout.channels() {
                for ay in 0..g_out {
                    for ax in 0..g_out {
                        let src = c * g * g + (ay / factor) * g + ax / factor;
                        cts.push(x.cts()[src].clone());
                    }
                }
            }
            PackedTensor::new(out, cts)
        }
        None => upsample_map(layout, factor, ctx.slot_count())?.apply(ctx, x),
    }
}

pub fn upsample_plan(layout: &GipLayout, factor: usize, slot_count: usize) -> Result<OpPlan> {
    if factor == 0 || !factor.is_power_of_two() {
        return Err(Error::UnsupportedGeometry(format!(
            "upsampling factor {factor} is not a power of two"
        )));
    }
    if layout.factor().interleave().is_some() {
        let output = resampled_layout(layout, layout.channels(), Resampling::Upsample, factor)?;
        output.check_capacity(slot_count)?;
        return Ok(OpPlan {
            output,
            counts: OpCounts::ZERO,
            depth: 0,
        });
    }
    Ok(plan_of(&upsample_map(layout, factor, slot_count)?))
}

/// Per-channel affine map. One plaintext multiplication and one plaintext
/// addition per ciphertext.
pub fn batchnorm_affine(ctx: &HEContext, x: &PackedTensor, spec: &AffineSpec) -> Result<PackedTensor> {
    let plan = batchnorm_plan(x.layout(), spec, ctx.slot_count())?;
    let layout = x.layout();
    let mut cts = Vec::with_capacity(x.cts().len());
    for (i, ct) in x.cts().iter().enumerate() {
        let scale = ctx.plain(layout.channel_vector(i, ctx.slot_count(), |c| spec.scale[c]))?;
        let shift = ctx.plain(layout.channel_vector(i, ctx.slot_count(), |c| spec.shift[c]))?;
        let y = ctx.mul_plain(ct, &scale)?;
        cts.push(ctx.add_plain(&y, &shift)?);
    }
    PackedTensor::new(plan.output, cts)
}

pub fn batchnorm_plan(layout: &GipLayout, spec: &AffineSpec, slot_count: usize) -> Result<OpPlan> {
    check_channels(spec.channels(), layout.channels())?;
    layout.check_capacity(slot_count)?;
    let n = layout.ciphertext_count() as u64;
    Ok(OpPlan {
        output: *layout,
        counts: OpCounts {
            pt_ct_mults: n,
            adds: n,
            max_depth: 1,
            ..OpCounts::ZERO
        },
        depth: 1,
    })
}

/// Levels consumed by [`polyact_eval`].
pub const POLY_DEPTH: u32 = 3;

/// Evaluates `a0 + a1 v + a2 v^2 + a3 v^3 + a4 v^4` on every active slot with
/// the slot's own channel coefficients.
///
/// Schedule per ciphertext, three levels deep:
/// `v2 = v*v`, `inner = a4*v2 + a3*v + a2`, `out = v2*inner + a1*v + a0`.
/// That is two ciphertext products, three plaintext products and four
/// additions. Constant terms are masked to the active slots.
pub fn polyact_eval(ctx: &HEContext, x: &PackedTensor, coeffs: &[Monomial]) -> Result<PackedTensor> {
    let plan = polyact_plan(x.layout(), coeffs, ctx.slot_count())?;
    if x.level() < POLY_DEPTH {
        return Err(Error::LevelExhausted {
            needed: POLY_DEPTH,
            level: x.level(),
        });
    }
    let layout = x.layout();
    let s = ctx.slot_count();
    let mut cts = Vec::with_capacity(x.cts().len());
    for (i, v) in x.cts().iter().enumerate() {
        let coeff = |j: usize| ctx.plain(layout.channel_vector(i, s, |c| coeffs[c].0[j]));
        let v2 = ctx.mul_ct(v, v)?;
        let hi = ctx.mul_plain(&v2, &coeff(4)?)?;
        let mid = ctx.mul_plain(v, &coeff(3)?)?;
        let inner = ctx.add_plain(&ctx.add_ct(&hi, &mid)?, &coeff(2)?)?;
        let upper = ctx.mul_ct(&v2, &inner)?;
        let linear = ctx.mul_plain(v, &coeff(1)?)?;
        let out = ctx.add_plain(&ctx.add_ct(&upper, &linear)?, &coeff(0)?)?;
        cts.push(out);
    }
    PackedTensor::new(plan.output, cts)
}

pub fn polyact_plan(layout: &GipLayout, coeffs: &[Monomial], slot_count: usize) -> Result<OpPlan> {
    check_channels(layout.channels(), coeffs.len())?;
    layout.check_capacity(slot_count)?;
    let per_ct = OpCounts {
        ct_ct_mults: 2,
        pt_ct_mults: 3,
        adds: 4,
        max_depth: POLY_DEPTH,
        ..OpCounts::ZERO
    };
    Ok(OpPlan {
        output: *layout,
        counts: per_ct.times(layout.ciphertext_count() as u64),
        depth: POLY_DEPTH,
    })
}

/// Slot-wise sum of two tensors with identical layouts (residual join).
pub fn add(ctx: &HEContext, a: &PackedTensor, b: &PackedTensor) -> Result<PackedTensor> {
    if a.layout() != b.layout() {
        return Err(Error::InvalidLayout(format!(
            "cannot add {:?} and {:?}",
            a.layout(),
            b.layout()
        )));
    }
    let cts = a
        .cts()
        .iter()
        .zip(b.cts())
        .map(|(x, y)| ctx.add_ct(x, y))
        .collect::<Result<Vec<_>>>()?;
    PackedTensor::new(*a.layout(), cts)
}

pub fn add_plan(layout: &GipLayout) -> OpPlan {
    OpPlan {
        output: *layout,
        counts: OpCounts {
            adds: layout.ciphertext_count() as u64,
            ..OpCounts::ZERO
        },
        depth: 0,
    }
}

/// Refreshes every ciphertext of a tensor.
pub fn bootstrap(ctx: &HEContext, x: &PackedTensor) -> Result<PackedTensor> {
    let cts = x
        .cts()
        .iter()
        .map(|ct| ctx.bootstrap(ct))
        .collect::<Result<Vec<_>>>()?;
    PackedTensor::new(*x.layout(), cts)
}

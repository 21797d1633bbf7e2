//! Plaintext reference operators.
//!
//! Direct nested-loop definitions, written without any of the packing or
//! scheduling code so that differential tests compare two independent
//! routes. Speed is not a goal.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hops::{AffineSpec, ConvSpec, DeconvSpec};
use crate::packing::PlainTensor;
use crate::polyact::Monomial;

/// Cross-correlation with zero padding and stride:
/// `out[co, oy, ox] = b[co] + sum w[co, ci, ky, kx] * x[ci, oy*s + ky - p, ox*s + kx - p]`.
pub fn conv2d_ref(x: &PlainTensor, spec: &ConvSpec) -> Result<PlainTensor> {
    if x.channels() != spec.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "input has {} channels, kernel expects {}",
            x.channels(),
            spec.in_channels
        )));
    }
    let (k, s, p) = (spec.kernel, spec.stride, spec.padding);
    if x.height() + 2 * p < k || x.width() + 2 * p < k {
        return Err(Error::ShapeMismatch("kernel larger than padded input".into()));
    }
    let oh = (x.height() + 2 * p - k) / s + 1;
    let ow = (x.width() + 2 * p - k) / s + 1;
    let mut out = PlainTensor::zeros(spec.out_channels, oh, ow);
    for co in 0..spec.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = spec.bias.as_ref().map_or(0.0, |b| b[co]);
                for ci in 0..spec.in_channels {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * s + ky) as isize - p as isize;
                            let ix = (ox * s + kx) as isize - p as isize;
                            if iy < 0
                                || ix < 0
                                || iy >= x.height() as isize
                                || ix >= x.width() as isize
                            {
                                continue;
                            }
                            let w = spec.weights
                                [((co * spec.in_channels + ci) * k + ky) * k + kx];
                            acc += w * x.get(ci, iy as usize, ix as usize);
                        }
                    }
                }
                out.set(co, oy, ox, acc);
            }
        }
    }
    Ok(out)
}

/// Transposed convolution: every input pixel scatters `x * w[ci, co, :, :]`
/// onto the output at `(iy*s + ky - p, ix*s + kx - p)`. Output size is
/// `(H - 1)*s + k - 2p + output_padding`.
pub fn deconv2d_ref(x: &PlainTensor, spec: &DeconvSpec) -> Result<PlainTensor> {
    if x.channels() != spec.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "input has {} channels, kernel expects {}",
            x.channels(),
            spec.in_channels
        )));
    }
    let (k, s, p, op) = (spec.kernel, spec.stride, spec.padding, spec.output_padding());
    let oh = (x.height() - 1) * s + k + op - 2 * p;
    let ow = (x.width() - 1) * s + k + op - 2 * p;
    let mut out = PlainTensor::zeros(spec.out_channels, oh, ow);
    if let Some(b) = &spec.bias {
        for (co, bias) in b.iter().enumerate() {
            for oy in 0..oh {
                for ox in 0..ow {
                    out.set(co, oy, ox, *bias);
                }
            }
        }
    }
    for ci in 0..spec.in_channels {
        for iy in 0..x.height() {
            for ix in 0..x.width() {
                let v = x.get(ci, iy, ix);
                for co in 0..spec.out_channels {
                    for ky in 0..k {
                        for kx in 0..k {
                            let oy = (iy * s + ky) as isize - p as isize;
                            let ox = (ix * s + kx) as isize - p as isize;
                            if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                continue;
                            }
                            let w = spec.weights
                                [((ci * spec.out_channels + co) * k + ky) * k + kx];
                            let (oy, ox) = (oy as usize, ox as usize);
                            out.set(co, oy, ox, out.get(co, oy, ox) + v * w);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Mean over `window x window` blocks taken every `stride` pixels.
pub fn avgpool_ref(x: &PlainTensor, window: usize, stride: usize) -> Result<PlainTensor> {
    if window == 0 || stride == 0 || window > x.height() || window > x.width() {
        return Err(Error::ShapeMismatch(format!(
            "pooling window {window} does not fit {}x{}",
            x.height(),
            x.width()
        )));
    }
    let oh = (x.height() - window) / stride + 1;
    let ow = (x.width() - window) / stride + 1;
    let mut out = PlainTensor::zeros(x.channels(), oh, ow);
    let n = (window * window) as f64;
    for c in 0..x.channels() {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut sum = 0.0;
                for u in 0..window {
                    for v in 0..window {
                        sum += x.get(c, oy * stride + u, ox * stride + v);
                    }
                }
                out.set(c, oy, ox, sum / n);
            }
        }
    }
    Ok(out)
}

/// Max over `window x window` blocks; only used to check graph conversion.
pub fn maxpool_ref(x: &PlainTensor, window: usize, stride: usize) -> Result<PlainTensor> {
    if window == 0 || stride == 0 || window > x.height() || window > x.width() {
        return Err(Error::ShapeMismatch(format!(
            "pooling window {window} does not fit {}x{}",
            x.height(),
            x.width()
        )));
    }
    let oh = (x.height() - window) / stride + 1;
    let ow = (x.width() - window) / stride + 1;
    Ok(PlainTensor::from_fn(x.channels(), oh, ow, |c, oy, ox| {
        let mut m = f64::NEG_INFINITY;
        for u in 0..window {
            for v in 0..window {
                m = m.max(x.get(c, oy * stride + u, ox * stride + v));
            }
        }
        m
    }))
}

/// Each pixel repeated into a `factor x factor` block.
pub fn upsample_ref(x: &PlainTensor, factor: usize) -> PlainTensor {
    PlainTensor::from_fn(
        x.channels(),
        x.height() * factor,
        x.width() * factor,
        |c, y, xx| x.get(c, y / factor, xx / factor),
    )
}

pub fn affine_ref(x: &PlainTensor, spec: &AffineSpec) -> Result<PlainTensor> {
    if spec.scale.len() != x.channels() || spec.shift.len() != x.channels() {
        return Err(Error::ShapeMismatch(format!(
            "affine parameters for {} channels, input has {}",
            spec.scale.len(),
            x.channels()
        )));
    }
    Ok(PlainTensor::from_fn(x.channels(), x.height(), x.width(), |c, y, xx| {
        spec.scale[c] * x.get(c, y, xx) + spec.shift[c]
    }))
}

/// `sum_j a_j v^j` with each channel's own coefficients, powers expanded
/// explicitly.
pub fn polyact_ref(x: &PlainTensor, coeffs: &[Monomial]) -> Result<PlainTensor> {
    if coeffs.len() != x.channels() {
        return Err(Error::ShapeMismatch(format!(
            "{} coefficient sets for {} channels",
            coeffs.len(),
            x.channels()
        )));
    }
    Ok(PlainTensor::from_fn(x.channels(), x.height(), x.width(), |c, y, xx| {
        let v = x.get(c, y, xx);
        let a = coeffs[c].0;
        a[0] + a[1] * v + a[2] * v * v + a[3] * v * v * v + a[4] * v * v * v * v
    }))
}

pub fn relu_ref(x: &PlainTensor) -> PlainTensor {
    PlainTensor::from_fn(x.channels(), x.height(), x.width(), |c, y, xx| {
        x.get(c, y, xx).max(0.0)
    })
}

pub fn add_ref(a: &PlainTensor, b: &PlainTensor) -> Result<PlainTensor> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "cannot add {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    PlainTensor::from_vec(a.channels(), a.height(), a.width(), data)
}

/// `<a, b>` over all elements.
pub fn inner(a: &PlainTensor, b: &PlainTensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

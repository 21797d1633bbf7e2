//! Degree-4 polynomial activations with per-channel range normalization.
//!
//! The polynomial is a weighted sum of the first five orthonormal
//! (probabilists') Hermite polynomials. During calibration each channel is
//! normalized by `q_c = M_c / gamma + eps`, where `M_c` is the channel's
//! largest absolute input, and the result is rescaled by `q_c`. At inference
//! `M_c` is replaced by a running statistic, so the activation collapses into
//! a fixed per-channel polynomial `sum_j c_j x^j` with `c_j = a_j q^(1-j)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::packing::PlainTensor;

const SQRT_2: f64 = core::f64::consts::SQRT_2;
/// sqrt(6)
const SQRT_6: f64 = 2.449_489_742_783_178;

/// Number of samples used by [`approx_error`].
pub const APPROX_SAMPLES: usize = 100_001;

/// Orthonormal Hermite basis function `h_i(x)`, `i` in `0..=4`.
pub fn hermite_eval(i: usize, x: f64) -> Result<f64> {
    let x2 = x * x;
    Ok(match i {
        0 => 1.0,
        1 => x,
        2 => (x2 - 1.0) / SQRT_2,
        3 => (x2 * x - 3.0 * x) / SQRT_6,
        4 => (x2 * x2 - 6.0 * x2 + 3.0) / (2.0 * SQRT_6),
        _ => return Err(Error::HermiteIndex(i)),
    })
}

/// Named coefficient sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    Relu,
    Silu,
}

impl Preset {
    pub fn coeffs(self) -> HermiteCoeffs {
        match self {
            Preset::Relu => HermiteCoeffs::RELU,
            Preset::Silu => HermiteCoeffs::SILU,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Relu => "relu",
            Preset::Silu => "silu",
        }
    }

    pub fn from_name(name: &str) -> Option<Preset> {
        match name {
            "relu" => Some(Preset::Relu),
            "silu" => Some(Preset::Silu),
            _ => None,
        }
    }

    /// The activation the preset approximates.
    pub fn target(self, x: f64) -> f64 {
        match self {
            Preset::Relu => relu(x),
            Preset::Silu => silu(x),
        }
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + libm::exp(-x))
}

/// Coefficients `f_0..f_4` of `poly(x) = sum_i f_i h_i(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermiteCoeffs(pub [f64; 5]);

impl HermiteCoeffs {
    pub const RELU: HermiteCoeffs =
        HermiteCoeffs([0.39894228, 0.5, 0.28209479, 0.0, -0.08143375]);
    pub const SILU: HermiteCoeffs =
        HermiteCoeffs([0.20662096, 0.5, 0.24808519, 0.0, -0.03780501]);

    /// `poly(x)` evaluated in the Hermite basis.
    pub fn eval(&self, x: f64) -> f64 {
        (0..5)
            .map(|i| self.0[i] * hermite_eval(i, x).unwrap())
            .sum()
    }

    /// Expansion in the monomial basis `1, x, .., x^4`.
    pub fn to_monomial(&self) -> Monomial {
        let [f0, f1, f2, f3, f4] = self.0;
        Monomial([
            f0 - f2 / SQRT_2 + 3.0 * f4 / (2.0 * SQRT_6),
            f1 - 3.0 * f3 / SQRT_6,
            f2 / SQRT_2 - 6.0 * f4 / (2.0 * SQRT_6),
            f3 / SQRT_6,
            f4 / (2.0 * SQRT_6),
        ])
    }

    /// Inverse of [`HermiteCoeffs::to_monomial`].
    pub fn from_monomial(a: &Monomial) -> HermiteCoeffs {
        let [a0, a1, a2, a3, a4] = a.0;
        let f4 = a4 * 2.0 * SQRT_6;
        let f3 = a3 * SQRT_6;
        let f2 = (a2 + 6.0 * a4) * SQRT_2;
        let f1 = a1 + 3.0 * a3;
        let f0 = a0 + a2 + 3.0 * a4;
        HermiteCoeffs([f0, f1, f2, f3, f4])
    }
}

/// Polynomial `sum_j a_j x^j`, `j` in `0..=4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Monomial(pub [f64; 5]);

impl Monomial {
    pub fn eval(&self, x: f64) -> f64 {
        let a = &self.0;
        (((a[4] * x + a[3]) * x + a[2]) * x + a[1]) * x + a[0]
    }
}

/// Fixed inference polynomial for range scale `q`:
/// `sum_j c_j x^j == q * poly(x / q)`.
pub fn fuse_inference(f: &HermiteCoeffs, q: f64) -> Result<Monomial> {
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::NonPositiveScale(q));
    }
    let a = f.to_monomial().0;
    let mut c = [0.0; 5];
    let mut scale = q; // q^(1 - j)
    for j in 0..5 {
        c[j] = a[j] * scale;
        scale /= q;
    }
    Ok(Monomial(c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

/// State of one PolyAct-RN layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyActState {
    pub coeffs: HermiteCoeffs,
    pub gamma: f64,
    pub beta: f64,
    pub epsilon: f64,
    /// Running per-channel maximum, `M_c^inf`.
    pub running_max: Vec<f64>,
    pub mode: Mode,
}

impl PolyActState {
    pub const DEFAULT_GAMMA: f64 = 3.0;
    pub const DEFAULT_BETA: f64 = 0.9;
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    /// Inference-mode state with running statistics initialized to 1.
    pub fn new(coeffs: HermiteCoeffs, channels: usize) -> Self {
        Self {
            coeffs,
            gamma: Self::DEFAULT_GAMMA,
            beta: Self::DEFAULT_BETA,
            epsilon: Self::DEFAULT_EPSILON,
            running_max: vec![1.0; channels],
            mode: Mode::Inference,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "range parameter gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::InvalidParameter(format!(
                "momentum beta must lie in [0, 1), got {}",
                self.beta
            )));
        }
        if self.epsilon < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Inference range scales `q_c = M_c^inf / gamma + eps`.
    pub fn inference_scales(&self) -> Vec<f64> {
        self.running_max
            .iter()
            .map(|m| m / self.gamma + self.epsilon)
            .collect()
    }

    /// Per-channel monomials for encrypted evaluation.
    pub fn fused_coefficients(&self) -> Result<Vec<Monomial>> {
        self.inference_scales()
            .into_iter()
            .map(|q| fuse_inference(&self.coeffs, q))
            .collect()
    }

    /// Training-mode forward pass: measures per-channel maxima over the
    /// batch, updates the running statistics and normalizes with the batch
    /// maxima. In inference mode this is [`PolyActState::forward_inference`].
    pub fn forward(&mut self, batch: &[PlainTensor]) -> Result<Vec<PlainTensor>> {
        if self.mode == Mode::Inference {
            return self.forward_inference(batch);
        }
        self.validate()?;
        let channels = self.check_batch(batch)?;
        if batch.is_empty() {
            return Err(Error::EmptyChannel(0));
        }
        let mut maxima = vec![0.0f64; channels];
        for x in batch {
            let plane = x.height() * x.width();
            if plane == 0 {
                return Err(Error::EmptyChannel(0));
            }
            for (c, m) in maxima.iter_mut().enumerate() {
                let chan = &x.data()[c * plane..(c + 1) * plane];
                *m = chan.iter().fold(*m, |acc, v| acc.max(libm::fabs(*v)));
            }
        }
        for (running, m) in self.running_max.iter_mut().zip(&maxima) {
            *running = self.beta * *running + (1.0 - self.beta) * m;
        }
        let scales: Vec<f64> = maxima.iter().map(|m| m / self.gamma + self.epsilon).collect();
        Ok(self.apply(batch, &scales))
    }

    /// Fixed-polynomial forward pass; does not touch the state.
    pub fn forward_inference(&self, batch: &[PlainTensor]) -> Result<Vec<PlainTensor>> {
        self.validate()?;
        self.check_batch(batch)?;
        let scales = self.inference_scales();
        if let Some(c) = scales.iter().position(|q| !(*q > 0.0)) {
            return Err(Error::NonPositiveScale(scales[c]));
        }
        Ok(self.apply(batch, &scales))
    }

    fn apply(&self, batch: &[PlainTensor], scales: &[f64]) -> Vec<PlainTensor> {
        batch
            .iter()
            .map(|x| {
                PlainTensor::from_fn(x.channels(), x.height(), x.width(), |c, y, xx| {
                    let q = scales[c];
                    q * self.coeffs.eval(x.get(c, y, xx) / q)
                })
            })
            .collect()
    }

    fn check_batch(&self, batch: &[PlainTensor]) -> Result<usize> {
        let channels = self.running_max.len();
        for x in batch {
            if x.channels() != channels {
                return Err(Error::ChannelMismatch {
                    expected: channels,
                    got: x.channels(),
                });
            }
        }
        Ok(channels)
    }
}

/// Maximum and mean absolute approximation error of `poly` against `target`
/// on [`APPROX_SAMPLES`] evenly spaced points of `[-gamma, gamma]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxError {
    pub max_abs: f64,
    pub mean_abs: f64,
}

pub fn approx_error(f: &HermiteCoeffs, target: Preset, gamma: f64) -> Result<ApproxError> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "interval half-width must be positive, got {gamma}"
        )));
    }
    let n = APPROX_SAMPLES;
    let step = 2.0 * gamma / (n - 1) as f64;
    let mut max_abs = 0.0f64;
    let mut sum = 0.0;
    for k in 0..n {
        let x = -gamma + step * k as f64;
        let e = libm::fabs(f.eval(x) - target.target(x));
        max_abs = max_abs.max(e);
        sum += e;
    }
    Ok(ApproxError {
        max_abs,
        mean_abs: sum / n as f64,
    })
}

//! Rapp solid-state power amplifier.
//!
//! The amplifier acts on the complex envelope sample by sample: the amplitude
//! is compressed by the Rapp curve and the phase is left untouched. Its
//! effect on a multisine is computed on a `K = 2κ'N` point baseband grid,
//! where the output envelope `y[k] = A[k]·x[k]` is transformed back to bin
//! weights. Bins `N..K-1` hold the out-of-band regrowth removed by the ideal
//! band-pass filter.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{forward_dft, ExtendedSpectrum, MultisineWaveform, ENVELOPE_DELTA};

/// Envelope-spectrum tail fraction above which the grid is considered too
/// coarse for the drive level.
pub const TAIL_WARNING_FRACTION: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SspaParams {
    gain: f64,
    a_s: f64,
    beta: f64,
}

impl SspaParams {
    pub fn new(gain: f64, a_s: f64, beta: f64) -> Result<Self> {
        for (name, v) in [("gain", gain), ("saturation voltage", a_s), ("beta", beta)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Contract(format!("SSPA {name} must be positive, got {v}")));
            }
        }
        Ok(Self { gain, a_s, beta })
    }

    /// Saturation voltage given as `20·log10(A_s / 1 V)`.
    pub fn from_db(gain: f64, a_s_db: f64, beta: f64) -> Result<Self> {
        Self::new(gain, 10f64.powf(a_s_db / 20.0), beta)
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn a_s(&self) -> f64 {
        self.a_s
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Saturation power `A_s²` used by the back-off definition.
    pub fn saturation_power(&self) -> f64 {
        self.a_s * self.a_s
    }

    /// Output amplitude for input amplitude `x ≥ 0`.
    pub fn amplitude(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::Contract(format!("amplitude must be non-negative, got {x}")));
        }
        Ok(self.amplitude_unchecked(x))
    }

    pub(crate) fn amplitude_unchecked(&self, x: f64) -> f64 {
        let r = self.gain * x / self.a_s;
        let two_b = 2.0 * self.beta;
        if r <= 1.0 {
            self.gain * x / (1.0 + r.powf(two_b)).powf(1.0 / two_b)
        } else {
            // Same value, written so that r^{2β} cannot overflow.
            self.a_s / (1.0 + r.powf(-two_b)).powf(1.0 / two_b)
        }
    }

    /// Amplitude gain `A(x)/x`, continuous at zero where it equals `G`.
    pub fn gain_factor(&self, x: f64) -> f64 {
        let r = self.gain * x.abs() / self.a_s;
        let two_b = 2.0 * self.beta;
        if r <= 1.0 {
            self.gain / (1.0 + r.powf(two_b)).powf(1.0 / two_b)
        } else {
            self.gain / r / (1.0 + r.powf(-two_b)).powf(1.0 / two_b)
        }
    }

    /// Applies the amplifier to one complex envelope sample.
    pub fn apply(&self, x: Complex64) -> Complex64 {
        x * self.gain_factor(x.norm())
    }

    /// Input amplitude producing output amplitude `c`, for `0 ≤ c < A_s`.
    pub fn inverse_amplitude(&self, c: f64) -> Result<f64> {
        if !(c >= 0.0) {
            return Err(Error::Contract(format!("amplitude must be non-negative, got {c}")));
        }
        if c >= self.a_s {
            return Err(Error::SaturationInfeasible { envelope: c, a_s: self.a_s });
        }
        Ok(c * self.inverse_gain(c))
    }

    fn inverse_gain(&self, c: f64) -> f64 {
        let two_b = 2.0 * self.beta;
        let s = (c / self.a_s).powf(two_b);
        (-(-s).ln_1p() / two_b).exp() / self.gain
    }

    /// Inverse amplifier `x̃ ↦ (x̃/G)[1 − (|x̃|/A_s)^{2β}]^{−1/(2β)}`.
    pub fn inverse(&self, x: Complex64) -> Result<Complex64> {
        let c = x.norm();
        if !c.is_finite() {
            return Err(Error::Contract("inverse of a non-finite sample".into()));
        }
        if c >= self.a_s {
            return Err(Error::SaturationInfeasible { envelope: c, a_s: self.a_s });
        }
        Ok(x * self.inverse_gain(c))
    }

    /// Gain expressed in the squared envelope `u = x²`, with its first two
    /// derivatives: `(g(u), g'(u), g''(u))` where `g(u) = A(√u)/√u`.
    ///
    /// `u` must be positive; callers add `δ²` to keep it so.
    pub fn gain_in_power(&self, u: f64) -> (f64, f64, f64) {
        let g = self.gain_factor(u.sqrt());
        // s = q/(1+q) with q = (G²u/A_s²)^β, computed without overflow.
        let ln_q = self.beta * (self.gain * self.gain * u / self.saturation_power()).ln();
        let s = if ln_q > 0.0 {
            1.0 / (1.0 + (-ln_q).exp())
        } else {
            let q = ln_q.exp();
            q / (1.0 + q)
        };
        let d1 = -0.5 * g * s / u;
        let d2 = 0.5 * g * s / (u * u) * (0.5 * s - self.beta * (1.0 - s) + 1.0);
        (g, d1, d2)
    }
}

/// Maps input weights to the post-amplifier spectrum over `2κ'N` bins.
pub fn hpa_output_spectrum(
    p: &SspaParams,
    w_in: &MultisineWaveform,
    kappa: f64,
) -> Result<ExtendedSpectrum> {
    let len = w_in.grid().extended_len(kappa)?;
    Ok(SpectralMap::new(p, w_in, len)?.output)
}

/// Intermediate quantities of the spectral map, kept for derivative code and
/// diagnostics.
#[derive(Debug, Clone)]
pub struct SpectralMap {
    /// Input envelope samples `x_B[k]`.
    pub input_samples: Vec<Complex64>,
    /// Amplitude gains `A[k]`.
    pub gains: Vec<f64>,
    /// Output weights over `len` bins.
    pub output: ExtendedSpectrum,
}

impl SpectralMap {
    pub fn new(p: &SspaParams, w_in: &MultisineWaveform, len: usize) -> Result<Self> {
        let input_samples = w_in.baseband_samples(len)?;
        let gains: Vec<f64> = input_samples.iter().map(|x| p.gain_factor(x.norm())).collect();
        let mut out: Vec<Complex64> = input_samples
            .iter()
            .zip(&gains)
            .map(|(x, a)| x * *a)
            .collect();
        forward_dft(&mut out);
        let scale = 1.0 / len as f64;
        for v in &mut out {
            *v *= scale;
        }
        Ok(Self {
            input_samples,
            gains,
            output: ExtendedSpectrum::from_bins(*w_in.grid(), out)?,
        })
    }

    /// Output envelope samples `|y[k]|`.
    pub fn output_envelope(&self) -> Vec<f64> {
        self.input_samples
            .iter()
            .zip(&self.gains)
            .map(|(x, a)| x.norm() * a)
            .collect()
    }

    /// Fraction of the energy of `DFT{A[k]}` at offsets that can reach the
    /// wrapped end of the grid when convolved with the `N` input bins.
    ///
    /// A large value means `κ'` is too small for the drive level.
    pub fn tail_fraction(&self) -> f64 {
        let k = self.gains.len();
        let n = self.output.grid().len();
        let mut spec: Vec<Complex64> = self.gains.iter().map(|a| Complex64::new(*a, 0.0)).collect();
        forward_dft(&mut spec);
        let total: f64 = spec.iter().map(|c| c.norm_sqr()).sum();
        if total == 0.0 {
            return 0.0;
        }
        let edge = (k / 2).saturating_sub(n) as i64;
        let tail: f64 = spec
            .iter()
            .enumerate()
            .filter(|(j, _)| {
                let off = if *j < k.div_ceil(2) { *j as i64 } else { *j as i64 - k as i64 };
                off.abs() >= edge
            })
            .map(|(_, c)| c.norm_sqr())
            .sum();
        tail / total
    }
}

/// Ideal band-pass filter output.
#[derive(Debug, Clone, PartialEq)]
pub struct Filtered {
    pub waveform: MultisineWaveform,
    /// Power removed from bins outside `0..N-1`.
    pub discarded_power: f64,
}

/// Keeps the transmit-band bins and reports the power of the rest.
pub fn bandpass_filter(s: &ExtendedSpectrum) -> Filtered {
    let n = s.grid().len();
    let discarded_power = 0.5 * s.bins()[n..].iter().map(|c| c.norm_sqr()).sum::<f64>();
    let waveform = MultisineWaveform::new(*s.grid(), s.in_band().to_vec())
        .expect("in-band slice has grid length and finite values");
    Filtered {
        waveform,
        discarded_power,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HpaMetrics {
    pub obo_db: f64,
    pub pe: f64,
    pub ape: f64,
    pub p_out: f64,
    pub p_in: f64,
    pub p_dc_supply: f64,
}

impl HpaMetrics {
    /// Metrics from input and output envelope samples on a uniform grid over
    /// one period.
    pub fn from_envelopes(a_s: f64, x_in: &[f64], x_out: &[f64]) -> Result<Self> {
        if x_in.len() != x_out.len() || x_in.is_empty() {
            return Err(Error::Contract(format!(
                "envelope grids must be equal and non-empty, got {} and {}",
                x_in.len(),
                x_out.len()
            )));
        }
        let m = x_in.len() as f64;
        let mean_in2 = x_in.iter().map(|x| x * x).sum::<f64>() / m;
        let mean_out2 = x_out.iter().map(|x| x * x).sum::<f64>() / m;
        let mean_out = x_out.iter().sum::<f64>() / m;
        if mean_out2 == 0.0 || mean_out == 0.0 {
            return Err(Error::Degenerate("amplifier output is zero, back-off undefined".into()));
        }
        let quarter_pi = std::f64::consts::FRAC_PI_4;
        let pe = quarter_pi * mean_out2 / (a_s * mean_out);
        let ape = quarter_pi * (mean_out2 - mean_in2) / (a_s * mean_out);
        let p_out = 0.5 * mean_out2;
        Ok(Self {
            obo_db: 10.0 * (a_s * a_s / mean_out2).log10(),
            pe,
            ape,
            p_out,
            p_in: 0.5 * mean_in2,
            p_dc_supply: p_out / pe,
        })
    }
}

/// Back-off and efficiency metrics of the amplifier driven by `w_in`,
/// averaged over the `2κ'N` point envelope grid.
pub fn hpa_metrics(p: &SspaParams, w_in: &MultisineWaveform, kappa: f64) -> Result<HpaMetrics> {
    if w_in.is_zero() {
        return Err(Error::Degenerate("zero input waveform, back-off undefined".into()));
    }
    let len = w_in.grid().extended_len(kappa)?;
    let map = SpectralMap::new(p, w_in, len)?;
    let x_in: Vec<f64> = map.input_samples.iter().map(|x| x.norm()).collect();
    HpaMetrics::from_envelopes(p.a_s(), &x_in, &map.output_envelope())
}

/// Smoothed envelope `√(|x|² + δ²)`.
pub fn smoothed_envelope(x: Complex64) -> f64 {
    (x.norm_sqr() + ENVELOPE_DELTA * ENVELOPE_DELTA).sqrt()
}

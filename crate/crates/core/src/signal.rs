//! Multisine signal model.
//!
//! A waveform is `N` complex sub-carrier weights on the grid
//! `f_n = f0 + n·Δf`, `n = 0..N-1`. Weights are stored baseband-indexed; the
//! carrier `f0` only matters when the real passband signal is evaluated
//! (channel generation and the rectenna time-domain oracle).
//!
//! Power bookkeeping follows the real-signal convention: a weight `w` on one
//! sub-carrier carries `|w|²/2` watts.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Amplitude regularization used wherever the derivative of an envelope is
/// needed, so that `sqrt(x̄² + x̂² + δ²)` stays differentiable at zero.
pub const ENVELOPE_DELTA: f64 = 1e-12;

/// Default time-domain oversampling (samples per sub-carrier) for oracles.
pub const DEFAULT_OVERSAMPLING: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    #[serde(rename = "f0_hz")]
    f0: f64,
    #[serde(rename = "delta_f_hz")]
    delta_f: f64,
    #[serde(rename = "n")]
    n_subcarriers: usize,
}

impl FrequencyGrid {
    pub fn new(f0: f64, delta_f: f64, n_subcarriers: usize) -> Result<Self> {
        if !(f0.is_finite() && f0 > 0.0) {
            return Err(Error::Contract(format!("f0 must be positive, got {f0}")));
        }
        if !(delta_f.is_finite() && delta_f > 0.0) {
            return Err(Error::Contract(format!(
                "sub-carrier spacing must be positive, got {delta_f}"
            )));
        }
        if n_subcarriers == 0 {
            return Err(Error::Contract("at least one sub-carrier is required".into()));
        }
        Ok(Self {
            f0,
            delta_f,
            n_subcarriers,
        })
    }

    /// Grid with `n` sub-carriers spread evenly over `bandwidth` Hz.
    pub fn with_bandwidth(f0: f64, bandwidth: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Contract("at least one sub-carrier is required".into()));
        }
        Self::new(f0, bandwidth / n as f64, n)
    }

    pub fn f0(&self) -> f64 {
        self.f0
    }

    pub fn delta_f(&self) -> f64 {
        self.delta_f
    }

    pub fn len(&self) -> usize {
        self.n_subcarriers
    }

    pub fn is_empty(&self) -> bool {
        self.n_subcarriers == 0
    }

    pub fn bandwidth(&self) -> f64 {
        self.n_subcarriers as f64 * self.delta_f
    }

    pub fn period(&self) -> f64 {
        1.0 / self.delta_f
    }

    pub fn frequency(&self, n: usize) -> f64 {
        self.f0 + n as f64 * self.delta_f
    }

    /// Number of bins `2κ'N` for an extension factor κ'.
    pub fn extended_len(&self, kappa: f64) -> Result<usize> {
        extended_len(self.n_subcarriers, kappa)
    }
}

pub(crate) fn extended_len(n: usize, kappa: f64) -> Result<usize> {
    if !(kappa.is_finite() && kappa > 1.0) {
        return Err(Error::Contract(format!(
            "extension factor must exceed 1, got {kappa}"
        )));
    }
    let bins = 2.0 * kappa * n as f64;
    let rounded = bins.round();
    if (bins - rounded).abs() > 1e-9 {
        return Err(Error::Contract(format!(
            "2·κ'·N must be an integer (κ' = {kappa}, N = {n})"
        )));
    }
    Ok(rounded as usize)
}

/// Complex sub-carrier weights (volts) over a [`FrequencyGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WaveformJson", into = "WaveformJson")]
pub struct MultisineWaveform {
    grid: FrequencyGrid,
    weights: Vec<Complex64>,
}

impl MultisineWaveform {
    pub fn new(grid: FrequencyGrid, weights: Vec<Complex64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::Contract(format!(
                "expected {} weights, got {}",
                grid.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.re.is_finite() && w.im.is_finite())) {
            return Err(Error::Contract("waveform weights must be finite".into()));
        }
        Ok(Self { grid, weights })
    }

    pub fn zeros(grid: FrequencyGrid) -> Self {
        Self {
            grid,
            weights: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    /// Builds a waveform from the stacked real vector `[w̄_0..w̄_{N-1}, ŵ_0..ŵ_{N-1}]`.
    pub fn from_stacked(grid: FrequencyGrid, stacked: &[f64]) -> Result<Self> {
        let n = grid.len();
        if stacked.len() != 2 * n {
            return Err(Error::Contract(format!(
                "expected {} stacked reals, got {}",
                2 * n,
                stacked.len()
            )));
        }
        let weights = (0..n)
            .map(|i| Complex64::new(stacked[i], stacked[n + i]))
            .collect();
        Self::new(grid, weights)
    }

    pub fn to_stacked(&self) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.re)
            .chain(self.weights.iter().map(|w| w.im))
            .collect()
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn weights(&self) -> &[Complex64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid,
            weights: self.weights.iter().map(|w| w * factor).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|w| w.norm_sqr() == 0.0)
    }

    /// `Σ_n w_n e^{j2π f_n t}` including the carrier.
    pub fn evaluate_complex(&self, t: f64) -> Complex64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(n, w)| w * Complex64::from_polar(1.0, 2.0 * PI * self.grid.frequency(n) * t))
            .sum()
    }

    /// Complex baseband signal `Σ_n w_n e^{j2π nΔf t}` (carrier removed).
    pub fn evaluate_baseband(&self, t: f64) -> Complex64 {
        let df = self.grid.delta_f();
        self.weights
            .iter()
            .enumerate()
            .map(|(n, w)| w * Complex64::from_polar(1.0, 2.0 * PI * n as f64 * df * t))
            .sum()
    }

    /// Complex baseband samples at `t_k = kT/len`, `k = 0..len-1`.
    pub fn baseband_samples(&self, len: usize) -> Result<Vec<Complex64>> {
        if len < self.len() {
            return Err(Error::Contract(format!(
                "{len} samples cannot resolve {} sub-carriers",
                self.len()
            )));
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        buf[..self.len()].copy_from_slice(&self.weights);
        inverse_dft(&mut buf);
        Ok(buf)
    }

    /// Envelope `|x_B(t_k)|` on the `2κ'N`-point grid.
    pub fn baseband_envelope_samples(&self, kappa: f64) -> Result<Vec<f64>> {
        let len = self.grid.extended_len(kappa)?;
        Ok(self.baseband_samples(len)?.iter().map(|x| x.norm()).collect())
    }

    /// Average power `½ Σ |w_n|²` of the real passband signal.
    pub fn average_power(&self) -> f64 {
        average_power(&self.weights)
    }

    /// Peak-to-average ratio of the envelope power over `oversampling·N`
    /// uniform samples of one period.
    pub fn papr(&self, oversampling: usize) -> Result<f64> {
        if oversampling < 4 {
            return Err(Error::Contract(format!(
                "PAPR oversampling must be at least 4, got {oversampling}"
            )));
        }
        if self.is_zero() {
            return Err(Error::Degenerate("PAPR of the zero waveform".into()));
        }
        let samples = self.baseband_samples(oversampling * self.len())?;
        let powers: Vec<f64> = samples.iter().map(|x| x.norm_sqr()).collect();
        let peak = powers.iter().cloned().fold(0.0, f64::max);
        let mean = powers.iter().sum::<f64>() / powers.len() as f64;
        Ok(peak / mean)
    }

    /// Effective number of active sub-carriers `(Σ|w|²)² / Σ|w|⁴`.
    pub fn participation_ratio(&self) -> f64 {
        let p2: f64 = self.weights.iter().map(|w| w.norm_sqr()).sum();
        let p4: f64 = self.weights.iter().map(|w| w.norm_sqr().powi(2)).sum();
        if p4 == 0.0 {
            0.0
        } else {
            p2 * p2 / p4
        }
    }
}

pub fn average_power(weights: &[Complex64]) -> f64 {
    0.5 * weights.iter().map(|w| w.norm_sqr()).sum::<f64>()
}

/// Weights over `2κ'N` circularly indexed bins spaced Δf apart, starting at
/// `f0`. Bins `0..N-1` are the transmit band; bin `K-m` holds the component
/// `m` sub-carriers below `f0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedSpectrum {
    grid: FrequencyGrid,
    bins: Vec<Complex64>,
}

impl ExtendedSpectrum {
    pub fn zeros(grid: FrequencyGrid, kappa: f64) -> Result<Self> {
        let len = grid.extended_len(kappa)?;
        Ok(Self {
            grid,
            bins: vec![Complex64::new(0.0, 0.0); len],
        })
    }

    /// Wraps an arbitrary circular bin array of length at least `N`.
    pub fn from_bins(grid: FrequencyGrid, bins: Vec<Complex64>) -> Result<Self> {
        if bins.len() < grid.len() {
            return Err(Error::Contract(format!(
                "{} bins cannot hold {} sub-carriers",
                bins.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, bins })
    }

    /// Zero-pads an in-band waveform to `2κ'N` bins.
    pub fn from_waveform(w: &MultisineWaveform, kappa: f64) -> Result<Self> {
        let mut s = Self::zeros(*w.grid(), kappa)?;
        s.bins[..w.len()].copy_from_slice(w.weights());
        Ok(s)
    }

    /// Zero-pads (or keeps) an in-band waveform into exactly `len` bins.
    pub fn from_waveform_len(w: &MultisineWaveform, len: usize) -> Result<Self> {
        if len < w.len() {
            return Err(Error::Contract(format!(
                "{len} bins cannot hold {} sub-carriers",
                w.len()
            )));
        }
        let mut bins = vec![Complex64::new(0.0, 0.0); len];
        bins[..w.len()].copy_from_slice(w.weights());
        Ok(Self { grid: *w.grid(), bins })
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Effective extension factor `K / 2N`.
    pub fn kappa(&self) -> f64 {
        self.bins.len() as f64 / (2.0 * self.grid.len() as f64)
    }

    pub fn in_band(&self) -> &[Complex64] {
        &self.bins[..self.grid.len()]
    }

    /// Weight at signed sub-carrier offset `offset` from `f0`.
    pub fn at(&self, offset: i64) -> Complex64 {
        let k = self.bins.len() as i64;
        self.bins[offset.rem_euclid(k) as usize]
    }

    /// Signed sub-carrier offset held by bin `index`: bins above `K/2` are
    /// read as negative offsets.
    pub fn offset_of(&self, index: usize) -> i64 {
        let k = self.bins.len();
        if index < k.div_ceil(2) {
            index as i64
        } else {
            index as i64 - k as i64
        }
    }

    pub fn total_power(&self) -> f64 {
        average_power(&self.bins)
    }

    /// Time samples `x_B(t_k)` at the native `K`-point rate.
    pub fn time_samples(&self) -> Vec<Complex64> {
        let mut buf = self.bins.clone();
        inverse_dft(&mut buf);
        buf
    }
}

/// Circular convolution of two equal-length sequences,
/// `out[n] = Σ_m a[m] b[(n-m) mod M]`, computed through the FFT.
pub fn circular_convolve(a: &[Complex64], b: &[Complex64]) -> Result<Vec<Complex64>> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "circular convolution needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let m = a.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut fa = a.to_vec();
    let mut fb = b.to_vec();
    forward_dft(&mut fa);
    forward_dft(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inverse_dft(&mut fa);
    let scale = 1.0 / m as f64;
    Ok(fa.into_iter().map(|x| x * scale).collect())
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// In-place unnormalized DFT, `X[n] = Σ_k x[k] e^{-j2πkn/K}`.
pub fn forward_dft(buf: &mut [Complex64]) {
    if buf.is_empty() {
        return;
    }
    plan(buf.len(), false).process(buf);
}

/// In-place unnormalized inverse DFT, `x[k] = Σ_n X[n] e^{+j2πkn/K}`.
pub fn inverse_dft(buf: &mut [Complex64]) {
    if buf.is_empty() {
        return;
    }
    plan(buf.len(), true).process(buf);
}

#[derive(Serialize, Deserialize)]
struct WaveformJson {
    #[serde(flatten)]
    grid: FrequencyGrid,
    weights: Vec<[f64; 2]>,
}

impl TryFrom<WaveformJson> for MultisineWaveform {
    type Error = Error;

    fn try_from(j: WaveformJson) -> Result<Self> {
        let grid = FrequencyGrid::new(j.grid.f0, j.grid.delta_f, j.grid.n_subcarriers)?;
        let weights = j
            .weights
            .into_iter()
            .map(|[re, im]| Complex64::new(re, im))
            .collect();
        MultisineWaveform::new(grid, weights)
    }
}

impl From<MultisineWaveform> for WaveformJson {
    fn from(w: MultisineWaveform) -> Self {
        WaveformJson {
            grid: w.grid,
            weights: w.weights.iter().map(|c| [c.re, c.im]).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> FrequencyGrid {
        // f0 an integer multiple of Δf keeps the passband signal T-periodic.
        FrequencyGrid::new(20.0e6, 1.25e6, n).unwrap()
    }

    fn random_waveform(rng: &mut ChaCha8Rng, n: usize) -> MultisineWaveform {
        let w = (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        MultisineWaveform::new(grid(n), w).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(FrequencyGrid::new(0.0, 1.0, 1).is_err());
        assert!(FrequencyGrid::new(1.0, -1.0, 1).is_err());
        assert!(FrequencyGrid::new(1.0, 1.0, 0).is_err());
        let g = FrequencyGrid::with_bandwidth(5.18e9, 10e6, 8).unwrap();
        assert!((g.bandwidth() - 10e6).abs() < 1e-6);
        assert!((g.frequency(1) - 5.18e9 - 1.25e6).abs() < 1e-3);
        assert_eq!(g.extended_len(2.0).unwrap(), 32);
        assert!(g.extended_len(1.0).is_err());
        assert_eq!(g.extended_len(1.5).unwrap(), 24);
        assert!(FrequencyGrid::new(1.0, 1.0, 3).unwrap().extended_len(1.1).is_err());
    }

    #[test]
    fn single_tone_at_phase_zero() {
        let g = FrequencyGrid::new(1.0e6, 1.0e3, 1).unwrap();
        let w = MultisineWaveform::new(g, vec![Complex64::new(1.0, 0.0)]).unwrap();
        for t in [0.0, 1.0e-6, 7.0e-6] {
            let x = w.evaluate_complex(t);
            assert!((x - Complex64::new(1.0, 0.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn zero_waveform_evaluates_to_zero() {
        let w = MultisineWaveform::zeros(grid(5));
        for t in [0.0, 1e-7, 3.3e-7] {
            assert_eq!(w.evaluate_complex(t), Complex64::new(0.0, 0.0));
        }
        assert_eq!(w.average_power(), 0.0);
        assert!(w.baseband_envelope_samples(2.0).unwrap().iter().all(|&a| a == 0.0));
        assert!(matches!(w.papr(16), Err(Error::Degenerate(_))));
    }

    #[test]
    fn two_tone_envelope_closed_form() {
        let a = 0.7;
        let g = grid(2);
        let w = MultisineWaveform::new(g, vec![Complex64::new(a, 0.0); 2]).unwrap();
        let df = g.delta_f();
        for t in [0.0, 0.1e-6, 0.37e-6, 0.5e-6] {
            let env = w.evaluate_complex(t).norm();
            let expected = 2.0 * a * (PI * df * t).cos().abs();
            assert!((env - expected).abs() < 1e-12);
        }
        let samples = w.baseband_envelope_samples(2.0).unwrap();
        assert_eq!(samples.len(), 8);
        for (k, s) in samples.iter().enumerate() {
            let t = k as f64 * g.period() / 8.0;
            assert!((s - 2.0 * a * (PI * df * t).cos().abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_tone_has_constant_envelope() {
        let w = MultisineWaveform::new(grid(1), vec![Complex64::new(0.3, 0.4)]).unwrap();
        for s in w.baseband_envelope_samples(4.0).unwrap() {
            assert!((s - 0.5).abs() < 1e-15);
        }
        assert!((w.papr(16).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn average_power_examples() {
        let w = MultisineWaveform::new(grid(1), vec![Complex64::new(2f64.sqrt(), 0.0)]).unwrap();
        assert!((w.average_power() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn parseval_against_passband_time_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = random_waveform(&mut rng, 8);
        let g = w.grid();
        // Real passband signal sampled well above twice its highest frequency.
        let highest = (g.f0() / g.delta_f()).round() as usize + g.len();
        let m = 16 * highest;
        let mean_sq: f64 = (0..m)
            .map(|k| {
                let t = k as f64 * g.period() / m as f64;
                w.evaluate_complex(t).re.powi(2)
            })
            .sum::<f64>()
            / m as f64;
        let mean_env: f64 = (0..16 * 8)
            .map(|k| w.evaluate_baseband(k as f64 * g.period() / 128.0).norm_sqr())
            .sum::<f64>()
            / 128.0;
        let p = w.average_power();
        assert!((mean_sq - p).abs() / p < 1e-10);
        assert!((mean_env / 2.0 - p).abs() / p < 1e-10);
    }

    #[test]
    fn periodic_in_one_period() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_waveform(&mut rng, 6);
        let t_period = w.grid().period();
        for t in [0.0, 0.13e-6, 0.41e-6] {
            let a = w.evaluate_complex(t);
            let b = w.evaluate_complex(t + t_period);
            assert!((a - b).norm() <= 1e-9 * a.norm().max(1.0));
        }
    }

    #[test]
    fn papr_of_in_phase_tones_approaches_n() {
        let n = 6;
        let w = MultisineWaveform::new(grid(n), vec![Complex64::new(1.0, 0.0); n]).unwrap();
        // Dense oracle: peak |x|² = N², mean |x|² = N.
        let dense: Vec<f64> = (0..4096)
            .map(|k| w.evaluate_baseband(k as f64 * w.grid().period() / 4096.0).norm_sqr())
            .collect();
        let oracle = dense.iter().cloned().fold(0.0, f64::max) / (dense.iter().sum::<f64>() / 4096.0);
        assert!((oracle - n as f64).abs() < 1e-9);
        assert!((w.papr(64).unwrap() - n as f64).abs() < 1e-9);
        assert!(w.papr(2).is_err());
    }

    fn direct_convolution(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
        let m = a.len();
        (0..m)
            .map(|n| (0..m).map(|j| a[j] * b[(n + m - j) % m]).sum())
            .collect()
    }

    #[test]
    fn circular_convolution_identity_shift_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b: Vec<Complex64> = (0..8)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let mut delta = vec![Complex64::new(0.0, 0.0); 8];
        delta[0] = Complex64::new(1.0, 0.0);
        let out = circular_convolve(&delta, &b).unwrap();
        for (o, x) in out.iter().zip(&b) {
            assert!((o - x).norm() < 1e-14);
        }
        let mut shift = vec![Complex64::new(0.0, 0.0); 8];
        shift[1] = Complex64::new(1.0, 0.0);
        let out = circular_convolve(&shift, &b).unwrap();
        for n in 0..8 {
            assert!((out[n] - b[(n + 7) % 8]).norm() < 1e-14);
        }
        let a: Vec<Complex64> = (0..8)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let out = circular_convolve(&a, &b).unwrap();
        for (o, d) in out.iter().zip(direct_convolution(&a, &b)) {
            assert!((o - d).norm() < 1e-13);
        }
        assert!(circular_convolve(&a, &b[..7]).is_err());
    }

    #[test]
    fn stacked_round_trip_and_json_schema() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random_waveform(&mut rng, 3);
        let back = MultisineWaveform::from_stacked(*w.grid(), &w.to_stacked()).unwrap();
        assert_eq!(w, back);
        let json = serde_json::to_value(&w).unwrap();
        assert_eq!(json["n"], 3);
        assert_eq!(json["delta_f_hz"], 1.25e6);
        assert_eq!(json["weights"].as_array().unwrap().len(), 3);
        let parsed: MultisineWaveform = serde_json::from_value(json).unwrap();
        assert_eq!(parsed, w);
        let bad = serde_json::json!({"f0_hz": 1.0, "delta_f_hz": 1.0, "n": 2, "weights": [[0.0, 0.0]]});
        assert!(serde_json::from_value::<MultisineWaveform>(bad).is_err());
    }

    proptest! {
        #[test]
        fn convolution_is_commutative_and_linear(
            re in proptest::collection::vec(-1.0f64..1.0, 12),
            im in proptest::collection::vec(-1.0f64..1.0, 12),
            c in -2.0f64..2.0,
        ) {
            let a: Vec<Complex64> = re[..6].iter().zip(&im[..6]).map(|(r, i)| Complex64::new(*r, *i)).collect();
            let b: Vec<Complex64> = re[6..].iter().zip(&im[6..]).map(|(r, i)| Complex64::new(*r, *i)).collect();
            let ab = circular_convolve(&a, &b).unwrap();
            let ba = circular_convolve(&b, &a).unwrap();
            let ca: Vec<Complex64> = a.iter().map(|x| x * c).collect();
            let cab = circular_convolve(&ca, &b).unwrap();
            for i in 0..6 {
                prop_assert!((ab[i] - ba[i]).norm() < 1e-12);
                prop_assert!((cab[i] - ab[i] * c).norm() < 1e-12);
            }
        }

        #[test]
        fn envelope_invariant_under_common_phase(
            re in proptest::collection::vec(-1.0f64..1.0, 5),
            im in proptest::collection::vec(-1.0f64..1.0, 5),
            theta in 0.0f64..(2.0 * PI),
        ) {
            let w: Vec<Complex64> = re.iter().zip(&im).map(|(r, i)| Complex64::new(*r, *i)).collect();
            let rot: Vec<Complex64> = w.iter().map(|x| x * Complex64::from_polar(1.0, theta)).collect();
            let a = MultisineWaveform::new(grid(5), w).unwrap().baseband_envelope_samples(2.0).unwrap();
            let b = MultisineWaveform::new(grid(5), rot).unwrap().baseband_envelope_samples(2.0).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

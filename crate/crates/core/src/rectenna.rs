//! Rectenna harvested-DC model.
//!
//! The diode current is expanded to fourth order, which leaves the scaling
//! term `z = k2·R·E{ȳ²} + k4·R²·E{ȳ⁴}` of the received real signal ȳ(t).
//! Averaged over one period it reduces to sums of the received sub-carrier
//! weights `v_n = h_n·w_n`:
//!
//! `z = (k2R/2)·Σ|v_n|² + (3k4R²/8)·Σ_{n0+n1=n2+n3} v_{n0} v_{n1} v*_{n2} v*_{n3}`.
//!
//! The quartic sum equals `Σ_m |S_m|²` with `S_m = Σ_{n0+n1=m} v_{n0} v_{n1}`,
//! which is what makes `z` convex in the stacked real weights.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::FrequencyResponse;
use crate::error::{Error, Result};
use crate::signal::MultisineWaveform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectennaParams {
    pub k2: f64,
    pub k4: f64,
    #[serde(rename = "r_ant_ohm")]
    pub r_ant: f64,
    #[serde(rename = "r_load_ohm")]
    pub r_load: f64,
}

impl Default for RectennaParams {
    fn default() -> Self {
        Self {
            k2: 0.0034,
            k4: 0.3829,
            r_ant: 50.0,
            r_load: 1.0,
        }
    }
}

impl RectennaParams {
    pub fn new(k2: f64, k4: f64, r_ant: f64, r_load: f64) -> Result<Self> {
        let p = Self { k2, k4, r_ant, r_load };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("k2", self.k2), ("k4", self.k4), ("r_ant", self.r_ant), ("r_load", self.r_load)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Contract(format!("rectenna {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Coefficient of `Σ|v|²`.
    pub fn quadratic_coeff(&self) -> f64 {
        0.5 * self.k2 * self.r_ant
    }

    /// Coefficient of the quartic sum.
    pub fn quartic_coeff(&self) -> f64 {
        0.375 * self.k4 * self.r_ant * self.r_ant
    }
}

/// Linear model coefficients: `z ≈ z(w_op) + Σ ᾱ_n Δw̄_n + α̂_n Δŵ_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZdcGradient {
    pub alpha_re: Vec<f64>,
    pub alpha_im: Vec<f64>,
}

impl ZdcGradient {
    /// Stacked `[ᾱ, α̂]`, matching [`MultisineWaveform::to_stacked`].
    pub fn to_stacked(&self) -> Vec<f64> {
        self.alpha_re.iter().chain(&self.alpha_im).copied().collect()
    }

    pub fn norm(&self) -> f64 {
        self.alpha_re
            .iter()
            .chain(&self.alpha_im)
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
    }

    /// First-order model value `Σ ᾱ_n w̄_n + α̂_n ŵ_n`.
    pub fn dot(&self, w: &MultisineWaveform) -> f64 {
        w.weights()
            .iter()
            .zip(self.alpha_re.iter().zip(&self.alpha_im))
            .map(|(w, (a, b))| a * w.re + b * w.im)
            .sum()
    }
}

fn received(w: &MultisineWaveform, h: &FrequencyResponse) -> Result<Vec<Complex64>> {
    if w.len() != h.len() {
        return Err(Error::Contract(format!(
            "waveform has {} sub-carriers, channel has {}",
            w.len(),
            h.len()
        )));
    }
    Ok(w.weights().iter().zip(h.gains()).map(|(a, b)| a * b).collect())
}

/// Pair sums `S_m = Σ_{n0+n1=m} v_{n0} v_{n1}` for `m = 0..2N-2`.
fn pair_sums(v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    let mut s = vec![Complex64::new(0.0, 0.0); 2 * n - 1];
    for (i, a) in v.iter().enumerate() {
        for (j, b) in v.iter().enumerate() {
            s[i + j] += a * b;
        }
    }
    s
}

/// Harvested-DC scaling term of the transmit weights through channel `h`.
pub fn z_dc(p: &RectennaParams, w_tr: &MultisineWaveform, h: &FrequencyResponse) -> Result<f64> {
    let v = received(w_tr, h)?;
    Ok(z_dc_received(p, &v))
}

/// Scaling term from received weights `v_n`, enumerating index triples with
/// `n3 = n0 + n1 − n2` inside the band.
pub fn z_dc_received(p: &RectennaParams, v: &[Complex64]) -> f64 {
    let n = v.len() as i64;
    let quad: f64 = v.iter().map(|x| x.norm_sqr()).sum();
    let mut quart = Complex64::new(0.0, 0.0);
    for n0 in 0..n {
        for n1 in 0..n {
            let pair = v[n0 as usize] * v[n1 as usize];
            for n2 in 0..n {
                let n3 = n0 + n1 - n2;
                if (0..n).contains(&n3) {
                    quart += pair * (v[n2 as usize] * v[n3 as usize]).conj();
                }
            }
        }
    }
    p.quadratic_coeff() * quad + p.quartic_coeff() * quart.re
}

/// Time-average evaluation of `k2·R·E{ȳ²} + k4·R²·E{ȳ⁴}` for the real
/// received passband signal over one period.
///
/// The period average uses `oversampling·⌈f_max/Δf⌉` uniform samples and is
/// exact when `f0/Δf` is an integer (the passband signal is then periodic in
/// `1/Δf`); otherwise the carrier cross terms leave an `O(Δf/f0)` residue.
pub fn z_dc_time_oracle(
    p: &RectennaParams,
    w_tr: &MultisineWaveform,
    h: &FrequencyResponse,
    oversampling: usize,
) -> Result<f64> {
    if oversampling < 8 {
        return Err(Error::Contract(format!("oracle oversampling must be at least 8, got {oversampling}")));
    }
    let v = received(w_tr, h)?;
    let grid = w_tr.grid();
    let harmonics = ((grid.frequency(grid.len() - 1)) / grid.delta_f()).ceil() as usize;
    let m = oversampling * harmonics.max(1);
    let f0_cycles = grid.f0() / grid.delta_f();
    let (mut m2, mut m4) = (0.0, 0.0);
    for k in 0..m {
        let t_frac = k as f64 / m as f64;
        // Phase of bin n in cycles: (f0/Δf + n)·t/T, reduced before scaling by 2π.
        let y: f64 = v
            .iter()
            .enumerate()
            .map(|(n, vn)| {
                let cycles = ((f0_cycles + n as f64) * t_frac).rem_euclid(1.0);
                (vn * Complex64::from_polar(1.0, 2.0 * PI * cycles)).re
            })
            .sum();
        let y2 = y * y;
        m2 += y2;
        m4 += y2 * y2;
    }
    m2 /= m as f64;
    m4 /= m as f64;
    Ok(p.k2 * p.r_ant * m2 + p.k4 * p.r_ant * p.r_ant * m4)
}

/// Gradient of [`z_dc`] with respect to the real and imaginary parts of the
/// transmit weights at `w_op`.
pub fn z_dc_gradient(
    p: &RectennaParams,
    w_op: &MultisineWaveform,
    h: &FrequencyResponse,
) -> Result<ZdcGradient> {
    let v = received(w_op, h)?;
    let n = v.len();
    let s = pair_sums(&v);
    let b4 = 4.0 * p.quartic_coeff();
    let k2r = p.k2 * p.r_ant;
    let mut alpha_re = Vec::with_capacity(n);
    let mut alpha_im = Vec::with_capacity(n);
    for i in 0..n {
        let hi = h.gains()[i];
        // Σ_m S_m v*_{m−i} over m with 0 ≤ m − i < N.
        let corr: Complex64 = (0..n).map(|j| s[i + j] * v[j].conj()).sum();
        let g = w_op.weights()[i] * (k2r * hi.norm_sqr()) + hi.conj() * corr * b4;
        alpha_re.push(g.re);
        alpha_im.push(g.im);
    }
    Ok(ZdcGradient { alpha_re, alpha_im })
}

/// End-to-end power transfer efficiency scaling term `z²R / (P_in + P_DC)`.
pub fn end_to_end_pte(z: f64, p_in_hpa: f64, p_dc_hpa: f64, r_load: f64) -> Result<f64> {
    let denom = p_in_hpa + p_dc_hpa;
    if !(denom > 0.0) {
        return Err(Error::Degenerate(format!("PTE denominator must be positive, got {denom}")));
    }
    Ok(z * z * r_load / denom)
}

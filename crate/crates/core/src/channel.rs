//! Frequency-domain channels.
//!
//! A tapped-delay-line realization draws one circularly symmetric complex
//! Gaussian gain per tap and evaluates `h_n = Σ_l g_l e^{−j2π f_n τ_l}` at the
//! absolute sub-carrier frequencies.
//!
//! Randomness is fully determined by the seed: tap `l` draws from a
//! ChaCha20 stream seeded with `seed` and stream id `l`, so adding taps to
//! a profile never perturbs the gains of the existing ones.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::FrequencyGrid;

const ETSI_MODEL_B: &str = include_str!("../data/etsi_model_b.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    /// Delay in nanoseconds.
    pub delay_ns: f64,
    /// Mean power (linear).
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapDelayProfile {
    pub name: String,
    pub taps: Vec<Tap>,
}

impl TapDelayProfile {
    /// Builds a profile from `(delay seconds, linear power)` pairs. Powers must
    /// already sum to one.
    pub fn new(name: impl Into<String>, taps: &[(f64, f64)]) -> Result<Self> {
        let p = Self {
            name: name.into(),
            taps: taps
                .iter()
                .map(|&(d, power)| Tap { delay_ns: d * 1e9, power })
                .collect(),
        };
        p.validate()?;
        Ok(p)
    }

    /// Like [`TapDelayProfile::new`] but without the unit-sum requirement,
    /// for scaled or experimental profiles.
    pub fn unnormalized(name: impl Into<String>, taps: &[(f64, f64)]) -> Result<Self> {
        let p = Self {
            name: name.into(),
            taps: taps
                .iter()
                .map(|&(d, power)| Tap { delay_ns: d * 1e9, power })
                .collect(),
        };
        p.validate_shape()?;
        Ok(p)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    fn validate_shape(&self) -> Result<()> {
        if self.taps.is_empty() {
            return Err(Error::Contract("tap-delay profile has no taps".into()));
        }
        let mut prev = f64::NEG_INFINITY;
        for t in &self.taps {
            if !(t.delay_ns.is_finite() && t.delay_ns >= 0.0 && t.delay_ns > prev) {
                return Err(Error::Contract(format!(
                    "tap delays must be non-negative and increasing, got {} ns",
                    t.delay_ns
                )));
            }
            if !(t.power.is_finite() && t.power >= 0.0) {
                return Err(Error::Contract(format!("tap power must be non-negative, got {}", t.power)));
            }
            prev = t.delay_ns;
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        self.validate_shape()?;
        let total = self.total_power();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("tap powers must sum to 1, got {total}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn total_power(&self) -> f64 {
        self.taps.iter().map(|t| t.power).sum()
    }

    /// One tap, unit power, zero delay.
    pub fn single_tap() -> Self {
        Self {
            name: "single tap".into(),
            taps: vec![Tap { delay_ns: 0.0, power: 1.0 }],
        }
    }
}

/// The 18-tap ETSI BRAN model B profile, powers normalized to unit sum.
pub fn etsi_model_b_profile() -> TapDelayProfile {
    TapDelayProfile::from_json(ETSI_MODEL_B).expect("bundled profile is valid")
}

/// Per-sub-carrier complex channel gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ResponseJson", into = "ResponseJson")]
pub struct FrequencyResponse {
    grid: FrequencyGrid,
    gains: Vec<Complex64>,
}

impl FrequencyResponse {
    pub fn new(grid: FrequencyGrid, gains: Vec<Complex64>) -> Result<Self> {
        if gains.len() != grid.len() {
            return Err(Error::Contract(format!(
                "expected {} channel gains, got {}",
                grid.len(),
                gains.len()
            )));
        }
        if gains.iter().any(|g| !(g.re.is_finite() && g.im.is_finite())) {
            return Err(Error::Contract("channel gains must be finite".into()));
        }
        Ok(Self { grid, gains })
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn gains(&self) -> &[Complex64] {
        &self.gains
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    /// Response with every gain multiplied by a real amplitude factor.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid,
            gains: self.gains.iter().map(|g| g * factor).collect(),
        }
    }
}

pub fn flat_channel(grid: FrequencyGrid) -> FrequencyResponse {
    FrequencyResponse {
        grid,
        gains: vec![Complex64::new(1.0, 0.0); grid.len()],
    }
}

/// Draws the complex tap gains for `seed`.
pub fn sample_taps(profile: &TapDelayProfile, seed: u64) -> Result<Vec<Complex64>> {
    if profile.is_empty() {
        return Err(Error::Contract("tap-delay profile has no taps".into()));
    }
    Ok(profile
        .taps
        .iter()
        .enumerate()
        .map(|(l, tap)| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(l as u64);
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re, im) * (tap.power / 2.0).sqrt()
        })
        .collect())
}

/// Evaluates a tapped-delay-line realization on the sub-carrier grid.
pub fn response_from_taps(
    profile: &TapDelayProfile,
    tap_gains: &[Complex64],
    grid: FrequencyGrid,
) -> Result<FrequencyResponse> {
    if tap_gains.len() != profile.len() || profile.is_empty() {
        return Err(Error::Contract(format!(
            "{} tap gains for a {}-tap profile",
            tap_gains.len(),
            profile.len()
        )));
    }
    let gains = (0..grid.len())
        .map(|n| {
            let f = grid.frequency(n);
            profile
                .taps
                .iter()
                .zip(tap_gains)
                .map(|(tap, g)| {
                    // Reduce f·τ modulo one cycle before forming the phase.
                    let cycles = (f * tap.delay_ns * 1e-9).rem_euclid(1.0);
                    g * Complex64::from_polar(1.0, -2.0 * PI * cycles)
                })
                .sum()
        })
        .collect();
    FrequencyResponse::new(grid, gains)
}

pub fn sample_channel(
    profile: &TapDelayProfile,
    seed: u64,
    grid: FrequencyGrid,
) -> Result<FrequencyResponse> {
    let taps = sample_taps(profile, seed)?;
    response_from_taps(profile, &taps, grid)
}

#[derive(Serialize, Deserialize)]
struct ResponseJson {
    #[serde(flatten)]
    grid: FrequencyGrid,
    gains: Vec<[f64; 2]>,
}

impl TryFrom<ResponseJson> for FrequencyResponse {
    type Error = Error;

    fn try_from(j: ResponseJson) -> Result<Self> {
        let grid = FrequencyGrid::new(j.grid.f0(), j.grid.delta_f(), j.grid.len())?;
        FrequencyResponse::new(grid, j.gains.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
    }
}

impl From<FrequencyResponse> for ResponseJson {
    fn from(h: FrequencyResponse) -> Self {
        ResponseJson {
            grid: h.grid,
            gains: h.gains.iter().map(|c| [c.re, c.im]).collect(),
        }
    }
}

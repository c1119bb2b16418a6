//! Reference waveforms and the shared evaluation chain.
//!
//! [`evaluate_chain`] is the one place where an input waveform is pushed
//! through amplifier, band-pass filter, channel and rectenna. Every optimizer
//! reports the numbers it produces, never its own internal estimates.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::FrequencyResponse;
use crate::error::{Error, Result};
use crate::hpa::{HpaMetrics, SspaParams};
use crate::numopt::SolveStatus;
use crate::rectenna::{end_to_end_pte, z_dc, z_dc_gradient, RectennaParams};
use crate::signal::{forward_dft, inverse_dft, ExtendedSpectrum, FrequencyGrid, MultisineWaveform};

/// Samples per sub-carrier used for the PAPR figures in [`ChainReport`].
const PAPR_OVERSAMPLING: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub p_in: f64,
    pub p_out_hpa: f64,
    pub p_discarded_bpf: f64,
    pub p_tr: f64,
    pub obo_db: f64,
    pub pe: f64,
    pub ape: f64,
    pub z_dc: f64,
    pub pte: f64,
    pub papr_in: f64,
    pub papr_tr: f64,
}

/// Full chain output: the report and the transmit waveform behind it.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub report: ChainReport,
    pub w_tr: MultisineWaveform,
    /// Largest input envelope sample on the analysis grid.
    pub peak_input: f64,
}

/// Runs an in-band input waveform through the chain on the `2κ'N` grid.
pub fn evaluate_chain(
    w_in: &MultisineWaveform,
    sspa: &SspaParams,
    rectenna: &RectennaParams,
    h: &FrequencyResponse,
    kappa: f64,
) -> Result<ChainReport> {
    Ok(run_chain(&ExtendedSpectrum::from_waveform(w_in, kappa)?, sspa, rectenna, h, kappa)?.report)
}

/// Chain evaluation for an input with out-of-band components. `x_in` bins
/// are read by signed offset and re-laid on the `2κ'N` analysis grid, which
/// must be wide enough to hold them.
pub fn evaluate_chain_spectrum(
    x_in: &ExtendedSpectrum,
    sspa: &SspaParams,
    rectenna: &RectennaParams,
    h: &FrequencyResponse,
    kappa: f64,
) -> Result<ChainReport> {
    Ok(run_chain(x_in, sspa, rectenna, h, kappa)?.report)
}

/// Lays the signed-offset bins of `x` onto a circular grid of `len` bins.
fn relay(x: &ExtendedSpectrum, len: usize) -> Result<Vec<Complex64>> {
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    let half = len as i64 / 2;
    for (i, b) in x.bins().iter().enumerate() {
        if b.norm_sqr() == 0.0 {
            continue;
        }
        let off = x.offset_of(i);
        if off >= half || off < -half {
            return Err(Error::Contract(format!(
                "input bin at offset {off} does not fit a {len}-bin analysis grid"
            )));
        }
        out[off.rem_euclid(len as i64) as usize] += b;
    }
    Ok(out)
}

fn papr_of_bins(bins: &[Complex64], n: usize) -> Result<f64> {
    // Dense grid at least PAPR_OVERSAMPLING samples per sub-carrier.
    let mut len = bins.len();
    while len < PAPR_OVERSAMPLING * n {
        len *= 2;
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    let k = bins.len() as i64;
    for (i, b) in bins.iter().enumerate() {
        let off = if (i as i64) < (k + 1) / 2 { i as i64 } else { i as i64 - k };
        buf[off.rem_euclid(len as i64) as usize] = *b;
    }
    inverse_dft(&mut buf);
    let p: Vec<f64> = buf.iter().map(|x| x.norm_sqr()).collect();
    let mean = p.iter().sum::<f64>() / len as f64;
    if mean == 0.0 {
        return Err(Error::Degenerate("PAPR of the zero waveform".into()));
    }
    Ok(p.iter().cloned().fold(0.0, f64::max) / mean)
}

pub(crate) fn run_chain(
    x_in: &ExtendedSpectrum,
    sspa: &SspaParams,
    rectenna: &RectennaParams,
    h: &FrequencyResponse,
    kappa: f64,
) -> Result<ChainOutput> {
    let grid = *x_in.grid();
    if h.len() != grid.len() {
        return Err(Error::Contract(format!(
            "channel has {} sub-carriers, waveform has {}",
            h.len(),
            grid.len()
        )));
    }
    let len = grid.extended_len(kappa)?;
    let bins = relay(x_in, len)?;
    if bins.iter().all(|b| b.norm_sqr() == 0.0) {
        return Err(Error::Degenerate("zero input waveform".into()));
    }
    let mut x = bins.clone();
    inverse_dft(&mut x);
    let env_in: Vec<f64> = x.iter().map(|v| v.norm()).collect();
    let mut y: Vec<Complex64> = x.iter().map(|v| sspa.apply(*v)).collect();
    let env_out: Vec<f64> = y.iter().map(|v| v.norm()).collect();
    forward_dft(&mut y);
    let scale = 1.0 / len as f64;
    for v in &mut y {
        *v *= scale;
    }
    let n = grid.len();
    let w_tr = MultisineWaveform::new(grid, y[..n].to_vec())?;
    let p_tr = w_tr.average_power();
    let p_discarded_bpf = 0.5 * y[n..].iter().map(|c| c.norm_sqr()).sum::<f64>();
    let m = HpaMetrics::from_envelopes(sspa.a_s(), &env_in, &env_out)?;
    let z = z_dc(rectenna, &w_tr, h)?;
    let pte = end_to_end_pte(z, m.p_in, m.p_dc_supply, rectenna.r_load)?;
    let papr_in = papr_of_bins(&bins, n)?;
    let papr_tr = if w_tr.is_zero() { f64::NAN } else { w_tr.papr(PAPR_OVERSAMPLING)? };
    Ok(ChainOutput {
        report: ChainReport {
            p_in: m.p_in,
            p_out_hpa: m.p_out,
            p_discarded_bpf,
            p_tr,
            obo_db: m.obo_db,
            pe: m.pe,
            ape: m.ape,
            z_dc: z,
            pte,
            papr_in,
            papr_tr,
        },
        w_tr,
        peak_input: env_in.iter().cloned().fold(0.0, f64::max),
    })
}

/// Transmit/input powers of `w_in` through the amplifier and filter.
pub(crate) fn chain_powers(w_in: &MultisineWaveform, sspa: &SspaParams, kappa: f64) -> Result<(f64, MultisineWaveform)> {
    let s = crate::hpa::hpa_output_spectrum(sspa, w_in, kappa)?;
    let tr = MultisineWaveform::new(*w_in.grid(), s.in_band().to_vec())?;
    Ok((w_in.average_power(), tr))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdealSolution {
    pub waveform: MultisineWaveform,
    pub z_dc: f64,
    pub z_dc_trace: Vec<f64>,
    pub iterations: usize,
    pub status: SolveStatus,
}

const IDEAL_MAX_ITER: usize = 2000;

fn ideal_scp(
    start: MultisineWaveform,
    p_tr_max: f64,
    rectenna: &RectennaParams,
    h: &FrequencyResponse,
    eps0: f64,
) -> Result<IdealSolution> {
    let radius = (2.0 * p_tr_max).sqrt();
    let project = |g: &crate::rectenna::ZdcGradient, prev: &MultisineWaveform| -> Result<MultisineWaveform> {
        let norm = g.norm();
        if norm == 0.0 {
            return Ok(prev.clone());
        }
        let x: Vec<f64> = g.to_stacked().iter().map(|a| a * radius / norm).collect();
        MultisineWaveform::from_stacked(*prev.grid(), &x)
    };
    let mut w = start.scaled(radius / (2.0 * start.average_power()).sqrt());
    let mut z = z_dc(rectenna, &w, h)?;
    let mut trace = vec![z];
    for iter in 1..=IDEAL_MAX_ITER {
        let g = z_dc_gradient(rectenna, &w, h)?;
        let next = project(&g, &w)?;
        let zn = z_dc(rectenna, &next, h)?;
        trace.push(zn);
        let done = (zn - z).abs() <= eps0 * zn.abs().max(f64::MIN_POSITIVE);
        w = next;
        z = zn;
        if done {
            return Ok(IdealSolution { waveform: w, z_dc: z, z_dc_trace: trace, iterations: iter, status: SolveStatus::Converged });
        }
    }
    Ok(IdealSolution { waveform: w, z_dc: z, z_dc_trace: trace, iterations: IDEAL_MAX_ITER, status: SolveStatus::MaxIter })
}

/// Best transmit waveform for an ideal (linear, unlimited) amplifier under
/// the transmit power limit. Successive linearization of the convex `z_dc`
/// gives the closed-form update `w ← √(2P)·α/‖α‖`; it is run from a
/// matched-filter start and from the strongest single carrier, and the
/// better end point is returned.
pub fn optimize_ideal_hpa(
    p_tr_max: f64,
    rectenna: &RectennaParams,
    h: &FrequencyResponse,
    eps0: f64,
) -> Result<IdealSolution> {
    if !(p_tr_max > 0.0 && p_tr_max.is_finite()) {
        return Err(Error::Contract(format!("transmit power limit must be positive, got {p_tr_max}")));
    }
    if !(eps0 > 0.0) {
        return Err(Error::Contract(format!("tolerance must be positive, got {eps0}")));
    }
    let grid = *h.grid();
    let matched: Vec<Complex64> = h.gains().iter().map(|g| g.conj()).collect();
    let mut starts = Vec::new();
    if matched.iter().any(|g| g.norm_sqr() > 0.0) {
        starts.push(MultisineWaveform::new(grid, matched)?);
    }
    starts.push(single_carrier_best(h, p_tr_max)?);
    let mut best: Option<IdealSolution> = None;
    for s in starts {
        let sol = ideal_scp(s, p_tr_max, rectenna, h, eps0)?;
        if best.as_ref().is_none_or(|b| sol.z_dc > b.z_dc) {
            best = Some(sol);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Index of the strongest sub-carrier, lowest index on ties.
pub fn strongest_subcarrier(h: &FrequencyResponse) -> usize {
    let mut best = 0;
    for (i, g) in h.gains().iter().enumerate() {
        if g.norm_sqr() > h.gains()[best].norm_sqr() {
            best = i;
        }
    }
    best
}

/// All of `power` on the strongest sub-carrier.
pub fn single_carrier_best(h: &FrequencyResponse, power: f64) -> Result<MultisineWaveform> {
    if !(power >= 0.0) {
        return Err(Error::Contract(format!("power must be non-negative, got {power}")));
    }
    let mut w = vec![Complex64::new(0.0, 0.0); h.len()];
    w[strongest_subcarrier(h)] = Complex64::new((2.0 * power).sqrt(), 0.0);
    MultisineWaveform::new(*h.grid(), w)
}

/// `power` split equally over the `k` strongest sub-carriers, phased so the
/// received tones add coherently.
pub fn k_tone_start(h: &FrequencyResponse, k: usize, power: f64) -> Result<MultisineWaveform> {
    if k == 0 || k > h.len() {
        return Err(Error::Contract(format!("k must lie in 1..={}, got {k}", h.len())));
    }
    if !(power >= 0.0) {
        return Err(Error::Contract(format!("power must be non-negative, got {power}")));
    }
    let mut order: Vec<usize> = (0..h.len()).collect();
    // Stable sort keeps the lowest index first on ties.
    order.sort_by(|&a, &b| h.gains()[b].norm_sqr().total_cmp(&h.gains()[a].norm_sqr()));
    let a = (2.0 * power / k as f64).sqrt();
    let mut w = vec![Complex64::new(0.0, 0.0); h.len()];
    for &i in &order[..k] {
        let g = h.gains()[i];
        w[i] = if g.norm() > 0.0 { g.conj() / g.norm() * a } else { Complex64::new(a, 0.0) };
    }
    MultisineWaveform::new(*h.grid(), w)
}

/// Single-carrier amplifier input meeting both limits: the largest input
/// amplitude whose output amplitude stays within the transmit limit.
pub fn single_carrier_input(
    h: &FrequencyResponse,
    sspa: &SspaParams,
    p_in_max: f64,
    p_tr_max: f64,
) -> Result<MultisineWaveform> {
    let a_in = (2.0 * p_in_max).sqrt();
    let c_tr = (2.0 * p_tr_max).sqrt();
    let a = if c_tr >= sspa.a_s() { a_in } else { a_in.min(sspa.inverse_amplitude(c_tr)?) };
    let mut w = vec![Complex64::new(0.0, 0.0); h.len()];
    w[strongest_subcarrier(h)] = Complex64::new(a, 0.0);
    MultisineWaveform::new(*h.grid(), w)
}

/// Largest scale `s ∈ [0, s_max]` such that `s·w` keeps the transmit power
/// within `p_tr_max`, found by bisection (transmit power grows with drive).
pub(crate) fn scale_to_limits(
    w: &MultisineWaveform,
    sspa: &SspaParams,
    p_in_max: f64,
    p_tr_max: f64,
    kappa: f64,
) -> Result<MultisineWaveform> {
    let p = w.average_power();
    if p == 0.0 {
        return Err(Error::Degenerate("cannot scale the zero waveform".into()));
    }
    let s_max = (p_in_max / p).sqrt();
    let tr_ok = |s: f64| -> Result<bool> {
        let (_, tr) = chain_powers(&w.scaled(s), sspa, kappa)?;
        Ok(tr.average_power() <= p_tr_max)
    };
    if tr_ok(s_max)? {
        return Ok(w.scaled(s_max));
    }
    let (mut lo, mut hi) = (0.0, s_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tr_ok(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * s_max {
            break;
        }
    }
    Ok(w.scaled(lo))
}

/// The ideal-amplifier optimum fed straight into the real amplifier, scaled
/// down by bisection when it would break either power limit.
pub fn no_hpa_waveform(
    sspa: &SspaParams,
    rectenna: &RectennaParams,
    h: &FrequencyResponse,
    p_in_max: f64,
    p_tr_max: f64,
    kappa: f64,
    eps0: f64,
) -> Result<MultisineWaveform> {
    let ideal = optimize_ideal_hpa(p_in_max, rectenna, h, eps0)?;
    scale_to_limits(&ideal.waveform, sspa, p_in_max, p_tr_max, kappa)
}

/// Grid shared by the flat-channel helpers in tests and the CLI defaults.
pub fn default_grid(n: usize) -> Result<FrequencyGrid> {
    FrequencyGrid::with_bandwidth(5.18e9, 10e6, n)
}

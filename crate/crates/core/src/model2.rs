//! Transmit-side optimization with the input power expressed through the
//! inverse amplifier.
//!
//! Only the in-band transmit weights are optimized. The input that produces
//! them is whatever the inverse amplifier maps the transmit envelope to,
//! so its bandwidth is not limited to the band. The input power is the
//! period average of `|f⁻¹(x_tr(t))|²/2`, evaluated by an `M`-point rectangle
//! rule; as a function of the weights it is convex.
//!
//! Each outer iteration linearizes `z_dc` and solves the convex remainder
//! with a log barrier and damped Newton steps.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::baselines::{evaluate_chain_spectrum, k_tone_start, no_hpa_waveform, optimize_ideal_hpa, single_carrier_best, ChainReport};
use crate::channel::FrequencyResponse;
use crate::error::{Error, Result};
use crate::hpa::SspaParams;
use crate::model1::{optimize_model1, Model1Config, Model1Init};
use crate::numopt::{newton_minimize, NewtonOptions, SmoothEval, SolveStatus};
use crate::rectenna::{z_dc, z_dc_gradient, RectennaParams};
use crate::signal::{forward_dft, ExtendedSpectrum, FrequencyGrid, MultisineWaveform};

/// Samples per sub-carrier for envelope checks.
const ENVELOPE_OVERSAMPLING: usize = 64;
/// Largest quadrature size, in samples per sub-carrier.
const MAX_QUADRATURE_FACTOR: usize = 1024;
/// Approximations are evaluated on at least `2·8·N` bins.
const APPROX_KAPPA: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model2Init {
    /// Ideal-amplifier optimum at the transmit limit.
    Ideal,
    SingleCarrier,
    /// Ideal, single-carrier, the filtered output of the backed-off ideal
    /// input and equal-power `k`-tone starts; keeps the best end point.
    BestOf,
    /// The transmit weights of the best-of Model I solution, and the ideal
    /// optimum. Far cheaper than `BestOf` for a similar basin choice.
    FromModel1,
    Provided(MultisineWaveform),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model2Config {
    pub p_in_max: f64,
    pub p_tr_max: f64,
    pub eps_scp: f64,
    pub barrier_t0: f64,
    pub barrier_mu: f64,
    pub barrier_eps: f64,
    /// Initial quadrature points per sub-carrier; doubled until converged.
    pub quadrature_factor: usize,
    pub max_scp_iter: usize,
    pub max_newton_iter: usize,
    /// Input bandwidth kept by the band-limited approximation, in units of
    /// the transmit bandwidth. `None` skips the approximation.
    pub extension_factor: Option<f64>,
    pub init: Model2Init,
}

impl Model2Config {
    pub fn new(p_in_max: f64, p_tr_max: f64) -> Self {
        Self {
            p_in_max,
            p_tr_max,
            eps_scp: 1e-5,
            barrier_t0: 1.0,
            barrier_mu: 10.0,
            barrier_eps: 1e-6,
            quadrature_factor: 32,
            max_scp_iter: 100,
            max_newton_iter: 200,
            extension_factor: Some(1.5),
            init: Model2Init::Ideal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("p_in_max", self.p_in_max),
            ("p_tr_max", self.p_tr_max),
            ("eps_scp", self.eps_scp),
            ("barrier_t0", self.barrier_t0),
            ("barrier_eps", self.barrier_eps),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Contract(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.barrier_mu > 1.0) {
            return Err(Error::Contract(format!("barrier_mu must exceed 1, got {}", self.barrier_mu)));
        }
        if self.quadrature_factor < 16 {
            return Err(Error::Contract("at least 16 quadrature points per sub-carrier are required".into()));
        }
        if self.max_scp_iter == 0 || self.max_newton_iter == 0 {
            return Err(Error::Contract("iteration limits must be positive".into()));
        }
        if let Some(e) = self.extension_factor {
            if !(e.is_finite() && e >= 1.0) {
                return Err(Error::Contract(format!("extension_factor must be ≥ 1, got {e}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActiveConstraint {
    None,
    Input,
    Transmit,
    Both,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model2Diagnostics {
    pub scp_iterations: usize,
    pub newton_iterations: usize,
    pub quadrature_points: usize,
    /// Barrier parameter of the last inner solve.
    pub final_t: f64,
    pub status: SolveStatus,
    /// Linear objective after each barrier stage of the last inner solve.
    pub last_barrier_path: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandLimitedInput {
    pub spectrum: ExtendedSpectrum,
    pub extension_factor: f64,
    pub z_dc: f64,
    pub z_dc_exact: f64,
    pub z_dc_ratio: f64,
    pub report: ChainReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model2Solution {
    pub w_tr: MultisineWaveform,
    /// One period of the reconstructed input at the quadrature rate.
    pub input_samples: Vec<Complex64>,
    pub approximation: Option<BandLimitedInput>,
    pub z_dc: f64,
    pub z_dc_trace: Vec<f64>,
    pub max_envelope_ratio: f64,
    pub p_in: f64,
    pub active: ActiveConstraint,
    /// Chain evaluation of the reconstructed input.
    pub report: ChainReport,
    pub diagnostics: Model2Diagnostics,
}

/// `φ(u) = u·(1 − (u/A_s²)^β)^{−1/β}` and its first two derivatives, so that
/// `|f⁻¹(x)|² = φ(|x|²)/G²`. `None` at or beyond saturation.
fn phi(u: f64, a_s2: f64, beta: f64) -> Option<(f64, f64, f64)> {
    let r = u / a_s2;
    let s = r.powf(beta);
    if !(s < 1.0) {
        return None;
    }
    let one = 1.0 - s;
    let v = u * one.powf(-1.0 / beta);
    let d1 = one.powf(-(beta + 1.0) / beta);
    let s_over_u = r.powf(beta - 1.0) / a_s2;
    let d2 = (beta + 1.0) * s_over_u * one.powf(-(2.0 * beta + 1.0) / beta);
    Some((v, d1, d2))
}

fn saturation_error(envelope: f64, sspa: &SspaParams) -> Error {
    Error::SaturationInfeasible { envelope, a_s: sspa.a_s() }
}

/// Input power needed to produce `w_tr`, by the `m`-point rectangle rule.
pub fn input_power_integral(w_tr: &MultisineWaveform, sspa: &SspaParams, m: usize) -> Result<f64> {
    let a_s2 = sspa.a_s() * sspa.a_s();
    let mut sum = 0.0;
    for x in w_tr.baseband_samples(m)? {
        let u = x.norm_sqr();
        let (v, _, _) = phi(u, a_s2, sspa.beta()).ok_or_else(|| saturation_error(u.sqrt(), sspa))?;
        sum += v;
    }
    Ok(sum / (2.0 * sspa.gain() * sspa.gain() * m as f64))
}

/// Gradient and Hessian of [`input_power_integral`] with respect to the
/// stacked weights `[w̄, ŵ]`.
pub fn input_power_derivatives(
    w_tr: &MultisineWaveform,
    sspa: &SspaParams,
    m: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let q = Quadrature::new(w_tr.len(), m)?;
    let e = q.eval(sspa, &w_tr.to_stacked(), true)?;
    Ok((e.gradient, e.hessian.expect("requested")))
}

struct Quadrature {
    n: usize,
    m: usize,
    /// `e^{j2πkn/M}` indexed `[k*n_len + n]`.
    twiddle: Vec<Complex64>,
}

struct PowerEval {
    value: f64,
    gradient: DVector<f64>,
    hessian: Option<DMatrix<f64>>,
    peak: f64,
}

impl Quadrature {
    fn new(n: usize, m: usize) -> Result<Self> {
        if m < 2 * n {
            return Err(Error::Contract(format!("{m} quadrature points cannot resolve {n} sub-carriers")));
        }
        let twiddle = (0..m)
            .flat_map(|k| (0..n).map(move |i| Complex64::from_polar(1.0, 2.0 * PI * ((k * i) % m) as f64 / m as f64)))
            .collect();
        Ok(Self { n, m, twiddle })
    }

    fn samples(&self, w: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.m];
        for i in 0..self.n {
            buf[i] = Complex64::new(w[i], w[self.n + i]);
        }
        crate::signal::inverse_dft(&mut buf);
        buf
    }

    fn eval(&self, sspa: &SspaParams, w: &[f64], hessian: bool) -> Result<PowerEval> {
        let n = self.n;
        let a_s2 = sspa.a_s() * sspa.a_s();
        let c = 1.0 / (2.0 * sspa.gain() * sspa.gain() * self.m as f64);
        let xs = self.samples(w);
        let mut value = 0.0;
        let mut gradient = DVector::zeros(2 * n);
        let mut du = DMatrix::zeros(self.m, 2 * n);
        let mut d2w = DVector::zeros(self.m);
        // c_d = Σ_k φ'_k e^{j2πkd/M} for d in (−N, N), index d + N − 1.
        let mut circ = vec![Complex64::new(0.0, 0.0); 2 * n - 1];
        let mut peak: f64 = 0.0;
        for (k, x) in xs.iter().enumerate() {
            let u = x.norm_sqr();
            peak = peak.max(u.sqrt());
            let (v, d1, d2) = phi(u, a_s2, sspa.beta()).ok_or_else(|| saturation_error(u.sqrt(), sspa))?;
            value += v;
            for i in 0..n {
                let e = self.twiddle[k * n + i];
                // ∂u/∂w̄_i = 2Re(x* e), ∂u/∂ŵ_i = 2Re(x* j e)
                let xe = x.conj() * e;
                du[(k, i)] = 2.0 * xe.re;
                du[(k, n + i)] = -2.0 * xe.im;
            }
            for p in 0..2 * n {
                gradient[p] += d1 * du[(k, p)];
            }
            if hessian {
                d2w[k] = d2;
                for d in 0..n {
                    let e = self.twiddle[k * n + d];
                    circ[n - 1 + d] += e * d1;
                    if d > 0 {
                        circ[n - 1 - d] += e.conj() * d1;
                    }
                }
            }
        }
        let hessian = hessian.then(|| {
            let mut scaled = du.clone();
            for k in 0..self.m {
                scaled.row_mut(k).scale_mut(d2w[k]);
            }
            let mut h = du.transpose() * scaled;
            for p in 0..n {
                for q in 0..n {
                    let cd = circ[(n - 1 + q) - p];
                    // 2Re(e*_p e_q) = 2Re(c), 2Re(e*_p j e_q) = −2Im(c)
                    h[(p, q)] += 2.0 * cd.re;
                    h[(n + p, n + q)] += 2.0 * cd.re;
                    h[(p, n + q)] += -2.0 * cd.im;
                    h[(n + p, q)] += 2.0 * cd.im;
                }
            }
            h * c
        });
        Ok(PowerEval { value: value * c, gradient: gradient * c, hessian, peak })
    }
}

/// Samples of `f⁻¹(x_tr(t))` over one period, `oversampling·N` points.
pub fn reconstruct_input_signal(w_tr: &MultisineWaveform, sspa: &SspaParams, oversampling: usize) -> Result<Vec<Complex64>> {
    if oversampling < 4 {
        return Err(Error::Contract("oversampling must be at least 4".into()));
    }
    w_tr.baseband_samples(oversampling * w_tr.len())?
        .into_iter()
        .map(|x| sspa.inverse(x))
        .collect()
}

fn samples_to_spectrum(grid: FrequencyGrid, samples: &[Complex64]) -> Result<ExtendedSpectrum> {
    let mut buf = samples.to_vec();
    forward_dft(&mut buf);
    let s = 1.0 / samples.len() as f64;
    ExtendedSpectrum::from_bins(grid, buf.into_iter().map(|b| b * s).collect())
}

/// Chain evaluation of a reconstructed input given as time samples.
pub fn evaluate_input_samples(
    samples: &[Complex64],
    grid: FrequencyGrid,
    sspa: &SspaParams,
    rectenna: &RectennaParams,
    h: &FrequencyResponse,
) -> Result<ChainReport> {
    let kappa = samples.len() as f64 / (2.0 * grid.len() as f64);
    evaluate_chain_spectrum(&samples_to_spectrum(grid, samples)?, sspa, rectenna, h, kappa)
}

/// Keeps input bins at offsets `[−e, N−1+e]` with `e = round((ext−1)·N/2)`
/// and compares the chain result against the full reconstructed input.
pub fn band_limited_approximation(
    samples: &[Complex64],
    grid: FrequencyGrid,
    extension_factor: f64,
    sspa: &SspaParams,
    rectenna: &RectennaParams,
    h: &FrequencyResponse,
) -> Result<BandLimitedInput> {
    if !(extension_factor.is_finite() && extension_factor >= 1.0) {
        return Err(Error::Contract(format!("extension_factor must be ≥ 1, got {extension_factor}")));
    }
    let n = grid.len();
    let full = samples_to_spectrum(grid, samples)?;
    let exact = evaluate_input_samples(samples, grid, sspa, rectenna, h)?;
    let kappa = (samples.len() as f64 / (2.0 * n as f64)).max(APPROX_KAPPA);
    let mut bins = ExtendedSpectrum::zeros(grid, kappa)?.bins().to_vec();
    let len = bins.len() as i64;
    let extra = ((extension_factor - 1.0) * n as f64 / 2.0).round() as i64;
    let lo = -extra;
    let hi = n as i64 - 1 + extra;
    for i in 0..full.len() {
        let off = full.offset_of(i);
        if off >= lo && off <= hi && off < len / 2 && off >= -len / 2 {
            bins[off.rem_euclid(len) as usize] = full.bins()[i];
        }
    }
    let spectrum = ExtendedSpectrum::from_bins(grid, bins)?;
    let report = evaluate_chain_spectrum(&spectrum, sspa, rectenna, h, kappa)?;
    Ok(BandLimitedInput {
        spectrum,
        extension_factor,
        z_dc: report.z_dc,
        z_dc_exact: exact.z_dc,
        z_dc_ratio: report.z_dc / exact.z_dc,
        report,
    })
}

fn dense_peak(w: &MultisineWaveform) -> Result<f64> {
    Ok(w.baseband_samples(ENVELOPE_OVERSAMPLING * w.len())?
        .iter()
        .map(|x| x.norm())
        .fold(0.0, f64::max))
}

struct Problem<'a> {
    cfg: &'a Model2Config,
    sspa: &'a SspaParams,
    quad: Quadrature,
    grid: FrequencyGrid,
}

impl Problem<'_> {
    fn strictly_feasible(&self, w: &MultisineWaveform) -> Result<bool> {
        if dense_peak(w)? > 0.95 * self.sspa.a_s() {
            return Ok(false);
        }
        if w.average_power() > 0.99 * self.cfg.p_tr_max {
            return Ok(false);
        }
        match self.quad.eval(self.sspa, &w.to_stacked(), false) {
            Ok(e) => Ok(e.value <= 0.99 * self.cfg.p_in_max),
            Err(Error::SaturationInfeasible { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// Largest scale in `(0, 1]` making `w` strictly feasible.
    fn interior_start(&self, w: &MultisineWaveform) -> Result<MultisineWaveform> {
        if self.strictly_feasible(w)? {
            return Ok(w.clone());
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.strictly_feasible(&w.scaled(mid))? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if lo == 0.0 {
            return Err(Error::Infeasible("no strictly feasible start along the scaling ray".into()));
        }
        Ok(w.scaled(lo))
    }

    /// Barrier continuation for `max aᵀw` over the convex feasible set.
    fn barrier_solve(&self, a: &DVector<f64>, start: &MultisineWaveform) -> Result<(MultisineWaveform, usize, f64, Vec<f64>)> {
        let cfg = self.cfg;
        let mut x = DVector::from_vec(start.to_stacked());
        let mut t = cfg.barrier_t0;
        let mut iterations = 0;
        let mut path = Vec::new();
        let dim = x.len();
        loop {
            let eval = |w: &DVector<f64>| -> Option<SmoothEval> {
                let ptr = 0.5 * w.norm_squared();
                let s1 = 1.0 - ptr / cfg.p_tr_max;
                if s1 <= 0.0 {
                    return None;
                }
                let pe = self.quad.eval(self.sspa, w.as_slice(), true).ok()?;
                let s2 = 1.0 - pe.value / cfg.p_in_max;
                if s2 <= 0.0 || pe.peak >= self.sspa.a_s() {
                    return None;
                }
                let gp = &pe.gradient / cfg.p_in_max;
                let value = -t * a.dot(w) - s1.ln() - s2.ln();
                let g1 = w / cfg.p_tr_max;
                let gradient = -a * t + &g1 / s1 + &gp / s2;
                let mut hessian = DMatrix::identity(dim, dim) / (cfg.p_tr_max * s1);
                hessian += &g1 * g1.transpose() / (s1 * s1);
                hessian += pe.hessian.expect("requested") / (cfg.p_in_max * s2);
                hessian += &gp * gp.transpose() / (s2 * s2);
                Some(SmoothEval { value, gradient, hessian })
            };
            let opts = NewtonOptions {
                grad_tol: 1e-9 * (1.0 + t * a.amax()),
                decrement_tol: 1e-12,
                max_iter: cfg.max_newton_iter,
            };
            let r = newton_minimize(eval, x, &opts)?;
            iterations += r.diagnostics.iterations;
            x = r.x;
            path.push(a.dot(&x));
            if 2.0 / t < cfg.barrier_eps {
                break;
            }
            t *= cfg.barrier_mu;
        }
        Ok((MultisineWaveform::from_stacked(self.grid, x.as_slice())?, iterations, t, path))
    }
}

struct Run {
    w: MultisineWaveform,
    z: f64,
    trace: Vec<f64>,
    scp_iterations: usize,
    newton_iterations: usize,
    final_t: f64,
    status: SolveStatus,
    path: Vec<f64>,
}

fn run_from(problem: &Problem, start: &MultisineWaveform, rectenna: &RectennaParams, h: &FrequencyResponse) -> Result<Run> {
    let cfg = problem.cfg;
    let mut op = problem.interior_start(start)?;
    let mut z = z_dc(rectenna, &op, h)?;
    let mut trace = vec![z];
    let mut newton_iterations = 0;
    let mut scp_iterations = 0;
    let mut status = SolveStatus::MaxIter;
    let mut final_t = cfg.barrier_t0;
    let mut path = Vec::new();
    for _ in 0..cfg.max_scp_iter {
        scp_iterations += 1;
        let a = DVector::from_vec(z_dc_gradient(rectenna, &op, h)?.to_stacked()) / z;
        let start = problem.interior_start(&op)?;
        let (w, it, t, p) = problem.barrier_solve(&a, &start)?;
        newton_iterations += it;
        final_t = t;
        path = p;
        let z_new = z_dc(rectenna, &w, h)?;
        trace.push(z_new);
        if z_new < z * (1.0 - 1e-9) {
            status = SolveStatus::Converged;
            break;
        }
        let delta = z_new - z;
        op = w;
        z = z_new;
        if delta.abs() < cfg.eps_scp * z {
            status = SolveStatus::Converged;
            break;
        }
    }
    Ok(Run { w: op, z, trace, scp_iterations, newton_iterations, final_t, status, path })
}

fn candidate_starts(
    cfg: &Model2Config,
    sspa: &SspaParams,
    rectenna: &RectennaParams,
    h: &FrequencyResponse,
) -> Result<Vec<MultisineWaveform>> {
    let ideal = || optimize_ideal_hpa(cfg.p_tr_max, rectenna, h, 1e-10).map(|s| s.waveform);
    Ok(match &cfg.init {
        Model2Init::Ideal => vec![ideal()?],
        Model2Init::SingleCarrier => vec![single_carrier_best(h, cfg.p_tr_max)?],
        Model2Init::BestOf => {
            let w_in = no_hpa_waveform(sspa, rectenna, h, cfg.p_in_max, cfg.p_tr_max, 2.0, 1e-10)?;
            let (_, tr) = crate::baselines::chain_powers(&w_in, sspa, 2.0)?;
            let mut v = vec![ideal()?, single_carrier_best(h, cfg.p_tr_max)?, tr];
            for k in 2..=h.len() {
                v.push(k_tone_start(h, k, cfg.p_tr_max)?);
            }
            v
        }
        Model2Init::FromModel1 => {
            let mut c1 = Model1Config::new(cfg.p_in_max, cfg.p_tr_max);
            c1.init = Model1Init::BestOf;
            let m1 = optimize_model1(&c1, sspa, rectenna, h)?;
            vec![m1.w_tr, ideal()?]
        }
        Model2Init::Provided(w) => {
            if w.len() != h.len() {
                return Err(Error::Contract("provided start has the wrong length".into()));
            }
            vec![w.clone()]
        }
    })
}

/// Shrinks `w` until its dense envelope stays below saturation and the
/// input power on a doubled grid still holds the limit.
fn final_check(w: &MultisineWaveform, sspa: &SspaParams, cfg: &Model2Config, m: usize) -> Result<MultisineWaveform> {
    let ok = |w: &MultisineWaveform| -> Result<bool> {
        if dense_peak(w)? >= sspa.a_s() {
            return Ok(false);
        }
        match input_power_integral(w, sspa, 2 * m) {
            Ok(p) => Ok(p <= cfg.p_in_max * (1.0 + 1e-7) && w.average_power() <= cfg.p_tr_max * (1.0 + 1e-7)),
            Err(Error::SaturationInfeasible { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    };
    if ok(w)? {
        return Ok(w.clone());
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ok(&w.scaled(mid))? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(w.scaled(lo))
}

pub fn optimize_model2(
    cfg: &Model2Config,
    sspa: &SspaParams,
    rectenna: &RectennaParams,
    h: &FrequencyResponse,
) -> Result<Model2Solution> {
    cfg.validate()?;
    let n = h.len();
    let grid = *h.grid();
    let mut factor = cfg.quadrature_factor;
    let starts = candidate_starts(cfg, sspa, rectenna, h)?;
    let mut best: Option<Run> = None;
    let mut last_err = None;
    for start in &starts {
        if start.is_zero() {
            continue;
        }
        let problem = Problem { cfg, sspa, quad: Quadrature::new(n, factor * n)?, grid };
        match run_from(&problem, start, rectenna, h) {
            Ok(run) => {
                if best.as_ref().is_none_or(|b| run.z > b.z) {
                    best = Some(run);
                }
            }
            Err(e @ Error::Infeasible(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    let mut run = best.ok_or_else(|| last_err.unwrap_or_else(|| Error::Infeasible("no usable start waveform".into())))?;
    // Refine the quadrature until the constraint value settles.
    loop {
        let m = factor * n;
        let p_m = input_power_integral(&run.w, sspa, m);
        let p_2m = input_power_integral(&run.w, sspa, 2 * m);
        let settled = match (p_m, p_2m) {
            (Ok(a), Ok(b)) => (a - b).abs() <= 1e-8 * b,
            _ => false,
        };
        if settled || 2 * factor > MAX_QUADRATURE_FACTOR {
            break;
        }
        factor *= 2;
        let problem = Problem { cfg, sspa, quad: Quadrature::new(n, factor * n)?, grid };
        let mut next = run_from(&problem, &run.w, rectenna, h)?;
        let mut trace = std::mem::take(&mut run.trace);
        trace.extend(next.trace.drain(1..));
        next.trace = trace;
        next.scp_iterations += run.scp_iterations;
        next.newton_iterations += run.newton_iterations;
        run = next;
    }
    let m = factor * n;
    let w_tr = final_check(&run.w, sspa, cfg, m)?;
    let oversampling = 2 * factor;
    let input_samples = reconstruct_input_signal(&w_tr, sspa, oversampling)?;
    let report = evaluate_input_samples(&input_samples, grid, sspa, rectenna, h)?;
    let p_in = input_power_integral(&w_tr, sspa, oversampling * n)?;
    let max_envelope_ratio = dense_peak(&w_tr)? / sspa.a_s();
    let approximation = cfg
        .extension_factor
        .map(|e| band_limited_approximation(&input_samples, grid, e, sspa, rectenna, h))
        .transpose()?;
    let input_tight = p_in >= cfg.p_in_max * (1.0 - 1e-4);
    let tr_tight = w_tr.average_power() >= cfg.p_tr_max * (1.0 - 1e-4);
    let active = match (input_tight, tr_tight) {
        (true, true) => ActiveConstraint::Both,
        (true, false) => ActiveConstraint::Input,
        (false, true) => ActiveConstraint::Transmit,
        (false, false) => ActiveConstraint::None,
    };
    let mut trace = run.trace;
    if trace.last() != Some(&report.z_dc) {
        trace.push(report.z_dc);
    }
    Ok(Model2Solution {
        w_tr,
        input_samples,
        approximation,
        z_dc: report.z_dc,
        z_dc_trace: trace,
        max_envelope_ratio,
        p_in,
        active,
        report,
        diagnostics: Model2Diagnostics {
            scp_iterations: run.scp_iterations,
            newton_iterations: run.newton_iterations,
            quadrature_points: m,
            final_t: run.final_t,
            status: run.status,
            last_barrier_path: run.path,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{default_grid, evaluate_chain};
    use crate::channel::flat_channel;
    use crate::signal::average_power;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sspa() -> SspaParams {
        SspaParams::from_db(1.0, 10.0, 4.0).unwrap()
    }

    fn random_feasible(rng: &mut ChaCha8Rng, n: usize, frac: f64) -> MultisineWaveform {
        let w: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let w = MultisineWaveform::new(default_grid(n).unwrap(), w).unwrap();
        let peak = dense_peak(&w).unwrap();
        w.scaled(frac * sspa().a_s() / peak)
    }

    #[test]
    fn phi_derivatives() {
        for beta in [1.0, 2.0, 4.0] {
            for u in [0.3, 2.0, 7.0, 9.5] {
                let (_, d1, d2) = phi(u, 10.0, beta).unwrap();
                let h = 1e-6 * u;
                let p = phi(u + h, 10.0, beta).unwrap();
                let m = phi(u - h, 10.0, beta).unwrap();
                assert!(((p.0 - m.0) / (2.0 * h) - d1).abs() <= 1e-6 * d1.abs().max(1.0));
                assert!(((p.1 - m.1) / (2.0 * h) - d2).abs() <= 1e-5 * d2.abs().max(1.0));
            }
        }
        assert!(phi(10.0, 10.0, 4.0).is_none());
    }

    #[test]
    fn constant_envelope_closed_form() {
        let p = SspaParams::new(2.0, 3.0, 2.0).unwrap();
        let g = default_grid(3).unwrap();
        for c in [0.1, 1.5, 2.9] {
            let mut w = vec![Complex64::new(0.0, 0.0); 3];
            w[2] = Complex64::from_polar(c, 0.7);
            let w = MultisineWaveform::new(g, w).unwrap();
            let expect = c * c / (2.0 * 4.0) * (1.0 - (c / 3.0f64).powi(4)).powf(-0.5);
            let got = input_power_integral(&w, &p, 48).unwrap();
            assert!((got - expect).abs() <= 1e-12 * expect);
        }
        let mut w = vec![Complex64::new(0.0, 0.0); 3];
        w[0] = Complex64::new(1e-4, 0.0);
        let w = MultisineWaveform::new(g, w).unwrap();
        let got = input_power_integral(&w, &p, 48).unwrap();
        assert!((got - 1e-8 / 8.0).abs() <= 1e-9 * got);
    }

    #[test]
    fn saturated_envelope_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random_feasible(&mut rng, 4, 1.2);
        assert!(matches!(input_power_integral(&w, &sspa(), 256), Err(Error::SaturationInfeasible { .. })));
        assert!(reconstruct_input_signal(&w, &sspa(), 64).is_err());
    }

    #[test]
    fn matches_reconstructed_input_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let f = rng.random_range(0.1..0.95);
            let w = random_feasible(&mut rng, 4, f);
            let m = 4 * 64;
            let p = input_power_integral(&w, &sspa(), m).unwrap();
            let x = reconstruct_input_signal(&w, &sspa(), 64).unwrap();
            let direct = x.iter().map(|v| v.norm_sqr()).sum::<f64>() / (2.0 * x.len() as f64);
            let spec = samples_to_spectrum(*w.grid(), &x).unwrap();
            assert!((p - direct).abs() <= 1e-12 * p);
            assert!((p - average_power(spec.bins())).abs() <= 1e-10 * p);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let f = rng.random_range(0.2..0.9);
            let w = random_feasible(&mut rng, 4, f);
            let m = 128;
            let (g, h) = input_power_derivatives(&w, &sspa(), m).unwrap();
            let x = w.to_stacked();
            let step = 1e-6;
            let at = |x: &[f64]| MultisineWaveform::from_stacked(*w.grid(), x).unwrap();
            for p in 0..8 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[p] += step;
                xm[p] -= step;
                let fd = (input_power_integral(&at(&xp), &sspa(), m).unwrap()
                    - input_power_integral(&at(&xm), &sspa(), m).unwrap())
                    / (2.0 * step);
                assert!((fd - g[p]).abs() <= 1e-5 * g.amax(), "grad {p}");
                let (gp, _) = input_power_derivatives(&at(&xp), &sspa(), m).unwrap();
                let (gm, _) = input_power_derivatives(&at(&xm), &sspa(), m).unwrap();
                let col = (gp - gm) / (2.0 * step);
                for q in 0..8 {
                    assert!((col[q] - h[(q, p)]).abs() <= 1e-5 * h.amax(), "hess {q},{p}");
                }
            }
        }
    }

    #[test]
    fn zero_waveform_gradient_vanishes() {
        let w = MultisineWaveform::zeros(default_grid(4).unwrap());
        let (g, h) = input_power_derivatives(&w, &sspa(), 64).unwrap();
        assert_eq!(g.amax(), 0.0);
        // Small-signal curvature is I/G².
        assert!((h - DMatrix::identity(8, 8)).amax() < 1e-12);
    }

    #[test]
    fn hessian_is_positive_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let f = rng.random_range(0.05..0.97);
            let w = random_feasible(&mut rng, 4, f);
            let (_, h) = input_power_derivatives(&w, &sspa(), 128).unwrap();
            let min = h.symmetric_eigenvalues().min();
            assert!(min >= -1e-10 * h.amax().max(1.0), "{min}");
        }
    }

    #[test]
    fn midpoint_convexity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let f = rng.random_range(0.05..0.9);
            let a = random_feasible(&mut rng, 4, f);
            let f = rng.random_range(0.05..0.9);
            let b = random_feasible(&mut rng, 4, f);
            let mid = MultisineWaveform::new(
                *a.grid(),
                a.weights().iter().zip(b.weights()).map(|(x, y)| (x + y) * 0.5).collect(),
            )
            .unwrap();
            let f = |w: &MultisineWaveform| input_power_integral(w, &sspa(), 128).unwrap();
            assert!(f(&mid) <= 0.5 * (f(&a) + f(&b)) + 1e-12);
        }
    }

    #[test]
    fn reconstruction_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let w = random_feasible(&mut rng, 5, 0.9);
        let x = reconstruct_input_signal(&w, &sspa(), 32).unwrap();
        let tr = w.baseband_samples(160).unwrap();
        for (a, b) in x.iter().zip(&tr) {
            assert!((sspa().apply(*a) - b).norm() < 1e-10);
        }
        let small = w.scaled(1e-5);
        let x = reconstruct_input_signal(&small, &sspa(), 32).unwrap();
        for (a, b) in x.iter().zip(small.baseband_samples(160).unwrap()) {
            assert!((a - b).norm() <= 1e-9 * b.norm().max(1e-5));
        }
    }

    #[test]
    fn lossless_truncation_ratio_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let w = random_feasible(&mut rng, 4, 0.9);
        let h = flat_channel(*w.grid());
        let x = reconstruct_input_signal(&w, &sspa(), 32).unwrap();
        let r = band_limited_approximation(&x, *w.grid(), 100.0, &sspa(), &RectennaParams::default(), &h).unwrap();
        assert!((r.z_dc_ratio - 1.0).abs() < 1e-9);
    }

    #[test]
    fn truncation_ratio_comes_from_the_chain() {
        let h = flat_channel(default_grid(4).unwrap());
        let r = RectennaParams::default();
        let mut cfg = Model2Config::new(1.0, 1.0);
        cfg.extension_factor = Some(1.0);
        let sol = optimize_model2(&cfg, &sspa(), &r, &h).unwrap();
        let approx = sol.approximation.unwrap();
        let kappa = approx.spectrum.len() as f64 / 8.0;
        let chain = evaluate_chain_spectrum(&approx.spectrum, &sspa(), &r, &h, kappa).unwrap();
        assert_eq!(chain.z_dc, approx.z_dc);
        assert!((approx.z_dc_exact - sol.z_dc).abs() <= 1e-8 * sol.z_dc);
        assert!((approx.z_dc_ratio - approx.z_dc / sol.z_dc).abs() <= 1e-8);
        // Only offsets 0..N−1 survive.
        for i in 0..approx.spectrum.len() {
            let off = approx.spectrum.offset_of(i);
            if !(0..4).contains(&off) {
                assert_eq!(approx.spectrum.bins()[i].norm(), 0.0);
            }
        }
        assert!(approx.report.p_in < sol.report.p_in);
    }

    #[test]
    fn single_carrier_matches_model1_scan() {
        let h = flat_channel(default_grid(1).unwrap());
        let r = RectennaParams::default();
        for (p_in, p_tr) in [(0.5, 0.5), (10.0, 10.0), (10.0, 2.0), (2.0, 10.0)] {
            let sol = optimize_model2(&Model2Config::new(p_in, p_tr), &sspa(), &r, &h).unwrap();
            let mut best: f64 = 0.0;
            for i in 1..=20000 {
                let a = (2.0 * p_in).sqrt() * i as f64 / 20000.0;
                let c = sspa().amplitude(a).unwrap();
                if 0.5 * c * c > p_tr {
                    break;
                }
                let w = MultisineWaveform::new(*h.grid(), vec![Complex64::new(c, 0.0)]).unwrap();
                best = best.max(z_dc(&r, &w, &h).unwrap());
            }
            assert!((sol.z_dc - best).abs() <= 1e-3 * best, "{p_in},{p_tr}: {} vs {best}", sol.z_dc);
        }
    }

    #[test]
    fn solution_invariants() {
        let h = flat_channel(default_grid(4).unwrap());
        let r = RectennaParams::default();
        for (p_in, p_tr) in [(0.05, 5.0), (5.0, 0.05), (2.0, 2.0), (20.0, 20.0)] {
            let sol = optimize_model2(&Model2Config::new(p_in, p_tr), &sspa(), &r, &h).unwrap();
            assert!(sol.max_envelope_ratio < 1.0);
            assert!(sol.p_in <= p_in * (1.0 + 1e-6));
            assert!(sol.w_tr.average_power() <= p_tr * (1.0 + 1e-6));
            let chain = evaluate_input_samples(&sol.input_samples, *h.grid(), &sspa(), &r, &h).unwrap();
            assert!((chain.z_dc - sol.z_dc).abs() <= 1e-8 * sol.z_dc);
            assert!((z_dc(&r, &sol.w_tr, &h).unwrap() - sol.z_dc).abs() <= 1e-8 * sol.z_dc);
            for w in sol.diagnostics.last_barrier_path.windows(2) {
                assert!(w[1] >= w[0] - 1e-9 * w[0].abs());
            }
            assert!(2.0 / sol.diagnostics.final_t < 1e-6);
            if p_in < p_tr / 10.0 {
                assert!(matches!(sol.active, ActiveConstraint::Input | ActiveConstraint::Both), "{:?}", sol.active);
            }
            if p_tr < p_in / 10.0 {
                assert!(matches!(sol.active, ActiveConstraint::Transmit | ActiveConstraint::Both), "{:?}", sol.active);
            }
        }
    }

    #[test]
    fn small_signal_matches_ideal() {
        let h = flat_channel(default_grid(4).unwrap());
        let r = RectennaParams::default();
        let p = 0.01;
        let sol = optimize_model2(&Model2Config::new(p, p), &sspa(), &r, &h).unwrap();
        let ideal = optimize_ideal_hpa(p, &r, &h, 1e-10).unwrap();
        assert!((sol.z_dc - ideal.z_dc).abs() <= 1e-2 * ideal.z_dc);
        let w_in = no_hpa_waveform(&sspa(), &r, &h, p, p, 2.0, 1e-10).unwrap();
        let chain = evaluate_chain(&w_in, &sspa(), &r, &h, 2.0).unwrap();
        assert!(sol.z_dc >= chain.z_dc * (1.0 - 5e-3));
    }

    #[test]
    fn saturation_regime() {
        let h = flat_channel(default_grid(4).unwrap());
        let r = RectennaParams::default();
        let a = optimize_model2(&Model2Config::new(100.0, 20.0), &sspa(), &r, &h).unwrap();
        let b = optimize_model2(&Model2Config::new(100.0, 40.0), &sspa(), &r, &h).unwrap();
        assert!(a.max_envelope_ratio > 0.9 && a.max_envelope_ratio < 1.0);
        assert!(b.z_dc <= a.z_dc * 1.05, "{} vs {}", b.z_dc, a.z_dc);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn integral_at_least_output_over_gain(seed in 0u64..10_000, frac in 0.05f64..0.95) {
            // φ(u) ≥ u, so the input power bounds the transmit power / G².
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_feasible(&mut rng, 3, frac);
            let p = input_power_integral(&w, &sspa(), 96).unwrap();
            prop_assert!(p >= w.average_power() * (1.0 - 1e-12));
        }
    }
}

//! Joint input/transmit optimization with explicit amplifier constraints.
//!
//! The decision vector stacks `[w̄_in, ŵ_in, w̄_tr, ŵ_tr]`. The transmit
//! weights are tied to the input weights by `2N` equalities
//! `w_tr − BPF(HPA(w_in)) = 0`, and each weight set has its own power limit.
//!
//! The outer loop linearizes the convex `z_dc` at the current transmit
//! weights; the resulting problem (linear objective, quadratic inequalities,
//! nonlinear equalities) is solved by SQP with an exact Lagrangian Hessian,
//! eigenvalue-shift regularization and an ℓ1 merit line search.
//!
//! Whatever the solver does internally, the returned `w_tr` is recomputed
//! from `w_in` through the amplifier, so the solution is exactly consistent
//! with [`crate::baselines::evaluate_chain`].

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    chain_powers, evaluate_chain, k_tone_start, optimize_ideal_hpa, scale_to_limits, single_carrier_input, ChainReport,
};
use crate::channel::FrequencyResponse;
use crate::error::{Error, Result};
use crate::hpa::SspaParams;
use crate::numopt::{regularize_hessian, solve_lcqp, QuadraticSubproblem, SolveStatus};
use crate::rectenna::{z_dc, z_dc_gradient, RectennaParams};
use crate::signal::{forward_dft, MultisineWaveform, ENVELOPE_DELTA};

/// Starting point strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model1Init {
    /// Ideal-amplifier optimum, predistorted and projected onto the band, or
    /// fed directly and backed off, whichever harvests more.
    NoHpaBackoff,
    SingleCarrier,
    /// Every built-in start plus equal-power tones on the `k` strongest
    /// sub-carriers for each `k`; keeps the best end point.
    BestOf,
    Provided(MultisineWaveform),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model1Config {
    pub p_in_max: f64,
    pub p_tr_max: f64,
    pub kappa: f64,
    /// Outer stop: `|Δz| < eps_scp·z`.
    pub eps_scp: f64,
    /// Inner stop on the SQP step and constraint violation.
    pub eps_sqp: f64,
    pub max_scp_iter: usize,
    pub max_sqp_iter: usize,
    pub init: Model1Init,
    /// Take full SQP steps instead of the merit line search.
    pub full_step: bool,
}

impl Model1Config {
    pub fn new(p_in_max: f64, p_tr_max: f64) -> Self {
        Self {
            p_in_max,
            p_tr_max,
            kappa: 2.0,
            eps_scp: 1e-5,
            eps_sqp: 1e-6,
            max_scp_iter: 100,
            max_sqp_iter: 200,
            init: Model1Init::NoHpaBackoff,
            full_step: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p_in_max", self.p_in_max), ("p_tr_max", self.p_tr_max), ("eps_scp", self.eps_scp), ("eps_sqp", self.eps_sqp)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Contract(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_scp_iter == 0 || self.max_sqp_iter == 0 {
            return Err(Error::Contract("iteration limits must be positive".into()));
        }
        crate::signal::extended_len(1, self.kappa)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model1Diagnostics {
    pub scp_iterations: usize,
    pub sqp_iterations: usize,
    pub status: SolveStatus,
    /// SQP subproblems that ended without converging.
    pub sqp_failures: usize,
    /// Scale applied to `w_in` at exit to restore feasibility (1 if none).
    pub exit_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model1Solution {
    pub w_in: MultisineWaveform,
    pub w_tr: MultisineWaveform,
    pub z_dc: f64,
    pub z_dc_trace: Vec<f64>,
    pub equality_residual: f64,
    pub report: ChainReport,
    pub diagnostics: Model1Diagnostics,
}

/// Residuals `w_tr − BPF(HPA(w_in))`, real parts then imaginary parts.
pub fn equality_residuals(
    w_in: &MultisineWaveform,
    w_tr: &MultisineWaveform,
    sspa: &SspaParams,
    kappa: f64,
) -> Result<Vec<f64>> {
    if w_in.len() != w_tr.len() {
        return Err(Error::Contract("input and transmit waveforms differ in length".into()));
    }
    let map = Map::new(w_in.len(), kappa)?;
    let f = map.forward(sspa, &w_in.to_stacked());
    Ok(w_tr.to_stacked().iter().zip(&f).map(|(t, v)| t - v).collect())
}

/// Jacobian of [`equality_residuals`] with respect to the stacked
/// `[w̄_in, ŵ_in, w̄_tr, ŵ_tr]`, shape `2N × 4N`.
pub fn equality_jacobian(
    w_in: &MultisineWaveform,
    w_tr: &MultisineWaveform,
    sspa: &SspaParams,
    kappa: f64,
) -> Result<DMatrix<f64>> {
    if w_in.len() != w_tr.len() {
        return Err(Error::Contract("input and transmit waveforms differ in length".into()));
    }
    let n = w_in.len();
    let map = Map::new(n, kappa)?;
    let jf = map.jacobian(sspa, &w_in.to_stacked());
    let mut j = DMatrix::zeros(2 * n, 4 * n);
    j.view_mut((0, 0), (2 * n, 2 * n)).copy_from(&(-jf));
    for r in 0..2 * n {
        j[(r, 2 * n + r)] = 1.0;
    }
    Ok(j)
}

/// Precomputed DFT kernels for the in-band spectral map on `K` samples.
struct Map {
    n: usize,
    k: usize,
    /// `e^{j2πkn/K}` indexed `[k*n_len + n]`.
    twiddle: Vec<Complex64>,
}

struct Sample {
    x: Complex64,
    g: f64,
    d1: f64,
    d2: f64,
    /// `∂u/∂p` for the 2N real input parameters.
    du: Vec<f64>,
}

impl Map {
    fn new(n: usize, kappa: f64) -> Result<Self> {
        let k = crate::signal::extended_len(n, kappa)?;
        let twiddle = (0..k)
            .flat_map(|kk| (0..n).map(move |nn| Complex64::from_polar(1.0, 2.0 * PI * ((kk * nn) % k) as f64 / k as f64)))
            .collect();
        Ok(Self { n, k, twiddle })
    }

    fn e(&self, k: usize, n: usize) -> Complex64 {
        self.twiddle[k * self.n + n]
    }

    /// `∂x_k/∂p`: `e_kn` for the real part of `w_n`, `j·e_kn` for the imaginary.
    fn dx(&self, k: usize, p: usize) -> Complex64 {
        if p < self.n {
            self.e(k, p)
        } else {
            self.e(k, p - self.n) * Complex64::i()
        }
    }

    fn samples(&self, sspa: &SspaParams, w: &[f64]) -> Vec<Sample> {
        let n = self.n;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.k];
        for i in 0..n {
            buf[i] = Complex64::new(w[i], w[n + i]);
        }
        crate::signal::inverse_dft(&mut buf);
        buf.into_iter()
            .enumerate()
            .map(|(k, x)| {
                let u = x.norm_sqr() + ENVELOPE_DELTA * ENVELOPE_DELTA;
                let (g, d1, d2) = sspa.gain_in_power(u);
                let du = (0..2 * n).map(|p| 2.0 * (x.conj() * self.dx(k, p)).re).collect();
                Sample { x, g, d1, d2, du }
            })
            .collect()
    }

    /// In-band post-amplifier weights, stacked.
    fn forward(&self, sspa: &SspaParams, w: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.k];
        for i in 0..n {
            buf[i] = Complex64::new(w[i], w[n + i]);
        }
        crate::signal::inverse_dft(&mut buf);
        for x in &mut buf {
            let u = x.norm_sqr() + ENVELOPE_DELTA * ENVELOPE_DELTA;
            *x *= sspa.gain_in_power(u).0;
        }
        forward_dft(&mut buf);
        let s = 1.0 / self.k as f64;
        (0..n).map(|i| buf[i].re * s).chain((0..n).map(|i| buf[i].im * s)).collect()
    }

    /// `∂F/∂w_in`, shape `2N × 2N`.
    fn jacobian(&self, sspa: &SspaParams, w: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let samples = self.samples(sspa, w);
        let mut j = DMatrix::zeros(2 * n, 2 * n);
        let s = 1.0 / self.k as f64;
        for (k, sm) in samples.iter().enumerate() {
            for p in 0..2 * n {
                let dy = sm.x * (sm.d1 * sm.du[p]) + self.dx(k, p) * sm.g;
                for m in 0..n {
                    let v = dy * self.e(k, m).conj() * s;
                    j[(m, p)] += v.re;
                    j[(n + m, p)] += v.im;
                }
            }
        }
        j
    }

    /// `Σ_r mult_r ∇²F_r`, shape `2N × 2N`.
    fn weighted_hessian(&self, sspa: &SspaParams, w: &[f64], mult: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let samples = self.samples(sspa, w);
        let mut h = DMatrix::zeros(2 * n, 2 * n);
        let s = 1.0 / self.k as f64;
        for (k, sm) in samples.iter().enumerate() {
            // λ_k = (1/K) Σ_m (u_re,m − j·u_im,m)·e^{−j2πkm/K}
            let lambda: Complex64 = (0..n)
                .map(|m| Complex64::new(mult[m], -mult[n + m]) * self.e(k, m).conj())
                .sum::<Complex64>()
                * s;
            let lx = lambda * sm.x;
            let dxs: Vec<Complex64> = (0..2 * n).map(|p| self.dx(k, p)).collect();
            let ldx: Vec<Complex64> = dxs.iter().map(|d| lambda * d).collect();
            for p in 0..2 * n {
                for q in p..2 * n {
                    let d2u = 2.0 * (dxs[p].conj() * dxs[q]).re;
                    let v = lx.re * (sm.d2 * sm.du[p] * sm.du[q] + sm.d1 * d2u)
                        + sm.d1 * (sm.du[p] * ldx[q].re + sm.du[q] * ldx[p].re);
                    h[(p, q)] += v;
                    if q != p {
                        h[(q, p)] += v;
                    }
                }
            }
        }
        h
    }
}

/// One linearized subproblem: maximize `αᵀw_tr` subject to the amplifier
/// equalities and both power limits.
struct Subproblem<'a> {
    map: &'a Map,
    sspa: &'a SspaParams,
    alpha: DVector<f64>,
    p_in: f64,
    p_tr: f64,
    n: usize,
}

struct Point {
    f: f64,
    grad: DVector<f64>,
    c: DVector<f64>,
    jc: DMatrix<f64>,
    g: DVector<f64>,
    jg: DMatrix<f64>,
}

impl Subproblem<'_> {
    fn objective(&self, x: &DVector<f64>) -> f64 {
        -self.alpha.dot(&x.rows(2 * self.n, 2 * self.n))
    }

    fn constraints(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.n;
        let f = self.map.forward(self.sspa, x.rows(0, 2 * n).as_slice());
        let c = DVector::from_fn(2 * n, |r, _| x[2 * n + r] - f[r]);
        let pin = 0.5 * x.rows(0, 2 * n).norm_squared();
        let ptr = 0.5 * x.rows(2 * n, 2 * n).norm_squared();
        let g = DVector::from_vec(vec![pin / self.p_in - 1.0, ptr / self.p_tr - 1.0]);
        (c, g)
    }

    fn point(&self, x: &DVector<f64>) -> Point {
        let n = self.n;
        let mut grad = DVector::zeros(4 * n);
        grad.rows_mut(2 * n, 2 * n).copy_from(&(-&self.alpha));
        let (c, g) = self.constraints(x);
        let jf = self.map.jacobian(self.sspa, x.rows(0, 2 * n).as_slice());
        let mut jc = DMatrix::zeros(2 * n, 4 * n);
        jc.view_mut((0, 0), (2 * n, 2 * n)).copy_from(&(-jf));
        for r in 0..2 * n {
            jc[(r, 2 * n + r)] = 1.0;
        }
        let mut jg = DMatrix::zeros(2, 4 * n);
        for i in 0..2 * n {
            jg[(0, i)] = x[i] / self.p_in;
            jg[(1, 2 * n + i)] = x[2 * n + i] / self.p_tr;
        }
        Point { f: self.objective(x), grad, c, jc, g, jg }
    }

    fn lagrangian_hessian(&self, x: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n;
        let mut h = DMatrix::zeros(4 * n, 4 * n);
        // c = w_tr − F(w_in), so the equality curvature enters with a minus.
        let hf = self.map.weighted_hessian(self.sspa, x.rows(0, 2 * n).as_slice(), u.as_slice());
        h.view_mut((0, 0), (2 * n, 2 * n)).copy_from(&(-hf));
        for i in 0..2 * n {
            h[(i, i)] += v[0] / self.p_in;
            h[(2 * n + i, 2 * n + i)] += v[1] / self.p_tr;
        }
        h
    }

    fn violation(c: &DVector<f64>, g: &DVector<f64>) -> f64 {
        c.iter().map(|x| x.abs()).sum::<f64>() + g.iter().map(|x| x.max(0.0)).sum::<f64>()
    }
}

struct SqpOutcome {
    x: DVector<f64>,
    u: DVector<f64>,
    v: DVector<f64>,
    iterations: usize,
    converged: bool,
}

/// Least-squares multiplier estimate at `pt`, with inequality multipliers
/// only on (nearly) active rows and clamped to be non-negative.
fn initial_multipliers(pt: &Point) -> (DVector<f64>, DVector<f64>) {
    let me = pt.c.len();
    let active: Vec<usize> = (0..pt.g.len()).filter(|&i| pt.g[i] > -1e-6).collect();
    let d = pt.grad.len();
    let mut a = DMatrix::zeros(d, me + active.len());
    a.view_mut((0, 0), (d, me)).copy_from(&pt.jc.transpose());
    for (k, &i) in active.iter().enumerate() {
        a.set_column(me + k, &pt.jg.row(i).transpose());
    }
    let sol = a
        .svd(true, true)
        .solve(&(-&pt.grad), 1e-12)
        .unwrap_or_else(|_| DVector::zeros(me + active.len()));
    let u = sol.rows(0, me).into_owned();
    let mut v = DVector::zeros(pt.g.len());
    for (k, &i) in active.iter().enumerate() {
        v[i] = sol[me + k].max(0.0);
    }
    (u, v)
}

fn sqp(sub: &Subproblem, x0: DVector<f64>, cfg: &Model1Config, warm: Option<(DVector<f64>, DVector<f64>)>) -> Result<SqpOutcome> {
    let mut x = x0;
    let mut pt = sub.point(&x);
    let (mut u, mut v) = match warm {
        Some(m) => m,
        None => initial_multipliers(&pt),
    };
    let mut rho = 1.0f64;
    let x_scale = 1.0 + x.amax();
    for iter in 1..=cfg.max_sqp_iter {
        let h = sub.lagrangian_hessian(&x, &u, &v);
        let floor = 1e-8 * (1.0 + sub.alpha.amax() / x_scale);
        let (h, _) = regularize_hessian(&h, floor);
        let qp = QuadraticSubproblem {
            hessian: h,
            gradient: pt.grad.clone(),
            eq_jacobian: pt.jc.clone(),
            eq_residuals: pt.c.clone(),
            ineq_jacobian: pt.jg.clone(),
            ineq_residuals: pt.g.clone(),
        };
        let sol = solve_lcqp(&qp, 1e-12)?;
        if sol.diagnostics.status == SolveStatus::Infeasible {
            return Ok(SqpOutcome { x, u, v, iterations: iter, converged: false });
        }
        let d = sol.step;
        let mult_max = sol.eq_multipliers.amax().max(sol.ineq_multipliers.amax());
        rho = rho.max(1.5 * mult_max + 1e-3);
        let viol = Subproblem::violation(&pt.c, &pt.g);
        let phi0 = pt.f + rho * viol;
        let dphi = pt.grad.dot(&d) - rho * viol;
        let mut alpha = 1.0;
        let mut accepted = None;
        if cfg.full_step {
            accepted = Some(&x + &d);
        } else {
            for _ in 0..40 {
                let trial = &x + &d * alpha;
                let (c, g) = sub.constraints(&trial);
                let phi = sub.objective(&trial) + rho * Subproblem::violation(&c, &g);
                if phi <= phi0 + 1e-4 * alpha * dphi.min(0.0) {
                    accepted = Some(trial);
                    break;
                }
                alpha *= 0.5;
            }
        }
        let Some(xn) = accepted else {
            return Ok(SqpOutcome { x, u, v, iterations: iter, converged: false });
        };
        let step = (&xn - &x).amax();
        x = xn;
        u = sol.eq_multipliers;
        v = sol.ineq_multipliers;
        pt = sub.point(&x);
        let infeas = pt.c.amax().max(pt.g.max().max(0.0));
        if step <= cfg.eps_sqp * (1.0 + x.amax()) && infeas <= cfg.eps_sqp * x_scale {
            return Ok(SqpOutcome { x, u, v, iterations: iter, converged: true });
        }
    }
    Ok(SqpOutcome { x, u, v, iterations: cfg.max_sqp_iter, converged: false })
}

/// Input scale in `[0, 1]` keeping both limits, by bisection.
fn shrink_to_limits(w_in: &MultisineWaveform, sspa: &SspaParams, cfg: &Model1Config) -> Result<(MultisineWaveform, f64)> {
    let ok = |s: f64| -> Result<bool> {
        let (p_in, tr) = chain_powers(&w_in.scaled(s), sspa, cfg.kappa)?;
        Ok(p_in <= cfg.p_in_max && tr.average_power() <= cfg.p_tr_max)
    };
    if ok(1.0)? {
        return Ok((w_in.clone(), 1.0));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if ok(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((w_in.scaled(lo), lo))
}

/// Ideal waveform predistorted by the inverse amplifier and projected onto
/// the transmit band, scaled to respect both limits and `peak < 0.99·A_s`.
fn predistorted_start(
    ideal: &MultisineWaveform,
    sspa: &SspaParams,
    cfg: &Model1Config,
) -> Result<Option<MultisineWaveform>> {
    let n = ideal.len();
    let dense = 16 * n;
    let samples = ideal.baseband_samples(dense)?;
    let peak = samples.iter().map(|x| x.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return Ok(None);
    }
    let build = |s: f64| -> Result<MultisineWaveform> {
        let mut buf: Vec<Complex64> = samples.iter().map(|x| sspa.inverse(x * s)).collect::<Result<_>>()?;
        forward_dft(&mut buf);
        let w = buf[..n].iter().map(|b| b / dense as f64).collect();
        MultisineWaveform::new(*ideal.grid(), w)
    };
    let feasible = |s: f64| -> Result<bool> {
        let w = build(s)?;
        let (p_in, tr) = chain_powers(&w, sspa, cfg.kappa)?;
        Ok(p_in <= cfg.p_in_max && tr.average_power() <= cfg.p_tr_max)
    };
    let s_max = (0.99 * sspa.a_s() / peak).min(1.0);
    let s = if feasible(s_max)? {
        s_max
    } else {
        let (mut lo, mut hi) = (0.0, s_max);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if feasible(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    if s == 0.0 {
        return Ok(None);
    }
    Ok(Some(build(s)?))
}

fn candidate_starts(
    cfg: &Model1Config,
    sspa: &SspaParams,
    rectenna: &RectennaParams,
    h: &FrequencyResponse,
) -> Result<Vec<MultisineWaveform>> {
    let mut starts = Vec::new();
    let no_hpa = |starts: &mut Vec<MultisineWaveform>| -> Result<()> {
        let ideal = optimize_ideal_hpa(cfg.p_tr_max, rectenna, h, 1e-10)?;
        if let Some(w) = predistorted_start(&ideal.waveform, sspa, cfg)? {
            starts.push(w);
        }
        let direct = optimize_ideal_hpa(cfg.p_in_max, rectenna, h, 1e-10)?;
        starts.push(scale_to_limits(&direct.waveform, sspa, cfg.p_in_max, cfg.p_tr_max, cfg.kappa)?);
        Ok(())
    };
    match &cfg.init {
        Model1Init::NoHpaBackoff => no_hpa(&mut starts)?,
        Model1Init::SingleCarrier => starts.push(single_carrier_input(h, sspa, cfg.p_in_max, cfg.p_tr_max)?),
        Model1Init::BestOf => {
            no_hpa(&mut starts)?;
            starts.push(single_carrier_input(h, sspa, cfg.p_in_max, cfg.p_tr_max)?);
            for k in 2..=h.len() {
                starts.push(k_tone_start(h, k, cfg.p_in_max)?);
            }
        }
        Model1Init::Provided(w) => {
            if w.len() != h.len() {
                return Err(Error::Contract("provided start has the wrong length".into()));
            }
            starts.push(shrink_to_limits(w, sspa, cfg)?.0);
        }
    }
    Ok(starts)
}

fn chain_z(w_in: &MultisineWaveform, sspa: &SspaParams, rectenna: &RectennaParams, h: &FrequencyResponse, kappa: f64) -> Result<(f64, MultisineWaveform)> {
    let (_, tr) = chain_powers(w_in, sspa, kappa)?;
    Ok((z_dc(rectenna, &tr, h)?, tr))
}

struct Run {
    w_in: MultisineWaveform,
    z: f64,
    trace: Vec<f64>,
    scp_iterations: usize,
    sqp_iterations: usize,
    sqp_failures: usize,
    status: SolveStatus,
}

fn run_from(
    start: MultisineWaveform,
    cfg: &Model1Config,
    sspa: &SspaParams,
    rectenna: &RectennaParams,
    h: &FrequencyResponse,
    map: &Map,
) -> Result<Run> {
    let n = h.len();
    let grid = *h.grid();
    let (mut best_in, _) = shrink_to_limits(&start, sspa, cfg)?;
    let (mut best_z, mut w_tr) = chain_z(&best_in, sspa, rectenna, h, cfg.kappa)?;
    let mut trace = vec![best_z];
    let mut sqp_iterations = 0;
    let mut sqp_failures = 0;
    let mut status = SolveStatus::MaxIter;
    let mut warm = None;
    let mut scp_iterations = 0;
    for _ in 0..cfg.max_scp_iter {
        scp_iterations += 1;
        if best_z <= 0.0 {
            status = SolveStatus::NumericalFailure;
            break;
        }
        let grad = z_dc_gradient(rectenna, &w_tr, h)?;
        let alpha = DVector::from_vec(grad.to_stacked()) / best_z;
        let sub = Subproblem { map, sspa, alpha, p_in: cfg.p_in_max, p_tr: cfg.p_tr_max, n };
        let mut x0 = DVector::zeros(4 * n);
        x0.rows_mut(0, 2 * n).copy_from_slice(&best_in.to_stacked());
        x0.rows_mut(2 * n, 2 * n).copy_from_slice(&w_tr.to_stacked());
        let out = sqp(&sub, x0, cfg, warm.take())?;
        sqp_iterations += out.iterations;
        if !out.converged {
            sqp_failures += 1;
        }
        let cand = MultisineWaveform::from_stacked(grid, &out.x.as_slice()[..2 * n])?;
        let (cand, _) = shrink_to_limits(&cand, sspa, cfg)?;
        let (z_new, tr_new) = chain_z(&cand, sspa, rectenna, h, cfg.kappa)?;
        trace.push(z_new);
        if z_new < best_z * (1.0 - 1e-12) {
            // The linearized step lost ground (inexact inner solve); keep the
            // best point seen and stop.
            status = if out.converged { SolveStatus::Converged } else { SolveStatus::NumericalFailure };
            break;
        }
        let delta = z_new - best_z;
        best_in = cand;
        best_z = z_new;
        w_tr = tr_new;
        warm = Some((out.u, out.v));
        if delta.abs() < cfg.eps_scp * best_z {
            status = SolveStatus::Converged;
            break;
        }
    }
    Ok(Run { w_in: best_in, z: best_z, trace, scp_iterations, sqp_iterations, sqp_failures, status })
}

/// Maximizes the harvested-DC term over in-band input waveforms.
pub fn optimize_model1(
    cfg: &Model1Config,
    sspa: &SspaParams,
    rectenna: &RectennaParams,
    h: &FrequencyResponse,
) -> Result<Model1Solution> {
    cfg.validate()?;
    let n = h.len();
    let map = Map::new(n, cfg.kappa)?;
    let mut best: Option<Run> = None;
    for start in candidate_starts(cfg, sspa, rectenna, h)? {
        if start.is_zero() {
            continue;
        }
        let run = run_from(start, cfg, sspa, rectenna, h, &map)?;
        if best.as_ref().is_none_or(|b| run.z > b.z) {
            best = Some(run);
        }
    }
    let run = best.ok_or_else(|| Error::Infeasible("no non-zero feasible start waveform".into()))?;
    let (w_in, exit_scale) = shrink_to_limits(&run.w_in, sspa, cfg)?;
    let report = evaluate_chain(&w_in, sspa, rectenna, h, cfg.kappa)?;
    let (_, w_tr) = chain_powers(&w_in, sspa, cfg.kappa)?;
    let residual = equality_residuals(&w_in, &w_tr, sspa, cfg.kappa)?
        .iter()
        .map(|r| r * r)
        .sum::<f64>()
        .sqrt();
    let mut trace = run.trace;
    if trace.last() != Some(&report.z_dc) {
        trace.push(report.z_dc);
    }
    Ok(Model1Solution {
        w_in,
        w_tr,
        z_dc: report.z_dc,
        z_dc_trace: trace,
        equality_residual: residual,
        report,
        diagnostics: Model1Diagnostics {
            scp_iterations: run.scp_iterations,
            sqp_iterations: run.sqp_iterations,
            status: run.status,
            sqp_failures: run.sqp_failures,
            exit_scale,
        },
    })
}

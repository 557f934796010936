//! Sensitivity of the transmittance: derivatives, optimal operating point,
//! sensing Jacobians and reconstruction of detuning or position
//! perturbations from sampled spectra.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::array::{Point, C64};
use crate::error::{Error, Result};
use crate::modes::{eigenmodes, ModeSet};
use crate::quad::integrate;
use crate::spectra::{GridSpec, TransmissionModel};

const I: C64 = C64::new(0.0, 1.0);

/// Singular values below `RANK_THRESHOLD * sigma_max` do not count towards the rank.
pub const RANK_THRESHOLD: f64 = 1e-12;
/// Largest condition number accepted for reconstruction.
pub const KAPPA_LIMIT: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wrt {
    Detunings,
    Positions,
}

/// `dT/dDelta_L`.
pub fn dt_ddelta(model: &TransmissionModel, delta: f64) -> Result<f64> {
    Ok(model.transmittance_derivative(delta)?.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub argmax: f64,
    pub max: f64,
}

/// `S = |dT/dDelta_L|` on a uniform grid.
pub fn sensitivity_curve(model: &TransmissionModel, grid: &GridSpec) -> Result<SensitivityCurve> {
    let grid = grid.values();
    let values = grid
        .par_iter()
        .map(|&d| dt_ddelta(model, d).map(f64::abs))
        .collect::<Result<Vec<_>>>()?;
    let (i, max) = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    Ok(SensitivityCurve { argmax: grid[i], max, grid, values })
}

/// Modes of the model's effective Hamiltonian (empty for vacuum).
pub fn model_modes(model: &TransmissionModel) -> Result<ModeSet> {
    eigenmodes(model.couplings(), model.detunings())
}

/// Frequencies probing every mode: the uniform grid over the window plus
/// points at fixed linewidth offsets from each resonance.
fn candidate_detunings(modes: &ModeSet, window: (f64, f64), uniform: usize) -> Vec<f64> {
    let (lo, hi) = window;
    let mut out: Vec<f64> = (0..uniform).map(|i| lo + (hi - lo) * i as f64 / (uniform - 1) as f64).collect();
    const OFFSETS: [f64; 13] = [-4.0, -2.0, -1.0, -0.6, -0.35, -0.2, 0.0, 0.2, 0.35, 0.6, 1.0, 2.0, 4.0];
    for a in 0..modes.len() {
        let w = modes.decay_rate(a).max(1e-9) * 0.5;
        for u in OFFSETS {
            let d = modes.shift(a) + u * w;
            if d > lo && d < hi {
                out.push(d);
            }
        }
    }
    out.sort_by(|a, b| a.total_cmp(b));
    out.dedup();
    out
}

/// Window spanning every resonance padded by `widths` of its own linewidth.
pub fn mode_window(modes: &ModeSet, widths: f64) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for a in 0..modes.len() {
        let w = modes.decay_rate(a).max(1e-9);
        lo = lo.min(modes.shift(a) - widths * w);
        hi = hi.max(modes.shift(a) + widths * w);
    }
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxSensitivity {
    pub argmax: f64,
    pub value: f64,
}

/// Maximize `|dT/dDelta_L|` over `window` (default: every resonance padded by
/// five linewidths), refining the best brackets by golden-section search
/// until the bracket is below `tolerance` times its starting width.
pub fn max_sensitivity(model: &TransmissionModel, window: Option<(f64, f64)>, tolerance: f64) -> Result<MaxSensitivity> {
    if model.is_empty() {
        return Ok(MaxSensitivity { argmax: 0.0, value: 0.0 });
    }
    let modes = model_modes(model)?;
    let window = window.unwrap_or_else(|| mode_window(&modes, 5.0));
    let xs = candidate_detunings(&modes, window, 401);
    let s = |d: f64| dt_ddelta(model, d).map(f64::abs);
    let vals = xs.par_iter().map(|&d| s(d)).collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let mut best = MaxSensitivity { argmax: xs[order[0]], value: vals[order[0]] };
    for &i in order.iter().take(4) {
        let lo = xs[i.saturating_sub(1)];
        let hi = xs[(i + 1).min(xs.len() - 1)];
        let (x, v) = golden_max(&s, lo, hi, tolerance)?;
        if v > best.value {
            best = MaxSensitivity { argmax: x, value: v };
        }
    }
    Ok(best)
}

fn golden_max<F: Fn(f64) -> Result<f64>>(f: &F, mut a: f64, mut b: f64, tolerance: f64) -> Result<(f64, f64)> {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let width = b - a;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let mut iter = 0;
    while (b - a) > tolerance * width && iter < 200 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
        iter += 1;
    }
    Ok(if fc > fd { (c, fc) } else { (d, fd) })
}

/// `dT/dp` for every parameter, with `T` itself.
pub fn gradient_t(model: &TransmissionModel, delta: f64, wrt: Wrt) -> Result<(f64, Vec<f64>)> {
    if model.is_empty() {
        return Ok((1.0, Vec::new()));
    }
    match wrt {
        Wrt::Detunings => {
            let lin = model.linearize(delta)?;
            // d sigma / d delta_j = A^{-1} e_j sigma_j
            let g = (0..model.len()).map(|j| 2.0 * (lin.adjoint[j] * lin.sigma[j]).re).collect();
            Ok((lin.transmittance, g))
        }
        Wrt::Positions => position_gradient(model, delta),
    }
}

fn position_gradient(model: &TransmissionModel, delta: f64) -> Result<(f64, Vec<f64>)> {
    let (array, direction) = model.guided_setup().ok_or(Error::RequiresWaveguide)?;
    if model.motion().is_some_and(|m| m.sigma > 0.0) {
        return Err(Error::InvalidConfig("position gradients need static emitters".into()));
    }
    let k = array.environment().guided_wavenumber().ok_or(Error::RequiresWaveguide)?;
    let s = direction.sign();
    let x = array.axial();
    let n = x.len();
    let lin = model.linearize(delta)?;
    let omega = DVector::from_fn(n, |j, _| C64::from_polar(1.0, s * k * x[j]));
    let w = DVector::from_fn(n, |j, _| 0.5 * I * C64::from_polar(1.0, -s * k * x[j]));
    let (sigma, _) = lin.factor.solve(&omega)?;
    let (u, _) = lin.factor.solve(&w)?;
    let t = C64::new(1.0, 0.0) + w.dot(&sigma);
    let b = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            C64::new(0.0, 0.0)
        } else {
            let d = x[i] - x[j];
            C64::from_polar(0.5 * k * d.signum(), k * d.abs())
        }
    });
    let bs = &b * &sigma;
    let bu = &b * &u;
    let g = (0..n)
        .map(|m| {
            let dt = I * s * k * (u[m] * omega[m] - w[m] * sigma[m]) - u[m] * bs[m] - sigma[m] * bu[m];
            2.0 * (t.conj() * dt).re
        })
        .collect();
    Ok((t.norm_sqr(), g))
}

/// Model with `params` added to the base detunings or axial positions.
pub fn perturbed_model(model: &TransmissionModel, wrt: Wrt, params: &[f64]) -> Result<TransmissionModel> {
    if params.len() != model.len() {
        return Err(Error::InvalidConfig(format!("expected {} parameters, got {}", model.len(), params.len())));
    }
    match wrt {
        Wrt::Detunings => {
            let d: Vec<f64> = model.detunings().iter().zip(params).map(|(a, b)| a + b).collect();
            model.with_detunings(&d)
        }
        Wrt::Positions => {
            let array = model.array().ok_or(Error::RequiresWaveguide)?;
            if !array.environment().is_waveguide() {
                return Err(Error::RequiresWaveguide);
            }
            let pos: Vec<Point> = array.positions().iter().zip(params).map(|(p, dx)| p + Point::new(*dx, 0.0, 0.0)).collect();
            model.rebuild(&array.with_positions(pos)?)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianReport {
    pub matrix: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub kappa: f64,
    pub samples: Vec<f64>,
}

/// Default sample frequencies: each mode's resonance and a half-linewidth
/// above it (M = 2N).
pub fn default_samples(model: &TransmissionModel) -> Result<Vec<f64>> {
    let modes = model_modes(model)?;
    let mut out = Vec::with_capacity(2 * modes.len());
    for a in 0..modes.len() {
        out.push(modes.shift(a));
        out.push(modes.shift(a) + 0.5 * modes.decay_rate(a));
    }
    Ok(out)
}

pub fn jacobian(model: &TransmissionModel, samples: &[f64], wrt: Wrt) -> Result<JacobianReport> {
    let n = model.len();
    if samples.len() < n {
        return Err(Error::TooFewSamples { samples: samples.len(), parameters: n });
    }
    let rows = samples
        .par_iter()
        .map(|&d| gradient_t(model, d, wrt).map(|g| g.1))
        .collect::<Result<Vec<_>>>()?;
    let matrix = DMatrix::from_fn(samples.len(), n, |i, j| rows[i][j]);
    let (singular_values, rank, kappa) = spectrum_of(&matrix);
    Ok(JacobianReport { matrix, singular_values, rank, kappa, samples: samples.to_vec() })
}

fn spectrum_of(m: &DMatrix<f64>) -> (Vec<f64>, usize, f64) {
    if m.ncols() == 0 {
        return (Vec::new(), 0, 1.0);
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().cloned().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let smax = sv[0];
    let rank = sv.iter().filter(|&&s| s > smax * RANK_THRESHOLD).count();
    let smin = *sv.last().unwrap_or(&0.0);
    let kappa = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    (sv, rank, kappa)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratedSensitivity {
    pub value: f64,
    /// Quadrature error estimate inside the window.
    pub error: f64,
    /// Estimated contribution of both tails, already included in `value`.
    pub tail: f64,
    pub window: (f64, f64),
}

/// `int ||grad T|| dDelta_L` over every resonance padded by `widths`
/// linewidths (20 by default) plus a power-law tail estimate.
pub fn integrated_sensitivity(model: &TransmissionModel, wrt: Wrt, widths: Option<f64>) -> Result<IntegratedSensitivity> {
    if model.is_empty() {
        return Ok(IntegratedSensitivity { value: 0.0, error: 0.0, tail: 0.0, window: (0.0, 0.0) });
    }
    let modes = model_modes(model)?;
    let widths = widths.unwrap_or(20.0);
    let broadest = modes.decay_rates().into_iter().fold(0.0, f64::max);
    let lo = modes.eigenvalues.iter().map(|l| l.re).fold(f64::INFINITY, f64::min) - widths * broadest;
    let hi = modes.eigenvalues.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max) + widths * broadest;
    let norm = |d: f64| gradient_t(model, d, wrt).map(|g| g.1.iter().map(|v| v * v).sum::<f64>().sqrt());

    // breakpoints at every resonance so narrow features are never straddled
    let mut cuts = vec![lo, hi];
    for a in 0..modes.len() {
        let c = modes.shift(a);
        let w = modes.decay_rate(a).max(1e-9);
        for p in [c - w, c, c + w] {
            if p > lo && p < hi {
                cuts.push(p);
            }
        }
    }
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let mut value = 0.0;
    let mut error = 0.0;
    for w in cuts.windows(2) {
        let r = integrate(norm, w[0], w[1], 2, 1e-9, 1e-7, 4000)?;
        value += r.value;
        error += r.error;
    }
    let centre = 0.5 * (lo + hi);
    let tail = tail_estimate(&norm, lo, centre, -1.0)? + tail_estimate(&norm, hi, centre, 1.0)?;
    Ok(IntegratedSensitivity { value: value + tail, error, tail, window: (lo, hi) })
}

/// Integral from `edge` to infinity (in direction `dir`) of a function
/// decaying like a power of the distance from `centre`.
fn tail_estimate<F: Fn(f64) -> Result<f64>>(f: &F, edge: f64, centre: f64, dir: f64) -> Result<f64> {
    let r1 = (edge - centre).abs();
    let f1 = f(edge)?;
    let f2 = f(centre + dir * 2.0 * r1)?;
    if f1 <= 0.0 {
        return Ok(0.0);
    }
    let p = if f2 > 0.0 { (f1 / f2).log2() } else { 2.0 };
    let p = p.max(2.0);
    Ok(f1 * r1 / (p - 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub params: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionOptions {
    pub initial_damping: f64,
    pub max_iterations: usize,
    pub step_tolerance: f64,
}

impl Default for ReconstructionOptions {
    fn default() -> Self {
        ReconstructionOptions { initial_damping: 1e-3, max_iterations: 100, step_tolerance: 1e-10 }
    }
}

fn transmittances(model: &TransmissionModel, samples: &[f64]) -> Result<DVector<f64>> {
    let v = samples.par_iter().map(|&d| model.transmittance(d)).collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(v))
}

/// Infer the parameter perturbation that reproduces `measured` at `samples`,
/// by Levenberg-Marquardt least squares starting from `initial`.
pub fn reconstruct(
    model: &TransmissionModel,
    samples: &[f64],
    measured: &[f64],
    wrt: Wrt,
    initial: &[f64],
    opts: &ReconstructionOptions,
) -> Result<ReconstructionResult> {
    let n = model.len();
    if measured.len() != samples.len() {
        return Err(Error::InvalidConfig("one measurement per sample frequency required".into()));
    }
    if initial.len() != n {
        return Err(Error::InvalidConfig(format!("initial guess needs {n} entries")));
    }
    let control = jacobian(model, samples, wrt)?;
    if control.rank < n {
        return Err(Error::RankDeficient { rank: control.rank, parameters: n, kappa: control.kappa });
    }
    if control.kappa > KAPPA_LIMIT {
        return Err(Error::IllConditioned { kappa: control.kappa, limit: KAPPA_LIMIT });
    }
    let target = DVector::from_column_slice(measured);
    let mut p = DVector::from_column_slice(initial);
    let mut current = perturbed_model(model, wrt, p.as_slice())?;
    let mut r = &target - transmittances(&current, samples)?;
    let mut cost = r.norm_squared();
    let mut mu = opts.initial_damping;
    let mut kappa = control.kappa;
    for iter in 1..=opts.max_iterations {
        if cost == 0.0 {
            return Ok(ReconstructionResult { params: p.as_slice().to_vec(), residual: 0.0, iterations: iter - 1, converged: true, kappa });
        }
        let jac = jacobian(&current, samples, wrt)?;
        kappa = jac.kappa;
        let jt = jac.matrix.transpose();
        let jtj = &jt * &jac.matrix;
        let g = &jt * &r;
        loop {
            let mut lhs = jtj.clone();
            for i in 0..n {
                lhs[(i, i)] += mu * jtj[(i, i)].max(1e-300);
            }
            let step = match lhs.clone().cholesky() {
                Some(ch) => ch.solve(&g),
                None => match lhs.lu().solve(&g) {
                    Some(s) => s,
                    None => {
                        mu *= 10.0;
                        if mu > 1e12 {
                            return Err(Error::NoConvergence { iterations: iter, residual: cost.sqrt() });
                        }
                        continue;
                    }
                },
            };
            let trial = &p + &step;
            let trial_model = perturbed_model(model, wrt, trial.as_slice())?;
            let trial_r = &target - transmittances(&trial_model, samples)?;
            let trial_cost = trial_r.norm_squared();
            if trial_cost <= cost {
                p = trial;
                current = trial_model;
                r = trial_r;
                cost = trial_cost;
                mu = (mu / 10.0).max(1e-12);
                if step.norm() < opts.step_tolerance {
                    return Ok(ReconstructionResult {
                        params: p.as_slice().to_vec(),
                        residual: cost.sqrt(),
                        iterations: iter,
                        converged: true,
                        kappa,
                    });
                }
                break;
            }
            mu *= 10.0;
            if mu > 1e12 || step.norm() < opts.step_tolerance {
                // no descent possible: we are at a (local) minimum
                return Ok(ReconstructionResult {
                    params: p.as_slice().to_vec(),
                    residual: cost.sqrt(),
                    iterations: iter,
                    converged: step.norm() < opts.step_tolerance,
                    kappa,
                });
            }
        }
    }
    Err(Error::NoConvergence { iterations: opts.max_iterations, residual: cost.sqrt() })
}

//! Weak-drive steady state: `(H - Delta_L) sigma = Omega`, with motional
//! averaging of the guided couplings and random vacancies.

use log::warn;
use nalgebra::{linalg::Hessenberg, DMatrix, DVector};
use rand::{seq::index::sample, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::array::{EmitterArray, Environment, C64};
use crate::error::{Error, Result};
use crate::greens::{coupling_matrix, CouplingMatrices};
use crate::quad::{gauss_hermite, gauss_legendre};

/// Relative backward error accepted from any linear solve.
pub const SOLVE_TOLERANCE: f64 = 1e-10;
/// Single-site excitation above which a warning is logged.
pub const EXCITATION_WARN: f64 = 0.01;
/// Single-site excitation above which the weak-drive model is refused.
pub const EXCITATION_LIMIT: f64 = 0.1;

const SINGULAR_HINT: &str = "drive sits on a lossless dark resonance; offset the laser detuning or add loss";

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub coherences: DVector<C64>,
    pub laser_detuning: f64,
    pub residual: f64,
}

impl SteadyState {
    pub fn max_excitation(&self) -> f64 {
        self.coherences.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max)
    }
}

/// `H - Delta_L` for the given couplings and per-site detunings.
pub fn system_matrix(couplings: &CouplingMatrices, detunings: &[f64], delta_l: f64) -> DMatrix<C64> {
    let mut a = couplings.hamiltonian(detunings);
    for i in 0..a.nrows() {
        a[(i, i)] -= delta_l;
    }
    a
}

/// Solve for the coherences with physical drive amplitudes. Logs a warning
/// above `EXCITATION_WARN` and fails above `EXCITATION_LIMIT`.
pub fn solve_steady_state(
    couplings: &CouplingMatrices,
    detunings: &[f64],
    drive: &DVector<C64>,
    delta_l: f64,
) -> Result<SteadyState> {
    if detunings.len() != couplings.dim() || drive.len() != couplings.dim() {
        return Err(Error::InvalidConfig(format!(
            "dimension mismatch: {} emitters, {} detunings, {} drive amplitudes",
            couplings.dim(),
            detunings.len(),
            drive.len()
        )));
    }
    let a = system_matrix(couplings, detunings, delta_l);
    let (coherences, residual) = dense_solve(&a, drive, delta_l)?;
    let state = SteadyState { coherences, laser_detuning: delta_l, residual };
    let p = state.max_excitation();
    if p > EXCITATION_LIMIT {
        return Err(Error::ExcitationTooHigh { excitation: p, limit: EXCITATION_LIMIT });
    }
    if p > EXCITATION_WARN {
        warn!("max single-site excitation {p:.3e} exceeds {EXCITATION_WARN}; weak-drive model is marginal");
    }
    Ok(state)
}

fn inf_norm(a: &DMatrix<C64>) -> f64 {
    a.row_iter().map(|r| r.iter().map(|c| c.norm()).sum::<f64>()).fold(0.0, f64::max)
}

fn vec_inf(v: &DVector<C64>) -> f64 {
    v.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Normwise relative backward error of `x` as a solution of `a x = b`.
pub fn backward_error(a: &DMatrix<C64>, x: &DVector<C64>, b: &DVector<C64>, a_norm: f64) -> f64 {
    let r = a * x - b;
    let denom = a_norm * vec_inf(x) + vec_inf(b);
    if denom == 0.0 {
        0.0
    } else {
        vec_inf(&r) / denom
    }
}

/// Dense LU with partial pivoting plus one refinement step.
pub(crate) fn dense_solve(a: &DMatrix<C64>, b: &DVector<C64>, delta_l: f64) -> Result<(DVector<C64>, f64)> {
    if a.nrows() == 0 {
        return Ok((DVector::zeros(0), 0.0));
    }
    let lu = a.clone().lu();
    let u = lu.u();
    let diag: Vec<f64> = (0..u.nrows()).map(|i| u[(i, i)].norm()).collect();
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(dmin > dmax * 1e-15) {
        return Err(Error::Singular { detuning: delta_l, hint: SINGULAR_HINT });
    }
    let mut x = lu.solve(b).ok_or(Error::Singular { detuning: delta_l, hint: SINGULAR_HINT })?;
    let r = b - a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    let a_norm = inf_norm(a);
    let residual = backward_error(a, &x, b, a_norm);
    if !(residual <= SOLVE_TOLERANCE) || x.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::InaccurateSolve { residual, tolerance: SOLVE_TOLERANCE });
    }
    Ok((x, residual))
}

/// Reusable reduction `H = Q S Q*` with `S` upper Hessenberg, so that each
/// shifted system `(H - Delta) x = b` costs O(N^2).
#[derive(Debug, Clone)]
pub struct ShiftedSolver {
    h: DMatrix<C64>,
    q: DMatrix<C64>,
    s: DMatrix<C64>,
    h_norm: f64,
}

/// Factorization of `S - Delta` by Gaussian elimination with adjacent-row
/// pivoting.
#[derive(Debug, Clone)]
pub struct ShiftedFactor<'a> {
    solver: &'a ShiftedSolver,
    delta: f64,
    u: DMatrix<C64>,
    multipliers: Vec<C64>,
    swapped: Vec<bool>,
}

impl ShiftedSolver {
    pub fn new(h: DMatrix<C64>) -> Self {
        let h_norm = inf_norm(&h);
        if h.nrows() == 0 {
            return ShiftedSolver { q: h.clone(), s: h.clone(), h, h_norm };
        }
        let (q, s) = Hessenberg::new(h.clone()).unpack();
        ShiftedSolver { h, q, s, h_norm }
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.h
    }

    pub fn factor(&self, delta: f64) -> Result<ShiftedFactor<'_>> {
        let n = self.dim();
        let mut u = self.s.clone();
        for i in 0..n {
            u[(i, i)] -= delta;
        }
        let mut multipliers = vec![C64::new(0.0, 0.0); n.saturating_sub(1)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        for k in 0..n.saturating_sub(1) {
            if u[(k + 1, k)].norm() > u[(k, k)].norm() {
                u.swap_rows(k, k + 1);
                swapped[k] = true;
            }
            let pivot = u[(k, k)];
            if pivot.norm() == 0.0 {
                continue;
            }
            let m = u[(k + 1, k)] / pivot;
            multipliers[k] = m;
            u[(k + 1, k)] = C64::new(0.0, 0.0);
            for j in (k + 1)..n {
                let v = u[(k, j)];
                u[(k + 1, j)] -= m * v;
            }
        }
        let diag: Vec<f64> = (0..n).map(|i| u[(i, i)].norm()).collect();
        let dmax = diag.iter().cloned().fold(0.0, f64::max);
        if diag.iter().any(|&d| !(d > dmax * 1e-15)) {
            return Err(Error::Singular { detuning: delta, hint: SINGULAR_HINT });
        }
        Ok(ShiftedFactor { solver: self, delta, u, multipliers, swapped })
    }
}

impl ShiftedFactor<'_> {
    pub fn delta(&self) -> f64 {
        self.delta
    }

    fn apply(&self, b: &DVector<C64>) -> DVector<C64> {
        let n = self.u.nrows();
        let mut y = self.solver.q.ad_mul(b);
        for k in 0..n.saturating_sub(1) {
            if self.swapped[k] {
                y.swap_rows(k, k + 1);
            }
            let v = y[k];
            y[k + 1] -= self.multipliers[k] * v;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in (i + 1)..n {
                s -= self.u[(i, j)] * y[j];
            }
            y[i] = s / self.u[(i, i)];
        }
        &self.solver.q * y
    }

    fn residual(&self, x: &DVector<C64>, b: &DVector<C64>) -> DVector<C64> {
        b - (&self.solver.h * x - x * C64::new(self.delta, 0.0))
    }

    /// Solve `(H - Delta) x = b`; returns the solution and its backward error.
    pub fn solve(&self, b: &DVector<C64>) -> Result<(DVector<C64>, f64)> {
        let mut x = self.apply(b);
        let mut r = self.residual(&x, b);
        let a_norm = self.solver.h_norm + self.delta.abs();
        let scale = |x: &DVector<C64>| a_norm * vec_inf(x) + vec_inf(b);
        let mut err = vec_inf(&r) / scale(&x).max(f64::MIN_POSITIVE);
        if err > 0.1 * SOLVE_TOLERANCE {
            x += self.apply(&r);
            r = self.residual(&x, b);
            err = vec_inf(&r) / scale(&x).max(f64::MIN_POSITIVE);
        }
        if !(err <= SOLVE_TOLERANCE) {
            let mut a = self.solver.h.clone();
            for i in 0..a.nrows() {
                a[(i, i)] -= self.delta;
            }
            return dense_solve(&a, b, self.delta);
        }
        Ok((x, err))
    }
}

/// How position averages are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Quadrature {
    /// Deterministic Gaussian quadrature with `order` nodes (per panel where
    /// the integrand has a kink).
    GaussHermite { order: usize },
    /// Antithetic Monte Carlo with `samples` draws per average.
    MonteCarlo { samples: usize, seed: u64 },
}

/// Independent isotropic Gaussian zero-point spread `sigma` (wavelengths) for
/// every emitter, in the high-velocity limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionModel {
    pub sigma: f64,
    pub quadrature: Quadrature,
}

impl MotionModel {
    pub fn new(sigma: f64, quadrature: Quadrature) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("motional spread must be >= 0, got {sigma}")));
        }
        match quadrature {
            Quadrature::GaussHermite { order } if order < 5 => {
                return Err(Error::InvalidConfig(format!("Gauss-Hermite order must be >= 5, got {order}")))
            }
            Quadrature::MonteCarlo { samples, .. } if samples < 2 => {
                return Err(Error::InvalidConfig("Monte Carlo needs at least 2 samples".into()))
            }
            _ => {}
        }
        Ok(MotionModel { sigma, quadrature })
    }

    pub fn static_positions() -> Self {
        MotionModel { sigma: 0.0, quadrature: Quadrature::GaussHermite { order: 40 } }
    }
}

/// An average with its Monte Carlo standard error (zero for quadrature).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Average {
    pub value: C64,
    pub stderr: f64,
}

fn monte_carlo<F: Fn(f64) -> C64>(f: F, samples: usize, seed: u64, stream: u64) -> Average {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let pairs = samples.div_ceil(2);
    let mut sum = C64::new(0.0, 0.0);
    let mut sum_sq = 0.0;
    for _ in 0..pairs {
        let z: f64 = StandardNormal.sample(&mut rng);
        let v = 0.5 * (f(z) + f(-z));
        sum += v;
        sum_sq += v.norm_sqr();
    }
    let n = pairs as f64;
    let mean = sum / n;
    let var = ((sum_sq / n - mean.norm_sqr()) * n / (n - 1.0).max(1.0)).max(0.0);
    Average { value: mean, stderr: (var / n).sqrt() }
}

/// `E[exp(i k |X|)]` for `X ~ N(mean, spread^2)`.
pub fn guided_pair_average(mean: f64, spread: f64, k: f64, quadrature: &Quadrature, stream: u64) -> Average {
    let f = |x: f64| C64::from_polar(1.0, k * x.abs());
    if spread == 0.0 {
        return Average { value: f(mean), stderr: 0.0 };
    }
    match *quadrature {
        Quadrature::MonteCarlo { samples, seed } => monte_carlo(|z| f(mean + spread * z), samples, seed, stream),
        Quadrature::GaussHermite { order } => {
            if mean.abs() > 8.0 * spread {
                let (x, w) = gauss_hermite(order);
                let value = x.iter().zip(&w).map(|(&z, &w)| f(mean + spread * z) * w).sum();
                return Average { value, stderr: 0.0 };
            }
            // kink at X = 0 lies inside the bulk: integrate each side with
            // Gauss-Legendre panels of width <= spread
            let (x, w) = gauss_legendre(order);
            let density = |t: f64| {
                let u = (t - mean) / spread;
                (-0.5 * u * u).exp() / (spread * (2.0 * std::f64::consts::PI).sqrt())
            };
            let lo = mean - 10.0 * spread;
            let hi = mean + 10.0 * spread;
            let mut value = C64::new(0.0, 0.0);
            for (a, b) in [(lo, 0.0), (0.0, hi)] {
                let panels = ((b - a) / spread).ceil().max(1.0) as usize;
                let h = (b - a) / panels as f64;
                for p in 0..panels {
                    let c = a + h * (p as f64 + 0.5);
                    for (xi, wi) in x.iter().zip(&w) {
                        let t = c + 0.5 * h * xi;
                        value += f(t) * (density(t) * wi * 0.5 * h);
                    }
                }
            }
            Average { value, stderr: 0.0 }
        }
    }
}

/// `E[exp(i k xi)]` for `xi ~ N(0, sigma^2)`.
pub fn site_phase_average(sigma: f64, k: f64, quadrature: &Quadrature, stream: u64) -> Average {
    if sigma == 0.0 {
        return Average { value: C64::new(1.0, 0.0), stderr: 0.0 };
    }
    match *quadrature {
        Quadrature::MonteCarlo { samples, seed } => {
            monte_carlo(|z| C64::from_polar(1.0, k * sigma * z), samples, seed, stream)
        }
        Quadrature::GaussHermite { order } => {
            let (x, w) = gauss_hermite(order);
            let value = x.iter().zip(&w).map(|(&z, &w)| C64::from_polar(w, k * sigma * z)).sum();
            Average { value, stderr: 0.0 }
        }
    }
}

/// Position-averaged inputs for a guided array.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedInputs {
    pub couplings: CouplingMatrices,
    /// `E[exp(i kp xi_j)]` per site; multiplies phases `exp(+i kp x_j)`, and
    /// its conjugate multiplies `exp(-i kp x_j)`.
    pub site_factors: Vec<C64>,
    /// Largest Monte Carlo standard error among all averages.
    pub max_stderr: f64,
}

/// Average the guided couplings and drive/detection phases over independent
/// Gaussian fluctuations of every emitter.
pub fn motion_averaged_inputs(array: &EmitterArray, motion: &MotionModel) -> Result<AveragedInputs> {
    let kp = match array.environment() {
        Environment::Waveguide { .. } => array.environment().guided_wavenumber().unwrap_or(0.0),
        Environment::FreeSpace { .. } => return Err(Error::RequiresWaveguide),
    };
    let mut couplings = coupling_matrix(array)?;
    let n = array.len();
    if motion.sigma == 0.0 {
        return Ok(AveragedInputs { couplings, site_factors: vec![C64::new(1.0, 0.0); n], max_stderr: 0.0 });
    }
    let x = array.axial();
    let spread = std::f64::consts::SQRT_2 * motion.sigma;
    let mut max_stderr: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let stream = (i * n + j) as u64;
            let avg = guided_pair_average(x[i] - x[j], spread, kp, &motion.quadrature, stream);
            max_stderr = max_stderr.max(avg.stderr);
            let c = -0.5 * C64::new(0.0, 1.0) * avg.value;
            couplings.j[(i, j)] = c.re;
            couplings.j[(j, i)] = c.re;
            couplings.gamma[(i, j)] = -2.0 * c.im;
            couplings.gamma[(j, i)] = -2.0 * c.im;
        }
    }
    let site_factors = (0..n)
        .map(|j| {
            let avg = site_phase_average(motion.sigma, kp, &motion.quadrature, (n * n + j) as u64);
            max_stderr = max_stderr.max(avg.stderr);
            avg.value
        })
        .collect();
    Ok(AveragedInputs { couplings, site_factors, max_stderr })
}

/// Compare the deterministic quadrature against Monte Carlo for every
/// averaged quantity. Returns the largest absolute difference, or an error
/// when it exceeds `limit`.
pub fn check_motion_quadrature(
    array: &EmitterArray,
    sigma: f64,
    order: usize,
    samples: usize,
    seed: u64,
    limit: f64,
) -> Result<f64> {
    let gh = motion_averaged_inputs(array, &MotionModel::new(sigma, Quadrature::GaussHermite { order })?)?;
    let mc = motion_averaged_inputs(array, &MotionModel::new(sigma, Quadrature::MonteCarlo { samples, seed })?)?;
    let mut diff: f64 = 0.0;
    for (a, b) in gh.couplings.j.iter().zip(mc.couplings.j.iter()) {
        diff = diff.max((a - b).abs());
    }
    for (a, b) in gh.couplings.gamma.iter().zip(mc.couplings.gamma.iter()) {
        diff = diff.max((a - b).abs());
    }
    for (a, b) in gh.site_factors.iter().zip(&mc.site_factors) {
        diff = diff.max((a - b).norm());
    }
    if diff > limit {
        return Err(Error::QuadratureDisagreement { difference: diff, limit });
    }
    Ok(diff)
}

/// Remove `round(fraction N)` sites chosen uniformly at random from `seed`.
pub fn remove_atoms(array: &EmitterArray, fraction: f64, seed: u64) -> Result<EmitterArray> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!("missing fraction must lie in [0, 1), got {fraction}")));
    }
    let n = array.len();
    let count = (fraction * n as f64).round() as usize;
    if count >= n {
        return Err(Error::InvalidConfig(format!("removing {count} of {n} emitters leaves none")));
    }
    if count == 0 {
        return Ok(array.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut removed = vec![false; n];
    for i in sample(&mut rng, n, count) {
        removed[i] = true;
    }
    let keep: Vec<usize> = (0..n).filter(|&i| !removed[i]).collect();
    array.select(&keep)
}

//! Eigenmodes of the non-Hermitian effective Hamiltonian, the analytic
//! two-emitter and bright/dark models, and infinite-lattice modes.

pub mod lattice;

use std::cmp::Ordering;

use nalgebra::{linalg::Schur, DMatrix, DVector};

use crate::array::C64;
use crate::error::{Error, Result};
use crate::greens::CouplingMatrices;

pub use lattice::{bright_dark_gap, infinite_lattice_mode, locate_crossing, LatticeMode, LatticeSumOptions};

/// Relative tolerance under which a mode's decay rate counts as equal to the
/// single-emitter rate.
const NEUTRAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeClass {
    Superradiant,
    Subradiant,
    /// Decay rate equal to that of an isolated emitter (e.g. N = 1).
    Neutral,
}

impl ModeClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModeClass::Superradiant => "superradiant",
            ModeClass::Subradiant => "subradiant",
            ModeClass::Neutral => "neutral",
        }
    }
}

/// Eigen-decomposition of `H = (J - i Gamma/2) - diag(delta) - i Gamma'/2`.
///
/// Eigenvalues are `lambda = J_alpha - i Gamma_alpha / 2`, sorted by ascending
/// decay rate with ties broken by ascending shift. Columns of `eigenvectors`
/// are unit-norm right eigenvectors in the same order.
#[derive(Debug, Clone)]
pub struct ModeSet {
    pub eigenvalues: Vec<C64>,
    pub eigenvectors: DMatrix<C64>,
    pub classes: Vec<ModeClass>,
    /// Decay rate of an isolated emitter including uncorrelated loss.
    pub reference_rate: f64,
}

impl ModeSet {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn shift(&self, alpha: usize) -> f64 {
        self.eigenvalues[alpha].re
    }

    pub fn decay_rate(&self, alpha: usize) -> f64 {
        -2.0 * self.eigenvalues[alpha].im
    }

    pub fn decay_rates(&self) -> Vec<f64> {
        (0..self.len()).map(|a| self.decay_rate(a)).collect()
    }

    /// Frequency interval holding every resonance padded by `widths` times the
    /// broadest linewidth.
    pub fn resonance_window(&self, widths: f64) -> (f64, f64) {
        let broadest = self.decay_rates().into_iter().fold(0.0, f64::max);
        let lo = self.eigenvalues.iter().map(|l| l.re).fold(f64::INFINITY, f64::min);
        let hi = self.eigenvalues.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
        (lo - widths * broadest, hi + widths * broadest)
    }
}

/// Diagonalize the effective Hamiltonian including per-site detunings.
pub fn eigenmodes(couplings: &CouplingMatrices, detunings: &[f64]) -> Result<ModeSet> {
    let h = couplings.hamiltonian(detunings);
    let (values, vectors) = eigen_decompose(&h)?;
    let reference_rate = 1.0 + couplings.gamma_prime;

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| compare_modes(values[a], values[b]));
    let eigenvalues: Vec<C64> = order.iter().map(|&a| values[a]).collect();
    let eigenvectors = DMatrix::from_fn(h.nrows(), order.len(), |r, c| vectors[(r, order[c])]);
    let classes = eigenvalues
        .iter()
        .map(|l| {
            let rate = -2.0 * l.im;
            if (rate - reference_rate).abs() <= NEUTRAL_TOLERANCE * reference_rate {
                ModeClass::Neutral
            } else if rate > reference_rate {
                ModeClass::Superradiant
            } else {
                ModeClass::Subradiant
            }
        })
        .collect();
    Ok(ModeSet { eigenvalues, eigenvectors, classes, reference_rate })
}

fn compare_modes(a: C64, b: C64) -> Ordering {
    let (ga, gb) = (-2.0 * a.im, -2.0 * b.im);
    let scale = 1.0 + ga.abs().max(gb.abs());
    if (ga - gb).abs() > 1e-12 * scale {
        ga.total_cmp(&gb)
    } else {
        a.re.total_cmp(&b.re)
    }
}

/// Complex Schur decomposition followed by triangular back-substitution for
/// the right eigenvectors.
pub(crate) fn eigen_decompose(h: &DMatrix<C64>) -> Result<(Vec<C64>, DMatrix<C64>)> {
    let n = h.nrows();
    if n == 0 {
        return Ok((Vec::new(), DMatrix::zeros(0, 0)));
    }
    let schur = Schur::try_new(h.clone(), f64::EPSILON, 100 * n.max(10))
        .ok_or(Error::EigenNonConvergence { dim: n })?;
    let (q, t) = schur.unpack();
    let values: Vec<C64> = (0..n).map(|i| t[(i, i)]).collect();
    let small = f64::EPSILON * t.norm().max(f64::MIN_POSITIVE);

    let mut y = DMatrix::<C64>::zeros(n, n);
    for k in 0..n {
        y[(k, k)] = C64::new(1.0, 0.0);
        for i in (0..k).rev() {
            let mut s = C64::new(0.0, 0.0);
            for j in (i + 1)..=k {
                s += t[(i, j)] * y[(j, k)];
            }
            let mut denom = t[(i, i)] - values[k];
            if denom.norm() < small {
                denom = C64::new(small, 0.0);
            }
            y[(i, k)] = -s / denom;
        }
    }
    let mut v = q * y;
    for mut col in v.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col.unscale_mut(norm);
        }
    }
    Ok((values, v))
}

/// Symmetric and antisymmetric eigenvalues of two guided emitters at spacing
/// `a`; `kp` in 1/wavelength, rates in units of the guided decay rate.
pub fn two_atom_eigenvalues(a: f64, kp: f64) -> (C64, C64) {
    let phase = kp * a;
    let half = 0.5 * phase;
    let sym = C64::new(0.5 * phase.sin(), -half.cos().powi(2));
    let anti = C64::new(-0.5 * phase.sin(), -half.sin().powi(2));
    (sym, anti)
}

/// Laser detunings of the two dressed modes created by coupling a bright and
/// a dark mode with strength `delta0`, returned as (upper, lower).
pub fn dressed_resonances(j_bright: f64, j_dark: f64, delta0: f64) -> (f64, f64) {
    let mean = 0.5 * (j_bright + j_dark);
    let half_split = 0.5 * ((j_bright - j_dark).powi(2) + 4.0 * delta0 * delta0).sqrt();
    (mean + half_split, mean - half_split)
}

/// Two-mode reduction: one radiating bright mode coupled to one dark mode by a
/// control detuning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrightDarkModel {
    pub lambda_b: C64,
    pub lambda_d: C64,
    pub coupling: f64,
    pub rabi_b: C64,
}

impl BrightDarkModel {
    pub fn new(lambda_b: C64, lambda_d: C64, coupling: f64, rabi_b: C64) -> Result<Self> {
        if !(-2.0 * lambda_b.im > 0.0) {
            return Err(Error::InvalidConfig("bright mode must have a positive decay rate".into()));
        }
        Ok(BrightDarkModel { lambda_b, lambda_d, coupling, rabi_b })
    }

    /// Two guided emitters in the Dicke limit with antisymmetric detuning.
    pub fn dicke_pair(delta0: f64) -> Self {
        BrightDarkModel {
            lambda_b: C64::new(0.0, -1.0),
            lambda_d: C64::new(0.0, 0.0),
            coupling: delta0,
            rabi_b: C64::new(1.0, 0.0),
        }
    }

    /// Infinite square lattice: k = 0 bright mode and the zone-corner dark mode.
    pub fn from_lattice(
        spacing: f64,
        dipole: &crate::array::Dipole,
        delta0: f64,
        opts: &LatticeSumOptions,
    ) -> Result<Self> {
        let bright = infinite_lattice_mode([0.0, 0.0], spacing, dipole, opts)?;
        let q = std::f64::consts::PI / spacing;
        let dark = infinite_lattice_mode([q, q], spacing, dipole, opts)?;
        Self::new(bright.eigenvalue, dark.eigenvalue, delta0, C64::new(1.0, 0.0))
    }

    pub fn gamma_b(&self) -> f64 {
        -2.0 * self.lambda_b.im
    }

    pub fn dressed_resonances(&self) -> (f64, f64) {
        dressed_resonances(self.lambda_b.re, self.lambda_d.re, self.coupling)
    }

    /// Steady-state bright and dark amplitudes at laser detuning `delta_l`.
    pub fn amplitudes(&self, delta_l: f64) -> (C64, C64) {
        let b = self.lambda_b - delta_l;
        let d = self.lambda_d - delta_l;
        let det = b * d - self.coupling * self.coupling;
        (self.rabi_b * d / det, self.rabi_b * self.coupling / det)
    }
}

/// Index of the eigenvector with the largest overlap with `target`.
pub fn best_overlap(modes: &ModeSet, target: &DVector<C64>) -> usize {
    let tn = target.norm();
    (0..modes.len())
        .max_by(|&a, &b| {
            let oa = modes.eigenvectors.column(a).dotc(target).norm() / tn;
            let ob = modes.eigenvectors.column(b).dotc(target).norm() / tn;
            oa.total_cmp(&ob)
        })
        .unwrap_or(0)
}

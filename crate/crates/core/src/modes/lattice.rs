//! Collective eigenvalues of an infinite square lattice in free space.
//!
//! The Bloch sum `lambda(k) = -i/2 + sum_{j != 0} (J_0j - i Gamma_0j / 2) exp(i k . r_j)`
//! converges only conditionally because the far field decays as `1/r`. It is
//! regularized by the window `exp(-(r/R)^6)` and evaluated on a sequence of
//! growing radii until two successive values agree.

use std::f64::consts::PI;

use crate::array::{Dipole, C64};
use crate::error::{Error, Result};
use crate::units::K0;

const WINDOW_POWER: i32 = 6;
/// Sites beyond this multiple of the window radius contribute below 1e-20.
const CUTOFF: f64 = 1.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSumOptions {
    /// Absolute tolerance on the difference between successive radii.
    pub tolerance: f64,
    /// Largest window radius in wavelengths before giving up.
    pub max_radius: f64,
}

impl Default for LatticeSumOptions {
    fn default() -> Self {
        LatticeSumOptions { tolerance: 1e-6, max_radius: 3000.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeMode {
    pub bloch: [f64; 2],
    pub eigenvalue: C64,
    /// Difference between the last two windowed sums.
    pub residual: f64,
    pub radius: f64,
}

impl LatticeMode {
    pub fn shift(&self) -> f64 {
        self.eigenvalue.re
    }

    pub fn decay_rate(&self) -> f64 {
        -2.0 * self.eigenvalue.im
    }
}

/// Distance in k-space from `bloch` (or any reciprocal-lattice image) to the
/// light cone `|k| = k0`.
pub fn light_cone_distance(bloch: [f64; 2], spacing: f64) -> f64 {
    let g = 2.0 * PI / spacing;
    let mut best = f64::INFINITY;
    let reach = (K0 / g).ceil() as i64 + 2;
    for m in -reach..=reach {
        for n in -reach..=reach {
            let kx = bloch[0] + m as f64 * g;
            let ky = bloch[1] + n as f64 * g;
            best = best.min(((kx * kx + ky * ky).sqrt() - K0).abs());
        }
    }
    best
}

/// Eigenvalue of the Bloch mode with in-plane quasi-momentum `bloch` (in units
/// of 1/wavelength, i.e. `K0` is the light line) on a square lattice of
/// spacing `spacing`.
pub fn infinite_lattice_mode(
    bloch: [f64; 2],
    spacing: f64,
    dipole: &Dipole,
    opts: &LatticeSumOptions,
) -> Result<LatticeMode> {
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(Error::InvalidConfig(format!("lattice spacing must be positive, got {spacing}")));
    }
    let dist = light_cone_distance(bloch, spacing).max(1e-3);
    let mut radius = (40.0 / dist).max(4.0 * spacing).max(4.0);
    if radius > opts.max_radius {
        return Err(Error::LatticeSumNonConvergence { residual: f64::INFINITY, tolerance: opts.tolerance });
    }
    let mut previous = windowed_sum(bloch, spacing, dipole, radius);
    let mut residual = f64::INFINITY;
    while radius * std::f64::consts::SQRT_2 <= opts.max_radius {
        radius *= std::f64::consts::SQRT_2;
        let next = windowed_sum(bloch, spacing, dipole, radius);
        residual = (next - previous).norm();
        previous = next;
        if residual < opts.tolerance {
            return Ok(LatticeMode { bloch, eigenvalue: previous, residual, radius });
        }
    }
    Err(Error::LatticeSumNonConvergence { residual, tolerance: opts.tolerance })
}

/// `J_B - J_D` between the k = 0 mode and the zone-corner mode.
pub fn bright_dark_gap(spacing: f64, dipole: &Dipole, opts: &LatticeSumOptions) -> Result<f64> {
    let bright = infinite_lattice_mode([0.0, 0.0], spacing, dipole, opts)?;
    let q = PI / spacing;
    let dark = infinite_lattice_mode([q, q], spacing, dipole, opts)?;
    Ok(bright.shift() - dark.shift())
}

/// Spacing in `[lo, hi]` where the bright and dark shifts cross, located by
/// bisection to `tol`. Errors if the gap has the same sign at both ends.
pub fn locate_crossing(lo: f64, hi: f64, dipole: &Dipole, tol: f64, opts: &LatticeSumOptions) -> Result<f64> {
    let (mut lo, mut hi) = (lo, hi);
    let mut g_lo = bright_dark_gap(lo, dipole, opts)?;
    let g_hi = bright_dark_gap(hi, dipole, opts)?;
    if g_lo.signum() == g_hi.signum() {
        return Err(Error::InvalidConfig(format!(
            "no bright/dark crossing between a = {lo} and a = {hi}"
        )));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let g = bright_dark_gap(mid, dipole, opts)?;
        if g.signum() == g_lo.signum() {
            lo = mid;
            g_lo = g;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn windowed_sum(bloch: [f64; 2], spacing: f64, dipole: &Dipole, radius: f64) -> C64 {
    let d = dipole.vector();
    let norm2 = d.norm_squared();
    let (dx, dy) = (d[0], d[1]);
    let cut = CUTOFF * radius;
    let reach = (cut / spacing).floor() as i64;
    let pre0 = -(3.0 * PI / K0) / (4.0 * PI * K0 * K0);

    // The pair coupling is even in r, so exp(i k.r) pairs up into cos(k.r);
    // sum the half plane n > 0 or (n = 0, m > 0) and double it.
    let phase_x: Vec<f64> = (0..=2 * reach).map(|i| bloch[0] * spacing * (i - reach) as f64).collect();
    let mut total = C64::new(0.0, 0.0);
    for n in 0..=reach {
        let y = n as f64 * spacing;
        let row_reach = ((cut * cut - y * y).max(0.0).sqrt() / spacing).floor() as i64;
        let start = if n == 0 { 1 } else { -row_reach };
        let py = bloch[1] * y;
        let mut row = C64::new(0.0, 0.0);
        for m in start..=row_reach {
            let x = m as f64 * spacing;
            let r2 = x * x + y * y;
            let r = r2.sqrt();
            let w = (-(r / radius).powi(WINDOW_POWER)).exp();
            if w < 1e-22 {
                continue;
            }
            let kr = K0 * r;
            let (s, c) = kr.sin_cos();
            let iso = C64::new(kr * kr - 1.0, kr);
            let aniso = C64::new(3.0 - kr * kr, -3.0 * kr);
            let proj = dx.conj() * x + dy.conj() * y;
            let proj2 = proj.norm_sqr() / r2;
            let g = C64::new(c, s) / (r2 * r) * (iso * norm2 + aniso * proj2);
            let phase = (phase_x[(m + reach) as usize] + py).cos();
            row += g * (w * phase);
        }
        total += row;
    }
    C64::new(0.0, -0.5) + 2.0 * pre0 * total
}

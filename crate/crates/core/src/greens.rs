//! Green's functions of the two environments and the coupling matrices they
//! induce.
//!
//! Pair couplings follow `J_ij - i Gamma_ij / 2 = -(mu0 w0^2 / hbar) d* . G . d`.
//! In free space `mu0 w0^2 |d|^2 / hbar = 3 pi Gamma_0 / k0`, which puts every
//! coupling in units of the single-emitter rate.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3};

use crate::array::{Dipole, EmitterArray, Environment, Point, C64};
use crate::error::{Error, Result};
use crate::units::K0;

/// Distinct emitters closer than this (in wavelengths) are rejected.
pub const COINCIDENCE_GUARD: f64 = 1e-9;

const I: C64 = C64::new(0.0, 1.0);

/// Contracted guided-mode Green's function, `(i/2) exp(i kp |x|)` in units of
/// the guided decay rate. `kp` is in 1/wavelength.
pub fn greens_waveguide(x: f64, kp: f64) -> C64 {
    0.5 * I * C64::from_polar(1.0, kp * x.abs())
}

/// Free-space dyadic Green's tensor at separation `r`.
pub fn greens_freespace(r: &Point, k0: f64) -> Result<Matrix3<C64>> {
    let dist = r.norm();
    if !(dist > 0.0) {
        return Err(Error::InvalidConfig(
            "free-space Green's tensor requested at zero separation".into(),
        ));
    }
    let kr = k0 * dist;
    let pre = C64::from_polar(1.0, kr) / (4.0 * PI * k0 * k0 * dist.powi(3));
    let iso = C64::new(kr * kr - 1.0, kr);
    let aniso = C64::new(3.0 - kr * kr, -3.0 * kr);
    let rhat = r / dist;
    let outer = rhat * rhat.transpose();
    Ok(Matrix3::from_fn(|a, b| {
        let delta = if a == b { 1.0 } else { 0.0 };
        pre * (iso * delta + aniso * outer[(a, b)])
    }))
}

/// `J_ij - i Gamma_ij / 2` for two distinct free-space emitters.
pub fn freespace_pair(r: &Point, dipole: &Dipole) -> Result<C64> {
    let g = greens_freespace(r, K0)?;
    let d = dipole.vector();
    let gd = g * d;
    let contracted = d.conjugate().dot(&gd);
    Ok(-(3.0 * PI / K0) * contracted)
}

/// `J_ij - i Gamma_ij / 2` for two guided emitters separated by `x`.
pub fn waveguide_pair(x: f64, kp: f64) -> C64 {
    -greens_waveguide(x, kp)
}

/// Coherent and dissipative coupling matrices plus uncorrelated loss.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrices {
    pub j: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub gamma_prime: f64,
}

impl CouplingMatrices {
    pub fn dim(&self) -> usize {
        self.j.nrows()
    }

    /// `H = (J - i Gamma/2) - diag(delta) - i (Gamma'/2) I`.
    ///
    /// The steady-state system at laser detuning `Delta` is `(H - Delta) sigma = Omega`.
    pub fn hamiltonian(&self, detunings: &[f64]) -> DMatrix<C64> {
        let n = self.dim();
        assert_eq!(detunings.len(), n, "detuning count does not match coupling matrices");
        DMatrix::from_fn(n, n, |a, b| {
            let mut h = C64::new(self.j[(a, b)], -0.5 * self.gamma[(a, b)]);
            if a == b {
                h += C64::new(-detunings[a], -0.5 * self.gamma_prime);
            }
            h
        })
    }
}

/// Assemble `J` and `Gamma` for every pair. Diagonal: `J_jj = 0`, `Gamma_jj = 1`.
pub fn coupling_matrix(array: &EmitterArray) -> Result<CouplingMatrices> {
    let n = array.len();
    let pos = array.positions();
    let mut j = DMatrix::zeros(n, n);
    let mut gamma = DMatrix::zeros(n, n);
    for a in 0..n {
        gamma[(a, a)] = 1.0;
        for b in (a + 1)..n {
            let sep = pos[a] - pos[b];
            let dist = sep.norm();
            if dist < COINCIDENCE_GUARD {
                return Err(Error::CoincidentEmitters { i: a, j: b, separation: dist });
            }
            let c = match array.environment() {
                Environment::Waveguide { kp } => waveguide_pair(sep.x, kp * K0),
                Environment::FreeSpace { dipole } => freespace_pair(&sep, dipole)?,
            };
            j[(a, b)] = c.re;
            j[(b, a)] = c.re;
            gamma[(a, b)] = -2.0 * c.im;
            gamma[(b, a)] = -2.0 * c.im;
        }
    }
    Ok(CouplingMatrices { j, gamma, gamma_prime: array.gamma_prime() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{build_array, Geometry};
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    fn chain(n: usize, a: f64, env: Environment) -> EmitterArray {
        build_array(&Geometry::Chain { n, spacing: a }, env, &[], 0.0).unwrap()
    }

    /// Textbook closed form for two parallel dipoles at angle theta to the
    /// separation, written with the three radial terms separately.
    fn scalar_pair(r: f64, cos_theta: f64) -> (f64, f64) {
        let x = K0 * r;
        let c2 = cos_theta * cos_theta;
        let (s, c) = x.sin_cos();
        let j = -0.75
            * ((1.0 - c2) * c / x - (1.0 - 3.0 * c2) * (s / (x * x) + c / (x * x * x)));
        let g = 1.5 * ((1.0 - c2) * s / x + (1.0 - 3.0 * c2) * (c / (x * x) - s / (x * x * x)));
        (j, g)
    }

    #[test]
    fn waveguide_green_examples() {
        let g0 = greens_waveguide(0.0, K0);
        assert!((g0 - 0.5 * I).norm() < 1e-15);
        let c = waveguide_pair(0.25, K0);
        assert!((c.re - 0.5).abs() < 1e-15 && (-2.0 * c.im).abs() < 1e-15);
        let c = waveguide_pair(0.5, K0);
        assert!(c.re.abs() < 1e-15 && (-2.0 * c.im + 1.0).abs() < 1e-15);
    }

    #[test]
    fn freespace_green_parity() {
        let mut s = 7u64;
        for _ in 0..50 {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            let v = Point::new(
                ((s >> 20) % 1000) as f64 / 300.0 - 1.6,
                ((s >> 30) % 1000) as f64 / 300.0 - 1.6,
                ((s >> 40) % 1000) as f64 / 300.0 - 1.7,
            );
            let a = greens_freespace(&v, K0).unwrap();
            let b = greens_freespace(&(-v), K0).unwrap();
            assert!((a - b).norm() < 1e-14 * a.norm());
        }
    }

    #[test]
    fn freespace_zero_separation_rejected() {
        assert!(greens_freespace(&Point::zeros(), K0).is_err());
    }

    #[test]
    fn freespace_far_field_decays_as_inverse_distance() {
        // transverse dipole (x) with separation along y
        let d = Dipole::x();
        let c10 = freespace_pair(&Point::new(0.0, 10.0, 0.0), &d).unwrap().norm();
        let c20 = freespace_pair(&Point::new(0.0, 20.0, 0.0), &d).unwrap().norm();
        assert!((c10 / c20 - 2.0).abs() < 0.1, "ratio {}", c10 / c20);
    }

    #[test]
    fn freespace_matches_scalar_formula() {
        let d = Dipole::x();
        for &(r, dir) in &[(0.1, [0.0, 1.0, 0.0]), (0.1, [1.0, 0.0, 0.0]), (0.37, [0.6, 0.8, 0.0]), (2.3, [0.0, 0.6, 0.8])] {
            let v = Point::new(dir[0], dir[1], dir[2]) * r;
            let c = freespace_pair(&v, &d).unwrap();
            let (j, g) = scalar_pair(r, dir[0]);
            assert!((c.re - j).abs() < 1e-12 * (1.0 + j.abs()), "J {} vs {}", c.re, j);
            assert!((-2.0 * c.im - g).abs() < 1e-12 * (1.0 + g.abs()), "G {} vs {}", -2.0 * c.im, g);
        }
    }

    #[test]
    fn freespace_gamma_continuous_at_origin() {
        let d = Dipole::x();
        for &r in &[1e-1, 1e-2, 1e-3] {
            for dir in [Point::new(1.0, 0.0, 0.0), Point::new(0.0, 1.0, 0.0), Point::new(0.0, 0.6, 0.8)] {
                let gamma = -2.0 * freespace_pair(&(dir * r), &d).unwrap().im;
                let tol = if r < 0.05 { 1e-3 } else { 0.2 };
                assert!((gamma - 1.0).abs() < tol, "r={r} gamma={gamma}");
            }
        }
    }

    #[test]
    fn dicke_pair_couplings() {
        let m = coupling_matrix(&chain(2, 1.0, Environment::Waveguide { kp: 1.0 })).unwrap();
        for v in m.gamma.iter() {
            assert!((v - 1.0).abs() < 1e-14);
        }
        assert!(m.j.amax() < 1e-14);
    }

    #[test]
    fn single_emitter_matrices() {
        let m = coupling_matrix(&chain(1, 0.1, Environment::FreeSpace { dipole: Dipole::x() })).unwrap();
        assert_eq!(m.j[(0, 0)], 0.0);
        assert_eq!(m.gamma[(0, 0)], 1.0);
    }

    #[test]
    fn distant_freespace_pair_is_weak() {
        let arr = build_array(
            &Geometry::Explicit { positions: vec![[0.0, 0.0, 0.0], [0.0, 5.0, 0.0]] },
            Environment::FreeSpace { dipole: Dipole::x() },
            &[],
            0.0,
        )
        .unwrap();
        let m = coupling_matrix(&arr).unwrap();
        assert!(m.j[(0, 1)].abs() < 0.05 && m.gamma[(0, 1)].abs() < 0.05);
    }

    #[test]
    fn coincident_emitters_rejected() {
        let arr = build_array(
            &Geometry::Explicit { positions: vec![[0.0, 0.0, 0.0], [1e-10, 0.0, 0.0]] },
            Environment::FreeSpace { dipole: Dipole::x() },
            &[],
            0.0,
        )
        .unwrap();
        assert!(matches!(coupling_matrix(&arr), Err(Error::CoincidentEmitters { .. })));
    }

    #[test]
    fn gamma_prime_carried_through() {
        let arr = chain(3, 0.2, Environment::Waveguide { kp: 1.0 }).with_gamma_prime(0.3).unwrap();
        assert_eq!(coupling_matrix(&arr).unwrap().gamma_prime, 0.3);
    }

    fn min_eig(m: &DMatrix<f64>) -> f64 {
        SymmetricEigen::new(m.clone()).eigenvalues.min()
    }

    proptest! {
        #[test]
        fn waveguide_matrices_symmetric_psd_periodic(xs in proptest::collection::vec(0.0f64..3.0, 2..7)) {
            let mut xs = xs;
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assume!(xs.windows(2).all(|w| w[1] - w[0] > 1e-6));
            let pos: Vec<[f64; 3]> = xs.iter().map(|&x| [x, 0.0, 0.0]).collect();
            let env = Environment::Waveguide { kp: 1.0 };
            let arr = build_array(&Geometry::Explicit { positions: pos.clone() }, env, &[], 0.0).unwrap();
            let m = coupling_matrix(&arr).unwrap();
            prop_assert_eq!(&m.j, &m.j.transpose());
            prop_assert_eq!(&m.gamma, &m.gamma.transpose());
            prop_assert!(min_eig(&m.gamma) > -1e-10);
            // shifting the last emitter by one wavelength changes nothing
            let mut shifted = pos;
            let last = shifted.len() - 1;
            shifted[last][0] += 1.0;
            let arr2 = build_array(&Geometry::Explicit { positions: shifted }, env, &[], 0.0).unwrap();
            let m2 = coupling_matrix(&arr2).unwrap();
            prop_assert!((&m.j - &m2.j).amax() < 1e-12);
            prop_assert!((&m.gamma - &m2.gamma).amax() < 1e-12);
        }

        #[test]
        fn freespace_gamma_psd(pts in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -0.3f64..0.3), 2..9)) {
            let pos: Vec<[f64; 3]> = pts.iter().map(|&(x, y, z)| [x, y, z]).collect();
            let arr = build_array(
                &Geometry::Explicit { positions: pos },
                Environment::FreeSpace { dipole: Dipole::circular_xy() },
                &[],
                0.0,
            ).unwrap();
            match coupling_matrix(&arr) {
                Ok(m) => {
                    prop_assert_eq!(&m.gamma, &m.gamma.transpose());
                    prop_assert!(min_eig(&m.gamma) > -1e-10);
                }
                Err(Error::CoincidentEmitters { .. }) => {}
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}

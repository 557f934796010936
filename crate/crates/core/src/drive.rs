//! Probe fields: guided plane waves and paraxial Gaussian beams.

use nalgebra::{DVector, Vector3};

use crate::array::{Dipole, EmitterArray, Environment, Point, C64};
use crate::error::{Error, Result};
use crate::units::K0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Incident from the left, travelling towards +x.
    Right,
    /// Incident from the right, travelling towards -x.
    Left,
}

impl Direction {
    pub fn sign(&self) -> f64 {
        match self {
            Direction::Right => 1.0,
            Direction::Left => -1.0,
        }
    }
}

/// Paraxial Gaussian beam with its focus at `focus`, travelling along `axis`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBeam {
    pub waist: f64,
    pub focus: Point,
    axis: Vector3<f64>,
    polarization: Dipole,
}

impl GaussianBeam {
    pub fn new(waist: f64, focus: Point, axis: Vector3<f64>, polarization: Dipole) -> Result<Self> {
        if !(waist > 0.0) || !waist.is_finite() {
            return Err(Error::InvalidConfig(format!("beam waist must be positive, got {waist}")));
        }
        let norm = axis.norm();
        if !(norm > 0.0) {
            return Err(Error::InvalidConfig("beam axis has zero length".into()));
        }
        let axis = axis / norm;
        let along = polarization.vector().map(|c| c.re).dot(&axis).abs()
            + polarization.vector().map(|c| c.im).dot(&axis).abs();
        if along > 1e-9 {
            return Err(Error::InvalidConfig("beam polarization must be transverse to its axis".into()));
        }
        Ok(GaussianBeam { waist, focus, axis, polarization })
    }

    /// Beam along +z, x-polarized, focused at `focus`.
    pub fn along_z(waist: f64, focus: Point) -> Result<Self> {
        Self::new(waist, focus, Vector3::z(), Dipole::x())
    }

    pub fn axis(&self) -> &Vector3<f64> {
        &self.axis
    }

    pub fn polarization(&self) -> &Dipole {
        &self.polarization
    }

    pub fn rayleigh_range(&self) -> f64 {
        0.5 * K0 * self.waist * self.waist
    }

    /// Axial coordinate of `r` relative to the focus.
    pub fn axial(&self, r: &Point) -> f64 {
        (r - self.focus).dot(&self.axis)
    }

    /// Scalar field envelope including the carrier phase, unit amplitude at
    /// the focus.
    pub fn profile(&self, r: &Point) -> C64 {
        let rel = r - self.focus;
        let z = rel.dot(&self.axis);
        let rho2 = (rel.norm_squared() - z * z).max(0.0);
        let q = C64::new(1.0, z / self.rayleigh_range());
        let envelope = (-rho2 / (self.waist * self.waist) / q).exp() / q;
        envelope * C64::from_polar(1.0, K0 * z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DriveKind {
    GuidedPlaneWave(Direction),
    GaussianBeam(GaussianBeam),
}

/// Incident probe. `amplitude` is the Rabi scale Omega_0 in rate units.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveField {
    pub kind: DriveKind,
    pub amplitude: f64,
}

impl DriveField {
    pub fn guided(direction: Direction, amplitude: f64) -> Self {
        DriveField { kind: DriveKind::GuidedPlaneWave(direction), amplitude }
    }

    pub fn gaussian(beam: GaussianBeam, amplitude: f64) -> Self {
        DriveField { kind: DriveKind::GaussianBeam(beam), amplitude }
    }

    /// Per-site Rabi frequencies for unit amplitude. Guided waves carry their
    /// phase relative to the array centroid.
    pub fn unit_rabi(&self, array: &EmitterArray) -> Result<DVector<C64>> {
        match (&self.kind, array.environment()) {
            (DriveKind::GuidedPlaneWave(dir), Environment::Waveguide { .. }) => {
                let k = dir.sign() * array.environment().guided_wavenumber().unwrap_or(K0);
                let xc = array.centroid().x;
                Ok(DVector::from_iterator(
                    array.len(),
                    array.positions().iter().map(|p| C64::from_polar(1.0, k * (p.x - xc))),
                ))
            }
            (DriveKind::GaussianBeam(beam), Environment::FreeSpace { dipole }) => {
                let overlap = dipole.vector().dotc(beam.polarization.vector());
                Ok(DVector::from_iterator(
                    array.len(),
                    array.positions().iter().map(|p| overlap * beam.profile(p)),
                ))
            }
            (DriveKind::GuidedPlaneWave(_), _) => Err(Error::RequiresWaveguide),
            (DriveKind::GaussianBeam(_), _) => Err(Error::RequiresFreeSpace),
        }
    }

    pub fn rabi(&self, array: &EmitterArray) -> Result<DVector<C64>> {
        Ok(self.unit_rabi(array)? * C64::new(self.amplitude, 0.0))
    }
}

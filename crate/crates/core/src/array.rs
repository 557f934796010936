//! Emitter geometry, dipole orientation and static detuning patterns.

use nalgebra::{Complex, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::K0;

pub type C64 = Complex<f64>;
pub type Point = Vector3<f64>;

/// Transverse offsets below this are treated as zero for waveguide scenes.
const AXIS_TOLERANCE: f64 = 1e-12;

/// Unit-norm (possibly complex) transition dipole orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dipole(Vector3<C64>);

impl Dipole {
    pub fn new(v: Vector3<C64>) -> Result<Self> {
        let norm = v.norm();
        if !(norm > 1e-300) || !norm.is_finite() {
            return Err(Error::ZeroDipole);
        }
        Ok(Dipole(v.unscale(norm)))
    }

    pub fn real(v: [f64; 3]) -> Result<Self> {
        Self::new(Vector3::new(v[0].into(), v[1].into(), v[2].into()))
    }

    pub fn x() -> Self {
        Dipole(Vector3::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)))
    }

    pub fn z() -> Self {
        Dipole(Vector3::new(C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0)))
    }

    /// Circular polarization in the xy plane, (x + i y)/sqrt(2).
    pub fn circular_xy() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Dipole(Vector3::new(C64::new(s, 0.0), C64::new(0.0, s), C64::new(0.0, 0.0)))
    }

    pub fn vector(&self) -> &Vector3<C64> {
        &self.0
    }
}

/// Electromagnetic environment shared by all emitters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Environment {
    /// Single-mode waveguide along x. `kp` is the guided wavenumber in units
    /// of the free-space resonant wavenumber.
    Waveguide { kp: f64 },
    /// Vacuum with a common dipole orientation.
    FreeSpace { dipole: Dipole },
}

impl Environment {
    pub fn is_waveguide(&self) -> bool {
        matches!(self, Environment::Waveguide { .. })
    }

    /// Guided wavenumber in 1/wavelength, if this is a waveguide.
    pub fn guided_wavenumber(&self) -> Option<f64> {
        match self {
            Environment::Waveguide { kp } => Some(kp * K0),
            Environment::FreeSpace { .. } => None,
        }
    }
}

/// A fully resolved, validated emitter array. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct EmitterArray {
    positions: Vec<Point>,
    detunings: Vec<f64>,
    environment: Environment,
    gamma_prime: f64,
}

impl EmitterArray {
    pub fn new(
        positions: Vec<Point>,
        detunings: Vec<f64>,
        environment: Environment,
        gamma_prime: f64,
    ) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::EmptyArray);
        }
        if detunings.len() != positions.len() {
            return Err(Error::InvalidConfig(format!(
                "{} detunings for {} emitters",
                detunings.len(),
                positions.len()
            )));
        }
        if positions.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidConfig("non-finite emitter position".into()));
        }
        if detunings.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidConfig("non-finite detuning".into()));
        }
        if !(gamma_prime >= 0.0 && gamma_prime.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma_prime must be >= 0, got {gamma_prime}")));
        }
        if let Environment::Waveguide { kp } = environment {
            if !(kp > 0.0 && kp.is_finite()) {
                return Err(Error::InvalidConfig(format!("guided wavenumber must be > 0, got {kp}")));
            }
            for (index, p) in positions.iter().enumerate() {
                let offset = p.y.hypot(p.z);
                if offset > AXIS_TOLERANCE {
                    return Err(Error::NonCollinear { index, offset });
                }
            }
        }
        Ok(EmitterArray { positions, detunings, environment, gamma_prime })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn detunings(&self) -> &[f64] {
        &self.detunings
    }

    pub fn environment(&self) -> &Environment {
        &self.environment
    }

    pub fn gamma_prime(&self) -> f64 {
        self.gamma_prime
    }

    /// Axial coordinates (x components).
    pub fn axial(&self) -> Vec<f64> {
        self.positions.iter().map(|p| p.x).collect()
    }

    pub fn centroid(&self) -> Point {
        self.positions.iter().sum::<Point>() / self.len() as f64
    }

    pub fn with_detunings(&self, detunings: Vec<f64>) -> Result<Self> {
        Self::new(self.positions.clone(), detunings, self.environment, self.gamma_prime)
    }

    pub fn with_positions(&self, positions: Vec<Point>) -> Result<Self> {
        Self::new(positions, self.detunings.clone(), self.environment, self.gamma_prime)
    }

    pub fn with_gamma_prime(&self, gamma_prime: f64) -> Result<Self> {
        Self::new(self.positions.clone(), self.detunings.clone(), self.environment, gamma_prime)
    }

    /// Keep only the listed sites, in the given order.
    pub fn select(&self, sites: &[usize]) -> Result<Self> {
        let positions = sites.iter().map(|&i| self.positions[i]).collect();
        let detunings = sites.iter().map(|&i| self.detunings[i]).collect();
        Self::new(positions, detunings, self.environment, self.gamma_prime)
    }
}

/// Site layouts understood by [`build_array`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "geometry", rename_all = "snake_case")]
pub enum Geometry {
    /// `n` sites at x = 0, a, 2a, ...
    Chain { n: usize, spacing: f64 },
    /// `side` x `side` square lattice in the xy plane with a corner at the origin.
    Square { side: usize, spacing: f64 },
    /// Arbitrary positions in wavelengths.
    Explicit { positions: Vec<[f64; 3]> },
}

impl Geometry {
    pub fn positions(&self) -> Result<Vec<Point>> {
        match *self {
            Geometry::Chain { n, spacing } => {
                check_spacing(spacing)?;
                Ok((0..n).map(|j| Point::new(j as f64 * spacing, 0.0, 0.0)).collect())
            }
            Geometry::Square { side, spacing } => {
                check_spacing(spacing)?;
                let mut out = Vec::with_capacity(side * side);
                for iy in 0..side {
                    for ix in 0..side {
                        out.push(Point::new(ix as f64 * spacing, iy as f64 * spacing, 0.0));
                    }
                }
                Ok(out)
            }
            Geometry::Explicit { ref positions } => {
                Ok(positions.iter().map(|p| Point::new(p[0], p[1], p[2])).collect())
            }
        }
    }

    pub fn spacing(&self) -> Option<f64> {
        match *self {
            Geometry::Chain { spacing, .. } | Geometry::Square { spacing, .. } => Some(spacing),
            Geometry::Explicit { .. } => None,
        }
    }
}

fn check_spacing(spacing: f64) -> Result<()> {
    if spacing > 0.0 && spacing.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("lattice spacing must be > 0, got {spacing}")))
    }
}

/// Spatial detuning patterns, in rate units. Several profiles may be summed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetuningProfile {
    Uniform { value: f64 },
    /// (+amplitude, -amplitude) on a two-emitter array.
    Antisymmetric { amplitude: f64 },
    /// amplitude * sin(frequency * x)
    #[serde(rename = "sinusoidal_1d")]
    Sinusoidal1D { amplitude: f64, frequency: f64 },
    /// slope * x
    #[serde(rename = "linear_1d")]
    Linear1D { slope: f64 },
    /// amplitude * cos(k . r) with k in 1/wavelength (xy components).
    #[serde(rename = "plane_wave_2d")]
    PlaneWave2D { amplitude: f64, k: [f64; 2] },
    PerSite { values: Vec<f64> },
}

impl DetuningProfile {
    pub fn evaluate(&self, positions: &[Point]) -> Result<Vec<f64>> {
        let n = positions.len();
        Ok(match self {
            DetuningProfile::Uniform { value } => vec![*value; n],
            DetuningProfile::Antisymmetric { amplitude } => {
                if n != 2 {
                    return Err(Error::InvalidConfig(format!(
                        "antisymmetric detuning needs exactly 2 emitters, got {n}"
                    )));
                }
                vec![*amplitude, -*amplitude]
            }
            DetuningProfile::Sinusoidal1D { amplitude, frequency } => {
                positions.iter().map(|p| amplitude * (frequency * p.x).sin()).collect()
            }
            DetuningProfile::Linear1D { slope } => positions.iter().map(|p| slope * p.x).collect(),
            DetuningProfile::PlaneWave2D { amplitude, k } => positions
                .iter()
                .map(|p| amplitude * (k[0] * p.x + k[1] * p.y).cos())
                .collect(),
            DetuningProfile::PerSite { values } => {
                if values.len() != n {
                    return Err(Error::InvalidConfig(format!(
                        "{} per-site detunings for {n} emitters",
                        values.len()
                    )));
                }
                values.clone()
            }
        })
    }

    /// Same pattern with its overall strength multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self.clone() {
            DetuningProfile::Uniform { value } => DetuningProfile::Uniform { value: value * factor },
            DetuningProfile::Antisymmetric { amplitude } => {
                DetuningProfile::Antisymmetric { amplitude: amplitude * factor }
            }
            DetuningProfile::Sinusoidal1D { amplitude, frequency } => {
                DetuningProfile::Sinusoidal1D { amplitude: amplitude * factor, frequency }
            }
            DetuningProfile::Linear1D { slope } => DetuningProfile::Linear1D { slope: slope * factor },
            DetuningProfile::PlaneWave2D { amplitude, k } => {
                DetuningProfile::PlaneWave2D { amplitude: amplitude * factor, k }
            }
            DetuningProfile::PerSite { values } => {
                DetuningProfile::PerSite { values: values.into_iter().map(|v| v * factor).collect() }
            }
        }
    }
}

/// Sum of all profiles evaluated at each site.
pub fn evaluate_profiles(profiles: &[DetuningProfile], positions: &[Point]) -> Result<Vec<f64>> {
    let mut total = vec![0.0; positions.len()];
    for profile in profiles {
        for (t, v) in total.iter_mut().zip(profile.evaluate(positions)?) {
            *t += v;
        }
    }
    Ok(total)
}

/// Resolve a geometry plus detuning profiles into a validated array.
pub fn build_array(
    geometry: &Geometry,
    environment: Environment,
    profiles: &[DetuningProfile],
    gamma_prime: f64,
) -> Result<EmitterArray> {
    let positions = geometry.positions()?;
    if positions.is_empty() {
        return Err(Error::EmptyArray);
    }
    let detunings = evaluate_profiles(profiles, &positions)?;
    EmitterArray::new(positions, detunings, environment, gamma_prime)
}

/// Reflect a chain about its centre: site j of the result is the image of
/// site N-1-j, so detunings come out reversed.
pub fn mirror(array: &EmitterArray) -> EmitterArray {
    let xs = array.axial();
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let positions = array
        .positions()
        .iter()
        .rev()
        .map(|p| Point::new(hi + lo - p.x, p.y, p.z))
        .collect();
    let detunings = array.detunings().iter().rev().cloned().collect();
    EmitterArray { positions, detunings, ..array.clone() }
}

//! Scene files: a TOML description of the array, probe, detection and
//! imperfections, resolved into a ready-to-run transmission model.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::array::{build_array, Dipole, DetuningProfile, EmitterArray, Environment, Geometry, Point, C64};
use crate::drive::{Direction, DriveField, GaussianBeam};
use crate::error::{Error, Result};
use crate::spectra::{DetectionLayout, TransmissionModel};
use crate::steady::{remove_atoms, MotionModel, Quadrature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentKind {
    Waveguide,
    FreeSpace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DipoleConfig {
    /// "x", "y", "z" or "circular" (x + i y in the array plane).
    Named(String),
    Vector([f64; 3]),
}

impl DipoleConfig {
    pub fn resolve(&self) -> Result<Dipole> {
        match self {
            DipoleConfig::Named(name) => match name.as_str() {
                "x" => Ok(Dipole::x()),
                "y" => Dipole::real([0.0, 1.0, 0.0]),
                "z" => Ok(Dipole::z()),
                "circular" => Ok(Dipole::circular_xy()),
                other => Err(Error::InvalidConfig(format!("unknown dipole orientation '{other}'"))),
            },
            DipoleConfig::Vector(v) => Dipole::real(*v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub environment: EnvironmentKind,
    #[serde(flatten)]
    pub geometry: Geometry,
    /// Guided wavenumber in units of the free-space one.
    #[serde(default = "one")]
    pub kp: f64,
    /// Required for free-space scenes, ignored on a waveguide.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dipole: Option<DipoleConfig>,
    #[serde(default)]
    pub gamma_prime: f64,
}

fn one() -> f64 {
    1.0
}

fn default_amplitude() -> f64 {
    0.01
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveKindConfig {
    Guided,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionConfig {
    #[default]
    Right,
    Left,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    /// Defaults to a guided wave for waveguides and a Gaussian beam otherwise.
    #[serde(default)]
    pub kind: Option<DriveKindConfig>,
    #[serde(default)]
    pub direction: DirectionConfig,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    /// Beam waist; defaults to 0.3 sqrt(N) a.
    #[serde(default)]
    pub waist: Option<f64>,
    /// Beam focus; defaults to the centroid of the full lattice.
    #[serde(default)]
    pub focus: Option<[f64; 3]>,
}

impl Default for DriveConfig {
    fn default() -> Self {
        DriveConfig { kind: None, direction: DirectionConfig::Right, amplitude: default_amplitude(), waist: None, focus: None }
    }
}

/// Detuning patterns whose scale follows the lattice, so they stay
/// meaningful when spacing or size are swept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RelativeProfile {
    /// amplitude * sin(pi x / (N a))
    SinusoidalChain { amplitude: f64 },
    /// amplitude * x / ((N - 1) a)
    LinearChain { amplitude: f64 },
    /// amplitude * cos(pi (x + y) / a)
    ZoneCorner { amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DetuningSpec {
    Relative(RelativeProfile),
    Absolute(DetuningProfile),
}

impl DetuningSpec {
    fn resolve(&self, sites: usize, spacing: Option<f64>) -> Result<DetuningProfile> {
        let need = || spacing.ok_or_else(|| Error::InvalidConfig("lattice-relative detuning needs a chain or square geometry".into()));
        Ok(match self {
            DetuningSpec::Absolute(p) => p.clone(),
            DetuningSpec::Relative(RelativeProfile::SinusoidalChain { amplitude }) => {
                DetuningProfile::Sinusoidal1D { amplitude: *amplitude, frequency: PI / (sites as f64 * need()?) }
            }
            DetuningSpec::Relative(RelativeProfile::LinearChain { amplitude }) => {
                let span = (sites.max(2) - 1) as f64 * need()?;
                DetuningProfile::Linear1D { slope: amplitude / span }
            }
            DetuningSpec::Relative(RelativeProfile::ZoneCorner { amplitude }) => {
                let q = PI / need()?;
                DetuningProfile::PlaneWave2D { amplitude: *amplitude, k: [q, q] }
            }
        })
    }

    /// Rescale the control amplitude (uniform offsets are left alone).
    fn with_amplitude(&self, value: f64) -> Self {
        match self.clone() {
            DetuningSpec::Relative(RelativeProfile::SinusoidalChain { .. }) => {
                DetuningSpec::Relative(RelativeProfile::SinusoidalChain { amplitude: value })
            }
            DetuningSpec::Relative(RelativeProfile::LinearChain { .. }) => {
                DetuningSpec::Relative(RelativeProfile::LinearChain { amplitude: value })
            }
            DetuningSpec::Relative(RelativeProfile::ZoneCorner { .. }) => {
                DetuningSpec::Relative(RelativeProfile::ZoneCorner { amplitude: value })
            }
            DetuningSpec::Absolute(p) => DetuningSpec::Absolute(match p {
                DetuningProfile::Antisymmetric { .. } => DetuningProfile::Antisymmetric { amplitude: value },
                DetuningProfile::Sinusoidal1D { frequency, .. } => DetuningProfile::Sinusoidal1D { amplitude: value, frequency },
                DetuningProfile::PlaneWave2D { k, .. } => DetuningProfile::PlaneWave2D { amplitude: value, k },
                other => other,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    Disk,
    OnAxis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionConfig {
    pub layout: LayoutKind,
    /// Disk radius; defaults to 1.2 waists.
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_distance")]
    pub distance: f64,
}

fn default_count() -> usize {
    31
}

fn default_distance() -> f64 {
    1.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureKind {
    #[default]
    GaussHermite,
    MonteCarlo,
}

fn default_order() -> usize {
    40
}

fn default_samples() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImperfectionConfig {
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub quadrature: QuadratureKind,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub missing_fraction: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for ImperfectionConfig {
    fn default() -> Self {
        ImperfectionConfig {
            sigma: 0.0,
            quadrature: QuadratureKind::GaussHermite,
            order: default_order(),
            samples: default_samples(),
            missing_fraction: 0.0,
            seed: None,
        }
    }
}

impl ImperfectionConfig {
    pub fn is_stochastic(&self) -> bool {
        self.missing_fraction > 0.0 || (self.sigma > 0.0 && self.quadrature == QuadratureKind::MonteCarlo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub array: ArrayConfig,
    #[serde(default)]
    pub drive: DriveConfig,
    #[serde(default)]
    pub detuning: Vec<DetuningSpec>,
    #[serde(default)]
    pub detection: Option<DetectionConfig>,
    #[serde(default)]
    pub imperfections: ImperfectionConfig,
}

/// Scene parameters that `sweep` can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    Spacing,
    Delta0,
    GammaPrime,
    Sigma,
    MissingFraction,
    /// Chain length, or side length of a square lattice.
    N,
}

impl FromStr for SweepVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "spacing" | "a" => SweepVariable::Spacing,
            "delta0" => SweepVariable::Delta0,
            "gamma_prime" => SweepVariable::GammaPrime,
            "sigma" => SweepVariable::Sigma,
            "missing_fraction" => SweepVariable::MissingFraction,
            "n" | "N" => SweepVariable::N,
            other => return Err(Error::InvalidConfig(format!("unknown sweep variable '{other}'"))),
        })
    }
}

impl SweepVariable {
    pub fn name(&self) -> &'static str {
        match self {
            SweepVariable::Spacing => "spacing",
            SweepVariable::Delta0 => "delta0",
            SweepVariable::GammaPrime => "gamma_prime",
            SweepVariable::Sigma => "sigma",
            SweepVariable::MissingFraction => "missing_fraction",
            SweepVariable::N => "n",
        }
    }
}

impl SceneConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("scene file: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn build(&self) -> Result<Scene> {
        Scene::from_config(self.clone())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.imperfections.seed = Some(seed);
        out
    }

    /// Copy with one parameter replaced.
    pub fn with_value(&self, var: SweepVariable, value: f64) -> Result<Self> {
        let mut out = self.clone();
        match var {
            SweepVariable::Spacing => {
                out.array.geometry = match out.array.geometry {
                    Geometry::Chain { n, .. } => Geometry::Chain { n, spacing: value },
                    Geometry::Square { side, .. } => Geometry::Square { side, spacing: value },
                    Geometry::Explicit { .. } => {
                        return Err(Error::InvalidConfig("cannot sweep the spacing of explicit positions".into()))
                    }
                }
            }
            SweepVariable::N => {
                let count = value.round();
                if !(count >= 1.0) {
                    return Err(Error::InvalidConfig(format!("size must be >= 1, got {value}")));
                }
                let count = count as usize;
                out.array.geometry = match out.array.geometry {
                    Geometry::Chain { spacing, .. } => Geometry::Chain { n: count, spacing },
                    Geometry::Square { spacing, .. } => Geometry::Square { side: count, spacing },
                    Geometry::Explicit { .. } => {
                        return Err(Error::InvalidConfig("cannot resize explicit positions".into()))
                    }
                }
            }
            SweepVariable::Delta0 => {
                out.detuning = out.detuning.iter().map(|d| d.with_amplitude(value)).collect();
            }
            SweepVariable::GammaPrime => out.array.gamma_prime = value,
            SweepVariable::Sigma => out.imperfections.sigma = value,
            SweepVariable::MissingFraction => out.imperfections.missing_fraction = value,
        }
        Ok(out)
    }
}

/// A resolved scene.
#[derive(Debug, Clone)]
pub struct Scene {
    pub config: SceneConfig,
    /// Array after vacancies were removed.
    pub array: EmitterArray,
    pub drive: DriveField,
    pub detection: Option<DetectionLayout>,
    pub motion: Option<MotionModel>,
}

impl Scene {
    pub fn from_toml(text: &str) -> Result<Self> {
        SceneConfig::from_toml(text)?.build()
    }

    pub fn from_config(config: SceneConfig) -> Result<Self> {
        let a = &config.array;
        let environment = match a.environment {
            EnvironmentKind::Waveguide => {
                if !(a.kp > 0.0) {
                    return Err(Error::InvalidConfig(format!("kp must be positive, got {}", a.kp)));
                }
                Environment::Waveguide { kp: a.kp }
            }
            EnvironmentKind::FreeSpace => {
                let dipole = a.dipole.as_ref().ok_or_else(|| {
                    Error::InvalidConfig("free-space scenes need array.dipole (x, y, z, circular or a vector)".into())
                })?;
                Environment::FreeSpace { dipole: dipole.resolve()? }
            }
        };
        let sites = a.geometry.positions()?.len();
        let profiles = config
            .detuning
            .iter()
            .map(|d| d.resolve(sites, a.geometry.spacing()))
            .collect::<Result<Vec<_>>>()?;
        let full = build_array(&a.geometry, environment, &profiles, a.gamma_prime)?;

        let imp = &config.imperfections;
        if imp.is_stochastic() && imp.seed.is_none() {
            return Err(Error::InvalidConfig("stochastic scenes need an explicit seed".into()));
        }
        let seed = imp.seed.unwrap_or(0);
        let array = if imp.missing_fraction > 0.0 { remove_atoms(&full, imp.missing_fraction, seed)? } else { full.clone() };
        let motion = if imp.sigma > 0.0 {
            let quadrature = match imp.quadrature {
                QuadratureKind::GaussHermite => Quadrature::GaussHermite { order: imp.order },
                QuadratureKind::MonteCarlo => Quadrature::MonteCarlo { samples: imp.samples, seed },
            };
            Some(MotionModel::new(imp.sigma, quadrature)?)
        } else {
            None
        };

        let d = &config.drive;
        let kind = d.kind.unwrap_or(match a.environment {
            EnvironmentKind::Waveguide => DriveKindConfig::Guided,
            EnvironmentKind::FreeSpace => DriveKindConfig::Gaussian,
        });
        if !(d.amplitude > 0.0) || !d.amplitude.is_finite() {
            return Err(Error::InvalidConfig(format!("drive amplitude must be positive, got {}", d.amplitude)));
        }
        let drive = match kind {
            DriveKindConfig::Guided => DriveField::guided(
                match d.direction {
                    DirectionConfig::Right => Direction::Right,
                    DirectionConfig::Left => Direction::Left,
                },
                d.amplitude,
            ),
            DriveKindConfig::Gaussian => {
                let waist = match (d.waist, a.geometry.spacing()) {
                    (Some(w), _) => w,
                    (None, Some(s)) => 0.3 * (sites as f64).sqrt() * s,
                    (None, None) => {
                        return Err(Error::InvalidConfig("explicit geometries need drive.waist".into()))
                    }
                };
                let focus = d.focus.map(|f| Point::new(f[0], f[1], f[2])).unwrap_or_else(|| full.centroid());
                let pol = match &environment {
                    Environment::FreeSpace { dipole } => transverse_polarization(dipole),
                    Environment::Waveguide { .. } => Dipole::x(),
                };
                DriveField::gaussian(GaussianBeam::new(waist, focus, Vector3::z(), pol)?, d.amplitude)
            }
        };
        let detection = config.detection.as_ref().map(|c| match c.layout {
            LayoutKind::OnAxis => DetectionLayout::SinglePointOnAxis { distance: c.distance },
            LayoutKind::Disk => {
                let waist = match &drive.kind {
                    crate::drive::DriveKind::GaussianBeam(b) => b.waist,
                    _ => 1.0,
                };
                DetectionLayout::DiskSampling { radius: c.radius.unwrap_or(1.2 * waist), count: c.count, distance: c.distance }
            }
        });
        Ok(Scene { config, array, drive, detection, motion })
    }

    pub fn model(&self) -> Result<TransmissionModel> {
        TransmissionModel::from_drive(&self.array, &self.drive, self.detection, self.motion)
    }
}

/// Beam polarization along the in-plane part of the dipole; x if the dipole
/// is along the beam axis.
fn transverse_polarization(dipole: &Dipole) -> Dipole {
    let v = dipole.vector();
    let t = Vector3::new(v[0], v[1], C64::new(0.0, 0.0));
    if t.norm() < 1e-9 {
        Dipole::x()
    } else {
        Dipole::new(t).unwrap_or_else(|_| Dipole::x())
    }
}

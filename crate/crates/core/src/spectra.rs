//! Transmission and reflection of the probe, scattered fields, and
//! frequency sweeps with adaptive refinement.

use std::f64::consts::PI;
use std::fmt::Write as _;

use log::warn;
use nalgebra::{DVector, Vector3};
use rayon::prelude::*;

use crate::array::{Dipole, EmitterArray, Environment, Point, C64};
use crate::drive::{Direction, DriveField, DriveKind, GaussianBeam};
use crate::error::{Error, Result};
use crate::greens::{coupling_matrix, greens_freespace, CouplingMatrices};
use crate::modes::BrightDarkModel;
use crate::steady::{motion_averaged_inputs, MotionModel, ShiftedFactor, ShiftedSolver};
use crate::units::K0;

const I: C64 = C64::new(0.0, 1.0);

/// Where the transmitted field is sampled in free space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectionLayout {
    /// One point on the beam axis, `distance` beyond the array plane.
    SinglePointOnAxis { distance: f64 },
    /// `count` points in a disk of `radius`, `distance` beyond the array
    /// plane, on a deterministic sunflower pattern.
    DiskSampling { radius: f64, count: usize, distance: f64 },
}

impl DetectionLayout {
    /// 31 points within 1.2 waists, 1.1 wavelengths past the array.
    pub fn standard(waist: f64) -> Self {
        DetectionLayout::DiskSampling { radius: 1.2 * waist, count: 31, distance: 1.1 }
    }

    /// Detection points for a beam illuminating `array`.
    pub fn points(&self, beam: &GaussianBeam, array: &EmitterArray) -> Result<Vec<Point>> {
        let axis = *beam.axis();
        let plane = array.positions().iter().map(|p| beam.axial(p)).sum::<f64>() / array.len() as f64;
        let far_edge = array.positions().iter().map(|p| beam.axial(p)).fold(f64::NEG_INFINITY, f64::max);
        let (distance, offsets) = match *self {
            DetectionLayout::SinglePointOnAxis { distance } => (distance, vec![(0.0, 0.0)]),
            DetectionLayout::DiskSampling { radius, count, distance } => {
                if count == 0 || !(radius >= 0.0) {
                    return Err(Error::InvalidConfig("detection disk needs count >= 1 and radius >= 0".into()));
                }
                let golden = PI * (3.0 - 5f64.sqrt());
                let pts = (0..count)
                    .map(|i| {
                        let rho = radius * ((i as f64 + 0.5) / count as f64).sqrt();
                        let th = golden * i as f64;
                        (rho * th.cos(), rho * th.sin())
                    })
                    .collect();
                (distance, pts)
            }
        };
        let centre = beam.focus + axis * (plane + distance - beam.axial(&beam.focus));
        let pol = beam.polarization().vector();
        let mut e1 = pol.map(|c| c.re);
        if e1.norm() < 1e-12 {
            e1 = pol.map(|c| c.im);
        }
        let e1 = (e1 - axis * e1.dot(&axis)).normalize();
        let e2 = axis.cross(&e1);
        let points: Vec<Point> = offsets.iter().map(|&(u, v)| centre + e1 * u + e2 * v).collect();
        for p in &points {
            if beam.axial(p) <= far_edge {
                return Err(Error::InvalidConfig("detection point lies behind the array".into()));
            }
        }
        let nearest = points
            .iter()
            .flat_map(|p| array.positions().iter().map(move |q| (p - q).norm()))
            .fold(f64::INFINITY, f64::min);
        if nearest < 0.5 {
            warn!("detection point {nearest:.3} wavelengths from an emitter; near-field terms contribute");
        }
        Ok(points)
    }
}

/// A field sample: `t = 1 + weights . sigma / incident`.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub incident: C64,
    pub weights: DVector<C64>,
}

#[derive(Debug, Clone, PartialEq)]
enum Source {
    Vacuum,
    Waveguide { array: EmitterArray, direction: Direction, motion: Option<MotionModel> },
    FreeSpace { array: EmitterArray, beam: GaussianBeam, layout: DetectionLayout },
}

/// Everything needed to map a laser detuning to transmission: the system
/// matrix in reduced form, the unit-amplitude drive, and the detectors.
#[derive(Debug, Clone)]
pub struct TransmissionModel {
    source: Source,
    couplings: CouplingMatrices,
    detunings: Vec<f64>,
    solver: ShiftedSolver,
    drive: DVector<C64>,
    detectors: Vec<Detector>,
    reflection: Option<DVector<C64>>,
    amplitude: f64,
}

/// Response at one laser detuning.
#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub laser_detuning: f64,
    /// Per-detector transmission coefficients.
    pub t: Vec<C64>,
    pub r: Option<C64>,
    pub transmittance: f64,
    pub reflectance: Option<f64>,
    /// Coherences for unit drive amplitude.
    pub coherences: DVector<C64>,
}

/// Intermediate quantities shared by the derivative routines.
pub(crate) struct Linearization<'a> {
    pub factor: ShiftedFactor<'a>,
    pub sigma: DVector<C64>,
    pub transmittance: f64,
    /// `A^{-1} v` with `dT = 2 Re(v . d sigma)`.
    pub adjoint: DVector<C64>,
}

impl TransmissionModel {
    /// Guided plane-wave probe on a waveguide array.
    pub fn waveguide(array: &EmitterArray, direction: Direction) -> Result<Self> {
        Self::build(Source::Waveguide { array: array.clone(), direction, motion: None })
    }

    /// Guided probe with couplings and phases averaged over zero-point motion.
    pub fn waveguide_with_motion(array: &EmitterArray, direction: Direction, motion: MotionModel) -> Result<Self> {
        Self::build(Source::Waveguide { array: array.clone(), direction, motion: Some(motion) })
    }

    /// Gaussian beam on a free-space array.
    pub fn free_space(array: &EmitterArray, beam: &GaussianBeam, layout: DetectionLayout) -> Result<Self> {
        Self::build(Source::FreeSpace { array: array.clone(), beam: beam.clone(), layout })
    }

    /// No emitters at all: unit transmission everywhere.
    pub fn vacuum() -> Self {
        let empty = CouplingMatrices {
            j: nalgebra::DMatrix::zeros(0, 0),
            gamma: nalgebra::DMatrix::zeros(0, 0),
            gamma_prime: 0.0,
        };
        TransmissionModel {
            source: Source::Vacuum,
            solver: ShiftedSolver::new(empty.hamiltonian(&[])),
            couplings: empty,
            detunings: Vec::new(),
            drive: DVector::zeros(0),
            detectors: vec![Detector { incident: C64::new(1.0, 0.0), weights: DVector::zeros(0) }],
            reflection: None,
            amplitude: 0.0,
        }
    }

    /// Model for the scene's drive, detection layout and optional motion.
    pub fn from_drive(
        array: &EmitterArray,
        drive: &DriveField,
        layout: Option<DetectionLayout>,
        motion: Option<MotionModel>,
    ) -> Result<Self> {
        let model = match &drive.kind {
            DriveKind::GuidedPlaneWave(dir) => match motion {
                Some(m) if m.sigma > 0.0 => Self::waveguide_with_motion(array, *dir, m)?,
                _ => Self::waveguide(array, *dir)?,
            },
            DriveKind::GaussianBeam(beam) => {
                if motion.is_some_and(|m| m.sigma > 0.0) {
                    return Err(Error::RequiresWaveguide);
                }
                let layout = layout.unwrap_or_else(|| DetectionLayout::standard(beam.waist));
                Self::free_space(array, beam, layout)?
            }
        };
        Ok(model.with_amplitude(drive.amplitude))
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    fn build(source: Source) -> Result<Self> {
        match &source {
            Source::Vacuum => Ok(Self::vacuum()),
            Source::Waveguide { array, direction, motion } => {
                let k = array.environment().guided_wavenumber().ok_or(Error::RequiresWaveguide)?;
                let s = direction.sign();
                let (couplings, factors) = match motion {
                    Some(m) => {
                        let avg = motion_averaged_inputs(array, m)?;
                        (avg.couplings, avg.site_factors)
                    }
                    None => (coupling_matrix(array)?, vec![C64::new(1.0, 0.0); array.len()]),
                };
                // factor for a phase exp(i q k xi): f for q = +1, conj(f) for q = -1
                let fac = |j: usize, q: f64| if q > 0.0 { factors[j] } else { factors[j].conj() };
                let xc = array.centroid().x;
                let x: Vec<f64> = array.axial().iter().map(|x| x - xc).collect();
                let n = array.len();
                let drive = DVector::from_fn(n, |j, _| C64::from_polar(1.0, s * k * x[j]) * fac(j, s));
                let forward = DVector::from_fn(n, |j, _| 0.5 * I * C64::from_polar(1.0, -s * k * x[j]) * fac(j, -s));
                let backward = DVector::from_fn(n, |j, _| 0.5 * I * C64::from_polar(1.0, s * k * x[j]) * fac(j, s));
                let detunings = array.detunings().to_vec();
                Ok(TransmissionModel {
                    solver: ShiftedSolver::new(couplings.hamiltonian(&detunings)),
                    couplings,
                    detunings,
                    drive,
                    detectors: vec![Detector { incident: C64::new(1.0, 0.0), weights: forward }],
                    reflection: Some(backward),
                    amplitude: 1.0,
                    source,
                })
            }
            Source::FreeSpace { array, beam, layout } => {
                let dipole = match array.environment() {
                    Environment::FreeSpace { dipole } => *dipole,
                    Environment::Waveguide { .. } => return Err(Error::RequiresFreeSpace),
                };
                let couplings = coupling_matrix(array)?;
                let detunings = array.detunings().to_vec();
                let drive = DriveField::gaussian(beam.clone(), 1.0).unit_rabi(array)?;
                let points = layout.points(beam, array)?;
                let detectors = points
                    .iter()
                    .map(|p| freespace_detector(p, beam, &dipole, array))
                    .collect::<Result<Vec<_>>>()?;
                Ok(TransmissionModel {
                    solver: ShiftedSolver::new(couplings.hamiltonian(&detunings)),
                    couplings,
                    detunings,
                    drive,
                    detectors,
                    reflection: None,
                    amplitude: 1.0,
                    source,
                })
            }
        }
    }

    pub fn len(&self) -> usize {
        self.detunings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detunings.is_empty()
    }

    pub fn is_waveguide(&self) -> bool {
        matches!(self.source, Source::Waveguide { .. })
    }

    pub fn array(&self) -> Option<&EmitterArray> {
        match &self.source {
            Source::Vacuum => None,
            Source::Waveguide { array, .. } | Source::FreeSpace { array, .. } => Some(array),
        }
    }

    pub fn couplings(&self) -> &CouplingMatrices {
        &self.couplings
    }

    pub fn detunings(&self) -> &[f64] {
        &self.detunings
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn detectors(&self) -> &[Detector] {
        &self.detectors
    }

    pub fn unit_drive(&self) -> &DVector<C64> {
        &self.drive
    }

    pub fn motion(&self) -> Option<MotionModel> {
        match &self.source {
            Source::Waveguide { motion, .. } => *motion,
            _ => None,
        }
    }

    pub(crate) fn guided_setup(&self) -> Option<(&EmitterArray, Direction)> {
        match &self.source {
            Source::Waveguide { array, direction, .. } => Some((array, *direction)),
            _ => None,
        }
    }

    /// Same drive and detection for a modified array.
    pub fn rebuild(&self, array: &EmitterArray) -> Result<Self> {
        let source = match &self.source {
            Source::Vacuum => return Ok(Self::vacuum()),
            Source::Waveguide { direction, motion, .. } => {
                Source::Waveguide { array: array.clone(), direction: *direction, motion: *motion }
            }
            Source::FreeSpace { beam, layout, .. } => {
                Source::FreeSpace { array: array.clone(), beam: beam.clone(), layout: *layout }
            }
        };
        Ok(Self::build(source)?.with_amplitude(self.amplitude))
    }

    /// Same model with new per-site detunings; couplings are reused.
    pub fn with_detunings(&self, detunings: &[f64]) -> Result<Self> {
        if detunings.len() != self.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} detunings, got {}",
                self.len(),
                detunings.len()
            )));
        }
        let mut out = self.clone();
        out.detunings = detunings.to_vec();
        out.solver = ShiftedSolver::new(out.couplings.hamiltonian(detunings));
        if let Source::Waveguide { array, .. } | Source::FreeSpace { array, .. } = &mut out.source {
            *array = array.with_detunings(detunings.to_vec())?;
        }
        Ok(out)
    }

    fn coefficients(&self, sigma: &DVector<C64>) -> (Vec<C64>, f64) {
        let t: Vec<C64> = self
            .detectors
            .iter()
            .map(|d| C64::new(1.0, 0.0) + d.weights.dot(sigma) / d.incident)
            .collect();
        let tt = t.iter().map(|t| t.norm_sqr()).sum::<f64>() / t.len() as f64;
        (t, tt)
    }

    pub fn evaluate(&self, delta: f64) -> Result<Response> {
        let factor = self.solver.factor(delta)?;
        let (sigma, _) = factor.solve(&self.drive)?;
        let (t, transmittance) = self.coefficients(&sigma);
        let r = self.reflection.as_ref().map(|w| w.dot(&sigma));
        Ok(Response { laser_detuning: delta, t, r, transmittance, reflectance: r.map(|r| r.norm_sqr()), coherences: sigma })
    }

    pub fn transmittance(&self, delta: f64) -> Result<f64> {
        if self.is_empty() {
            return Ok(1.0);
        }
        let factor = self.solver.factor(delta)?;
        let (sigma, _) = factor.solve(&self.drive)?;
        Ok(self.coefficients(&sigma).1)
    }

    /// Largest single-site excitation at this detuning for the stored amplitude.
    pub fn max_excitation(&self, delta: f64) -> Result<f64> {
        let r = self.evaluate(delta)?;
        Ok(r.coherences.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max) * self.amplitude * self.amplitude)
    }

    pub(crate) fn linearize(&self, delta: f64) -> Result<Linearization<'_>> {
        let factor = self.solver.factor(delta)?;
        let (sigma, _) = factor.solve(&self.drive)?;
        let (t, transmittance) = self.coefficients(&sigma);
        let p = self.detectors.len() as f64;
        let mut v = DVector::<C64>::zeros(self.len());
        for (d, tp) in self.detectors.iter().zip(&t) {
            v += &d.weights * (tp.conj() / d.incident / p);
        }
        let (adjoint, _) = factor.solve(&v)?;
        Ok(Linearization { factor, sigma, transmittance, adjoint })
    }

    /// `T` and `dT/dDelta_L`.
    pub fn transmittance_derivative(&self, delta: f64) -> Result<(f64, f64)> {
        if self.is_empty() {
            return Ok((1.0, 0.0));
        }
        let lin = self.linearize(delta)?;
        // d sigma / d Delta = A^{-1} sigma
        let d = 2.0 * lin.adjoint.dot(&lin.sigma).re;
        Ok((lin.transmittance, d))
    }
}

fn freespace_detector(p: &Point, beam: &GaussianBeam, dipole: &Dipole, array: &EmitterArray) -> Result<Detector> {
    let e = beam.polarization().vector();
    let d = dipole.vector();
    let pre = C64::new(3.0 * PI / K0, 0.0);
    let weights = array
        .positions()
        .iter()
        .map(|q| {
            let g = greens_freespace(&(p - q), K0)?;
            Ok(pre * e.dotc(&(g * d)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Detector { incident: beam.profile(p), weights: DVector::from_vec(weights) })
}

/// Total field at `r` for coherences computed with the drive's amplitude, in
/// Rabi-frequency units. Waveguide fields are returned in the x slot.
pub fn scattered_field(
    array: &EmitterArray,
    drive: &DriveField,
    coherences: &DVector<C64>,
    r: &Point,
) -> Result<Vector3<C64>> {
    let zero = C64::new(0.0, 0.0);
    match (&drive.kind, array.environment()) {
        (DriveKind::GuidedPlaneWave(dir), Environment::Waveguide { .. }) => {
            let k = array.environment().guided_wavenumber().unwrap_or(K0);
            let xc = array.centroid().x;
            let mut f = C64::from_polar(drive.amplitude, dir.sign() * k * (r.x - xc));
            for (q, s) in array.positions().iter().zip(coherences.iter()) {
                f += crate::greens::greens_waveguide(r.x - q.x, k) * s;
            }
            Ok(Vector3::new(f, zero, zero))
        }
        (DriveKind::GaussianBeam(beam), Environment::FreeSpace { dipole }) => {
            let e = beam.polarization().vector();
            let mut f = e * (beam.profile(r) * drive.amplitude);
            for (q, s) in array.positions().iter().zip(coherences.iter()) {
                let g = greens_freespace(&(r - q), K0)?;
                f += (g * dipole.vector()) * (s * (3.0 * PI / K0));
            }
            Ok(f)
        }
        (DriveKind::GuidedPlaneWave(_), _) => Err(Error::RequiresWaveguide),
        (DriveKind::GaussianBeam(_), _) => Err(Error::RequiresFreeSpace),
    }
}

/// `(t, r)` for a guided probe. Two emitters with equal detunings use the
/// closed symmetric/antisymmetric form; everything else goes through the
/// linear solve.
pub fn waveguide_transmission(array: &EmitterArray, direction: Direction, delta: f64) -> Result<(C64, C64)> {
    let k = array.environment().guided_wavenumber().ok_or(Error::RequiresWaveguide)?;
    let det = array.detunings();
    if array.len() == 2 && det[0] == det[1] {
        let a = (array.positions()[1].x - array.positions()[0].x).abs();
        return Ok(two_atom_coefficients(a, k, det[0], array.gamma_prime(), delta));
    }
    let model = TransmissionModel::waveguide(array, direction)?;
    let resp = model.evaluate(delta)?;
    Ok((resp.t[0], resp.r.unwrap_or_default()))
}

/// Closed-form two-emitter coefficients; `k` in 1/wavelength.
pub fn two_atom_coefficients(a: f64, k: f64, detuning: f64, gamma_prime: f64, delta: f64) -> (C64, C64) {
    let (ls, la) = crate::modes::two_atom_eigenvalues(a, k);
    let shift = C64::new(delta + detuning, 0.5 * gamma_prime);
    let c2 = (0.5 * k * a).cos().powi(2);
    let s2 = (0.5 * k * a).sin().powi(2);
    let t = 1.0 + I * (c2 / (ls - shift) + s2 / (la - shift));
    let r = I * (c2 / (ls - shift) - s2 / (la - shift));
    (t, r)
}

/// Transmission of the bright/dark two-mode model.
pub fn bright_dark_transmission(model: &BrightDarkModel, delta: f64) -> C64 {
    let b = model.lambda_b - delta;
    let d = model.lambda_d - delta;
    let det = b * d - model.coupling * model.coupling;
    1.0 + 0.5 * I * model.gamma_b() * d / det
}

/// Uniform grid with optional adaptive refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    pub refine: bool,
}

/// Refinement inserts midpoints where adjacent T values differ by more than this.
pub const REFINE_THRESHOLD: f64 = 0.1;
pub const MAX_REFINE_LEVELS: usize = 12;

impl GridSpec {
    pub fn new(start: f64, stop: f64, points: usize, refine: bool) -> Result<Self> {
        if points < 2 || !(stop > start) || !start.is_finite() || !stop.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "grid needs start < stop and at least 2 points, got {start}:{stop}:{points}"
            )));
        }
        Ok(GridSpec { start, stop, points, refine })
    }

    pub fn values(&self) -> Vec<f64> {
        let h = (self.stop - self.start) / (self.points - 1) as f64;
        (0..self.points).map(|i| if i + 1 == self.points { self.stop } else { self.start + h * i as f64 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumPoint {
    pub laser_detuning: f64,
    pub t: C64,
    pub r: Option<C64>,
    pub transmittance: f64,
    pub reflectance: Option<f64>,
    /// Largest single-site excitation for the model's drive amplitude.
    pub excitation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumRecord {
    pub points: Vec<SpectrumPoint>,
    pub waveguide: bool,
    pub refinement_levels: usize,
    pub metadata: Vec<(String, String)>,
}

impl SpectrumRecord {
    pub fn grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.laser_detuning).collect()
    }

    pub fn transmittances(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.transmittance).collect()
    }

    pub fn csv_header(&self) -> &'static str {
        if self.waveguide {
            "Delta_L,t_re,t_im,r_re,r_im,T,R"
        } else {
            "Delta_L,T"
        }
    }

    /// CSV rows with header, no metadata.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(self.csv_header());
        out.push('\n');
        for p in &self.points {
            if self.waveguide {
                let r = p.r.unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    p.laser_detuning,
                    p.t.re,
                    p.t.im,
                    r.re,
                    r.im,
                    p.transmittance,
                    p.reflectance.unwrap_or(0.0)
                );
            } else {
                let _ = writeln!(out, "{},{}", p.laser_detuning, p.transmittance);
            }
        }
        out
    }
}

fn spectrum_point(model: &TransmissionModel, delta: f64) -> Result<SpectrumPoint> {
    if model.is_empty() {
        return Ok(SpectrumPoint {
            laser_detuning: delta,
            t: C64::new(1.0, 0.0),
            r: None,
            transmittance: 1.0,
            reflectance: None,
            excitation: 0.0,
        });
    }
    let resp = model.evaluate(delta)?;
    Ok(SpectrumPoint {
        laser_detuning: delta,
        t: resp.t[0],
        r: resp.r,
        transmittance: resp.transmittance,
        reflectance: resp.reflectance,
        excitation: resp.coherences.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max) * model.amplitude().powi(2),
    })
}

/// Evaluate the model on the grid. With refinement on, collective resonances
/// inside the range are added to the grid and intervals are bisected while T,
/// or its slope extrapolated across the interval, changes by more than
/// `REFINE_THRESHOLD`.
pub fn sweep_spectrum(model: &TransmissionModel, grid: &GridSpec) -> Result<SpectrumRecord> {
    let mut levels = 0;
    let points = if grid.refine && !model.is_empty() {
        let mut xs = grid.values();
        let modes = crate::modes::eigenmodes(model.couplings(), model.detunings())?;
        xs.extend(modes.eigenvalues.iter().map(|l| l.re).filter(|x| *x > grid.start && *x < grid.stop));
        xs.sort_by(|a, b| a.total_cmp(b));
        xs.dedup();
        let eval = |d: &f64| -> Result<(SpectrumPoint, f64)> {
            Ok((spectrum_point(model, *d)?, model.transmittance_derivative(*d)?.1))
        };
        let mut pts: Vec<(SpectrumPoint, f64)> = xs.par_iter().map(eval).collect::<Result<Vec<_>>>()?;
        while levels < MAX_REFINE_LEVELS {
            let mids: Vec<f64> = pts
                .windows(2)
                .filter(|w| {
                    let h = w[1].0.laser_detuning - w[0].0.laser_detuning;
                    let jump = (w[1].0.transmittance - w[0].0.transmittance).abs();
                    let slope = h * w[0].1.abs().max(w[1].1.abs());
                    jump > REFINE_THRESHOLD || slope > REFINE_THRESHOLD
                })
                .map(|w| 0.5 * (w[0].0.laser_detuning + w[1].0.laser_detuning))
                .collect();
            if mids.is_empty() {
                break;
            }
            let new: Vec<(SpectrumPoint, f64)> = mids.par_iter().map(eval).collect::<Result<Vec<_>>>()?;
            pts.extend(new);
            pts.sort_by(|a, b| a.0.laser_detuning.total_cmp(&b.0.laser_detuning));
            pts.dedup_by(|a, b| a.0.laser_detuning == b.0.laser_detuning);
            levels += 1;
        }
        pts.into_iter().map(|p| p.0).collect()
    } else {
        grid.values().par_iter().map(|&d| spectrum_point(model, d)).collect::<Result<Vec<_>>>()?
    };
    let max_p = points.iter().map(|p| p.excitation).fold(0.0, f64::max);
    if max_p > crate::steady::EXCITATION_WARN {
        warn!("drive amplitude {} gives single-site excitation up to {max_p:.2e}; spectra assume the weak-drive limit", model.amplitude());
    }
    Ok(SpectrumRecord {
        points,
        waveguide: model.is_waveguide(),
        refinement_levels: levels,
        metadata: vec![("max_excitation".into(), format!("{max_p:e}"))],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{build_array, DetuningProfile, Geometry};
    use proptest::prelude::*;

    fn chain(n: usize, a: f64, gp: f64, profiles: &[DetuningProfile]) -> EmitterArray {
        build_array(&Geometry::Chain { n, spacing: a }, Environment::Waveguide { kp: 1.0 }, profiles, gp).unwrap()
    }

    fn explicit(xs: &[f64], dets: &[f64], gp: f64) -> Option<EmitterArray> {
        let mut xs = xs.to_vec();
        xs.sort_by(|a, b| a.total_cmp(b));
        if xs.windows(2).any(|w| w[1] - w[0] < 1e-3) {
            return None;
        }
        let pos = xs.iter().map(|&x| Point::new(x, 0.0, 0.0)).collect();
        EmitterArray::new(pos, dets[..xs.len()].to_vec(), Environment::Waveguide { kp: 1.0 }, gp).ok()
    }

    #[test]
    fn single_emitter_reflects_on_resonance() {
        let arr = chain(1, 1.0, 0.0, &[]);
        let m = TransmissionModel::waveguide(&arr, Direction::Right).unwrap();
        let r = m.evaluate(0.0).unwrap();
        assert!(r.t[0].norm() < 1e-15);
        assert!((r.r.unwrap() + 1.0).norm() < 1e-15);
        // Lorentzian T = D^2 / (D^2 + 1/4)
        for &d in &[-2.0, -0.3, 0.1, 0.9] {
            let t = m.transmittance(d).unwrap();
            assert!((t - d * d / (d * d + 0.25)).abs() < 1e-14);
        }
    }

    #[test]
    fn field_picture_agrees_with_coefficients() {
        let arr = chain(2, 0.13, 0.0, &[DetuningProfile::Antisymmetric { amplitude: 0.2 }]);
        let drive = DriveField::guided(Direction::Right, 0.01);
        let zero = DVector::zeros(2);
        let probe = Point::new(3.7, 0.0, 0.0);
        let f = scattered_field(&arr, &drive, &zero, &probe).unwrap();
        let xc = arr.centroid().x;
        assert!((f.x - C64::from_polar(0.01, K0 * (probe.x - xc))).norm() < 1e-15);

        let model = TransmissionModel::waveguide(&arr, Direction::Right).unwrap();
        let delta = 0.31;
        let resp = model.evaluate(delta).unwrap();
        let sigma = &resp.coherences * C64::new(0.01, 0.0);
        let right = Point::new(5.0, 0.0, 0.0);
        let left = Point::new(-5.0, 0.0, 0.0);
        let fr = scattered_field(&arr, &drive, &sigma, &right).unwrap().x;
        let inc_r = C64::from_polar(0.01, K0 * (right.x - xc));
        assert!((fr / inc_r - resp.t[0]).norm() < 1e-12);
        let fl = scattered_field(&arr, &drive, &sigma, &left).unwrap().x;
        let inc_l = C64::from_polar(0.01, K0 * (left.x - xc));
        let refl = (fl - inc_l) / C64::from_polar(0.01, -K0 * (left.x - xc));
        assert!((refl - resp.r.unwrap()).norm() < 1e-12);

        let single = chain(1, 1.0, 0.0, &[]);
        let s1 = TransmissionModel::waveguide(&single, Direction::Right).unwrap().evaluate(0.0).unwrap();
        let f1 = scattered_field(&single, &drive, &(&s1.coherences * C64::new(0.01, 0.0)), &right).unwrap();
        assert!(f1.x.norm() < 1e-15);
    }

    #[test]
    fn perfect_transmission_points() {
        for &a in &[0.04, 0.1, 0.2] {
            let arr = chain(2, a, 0.0, &[]);
            let d = -0.5 * (K0 * a).tan();
            let m = TransmissionModel::waveguide(&arr, Direction::Right).unwrap();
            assert!((m.transmittance(d).unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dicke_pair_with_control_detuning() {
        let d0 = 0.1;
        let arr = chain(2, 1.0, 0.0, &[DetuningProfile::Antisymmetric { amplitude: d0 }]);
        let m = TransmissionModel::waveguide(&arr, Direction::Right).unwrap();
        assert!((m.evaluate(0.0).unwrap().t[0] - 1.0).norm() < 1e-12);
        assert!(m.transmittance(d0).unwrap() <= 1e-10);
        assert!(m.transmittance(-d0).unwrap() <= 1e-10);
    }

    #[test]
    fn bright_dark_formula() {
        let m = BrightDarkModel::dicke_pair(0.1);
        assert!((bright_dark_transmission(&m, 0.0) - 1.0).norm() < 1e-15);
        let (p, q) = m.dressed_resonances();
        assert!(bright_dark_transmission(&m, p).norm_sqr() < 1e-20);
        assert!(bright_dark_transmission(&m, q).norm_sqr() < 1e-20);
        let m0 = BrightDarkModel::new(C64::new(0.4, -0.7), C64::new(-0.1, 0.0), 0.0, C64::new(1.0, 0.0)).unwrap();
        assert!(bright_dark_transmission(&m0, 0.4).norm() < 1e-15);
        let m1 = BrightDarkModel::new(C64::new(0.4, -0.7), C64::new(-0.1, 0.0), 0.1, C64::new(1.0, 0.0)).unwrap();
        assert!((bright_dark_transmission(&m1, -0.1) - 1.0).norm() < 1e-15);
        let (p, q) = m1.dressed_resonances();
        assert!(bright_dark_transmission(&m1, p).norm_sqr() < 1e-20);
        assert!(bright_dark_transmission(&m1, q).norm_sqr() < 1e-20);
    }

    #[test]
    fn analytic_two_atom_path_matches_solver() {
        for &(a, det, gp) in &[(0.04, 0.0, 0.0), (0.1, 0.2, 0.0), (0.37, -0.3, 0.1), (1.0, 0.0, 0.05)] {
            let arr = chain(2, a, gp, &[DetuningProfile::Uniform { value: det }]);
            let m = TransmissionModel::waveguide(&arr, Direction::Right).unwrap();
            for i in 0..1000 {
                let d = -3.0 + 6.0 * (i as f64 + 0.5) / 1000.0;
                let (t, r) = two_atom_coefficients(a, K0, det, gp, d);
                let resp = m.evaluate(d).unwrap();
                assert!((t - resp.t[0]).norm() < 1e-10, "a={a} d={d}");
                assert!((r - resp.r.unwrap()).norm() < 1e-10, "a={a} d={d}");
            }
        }
        let arr = chain(2, 0.2, 0.0, &[]);
        let (t, _) = waveguide_transmission(&arr, Direction::Right, -0.5 * (K0 * 0.2).tan()).unwrap();
        assert!((t.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_reduces_total_power() {
        let arr = chain(3, 0.21, 0.1, &[DetuningProfile::Linear1D { slope: 0.3 }]);
        let m = TransmissionModel::waveguide(&arr, Direction::Right).unwrap();
        for &d in &[-1.0, -0.2, 0.0, 0.3] {
            let r = m.evaluate(d).unwrap();
            assert!(r.transmittance + r.reflectance.unwrap() < 1.0);
        }
    }

    #[test]
    fn vacuum_and_refinement() {
        let v = TransmissionModel::vacuum();
        let rec = sweep_spectrum(&v, &GridSpec::new(-1.0, 1.0, 11, true).unwrap()).unwrap();
        assert_eq!(rec.points.len(), 11);
        assert_eq!(rec.refinement_levels, 0);
        assert!(rec.points.iter().all(|p| p.transmittance == 1.0));
        assert_eq!(v.transmittance_derivative(0.3).unwrap(), (1.0, 0.0));
        assert!(GridSpec::new(0.0, 1.0, 0, false).is_err());
        assert!(GridSpec::new(1.0, 0.0, 10, false).is_err());
    }

    #[test]
    fn refinement_resolves_subradiant_window() {
        let a = 0.04;
        let arr = chain(2, a, 0.0, &[]);
        let m = TransmissionModel::waveguide(&arr, Direction::Right).unwrap();
        let rec = sweep_spectrum(&m, &GridSpec::new(-3.0, 3.0, 121, true).unwrap()).unwrap();
        assert!(rec.refinement_levels > 0);
        let centre = -0.5 * (K0 * a).tan();
        let width = 2.0 * (0.5 * K0 * a).sin().powi(2);
        let inside = rec.grid().iter().filter(|&&d| (d - centre).abs() <= width).count();
        assert!(inside >= 20, "{inside} points across the window");
        let csv = rec.to_csv();
        assert!(csv.starts_with("Delta_L,t_re,t_im,r_re,r_im,T,R\n"));
        for w in rec.points.windows(2) {
            assert!(w[1].laser_detuning > w[0].laser_detuning);
        }
    }

    #[test]
    fn free_space_beam_and_layout() {
        let arr = build_array(
            &Geometry::Square { side: 3, spacing: 0.5 },
            Environment::FreeSpace { dipole: Dipole::x() },
            &[],
            0.0,
        )
        .unwrap();
        let c = arr.centroid();
        let beam = GaussianBeam::along_z(0.3 * 3.0 * 0.5, c).unwrap();
        let layout = DetectionLayout::standard(beam.waist);
        let pts = layout.points(&beam, &arr).unwrap();
        assert_eq!(pts.len(), 31);
        for p in &pts {
            assert!((p.z - 1.1).abs() < 1e-12);
            assert!(((p.x - c.x).powi(2) + (p.y - c.y).powi(2)).sqrt() <= 1.2 * beam.waist + 1e-12);
        }
        let behind = DetectionLayout::SinglePointOnAxis { distance: -1.0 };
        assert!(behind.points(&beam, &arr).is_err());

        let m = TransmissionModel::free_space(&arr, &beam, layout).unwrap();
        assert!(!m.is_waveguide());
        // far off resonance the array is transparent
        assert!((m.transmittance(1e4).unwrap() - 1.0).abs() < 1e-3);
        let rec = sweep_spectrum(&m, &GridSpec::new(-2.0, 2.0, 5, false).unwrap()).unwrap();
        assert!(rec.to_csv().starts_with("Delta_L,T\n"));

        // field picture: t at a detection point from scattered_field
        let drive = DriveField::gaussian(beam.clone(), 0.01);
        let resp = m.evaluate(0.2).unwrap();
        let sigma = &resp.coherences * C64::new(0.01, 0.0);
        let f = scattered_field(&arr, &drive, &sigma, &pts[3]).unwrap();
        let t = beam.polarization().vector().dotc(&f) / (beam.profile(&pts[3]) * 0.01);
        assert!((t - resp.t[3]).norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn energy_reciprocity_scaling_shift(xs in proptest::collection::vec(0.0f64..2.0, 1..7),
                                            dets in proptest::collection::vec(-0.5f64..0.5, 7),
                                            d in -2.0f64..2.0, c in -1.0f64..1.0) {
            let Some(arr) = explicit(&xs, &dets, 0.0) else { return Ok(()); };
            let right = TransmissionModel::waveguide(&arr, Direction::Right).unwrap();
            let left = TransmissionModel::waveguide(&arr, Direction::Left).unwrap();
            let Ok(r) = right.evaluate(d) else { return Ok(()); };
            let l = left.evaluate(d).unwrap();
            prop_assert!((r.transmittance + r.reflectance.unwrap() - 1.0).abs() < 1e-9);
            prop_assert!((r.t[0] - l.t[0]).norm() < 1e-10);
            let scaled = right.clone().with_amplitude(3.7);
            prop_assert_eq!(scaled.transmittance(d).unwrap(), right.transmittance(d).unwrap());
            let shifted: Vec<f64> = arr.detunings().iter().map(|v| v + c).collect();
            let moved = right.with_detunings(&shifted).unwrap();
            prop_assert!((moved.transmittance(d - c).unwrap() - r.transmittance).abs() < 1e-10);
        }
    }
}

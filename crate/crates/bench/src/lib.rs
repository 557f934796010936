//! Scenes shared by the benchmarks.

use std::f64::consts::PI;

use subrad_core::{build_array, DetectionLayout, Dipole, DetuningProfile, Environment, GaussianBeam, Geometry, TransmissionModel};

pub fn chain(n: usize, spacing: f64) -> TransmissionModel {
    let profile = DetuningProfile::Sinusoidal1D { amplitude: 0.1, frequency: PI / (n as f64 * spacing) };
    let arr = build_array(&Geometry::Chain { n, spacing }, Environment::Waveguide { kp: 1.0 }, &[profile], 0.0)
        .expect("valid chain");
    TransmissionModel::waveguide(&arr, subrad_core::Direction::Right).expect("valid model")
}

pub fn lattice(side: usize, spacing: f64) -> TransmissionModel {
    let q = PI / spacing;
    let arr = build_array(
        &Geometry::Square { side, spacing },
        Environment::FreeSpace { dipole: Dipole::x() },
        &[DetuningProfile::PlaneWave2D { amplitude: 0.1, k: [q, q] }],
        0.0,
    )
    .expect("valid lattice");
    let beam = GaussianBeam::along_z(0.3 * side as f64 * spacing, arr.centroid()).expect("valid beam");
    TransmissionModel::free_space(&arr, &beam, DetectionLayout::standard(beam.waist)).expect("valid model")
}

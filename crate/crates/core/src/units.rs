//! Reference scales and physical presets.
//!
//! Every quantity inside the crate is dimensionless: rates are measured in the
//! single-emitter decay rate of the scene (the guided-mode rate for waveguide
//! scenes, the free-space rate otherwise) and lengths in the transition
//! wavelength. Physical units only appear at the I/O boundary.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Resonant wavenumber in units of 1/wavelength.
pub const K0: f64 = 2.0 * PI;

/// Conversion between dimensionless and physical quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Units {
    /// Reference decay rate in s^-1 (angular).
    pub rate_unit: f64,
    /// Transition wavelength in metres.
    pub length_unit: f64,
}

impl Units {
    pub fn new(rate_unit: f64, length_unit: f64) -> Result<Self> {
        if !(rate_unit > 0.0 && rate_unit.is_finite()) {
            return Err(Error::InvalidConfig(format!("rate unit must be positive, got {rate_unit}")));
        }
        if !(length_unit > 0.0 && length_unit.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "length unit must be positive, got {length_unit}"
            )));
        }
        Ok(Units { rate_unit, length_unit })
    }

    pub fn rate_to_physical(&self, rate: f64) -> f64 {
        rate * self.rate_unit
    }

    pub fn rate_from_physical(&self, rate: f64) -> f64 {
        rate / self.rate_unit
    }

    pub fn length_to_physical(&self, length: f64) -> f64 {
        length * self.length_unit
    }

    pub fn length_from_physical(&self, length: f64) -> f64 {
        length / self.length_unit
    }

    /// Wavenumber of the transition in m^-1.
    pub fn wavenumber(&self) -> f64 {
        K0 / self.length_unit
    }
}

/// Named atomic transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 87Rb D2 line.
    RbD2,
    /// Strontium 1S0-3P0 clock line (millihertz class).
    SrClock,
}

/// Physical constants of a transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transition {
    pub name: &'static str,
    /// Natural decay rate in s^-1 (angular).
    pub gamma_0: f64,
    /// Transition angular frequency in s^-1.
    pub omega_0: f64,
    /// Wavelength in metres.
    pub wavelength: f64,
}

impl Preset {
    pub fn transition(self) -> Transition {
        match self {
            Preset::RbD2 => Transition {
                name: "Rb87 D2",
                gamma_0: 2.0 * PI * 6.07e6,
                omega_0: 2.0 * PI * 384.23e12,
                wavelength: 780.24e-9,
            },
            Preset::SrClock => Transition {
                name: "Sr 1S0-3P0",
                gamma_0: 2.0 * PI * 1.0e-3,
                omega_0: 2.0 * PI * 429.228e12,
                wavelength: 698.45e-9,
            },
        }
    }

    pub fn units(self) -> Units {
        let t = self.transition();
        Units { rate_unit: t.gamma_0, length_unit: t.wavelength }
    }
}

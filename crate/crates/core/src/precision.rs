//! Shot-noise estimate of the frequency precision reachable by locking to a
//! subradiant resonance.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::units::Preset;

const HBAR: f64 = 1.054_571_817e-34;

/// Operating point of the estimate. Rates are angular, in s^-1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrecisionInputs {
    pub gamma_sub: f64,
    pub gamma_0: f64,
    pub omega_0: f64,
    pub atoms: f64,
    /// Largest excitation probability per emitter.
    pub p: f64,
    /// Integration time in seconds.
    pub tau: f64,
    pub eta_eff: f64,
    pub contrast: f64,
}

impl PrecisionInputs {
    pub fn new(gamma_sub: f64, gamma_0: f64, omega_0: f64, atoms: f64, p: f64, tau: f64) -> Result<Self> {
        Self { gamma_sub, gamma_0, omega_0, atoms, p, tau, eta_eff: 1.0, contrast: 1.0 }.validated()
    }

    /// Preset transition with the subradiant width given as a fraction of its
    /// natural linewidth.
    pub fn from_preset(preset: Preset, gamma_sub_fraction: f64, atoms: f64, p: f64, tau: f64) -> Result<Self> {
        let t = preset.transition();
        Self::new(gamma_sub_fraction * t.gamma_0, t.gamma_0, t.omega_0, atoms, p, tau)
    }

    pub fn with_efficiency(mut self, eta_eff: f64, contrast: f64) -> Result<Self> {
        self.eta_eff = eta_eff;
        self.contrast = contrast;
        self.validated()
    }

    fn validated(self) -> Result<Self> {
        let fields = [
            ("gamma_sub", self.gamma_sub),
            ("gamma_0", self.gamma_0),
            ("omega_0", self.omega_0),
            ("atoms", self.atoms),
            ("p", self.p),
            ("tau", self.tau),
            ("eta_eff", self.eta_eff),
            ("contrast", self.contrast),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.p > 0.1 {
            return Err(Error::ExcitationTooHigh { excitation: self.p, limit: 0.1 });
        }
        Ok(self)
    }
}

/// `Gamma_sub / (C sqrt(eta p N Gamma_0 tau))`, in s^-1.
pub fn frequency_uncertainty(inputs: &PrecisionInputs) -> f64 {
    let counts = inputs.eta_eff * inputs.p * inputs.atoms * inputs.gamma_0 * inputs.tau;
    inputs.gamma_sub / (inputs.contrast * counts.sqrt())
}

pub fn fractional_precision(inputs: &PrecisionInputs) -> f64 {
    frequency_uncertainty(inputs) / inputs.omega_0
}

/// Scattered power at the excitation cap, `p N hbar omega_0 Gamma_0`, in watts.
pub fn incident_power(inputs: &PrecisionInputs) -> f64 {
    inputs.p * inputs.atoms * HBAR * inputs.omega_0 * inputs.gamma_0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrecisionReport {
    pub inputs: PrecisionInputs,
    pub delta_omega: f64,
    pub fractional: f64,
    pub power_watts: f64,
    pub disclaimer: &'static str,
}

pub fn precision_report(inputs: &PrecisionInputs) -> PrecisionReport {
    PrecisionReport {
        inputs: *inputs,
        delta_omega: frequency_uncertainty(inputs),
        fractional: fractional_precision(inputs),
        power_watts: incident_power(inputs),
        disclaimer: "order-of-magnitude estimate (+-1 order of magnitude)",
    }
}

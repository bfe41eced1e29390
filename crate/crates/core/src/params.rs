//! Model constants and scenario definitions with their TOML formats.
//!
//! Parameter files are flat key/value TOML documents whose keys are the usual
//! symbols of the zero-dimensional Li-S model (`M_S8`, `k_s`, `E_H0`, ...).
//! Scenario files use the same format with covariance diagonals and initial
//! states written as arrays.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ekf::{JacobianMode, OutputJacobian};
use crate::error::{Error, Result};
use crate::model::{AlgebraicState, DifferentialState};

pub use crate::sim::SimOptions;

/// Reference parameter file shipped with the crate.
pub const REFERENCE_PARAMS_TOML: &str = include_str!("../data/reference_params.toml");

/// The 1.7 A, 5000 s discharge scenario shipped with the crate.
pub const DISCHARGE_SCENARIO_TOML: &str = include_str!("../data/discharge_1p7A.toml");

/// Sign convention relating a reaction current to its overpotential.
///
/// The mass balances count a positive reaction current as reduction
/// (discharge). With `Cathodic`, `i = -2 i0 a_r sinh(n_e F eta / 2RT)` so a
/// positive current needs the terminal voltage below the Nernst potential.
/// `Anodic` drops the minus sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurrentConvention {
    #[default]
    Cathodic,
    Anodic,
}

impl CurrentConvention {
    pub fn sign(self) -> f64 {
        match self {
            CurrentConvention::Cathodic => -1.0,
            CurrentConvention::Anodic => 1.0,
        }
    }
}

fn default_s4_order() -> f64 {
    2.0
}

/// Physical and chemical constants of the zero-dimensional model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// Molar mass used in the mass/charge conversion, g/mol.
    #[serde(rename = "M_S8")]
    pub m_s8: f64,
    #[serde(rename = "n_S8")]
    pub n_s8: f64,
    #[serde(rename = "n_S4")]
    pub n_s4: f64,
    /// Stored for completeness; the four-state model has no S2 state.
    #[serde(rename = "n_S2")]
    pub n_s2: f64,
    #[serde(rename = "n_S")]
    pub n_s: f64,
    /// Electrons per reaction.
    pub n_e: f64,
    /// Faraday constant, C/mol.
    #[serde(rename = "F")]
    pub faraday: f64,
    /// Gas constant, J/(K mol).
    #[serde(rename = "R_gas")]
    pub r_gas: f64,
    /// Temperature, K.
    #[serde(rename = "T")]
    pub temperature: f64,
    /// Density of precipitated sulfur, g/L.
    #[serde(rename = "rho_S")]
    pub rho_s: f64,
    /// Shuttle constant, 1/s.
    pub k_s: f64,
    /// Precipitation rate, 1/s.
    pub k_p: f64,
    /// S2- saturation mass, g.
    #[serde(rename = "S_star")]
    pub s_star: f64,
    #[serde(rename = "E_H0")]
    pub e_h0: f64,
    #[serde(rename = "E_L0")]
    pub e_l0: f64,
    /// Exchange current density of the high-plateau reaction, A/m^2.
    #[serde(rename = "i_H0")]
    pub i_h0: f64,
    #[serde(rename = "i_L0")]
    pub i_l0: f64,
    /// Dimensionality factor of the high-plateau Nernst term, g L/mol.
    #[serde(rename = "f_H")]
    pub f_h: f64,
    /// Dimensionality factor of the low-plateau Nernst term, g^2 L^2/mol.
    #[serde(rename = "f_L")]
    pub f_l: f64,
    /// Active reaction area, m^2.
    pub a_r: f64,
    /// Electrolyte volume per cell, L.
    #[serde(rename = "v")]
    pub volume: f64,
    #[serde(default)]
    pub current_convention: CurrentConvention,
    /// Power of the S4 mass in the low-plateau Nernst quotient.
    #[serde(default = "default_s4_order")]
    pub low_plateau_s4_order: f64,
}

impl Params {
    /// The shipped reference parameter set.
    pub fn reference() -> Self {
        Self::from_toml_str(REFERENCE_PARAMS_TOML).expect("shipped reference parameters are valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let params: Params = toml::from_str(text).map_err(|e| Error::Parse {
            path: "<string>".into(),
            message: e.to_string(),
        })?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read(path)?;
        let params: Params = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        params.validate()?;
        Ok(params)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("params serialize")
    }

    /// Checks every invariant and returns informational notes about fields
    /// that are accepted but not used.
    pub fn validate(&self) -> Result<Vec<String>> {
        let positive = [
            ("M_S8", self.m_s8),
            ("n_S8", self.n_s8),
            ("n_S4", self.n_s4),
            ("n_S2", self.n_s2),
            ("n_S", self.n_s),
            ("n_e", self.n_e),
            ("F", self.faraday),
            ("R_gas", self.r_gas),
            ("T", self.temperature),
            ("rho_S", self.rho_s),
            ("k_s", self.k_s),
            ("k_p", self.k_p),
            ("S_star", self.s_star),
            ("i_H0", self.i_h0),
            ("i_L0", self.i_l0),
            ("f_H", self.f_h),
            ("f_L", self.f_l),
            ("a_r", self.a_r),
            ("v", self.volume),
            ("low_plateau_s4_order", self.low_plateau_s4_order),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::validation(
                    name,
                    format!("must be finite and > 0, got {value}"),
                ));
            }
        }
        for (name, value) in [("E_H0", self.e_h0), ("E_L0", self.e_l0)] {
            if !value.is_finite() {
                return Err(Error::validation(name, "must be finite"));
            }
        }
        if self.e_h0 <= self.e_l0 {
            return Err(Error::validation("E_H0", "E_H0 > E_L0 violated"));
        }
        Ok(vec![
            "n_S2 is stored but unused by the four-state model".to_string()
        ])
    }
}

/// Piecewise-constant applied current: `(t_start [s], amps)` pairs with
/// strictly increasing start times, the first at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CurrentProfile(pub Vec<(f64, f64)>);

impl CurrentProfile {
    pub fn constant(amps: f64) -> Self {
        CurrentProfile(vec![(0.0, amps)])
    }

    pub fn validate(&self) -> Result<()> {
        let segments = &self.0;
        match segments.first() {
            None => return Err(Error::validation("I_applied", "needs at least one segment")),
            Some(&(t0, _)) if t0 != 0.0 => {
                return Err(Error::validation(
                    "I_applied",
                    "first segment must start at t = 0",
                ))
            }
            _ => {}
        }
        for w in segments.windows(2) {
            if w[1].0.partial_cmp(&w[0].0) != Some(std::cmp::Ordering::Greater) {
                return Err(Error::validation(
                    "I_applied",
                    "start times must strictly increase",
                ));
            }
        }
        if segments
            .iter()
            .any(|&(t, a)| !t.is_finite() || !a.is_finite())
        {
            return Err(Error::validation("I_applied", "entries must be finite"));
        }
        Ok(())
    }

    /// Current applied at time `t`. Breakpoints are matched with a relative
    /// slack of 1e-9.
    pub fn at(&self, t: f64) -> f64 {
        let slack = 1e-9 * t.abs().max(1.0);
        self.0
            .iter()
            .rev()
            .find(|&&(start, _)| start <= t + slack)
            .map_or(self.0[0].1, |&(_, amps)| amps)
    }
}

/// Estimator options that can be selected from a scenario file.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSettings {
    #[serde(default)]
    pub jacobian_mode: JacobianMode,
    #[serde(default)]
    pub output_jacobian: OutputJacobian,
}

/// A complete simulation/estimation experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(rename = "I_applied")]
    pub current: CurrentProfile,
    pub t_end: f64,
    /// Sampling step, s. Also the estimator step.
    pub dt: f64,
    /// Variance of the additive voltage measurement noise, V^2.
    pub noise_variance: f64,
    pub rng_seed: u64,
    /// Per-state variance of additive plant process noise per sample, g^2.
    #[serde(default)]
    pub process_noise: [f64; 4],
    pub x0_plant: DifferentialState,
    pub z0_plant: AlgebraicState,
    pub x0_estimator: DifferentialState,
    pub z0_estimator: AlgebraicState,
    #[serde(rename = "P0")]
    pub p0: [f64; 4],
    #[serde(rename = "Q")]
    pub q: [f64; 4],
    #[serde(rename = "R")]
    pub r: [f64; 2],
    #[serde(default)]
    pub sim: SimOptions,
    #[serde(default)]
    pub estimator: EstimatorSettings,
}

impl ScenarioConfig {
    /// The shipped 1.7 A discharge scenario.
    pub fn discharge() -> Self {
        Self::from_toml_str(DISCHARGE_SCENARIO_TOML).expect("shipped scenario is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let sc: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: "<string>".into(),
            message: e.to_string(),
        })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read(path)?;
        let sc: ScenarioConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Number of samples `ceil(t_end / dt) + 1`.
    pub fn sample_count(&self) -> usize {
        // Guard against t_end/dt landing a hair above an integer.
        let ratio = self.t_end / self.dt;
        let steps = if (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0) {
            ratio.round()
        } else {
            ratio.ceil()
        };
        steps as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::validation(
                "dt",
                format!("must be > 0, got {}", self.dt),
            ));
        }
        if !(self.t_end.is_finite() && self.t_end >= self.dt) {
            return Err(Error::validation("t_end", "must satisfy t_end >= dt"));
        }
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            return Err(Error::validation("noise_variance", "must be >= 0"));
        }
        self.current.validate()?;
        let diagonals = [
            ("P0", &self.p0[..]),
            ("Q", &self.q[..]),
            ("R", &self.r[..]),
            ("process_noise", &self.process_noise[..]),
        ];
        for (name, diag) in diagonals {
            if diag.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::validation(
                    name,
                    "diagonal entries must be finite and >= 0",
                ));
            }
        }
        for (name, x) in [
            ("x0_plant", &self.x0_plant),
            ("x0_estimator", &self.x0_estimator),
        ] {
            x.check()
                .map_err(|e| Error::validation(name, e.to_string()))?;
        }
        for (name, z) in [
            ("z0_plant", &self.z0_plant),
            ("z0_estimator", &self.z0_estimator),
        ] {
            if !(z.i_h.is_finite() && z.i_l.is_finite()) {
                return Err(Error::validation(name, "currents must be finite"));
            }
        }
        self.sim.validate()
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

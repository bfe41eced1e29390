//! Extended Kalman filter for the semi-explicit DAE.
//!
//! Only the differential states carry a covariance. After every correction
//! the algebraic estimate is recomputed from `g(x_hat, z_hat, I) = 0`, so the
//! pair handed to the next step is always constraint-consistent.
//!
//! One step, starting from a consistent `(x_k, z_k)` and measurement `y_k`:
//!
//! ```text
//!   K_k     = F_k P_k H_k^T (H_k P_k H_k^T + R)^-1
//!   x_k+1   = Phi_dt(x_k, z_k) + K_k (y_k - h(x_k, z_k))
//!   P_k+1   = F_k P_k F_k^T + Q - K_k (H_k P_k H_k^T + R) K_k^T
//!   z_k+1   : g(x_k+1, z_k+1, I_k+1) = 0
//! ```
//!
//! `Phi_dt` is the forward-Euler propagation of [`crate::sim::advance`],
//! which is the single step `x + dt f(x, z)` whenever the interval is not
//! stiff. The measurement vector duplicates the terminal voltage in both
//! output channels.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AlgebraicState, DifferentialState, Model};
use crate::params::ScenarioConfig;
use crate::sim::{advance, solve_algebraic, SimOptions};

/// Which state-transition Jacobian enters the covariance recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JacobianMode {
    /// `F_k = I + dt df/dx`, the Jacobian of the Euler map.
    #[default]
    Discrete,
    /// `F_k = df/dx`, the continuous-time Jacobian used as is.
    Continuous,
}

/// Which output Jacobian is used as `H_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputJacobian {
    /// Explicit partial `dh/dx` at fixed `z`.
    #[default]
    Explicit,
    /// Adds the implicit dependence of `z` on `x` through the constraint:
    /// `dh/dx - dh/dz (dg/dz)^-1 dg/dx`.
    Total,
}

/// Whether the gain is applied. `Suppressed` turns the filter into an
/// open-loop simulation of the estimate and exists for testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GainMode {
    #[default]
    Kalman,
    Suppressed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub p0: Matrix4<f64>,
    pub q: Matrix4<f64>,
    pub r: Matrix2<f64>,
    pub dt: f64,
    pub jacobian_mode: JacobianMode,
    pub output_jacobian: OutputJacobian,
    pub gain: GainMode,
    /// Algebraic solver and substep controls.
    pub sim: SimOptions,
}

impl EstimatorConfig {
    pub fn from_scenario(sc: &ScenarioConfig) -> Self {
        Self {
            p0: Matrix4::from_diagonal(&sc.p0.into()),
            q: Matrix4::from_diagonal(&sc.q.into()),
            r: Matrix2::from_diagonal(&sc.r.into()),
            dt: sc.dt,
            jacobian_mode: sc.estimator.jacobian_mode,
            output_jacobian: sc.estimator.output_jacobian,
            gain: GainMode::Kalman,
            sim: sc.sim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::validation("dt", "must be > 0"));
        }
        let diag_ok = |d: &[f64]| d.iter().all(|v| v.is_finite() && *v >= 0.0);
        if !diag_ok(self.p0.diagonal().as_slice())
            || !diag_ok(self.q.diagonal().as_slice())
            || !diag_ok(self.r.diagonal().as_slice())
        {
            return Err(Error::validation(
                "P0/Q/R",
                "diagonal entries must be finite and >= 0",
            ));
        }
        self.sim.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorState {
    pub x_hat: DifferentialState,
    pub z_hat: AlgebraicState,
    pub p: Matrix4<f64>,
    /// Gain used in the step that produced this state.
    pub k: Matrix4x2<f64>,
    /// Innovation injected in the step that produced this state, V.
    pub innovation: Vector2<f64>,
    /// Current the algebraic estimate is consistent with.
    pub current: f64,
    pub g_residual_norm: f64,
}

/// A voltage/current sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub t: f64,
    pub voltage: f64,
    pub current: f64,
}

/// Estimate at one sample time together with the innovation of that sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateRecord {
    pub t: f64,
    pub state: EstimatorState,
    /// `h1(x_hat, z_hat)`.
    pub v_pred: f64,
    /// `(y - h1, y - h2)` at this sample.
    pub innovation: Vector2<f64>,
}

pub struct Estimator<'a> {
    model: &'a Model,
    cfg: EstimatorConfig,
}

impl<'a> Estimator<'a> {
    pub fn new(model: &'a Model, cfg: EstimatorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { model, cfg })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }

    /// Consistent initialization: solves the constraint at `x0_hat` starting
    /// from `z_guess` and sets `P = P0`.
    pub fn init(
        &self,
        x0_hat: DifferentialState,
        z_guess: &AlgebraicState,
        current: f64,
    ) -> Result<EstimatorState> {
        x0_hat.check()?;
        let sol = solve_algebraic(self.model, &x0_hat, current, z_guess, &self.cfg.sim)?;
        Ok(EstimatorState {
            x_hat: x0_hat,
            z_hat: sol.z,
            p: self.cfg.p0,
            k: Matrix4x2::zeros(),
            innovation: Vector2::zeros(),
            current,
            g_residual_norm: sol.residual,
        })
    }

    fn transition_jacobian(&self, est: &EstimatorState) -> Result<Matrix4<f64>> {
        let fx = self.model.jac_f(&est.x_hat, &est.z_hat)?.dx;
        Ok(match self.cfg.jacobian_mode {
            JacobianMode::Discrete => Matrix4::identity() + fx * self.cfg.dt,
            JacobianMode::Continuous => fx,
        })
    }

    fn output_jacobian(&self, est: &EstimatorState) -> Result<Matrix2x4<f64>> {
        let jh = self.model.jac_h(&est.x_hat, &est.z_hat)?;
        Ok(match self.cfg.output_jacobian {
            OutputJacobian::Explicit => jh.dx,
            OutputJacobian::Total => {
                let jg = self.model.jac_g(&est.x_hat, &est.z_hat)?;
                let gz_inv = jg.dz.try_inverse().ok_or(Error::Singular("dg/dz"))?;
                jh.dx - jh.dz * gz_inv * jg.dx
            }
        })
    }

    /// Innovation `(y, y) - h(x_hat, z_hat)`.
    pub fn innovation(&self, est: &EstimatorState, y_meas: f64) -> Result<Vector2<f64>> {
        let y_hat = self.model.output(&est.x_hat, &est.z_hat)?;
        Ok(Vector2::new(y_meas, y_meas) - y_hat)
    }

    /// Processes the measurement taken at the time of `est` and returns the
    /// estimate one step later, consistent with `current_next`.
    pub fn step(
        &self,
        est: &EstimatorState,
        y_meas: f64,
        current_next: f64,
    ) -> Result<EstimatorState> {
        if !y_meas.is_finite() {
            return Err(Error::Domain {
                what: "measurement must be finite",
                value: y_meas,
            });
        }
        let cfg = &self.cfg;
        let f_k = self.transition_jacobian(est)?;
        let h_k = self.output_jacobian(est)?;
        let innovation = self.innovation(est, y_meas)?;

        let pred = advance(
            self.model,
            &est.x_hat,
            &est.z_hat,
            est.current,
            est.current,
            cfg.dt,
            &cfg.sim,
        )?;
        let (k, p) = match cfg.gain {
            GainMode::Kalman => {
                let s = h_k * est.p * h_k.transpose() + cfg.r;
                let s_inv = s
                    .try_inverse()
                    .ok_or(Error::Singular("innovation covariance"))?;
                if !s_inv.iter().all(|v| v.is_finite()) {
                    return Err(Error::Singular("innovation covariance"));
                }
                let k = f_k * est.p * h_k.transpose() * s_inv;
                (
                    k,
                    f_k * est.p * f_k.transpose() + cfg.q - k * s * k.transpose(),
                )
            }
            GainMode::Suppressed => (Matrix4x2::zeros(), f_k * est.p * f_k.transpose() + cfg.q),
        };
        let corrected = pred.x.to_vector() + k * innovation;
        let x_hat = DifferentialState::from_vector(&corrected).floored(cfg.sim.eps_mass);

        let p = (p + p.transpose()) * 0.5;

        let sol = solve_algebraic(self.model, &x_hat, current_next, &pred.z, &cfg.sim)?;
        Ok(EstimatorState {
            x_hat,
            z_hat: sol.z,
            p,
            k,
            innovation,
            current: current_next,
            g_residual_norm: sol.residual,
        })
    }

    /// Runs the filter over a measurement sequence spaced by `dt`. The first
    /// estimate is initialized from the scenario's estimator initial state.
    pub fn run(
        &self,
        sc: &ScenarioConfig,
        measurements: &[Measurement],
    ) -> Result<Vec<EstimateRecord>> {
        check_alignment(measurements, self.cfg.dt)?;
        let Some(first) = measurements.first() else {
            return Ok(Vec::new());
        };
        let mut est = self.init(sc.x0_estimator, &sc.z0_estimator, first.current)?;
        let mut out = Vec::with_capacity(measurements.len());
        for (k, m) in measurements.iter().enumerate() {
            let innovation = self.innovation(&est, m.voltage)?;
            let v_pred = m.voltage - innovation[0];
            out.push(EstimateRecord {
                t: m.t,
                state: est,
                v_pred,
                innovation,
            });
            if let Some(next) = measurements.get(k + 1) {
                est = self.step(&est, m.voltage, next.current)?;
            }
        }
        Ok(out)
    }
}

/// Checks that consecutive sample times differ by `dt` (relative slack 1e-9).
pub fn check_alignment(measurements: &[Measurement], dt: f64) -> Result<()> {
    for (k, w) in measurements.windows(2).enumerate() {
        let gap = w[1].t - w[0].t;
        if (gap - dt).abs() > 1e-9 * dt.max(w[1].t.abs() * 1e-3) {
            return Err(Error::Alignment(format!(
                "samples {k} and {} are {gap} s apart, expected dt = {dt} s",
                k + 1
            )));
        }
    }
    Ok(())
}

/// Smallest eigenvalue of a symmetric 4x4 matrix.
pub fn min_eigenvalue(p: &Matrix4<f64>) -> f64 {
    SymmetricEigen::new(*p).eigenvalues.min()
}

//! Plant simulation: consistent initialization, damped Newton on the
//! algebraic subsystem and forward-Euler propagation of the species masses.
//!
//! A sample interval `dt` is covered by forward-Euler substeps whose length
//! is capped at `stability_factor / rho`, where `rho` is the spectral radius of the reduced
//! Jacobian at the start of the substep. When `rho * dt <= stability_factor`
//! the interval is a single Euler step `x + dt f(x, z)`.

use nalgebra::Vector4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AlgebraicState, DifferentialState, Model};
use crate::params::ScenarioConfig;

/// Numerical tolerances of the simulator. Every field can be overridden from
/// the `[sim]` table of a scenario file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    /// Infinity-norm tolerance on `g` (A and V per component).
    pub newton_tol: f64,
    pub max_iters: usize,
    pub max_halvings: usize,
    /// Floor applied to every species mass before an algebraic solve, g.
    pub eps_mass: f64,
    /// Upper bound on `h * rho` for each Euler substep.
    pub stability_factor: f64,
    /// Substep budget per sample interval.
    pub max_substeps: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            max_iters: 50,
            max_halvings: 30,
            eps_mass: 1e-12,
            stability_factor: 1.0,
            max_substeps: 1_000_000,
        }
    }
}

impl SimOptions {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (
                "sim.newton_tol",
                self.newton_tol > 0.0 && self.newton_tol.is_finite(),
            ),
            ("sim.max_iters", self.max_iters > 0),
            (
                "sim.eps_mass",
                self.eps_mass > 0.0 && self.eps_mass.is_finite(),
            ),
            (
                "sim.stability_factor",
                self.stability_factor > 0.0 && self.stability_factor.is_finite(),
            ),
            ("sim.max_substeps", self.max_substeps > 0),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((name, _)) => Err(Error::validation(*name, "must be positive and finite")),
            None => Ok(()),
        }
    }
}

/// Result of an algebraic solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgebraicSolution {
    pub z: AlgebraicState,
    pub iterations: usize,
    /// `||g||_inf` at the returned point.
    pub residual: f64,
}

/// Solves `g(x, z, I) = 0` for `z` by Newton's method with the analytic
/// `dg/dz`, halving the step while the residual does not decrease.
pub fn solve_algebraic(
    model: &Model,
    x: &DifferentialState,
    current: f64,
    z_guess: &AlgebraicState,
    opts: &SimOptions,
) -> Result<AlgebraicSolution> {
    let mut z = *z_guess;
    let mut r = model.constraint(x, &z, current)?;
    let mut norm = r.amax();
    for iterations in 0..=opts.max_iters {
        if norm <= opts.newton_tol {
            return Ok(AlgebraicSolution {
                z,
                iterations,
                residual: norm,
            });
        }
        if iterations == opts.max_iters {
            break;
        }
        let jz = model.jac_g(x, &z)?.dz;
        let step = jz
            .lu()
            .solve(&(-r))
            .ok_or(Error::Singular("dg/dz (index-1 assumption)"))?;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial = AlgebraicState::from_vector(&(z.to_vector() + step * scale));
            let tr = model.constraint(x, &trial, current)?;
            if tr.amax() < norm {
                accepted = Some((trial, tr));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((trial, tr)) => {
                z = trial;
                r = tr;
                norm = r.amax();
            }
            None => {
                return Err(Error::NonConvergence {
                    iterations: iterations + 1,
                    residual: norm,
                });
            }
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iters,
        residual: norm,
    })
}

/// Spectral radius of the reduced Jacobian, 1/s.
pub fn stiffness(model: &Model, x: &DifferentialState, z: &AlgebraicState) -> Result<f64> {
    let j = model.reduced_jacobian(x, z)?;
    Ok(j.complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max))
}

/// Outcome of integrating over one sample interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Advance {
    pub x: DifferentialState,
    pub z: AlgebraicState,
    pub substeps: usize,
    /// Largest Newton iteration count among the solves of the interval.
    pub newton_iters: usize,
    pub residual: f64,
}

/// Integrates from a consistent `(x, z)` over `dt`. The current `hold` is
/// applied over the interval; the final algebraic solve uses `current_end`.
pub fn advance(
    model: &Model,
    x: &DifferentialState,
    z: &AlgebraicState,
    hold: f64,
    current_end: f64,
    dt: f64,
    opts: &SimOptions,
) -> Result<Advance> {
    let mut x = *x;
    let mut z = *z;
    let mut elapsed = 0.0;
    let mut substeps = 0;
    let mut newton_iters = 0;
    while dt - elapsed > 1e-12 * dt {
        if substeps == opts.max_substeps {
            return Err(Error::SubstepLimit {
                limit: opts.max_substeps,
                dt,
            });
        }
        let rho = stiffness(model, &x, &z)?;
        let remaining = dt - elapsed;
        let h = if rho * remaining <= opts.stability_factor {
            remaining
        } else {
            opts.stability_factor / rho
        };
        let f = model.rates(&x, &z)?;
        x = DifferentialState::from_vector(&(x.to_vector() + f * h)).floored(opts.eps_mass);
        elapsed += h;
        substeps += 1;
        let last = dt - elapsed <= 1e-12 * dt;
        let current = if last { current_end } else { hold };
        let sol = solve_algebraic(model, &x, current, &z, opts)?;
        z = sol.z;
        newton_iters = newton_iters.max(sol.iterations);
    }
    // dt == 0 still re-solves the constraint.
    let sol = solve_algebraic(model, &x, current_end, &z, opts)?;
    Ok(Advance {
        x,
        z: sol.z,
        substeps,
        newton_iters: newton_iters.max(sol.iterations),
        residual: sol.residual,
    })
}

/// One plant sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimRecord {
    pub t: f64,
    pub x: DifferentialState,
    pub z: AlgebraicState,
    pub v_true: f64,
    pub v_measured: f64,
    pub current: f64,
    pub newton_iters: usize,
    pub substeps: usize,
    pub g_residual_norm: f64,
}

impl SimRecord {
    /// Builds the first record by solving the constraint from `z_guess`.
    pub fn initial(
        model: &Model,
        t: f64,
        x: DifferentialState,
        z_guess: &AlgebraicState,
        current: f64,
        opts: &SimOptions,
    ) -> Result<Self> {
        let sol = solve_algebraic(model, &x, current, z_guess, opts)?;
        let v = model.output(&x, &sol.z)?[0];
        Ok(Self {
            t,
            x,
            z: sol.z,
            v_true: v,
            v_measured: v,
            current,
            newton_iters: sol.iterations,
            substeps: 0,
            g_residual_norm: sol.residual,
        })
    }
}

/// Advances a consistent record by `dt`; `v_measured` is set to `v_true`.
pub fn step(
    model: &Model,
    rec: &SimRecord,
    current_next: f64,
    dt: f64,
    opts: &SimOptions,
) -> Result<SimRecord> {
    let adv = advance(model, &rec.x, &rec.z, rec.current, current_next, dt, opts)?;
    let v = model.output(&adv.x, &adv.z)?[0];
    Ok(SimRecord {
        t: rec.t + dt,
        x: adv.x,
        z: adv.z,
        v_true: v,
        v_measured: v,
        current: current_next,
        newton_iters: adv.newton_iters,
        substeps: adv.substeps,
        g_residual_norm: adv.residual,
    })
}

/// Why a run stopped before `t_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct Truncation {
    pub t: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub records: Vec<SimRecord>,
    pub truncated: Option<Truncation>,
}

/// Runs the plant over the scenario horizon and synthesizes noisy voltage
/// measurements. A failure after the first sample ends the run early and is
/// reported through [`SimRun::truncated`].
pub fn simulate(model: &Model, sc: &ScenarioConfig) -> Result<SimRun> {
    let opts = &sc.sim;
    let n = sc.sample_count();
    let mut rng = ChaCha8Rng::seed_from_u64(sc.rng_seed);
    let noise = Normal::new(0.0, sc.noise_variance.sqrt())
        .map_err(|e| Error::validation("noise_variance", e.to_string()))?;
    let process: Vec<Normal<f64>> = sc
        .process_noise
        .iter()
        .map(|v| Normal::new(0.0, v.sqrt()).expect("validated variance"))
        .collect();
    let process_active = sc.process_noise.iter().any(|&v| v > 0.0);

    let mut records = Vec::with_capacity(n);
    let mut rec = SimRecord::initial(
        model,
        0.0,
        sc.x0_plant,
        &sc.z0_plant,
        sc.current.at(0.0),
        opts,
    )?;
    let measure = |rec: &mut SimRecord, rng: &mut ChaCha8Rng| {
        if sc.noise_variance > 0.0 {
            rec.v_measured = rec.v_true + noise.sample(rng);
        }
    };
    measure(&mut rec, &mut rng);
    records.push(rec);

    let mut truncated = None;
    for k in 1..n {
        let t = k as f64 * sc.dt;
        let prev = records[k - 1];
        let result = if process_active {
            let mut jittered = prev;
            let w = Vector4::from_iterator(process.iter().map(|d| d.sample(&mut rng)));
            jittered.x =
                DifferentialState::from_vector(&(prev.x.to_vector() + w)).floored(opts.eps_mass);
            solve_algebraic(model, &jittered.x, prev.current, &prev.z, opts).and_then(|sol| {
                jittered.z = sol.z;
                step(model, &jittered, sc.current.at(t), sc.dt, opts)
            })
        } else {
            step(model, &prev, sc.current.at(t), sc.dt, opts)
        };
        match result {
            Ok(mut next) => {
                next.t = t;
                debug_assert!(next.g_residual_norm <= opts.newton_tol);
                measure(&mut next, &mut rng);
                records.push(next);
            }
            Err(e) => {
                truncated = Some(Truncation {
                    t: prev.t,
                    reason: e.to_string(),
                });
                break;
            }
        }
    }
    Ok(SimRun { records, truncated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Params;

    fn model() -> Model {
        Model::new(Params::reference())
    }

    fn x0() -> DifferentialState {
        DifferentialState::new(2.6730, 0.0128, 8.9339e-7, 2.7e-6)
    }

    #[test]
    fn initial_state_is_high_plateau_dominated() {
        let sol = solve_algebraic(
            &model(),
            &x0(),
            1.7,
            &AlgebraicState::new(1.7, 0.0),
            &SimOptions::default(),
        )
        .unwrap();
        assert!(sol.residual <= 1e-10);
        // Within 0.1 A of the listed (1.7, 0).
        assert!((sol.z.i_h - 1.7).abs() < 0.1, "{:?}", sol.z);
        assert!(sol.z.i_l.abs() < 0.1, "{:?}", sol.z);
    }

    #[test]
    fn zero_net_current_balances() {
        let x = DifferentialState::new(1.0, 1.2, 2e-4, 0.05);
        let sol = solve_algebraic(
            &model(),
            &x,
            0.0,
            &AlgebraicState::new(0.0, 0.0),
            &SimOptions::default(),
        )
        .unwrap();
        assert!((sol.z.i_h + sol.z.i_l).abs() <= 1e-10);
    }

    #[test]
    fn non_convergence_is_reported() {
        let opts = SimOptions {
            max_iters: 1,
            ..SimOptions::default()
        };
        let err = solve_algebraic(
            &model(),
            &x0(),
            1.7,
            &AlgebraicState::new(-50.0, 80.0),
            &opts,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }), "{err}");
    }

    #[test]
    fn zero_step_keeps_state() {
        let m = model();
        let opts = SimOptions::default();
        let rec =
            SimRecord::initial(&m, 0.0, x0(), &AlgebraicState::new(1.7, 0.0), 1.7, &opts).unwrap();
        let next = step(&m, &rec, 1.7, 0.0, &opts).unwrap();
        assert_eq!(next.x, rec.x);
        assert_eq!(next.z, rec.z);
        assert_eq!(next.substeps, 0);
    }

    #[test]
    fn one_second_consumes_s8() {
        let m = model();
        let opts = SimOptions::default();
        let rec =
            SimRecord::initial(&m, 0.0, x0(), &AlgebraicState::new(1.7, 0.0), 1.7, &opts).unwrap();
        let next = step(&m, &rec, 1.7, 1.0, &opts).unwrap();
        assert!(next.x.s8 < rec.x.s8);
        assert!(next.x.s4 > rec.x.s4);
        assert!(next.g_residual_norm <= opts.newton_tol);
        // The stiff start needs several substeps.
        assert!(next.substeps > 1);
    }

    #[test]
    fn noise_free_measurement_equals_truth() {
        let mut sc = ScenarioConfig::discharge();
        sc.t_end = 20.0;
        sc.noise_variance = 0.0;
        let run = simulate(&model(), &sc).unwrap();
        assert_eq!(run.records.len(), 21);
        assert!(run.records.iter().all(|r| r.v_measured == r.v_true));
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let mut sc = ScenarioConfig::discharge();
        sc.t_end = 10.0;
        sc.noise_variance = 1e-6;
        let a = simulate(&model(), &sc).unwrap();
        let b = simulate(&model(), &sc).unwrap();
        assert_eq!(a, b);
        assert!(a.records.iter().any(|r| r.v_measured != r.v_true));
        sc.rng_seed += 1;
        let c = simulate(&model(), &sc).unwrap();
        assert_ne!(a.records[3].v_measured, c.records[3].v_measured);
    }

    #[test]
    fn substep_budget_is_enforced() {
        let mut sc = ScenarioConfig::discharge();
        sc.t_end = 2.0;
        sc.sim.max_substeps = 2;
        let run = simulate(&model(), &sc).unwrap();
        let trunc = run.truncated.expect("truncated");
        assert!(trunc.reason.contains("substep limit"), "{}", trunc.reason);
        assert_eq!(run.records.len(), 1);
    }
}

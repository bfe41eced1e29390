//! Error and discharge metrics over plant and estimator runs.

use serde::Serialize;

use crate::ekf::EstimateRecord;
use crate::error::{Error, Result};
use crate::io::num;
use crate::sim::SimRecord;

/// Default relative error threshold for convergence, as a fraction.
pub const DEFAULT_CONVERGENCE_THRESHOLD: f64 = 0.05;

/// Seconds per hour, for A·s to A·h conversion.
const SECONDS_PER_HOUR: f64 = 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transition {
    pub t: f64,
    /// Charge delivered from `t = 0` up to `t`, A·h.
    pub charge_ah: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    /// Per-state RMSE of `x_hat`, g.
    pub rmse_x: Option<[f64; 4]>,
    /// RMSE of `(i_H, i_L)` estimates, A.
    pub rmse_z: Option<[f64; 2]>,
    pub convergence_threshold: f64,
    /// Per-state convergence time, `None` when not converged by the end.
    pub convergence_per_state: Option<[Option<f64>; 4]>,
    /// Latest of the per-state times; `None` unless every state converged.
    pub convergence_time: Option<f64>,
    pub max_plant_residual: f64,
    pub max_estimator_residual: Option<f64>,
    /// First sample at which `S8` sits at the mass floor.
    pub depletion: Option<Transition>,
    /// First sample at which the low-plateau reaction carries at least as
    /// much current as the high-plateau one.
    pub dominance: Option<Transition>,
    pub t_end: f64,
}

/// Cumulative charge by trapezoidal integration of the applied current.
pub fn cumulative_charge_ah(records: &[SimRecord]) -> Vec<f64> {
    let mut q = Vec::with_capacity(records.len());
    let mut acc = 0.0;
    for (k, r) in records.iter().enumerate() {
        if k > 0 {
            let p = &records[k - 1];
            acc += 0.5 * (p.current + r.current) * (r.t - p.t);
        }
        q.push(acc / SECONDS_PER_HOUR);
    }
    q
}

fn first_transition(
    records: &[SimRecord],
    pred: impl Fn(&SimRecord) -> bool,
) -> Option<Transition> {
    let q = cumulative_charge_ah(records);
    records
        .iter()
        .zip(q)
        .find(|(r, _)| pred(r))
        .map(|(r, charge_ah)| Transition { t: r.t, charge_ah })
}

/// Depletion transition: first record with `S8 <= floor`.
pub fn depletion_transition(records: &[SimRecord], floor: f64) -> Option<Transition> {
    first_transition(records, |r| r.x.s8 <= floor)
}

pub fn dominance_transition(records: &[SimRecord]) -> Option<Transition> {
    first_transition(records, |r| r.z.i_l >= r.z.i_h)
}

/// Per-state relative errors `|x_hat - x| / |x|` at each aligned sample.
pub fn relative_errors(truth: &[SimRecord], est: &[EstimateRecord]) -> Result<Vec<[f64; 4]>> {
    check_pairing(truth, est)?;
    Ok(truth
        .iter()
        .zip(est)
        .map(|(t, e)| {
            let x = t.x.to_array();
            let xh = e.state.x_hat.to_array();
            std::array::from_fn(|i| (xh[i] - x[i]).abs() / x[i].abs())
        })
        .collect())
}

fn check_pairing(truth: &[SimRecord], est: &[EstimateRecord]) -> Result<()> {
    if truth.len() != est.len() {
        return Err(Error::Alignment(format!(
            "{} truth records vs {} estimates",
            truth.len(),
            est.len()
        )));
    }
    for (t, e) in truth.iter().zip(est) {
        if (t.t - e.t).abs() > 1e-9 * t.t.abs().max(1.0) {
            return Err(Error::Alignment(format!(
                "truth at t = {} paired with estimate at t = {}",
                t.t, e.t
            )));
        }
    }
    Ok(())
}

/// First time from which every later error is below `threshold`.
pub fn convergence_time(times: &[f64], errors: &[f64], threshold: f64) -> Option<f64> {
    let mut since = None;
    for (&t, &e) in times.iter().zip(errors) {
        if e < threshold {
            since.get_or_insert(t);
        } else {
            since = None;
        }
    }
    since
}

impl RunMetrics {
    pub fn plant(records: &[SimRecord], floor: f64) -> Self {
        Self {
            rmse_x: None,
            rmse_z: None,
            convergence_threshold: DEFAULT_CONVERGENCE_THRESHOLD,
            convergence_per_state: None,
            convergence_time: None,
            max_plant_residual: records
                .iter()
                .map(|r| r.g_residual_norm)
                .fold(0.0, f64::max),
            max_estimator_residual: None,
            depletion: depletion_transition(records, floor),
            dominance: dominance_transition(records),
            t_end: records.last().map_or(0.0, |r| r.t),
        }
    }

    pub fn estimation(
        truth: &[SimRecord],
        est: &[EstimateRecord],
        floor: f64,
        threshold: f64,
    ) -> Result<Self> {
        let rel = relative_errors(truth, est)?;
        let n = truth.len().max(1) as f64;
        let mut sx = [0.0; 4];
        let mut sz = [0.0; 2];
        for (t, e) in truth.iter().zip(est) {
            let x = t.x.to_array();
            let xh = e.state.x_hat.to_array();
            for i in 0..4 {
                sx[i] += (xh[i] - x[i]).powi(2);
            }
            sz[0] += (e.state.z_hat.i_h - t.z.i_h).powi(2);
            sz[1] += (e.state.z_hat.i_l - t.z.i_l).powi(2);
        }
        let times: Vec<f64> = est.iter().map(|e| e.t).collect();
        let per_state: [Option<f64>; 4] = std::array::from_fn(|i| {
            let col: Vec<f64> = rel.iter().map(|r| r[i]).collect();
            convergence_time(&times, &col, threshold)
        });
        let overall = per_state
            .iter()
            .try_fold(0.0_f64, |acc, t| t.map(|t| acc.max(t)));
        let mut m = Self::plant(truth, floor);
        m.rmse_x = Some(sx.map(|s| (s / n).sqrt()));
        m.rmse_z = Some(sz.map(|s| (s / n).sqrt()));
        m.convergence_threshold = threshold;
        m.convergence_per_state = Some(per_state);
        m.convergence_time = overall;
        m.max_estimator_residual = Some(
            est.iter()
                .map(|e| e.state.g_residual_norm)
                .fold(0.0, f64::max),
        );
        Ok(m)
    }

    /// `key = value` summary, one metric per line.
    pub fn summary(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map_or_else(|| "not converged".to_string(), num)
        }
        fn trans(v: Option<Transition>) -> (String, String) {
            v.map_or_else(
                || ("none".into(), "none".into()),
                |t| (num(t.t), num(t.charge_ah)),
            )
        }
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("t_end", num(self.t_end));
        line("max_plant_residual", num(self.max_plant_residual));
        let (dt, dq) = trans(self.depletion);
        line("depletion_time", dt);
        line("depletion_charge_ah", dq);
        let (dt, dq) = trans(self.dominance);
        line("dominance_time", dt);
        line("dominance_charge_ah", dq);
        if let Some(r) = self.max_estimator_residual {
            line("max_estimator_residual", num(r));
        }
        if let Some(r) = self.rmse_x {
            for (i, v) in r.iter().enumerate() {
                line(&format!("rmse_x{}", i + 1), num(*v));
            }
        }
        if let Some(r) = self.rmse_z {
            line("rmse_iH", num(r[0]));
            line("rmse_iL", num(r[1]));
        }
        if let Some(per) = self.convergence_per_state {
            line("convergence_threshold", num(self.convergence_threshold));
            for (i, v) in per.iter().enumerate() {
                line(&format!("convergence_time_x{}", i + 1), opt(*v));
            }
            line("convergence_time", opt(self.convergence_time));
        }
        out
    }
}

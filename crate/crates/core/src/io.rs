//! CSV emitters and the measurement reader.
//!
//! Floats use the shortest decimal that parses back to the same `f64`.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::ekf::{EstimateRecord, Measurement};
use crate::error::{Error, Result};
use crate::observability::{ObservabilityReport, SensitivityRow};
use crate::sim::SimRecord;

pub const SIM_HEADER: [&str; 12] = [
    "t",
    "x1",
    "x2",
    "x3",
    "x4",
    "iH",
    "iL",
    "V_true",
    "V_meas",
    "I",
    "newton_iters",
    "g_res",
];

pub const ESTIMATE_HEADER: [&str; 15] = [
    "t", "x1_hat", "x2_hat", "x3_hat", "x4_hat", "iH_hat", "iL_hat", "V_pred", "innov1", "innov2",
    "P11", "P22", "P33", "P44", "g_res",
];

/// Extra columns when the plant truth is known.
pub const ERROR_HEADER: [&str; 6] = ["x1_err", "x2_err", "x3_err", "x4_err", "iH_err", "iL_err"];

pub const SENSITIVITY_HEADER: [&str; 13] = [
    "t", "dEH_dx1", "dEH_dx2", "dEH_dx3", "dEH_dx4", "dEL_dx1", "dEL_dx2", "dEL_dx3", "dEL_dx4",
    "dV_dx1", "dV_dx2", "dV_dx3", "dV_dx4",
];

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

/// Shortest round-trip decimal, in exponent form outside `[1e-4, 1e15)`.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

pub fn write_sim<W: Write>(w: W, records: &[SimRecord]) -> Result<()> {
    let mut w = writer(w);
    w.write_record(SIM_HEADER)?;
    for r in records {
        let mut row: Vec<String> = vec![num(r.t)];
        row.extend(r.x.to_array().map(num));
        row.extend([r.z.i_h, r.z.i_l, r.v_true, r.v_measured, r.current].map(num));
        row.push(r.newton_iters.to_string());
        row.push(num(r.g_residual_norm));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_estimates<W: Write>(
    w: W,
    est: &[EstimateRecord],
    truth: Option<&[SimRecord]>,
) -> Result<()> {
    if let Some(t) = truth {
        if t.len() != est.len() {
            return Err(Error::Alignment(format!(
                "{} truth records vs {} estimates",
                t.len(),
                est.len()
            )));
        }
    }
    let mut w = writer(w);
    let mut header: Vec<&str> = ESTIMATE_HEADER.to_vec();
    if truth.is_some() {
        header.extend(ERROR_HEADER);
    }
    w.write_record(&header)?;
    for (k, e) in est.iter().enumerate() {
        let s = &e.state;
        let mut row: Vec<String> = vec![num(e.t)];
        row.extend(s.x_hat.to_array().map(num));
        row.extend(
            [
                s.z_hat.i_h,
                s.z_hat.i_l,
                e.v_pred,
                e.innovation[0],
                e.innovation[1],
            ]
            .map(num),
        );
        row.extend((0..4).map(|i| num(s.p[(i, i)])));
        row.push(num(s.g_residual_norm));
        if let Some(truth) = truth {
            let tr = &truth[k];
            let x = tr.x.to_array();
            let xh = s.x_hat.to_array();
            row.extend((0..4).map(|i| num(xh[i] - x[i])));
            row.push(num(s.z_hat.i_h - tr.z.i_h));
            row.push(num(s.z_hat.i_l - tr.z.i_l));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn observability_header(eigen_count: usize) -> Vec<String> {
    let mut h: Vec<String> = ["t", "c1_rank", "c1_margin", "c1_rel_margin", "c2_holds"]
        .map(String::from)
        .to_vec();
    for i in 1..=eigen_count {
        for c in [
            "lambda_re",
            "lambda_im",
            "c2_rank",
            "c2_margin",
            "c2_rel_margin",
        ] {
            h.push(format!("{c}{i}"));
        }
    }
    h
}

/// One row per sampled time. Every report must carry the same number of
/// finite eigenvalues.
pub fn write_observability<W: Write>(w: W, rows: &[(f64, ObservabilityReport)]) -> Result<()> {
    let count = rows.first().map_or(4, |(_, r)| r.c2.len());
    let mut w = writer(w);
    w.write_record(observability_header(count))?;
    for (t, rep) in rows {
        if rep.c2.len() != count {
            return Err(Error::Alignment(format!(
                "{} eigenvalues at t = {t}, expected {count}",
                rep.c2.len()
            )));
        }
        let mut row = vec![
            num(*t),
            rep.c1.rank.to_string(),
            num(rep.c1.margin),
            num(rep.c1.relative_margin),
            rep.c2_holds.to_string(),
        ];
        for e in &rep.c2 {
            row.push(num(e.eigenvalue.re));
            row.push(num(e.eigenvalue.im));
            row.push(e.test.rank.to_string());
            row.push(num(e.test.margin));
            row.push(num(e.test.relative_margin));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_sensitivities<W: Write>(w: W, rows: &[SensitivityRow]) -> Result<()> {
    let mut w = writer(w);
    w.write_record(SENSITIVITY_HEADER)?;
    for r in rows {
        let mut row = vec![num(r.t)];
        row.extend(r.d_eh.map(num));
        row.extend(r.d_el.map(num));
        row.extend(r.d_v.map(num));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn save_sim(path: &Path, records: &[SimRecord]) -> Result<()> {
    write_sim(create(path)?, records)
}

pub fn save_estimates(
    path: &Path,
    est: &[EstimateRecord],
    truth: Option<&[SimRecord]>,
) -> Result<()> {
    write_estimates(create(path)?, est, truth)
}

pub fn save_observability(path: &Path, rows: &[(f64, ObservabilityReport)]) -> Result<()> {
    write_observability(create(path)?, rows)
}

pub fn save_sensitivities(path: &Path, rows: &[SensitivityRow]) -> Result<()> {
    write_sensitivities(create(path)?, rows)
}

/// Measurements from the plant records (`V_meas` and `I`).
pub fn measurements_from_sim(records: &[SimRecord]) -> Vec<Measurement> {
    records
        .iter()
        .map(|r| Measurement {
            t: r.t,
            voltage: r.v_measured,
            current: r.current,
        })
        .collect()
}

/// Reads a measurement CSV with columns `t`, `V_meas` (or `V`) and `I`.
/// Simulator output is accepted as is.
pub fn read_measurements(path: &Path) -> Result<Vec<Measurement>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_measurements(file, path)
}

pub fn parse_measurements<R: std::io::Read>(r: R, path: &Path) -> Result<Vec<Measurement>> {
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |names: &[&str]| {
        names
            .iter()
            .find_map(|n| headers.iter().position(|h| h == *n))
            .ok_or_else(|| parse_err(format!("missing column {}", names.join(" or "))))
    };
    let (ct, cv, ci) = (col(&["t"])?, col(&["V_meas", "V"])?, col(&["I"])?);
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |c: usize| -> Result<f64> {
            let s = rec.get(c).unwrap_or("");
            s.parse::<f64>()
                .map_err(|e| parse_err(format!("row {}: {s:?}: {e}", line + 2)))
        };
        out.push(Measurement {
            t: field(ct)?,
            voltage: field(cv)?,
            current: field(ci)?,
        });
    }
    Ok(out)
}

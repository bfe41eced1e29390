//! Local observability of the DAE through its linearized descriptor form
//! `E dw/dt = A w + B u`, `y = C w` with `w = (x, z)`.
//!
//! The system is completely observable when `[E; C]` has full column rank (fast subsystem)
//! and `[sE - A; C]` has full column rank for every finite generalized
//! eigenvalue `s` of the pencil `(E, A)` (slow subsystem). For an index-1
//! system the finite spectrum is the spectrum of the Schur complement
//! `A11 - A12 A22^-1 A21`.

use nalgebra::{Complex, Matrix4, SMatrix, Vector6};

use crate::error::{Error, Result};
use crate::model::{AlgebraicState, DifferentialState, Model};
use crate::sim::SimRecord;

pub type Matrix6 = SMatrix<f64, 6, 6>;
pub type Matrix2x6 = SMatrix<f64, 2, 6>;

/// Default relative singular-value threshold for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Constraint residual required at a linearization point.
pub const FEASIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedSystem {
    pub e: Matrix6,
    pub a: Matrix6,
    pub b: Vector6<f64>,
    pub c: Matrix2x6,
    pub x: DifferentialState,
    pub z: AlgebraicState,
    pub current: f64,
}

/// Outcome of one numerical rank test on a stacked 8x6 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankTest {
    pub rank: usize,
    pub holds: bool,
    /// Smallest singular value above the threshold.
    pub margin: f64,
    /// `sigma_min / sigma_max` of the stacked matrix.
    pub relative_margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenRankTest {
    pub eigenvalue: Complex<f64>,
    pub test: RankTest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityReport {
    pub c1: RankTest,
    pub finite_eigenvalues: Vec<Complex<f64>>,
    pub c2: Vec<EigenRankTest>,
    pub c2_holds: bool,
}

impl ObservabilityReport {
    pub fn c1_holds(&self) -> bool {
        self.c1.holds
    }

    /// Smallest pencil-rank margin over all finite eigenvalues.
    pub fn c2_margin(&self) -> f64 {
        self.c2
            .iter()
            .map(|e| e.test.margin)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn c2_relative_margin(&self) -> f64 {
        self.c2
            .iter()
            .map(|e| e.test.relative_margin)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Assembles `(E, A, B, C)` at a constraint-consistent operating point.
pub fn linearize(
    model: &Model,
    x: &DifferentialState,
    z: &AlgebraicState,
    current: f64,
) -> Result<LinearizedSystem> {
    let residual = model.constraint(x, z, current)?.amax();
    if residual > FEASIBILITY_TOL {
        return Err(Error::Infeasible {
            residual,
            tolerance: FEASIBILITY_TOL,
        });
    }
    let jf = model.jac_f(x, z)?;
    let jg = model.jac_g(x, z)?;
    let jh = model.jac_h(x, z)?;

    let mut e = Matrix6::zeros();
    e.fixed_view_mut::<4, 4>(0, 0)
        .copy_from(&Matrix4::identity());
    let mut a = Matrix6::zeros();
    a.fixed_view_mut::<4, 4>(0, 0).copy_from(&jf.dx);
    a.fixed_view_mut::<4, 2>(0, 4).copy_from(&jf.dz);
    a.fixed_view_mut::<2, 4>(4, 0).copy_from(&jg.dx);
    a.fixed_view_mut::<2, 2>(4, 4).copy_from(&jg.dz);
    let mut c = Matrix2x6::zeros();
    c.fixed_view_mut::<2, 4>(0, 0).copy_from(&jh.dx);
    c.fixed_view_mut::<2, 2>(0, 4).copy_from(&jh.dz);
    let mut b = Vector6::zeros();
    b[4] = -1.0;
    Ok(LinearizedSystem {
        e,
        a,
        b,
        c,
        x: *x,
        z: *z,
        current,
    })
}

fn rank_from_singular_values(sv: impl Iterator<Item = f64>, tol: f64) -> RankTest {
    let mut sv: Vec<f64> = sv.collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let max = sv.first().copied().unwrap_or(0.0);
    let threshold = tol * max;
    let retained: Vec<f64> = sv.iter().copied().filter(|&s| s > threshold).collect();
    let rank = retained.len();
    let margin = retained.last().copied().unwrap_or(0.0);
    let min = sv.last().copied().unwrap_or(0.0);
    RankTest {
        rank,
        holds: rank == 6,
        margin,
        relative_margin: if max > 0.0 { min / max } else { 0.0 },
    }
}

/// Rank of `[E; C]`.
pub fn check_c1(sys: &LinearizedSystem, tol: f64) -> RankTest {
    let mut stacked = SMatrix::<f64, 8, 6>::zeros();
    stacked.fixed_view_mut::<6, 6>(0, 0).copy_from(&sys.e);
    stacked.fixed_view_mut::<2, 6>(6, 0).copy_from(&sys.c);
    rank_from_singular_values(stacked.singular_values().iter().copied(), tol)
}

/// Rank of `[sE - A; C]` at a complex `s`.
pub fn pencil_rank(sys: &LinearizedSystem, s: Complex<f64>, tol: f64) -> RankTest {
    let stacked = stacked_pencil(sys, s);
    rank_from_singular_values(stacked.singular_values().iter().copied(), tol)
}

fn stacked_pencil(sys: &LinearizedSystem, s: Complex<f64>) -> SMatrix<Complex<f64>, 8, 6> {
    SMatrix::<Complex<f64>, 8, 6>::from_fn(|i, j| {
        if i < 6 {
            s * sys.e[(i, j)] - Complex::new(sys.a[(i, j)], 0.0)
        } else {
            Complex::new(sys.c[(i - 6, j)], 0.0)
        }
    })
}

/// Smallest singular value of `sE - A`.
pub fn pencil_min_singular_value(sys: &LinearizedSystem, s: Complex<f64>) -> f64 {
    let m = SMatrix::<Complex<f64>, 6, 6>::from_fn(|i, j| {
        s * sys.e[(i, j)] - Complex::new(sys.a[(i, j)], 0.0)
    });
    m.singular_values().min()
}

/// `A11 - A12 A22^-1 A21`.
pub fn schur_complement(sys: &LinearizedSystem) -> Result<Matrix4<f64>> {
    let a11 = sys.a.fixed_view::<4, 4>(0, 0).into_owned();
    let a12 = sys.a.fixed_view::<4, 2>(0, 4).into_owned();
    let a21 = sys.a.fixed_view::<2, 4>(4, 0).into_owned();
    let a22 = sys.a.fixed_view::<2, 2>(4, 4).into_owned();
    let inv = a22.try_inverse().ok_or(Error::Singular(
        "dg/dz block of A; the system is not index 1 here",
    ))?;
    Ok(a11 - a12 * inv * a21)
}

/// Finite generalized eigenvalues of `(E, A)`, sorted by real then imaginary
/// part.
pub fn finite_generalized_eigenvalues(sys: &LinearizedSystem) -> Result<Vec<Complex<f64>>> {
    let reduced = schur_complement(sys)?;
    let mut eig: Vec<Complex<f64>> = reduced.complex_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(eig)
}

/// Pencil rank tests at every finite generalized eigenvalue.
pub fn check_c2(sys: &LinearizedSystem, tol: f64) -> Result<Vec<EigenRankTest>> {
    Ok(finite_generalized_eigenvalues(sys)?
        .into_iter()
        .map(|eigenvalue| EigenRankTest {
            eigenvalue,
            test: pencil_rank(sys, eigenvalue, tol),
        })
        .collect())
}

pub fn analyze(sys: &LinearizedSystem, tol: f64) -> Result<ObservabilityReport> {
    let c1 = check_c1(sys, tol);
    let c2 = check_c2(sys, tol)?;
    let finite_eigenvalues = c2.iter().map(|e| e.eigenvalue).collect();
    let c2_holds = c2.iter().all(|e| e.test.holds);
    Ok(ObservabilityReport {
        c1,
        finite_eigenvalues,
        c2,
        c2_holds,
    })
}

/// Sensitivities of the potentials to the species masses at one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityRow {
    pub t: f64,
    /// dE_H/dx, V/g.
    pub d_eh: [f64; 4],
    /// dE_L/dx, V/g.
    pub d_el: [f64; 4],
    /// Total dV/dx along the constraint manifold, V/g.
    pub d_v: [f64; 4],
}

pub fn sensitivities(model: &Model, trajectory: &[SimRecord]) -> Result<Vec<SensitivityRow>> {
    trajectory
        .iter()
        .map(|rec| {
            let n = model.nernst_gradient(&rec.x)?;
            let dv = model.voltage_gradient(&rec.x, &rec.z)?;
            let row = |r: usize| [n[(r, 0)], n[(r, 1)], n[(r, 2)], n[(r, 3)]];
            Ok(SensitivityRow {
                t: rec.t,
                d_eh: row(0),
                d_el: row(1),
                d_v: [dv[0], dv[1], dv[2], dv[3]],
            })
        })
        .collect()
}

/// Indices `0, every, 2 every, ...` into a sequence of `len` records; an
/// interval larger than the record count yields the single index 0.
pub fn sample_indices(len: usize, every: usize) -> Vec<usize> {
    if len == 0 {
        return Vec::new();
    }
    let every = every.max(1);
    (0..len).step_by(every).collect()
}

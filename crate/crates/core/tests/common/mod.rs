#![allow(dead_code)]

use lis_core::sim::{solve_algebraic, SimOptions};
use lis_core::{AlgebraicState, DifferentialState, Model};
use nalgebra::{SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relative tolerance for analytic vs central-difference Jacobians.
pub const JACOBIAN_RTOL: f64 = 1e-6;

/// Entries smaller than this fraction of the largest entry of the same
/// matrix are compared against that floor instead of their own size.
pub const JACOBIAN_FLOOR: f64 = 1e-10;

/// Largest reaction current of an accepted random point, A.
pub const MAX_REACTION_CURRENT: f64 = 5.0;

pub fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// Feasible `(x, z, I)` with `z` solved from the constraint.
pub fn random_feasible_points(
    model: &Model,
    n: usize,
    seed: u64,
) -> Vec<(DifferentialState, AlgebraicState, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = SimOptions::default();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = DifferentialState::new(
            log_uniform(&mut rng, 1e-4, 3.0),
            log_uniform(&mut rng, 1e-3, 3.0),
            log_uniform(&mut rng, 1e-6, 1e-2),
            log_uniform(&mut rng, 1e-7, 1.0),
        );
        let current = rng.random_range(0.1..3.0);
        let guess = AlgebraicState::new(current, 0.0);
        if let Ok(sol) = solve_algebraic(model, &x, current, &guess, &opts) {
            if sol.z.i_h.abs() <= MAX_REACTION_CURRENT && sol.z.i_l.abs() <= MAX_REACTION_CURRENT {
                out.push((x, sol.z, current));
            }
        }
    }
    out
}

pub fn pack(x: &DifferentialState, z: &AlgebraicState) -> [f64; 6] {
    [x.s8, x.s4, x.sulfide, x.precipitate, z.i_h, z.i_l]
}

pub fn unpack(w: &[f64; 6]) -> (DifferentialState, AlgebraicState) {
    (
        DifferentialState::new(w[0], w[1], w[2], w[3]),
        AlgebraicState::new(w[4], w[5]),
    )
}

/// Jacobian of `fun` with respect to `(x, z)` by Ridders' extrapolation of
/// central differences. Each column starts from a step of a tenth of the
/// coordinate (masses) or of `1 + |z|` (currents) and keeps the tableau
/// entry with the smallest error estimate.
pub fn central_difference<const M: usize>(
    w: [f64; 6],
    fun: impl Fn(&[f64; 6]) -> SVector<f64, M>,
) -> SMatrix<f64, M, 6> {
    const NTAB: usize = 10;
    const CON: f64 = 1.4;
    const SAFE: f64 = 2.0;
    let diff = |j: usize, h: f64| {
        let mut wp = w;
        let mut wm = w;
        wp[j] += h;
        wm[j] -= h;
        (fun(&wp) - fun(&wm)) / (wp[j] - wm[j])
    };
    let mut jac = SMatrix::<f64, M, 6>::zeros();
    for j in 0..6 {
        let h = if j < 4 {
            0.1 * w[j].abs()
        } else {
            0.1 * (1.0 + w[j].abs())
        };
        for i in 0..M {
            let mut tab = [[0.0; NTAB]; NTAB];
            let mut hh = h;
            tab[0][0] = diff(j, hh)[i];
            let mut best = tab[0][0];
            let mut err = f64::INFINITY;
            for k in 1..NTAB {
                hh /= CON;
                tab[0][k] = diff(j, hh)[i];
                let mut fac = CON * CON;
                for m in 1..=k {
                    tab[m][k] = (tab[m - 1][k] * fac - tab[m - 1][k - 1]) / (fac - 1.0);
                    fac *= CON * CON;
                    let e = (tab[m][k] - tab[m - 1][k])
                        .abs()
                        .max((tab[m][k] - tab[m - 1][k - 1]).abs());
                    if e <= err {
                        err = e;
                        best = tab[m][k];
                    }
                }
                if (tab[k][k] - tab[k - 1][k - 1]).abs() >= SAFE * err {
                    break;
                }
            }
            jac[(i, j)] = best;
        }
    }
    jac
}

/// Largest entrywise relative error of `analytic` against `reference`.
pub fn max_relative_error<const M: usize, const N: usize>(
    analytic: &SMatrix<f64, M, N>,
    reference: &SMatrix<f64, M, N>,
) -> f64 {
    let floor = JACOBIAN_FLOOR * analytic.amax().max(reference.amax());
    analytic
        .iter()
        .zip(reference.iter())
        .map(|(&a, &r)| {
            let diff = (a - r).abs();
            if diff == 0.0 {
                0.0
            } else {
                diff / a.abs().max(r.abs()).max(floor)
            }
        })
        .fold(0.0, f64::max)
}

/// Worst relative error over the six model Jacobian blocks at one point.
pub fn jacobian_errors(
    model: &Model,
    x: &DifferentialState,
    z: &AlgebraicState,
    current: f64,
) -> [(&'static str, f64); 6] {
    let w = pack(x, z);
    let f = central_difference::<4>(w, |w| {
        let (x, z) = unpack(w);
        model.rates(&x, &z).unwrap()
    });
    let g = central_difference::<2>(w, |w| {
        let (x, z) = unpack(w);
        model.constraint(&x, &z, current).unwrap()
    });
    let h = central_difference::<2>(w, |w| {
        let (x, z) = unpack(w);
        model.output(&x, &z).unwrap()
    });
    let jf = model.jac_f(x, z).unwrap();
    let jg = model.jac_g(x, z).unwrap();
    let jh = model.jac_h(x, z).unwrap();
    [
        (
            "df/dx",
            max_relative_error(&jf.dx, &f.fixed_view::<4, 4>(0, 0).into_owned()),
        ),
        (
            "df/dz",
            max_relative_error(&jf.dz, &f.fixed_view::<4, 2>(0, 4).into_owned()),
        ),
        (
            "dg/dx",
            max_relative_error(&jg.dx, &g.fixed_view::<2, 4>(0, 0).into_owned()),
        ),
        (
            "dg/dz",
            max_relative_error(&jg.dz, &g.fixed_view::<2, 2>(0, 4).into_owned()),
        ),
        (
            "dh/dx",
            max_relative_error(&jh.dx, &h.fixed_view::<2, 4>(0, 0).into_owned()),
        ),
        (
            "dh/dz",
            max_relative_error(&jh.dz, &h.fixed_view::<2, 2>(0, 4).into_owned()),
        ),
    ]
}

/// Rank by Gaussian elimination with full pivoting, relative threshold
/// `tol * max |entry|`.
pub fn rank_by_elimination<const M: usize, const N: usize>(
    m: &SMatrix<f64, M, N>,
    tol: f64,
) -> usize {
    let mut a = *m;
    let threshold = tol * a.amax();
    let mut rank = 0;
    for col in 0..N.min(M) {
        let mut best = (col, col, 0.0);
        for i in col..M {
            for j in col..N {
                if a[(i, j)].abs() > best.2 {
                    best = (i, j, a[(i, j)].abs());
                }
            }
        }
        if best.2 <= threshold {
            break;
        }
        a.swap_rows(col, best.0);
        a.swap_columns(col, best.1);
        for i in col + 1..M {
            let factor = a[(i, col)] / a[(col, col)];
            for j in col..N {
                a[(i, j)] -= factor * a[(col, j)];
            }
        }
        rank += 1;
    }
    rank
}

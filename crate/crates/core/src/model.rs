//! Pure evaluation of the zero-dimensional Li-S model.
//!
//! Differential states are the species masses `x = (S8, S4, S2-, Sp)`,
//! algebraic states the two reaction currents `z = (i_H, i_L)`:
//!
//! ```text
//!   dx/dt = f(x, z)
//!       0 = g(x, z, I) = [ i_H + i_L - I ;  y1 - y2 ]
//!       y = h(x, z)    = [ E_H + eta_H ;  E_L + eta_L ]
//! ```
//!
//! Every function rejects states outside the domain of the logarithms.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Params;

/// Species masses in grams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct DifferentialState {
    /// Dissolved S8.
    pub s8: f64,
    /// S4 2-.
    pub s4: f64,
    /// Dissolved S 2-.
    pub sulfide: f64,
    /// Precipitated sulfide.
    pub precipitate: f64,
}

impl DifferentialState {
    pub const fn new(s8: f64, s4: f64, sulfide: f64, precipitate: f64) -> Self {
        Self {
            s8,
            s4,
            sulfide,
            precipitate,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.s8, self.s4, self.sulfide, self.precipitate]
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::from(self.to_array())
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    /// Total sulfur bookkeeping `x1 + x2 + 2 (x3 + x4)`, conserved by `f`.
    pub fn sulfur_inventory(self) -> f64 {
        self.s8 + self.s4 + 2.0 * (self.sulfide + self.precipitate)
    }

    /// Componentwise floor at `eps`.
    pub fn floored(self, eps: f64) -> Self {
        Self::new(
            self.s8.max(eps),
            self.s4.max(eps),
            self.sulfide.max(eps),
            self.precipitate.max(eps),
        )
    }

    /// Domain check: x1, x2, x3 > 0, x4 >= 0, all finite.
    pub fn check(&self) -> Result<()> {
        let [s8, s4, s, sp] = self.to_array();
        if !(s8.is_finite() && s8 > 0.0) {
            return Err(Error::Domain {
                what: "S8 mass must be > 0",
                value: s8,
            });
        }
        if !(s4.is_finite() && s4 > 0.0) {
            return Err(Error::Domain {
                what: "S4 mass must be > 0",
                value: s4,
            });
        }
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::Domain {
                what: "S2- mass must be > 0",
                value: s,
            });
        }
        if !(sp.is_finite() && sp >= 0.0) {
            return Err(Error::Domain {
                what: "precipitate mass must be >= 0",
                value: sp,
            });
        }
        Ok(())
    }
}

impl From<[f64; 4]> for DifferentialState {
    fn from(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

impl From<DifferentialState> for [f64; 4] {
    fn from(x: DifferentialState) -> Self {
        x.to_array()
    }
}

/// Reaction currents in amperes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct AlgebraicState {
    pub i_h: f64,
    pub i_l: f64,
}

impl AlgebraicState {
    pub const fn new(i_h: f64, i_l: f64) -> Self {
        Self { i_h, i_l }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.i_h, self.i_l)
    }

    pub fn from_vector(v: &Vector2<f64>) -> Self {
        Self::new(v[0], v[1])
    }

    fn check(&self) -> Result<()> {
        for v in [self.i_h, self.i_l] {
            if !v.is_finite() {
                return Err(Error::Domain {
                    what: "reaction current must be finite",
                    value: v,
                });
            }
        }
        Ok(())
    }
}

impl From<[f64; 2]> for AlgebraicState {
    fn from(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

impl From<AlgebraicState> for [f64; 2] {
    fn from(z: AlgebraicState) -> Self {
        [z.i_h, z.i_l]
    }
}

/// Reaction potentials and the terminal voltage they imply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Potentials {
    pub e_h: f64,
    pub e_l: f64,
    pub eta_h: f64,
    pub eta_l: f64,
    /// Terminal voltage from the high-plateau decomposition `E_H + eta_H`.
    pub v_cell: f64,
}

/// Analytic Jacobian blocks with respect to `x` and `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jacobians<const R: usize> {
    pub dx: nalgebra::SMatrix<f64, R, 4>,
    pub dz: nalgebra::SMatrix<f64, R, 2>,
}

/// The model with its derived coefficients precomputed.
#[derive(Debug, Clone)]
pub struct Model {
    params: Params,
    /// RT/(4F).
    nernst: f64,
    /// sign * 2RT/(n_e F).
    kinetic: f64,
    /// 2 i_H0 a_r and 2 i_L0 a_r.
    scale_h: f64,
    scale_l: f64,
    /// Mass per unit charge of each current term, g/C.
    coef_h: f64,
    coef_l_s4: f64,
    coef_l_s: f64,
    /// k_p / (v rho_S).
    precip: f64,
}

impl Model {
    pub fn new(params: Params) -> Self {
        let p = &params;
        let charge = p.n_e * p.faraday;
        Self {
            nernst: p.r_gas * p.temperature / (4.0 * p.faraday),
            kinetic: p.current_convention.sign() * 2.0 * p.r_gas * p.temperature / charge,
            scale_h: 2.0 * p.i_h0 * p.a_r,
            scale_l: 2.0 * p.i_l0 * p.a_r,
            coef_h: p.n_s8 * p.m_s8 / charge,
            coef_l_s4: p.n_s4 * p.m_s8 / charge,
            coef_l_s: 2.0 * p.n_s * p.m_s8 / charge,
            precip: p.k_p / (p.volume * p.rho_s),
            params,
        }
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    fn precipitation(&self, x: &DifferentialState) -> f64 {
        self.precip * x.precipitate * (x.sulfide - self.params.s_star)
    }

    /// Species rates `f(x, z)`, g/s.
    pub fn rates(&self, x: &DifferentialState, z: &AlgebraicState) -> Result<Vector4<f64>> {
        x.check()?;
        z.check()?;
        let shuttle = self.params.k_s * x.s8;
        let precip = self.precipitation(x);
        Ok(Vector4::new(
            -self.coef_h * z.i_h - shuttle,
            self.coef_h * z.i_h + shuttle - self.coef_l_s4 * z.i_l,
            self.coef_l_s * z.i_l - precip,
            precip,
        ))
    }

    /// Nernst potentials `(E_H, E_L)`.
    pub fn nernst(&self, x: &DifferentialState) -> Result<(f64, f64)> {
        x.check()?;
        let p = &self.params;
        let arg_h = p.f_h * x.s8 / (x.s4 * x.s4);
        let arg_l = p.f_l * x.s4.powf(p.low_plateau_s4_order)
            / (x.sulfide * x.sulfide * (x.sulfide + x.precipitate));
        if !(arg_h > 0.0 && arg_h.is_finite()) {
            return Err(Error::Domain {
                what: "high-plateau Nernst argument",
                value: arg_h,
            });
        }
        if !(arg_l > 0.0 && arg_l.is_finite()) {
            return Err(Error::Domain {
                what: "low-plateau Nernst argument",
                value: arg_l,
            });
        }
        Ok((
            p.e_h0 + self.nernst * arg_h.ln(),
            p.e_l0 + self.nernst * arg_l.ln(),
        ))
    }

    /// Overpotentials `(eta_H, eta_L)` from the inverted Butler-Volmer relations.
    pub fn overpotentials(&self, z: &AlgebraicState) -> (f64, f64) {
        (
            self.kinetic * (z.i_h / self.scale_h).asinh(),
            self.kinetic * (z.i_l / self.scale_l).asinh(),
        )
    }

    /// Butler-Volmer currents `(i_H, i_L)` for given overpotentials.
    pub fn currents(&self, eta_h: f64, eta_l: f64) -> AlgebraicState {
        AlgebraicState::new(
            self.scale_h * (eta_h / self.kinetic).sinh(),
            self.scale_l * (eta_l / self.kinetic).sinh(),
        )
    }

    pub fn potentials(&self, x: &DifferentialState, z: &AlgebraicState) -> Result<Potentials> {
        z.check()?;
        let (e_h, e_l) = self.nernst(x)?;
        let (eta_h, eta_l) = self.overpotentials(z);
        Ok(Potentials {
            e_h,
            e_l,
            eta_h,
            eta_l,
            v_cell: e_h + eta_h,
        })
    }

    /// Output stack `h(x, z) = (E_H + eta_H, E_L + eta_L)`.
    pub fn output(&self, x: &DifferentialState, z: &AlgebraicState) -> Result<Vector2<f64>> {
        let p = self.potentials(x, z)?;
        Ok(Vector2::new(p.e_h + p.eta_h, p.e_l + p.eta_l))
    }

    /// Constraint residual `g(x, z, I)`.
    pub fn constraint(
        &self,
        x: &DifferentialState,
        z: &AlgebraicState,
        current: f64,
    ) -> Result<Vector2<f64>> {
        let y = self.output(x, z)?;
        Ok(Vector2::new(z.i_h + z.i_l - current, y[0] - y[1]))
    }

    fn d_overpotential(&self, i: f64, scale: f64) -> f64 {
        let u = i / scale;
        self.kinetic / (scale * (1.0 + u * u).sqrt())
    }

    /// `(d eta_H / d i_H, d eta_L / d i_L)`.
    fn overpotential_slopes(&self, z: &AlgebraicState) -> (f64, f64) {
        (
            self.d_overpotential(z.i_h, self.scale_h),
            self.d_overpotential(z.i_l, self.scale_l),
        )
    }

    pub fn jac_f(&self, x: &DifferentialState, z: &AlgebraicState) -> Result<Jacobians<4>> {
        x.check()?;
        z.check()?;
        let ks = self.params.k_s;
        let dp_ds = self.precip * x.precipitate;
        let dp_dsp = self.precip * (x.sulfide - self.params.s_star);
        #[rustfmt::skip]
        let dx = Matrix4::new(
            -ks, 0.0, 0.0,     0.0,
             ks, 0.0, 0.0,     0.0,
            0.0, 0.0, -dp_ds, -dp_dsp,
            0.0, 0.0,  dp_ds,  dp_dsp,
        );
        #[rustfmt::skip]
        let dz = Matrix4x2::new(
            -self.coef_h, 0.0,
             self.coef_h, -self.coef_l_s4,
             0.0,          self.coef_l_s,
             0.0,          0.0,
        );
        Ok(Jacobians { dx, dz })
    }

    /// Partials of `(E_H, E_L)` with respect to `x`, V/g.
    pub fn nernst_gradient(&self, x: &DifferentialState) -> Result<Matrix2x4<f64>> {
        x.check()?;
        let c = self.nernst;
        let order = self.params.low_plateau_s4_order;
        let total = x.sulfide + x.precipitate;
        #[rustfmt::skip]
        let m = Matrix2x4::new(
            c / x.s8, -2.0 * c / x.s4,   0.0,                                  0.0,
            0.0,       order * c / x.s4, -c * (2.0 / x.sulfide + 1.0 / total), -c / total,
        );
        Ok(m)
    }

    pub fn jac_h(&self, x: &DifferentialState, z: &AlgebraicState) -> Result<Jacobians<2>> {
        z.check()?;
        let dx = self.nernst_gradient(x)?;
        let (dh, dl) = self.overpotential_slopes(z);
        Ok(Jacobians {
            dx,
            dz: Matrix2::new(dh, 0.0, 0.0, dl),
        })
    }

    pub fn jac_g(&self, x: &DifferentialState, z: &AlgebraicState) -> Result<Jacobians<2>> {
        let h = self.jac_h(x, z)?;
        let mut dx = Matrix2x4::zeros();
        dx.set_row(1, &(h.dx.row(0) - h.dx.row(1)));
        let dz = Matrix2::new(1.0, 1.0, h.dz[(0, 0)], -h.dz[(1, 1)]);
        Ok(Jacobians { dx, dz })
    }

    /// Jacobian of the reduced ODE `dx/dt = f(x, z(x))` on the constraint
    /// manifold: `f_x - f_z g_z^{-1} g_x`.
    pub fn reduced_jacobian(
        &self,
        x: &DifferentialState,
        z: &AlgebraicState,
    ) -> Result<Matrix4<f64>> {
        let jf = self.jac_f(x, z)?;
        let jg = self.jac_g(x, z)?;
        let gz_inv = jg.dz.try_inverse().ok_or(Error::Singular("dg/dz"))?;
        Ok(jf.dx - jf.dz * gz_inv * jg.dx)
    }

    /// Total derivative of the terminal voltage along the constraint manifold,
    /// `dV/dx = h1_x - h1_z g_z^{-1} g_x`.
    pub fn voltage_gradient(
        &self,
        x: &DifferentialState,
        z: &AlgebraicState,
    ) -> Result<nalgebra::RowVector4<f64>> {
        let jh = self.jac_h(x, z)?;
        let jg = self.jac_g(x, z)?;
        let gz_inv = jg.dz.try_inverse().ok_or(Error::Singular("dg/dz"))?;
        Ok(jh.dx.row(0) - jh.dz.row(0) * gz_inv * jg.dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model {
        Model::new(Params::reference())
    }

    fn x0() -> DifferentialState {
        DifferentialState::new(2.6730, 0.0128, 8.9339e-7, 2.7e-6)
    }

    #[test]
    fn rates_without_currents_or_precipitate() {
        let m = model();
        let x = DifferentialState::new(2.0, 0.3, 1e-4, 0.0);
        let f = m.rates(&x, &AlgebraicState::new(0.0, 0.0)).unwrap();
        let ks = m.params().k_s;
        assert_eq!(f, Vector4::new(-ks * 2.0, ks * 2.0, 0.0, 0.0));
    }

    #[test]
    fn precipitation_is_a_pure_exchange_without_shuttle() {
        let mut p = Params::reference();
        p.k_s = 0.0;
        let m = Model::new(p);
        let x = DifferentialState::new(2.0, 0.3, 3e-4, 0.1);
        let f = m.rates(&x, &AlgebraicState::new(0.0, 0.0)).unwrap();
        assert!(f[2] != 0.0);
        assert_eq!(f[2], -f[3]);
    }

    #[test]
    fn nernst_at_unit_argument() {
        let m = model();
        let p = m.params();
        // f_H x1 / x2^2 = 1
        let s4 = 0.5_f64;
        let x = DifferentialState::new(s4 * s4 / p.f_h, s4, 1e-4, 1e-4);
        let (e_h, _) = m.nernst(&x).unwrap();
        assert!((e_h - p.e_h0).abs() < 1e-15);
    }

    #[test]
    fn nernst_log_scaling_raises_by_one_volt() {
        let m = model();
        let p = m.params();
        let factor = (4.0 * p.faraday / (p.r_gas * p.temperature)).exp();
        // Keep S8 representable: start tiny so the scaled value stays finite.
        let x = DifferentialState::new(1e-30, 0.1, 1e-4, 1e-4);
        let scaled = DifferentialState {
            s8: x.s8 * factor,
            ..x
        };
        let (a, _) = m.nernst(&x).unwrap();
        let (b, _) = m.nernst(&scaled).unwrap();
        assert!(((b - a) - 1.0).abs() < 1e-12, "{}", b - a);
    }

    #[test]
    fn high_plateau_potential_near_2p4() {
        let (e_h, _) = model().nernst(&x0()).unwrap();
        assert!((e_h - 2.4).abs() <= 0.1, "{e_h}");
    }

    #[test]
    fn overpotential_special_values() {
        let m = model();
        let p = m.params().clone();
        let (eta_h, _) = m.overpotentials(&AlgebraicState::new(0.0, 1.0));
        assert_eq!(eta_h, 0.0);
        let unit = 2.0 * p.i_h0 * p.a_r;
        let (eta_h, _) = m.overpotentials(&AlgebraicState::new(unit, 0.0));
        let expect = p.current_convention.sign() * 2.0 * p.r_gas * p.temperature
            / (p.n_e * p.faraday)
            * 1f64.asinh();
        assert!((eta_h - expect).abs() < 1e-16);
    }

    #[test]
    fn anodic_convention_flips_overpotential_sign() {
        let mut p = Params::reference();
        p.current_convention = crate::params::CurrentConvention::Anodic;
        let anodic = Model::new(p);
        let z = AlgebraicState::new(1.3, -0.4);
        let (a_h, a_l) = anodic.overpotentials(&z);
        let (c_h, c_l) = model().overpotentials(&z);
        assert_eq!((a_h, a_l), (-c_h, -c_l));
        assert!(a_h > 0.0);
    }

    #[test]
    fn zero_current_output_is_nernst() {
        let m = model();
        let y = m.output(&x0(), &AlgebraicState::new(0.0, 0.0)).unwrap();
        let (e_h, e_l) = m.nernst(&x0()).unwrap();
        assert_eq!((y[0], y[1]), (e_h, e_l));
    }

    #[test]
    fn current_balance_residual() {
        let m = model();
        let g = m
            .constraint(&x0(), &AlgebraicState::new(1.0, 0.7), 1.7)
            .unwrap();
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn symmetric_cancellation() {
        let mut p = Params::reference();
        p.i_l0 = p.i_h0;
        // Choose E_L0 so that E_H = E_L at this x.
        let x = DifferentialState::new(1.0, 0.5, 2e-4, 0.1);
        let m = Model::new(p.clone());
        let (e_h, e_l) = m.nernst(&x).unwrap();
        p.e_l0 += e_h - e_l;
        let m = Model::new(p);
        let g = m
            .constraint(&x, &AlgebraicState::new(0.8, 0.8), 1.6)
            .unwrap();
        assert!(g[1].abs() < 1e-15, "{}", g[1]);
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn domain_errors() {
        let m = model();
        let z = AlgebraicState::new(1.0, 0.0);
        for bad in [
            DifferentialState::new(0.0, 1.0, 1.0, 1.0),
            DifferentialState::new(1.0, -1.0, 1.0, 1.0),
            DifferentialState::new(1.0, 1.0, 0.0, 1.0),
            DifferentialState::new(1.0, 1.0, 1.0, -1e-9),
            DifferentialState::new(f64::NAN, 1.0, 1.0, 1.0),
        ] {
            assert!(matches!(m.rates(&bad, &z), Err(Error::Domain { .. })));
            assert!(matches!(m.output(&bad, &z), Err(Error::Domain { .. })));
            assert!(matches!(m.jac_g(&bad, &z), Err(Error::Domain { .. })));
        }
        // x4 = 0 is allowed.
        m.output(&DifferentialState::new(1.0, 1.0, 1.0, 0.0), &z)
            .unwrap();
    }

    #[test]
    fn shuttle_row_is_constant() {
        let m = model();
        let x = x0();
        for z in [
            AlgebraicState::new(0.3, 1.4),
            AlgebraicState::new(-2.0, 0.0),
        ] {
            let jf = m.jac_f(&x, &z).unwrap();
            assert_eq!(jf.dx[(0, 0)], -m.params().k_s);
        }
    }

    #[test]
    fn output_current_slope_closed_form() {
        let m = model();
        let p = m.params().clone();
        let z = AlgebraicState::new(3.1, -0.2);
        let jh = m.jac_h(&x0(), &z).unwrap();
        let s = 2.0 * p.i_h0 * p.a_r;
        let expect = p.current_convention.sign()
            * (2.0 * p.r_gas * p.temperature / (p.n_e * p.faraday))
            * (1.0 / s)
            * (1.0 + (z.i_h / s).powi(2)).powf(-0.5);
        assert!((jh.dz[(0, 0)] - expect).abs() <= 1e-15 * expect.abs());
        assert_eq!(jh.dz[(0, 1)], 0.0);
    }

    #[test]
    fn low_plateau_potential_ignores_s8() {
        let g = model().nernst_gradient(&x0()).unwrap();
        assert_eq!(g[(1, 0)], 0.0);
        assert!(g[(0, 0)] > 0.0);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let m = model();
        let z = AlgebraicState::new(1.7, 0.01);
        let a = m.rates(&x0(), &z).unwrap();
        let b = m.rates(&x0(), &z).unwrap();
        assert_eq!(a, b);
        assert_eq!(m.output(&x0(), &z).unwrap(), m.output(&x0(), &z).unwrap());
    }
}

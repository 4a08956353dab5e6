//! True-anomaly kinematics of the target orbit and the chaser's linearized
//! relative motion in the LVLH frame.
//!
//! The state used throughout is the "tilde" state
//! `[x~ y~ z~ x~' y~' z~']` with `x~ = rho * x` and primes denoting
//! derivatives with respect to the true anomaly `nu`. Physical states
//! `[x y z xdot ydot zdot]` are mapped in and out with [`l_matrix`].

use nalgebra::{Matrix6, Matrix6x3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::adaptive_simpson;

/// Earth's gravitational parameter [m^3/s^2].
pub const EARTH_MU: f64 = 3.986_004_418e14;

/// Absolute tolerance of the J integral.
pub const J_TOLERANCE: f64 = 1e-12;

/// Constants of the target orbit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitParams {
    a: f64,
    e: f64,
    mu: f64,
    p: f64,
    h: f64,
    n: f64,
    gamma: f64,
}

impl OrbitParams {
    /// Builds the derived quantities from semi-major axis [m], eccentricity and
    /// gravitational parameter [m^3/s^2].
    pub fn new(a: f64, e: f64, mu: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidOrbit(format!("semi-major axis must be positive, got {a}")));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::InvalidOrbit(format!("mu must be positive, got {mu}")));
        }
        if !(e.is_finite() && (0.0..1.0).contains(&e)) {
            return Err(Error::InvalidOrbit(format!("eccentricity must lie in [0, 1), got {e}")));
        }
        if e >= std::f64::consts::FRAC_1_SQRT_2 {
            log::warn!(
                "eccentricity {e} >= 1/sqrt(2): rho - rho' can vanish, the tilde transformation is not guaranteed well posed"
            );
        }
        let p = a * (1.0 - e * e);
        let h = (mu * p).sqrt();
        let n = (mu / (a * a * a)).sqrt();
        let gamma = mu / h.powf(1.5);
        Ok(Self { a, e, mu, p, h, n, gamma })
    }

    pub fn earth(a: f64, e: f64) -> Result<Self> {
        Self::new(a, e, EARTH_MU)
    }

    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn e(&self) -> f64 {
        self.e
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    /// Semi-latus rectum [m].
    pub fn p(&self) -> f64 {
        self.p
    }
    /// Specific angular momentum [m^2/s].
    pub fn h(&self) -> f64 {
        self.h
    }
    /// Mean motion [rad/s].
    pub fn n(&self) -> f64 {
        self.n
    }
    /// `mu / h^(3/2)`; the anomaly rate is `gamma^2 rho^2`.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho(&self, nu: f64) -> f64 {
        1.0 + self.e * nu.cos()
    }

    /// Anomaly rate d(nu)/dt [rad/s].
    pub fn anomaly_rate(&self, nu: f64) -> f64 {
        let rho = self.rho(nu);
        self.n * rho * rho / (1.0 - self.e * self.e).powf(1.5)
    }

    /// `J(nu) = integral from nu0 to nu of rho^-2`.
    pub fn j_integral(&self, nu0: f64, nu: f64) -> f64 {
        let e = self.e;
        if e == 0.0 {
            return nu - nu0;
        }
        adaptive_simpson(
            |t| {
                let r = 1.0 + e * t.cos();
                1.0 / (r * r)
            },
            nu0,
            nu,
            J_TOLERANCE,
        )
    }
}

/// Every anomaly-dependent scalar at one true anomaly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnomalyPoint {
    pub nu: f64,
    pub rho: f64,
    pub rho_prime: f64,
    pub s: f64,
    pub c: f64,
    pub s_prime: f64,
    pub c_prime: f64,
    /// Anomaly rate [rad/s].
    pub omega: f64,
    /// `J` measured from the reference anomaly passed to [`eval_anomaly`].
    pub j: f64,
}

/// Evaluates the anomaly point at `nu` with `J` measured from `nu0`.
pub fn eval_anomaly(params: &OrbitParams, nu: f64, nu0: f64) -> AnomalyPoint {
    point_with_j(params, nu, params.j_integral(nu0, nu))
}

fn point_with_j(params: &OrbitParams, nu: f64, j: f64) -> AnomalyPoint {
    let e = params.e;
    let (sin, cos) = nu.sin_cos();
    let rho = 1.0 + e * cos;
    AnomalyPoint {
        nu,
        rho,
        rho_prime: -e * sin,
        s: rho * sin,
        c: rho * cos,
        s_prime: cos + e * (2.0 * nu).cos(),
        c_prime: -(sin + e * (2.0 * nu).sin()),
        omega: params.anomaly_rate(nu),
        j,
    }
}

/// Continuous-time (in `nu`) system matrices `(Ac, Bc)` of the tilde dynamics.
pub fn continuous_matrices(params: &OrbitParams, nu: f64) -> (Matrix6<f64>, Matrix6x3<f64>) {
    let rho = params.rho(nu);
    let mut ac = Matrix6::zeros();
    ac[(0, 3)] = 1.0;
    ac[(1, 4)] = 1.0;
    ac[(2, 5)] = 1.0;
    ac[(3, 5)] = 2.0;
    ac[(4, 1)] = -1.0;
    ac[(5, 2)] = 3.0 / rho;
    ac[(5, 3)] = -2.0;
    (ac, input_matrix(params, nu))
}

/// `Bc(nu) = 1/(gamma^3 rho^4) [0; I]`.
pub fn input_matrix(params: &OrbitParams, nu: f64) -> Matrix6x3<f64> {
    let rho = params.rho(nu);
    let scale = 1.0 / (params.gamma.powi(3) * rho.powi(4));
    let mut bc = Matrix6x3::zeros();
    bc[(3, 0)] = scale;
    bc[(4, 1)] = scale;
    bc[(5, 2)] = scale;
    bc
}

/// The physical-to-tilde map `L` at `nu` together with its inverse.
pub fn l_matrix(params: &OrbitParams, nu: f64) -> Result<(Matrix6<f64>, Matrix6<f64>)> {
    let pt = point_with_j(params, nu, 0.0);
    if !(pt.rho > 0.0 && pt.omega > 0.0) {
        return Err(Error::SingularL { nu, rho: pt.rho });
    }
    let mut l = Matrix6::zeros();
    let mut inv = Matrix6::zeros();
    let vel = pt.rho / pt.omega;
    for i in 0..3 {
        l[(i, i)] = pt.rho;
        l[(i + 3, i)] = pt.rho_prime;
        l[(i + 3, i + 3)] = vel;

        inv[(i, i)] = 1.0 / pt.rho;
        inv[(i + 3, i)] = -pt.rho_prime * pt.omega / (pt.rho * pt.rho);
        inv[(i + 3, i + 3)] = pt.omega / pt.rho;
    }
    Ok((l, inv))
}

/// Which coordinates a [`StateVector`] is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    /// `[x y z xdot ydot zdot]` in m and m/s.
    Physical,
    /// `[x~ y~ z~ x~' y~' z~']` in m and m/rad.
    Tilde,
}

impl Frame {
    pub fn name(self) -> &'static str {
        match self {
            Frame::Physical => "physical",
            Frame::Tilde => "tilde",
        }
    }
}

/// A relative state tagged with its frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    pub values: Vector6<f64>,
    pub frame: Frame,
}

impl StateVector {
    pub fn physical(values: Vector6<f64>) -> Self {
        Self { values, frame: Frame::Physical }
    }

    pub fn tilde(values: Vector6<f64>) -> Self {
        Self { values, frame: Frame::Tilde }
    }

    pub fn zero(frame: Frame) -> Self {
        Self { values: Vector6::zeros(), frame }
    }

    /// Converts to the tilde frame at anomaly `nu`; no-op if already tilde.
    pub fn to_tilde(&self, params: &OrbitParams, nu: f64) -> Result<Self> {
        match self.frame {
            Frame::Tilde => Ok(*self),
            Frame::Physical => {
                let (l, _) = l_matrix(params, nu)?;
                Ok(Self::tilde(l * self.values))
            }
        }
    }

    /// Converts to the physical frame at anomaly `nu`; no-op if already physical.
    pub fn to_physical(&self, params: &OrbitParams, nu: f64) -> Result<Self> {
        match self.frame {
            Frame::Physical => Ok(*self),
            Frame::Tilde => {
                let (_, inv) = l_matrix(params, nu)?;
                Ok(Self::physical(inv * self.values))
            }
        }
    }

    pub fn expect_frame(&self, frame: Frame) -> Result<()> {
        if self.frame == frame {
            Ok(())
        } else {
            Err(Error::FrameMismatch { expected: frame.name(), found: self.frame.name() })
        }
    }
}

/// The fundamental matrix evaluated at `pt` (its `j` is the elapsed J).
fn fundamental(e: f64, pt: &AnomalyPoint) -> Matrix6<f64> {
    let AnomalyPoint { rho, s, c, s_prime, c_prime, j, .. } = *pt;
    let k = 1.0 + 1.0 / rho;
    #[rustfmt::skip]
    let m = Matrix6::new(
        1.0, 0.0,      -c * k,  s * k,         0.0,     3.0 * rho * rho * j,
        0.0, c / rho,   0.0,    0.0,           s / rho, 0.0,
        0.0, 0.0,       s,      c,             0.0,     2.0 - 3.0 * e * s * j,
        0.0, 0.0,       2.0 * s, 2.0 * c - e,  0.0,     3.0 * (1.0 - 2.0 * e * s * j),
        0.0, -s / rho,  0.0,    0.0,           c / rho, 0.0,
        0.0, 0.0,       s_prime, c_prime,      0.0,     -3.0 * e * (s_prime * j + s / (rho * rho)),
    );
    m
}

/// Inverse of the fundamental matrix at the reference anomaly (where J = 0).
///
/// The out-of-plane block is the inverse rotation `[cos, -sin; sin, cos]`.
fn fundamental_inverse(e: f64, pt: &AnomalyPoint) -> Matrix6<f64> {
    let AnomalyPoint { rho, s, c, .. } = *pt;
    let q = 1.0 - e * e;
    let k = 1.0 + 1.0 / rho;
    #[rustfmt::skip]
    let m = Matrix6::new(
        q,   0.0,          3.0 * e * (s / rho) * k,               -e * s * k,          0.0,          -e * c + 2.0,
        0.0, c * q / rho,  0.0,                                   0.0,                 -s * q / rho, 0.0,
        0.0, 0.0,          -3.0 * (s / rho) * (1.0 + e * e / rho), s * k,              0.0,          c - 2.0 * e,
        0.0, 0.0,          -3.0 * (c / rho + e),                   c * k + e,          0.0,          -s,
        0.0, s * q / rho,  0.0,                                   0.0,                 c * q / rho,  0.0,
        0.0, 0.0,          3.0 * rho + e * e - 1.0,                -rho * rho,         0.0,          e * s,
    );
    m / q
}

/// State transition matrix `Phi(nu, nu0)` of the homogeneous tilde dynamics.
pub fn stm(params: &OrbitParams, nu0: f64, nu: f64) -> Matrix6<f64> {
    stm_with_j(params, nu0, nu, params.j_integral(nu0, nu))
}

/// [`stm`] with a precomputed `J = integral from nu0 to nu of rho^-2`.
pub(crate) fn stm_with_j(params: &OrbitParams, nu0: f64, nu: f64, j: f64) -> Matrix6<f64> {
    let e = params.e;
    let at = point_with_j(params, nu, j);
    let from = point_with_j(params, nu0, 0.0);
    fundamental(e, &at) * fundamental_inverse(e, &from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gto() -> OrbitParams {
        OrbitParams::earth(24_616e3, 0.73074).unwrap()
    }

    #[test]
    fn derived_quantities_hold_on_construction() {
        let p = gto();
        assert_relative_eq!(p.p(), p.a() * (1.0 - p.e() * p.e()), max_relative = 1e-15);
        assert_relative_eq!(p.h() * p.h(), p.mu() * p.p(), max_relative = 1e-14);
        assert_relative_eq!(p.gamma(), p.mu() / p.h().powf(1.5), max_relative = 1e-15);
        // anomaly rate is gamma^2 rho^2
        let nu = 0.7;
        assert_relative_eq!(
            p.anomaly_rate(nu),
            p.gamma().powi(2) * p.rho(nu).powi(2),
            max_relative = 1e-12
        );
    }

    #[test]
    fn rejects_invalid_orbits() {
        assert!(OrbitParams::earth(-1.0, 0.1).is_err());
        assert!(OrbitParams::earth(7e6, 1.0).is_err());
        assert!(OrbitParams::earth(7e6, -0.1).is_err());
        assert!(OrbitParams::new(7e6, 0.1, 0.0).is_err());
        assert!(OrbitParams::earth(f64::NAN, 0.1).is_err());
    }

    #[test]
    fn circular_orbit_point() {
        let p = OrbitParams::earth(7e6, 0.0).unwrap();
        let pt = eval_anomaly(&p, 1.0, 0.0);
        assert_eq!(pt.rho, 1.0);
        assert_eq!(pt.j, 1.0);
        assert_relative_eq!(pt.omega, p.n(), max_relative = 1e-15);
    }

    #[test]
    fn rho_by_substitution() {
        let pt = eval_anomaly(&gto(), 0.0, 0.0);
        assert_relative_eq!(pt.rho, 1.73074, max_relative = 1e-15);
        assert_eq!(pt.j, 0.0);
    }

    #[test]
    fn j_is_negative_backwards_and_nondecreasing_forwards() {
        let p = gto();
        assert!(p.j_integral(1.0, 0.5) < 0.0);
        let mut prev = 0.0;
        for i in 1..50 {
            let j = p.j_integral(0.1, 0.1 + 0.2 * i as f64);
            assert!(j >= prev);
            prev = j;
        }
    }

    #[test]
    fn derivatives_of_s_and_c_match_finite_differences() {
        let p = gto();
        let h = 1e-6;
        for &nu in &[0.0, 0.4, 1.9, 3.3, 5.7, 8.1] {
            let pt = eval_anomaly(&p, nu, 0.0);
            let fwd = eval_anomaly(&p, nu + h, 0.0);
            let bwd = eval_anomaly(&p, nu - h, 0.0);
            assert!(((fwd.s - bwd.s) / (2.0 * h) - pt.s_prime).abs() < 1e-8);
            assert!(((fwd.c - bwd.c) / (2.0 * h) - pt.c_prime).abs() < 1e-8);
            assert!(((fwd.rho - bwd.rho) / (2.0 * h) - pt.rho_prime).abs() < 1e-8);
        }
    }

    #[test]
    fn continuous_matrices_entries_and_periodicity() {
        let circ = OrbitParams::earth(7e6, 0.0).unwrap();
        let (a0, _) = continuous_matrices(&circ, 0.3);
        let (a1, _) = continuous_matrices(&circ, 2.9);
        assert_eq!(a0, a1);
        assert_eq!(a0[(5, 2)], 3.0);

        let atv = OrbitParams::earth(6763e3, 0.0052).unwrap();
        let (ac, _) = continuous_matrices(&atv, 0.0);
        assert_eq!(ac[(5, 2)], 3.0 / 1.0052);

        let p = gto();
        for &nu in &[0.2, 1.7, 4.4] {
            let (a, b) = continuous_matrices(&p, nu);
            let (a2, b2) = continuous_matrices(&p, nu + 2.0 * std::f64::consts::PI);
            assert!((a - a2).abs().max() < 1e-14);
            assert!((b - b2).abs().max() <= 1e-12 * b.abs().max());
            let scale = 1.0 / (p.gamma().powi(3) * p.rho(nu).powi(4));
            assert_eq!(b.fixed_view::<3, 3>(0, 0).abs().max(), 0.0);
            assert_relative_eq!(b[(3, 0)], scale, max_relative = 1e-15);
            assert_eq!(b[(3, 1)], 0.0);
        }
    }

    #[test]
    fn l_matrix_circular_is_diagonal() {
        let p = OrbitParams::earth(7e6, 0.0).unwrap();
        let (l, _) = l_matrix(&p, 1.234).unwrap();
        let expect = Matrix6::from_diagonal(&Vector6::new(
            1.0,
            1.0,
            1.0,
            1.0 / p.n(),
            1.0 / p.n(),
            1.0 / p.n(),
        ));
        assert!((l - expect).abs().max() <= 1e-12 * expect.abs().max());
    }

    #[test]
    fn l_inverse_is_an_inverse() {
        let p = gto();
        for &nu in &[0.1 * std::f64::consts::PI, 2.0, 5.2] {
            let (l, inv) = l_matrix(&p, nu).unwrap();
            let err = (l * inv - Matrix6::identity()).abs();
            let inf = (0..6).map(|r| err.row(r).sum()).fold(0.0, f64::max);
            assert!(inf <= 1e-12, "nu={nu}: {inf}");
        }
    }

    #[test]
    fn gto_initial_state_to_tilde() {
        let p = gto();
        let nu0 = 0.1 * std::f64::consts::PI;
        let x = StateVector::physical(Vector6::new(0.0, 10_000.0, 0.0, 0.0, -3.0, 0.0));
        let t = x.to_tilde(&p, nu0).unwrap();
        let rho = 1.0 + 0.73074 * nu0.cos();
        let rho_p = -0.73074 * nu0.sin();
        let omega = p.n() * rho * rho / (1.0 - 0.73074f64.powi(2)).powf(1.5);
        assert_relative_eq!(t.values[1], rho * 10_000.0, max_relative = 1e-15);
        assert_relative_eq!(t.values[4], rho_p * 10_000.0 + rho / omega * -3.0, max_relative = 1e-13);
        assert_eq!(t.values[0], 0.0);
        let back = t.to_physical(&p, nu0).unwrap();
        assert!((back.values - x.values).abs().max() <= 1e-12 * x.values.abs().max());
    }

    #[test]
    fn stm_is_identity_at_reference() {
        for &e in &[0.0, 0.0052, 0.5, 0.73074, 0.9] {
            let p = OrbitParams::earth(1e7, e).unwrap();
            for &nu0 in &[0.0, 0.3, 2.5, 4.0] {
                let phi = stm(&p, nu0, nu0);
                assert!((phi - Matrix6::identity()).abs().max() < 1e-13, "e={e} nu0={nu0}");
            }
        }
    }

    #[test]
    fn circular_out_of_plane_block_is_a_rotation() {
        let p = OrbitParams::earth(7e6, 0.0).unwrap();
        let (nu0, nu) = (0.4, 2.3);
        let phi = stm(&p, nu0, nu);
        let d = nu - nu0;
        assert!((phi[(1, 1)] - d.cos()).abs() < 1e-14);
        assert!((phi[(1, 4)] - d.sin()).abs() < 1e-14);
        assert!((phi[(4, 1)] + d.sin()).abs() < 1e-14);
        assert!((phi[(4, 4)] - d.cos()).abs() < 1e-14);
    }

    #[test]
    fn stm_derivative_matches_ac_times_stm() {
        let h = 1e-5;
        for &e in &[0.0, 0.0052, 0.5, 0.73074] {
            let p = OrbitParams::earth(1e7, e).unwrap();
            let nu0 = 0.3;
            for &nu in &[0.9, 2.2, 4.0, 6.5] {
                let d = (stm(&p, nu0, nu + h) - stm(&p, nu0, nu - h)) / (2.0 * h);
                let (ac, _) = continuous_matrices(&p, nu);
                let expect = ac * stm(&p, nu0, nu);
                let err = (d - expect).abs().max();
                assert!(err <= 1e-5 * expect.abs().max().max(1.0), "e={e} nu={nu} err={err}");
            }
        }
    }
}

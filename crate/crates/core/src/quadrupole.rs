//! Quadrupole tensor in Cartesian, principal-axis and spherical form.
//!
//! All entries are linear frequencies (Hz). The Hamiltonian is `I·Q·I`.
//!
//! Spherical parameterization: with `φ = 2ζ + 2Δ`
//!
//! ```text
//!       | S2 cos φ − S0/2    S2 sin φ          S1 cos ζ |
//! Q  =  | S2 sin φ          −S2 cos φ − S0/2   S1 sin ζ |
//!       | S1 cos ζ           S1 sin ζ          S0       |
//! ```
//!
//! so that the rank-2 components are `S±1 = S1 e^{±iζ}` and
//! `S±2 = S2 e^{±i(2ζ+2Δ)}`. A rotation about z by `χ` maps `ζ → ζ + χ`
//! and leaves `Δ` untouched.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{spin_operators, CMat, SpinOps, C64};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadrupoleTensor {
    pub cart: Matrix3<f64>,
}

fn max_entry(m: &Matrix3<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

impl QuadrupoleTensor {
    pub fn new(cart: Matrix3<f64>) -> Result<Self> {
        let scale = max_entry(&cart);
        if scale > 0.0 {
            let asym = max_entry(&(cart - cart.transpose()));
            if asym > 1e-12 * scale {
                return Err(Error::InvalidInput("quadrupole tensor is not symmetric".into()));
            }
            if cart.trace().abs() > 1e-9 * scale {
                return Err(Error::InvalidInput(format!(
                    "quadrupole tensor is not traceless (trace {:.3e} Hz)",
                    cart.trace()
                )));
            }
        }
        Ok(Self {
            cart: (cart + cart.transpose()) * 0.5,
        })
    }

    pub fn zero() -> Self {
        Self { cart: Matrix3::zeros() }
    }

    /// `R Q Rᵀ`; the columns of `r` are the new frame's axes expressed in the old one
    /// when used as `rotated(r.transpose())`.
    pub fn rotated(&self, r: &Matrix3<f64>) -> Self {
        Self {
            cart: r * self.cart * r.transpose(),
        }
    }

    pub fn principal_values(&self) -> [f64; 3] {
        let e = SymmetricEigen::new(self.cart).eigenvalues;
        [e[0], e[1], e[2]]
    }
}

/// `4I(2I−1)`.
pub fn norm_factor(spin: f64) -> f64 {
    4.0 * spin * (2.0 * spin - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrincipalForm {
    /// Coupling constant, carries the sign of the dominant principal value.
    pub cq: f64,
    pub eta: f64,
    /// Z-Y-Z Euler angles (active) taking crystal axes onto principal axes X, Y, Z.
    pub euler: [f64; 3],
    /// False when degenerate principal values leave the axes undetermined.
    #[serde(default = "yes")]
    pub axes_unique: bool,
}

fn yes() -> bool {
    true
}

impl PrincipalForm {
    /// `(Q_X, Q_Y, Q_Z)` for nuclear spin `spin`.
    pub fn values(&self, spin: f64) -> [f64; 3] {
        let n = norm_factor(spin);
        [
            2.0 * self.cq / n,
            (self.eta - 1.0) * self.cq / n,
            -(1.0 + self.eta) * self.cq / n,
        ]
    }
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Active Z-Y-Z rotation `Rz(α) Ry(β) Rz(γ)`.
pub fn euler_zyz(e: [f64; 3]) -> Matrix3<f64> {
    rot_z(e[0]) * rot_y(e[1]) * rot_z(e[2])
}

/// Inverse of [`euler_zyz`] for a proper rotation.
pub fn euler_from_matrix(r: &Matrix3<f64>) -> [f64; 3] {
    let beta = r[(2, 2)].clamp(-1.0, 1.0).acos();
    if beta.sin().abs() < 1e-12 {
        // gimbal lock: only α ± γ is defined
        let alpha = r[(1, 0)].atan2(r[(0, 0)]);
        let alpha = if r[(2, 2)] > 0.0 { alpha } else { -alpha };
        return [alpha, beta, 0.0];
    }
    let alpha = r[(1, 2)].atan2(r[(0, 2)]);
    let gamma = r[(2, 1)].atan2(-r[(2, 0)]);
    [alpha, beta, gamma]
}

pub fn from_principal(cq: f64, eta: f64, euler: [f64; 3], spin: f64) -> Result<QuadrupoleTensor> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidInput(format!("eta = {eta} outside [0, 1]")));
    }
    let pf = PrincipalForm {
        cq,
        eta,
        euler,
        axes_unique: true,
    };
    let [qx, qy, qz] = pf.values(spin);
    let r = euler_zyz(euler);
    let d = Matrix3::from_diagonal(&Vector3::new(qx, qy, qz));
    QuadrupoleTensor::new(r * d * r.transpose())
}

pub fn to_principal(t: &QuadrupoleTensor, spin: f64) -> PrincipalForm {
    let e = SymmetricEigen::new(t.cart);
    let mut idx = [0usize, 1, 2];
    // X: largest magnitude, Z: second, Y: smallest
    idx.sort_by(|&a, &b| e.eigenvalues[b].abs().total_cmp(&e.eigenvalues[a].abs()));
    let (ix, iz, iy) = (idx[0], idx[1], idx[2]);
    let (qx, qy, qz) = (e.eigenvalues[ix], e.eigenvalues[iy], e.eigenvalues[iz]);
    let scale = qx.abs();
    if scale == 0.0 {
        return PrincipalForm {
            cq: 0.0,
            eta: 0.0,
            euler: [0.0; 3],
            axes_unique: false,
        };
    }
    let cq = qx * norm_factor(spin) / 2.0;
    let eta = ((qy - qz) / qx).clamp(0.0, 1.0);
    let mut r = Matrix3::zeros();
    r.set_column(0, &e.eigenvectors.column(ix));
    r.set_column(1, &e.eigenvectors.column(iy));
    r.set_column(2, &e.eigenvectors.column(iz));
    if r.determinant() < 0.0 {
        let y = -r.column(1);
        r.set_column(1, &y);
    }
    let gap = |a: f64, b: f64| (a.abs() - b.abs()).abs() / scale;
    let axes_unique = gap(qx, qz) > 1e-9 && gap(qz, qy) > 1e-9 && (qy - qz).abs() / scale > 1e-9;
    PrincipalForm {
        cq,
        eta,
        euler: euler_from_matrix(&r),
        axes_unique,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphericalForm {
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub delta: f64,
    pub zeta: f64,
}

/// Wrap into `(−π/2, π/2]`, the period of Δ.
pub fn wrap_half_pi(x: f64) -> f64 {
    let mut v = x.rem_euclid(PI);
    if v > FRAC_PI_2 {
        v -= PI;
    }
    v
}

fn wrap_pi(x: f64) -> f64 {
    let mut v = x.rem_euclid(2.0 * PI);
    if v > PI {
        v -= 2.0 * PI;
    }
    v
}

impl SphericalForm {
    /// Same tensor with `S1, S2 ≥ 0`, `Δ ∈ (−π/2, π/2]`, `ζ ∈ (−π, π]`.
    pub fn canonical(&self) -> Self {
        let mut s = *self;
        if s.s1 < 0.0 {
            s.s1 = -s.s1;
            s.zeta += PI;
            s.delta -= PI;
        }
        if s.s2 < 0.0 {
            s.s2 = -s.s2;
            s.delta += FRAC_PI_2;
        }
        s.delta = wrap_half_pi(s.delta);
        s.zeta = wrap_pi(s.zeta);
        s
    }
}

/// Signs of `S1`, `S2` are accepted as they come: a negative magnitude is the
/// same tensor as the positive one with `ζ + π` or `Δ + π/2`.
pub fn from_spherical(s: &SphericalForm) -> QuadrupoleTensor {
    let phi = 2.0 * s.zeta + 2.0 * s.delta;
    let (sp, cp) = phi.sin_cos();
    let (sz, cz) = s.zeta.sin_cos();
    let cart = Matrix3::new(
        s.s2 * cp - s.s0 / 2.0,
        s.s2 * sp,
        s.s1 * cz,
        s.s2 * sp,
        -s.s2 * cp - s.s0 / 2.0,
        s.s1 * sz,
        s.s1 * cz,
        s.s1 * sz,
        s.s0,
    );
    QuadrupoleTensor { cart }
}

/// Inverse of [`from_spherical`]. In single-axis mode the unobservable
/// rotation is removed and `ζ` is reported as 0.
pub fn to_spherical(t: &QuadrupoleTensor, single_axis: bool) -> SphericalForm {
    let q = &t.cart;
    let s0 = q[(2, 2)];
    let s1 = q[(0, 2)].hypot(q[(1, 2)]);
    let zeta = if s1 > 0.0 { q[(1, 2)].atan2(q[(0, 2)]) } else { 0.0 };
    let c = (q[(0, 0)] - q[(1, 1)]) / 2.0;
    let s2 = c.hypot(q[(0, 1)]);
    let phi = if s2 > 0.0 { q[(0, 1)].atan2(c) } else { 2.0 * zeta };
    let delta = wrap_half_pi(phi / 2.0 - zeta);
    SphericalForm {
        s0,
        s1,
        s2,
        delta,
        zeta: if single_axis { 0.0 } else { zeta },
    }
}

/// `Σ_ab Q_ab I_a I_b` on the `2I+1` nuclear states.
pub fn quad_hamiltonian(t: &QuadrupoleTensor, spin: f64) -> Result<CMat> {
    Ok(quad_hamiltonian_with(t, &spin_operators(spin)?))
}

/// [`quad_hamiltonian`] on a prebuilt operator set.
pub fn quad_hamiltonian_with(t: &QuadrupoleTensor, ops: &SpinOps) -> CMat {
    let i = ops.xyz();
    let d = ops.dim();
    let mut h = CMat::zeros(d, d);
    for a in 0..3 {
        for b in 0..3 {
            let q = t.cart[(a, b)];
            if q != 0.0 {
                h += i[a] * i[b] * C64::new(q, 0.0);
            }
        }
    }
    h
}

/// Same Hamiltonian assembled from the rank-2 spherical components and
/// ladder operators.
pub fn quad_hamiltonian_ladder(s: &SphericalForm, spin: f64) -> Result<CMat> {
    let o = spin_operators(spin)?;
    let x = C64::new(spin * (spin + 1.0), 0.0);
    let t0 = (&o.z * &o.z * C64::new(3.0, 0.0) - &o.id * x) * C64::new(0.5 * s.s0, 0.0);
    let e1 = C64::from_polar(0.5 * s.s1, -s.zeta);
    let p1 = &o.plus * &o.z + &o.z * &o.plus;
    let t1 = &p1 * e1 + p1.adjoint() * e1.conj();
    let e2 = C64::from_polar(0.5 * s.s2, -(2.0 * s.zeta + 2.0 * s.delta));
    let p2 = &o.plus * &o.plus;
    let t2 = &p2 * e2 + p2.adjoint() * e2.conj();
    Ok(t0 + t1 + t2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::eigvalsh;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn random_traceless(v: [f64; 5]) -> QuadrupoleTensor {
        let m = Matrix3::new(v[0], v[2], v[3], v[2], v[1], v[4], v[3], v[4], -v[0] - v[1]);
        QuadrupoleTensor::new(m).unwrap()
    }

    #[test]
    fn principal_values_from_fit() {
        let t = from_principal(19.3059e6, 0.77027, [0.0; 3], 4.5).unwrap();
        assert_relative_eq!(t.cart[(0, 0)], 268.138e3, max_relative = 2e-5);
        assert_relative_eq!(t.cart[(1, 1)], -30.799e3, max_relative = 5e-5);
        assert_relative_eq!(t.cart[(2, 2)], -237.338e3, max_relative = 2e-5);
        let p = to_principal(&t, 4.5);
        assert_relative_eq!(p.cq, 19.3059e6, max_relative = 1e-12);
        assert_relative_eq!(p.eta, 0.77027, max_relative = 1e-12);
    }

    #[test]
    fn axial_and_zero() {
        let cq = 1.44e6;
        let t = from_principal(cq, 0.0, [0.0; 3], 4.5).unwrap();
        assert_relative_eq!(t.cart[(0, 0)], cq / 72.0, max_relative = 1e-14);
        assert_relative_eq!(t.cart[(1, 1)], -cq / 144.0, max_relative = 1e-14);
        assert_relative_eq!(t.cart[(2, 2)], -cq / 144.0, max_relative = 1e-14);
        let p = to_principal(
            &QuadrupoleTensor::new(Matrix3::from_diagonal(&Vector3::new(2.0, -1.0, -1.0))).unwrap(),
            4.5,
        );
        assert_eq!(p.eta, 0.0);
        assert!(!p.axes_unique);
        let z = from_principal(0.0, 0.4, [0.3, 0.2, 0.1], 4.5).unwrap();
        assert_eq!(z.cart, Matrix3::zeros());
        assert!(from_principal(1.0, 1.2, [0.0; 3], 4.5).is_err());
    }

    #[test]
    fn rejects_invalid_tensors() {
        assert!(QuadrupoleTensor::new(Matrix3::identity()).is_err());
        let mut m = Matrix3::zeros();
        m[(0, 1)] = 1.0;
        assert!(QuadrupoleTensor::new(m).is_err());
    }

    #[test]
    fn ground_fit_tensor() {
        let s = SphericalForm {
            s0: -237.3530e3,
            s1: 2.667e3,
            s2: 149.443e3,
            delta: -0.002,
            zeta: 0.0,
        };
        let t = from_spherical(&s);
        assert_eq!(t.cart[(2, 2)], s.s0);
        assert_relative_eq!(t.cart[(0, 2)], 2.667e3);
        assert_relative_eq!(t.cart[(1, 2)], 0.0);
        assert_relative_eq!(t.cart.trace(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn axial_spherical() {
        let s = SphericalForm {
            s0: 3.0,
            s1: 0.0,
            s2: 0.0,
            delta: 0.4,
            zeta: 1.0,
        };
        let t = from_spherical(&s);
        assert_eq!(t.cart, Matrix3::from_diagonal(&Vector3::new(-1.5, -1.5, 3.0)));
    }

    #[test]
    fn axial_hamiltonian_levels() {
        let t = QuadrupoleTensor::new(Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 2.0))).unwrap();
        let ev = eigvalsh(&quad_hamiltonian(&t, 4.5).unwrap()).unwrap();
        // 2Iz² − Ix² − Iy² = 3Iz² − I(I+1)
        let mut want: Vec<f64> = (0..10).map(|k| 4.5 - k as f64).map(|m| 3.0 * m * m - 24.75).collect();
        want.sort_by(f64::total_cmp);
        for (a, b) in ev.iter().zip(&want) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        let z = quad_hamiltonian(&QuadrupoleTensor::zero(), 4.5).unwrap();
        assert_eq!(z, CMat::zeros(10, 10));
    }

    #[test]
    fn ladder_construction_agrees() {
        let s = SphericalForm {
            s0: -237.299e3,
            s1: -4.36e3,
            s2: -149.435e3,
            delta: 1.39,
            zeta: -0.82,
        };
        let a = quad_hamiltonian(&from_spherical(&s), 4.5).unwrap();
        let b = quad_hamiltonian_ladder(&s, 4.5).unwrap();
        let diff = (&a - &b).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-9 * 237.3e3);
    }

    #[test]
    fn canonical_form_is_same_tensor() {
        let s = SphericalForm {
            s0: -237.299e3,
            s1: -4.36e3,
            s2: -149.435e3,
            delta: 1.39,
            zeta: -0.82,
        };
        let c = s.canonical();
        assert!(c.s1 > 0.0 && c.s2 > 0.0);
        let d = from_spherical(&s).cart - from_spherical(&c).cart;
        assert!(max_entry(&d) < 1e-9);
        let back = to_spherical(&from_spherical(&s), false);
        assert_relative_eq!(back.delta, c.delta, epsilon = 1e-12);
        assert_relative_eq!(back.zeta, c.zeta, epsilon = 1e-12);
    }

    #[test]
    fn euler_round_trip() {
        for e in [[0.3, 1.1, -2.0], [-2.5, 0.2, 0.7], [1.0, 3.0, 0.1]] {
            let r = euler_zyz(e);
            let back = euler_zyz(euler_from_matrix(&r));
            assert!(max_entry(&(r - back)) < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn principal_round_trip(v in prop::array::uniform5(-3e5f64..3e5)) {
            let t = random_traceless(v);
            let p = to_principal(&t, 4.5);
            prop_assume!(p.eta < 1.0 - 1e-9);
            let back = from_principal(p.cq.abs(), p.eta, p.euler, 4.5).unwrap();
            let back = if p.cq < 0.0 { QuadrupoleTensor { cart: -back.cart } } else { back };
            prop_assert!(max_entry(&(back.cart - t.cart)) < 1e-10 * max_entry(&t.cart));
        }

        #[test]
        fn spherical_round_trip(s0 in -3e5f64..3e5, s1 in 1.0f64..3e5, s2 in 1.0f64..3e5,
                                delta in -1.5f64..1.5, zeta in -3.0f64..3.0) {
            let s = SphericalForm { s0, s1, s2, delta, zeta };
            let t = from_spherical(&s);
            prop_assert!(t.cart.trace().abs() < 1e-9 * max_entry(&t.cart));
            prop_assert!(max_entry(&(t.cart - t.cart.transpose())) == 0.0);
            let b = to_spherical(&t, false);
            let tol = 1e-10 * max_entry(&t.cart);
            prop_assert!((b.s0 - s0).abs() < tol);
            prop_assert!((b.s1 - s1).abs() < tol);
            prop_assert!((b.s2 - s2).abs() < tol);
            prop_assert!((wrap_half_pi(b.delta - delta)).abs() < 1e-9);
            prop_assert!(max_entry(&(from_spherical(&b).cart - t.cart)) < tol);
        }

        #[test]
        fn zeta_rotation_invariance(v in prop::array::uniform5(-3e5f64..3e5), chi in -3.0f64..3.0) {
            let t = random_traceless(v);
            let s = to_spherical(&t, false);
            let r = SphericalForm { zeta: s.zeta + chi, ..s };
            let a = eigvalsh(&quad_hamiltonian(&t, 4.5).unwrap()).unwrap();
            let b = eigvalsh(&quad_hamiltonian(&from_spherical(&r), 4.5).unwrap()).unwrap();
            let norm = max_entry(&t.cart);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9 * norm * 25.0);
            }
        }
    }
}

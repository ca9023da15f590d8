//! Model assembly for the effective spin-1/2 ⊗ I = 9/2 system and the full
//! J = 15/2 crystal-field model.
//!
//! Basis: electron slot first, `m` descending, so rows `0..10` are `|↑, m_I⟩`
//! and rows `10..20` are `|↓, m_I⟩`. Every term is a linear frequency (Hz).

use std::collections::BTreeMap;
use std::sync::OnceLock;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::constants::{I_NB, MU_B_OVER_H};
use crate::error::{Error, Result};
use crate::operators::{eigh, eigvalsh, spin_operators, stevens_operator, CMat, SpinOps, C64};
use crate::quadrupole::{quad_hamiltonian_with, QuadrupoleTensor};

pub const NUC_DIM: usize = 10;

pub(crate) fn nuclear_ops() -> &'static SpinOps {
    static OPS: OnceLock<SpinOps> = OnceLock::new();
    OPS.get_or_init(|| spin_operators(I_NB).expect("9/2 is a valid spin"))
}

/// `I_a I_b` for the nuclear spin.
fn nuclear_products() -> &'static [[CMat; 3]; 3] {
    static P: OnceLock<[[CMat; 3]; 3]> = OnceLock::new();
    P.get_or_init(|| {
        let i = nuclear_ops().xyz();
        std::array::from_fn(|a| std::array::from_fn(|b| i[a] * i[b]))
    })
}

fn add_scaled(h: &mut CMat, m: &CMat, s: f64) {
    for (x, y) in h.iter_mut().zip(m.iter()) {
        *x += y * s;
    }
}

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Manifold {
    Down,
    Up,
}

impl Manifold {
    pub fn m_s(self) -> f64 {
        match self {
            Manifold::Down => -0.5,
            Manifold::Up => 0.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Manifold::Down => "down",
            Manifold::Up => "up",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase")]
pub enum Hyperfine {
    /// `S_z (A_par I_z + A_perp I_x)`.
    Secular { a_par: f64, a_perp: f64 },
    /// `Σ A_ij S_i I_j`, rows are electron components.
    Full { tensor: Matrix3<f64> },
}

impl Hyperfine {
    pub fn tensor(&self) -> Matrix3<f64> {
        match *self {
            Hyperfine::Secular { a_par, a_perp } => {
                let mut a = Matrix3::zeros();
                a[(2, 2)] = a_par;
                a[(2, 0)] = a_perp;
                a
            }
            Hyperfine::Full { tensor } => tensor,
        }
    }

    /// Same tensor with every entry outside the `S_z` row removed.
    pub fn secular_part(&self) -> Self {
        let mut t = self.tensor();
        for i in 0..2 {
            for j in 0..3 {
                t[(i, j)] = 0.0;
            }
        }
        Hyperfine::Full { tensor: t }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonatorParams {
    pub nu_r: f64,
    pub kappa: f64,
    pub g0: f64,
}

impl ResonatorParams {
    pub fn new(nu_r: f64, kappa: f64, g0: f64) -> Result<Self> {
        let r = Self { nu_r, kappa, g0 };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu_r > 0.0 && self.kappa > 0.0 && self.g0 > 0.0) {
            return Err(Error::InvalidInput("resonator parameters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveModelParams {
    pub nu_s: f64,
    /// Signed nuclear Larmor frequency, `−γ B`.
    pub nu_i: f64,
    pub hyperfine: Hyperfine,
    pub quad: QuadrupoleTensor,
    pub q_sdq: f64,
    pub c3: f64,
    pub c4: f64,
    pub resonator: Option<ResonatorParams>,
}

impl EffectiveModelParams {
    /// Zeeman-only model.
    pub fn bare(nu_s: f64, nu_i: f64) -> Self {
        Self {
            nu_s,
            nu_i,
            hyperfine: Hyperfine::Secular {
                a_par: 0.0,
                a_perp: 0.0,
            },
            quad: QuadrupoleTensor::zero(),
            q_sdq: 0.0,
            c3: 0.0,
            c4: 0.0,
            resonator: None,
        }
    }
}

/// `½(3I_z² − I(I+1))`.
pub fn sdq_operator(ops: &SpinOps) -> CMat {
    let x = ops.j * (ops.j + 1.0);
    (&ops.z * &ops.z * c(3.0) - &ops.id * c(x)) * c(0.5)
}

pub fn octupole_norm(spin: f64) -> f64 {
    spin * (2.0 * spin - 1.0) * (spin - 1.0)
}

pub fn hexadecapole_norm(spin: f64) -> f64 {
    octupole_norm(spin) * (2.0 * spin - 3.0)
}

fn diag_power(ops: &SpinOps, p: i32, scale: f64) -> CMat {
    CMat::from_diagonal(&ops.z.diagonal().map(|m| c(m.re.powi(p) * scale)))
}

/// Electron-independent part: nuclear Zeeman, quadrupole, octupole, hexadecapole.
pub fn nuclear_terms(nu_i: f64, quad: &QuadrupoleTensor, c3: f64, c4: f64) -> CMat {
    let ops = nuclear_ops();
    let prod = nuclear_products();
    let mut h = &ops.z * c(nu_i);
    for a in 0..3 {
        for b in 0..3 {
            let q = quad.cart[(a, b)];
            if q != 0.0 {
                add_scaled(&mut h, &prod[a][b], q);
            }
        }
    }
    if c3 != 0.0 {
        h += diag_power(ops, 3, c3 / octupole_norm(I_NB));
    }
    if c4 != 0.0 {
        h += diag_power(ops, 4, c4 / hexadecapole_norm(I_NB));
    }
    h
}

/// Diagonal block for one electron state. `vz = Σ_j A_zj I_j`.
fn manifold_block(p: &EffectiveModelParams, m_s: f64, vz: &CMat) -> CMat {
    let ops = nuclear_ops();
    let mut h = nuclear_terms(p.nu_i, &p.quad, p.c3, p.c4);
    h += &ops.id * c(m_s * p.nu_s);
    h += vz * c(m_s);
    if p.q_sdq != 0.0 {
        h += sdq_operator(ops) * c(m_s * p.q_sdq);
    }
    h
}

fn hyperfine_rows(a: &Matrix3<f64>) -> [CMat; 3] {
    let i = nuclear_ops().xyz();
    let row = |r: usize| {
        let mut v = CMat::zeros(NUC_DIM, NUC_DIM);
        for j in 0..3 {
            if a[(r, j)] != 0.0 {
                v += i[j] * c(a[(r, j)]);
            }
        }
        v
    };
    [row(0), row(1), row(2)]
}

/// 10×10 nuclear Hamiltonian with the electron frozen in `m`.
pub fn build_manifold(p: &EffectiveModelParams, m: Manifold) -> Result<CMat> {
    let Hyperfine::Secular { a_par, a_perp } = p.hyperfine else {
        return Err(Error::InvalidInput(
            "build_manifold needs the secular hyperfine pair".into(),
        ));
    };
    let ops = nuclear_ops();
    let vz = &ops.z * c(a_par) + &ops.x * c(a_perp);
    Ok(manifold_block(p, m.m_s(), &vz))
}

/// 20×20 Hamiltonian without the resonator term.
pub fn build_effective_bare(p: &EffectiveModelParams) -> CMat {
    let [vx, vy, vz] = hyperfine_rows(&p.hyperfine.tensor());
    let up = manifold_block(p, 0.5, &vz);
    let dn = manifold_block(p, -0.5, &vz);
    // <↑|S_x A_x + S_y A_y|↓> = ½(V_x − i V_y)
    let ud = (&vx - &vy * C64::new(0.0, 1.0)) * c(0.5);
    let mut h = CMat::zeros(2 * NUC_DIM, 2 * NUC_DIM);
    h.view_mut((0, 0), (NUC_DIM, NUC_DIM)).copy_from(&up);
    h.view_mut((NUC_DIM, NUC_DIM), (NUC_DIM, NUC_DIM)).copy_from(&dn);
    h.view_mut((0, NUC_DIM), (NUC_DIM, NUC_DIM)).copy_from(&ud);
    h.view_mut((NUC_DIM, 0), (NUC_DIM, NUC_DIM)).copy_from(&ud.adjoint());
    h
}

/// Full effective Hamiltonian. With a resonator the vacuum shift of each
/// `|↑, n⟩` eigenstate is added as `Σ Δν_n |↑,n⟩⟨↑,n|`.
pub fn build_effective(p: &EffectiveModelParams) -> Result<CMat> {
    let mut h = build_effective_bare(p);
    if let Some(r) = p.resonator {
        r.validate()?;
        let e = eigh(&h)?;
        let split = ManifoldSplit::from_eigh(&e)?;
        let shifts = lamb_shifts(&r, &split.epr());
        for (n, &k) in split.up.iter().enumerate() {
            let v = e.vectors.column(k);
            h += v * v.adjoint() * c(shifts[n]);
        }
    }
    Ok(h)
}

/// Eigen-indices of each manifold sorted by energy, assigned by `⟨S_z⟩`.
#[derive(Clone, Debug)]
pub struct ManifoldSplit {
    pub down: Vec<usize>,
    pub up: Vec<usize>,
    pub energies: Vec<f64>,
    pub sz: Vec<f64>,
    /// Some state had `|⟨S_z⟩| < 0.4`.
    pub ambiguous: bool,
}

impl ManifoldSplit {
    pub fn from_eigh(e: &crate::operators::Eigh) -> Result<Self> {
        let n = e.values.len();
        let half = n / 2;
        let sz: Vec<f64> = (0..n)
            .map(|k| {
                let col = e.vectors.column(k);
                let u: f64 = col.rows(0, half).iter().map(|z| z.norm_sqr()).sum();
                let d: f64 = col.rows(half, half).iter().map(|z| z.norm_sqr()).sum();
                0.5 * (u - d)
            })
            .collect();
        // rank by ⟨S_z⟩ so that each manifold gets exactly half of the states
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| sz[a].total_cmp(&sz[b]));
        let mut down: Vec<usize> = order[..half].to_vec();
        let mut up: Vec<usize> = order[half..].to_vec();
        down.sort_unstable();
        up.sort_unstable();
        let ambiguous = sz.iter().any(|s| s.abs() < 0.4);
        Ok(Self {
            down,
            up,
            energies: e.values.iter().copied().collect(),
            sz,
            ambiguous,
        })
    }

    pub fn down_energies(&self) -> Vec<f64> {
        self.down.iter().map(|&k| self.energies[k]).collect()
    }

    pub fn up_energies(&self) -> Vec<f64> {
        self.up.iter().map(|&k| self.energies[k]).collect()
    }

    /// `|E(↑,n) − E(↓,n)|`.
    pub fn epr(&self) -> Vec<f64> {
        self.up
            .iter()
            .zip(&self.down)
            .map(|(&u, &d)| (self.energies[u] - self.energies[d]).abs())
            .collect()
    }
}

/// `Δν_n = g0² Δ_n / (Δ_n² + κ²/4)` with `Δ_n = ν_r − ν_n`, all in Hz.
pub fn lamb_shifts(r: &ResonatorParams, epr: &[f64]) -> Vec<f64> {
    epr.iter()
        .map(|&nu| {
            let d = r.nu_r - nu;
            r.g0 * r.g0 * d / (d * d + r.kappa * r.kappa / 4.0)
        })
        .collect()
}

/// Per-manifold level energies, ascending, Lamb shift included.
#[derive(Clone, Debug, PartialEq)]
pub struct Levels {
    pub down: [f64; NUC_DIM],
    pub up: [f64; NUC_DIM],
}

impl Levels {
    pub fn nmr(&self, m: Manifold) -> [f64; NUC_DIM - 1] {
        let e = match m {
            Manifold::Down => &self.down,
            Manifold::Up => &self.up,
        };
        std::array::from_fn(|n| e[n + 1] - e[n])
    }
}

/// Eigenvalue-only level computation for fitting loops. The manifolds are
/// split by energy, which requires the electron splitting to dominate.
pub fn effective_levels(p: &EffectiveModelParams) -> Result<Levels> {
    let h = build_effective_bare(p);
    let w = eigvalsh(&h)?;
    let spread = w[NUC_DIM - 1] - w[0];
    if w[NUC_DIM] - w[NUC_DIM - 1] <= 0.0 || p.nu_s.abs() < 4.0 * spread {
        let e = eigh(&h)?;
        let s = ManifoldSplit::from_eigh(&e)?;
        return finish_levels(p, &s.down_energies(), &s.up_energies());
    }
    let (lo, hi) = w.split_at(NUC_DIM);
    if p.nu_s > 0.0 {
        finish_levels(p, lo, hi)
    } else {
        finish_levels(p, hi, lo)
    }
}

fn finish_levels(p: &EffectiveModelParams, dn: &[f64], up: &[f64]) -> Result<Levels> {
    let mut lv = Levels {
        down: dn
            .try_into()
            .map_err(|_| Error::InvalidInput("bad manifold size".into()))?,
        up: up
            .try_into()
            .map_err(|_| Error::InvalidInput("bad manifold size".into()))?,
    };
    if let Some(r) = p.resonator {
        let epr: Vec<f64> = (0..NUC_DIM).map(|n| (lv.up[n] - lv.down[n]).abs()).collect();
        for (u, s) in lv.up.iter_mut().zip(lamb_shifts(&r, &epr)) {
            *u += s;
        }
    }
    Ok(lv)
}

/// Unit vector along `γ·B`, the electron quantization axis.
pub fn quantization_axis(gamma_e: &Vector3<f64>, b: &Vector3<f64>) -> Result<Vector3<f64>> {
    let g = gamma_e.component_mul(b);
    let n = g.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::InvalidInput("zero or non-finite field".into()));
    }
    Ok(g / n)
}

fn orthonormal_x(axis: &Vector3<f64>, hint: &Vector3<f64>) -> Vector3<f64> {
    let mut x = hint - axis * axis.dot(hint);
    if x.norm() < 1e-9 {
        let alt = Vector3::new(0.0, 1.0, 0.0);
        x = alt - axis * axis.dot(&alt);
    }
    x.normalize()
}

/// Hyperfine tensor in the quantization frames: electron `z` along `γ·B`,
/// nuclear `z` along `B`, nuclear `x` along the transverse part of the
/// hyperfine field so that the `S_z I_y` entry vanishes.
pub fn quantization_frame_tensor(a: &Matrix3<f64>, gamma_e: &Vector3<f64>, b0: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let ne = quantization_axis(gamma_e, b0)?;
    let bn = b0.normalize();
    let xe = orthonormal_x(&ne, &Vector3::new(1.0, 0.0, 0.0));
    let ye = ne.cross(&xe);
    let v = a.transpose() * ne;
    let xn = orthonormal_x(&bn, &v);
    let yn = bn.cross(&xn);
    let re = Matrix3::from_columns(&[xe, ye, ne]);
    let rn = Matrix3::from_columns(&[xn, yn, bn]);
    Ok(re.transpose() * a * rn)
}

/// `(A_par, A_perp)` of a crystal-frame hyperfine tensor.
pub fn secular_projection(a: &Matrix3<f64>, gamma_e: &Vector3<f64>, b0: &Vector3<f64>) -> Result<(f64, f64)> {
    let t = quantization_frame_tensor(a, gamma_e, b0)?;
    Ok((t[(2, 2)], t[(2, 0)]))
}

/// Hilbert-Schmidt coefficient `⟨H, O⟩ / ⟨O, O⟩`.
pub fn hs_coefficient(h: &CMat, o: &CMat) -> f64 {
    let num: C64 = o.iter().zip(h.iter()).map(|(a, b)| a.conj() * b).sum();
    let den: f64 = o.iter().map(|a| a.norm_sqr()).sum();
    num.re / den
}

pub const J_ER: f64 = 7.5;

/// Crystal-field labels allowed under S4 site symmetry.
pub const S4_ALLOWED: [(i32, i32); 7] = [(2, 0), (4, 0), (6, 0), (4, 4), (4, -4), (6, 4), (6, -4)];

#[derive(Clone, Debug, PartialEq)]
pub struct FullJModelParams {
    pub b0_vec: Vector3<f64>,
    pub g_j: f64,
    pub bkq: BTreeMap<(i32, i32), f64>,
    /// Larmor frequency along `b̂`, signed.
    pub nu_i: f64,
    pub quad: QuadrupoleTensor,
    pub a_j: Matrix3<f64>,
    pub lambda: f64,
}

impl FullJModelParams {
    pub fn validate(&self) -> Result<()> {
        for &(k, q) in self.bkq.keys() {
            if !S4_ALLOWED.contains(&(k, q)) {
                return Err(Error::InvalidInput(format!(
                    "crystal-field term B{k}{q} is not allowed by S4 symmetry"
                )));
            }
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidInput("lambda must be non-negative".into()));
        }
        Ok(())
    }
}

fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Electronic part `g_J μ_B B·J + Σ B_kq O_kq` on the 16 J states.
pub fn crystal_field_hamiltonian(p: &FullJModelParams) -> Result<CMat> {
    p.validate()?;
    let j = spin_operators(J_ER)?;
    let mut h = CMat::zeros(j.dim(), j.dim());
    for (a, op) in j.xyz().into_iter().enumerate() {
        h += op * c(p.g_j * MU_B_OVER_H * p.b0_vec[a]);
    }
    for (&(k, q), &b) in &p.bkq {
        if b != 0.0 {
            h += stevens_operator(k, q, J_ER)? * c(b);
        }
    }
    Ok(h)
}

/// Nuclear Zeeman and quadrupole terms of the full-J model.
pub fn full_j_nuclear(p: &FullJModelParams) -> CMat {
    let i = nuclear_ops();
    let b = p.b0_vec.norm();
    let mut hn = quad_hamiltonian_with(&p.quad, i);
    if b > 0.0 {
        let bh = p.b0_vec / b;
        for (a, op) in i.xyz().into_iter().enumerate() {
            hn += op * c(p.nu_i * bh[a]);
        }
    }
    hn
}

/// `H_J ⊗ 1 + 1 ⊗ H_n + λ Σ A_ab J_a ⊗ I_b` with the electronic operators
/// supplied by the caller, so the same assembly works in any J basis.
pub fn assemble_full_j(p: &FullJModelParams, hj: &CMat, j_ops: [&CMat; 3]) -> CMat {
    let i = nuclear_ops();
    let id_j = CMat::identity(hj.nrows(), hj.ncols());
    let mut h = kron(hj, &i.id) + kron(&id_j, &full_j_nuclear(p));
    if p.lambda != 0.0 {
        for (a, ja) in j_ops.into_iter().enumerate() {
            for (bb, ib) in i.xyz().into_iter().enumerate() {
                let v = p.lambda * p.a_j[(a, bb)];
                if v != 0.0 {
                    h += kron(ja, ib) * c(v);
                }
            }
        }
    }
    h
}

/// 160×160 Hamiltonian on J = 15/2 ⊗ I = 9/2.
pub fn build_full_j(p: &FullJModelParams) -> Result<CMat> {
    let hj = crystal_field_hamiltonian(p)?;
    let j = spin_operators(J_ER)?;
    Ok(assemble_full_j(p, &hj, j.xyz()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::hermiticity_defect;
    use crate::quadrupole::{from_spherical, SphericalForm};
    use approx::assert_relative_eq;

    const GROUND: [f64; 9] = [
        7560562.0, 6894745.1, 6227459.8, 5557759.9, 4883861.9, 4202128.8, 3504133.1, 2774604.8, 1822491.2,
    ];

    fn max_abs(m: &CMat) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn gaps(h: &CMat) -> Vec<f64> {
        let w = eigvalsh(h).unwrap();
        w.windows(2).map(|p| p[1] - p[0]).collect()
    }

    #[test]
    fn zeeman_ladder() {
        let p = EffectiveModelParams::bare(7.7e9, -4.7e6);
        for m in [Manifold::Down, Manifold::Up] {
            for g in gaps(&build_manifold(&p, m).unwrap()) {
                assert_relative_eq!(g, 4.7e6, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn ground_fit_first_gap() {
        let mut p = EffectiveModelParams::bare(0.0, -10.4213e6 * 0.46054333);
        p.quad = from_spherical(&SphericalForm {
            s0: -237.3530e3,
            s1: 2.667e3,
            s2: 149.443e3,
            delta: -0.002,
            zeta: 0.0,
        });
        let g = gaps(&build_manifold(&p, Manifold::Down).unwrap());
        assert!((g[0] - GROUND[0]).abs() < 3.0, "{}", g[0] - GROUND[0]);
    }

    #[test]
    fn axial_middle_gap_has_no_quadrupole_shift() {
        let mut p = EffectiveModelParams::bare(7.7e9, -4.7e6);
        p.hyperfine = Hyperfine::Secular {
            a_par: 133.5e3,
            a_perp: 0.0,
        };
        p.quad = QuadrupoleTensor::new(Matrix3::from_diagonal(&Vector3::new(-1e5, -1e5, 2e5))).unwrap();
        for m in [Manifold::Down, Manifold::Up] {
            let g = gaps(&build_manifold(&p, m).unwrap());
            let want = (p.nu_i + m.m_s() * 133.5e3).abs();
            assert_relative_eq!(g[4], want, max_relative = 1e-12);
        }
    }

    #[test]
    fn secular_model_block_diagonal() {
        let mut p = EffectiveModelParams::bare(7.7e9, -4.7e6);
        p.hyperfine = Hyperfine::Secular {
            a_par: 133.5e3,
            a_perp: 55e3,
        };
        p.quad = from_spherical(&SphericalForm {
            s0: -237.299e3,
            s1: -4.36e3,
            s2: -149.435e3,
            delta: 1.39,
            zeta: -0.82,
        });
        p.q_sdq = 66.0;
        p.c4 = 9.6;
        let h = build_effective(&p).unwrap();
        assert_eq!(max_abs(&h.view((0, 10), (10, 10)).into_owned()), 0.0);
        assert_eq!(h.view((0, 0), (10, 10)), build_manifold(&p, Manifold::Up).unwrap());
        assert_eq!(h.view((10, 10), (10, 10)), build_manifold(&p, Manifold::Down).unwrap());
        assert!(hermiticity_defect(&h) < 1e-12);
    }

    #[test]
    fn lamb_shift_values() {
        let r = ResonatorParams::new(7.7492e9, 740e3, 9.3e3).unwrap();
        let s = lamb_shifts(&r, &[7.7492e9, 7.7492e9 - 370e3, 7.7492e9 - 2e6]);
        assert_eq!(s[0], 0.0);
        assert_relative_eq!(s[1], 9.3e3 * 9.3e3 / 740e3, max_relative = 1e-12);
        assert_relative_eq!(s[2], 41.8, max_relative = 1e-3);
        assert!(ResonatorParams::new(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn hs_projection_matches_tensor_entries() {
        let a = Matrix3::new(10.0, -3.0, 2.0, 4.0, 7.0, -1.0, 5.0, 6.0, 133.0);
        let gamma = Vector3::new(-117.3e9, -117.3e9, -17.45e9);
        let b = Vector3::new(0.01, -0.008, 0.45);
        let t = quantization_frame_tensor(&a, &gamma, &b).unwrap();
        assert!(t[(2, 1)].abs() < 1e-12 * 133.0);
        // rebuild S·A'·I in the quantization frame and project
        let s = spin_operators(0.5).unwrap();
        let i = nuclear_ops();
        let mut h = CMat::zeros(20, 20);
        for (p, sp) in s.xyz().into_iter().enumerate() {
            for (q, iq) in i.xyz().into_iter().enumerate() {
                h += kron(sp, iq) * c(t[(p, q)]);
            }
        }
        let (a_par, a_perp) = secular_projection(&a, &gamma, &b).unwrap();
        assert_relative_eq!(hs_coefficient(&h, &kron(&s.z, &i.z)), a_par, max_relative = 1e-12);
        assert_relative_eq!(hs_coefficient(&h, &kron(&s.z, &i.x)), a_perp, max_relative = 1e-12);
        assert!(hs_coefficient(&h, &kron(&s.z, &i.y)).abs() < 1e-12 * 133.0);
        let d = Matrix3::from_diagonal(&Vector3::new(1.0, 2.0, 3.0));
        let (ap, _) = secular_projection(&d, &Vector3::repeat(1.0), &Vector3::z()).unwrap();
        assert_eq!(ap, 3.0);
        assert!(secular_projection(&d, &gamma, &Vector3::zeros()).is_err());
    }

    #[test]
    fn full_j_validation_and_degeneracy() {
        let mut p = FullJModelParams {
            b0_vec: Vector3::zeros(),
            g_j: 1.2,
            bkq: BTreeMap::new(),
            nu_i: 0.0,
            quad: QuadrupoleTensor::zero(),
            a_j: Matrix3::zeros(),
            lambda: 0.0,
        };
        let h = build_full_j(&p).unwrap();
        assert_eq!(h.nrows(), 160);
        assert_eq!(max_abs(&h), 0.0);
        p.bkq.insert((4, 2), 1.0);
        assert!(build_full_j(&p).is_err());
        p.bkq.clear();
        p.lambda = -1.0;
        assert!(build_full_j(&p).is_err());
    }
}

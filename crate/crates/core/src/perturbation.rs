//! First-order perturbation theory for the transverse hyperfine and
//! off-diagonal quadrupole terms, with the reduced quadrupole parameters.
//!
//! Unperturbed: `ω_S S_z + ω_I I_z + A_par S_z I_z + ω'_Q/2 I_z²`.
//! Perturbation: `A_perp S_z I_x` and the `I±²` quadrupole terms.
//! Analytic formulas label states by `m_I = 9/2 − n`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::I_NB;
use crate::error::{Error, Result};
use crate::hamiltonian::{Manifold, NUC_DIM};
use crate::operators::C64;
use crate::quadrupole::{norm_factor, SphericalForm};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedQuadParams {
    pub omega_q_prime: f64,
    pub eta_prime: f64,
    pub alpha: f64,
}

/// Reduced parameters from the principal form as printed:
/// `ω'_Q = −((η+1)/2)·3Cq/(2I(2I−1))`, `η' = (η−3)/(1+η)`, `α = α_hf − α_Q`.
pub fn reduced_params(cq: f64, eta: f64, alpha_q: f64, alpha_hf: f64) -> Result<ReducedQuadParams> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidInput(format!("eta = {eta} outside [0, 1]")));
    }
    Ok(ReducedQuadParams {
        omega_q_prime: -((eta + 1.0) / 2.0) * 3.0 * cq * 2.0 / norm_factor(I_NB),
        eta_prime: (eta - 3.0) / (1.0 + eta),
        alpha: alpha_hf - alpha_q,
    })
}

/// Reduced parameters read off a spherical tensor in the quantization frame:
/// `ω'_Q = 3 S0`, `ω'_Q η'/12 = S2/2`, `2α = 2ζ + 2Δ`.
pub fn reduced_from_spherical(s: &SphericalForm) -> ReducedQuadParams {
    let wq = 3.0 * s.s0;
    ReducedQuadParams {
        omega_q_prime: wq,
        eta_prime: if wq != 0.0 { 6.0 * s.s2 / wq } else { 0.0 },
        alpha: s.zeta + s.delta,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationModel {
    pub nu_i: f64,
    pub a_par: f64,
    pub a_perp: f64,
    pub reduced: ReducedQuadParams,
}

/// `C±_m = √(I(I+1) − m(m±1))` and `D±_m = C±_m C±_{m±1}`, zero off the ladder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderCoeffs {
    pub c_plus: f64,
    pub c_minus: f64,
    pub d_plus: f64,
    pub d_minus: f64,
}

fn c_pm(i: f64, m: f64, s: f64) -> f64 {
    let t = m + s;
    if t > i + 1e-9 || t < -i - 1e-9 || m.abs() > i + 1e-9 {
        return 0.0;
    }
    (i * (i + 1.0) - m * (m + s)).max(0.0).sqrt()
}

pub fn ladder_coeffs(i: f64, m: f64) -> Result<LadderCoeffs> {
    if m.abs() > i + 1e-9 {
        return Err(Error::InvalidInput(format!("|m| = {} exceeds I = {i}", m.abs())));
    }
    let cp = c_pm(i, m, 1.0);
    let cm = c_pm(i, m, -1.0);
    Ok(LadderCoeffs {
        c_plus: cp,
        c_minus: cm,
        d_plus: cp * c_pm(i, m + 1.0, 1.0),
        d_minus: cm * c_pm(i, m - 1.0, -1.0),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mixing {
    pub m_plus1: f64,
    pub m_minus1: f64,
    pub m_plus2: C64,
    pub m_minus2: C64,
    /// All magnitudes below 0.3.
    pub valid: bool,
}

const CROSSING_GUARD: f64 = 1e3;

fn guarded(den: f64) -> Result<f64> {
    if den.abs() < CROSSING_GUARD {
        return Err(Error::InvalidInput(format!(
            "level crossing: perturbative denominator {den:.3e} Hz"
        )));
    }
    Ok(den)
}

pub fn mixing_coefficients(p: &PerturbationModel, m_s: Manifold, m: f64) -> Result<Mixing> {
    let ms = m_s.m_s();
    let lc = ladder_coeffs(I_NB, m)?;
    let wq = p.reduced.omega_q_prime;
    let base = p.nu_i + p.a_par * ms;
    let k2 = wq * p.reduced.eta_prime / 12.0;
    let mut out = Mixing {
        m_plus1: 0.0,
        m_minus1: 0.0,
        m_plus2: C64::new(0.0, 0.0),
        m_minus2: C64::new(0.0, 0.0),
        valid: true,
    };
    if lc.c_plus > 0.0 {
        out.m_plus1 = -lc.c_plus * p.a_perp * ms / 2.0 / guarded(base + wq * (m + 0.5))?;
    }
    if lc.c_minus > 0.0 {
        out.m_minus1 = lc.c_minus * p.a_perp * ms / 2.0 / guarded(base + wq * (m - 0.5))?;
    }
    if lc.d_plus > 0.0 {
        out.m_plus2 =
            -C64::from_polar(1.0, -2.0 * p.reduced.alpha) * lc.d_plus * k2 / (2.0 * guarded(base + wq * (m + 1.0))?);
    }
    if lc.d_minus > 0.0 {
        out.m_minus2 =
            C64::from_polar(1.0, 2.0 * p.reduced.alpha) * lc.d_minus * k2 / (2.0 * guarded(base + wq * (m - 1.0))?);
    }
    out.valid = [
        out.m_plus1.abs(),
        out.m_minus1.abs(),
        out.m_plus2.norm(),
        out.m_minus2.norm(),
    ]
    .iter()
    .all(|&x| x < 0.3);
    Ok(out)
}

/// Normalized first-order nuclear state, `m` descending basis.
pub fn perturbed_state(p: &PerturbationModel, m_s: Manifold, m: f64) -> Result<[C64; NUC_DIM]> {
    let mix = mixing_coefficients(p, m_s, m)?;
    let idx = |mm: f64| ((I_NB - mm).round() as i64).clamp(-1, NUC_DIM as i64);
    let mut v = [C64::new(0.0, 0.0); NUC_DIM];
    let mut put = |mm: f64, z: C64| {
        let k = idx(mm);
        if (0..NUC_DIM as i64).contains(&k) {
            v[k as usize] += z;
        }
    };
    put(m, C64::new(1.0, 0.0));
    put(m + 1.0, C64::new(mix.m_plus1, 0.0));
    put(m - 1.0, C64::new(mix.m_minus1, 0.0));
    put(m + 2.0, mix.m_plus2);
    put(m - 2.0, mix.m_minus2);
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    for z in v.iter_mut() {
        *z /= norm;
    }
    Ok(v)
}

/// `⟨↓,n_down|S_x|↑,n_up⟩ = ½⟨χ↓|χ↑⟩` from the perturbed states.
pub fn perturbed_element(p: &PerturbationModel, n_down: usize, n_up: usize) -> Result<C64> {
    let a = perturbed_state(p, Manifold::Down, I_NB - n_down as f64)?;
    let b = perturbed_state(p, Manifold::Up, I_NB - n_up as f64)?;
    Ok(a.iter().zip(&b).map(|(x, y)| x.conj() * y).sum::<C64>() * 0.5)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxElements {
    pub diag: f64,
    /// `⟨↓,n+1|S_x|↑,n⟩`.
    pub plus: Option<f64>,
    /// `⟨↓,n−1|S_x|↑,n⟩`.
    pub minus: Option<f64>,
}

/// Closed-form off-diagonal elements:
/// `⟨↓,n+1|S_x|↑,n⟩ ≈ ¼ A_perp C⁻_m / (ω_I + ω'_Q(m − ½))`,
/// `⟨↓,n−1|S_x|↑,n⟩ ≈ −¼ A_perp C⁺_m / (ω_I + ω'_Q(m + ½))`.
pub fn approx_elements(p: &PerturbationModel, n: usize) -> Result<ApproxElements> {
    if n >= NUC_DIM {
        return Err(Error::InvalidInput(format!("n = {n} out of range")));
    }
    let m = I_NB - n as f64;
    let lc = ladder_coeffs(I_NB, m)?;
    let wq = p.reduced.omega_q_prime;
    let plus = if n + 1 < NUC_DIM {
        Some(0.25 * p.a_perp * lc.c_minus / guarded(p.nu_i + wq * (m - 0.5))?)
    } else {
        None
    };
    let minus = if n > 0 {
        Some(-0.25 * p.a_perp * lc.c_plus / guarded(p.nu_i + wq * (m + 0.5))?)
    } else {
        None
    };
    Ok(ApproxElements { diag: 0.5, plus, minus })
}

/// `C` entering the DQ and Raman formulas for the pair `(n, n+1)`.
pub fn pair_coefficient(n: usize) -> f64 {
    c_pm(I_NB, I_NB - n as f64, -1.0)
}

/// `A_perp` from a measured DQ Rabi frequency, inverting
/// `Ω = A_perp C Ω_e / (2α (ω_I + ω'_Q(m − ½))) · filter`.
pub fn a_perp_from_sideband(omega: f64, n: usize, alpha: f64, omega_e: f64, filter: f64, p: &PerturbationModel) -> f64 {
    let m = I_NB - n as f64;
    let den = (p.nu_i + p.reduced.omega_q_prime * (m - 0.5)).abs();
    omega * 2.0 * alpha * den / (pair_coefficient(n) * omega_e * filter)
}

/// `A_perp = Ω_Ram / C · ω² / (Ω_A Ω_B)`.
pub fn a_perp_from_raman(omega_ram: f64, n: usize, omega_a: f64, omega_b: f64, omega_nmr: f64) -> f64 {
    omega_ram.abs() / pair_coefficient(n) * omega_nmr * omega_nmr / (omega_a * omega_b).abs()
}

/// Principal-axis azimuth relative to the crystal `a` axis, for `α_Q`.
pub fn azimuth(x: f64, y: f64) -> f64 {
    y.atan2(x).rem_euclid(PI)
}

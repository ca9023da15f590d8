//! Labeled levels, transition classes, rates and pulse-sequence signals.
//!
//! Class naming: DQ is `|↓,n+1⟩ ↔ |↑,n⟩`, ZQ is `|↓,n⟩ ↔ |↑,n+1⟩`.
//! Rates are returned in s⁻¹ from linear-frequency inputs:
//! `Γ = 2π κ g0² / (κ²/4 + Δ²)`, i.e. `4 g0²/κ` on resonance in angular units.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{
    build_effective_bare, lamb_shifts, nuclear_ops, EffectiveModelParams, Manifold, ManifoldSplit, NUC_DIM,
};
use crate::operators::{eigh, C64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub manifold: Manifold,
    pub n: usize,
    pub energy_hz: f64,
    pub sz: f64,
    /// `m_I` with the largest weight in this state.
    pub dominant_m: f64,
    pub dominant_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionTable {
    pub levels: Vec<Level>,
    pub epr: Vec<f64>,
    pub nmr_down: Vec<f64>,
    pub nmr_up: Vec<f64>,
    /// `E(↑,n+1) − E(↓,n)`.
    pub zq: Vec<f64>,
    /// `E(↑,n) − E(↓,n+1)`.
    pub dq: Vec<f64>,
    /// `|⟨↓,i|S_x|↑,j⟩|` indexed `[i][j]`.
    pub sx: Vec<Vec<f64>>,
    /// `|⟨n|I_x|n+1⟩|` per manifold.
    pub ix_down: Vec<f64>,
    pub ix_up: Vec<f64>,
    pub ambiguous: bool,
}

impl TransitionTable {
    pub fn sx(&self, down: usize, up: usize) -> f64 {
        self.sx[down][up]
    }

    pub fn level(&self, m: Manifold, n: usize) -> &Level {
        match m {
            Manifold::Down => &self.levels[n],
            Manifold::Up => &self.levels[NUC_DIM + n],
        }
    }

    pub fn energy(&self, m: Manifold, n: usize) -> f64 {
        self.level(m, n).energy_hz
    }

    /// `(class, n, frequency, element)` rows.
    pub fn rows(&self) -> Vec<(&'static str, usize, f64, f64)> {
        let mut out = Vec::new();
        for n in 0..NUC_DIM {
            out.push(("epr", n, self.epr[n], self.sx(n, n)));
        }
        for n in 0..NUC_DIM - 1 {
            out.push(("nmr_down", n, self.nmr_down[n], self.ix_down[n]));
        }
        for n in 0..NUC_DIM - 1 {
            out.push(("nmr_up", n, self.nmr_up[n], self.ix_up[n]));
        }
        for n in 0..NUC_DIM - 1 {
            out.push(("zq", n, self.zq[n], self.sx(n, n + 1)));
        }
        for n in 0..NUC_DIM - 1 {
            out.push(("dq", n, self.dq[n], self.sx(n + 1, n)));
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["class", "n", "frequency_hz", "element"])?;
        for (class, n, f, e) in self.rows() {
            wr.write_record([class.to_string(), n.to_string(), fmt17(f), fmt17(e)])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Diagonalize, label and tabulate every transition class.
pub fn transitions(p: &EffectiveModelParams) -> Result<TransitionTable> {
    let h = build_effective_bare(p);
    let e = eigh(&h)?;
    let split = ManifoldSplit::from_eigh(&e)?;
    let dn_e = split.down_energies();
    let mut up_e = split.up_energies();
    if let Some(r) = p.resonator {
        r.validate()?;
        for (u, s) in up_e.iter_mut().zip(lamb_shifts(&r, &split.epr())) {
            *u += s;
        }
    }

    let v = &e.vectors;
    let top = |k: usize| v.column(k).rows(0, NUC_DIM).into_owned();
    let bot = |k: usize| v.column(k).rows(NUC_DIM, NUC_DIM).into_owned();
    let mut levels = Vec::with_capacity(2 * NUC_DIM);
    for (m, idx, en) in [(Manifold::Down, &split.down, &dn_e), (Manifold::Up, &split.up, &up_e)] {
        for (n, &k) in idx.iter().enumerate() {
            let col = v.column(k);
            let mut w = [0.0; NUC_DIM];
            for (j, wj) in w.iter_mut().enumerate() {
                *wj = col[j].norm_sqr() + col[j + NUC_DIM].norm_sqr();
            }
            let (jmax, wmax) = w
                .iter()
                .enumerate()
                .fold((0, -1.0), |acc, (j, &x)| if x > acc.1 { (j, x) } else { acc });
            levels.push(Level {
                manifold: m,
                n,
                energy_hz: en[n],
                sz: split.sz[k],
                dominant_m: 4.5 - jmax as f64,
                dominant_weight: wmax,
            });
        }
    }

    // ⟨a|S_x|b⟩ = ½(a_top† b_bot + a_bot† b_top)
    let mut sx = vec![vec![0.0; NUC_DIM]; NUC_DIM];
    for (i, &di) in split.down.iter().enumerate() {
        for (j, &uj) in split.up.iter().enumerate() {
            let z: C64 = top(di).dotc(&bot(uj)) + bot(di).dotc(&top(uj));
            sx[i][j] = 0.5 * z.norm();
        }
    }
    let ix = nuclear_ops().x.clone();
    let ix_elem = |a: usize, b: usize| -> f64 {
        let z = top(a).dotc(&(&ix * top(b))) + bot(a).dotc(&(&ix * bot(b)));
        z.norm()
    };
    let ix_down = (0..NUC_DIM - 1)
        .map(|n| ix_elem(split.down[n], split.down[n + 1]))
        .collect();
    let ix_up = (0..NUC_DIM - 1)
        .map(|n| ix_elem(split.up[n], split.up[n + 1]))
        .collect();

    let epr = (0..NUC_DIM).map(|n| up_e[n] - dn_e[n]).collect();
    let nmr_down = dn_e.windows(2).map(|w| w[1] - w[0]).collect();
    let nmr_up = up_e.windows(2).map(|w| w[1] - w[0]).collect();
    let zq = (0..NUC_DIM - 1).map(|n| up_e[n + 1] - dn_e[n]).collect();
    let dq = (0..NUC_DIM - 1).map(|n| up_e[n] - dn_e[n + 1]).collect();
    Ok(TransitionTable {
        levels,
        epr,
        nmr_down,
        nmr_up,
        zq,
        dq,
        sx,
        ix_down,
        ix_up,
        ambiguous: split.ambiguous,
    })
}

/// Purcell rate in s⁻¹ of a transition at `nu` (Hz).
pub fn purcell_rate(r: &crate::hamiltonian::ResonatorParams, nu: f64) -> f64 {
    let d = r.nu_r - nu;
    2.0 * PI * r.kappa * r.g0 * r.g0 / (r.kappa * r.kappa / 4.0 + d * d)
}

/// Coupling from a measured on-resonance `T1`: `g0 = √(2πκ / (4 T1)) / 2π`.
pub fn g0_from_t1(kappa: f64, t1: f64) -> f64 {
    (2.0 * PI * kappa / (4.0 * t1)).sqrt() / (2.0 * PI)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossRelaxation {
    pub n: usize,
    /// Nuclear step `i`, target `|↓, n+i⟩`.
    pub step: i32,
    pub frequency_hz: f64,
    pub rate: f64,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurcellRates {
    /// Direct `|↑,n⟩ → |↓,n⟩` rate.
    pub direct: Vec<f64>,
    pub total: Vec<f64>,
    pub cross: Vec<CrossRelaxation>,
}

impl PurcellRates {
    pub fn probability(&self, n: usize, step: i32) -> Option<f64> {
        self.cross
            .iter()
            .find(|c| c.n == n && c.step == step)
            .map(|c| c.probability)
    }
}

pub fn purcell_rates(r: &crate::hamiltonian::ResonatorParams, t: &TransitionTable) -> PurcellRates {
    let mut direct = Vec::new();
    let mut total = Vec::new();
    let mut cross = Vec::new();
    for n in 0..NUC_DIM {
        let g = purcell_rate(r, t.epr[n]);
        let d2 = t.sx(n, n).powi(2);
        let mut sum = g;
        let mut here = Vec::new();
        for step in [-1i32, 1] {
            let k = n as i32 + step;
            if !(0..NUC_DIM as i32).contains(&k) {
                continue;
            }
            let k = k as usize;
            let f = t.energy(Manifold::Up, n) - t.energy(Manifold::Down, k);
            let rate = purcell_rate(r, f) * t.sx(k, n).powi(2) / d2;
            sum += rate;
            here.push((step, f, rate));
        }
        for (step, f, rate) in here {
            cross.push(CrossRelaxation {
                n,
                step,
                frequency_hz: f,
                rate,
                probability: rate / sum,
            });
        }
        direct.push(g);
        total.push(sum);
    }
    PurcellRates { direct, total, cross }
}

/// Resonator amplitude filter `1/√(1 + 4(ν_r − ν)²/κ²)`.
pub fn resonator_filter(r: &crate::hamiltonian::ResonatorParams, nu: f64) -> f64 {
    let d = r.nu_r - nu;
    1.0 / (1.0 + 4.0 * d * d / (r.kappa * r.kappa)).sqrt()
}

/// Double-quantum Rabi frequency on `|↓,n+1⟩ ↔ |↑,n⟩`.
pub fn sideband_rabi(
    n: usize,
    alpha: f64,
    omega_e: f64,
    r: &crate::hamiltonian::ResonatorParams,
    t: &TransitionTable,
) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidInput("drive scale must be positive".into()));
    }
    if n + 1 >= NUC_DIM {
        return Err(Error::InvalidInput(format!("no DQ transition for n = {n}")));
    }
    Ok(omega_e / alpha * 2.0 * t.sx(n + 1, n) * resonator_filter(r, t.dq[n]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RamanRabi {
    pub total: f64,
    pub path1: f64,
    pub path2: f64,
    /// A path denominator sits within the guard of a pole.
    pub near_pole: bool,
}

/// Two-path stimulated Raman Rabi frequency between `|↓,n⟩` and `|↓,n+1⟩`.
/// `delta` is the detuning of the first drive from the `n` EPR line and
/// `guard` the minimum allowed distance to either pole (Hz).
///
/// Paths run through `|↑,n⟩` (detuning `Δ`) and `|↑,n+1⟩`
/// (detuning `Δ + ω↑_{n,n+1}`); path amplitudes are normalized by the
/// respective EPR elements and keep their relative sign, so the returned
/// components are signed and `total = path1 + path2`.
pub fn raman_rabi(
    n: usize,
    omega_a: f64,
    omega_b: f64,
    delta: f64,
    guard: f64,
    t: &TransitionTable,
    p: &EffectiveModelParams,
) -> Result<RamanRabi> {
    if n + 1 >= NUC_DIM {
        return Err(Error::InvalidInput(format!("no Raman pair for n = {n}")));
    }
    if omega_a == 0.0 || omega_b == 0.0 {
        return Err(Error::InvalidInput("Raman drives must be non-zero".into()));
    }
    let w_up = t.nmr_up[n];
    let d2 = delta + w_up;
    if delta == 0.0 || d2 == 0.0 {
        return Err(Error::InvalidInput("Raman detuning on a pole".into()));
    }
    let amp = signed_raman_amplitudes(p, n)?;
    let path1 = omega_a * omega_b / (2.0 * delta) * amp.0;
    let path2 = omega_a * omega_b / (2.0 * d2) * amp.1;
    Ok(RamanRabi {
        total: path1 + path2,
        path1,
        path2,
        near_pole: delta.abs() < guard || d2.abs() < guard,
    })
}

/// Gauge-invariant path weights
/// `⟨↓,n+1|S_x|↑,k⟩⟨↑,k|S_x|↓,n⟩ / |⟨↑,k|S_x|↓,k⟩|²` for `k = n, n+1`,
/// rotated by the common phase so that the first is real.
fn signed_raman_amplitudes(p: &EffectiveModelParams, n: usize) -> Result<(f64, f64)> {
    let h = build_effective_bare(p);
    let e = eigh(&h)?;
    let s = ManifoldSplit::from_eigh(&e)?;
    let v = &e.vectors;
    let el = |a: usize, b: usize| -> C64 {
        let ca = v.column(a);
        let cb = v.column(b);
        let top_a = ca.rows(0, NUC_DIM);
        let bot_a = ca.rows(NUC_DIM, NUC_DIM);
        let top_b = cb.rows(0, NUC_DIM);
        let bot_b = cb.rows(NUC_DIM, NUC_DIM);
        (top_a.dotc(&bot_b) + bot_a.dotc(&top_b)) * 0.5
    };
    let (d0, d1) = (s.down[n], s.down[n + 1]);
    let (u0, u1) = (s.up[n], s.up[n + 1]);
    let w1 = el(d1, u0) * el(u0, d0) / el(u0, d0).norm_sqr();
    let w2 = el(d1, u1) * el(u1, d0) / el(u1, d1).norm_sqr();
    let phase = if w1.norm() > 0.0 {
        w1.conj() / w1.norm()
    } else if w2.norm() > 0.0 {
        w2.conj() / w2.norm()
    } else {
        C64::new(1.0, 0.0)
    };
    Ok(((w1 * phase).re, (w2 * phase).re))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Ramsey,
    ExcitedRamsey,
    HahnEcho,
    CorrelatedEcho,
}

impl SignalKind {
    pub fn default_shape(self) -> DecayShape {
        match self {
            SignalKind::Ramsey => DecayShape::Gaussian,
            _ => DecayShape::Exponential,
        }
    }
}

impl std::str::FromStr for SignalKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ramsey" => SignalKind::Ramsey,
            "excited_ramsey" => SignalKind::ExcitedRamsey,
            "hahn_echo" => SignalKind::HahnEcho,
            "correlated_echo" => SignalKind::CorrelatedEcho,
            _ => return Err(Error::InvalidInput(format!("unknown signal kind '{s}'"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayShape {
    Gaussian,
    Exponential,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decay {
    pub time: f64,
    pub shape: DecayShape,
}

impl Decay {
    pub fn envelope(&self, tau: f64) -> f64 {
        match self.shape {
            DecayShape::None => 1.0,
            DecayShape::Exponential => (-tau / self.time).exp(),
            DecayShape::Gaussian => (-(tau / self.time).powi(2)).exp(),
        }
    }
}

/// `P(τ) = ½[1 + e(τ) cos(2π(f + ν_IF)τ)]`.
pub fn signal_probability(freq: f64, nu_if: f64, decay: &Decay, tau: &[f64]) -> Result<Vec<f64>> {
    if tau.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("delay grid must be ascending".into()));
    }
    Ok(tau
        .iter()
        .map(|&t| 0.5 * (1.0 + decay.envelope(t) * (2.0 * PI * (freq + nu_if) * t).cos()))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalCurve {
    pub kind: SignalKind,
    pub tau: Vec<f64>,
    pub probability: Vec<f64>,
    pub counts: Option<Vec<u64>>,
    pub seed: Option<u64>,
}

/// Signal for a pulse sequence, optionally with Poisson counts of mean
/// `mean_counts · P(τ)`.
pub fn signal_curves(
    kind: SignalKind,
    freq: f64,
    decay: Decay,
    nu_if: f64,
    tau: &[f64],
    counts: Option<(f64, u64)>,
) -> Result<SignalCurve> {
    let probability = signal_probability(freq, nu_if, &decay, tau)?;
    let (counts, seed) = match counts {
        Some((mean, seed)) => (Some(poisson_counts(&probability, mean, seed)?), Some(seed)),
        None => (None, None),
    };
    Ok(SignalCurve {
        kind,
        tau: tau.to_vec(),
        probability,
        counts,
        seed,
    })
}

pub fn poisson_counts(prob: &[f64], mean: f64, seed: u64) -> Result<Vec<u64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    prob.iter()
        .map(|&p| {
            let lam = mean * p;
            if lam <= 0.0 {
                return Ok(0);
            }
            let d = Poisson::new(lam).map_err(|e| Error::InvalidInput(e.to_string()))?;
            Ok(d.sample(&mut rng) as u64)
        })
        .collect()
}

/// `Δν_n = ν↓_{n+1,n+2} − ν↓_{n,n+1}`.
pub fn differential_frequencies(t: &TransitionTable) -> Vec<f64> {
    differences(&t.nmr_down)
}

pub fn differences(v: &[f64]) -> Vec<f64> {
    v.windows(2).map(|w| w[1] - w[0]).collect()
}

/// `n × n` magnitude matrix as nalgebra, for callers doing linear algebra.
pub fn sx_matrix(t: &TransitionTable) -> DMatrix<f64> {
    DMatrix::from_fn(NUC_DIM, NUC_DIM, |i, j| t.sx[i][j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{Hyperfine, ResonatorParams};
    use crate::quadrupole::{from_spherical, QuadrupoleTensor, SphericalForm};
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3, Vector3};

    fn measured_like() -> EffectiveModelParams {
        let mut p = EffectiveModelParams::bare(7.7492e9 - 4.5 * 133.5e3, -10.4213e6 * 0.454129);
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
        p
    }

    #[test]
    fn zeeman_only_table() {
        let p = EffectiveModelParams::bare(7.7e9, -4.7e6);
        let t = transitions(&p).unwrap();
        for f in &t.epr {
            assert_relative_eq!(*f, 7.7e9, max_relative = 1e-12);
        }
        for f in t.nmr_down.iter().chain(&t.nmr_up) {
            assert_relative_eq!(*f, 4.7e6, max_relative = 1e-9);
        }
        assert!(differential_frequencies(&t).iter().all(|d| d.abs() < 1e-6));
        assert!(!t.ambiguous);
        assert_eq!(t.level(Manifold::Down, 0).dominant_m, 4.5);
    }

    #[test]
    fn axial_ladder_constant_anharmonicity() {
        let mut p = EffectiveModelParams::bare(7.7e9, -4.7e6);
        let q = 2e4;
        p.quad = QuadrupoleTensor::new(Matrix3::from_diagonal(&Vector3::new(-q / 2.0, -q / 2.0, q))).unwrap();
        let t = transitions(&p).unwrap();
        // 3q/2 m² up to a constant
        for d in differential_frequencies(&t) {
            assert_relative_eq!(d, 3.0 * q, max_relative = 1e-8);
        }
    }

    #[test]
    fn epr_spacing_is_a_par_without_transverse_terms() {
        let mut p = EffectiveModelParams::bare(7.7e9, -4.7e6);
        p.hyperfine = Hyperfine::Secular {
            a_par: 133.5e3,
            a_perp: 0.0,
        };
        let t = transitions(&p).unwrap();
        for w in t.epr.windows(2) {
            assert_relative_eq!(w[0] - w[1], 133.5e3, max_relative = 1e-7);
        }
        assert_eq!(t.sx(1, 0), 0.0);
    }

    #[test]
    fn lamb_shift_leaves_ground_untouched() {
        let mut p = measured_like();
        let a = transitions(&p).unwrap();
        p.resonator = Some(ResonatorParams::new(7.7492e9, 740e3, 9.3e3).unwrap());
        let b = transitions(&p).unwrap();
        assert_eq!(a.nmr_down, b.nmr_down);
        assert!(a.nmr_up.iter().zip(&b.nmr_up).any(|(x, y)| (x - y).abs() > 0.1));
    }

    #[test]
    fn excited_minus_ground_first_gap() {
        let t = transitions(&measured_like()).unwrap();
        let d = t.nmr_up[0] - t.nmr_down[0];
        assert!((d + 136_547.0).abs() < 500.0, "{d}");
    }

    #[test]
    fn purcell_conventions() {
        let r = ResonatorParams::new(7.7492e9, 740e3, 9.3e3).unwrap();
        let on = purcell_rate(&r, r.nu_r);
        let wg = 2.0 * PI * r.g0;
        assert_relative_eq!(on, 4.0 * wg * wg / (2.0 * PI * r.kappa), max_relative = 1e-12);
        let g0 = g0_from_t1(740e3, 0.34e-3);
        assert!((g0 - 9.3e3).abs() < 0.05e3, "{g0}");
    }

    #[test]
    fn cross_relaxation_probabilities() {
        let r = ResonatorParams::new(7.7492e9, 740e3, 9.3e3).unwrap();
        let mut p = measured_like();
        p.resonator = Some(r);
        let t = transitions(&p).unwrap();
        let rates = purcell_rates(&r, &t);
        for n in 0..NUC_DIM {
            let direct = rates.direct[n] / rates.total[n];
            let cross: f64 = rates.cross.iter().filter(|c| c.n == n).map(|c| c.probability).sum();
            assert!((direct + cross - 1.0).abs() < 1e-12);
        }
        let px: Vec<f64> = (0..4)
            .map(|n| rates.cross.iter().filter(|c| c.n == n).map(|c| c.probability).sum())
            .collect();
        assert!(px.windows(2).all(|w| w[0] < w[1]), "{px:?}");
    }

    #[test]
    fn sideband_rabi_limits() {
        let r = ResonatorParams::new(7.7492e9, 740e3, 9.3e3).unwrap();
        let mut p = measured_like();
        p.hyperfine = Hyperfine::Secular {
            a_par: 133.5e3,
            a_perp: 0.0,
        };
        p.quad = from_spherical(&SphericalForm {
            s0: -237.299e3,
            s1: 0.0,
            s2: 0.0,
            delta: 0.0,
            zeta: 0.0,
        });
        let t = transitions(&p).unwrap();
        assert!(sideband_rabi(3, 1.0, 1e5, &r, &t).unwrap() < 1e-6);
        assert!(sideband_rabi(3, 0.0, 1e5, &r, &t).is_err());
    }

    #[test]
    fn raman_paths_add_at_midpoint() {
        let p = measured_like();
        let t = transitions(&p).unwrap();
        let n = 4;
        let d = -t.nmr_up[n] / 2.0;
        let r = raman_rabi(n, 1e5, 1e5, d, 1e3, &t, &p).unwrap();
        assert!(r.total.abs() > r.path1.abs() && r.total.abs() > r.path2.abs());
        let r2 = raman_rabi(n, 2e5, 1e5, d, 1e3, &t, &p).unwrap();
        assert_relative_eq!(r2.total, 2.0 * r.total, max_relative = 1e-12);
        assert!(raman_rabi(n, 1e5, 1e5, 0.0, 1e3, &t, &p).is_err());
        assert!(raman_rabi(n, 1e5, 1e5, 10.0, 1e3, &t, &p).unwrap().near_pole);
    }

    #[test]
    fn signals() {
        let decay = Decay {
            time: 1e-3,
            shape: DecayShape::Gaussian,
        };
        let tau: Vec<f64> = (0..50).map(|k| k as f64 * 1e-5).collect();
        let p = signal_probability(-665_817.024, 0.0, &decay, &tau).unwrap();
        assert_eq!(p[0], 1.0);
        let flat = Decay {
            time: 1.0,
            shape: DecayShape::None,
        };
        let c = signal_curves(SignalKind::CorrelatedEcho, 0.0, flat, 0.0, &tau, None).unwrap();
        assert!(c.probability.iter().all(|&x| x == 1.0));
        assert!(signal_probability(0.0, 0.0, &flat, &[1.0, 0.5]).is_err());
        let a = poisson_counts(&p, 50.0, 7).unwrap();
        assert_eq!(a, poisson_counts(&p, 50.0, 7).unwrap());
    }

    #[test]
    fn poisson_mean() {
        let p = vec![0.3; 10_000];
        let c = poisson_counts(&p, 20.0, 11).unwrap();
        let mean = c.iter().sum::<u64>() as f64 / c.len() as f64;
        let sd_mean = (6.0f64 / 10_000.0).sqrt();
        assert!((mean - 6.0).abs() < 3.0 * sd_mean);
    }

    #[test]
    fn csv_has_all_rows() {
        let t = transitions(&EffectiveModelParams::bare(7.7e9, -4.7e6)).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 1 + 10 + 4 * 9);
        assert_eq!(s.lines().filter(|l| l.starts_with("nmr_down")).count(), 9);
    }
}

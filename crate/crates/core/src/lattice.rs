//! CaWO4 geometry around the Er site: point-dipole hyperfine tensors, angular
//! sweeps, site ranking, isotope identification and the field-induced
//! electric dipole.
//!
//! Crystal frame: `x ∥ a`, `z ∥ c`. The static field lies in the plane
//! spanned by `a` and `(0, sin β0, cos β0)`, at angle `θ` from the latter.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::constants::{ANGSTROM, DEBYE, EPS0, E_CHARGE, GAMMA_NB, H_PLANCK, I_NB, MU0_OVER_4PI};
use crate::error::{Error, Result};
use crate::hamiltonian::{quantization_frame_tensor, Manifold};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Site {
    pub id: String,
    #[serde(rename = "type")]
    pub site_type: u8,
    /// Offset from the Er ion in lattice units `(a, a, c)`.
    pub frac: [f64; 3],
}

fn default_sites() -> Vec<Site> {
    let mk = |id: &str, t: u8, f: [f64; 3]| Site {
        id: id.to_string(),
        site_type: t,
        frac: f,
    };
    vec![
        mk("1a", 1, [0.5, 0.5, 0.0]),
        mk("1b", 1, [0.5, -0.5, 0.0]),
        mk("1c", 1, [-0.5, 0.5, 0.0]),
        mk("1d", 1, [-0.5, -0.5, 0.0]),
        mk("2a", 2, [0.5, 0.0, -0.25]),
        mk("2b", 2, [-0.5, 0.0, -0.25]),
        mk("2c", 2, [0.0, 0.5, 0.25]),
        mk("2d", 2, [0.0, -0.5, 0.25]),
        mk("3a", 3, [0.0, 0.0, 0.5]),
        mk("3b", 3, [0.0, 0.0, -0.5]),
    ]
}

/// Independent Stark-tensor entries in `1e-32 (J/T)/(V/m)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StarkTensor {
    pub t_xzx: f64,
    pub t_xzy: f64,
    pub t_zxx: f64,
    pub t_zyx: f64,
}

impl Default for StarkTensor {
    fn default() -> Self {
        Self {
            t_xzx: 1.4,
            t_xzy: 1.0,
            t_zxx: 5.4,
            t_zyx: 2.9,
        }
    }
}

impl StarkTensor {
    /// Full `T[k][i][j]` in SI, filled by S4 and `i ↔ j` symmetry.
    pub fn full(&self) -> [[[f64; 3]; 3]; 3] {
        let mut t = [[[0.0; 3]; 3]; 3];
        let (x, y, z) = (0, 1, 2);
        let mut set = |k: usize, i: usize, j: usize, v: f64| {
            t[k][i][j] = v * 1e-32;
            t[k][j][i] = v * 1e-32;
        };
        set(x, z, x, self.t_xzx);
        set(x, z, y, self.t_xzy);
        set(z, x, x, self.t_zxx);
        set(z, y, x, self.t_zyx);
        set(z, y, y, -self.t_zxx);
        set(y, z, y, -self.t_xzx);
        set(y, z, x, -self.t_xzy);
        t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrystalConfig {
    /// Å.
    pub a: f64,
    pub c: f64,
    /// Er effective gyromagnetic values, Hz/T.
    pub gamma_par: f64,
    pub gamma_perp: f64,
    /// Nuclear gyromagnetic ratio used for the dipolar tensor, Hz/T.
    pub gamma_n: f64,
    /// Out-of-plane angle, rad.
    pub beta0: f64,
    pub sites: Vec<Site>,
    pub stark: StarkTensor,
    /// Relative permittivity screening the dipole field.
    pub epsilon_r: f64,
    /// Nuclear quadrupole moment, barn.
    pub q_moment_barn: f64,
    /// Linear Stark sensitivity of the quadrupole, Hz per V/cm (low, high).
    pub stark_sdq_coeff: [f64; 2],
}

impl Default for CrystalConfig {
    fn default() -> Self {
        Self {
            a: 5.243,
            c: 11.376,
            gamma_par: -17.45e9,
            gamma_perp: -117.3e9,
            gamma_n: GAMMA_NB,
            beta0: (-0.57f64).to_radians(),
            sites: default_sites(),
            stark: StarkTensor::default(),
            epsilon_r: 11.7,
            q_moment_barn: -0.32,
            stark_sdq_coeff: [0.1, 1.0],
        }
    }
}

impl CrystalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sites.len() != 10 {
            return Err(Error::Config(format!(
                "site catalog must list the 10 nearest W sites, got {}",
                self.sites.len()
            )));
        }
        if !(self.a > 0.0 && self.c > 0.0 && self.epsilon_r > 0.0) {
            return Err(Error::Config(
                "lattice constants and permittivity must be positive".into(),
            ));
        }
        if let Some(s) = self.sites.iter().find(|s| !(1..=3).contains(&s.site_type)) {
            return Err(Error::Config(format!("site {} has type {}", s.id, s.site_type)));
        }
        Ok(())
    }

    pub fn gamma_e(&self) -> Vector3<f64> {
        Vector3::new(self.gamma_perp, self.gamma_perp, self.gamma_par)
    }

    /// Er → site vector in Å.
    pub fn position(&self, s: &Site) -> Vector3<f64> {
        Vector3::new(s.frac[0] * self.a, s.frac[1] * self.a, s.frac[2] * self.c)
    }

    pub fn site(&self, id: &str) -> Result<&Site> {
        self.sites
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown site '{id}'")))
    }

    /// Unit field direction for in-plane angle `theta`.
    pub fn field_direction(&self, theta: f64) -> Vector3<f64> {
        field_direction(theta, self.beta0)
    }
}

pub fn field_direction(theta: f64, beta0: f64) -> Vector3<f64> {
    let u1 = Vector3::new(1.0, 0.0, 0.0);
    let u2 = Vector3::new(0.0, beta0.sin(), beta0.cos());
    u2 * theta.cos() + u1 * theta.sin()
}

/// Point-dipole hyperfine tensor (Hz), rows electron, columns nuclear:
/// `A_ij = −(μ0/4π) h γ_e,i γ_n (δ_ij − 3 r̂_i r̂_j) / r³`.
pub fn dipolar_tensor(r: &Vector3<f64>, gamma_e: &Vector3<f64>, gamma_n: f64) -> Result<Matrix3<f64>> {
    let d = r.norm();
    if !(d > 0.5) {
        return Err(Error::InvalidInput(format!(
            "separation {d:.3} Å is below the point-dipole limit"
        )));
    }
    let rh = r / d;
    let pre = MU0_OVER_4PI * H_PLANCK * gamma_n / (d * ANGSTROM).powi(3);
    Ok(Matrix3::from_fn(|i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        -pre * gamma_e[i] * (delta - 3.0 * rh[i] * rh[j])
    }))
}

/// Hyperfine tensor of a site expressed in the quantization frames at `theta`.
pub fn geometric_hyperfine(site: &Site, theta: f64, cfg: &CrystalConfig) -> Result<Matrix3<f64>> {
    let a = dipolar_tensor(&cfg.position(site), &cfg.gamma_e(), cfg.gamma_n)?;
    quantization_frame_tensor(&a, &cfg.gamma_e(), &cfg.field_direction(theta))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub theta: f64,
    pub a_par: f64,
    pub a_perp: f64,
}

pub fn angular_sweep(site: &Site, thetas: &[f64], cfg: &CrystalConfig) -> Result<Vec<SweepPoint>> {
    thetas
        .iter()
        .map(|&theta| {
            let t = geometric_hyperfine(site, theta, cfg)?;
            Ok(SweepPoint {
                theta,
                a_par: t[(2, 2)],
                a_perp: t[(2, 0)],
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteScore {
    pub id: String,
    pub site_type: u8,
    pub distance: f64,
    pub a_par: f64,
    pub a_perp: f64,
    pub chi2: f64,
}

/// Sites ranked by `χ²` over the two couplings, ties broken by distance then id.
pub fn assign_site(a_par: (f64, f64), a_perp: (f64, f64), theta: f64, cfg: &CrystalConfig) -> Result<Vec<SiteScore>> {
    if !(a_par.1 > 0.0 && a_perp.1 > 0.0) {
        return Err(Error::InvalidInput("coupling uncertainties must be positive".into()));
    }
    let mut out = Vec::with_capacity(cfg.sites.len());
    for s in &cfg.sites {
        let t = geometric_hyperfine(s, theta, cfg)?;
        let (p, q) = (t[(2, 2)], t[(2, 0)]);
        out.push(SiteScore {
            id: s.id.clone(),
            site_type: s.site_type,
            distance: cfg.position(s).norm(),
            a_par: p,
            a_perp: q,
            chi2: ((p - a_par.0) / a_par.1).powi(2) + ((q - a_perp.0) / a_perp.1).powi(2),
        });
    }
    out.sort_by(|x, y| {
        x.chi2
            .total_cmp(&y.chi2)
            .then(x.distance.total_cmp(&y.distance))
            .then(x.id.cmp(&y.id))
    });
    Ok(out)
}

/// `‖γ·b̂‖` in Hz/T.
pub fn gamma_eff(b: &Vector3<f64>, gamma_par: f64, gamma_perp: f64) -> Result<f64> {
    let n = b.norm();
    if !(n > 0.0) {
        return Err(Error::InvalidInput("zero field direction".into()));
    }
    let u = b / n;
    Ok(Vector3::new(gamma_perp * u.x, gamma_perp * u.y, gamma_par * u.z).norm())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Isotope {
    pub name: String,
    /// MHz/T.
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsotopeTable {
    pub entries: Vec<Isotope>,
}

impl Default for IsotopeTable {
    fn default() -> Self {
        let e = [
            ("73Ge", -1.489),
            ("83Kr", -1.644),
            ("87Sr", -1.851),
            ("93Nb", 10.452),
            ("113In", 9.365),
            ("115In", 9.386),
            ("209Bi", 6.962),
        ];
        Self {
            entries: e
                .iter()
                .map(|&(n, g)| Isotope {
                    name: n.to_string(),
                    gamma: g,
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsotopeMatch {
    pub best: String,
    pub distance: f64,
    pub runner_up: String,
    pub runner_up_distance: f64,
    /// Runner-up distance minus best distance.
    pub margin: f64,
}

pub fn identify_isotope(gamma_mhz_t: f64, table: &IsotopeTable) -> Result<IsotopeMatch> {
    if table.entries.len() < 2 {
        return Err(Error::InvalidInput("isotope table needs two entries".into()));
    }
    let mut d: Vec<(f64, &Isotope)> = table
        .entries
        .iter()
        .map(|e| ((gamma_mhz_t - e.gamma).abs(), e))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(IsotopeMatch {
        best: d[0].1.name.clone(),
        distance: d[0].0,
        runner_up: d[1].1.name.clone(),
        runner_up_distance: d[1].0,
        margin: d[1].0 - d[0].0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DipoleResult {
    pub d_md: [f64; 3],
    pub e_v_per_cm: [f64; 3],
    pub e_norm_v_per_cm: f64,
    /// `∂E_z/∂z` at the nucleus, µV/Å².
    pub vzz_uv_per_a2: f64,
    pub q_sdq_dipole_hz: f64,
    /// Linear-Stark estimate over the differential field of the two spin states.
    pub q_sdq_stark_hz: [f64; 2],
    pub note: Option<String>,
}

/// Field-induced electric dipole of the Er ion in state `m_s` and its
/// electrostatic field and gradient at `r_nb` (Å). The spin direction is the
/// unit vector along `γ·B`, signed by `m_s`.
pub fn electric_dipole(
    b0: &Vector3<f64>,
    m_s: Manifold,
    r_nb: &Vector3<f64>,
    cfg: &CrystalConfig,
) -> Result<DipoleResult> {
    let g = cfg.gamma_e().component_mul(b0);
    if !(g.norm() > 0.0) {
        return Err(Error::InvalidInput("zero field".into()));
    }
    let sign = if m_s == Manifold::Up { 1.0 } else { -1.0 };
    let u = g / g.norm() * sign;
    let t = cfg.stark.full();
    let mut d = Vector3::zeros();
    for k in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                d[k] -= t[k][i][j] * u[i] * b0[j];
            }
        }
    }
    let note = (b0.x == 0.0 && b0.y == 0.0)
        .then(|| "field parallel to c: the induced dipole vanishes by symmetry".to_string());

    let r = r_nb * ANGSTROM;
    let rn = r.norm();
    if !(rn > 0.0) {
        return Err(Error::InvalidInput("nucleus at the dipole position".into()));
    }
    let k = 1.0 / (4.0 * std::f64::consts::PI * EPS0 * cfg.epsilon_r);
    let dr = d.dot(&r);
    let e = (r * (3.0 * dr / rn.powi(5)) - d / rn.powi(3)) * k;
    // ∂_z E_z of the point-dipole field
    let (z, dz) = (r.z, d.z);
    let vzz = k * (6.0 * dz * z / rn.powi(5) + 3.0 * dr / rn.powi(5) - 15.0 * dr * z * z / rn.powi(7));
    let q = cfg.q_moment_barn * 1e-28;
    let q_sdq = E_CHARGE * q * vzz / (H_PLANCK * 2.0 * I_NB * (2.0 * I_NB - 1.0));
    let e_cm = e / 100.0;
    let diff = 2.0 * e_cm.norm();
    Ok(DipoleResult {
        d_md: [d.x / DEBYE * 1e3, d.y / DEBYE * 1e3, d.z / DEBYE * 1e3],
        e_v_per_cm: [e_cm.x, e_cm.y, e_cm.z],
        e_norm_v_per_cm: e_cm.norm(),
        vzz_uv_per_a2: vzz * 1e6 * 1e-20,
        q_sdq_dipole_hz: q_sdq,
        q_sdq_stark_hz: [cfg.stark_sdq_coeff[0] * diff, cfg.stark_sdq_coeff[1] * diff],
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn catalog_distances() {
        let cfg = CrystalConfig::default();
        cfg.validate().unwrap();
        for s in &cfg.sites {
            let d = cfg.position(s).norm();
            let want = match s.site_type {
                1 => 3.707,
                2 => 3.868,
                _ => 5.688,
            };
            assert!((d - want).abs() < 2e-3, "{} {d}", s.id);
        }
    }

    #[test]
    fn dipolar_axial_site() {
        let g = Vector3::new(-117.3e9, -117.3e9, -17.45e9);
        let a = dipolar_tensor(&Vector3::new(0.0, 0.0, 5.688), &g, 10.42e6).unwrap();
        assert!((a[(2, 2)].abs() - 131e3).abs() < 0.01 * 131e3, "{}", a[(2, 2)]);
        let iso = dipolar_tensor(&Vector3::new(1.0, 2.0, 3.0), &Vector3::repeat(1e9), 1e7).unwrap();
        assert!(iso.trace().abs() < 1e-12 * iso.abs().max());
        assert!((iso - iso.transpose()).abs().max() < 1e-12 * iso.abs().max());
        let magic = (1.0f64 / 3.0).sqrt().acos();
        let r = Vector3::new(magic.sin(), 0.0, magic.cos()) * 4.0;
        let m = dipolar_tensor(&r, &g, 1e7).unwrap();
        assert!(m[(2, 2)].abs() < 1e-9 * m.abs().max());
        assert!(dipolar_tensor(&Vector3::new(0.1, 0.0, 0.0), &g, 1e7).is_err());
    }

    #[test]
    fn isotope_lookup() {
        let m = identify_isotope(10.61, &IsotopeTable::default()).unwrap();
        assert_eq!(m.best, "93Nb");
        assert_eq!(m.runner_up, "115In");
        assert!((m.margin - 1.07).abs() < 0.01);
        assert_eq!(IsotopeTable::default().entries.len(), 7);
    }

    #[test]
    fn gamma_eff_axes() {
        assert_relative_eq!(gamma_eff(&Vector3::z(), -17.45e9, -117.3e9).unwrap(), 17.45e9);
        assert_relative_eq!(gamma_eff(&Vector3::x(), -17.45e9, -117.3e9).unwrap(), 117.3e9);
    }

    #[test]
    fn dipole_sign_and_symmetry() {
        let cfg = CrystalConfig::default();
        let b = cfg.field_direction((-0.6f64).to_radians()) * 0.44627;
        let r = Vector3::new(0.0, 0.0, cfg.c / 2.0);
        let up = electric_dipole(&b, Manifold::Up, &r, &cfg).unwrap();
        let dn = electric_dipole(&b, Manifold::Down, &r, &cfg).unwrap();
        for k in 0..3 {
            assert_eq!(up.d_md[k], -dn.d_md[k]);
        }
        let par = electric_dipole(&Vector3::new(0.0, 0.0, 0.45), Manifold::Up, &r, &cfg).unwrap();
        assert_eq!(par.d_md, [0.0, 0.0, 0.0]);
        assert!(par.note.is_some());
    }

    #[test]
    fn site_ranking_is_permutation_invariant() {
        let mut cfg = CrystalConfig::default();
        let theta = (-0.5f64).to_radians();
        let a = assign_site((133.5e3, 1e3), (55e3, 8e3), theta, &cfg).unwrap();
        cfg.sites.reverse();
        let b = assign_site((133.5e3, 1e3), (55e3, 8e3), theta, &cfg).unwrap();
        assert_eq!(a, b);
    }
}

//! TOML input schemas. Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Matrix3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::constants::{GAMMA_NB, I_NB};
use crate::error::{Error, Result};
use crate::hamiltonian::{EffectiveModelParams, Hyperfine, ResonatorParams};
use crate::inference::{FitSpec, Nuisance, Variant};
use crate::lattice::CrystalConfig;
use crate::quadrupole::{from_principal, from_spherical, QuadrupoleTensor, SphericalForm};
use crate::spectra::{Decay, DecayShape, SignalKind};

pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    Ok(toml::from_str(text)?)
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    parse(&text).map_err(|e| match e {
        Error::Toml(t) => Error::Config(format!("{}: {t}", path.display())),
        other => other,
    })
}

/// File contents, with the path in the error message.
pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn mat(m: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m[i][j])
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperfineConfig {
    pub a_par_hz: Option<f64>,
    pub a_perp_hz: Option<f64>,
    /// Full tensor in the quantization frames, rows electron.
    pub tensor_hz: Option<[[f64; 3]; 3]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadConfig {
    pub s0_hz: Option<f64>,
    pub s1_hz: Option<f64>,
    pub s2_hz: Option<f64>,
    pub delta: Option<f64>,
    pub zeta: Option<f64>,
    pub cq_hz: Option<f64>,
    pub eta: Option<f64>,
    /// Active Z-Y-Z angles, rad.
    pub euler_rad: Option<[f64; 3]>,
    pub tensor_hz: Option<[[f64; 3]; 3]>,
}

impl QuadConfig {
    pub fn tensor(&self) -> Result<QuadrupoleTensor> {
        let spherical = self.s0_hz.is_some() || self.s1_hz.is_some() || self.s2_hz.is_some();
        let principal = self.cq_hz.is_some();
        let cart = self.tensor_hz.is_some();
        match (spherical, principal, cart) {
            (false, false, false) => Ok(QuadrupoleTensor::zero()),
            (true, false, false) => Ok(from_spherical(&SphericalForm {
                s0: self.s0_hz.unwrap_or(0.0),
                s1: self.s1_hz.unwrap_or(0.0),
                s2: self.s2_hz.unwrap_or(0.0),
                delta: self.delta.unwrap_or(0.0),
                zeta: self.zeta.unwrap_or(0.0),
            })),
            (false, true, false) => from_principal(
                self.cq_hz.unwrap_or(0.0),
                self.eta.unwrap_or(0.0),
                self.euler_rad.unwrap_or([0.0; 3]),
                I_NB,
            ),
            (false, false, true) => QuadrupoleTensor::new(mat(&self.tensor_hz.unwrap_or_default())),
            _ => Err(Error::Config(
                "quadrupole: give exactly one of spherical (s0..), principal (cq, eta) or tensor_hz".into(),
            )),
        }
    }
}

/// Effective 20-level model, as read by `spectrum`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub nu_s_hz: f64,
    /// Either the field or the signed Larmor frequency.
    pub b0_t: Option<f64>,
    pub nu_i_hz: Option<f64>,
    #[serde(default = "default_gamma")]
    pub gamma_n_hz_per_t: f64,
    #[serde(default)]
    pub hyperfine: HyperfineConfig,
    #[serde(default)]
    pub quadrupole: QuadConfig,
    #[serde(default)]
    pub q_sdq_hz: f64,
    #[serde(default)]
    pub c3_hz: f64,
    #[serde(default)]
    pub c4_hz: f64,
    pub resonator: Option<ResonatorParams>,
}

fn default_gamma() -> f64 {
    GAMMA_NB
}

impl ModelConfig {
    pub fn params(&self) -> Result<EffectiveModelParams> {
        let nu_i = match (self.b0_t, self.nu_i_hz) {
            (Some(b), None) => -self.gamma_n_hz_per_t * b,
            (None, Some(n)) => n,
            _ => return Err(Error::Config("give exactly one of b0_t or nu_i_hz".into())),
        };
        let h = &self.hyperfine;
        let hyperfine = match (h.tensor_hz, h.a_par_hz.is_some() || h.a_perp_hz.is_some()) {
            (Some(t), false) => Hyperfine::Full { tensor: mat(&t) },
            (None, _) => Hyperfine::Secular {
                a_par: h.a_par_hz.unwrap_or(0.0),
                a_perp: h.a_perp_hz.unwrap_or(0.0),
            },
            _ => {
                return Err(Error::Config(
                    "hyperfine: give either the secular pair or tensor_hz".into(),
                ))
            }
        };
        if let Some(r) = &self.resonator {
            r.validate()?;
        }
        let vals = [self.nu_s_hz, nu_i, self.q_sdq_hz, self.c3_hz, self.c4_hz];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite model parameter".into()));
        }
        Ok(EffectiveModelParams {
            nu_s: self.nu_s_hz,
            nu_i,
            hyperfine,
            quad: self.quadrupole.tensor()?,
            q_sdq: self.q_sdq_hz,
            c3: self.c3_hz,
            c4: self.c4_hz,
            resonator: self.resonator,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverride {
    pub start: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub scale: Option<f64>,
    pub fixed: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuisanceConfig {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub draws: usize,
}

/// Sampler settings and parameter overrides for `fit`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub walkers: Option<usize>,
    pub iterations: Option<usize>,
    pub summary_window: Option<usize>,
    pub stretch: Option<f64>,
    pub seed: Option<u64>,
    pub ball: Option<f64>,
    pub starts: Option<usize>,
    pub lamb_shift: Option<bool>,
    pub resonator: Option<ResonatorParams>,
    pub hyperfine_geometry_hz: Option<[[f64; 3]; 3]>,
    pub gamma_n_hz_per_t: Option<f64>,
    #[serde(default)]
    pub params: BTreeMap<String, ParamOverride>,
    pub nuisance: Option<NuisanceConfig>,
}

impl FitConfig {
    /// Spec for `variant` with the overrides applied; `seed` replaces a
    /// missing seed.
    pub fn spec(&self, variant: Variant, seed: u64) -> Result<FitSpec> {
        let mut s = FitSpec::new(variant);
        if let Some(v) = self.walkers {
            s.walkers = v;
        }
        if let Some(v) = self.iterations {
            s.iterations = v;
        }
        if let Some(v) = self.summary_window {
            s.summary_window = v;
        }
        if let Some(v) = self.stretch {
            s.stretch = v;
        }
        if let Some(v) = self.ball {
            s.ball = v;
        }
        if let Some(v) = self.starts {
            s.starts = v;
        }
        s.seed = self.seed.unwrap_or(seed);
        if let Some(v) = self.lamb_shift {
            s.context.lamb_shift = v;
        }
        if let Some(v) = self.resonator {
            s.context.resonator = v;
        }
        if let Some(v) = self.hyperfine_geometry_hz {
            s.context.hyperfine_geometry = v;
        }
        if let Some(v) = self.gamma_n_hz_per_t {
            s.context.gamma_n = v;
        }
        for (name, o) in &self.params {
            let p = s.param_mut(name)?;
            if let Some(v) = o.start {
                p.start = Some(v);
            }
            if let Some(v) = o.lo {
                p.lo = v;
            }
            if let Some(v) = o.hi {
                p.hi = v;
            }
            if let Some(v) = o.scale {
                p.scale = v;
            }
            if let Some(v) = o.fixed {
                p.fixed = v;
                if v && p.start.is_none() {
                    return Err(Error::Config(format!("fixed parameter '{name}' needs a start value")));
                }
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn nuisance(&self) -> Option<(Nuisance, usize)> {
        self.nuisance.as_ref().map(|n| {
            (
                Nuisance {
                    name: n.name.clone(),
                    mean: n.mean,
                    sd: n.sd,
                },
                n.draws,
            )
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdipoleConfig {
    pub b0_t: f64,
    pub theta_deg: f64,
    #[serde(default = "default_site")]
    pub site: String,
    /// Nucleus position relative to the site vector; defaults to the site.
    pub r_nb_angstrom: Option<[f64; 3]>,
}

fn default_site() -> String {
    "3a".into()
}

/// Lattice input for `site-assign` and `edipole`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeFile {
    #[serde(default)]
    pub crystal: CrystalConfig,
    pub edipole: Option<EdipoleConfig>,
}

/// Measured couplings for `site-assign`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingsConfig {
    pub a_par_hz: f64,
    pub a_par_sigma_hz: f64,
    pub a_perp_hz: f64,
    pub a_perp_sigma_hz: f64,
    pub theta_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauGrid {
    pub start_s: f64,
    pub stop_s: f64,
    pub points: usize,
}

impl TauGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        if self.points < 2 || !(self.stop_s > self.start_s) || self.start_s < 0.0 {
            return Err(Error::Config(
                "tau grid needs start >= 0, stop > start and two points".into(),
            ));
        }
        let n = self.points - 1;
        Ok((0..=n)
            .map(|k| self.start_s + (self.stop_s - self.start_s) * k as f64 / n as f64)
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountsConfig {
    pub mean: f64,
    pub seed: Option<u64>,
}

/// Parameters of `signal`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    pub freq_hz: f64,
    #[serde(default)]
    pub nu_if_hz: f64,
    pub decay_time_s: f64,
    pub shape: Option<DecayShape>,
    pub tau: TauGrid,
    pub counts: Option<CountsConfig>,
}

impl SignalConfig {
    pub fn decay(&self, kind: SignalKind) -> Result<Decay> {
        let shape = self.shape.unwrap_or(kind.default_shape());
        if shape != DecayShape::None && !(self.decay_time_s > 0.0) {
            return Err(Error::Config("decay time must be positive".into()));
        }
        Ok(Decay {
            time: self.decay_time_s,
            shape,
        })
    }
}

/// Curve-fit settings for `bootstrap`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    pub freq_guess_hz: f64,
    pub freq_window_hz: f64,
    pub decay_time_s: f64,
    #[serde(default = "default_shape")]
    pub shape: DecayShape,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    pub seed: Option<u64>,
}

fn default_shape() -> DecayShape {
    DecayShape::Exponential
}

fn default_resamples() -> usize {
    1000
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_config_round_trip() {
        let text = r#"
            nu_s_hz = 7.7e9
            b0_t = 0.45
            q_sdq_hz = 66.0
            [hyperfine]
            a_par_hz = 133.5e3
            a_perp_hz = 55e3
            [quadrupole]
            s0_hz = -237e3
            s2_hz = 149e3
            delta = 0.1
        "#;
        let c: ModelConfig = parse(text).unwrap();
        let p = c.params().unwrap();
        assert_eq!(p.q_sdq, 66.0);
        assert!((p.nu_i + GAMMA_NB * 0.45).abs() < 1e-6);
        assert!((p.quad.cart[(2, 2)] + 237e3).abs() < 1e-6);
    }

    #[test]
    fn rejects_unknown_and_conflicting_keys() {
        assert!(parse::<ModelConfig>("nu_s_hz = 1.0\nb0_t = 0.4\nbogus = 1").is_err());
        let c: ModelConfig = parse("nu_s_hz = 1.0\nb0_t = 0.4\nnu_i_hz = 3.0").unwrap();
        assert!(c.params().is_err());
        let q: ModelConfig = parse("nu_s_hz = 1.0\nb0_t = 0.4\n[quadrupole]\ns0_hz = 1.0\ncq_hz = 2.0").unwrap();
        assert!(q.params().is_err());
    }

    #[test]
    fn fit_overrides() {
        let c: FitConfig = parse("walkers = 20\n[params.c4]\nfixed = true\nstart = 0.0").unwrap();
        let s = c.spec(Variant::Hexadecapole, 9).unwrap();
        assert_eq!(s.walkers, 20);
        assert_eq!(s.seed, 9);
        assert!(s.param("c4").unwrap().fixed);
        let bad: FitConfig = parse("[params.nope]\nfixed = true").unwrap();
        assert!(bad.spec(Variant::Ground, 1).is_err());
    }
}

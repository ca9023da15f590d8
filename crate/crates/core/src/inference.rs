//! Likelihoods, the stretch-move ensemble sampler, posterior summaries,
//! nuisance marginalization and bootstrap frequency uncertainties.
//!
//! Parameters are in SI: fields in T, couplings in Hz, angles in rad.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::io::{Read, Write};
use std::path::Path;

use argmin::core::{CostFunction, Executor};
use argmin::solver::brent::BrentOpt;
use nalgebra::{DMatrix, DVector, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{GAMMA_NB, I_NB};
use crate::error::{Error, Result};
use crate::hamiltonian::{
    effective_levels, nuclear_terms, EffectiveModelParams, Hyperfine, Manifold, ResonatorParams, NUC_DIM,
};
use crate::lattice::{geometric_hyperfine, CrystalConfig};
use crate::operators::eigvalsh;
use crate::quadrupole::{from_spherical, SphericalForm};
use crate::spectra::{fmt17, Decay};

// ---------------------------------------------------------------- datasets

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    /// `ω↓` between levels `id` and `id + 1`.
    Ground,
    /// `ω↑ − ω↓` for transition `id`.
    ExcitedDiff,
    /// `ω↓(id+1) − ω↓(id)`.
    Differential,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataEntry {
    pub id: usize,
    pub kind: DataKind,
    pub value_hz: f64,
    pub sigma_hz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyDataset {
    pub entries: Vec<DataEntry>,
}

impl FrequencyDataset {
    pub fn new(entries: Vec<DataEntry>) -> Result<Self> {
        let d = Self { entries };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if !(e.sigma_hz > 0.0) || !e.sigma_hz.is_finite() {
                return Err(Error::Data(format!(
                    "entry {:?}/{}: sigma must be positive",
                    e.kind, e.id
                )));
            }
            if !e.value_hz.is_finite() {
                return Err(Error::Data(format!("entry {:?}/{}: non-finite value", e.kind, e.id)));
            }
            if !seen.insert((e.kind, e.id)) {
                return Err(Error::Data(format!("duplicate entry {:?}/{}", e.kind, e.id)));
            }
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let entries = rd.deserialize().collect::<std::result::Result<Vec<DataEntry>, _>>()?;
        Self::new(entries)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["id", "kind", "value_hz", "sigma_hz"])?;
        for e in &self.entries {
            let kind = serde_json::to_value(e.kind)?;
            wr.write_record([
                e.id.to_string(),
                kind.as_str().unwrap_or_default().to_string(),
                fmt17(e.value_hz),
                fmt17(e.sigma_hz),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// CSV, or JSON when the extension is `.json`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = crate::config::read_text(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            let d: Self = serde_json::from_str(&text)?;
            d.validate()?;
            Ok(d)
        } else {
            Self::read_csv(text.as_bytes())
        }
    }

    /// Entries of one kind ordered by id.
    pub fn of_kind(&self, kind: DataKind) -> Vec<DataEntry> {
        let mut v: Vec<DataEntry> = self.entries.iter().filter(|e| e.kind == kind).copied().collect();
        v.sort_by_key(|e| e.id);
        v
    }

    pub fn from_values(kind: DataKind, values: &[f64], sigmas: &[f64]) -> Result<Self> {
        if values.len() != sigmas.len() {
            return Err(Error::Data("values and sigmas differ in length".into()));
        }
        Self::new(
            values
                .iter()
                .zip(sigmas)
                .enumerate()
                .map(|(id, (&value_hz, &sigma_hz))| DataEntry {
                    id,
                    kind,
                    value_hz,
                    sigma_hz,
                })
                .collect(),
        )
    }
}

// ---------------------------------------------------------------- fit specs

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Ground,
    Excited,
    Full,
    Hexadecapole,
    Octupole,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ground" => Variant::Ground,
            "excited" => Variant::Excited,
            "full" => Variant::Full,
            "hexadecapole" => Variant::Hexadecapole,
            "octupole" => Variant::Octupole,
            _ => return Err(Error::InvalidInput(format!("unknown fit variant '{s}'"))),
        })
    }
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Ground => "ground",
            Variant::Excited => "excited",
            Variant::Full => "full",
            Variant::Hexadecapole => "hexadecapole",
            Variant::Octupole => "octupole",
        }
    }

    /// Data kinds entering the likelihood.
    pub fn likelihood_kinds(self) -> &'static [DataKind] {
        match self {
            Variant::Ground => &[DataKind::Ground],
            Variant::Excited => &[DataKind::ExcitedDiff],
            Variant::Full => &[DataKind::Ground, DataKind::ExcitedDiff],
            Variant::Hexadecapole | Variant::Octupole => &[DataKind::Differential],
        }
    }

    fn is_full(self) -> bool {
        self == Variant::Full
    }
}

const NUCLEAR_PARAMS: [&str; 8] = ["b0", "s0", "s1", "s2", "delta", "zeta", "c3", "c4"];
const FULL_PARAMS: [&str; 9] = ["b0", "a_par", "a_perp", "s0", "s1", "s2", "delta", "zeta", "q_sdq"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub name: String,
    /// `None`: estimated from the data where possible.
    pub start: Option<f64>,
    pub lo: f64,
    pub hi: f64,
    /// Typical step, used for finite differences.
    pub scale: f64,
    pub fixed: bool,
    /// Coarse initialization grid `(lo, hi, points)`.
    pub grid: Option<(f64, f64, usize)>,
}

impl ParamSpec {
    fn free(name: &str, start: Option<f64>, lo: f64, hi: f64, scale: f64) -> Self {
        Self {
            name: name.into(),
            start,
            lo,
            hi,
            scale,
            fixed: false,
            grid: None,
        }
    }

    fn fixed(name: &str, value: f64) -> Self {
        Self {
            name: name.into(),
            start: Some(value),
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
            scale: 1.0,
            fixed: true,
            grid: None,
        }
    }

    fn with_grid(mut self, lo: f64, hi: f64, n: usize) -> Self {
        self.grid = Some((lo, hi, n));
        self
    }
}

/// Fixed model ingredients shared by all parameter values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitContext {
    /// Hz/T.
    pub gamma_n: f64,
    /// Hyperfine tensor in the quantization frames (Hz). The `zz`, `zx`,
    /// `zy` entries are replaced by `a_par`, `a_perp`, 0.
    pub hyperfine_geometry: [[f64; 3]; 3],
    pub resonator: ResonatorParams,
    pub lamb_shift: bool,
}

impl Default for FitContext {
    fn default() -> Self {
        let cfg = CrystalConfig::default();
        let a = cfg
            .site("3a")
            .and_then(|s| geometric_hyperfine(s, (-0.5f64).to_radians(), &cfg))
            .map(|m| std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)])))
            .unwrap_or([[0.0; 3]; 3]);
        Self {
            gamma_n: GAMMA_NB,
            hyperfine_geometry: a,
            resonator: ResonatorParams {
                nu_r: 7.7492e9,
                kappa: 740e3,
                g0: 9.3e3,
            },
            lamb_shift: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    pub variant: Variant,
    pub params: Vec<ParamSpec>,
    pub context: FitContext,
    pub walkers: usize,
    pub iterations: usize,
    /// Summaries use the last `summary_window` iterations.
    pub summary_window: usize,
    /// Stretch parameter `a`.
    pub stretch: f64,
    pub seed: u64,
    /// Initial ball width as a fraction of the curvature-based posterior sd.
    pub ball: f64,
    /// Grid points used as optimizer starts.
    pub starts: usize,
    pub parallel: bool,
}

impl FitSpec {
    pub fn new(variant: Variant) -> Self {
        let params = match variant {
            Variant::Full => vec![
                ParamSpec::free("b0", None, 0.1, 1.0, 1e-8),
                ParamSpec::free("a_par", None, 0.0, 1e6, 1.0),
                ParamSpec::fixed("a_perp", 55e3),
                ParamSpec::free("s0", Some(-2e5), -1e6, 1e6, 1.0).with_grid(-5e5, 5e5, 21),
                ParamSpec::free("s1", Some(1e3), 0.0, 1e6, 10.0),
                ParamSpec::free("s2", Some(1e5), 0.0, 1e6, 1.0).with_grid(0.0, 5e5, 6),
                ParamSpec::free("delta", Some(0.1), -FRAC_PI_2, FRAC_PI_2, 1e-4).with_grid(-1.2, 1.2, 4),
                ParamSpec::free("zeta", Some(0.0), -PI, PI, 1e-3).with_grid(-2.4, 2.4, 4),
                ParamSpec::free("q_sdq", Some(0.0), -1e4, 1e4, 1.0),
            ],
            _ => {
                let single_axis = matches!(variant, Variant::Ground | Variant::Excited);
                // with ζ = 0 the spectrum is even in Δ
                let (dlo, dhi) = if single_axis {
                    (-FRAC_PI_4, FRAC_PI_4)
                } else {
                    (0.0, FRAC_PI_2)
                };
                let mut v = vec![
                    if single_axis {
                        ParamSpec::free("b0", None, 0.1, 1.0, 1e-8)
                    } else {
                        ParamSpec::fixed("b0", 0.46054333)
                    },
                    ParamSpec::free("s0", Some(-2e5), -1e6, 1e6, 0.1).with_grid(-5e5, 5e5, 21),
                    ParamSpec::free("s1", Some(1e3), 0.0, 1e6, 1.0),
                    ParamSpec::free("s2", Some(1e5), 0.0, 1e6, 0.1).with_grid(0.0, 5e5, 11),
                    ParamSpec::free("delta", Some(0.1), dlo, dhi, 1e-5).with_grid(
                        dlo + 0.2 * (dhi - dlo),
                        dhi - 0.2 * (dhi - dlo),
                        5,
                    ),
                    ParamSpec::fixed("zeta", 0.0),
                    ParamSpec::fixed("c3", 0.0),
                    ParamSpec::fixed("c4", 0.0),
                ];
                if variant == Variant::Hexadecapole {
                    v[7] = ParamSpec::free("c4", Some(0.0), -1e3, 1e3, 0.01);
                }
                if variant == Variant::Octupole {
                    v[6] = ParamSpec::free("c3", Some(0.0), -1e3, 1e3, 0.01);
                }
                v
            }
        };
        Self {
            variant,
            params,
            context: FitContext::default(),
            walkers: 64,
            iterations: 10_000,
            summary_window: 5_000,
            stretch: 2.0,
            seed: 1,
            ball: 0.1,
            starts: 4,
            parallel: true,
        }
    }

    pub fn param(&self, name: &str) -> Result<&ParamSpec> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut ParamSpec> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))
    }

    pub fn fix(&mut self, name: &str, value: f64) -> Result<()> {
        let p = self.param_mut(name)?;
        p.fixed = true;
        p.start = Some(value);
        Ok(())
    }

    pub fn free_names(&self) -> Vec<String> {
        self.params
            .iter()
            .filter(|p| !p.fixed)
            .map(|p| p.name.clone())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let want: &[&str] = if self.variant.is_full() {
            &FULL_PARAMS
        } else {
            &NUCLEAR_PARAMS
        };
        let names: Vec<&str> = self.params.iter().map(|p| p.name.as_str()).collect();
        if names != want {
            return Err(Error::Config(format!(
                "{} fit expects parameters {want:?}, got {names:?}",
                self.variant.name()
            )));
        }
        let nfree = self.params.iter().filter(|p| !p.fixed).count();
        if nfree == 0 {
            return Err(Error::Config("no free parameters".into()));
        }
        if self.walkers < 2 * nfree || !self.walkers.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "need an even walker count of at least {}, got {}",
                2 * nfree,
                self.walkers
            )));
        }
        if self.iterations == 0 || self.summary_window == 0 {
            return Err(Error::Config("iterations and summary window must be positive".into()));
        }
        if !(self.stretch > 1.0) {
            return Err(Error::Config("stretch parameter must exceed 1".into()));
        }
        for p in &self.params {
            if !p.fixed && !(p.lo < p.hi && p.scale > 0.0) {
                return Err(Error::Config(format!("parameter {}: invalid bounds or scale", p.name)));
            }
            if let Some(s) = p.start {
                if !p.fixed && !(p.lo..=p.hi).contains(&s) {
                    return Err(Error::Config(format!("parameter {}: start outside bounds", p.name)));
                }
            }
            if let Some((lo, hi, n)) = p.grid {
                if n == 0 || !(lo <= hi) {
                    return Err(Error::Config(format!("parameter {}: invalid grid", p.name)));
                }
            }
        }
        self.context.resonator.validate()
    }
}

// ---------------------------------------------------------------- model

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub ground: Vec<f64>,
    pub excited_diff: Vec<f64>,
    pub differential: Vec<f64>,
}

impl Prediction {
    fn get(&self, kind: DataKind, id: usize) -> Option<f64> {
        match kind {
            DataKind::Ground => self.ground.get(id),
            DataKind::ExcitedDiff => self.excited_diff.get(id),
            DataKind::Differential => self.differential.get(id),
        }
        .copied()
    }
}

fn gaps(e: &[f64]) -> Vec<f64> {
    e.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Model prediction for a full parameter vector ordered as in the spec.
/// `reference` holds measured `ω↓` used by the excited variant.
pub fn predict(variant: Variant, ctx: &FitContext, p: &[f64], reference: &[f64]) -> Result<Prediction> {
    if variant.is_full() {
        let [b0, a_par, a_perp, s0, s1, s2, delta, zeta, q_sdq]: [f64; 9] = p
            .try_into()
            .map_err(|_| Error::InvalidInput("full model takes 9 parameters".into()))?;
        let mut a = Matrix3::from_fn(|i, j| ctx.hyperfine_geometry[i][j]);
        a[(2, 2)] = a_par;
        a[(2, 0)] = a_perp;
        a[(2, 1)] = 0.0;
        let m = EffectiveModelParams {
            nu_s: ctx.resonator.nu_r - I_NB * a_par,
            nu_i: -ctx.gamma_n * b0,
            hyperfine: Hyperfine::Full { tensor: a },
            quad: from_spherical(&SphericalForm {
                s0,
                s1,
                s2,
                delta,
                zeta,
            }),
            q_sdq,
            c3: 0.0,
            c4: 0.0,
            resonator: ctx.lamb_shift.then_some(ctx.resonator),
        };
        let lv = effective_levels(&m)?;
        let dn = lv.nmr(Manifold::Down).to_vec();
        let up = lv.nmr(Manifold::Up);
        return Ok(Prediction {
            excited_diff: up.iter().zip(&dn).map(|(u, d)| u - d).collect(),
            differential: gaps(&dn),
            ground: dn,
        });
    }
    let [b0, s0, s1, s2, delta, zeta, c3, c4]: [f64; 8] = p
        .try_into()
        .map_err(|_| Error::InvalidInput("nuclear model takes 8 parameters".into()))?;
    let quad = from_spherical(&SphericalForm {
        s0,
        s1,
        s2,
        delta,
        zeta,
    });
    let h = nuclear_terms(-ctx.gamma_n * b0, &quad, c3, c4);
    let g = gaps(&eigvalsh(&h)?);
    Ok(Prediction {
        excited_diff: g.iter().zip(reference).map(|(u, d)| u - d).collect(),
        differential: gaps(&g),
        ground: g,
    })
}

/// `Σ ((meas − pred)/σ)²` over the given entries.
pub fn chi_square_of(pred: &Prediction, entries: &[DataEntry]) -> f64 {
    entries
        .iter()
        .map(|e| match pred.get(e.kind, e.id) {
            Some(v) => ((e.value_hz - v) / e.sigma_hz).powi(2),
            None => f64::INFINITY,
        })
        .sum()
}

/// Compiled likelihood: free-parameter map plus the entries in use.
struct Problem<'a> {
    spec: &'a FitSpec,
    free: Vec<usize>,
    base: Vec<f64>,
    targets: Vec<DataEntry>,
    reference: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(spec: &'a FitSpec, data: &FrequencyDataset) -> Result<Self> {
        spec.validate()?;
        data.validate()?;
        let kinds = spec.variant.likelihood_kinds();
        let mut targets: Vec<DataEntry> = data
            .entries
            .iter()
            .filter(|e| kinds.contains(&e.kind))
            .copied()
            .collect();
        targets.sort_by_key(|e| (e.kind, e.id));
        if targets.is_empty() {
            return Err(Error::Data(format!(
                "no entries usable by the {} fit",
                spec.variant.name()
            )));
        }
        let limit = |k: DataKind| {
            if k == DataKind::Differential {
                NUC_DIM - 2
            } else {
                NUC_DIM - 1
            }
        };
        if let Some(e) = targets.iter().find(|e| e.id >= limit(e.kind)) {
            return Err(Error::Data(format!("entry id {} out of range for {:?}", e.id, e.kind)));
        }
        let ground = data.of_kind(DataKind::Ground);
        let reference: Vec<f64> = if spec.variant == Variant::Excited {
            if ground.len() != NUC_DIM - 1 || ground.iter().enumerate().any(|(i, e)| e.id != i) {
                return Err(Error::Data(
                    "excited fit needs all nine ground entries as reference".into(),
                ));
            }
            ground.iter().map(|e| e.value_hz).collect()
        } else {
            Vec::new()
        };
        let mut base = Vec::with_capacity(spec.params.len());
        for p in &spec.params {
            base.push(match p.start {
                Some(v) => v,
                None => guess(spec, &p.name, data)?,
            });
        }
        let free = (0..spec.params.len()).filter(|&i| !spec.params[i].fixed).collect();
        Ok(Self {
            spec,
            free,
            base,
            targets,
            reference,
        })
    }

    fn dim(&self) -> usize {
        self.free.len()
    }

    fn full(&self, x: &[f64]) -> Vec<f64> {
        let mut p = self.base.clone();
        for (k, &i) in self.free.iter().enumerate() {
            p[i] = x[k];
        }
        p
    }

    fn start(&self) -> Vec<f64> {
        self.free.iter().map(|&i| self.base[i]).collect()
    }

    fn in_bounds(&self, x: &[f64]) -> bool {
        self.free.iter().zip(x).all(|(&i, &v)| {
            let p = &self.spec.params[i];
            v >= p.lo && v <= p.hi
        })
    }

    /// Mirrors out-of-range values back inside the bounds.
    fn clamp(&self, x: &mut [f64]) {
        for (&i, v) in self.free.iter().zip(x.iter_mut()) {
            let p = &self.spec.params[i];
            if *v < p.lo {
                *v = 2.0 * p.lo - *v;
            }
            if *v > p.hi {
                *v = 2.0 * p.hi - *v;
            }
            *v = v.clamp(p.lo, p.hi);
        }
    }

    fn prediction(&self, x: &[f64]) -> Result<Prediction> {
        predict(self.spec.variant, &self.spec.context, &self.full(x), &self.reference)
    }

    fn residuals(&self, x: &[f64]) -> Option<Vec<f64>> {
        let pred = self.prediction(x).ok()?;
        let r: Option<Vec<f64>> = self
            .targets
            .iter()
            .map(|e| pred.get(e.kind, e.id).map(|v| (v - e.value_hz) / e.sigma_hz))
            .collect();
        r.filter(|v| v.iter().all(|x| x.is_finite()))
    }

    fn chi2(&self, x: &[f64]) -> f64 {
        self.residuals(x)
            .map_or(f64::INFINITY, |r| r.iter().map(|v| v * v).sum())
    }

    fn log_post(&self, x: &[f64]) -> f64 {
        if !self.in_bounds(x) {
            return f64::NEG_INFINITY;
        }
        let c = self.chi2(x);
        if c.is_finite() {
            -0.5 * c
        } else {
            f64::NEG_INFINITY
        }
    }

    fn scales(&self) -> Vec<f64> {
        self.free.iter().map(|&i| self.spec.params[i].scale).collect()
    }
}

/// Data-based starting values for the field and hyperfine parameters.
fn guess(spec: &FitSpec, name: &str, data: &FrequencyDataset) -> Result<f64> {
    let mean = |k: DataKind| {
        let v = data.of_kind(k);
        (!v.is_empty()).then(|| v.iter().map(|e| e.value_hz).sum::<f64>() / v.len() as f64)
    };
    let g = spec.context.gamma_n;
    let missing = || Error::Config(format!("parameter '{name}' needs a start value"));
    match (spec.variant, name) {
        (Variant::Full, "a_par") => mean(DataKind::ExcitedDiff).map(|d| -d).ok_or_else(missing),
        (Variant::Full, "b0") => {
            let a = match spec.param("a_par")?.start {
                Some(a) => a,
                None => guess(spec, "a_par", data)?,
            };
            mean(DataKind::Ground).map(|w| (w - 0.5 * a) / g).ok_or_else(missing)
        }
        (Variant::Excited, "b0") => match (mean(DataKind::Ground), mean(DataKind::ExcitedDiff)) {
            (Some(w), Some(d)) => Ok((w + d) / g),
            _ => Err(missing()),
        },
        (_, "b0") => mean(DataKind::Ground).map(|w| w / g).ok_or_else(missing),
        _ => Err(missing()),
    }
}

/// `χ²` of a full parameter vector against every entry the variant uses.
pub fn chi_square(spec: &FitSpec, data: &FrequencyDataset, params: &[f64]) -> Result<f64> {
    let pb = Problem::new(spec, data)?;
    if params.len() != spec.params.len() {
        return Err(Error::InvalidInput(format!(
            "expected {} parameters, got {}",
            spec.params.len(),
            params.len()
        )));
    }
    let pred = match predict(spec.variant, &spec.context, params, &pb.reference) {
        Ok(p) => p,
        Err(_) => return Ok(f64::INFINITY),
    };
    Ok(chi_square_of(&pred, &pb.targets))
}

// ---------------------------------------------------------------- optimizer

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub x: Vec<f64>,
    pub chi2: f64,
    /// Curvature-based covariance `(JᵀJ)⁻¹`.
    pub covariance: Vec<Vec<f64>>,
}

fn jacobian(pb: &Problem, x: &[f64], h: &[f64]) -> Option<DMatrix<f64>> {
    let m = pb.targets.len();
    let mut j = DMatrix::zeros(m, x.len());
    for k in 0..x.len() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[k] += h[k];
        xm[k] -= h[k];
        let rp = pb.residuals(&xp)?;
        let rm = pb.residuals(&xm)?;
        for i in 0..m {
            j[(i, k)] = (rp[i] - rm[i]) / (2.0 * h[k]);
        }
    }
    Some(j)
}

/// Levenberg–Marquardt on the normalized residuals.
fn levenberg_marquardt(pb: &Problem, x0: &[f64], max_iter: usize) -> Option<(Vec<f64>, f64)> {
    let sc = pb.scales();
    let h: Vec<f64> = sc.iter().map(|s| 0.1 * s).collect();
    let mut x = x0.to_vec();
    pb.clamp(&mut x);
    let mut r = DVector::from_vec(pb.residuals(&x)?);
    let mut c = r.norm_squared();
    let mut lambda = 1e-3;
    for _ in 0..max_iter {
        let j = jacobian(pb, &x, &h)?;
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += lambda * jtj[(k, k)].max(1.0 / (sc[k] * sc[k]));
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let mut xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            pb.clamp(&mut xn);
            if let Some(rn) = pb.residuals(&xn) {
                let rn = DVector::from_vec(rn);
                let cn = rn.norm_squared();
                if cn < c {
                    let rel = (c - cn) / c.max(1e-300);
                    x = xn;
                    r = rn;
                    c = cn;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = true;
                    if rel < 1e-13 {
                        return Some((x, c));
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Some((x, c))
}

fn grid_points(pb: &Problem) -> Vec<Vec<f64>> {
    let mut pts = vec![pb.start()];
    for (k, &i) in pb.free.iter().enumerate() {
        let Some((lo, hi, n)) = pb.spec.params[i].grid else {
            continue;
        };
        let vals: Vec<f64> = (0..n)
            .map(|t| {
                if n == 1 {
                    lo
                } else {
                    lo + (hi - lo) * t as f64 / (n - 1) as f64
                }
            })
            .collect();
        pts = pts
            .into_iter()
            .flat_map(|p| {
                vals.iter().map(move |&v| {
                    let mut q = p.clone();
                    q[k] = v;
                    q
                })
            })
            .collect();
    }
    pts
}

fn optimize(pb: &Problem, n_starts: usize, parallel: bool) -> Result<Optimum> {
    let pts = grid_points(pb);
    let eval = |p: &Vec<f64>| {
        let mut q = p.clone();
        pb.clamp(&mut q);
        (pb.chi2(&q), q)
    };
    let mut scored: Vec<(f64, Vec<f64>)> = if parallel {
        pts.par_iter().map(eval).collect()
    } else {
        pts.iter().map(eval).collect()
    };
    scored.retain(|s| s.0.is_finite());
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    if scored.is_empty() {
        return Err(Error::Fit("model failed on every grid point".into()));
    }
    let starts: Vec<&Vec<f64>> = scored.iter().take(n_starts.max(1)).map(|s| &s.1).collect();
    let run = |s: &&Vec<f64>| levenberg_marquardt(pb, s, 300);
    let results: Vec<Option<(Vec<f64>, f64)>> = if parallel {
        starts.par_iter().map(run).collect()
    } else {
        starts.iter().map(run).collect()
    };
    let (x, chi2) = results
        .into_iter()
        .flatten()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::Fit("optimizer failed from every start".into()))?;
    let h: Vec<f64> = pb.scales().iter().map(|s| 0.1 * s).collect();
    let j = jacobian(pb, &x, &h).ok_or_else(|| Error::Fit("model failed at the optimum".into()))?;
    let n = x.len();
    let mut jtj = j.transpose() * &j;
    for k in 0..n {
        jtj[(k, k)] += 1e-12 * jtj[(k, k)].abs().max(1e-30);
    }
    let cov =
        jtj.clone().cholesky().map(|c| c.inverse()).unwrap_or_else(|| {
            DMatrix::from_diagonal(&DVector::from_iterator(n, pb.scales().into_iter().map(|s| s * s)))
        });
    Ok(Optimum {
        x,
        chi2,
        covariance: (0..n).map(|i| (0..n).map(|k| cov[(i, k)]).collect()).collect(),
    })
}

/// Least-squares optimum from the coarse grid, without sampling.
pub fn fit_optimum(spec: &FitSpec, data: &FrequencyDataset) -> Result<Optimum> {
    let pb = Problem::new(spec, data)?;
    optimize(&pb, spec.starts, spec.parallel)
}

/// Full parameter vector (fixed values filled in) for free values `x`.
pub fn expand_params(spec: &FitSpec, data: &FrequencyDataset, x: &[f64]) -> Result<Vec<f64>> {
    let pb = Problem::new(spec, data)?;
    if x.len() != pb.dim() {
        return Err(Error::InvalidInput(format!(
            "expected {} free values, got {}",
            pb.dim(),
            x.len()
        )));
    }
    Ok(pb.full(x))
}

/// Residual table at free values `x`.
pub fn residuals_at(spec: &FitSpec, data: &FrequencyDataset, x: &[f64]) -> Result<Vec<Residual>> {
    let pb = Problem::new(spec, data)?;
    if x.len() != pb.dim() {
        return Err(Error::InvalidInput(format!(
            "expected {} free values, got {}",
            pb.dim(),
            x.len()
        )));
    }
    Ok(residual_table(&pb, x))
}

// ---------------------------------------------------------------- sampler

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorEnsemble {
    pub names: Vec<String>,
    pub walkers: usize,
    pub iterations: usize,
    /// Flattened `[iteration][walker][parameter]`.
    pub chain: Vec<f64>,
    /// Flattened `[iteration][walker]`.
    pub log_post: Vec<f64>,
    pub acceptance: f64,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl PosteriorEnsemble {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn sample(&self, iteration: usize, walker: usize) -> &[f64] {
        let d = self.dim();
        let o = (iteration * self.walkers + walker) * d;
        &self.chain[o..o + d]
    }

    /// Samples from the last `window` iterations, one vector per parameter.
    pub fn tail(&self, window: usize) -> Vec<Vec<f64>> {
        let w = window.min(self.iterations);
        let mut out = vec![Vec::with_capacity(w * self.walkers); self.dim()];
        for it in self.iterations - w..self.iterations {
            for k in 0..self.walkers {
                for (d, v) in self.sample(it, k).iter().enumerate() {
                    out[d].push(*v);
                }
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut head = vec!["iteration".to_string(), "walker".into(), "log_post".into()];
        head.extend(self.names.iter().cloned());
        wr.write_record(&head)?;
        for it in 0..self.iterations {
            for k in 0..self.walkers {
                let mut row = vec![
                    it.to_string(),
                    k.to_string(),
                    fmt17(self.log_post[it * self.walkers + k]),
                ];
                row.extend(self.sample(it, k).iter().map(|v| fmt17(*v)));
                wr.write_record(&row)?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Goodman–Weare stretch move. Each walker owns a ChaCha8 stream selected by
/// its index, so results do not depend on the thread schedule.
pub fn stretch_sampler<F>(
    log_prob: F,
    init: Vec<Vec<f64>>,
    iterations: usize,
    a: f64,
    seed: u64,
    parallel: bool,
) -> Result<PosteriorEnsemble>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let nw = init.len();
    if nw < 4 || !nw.is_multiple_of(2) {
        return Err(Error::InvalidInput("walker count must be even and at least 4".into()));
    }
    let d = init[0].len();
    if d == 0 || init.iter().any(|w| w.len() != d) {
        return Err(Error::InvalidInput("walker dimensions differ".into()));
    }
    if !(a > 1.0) {
        return Err(Error::InvalidInput("stretch parameter must exceed 1".into()));
    }
    let mut rngs: Vec<ChaCha8Rng> = (0..nw)
        .map(|k| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k as u64);
            r
        })
        .collect();
    let mut pos = init;
    let mut lp: Vec<f64> = pos.iter().map(|x| log_prob(x)).collect();
    if lp.iter().all(|v| !v.is_finite()) {
        return Err(Error::Fit("every initial walker has zero posterior density".into()));
    }
    let mut chain = Vec::with_capacity(iterations * nw * d);
    let mut lp_trace = Vec::with_capacity(iterations * nw);
    let mut accepted = 0usize;
    let mut block = (0usize, 0usize);
    let mut low_blocks = Vec::new();
    let half = nw / 2;
    for it in 0..iterations {
        for h in 0..2 {
            let (lo, other) = if h == 0 { (0, half) } else { (half, 0) };
            let (pos_ref, lp_ref) = (&pos, &lp);
            let step = |(k, rng): (usize, &mut ChaCha8Rng)| {
                let k = lo + k;
                let j = other + rng.random_range(0..half);
                let u: f64 = rng.random();
                let z = ((a - 1.0) * u + 1.0).powi(2) / a;
                let y: Vec<f64> = (0..d)
                    .map(|i| pos_ref[j][i] + z * (pos_ref[k][i] - pos_ref[j][i]))
                    .collect();
                let ly = log_prob(&y);
                let q = (d as f64 - 1.0) * z.ln() + ly - lp_ref[k];
                let r: f64 = rng.random();
                (ly.is_finite() && r.ln() < q).then_some((y, ly))
            };
            let moves: Vec<Option<(Vec<f64>, f64)>> = if parallel {
                rngs[lo..lo + half].par_iter_mut().enumerate().map(step).collect()
            } else {
                rngs[lo..lo + half].iter_mut().enumerate().map(step).collect()
            };
            for (k, m) in moves.into_iter().enumerate() {
                if let Some((y, ly)) = m {
                    pos[lo + k] = y;
                    lp[lo + k] = ly;
                    accepted += 1;
                    block.0 += 1;
                }
            }
        }
        block.1 += nw;
        for k in 0..nw {
            chain.extend_from_slice(&pos[k]);
            lp_trace.push(lp[k]);
        }
        if (it + 1) % 1000 == 0 {
            if (block.0 as f64) < 0.05 * block.1 as f64 {
                low_blocks.push(it + 1);
            }
            block = (0, 0);
        }
    }
    let mut warnings = Vec::new();
    if !low_blocks.is_empty() {
        warnings.push(format!(
            "acceptance below 0.05 over 1000-iteration blocks ending at {low_blocks:?}: possible divergence"
        ));
    }
    Ok(PosteriorEnsemble {
        names: (0..d).map(|i| format!("x{i}")).collect(),
        walkers: nw,
        iterations,
        chain,
        log_post: lp_trace,
        acceptance: accepted as f64 / (iterations * nw) as f64,
        seed,
        warnings,
    })
}

// ---------------------------------------------------------------- summaries

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub median: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub kind: DataKind,
    pub id: usize,
    pub measured: f64,
    pub predicted: f64,
    pub sigma: f64,
    pub normalized: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub variant: Variant,
    pub params: Vec<ParamSummary>,
    pub fixed: BTreeMap<String, f64>,
    pub correlation: Vec<Vec<f64>>,
    /// At the posterior medians.
    pub chi2: f64,
    pub dof: usize,
    pub chi2_red: f64,
    pub optimum: Vec<f64>,
    pub chi2_optimum: f64,
    pub residuals: Vec<Residual>,
    pub acceptance: f64,
    pub seed: u64,
    pub walkers: usize,
    pub iterations: usize,
    pub window: usize,
    pub warnings: Vec<String>,
}

impl FitSummary {
    pub fn get(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn median(&self, name: &str) -> Option<f64> {
        self.get(name)
            .map(|p| p.median)
            .or_else(|| self.fixed.get(name).copied())
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < n {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[n - 1]
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

fn residual_table(pb: &Problem, x: &[f64]) -> Vec<Residual> {
    let pred = pb.prediction(x).ok();
    pb.targets
        .iter()
        .map(|e| {
            let p = pred.as_ref().and_then(|p| p.get(e.kind, e.id)).unwrap_or(f64::NAN);
            Residual {
                kind: e.kind,
                id: e.id,
                measured: e.value_hz,
                predicted: p,
                sigma: e.sigma_hz,
                normalized: (e.value_hz - p) / e.sigma_hz,
            }
        })
        .collect()
}

fn summarize(pb: &Problem, ens: &PosteriorEnsemble, opt: &Optimum, window: usize) -> FitSummary {
    let spec = pb.spec;
    let tail = ens.tail(window);
    let mut params = Vec::new();
    let mut means = Vec::new();
    let mut sds = Vec::new();
    for (d, v) in tail.iter().enumerate() {
        let mut s = v.clone();
        s.sort_by(f64::total_cmp);
        let (m, sd) = mean_sd(v);
        means.push(m);
        sds.push(sd);
        params.push(ParamSummary {
            name: ens.names[d].clone(),
            median: quantile(&s, 0.5),
            sd,
            q025: quantile(&s, 0.025),
            q975: quantile(&s, 0.975),
        });
    }
    let n = tail.len();
    let len = tail.first().map_or(0, |v| v.len()) as f64;
    let correlation = (0..n)
        .map(|i| {
            (0..n)
                .map(|k| {
                    if sds[i] == 0.0 || sds[k] == 0.0 {
                        return if i == k { 1.0 } else { 0.0 };
                    }
                    let c: f64 = tail[i]
                        .iter()
                        .zip(&tail[k])
                        .map(|(a, b)| (a - means[i]) * (b - means[k]))
                        .sum();
                    c / ((len - 1.0) * sds[i] * sds[k])
                })
                .collect()
        })
        .collect();
    let med: Vec<f64> = params.iter().map(|p| p.median).collect();
    let chi2 = pb.chi2(&med);
    let dof = pb.targets.len().saturating_sub(pb.dim());
    let fixed = spec
        .params
        .iter()
        .zip(&pb.base)
        .filter(|(p, _)| p.fixed)
        .map(|(p, v)| (p.name.clone(), *v))
        .collect();
    FitSummary {
        variant: spec.variant,
        params,
        fixed,
        correlation,
        chi2,
        dof,
        chi2_red: if dof > 0 { chi2 / dof as f64 } else { f64::NAN },
        optimum: opt.x.clone(),
        chi2_optimum: opt.chi2,
        residuals: residual_table(pb, &med),
        acceptance: ens.acceptance,
        seed: spec.seed,
        walkers: spec.walkers,
        iterations: spec.iterations,
        window: window.min(spec.iterations),
        warnings: ens.warnings.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub summary: FitSummary,
    pub ensemble: PosteriorEnsemble,
}

/// Gaussian ball from the curvature covariance, each sd capped at 1 % of
/// the prior width.
fn init_walkers(pb: &Problem, opt: &Optimum, n: usize, ball: f64, seed: u64) -> Vec<Vec<f64>> {
    let d = opt.x.len();
    let caps: Vec<f64> = pb
        .free
        .iter()
        .map(|&i| {
            let p = &pb.spec.params[i];
            let w = p.hi - p.lo;
            if w.is_finite() {
                0.01 * w
            } else {
                p.scale
            }
        })
        .collect();
    let shrink: Vec<f64> = (0..d)
        .map(|i| {
            let sd = opt.covariance[i][i].max(0.0).sqrt();
            if sd > caps[i] {
                caps[i] / sd
            } else {
                1.0
            }
        })
        .collect();
    let cov = DMatrix::from_fn(d, d, |i, k| opt.covariance[i][k] * shrink[i] * shrink[k]);
    let l = cov
        .cholesky()
        .map(|c| c.l())
        .unwrap_or_else(|| DMatrix::from_diagonal(&DVector::from_iterator(d, pb.scales())));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    (0..n)
        .map(|_| {
            let mut width = ball;
            loop {
                for _ in 0..100 {
                    let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
                    let dx = &l * z * width;
                    let x: Vec<f64> = opt.x.iter().zip(dx.iter()).map(|(a, b)| a + b).collect();
                    if pb.log_post(&x).is_finite() {
                        return x;
                    }
                }
                width *= 0.5;
                if width < 1e-12 * ball {
                    return opt.x.clone();
                }
            }
        })
        .collect()
}

fn run_from(pb: &Problem, opt: &Optimum) -> Result<FitResult> {
    let spec = pb.spec;
    let init = init_walkers(pb, opt, spec.walkers, spec.ball, spec.seed);
    let mut ens = stretch_sampler(
        |x| pb.log_post(x),
        init,
        spec.iterations,
        spec.stretch,
        spec.seed,
        spec.parallel,
    )?;
    ens.names = spec.free_names();
    let summary = summarize(pb, &ens, opt, spec.summary_window);
    Ok(FitResult { summary, ensemble: ens })
}

/// Grid search, least-squares polish, then the ensemble sampler.
pub fn mcmc_fit(spec: &FitSpec, data: &FrequencyDataset) -> Result<FitResult> {
    let pb = Problem::new(spec, data)?;
    let opt = optimize(&pb, spec.starts, spec.parallel)?;
    run_from(&pb, &opt)
}

/// Differential-data fit with the hexadecapole term.
pub fn fit_hexadecapole(data: &FrequencyDataset, walkers: usize, iterations: usize, seed: u64) -> Result<FitResult> {
    let mut spec = FitSpec::new(Variant::Hexadecapole);
    spec.walkers = walkers;
    spec.iterations = iterations;
    spec.summary_window = spec.summary_window.min(iterations / 2).max(1);
    spec.seed = seed;
    if data.of_kind(DataKind::Differential).len() != NUC_DIM - 2 {
        return Err(Error::Data("hexadecapole fit needs eight differential entries".into()));
    }
    mcmc_fit(&spec, data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nuisance {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamComponents {
    pub name: String,
    pub posterior_sd: f64,
    pub across_draw_sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalResult {
    /// Medians are means of the per-draw medians; sds combine the two
    /// components in quadrature. `chi2` is the mean per-draw `χ²` at the
    /// draw medians; residuals are at the optimum with the nuisance mean.
    pub summary: FitSummary,
    pub components: Vec<ParamComponents>,
    pub draws: Vec<f64>,
    pub per_draw: Vec<FitSummary>,
}

/// Repeats the fit with the nuisance fixed at each of `n_draws` Gaussian
/// draws. Every draw reuses the same sampler seed.
pub fn marginalize_nuisance(
    spec: &FitSpec,
    data: &FrequencyDataset,
    nuisance: &Nuisance,
    n_draws: usize,
) -> Result<MarginalResult> {
    if n_draws < 10 {
        return Err(Error::Config("marginalization needs at least 10 draws".into()));
    }
    if !(nuisance.sd >= 0.0) {
        return Err(Error::Config("nuisance sd must be non-negative".into()));
    }
    if !spec.param(&nuisance.name)?.fixed {
        return Err(Error::Config(format!(
            "nuisance '{}' must be a fixed parameter",
            nuisance.name
        )));
    }
    let mut base = spec.clone();
    base.fix(&nuisance.name, nuisance.mean)?;
    let pb = Problem::new(&base, data)?;
    let opt0 = optimize(&pb, base.starts, base.parallel)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(u64::MAX - 1);
    let normal = Normal::new(nuisance.mean, nuisance.sd).map_err(|e| Error::Config(e.to_string()))?;
    let draws: Vec<f64> = (0..n_draws).map(|_| normal.sample(&mut rng)).collect();

    let mut per_draw = Vec::with_capacity(n_draws);
    let mut cache: Option<(f64, FitSummary)> = None;
    for &v in &draws {
        if let Some((cv, s)) = &cache {
            if *cv == v {
                per_draw.push(s.clone());
                continue;
            }
        }
        let mut sp = base.clone();
        sp.fix(&nuisance.name, v)?;
        for (k, name) in base.free_names().iter().enumerate() {
            let p = sp.param_mut(name)?;
            p.start = Some(opt0.x[k]);
            p.grid = None;
        }
        let pbd = Problem::new(&sp, data)?;
        let opt = optimize(&pbd, 1, false)?;
        let s = run_from(&pbd, &opt)?.summary;
        cache = Some((v, s.clone()));
        per_draw.push(s);
    }

    let names = base.free_names();
    let mut params = Vec::new();
    let mut components = Vec::new();
    for (d, name) in names.iter().enumerate() {
        let meds: Vec<f64> = per_draw.iter().map(|s| s.params[d].median).collect();
        let (m, across) = mean_sd(&meds);
        let post = (per_draw.iter().map(|s| s.params[d].sd.powi(2)).sum::<f64>() / n_draws as f64).sqrt();
        let sd = (post * post + across * across).sqrt();
        params.push(ParamSummary {
            name: name.clone(),
            median: m,
            sd,
            q025: m - 1.96 * sd,
            q975: m + 1.96 * sd,
        });
        components.push(ParamComponents {
            name: name.clone(),
            posterior_sd: post,
            across_draw_sd: across,
        });
    }
    // parameters move nonlinearly with the nuisance, so χ² is averaged over
    // the draws rather than taken at the averaged medians
    let chi2 = per_draw.iter().map(|s| s.chi2).sum::<f64>() / n_draws as f64;
    let mut summary = per_draw[0].clone();
    summary.dof = pb.targets.len().saturating_sub(pb.dim());
    summary.chi2 = chi2;
    summary.chi2_red = if summary.dof > 0 {
        chi2 / summary.dof as f64
    } else {
        f64::NAN
    };
    summary.residuals = residual_table(&pb, &opt0.x);
    summary.params = params;
    summary.fixed.insert(nuisance.name.clone(), nuisance.mean);
    summary.optimum = opt0.x.clone();
    summary.chi2_optimum = opt0.chi2;
    summary.acceptance = per_draw.iter().map(|s| s.acceptance).sum::<f64>() / n_draws as f64;
    summary.warnings = per_draw.iter().flat_map(|s| s.warnings.iter().cloned()).collect();
    summary.warnings.dedup();
    Ok(MarginalResult {
        summary,
        components,
        draws,
        per_draw,
    })
}

// ---------------------------------------------------------------- bootstrap

/// Photon counts per delay, one value per average.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub tau: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct CountRow {
    tau_s: f64,
    average: usize,
    counts: f64,
}

impl CountRecord {
    pub fn validate(&self) -> Result<()> {
        if self.tau.len() != self.samples.len() || self.tau.len() < 4 {
            return Err(Error::Data("count record needs at least four delays".into()));
        }
        if self.samples.iter().any(|s| s.len() < 10) {
            return Err(Error::Data("every delay needs at least 10 samples".into()));
        }
        if self.samples.iter().flatten().any(|v| !v.is_finite()) || self.tau.iter().any(|t| !t.is_finite()) {
            return Err(Error::Data("non-finite count or delay".into()));
        }
        Ok(())
    }

    /// Long-format CSV with columns `tau_s, average, counts`.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let mut by_tau: BTreeMap<u64, (f64, Vec<(usize, f64)>)> = BTreeMap::new();
        for row in rd.deserialize::<CountRow>() {
            let row = row?;
            let key = row.tau_s.to_bits();
            by_tau
                .entry(key)
                .or_insert((row.tau_s, Vec::new()))
                .1
                .push((row.average, row.counts));
        }
        let mut pairs: Vec<(f64, Vec<(usize, f64)>)> = by_tau.into_values().collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let rec = Self {
            tau: pairs.iter().map(|p| p.0).collect(),
            samples: pairs
                .into_iter()
                .map(|(_, mut v)| {
                    v.sort_by_key(|x| x.0);
                    v.into_iter().map(|x| x.1).collect()
                })
                .collect(),
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["tau_s", "average", "counts"])?;
        for (t, s) in self.tau.iter().zip(&self.samples) {
            for (k, v) in s.iter().enumerate() {
                wr.write_record([fmt17(*t), k.to_string(), fmt17(*v)])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Averages `range` at every delay.
    pub fn subset(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if self.samples.iter().any(|s| s.len() < range.end) {
            return Err(Error::InvalidInput("subset exceeds the number of averages".into()));
        }
        Ok(Self {
            tau: self.tau.clone(),
            samples: self.samples.iter().map(|s| s[range.clone()].to_vec()).collect(),
        })
    }

    pub fn means(&self) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| s.iter().sum::<f64>() / s.len() as f64)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveFitSpec {
    pub freq_guess: f64,
    /// Search half-width around the guess.
    pub freq_window: f64,
    pub decay: Decay,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyFit {
    pub freq: f64,
    pub offset: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub ssr: f64,
}

/// `y = c + e(τ)[p cos 2πfτ + q sin 2πfτ]`, linear in `(c, p, q)`.
fn linear_part(tau: &[f64], y: &[f64], f: f64, decay: &Decay) -> Option<(DVector<f64>, f64)> {
    let n = tau.len();
    let x = DMatrix::from_fn(n, 3, |i, k| {
        let e = decay.envelope(tau[i]);
        let w = 2.0 * PI * f * tau[i];
        match k {
            0 => 1.0,
            1 => e * w.cos(),
            _ => e * w.sin(),
        }
    });
    let yv = DVector::from_column_slice(y);
    let beta = (x.transpose() * &x).cholesky()?.solve(&(x.transpose() * &yv));
    let ssr = (&yv - &x * &beta).norm_squared();
    Some((beta, ssr))
}

struct Ssr<'a> {
    tau: &'a [f64],
    y: &'a [f64],
    decay: Decay,
}

impl CostFunction for Ssr<'_> {
    type Param = f64;
    type Output = f64;
    fn cost(&self, f: &f64) -> std::result::Result<f64, argmin::core::Error> {
        Ok(linear_part(self.tau, self.y, *f, &self.decay).map_or(f64::INFINITY, |v| v.1))
    }
}

/// Oscillation frequency by a scan over the window and a Brent refinement.
pub fn fit_frequency(tau: &[f64], y: &[f64], spec: &CurveFitSpec) -> Result<FrequencyFit> {
    if tau.len() != y.len() || tau.len() < 4 {
        return Err(Error::InvalidInput("need at least four points".into()));
    }
    if !(spec.freq_window > 0.0) {
        return Err(Error::InvalidInput("frequency window must be positive".into()));
    }
    let cost = Ssr {
        tau,
        y,
        decay: spec.decay,
    };
    let n = 200;
    let lo = spec.freq_guess - spec.freq_window;
    let step = 2.0 * spec.freq_window / n as f64;
    let mut best = (f64::INFINITY, 0usize);
    for k in 0..=n {
        let c = cost.cost(&(lo + step * k as f64)).unwrap_or(f64::INFINITY);
        if c < best.0 {
            best = (c, k);
        }
    }
    if !best.0.is_finite() || best.1 == 0 || best.1 == n {
        return Err(Error::Fit("frequency optimum at the edge of the search window".into()));
    }
    let (a, b) = (lo + step * (best.1 - 1) as f64, lo + step * (best.1 + 1) as f64);
    let solver = BrentOpt::new(a, b).set_tolerance(1e-12, 1e-14);
    let res = Executor::new(cost, solver)
        .configure(|s| s.param(0.5 * (a + b)).max_iters(200))
        .run()
        .map_err(|e| Error::Fit(e.to_string()))?;
    let f = res
        .state()
        .best_param
        .ok_or_else(|| Error::Fit("Brent search returned nothing".into()))?;
    let (beta, ssr) = linear_part(tau, y, f, &spec.decay).ok_or_else(|| Error::Fit("singular design".into()))?;
    Ok(FrequencyFit {
        freq: f,
        offset: beta[0],
        amplitude: beta[1].hypot(beta[2]),
        phase: (-beta[2]).atan2(beta[1]),
        ssr,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Fit of the full-record means.
    pub frequency: f64,
    pub mean: f64,
    pub sd: f64,
    pub resamples: usize,
    pub failures: usize,
    /// More than 5 % of the resamples failed.
    pub flagged: bool,
    /// `(lower edge, upper edge, count)`.
    pub histogram: Vec<(f64, f64, usize)>,
    pub seed: u64,
}

/// Resamples the averages at every delay with replacement and refits the
/// frequency. Resample `r` draws from ChaCha8 stream `r`.
pub fn bootstrap(rec: &CountRecord, n_resamples: usize, spec: &CurveFitSpec, seed: u64) -> Result<BootstrapResult> {
    rec.validate()?;
    if n_resamples < 2 {
        return Err(Error::InvalidInput("need at least two resamples".into()));
    }
    let full = fit_frequency(&rec.tau, &rec.means(), spec)?;
    let around = CurveFitSpec {
        freq_guess: full.freq,
        ..*spec
    };
    let fits: Vec<Option<f64>> = (0..n_resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let y: Vec<f64> = rec
                .samples
                .iter()
                .map(|s| (0..s.len()).map(|_| s[rng.random_range(0..s.len())]).sum::<f64>() / s.len() as f64)
                .collect();
            fit_frequency(&rec.tau, &y, &around).ok().map(|f| f.freq)
        })
        .collect();
    let ok: Vec<f64> = fits.iter().flatten().copied().collect();
    let failures = n_resamples - ok.len();
    if ok.len() < 2 {
        return Err(Error::Fit("too few successful resample fits".into()));
    }
    let (mean, sd) = mean_sd(&ok);
    let (lo, hi) = ok
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let bins = 30;
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in &ok {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Ok(BootstrapResult {
        frequency: full.freq,
        mean,
        sd,
        resamples: n_resamples,
        failures,
        flagged: failures as f64 > 0.05 * n_resamples as f64,
        histogram: counts
            .into_iter()
            .enumerate()
            .map(|(k, c)| (lo + width * k as f64, lo + width * (k + 1) as f64, c))
            .collect(),
        seed,
    })
}

/// Poisson counts with mean `mean_counts · ½[1 + e(τ) cos 2πfτ]` for every
/// delay and average.
pub fn synthetic_count_record(
    freq: f64,
    decay: &Decay,
    tau: &[f64],
    n_avg: usize,
    mean_counts: f64,
    seed: u64,
) -> Result<CountRecord> {
    if !(mean_counts >= 0.0) {
        return Err(Error::InvalidInput("mean counts must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(tau.len());
    for &t in tau {
        let lam = mean_counts * 0.5 * (1.0 + decay.envelope(t) * (2.0 * PI * freq * t).cos());
        let s = if lam > 0.0 {
            let d = Poisson::new(lam).map_err(|e| Error::InvalidInput(e.to_string()))?;
            (0..n_avg).map(|_| d.sample(&mut rng)).collect()
        } else {
            vec![0.0; n_avg]
        };
        samples.push(s);
    }
    Ok(CountRecord {
        tau: tau.to_vec(),
        samples,
    })
}

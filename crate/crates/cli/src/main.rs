//! `nbspin` command-line front end.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use nbspin::config::{self, BootstrapConfig, CouplingsConfig, FitConfig, LatticeFile, ModelConfig, SignalConfig};
use nbspin::hamiltonian::Manifold;
use nbspin::inference::{self, CountRecord, CurveFitSpec, FrequencyDataset, Variant};
use nbspin::lattice;
use nbspin::pipelines::{self, FullJConfig, ReproduceOptions, Workflow};
use nbspin::spectra::{self, fmt17, SignalKind};
use nbspin::{Error, Result};

#[derive(Parser)]
#[command(name = "nbspin", version, about = "Er:CaWO4 / 93Nb spin-Hamiltonian toolkit")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; must not exist or be empty.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// RNG seed; generated and recorded when omitted.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Transition table of an effective model.
    Spectrum { model: PathBuf },
    /// Posterior fit of measured frequencies.
    Fit {
        variant: String,
        config: PathBuf,
        data: PathBuf,
    },
    /// Bootstrap uncertainty of a fitted oscillation frequency.
    Bootstrap {
        counts: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Pseudo-multipole λ-sweep of the full crystal-field model.
    SweepLambda { full_j: PathBuf },
    /// Rank lattice sites against measured couplings.
    SiteAssign { lattice: PathBuf, couplings: PathBuf },
    /// Field-induced electric dipole and its field at the nucleus.
    Edipole { lattice: PathBuf },
    /// Pulse-sequence signal and optional Poisson counts.
    Signal { kind: String, params: PathBuf },
    /// Run a reproduction workflow on the bundled tables.
    Reproduce(ReproduceArgs),
}

#[derive(Args)]
struct ReproduceArgs {
    workflow: String,
    #[arg(long)]
    walkers: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    full_walkers: Option<usize>,
    #[arg(long)]
    full_iterations: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    resamples: Option<usize>,
    /// Crystal-field file for the pseudo-multipole workflows.
    #[arg(long)]
    full_j: Option<PathBuf>,
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    args: Vec<String>,
    config_paths: Vec<String>,
    dataset_paths: Vec<String>,
    seed: Option<u64>,
    version: String,
    timestamp_unix_s: u64,
    elapsed_s: f64,
    output_dir: String,
    outputs: Vec<String>,
}

/// 17 significant digits for every float, pretty layout otherwise.
struct Digits17<'a>(PrettyFormatter<'a>);

impl Formatter for Digits17<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt17(value).as_bytes())
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

fn json17<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17(PrettyFormatter::new()));
    v.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(buf)
}

/// Outputs collected in memory and written only once the command succeeded.
#[derive(Default)]
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
    configs: Vec<String>,
    datasets: Vec<String>,
    seed: Option<u64>,
}

impl Outputs {
    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        let b = json17(v)?;
        self.files.push((name.into(), b));
        Ok(())
    }

    fn csv(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut b = Vec::new();
        f(&mut b)?;
        self.files.push((name.into(), b));
        Ok(())
    }

    fn config(&mut self, p: &Path) {
        self.configs.push(p.display().to_string());
    }

    fn dataset(&mut self, p: &Path) {
        self.datasets.push(p.display().to_string());
    }
}

fn seed_or_new(s: Option<u64>) -> u64 {
    s.unwrap_or_else(|| {
        let t = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        (t.as_nanos() as u64) ^ ((std::process::id() as u64) << 32)
    })
}

fn variant(s: &str) -> Result<Variant> {
    s.parse()
}

fn run(cli: &Cli, out: &mut Outputs) -> Result<&'static str> {
    match &cli.cmd {
        Cmd::Spectrum { model } => {
            out.config(model);
            let cfg: ModelConfig = config::load(model)?;
            let t = spectra::transitions(&cfg.params()?)?;
            out.csv("transitions.csv", |b| t.write_csv(b))?;
            out.json("transitions.json", &t)?;
            Ok("spectrum")
        }
        Cmd::Fit {
            variant: v,
            config: c,
            data,
        } => {
            out.config(c);
            out.dataset(data);
            let var = variant(v)?;
            let cfg: FitConfig = config::load(c)?;
            let seed = cfg.seed.or(cli.seed).unwrap_or_else(|| seed_or_new(None));
            out.seed = Some(seed);
            let spec = cfg.spec(var, seed)?;
            let ds = FrequencyDataset::from_path(data)?;
            match cfg.nuisance() {
                Some((n, draws)) => {
                    let m = inference::marginalize_nuisance(&spec, &ds, &n, draws)?;
                    out.json("summary.json", &m.summary)?;
                    out.json("marginal.json", &m)?;
                }
                None => {
                    let r = inference::mcmc_fit(&spec, &ds)?;
                    out.json("summary.json", &r.summary)?;
                    out.csv("chains.csv", |b| r.ensemble.write_csv(b))?;
                }
            }
            Ok("fit")
        }
        Cmd::Bootstrap { counts, config: c } => {
            out.config(c);
            out.dataset(counts);
            let cfg: BootstrapConfig = config::load(c)?;
            let seed = cfg.seed.or(cli.seed).unwrap_or_else(|| seed_or_new(None));
            out.seed = Some(seed);
            let rec = CountRecord::read_csv(config::read_text(counts)?.as_bytes())?;
            let spec = CurveFitSpec {
                freq_guess: cfg.freq_guess_hz,
                freq_window: cfg.freq_window_hz,
                decay: spectra::Decay {
                    time: cfg.decay_time_s,
                    shape: cfg.shape,
                },
            };
            let r = inference::bootstrap(&rec, cfg.resamples, &spec, seed)?;
            out.json("bootstrap.json", &r)?;
            Ok("bootstrap")
        }
        Cmd::SweepLambda { full_j } => {
            out.config(full_j);
            let cfg: FullJConfig = config::load(full_j)?;
            let r = pipelines::lambda_sweep(&cfg)?;
            out.csv("lambda_sweep.csv", |b| r.write_csv(b))?;
            out.json("lambda_sweep.json", &r)?;
            Ok("sweep-lambda")
        }
        Cmd::SiteAssign { lattice: l, couplings } => {
            out.config(l);
            out.config(couplings);
            let lf: LatticeFile = config::load(l)?;
            lf.crystal.validate()?;
            let c: CouplingsConfig = config::load(couplings)?;
            let ranked = lattice::assign_site(
                (c.a_par_hz, c.a_par_sigma_hz),
                (c.a_perp_hz, c.a_perp_sigma_hz),
                c.theta_deg.to_radians(),
                &lf.crystal,
            )?;
            out.csv("sites.csv", |b| {
                let mut w = csv::Writer::from_writer(b);
                w.write_record([
                    "rank",
                    "id",
                    "type",
                    "distance_angstrom",
                    "a_par_hz",
                    "a_perp_hz",
                    "chi2",
                ])?;
                for (k, s) in ranked.iter().enumerate() {
                    w.write_record([
                        (k + 1).to_string(),
                        s.id.clone(),
                        s.site_type.to_string(),
                        fmt17(s.distance),
                        fmt17(s.a_par),
                        fmt17(s.a_perp),
                        fmt17(s.chi2),
                    ])?;
                }
                w.flush()?;
                Ok(())
            })?;
            Ok("site-assign")
        }
        Cmd::Edipole { lattice: l } => {
            out.config(l);
            let lf: LatticeFile = config::load(l)?;
            lf.crystal.validate()?;
            let e = lf
                .edipole
                .ok_or_else(|| Error::Config("lattice file has no [edipole] table".into()))?;
            let site = lf.crystal.site(&e.site)?;
            let r_nb = e
                .r_nb_angstrom
                .map(|v| nalgebra::Vector3::new(v[0], v[1], v[2]))
                .unwrap_or_else(|| lf.crystal.position(site));
            let b = lf.crystal.field_direction(e.theta_deg.to_radians()) * e.b0_t;
            let up = lattice::electric_dipole(&b, Manifold::Up, &r_nb, &lf.crystal)?;
            let down = lattice::electric_dipole(&b, Manifold::Down, &r_nb, &lf.crystal)?;
            out.json(
                "edipole.json",
                &serde_json::json!({
                    "b0_vec_t": [b.x, b.y, b.z],
                    "r_nb_angstrom": [r_nb.x, r_nb.y, r_nb.z],
                    "up": up,
                    "down": down,
                }),
            )?;
            Ok("edipole")
        }
        Cmd::Signal { kind, params } => {
            out.config(params);
            let k: SignalKind = kind.parse()?;
            let cfg: SignalConfig = config::load(params)?;
            let tau = cfg.tau.values()?;
            let counts = match &cfg.counts {
                Some(c) => {
                    let seed = c.seed.or(cli.seed).unwrap_or_else(|| seed_or_new(None));
                    out.seed = Some(seed);
                    Some((c.mean, seed))
                }
                None => None,
            };
            let s = spectra::signal_curves(k, cfg.freq_hz, cfg.decay(k)?, cfg.nu_if_hz, &tau, counts)?;
            out.csv("signal.csv", |b| {
                let mut w = csv::Writer::from_writer(b);
                w.write_record(["tau_s", "probability", "counts"])?;
                for (i, (t, p)) in s.tau.iter().zip(&s.probability).enumerate() {
                    let c = s.counts.as_ref().map(|c| c[i].to_string()).unwrap_or_default();
                    w.write_record([fmt17(*t), fmt17(*p), c])?;
                }
                w.flush()?;
                Ok(())
            })?;
            Ok("signal")
        }
        Cmd::Reproduce(a) => {
            let wf: Workflow = a.workflow.parse()?;
            let mut o = ReproduceOptions::default();
            o.seed = cli.seed.unwrap_or(o.seed);
            out.seed = Some(o.seed);
            if let Some(v) = a.walkers {
                o.walkers = v;
            }
            if let Some(v) = a.iterations {
                o.iterations = v;
            }
            if let Some(v) = a.full_walkers {
                o.full_walkers = v;
            }
            if let Some(v) = a.full_iterations {
                o.full_iterations = v;
            }
            if let Some(v) = a.draws {
                o.draws = v;
            }
            if let Some(v) = a.resamples {
                o.resamples = v;
            }
            if let Some(p) = &a.full_j {
                out.config(p);
                o.full_j = Some(config::load(p)?);
            }
            let r = pipelines::reproduce(wf, &o)?;
            out.json("report.json", &r)?;
            Ok("reproduce")
        }
    }
}

/// Writes into a sibling staging directory, then renames it into place.
fn commit(dir: &Path, out: &Outputs, manifest: &Manifest) -> Result<()> {
    if dir.exists() && (!dir.is_dir() || fs::read_dir(dir)?.next().is_some()) {
        return Err(Error::InvalidInput(format!(
            "output directory {} is not empty",
            dir.display()
        )));
    }
    let name = dir
        .file_name()
        .ok_or_else(|| Error::InvalidInput("output path has no final component".into()))?;
    let parent = dir
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let stage = parent.join(format!(".{}.partial-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| -> Result<()> {
        fs::create_dir_all(&stage)?;
        for (f, b) in &out.files {
            fs::write(stage.join(f), b)?;
        }
        fs::write(stage.join("manifest.json"), json17(manifest)?)?;
        if dir.exists() {
            fs::remove_dir(dir)?;
        }
        fs::rename(&stage, dir)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&stage);
    }
    result
}

fn fail(kind: &str, message: &str) -> ExitCode {
    let e = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{e}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return fail("usage", e.to_string().trim());
        }
    };
    let Some(dir) = cli.out.clone() else {
        return fail("usage", "--out <DIR> is required");
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return fail("usage", "--threads must be positive");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail("runtime", &e.to_string());
        }
    }
    let start = Instant::now();
    let mut out = Outputs::default();
    let command = match run(&cli, &mut out) {
        Ok(c) => c,
        Err(e) => return fail(e.kind(), &e.to_string()),
    };
    let manifest = Manifest {
        command: command.into(),
        args: std::env::args().skip(1).collect(),
        config_paths: out.configs.clone(),
        dataset_paths: out.datasets.clone(),
        seed: out.seed,
        version: env!("CARGO_PKG_VERSION").into(),
        timestamp_unix_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        elapsed_s: start.elapsed().as_secs_f64(),
        output_dir: dir.display().to_string(),
        outputs: out.files.iter().map(|f| f.0.clone()).collect(),
    };
    match commit(&dir, &out, &manifest) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}

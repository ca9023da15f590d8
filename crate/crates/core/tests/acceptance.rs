//! Acceptance criteria 1 to 10, one PASS/FAIL line each.
//!
//! Exits 0 regardless of the outcome unless `ACCEPTANCE_STRICT=1`.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nbspin::data;
use nbspin::hamiltonian::{EffectiveModelParams, Hyperfine};
use nbspin::perturbation::{self, PerturbationModel};
use nbspin::pipelines::{self, Check, CheckKind, Report, ReproduceOptions, Workflow};
use nbspin::quadrupole::{self, QuadrupoleTensor, SphericalForm};
use nbspin::spectra;
use nbspin::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

fn failed_checks(r: &Report) -> String {
    let bad: Vec<String> = r
        .checks
        .iter()
        .filter(|c| c.kind != CheckKind::Informational && c.evaluated && !c.within)
        .map(|c| format!("{}={:.6}", c.name, c.computed))
        .collect();
    if bad.is_empty() {
        String::new()
    } else {
        format!("; failing {}", bad.join(", "))
    }
}

fn show(c: &Check) -> String {
    format!("{}={:.6} [{:.6}, {:.6}]", c.name, c.computed, c.lower, c.upper)
}

fn criterion_1() -> Result<Outcome> {
    let t = Instant::now();
    let o = ReproduceOptions::default();
    let r = pipelines::reproduce(Workflow::GroundFit, &o)?;
    let secs = t.elapsed().as_secs_f64();
    let medians_ok = ["b0", "s0", "s2"].iter().all(|n| r.check(n).is_some_and(|c| c.within));
    let chi = r.check("chi2_red").map(|c| c.computed).unwrap_or(f64::NAN);
    let chi_opt = r.check("chi2_red_optimum").map(|c| c.computed).unwrap_or(f64::NAN);
    let chi_ok = (chi - 0.75).abs() <= 0.3;
    outcome(
        medians_ok && chi_ok && secs <= 300.0,
        format!(
            "medians {} ; chi2/nu {chi:.3} at medians, {chi_opt:.3} at optimum (want 0.75 ± 0.3); {secs:.1} s",
            if medians_ok { "ok" } else { "off" }
        ),
    )
}

fn criterion_2() -> Result<Outcome> {
    let t = Instant::now();
    let r = pipelines::reproduce(Workflow::HexadecapoleFit, &ReproduceOptions::default())?;
    let secs = t.elapsed().as_secs_f64();
    let parts: Vec<String> = ["c4", "s0", "quadrupole_only_max_residual_sigma"]
        .iter()
        .filter_map(|n| r.check(n).map(show))
        .collect();
    outcome(
        r.pass && secs <= 300.0,
        format!("{}; {secs:.1} s{}", parts.join(", "), failed_checks(&r)),
    )
}

fn criterion_3() -> Result<Outcome> {
    let t = Instant::now();
    let r = pipelines::reproduce(Workflow::FullFit, &ReproduceOptions::default())?;
    let secs = t.elapsed().as_secs_f64();
    let want = ["q_sdq", "a_par", "chi2_red"];
    let ok = want.iter().all(|n| r.check(n).is_some_and(|c| c.within));
    let parts: Vec<String> = want.iter().filter_map(|n| r.check(n).map(show)).collect();
    outcome(ok && secs <= 3600.0, format!("{}; {secs:.1} s", parts.join(", ")))
}

fn criterion_4() -> Result<Outcome> {
    let (dg, de) = pipelines::forward_regression()?;
    let mg = dg.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let me = de.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    outcome(
        mg <= 5.0 && me <= 90.0,
        format!("max |ω↓ residual| {mg:.2} Hz (≤ 5), max |ω↑−ω↓ residual| {me:.2} Hz (≤ 90)"),
    )
}

fn criterion_5() -> Result<Outcome> {
    let g = |n| data::lookup(&data::GROUND_MEDIANS, n).unwrap_or(0.0);
    let sph = SphericalForm {
        s0: g("s0"),
        s1: 0.0,
        s2: g("s2"),
        delta: g("delta"),
        zeta: 0.0,
    };
    let nu_i = -data::lookup(&data::GROUND_MEDIANS, "b0").unwrap_or(0.0) * nbspin::constants::GAMMA_NB;
    let (a_par, a_perp) = (133.5e3, data::A_PERP_HZ.0);
    let mut p = EffectiveModelParams::bare(7.0e9, nu_i);
    p.hyperfine = Hyperfine::Secular { a_par, a_perp };
    p.quad = quadrupole::from_spherical(&sph);
    let exact = spectra::transitions(&p)?;
    let pm = PerturbationModel {
        nu_i,
        a_par,
        a_perp,
        reduced: perturbation::reduced_from_spherical(&sph),
    };
    let mut worst: f64 = 0.0;
    let mut at = String::new();
    for n in 0..10 {
        let a = perturbation::approx_elements(&pm, n)?;
        let pairs = [(a.plus, n + 1, "+"), (a.minus, n.wrapping_sub(1), "-")];
        for (approx, down, tag) in pairs {
            let Some(v) = approx else { continue };
            let e = exact.sx(down, n);
            let rel = (v.abs() - e) / e;
            if rel.abs() > worst.abs() {
                worst = rel;
                at = format!("n={n}{tag}");
            }
        }
    }
    outcome(
        worst.abs() <= 0.02,
        format!("max relative deviation {:.2}% at {at} (≤ 2%)", 100.0 * worst),
    )
}

fn random_tensor(rng: &mut ChaCha8Rng) -> Result<QuadrupoleTensor> {
    let cq = rng.random_range(1e5..3e7);
    let eta = rng.random_range(0.0..1.0);
    let e = [
        rng.random_range(-PI..PI),
        rng.random_range(0.0..PI),
        rng.random_range(-PI..PI),
    ];
    quadrupole::from_principal(cq, eta, e, 4.5)
}

fn criterion_6() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut p = EffectiveModelParams::bare(7.0e9, -4.8e6);
    p.hyperfine = Hyperfine::Secular {
        a_par: 133.5e3,
        a_perp: 0.0,
    };
    p.quad = random_tensor(&mut rng)?;
    let base = spectra::transitions(&p)?;
    let reference: Vec<f64> = base
        .nmr_down
        .iter()
        .chain(&base.nmr_up)
        .chain(&base.epr)
        .copied()
        .collect();
    let mut rot_err: f64 = 0.0;
    for _ in 0..100 {
        let mut q = p;
        q.quad = p.quad.rotated(&quadrupole::rot_z(rng.random_range(-PI..PI)));
        let t = spectra::transitions(&q)?;
        let v = t.nmr_down.iter().chain(&t.nmr_up).chain(&t.epr);
        for (a, b) in v.zip(&reference) {
            rot_err = rot_err.max((a - b).abs() / b.abs());
        }
    }

    let mut trace_err: f64 = 0.0;
    let mut sym_err: f64 = 0.0;
    let mut round_err: f64 = 0.0;
    for _ in 0..100 {
        let t = random_tensor(&mut rng)?;
        let scale = t.cart.abs().max();
        let r = quadrupole::euler_zyz([
            rng.random_range(-PI..PI),
            rng.random_range(0.0..PI),
            rng.random_range(-PI..PI),
        ]);
        let u: Matrix3<f64> = t.rotated(&r).cart;
        trace_err = trace_err.max(u.trace().abs() / scale);
        sym_err = sym_err.max((u - u.transpose()).abs().max() / scale);

        let pf = quadrupole::to_principal(&t, 4.5);
        let back = quadrupole::from_principal(pf.cq, pf.eta, pf.euler, 4.5)?;
        round_err = round_err.max((back.cart - t.cart).abs().max() / scale);
        let sf = quadrupole::to_spherical(&t, false);
        let back = quadrupole::from_spherical(&sf);
        round_err = round_err.max((back.cart - t.cart).abs().max() / scale);
    }
    outcome(
        rot_err <= 1e-9 && trace_err <= 1e-10 && sym_err <= 1e-10 && round_err <= 1e-10,
        format!(
            "ζ-rotation {rot_err:.1e} (≤ 1e-9), trace {trace_err:.1e}, symmetry {sym_err:.1e}, round trips {round_err:.1e} (≤ 1e-10)"
        ),
    )
}

fn report_line(wf: Workflow, names: &[&str]) -> Result<Outcome> {
    let r = pipelines::reproduce(wf, &ReproduceOptions::default())?;
    let parts: Vec<String> = names.iter().filter_map(|n| r.check(n).map(show)).collect();
    outcome(r.pass, format!("{}{}", parts.join(", "), failed_checks(&r)))
}

fn criterion_7() -> Result<Outcome> {
    report_line(
        Workflow::SiteAssignment,
        &["top_site_type", "a_zz_at_5p688_angstrom_hz"],
    )
}

fn criterion_8() -> Result<Outcome> {
    let r = pipelines::reproduce(Workflow::ElectricDipole, &ReproduceOptions::default())?;
    let parts: Vec<String> = r
        .checks
        .iter()
        .map(|c| format!("{}={:.4}", c.name, c.computed))
        .collect();
    outcome(r.pass, format!("{}{}", parts.join(", "), failed_checks(&r)))
}

fn criterion_9() -> Result<Outcome> {
    let o = ReproduceOptions::default();
    let q = pipelines::reproduce(Workflow::PseudoQuadrupole, &o)?;
    let h = pipelines::reproduce(Workflow::PseudoHexadecapole, &o)?;
    let unconditional = |r: &Report| {
        r.checks
            .iter()
            .filter(|c| c.kind == CheckKind::Required)
            .map(|c| format!("{}={:.3e}", c.name, c.computed))
            .collect::<Vec<_>>()
    };
    let mut parts = unconditional(&q);
    parts.extend(unconditional(&h));
    let pending = q.status == "conditional" || h.status == "conditional";
    let tail = if pending {
        "; conditional checks not evaluated (no user crystal-field coefficients)"
    } else {
        ""
    };
    outcome(
        q.pass && h.pass,
        format!("{}{tail}{}{}", parts.join(", "), failed_checks(&q), failed_checks(&h)),
    )
}

fn criterion_10() -> Result<Outcome> {
    let mut ratios = Vec::new();
    for seed in 1..=20 {
        ratios.push(pipelines::sqrt_n_ratio(seed, 300)?.0);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let iso = pipelines::reproduce(Workflow::IsotopeId, &ReproduceOptions::default())?;
    let best = iso
        .check("best_gamma_mhz_per_t")
        .map_or(String::new(), |c| c.note.clone());
    outcome(
        (mean - 2.0).abs() <= 0.4 && iso.pass,
        format!("mean sd ratio {mean:.3} over 20 seeds (2.0 ± 0.4); isotope {best}"),
    )
}

type Criterion = fn() -> Result<Outcome>;

fn main() {
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let criteria: [(u32, Criterion); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failures = 0;
    for (k, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&k)) {
            continue;
        }
        let line = match f() {
            Ok(o) => {
                if !o.pass {
                    failures += 1;
                }
                format!("criterion {k}: {} : {}", if o.pass { "PASS" } else { "FAIL" }, o.detail)
            }
            Err(e) => {
                failures += 1;
                format!("criterion {k}: FAIL : error {e}")
            }
        };
        println!("{line}");
    }
    println!("{failures} failing");
    if strict && failures > 0 {
        std::process::exit(1);
    }
}

use nbspin::constants::GAMMA_NB;
use nbspin::hamiltonian::{EffectiveModelParams, Hyperfine};
use nbspin::perturbation::{approx_elements, perturbed_element, reduced_from_spherical, PerturbationModel};
use nbspin::quadrupole::{from_spherical, SphericalForm};
use nbspin::spectra::{transitions, TransitionTable};

const A_PAR: f64 = 133.5e3;
const A_PERP: f64 = 55e3;

fn setup(s2: f64) -> (TransitionTable, PerturbationModel) {
    let sph = SphericalForm {
        s0: -237.353e3,
        s1: 0.0,
        s2,
        delta: -0.002,
        zeta: 0.0,
    };
    let nu_i = -0.46054333 * GAMMA_NB;
    let mut p = EffectiveModelParams::bare(7.0e9, nu_i);
    p.hyperfine = Hyperfine::Secular {
        a_par: A_PAR,
        a_perp: A_PERP,
    };
    p.quad = from_spherical(&sph);
    let pm = PerturbationModel {
        nu_i,
        a_par: A_PAR,
        a_perp: A_PERP,
        reduced: reduced_from_spherical(&sph),
    };
    (transitions(&p).unwrap(), pm)
}

/// Relative deviations of the closed-form `n → n±1` elements, in order.
fn deviations(t: &TransitionTable, pm: &PerturbationModel) -> Vec<f64> {
    let mut out = vec![];
    for n in 0..10 {
        let a = approx_elements(pm, n).unwrap();
        if let Some(v) = a.plus {
            out.push(v.abs() / t.sx(n + 1, n) - 1.0);
        }
        if let Some(v) = a.minus {
            out.push(v.abs() / t.sx(n - 1, n) - 1.0);
        }
    }
    out
}

#[test]
fn closed_form_matches_exact_without_transverse_quadrupole() {
    let (t, pm) = setup(0.0);
    for d in deviations(&t, &pm) {
        assert!(d.abs() < 0.02, "{d}");
    }
    for n in 0..9 {
        let e = perturbed_element(&pm, n + 1, n).unwrap().norm();
        assert!((e / t.sx(n + 1, n) - 1.0).abs() < 0.02);
    }
}

#[test]
fn transverse_quadrupole_breaks_the_closed_form() {
    let (t, pm) = setup(149.443e3);
    let d = deviations(&t, &pm);
    let worst = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    // bottom pair, strongest I±² admixture
    assert!(worst > 0.25 && worst < 0.30, "{worst}");
    let bulk = d[..d.len() - 3].iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(bulk < 0.08, "{bulk}");
}

#[test]
fn elements_scale_linearly_with_a_perp() {
    let (t, pm) = setup(0.0);
    let mut half = pm;
    half.a_perp *= 0.5;
    let mut p = EffectiveModelParams::bare(7.0e9, pm.nu_i);
    p.hyperfine = Hyperfine::Secular {
        a_par: A_PAR,
        a_perp: 0.5 * A_PERP,
    };
    p.quad = from_spherical(&SphericalForm {
        s0: -237.353e3,
        s1: 0.0,
        s2: 0.0,
        delta: -0.002,
        zeta: 0.0,
    });
    let th = transitions(&p).unwrap();
    for n in 0..9 {
        let r = th.sx(n + 1, n) / t.sx(n + 1, n);
        assert!((r - 0.5).abs() < 5e-3, "{r}");
        let a = approx_elements(&half, n).unwrap().plus.unwrap();
        let b = approx_elements(&pm, n).unwrap().plus.unwrap();
        assert!((a / b - 0.5).abs() < 1e-14);
    }
}

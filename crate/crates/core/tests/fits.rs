use nbspin::data;
use nbspin::hamiltonian::Manifold;
use nbspin::inference::{
    expand_params, fit_optimum, mcmc_fit, predict, DataEntry, DataKind, FitContext, FitSpec, FrequencyDataset, Variant,
};
use nbspin::pipelines::{branch_spec, doublet_branches, fit_branch, lambda_sweep, FullJConfig};

fn ground_data(p: &[f64]) -> FrequencyDataset {
    let pred = predict(Variant::Ground, &FitContext::default(), p, &[]).unwrap();
    let entries = pred
        .ground
        .iter()
        .enumerate()
        .map(|(id, &v)| DataEntry {
            id,
            kind: DataKind::Ground,
            value_hz: v,
            sigma_hz: 1.0,
        })
        .collect();
    FrequencyDataset::new(entries).unwrap()
}

const TRUTH: [f64; 8] = [0.4605, -237.2e3, 2.5e3, 149.3e3, 0.12, 0.0, 0.0, 0.0];

#[test]
fn optimizer_recovers_noise_free_ground_parameters() {
    let d = ground_data(&TRUTH);
    let spec = FitSpec::new(Variant::Ground);
    let opt = fit_optimum(&spec, &d).unwrap();
    let x = expand_params(&spec, &d, &opt.x).unwrap();
    assert!(opt.chi2 < 1e-4, "{}", opt.chi2);
    assert!((x[0] - TRUTH[0]).abs() < 1e-9);
    for k in 1..4 {
        assert!((x[k] - TRUTH[k]).abs() < 0.5, "{k}: {} vs {}", x[k], TRUTH[k]);
    }
    // even in Δ at ζ = 0
    assert!((x[4].abs() - TRUTH[4]).abs() < 1e-3, "{}", x[4]);
}

#[test]
fn posterior_covers_the_truth() {
    let d = ground_data(&TRUTH);
    let mut spec = FitSpec::new(Variant::Ground);
    spec.walkers = 16;
    spec.iterations = 1500;
    spec.summary_window = 700;
    spec.seed = 11;
    let r = mcmc_fit(&spec, &d).unwrap();
    let s = &r.summary;
    for (name, truth) in [("b0", TRUTH[0]), ("s0", TRUTH[1]), ("s2", TRUTH[3])] {
        let p = s.get(name).unwrap();
        assert!(
            (p.median - truth).abs() < 4.0 * p.sd,
            "{name}: {} ± {} vs {truth}",
            p.median,
            p.sd
        );
    }
    assert!(s.acceptance > 0.05 && s.acceptance < 1.0);
    assert_eq!(r.ensemble.walkers, 16);
}

#[test]
fn same_seed_same_chains() {
    let d = data::differential_dataset().unwrap();
    let mut spec = FitSpec::new(Variant::Hexadecapole);
    spec.walkers = 12;
    spec.iterations = 300;
    spec.summary_window = 150;
    let a = mcmc_fit(&spec, &d).unwrap();
    let b = mcmc_fit(&spec, &d).unwrap();
    assert_eq!(a.ensemble.chain, b.ensemble.chain);
    spec.seed = 2;
    let c = mcmc_fit(&spec, &d).unwrap();
    assert_ne!(a.ensemble.chain, c.ensemble.chain);
}

fn branch_dataset(levels: &[f64]) -> FrequencyDataset {
    let entries = levels
        .iter()
        .enumerate()
        .map(|(id, &v)| DataEntry {
            id,
            kind: DataKind::Ground,
            value_hz: v,
            sigma_hz: 1.0,
        })
        .collect();
    FrequencyDataset::new(entries).unwrap()
}

#[test]
fn pseudo_multipole_fits_use_the_ordinary_fit_path() {
    let cfg = FullJConfig::placeholder().unwrap();
    let p = cfg.params(1.0).unwrap();
    let b = doublet_branches(&p).unwrap();
    let d = branch_dataset(&b.nmr(Manifold::Down));
    let spec = branch_spec(Variant::Ground, cfg.gamma_n(), cfg.b0_t).unwrap();
    let via_branch = fit_branch(&spec, &d).unwrap();
    let opt = fit_optimum(&spec, &d).unwrap();
    let x = expand_params(&spec, &d, &opt.x).unwrap();
    assert_eq!(via_branch.b_fit, x[0]);
    assert_eq!(via_branch.s0, x[1]);
    assert_eq!(via_branch.chi2, opt.chi2);

    let sweep = lambda_sweep(&cfg).unwrap();
    let row = sweep.row(1.0).unwrap();
    assert_eq!(row.down.as_ref().unwrap().s0, via_branch.s0);
}

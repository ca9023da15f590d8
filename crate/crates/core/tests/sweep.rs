use nbspin::pipelines::{lambda_sweep, FullJConfig};

#[test]
fn placeholder_sweep_properties() {
    let cfg = FullJConfig::placeholder().unwrap();
    let r = lambda_sweep(&cfg).unwrap();
    assert_eq!(r.rows.len(), 6);
    assert!(r.rows.iter().all(|x| !x.flagged && x.branch_weight > 0.99));

    let zero = r.row(0.0).unwrap();
    assert!(zero.q_sdq_pq.unwrap().abs() < 1e-3);
    assert!(zero.c4_pseudo().unwrap().abs() < 1e-3);
    assert!((zero.hex.as_ref().unwrap().b_fit - cfg.b0_t).abs() < 1e-9);

    let (a, res) = r.quadratic_check(0.6);
    assert!(res < 0.05, "{res}");
    assert!(a < 0.0);
    let (_, _, r2) = r.field_linearity();
    assert!(r2 > 0.99, "{r2}");

    // coupling strength only enters squared at leading order
    let q = |l: f64| r.row(l).unwrap().q_sdq_pq.unwrap();
    assert!((q(0.4) / q(0.2) - 4.0).abs() < 0.2);

    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.starts_with("lambda,"));
}

#[test]
fn sweep_is_deterministic() {
    let mut cfg = FullJConfig::placeholder().unwrap();
    cfg.lambda_grid = vec![0.0, 0.5];
    assert_eq!(lambda_sweep(&cfg).unwrap(), lambda_sweep(&cfg).unwrap());
}

#[test]
fn user_file_must_be_complete() {
    let mut cfg = FullJConfig::placeholder().unwrap();
    cfg.bkq_ghz.insert("B99".into(), 1.0);
    assert!(lambda_sweep(&cfg).is_err());
}

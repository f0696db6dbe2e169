//! Harness-level behavior: sweep shape and determinism, config parsing,
//! emitted bounds matching their formulas, file formats, and the fitted-net
//! three-layer cross-check.

use attn_interp::icl::GradNetSpec;
use attn_interp::native_seq2seq::{build_three_layer_seq2seq, ThreeLayerBudget, ThreeLayerFfn};
use attn_interp::numkit::Matrix;
use attn_interp_harness::config::{Axis, Experiment, SweepConfig};
use attn_interp_harness::experiments::{expected_bound, fit_random_feature_relu};
use attn_interp_harness::slope::fit_loglog_slope;
use attn_interp_harness::sweep::{run_sweep, rows_to_csv, CSV_HEADER};

fn p_sweep() -> SweepConfig {
    let mut cfg = SweepConfig::new(
        Experiment::Single,
        Axis::P,
        vec![16.0, 32.0, 64.0, 128.0],
    );
    cfg.trials = 10;
    cfg.seed = 12345;
    cfg
}

#[test]
fn p_sweep_yields_forty_rows_with_computable_slope() {
    let rows = run_sweep(&p_sweep()).unwrap();
    assert_eq!(rows.len(), 40);
    assert!(rows.iter().all(|r| r.pass));
    let slope = fit_loglog_slope(&rows).unwrap();
    assert!(slope < 0.0, "slope = {slope}");
}

#[test]
fn empty_values_is_a_config_error() {
    let mut cfg = p_sweep();
    cfg.values.clear();
    assert!(run_sweep(&cfg).is_err());
}

#[test]
fn non_increasing_values_rejected() {
    let mut cfg = p_sweep();
    cfg.values = vec![16.0, 16.0];
    assert!(run_sweep(&cfg).is_err());
}

#[test]
fn same_seed_gives_byte_identical_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = p_sweep();
    cfg.trials = 3;
    cfg.out_csv = Some(dir.path().join("a.csv"));
    cfg.out_svg = Some(dir.path().join("a.svg"));
    run_sweep(&cfg).unwrap();
    let csv_a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let svg_a = std::fs::read(dir.path().join("a.svg")).unwrap();
    cfg.out_csv = Some(dir.path().join("b.csv"));
    cfg.out_svg = Some(dir.path().join("b.svg"));
    run_sweep(&cfg).unwrap();
    assert_eq!(csv_a, std::fs::read(dir.path().join("b.csv")).unwrap());
    assert_eq!(svg_a, std::fs::read(dir.path().join("b.svg")).unwrap());
}

#[test]
fn csv_header_is_exact() {
    assert_eq!(
        CSV_HEADER,
        "experiment,axis,value,n,d,p,H,beta,seed,err_inf,err_bound,err_lp,pass"
    );
    let rows = run_sweep(&SweepConfig::new(Experiment::Single, Axis::P, vec![16.0])).unwrap();
    let csv = rows_to_csv(&rows);
    assert!(csv.starts_with(CSV_HEADER));
    assert_eq!(csv.lines().count(), 1 + rows.len());
}

#[test]
fn emitted_bounds_match_their_formulas() {
    for (experiment, axis, values) in [
        (Experiment::Single, Axis::P, vec![16.0, 32.0]),
        (Experiment::Multi, Axis::H, vec![1.0, 2.0, 4.0]),
        (Experiment::Icl, Axis::P, vec![24.0, 48.0]),
        (Experiment::Hardmax, Axis::P, vec![8.0]),
        (Experiment::Colwise, Axis::P, vec![8.0]),
        (Experiment::Icgd, Axis::P, vec![8.0]),
        (Experiment::Single, Axis::BMinusA, vec![0.5, 1.0, 2.0]),
    ] {
        let mut cfg = SweepConfig::new(experiment, axis, values);
        cfg.trials = 2;
        cfg.seed = 9;
        if experiment == Experiment::Multi {
            cfg.base.n = 10;
        }
        let rows = run_sweep(&cfg).unwrap();
        for row in rows {
            if let Some(want) = expected_bound(&row, &cfg) {
                assert!(
                    (row.err_bound - want).abs() <= 1e-12 * (1.0 + want.abs()),
                    "{} bound {} vs formula {}",
                    row.experiment,
                    row.err_bound,
                    want
                );
            }
        }
    }
}

#[test]
fn config_file_parsing_and_overrides() {
    let mut cfg = SweepConfig::new(Experiment::Single, Axis::P, vec![1.0]);
    cfg.apply_file(
        "# comment\nexperiment=multi\naxis=H\nvalues=1,2,4\ntrials=3\nseed=99\nn=10\nepsilon=0.002\n",
    )
    .unwrap();
    assert_eq!(cfg.experiment, Experiment::Multi);
    assert_eq!(cfg.axis, Axis::H);
    assert_eq!(cfg.values, vec![1.0, 2.0, 4.0]);
    assert_eq!(cfg.trials, 3);
    assert_eq!(cfg.seed, 99);
    assert_eq!(cfg.base.n, 10);
    assert_eq!(cfg.epsilon(), 0.002);
    // flags override file values
    cfg.apply_kv("trials", "7").unwrap();
    assert_eq!(cfg.trials, 7);
    assert!(cfg.apply_file("nope\n").is_err());
    assert!(cfg.apply_kv("unknown", "1").is_err());
}

#[test]
fn gradnet_file_schema_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.txt");
    std::fs::write(&path, "1 1 1.0 -1.0 0.0\n1 2 0.5 0.5 -0.25\n").unwrap();
    let net = GradNetSpec::from_text(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!((net.d, net.h), (1, 2));
    assert_eq!(net.coef[0][1], (0.5, 0.5, -0.25));
}

#[test]
fn fitted_two_unit_net_tracks_mean_through_three_layers() {
    // fit f(X) = mean of all entries (d = 1, n = 3) with two random ReLU
    // features, then check the attention assembly stays within twice the
    // net's own error of f
    let n = 3;
    let f = |x: &Matrix| x.data().iter().sum::<f64>() / n as f64;
    let units = fit_random_feature_relu(&f, 1, n, 2, 600, 1.0, 20260811);
    let ffn = ThreeLayerFfn {
        d: 1,
        n,
        units: vec![units; n],
    };
    let budget = ThreeLayerBudget {
        eps_pre: 0.01,
        ..ThreeLayerBudget::default()
    };
    let net = build_three_layer_seq2seq(&ffn, &budget).unwrap();
    let mut rng = attn_interp::numkit::seeding::rng_for(888, 0);
    let mut net_err = 0.0f64;
    let mut attn_err = 0.0f64;
    for _ in 0..200 {
        let x = attn_interp::numkit::BoxDomain::centered(1, n, 1.0)
            .unwrap()
            .sample(&mut rng);
        let net_out = ffn.eval(&x).get(0, 0);
        let attn_out = net.forward(&x).unwrap().get(0, 0);
        // the target is column-symmetric: grade column 0
        net_err = net_err.max((net_out - f(&x)).abs());
        attn_err = attn_err.max((attn_out - f(&x)).abs());
    }
    assert!(net_err > 0.0);
    assert!(
        attn_err <= 2.0 * net_err,
        "attention {attn_err} vs 2x net {net_err}"
    );
}

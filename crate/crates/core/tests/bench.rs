use asbart::bench::{run_bench, BenchConfig, Method};
use asbart::friedman::{gen_friedman, FriedmanSpec, Noise};

fn sd(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

#[test]
fn mean_predictor_loses_about_sd_of_f() {
    let cfg = BenchConfig {
        reps: 3,
        n: 2000,
        methods: vec![Method::Mean, Method::Truth],
        threads: Some(1),
        ..BenchConfig::default()
    };
    let report = run_bench(&cfg).unwrap();
    let sd_f = sd(&gen_friedman(&FriedmanSpec { n: 2000, noise: Noise::High, seed: 1 }).unwrap().truth);
    for r in report.rmse_of("mean") {
        assert!((r / sd_f - 1.0).abs() < 0.10, "rmse {r} vs sd(f) {sd_f}");
    }
    assert!(report.rmse_of("truth").iter().all(|&r| r == 0.0));
}

#[test]
fn report_layout_and_baseline_ratio() {
    let cfg = BenchConfig {
        reps: 2,
        n: 120,
        trees: 5,
        methods: vec!["hard".parse().unwrap(), "soft-sigmoid".parse().unwrap(), Method::Mean],
        threads: Some(2),
        ..BenchConfig::default()
    };
    let report = run_bench(&cfg).unwrap();
    let order: Vec<(usize, &str)> = report.records.iter().map(|r| (r.rep, r.method.as_str())).collect();
    assert_eq!(
        order,
        [(0, "hard"), (0, "soft-sigmoid"), (0, "mean"), (1, "hard"), (1, "soft-sigmoid"), (1, "mean")]
    );
    assert!(report.records.iter().all(|r| r.seconds >= 0.0 && r.rmse.is_finite()));
    let summary = report.summary();
    assert_eq!(summary[0].time_ratio, 1.0);
    assert_eq!(summary.len(), 3);
    assert!(report.summary_table().contains("soft-sigmoid"));
}

#[test]
fn bench_is_reproducible_apart_from_timing() {
    let cfg = BenchConfig {
        reps: 2,
        n: 100,
        trees: 4,
        seed: 99,
        methods: vec!["soft-linear".parse().unwrap()],
        threads: Some(1),
        ..BenchConfig::default()
    };
    let a = run_bench(&cfg).unwrap();
    let b = run_bench(&BenchConfig { threads: Some(2), ..cfg.clone() }).unwrap();
    let key = |r: &asbart::bench::BenchReport| r.records.iter().map(|x| (x.rep, x.method.clone(), x.rmse.to_bits())).collect::<Vec<_>>();
    assert_eq!(key(&a), key(&b));
    let c = run_bench(&BenchConfig { seed: 100, ..cfg }).unwrap();
    assert_ne!(key(&a), key(&c));
}

#[test]
fn unknown_method_and_bad_config_fail() {
    assert!("xs40t9".parse::<Method>().is_err());
    assert!(run_bench(&BenchConfig { reps: 0, ..BenchConfig::default() }).is_err());
}

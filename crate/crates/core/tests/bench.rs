use prefopt::bench::{self, aggregate, ExperimentSpec, StrategyChoice};
use prefopt::optimizer::{OptimizerConfig, Strategy};
use prefopt::vinfer::FitConfig;

fn small_spec() -> ExperimentSpec {
    ExperimentSpec {
        oracle: "sphere".into(),
        tolerances: vec![0.0, 0.1],
        trials: 3,
        budget: 3,
        seed: 5,
        strategy: StrategyChoice::Both,
        config: OptimizerConfig { fit: FitConfig { steps: 200, warm_steps: 50, ..Default::default() }, ..Default::default() },
    }
}

fn csv_bytes(r: &bench::ExperimentResult) -> (Vec<u8>, Vec<u8>) {
    let mut trials = Vec::new();
    bench::write_trials_csv(&mut trials, &r.trials).unwrap();
    let mut summary = Vec::new();
    bench::write_summary_csv(&mut summary, &aggregate(&r.trials)).unwrap();
    (trials, summary)
}

#[test]
fn experiments_are_reproducible_and_reaggregate() {
    let spec = small_spec();
    let a = bench::run_experiment(&spec).unwrap();
    let b = bench::run_experiment(&spec).unwrap();
    assert_eq!(a.failures(), 0);
    assert_eq!(a.trials.len(), 2 * 2 * 3);
    let (ta, sa) = csv_bytes(&a);
    assert_eq!((ta.clone(), sa.clone()), csv_bytes(&b));

    let reread = bench::read_trials_csv(ta.as_slice()).unwrap();
    let mut again = Vec::new();
    bench::write_summary_csv(&mut again, &aggregate(&reread)).unwrap();
    assert_eq!(again, sa);

    for t in a.cell(Strategy::Preference, 0.0) {
        assert_eq!(t.trace.len(), 2 * 2 + 3);
        assert!(t.trace.windows(2).all(|w| w[1] <= w[0]));
    }
    for row in aggregate(&a.trials) {
        assert!(row.p10 <= row.p25 && row.p25 <= row.p40 && row.p40 <= row.p50);
        assert!(row.p50 <= row.p60 && row.p60 <= row.p75 && row.p75 <= row.p90);
    }
}

#[test]
fn writes_every_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec { strategy: StrategyChoice::Random, ..small_spec() };
    let r = bench::run_experiment(&spec).unwrap();
    bench::write_outputs(dir.path(), &r).unwrap();
    for f in ["trials.csv", "summary.csv", "final.csv", "spec.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let header = std::fs::read_to_string(dir.path().join("trials.csv")).unwrap();
    assert!(header.starts_with("strategy,tolerance,seed,iteration,best_value,x0,x1"));
}

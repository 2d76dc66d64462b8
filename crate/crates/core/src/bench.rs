//! Repeated trials of the loop against synthetic oracles, over a grid of
//! tolerances and strategies, with percentile summaries of best-so-far traces.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{run_strategy, OptimizerConfig, Strategy};
use crate::oracles::{self, test_function, ToleranceOracle};

pub const PERCENTILES: [f64; 7] = [10.0, 25.0, 40.0, 50.0, 60.0, 75.0, 90.0];

/// Fraction of failed trials above which an experiment counts as failed.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyChoice {
    Preference,
    Random,
    Both,
}

impl StrategyChoice {
    pub fn strategies(self) -> Vec<Strategy> {
        match self {
            StrategyChoice::Preference => vec![Strategy::Preference],
            StrategyChoice::Random => vec![Strategy::Random],
            StrategyChoice::Both => vec![Strategy::Preference, Strategy::Random],
        }
    }
}

impl std::str::FromStr for StrategyChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "preference" => Ok(StrategyChoice::Preference),
            "random" => Ok(StrategyChoice::Random),
            "both" => Ok(StrategyChoice::Both),
            _ => Err(Error::InvalidArgument(format!("unknown strategy {s:?}"))),
        }
    }
}

/// Trial `i` (0-based) runs with seed `seed + i`; the same seeds are reused
/// for every tolerance and strategy so cells are paired.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub oracle: String,
    pub tolerances: Vec<f64>,
    pub trials: usize,
    pub budget: usize,
    pub seed: u64,
    pub strategy: StrategyChoice,
    #[serde(default)]
    pub config: OptimizerConfig,
}

impl ExperimentSpec {
    pub fn check(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be >= 1".into()));
        }
        if self.tolerances.is_empty() || self.tolerances.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::InvalidArgument("tolerances must be a non-empty list of values >= 0".into()));
        }
        test_function(&self.oracle).map(|_| ())
    }

    pub fn trial_seeds(&self) -> Vec<u64> {
        (0..self.trials as u64).map(|i| self.seed + i).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub strategy: Strategy,
    pub tolerance: f64,
    pub seed: u64,
    /// Oracle value of the incumbent after each comparison (`2D + T` entries).
    pub trace: Vec<f64>,
    /// Incumbent after each comparison.
    pub incumbents: Vec<Vec<f64>>,
    pub error: Option<String>,
}

impl TrialResult {
    pub fn final_value(&self) -> Option<f64> {
        self.trace.last().copied()
    }

    pub fn final_incumbent(&self) -> Option<&[f64]> {
        self.incumbents.last().map(|v| v.as_slice())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub trials: Vec<TrialResult>,
}

impl ExperimentResult {
    pub fn failures(&self) -> usize {
        self.trials.iter().filter(|t| t.error.is_some()).count()
    }

    pub fn failed(&self) -> bool {
        self.failures() as f64 > MAX_FAILURE_FRACTION * self.trials.len() as f64
    }

    /// Successful trials for one cell.
    pub fn cell(&self, strategy: Strategy, tolerance: f64) -> Vec<&TrialResult> {
        self.trials
            .iter()
            .filter(|t| t.strategy == strategy && t.tolerance == tolerance && t.error.is_none())
            .collect()
    }
}

pub fn run_trial(
    spec: &ExperimentSpec,
    strategy: Strategy,
    tolerance: f64,
    seed: u64,
) -> TrialResult {
    let attempt = || -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let f = test_function(&spec.oracle)?;
        let mut oracle = ToleranceOracle::new(f.clone(), tolerance)?;
        let session = run_strategy(&f.domain, &mut oracle, spec.budget, &spec.config, seed, strategy)?;
        let incumbents = session.incumbent_history();
        Ok((incumbents.iter().map(|x| f.eval(x)).collect(), incumbents))
    };
    let (trace, incumbents, error) = match attempt() {
        Ok((t, i)) => (t, i, None),
        Err(e) => (Vec::new(), Vec::new(), Some(e.to_string())),
    };
    TrialResult { strategy, tolerance, seed, trace, incumbents, error }
}

/// Run every (strategy, tolerance, seed) cell on the rayon pool. Results come
/// back in grid order regardless of scheduling; a failing trial is recorded
/// and the rest continue.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.check()?;
    let mut jobs = Vec::new();
    for strategy in spec.strategy.strategies() {
        for &tol in &spec.tolerances {
            for seed in spec.trial_seeds() {
                jobs.push((strategy, tol, seed));
            }
        }
    }
    let trials = jobs
        .into_par_iter()
        .map(|(s, tol, seed)| run_trial(spec, s, tol, seed))
        .collect();
    Ok(ExperimentResult { spec: spec.clone(), trials })
}

/// Linearly interpolated percentile of sorted data (`p` in 0..=100).
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile(&v, 50.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub tolerance: f64,
    /// 1-based comparison count.
    pub iteration: usize,
    pub trials: usize,
    pub p10: f64,
    pub p25: f64,
    pub p40: f64,
    pub p50: f64,
    pub p60: f64,
    pub p75: f64,
    pub p90: f64,
}

/// Percentiles of the best-so-far value per (strategy, tolerance, iteration),
/// over successful trials. Cells keep first-appearance order.
pub fn aggregate(trials: &[TrialResult]) -> Vec<SummaryRow> {
    let mut cells: Vec<(Strategy, f64)> = Vec::new();
    for t in trials.iter().filter(|t| t.error.is_none()) {
        if !cells.iter().any(|c| c.0 == t.strategy && c.1.to_bits() == t.tolerance.to_bits()) {
            cells.push((t.strategy, t.tolerance));
        }
    }
    let mut rows = Vec::new();
    for (strategy, tolerance) in cells {
        let group: Vec<&TrialResult> = trials
            .iter()
            .filter(|t| t.error.is_none() && t.strategy == strategy && t.tolerance.to_bits() == tolerance.to_bits())
            .collect();
        let len = group.iter().map(|t| t.trace.len()).min().unwrap_or(0);
        for it in 0..len {
            let mut v: Vec<f64> = group.iter().map(|t| t.trace[it]).collect();
            v.sort_by(f64::total_cmp);
            let p = PERCENTILES.map(|q| percentile(&v, q));
            rows.push(SummaryRow {
                strategy,
                tolerance,
                iteration: it + 1,
                trials: v.len(),
                p10: p[0],
                p25: p[1],
                p40: p[2],
                p50: p[3],
                p60: p[4],
                p75: p[5],
                p90: p[6],
            });
        }
    }
    rows
}

/// Long-format per-trial traces: one row per comparison.
pub fn write_trials_csv<W: std::io::Write>(out: W, trials: &[TrialResult]) -> Result<()> {
    let dims = trials.iter().find_map(|t| t.incumbents.first().map(|x| x.len())).unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["strategy".to_string(), "tolerance".into(), "seed".into(), "iteration".into(), "best_value".into()];
    header.extend((0..dims).map(|d| format!("x{d}")));
    w.write_record(&header)?;
    for t in trials.iter().filter(|t| t.error.is_none()) {
        for (i, (v, x)) in t.trace.iter().zip(&t.incumbents).enumerate() {
            let mut row = vec![t.strategy.to_string(), t.tolerance.to_string(), t.seed.to_string(), (i + 1).to_string(), v.to_string()];
            row.extend(x.iter().map(|c| c.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_trials_csv`].
pub fn read_trials_csv<R: std::io::Read>(input: R) -> Result<Vec<TrialResult>> {
    let mut r = csv::Reader::from_reader(input);
    let mut trials: Vec<TrialResult> = Vec::new();
    let parse = |s: &str| -> Result<f64> { s.parse::<f64>().map_err(|e| Error::InvalidArgument(format!("{s:?}: {e}"))) };
    for rec in r.records() {
        let rec = rec?;
        let strategy: Strategy = rec[0].parse()?;
        let tolerance = parse(&rec[1])?;
        let seed: u64 = rec[2].parse().map_err(|e| Error::InvalidArgument(format!("seed: {e}")))?;
        let value = parse(&rec[4])?;
        let x = (5..rec.len()).map(|i| parse(&rec[i])).collect::<Result<Vec<_>>>()?;
        let same = trials
            .last()
            .is_some_and(|t| t.strategy == strategy && t.tolerance.to_bits() == tolerance.to_bits() && t.seed == seed);
        if !same {
            trials.push(TrialResult { strategy, tolerance, seed, trace: Vec::new(), incumbents: Vec::new(), error: None });
        }
        let t = trials.last_mut().expect("just pushed");
        t.trace.push(value);
        t.incumbents.push(x);
    }
    Ok(trials)
}

pub fn write_summary_csv<W: std::io::Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per successful trial with its final incumbent; for the 2-D
/// multi-objective oracle also the underlying function value and the distance
/// from its global minimizer, for scatter plots.
pub fn write_final_csv<W: std::io::Write>(out: W, oracle: &str, trials: &[TrialResult]) -> Result<()> {
    let dims = trials.iter().find_map(|t| t.final_incumbent().map(|x| x.len())).unwrap_or(0);
    let mo = oracle == "mo2d";
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["strategy".to_string(), "tolerance".into(), "seed".into(), "best_value".into()];
    header.extend((0..dims).map(|d| format!("x{d}")));
    if mo {
        header.extend(["base_value".to_string(), "distance_from_minimum".into()]);
    }
    w.write_record(&header)?;
    for t in trials.iter().filter(|t| t.error.is_none()) {
        let (Some(v), Some(x)) = (t.final_value(), t.final_incumbent()) else { continue };
        let mut row = vec![t.strategy.to_string(), t.tolerance.to_string(), t.seed.to_string(), v.to_string()];
        row.extend(x.iter().map(|c| c.to_string()));
        if mo {
            row.push(oracles::mo2d_base(x).to_string());
            row.push(distance(x, &oracles::MO_GLOBAL_CENTER).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Write `trials.csv`, `summary.csv`, `final.csv`, `failures.csv` and
/// `spec.json` into `dir`.
pub fn write_outputs(dir: &Path, result: &ExperimentResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_trials_csv(fs::File::create(dir.join("trials.csv"))?, &result.trials)?;
    write_summary_csv(fs::File::create(dir.join("summary.csv"))?, &aggregate(&result.trials))?;
    write_final_csv(fs::File::create(dir.join("final.csv"))?, &result.spec.oracle, &result.trials)?;
    let mut w = csv::Writer::from_writer(fs::File::create(dir.join("failures.csv"))?);
    w.write_record(["strategy", "tolerance", "seed", "error"])?;
    for t in result.trials.iter() {
        if let Some(e) = &t.error {
            w.write_record([t.strategy.to_string(), t.tolerance.to_string(), t.seed.to_string(), e.clone()])?;
        }
    }
    w.flush()?;
    fs::write(dir.join("spec.json"), serde_json::to_string_pretty(&result.spec)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0], 50.0), 2.0);
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 50.0), 2.5);
        assert_eq!(percentile(&[0.0, 10.0], 25.0), 2.5);
        assert_eq!(percentile(&[7.0], 90.0), 7.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }

    fn fake(seed: u64, trace: Vec<f64>) -> TrialResult {
        let incumbents = trace.iter().map(|v| vec![*v]).collect();
        TrialResult { strategy: Strategy::Random, tolerance: 0.1, seed, trace, incumbents, error: None }
    }

    #[test]
    fn single_trial_percentiles_equal_trace() {
        let rows = aggregate(&[fake(1, vec![3.0, 2.0, 2.0])]);
        assert_eq!(rows.len(), 3);
        for (r, v) in rows.iter().zip([3.0, 2.0, 2.0]) {
            assert!([r.p10, r.p25, r.p40, r.p50, r.p60, r.p75, r.p90].iter().all(|p| *p == v));
        }
    }

    #[test]
    fn failed_trials_are_excluded_and_counted() {
        let mut bad = fake(2, vec![]);
        bad.error = Some("boom".into());
        let spec = ExperimentSpec {
            oracle: "sphere".into(),
            tolerances: vec![0.1],
            trials: 2,
            budget: 1,
            seed: 1,
            strategy: StrategyChoice::Random,
            config: OptimizerConfig::default(),
        };
        let r = ExperimentResult { spec, trials: vec![fake(1, vec![1.0]), bad] };
        assert_eq!(r.failures(), 1);
        assert!(r.failed());
        assert_eq!(aggregate(&r.trials)[0].trials, 1);
    }

    #[test]
    fn trials_csv_round_trip() {
        let trials = vec![fake(1, vec![0.1 + 0.2, 1.0 / 3.0]), fake(2, vec![-1e-300, 5.0])];
        let mut buf = Vec::new();
        write_trials_csv(&mut buf, &trials).unwrap();
        assert_eq!(read_trials_csv(&buf[..]).unwrap(), trials);
    }

    #[test]
    fn spec_validation() {
        let mut s = ExperimentSpec {
            oracle: "shekel05".into(),
            tolerances: vec![1e-5, 1.0],
            trials: 3,
            budget: 5,
            seed: 7,
            strategy: StrategyChoice::Both,
            config: OptimizerConfig::default(),
        };
        assert!(s.check().is_ok());
        assert_eq!(s.trial_seeds(), vec![7, 8, 9]);
        s.oracle = "nope".into();
        assert!(s.check().is_err());
        s.oracle = "sphere".into();
        s.tolerances = vec![-1.0];
        assert!(s.check().is_err());
    }
}

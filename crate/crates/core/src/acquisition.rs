//! Expected improvement on the latent utility, averaged over posterior
//! samples of `(f, gamma)`, and its maximization over the domain.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::dataset::PreferenceDataset;
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::kernel::{build_covariance, GpPosterior};
use crate::lhs::{initial_design_size, latin_hypercube};
use crate::likelihood::PreferenceModel;
use crate::rng::RandomStream;
use crate::vinfer::{sample_posterior, VariationalState};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Normalized distance below which a candidate counts as the incumbent itself.
pub const COLLISION_DISTANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    pub posterior_samples: usize,
    pub candidate_count: usize,
    pub refine_top_k: usize,
    pub refine_steps: usize,
    /// Initial pattern-search step, as a fraction of each axis range.
    pub refine_initial_step: f64,
    pub seed: u64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            posterior_samples: 32,
            candidate_count: 2048,
            refine_top_k: 5,
            refine_steps: 40,
            refine_initial_step: 0.05,
            seed: 0,
        }
    }
}

impl AcquisitionConfig {
    pub fn check(&self) -> Result<()> {
        if self.posterior_samples == 0 || self.candidate_count == 0 || self.refine_top_k == 0 {
            return Err(Error::InvalidArgument("acquisition counts must be positive".into()));
        }
        if self.refine_top_k > self.candidate_count {
            return Err(Error::InvalidArgument(format!(
                "refine_top_k {} exceeds candidate_count {}",
                self.refine_top_k, self.candidate_count
            )));
        }
        if !(self.refine_initial_step > 0.0) {
            return Err(Error::InvalidArgument("refine_initial_step must be positive".into()));
        }
        Ok(())
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `s (nu Phi(nu) + phi(nu))` with `nu = (mu - f_best) / s`; zero when `s = 0`.
pub fn expected_improvement(mu: f64, s: f64, f_best: f64) -> f64 {
    if !(s > 0.0) {
        return 0.0;
    }
    // s (nu Phi + phi), written so the upper tail saturates to exactly mu - f_best
    let gap = mu - f_best;
    let nu = gap / s;
    (gap * normal_cdf(nu) + s * normal_pdf(nu)).max(0.0)
}

/// Posterior samples frozen for one acquisition call: each holds a GP
/// conditioned on that sample's `f` under that sample's lengthscales, plus the
/// sample's latent value at the incumbent.
pub struct IntegratedEi {
    samples: Vec<(GpPosterior, f64)>,
}

impl IntegratedEi {
    pub fn new(
        dataset: &PreferenceDataset,
        model: &PreferenceModel,
        vstate: &VariationalState,
        incumbent: usize,
        samples: usize,
        rng: &mut RandomStream,
    ) -> Result<Self> {
        let n = dataset.num_points();
        if vstate.num_f() != n || vstate.num_gamma() != model.dims() {
            return Err(Error::InvalidArgument(format!(
                "variational state ({}, {}) does not match dataset ({n}, {})",
                vstate.num_f(),
                vstate.num_gamma(),
                model.dims()
            )));
        }
        if incumbent >= n {
            return Err(Error::InvalidArgument(format!("incumbent index {incumbent} out of range {n}")));
        }
        let points = dataset.unique_points();
        let mut out = Vec::with_capacity(samples);
        for _ in 0..samples {
            let z = sample_posterior(vstate, rng);
            let params = model.kernel.with_gamma(&z.gamma);
            let cov = build_covariance(points, &params, model.jitter())?;
            out.push((GpPosterior::new(points, &z.f, &cov, &params)?, z.f[incumbent]));
        }
        Ok(IntegratedEi { samples: out })
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    /// Monte-Carlo average of EI over the frozen samples.
    pub fn value(&self, x: &[f64]) -> f64 {
        let mut scratch = vec![0.0; self.samples.first().map_or(0, |s| s.0.len())];
        let total: f64 = self
            .samples
            .iter()
            .map(|(gp, best)| {
                let (mu, s) = gp.predict_with(x, &mut scratch);
                expected_improvement(mu, s, *best)
            })
            .sum();
        total / self.samples.len() as f64
    }

    /// Predictive variance averaged over the samples.
    pub fn mean_variance(&self, x: &[f64]) -> f64 {
        let mut scratch = vec![0.0; self.samples.first().map_or(0, |s| s.0.len())];
        let total: f64 = self
            .samples
            .iter()
            .map(|(gp, _)| gp.predict_with(x, &mut scratch).1.powi(2))
            .sum();
        total / self.samples.len() as f64
    }
}

/// Integrated EI at a single point, drawing `config.posterior_samples` samples.
pub fn integrated_ei(
    x: &[f64],
    dataset: &PreferenceDataset,
    model: &PreferenceModel,
    vstate: &VariationalState,
    incumbent: usize,
    config: &AcquisitionConfig,
) -> Result<f64> {
    let mut rng = RandomStream::new(config.seed);
    let acq = IntegratedEi::new(dataset, model, vstate, incumbent, config.posterior_samples, &mut rng)?;
    Ok(acq.value(x))
}

fn collides(domain: &Domain, a: &[f64], b: &[f64]) -> bool {
    let d2: f64 = domain
        .ranges()
        .iter()
        .zip(a.iter().zip(b))
        .map(|(r, (x, y))| ((x - y) / r).powi(2))
        .sum();
    d2.sqrt() < COLLISION_DISTANCE
}

/// Coordinate pattern search from `start`, shrinking the step whenever no
/// axis move improves. Returns the final point and its value.
fn pattern_search(
    domain: &Domain,
    acq: &IntegratedEi,
    start: (Vec<f64>, f64),
    steps: usize,
    initial: f64,
) -> (Vec<f64>, f64) {
    let ranges = domain.ranges();
    let (mut x, mut best) = start;
    let mut step = initial;
    for _ in 0..steps {
        let mut moved = None;
        for d in 0..x.len() {
            for sign in [1.0, -1.0] {
                let mut y = x.clone();
                y[d] = (y[d] + sign * step * ranges[d]).clamp(domain.lower()[d], domain.upper()[d]);
                if y[d] == x[d] {
                    continue;
                }
                let v = acq.value(&y);
                if v > moved.as_ref().map_or(best, |m: &(Vec<f64>, f64)| m.1) {
                    moved = Some((y, v));
                }
            }
        }
        match moved {
            Some((y, v)) => {
                x = y;
                best = v;
            }
            None => step *= 0.5,
        }
    }
    (x, best)
}

/// Next query point: scores random candidates plus an LHS skeleton, refines
/// the best few by pattern search and returns the top point that is not the
/// incumbent. If every candidate scores zero, returns the candidate with the
/// largest predictive variance.
pub fn maximize_acquisition(
    domain: &Domain,
    dataset: &PreferenceDataset,
    model: &PreferenceModel,
    vstate: &VariationalState,
    incumbent: usize,
    config: &AcquisitionConfig,
    rng: &mut RandomStream,
) -> Result<Vec<f64>> {
    config.check()?;
    let x_best = dataset
        .unique_points()
        .get(incumbent)
        .cloned()
        .ok_or_else(|| Error::InvalidArgument(format!("incumbent index {incumbent} out of range")))?;
    let acq = IntegratedEi::new(dataset, model, vstate, incumbent, config.posterior_samples, rng)?;

    let mut candidates: Vec<Vec<f64>> = (0..config.candidate_count)
        .map(|_| {
            (0..domain.dims())
                .map(|d| rng.uniform_in(domain.lower()[d], domain.upper()[d]))
                .collect()
        })
        .collect();
    if config.candidate_count > 1 {
        candidates.extend(latin_hypercube(domain, initial_design_size(domain.dims()), rng)?);
    }
    candidates.retain(|c| !collides(domain, c, &x_best));
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate distinct from the incumbent".into()));
    }

    let scores: Vec<f64> = candidates.par_iter().map(|c| acq.value(c)).collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    // Stable sort keeps ties in generation order, so results don't depend on threads.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    if scores[order[0]] <= 0.0 {
        let vars: Vec<f64> = candidates.par_iter().map(|c| acq.mean_variance(c)).collect();
        let pick = (0..candidates.len()).fold(0, |m, i| if vars[i] > vars[m] { i } else { m });
        return Ok(candidates.swap_remove(pick));
    }

    let top: Vec<(Vec<f64>, f64)> = order
        .iter()
        .take(config.refine_top_k)
        .map(|&i| (candidates[i].clone(), scores[i]))
        .collect();
    let refined: Vec<(Vec<f64>, f64)> = top
        .into_par_iter()
        .map(|s| pattern_search(domain, &acq, s, config.refine_steps, config.refine_initial_step))
        .collect();

    let mut best: Option<(Vec<f64>, f64)> = None;
    for (x, v) in refined.into_iter().chain(std::iter::once((candidates[order[0]].clone(), scores[order[0]]))) {
        if collides(domain, &x, &x_best) {
            continue;
        }
        if best.as_ref().is_none_or(|b| v > b.1) {
            best = Some((x, v));
        }
    }
    // Refinement can only walk onto the incumbent; the top candidate never does.
    Ok(best.map(|b| b.0).unwrap_or_else(|| candidates[order[0]].clone()))
}

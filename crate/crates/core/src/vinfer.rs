//! Mean-field Gaussian variational inference over `z = (f, gamma)`.
//!
//! Every latent coordinate gets an independent Gaussian factor with a mean and
//! a log standard deviation, `2N + 2D` parameters in all. The ELBO
//! `E_q[log p(z, X, c)] + H[q]` is maximized by stochastic gradient ascent on
//! reparameterized samples `z = mean + exp(logscale) * eps`, with the entropy
//! term handled in closed form.
//!
//! For the preference model the GP prior term `E_q[log N(f; 0, K)]` is also
//! taken in closed form given each sampled `gamma` (it is a Gaussian
//! expectation of a quadratic form); only `gamma` and the likelihood term are
//! sampled. Averaging `f` out of the quadratic form removes the dominant
//! source of gradient noise, since `K` is usually close to singular.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::PreferenceDataset;
use crate::error::{Error, Result};
use crate::likelihood::{JointDensity, JointGrad, LatentAssignment, PreferenceModel};
use crate::rng::RandomStream;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// A differentiable log density over `(f, gamma)`.
pub trait LogDensity {
    fn num_f(&self) -> usize;
    fn num_gamma(&self) -> usize;
    fn value(&self, f: &[f64], gamma: &[f64]) -> Result<f64>;
    fn value_grad(&self, f: &[f64], gamma: &[f64]) -> Result<JointGrad>;
}

impl LogDensity for JointDensity<'_> {
    fn num_f(&self) -> usize {
        self.num_points()
    }

    fn num_gamma(&self) -> usize {
        self.dims()
    }

    fn value(&self, f: &[f64], gamma: &[f64]) -> Result<f64> {
        self.log_joint(f, gamma)
    }

    fn value_grad(&self, f: &[f64], gamma: &[f64]) -> Result<JointGrad> {
        self.log_joint_grad(f, gamma)
    }
}

/// Per-draw estimator of `E_q[log p(z)]` and its gradient in the flat
/// variational parameters `(f_means, f_logscales, gamma_means, gamma_logscales)`.
pub trait VariationalTarget {
    fn num_f(&self) -> usize;
    fn num_gamma(&self) -> usize;

    /// Estimate for one noise draw; adds `weight` times its gradient to `grad`.
    fn sample_term(&self, state: &VariationalState, noise: &Noise, weight: f64, grad: &mut [f64]) -> Result<f64>;
}

/// Plain pathwise estimator: evaluate the density at `z = mean + scale * eps`.
pub struct Pathwise<'a, P>(pub &'a P);

impl<P: LogDensity> VariationalTarget for Pathwise<'_, P> {
    fn num_f(&self) -> usize {
        self.0.num_f()
    }

    fn num_gamma(&self) -> usize {
        self.0.num_gamma()
    }

    fn sample_term(&self, state: &VariationalState, eps: &Noise, w: f64, grad: &mut [f64]) -> Result<f64> {
        let (n, d) = (state.num_f(), state.num_gamma());
        let z = state.reparam(eps);
        let g = self.0.value_grad(&z.f, &z.gamma)?;
        for i in 0..n {
            grad[i] += w * g.f[i];
            grad[n + i] += w * g.f[i] * eps.f[i] * state.f_logscales[i].exp();
        }
        for k in 0..d {
            grad[2 * n + k] += w * g.gamma[k];
            grad[2 * n + d + k] += w * g.gamma[k] * eps.gamma[k] * state.gamma_logscales[k].exp();
        }
        Ok(g.value)
    }
}

/// Preference-model estimator with the GP prior term integrated over `f`.
pub struct PreferenceTarget<'a>(pub JointDensity<'a>);

impl<'a> PreferenceTarget<'a> {
    pub fn new(dataset: &'a PreferenceDataset, model: &'a PreferenceModel) -> Result<Self> {
        Ok(PreferenceTarget(JointDensity::new(dataset, model)?))
    }
}

impl VariationalTarget for PreferenceTarget<'_> {
    fn num_f(&self) -> usize {
        self.0.num_points()
    }

    fn num_gamma(&self) -> usize {
        self.0.dims()
    }

    fn sample_term(&self, state: &VariationalState, eps: &Noise, w: f64, grad: &mut [f64]) -> Result<f64> {
        let (n, d) = (state.num_f(), state.num_gamma());
        let z = state.reparam(eps);
        let scales = state.f_scales();
        let vars: Vec<f64> = scales.iter().map(|s| s * s).collect();
        let g = self.0.expected_prior_grad(&state.f_means, &vars, &z.f, &z.gamma)?;
        for i in 0..n {
            grad[i] += w * (g.mean[i] + g.lik_f[i]);
            // d var / d logscale = 2 var
            grad[n + i] += w * (g.var[i] * 2.0 * vars[i] + g.lik_f[i] * eps.f[i] * scales[i]);
        }
        for k in 0..d {
            grad[2 * n + k] += w * g.gamma[k];
            grad[2 * n + d + k] += w * g.gamma[k] * eps.gamma[k] * state.gamma_logscales[k].exp();
        }
        Ok(g.value)
    }
}

/// Parameters of the factored Gaussian `q(z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub f_means: Vec<f64>,
    pub f_logscales: Vec<f64>,
    pub gamma_means: Vec<f64>,
    pub gamma_logscales: Vec<f64>,
    pub step_count: usize,
}

impl VariationalState {
    /// Means at zero and unit scales.
    pub fn new(n: usize, dims: usize) -> Self {
        VariationalState {
            f_means: vec![0.0; n],
            f_logscales: vec![0.0; n],
            gamma_means: vec![0.0; dims],
            gamma_logscales: vec![0.0; dims],
            step_count: 0,
        }
    }

    pub fn num_f(&self) -> usize {
        self.f_means.len()
    }

    pub fn num_gamma(&self) -> usize {
        self.gamma_means.len()
    }

    /// `2N + 2D`
    pub fn num_params(&self) -> usize {
        2 * self.num_f() + 2 * self.num_gamma()
    }

    /// Means at zero, `f` scales at `f_scale` and unit `gamma` scales.
    pub fn with_f_scale(n: usize, dims: usize, f_scale: f64) -> Self {
        let mut s = Self::new(n, dims);
        s.f_logscales = vec![f_scale.ln(); n];
        s
    }

    /// Append factors with mean 0 and scale `f_scale` for newly added points.
    pub fn extend_to(&mut self, n: usize, f_scale: f64) {
        if n > self.num_f() {
            self.f_means.resize(n, 0.0);
            self.f_logscales.resize(n, f_scale.ln());
        }
    }

    pub fn f_scales(&self) -> Vec<f64> {
        self.f_logscales.iter().map(|l| l.exp()).collect()
    }

    pub fn gamma_scales(&self) -> Vec<f64> {
        self.gamma_logscales.iter().map(|l| l.exp()).collect()
    }

    pub fn means(&self) -> LatentAssignment {
        LatentAssignment {
            f: self.f_means.clone(),
            gamma: self.gamma_means.clone(),
        }
    }

    /// Sum of the factor entropies.
    pub fn entropy(&self) -> f64 {
        self.f_logscales
            .iter()
            .chain(&self.gamma_logscales)
            .map(|l| l + HALF_LN_2PI + 0.5)
            .sum()
    }

    /// `log q(z)`
    pub fn log_density(&self, z: &LatentAssignment) -> f64 {
        fn part(x: &[f64], m: &[f64], l: &[f64]) -> f64 {
            x.iter()
                .zip(m.iter().zip(l))
                .map(|(x, (m, l))| {
                    let t = (x - m) / l.exp();
                    -0.5 * t * t - l - HALF_LN_2PI
                })
                .sum()
        }
        part(&z.f, &self.f_means, &self.f_logscales) + part(&z.gamma, &self.gamma_means, &self.gamma_logscales)
    }

    fn check(&self, n: usize, dims: usize) -> Result<()> {
        if self.num_f() != n || self.num_gamma() != dims {
            return Err(Error::InvalidArgument(format!(
                "variational state is {}+{} but the model needs {n}+{dims}",
                self.num_f(),
                self.num_gamma()
            )));
        }
        Ok(())
    }

    fn reparam(&self, eps: &Noise) -> LatentAssignment {
        LatentAssignment {
            f: (0..self.num_f())
                .map(|i| self.f_means[i] + self.f_logscales[i].exp() * eps.f[i])
                .collect(),
            gamma: (0..self.num_gamma())
                .map(|d| self.gamma_means[d] + self.gamma_logscales[d].exp() * eps.gamma[d])
                .collect(),
        }
    }

    fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(&self.f_means);
        v.extend_from_slice(&self.f_logscales);
        v.extend_from_slice(&self.gamma_means);
        v.extend_from_slice(&self.gamma_logscales);
        v
    }

    fn set_from(&mut self, v: &[f64]) {
        let (n, d) = (self.num_f(), self.num_gamma());
        self.f_means.copy_from_slice(&v[..n]);
        self.f_logscales.copy_from_slice(&v[n..2 * n]);
        self.gamma_means.copy_from_slice(&v[2 * n..2 * n + d]);
        self.gamma_logscales.copy_from_slice(&v[2 * n + d..]);
    }
}

/// Standard normal noise for one reparameterized sample.
#[derive(Clone, Debug)]
pub struct Noise {
    pub f: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Noise {
    /// `count` draws in antithetic pairs `(eps, -eps)`; an odd count ends
    /// with an unpaired draw.
    pub fn antithetic(count: usize, n: usize, dims: usize, rng: &mut RandomStream) -> Vec<Noise> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let e = Noise::draw(n, dims, rng);
            if out.len() + 1 < count {
                out.push(Noise {
                    f: e.f.iter().map(|v| -v).collect(),
                    gamma: e.gamma.iter().map(|v| -v).collect(),
                });
            }
            out.push(e);
        }
        out
    }

    pub fn draw(n: usize, dims: usize, rng: &mut RandomStream) -> Self {
        Noise {
            f: (0..n).map(|_| rng.normal()).collect(),
            gamma: (0..dims).map(|_| rng.normal()).collect(),
        }
    }
}

/// Draw `z ~ q(z)`.
pub fn sample_posterior(state: &VariationalState, rng: &mut RandomStream) -> LatentAssignment {
    state.reparam(&Noise::draw(state.num_f(), state.num_gamma(), rng))
}

/// Monte-Carlo estimate of `E_q[log p(z, X, c) - log q(z)]`.
pub fn elbo_estimate_with<P: LogDensity>(
    state: &VariationalState,
    target: &P,
    n_samples: usize,
    rng: &mut RandomStream,
) -> Result<f64> {
    state.check(target.num_f(), target.num_gamma())?;
    if n_samples == 0 {
        return Err(Error::InvalidArgument("elbo needs at least one sample".into()));
    }
    let mut total = 0.0;
    for _ in 0..n_samples {
        let z = sample_posterior(state, rng);
        total += target.value(&z.f, &z.gamma)? - state.log_density(&z);
    }
    Ok(total / n_samples as f64)
}

pub fn elbo_estimate(
    state: &VariationalState,
    dataset: &PreferenceDataset,
    model: &PreferenceModel,
    n_samples: usize,
    rng: &mut RandomStream,
) -> Result<f64> {
    elbo_estimate_with(state, &JointDensity::new(dataset, model)?, n_samples, rng)
}

/// Stochastic-gradient settings. `warm_steps` replaces `steps` when a fit
/// starts from a previous state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub steps: usize,
    pub warm_steps: usize,
    pub samples_per_step: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            steps: 1500,
            warm_steps: 300,
            samples_per_step: 8,
            learning_rate: 0.02,
            seed: 0,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if self.samples_per_step == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(
                "fit needs samples_per_step >= 1 and a positive learning rate".into(),
            ));
        }
        Ok(())
    }
}

/// Fitted state plus the per-step ELBO estimates.
#[derive(Clone, Debug)]
pub struct FitReport {
    pub state: VariationalState,
    pub trace: Vec<f64>,
}

impl FitReport {
    /// Write the trace as `step,elbo_estimate` CSV.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "elbo_estimate"])?;
        for (i, v) in self.trace.iter().enumerate() {
            w.write_record([(i + 1).to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// ELBO estimate and gradient for a fixed set of noise draws.
fn objective_grad<T: VariationalTarget>(state: &VariationalState, target: &T, noise: &[Noise], grad: &mut [f64]) -> Result<f64> {
    let (n, d) = (state.num_f(), state.num_gamma());
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut value = 0.0;
    let w = 1.0 / noise.len() as f64;
    for eps in noise {
        value += w * target.sample_term(state, eps, w, grad)?;
    }
    // Entropy: d/dlogscale = 1.
    let (head, tail) = grad.split_at_mut(2 * n + d);
    for g in head[n..].iter_mut().take(n).chain(tail.iter_mut()) {
        *g += 1.0;
    }
    Ok(value + state.entropy())
}

/// Adam moments for the flat parameter vector.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
        }
    }

    /// Ascent step with the base rate scaled by `scale`.
    fn step(&mut self, params: &mut [f64], grad: &[f64], scale: f64) {
        self.t += 1;
        let lr = self.lr * scale;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] += lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Learning-rate multiplier: flat for the first half of the run, then linear
/// decay to [`FINAL_LR_FRACTION`] so the last iterates settle below the
/// gradient-noise floor.
pub fn lr_schedule(step: usize, steps: usize) -> f64 {
    let progress = step as f64 / steps.max(1) as f64;
    (2.0 * (1.0 - progress)).clamp(FINAL_LR_FRACTION, 1.0)
}

pub const FINAL_LR_FRACTION: f64 = 0.05;

/// Run `steps` updates from `init` against an arbitrary target.
pub fn fit_from<T: VariationalTarget>(
    target: &T,
    init: VariationalState,
    steps: usize,
    config: &FitConfig,
) -> Result<FitReport> {
    config.validate()?;
    init.check(target.num_f(), target.num_gamma())?;
    let mut state = init;
    let mut rng = RandomStream::new(config.seed);
    let (n, d) = (state.num_f(), state.num_gamma());
    let mut params = state.to_vec();
    let mut grad = vec![0.0; params.len()];
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let noise = Noise::antithetic(config.samples_per_step, n, d, &mut rng);
        let value = objective_grad(&state, target, &noise, &mut grad).map_err(|e| Error::Divergence {
            step,
            detail: e.to_string(),
        })?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                step,
                detail: format!("non-finite objective {value} or gradient"),
            });
        }
        trace.push(value);
        adam.step(&mut params, &grad, lr_schedule(step, steps));
        state.set_from(&params);
        state.step_count += 1;
    }
    Ok(FitReport { state, trace })
}

/// Fit `q` to the posterior for `dataset`. With `warm_start`, the previous
/// state is extended with fresh factors for new points and refined for
/// `config.warm_steps`; otherwise a fresh state runs `config.steps`.
///
/// Fresh `f` factors start at mean 0 and the prior scale `sigma`; `gamma`
/// factors start at the standard normal prior.
pub fn fit(
    dataset: &PreferenceDataset,
    model: &PreferenceModel,
    config: &FitConfig,
    warm_start: Option<&VariationalState>,
) -> Result<FitReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot fit without any comparison".into()));
    }
    let target = PreferenceTarget::new(dataset, model)?;
    let (init, steps) = match warm_start {
        Some(prev) if prev.num_gamma() == model.dims() && prev.num_f() <= dataset.num_points() => {
            let mut s = prev.clone();
            s.extend_to(dataset.num_points(), model.kernel.sigma);
            (s, config.warm_steps)
        }
        _ => (
            VariationalState::with_f_scale(dataset.num_points(), model.dims(), model.kernel.sigma),
            config.steps,
        ),
    };
    fit_from(&target, init, steps, config)
}

/// ELBO under a fixed set of noise draws, as a deterministic function of the
/// variational parameters.
pub struct FixedNoiseObjective<'a, T> {
    target: &'a T,
    noise: Vec<Noise>,
}

impl<'a, T: VariationalTarget> FixedNoiseObjective<'a, T> {
    pub fn new(target: &'a T, samples: usize, rng: &mut RandomStream) -> Self {
        let noise = (0..samples)
            .map(|_| Noise::draw(target.num_f(), target.num_gamma(), rng))
            .collect();
        FixedNoiseObjective { target, noise }
    }

    pub fn value(&self, state: &VariationalState) -> Result<f64> {
        let mut scratch = vec![0.0; state.num_params()];
        objective_grad(state, self.target, &self.noise, &mut scratch)
    }

    /// Analytic reparameterized gradient, flat order
    /// `(f_means, f_logscales, gamma_means, gamma_logscales)`.
    pub fn gradient(&self, state: &VariationalState) -> Result<Vec<f64>> {
        let mut g = vec![0.0; state.num_params()];
        objective_grad(state, self.target, &self.noise, &mut g)?;
        Ok(g)
    }

    /// Central difference of [`Self::value`] along parameter `index`.
    pub fn finite_difference(&self, state: &VariationalState, index: usize, h: f64) -> Result<f64> {
        let base = state.to_vec();
        let mut up = state.clone();
        let mut dn = state.clone();
        let mut v = base.clone();
        v[index] += h;
        up.set_from(&v);
        v[index] = base[index] - h;
        dn.set_from(&v);
        Ok((self.value(&up)? - self.value(&dn)?) / (2.0 * h))
    }
}

/// Largest relative disagreement between the analytic reparameterized
/// gradient and central finite differences of the same fixed-noise objective.
pub fn gradient_check_with<T: VariationalTarget>(
    state: &VariationalState,
    target: &T,
    samples: usize,
    step: f64,
    rng: &mut RandomStream,
) -> Result<f64> {
    state.check(target.num_f(), target.num_gamma())?;
    let obj = FixedNoiseObjective::new(target, samples, rng);
    let analytic = obj.gradient(state)?;
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let fd = obj.finite_difference(state, i, step)?;
        let scale = a.abs().max(fd.abs()).max(1e-6);
        worst = worst.max((a - fd).abs() / scale);
    }
    Ok(worst)
}

/// [`gradient_check_with`] on the preference model, 4 noise draws, `h = 1e-5`.
pub fn gradient_check(
    state: &VariationalState,
    dataset: &PreferenceDataset,
    model: &PreferenceModel,
    rng: &mut RandomStream,
) -> Result<f64> {
    gradient_check_with(state, &PreferenceTarget::new(dataset, model)?, 4, 1e-5, rng)
}

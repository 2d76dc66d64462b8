//! Bradley–Terry likelihood with ties, the GP and lengthscale priors, and the
//! log joint density `log p(f, gamma, c | X)` with its analytic gradient.
//!
//! With `u = (f1 - f2) / sqrt(2 sigma^2)`, `xi1 = S(u)`, `xi2 = S(-u)` and
//! `b = ln beta` the three category probabilities reduce to
//!
//! ```text
//! P(first less)    = xi2 / (xi2 + beta xi1)                        = S(-u - b)
//! P(tie)           = (beta^2 - 1) xi1 xi2 / ((xi1 + beta xi2)(xi2 + beta xi1))
//!                  = (beta^2 - 1) S(u - b) S(-u - b)
//! P(first greater) = xi1 / (xi1 + beta xi2)                        = S(u - b)
//! ```
//!
//! The right-hand forms are what the log-domain code evaluates.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::PreferenceDataset;
use crate::domain::{Domain, PreferenceOutcome};
use crate::error::{Error, Result};
use crate::kernel::{self, sigmoid, CovarianceMatrix, KernelHyperParams};

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Tie parameter `beta >= 1` and the signal scale `sigma` of the
/// discrimination `sqrt(2 sigma^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TieModelParams {
    pub beta: f64,
    pub sigma: f64,
}

impl TieModelParams {
    pub fn new(beta: f64, sigma: f64) -> Result<Self> {
        if !(beta >= 1.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("tie parameter must be >= 1, got {beta}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        Ok(TieModelParams { beta, sigma })
    }

    fn scale(&self) -> f64 {
        (2.0 * self.sigma * self.sigma).sqrt()
    }
}

/// Latent utilities at the unique points plus the lengthscale variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentAssignment {
    pub f: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// `(P(first less), P(tie), P(first greater))` for latent values `f1`, `f2`.
pub fn categorical_probs(f1: f64, f2: f64, params: &TieModelParams) -> (f64, f64, f64) {
    let u = (f1 - f2) / params.scale();
    let xi1 = sigmoid(u);
    let xi2 = sigmoid(-u);
    let beta = params.beta;
    let less = xi2 / (xi2 + beta * xi1);
    let greater = xi1 / (xi1 + beta * xi2);
    let tie = (beta * beta - 1.0) * (xi1 * xi2) / ((xi1 + beta * xi2) * (xi2 + beta * xi1));
    (less.clamp(0.0, 1.0), tie.clamp(0.0, 1.0), greater.clamp(0.0, 1.0))
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Log probability of `outcome` given `delta = f1 - f2`, and its derivative
/// with respect to `delta`.
pub fn log_prob_and_grad(outcome: PreferenceOutcome, delta: f64, params: &TieModelParams) -> (f64, f64) {
    let scale = params.scale();
    let u = delta / scale;
    let b = params.beta.ln();
    let (lp, dlp_du) = match outcome {
        PreferenceOutcome::FirstLess => (-softplus(u + b), -sigmoid(u + b)),
        PreferenceOutcome::FirstGreater => (-softplus(b - u), sigmoid(b - u)),
        PreferenceOutcome::Equivalent => {
            let ln_pre = (params.beta * params.beta - 1.0).ln();
            (
                ln_pre - softplus(b - u) - softplus(b + u),
                sigmoid(b - u) - sigmoid(b + u),
            )
        }
    };
    let floor = PROB_FLOOR.ln();
    if lp < floor || lp.is_nan() {
        (floor, 0.0)
    } else {
        (lp, dlp_du / scale)
    }
}

fn check_latents(dataset: &PreferenceDataset, f: &[f64]) -> Result<()> {
    if f.len() != dataset.num_points() {
        return Err(Error::InvalidArgument(format!(
            "{} latent values for {} unique points",
            f.len(),
            dataset.num_points()
        )));
    }
    Ok(())
}

/// Sum over records of the log probability of the observed outcome.
pub fn log_likelihood(dataset: &PreferenceDataset, f: &[f64], params: &TieModelParams) -> Result<f64> {
    check_latents(dataset, f)?;
    Ok(dataset
        .records()
        .iter()
        .zip(dataset.index_pairs())
        .map(|(r, &(i, j))| log_prob_and_grad(r.outcome, f[i] - f[j], params).0)
        .sum())
}

/// Fixed model configuration: tie parameters, lengthscale bounds and signal
/// scale (in `kernel`, whose `gamma` is ignored), and starting jitter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceModel {
    pub tie: TieModelParams,
    pub kernel: KernelHyperParams,
    /// Starting diagonal jitter, relative to `sigma^2`.
    pub relative_jitter: f64,
}

impl PreferenceModel {
    pub const BETA: f64 = 1.1;
    pub const SIGMA: f64 = 0.1;
    pub const LENGTHSCALE_LOWER: f64 = 0.01;
    pub const LENGTHSCALE_UPPER: f64 = 5.0;

    /// `beta = 1.1`, `sigma = 0.1`, lengthscales within `[0.01 r_d, 5 r_d]`.
    pub fn for_domain(domain: &Domain) -> Self {
        let kernel = KernelHyperParams::for_domain(
            domain,
            Self::LENGTHSCALE_LOWER,
            Self::LENGTHSCALE_UPPER,
            Self::SIGMA,
        )
        .expect("domain ranges are positive");
        PreferenceModel {
            tie: TieModelParams {
                beta: Self::BETA,
                sigma: Self::SIGMA,
            },
            kernel,
            relative_jitter: kernel::JITTER_START,
        }
    }

    pub fn dims(&self) -> usize {
        self.kernel.dims()
    }

    pub fn jitter(&self) -> f64 {
        self.relative_jitter * self.kernel.signal_variance()
    }
}

/// Log joint density evaluator bound to one dataset. Caches per-axis squared
/// differences between the unique points.
#[derive(Clone, Debug)]
pub struct JointDensity<'a> {
    dataset: &'a PreferenceDataset,
    model: &'a PreferenceModel,
    /// `sq[(i * n + j) * D + d] = (x_id - x_jd)^2`
    sq: Vec<f64>,
}

/// Value of the log joint and its gradient at one latent assignment.
#[derive(Clone, Debug, Default)]
pub struct JointGrad {
    pub value: f64,
    pub f: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl<'a> JointDensity<'a> {
    pub fn new(dataset: &'a PreferenceDataset, model: &'a PreferenceModel) -> Result<Self> {
        let dims = model.dims();
        let pts = dataset.unique_points();
        if let Some(p) = pts.iter().find(|p| p.len() != dims) {
            return Err(Error::InvalidArgument(format!("point dim {} vs model dim {dims}", p.len())));
        }
        let n = pts.len();
        let mut sq = vec![0.0; n * n * dims];
        for i in 0..n {
            for j in 0..n {
                for d in 0..dims {
                    let t = pts[i][d] - pts[j][d];
                    sq[(i * n + j) * dims + d] = t * t;
                }
            }
        }
        Ok(JointDensity { dataset, model, sq })
    }

    pub fn num_points(&self) -> usize {
        self.dataset.num_points()
    }

    pub fn dims(&self) -> usize {
        self.model.dims()
    }

    fn covariance(&self, theta: &[f64]) -> Result<(nalgebra::DMatrix<f64>, CovarianceMatrix)> {
        let n = self.num_points();
        let dims = self.dims();
        let s2 = self.model.kernel.signal_variance();
        let w: Vec<f64> = theta.iter().map(|t| 1.0 / (t * t)).collect();
        let mut k = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = s2;
            for j in 0..i {
                let base = (i * n + j) * dims;
                let q: f64 = (0..dims).map(|d| self.sq[base + d] * w[d]).sum();
                let v = s2 * (-0.5 * q).exp();
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        let cov = CovarianceMatrix::factor(k.clone(), self.model.jitter(), s2)?;
        Ok((k, cov))
    }

    fn thetas(&self, gamma: &[f64]) -> Vec<f64> {
        let kp = &self.model.kernel;
        gamma
            .iter()
            .zip(kp.alpha_lower.iter().zip(&kp.alpha_upper))
            .map(|(g, (l, u))| kernel::lengthscale(*g, *l, *u))
            .collect()
    }

    fn check(&self, f: &[f64], gamma: &[f64]) -> Result<()> {
        check_latents(self.dataset, f)?;
        if gamma.len() != self.dims() {
            return Err(Error::InvalidArgument(format!(
                "{} gamma values for {} dims",
                gamma.len(),
                self.dims()
            )));
        }
        Ok(())
    }

    /// `log N(gamma; 0, I) + log N(f; 0, K(theta(gamma))) + log p(c | f)`.
    pub fn log_joint(&self, f: &[f64], gamma: &[f64]) -> Result<f64> {
        self.check(f, gamma)?;
        let mut value = gamma.iter().map(|g| -0.5 * g * g - HALF_LN_2PI).sum::<f64>();
        let n = self.num_points();
        if n > 0 {
            let (_, cov) = self.covariance(&self.thetas(gamma))?;
            let fv = DVector::from_column_slice(f);
            let alpha = cov.solve(&fv);
            value += -0.5 * (fv.dot(&alpha) + cov.log_det() + n as f64 * LN_2PI);
        }
        value += log_likelihood(self.dataset, f, &self.model.tie)?;
        Ok(value)
    }

    /// Log joint plus its gradient in `f` and `gamma`.
    pub fn log_joint_grad(&self, f: &[f64], gamma: &[f64]) -> Result<JointGrad> {
        self.check(f, gamma)?;
        let n = self.num_points();
        let mut out = JointGrad {
            value: 0.0,
            f: vec![0.0; n],
            gamma: vec![0.0; self.dims()],
        };
        let mut unused = Vec::new();
        out.value += self.prior_terms(gamma, f, None, &mut out.f, &mut unused, &mut out.gamma)?;
        out.value += self.likelihood_grad(f, &mut out.f);
        Ok(out)
    }

    /// Log joint with the GP prior term averaged over independent
    /// `f_i ~ N(means_i, vars_i)` in closed form, and the likelihood evaluated
    /// at the sample `f`. Gradients are returned separately for the prior
    /// (in the means and variances) and the likelihood (in `f`).
    pub fn expected_prior_grad(
        &self,
        means: &[f64],
        vars: &[f64],
        f: &[f64],
        gamma: &[f64],
    ) -> Result<ExpectedPriorGrad> {
        self.check(f, gamma)?;
        check_latents(self.dataset, means)?;
        check_latents(self.dataset, vars)?;
        let n = self.num_points();
        let mut out = ExpectedPriorGrad {
            value: 0.0,
            mean: vec![0.0; n],
            var: vec![0.0; n],
            lik_f: vec![0.0; n],
            gamma: vec![0.0; self.dims()],
        };
        out.value += self.prior_terms(gamma, means, Some(vars), &mut out.mean, &mut out.var, &mut out.gamma)?;
        out.value += self.likelihood_grad(f, &mut out.lik_f);
        Ok(out)
    }

    fn likelihood_grad(&self, f: &[f64], grad_f: &mut [f64]) -> f64 {
        let mut value = 0.0;
        for (r, &(i, j)) in self.dataset.records().iter().zip(self.dataset.index_pairs()) {
            let (lp, dlp) = log_prob_and_grad(r.outcome, f[i] - f[j], &self.model.tie);
            value += lp;
            grad_f[i] += dlp;
            grad_f[j] -= dlp;
        }
        value
    }

    /// `log N(gamma; 0, I) + E log N(f; 0, K)`, where the expectation is over
    /// independent Gaussians with the given means and variances (a point mass
    /// at `means` when `vars` is `None`). Gradients are accumulated into
    /// `grad_mean`, `grad_var` (only with `vars`) and `grad_gamma`.
    fn prior_terms(
        &self,
        gamma: &[f64],
        means: &[f64],
        vars: Option<&[f64]>,
        grad_mean: &mut [f64],
        grad_var: &mut [f64],
        grad_gamma: &mut [f64],
    ) -> Result<f64> {
        let n = self.num_points();
        let dims = self.dims();
        let mut value = 0.0;
        for (g, dg) in gamma.iter().zip(grad_gamma.iter_mut()) {
            value += -0.5 * g * g - HALF_LN_2PI;
            *dg -= g;
        }
        if n == 0 {
            return Ok(value);
        }
        let theta = self.thetas(gamma);
        let (k, cov) = self.covariance(&theta)?;
        let mv = DVector::from_column_slice(means);
        let alpha = cov.solve(&mv);
        let kinv = cov.inverse();
        value += -0.5 * (mv.dot(&alpha) + cov.log_det() + n as f64 * LN_2PI);
        for i in 0..n {
            grad_mean[i] -= alpha[i];
        }
        // W = a a^T + Kinv S Kinv - Kinv, with S = diag(vars).
        let mut w = &alpha * alpha.transpose() - &kinv;
        if let Some(vars) = vars {
            let mut trace = 0.0;
            for i in 0..n {
                trace += vars[i] * kinv[(i, i)];
                grad_var[i] -= 0.5 * kinv[(i, i)];
            }
            value -= 0.5 * trace;
            let mut scaled = kinv.clone();
            for (j, v) in vars.iter().enumerate() {
                scaled.column_mut(j).scale_mut(*v);
            }
            w += &scaled * &kinv;
        }
        // d/dtheta_d = 1/2 sum_ij W_ij K_ij (x_id - x_jd)^2 / theta_d^3; pairs
        // i > j are visited once, which absorbs the 1/2.
        let mut dtheta = vec![0.0; dims];
        for i in 0..n {
            for j in 0..i {
                let wij = w[(i, j)] * k[(i, j)];
                let base = (i * n + j) * dims;
                for (d, acc) in dtheta.iter_mut().enumerate() {
                    *acc += wij * self.sq[base + d];
                }
            }
        }
        let kp = &self.model.kernel;
        for d in 0..dims {
            let s = sigmoid(gamma[d]);
            grad_gamma[d] += dtheta[d] / theta[d].powi(3) * s * (1.0 - s) * (kp.alpha_upper[d] - kp.alpha_lower[d]);
        }
        Ok(value)
    }
}

/// See [`JointDensity::expected_prior_grad`].
#[derive(Clone, Debug, Default)]
pub struct ExpectedPriorGrad {
    pub value: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub lik_f: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// Log joint density of `assignment` under `model` for `dataset`.
pub fn log_joint(dataset: &PreferenceDataset, assignment: &LatentAssignment, model: &PreferenceModel) -> Result<f64> {
    JointDensity::new(dataset, model)?.log_joint(&assignment.f, &assignment.gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::PreferenceOutcome::*;
    use crate::domain::PreferenceRecord;
    use crate::rng::RandomStream;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const P: TieModelParams = TieModelParams { beta: 1.1, sigma: 0.1 };

    #[test]
    fn no_ties_without_tie_parameter() {
        let p = TieModelParams::new(1.0, 0.1).unwrap();
        for (a, b) in [(0.0, 0.0), (0.3, -0.1), (-2.0, 5.0)] {
            assert_eq!(categorical_probs(a, b, &p).1, 0.0);
        }
    }

    #[test]
    fn equal_latents() {
        let (l, t, g) = categorical_probs(0.2, 0.2, &P);
        assert_relative_eq!(l, 1.0 / 2.1, epsilon = 1e-15);
        assert_relative_eq!(t, 0.1 / 2.1, epsilon = 1e-15);
        assert_relative_eq!(g, 1.0 / 2.1, epsilon = 1e-15);
        assert_relative_eq!(l, 0.476190, epsilon = 1e-6);
        assert_relative_eq!(t, 0.047619, epsilon = 1e-6);
    }

    #[test]
    fn large_gap_is_certain() {
        let (l, t, g) = categorical_probs(1e3, 0.0, &P);
        assert_eq!((l, t, g), (0.0, 0.0, 1.0));
    }

    #[test]
    fn invalid_tie_parameter() {
        assert!(TieModelParams::new(0.9, 0.1).is_err());
        assert!(TieModelParams::new(1.1, 0.0).is_err());
    }

    fn dataset(records: &[PreferenceRecord]) -> PreferenceDataset {
        PreferenceDataset::from_records(&Domain::unit(1).unwrap(), records).unwrap()
    }

    #[test]
    fn empty_likelihood_is_zero() {
        assert_eq!(log_likelihood(&PreferenceDataset::new(), &[], &P).unwrap(), 0.0);
    }

    #[test]
    fn single_tie_record() {
        let ds = dataset(&[PreferenceRecord::new(vec![0.1], vec![0.9], Equivalent)]);
        let ll = log_likelihood(&ds, &[0.0, 0.0], &P).unwrap();
        assert_relative_eq!(ll, (0.1f64 / 2.1).ln(), epsilon = 1e-12);
        assert_relative_eq!(ll, -3.0445, epsilon = 1e-4);
    }

    #[test]
    fn duplicated_record_doubles() {
        let r = PreferenceRecord::new(vec![0.1], vec![0.9], FirstLess);
        let one = log_likelihood(&dataset(&[r.clone()]), &[0.03, -0.02], &P).unwrap();
        let two = log_likelihood(&dataset(&[r.clone(), r]), &[0.03, -0.02], &P).unwrap();
        assert_eq!(two, 2.0 * one);
    }

    #[test]
    fn wrong_latent_length() {
        let ds = dataset(&[PreferenceRecord::new(vec![0.1], vec![0.9], FirstLess)]);
        assert!(log_likelihood(&ds, &[0.0], &P).is_err());
    }

    #[test]
    fn log_probs_agree_with_probabilities() {
        for delta in [-0.7, -0.05, 0.0, 0.02, 0.4] {
            let (l, t, g) = categorical_probs(delta, 0.0, &P);
            assert_relative_eq!(log_prob_and_grad(FirstLess, delta, &P).0, l.ln(), max_relative = 1e-12);
            assert_relative_eq!(log_prob_and_grad(Equivalent, delta, &P).0, t.ln(), max_relative = 1e-12);
            assert_relative_eq!(log_prob_and_grad(FirstGreater, delta, &P).0, g.ln(), max_relative = 1e-12);
        }
    }

    #[test]
    fn log_prob_derivatives_match_differences() {
        let h = 1e-6;
        for o in PreferenceOutcome::ALL {
            for delta in [-0.3, -0.01, 0.0, 0.05, 0.25] {
                let fd = (log_prob_and_grad(o, delta + h, &P).0 - log_prob_and_grad(o, delta - h, &P).0) / (2.0 * h);
                assert_relative_eq!(log_prob_and_grad(o, delta, &P).1, fd, max_relative = 1e-6, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn tie_with_unit_beta_is_floored() {
        let p = TieModelParams::new(1.0, 0.1).unwrap();
        let (lp, g) = log_prob_and_grad(Equivalent, 0.0, &p);
        assert_eq!(lp, PROB_FLOOR.ln());
        assert_eq!(g, 0.0);
    }

    fn model1() -> PreferenceModel {
        PreferenceModel::for_domain(&Domain::unit(1).unwrap())
    }

    #[test]
    fn single_point_joint() {
        let model = model1();
        let ds = PreferenceDataset::from_records(&Domain::unit(1).unwrap(), &[]).unwrap();
        let mut ds = ds;
        ds.intern(&[0.5]);
        let lj = log_joint(&ds, &LatentAssignment { f: vec![0.0], gamma: vec![0.0] }, &model).unwrap();
        let var = 0.01 + model.jitter();
        let expect = -0.5 * LN_2PI + (-0.5 * (LN_2PI + var.ln()));
        assert_relative_eq!(lj, expect, epsilon = 1e-12);
    }

    #[test]
    fn adding_a_record_shifts_by_its_log_probability() {
        let model = model1();
        let dom = Domain::unit(1).unwrap();
        let r1 = PreferenceRecord::new(vec![0.2], vec![0.6], FirstLess);
        let r2 = PreferenceRecord::new(vec![0.6], vec![0.2], Equivalent);
        let a = LatentAssignment { f: vec![0.01, 0.04], gamma: vec![0.3] };
        let one = log_joint(&PreferenceDataset::from_records(&dom, &[r1.clone()]).unwrap(), &a, &model).unwrap();
        let two = log_joint(&PreferenceDataset::from_records(&dom, &[r1, r2]).unwrap(), &a, &model).unwrap();
        let shift = categorical_probs(0.04, 0.01, &model.tie).1.ln();
        assert_relative_eq!(two - one, shift, epsilon = 1e-10);
        assert!(two - one <= 0.0);
    }

    // Brute-force density: explicit inverse and determinant via LU, and
    // probabilities from the xi-form expressions.
    fn oracle_log_joint(ds: &PreferenceDataset, a: &LatentAssignment, model: &PreferenceModel) -> f64 {
        let mut total = 0.0;
        for g in &a.gamma {
            total += (-(g * g) / 2.0).exp().ln() - (2.0 * std::f64::consts::PI).sqrt().ln();
        }
        let params = model.kernel.with_gamma(&a.gamma);
        let pts = ds.unique_points();
        let n = pts.len();
        let mut k = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = kernel::rbf(&pts[i], &pts[j], &params).unwrap();
            }
            k[(i, i)] += model.jitter();
        }
        let det = k.clone().lu().determinant();
        let inv = k.clone().try_inverse().unwrap();
        let f = DVector::from_column_slice(&a.f);
        let quad = (f.transpose() * &inv * &f)[(0, 0)];
        total += -0.5 * quad - 0.5 * det.ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        for (r, &(i, j)) in ds.records().iter().zip(ds.index_pairs()) {
            let (l, t, g) = categorical_probs(a.f[i], a.f[j], &model.tie);
            total += match r.outcome {
                FirstLess => l,
                Equivalent => t,
                FirstGreater => g,
            }
            .ln();
        }
        total
    }

    fn random_instance(seed: u64, dims: usize, n: usize, m: usize) -> (PreferenceDataset, LatentAssignment, PreferenceModel) {
        let mut rng = RandomStream::new(seed);
        let dom = Domain::unit(dims).unwrap();
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..dims).map(|_| rng.uniform()).collect()).collect();
        let recs: Vec<PreferenceRecord> = (0..m)
            .map(|_| {
                let i = rng.index(n);
                let j = (i + 1 + rng.index(n - 1)) % n;
                PreferenceRecord::new(pts[i].clone(), pts[j].clone(), PreferenceOutcome::ALL[rng.index(3)])
            })
            .collect();
        let mut ds = PreferenceDataset::from_records(&dom, &recs).unwrap();
        for p in &pts {
            ds.intern(p);
        }
        let a = LatentAssignment {
            f: (0..n).map(|_| 0.1 * rng.normal()).collect(),
            // Short lengthscales keep K well conditioned for the dense oracle.
            gamma: (0..dims).map(|_| -2.5 + 0.5 * rng.normal()).collect(),
        };
        (ds, a, PreferenceModel::for_domain(&dom))
    }

    #[test]
    fn log_joint_matches_brute_force() {
        for seed in 0..10 {
            let (ds, a, model) = random_instance(seed, 2, 4, 5);
            let fast = log_joint(&ds, &a, &model).unwrap();
            let slow = oracle_log_joint(&ds, &a, &model);
            assert_relative_eq!(fast, slow, max_relative = 1e-8);
        }
    }

    #[test]
    fn joint_gradient_matches_central_differences() {
        for seed in 0..5 {
            let (ds, a, model) = random_instance(100 + seed, 2, 4, 6);
            let jd = JointDensity::new(&ds, &model).unwrap();
            let g = jd.log_joint_grad(&a.f, &a.gamma).unwrap();
            assert_relative_eq!(g.value, jd.log_joint(&a.f, &a.gamma).unwrap(), max_relative = 1e-12);
            let h = 1e-6;
            for i in 0..a.f.len() {
                let mut up = a.f.clone();
                let mut dn = a.f.clone();
                up[i] += h;
                dn[i] -= h;
                let fd = (jd.log_joint(&up, &a.gamma).unwrap() - jd.log_joint(&dn, &a.gamma).unwrap()) / (2.0 * h);
                assert_relative_eq!(g.f[i], fd, max_relative = 1e-5, epsilon = 1e-6);
            }
            for d in 0..a.gamma.len() {
                let mut up = a.gamma.clone();
                let mut dn = a.gamma.clone();
                up[d] += h;
                dn[d] -= h;
                let fd = (jd.log_joint(&a.f, &up).unwrap() - jd.log_joint(&a.f, &dn).unwrap()) / (2.0 * h);
                assert_relative_eq!(g.gamma[d], fd, max_relative = 1e-5, epsilon = 1e-6);
            }
        }
    }

    proptest! {
        #[test]
        fn probabilities_normalize(f1 in -2.0..2.0f64, f2 in -2.0..2.0f64, beta in 1.0..20.0f64) {
            let p = TieModelParams::new(beta, 0.1).unwrap();
            let (l, t, g) = categorical_probs(f1, f2, &p);
            prop_assert!((l + t + g - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn swap_mirrors(f1 in -2.0..2.0f64, f2 in -2.0..2.0f64, beta in 1.0..20.0f64) {
            let p = TieModelParams::new(beta, 0.1).unwrap();
            let (l, t, g) = categorical_probs(f1, f2, &p);
            prop_assert_eq!(categorical_probs(f2, f1, &p), (g, t, l));
        }

        #[test]
        fn tie_mass_grows_with_beta(delta in -0.5..0.5f64, beta in 1.0..10.0f64, bump in 1e-3..5.0f64) {
            let lo = categorical_probs(delta, 0.0, &TieModelParams::new(beta, 0.1).unwrap()).1;
            let hi = categorical_probs(delta, 0.0, &TieModelParams::new(beta + bump, 0.1).unwrap()).1;
            prop_assert!(hi > lo);
        }

        #[test]
        fn unit_beta_is_binary_model(f1 in -1.0..1.0f64, f2 in -1.0..1.0f64) {
            let p = TieModelParams::new(1.0, 0.1).unwrap();
            let xi1 = sigmoid((f1 - f2) / (0.02f64).sqrt());
            let (l, t, g) = categorical_probs(f1, f2, &p);
            prop_assert_eq!(t, 0.0);
            prop_assert!((g - xi1).abs() < 1e-15);
            prop_assert!((l - (1.0 - xi1)).abs() < 1e-15);
        }

        #[test]
        fn shift_invariance(f1 in -1.0..1.0f64, f2 in -1.0..1.0f64, c in -1.0..1.0f64) {
            let a = categorical_probs(f1 + c, f2 + c, &P);
            let b = categorical_probs(f1, f2, &P);
            prop_assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12 && (a.2 - b.2).abs() < 1e-12);
        }
    }
}

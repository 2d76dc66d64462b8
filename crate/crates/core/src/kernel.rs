//! ARD squared-exponential covariance, the bounded lengthscale map, and GP
//! predictive algebra on top of a Cholesky factor.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{Error, Result};

/// Relative jitter schedule: first attempt, growth factor, and last attempt,
/// all as multiples of `sigma^2`.
pub const JITTER_START: f64 = 1e-6;
pub const JITTER_GROWTH: f64 = 10.0;
pub const JITTER_MAX: f64 = 1e-2;

/// Logistic sigmoid `1 / (1 + e^-x)`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Hyperparameters of the ARD kernel.
///
/// `gamma` is unconstrained; the lengthscale of axis `d` is
/// `sigmoid(gamma[d]) * (alpha_upper[d] - alpha_lower[d]) + alpha_lower[d]`,
/// which always stays strictly between the two bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperParams {
    pub gamma: Vec<f64>,
    pub alpha_lower: Vec<f64>,
    pub alpha_upper: Vec<f64>,
    pub sigma: f64,
}

impl KernelHyperParams {
    pub fn new(gamma: Vec<f64>, alpha_lower: Vec<f64>, alpha_upper: Vec<f64>, sigma: f64) -> Result<Self> {
        let d = gamma.len();
        if alpha_lower.len() != d || alpha_upper.len() != d {
            return Err(Error::InvalidArgument("gamma and bound lengths differ".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        for (l, u) in alpha_lower.iter().zip(&alpha_upper) {
            if !(0.0 < *l && l < u && u.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "lengthscale bounds need 0 < lower < upper, got ({l}, {u})"
                )));
            }
        }
        Ok(KernelHyperParams {
            gamma,
            alpha_lower,
            alpha_upper,
            sigma,
        })
    }

    /// Bounds `lower_frac * r_d` and `upper_frac * r_d` from the domain ranges,
    /// with `gamma = 0`.
    pub fn for_domain(domain: &Domain, lower_frac: f64, upper_frac: f64, sigma: f64) -> Result<Self> {
        let r = domain.ranges();
        Self::new(
            vec![0.0; r.len()],
            r.iter().map(|r| lower_frac * r).collect(),
            r.iter().map(|r| upper_frac * r).collect(),
            sigma,
        )
    }

    pub fn dims(&self) -> usize {
        self.gamma.len()
    }

    pub fn with_gamma(&self, gamma: &[f64]) -> Self {
        KernelHyperParams {
            gamma: gamma.to_vec(),
            ..self.clone()
        }
    }

    pub fn signal_variance(&self) -> f64 {
        self.sigma * self.sigma
    }

    pub fn default_jitter(&self) -> f64 {
        JITTER_START * self.signal_variance()
    }
}

/// Lengthscale `theta_d` from `gamma_d` and its bounds.
#[inline]
pub fn lengthscale(gamma: f64, lower: f64, upper: f64) -> f64 {
    sigmoid(gamma) * (upper - lower) + lower
}

pub fn lengthscales(params: &KernelHyperParams) -> Vec<f64> {
    params
        .gamma
        .iter()
        .zip(params.alpha_lower.iter().zip(&params.alpha_upper))
        .map(|(g, (l, u))| lengthscale(*g, *l, *u))
        .collect()
}

#[inline]
fn rbf_with(x: &[f64], y: &[f64], inv_theta_sq: &[f64], sigma_sq: f64) -> f64 {
    let mut q = 0.0;
    for ((a, b), w) in x.iter().zip(y).zip(inv_theta_sq) {
        let d = a - b;
        q += d * d * w;
    }
    sigma_sq * (-0.5 * q).exp()
}

fn inv_sq(theta: &[f64]) -> Vec<f64> {
    theta.iter().map(|t| 1.0 / (t * t)).collect()
}

/// `sigma^2 exp(-1/2 sum_d (x_d - y_d)^2 / theta_d^2)`
pub fn rbf(x: &[f64], y: &[f64], params: &KernelHyperParams) -> Result<f64> {
    if x.len() != params.dims() || y.len() != params.dims() {
        return Err(Error::InvalidArgument(format!(
            "rbf: point dims {} / {} vs kernel dims {}",
            x.len(),
            y.len(),
            params.dims()
        )));
    }
    let w = inv_sq(&lengthscales(params));
    Ok(rbf_with(x, y, &w, params.signal_variance()))
}

/// Noise-free kernel matrix for `points` at lengthscales `theta`.
pub fn kernel_matrix(points: &[Vec<f64>], theta: &[f64], sigma_sq: f64) -> DMatrix<f64> {
    let n = points.len();
    let w = inv_sq(theta);
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = sigma_sq;
        for j in 0..i {
            let v = rbf_with(&points[i], &points[j], &w, sigma_sq);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Kernel matrix plus diagonal jitter, with its Cholesky factor.
#[derive(Clone, Debug)]
pub struct CovarianceMatrix {
    entries: DMatrix<f64>,
    jitter: f64,
    factor: Cholesky<f64, Dyn>,
}

impl CovarianceMatrix {
    /// Factor `k + jitter I`, multiplying the jitter by [`JITTER_GROWTH`] on
    /// failure until it passes `JITTER_MAX * sigma_sq`.
    pub fn factor(k: DMatrix<f64>, jitter: f64, sigma_sq: f64) -> Result<Self> {
        let cap = JITTER_MAX * sigma_sq;
        let mut jitter = jitter.max(0.0);
        loop {
            let mut m = k.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
            if let Some(factor) = Cholesky::new(m.clone()) {
                return Ok(CovarianceMatrix {
                    entries: m,
                    jitter,
                    factor,
                });
            }
            let next = if jitter == 0.0 {
                JITTER_START * sigma_sq
            } else {
                jitter * JITTER_GROWTH
            };
            if next > cap * (1.0 + 1e-12) {
                return Err(Error::Factorization {
                    jitter,
                    condition: condition_estimate(&m),
                });
            }
            jitter = next;
        }
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.factor
    }

    /// Lower-triangular factor `L` with `L L^T = K`.
    pub fn lower(&self) -> DMatrix<f64> {
        self.factor.l()
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.factor.inverse()
    }

    /// `log det K` from the factor diagonal.
    pub fn log_det(&self) -> f64 {
        let l = self.factor.l_dirty();
        (0..self.dim()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
    }
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Covariance of `points` under `params`, with `jitter` on the diagonal
/// (escalated on factorization failure).
pub fn build_covariance(points: &[Vec<f64>], params: &KernelHyperParams, jitter: f64) -> Result<CovarianceMatrix> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("covariance of an empty point set".into()));
    }
    if let Some(p) = points.iter().find(|p| p.len() != params.dims()) {
        return Err(Error::InvalidArgument(format!(
            "point of dim {} vs kernel dims {}",
            p.len(),
            params.dims()
        )));
    }
    let k = kernel_matrix(points, &lengthscales(params), params.signal_variance());
    CovarianceMatrix::factor(k, jitter, params.signal_variance())
}

/// GP conditioned on latent values `f` at `points`, ready for repeated
/// prediction. The factor is stored row-major so forward substitution walks
/// memory in order.
#[derive(Clone, Debug)]
pub struct GpPosterior {
    points: Vec<Vec<f64>>,
    inv_theta_sq: Vec<f64>,
    sigma_sq: f64,
    /// Packed rows of `L`: row `i` holds `L[i, 0..=i]`.
    l_rows: Vec<f64>,
    alpha: Vec<f64>,
}

impl GpPosterior {
    pub fn new(points: &[Vec<f64>], f: &[f64], cov: &CovarianceMatrix, params: &KernelHyperParams) -> Result<Self> {
        let n = points.len();
        if f.len() != n || cov.dim() != n {
            return Err(Error::InvalidArgument(format!(
                "gp: {n} points, {} latent values, covariance dim {}",
                f.len(),
                cov.dim()
            )));
        }
        let alpha = cov.solve(&DVector::from_column_slice(f));
        let l = cov.factor.l_dirty();
        let mut l_rows = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                l_rows.push(l[(i, j)]);
            }
        }
        Ok(GpPosterior {
            points: points.to_vec(),
            inv_theta_sq: inv_sq(&lengthscales(params)),
            sigma_sq: params.signal_variance(),
            l_rows,
            alpha: alpha.as_slice().to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Predictive mean and standard deviation at `x`, using `scratch` (length
    /// at least `N`) for the solve. Negative variance from round-off is
    /// clamped to zero.
    pub fn predict_with(&self, x: &[f64], scratch: &mut [f64]) -> (f64, f64) {
        let n = self.points.len();
        let v = &mut scratch[..n];
        let mut mean = 0.0;
        for (i, p) in self.points.iter().enumerate() {
            let k = rbf_with(x, p, &self.inv_theta_sq, self.sigma_sq);
            mean += k * self.alpha[i];
            v[i] = k;
        }
        let mut quad = 0.0;
        let mut off = 0;
        for i in 0..n {
            let row = &self.l_rows[off..off + i + 1];
            let mut acc = v[i];
            for j in 0..i {
                acc -= row[j] * v[j];
            }
            let vi = acc / row[i];
            v[i] = vi;
            quad += vi * vi;
            off += i + 1;
        }
        let var = (self.sigma_sq - quad).max(0.0);
        (mean, var.sqrt())
    }

    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let mut scratch = vec![0.0; self.points.len()];
        self.predict_with(x, &mut scratch)
    }
}

/// Predictive mean `k(x)^T K^-1 f` and standard deviation
/// `sqrt(k(x,x) - k(x)^T K^-1 k(x))` at a single point.
pub fn gp_predict(
    x: &[f64],
    points: &[Vec<f64>],
    f: &[f64],
    cov: &CovarianceMatrix,
    params: &KernelHyperParams,
) -> Result<(f64, f64)> {
    if x.len() != params.dims() {
        return Err(Error::InvalidArgument("gp_predict: dimension mismatch".into()));
    }
    Ok(GpPosterior::new(points, f, cov, params)?.predict(x))
}

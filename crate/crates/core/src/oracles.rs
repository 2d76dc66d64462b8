//! Synthetic preference providers: a deterministic tolerance rule wrapped
//! around scalar test functions (lower is better).

use std::fmt;
use std::sync::Arc;

use crate::domain::{Domain, PreferenceOutcome};
use crate::error::{Error, Result};

/// Names accepted by [`test_function`].
pub const REGISTERED: [&str; 4] = ["shekel05", "mo2d", "sphere", "linear1d"];

/// A named scalar function on a box, minimized by the oracle.
#[derive(Clone)]
pub struct ScalarTestFunction {
    pub name: String,
    pub domain: Domain,
    /// Minimizer and minimum value, where known.
    pub known_minimum: Option<(Vec<f64>, f64)>,
    eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl fmt::Debug for ScalarTestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarTestFunction")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("known_minimum", &self.known_minimum)
            .finish()
    }
}

impl ScalarTestFunction {
    pub fn new(
        name: impl Into<String>,
        domain: Domain,
        known_minimum: Option<(Vec<f64>, f64)>,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ScalarTestFunction { name: name.into(), domain, known_minimum, eval: Arc::new(eval) }
    }

    pub fn dims(&self) -> usize {
        self.domain.dims()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }
}

/// Tolerance judge: a tie when the values differ by at most `epsilon`,
/// otherwise the point with the lower value is preferred.
#[derive(Clone, Debug)]
pub struct ToleranceOracle {
    pub function: ScalarTestFunction,
    pub epsilon: f64,
}

impl ToleranceOracle {
    pub fn new(function: ScalarTestFunction, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance must be >= 0, got {epsilon}")));
        }
        Ok(ToleranceOracle { function, epsilon })
    }

    pub fn compare(&self, x1: &[f64], x2: &[f64]) -> PreferenceOutcome {
        compare_values(self.function.eval(x1), self.function.eval(x2), self.epsilon)
    }
}

/// The tolerance rule on precomputed values.
pub fn compare_values(f1: f64, f2: f64, epsilon: f64) -> PreferenceOutcome {
    if (f1 - f2).abs() <= epsilon {
        PreferenceOutcome::Equivalent
    } else if f1 < f2 {
        PreferenceOutcome::FirstGreater
    } else {
        PreferenceOutcome::FirstLess
    }
}

pub const SHEKEL_A: [[f64; 4]; 5] = [
    [4.0, 4.0, 4.0, 4.0],
    [1.0, 1.0, 1.0, 1.0],
    [8.0, 8.0, 8.0, 8.0],
    [6.0, 6.0, 6.0, 6.0],
    [3.0, 7.0, 3.0, 7.0],
];
pub const SHEKEL_C: [f64; 5] = [0.1, 0.2, 0.2, 0.4, 0.4];

/// Shekel function with m = 5 terms on `[0, 10]^4`.
pub fn shekel05(x: &[f64]) -> f64 {
    -SHEKEL_A
        .iter()
        .zip(SHEKEL_C)
        .map(|(a, c)| {
            let sq: f64 = a.iter().zip(x).map(|(ai, xi)| (xi - ai).powi(2)).sum();
            1.0 / (sq + c)
        })
        .sum::<f64>()
}

// Two-bump landscape for the multi-objective study.
pub const MO_GLOBAL_CENTER: [f64; 2] = [-1.2, 0.0];
pub const MO_SECOND_CENTER: [f64; 2] = [1.2, 0.0];
pub const MO_GLOBAL_DEPTH: f64 = 0.6;
pub const MO_SECOND_DEPTH: f64 = 0.45;
pub const MO_WIDTH: f64 = 0.5;
pub const MO_LOWER: [f64; 2] = [-2.0, -1.5];
pub const MO_UPPER: [f64; 2] = [2.0, 1.5];

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// The underlying multimodal function: the lower of two Gaussian wells, so
/// the global minimum is exactly -0.6 at `MO_GLOBAL_CENTER` and the second
/// minimum exactly -0.45 at `MO_SECOND_CENTER`.
pub fn mo2d_base(x: &[f64]) -> f64 {
    let well = |c: &[f64], depth: f64| -depth * (-dist(x, c).powi(2) / (2.0 * MO_WIDTH * MO_WIDTH)).exp();
    well(&MO_GLOBAL_CENTER, MO_GLOBAL_DEPTH).min(well(&MO_SECOND_CENTER, MO_SECOND_DEPTH))
}

/// Scalarized quality trading off a low base value against distance from the
/// global minimizer: `cbrt(4 (f + 0.6)^3 - 0.3 (|x - x*| - 2.4)^3)`.
/// Minimized near the second-lowest minimum.
pub fn multiobjective_ftest(x: &[f64]) -> f64 {
    let a = mo2d_base(x) + MO_GLOBAL_DEPTH;
    let b = dist(x, &MO_GLOBAL_CENTER) - 2.4;
    (4.0 * a.powi(3) - 0.3 * b.powi(3)).cbrt()
}

pub fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Look up a registered function by name.
pub fn test_function(name: &str) -> Result<ScalarTestFunction> {
    let f = match name {
        "shekel05" => ScalarTestFunction::new(
            name,
            Domain::cube(4, 0.0, 10.0)?,
            Some((vec![4.0; 4], shekel05(&[4.0; 4]))),
            shekel05,
        ),
        "mo2d" => ScalarTestFunction::new(
            name,
            Domain::new(MO_LOWER.to_vec(), MO_UPPER.to_vec())?,
            None,
            multiobjective_ftest,
        ),
        "sphere" => ScalarTestFunction::new(name, Domain::cube(2, -1.0, 1.0)?, Some((vec![0.0; 2], 0.0)), sphere),
        "linear1d" => ScalarTestFunction::new(name, Domain::unit(1)?, Some((vec![0.0], 0.0)), |x: &[f64]| x[0]),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "unknown oracle {name:?}; expected one of {}",
                REGISTERED.join(", ")
            )))
        }
    };
    Ok(f)
}

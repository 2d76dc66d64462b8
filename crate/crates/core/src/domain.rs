//! Search domain, comparison outcomes and preference records.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Axis-aligned box in `R^D`. Every search happens inside one of these.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DomainRepr", into = "DomainRepr")]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DomainRepr {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<DomainRepr> for Domain {
    type Error = Error;

    fn try_from(repr: DomainRepr) -> Result<Self> {
        Domain::new(repr.lower, repr.upper)
    }
}

impl From<Domain> for DomainRepr {
    fn from(d: Domain) -> Self {
        DomainRepr {
            lower: d.lower,
            upper: d.upper,
        }
    }
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidArgument("domain needs at least one dimension".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::InvalidArgument(format!(
                "bound lengths differ: {} lower vs {} upper",
                lower.len(),
                upper.len()
            )));
        }
        for (d, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidArgument(format!(
                    "dimension {d}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Domain { lower, upper })
    }

    /// The box `[lo, hi]^dims`.
    pub fn cube(dims: usize, lo: f64, hi: f64) -> Result<Self> {
        Domain::new(vec![lo; dims], vec![hi; dims])
    }

    pub fn unit(dims: usize) -> Result<Self> {
        Domain::cube(dims, 0.0, 1.0)
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Per-axis range `upper - lower`.
    pub fn ranges(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dims()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn check(&self, x: &[f64], index: usize) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::DomainViolation {
                index,
                detail: format!("{x:?} not in {:?}..{:?}", self.lower, self.upper),
            })
        }
    }

    /// Clamp each coordinate into the box.
    pub fn clamp(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    /// Map a point of the unit cube into the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (l, h))| l + t * (h - l))
            .collect()
    }

    /// Map a point of the box into the unit cube.
    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, h))| (v - l) / (h - l))
            .collect()
    }
}

/// Result of comparing a first point against a second one.
///
/// `FirstLess` means the first point is *less* preferred. The optimizer stores
/// records as `(incumbent, challenger)`, so `FirstLess` is the outcome that
/// replaces the incumbent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PreferenceOutcome {
    #[serde(rename = "<")]
    FirstLess,
    #[serde(rename = "~")]
    Equivalent,
    #[serde(rename = ">")]
    FirstGreater,
}

impl PreferenceOutcome {
    pub const ALL: [PreferenceOutcome; 3] = [
        PreferenceOutcome::FirstLess,
        PreferenceOutcome::Equivalent,
        PreferenceOutcome::FirstGreater,
    ];

    /// The same judgment with the two points swapped.
    pub fn mirrored(self) -> Self {
        match self {
            PreferenceOutcome::FirstLess => PreferenceOutcome::FirstGreater,
            PreferenceOutcome::Equivalent => PreferenceOutcome::Equivalent,
            PreferenceOutcome::FirstGreater => PreferenceOutcome::FirstLess,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            PreferenceOutcome::FirstLess => "<",
            PreferenceOutcome::Equivalent => "~",
            PreferenceOutcome::FirstGreater => ">",
        }
    }
}

impl fmt::Display for PreferenceOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for PreferenceOutcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "<" => Ok(PreferenceOutcome::FirstLess),
            "~" => Ok(PreferenceOutcome::Equivalent),
            ">" => Ok(PreferenceOutcome::FirstGreater),
            other => Err(Error::InvalidArgument(format!("unknown outcome {other:?}"))),
        }
    }
}

/// One comparison `(first, second, outcome)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub outcome: PreferenceOutcome,
}

impl PreferenceRecord {
    pub fn new(first: Vec<f64>, second: Vec<f64>, outcome: PreferenceOutcome) -> Self {
        PreferenceRecord {
            first,
            second,
            outcome,
        }
    }
}

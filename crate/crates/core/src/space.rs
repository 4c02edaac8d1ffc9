//! Rectangular covariate spaces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimensionKind {
    Continuous,
    Discrete,
}

/// One coordinate of the covariate space: a closed interval, plus a finite
/// support for discrete covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSpec {
    pub kind: DimensionKind,
    pub lower: f64,
    pub upper: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<f64>>,
}

impl DimensionSpec {
    pub fn continuous(lower: f64, upper: f64) -> Self {
        Self {
            kind: DimensionKind::Continuous,
            lower,
            upper,
            support: None,
        }
    }

    /// A discrete dimension; bounds are taken from the smallest and largest
    /// support point.
    pub fn discrete(mut support: Vec<f64>) -> Self {
        support.sort_by(f64::total_cmp);
        support.dedup();
        let lower = support.first().copied().unwrap_or(f64::NAN);
        let upper = support.last().copied().unwrap_or(f64::NAN);
        Self {
            kind: DimensionKind::Discrete,
            lower,
            upper,
            support: Some(support),
        }
    }

    fn validate(&self, j: usize) -> Result<()> {
        if !self.lower.is_finite() || !self.upper.is_finite() || self.lower >= self.upper {
            return Err(Error::InvalidSpace(format!(
                "dimension x{} needs finite bounds with lower < upper, got [{}, {}]",
                j + 1,
                self.lower,
                self.upper
            )));
        }
        match (self.kind, &self.support) {
            (DimensionKind::Discrete, None) => Err(Error::InvalidSpace(format!(
                "discrete dimension x{} has no support",
                j + 1
            ))),
            (DimensionKind::Discrete, Some(s)) if s.is_empty() => Err(Error::InvalidSpace(
                format!("discrete dimension x{} has an empty support", j + 1),
            )),
            (DimensionKind::Discrete, Some(s)) => {
                if let Some(v) = s.iter().find(|v| !(**v >= self.lower && **v <= self.upper)) {
                    return Err(Error::InvalidSpace(format!(
                        "support point {v} of x{} lies outside [{}, {}]",
                        j + 1,
                        self.lower,
                        self.upper
                    )));
                }
                Ok(())
            }
            (DimensionKind::Continuous, Some(_)) => Err(Error::InvalidSpace(format!(
                "continuous dimension x{} must not carry a support",
                j + 1
            ))),
            (DimensionKind::Continuous, None) => Ok(()),
        }
    }
}

/// The covariate space: a product of per-dimension intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DimensionSpec>", into = "Vec<DimensionSpec>")]
pub struct CovariateSpace {
    dims: Vec<DimensionSpec>,
}

impl CovariateSpace {
    pub fn new(dims: Vec<DimensionSpec>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidSpace(
                "at least one dimension is required".into(),
            ));
        }
        for (j, dim) in dims.iter().enumerate() {
            dim.validate(j)?;
        }
        Ok(Self { dims })
    }

    /// `[0, 1]^d`, all continuous.
    pub fn unit_cube(d: usize) -> Self {
        Self::new(vec![DimensionSpec::continuous(0.0, 1.0); d]).expect("unit cube needs d >= 1")
    }

    pub fn dims(&self) -> &[DimensionSpec] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.dims[j].lower, self.dims[j].upper)
    }

    /// Checks that `x` has the right length and lies inside the bounds.
    pub fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dims.len() {
            return Err(Error::DimensionMismatch {
                expected: self.dims.len(),
                got: x.len(),
            });
        }
        for (j, (v, dim)) in x.iter().zip(&self.dims).enumerate() {
            if !(*v >= dim.lower && *v <= dim.upper) {
                return Err(Error::OutOfBounds {
                    dim: j + 1,
                    value: *v,
                    lower: dim.lower,
                    upper: dim.upper,
                });
            }
        }
        Ok(())
    }
}

impl TryFrom<Vec<DimensionSpec>> for CovariateSpace {
    type Error = Error;

    fn try_from(dims: Vec<DimensionSpec>) -> Result<Self> {
        Self::new(dims)
    }
}

impl From<CovariateSpace> for Vec<DimensionSpec> {
    fn from(space: CovariateSpace) -> Self {
        space.dims
    }
}

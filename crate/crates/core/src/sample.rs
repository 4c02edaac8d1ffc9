//! Experimental samples of `(outcome, treatment, covariates)` rows.

use crate::error::{Error, Result};
use crate::space::CovariateSpace;

/// Observed data from one wave of an experiment.
///
/// Covariates are stored row-major in a single buffer. Treatment labels are
/// `0..=J` with `0` the control arm; every label in that range must occur.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    y: Vec<f64>,
    a: Vec<usize>,
    x: Vec<f64>,
    d: usize,
    arms: usize,
}

impl Sample {
    pub fn new(y: Vec<f64>, a: Vec<usize>, x: Vec<Vec<f64>>) -> Result<Self> {
        let d = x.first().map(Vec::len).unwrap_or(0);
        if x.iter().any(|row| row.len() != d) {
            return Err(Error::InvalidSample(
                "covariate rows have differing lengths".into(),
            ));
        }
        Self::from_flat(y, a, x.into_iter().flatten().collect(), d)
    }

    pub fn from_flat(y: Vec<f64>, a: Vec<usize>, x: Vec<f64>, d: usize) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidSample("sample is empty".into()));
        }
        if a.len() != n || x.len() != n * d || d == 0 {
            return Err(Error::InvalidSample(format!(
                "column lengths disagree: {} outcomes, {} treatments, {} covariate values for d = {d}",
                n,
                a.len(),
                x.len()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSample(format!(
                "outcome in row {i} is not finite"
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSample(format!(
                "covariate in row {} is not finite",
                i / d
            )));
        }
        let arms = a.iter().max().map(|m| m + 1).unwrap_or(0);
        let mut seen = vec![false; arms];
        for &label in &a {
            seen[label] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidSample(format!(
                "treatment labels must be contiguous from 0; label {missing} is absent"
            )));
        }
        if arms < 2 {
            return Err(Error::InvalidSample(
                "sample needs a control and at least one treated arm".into(),
            ));
        }
        Ok(Self { y, a, x, d, arms })
    }

    /// Builds a sample and checks every covariate row against `space`.
    pub fn with_space(
        y: Vec<f64>,
        a: Vec<usize>,
        x: Vec<Vec<f64>>,
        space: &CovariateSpace,
    ) -> Result<Self> {
        let s = Self::new(y, a, x)?;
        s.check_space(space)?;
        Ok(s)
    }

    pub fn check_space(&self, space: &CovariateSpace) -> Result<()> {
        for i in 0..self.n() {
            space.check(self.x(i))?;
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of arms including control (`J + 1`).
    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn y(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn a(&self, i: usize) -> usize {
        self.a[i]
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.y
    }

    pub fn treatments(&self) -> &[usize] {
        &self.a
    }

    pub fn covariates(&self) -> &[f64] {
        &self.x
    }

    /// Count of rows per arm.
    pub fn arm_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.arms];
        for &a in &self.a {
            counts[a] += 1;
        }
        counts
    }

    /// Difference in means of each treated arm against control.
    pub fn difference_in_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.arms];
        let mut counts = vec![0usize; self.arms];
        for (y, &a) in self.y.iter().zip(&self.a) {
            sums[a] += y;
            counts[a] += 1;
        }
        let control = sums[0] / counts[0] as f64;
        (1..self.arms)
            .map(|a| sums[a] / counts[a] as f64 - control)
            .collect()
    }

    /// The rows at `indices`, in that order. Fails if an arm disappears.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let y = indices.iter().map(|&i| self.y[i]).collect();
        let a = indices.iter().map(|&i| self.a[i]).collect();
        let x = indices
            .iter()
            .flat_map(|&i| self.x(i).iter().copied())
            .collect();
        let sub = Self::from_flat(y, a, x, self.d)?;
        if sub.arms != self.arms {
            return Err(Error::InvalidSample(format!(
                "subset has {} arms, parent has {}",
                sub.arms, self.arms
            )));
        }
        Ok(sub)
    }

    /// Returns a copy with every outcome transformed by `f(y, a)`.
    pub fn map_outcomes(&self, f: impl Fn(f64, usize) -> f64) -> Self {
        let mut out = self.clone();
        for (y, &a) in out.y.iter_mut().zip(&self.a) {
            *y = f(*y, a);
        }
        out
    }
}

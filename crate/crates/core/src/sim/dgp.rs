//! Potential-outcome data-generating processes for the simulation study.
//!
//! `Y(a) = κ_a(X) + ν_a(X)·ε_a` with `ε_a` i.i.d. normal and the components
//! of `X` i.i.d. Beta.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta as BetaDist, ContinuousCDF};

use crate::error::{Error, Result};
use crate::space::CovariateSpace;

type Surface = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// User-supplied conditional mean and scale functions.
#[derive(Clone)]
pub struct CustomModel {
    pub d: usize,
    pub kappa0: Surface,
    pub kappa1: Surface,
    pub nu0: Surface,
    pub nu1: Surface,
}

impl fmt::Debug for CustomModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomModel")
            .field("d", &self.d)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum Model {
    One,
    Two,
    Three,
    Custom(CustomModel),
}

impl Model {
    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Model::One),
            2 => Ok(Model::Two),
            3 => Ok(Model::Three),
            _ => Err(Error::InvalidArgument(format!(
                "unknown model {id}; expected 1, 2 or 3"
            ))),
        }
    }

    pub fn id(&self) -> Option<u8> {
        match self {
            Model::One => Some(1),
            Model::Two => Some(2),
            Model::Three => Some(3),
            Model::Custom(_) => None,
        }
    }
}

/// A fully specified data-generating process.
#[derive(Debug, Clone)]
pub struct DgpSpec {
    pub model: Model,
    /// Constant control mean for the preset models.
    pub kappa0: f64,
    /// Standard deviation of `ε`.
    pub noise_sd: f64,
    /// Beta shape parameters of each covariate.
    pub covariate_shape: (f64, f64),
}

/// Serializable summary of a [`DgpSpec`] for report headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSummary {
    pub model: String,
    pub d: usize,
    pub kappa0: f64,
    pub noise_sd: f64,
    pub covariate_shape: (f64, f64),
}

/// Draws of `(Y(0), Y(1), X)`; `x` is row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomes {
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub x: Vec<f64>,
    pub d: usize,
}

impl PotentialOutcomes {
    pub fn n(&self) -> usize {
        self.y0.len()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.x.chunks(self.d).map(<[f64]>::to_vec).collect()
    }
}

fn ind(cond: bool) -> f64 {
    if cond {
        1.0
    } else {
        0.0
    }
}

/// The covariate threshold at which the conditional mean of `Y(1)` jumps.
const MEAN_KINK: f64 = 0.4;
/// The covariate threshold at which the scale of `Y(1)` jumps.
const SCALE_KINK: f64 = 0.6;

fn sign(j: usize) -> f64 {
    // (-1)^(j-1) for 1-based j.
    if j % 2 == 1 {
        1.0
    } else {
        -1.0
    }
}

impl DgpSpec {
    /// One of the three preset models.
    pub fn preset(id: u8) -> Result<Self> {
        let model = Model::from_id(id)?;
        let kappa0 = match model {
            Model::Two => 0.5,
            _ => 0.2,
        };
        Ok(Self {
            model,
            kappa0,
            noise_sd: 0.1f64.sqrt(),
            covariate_shape: (2.0, 5.0),
        })
    }

    pub fn custom(model: CustomModel) -> Self {
        Self {
            model: Model::Custom(model),
            kappa0: 0.0,
            noise_sd: 1.0,
            covariate_shape: (1.0, 1.0),
        }
    }

    pub fn dim(&self) -> usize {
        match &self.model {
            Model::One => 2,
            Model::Two | Model::Three => 10,
            Model::Custom(c) => c.d,
        }
    }

    pub fn space(&self) -> CovariateSpace {
        CovariateSpace::unit_cube(self.dim())
    }

    pub fn summary(&self) -> DgpSummary {
        DgpSummary {
            model: self
                .model
                .id()
                .map(|i| i.to_string())
                .unwrap_or_else(|| "custom".into()),
            d: self.dim(),
            kappa0: self.kappa0,
            noise_sd: self.noise_sd,
            covariate_shape: self.covariate_shape,
        }
    }

    /// `(κ_0(x), κ_1(x), ν_0(x), ν_1(x))`.
    pub fn surfaces(&self, x: &[f64]) -> (f64, f64, f64, f64) {
        match &self.model {
            Model::One => {
                let k1 = 10.0 * x[0] * ind(x[0] > MEAN_KINK) - 5.0 * x[1] * ind(x[1] > MEAN_KINK);
                let n1 = 1.0
                    + 10.0 * x[0] * ind(x[0] > SCALE_KINK)
                    + 5.0 * x[1] * ind(x[1] > SCALE_KINK);
                (self.kappa0, k1, 5.0, n1)
            }
            Model::Two => {
                let mut k1 = 0.0;
                let mut n1 = 1.0;
                for (j0, &xj) in x.iter().enumerate().take(10) {
                    let w = 10f64.powi(1 - j0 as i32);
                    k1 += sign(j0 + 1) * w * ind(xj > MEAN_KINK);
                    n1 += w * ind(xj > SCALE_KINK);
                }
                (self.kappa0, k1, 5.0, n1)
            }
            Model::Three => {
                let mut k1 = 0.0;
                let mut n1 = 1.0;
                for (j0, &xj) in x.iter().enumerate().take(10) {
                    let w = if j0 < 3 { 10.0 } else { 5.0 };
                    k1 += sign(j0 + 1) * w * ind(xj > MEAN_KINK);
                    n1 += w * ind(xj > SCALE_KINK);
                }
                (self.kappa0, k1, 9.0, n1)
            }
            Model::Custom(c) => ((c.kappa0)(x), (c.kappa1)(x), (c.nu0)(x), (c.nu1)(x)),
        }
    }

    pub fn draw(&self, n: usize, seed: u64) -> PotentialOutcomes {
        self.draw_with(n, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Covariates only.
    pub fn draw_covariates<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let (a, b) = self.covariate_shape;
        let beta = Beta::new(a, b).expect("valid beta shape");
        (0..n * self.dim()).map(|_| beta.sample(rng)).collect()
    }

    pub fn draw_with<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> PotentialOutcomes {
        let d = self.dim();
        let x = self.draw_covariates(n, rng);
        let noise = Normal::new(0.0, self.noise_sd).expect("valid noise scale");
        let mut y0 = Vec::with_capacity(n);
        let mut y1 = Vec::with_capacity(n);
        for row in x.chunks(d) {
            let (k0, k1, n0, n1) = self.surfaces(row);
            y0.push(k0 + n0 * noise.sample(rng));
            y1.push(k1 + n1 * noise.sample(rng));
        }
        PotentialOutcomes { y0, y1, x, d }
    }

    /// `E[Y(1) − Y(0)]` in closed form for the preset models.
    pub fn analytic_ate(&self) -> Option<f64> {
        let (a, b) = self.covariate_shape;
        let tail = |c: f64| 1.0 - BetaDist::new(a, b).expect("valid beta").cdf(c);
        // E[X 1{X > c}] = E[X] · P(Beta(a + 1, b) > c).
        let partial_mean =
            |c: f64| a / (a + b) * (1.0 - BetaDist::new(a + 1.0, b).expect("valid beta").cdf(c));
        let p = tail(MEAN_KINK);
        let mean1 = match &self.model {
            Model::One => 10.0 * partial_mean(MEAN_KINK) - 5.0 * partial_mean(MEAN_KINK),
            Model::Two => (1..=10)
                .map(|j| sign(j) * 10f64.powi(2 - j as i32) * p)
                .sum(),
            Model::Three => (1..=10)
                .map(|j| sign(j) * if j <= 3 { 10.0 } else { 5.0 } * p)
                .sum(),
            Model::Custom(_) => return None,
        };
        Some(mean1 - self.kappa0)
    }

    /// The true ATE: closed form when available, otherwise a seeded Monte
    /// Carlo average over `10^6` draws.
    pub fn true_ate(&self) -> f64 {
        self.analytic_ate().unwrap_or_else(|| {
            let draws = self.draw(1_000_000, 0x5eed);
            let s: f64 = draws.y1.iter().zip(&draws.y0).map(|(a, b)| a - b).sum();
            s / draws.n() as f64
        })
    }
}

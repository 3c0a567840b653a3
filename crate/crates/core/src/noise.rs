//! Synthetic noise models.
//!
//! Gaussian levels are given on the 8-bit scale (`sigma = 25` means a
//! standard deviation of `25/255` on `[0, 1]` pixels). Poisson levels scale
//! `[0, 1]` intensities to photon counts: `y = Poisson(lambda * x) / lambda`.
//! Ranged models draw one level per image.
//!
//! Noisy output is never clamped: both models keep `E[y | x] = x`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::{Error, Image, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseModel {
    GaussianFixed { sigma: f64 },
    GaussianRange { low: f64, high: f64 },
    PoissonFixed { lambda: f64 },
    PoissonRange { low: f64, high: f64 },
}

/// A noise model with its level resolved for one image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PixelNoise {
    /// Additive normal noise with this standard deviation on the `[0, 1]` scale.
    Gaussian { std: f64 },
    Poisson { lambda: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidNoise(msg));
        match *self {
            NoiseModel::GaussianFixed { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                bad(format!("sigma must be >= 0, got {sigma}"))
            }
            NoiseModel::PoissonFixed { lambda } if !(lambda > 0.0 && lambda.is_finite()) => {
                bad(format!("lambda must be > 0, got {lambda}"))
            }
            NoiseModel::GaussianRange { low, high } if !(low >= 0.0 && low <= high && high.is_finite()) => {
                bad(format!("sigma range [{low}, {high}] must satisfy 0 <= low <= high"))
            }
            NoiseModel::PoissonRange { low, high } if !(low > 0.0 && low <= high && high.is_finite()) => {
                bad(format!("lambda range [{low}, {high}] must satisfy 0 < low <= high"))
            }
            _ => Ok(()),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, NoiseModel::GaussianFixed { .. } | NoiseModel::GaussianRange { .. })
    }

    /// Level for one image: the fixed parameter, or a uniform draw over the range.
    pub fn sample_level<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseModel::GaussianFixed { sigma } => sigma,
            NoiseModel::PoissonFixed { lambda } => lambda,
            NoiseModel::GaussianRange { low, high } | NoiseModel::PoissonRange { low, high } => {
                if low == high {
                    low
                } else {
                    rng.random_range(low..=high)
                }
            }
        }
    }

    /// Per-pixel noise at an already drawn level.
    pub fn at_level(&self, level: f64) -> PixelNoise {
        if self.is_gaussian() {
            PixelNoise::Gaussian { std: level / 255.0 }
        } else {
            PixelNoise::Poisson { lambda: level }
        }
    }
}

impl PixelNoise {
    /// Draws one noisy observation of the clean value `x`.
    pub fn perturb<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        match *self {
            PixelNoise::Gaussian { std } => {
                if std == 0.0 {
                    x
                } else {
                    let n: f64 = StandardNormal.sample(rng);
                    x + std * n
                }
            }
            PixelNoise::Poisson { lambda } => {
                let mean = lambda * x;
                if mean <= 0.0 {
                    0.0
                } else {
                    // Poisson::new only fails for non-positive or non-finite means.
                    let counts = Poisson::new(mean).expect("finite positive mean").sample(rng);
                    counts / lambda
                }
            }
        }
    }

    pub fn apply<R: Rng + ?Sized>(&self, x: &Image, rng: &mut R) -> Image {
        x.map(|v| self.perturb(f64::from(v), rng) as f32)
    }
}

/// Draws a level (ranged models) and corrupts every pixel of `x` independently.
pub fn apply_noise<R: Rng + ?Sized>(x: &Image, model: &NoiseModel, rng: &mut R) -> Result<Image> {
    apply_noise_with_level(x, model, rng).map(|(y, _)| y)
}

/// As [`apply_noise`], also returning the level that was drawn.
pub fn apply_noise_with_level<R: Rng + ?Sized>(
    x: &Image,
    model: &NoiseModel,
    rng: &mut R,
) -> Result<(Image, f64)> {
    model.validate()?;
    let level = model.sample_level(rng);
    Ok((model.at_level(level).apply(x, rng), level))
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            NoiseModel::GaussianFixed { sigma } => write!(f, "gauss{sigma}"),
            NoiseModel::GaussianRange { low, high } => write!(f, "gauss{low}_{high}"),
            NoiseModel::PoissonFixed { lambda } => write!(f, "poisson{lambda}"),
            NoiseModel::PoissonRange { low, high } => write!(f, "poisson{low}_{high}"),
        }
    }
}

/// Parses `gauss25`, `gauss5_50`, `poisson30`, `poisson5_50`.
impl FromStr for NoiseModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidNoise(format!("cannot parse noise spec {s:?}"));
        let (gaussian, rest) = if let Some(rest) = s.strip_prefix("gauss") {
            (true, rest)
        } else if let Some(rest) = s.strip_prefix("poisson") {
            (false, rest)
        } else {
            return Err(bad());
        };
        let num = |t: &str| t.parse::<f64>().map_err(|_| bad());
        let model = match rest.split_once('_') {
            None => {
                let level = num(rest)?;
                if gaussian {
                    NoiseModel::GaussianFixed { sigma: level }
                } else {
                    NoiseModel::PoissonFixed { lambda: level }
                }
            }
            Some((low, high)) => {
                let (low, high) = (num(low)?, num(high)?);
                if gaussian {
                    NoiseModel::GaussianRange { low, high }
                } else {
                    NoiseModel::PoissonRange { low, high }
                }
            }
        };
        model.validate()?;
        Ok(model)
    }
}

//! Score functions `s(x, sigma) ~ grad_x log p_sigma(x)` on real images: closed-form
//! oracles for Gaussian and Gaussian-mixture priors, and a small convolutional
//! denoiser trained by denoising score matching.

mod analytic;
mod net;
mod train;

pub use analytic::{GaussianScore, GmmComponent, GmmScore};
pub use net::{ConvScoreNet, Scalar};
pub use train::{dsm_loss, dsm_loss_at, train_dsm, DsmSample, TrainConfig, TrainReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RealImage;

/// Anything that can evaluate a noise-conditional score. Implementations must
/// be pure: the same `(x, sigma)` always gives the same output.
pub trait Score: Sync {
    fn score(&self, x: &RealImage, sigma: f64) -> Result<RealImage>;
}

impl<F> Score for F
where
    F: Fn(&RealImage, f64) -> RealImage + Sync,
{
    fn score(&self, x: &RealImage, sigma: f64) -> Result<RealImage> {
        Ok(self(x, sigma))
    }
}

macro_rules! inherent_score {
    ($($ty:ty),*) => {$(
        impl Score for $ty {
            fn score(&self, x: &RealImage, sigma: f64) -> Result<RealImage> {
                <$ty>::score(self, x, sigma)
            }
        }
    )*};
}

inherent_score!(GaussianScore, GmmScore, ConvScoreNet<f32>, ConvScoreNet<f64>);

#[derive(Clone, Debug)]
pub enum ScoreModel {
    Gaussian(GaussianScore),
    Gmm(GmmScore),
    Learned(ConvScoreNet<f32>),
}

impl ScoreModel {
    pub fn descriptor(&self) -> &'static str {
        match self {
            ScoreModel::Gaussian(_) => "analytic_gaussian",
            ScoreModel::Gmm(_) => "analytic_gmm",
            ScoreModel::Learned(_) => "learned",
        }
    }
}

impl Score for ScoreModel {
    fn score(&self, x: &RealImage, sigma: f64) -> Result<RealImage> {
        match self {
            ScoreModel::Gaussian(g) => g.score(x, sigma),
            ScoreModel::Gmm(g) => g.score(x, sigma),
            ScoreModel::Learned(n) => n.score(x, sigma),
        }
    }
}

pub(crate) fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param("sigma", format!("{sigma} is not a positive finite value")));
    }
    Ok(())
}

const MIN_SCORE_NORM: f64 = 1e-12;

/// Langevin corrector step `eps = 2 r |z| / |s|`; zero when the score vanishes.
pub fn corrector_step_size(z_norm: f64, score_norm: f64, r: f64) -> f64 {
    if score_norm < MIN_SCORE_NORM {
        return 0.0;
    }
    2.0 * r * z_norm / score_norm
}

/// Langevin corrector step `eps = 2 (r |z| / |s|)^2`, the signal-to-noise form
/// whose stationary error does not depend on the image scale.
pub fn corrector_step_size_squared(z_norm: f64, score_norm: f64, r: f64) -> f64 {
    if score_norm < MIN_SCORE_NORM {
        return 0.0;
    }
    let ratio = r * z_norm / score_norm;
    2.0 * ratio * ratio
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSizeRule {
    /// `2 r |z| / |s|`
    Ratio,
    /// `2 (r |z| / |s|)^2`
    #[default]
    SquaredRatio,
}

impl StepSizeRule {
    pub fn step_size(self, z_norm: f64, score_norm: f64, r: f64) -> f64 {
        match self {
            StepSizeRule::Ratio => corrector_step_size(z_norm, score_norm, r),
            StepSizeRule::SquaredRatio => corrector_step_size_squared(z_norm, score_norm, r),
        }
    }
}

impl std::str::FromStr for StepSizeRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ratio" => Ok(StepSizeRule::Ratio),
            "squared_ratio" => Ok(StepSizeRule::SquaredRatio),
            other => Err(Error::param("step_rule", format!("unknown rule `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_size_examples() {
        assert!((corrector_step_size(3.0, 3.0, 0.16) - 0.32).abs() < 1e-15);
        assert_eq!(corrector_step_size(3.0, 0.0, 0.16), 0.0);
        let a = corrector_step_size(2.0, 5.0, 0.1);
        let b = corrector_step_size(2.0, 5.0, 0.2);
        assert!((b - 2.0 * a).abs() < 1e-15);
        assert!((corrector_step_size_squared(3.0, 3.0, 0.16) - 2.0 * 0.0256).abs() < 1e-15);
        assert_eq!(corrector_step_size_squared(1.0, 1e-13, 0.16), 0.0);
    }

    #[test]
    fn closures_are_scores() {
        let zero = |x: &RealImage, _s: f64| RealImage::zeros(x.height(), x.width());
        let out = zero.score(&RealImage::filled(2, 3, 1.0), 0.5).unwrap();
        assert_eq!(out.shape(), (2, 3));
    }
}

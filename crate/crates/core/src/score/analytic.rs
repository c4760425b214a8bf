use crate::error::{Error, Result};
use crate::grid::RealImage;

use super::check_sigma;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn check_var(var: &RealImage) -> Result<()> {
    if var.data().iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::param("var", "variances must be positive and finite"));
    }
    Ok(())
}

/// Score of a diagonal Gaussian prior `N(mean, diag(var))` after convolution
/// with `N(0, sigma^2 I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianScore {
    mean: RealImage,
    var: RealImage,
}

impl GaussianScore {
    pub fn new(mean: RealImage, var: RealImage) -> Result<Self> {
        var.ensure_shape(mean.shape())?;
        check_var(&var)?;
        Ok(Self { mean, var })
    }

    pub fn isotropic(height: usize, width: usize, mean: f64, var: f64) -> Result<Self> {
        Self::new(
            RealImage::filled(height, width, mean),
            RealImage::filled(height, width, var),
        )
    }

    pub fn mean(&self) -> &RealImage {
        &self.mean
    }

    pub fn var(&self) -> &RealImage {
        &self.var
    }

    /// `-(x - mean) / (var + sigma^2)` pixelwise.
    pub fn score(&self, x: &RealImage, sigma: f64) -> Result<RealImage> {
        check_sigma(sigma)?;
        x.ensure_shape(self.mean.shape())?;
        let s2 = sigma * sigma;
        let data = x
            .data()
            .iter()
            .zip(self.mean.data())
            .zip(self.var.data())
            .map(|((x, m), v)| -(x - m) / (v + s2))
            .collect();
        RealImage::from_vec(x.height(), x.width(), data)
    }

    /// `log N(x; mean, diag(var + sigma^2))`.
    pub fn log_density(&self, x: &RealImage, sigma: f64) -> Result<f64> {
        check_sigma(sigma)?;
        x.ensure_shape(self.mean.shape())?;
        Ok(diag_log_density(x, &self.mean, &self.var, sigma * sigma))
    }
}

fn diag_log_density(x: &RealImage, mean: &RealImage, var: &RealImage, s2: f64) -> f64 {
    x.data()
        .iter()
        .zip(mean.data())
        .zip(var.data())
        .map(|((x, m), v)| {
            let t = v + s2;
            -0.5 * ((x - m) * (x - m) / t + t.ln() + LN_2PI)
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: RealImage,
    pub var: RealImage,
}

/// Score of a mixture of diagonal Gaussians over whole images, perturbed by
/// `N(0, sigma^2 I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmScore {
    components: Vec<GmmComponent>,
}

impl GmmScore {
    pub fn new(components: Vec<GmmComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::param("components", "empty mixture"))?;
        let shape = first.mean.shape();
        let mut total = 0.0;
        for c in &components {
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::param("weights", "weights must be positive"));
            }
            c.mean.ensure_shape(shape)?;
            c.var.ensure_shape(shape)?;
            check_var(&c.var)?;
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::param("weights", format!("weights sum to {total}, not 1")));
        }
        Ok(Self { components })
    }

    /// Mixture whose components are constant images.
    pub fn isotropic(
        height: usize,
        width: usize,
        weights: &[f64],
        means: &[f64],
        vars: &[f64],
    ) -> Result<Self> {
        if weights.len() != means.len() || weights.len() != vars.len() {
            return Err(Error::param("components", "weights, means and vars differ in length"));
        }
        Self::new(
            weights
                .iter()
                .zip(means)
                .zip(vars)
                .map(|((&weight, &m), &v)| GmmComponent {
                    weight,
                    mean: RealImage::filled(height, width, m),
                    var: RealImage::filled(height, width, v),
                })
                .collect(),
        )
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    fn log_joint(&self, x: &RealImage, s2: f64) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.weight.ln() + diag_log_density(x, &c.mean, &c.var, s2))
            .collect()
    }

    /// Posterior component probabilities given the noisy image.
    pub fn responsibilities(&self, x: &RealImage, sigma: f64) -> Result<Vec<f64>> {
        check_sigma(sigma)?;
        x.ensure_shape(self.components[0].mean.shape())?;
        let logs = self.log_joint(x, sigma * sigma);
        let lse = log_sum_exp(&logs);
        Ok(logs.iter().map(|l| (l - lse).exp()).collect())
    }

    pub fn score(&self, x: &RealImage, sigma: f64) -> Result<RealImage> {
        let resp = self.responsibilities(x, sigma)?;
        let s2 = sigma * sigma;
        let mut out = RealImage::zeros(x.height(), x.width());
        for (c, &w) in self.components.iter().zip(&resp) {
            for (((o, x), m), v) in out
                .data_mut()
                .iter_mut()
                .zip(x.data())
                .zip(c.mean.data())
                .zip(c.var.data())
            {
                *o -= w * (x - m) / (v + s2);
            }
        }
        Ok(out)
    }

    pub fn log_density(&self, x: &RealImage, sigma: f64) -> Result<f64> {
        check_sigma(sigma)?;
        x.ensure_shape(self.components[0].mean.shape())?;
        Ok(log_sum_exp(&self.log_joint(x, sigma * sigma)))
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

//! Forward SDE noise schedules and their discretization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gaussian_noise, RealImage, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdeKind {
    /// Variance exploding: zero drift, geometric noise scale.
    Ve,
    /// Variance preserving (continuous DDPM), linear beta.
    Vp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub kind: SdeKind,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Number of discretization intervals.
    pub steps: usize,
    /// Lower cutoff for training-time sampling of `t`.
    pub t_eps: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::ve(0.01, 378.0, 2000)
    }
}

fn check_t(t: f64, lower: f64) -> Result<()> {
    if !(lower..=1.0).contains(&t) {
        return Err(Error::param("t", format!("{t} outside [{lower}, 1]")));
    }
    Ok(())
}

impl NoiseSchedule {
    pub fn ve(sigma_min: f64, sigma_max: f64, steps: usize) -> Self {
        Self {
            kind: SdeKind::Ve,
            sigma_min,
            sigma_max,
            beta_min: 0.1,
            beta_max: 20.0,
            steps,
            t_eps: 1e-5,
        }
    }

    pub fn vp(beta_min: f64, beta_max: f64, steps: usize) -> Self {
        Self {
            kind: SdeKind::Vp,
            beta_min,
            beta_max,
            ..Self::ve(0.01, 378.0, steps)
        }
    }

    pub fn with_steps(&self, steps: usize) -> Self {
        Self {
            steps,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::param("steps", "must be at least 1"));
        }
        if !(self.t_eps > 0.0 && self.t_eps < 1.0) {
            return Err(Error::param("t_eps", "must lie in (0, 1)"));
        }
        match self.kind {
            SdeKind::Ve => {
                if !(self.sigma_min > 0.0 && self.sigma_max > self.sigma_min) {
                    return Err(Error::param(
                        "sigma",
                        "need 0 < sigma_min < sigma_max",
                    ));
                }
            }
            SdeKind::Vp => {
                if !(self.beta_min > 0.0 && self.beta_max > self.beta_min) {
                    return Err(Error::param("beta", "need 0 < beta_min < beta_max"));
                }
            }
        }
        Ok(())
    }

    fn require_ve(&self) -> Result<()> {
        if self.kind != SdeKind::Ve {
            return Err(Error::param("kind", "operation defined for the VE SDE only"));
        }
        Ok(())
    }

    /// `sigma_min * (sigma_max / sigma_min)^t`
    pub fn sigma(&self, t: f64) -> Result<f64> {
        self.require_ve()?;
        check_t(t, 0.0)?;
        Ok(self.sigma_unchecked(t))
    }

    pub(crate) fn sigma_unchecked(&self, t: f64) -> f64 {
        self.sigma_min * (self.sigma_max / self.sigma_min).powf(t)
    }

    /// `sigma_i = sigma(i / N)` for `i = 0..=N`.
    pub fn discretize(&self) -> Result<Vec<f64>> {
        self.require_ve()?;
        self.validate()?;
        let n = self.steps;
        Ok((0..=n)
            .map(|i| self.sigma_unchecked(i as f64 / n as f64))
            .collect())
    }

    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + t * (self.beta_max - self.beta_min)
    }

    /// `int_0^t beta(s) ds`
    pub fn beta_integral(&self, t: f64) -> f64 {
        self.beta_min * t + 0.5 * t * t * (self.beta_max - self.beta_min)
    }

    /// Draws `x_t ~ p_0t(. | x0)` and returns it with the standard normal
    /// `z` that produced it.
    pub fn perturb(&self, x0: &RealImage, t: f64, rng: &mut Rng) -> Result<(RealImage, RealImage)> {
        check_t(t, self.t_eps)?;
        let z = gaussian_noise(rng, x0.height(), x0.width());
        let xt = self.perturb_with(x0, t, &z)?;
        Ok((xt, z))
    }

    /// Deterministic part of [`perturb`](Self::perturb) for a given `z`.
    pub fn perturb_with(&self, x0: &RealImage, t: f64, z: &RealImage) -> Result<RealImage> {
        check_t(t, self.t_eps)?;
        z.ensure_shape(x0.shape())?;
        let (mean_coef, std) = match self.kind {
            SdeKind::Ve => (1.0, self.sigma_unchecked(t)),
            SdeKind::Vp => {
                let b = self.beta_integral(t);
                ((-0.5 * b).exp(), (-(-b).exp_m1()).sqrt())
            }
        };
        let mut xt = x0.clone();
        xt.scale(mean_coef);
        xt.axpy(std, z);
        Ok(xt)
    }

    /// Drift `f(x, t)` and diffusion `g(t)` of the forward SDE.
    pub fn drift_diffusion(&self, x: &RealImage, t: f64) -> Result<(RealImage, f64)> {
        check_t(t, self.t_eps)?;
        Ok(match self.kind {
            SdeKind::Ve => {
                let g = self.sigma_unchecked(t)
                    * (2.0 * (self.sigma_max / self.sigma_min).ln()).sqrt();
                (RealImage::zeros(x.height(), x.width()), g)
            }
            SdeKind::Vp => {
                let beta = self.beta(t);
                (x.map(|v| -0.5 * beta * v), beta.sqrt())
            }
        })
    }
}

/// Gradient of `log N(x_t; x0, sigma^2 I)` with respect to `x_t`.
pub fn kernel_score(xt: &RealImage, x0: &RealImage, sigma: f64) -> Result<RealImage> {
    if !(sigma > 0.0) {
        return Err(Error::param("sigma", "must be positive"));
    }
    x0.ensure_shape(xt.shape())?;
    let inv = -1.0 / (sigma * sigma);
    let mut out = xt.sub(x0);
    out.scale(inv);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn sigma_endpoints_and_midpoint() {
        let s = NoiseSchedule::default();
        assert!(rel(s.sigma(0.0).unwrap(), 0.01) < 1e-15);
        assert!(rel(s.sigma(1.0).unwrap(), 378.0) < 1e-14);
        // sqrt(0.01 * 378)
        assert!((s.sigma(0.5).unwrap() - 1.944_222_209_522_358).abs() < 1e-12);
        assert!(s.sigma(1.5).is_err());
        assert!(s.sigma(-0.1).is_err());
    }

    #[test]
    fn sigma_is_ve_only() {
        assert!(NoiseSchedule::vp(0.1, 20.0, 10).sigma(0.5).is_err());
    }

    #[test]
    fn discretization() {
        let one = NoiseSchedule::ve(0.01, 378.0, 1).discretize().unwrap();
        assert_eq!(one.len(), 2);
        assert!(rel(one[0], 0.01) < 1e-15 && rel(one[1], 378.0) < 1e-14);

        let full = NoiseSchedule::default().discretize().unwrap();
        assert_eq!(full.len(), 2001);
        let ratio = full[1] / full[0];
        for w in full.windows(2) {
            assert!(w[1] > w[0]);
            assert!(w[1] * w[1] - w[0] * w[0] > 0.0);
            assert!((w[1] / w[0] - ratio).abs() < 1e-10);
        }
    }

    #[test]
    fn perturb_zero_noise_is_identity_and_cutoff_enforced() {
        let s = NoiseSchedule::default();
        let x0 = RealImage::from_fn(4, 4, |r, c| (r + c) as f64);
        let z = RealImage::zeros(4, 4);
        assert_eq!(s.perturb_with(&x0, 0.3, &z).unwrap(), x0);
        let mut rng = Rng::new(0, 0);
        assert!(s.perturb(&x0, 1e-6, &mut rng).is_err());
    }

    #[test]
    fn ve_perturbation_variance() {
        let s = NoiseSchedule::default();
        let t = 0.4;
        let sigma = s.sigma(t).unwrap();
        let x0 = RealImage::filled(100, 100, 0.3);
        let mut rng = Rng::new(17, 0);
        let mut acc = 0.0;
        let mut n = 0usize;
        for _ in 0..10 {
            let (xt, _) = s.perturb(&x0, t, &mut rng).unwrap();
            acc += xt.sub(&x0).norm_sqr();
            n += xt.len();
        }
        let var = acc / n as f64;
        assert!(rel(var, sigma * sigma) < 0.02, "{var} vs {}", sigma * sigma);
    }

    #[test]
    fn vp_preserves_unit_variance() {
        let s = NoiseSchedule::vp(0.1, 20.0, 1000);
        let mut rng = Rng::new(5, 0);
        let x0 = gaussian_noise(&mut rng, 100, 1000);
        let (xt, _) = s.perturb(&x0, 0.9, &mut rng).unwrap();
        let m = xt.mean();
        let var = xt.norm_sqr() / xt.len() as f64 - m * m;
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn ve_composes_across_times() {
        let s = NoiseSchedule::default();
        let (t1, t2) = (0.2, 0.35);
        let (s1, s2) = (s.sigma(t1).unwrap(), s.sigma(t2).unwrap());
        let x0 = RealImage::zeros(100, 1000);
        let mut rng = Rng::new(8, 0);
        let (x1, _) = s.perturb(&x0, t1, &mut rng).unwrap();
        let mut x2 = x1.clone();
        x2.axpy((s2 * s2 - s1 * s1).sqrt(), &gaussian_noise(&mut rng, 100, 1000));
        let var = x2.norm_sqr() / x2.len() as f64;
        assert!(rel(var, s2 * s2) < 0.02, "{var} vs {}", s2 * s2);
    }

    #[test]
    fn kernel_score_cases() {
        let x0 = RealImage::from_fn(4, 4, |r, c| (r * c) as f64);
        assert_eq!(kernel_score(&x0, &x0, 0.7).unwrap(), RealImage::zeros(4, 4));
        let mut xt = x0.clone();
        xt.set(1, 2, xt.get(1, 2) + 1.0);
        let s = kernel_score(&xt, &x0, 1.0).unwrap();
        let mut expect = RealImage::zeros(4, 4);
        expect.set(1, 2, -1.0);
        assert_eq!(s, expect);
        assert!(kernel_score(&xt, &x0, 0.0).is_err());
    }

    #[test]
    fn kernel_score_matches_finite_differences() {
        let mut rng = Rng::new(4, 4);
        let x0 = gaussian_noise(&mut rng, 4, 4);
        let xt = gaussian_noise(&mut rng, 4, 4);
        let sigma = 0.8;
        let logp = |x: &RealImage| -0.5 * x.sub(&x0).norm_sqr() / (sigma * sigma);
        let s = kernel_score(&xt, &x0, sigma).unwrap();
        let h = 1e-5;
        for i in 0..xt.len() {
            let mut p = xt.clone();
            let mut m = xt.clone();
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let fd = (logp(&p) - logp(&m)) / (2.0 * h);
            assert!((fd - s.data()[i]).abs() <= 1e-4 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn drift_diffusion_cases() {
        let ve = NoiseSchedule::default();
        let x = RealImage::filled(3, 3, 2.0);
        let (f, _) = ve.drift_diffusion(&x, 0.5).unwrap();
        assert_eq!(f, RealImage::zeros(3, 3));

        // g^2 = d sigma^2 / dt
        for &t in &[0.05, 0.3, 0.7, 0.95] {
            let (_, g) = ve.drift_diffusion(&x, t).unwrap();
            let h = 1e-6;
            let sp = ve.sigma(t + h).unwrap();
            let sm = ve.sigma(t - h).unwrap();
            let fd = (sp * sp - sm * sm) / (2.0 * h);
            assert!(rel(g * g, fd) < 1e-4, "t={t}");
        }

        let vp = NoiseSchedule::vp(0.1, 20.0, 100);
        let (f, g) = vp.drift_diffusion(&x, 0.25).unwrap();
        let beta = 0.1 + 0.25 * 19.9;
        assert_eq!(f, x.map(|v| -0.5 * beta * v));
        assert!((g - beta.sqrt()).abs() < 1e-15);
    }
}

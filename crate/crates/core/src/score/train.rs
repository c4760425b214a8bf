use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gaussian_noise, RealImage, Rng};
use crate::schedule::NoiseSchedule;

use super::{ConvScoreNet, Score};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate_peak: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub grad_clip: f64,
    pub ema_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub t_eps: f64,
    /// Hidden channel count of the network.
    pub width: usize,
    /// Train on random `crop x crop` patches instead of whole images.
    pub crop: Option<usize>,
    /// Data scale used by the network's preconditioning; the dataset RMS
    /// when unset.
    pub sigma_data: Option<f64>,
    /// Seed of the parameter initialization.
    pub init_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate_peak: 2e-4,
            warmup_steps: 5000,
            beta1: 0.9,
            beta2: 0.999,
            grad_clip: 1.0,
            ema_rate: 0.999,
            batch_size: 1,
            epochs: 1,
            t_eps: 1e-5,
            width: 32,
            crop: None,
            sigma_data: None,
            init_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.learning_rate_peak > 0.0 && self.learning_rate_peak.is_finite()) {
            return Err(Error::param("learning_rate_peak", "must be positive"));
        }
        if !open_unit(self.beta1) || !open_unit(self.beta2) {
            return Err(Error::param("beta1", "Adam betas must lie in (0, 1)"));
        }
        if !open_unit(self.ema_rate) {
            return Err(Error::param("ema_rate", "must lie in (0, 1)"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::param("grad_clip", "must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.width == 0 {
            return Err(Error::param("batch_size", "batch size, epochs and width must be positive"));
        }
        if !(self.t_eps > 0.0 && self.t_eps < 1.0) {
            return Err(Error::param("t_eps", "must lie in (0, 1)"));
        }
        if self.crop == Some(0) {
            return Err(Error::param("crop", "must be positive"));
        }
        if let Some(s) = self.sigma_data {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::param("sigma_data", "must be positive"));
            }
        }
        Ok(())
    }

    /// Learning rate at 1-based optimizer step `step`: linear warmup, then flat.
    pub fn learning_rate(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            return self.learning_rate_peak;
        }
        self.learning_rate_peak * (step as f64 / self.warmup_steps as f64).min(1.0)
    }
}

/// One draw of the denoising objective.
#[derive(Clone, Debug)]
pub struct DsmSample {
    pub loss: f64,
    pub t: f64,
    pub sigma: f64,
    pub z: RealImage,
    pub xt: RealImage,
}

/// `|sigma s(x0 + sigma z, sigma) + z|^2` for a given noise draw.
pub fn dsm_loss_at(model: &dyn Score, x0: &RealImage, sigma: f64, z: &RealImage) -> Result<f64> {
    z.ensure_shape(x0.shape())?;
    let mut xt = x0.clone();
    xt.axpy(sigma, z);
    let mut r = model.score(&xt, sigma)?;
    r.scale(sigma);
    r.axpy(1.0, z);
    Ok(r.norm_sqr())
}

/// Denoising score-matching loss with `t ~ U[t_eps, 1]` and `z ~ N(0, I)`.
pub fn dsm_loss(
    model: &dyn Score,
    x0: &RealImage,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<DsmSample> {
    let t = sched.t_eps + (1.0 - sched.t_eps) * rng.uniform();
    let sigma = sched.sigma(t)?;
    let z = gaussian_noise(rng, x0.height(), x0.width());
    let loss = dsm_loss_at(model, x0, sigma, &z)?;
    let mut xt = x0.clone();
    xt.axpy(sigma, &z);
    Ok(DsmSample {
        loss,
        t,
        sigma,
        z,
        xt,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    /// Mean per-pixel loss over consecutive windows of `LOSS_WINDOW` steps.
    pub window_losses: Vec<f64>,
    pub sigma_data: f64,
}

pub const LOSS_WINDOW: usize = 100;

fn crop(img: &RealImage, size: usize, rng: &mut Rng) -> RealImage {
    let r0 = rng.below(img.height() - size + 1);
    let c0 = rng.below(img.width() - size + 1);
    RealImage::from_fn(size, size, |r, c| img.get(r0 + r, c0 + c))
}

/// Trains a [`ConvScoreNet`] with Adam, linear learning-rate warmup, global
/// gradient-norm clipping and an exponential moving average of the weights,
/// which is what is returned.
pub fn train_dsm(
    dataset: &[RealImage],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(ConvScoreNet<f32>, TrainReport)> {
    cfg.validate()?;
    sched.validate()?;
    // the network is conditioned on a VE noise level
    sched.sigma(1.0)?;
    let first = dataset
        .first()
        .ok_or_else(|| Error::param("dataset", "empty dataset"))?;
    for img in dataset {
        img.ensure_shape(first.shape())?;
    }
    if let Some(c) = cfg.crop {
        if c > first.height() || c > first.width() {
            return Err(Error::param("crop", "larger than the images"));
        }
    }
    let sigma_data = match cfg.sigma_data {
        Some(s) => s,
        None => {
            let n: usize = dataset.iter().map(|d| d.len()).sum();
            let ss: f64 = dataset.iter().map(|d| d.norm_sqr()).sum();
            (ss / n as f64).sqrt().max(1e-3)
        }
    };

    let mut net = ConvScoreNet::<f32>::new(
        cfg.width,
        sigma_data,
        sched.sigma_min,
        sched.sigma_max,
        &mut Rng::new(cfg.init_seed, 0),
    )?;
    let n_params = net.params().len();
    let mut ema: Vec<f32> = net.params().to_vec();
    let mut m = vec![0f32; n_params];
    let mut v = vec![0f32; n_params];
    let (b1, b2) = (cfg.beta1, cfg.beta2);

    let steps_per_epoch = dataset.len().div_ceil(cfg.batch_size);
    let mut report = TrainReport {
        sigma_data,
        ..TrainReport::default()
    };
    let mut window = 0.0;
    let mut window_count = 0;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut step = 0;
    for _ in 0..cfg.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.below(i + 1));
        }
        for batch in order.chunks(cfg.batch_size).take(steps_per_epoch) {
            step += 1;
            let mut grad = vec![0f32; n_params];
            let mut loss = 0.0;
            let mut pixels = 0;
            let mut last_sigma = 0.0;
            for &idx in batch {
                let x0 = match cfg.crop {
                    Some(c) => crop(&dataset[idx], c, rng),
                    None => dataset[idx].clone(),
                };
                let t = cfg.t_eps + (1.0 - cfg.t_eps) * rng.uniform();
                let sigma = sched.sigma_unchecked(t);
                let z = gaussian_noise(rng, x0.height(), x0.width());
                let (l, g) = net.dsm_loss_grad(&x0, sigma, &z)?;
                loss += l;
                pixels += x0.len();
                last_sigma = sigma;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += *b;
                }
            }
            let scale = 1.0 / batch.len() as f32;
            let mut norm_sq = 0.0f64;
            for g in &mut grad {
                *g *= scale;
                norm_sq += (*g as f64) * (*g as f64);
            }
            if !loss.is_finite() || !norm_sq.is_finite() {
                return Err(Error::Divergence {
                    step,
                    sigma: last_sigma,
                });
            }
            let norm = norm_sq.sqrt();
            let clip = if norm > cfg.grad_clip {
                (cfg.grad_clip / norm) as f32
            } else {
                1.0
            };

            let lr = cfg.learning_rate(step);
            let bc1 = 1.0 - b1.powi(step as i32);
            let bc2 = 1.0 - b2.powi(step as i32);
            let step_size = (lr / bc1) as f32;
            let bc2_sqrt = bc2.sqrt() as f32;
            let (b1f, b2f) = (b1 as f32, b2 as f32);
            let ema_rate = cfg.ema_rate as f32;
            let params = net.params_mut();
            for i in 0..n_params {
                let g = grad[i] * clip;
                m[i] = b1f * m[i] + (1.0 - b1f) * g;
                v[i] = b2f * v[i] + (1.0 - b2f) * g * g;
                params[i] -= step_size * m[i] / (v[i].sqrt() / bc2_sqrt + 1e-8);
                ema[i] = ema_rate * ema[i] + (1.0 - ema_rate) * params[i];
            }

            window += loss / pixels as f64;
            window_count += 1;
            if window_count == LOSS_WINDOW {
                report.window_losses.push(window / LOSS_WINDOW as f64);
                window = 0.0;
                window_count = 0;
            }
        }
    }
    report.steps = step;
    net.params_mut().copy_from_slice(&ema);
    Ok((net, report))
}

//! Reverse-time predictor-corrector sampling: unconditional, and conditioned
//! on undersampled k-space by interleaving data-consistency projections.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gaussian_noise, ComplexImage, RealImage, Rng};
use crate::measurement::{
    adjoint, data_consistency, dc_single_coil, kspace_residual, MultiCoilKspace, SensitivityMaps,
};
use crate::metrics::pixelwise_stats;
use crate::schedule::NoiseSchedule;
use crate::score::{Score, StepSizeRule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Number of predictor steps `N`.
    pub steps: usize,
    /// Corrector steps `M` after every predictor step.
    pub corrector_steps: usize,
    /// Corrector signal-to-noise constant `r`.
    pub snr: f64,
    pub step_rule: StepSizeRule,
    /// Hybrid aggregation weight at the first reverse step.
    pub lambda_start: f64,
    /// Hybrid aggregation weight at the last reverse step.
    pub lambda_end: f64,
    /// Hybrid aggregation interval `m`, in reverse steps.
    pub aggregate_every: usize,
    /// Fraction of the reverse steps run by the accelerated sampler.
    pub n_prime_fraction: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            corrector_steps: 1,
            snr: 0.16,
            step_rule: StepSizeRule::default(),
            lambda_start: 1.0,
            lambda_end: 0.2,
            aggregate_every: 5,
            n_prime_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::param("steps", "need at least one step"));
        }
        if !(self.snr >= 0.0 && self.snr.is_finite()) {
            return Err(Error::param("snr", "must be non-negative"));
        }
        for (name, v) in [("lambda_start", self.lambda_start), ("lambda_end", self.lambda_end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(name, format!("{v} outside [0, 1]")));
            }
        }
        if self.aggregate_every == 0 {
            return Err(Error::param("aggregate_every", "must be at least 1"));
        }
        if !(self.n_prime_fraction > 0.0 && self.n_prime_fraction <= 1.0) {
            return Err(Error::param("n_prime_fraction", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Hybrid aggregation weight at reverse step `i`: `lambda_start` at
    /// `i = N - 1`, falling linearly to `lambda_end` at `i = 0`.
    pub fn lambda_at(&self, i: usize) -> f64 {
        if self.steps <= 1 {
            return self.lambda_start;
        }
        let frac = i as f64 / (self.steps - 1) as f64;
        self.lambda_end + (self.lambda_start - self.lambda_end) * frac
    }

    /// Steps `N'` run by the accelerated sampler.
    pub fn n_prime(&self) -> usize {
        ((self.n_prime_fraction * self.steps as f64).round() as usize).clamp(1, self.steps)
    }
}

/// How a chain treats the complex image: real-valued throughout, or real
/// and imaginary parts as two independent real chains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainForm {
    Real,
    Complex,
}

impl ChainForm {
    fn parts(self) -> usize {
        match self {
            ChainForm::Real => 1,
            ChainForm::Complex => 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReconResult {
    /// The reconstruction; the root-sum-of-squares magnitude for coil-by-coil
    /// algorithms.
    pub image: ComplexImage,
    /// Per-coil reconstructions of coil-by-coil algorithms, empty otherwise.
    pub coil_images: Vec<ComplexImage>,
    /// `|A x - y| / |y|` of the returned estimate (per coil for
    /// coil-by-coil algorithms).
    pub kspace_residual: f64,
    /// The same residual just before the final data-consistency projection.
    pub residual_before_final_dc: f64,
    pub chain_seed: u64,
    pub chain_stream: u64,
    pub steps_used: usize,
    pub score_evals: usize,
}

impl ReconResult {
    pub fn magnitude(&self) -> RealImage {
        self.image.magnitude()
    }
}

#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub samples: Vec<ReconResult>,
    pub mean_image: RealImage,
    /// Pixelwise population standard deviation of the sample magnitudes.
    pub std_image: RealImage,
}

fn check_sigma_pair(sigma_i: f64, sigma_ip1: f64) -> Result<()> {
    if !(sigma_i > 0.0 && sigma_ip1 > sigma_i && sigma_ip1.is_finite()) {
        return Err(Error::param(
            "sigma",
            format!("need 0 < sigma_i < sigma_i+1, got {sigma_i} and {sigma_ip1}"),
        ));
    }
    Ok(())
}

/// Reverse-diffusion predictor with an explicit noise draw `z`.
pub fn predictor_ve_with(
    x: &RealImage,
    sigma_i: f64,
    sigma_ip1: f64,
    model: &dyn Score,
    z: &RealImage,
) -> Result<RealImage> {
    check_sigma_pair(sigma_i, sigma_ip1)?;
    z.ensure_shape(x.shape())?;
    let dv = sigma_ip1 * sigma_ip1 - sigma_i * sigma_i;
    let s = model.score(x, sigma_ip1)?;
    s.ensure_shape(x.shape())?;
    let mut out = x.clone();
    out.axpy(dv, &s);
    out.axpy(dv.sqrt(), z);
    Ok(out)
}

/// `x + (sigma_{i+1}^2 - sigma_i^2) s(x, sigma_{i+1}) + sqrt(sigma_{i+1}^2 - sigma_i^2) z`.
pub fn predictor_ve(
    x: &RealImage,
    sigma_i: f64,
    sigma_ip1: f64,
    model: &dyn Score,
    rng: &mut Rng,
) -> Result<RealImage> {
    let z = gaussian_noise(rng, x.height(), x.width());
    predictor_ve_with(x, sigma_i, sigma_ip1, model, &z)
}

/// Langevin corrector with an explicit noise draw `z`, which also sets the
/// step size.
pub fn corrector_langevin_with(
    x: &RealImage,
    sigma: f64,
    model: &dyn Score,
    snr: f64,
    rule: StepSizeRule,
    z: &RealImage,
) -> Result<RealImage> {
    z.ensure_shape(x.shape())?;
    let s = model.score(x, sigma)?;
    s.ensure_shape(x.shape())?;
    let eps = rule.step_size(z.norm(), s.norm(), snr);
    let mut out = x.clone();
    out.axpy(eps, &s);
    out.axpy((2.0 * eps).sqrt(), z);
    Ok(out)
}

/// `x + eps s(x, sigma) + sqrt(2 eps) z` with `eps` from the step-size rule.
pub fn corrector_langevin(
    x: &RealImage,
    sigma: f64,
    model: &dyn Score,
    snr: f64,
    rule: StepSizeRule,
    rng: &mut Rng,
) -> Result<RealImage> {
    let z = gaussian_noise(rng, x.height(), x.width());
    corrector_langevin_with(x, sigma, model, snr, rule, &z)
}

type Projection<'a> = dyn Fn(ComplexImage) -> Result<ComplexImage> + Sync + 'a;

struct Chain<'a> {
    model: &'a dyn Score,
    sigmas: Vec<f64>,
    cfg: &'a SamplerConfig,
    form: ChainForm,
}

impl<'a> Chain<'a> {
    fn new(
        model: &'a dyn Score,
        sched: &NoiseSchedule,
        cfg: &'a SamplerConfig,
        form: ChainForm,
    ) -> Result<Self> {
        cfg.validate()?;
        let sigmas = sched.with_steps(cfg.steps).discretize()?;
        Ok(Self {
            model,
            sigmas,
            cfg,
            form,
        })
    }

    fn evals_per_step(&self) -> usize {
        (1 + self.cfg.corrector_steps) * self.form.parts()
    }

    /// Applies `f` to the real part, and to the imaginary part for complex
    /// chains, then recombines.
    fn per_part(
        &self,
        x: &ComplexImage,
        rng: &mut Rng,
        mut f: impl FnMut(&RealImage, &mut Rng) -> Result<RealImage>,
    ) -> Result<ComplexImage> {
        let re = f(&x.re(), rng)?;
        let im = match self.form {
            ChainForm::Real => None,
            ChainForm::Complex => Some(f(&x.im(), rng)?),
        };
        Ok(ComplexImage::from_parts(&re, im.as_ref()))
    }

    /// `x_init + sigma_start z`.
    fn init(&self, start: usize, x_init: &ComplexImage, rng: &mut Rng) -> ComplexImage {
        let sigma = self.sigmas[start];
        let (h, w) = x_init.shape();
        self.per_part(x_init, rng, |part, rng| {
            let mut out = part.clone();
            out.axpy(sigma, &gaussian_noise(rng, h, w));
            Ok(out)
        })
        .expect("noise injection cannot fail")
    }

    /// Reverse step from `x_{i+1}` to `x_i`: predictor, projection, then
    /// `M` rounds of corrector and projection.
    fn step(&self, i: usize, x: ComplexImage, rng: &mut Rng, project: &Projection) -> Result<ComplexImage> {
        let (lo, hi) = (self.sigmas[i], self.sigmas[i + 1]);
        let mut x = self.per_part(&x, rng, |p, rng| predictor_ve(p, lo, hi, self.model, rng))?;
        x = project(x)?;
        for _ in 0..self.cfg.corrector_steps {
            x = self.per_part(&x, rng, |p, rng| {
                corrector_langevin(p, lo, self.model, self.cfg.snr, self.cfg.step_rule, rng)
            })?;
            x = project(x)?;
        }
        if !x.is_finite() {
            return Err(Error::Divergence { step: i, sigma: lo });
        }
        Ok(x)
    }

    fn run(&self, start: usize, x_init: &ComplexImage, rng: &mut Rng, project: &Projection) -> Result<ComplexImage> {
        let mut x = self.init(start, x_init, rng);
        for i in (0..start).rev() {
            x = self.step(i, x, rng, project)?;
        }
        Ok(x)
    }
}

/// Unconditional predictor-corrector sampling from `N(0, sigma_max^2 I)`.
pub fn pc_sample(
    model: &dyn Score,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    shape: (usize, usize),
    rng: &mut Rng,
) -> Result<RealImage> {
    if shape.0 == 0 || shape.1 == 0 {
        return Err(Error::UnsupportedSize(shape.0.min(shape.1)));
    }
    let chain = Chain::new(model, sched, cfg, ChainForm::Real)?;
    let zero = ComplexImage::zeros(shape.0, shape.1);
    let x = chain.run(cfg.steps, &zero, rng, &Ok)?;
    Ok(x.re())
}

fn real_projection(x: ComplexImage) -> ComplexImage {
    ComplexImage::from_real(&x.re())
}

/// Data-consistency projection at `lambda = 1` used inside the chains.
fn projection<'a>(
    y: &'a MultiCoilKspace,
    maps: Option<&'a SensitivityMaps>,
    form: ChainForm,
) -> Box<Projection<'a>> {
    match (maps, form) {
        (None, ChainForm::Real) => Box::new(move |x: ComplexImage| {
            Ok(real_projection(dc_single_coil(&x, y.coil(0), y.mask(), 1.0)))
        }),
        (None, ChainForm::Complex) => {
            Box::new(move |x: ComplexImage| Ok(dc_single_coil(&x, y.coil(0), y.mask(), 1.0)))
        }
        (Some(m), ChainForm::Real) => Box::new(move |x: ComplexImage| {
            Ok(real_projection(data_consistency(&x, y, Some(m), 1.0)?))
        }),
        (Some(m), ChainForm::Complex) => Box::new(move |x: ComplexImage| data_consistency(&x, y, Some(m), 1.0)),
    }
}

const FINAL_PROJECTION_ITERS: usize = 200;
const FINAL_PROJECTION_TOL: f64 = 1e-10;
/// Final data-consistency projection. Real-valued chains alternate the
/// projection with taking the real part until the residual settles, which
/// matters for masks that are not conjugate-symmetric; the lowest-residual
/// iterate is kept. Returns `(image, residual before, residual after)`.
fn final_projection(
    x: ComplexImage,
    y: &MultiCoilKspace,
    maps: Option<&SensitivityMaps>,
    form: ChainForm,
) -> Result<(ComplexImage, f64, f64)> {
    let before = kspace_residual(&x, y, maps)?;
    let project = projection(y, maps, form);
    let mut best = (project(x.clone())?, 0.0);
    best.1 = kspace_residual(&best.0, y, maps)?;
    if form == ChainForm::Real {
        let mut current = best.0.clone();
        for _ in 0..FINAL_PROJECTION_ITERS {
            if best.1 <= FINAL_PROJECTION_TOL {
                break;
            }
            current = project(current)?;
            let r = kspace_residual(&current, y, maps)?;
            if r >= best.1 {
                break;
            }
            best = (current.clone(), r);
        }
    }
    if best.1 > before {
        return Ok((x, before, before));
    }
    Ok((best.0, before, best.1))
}

fn check_single(y: &MultiCoilKspace, maps: Option<&SensitivityMaps>) -> Result<()> {
    match maps {
        None if y.coils() != 1 => Err(Error::Config(format!(
            "{}-coil data needs sensitivity maps",
            y.coils()
        ))),
        Some(m) if m.coils() != y.coils() => Err(Error::ShapeMismatch {
            expected: format!("{} coils", m.coils()),
            got: format!("{} coils", y.coils()),
        }),
        Some(m) if m.shape() != y.shape() => Err(Error::shape(y.shape(), m.shape())),
        _ => Ok(()),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_single_image(
    y: &MultiCoilKspace,
    maps: Option<&SensitivityMaps>,
    x_init: &ComplexImage,
    start: usize,
    form: ChainForm,
    model: &dyn Score,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &Rng,
) -> Result<ReconResult> {
    check_single(y, maps)?;
    x_init.ensure_shape(y.shape())?;
    let chain = Chain::new(model, sched, cfg, form)?;
    let mut chain_rng = rng.fork(0);
    let project = projection(y, maps, form);
    let x_init = match form {
        ChainForm::Real => real_projection(x_init.clone()),
        ChainForm::Complex => x_init.clone(),
    };
    let x = chain.run(start, &x_init, &mut chain_rng, &*project)?;
    let (image, before, after) = final_projection(x, y, maps, form)?;
    Ok(ReconResult {
        image,
        coil_images: Vec::new(),
        kspace_residual: after,
        residual_before_final_dc: before,
        chain_seed: rng.seed(),
        chain_stream: rng.stream(),
        steps_used: start,
        score_evals: start * chain.evals_per_step(),
    })
}

/// Real-valued reconstruction from single-coil data: every predictor and
/// corrector step is followed by `Re(x + A*(y - A x))`.
pub fn recon_real(
    y: &MultiCoilKspace,
    model: &dyn Score,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut Rng,
) -> Result<ReconResult> {
    let (h, w) = y.shape();
    let zero = ComplexImage::zeros(h, w);
    run_single_image(y, None, &zero, cfg.steps, ChainForm::Real, model, sched, cfg, rng)
}

/// Complex reconstruction: real and imaginary parts go through the
/// predictor and corrector separately, the recombined image through data
/// consistency with `A = P F` or, given maps, `A = P F S`.
pub fn recon_complex(
    y: &MultiCoilKspace,
    maps: Option<&SensitivityMaps>,
    model: &dyn Score,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut Rng,
) -> Result<ReconResult> {
    let (h, w) = y.shape();
    let zero = ComplexImage::zeros(h, w);
    run_single_image(y, maps, &zero, cfg.steps, ChainForm::Complex, model, sched, cfg, rng)
}

/// Accelerated reconstruction: diffuse `x_init` (default: the zero-filled
/// adjoint `A* y`) to noise level `sigma_{N'}` in one step and run only the
/// last `N'` reverse steps.
#[allow(clippy::too_many_arguments)]
pub fn recon_ccdf(
    y: &MultiCoilKspace,
    maps: Option<&SensitivityMaps>,
    x_init: Option<&ComplexImage>,
    form: ChainForm,
    model: &dyn Score,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut Rng,
) -> Result<ReconResult> {
    check_single(y, maps)?;
    let init = match x_init {
        Some(x) => x.clone(),
        None => adjoint(y, maps)?,
    };
    run_single_image(y, maps, &init, cfg.n_prime(), form, model, sched, cfg, rng)
}

fn ssos(images: &[ComplexImage]) -> ComplexImage {
    let (h, w) = images[0].shape();
    let mut acc = RealImage::zeros(h, w);
    for img in images {
        for (a, z) in acc.data_mut().iter_mut().zip(img.data()) {
            *a += z.norm_sqr();
        }
    }
    ComplexImage::from_real(&acc.map(f64::sqrt))
}

fn coil_residual(coils: &[ComplexImage], y: &MultiCoilKspace) -> Result<f64> {
    let mut num = 0.0;
    for (k, x) in coils.iter().enumerate() {
        let r = kspace_residual(x, &y.single(k), None)?;
        num += (r * y.coil(k).norm()).powi(2);
    }
    let den = y.norm();
    Ok(if den > 0.0 { num.sqrt() / den } else { num.sqrt() })
}

/// Shared driver of the coil-by-coil algorithms; `aggregate` is called after
/// every reverse step with the step index and the coil stack.
fn run_coilwise(
    y: &MultiCoilKspace,
    model: &dyn Score,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &Rng,
    aggregate: &(dyn Fn(usize, &mut Vec<ComplexImage>) -> Result<()> + Sync),
) -> Result<ReconResult> {
    let chain = Chain::new(model, sched, cfg, ChainForm::Complex)?;
    let (h, w) = y.shape();
    let zero = ComplexImage::zeros(h, w);
    let coils = y.coils();
    let singles: Vec<MultiCoilKspace> = (0..coils).map(|k| y.single(k)).collect();
    let projections: Vec<Box<Projection>> = singles
        .iter()
        .map(|yk| projection(yk, None, ChainForm::Complex))
        .collect();
    let mut rngs: Vec<Rng> = (0..coils).map(|k| rng.fork(k as u64)).collect();
    let mut xs: Vec<ComplexImage> = rngs
        .iter_mut()
        .map(|r| chain.init(cfg.steps, &zero, r))
        .collect();
    for i in (0..cfg.steps).rev() {
        xs = std::mem::take(&mut xs)
            .into_par_iter()
            .zip(rngs.par_iter_mut())
            .zip(projections.par_iter())
            .map(|((x, r), p)| chain.step(i, x, r, &**p))
            .collect::<Result<Vec<_>>>()?;
        aggregate(i, &mut xs)?;
    }
    let before = coil_residual(&xs, y)?;
    let finals = xs
        .into_iter()
        .zip(&singles)
        .map(|(x, yk)| final_projection(x, yk, None, ChainForm::Complex).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    let after = coil_residual(&finals, y)?;
    Ok(ReconResult {
        image: ssos(&finals),
        kspace_residual: after,
        residual_before_final_dc: before,
        coil_images: finals,
        chain_seed: rng.seed(),
        chain_stream: rng.stream(),
        steps_used: cfg.steps,
        score_evals: cfg.steps * chain.evals_per_step() * coils,
    })
}

/// Coil-by-coil reconstruction: the complex algorithm runs independently on
/// every coil with `A = P F`, and the result is the root sum of squares.
pub fn recon_ssos(
    y: &MultiCoilKspace,
    model: &dyn Score,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut Rng,
) -> Result<ReconResult> {
    run_coilwise(y, model, sched, cfg, rng, &|_, _| Ok(()))
}

/// Coil-by-coil reconstruction coupled through the sensitivity maps: after
/// every `m`-th reverse step the coil images are combined into one image
/// `sum_k conj(S_k) x_k`, moved towards the multi-coil data by
/// `lambda_i A*(y - A x)` with `A = P F S`, and redistributed as `S_k x`.
pub fn recon_hybrid(
    y: &MultiCoilKspace,
    maps: &SensitivityMaps,
    model: &dyn Score,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut Rng,
) -> Result<ReconResult> {
    check_single(y, Some(maps))?;
    cfg.validate()?;
    let aggregate = |i: usize, xs: &mut Vec<ComplexImage>| -> Result<()> {
        if (cfg.steps - i) % cfg.aggregate_every != 0 {
            return Ok(());
        }
        let (h, w) = y.shape();
        let mut combined = ComplexImage::zeros(h, w);
        for (x, s) in xs.iter().zip(maps.maps()) {
            combined.axpy(1.0, &s.conj_mul(x));
        }
        let updated = data_consistency(&combined, y, Some(maps), cfg.lambda_at(i))?;
        for (x, s) in xs.iter_mut().zip(maps.maps()) {
            *x = s.mul(&updated);
        }
        Ok(())
    };
    run_coilwise(y, model, sched, cfg, rng, &aggregate)
}

/// `count` independent reconstructions, member `b` seeded with stream `b`
/// of `base_seed`, with pixelwise magnitude mean and standard deviation.
pub fn ensemble<F>(count: usize, base_seed: u64, op: F) -> Result<EnsembleResult>
where
    F: Fn(&mut Rng) -> Result<ReconResult> + Sync,
{
    if count < 2 {
        return Err(Error::param("count", "an ensemble needs at least two members"));
    }
    let samples = (0..count)
        .into_par_iter()
        .map(|b| op(&mut Rng::new(base_seed, b as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mags: Vec<RealImage> = samples.iter().map(|s| s.magnitude()).collect();
    let (mean_image, std_image) = pixelwise_stats(&mags)?;
    Ok(EnsembleResult {
        samples,
        mean_image,
        std_image,
    })
}

/// Zero-filled reconstruction `A* y` (root sum of squares over coils when no
/// maps are given).
pub fn zero_filled(y: &MultiCoilKspace, maps: Option<&SensitivityMaps>) -> Result<ComplexImage> {
    match maps {
        Some(_) => adjoint(y, maps),
        None if y.coils() == 1 => adjoint(y, None),
        None => {
            let coils = (0..y.coils())
                .map(|k| adjoint(&y.single(k), None))
                .collect::<Result<Vec<_>>>()?;
            Ok(ssos(&coils))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{
        forward, make_mask, shepp_logan, simulate_sensitivities, MaskKind, PhaseKind, SamplingMask,
    };
    use crate::score::GaussianScore;

    fn small_cfg(steps: usize) -> SamplerConfig {
        SamplerConfig {
            steps,
            ..SamplerConfig::default()
        }
    }

    fn prior(h: usize, w: usize) -> GaussianScore {
        GaussianScore::isotropic(h, w, 0.3, 0.1).unwrap()
    }

    fn phantom32() -> ComplexImage {
        shepp_logan(32, 32, PhaseKind::None).unwrap()
    }

    fn zero_score(x: &RealImage, _s: f64) -> RealImage {
        RealImage::zeros(x.height(), x.width())
    }

    #[test]
    fn predictor_with_zero_score_and_noise_is_identity() {
        let x = RealImage::from_fn(3, 4, |r, c| (r * 4 + c) as f64);
        let z = RealImage::zeros(3, 4);
        let out = predictor_ve_with(&x, 0.1, 0.2, &zero_score, &z).unwrap();
        assert_eq!(out, x);
        assert!(predictor_ve_with(&x, 0.2, 0.1, &zero_score, &z).is_err());
    }

    #[test]
    fn corrector_with_zero_score_does_not_move() {
        let x = RealImage::from_fn(3, 4, |r, c| (r + c) as f64);
        let mut rng = Rng::new(0, 0);
        let out =
            corrector_langevin(&x, 0.5, &zero_score, 0.16, StepSizeRule::Ratio, &mut rng).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn corrector_is_deterministic() {
        let g = prior(4, 4);
        let x = RealImage::filled(4, 4, 1.0);
        let a = corrector_langevin(&x, 0.5, &g, 0.16, StepSizeRule::Ratio, &mut Rng::new(3, 1)).unwrap();
        let b = corrector_langevin(&x, 0.5, &g, 0.16, StepSizeRule::Ratio, &mut Rng::new(3, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_step_without_corrector_is_one_predictor_step() {
        let g = prior(4, 4);
        let sched = NoiseSchedule::default();
        let cfg = SamplerConfig {
            steps: 1,
            corrector_steps: 0,
            ..SamplerConfig::default()
        };
        let got = pc_sample(&g, &sched, &cfg, (4, 4), &mut Rng::new(5, 0)).unwrap();
        let mut rng = Rng::new(5, 0);
        let mut x = gaussian_noise(&mut rng, 4, 4);
        x.scale(sched.sigma_max);
        let expect = predictor_ve(&x, sched.sigma_min, sched.sigma_max, &g, &mut rng).unwrap();
        assert_eq!(got, expect);
    }

    #[test]
    fn divergence_names_the_step() {
        let nan = |x: &RealImage, _s: f64| RealImage::filled(x.height(), x.width(), f64::NAN);
        let err = pc_sample(&nan, &NoiseSchedule::default(), &small_cfg(10), (4, 4), &mut Rng::new(0, 0))
            .unwrap_err();
        match err {
            Error::Divergence { step, sigma } => {
                assert_eq!(step, 9);
                assert!(sigma > 0.0);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn lambda_schedule_endpoints() {
        let cfg = small_cfg(2000);
        assert!((cfg.lambda_at(1999) - 1.0).abs() < 1e-15);
        assert!((cfg.lambda_at(0) - 0.2).abs() < 1e-15);
        assert!((cfg.lambda_at(999) - (0.2 + 0.8 * 999.0 / 1999.0)).abs() < 1e-15);
    }

    #[test]
    fn full_mask_real_and_complex_recover_truth() {
        let sched = NoiseSchedule::default();
        let cfg = small_cfg(20);
        let truth = phantom32();
        let y = forward(&truth, &SamplingMask::full(32, 32), None).unwrap();
        let g = prior(32, 32);
        let real = recon_real(&y, &g, &sched, &cfg, &mut Rng::new(1, 0)).unwrap();
        assert!(real.image.sub(&truth).norm() <= 1e-5 * truth.norm());
        assert!(real.image.data().iter().all(|z| z.im == 0.0));
        let smooth = shepp_logan(32, 32, PhaseKind::Smooth).unwrap();
        let y = forward(&smooth, &SamplingMask::full(32, 32), None).unwrap();
        let cplx = recon_complex(&y, None, &g, &sched, &cfg, &mut Rng::new(1, 0)).unwrap();
        assert!(cplx.image.sub(&smooth).norm() <= 1e-5 * smooth.norm());
    }

    #[test]
    fn undersampled_results_are_data_consistent() {
        let sched = NoiseSchedule::default();
        let cfg = small_cfg(30);
        let mut rng = Rng::new(2, 0);
        let mask = make_mask(MaskKind::Gaussian1d, 32, 32, 4.0, 0.08, &mut rng).unwrap();
        let y = forward(&phantom32(), &mask, None).unwrap();
        let g = prior(32, 32);
        for r in [
            recon_real(&y, &g, &sched, &cfg, &mut rng).unwrap(),
            recon_complex(&y, None, &g, &sched, &cfg, &mut rng).unwrap(),
            recon_ccdf(&y, None, None, ChainForm::Real, &g, &sched, &cfg, &mut rng).unwrap(),
            recon_ssos(&y, &g, &sched, &cfg, &mut rng).unwrap(),
        ] {
            assert!(r.kspace_residual <= 1e-5, "{}", r.kspace_residual);
            assert!(r.kspace_residual <= r.residual_before_final_dc + 1e-15);
        }
    }

    #[test]
    fn ssos_with_one_coil_is_complex_magnitude() {
        let sched = NoiseSchedule::default();
        let cfg = small_cfg(15);
        let mut rng = Rng::new(3, 0);
        let mask = make_mask(MaskKind::Gaussian2d, 32, 32, 4.0, 0.04, &mut rng).unwrap();
        let y = forward(&phantom32(), &mask, None).unwrap();
        let g = prior(32, 32);
        let a = recon_ssos(&y, &g, &sched, &cfg, &mut Rng::new(9, 2)).unwrap();
        let b = recon_complex(&y, None, &g, &sched, &cfg, &mut Rng::new(9, 2)).unwrap();
        assert!(a.magnitude().sub(&b.magnitude()).norm() < 1e-12);
        assert_eq!(a.score_evals, b.score_evals);
    }

    #[test]
    fn hybrid_without_aggregation_is_ssos() {
        let sched = NoiseSchedule::default();
        let cfg = SamplerConfig {
            aggregate_every: 50,
            ..small_cfg(12)
        };
        let mut rng = Rng::new(4, 0);
        let mask = make_mask(MaskKind::Gaussian1d, 32, 32, 4.0, 0.08, &mut rng).unwrap();
        let maps = simulate_sensitivities(3, 32, 32, None, &mut rng).unwrap();
        let y = forward(&phantom32(), &mask, Some(&maps)).unwrap();
        let g = prior(32, 32);
        let a = recon_hybrid(&y, &maps, &g, &sched, &cfg, &mut Rng::new(1, 1)).unwrap();
        let b = recon_ssos(&y, &g, &sched, &cfg, &mut Rng::new(1, 1)).unwrap();
        assert_eq!(a.image, b.image);

        let coupled = SamplerConfig {
            aggregate_every: 3,
            ..cfg
        };
        let c = recon_hybrid(&y, &maps, &g, &sched, &coupled, &mut Rng::new(1, 1)).unwrap();
        assert_ne!(c.image, b.image);
        assert!(c.kspace_residual <= 1e-5);
    }

    #[test]
    fn full_mask_multicoil_gives_ssos_of_coil_images() {
        let sched = NoiseSchedule::default();
        let cfg = small_cfg(10);
        let mut rng = Rng::new(5, 0);
        let maps = simulate_sensitivities(4, 32, 32, None, &mut rng).unwrap();
        let truth = phantom32();
        let y = forward(&truth, &SamplingMask::full(32, 32), Some(&maps)).unwrap();
        let expect = ssos(&maps.maps().iter().map(|s| s.mul(&truth)).collect::<Vec<_>>());
        let g = prior(32, 32);
        let r = recon_ssos(&y, &g, &sched, &cfg, &mut rng).unwrap();
        assert!(r.image.sub(&expect).norm() <= 1e-5 * expect.norm());
        let h = recon_hybrid(&y, &maps, &g, &sched, &cfg, &mut rng).unwrap();
        assert!(h.image.sub(&expect).norm() <= 1e-5 * expect.norm());
    }

    #[test]
    fn ccdf_at_full_fraction_from_zero_is_the_full_run() {
        let sched = NoiseSchedule::default();
        let cfg = SamplerConfig {
            n_prime_fraction: 1.0,
            ..small_cfg(20)
        };
        let mut rng = Rng::new(6, 0);
        let mask = make_mask(MaskKind::PoissonVd, 32, 32, 3.0, 0.04, &mut rng).unwrap();
        let y = forward(&phantom32(), &mask, None).unwrap();
        let g = prior(32, 32);
        let zero = ComplexImage::zeros(32, 32);
        for form in [ChainForm::Real, ChainForm::Complex] {
            let a = recon_ccdf(&y, None, Some(&zero), form, &g, &sched, &cfg, &mut Rng::new(7, 0)).unwrap();
            let b = match form {
                ChainForm::Real => recon_real(&y, &g, &sched, &cfg, &mut Rng::new(7, 0)),
                ChainForm::Complex => recon_complex(&y, None, &g, &sched, &cfg, &mut Rng::new(7, 0)),
            }
            .unwrap();
            assert_eq!(a.image, b.image);
        }
        let short = SamplerConfig {
            n_prime_fraction: 0.1,
            ..cfg
        };
        let r = recon_ccdf(&y, None, None, ChainForm::Real, &g, &sched, &short, &mut rng).unwrap();
        assert_eq!(r.steps_used, 2);
        assert_eq!(r.score_evals, 4);
    }

    #[test]
    fn recon_is_seed_deterministic() {
        let sched = NoiseSchedule::default();
        let cfg = small_cfg(10);
        let mut rng = Rng::new(8, 0);
        let mask = make_mask(MaskKind::Uniform1d, 32, 32, 2.0, 0.08, &mut rng).unwrap();
        let y = forward(&phantom32(), &mask, None).unwrap();
        let g = prior(32, 32);
        let a = recon_real(&y, &g, &sched, &cfg, &mut Rng::new(1, 0)).unwrap();
        let b = recon_real(&y, &g, &sched, &cfg, &mut Rng::new(1, 0)).unwrap();
        let c = recon_real(&y, &g, &sched, &cfg, &mut Rng::new(2, 0)).unwrap();
        assert_eq!(a.image, b.image);
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn ensembles() {
        let sched = NoiseSchedule::default();
        let cfg = small_cfg(10);
        let mut rng = Rng::new(9, 0);
        let g = prior(32, 32);
        let full = forward(&phantom32(), &SamplingMask::full(32, 32), None).unwrap();
        let e = ensemble(3, 1, |r| recon_real(&full, &g, &sched, &cfg, r)).unwrap();
        assert!(e.std_image.mean() <= 1e-5);

        let mask = make_mask(MaskKind::Gaussian1d, 32, 32, 4.0, 0.08, &mut rng).unwrap();
        let y = forward(&phantom32(), &mask, None).unwrap();
        let same = ensemble(2, 1, |_| recon_real(&y, &g, &sched, &cfg, &mut Rng::new(4, 4))).unwrap();
        assert!(same.std_image.data().iter().all(|&v| v == 0.0));
        let varied = ensemble(2, 1, |r| recon_real(&y, &g, &sched, &cfg, r)).unwrap();
        assert!(varied.std_image.mean() > 0.0);
        assert!(ensemble(1, 1, |r| recon_real(&y, &g, &sched, &cfg, r)).is_err());
    }

    #[test]
    fn config_validation() {
        for cfg in [
            SamplerConfig { steps: 0, ..SamplerConfig::default() },
            SamplerConfig { lambda_end: 1.5, ..SamplerConfig::default() },
            SamplerConfig { aggregate_every: 0, ..SamplerConfig::default() },
            SamplerConfig { n_prime_fraction: 0.0, ..SamplerConfig::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
        assert_eq!(small_cfg(500).n_prime(), 50);
    }

    #[test]
    fn multicoil_without_maps_is_rejected() {
        let mut rng = Rng::new(10, 0);
        let maps = simulate_sensitivities(2, 32, 32, None, &mut rng).unwrap();
        let y = forward(&phantom32(), &SamplingMask::full(32, 32), Some(&maps)).unwrap();
        let g = prior(32, 32);
        assert!(recon_real(&y, &g, &NoiseSchedule::default(), &small_cfg(5), &mut rng).is_err());
    }

    #[test]
    fn zero_filled_single_coil_is_adjoint() {
        let y = forward(&phantom32(), &SamplingMask::full(32, 32), None).unwrap();
        let z = zero_filled(&y, None).unwrap();
        assert!(z.sub(&phantom32()).norm() < 1e-10);
    }
}

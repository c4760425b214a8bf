//! `mrisde` command-line driver: phantoms, masks, coil maps, simulation,
//! score training, reconstruction, ensembles and evaluation, all exchanged
//! through the container format in [`format`].

pub mod config;
pub mod format;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mrisde::grid::{gaussian_noise, ComplexImage, RealImage, Rng};
use mrisde::measurement::{
    forward, jittered_shepp_logan, kspace_residual, make_mask, random_phantom, shepp_logan,
    simulate_sensitivities, support_from_image, MaskKind, MultiCoilKspace, PhaseKind, SensitivityMaps,
};
use mrisde::metrics::{psnr, ssim, MetricReport};
use mrisde::sampler::{self, ChainForm, ReconResult};
use mrisde::score::{train_dsm, GaussianScore, GmmScore, ScoreModel, StepSizeRule};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use config::{parse_shape, Algo, Analytic, Command, Dataset, RunConfig};
use format::{Dtype, Manifest};

pub const FORMAT_VERSION: u32 = 1;
pub const THREADS_ENV: &str = "MRISDE_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] mrisde::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(mrisde::Error::Divergence { .. }) => 2,
            CliError::Core(_) => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Parser, Debug)]
#[command(name = "mrisde", version, about = "Score-based diffusion reconstruction of undersampled MRI")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Write a Shepp-Logan phantom.
    Phantom(PhantomArgs),
    /// Write a k-space sampling mask.
    Mask(MaskArgs),
    /// Write simulated, normalized coil sensitivity maps.
    Sens(SensArgs),
    /// Simulate undersampled (multi-coil) k-space from an image.
    Sim(SimArgs),
    /// Train the convolutional score model on a synthetic dataset.
    Train(TrainArgs),
    /// Reconstruct an image from undersampled k-space.
    Recon(ReconArgs),
    /// Run several reconstructions and write their pixelwise mean and spread.
    Ensemble(EnsembleArgs),
    /// Compare a reconstruction against the ground truth.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Rerun from a saved provenance or config file; other flags are ignored.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output base path; files are written as `<out>.json` and `<out>.bin`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PhantomArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "128x128")]
    shape: String,
    #[arg(long, default_value = "none")]
    phase: String,
}

#[derive(Args, Debug)]
struct MaskArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "128x128")]
    shape: String,
    #[arg(long, default_value = "gaussian1d")]
    kind: String,
    #[arg(long, default_value_t = 4.0)]
    accel: f64,
    /// Fully sampled central fraction.
    #[arg(long, default_value_t = 0.08)]
    acs: f64,
}

#[derive(Args, Debug)]
struct SensArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "128x128")]
    shape: String,
    #[arg(long, default_value_t = 8)]
    coils: usize,
    /// Restrict the maps to the (dilated) support of this image.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    sens: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Size of the generated training images.
    #[arg(long, default_value = "128x128")]
    shape: String,
    #[arg(long, value_enum, default_value = "phantoms")]
    dataset: Dataset,
    #[arg(long, default_value_t = 300)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long, default_value_t = 2e-4)]
    lr: f64,
    #[arg(long, default_value_t = 5000)]
    warmup: usize,
    #[arg(long, default_value_t = 1)]
    batch: usize,
}

#[derive(Args, Debug)]
struct SamplerArgs {
    /// Reverse steps.
    #[arg(long = "N", default_value_t = 2000)]
    n: usize,
    /// Corrector steps per reverse step.
    #[arg(long = "M", default_value_t = 1)]
    m_corr: usize,
    /// Corrector signal-to-noise constant.
    #[arg(long = "r", default_value_t = 0.16)]
    r: f64,
    /// Hybrid aggregation interval.
    #[arg(long = "m", default_value_t = 5)]
    m_agg: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda_start: f64,
    #[arg(long, default_value_t = 0.2)]
    lambda_end: f64,
    /// Fraction of the reverse steps run by `ccdf`.
    #[arg(long, default_value_t = 0.1)]
    nprime: f64,
    #[arg(long, default_value = "squared_ratio")]
    step_rule: String,
}

#[derive(Args, Debug)]
struct PriorArgs {
    /// Trained score model (base path).
    #[arg(long, conflicts_with = "analytic")]
    model: Option<PathBuf>,
    #[arg(long, value_enum)]
    analytic: Option<Analytic>,
    /// Pixel mean of the analytic Gaussian prior.
    #[arg(long, default_value_t = 0.0)]
    prior_mean: f64,
    /// Pixel variance of the analytic Gaussian prior.
    #[arg(long, default_value_t = 0.01)]
    prior_var: f64,
}

#[derive(Args, Debug)]
struct ReconArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    kspace: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    sens: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "real")]
    algo: Algo,
    /// Chain form of `ccdf`: real or complex.
    #[arg(long, default_value = "real")]
    form: String,
    /// `ccdf` initial image; the zero-filled reconstruction by default.
    #[arg(long)]
    init: Option<PathBuf>,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[command(flatten)]
    prior: PriorArgs,
}

#[derive(Args, Debug)]
struct EnsembleArgs {
    #[command(flatten)]
    recon: ReconArgs,
    /// Ensemble size.
    #[arg(long, default_value_t = 8)]
    count: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    recon: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// With `--mask`, also report the k-space residual.
    #[arg(long)]
    kspace: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    sens: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub config: RunConfig,
    pub seeds: Value,
    pub versions: Value,
    pub outputs: Vec<PathBuf>,
    pub summary: Value,
}

fn shape(s: &str) -> CliResult<[usize; 2]> {
    parse_shape(s).map_err(|e| usage(e.to_string()))
}

fn parse<T: std::str::FromStr<Err = mrisde::Error>>(s: &str) -> CliResult<T> {
    s.parse().map_err(|e: mrisde::Error| usage(e.to_string()))
}

fn required(p: Option<PathBuf>, flag: &str) -> CliResult<PathBuf> {
    p.ok_or_else(|| usage(format!("missing required flag --{flag}")))
}

fn load_config_file(path: &Path) -> CliResult<RunConfig> {
    let bytes = std::fs::read(path).map_err(mrisde::Error::from)?;
    let value: Value = serde_json::from_slice(&bytes)
        .map_err(|e| mrisde::Error::format("config", e.to_string()))?;
    let inner = match value.get("config") {
        Some(c) => c.clone(),
        None => value,
    };
    Ok(RunConfig::from_json(inner.to_string().as_bytes())?)
}

/// Starts from a saved config when `--config` is given; otherwise from the
/// defaults with `--seed` and `--out` applied.
fn base_config(command: Command, common: &Common) -> CliResult<Option<RunConfig>> {
    if let Some(path) = &common.config {
        let cfg = load_config_file(path)?;
        if cfg.command != command {
            return Err(usage(format!(
                "config file is for `{:?}`, not `{:?}`",
                cfg.command, command
            )));
        }
        return Ok(Some(cfg));
    }
    Ok(None)
}

fn fresh(command: Command, common: &Common) -> CliResult<RunConfig> {
    let out = required(common.out.clone(), "out")?;
    let mut cfg = RunConfig::new(command, out);
    cfg.seed = common.seed;
    cfg.sampler.seed = common.seed;
    Ok(cfg)
}

fn recon_config(command: Command, a: ReconArgs) -> CliResult<RunConfig> {
    if let Some(cfg) = base_config(command, &a.common)? {
        return Ok(cfg);
    }
    let mut cfg = fresh(command, &a.common)?;
    cfg.algo = a.algo;
    cfg.ccdf_form = match a.form.as_str() {
        "real" => ChainForm::Real,
        "complex" => ChainForm::Complex,
        other => return Err(usage(format!("unknown chain form `{other}`"))),
    };
    cfg.paths.kspace = Some(required(a.kspace, "kspace")?);
    cfg.paths.mask = Some(required(a.mask, "mask")?);
    cfg.paths.sens = a.sens;
    cfg.paths.init = a.init;
    let s = &a.sampler;
    cfg.sampler.steps = s.n;
    cfg.sampler.corrector_steps = s.m_corr;
    cfg.sampler.snr = s.r;
    cfg.sampler.aggregate_every = s.m_agg;
    cfg.sampler.lambda_start = s.lambda_start;
    cfg.sampler.lambda_end = s.lambda_end;
    cfg.sampler.n_prime_fraction = s.nprime;
    cfg.sampler.step_rule = parse::<StepSizeRule>(&s.step_rule)?;
    cfg.schedule.steps = s.n;
    cfg.prior.analytic = a.prior.analytic;
    cfg.prior.model = a.prior.model;
    cfg.prior.mean = a.prior.prior_mean;
    cfg.prior.var = a.prior.prior_var;
    if cfg.prior.analytic.is_none() && cfg.prior.model.is_none() {
        return Err(usage("one of --model and --analytic is required"));
    }
    Ok(cfg)
}

fn build_config(cli: Cli) -> CliResult<RunConfig> {
    let cfg = match cli.command {
        Sub::Phantom(a) => match base_config(Command::Phantom, &a.common)? {
            Some(c) => c,
            None => {
                let mut cfg = fresh(Command::Phantom, &a.common)?;
                cfg.shape = shape(&a.shape)?;
                cfg.phase = parse::<PhaseKind>(&a.phase)?;
                cfg
            }
        },
        Sub::Mask(a) => match base_config(Command::Mask, &a.common)? {
            Some(c) => c,
            None => {
                let mut cfg = fresh(Command::Mask, &a.common)?;
                cfg.shape = shape(&a.shape)?;
                cfg.mask.kind = parse::<MaskKind>(&a.kind)?;
                cfg.mask.accel = a.accel;
                cfg.mask.acs = a.acs;
                cfg
            }
        },
        Sub::Sens(a) => match base_config(Command::Sens, &a.common)? {
            Some(c) => c,
            None => {
                let mut cfg = fresh(Command::Sens, &a.common)?;
                cfg.shape = shape(&a.shape)?;
                cfg.coils = a.coils;
                cfg.paths.truth = a.truth;
                cfg
            }
        },
        Sub::Sim(a) => match base_config(Command::Sim, &a.common)? {
            Some(c) => c,
            None => {
                let mut cfg = fresh(Command::Sim, &a.common)?;
                cfg.paths.truth = Some(required(a.truth, "truth")?);
                cfg.paths.mask = Some(required(a.mask, "mask")?);
                cfg.paths.sens = a.sens;
                cfg
            }
        },
        Sub::Train(a) => match base_config(Command::Train, &a.common)? {
            Some(c) => c,
            None => {
                let mut cfg = fresh(Command::Train, &a.common)?;
                cfg.shape = shape(&a.shape)?;
                cfg.dataset.kind = a.dataset;
                cfg.dataset.count = a.count;
                cfg.train.epochs = a.epochs;
                cfg.train.width = a.width;
                cfg.train.crop = a.crop;
                cfg.train.learning_rate_peak = a.lr;
                cfg.train.warmup_steps = a.warmup;
                cfg.train.batch_size = a.batch;
                cfg.train.init_seed = a.common.seed;
                cfg
            }
        },
        Sub::Recon(a) => recon_config(Command::Recon, a)?,
        Sub::Ensemble(a) => {
            let explicit = a.recon.common.config.is_none();
            let mut cfg = recon_config(Command::Ensemble, a.recon)?;
            if explicit {
                cfg.ensemble_size = a.count;
            }
            cfg
        }
        Sub::Eval(a) => match base_config(Command::Eval, &a.common)? {
            Some(c) => c,
            None => {
                let mut cfg = fresh(Command::Eval, &a.common)?;
                cfg.paths.recon = Some(required(a.recon, "recon")?);
                cfg.paths.truth = Some(required(a.truth, "truth")?);
                cfg.paths.kspace = a.kspace;
                cfg.paths.mask = a.mask;
                cfg.paths.sens = a.sens;
                if cfg.paths.kspace.is_some() != cfg.paths.mask.is_some() {
                    return Err(usage("--kspace and --mask go together"));
                }
                cfg
            }
        },
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if matches!(cfg.command, Command::Recon | Command::Ensemble) {
        if cfg.algo == Algo::Hybrid && cfg.paths.sens.is_none() {
            return Err(usage("--algo hybrid needs coil sensitivity maps (--sens)"));
        }
        if cfg.command == Command::Ensemble && cfg.ensemble_size < 2 {
            return Err(usage("--count must be at least 2"));
        }
    }
    Ok(cfg)
}

fn manifest(dtype: Dtype, role: &str, cfg: &RunConfig) -> Manifest {
    Manifest::new(dtype, vec![], role).with_extra("seed", cfg.seed)
}

fn load_kspace(cfg: &RunConfig) -> CliResult<(MultiCoilKspace, Option<SensitivityMaps>)> {
    let kpath = cfg.paths.kspace.as_deref().ok_or_else(|| usage("missing --kspace"))?;
    let mpath = cfg.paths.mask.as_deref().ok_or_else(|| usage("missing --mask"))?;
    let (data, _) = format::load_stack(kpath)?;
    let mask = format::load_mask(mpath)?;
    let y = MultiCoilKspace::new(data, mask)?;
    let maps = match &cfg.paths.sens {
        Some(p) => Some(format::load_maps(p)?),
        None => None,
    };
    Ok((y, maps))
}

fn load_prior(cfg: &RunConfig, (h, w): (usize, usize)) -> CliResult<ScoreModel> {
    Ok(match (&cfg.prior.model, cfg.prior.analytic) {
        (Some(path), _) => ScoreModel::Learned(format::load_model(path)?),
        (None, Some(Analytic::Gaussian)) => {
            ScoreModel::Gaussian(GaussianScore::isotropic(h, w, cfg.prior.mean, cfg.prior.var)?)
        }
        (None, Some(Analytic::Gmm)) => {
            ScoreModel::Gmm(GmmScore::isotropic(h, w, &[0.5, 0.5], &[-0.5, 0.5], &[0.25, 0.25])?)
        }
        (None, None) => return Err(usage("one of --model and --analytic is required")),
    })
}

struct ReconJob {
    y: MultiCoilKspace,
    maps: Option<SensitivityMaps>,
    init: Option<ComplexImage>,
    model: ScoreModel,
}

impl ReconJob {
    fn load(cfg: &RunConfig) -> CliResult<Self> {
        let (y, maps) = load_kspace(cfg)?;
        let model = load_prior(cfg, y.shape())?;
        let init = match &cfg.paths.init {
            Some(p) => Some(format::load_complex(p)?.0),
            None => None,
        };
        if cfg.algo == Algo::Real && y.coils() > 1 {
            return Err(usage("--algo real needs single-coil k-space"));
        }
        if matches!(cfg.algo, Algo::Sense | Algo::Ccdf) && y.coils() > 1 && maps.is_none() {
            return Err(usage(format!("--algo {:?} on multi-coil k-space needs --sens", cfg.algo).to_lowercase()));
        }
        Ok(Self { y, maps, init, model })
    }

    fn run(&self, cfg: &RunConfig, rng: &mut Rng) -> mrisde::Result<ReconResult> {
        let (s, c) = (&cfg.schedule, &cfg.sampler);
        let m = &self.model;
        match cfg.algo {
            Algo::Real => sampler::recon_real(&self.y, m, s, c, rng),
            Algo::Sense => sampler::recon_complex(&self.y, self.maps.as_ref(), m, s, c, rng),
            Algo::Ssos => sampler::recon_ssos(&self.y, m, s, c, rng),
            Algo::Hybrid => {
                let maps = self.maps.as_ref().ok_or_else(|| {
                    mrisde::Error::Config("hybrid reconstruction needs sensitivity maps".into())
                })?;
                sampler::recon_hybrid(&self.y, maps, m, s, c, rng)
            }
            Algo::Ccdf => sampler::recon_ccdf(
                &self.y,
                self.maps.as_ref(),
                self.init.as_ref(),
                cfg.ccdf_form,
                m,
                s,
                c,
                rng,
            ),
        }
    }
}

fn recon_summary(r: &ReconResult) -> Value {
    json!({
        "kspace_residual": r.kspace_residual,
        "residual_before_final_dc": r.residual_before_final_dc,
        "steps_used": r.steps_used,
        "score_evals": r.score_evals,
        "chain_seed": r.chain_seed,
        "chain_stream": r.chain_stream,
    })
}

/// Runs one configured command, returning the written base paths and a
/// summary for the provenance record.
fn execute(cfg: &RunConfig) -> CliResult<(Vec<PathBuf>, Value)> {
    let out = cfg.paths.out.clone();
    let [h, w] = cfg.shape;
    match cfg.command {
        Command::Phantom => {
            let img = shepp_logan(h, w, cfg.phase)?;
            format::save_complex(&out, &img, manifest(Dtype::C64, "phantom", cfg).with_extra("phase", cfg.phase))?;
            Ok((vec![out], json!({})))
        }
        Command::Mask => {
            let m = &cfg.mask;
            let mask = make_mask(m.kind, h, w, m.accel, m.acs, &mut Rng::new(cfg.seed, 1))?;
            let measured = mask.measured_accel();
            format::save_mask(&out, &mask, manifest(Dtype::U8, "mask", cfg).with_extra("measured_accel", measured))?;
            Ok((vec![out], json!({ "measured_accel": measured, "kept": mask.kept_count() })))
        }
        Command::Sens => {
            let (support, (h, w)) = match &cfg.paths.truth {
                Some(p) => {
                    let (img, _) = format::load_complex(p)?;
                    (Some(support_from_image(&img, 2)), img.shape())
                }
                None => (None, (h, w)),
            };
            let maps = simulate_sensitivities(cfg.coils, h, w, support.as_deref(), &mut Rng::new(cfg.seed, 2))?;
            format::save_stack(&out, maps.maps(), manifest(Dtype::C64, "sensitivity", cfg))?;
            Ok((vec![out], json!({ "normalization_error": maps.normalization_error() })))
        }
        Command::Sim => {
            let truth_path = cfg.paths.truth.as_deref().ok_or_else(|| usage("missing --truth"))?;
            let mask_path = cfg.paths.mask.as_deref().ok_or_else(|| usage("missing --mask"))?;
            let (truth, _) = format::load_complex(truth_path)?;
            let mask = format::load_mask(mask_path)?;
            let maps = match &cfg.paths.sens {
                Some(p) => Some(format::load_maps(p)?),
                None => None,
            };
            let y = forward(&truth, &mask, maps.as_ref())?;
            format::save_stack(&out, y.data(), manifest(Dtype::C64, "kspace", cfg).with_extra("coils", y.coils()))?;
            Ok((vec![out], json!({ "coils": y.coils() })))
        }
        Command::Train => train(cfg, &out, (h, w)),
        Command::Recon => {
            let job = ReconJob::load(cfg)?;
            let r = job.run(cfg, &mut Rng::new(cfg.sampler.seed, 0))?;
            let summary = recon_summary(&r);
            let m = manifest(Dtype::C64, "recon", cfg)
                .with_extra("algo", cfg.algo)
                .with_extra("prior", job.model.descriptor())
                .with_extra("result", &summary);
            format::save_complex(&out, &r.image, m)?;
            Ok((vec![out], summary))
        }
        Command::Ensemble => {
            let job = ReconJob::load(cfg)?;
            let e = sampler::ensemble(cfg.ensemble_size, cfg.sampler.seed, |rng| job.run(cfg, rng))?;
            let samples: Vec<ComplexImage> = e.samples.iter().map(|s| s.image.clone()).collect();
            let (mean_path, std_path, samples_path) = (
                format::derived(&out, ".mean"),
                format::derived(&out, ".std"),
                format::derived(&out, ".samples"),
            );
            format::save_real(&mean_path, &e.mean_image, manifest(Dtype::F32, "ensemble_mean", cfg))?;
            format::save_real(&std_path, &e.std_image, manifest(Dtype::F32, "ensemble_std", cfg))?;
            format::save_stack(&samples_path, &samples, manifest(Dtype::C64, "ensemble_samples", cfg))?;
            let residuals: Vec<f64> = e.samples.iter().map(|s| s.kspace_residual).collect();
            let summary = json!({
                "count": cfg.ensemble_size,
                "mean_std": e.std_image.mean(),
                "kspace_residuals": residuals,
            });
            Ok((vec![mean_path, std_path, samples_path], summary))
        }
        Command::Eval => evaluate(cfg, &out),
    }
}

fn train(cfg: &RunConfig, out: &Path, (h, w): (usize, usize)) -> CliResult<(Vec<PathBuf>, Value)> {
    let mut rng = Rng::new(cfg.seed, 3);
    let n = cfg.dataset.count;
    let data: Vec<RealImage> = match cfg.dataset.kind {
        Dataset::Gaussian => (0..n).map(|_| gaussian_noise(&mut rng, h, w)).collect(),
        Dataset::Phantoms => {
            let jittered = n / 3;
            let mut v: Vec<RealImage> = (0..n - jittered).map(|_| random_phantom(h, w, &mut rng)).collect();
            v.extend((0..jittered).map(|_| jittered_shepp_logan(h, w, 0.1, &mut rng)));
            v
        }
    };
    if data.is_empty() {
        return Err(usage("--count must be positive"));
    }
    let (net, report) = train_dsm(&data, &cfg.schedule, &cfg.train, &mut Rng::new(cfg.seed, 4))?;
    format::save_model(out, &net, &cfg.train, manifest(Dtype::F32, "score_model", cfg))?;
    let summary = json!({
        "steps": report.steps,
        "sigma_data": report.sigma_data,
        "window_losses": report.window_losses,
    });
    Ok((vec![out.to_path_buf()], summary))
}

fn evaluate(cfg: &RunConfig, out: &Path) -> CliResult<(Vec<PathBuf>, Value)> {
    let recon_path = cfg.paths.recon.as_deref().ok_or_else(|| usage("missing --recon"))?;
    let truth_path = cfg.paths.truth.as_deref().ok_or_else(|| usage("missing --truth"))?;
    let (recon, _) = format::load_complex(recon_path)?;
    let (truth, _) = format::load_complex(truth_path)?;
    let (a, b) = (truth.magnitude(), recon.magnitude());
    let residual = match cfg.paths.kspace {
        Some(_) => {
            let (y, maps) = load_kspace(cfg)?;
            Some(kspace_residual(&recon, &y, maps.as_ref())?)
        }
        None => None,
    };
    let report = MetricReport {
        psnr_db: psnr(&a, &b)?,
        ssim: ssim(&a, &b)?,
        kspace_residual: residual,
        notes: "magnitude images; PSNR peak is the reference maximum".into(),
    };
    println!("{:<16} {:>14}", "metric", "value");
    println!("{:<16} {:>14.4}", "psnr_db", report.psnr_db);
    println!("{:<16} {:>14.4}", "ssim", report.ssim);
    if let Some(r) = report.kspace_residual {
        println!("{:<16} {:>14.3e}", "kspace_residual", r);
    }
    let path = format::metrics_path(out);
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    format::write_text(&path, &text)?;
    Ok((vec![path], serde_json::to_value(&report).expect("report serializes")))
}

fn write_provenance(cfg: &RunConfig, outputs: Vec<PathBuf>, summary: Value) -> CliResult<()> {
    let prov = Provenance {
        config: cfg.clone(),
        seeds: json!({
            "seed": cfg.seed,
            "chain_seed": cfg.sampler.seed,
            "init_seed": cfg.train.init_seed,
        }),
        versions: json!({
            "mrisde": env!("CARGO_PKG_VERSION"),
            "format": FORMAT_VERSION,
        }),
        outputs,
        summary,
    };
    let mut text = serde_json::to_string_pretty(&prov).expect("provenance serializes");
    text.push('\n');
    format::write_text(&format::provenance_path(&cfg.paths.out), &text)?;
    Ok(())
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    // a pool that already exists (repeated calls in one process) is kept
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn run(args: Vec<OsString>) -> CliResult<()> {
    configure_threads()?;
    let cli = Cli::try_parse_from(args).map_err(|e| usage(e.to_string()))?;
    let cfg = build_config(cli)?;
    let (outputs, summary) = execute(&cfg)?;
    write_provenance(&cfg, outputs, summary)
}

/// Runs the command line `args` (program name first) and returns the exit
/// code: 0 on success, 1 on usage or input errors, 2 on numerical divergence.
pub fn run_command<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    // help and version requests are successes, not usage errors
    if let Err(e) = Cli::try_parse_from(&args) {
        if !e.use_stderr() {
            let _ = e.print();
            return 0;
        }
    }
    match run(args) {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                CliError::Usage(msg) => eprintln!("{}\n\nusage: mrisde <COMMAND> [OPTIONS]; see `mrisde --help`", msg.trim_end()),
                CliError::Core(err) => eprintln!("error: {err}"),
            }
            e.exit_code()
        }
    }
}

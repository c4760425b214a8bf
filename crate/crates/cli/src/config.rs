//! Full run configuration. Every run saves one, with every key written out,
//! and a saved copy reruns the same command.

use std::path::PathBuf;
use std::str::FromStr;

use mrisde::measurement::{MaskKind, PhaseKind};
use mrisde::sampler::{ChainForm, SamplerConfig};
use mrisde::schedule::NoiseSchedule;
use mrisde::score::TrainConfig;
use mrisde::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Phantom,
    Mask,
    Sens,
    Sim,
    Train,
    Recon,
    Ensemble,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Real,
    Sense,
    Ssos,
    Hybrid,
    Ccdf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Analytic {
    /// Independent pixels with the configured mean and variance.
    Gaussian,
    /// Two constant-image components at -0.5 and 0.5, variance 0.25 each.
    Gmm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    /// I.i.d. standard normal pixels.
    Gaussian,
    /// Random ellipse phantoms plus jittered Shepp-Logan variants.
    Phantoms,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSettings {
    pub kind: MaskKind,
    pub accel: f64,
    pub acs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSettings {
    pub kind: Dataset,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prior {
    pub analytic: Option<Analytic>,
    pub model: Option<PathBuf>,
    /// Pixel mean and variance of the analytic Gaussian prior.
    pub mean: f64,
    pub var: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub truth: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub sens: Option<PathBuf>,
    pub kspace: Option<PathBuf>,
    pub init: Option<PathBuf>,
    pub recon: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    /// Seed of every non-chain random draw (masks, maps, training).
    pub seed: u64,
    pub shape: [usize; 2],
    pub phase: PhaseKind,
    pub mask: MaskSettings,
    pub coils: usize,
    pub algo: Algo,
    pub ccdf_form: ChainForm,
    pub ensemble_size: usize,
    pub prior: Prior,
    pub dataset: DatasetSettings,
    pub schedule: NoiseSchedule,
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn new(command: Command, out: PathBuf) -> Self {
        Self {
            command,
            seed: 0,
            shape: [128, 128],
            phase: PhaseKind::None,
            mask: MaskSettings {
                kind: MaskKind::Gaussian1d,
                accel: 4.0,
                acs: 0.08,
            },
            coils: 1,
            algo: Algo::Real,
            ccdf_form: ChainForm::Real,
            ensemble_size: 8,
            prior: Prior {
                analytic: Some(Analytic::Gaussian),
                model: None,
                mean: 0.0,
                var: 0.01,
            },
            dataset: DatasetSettings {
                kind: Dataset::Phantoms,
                count: 300,
            },
            schedule: NoiseSchedule::default(),
            sampler: SamplerConfig::default(),
            train: TrainConfig::default(),
            paths: Paths {
                out,
                ..Paths::default()
            },
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_slice(bytes).map_err(|e| Error::format("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.sampler.validate()?;
        self.train.validate()?;
        if self.shape[0] == 0 || self.shape[1] == 0 {
            return Err(Error::format("shape", "zero-sized image"));
        }
        if self.coils == 0 {
            return Err(Error::format("coils", "need at least one coil"));
        }
        if !(self.prior.var > 0.0 && self.prior.var.is_finite() && self.prior.mean.is_finite()) {
            return Err(Error::format("prior", "the Gaussian prior needs a finite mean and positive variance"));
        }
        if self.prior.analytic.is_some() == self.prior.model.is_some() {
            return Err(Error::format("prior", "exactly one of `analytic` and `model` must be set"));
        }
        Ok(())
    }
}

/// Parses `HxW`.
pub fn parse_shape(s: &str) -> Result<[usize; 2]> {
    let bad = || Error::format("shape", format!("expected HxW, got `{s}`"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    if h == 0 || w == 0 || h.checked_mul(w).is_none() {
        return Err(bad());
    }
    Ok([h, w])
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        <Algo as clap::ValueEnum>::from_str(s, false).map_err(|_| Error::format("algo", format!("unknown algorithm `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        assert_eq!(parse_shape("128x96").unwrap(), [128, 96]);
        assert_eq!(parse_shape("8X8").unwrap(), [8, 8]);
        for bad in ["", "128", "0x4", "4x", "x4", "-1x4", "4x4x4"] {
            assert!(parse_shape(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn config_roundtrip_writes_every_key() {
        let cfg = RunConfig::new(Command::Recon, "out/run".into());
        let json = cfg.to_json();
        assert_eq!(RunConfig::from_json(json.as_bytes()).unwrap(), cfg);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(v["paths"].get("sens").is_some());
        assert!(v["train"].get("crop").is_some());
        assert!(v["sampler"].get("aggregate_every").is_some());
    }

    #[test]
    fn config_rejects_unknown_and_missing_keys() {
        let cfg = RunConfig::new(Command::Mask, "m".into());
        let mut v: serde_json::Value = serde_json::to_value(&cfg).unwrap();
        v["sampler"]["bogus"] = 1.into();
        assert!(RunConfig::from_json(v.to_string().as_bytes()).is_err());
        let mut v: serde_json::Value = serde_json::to_value(&cfg).unwrap();
        v.as_object_mut().unwrap().remove("coils");
        assert!(RunConfig::from_json(v.to_string().as_bytes()).is_err());
    }

    #[test]
    fn prior_must_be_unambiguous() {
        let mut cfg = RunConfig::new(Command::Recon, "r".into());
        cfg.prior.model = Some("m".into());
        assert!(cfg.validate().is_err());
        cfg.prior.analytic = None;
        assert!(cfg.validate().is_ok());
    }
}

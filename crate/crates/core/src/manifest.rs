//! Run manifests: the command name plus every resolved setting, enough to
//! replay a run and reproduce its outputs.

use std::path::Path;

use crate::config::Settings;
use crate::degrade::NoiseSpec;
use crate::error::{Result, SsiError};
use crate::masking::MaskStrategy;
use crate::neural::UNetConfig;
use crate::optim::AdamConfig;
use crate::tensor::{gaussian_psf, Boundary, Kernel};
use crate::trainer::{Regularization, TrainConfig};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunManifest {
    pub command: String,
    pub settings: Settings,
}

impl RunManifest {
    pub fn new(command: &str, settings: Settings) -> Self {
        RunManifest { command: command.to_string(), settings }
    }

    pub fn to_text(&self) -> String {
        let mut s = self.settings.clone();
        s.set("command", &self.command);
        s.set("manifest_version", MANIFEST_VERSION);
        format!("# ssi run manifest\n{}", s.to_text())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut settings = Settings::parse(text)?;
        let command: String = settings.require("command")?;
        let version: u32 = settings.require("manifest_version")?;
        if version != MANIFEST_VERSION {
            return Err(SsiError::param(format!("unsupported manifest version {version}")));
        }
        let mut clean = Settings::new();
        for k in settings.keys().filter(|k| *k != "command" && *k != "manifest_version") {
            clean.set(k, settings.raw(k).unwrap());
        }
        settings = clean;
        Ok(RunManifest { command, settings })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| SsiError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SsiError::io(path, e))?;
        Self::parse(&text).map_err(|e| SsiError::format(path, e.to_string()))
    }
}

/// Keys `alpha, sigma, pepper, bits`, plus `seed_key` for the noise seed.
pub fn noise_from_settings(s: &Settings, seed_key: &str) -> Result<NoiseSpec> {
    let d = NoiseSpec::default();
    let spec = NoiseSpec {
        alpha: s.get_or("alpha", d.alpha)?,
        sigma: s.get_or("sigma", d.sigma)?,
        p: s.get_or("pepper", d.p)?,
        bits: s.get_or("bits", d.bits)?,
        seed: s.get_or(seed_key, d.seed)?,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn noise_to_settings(spec: &NoiseSpec, seed_key: &str, s: &mut Settings) {
    s.set("alpha", spec.alpha);
    s.set("sigma", spec.sigma);
    s.set("pepper", spec.p);
    s.set("bits", spec.bits);
    s.set(seed_key, spec.seed);
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsfSpec {
    pub sigma: f64,
    pub radius: usize,
}

impl Default for PsfSpec {
    fn default() -> Self {
        PsfSpec { sigma: 1.0, radius: 8 }
    }
}

impl PsfSpec {
    pub fn kernel(&self) -> Result<Kernel> {
        gaussian_psf(self.sigma, self.radius)
    }
}

pub fn psf_from_settings(s: &Settings) -> Result<PsfSpec> {
    let d = PsfSpec::default();
    Ok(PsfSpec { sigma: s.get_or("psf_sigma", d.sigma)?, radius: s.get_or("psf_radius", d.radius)? })
}

pub fn psf_to_settings(p: &PsfSpec, s: &mut Settings) {
    s.set("psf_sigma", p.sigma);
    s.set("psf_radius", p.radius);
}

/// Training keys: `epochs, batches, depth, base_channels, lr, l1, l2, strategy,
/// density_start, density_end, noise_std0, noise_decay, lr_step_factor,
/// train_boundary, no_mask`. The seed is set separately.
pub fn train_from_settings(s: &Settings) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let da = AdamConfig::default();
    let du = UNetConfig::default();
    let cfg = TrainConfig {
        epochs: s.get_or("epochs", d.epochs)?,
        batches_per_epoch: s.get_or("batches", d.batches_per_epoch)?,
        strategy: s.get_or::<MaskStrategy>("strategy", d.strategy)?,
        density_start: s.get_or("density_start", d.density_start)?,
        density_end: s.get_or("density_end", d.density_end)?,
        reg: Regularization { l1: s.get_or("l1", d.reg.l1)?, l2: s.get_or("l2", d.reg.l2)? },
        adam: AdamConfig {
            lr: s.get_or("lr", da.lr)?,
            noise_std0: s.get_or("noise_std0", da.noise_std0)?,
            noise_decay: s.get_or("noise_decay", da.noise_decay)?,
            ..da
        },
        lr_step_factor: s.get_or("lr_step_factor", d.lr_step_factor)?,
        unet: UNetConfig {
            depth: s.get_or("depth", du.depth)?,
            base_channels: s.get_or("base_channels", du.base_channels)?,
            seed: 0,
        },
        boundary: s.get_or::<Boundary>("train_boundary", d.boundary)?,
        seed: 0,
        no_mask: s.get_or("no_mask", d.no_mask)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn train_to_settings(c: &TrainConfig, s: &mut Settings) {
    s.set("epochs", c.epochs);
    s.set("batches", c.batches_per_epoch);
    s.set("strategy", c.strategy);
    s.set("density_start", c.density_start);
    s.set("density_end", c.density_end);
    s.set("l1", c.reg.l1);
    s.set("l2", c.reg.l2);
    s.set("lr", c.adam.lr);
    s.set("noise_std0", c.adam.noise_std0);
    s.set("noise_decay", c.adam.noise_decay);
    s.set("lr_step_factor", c.lr_step_factor);
    s.set("depth", c.unet.depth);
    s.set("base_channels", c.unet.base_channels);
    s.set("train_boundary", c.boundary);
    s.set("no_mask", c.no_mask);
}

//! Self-supervised inversion: train `f` so that `g(f(m_J(y)))` predicts `y` on
//! the masked set `J`, then deconvolve by applying `f` alone.

use std::io::Write;

use log::{debug, info};

use crate::error::{Result, SsiError};
use crate::masking::{apply_mask, density_schedule, sample_mask, MaskPlan, MaskStrategy};
use crate::neural::{reg_loss_and_grad, unet_backward, unet_forward, unet_init, GradTape, ModelParams, UNetConfig};
use crate::optim::{AdamConfig, OptimState};
use crate::rng::{streams, Stream};
use crate::tensor::{Boundary, ForwardModel, Image2D, Kernel};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Regularization {
    pub l1: f64,
    pub l2: f64,
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization { l1: 1e-7, l2: 1e-6 }
    }
}

impl Regularization {
    pub const NONE: Regularization = Regularization { l1: 0.0, l2: 0.0 };
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub strategy: MaskStrategy,
    pub density_start: f64,
    pub density_end: f64,
    pub reg: Regularization,
    pub adam: AdamConfig,
    /// Multiply the learning rate by this factor after every quarter of the epochs.
    pub lr_step_factor: f64,
    pub unet: UNetConfig,
    pub boundary: Boundary,
    pub seed: u64,
    pub no_mask: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 128,
            batches_per_epoch: 4,
            strategy: MaskStrategy::Interpolate,
            density_start: 0.5,
            density_end: 0.01,
            reg: Regularization::default(),
            adam: AdamConfig::default(),
            lr_step_factor: 0.5,
            unet: UNetConfig::default(),
            boundary: Boundary::Circular,
            seed: 0,
            no_mask: false,
        }
    }
}

impl TrainConfig {
    /// Propagate `seed` into the network initialization and optimizer noise.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.unet.seed = seed;
        self.adam.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batches_per_epoch < 1 {
            return Err(SsiError::param("epochs and batches_per_epoch must be >= 1"));
        }
        if !(self.density_start > 0.0 && self.density_start <= 1.0 && self.density_end > 0.0)
            || self.density_end > self.density_start
        {
            return Err(SsiError::param(format!(
                "need 0 < density_end <= density_start <= 1, got {} and {}",
                self.density_end, self.density_start
            )));
        }
        if self.reg.l1 < 0.0 || self.reg.l2 < 0.0 {
            return Err(SsiError::param("regularization weights must be >= 0"));
        }
        if !(self.lr_step_factor > 0.0) {
            return Err(SsiError::param("lr_step_factor must be positive"));
        }
        self.unet.validate()?;
        self.adam.validate()
    }

    pub fn total_batches(&self) -> usize {
        self.epochs * self.batches_per_epoch
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let quarter = (4 * epoch) / self.epochs.max(1);
        self.adam.lr * self.lr_step_factor.powi(quarter.min(3) as i32)
    }
}

/// Loss value and gradients of one evaluation.
#[derive(Debug)]
pub struct LossEval {
    /// Mean squared residual over the compared pixels.
    pub data_loss: f64,
    pub reg_loss: f64,
    /// Forward-pass tape; its gradients include the regularization terms.
    pub tape: GradTape,
}

impl LossEval {
    pub fn total(&self) -> f64 {
        self.data_loss + self.reg_loss
    }

    pub fn grads(&self) -> &[f64] {
        self.tape.grads()
    }
}

/// `(g o f o m_J)(y)` over the whole image. Its restriction to `J` does not
/// depend on `y_J`.
pub fn composite_h(params: &ModelParams, y: &Image2D, plan: &MaskPlan, model: &ForwardModel) -> Result<Image2D> {
    model.check(y)?;
    let masked = apply_mask(y, plan)?;
    let fx = unet_forward(params, &masked, None)?;
    Ok(model.apply(&fx))
}

fn residual_loss(
    params: &ModelParams,
    input: &Image2D,
    y: &Image2D,
    select: Option<&[bool]>,
    model: &ForwardModel,
    reg: Regularization,
) -> Result<LossEval> {
    let mut tape = GradTape::new();
    let fx = unet_forward(params, input, Some(&mut tape))?;
    let r = model.apply(&fx);
    let count = select.map_or(y.len(), |s| s.iter().filter(|&&m| m).count());
    if count == 0 {
        return Err(SsiError::param("loss over an empty pixel set"));
    }
    let inv = 1.0 / count as f64;
    let mut loss = 0.0;
    let mut dr = vec![0.0; y.len()];
    for i in 0..y.len() {
        if select.is_none_or(|s| s[i]) {
            let d = r.data()[i] - y.data()[i];
            loss += d * d;
            dr[i] = 2.0 * d * inv;
        }
    }
    let dr = Image2D::from_raw(y.width(), y.height(), dr);
    let dfx = model.adjoint(&dr);
    unet_backward(params, &mut tape, &dfx)?;
    let (reg_loss, reg_grad) = reg_loss_and_grad(params, reg.l1, reg.l2);
    tape.add_grads(&reg_grad);
    Ok(LossEval { data_loss: loss * inv, reg_loss, tape })
}

/// Masked self-supervised loss `mean_{i in J} (g(f(m_J(y)))_i - y_i)^2` plus
/// regularization, with gradients w.r.t. every parameter.
pub fn ssi_loss(
    params: &ModelParams,
    y: &Image2D,
    plan: &MaskPlan,
    model: &ForwardModel,
    reg: Regularization,
) -> Result<LossEval> {
    model.check(y)?;
    if plan.is_empty() {
        return Err(SsiError::param("mask plan is empty"));
    }
    let masked = apply_mask(y, plan)?;
    residual_loss(params, &masked, y, Some(plan.masked()), model, reg)
}

/// Unmasked self-consistency loss `mean_i (g(f(y))_i - y_i)^2` plus regularization.
pub fn naive_loss(params: &ModelParams, y: &Image2D, model: &ForwardModel, reg: Regularization) -> Result<LossEval> {
    model.check(y)?;
    residual_loss(params, y, y, None, model, reg)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub batch: usize,
    pub density: f64,
    pub loss: f64,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,batch,density,loss";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn epoch_mean(&self, epoch: usize) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.epoch == epoch).map(|r| r.loss).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "{TRAIN_LOG_HEADER}")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.epoch, r.batch, r.density, r.loss)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: TrainLog,
}

/// Reflect-pad so both sides are multiples of `granularity`; returns the padded image.
pub fn pad_to_multiple(y: &Image2D, granularity: usize) -> Image2D {
    let pw = y.width().div_ceil(granularity) * granularity - y.width();
    let ph = y.height().div_ceil(granularity) * granularity - y.height();
    if pw == 0 && ph == 0 {
        return y.clone();
    }
    y.pad_reflect(pw / 2, pw - pw / 2, ph / 2, ph - ph / 2)
}

fn crop_back(padded: &Image2D, original: (usize, usize)) -> Result<Image2D> {
    let x0 = (padded.width() - original.0) / 2;
    let y0 = (padded.height() - original.1) / 2;
    padded.crop(x0, y0, original.0, original.1)
}

/// Train a pseudo-inverse of convolution with `k` from the single observation `y`.
pub fn train(y: &Image2D, k: &Kernel, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let y = pad_to_multiple(y, cfg.unet.granularity());
    let model = ForwardModel::new(k.clone(), cfg.boundary);
    model.check(&y)?;
    let mut params = unet_init(cfg.unet)?;
    let mut opt = OptimState::new(cfg.adam, params.len())?;
    let mut mask_seeds = Stream::new(cfg.seed, streams::TRAIN_MASKS);
    let mut log = TrainLog::default();
    let (w, h) = y.shape();

    for epoch in 0..cfg.epochs {
        opt.set_learning_rate(cfg.learning_rate(epoch));
        let density =
            if cfg.no_mask { 0.0 } else { density_schedule(epoch, cfg.epochs, cfg.density_start, cfg.density_end) };
        for batch in 0..cfg.batches_per_epoch {
            let eval = if cfg.no_mask {
                naive_loss(&params, &y, &model, cfg.reg)?
            } else {
                let plan = sample_mask(w, h, density, mask_seeds.next_seed())?.with_strategy(cfg.strategy);
                ssi_loss(&params, &y, &plan, &model, cfg.reg)?
            };
            let loss = eval.data_loss;
            if !loss.is_finite() || !eval.reg_loss.is_finite() || eval.grads().iter().any(|g| !g.is_finite()) {
                return Err(SsiError::NonFiniteLoss { epoch, batch, loss: eval.total() });
            }
            opt.step(params.values_mut(), eval.grads(), epoch)?;
            if !params.is_finite() {
                return Err(SsiError::NonFiniteLoss { epoch, batch, loss });
            }
            log.rows.push(LogRow { epoch, batch, density, loss });
        }
        if let Some(m) = log.epoch_mean(epoch) {
            debug!("epoch {epoch}: density {density:.4} mean loss {m:.6e}");
        }
    }
    info!(
        "trained {} batches; final epoch mean loss {:.6e}",
        cfg.total_batches(),
        log.epoch_mean(cfg.epochs - 1).unwrap_or(f64::NAN)
    );
    Ok(TrainOutcome { params, log })
}

/// Deconvolve by applying `f` without masking; output clamped to `[0, 1]`.
pub fn infer(params: &ModelParams, y: &Image2D) -> Result<Image2D> {
    let padded = pad_to_multiple(y, params.config().granularity());
    let out = unet_forward(params, &padded, None)?;
    Ok(crop_back(&out, y.shape())?.clamp(0.0, 1.0))
}

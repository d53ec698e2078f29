//! Classical deconvolution baselines: Lucy-Richardson, Chambolle-Pock with an
//! isotropic TV prior, and nonlinear conjugate gradient on smoothed TV.

use log::warn;

use crate::error::{Result, SsiError};
use crate::tensor::{ForwardModel, Image2D};

const LR_FLOOR: f64 = 1e-12;

/// Multiplicative Lucy-Richardson iterations starting from `x = y`.
pub fn lucy_richardson(y: &Image2D, model: &ForwardModel, iters: usize) -> Result<Image2D> {
    model.check(y)?;
    if y.data().iter().any(|&v| v < 0.0) {
        return Err(SsiError::param("lucy_richardson needs a nonnegative observation"));
    }
    if model.kernel.weights().iter().any(|&w| w < 0.0) {
        return Err(SsiError::param("lucy_richardson needs a nonnegative kernel"));
    }
    let (w, h) = y.shape();
    let mut x = y.clone();
    for _ in 0..iters {
        let ax = model.apply(&x);
        let ratio: Vec<f64> = y.data().iter().zip(ax.data()).map(|(&yi, &a)| yi / a.max(LR_FLOOR)).collect();
        let corr = model.adjoint(&Image2D::from_raw(w, h, ratio));
        let next: Vec<f64> = x.data().iter().zip(corr.data()).map(|(a, b)| a * b).collect();
        x = Image2D::from_raw(w, h, next);
    }
    Ok(x)
}

/// Forward differences with Neumann boundary: the last column of `dx` and the
/// last row of `dy` are zero.
pub fn gradient(x: &Image2D) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = x.shape();
    let d = x.data();
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 1 < w {
                gx[i] = d[i + 1] - d[i];
            }
            if r + 1 < h {
                gy[i] = d[i + w] - d[i];
            }
        }
    }
    (gx, gy)
}

/// Adjoint of [`gradient`] (i.e. minus the discrete divergence).
pub fn gradient_adjoint(gx: &[f64], gy: &[f64], w: usize, h: usize) -> Image2D {
    let mut out = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 1 < w {
                out[i] -= gx[i];
                out[i + 1] += gx[i];
            }
            if r + 1 < h {
                out[i] -= gy[i];
                out[i + w] += gy[i];
            }
        }
    }
    Image2D::from_raw(w, h, out)
}

/// Isotropic total variation `sum sqrt(dx^2 + dy^2 + eps^2)`; `eps = 0` is the exact TV.
pub fn total_variation(x: &Image2D, eps: f64) -> f64 {
    let (gx, gy) = gradient(x);
    gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b + eps * eps).sqrt()).sum()
}

/// `0.5 * ||k * x - y||^2 + lambda * TV_eps(x)`.
pub fn tv_energy(x: &Image2D, y: &Image2D, model: &ForwardModel, lambda: f64, eps: f64) -> f64 {
    let ax = model.apply(x);
    let data: f64 = ax.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * data + lambda * total_variation(x, eps)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Estimate of `||K||` for `K x = (k * x, grad x)` by power iteration on `K^T K`.
pub fn operator_norm(model: &ForwardModel, w: usize, h: usize) -> f64 {
    // Deterministic, not aligned with any eigenvector in particular.
    let mut v = Image2D::from_fn(w, h, |x, y| 1.0 + ((x * 31 + y * 17) % 7) as f64 / 7.0 - 0.5);
    let mut lambda = 0.0;
    for _ in 0..100 {
        let norm = dot(v.data(), v.data()).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = v.map(|a| a / norm);
        let ata = model.adjoint(&model.apply(&v));
        let (gx, gy) = gradient(&v);
        let gtg = gradient_adjoint(&gx, &gy, w, h);
        let next: Vec<f64> = ata.data().iter().zip(gtg.data()).map(|(a, b)| a + b).collect();
        let est = dot(&next, v.data());
        v = Image2D::from_raw(w, h, next);
        if (est - lambda).abs() <= 1e-9 * est.abs() {
            lambda = est;
            break;
        }
        lambda = est;
    }
    // Power iteration approaches from below; pad slightly.
    (lambda.max(0.0)).sqrt() * 1.01
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TvConfig {
    lambda: f64,
    iters: usize,
    eps_tv: f64,
    steps: Option<(f64, f64)>,
}

impl Default for TvConfig {
    fn default() -> Self {
        TvConfig { lambda: 0.01, iters: 300, eps_tv: 1e-3, steps: None }
    }
}

impl TvConfig {
    /// Step sizes default to `tau = sigma = 0.9 / L`.
    pub fn new(lambda: f64, iters: usize, eps_tv: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(SsiError::param(format!("lambda must be >= 0, got {lambda}")));
        }
        if iters < 1 {
            return Err(SsiError::param("iters must be >= 1"));
        }
        if !(eps_tv > 0.0 && eps_tv.is_finite()) {
            return Err(SsiError::param(format!("eps_tv must be > 0, got {eps_tv}")));
        }
        Ok(TvConfig { lambda, iters, eps_tv, steps: None })
    }

    /// Explicit primal/dual steps, checked against the operator norm of `model`
    /// on `w x h` images: `tau * sigma * L^2 <= 1`.
    pub fn with_steps(self, tau: f64, sigma: f64, model: &ForwardModel, w: usize, h: usize) -> Result<Self> {
        if !(tau > 0.0 && sigma > 0.0) {
            return Err(SsiError::param("step sizes must be positive"));
        }
        let l = operator_norm(model, w, h);
        if tau * sigma * l * l > 1.0 {
            return Err(SsiError::param(format!(
                "step sizes violate tau*sigma*L^2 <= 1 (tau={tau}, sigma={sigma}, L={l:.4})"
            )));
        }
        Ok(TvConfig { steps: Some((tau, sigma)), ..self })
    }

    pub fn with_iters(self, iters: usize) -> Result<Self> {
        Self::new(self.lambda, iters, self.eps_tv).map(|c| TvConfig { steps: self.steps, ..c })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn iters(&self) -> usize {
        self.iters
    }

    pub fn eps_tv(&self) -> f64 {
        self.eps_tv
    }

    pub fn steps(&self) -> Option<(f64, f64)> {
        self.steps
    }
}

/// Chambolle-Pock primal-dual solver for `min 0.5||k*x - y||^2 + lambda TV(x)`,
/// over-relaxation 1, started at `x = y`.
pub fn chambolle_pock_tv(y: &Image2D, model: &ForwardModel, cfg: &TvConfig) -> Result<Image2D> {
    chambolle_pock_trace(y, model, cfg, |_, _| {})
}

/// As [`chambolle_pock_tv`], calling `observe(iteration, x)` after every iteration.
pub fn chambolle_pock_trace(
    y: &Image2D,
    model: &ForwardModel,
    cfg: &TvConfig,
    mut observe: impl FnMut(usize, &Image2D),
) -> Result<Image2D> {
    model.check(y)?;
    let (w, h) = y.shape();
    let n = w * h;
    let (tau, sigma) = match cfg.steps {
        Some(s) => s,
        None => {
            let l = operator_norm(model, w, h);
            (0.9 / l, 0.9 / l)
        }
    };
    let lambda = cfg.lambda;
    let mut x = y.clone();
    let mut xbar = x.clone();
    let mut p = vec![0.0; n];
    let mut qx = vec![0.0; n];
    let mut qy = vec![0.0; n];
    for it in 1..=cfg.iters {
        // dual ascent for the data term: prox of sigma F*, F(z) = 0.5||z - y||^2
        let ax = model.apply(&xbar);
        for i in 0..n {
            p[i] = (p[i] + sigma * (ax.data()[i] - y.data()[i])) / (1.0 + sigma);
        }
        // dual ascent for TV: projection onto the pointwise ball of radius lambda
        let (gx, gy) = gradient(&xbar);
        for i in 0..n {
            let a = qx[i] + sigma * gx[i];
            let b = qy[i] + sigma * gy[i];
            let norm = (a * a + b * b).sqrt();
            let scale = if norm > lambda { if norm > 0.0 { lambda / norm } else { 0.0 } } else { 1.0 };
            qx[i] = a * scale;
            qy[i] = b * scale;
        }
        let atp = model.adjoint(&Image2D::from_raw(w, h, p.clone()));
        let gtq = gradient_adjoint(&qx, &qy, w, h);
        let mut next = vec![0.0; n];
        let mut bar = vec![0.0; n];
        for i in 0..n {
            next[i] = x.data()[i] - tau * (atp.data()[i] + gtq.data()[i]);
            bar[i] = 2.0 * next[i] - x.data()[i];
        }
        x = Image2D::from_raw(w, h, next);
        xbar = Image2D::from_raw(w, h, bar);
        observe(it, &x);
    }
    if x.data().iter().any(|v| !v.is_finite()) {
        return Err(SsiError::param("chambolle_pock_tv diverged; check step sizes"));
    }
    Ok(x)
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub image: Image2D,
    /// Smoothed objective of `image`.
    pub objective: f64,
    pub iterations: usize,
    /// Set when a line search found no decrease; `image` is then the best iterate.
    pub line_search_failed: bool,
}

fn smoothed_objective_and_grad(
    x: &Image2D,
    y: &Image2D,
    model: &ForwardModel,
    lambda: f64,
    eps: f64,
) -> (f64, Vec<f64>) {
    let (w, h) = x.shape();
    let ax = model.apply(x);
    let resid: Vec<f64> = ax.data().iter().zip(y.data()).map(|(a, b)| a - b).collect();
    let mut f = 0.5 * dot(&resid, &resid);
    let mut grad = model.adjoint(&Image2D::from_raw(w, h, resid)).into_vec();
    if lambda > 0.0 {
        let (mut gx, mut gy) = gradient(x);
        for i in 0..gx.len() {
            let s = (gx[i] * gx[i] + gy[i] * gy[i] + eps * eps).sqrt();
            f += lambda * s;
            gx[i] *= lambda / s;
            gy[i] *= lambda / s;
        }
        let tv = gradient_adjoint(&gx, &gy, w, h);
        grad.iter_mut().zip(tv.data()).for_each(|(g, t)| *g += t);
    }
    (f, grad)
}

/// Polak-Ribière conjugate gradient on `0.5||k*x - y||^2 + lambda sum sqrt(|grad x|^2 + eps^2)`,
/// restarted every 32 iterations, with Armijo backtracking. Started at `x = y`.
pub fn cg_tv(y: &Image2D, model: &ForwardModel, cfg: &TvConfig) -> Result<CgOutcome> {
    cg_tv_trace(y, model, cfg, |_, _| {})
}

/// As [`cg_tv`], calling `observe(iteration, objective)` after every accepted step.
pub fn cg_tv_trace(
    y: &Image2D,
    model: &ForwardModel,
    cfg: &TvConfig,
    mut observe: impl FnMut(usize, f64),
) -> Result<CgOutcome> {
    const RESTART: usize = 32;
    const ARMIJO_C: f64 = 1e-4;
    const MAX_BACKTRACK: usize = 60;
    model.check(y)?;
    let (w, h) = y.shape();
    let (lambda, eps) = (cfg.lambda, cfg.eps_tv);
    let mut x = y.clone();
    let (mut f, mut g) = smoothed_objective_and_grad(&x, y, model, lambda, eps);
    let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut step: f64 = 1.0;
    let mut iterations = 0;
    let mut failed = false;
    for it in 0..cfg.iters {
        if dot(&g, &g).sqrt() < 1e-8 {
            break;
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut t = (step * 2.0).min(1e3);
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let cand: Vec<f64> = x.data().iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let cand = Image2D::from_raw(w, h, cand);
            let (fc, gc) = smoothed_objective_and_grad(&cand, y, model, lambda, eps);
            if fc <= f + ARMIJO_C * t * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            warn!("cg_tv: line search failed at iteration {it}; returning best iterate");
            failed = true;
            break;
        };
        step = t;
        let beta = if (it + 1) % RESTART == 0 {
            0.0
        } else {
            let num: f64 = gn.iter().zip(&g).map(|(a, b)| a * (a - b)).sum();
            (num / dot(&g, &g)).max(0.0)
        };
        d = gn.iter().zip(&d).map(|(gi, di)| -gi + beta * di).collect();
        x = xn;
        f = fnew;
        g = gn;
        iterations = it + 1;
        observe(iterations, f);
    }
    Ok(CgOutcome { image: x, objective: f, iterations, line_search_failed: failed })
}

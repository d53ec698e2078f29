use super::layers::{
    avg_pool2, avg_pool2_backward, concat, conv_forward, conv_input_grad, conv_param_grad, leaky_relu_backward,
    leaky_relu_inplace, split, upsample_nearest2, upsample_nearest2_backward, Act,
};
use super::ModelParams;
use crate::error::{Result, SsiError};
use crate::tensor::Image2D;

/// Activations cached by [`unet_forward`] plus the gradients filled in by
/// [`unet_backward`], congruent to [`ModelParams::values`].
#[derive(Clone, Debug, Default)]
pub struct GradTape {
    token: Option<u64>,
    shape: (usize, usize),
    // Per layer: (input, output after activation).
    cache: Vec<(Act, Act)>,
    grads: Vec<f64>,
    input_grad: Option<Image2D>,
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parameter gradients of the last backward pass.
    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn into_grads(self) -> Vec<f64> {
        self.grads
    }

    /// `dL/d input` of the last backward pass.
    pub fn input_grad(&self) -> Option<&Image2D> {
        self.input_grad.as_ref()
    }

    pub fn is_recorded(&self) -> bool {
        self.token.is_some()
    }

    /// Add an extra gradient term (e.g. a regularizer) and drop cached activations.
    pub(crate) fn add_grads(&mut self, extra: &[f64]) {
        self.cache = Vec::new();
        self.grads.iter_mut().zip(extra).for_each(|(g, e)| *g += e);
    }
}

fn check_input(params: &ModelParams, input: &Image2D) -> Result<()> {
    let g = params.config().granularity();
    let (w, h) = input.shape();
    if w == 0 || h == 0 || w % g != 0 || h % g != 0 {
        return Err(SsiError::param(format!(
            "input {w}x{h} must have sides divisible by {g} for depth {}",
            params.config().depth
        )));
    }
    Ok(())
}

struct Recorder<'a> {
    params: &'a ModelParams,
    cache: Option<&'a mut Vec<(Act, Act)>>,
    next: usize,
}

impl Recorder<'_> {
    fn conv(&mut self, x: Act, activate: bool) -> Act {
        let spec = self.params.layers()[self.next];
        self.next += 1;
        let vals = self.params.values();
        let mut y = conv_forward(&x, spec.weights(vals), Some(spec.bias(vals)), spec.cout, spec.ksize);
        if activate {
            leaky_relu_inplace(&mut y);
        }
        if let Some(cache) = self.cache.as_deref_mut() {
            cache.push((x, y.clone()));
        }
        y
    }
}

/// Apply the network. With a tape, activations are recorded for [`unet_backward`].
pub fn unet_forward(params: &ModelParams, input: &Image2D, tape: Option<&mut GradTape>) -> Result<Image2D> {
    check_input(params, input)?;
    let (w, h) = input.shape();
    let depth = params.config().depth;
    let mut tape = tape;
    let mut cache = Vec::new();
    let recording = tape.is_some();
    let mut rec = Recorder { params, cache: if recording { Some(&mut cache) } else { None }, next: 0 };

    let mut cur = Act { c: 1, h, w, data: input.data().to_vec() };
    let mut skips = Vec::with_capacity(depth);
    for _ in 0..depth {
        let a = rec.conv(cur, true);
        let b = rec.conv(a, true);
        cur = avg_pool2(&b);
        skips.push(b);
    }
    let a = rec.conv(cur, true);
    cur = rec.conv(a, true);
    for skip in skips.iter().rev() {
        let up = upsample_nearest2(&cur);
        let a = rec.conv(concat(&up, skip), true);
        cur = rec.conv(a, true);
    }
    let out = rec.conv(cur, false);
    drop(rec);

    if let Some(t) = tape.as_deref_mut() {
        t.token = Some(params.token());
        t.shape = (w, h);
        t.cache = cache;
        t.grads.clear();
        t.input_grad = None;
    }
    Ok(Image2D::from_raw(w, h, out.data))
}

/// Reverse-mode pass: fills `tape` with `dL/dtheta` (and `dL/dinput`) given `dL/doutput`.
pub fn unet_backward(params: &ModelParams, tape: &mut GradTape, output_grad: &Image2D) -> Result<()> {
    match tape.token {
        None => return Err(SsiError::State("gradient tape has no recorded forward pass".into())),
        Some(t) if t != params.token() => {
            return Err(SsiError::State("gradient tape was recorded with different parameters".into()))
        }
        _ => {}
    }
    if output_grad.shape() != tape.shape {
        return Err(SsiError::param("output gradient shape does not match the recorded forward pass"));
    }
    let layers = params.layers();
    if tape.cache.len() != layers.len() {
        return Err(SsiError::State("gradient tape is incomplete".into()));
    }
    let vals = params.values();
    let depth = params.config().depth;
    let mut grads = vec![0.0; params.len()];
    let (w, h) = tape.shape;
    let cache = &tape.cache;

    // Backprop through layer `i` given dL/d(output after activation).
    let back = |i: usize, mut g: Act, activated: bool, grads: &mut Vec<f64>| -> Act {
        let spec = layers[i];
        let (x, y) = &cache[i];
        if activated {
            leaky_relu_backward(&mut g, y);
        }
        let (wpart, bpart) = grads.split_at_mut(spec.bias_offset);
        conv_param_grad(
            x,
            &g,
            spec.ksize,
            &mut wpart[spec.weight_offset..spec.weight_offset + spec.weight_len()],
            &mut bpart[..spec.cout],
        );
        conv_input_grad(&g, spec.weights(vals), spec.cin, spec.ksize)
    };

    let mut idx = layers.len() - 1;
    let mut g = back(idx, Act { c: 1, h, w, data: output_grad.data().to_vec() }, false, &mut grads);
    let mut skip_grads: Vec<Option<Act>> = vec![None; depth];
    for level in 0..depth {
        idx -= 1;
        g = back(idx, g, true, &mut grads);
        idx -= 1;
        g = back(idx, g, true, &mut grads);
        let up_channels = g.c - layers[2 * level].cout;
        let (g_up, g_skip) = split(&g, up_channels);
        skip_grads[level] = Some(g_skip);
        g = upsample_nearest2_backward(&g_up);
    }
    idx -= 1;
    g = back(idx, g, true, &mut grads);
    idx -= 1;
    g = back(idx, g, true, &mut grads);
    for level in (0..depth).rev() {
        let mut gb = avg_pool2_backward(&g);
        let gs = skip_grads[level].take().expect("skip gradient recorded");
        gb.data.iter_mut().zip(&gs.data).for_each(|(a, b)| *a += b);
        idx -= 1;
        g = back(idx, gb, true, &mut grads);
        idx -= 1;
        g = back(idx, g, true, &mut grads);
    }
    debug_assert_eq!(idx, 0);

    tape.grads = grads;
    tape.input_grad = Some(Image2D::from_raw(w, h, g.data));
    Ok(())
}

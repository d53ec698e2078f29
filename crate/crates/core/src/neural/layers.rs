//! Multi-channel activations and the layer primitives of the UNet, each with
//! its reverse-mode counterpart.

pub(crate) const LEAK: f64 = 0.01;

/// Pixels per im2col tile; bounds scratch memory independently of image size.
const TILE_PIXELS: usize = 4096;

/// Channel-major activation tensor `(channels, height, width)`.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Act {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Act {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Act { c, h, w, data: vec![0.0; c * h * w] }
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Rows of the im2col matrix for image rows `y0..y1`, laid out `(cin * k * k) x tile`.
fn im2col(x: &Act, k: usize, y0: usize, y1: usize, cols: &mut Vec<f64>) {
    let pad = (k / 2) as isize;
    let w = x.w;
    let tile = (y1 - y0) * w;
    cols.clear();
    cols.resize(x.c * k * k * tile, 0.0);
    let mut row = 0;
    for ci in 0..x.c {
        let plane = &x.data[ci * x.plane()..(ci + 1) * x.plane()];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut cols[row * tile..(row + 1) * tile];
                let ox = kx as isize - pad;
                for y in y0..y1 {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= x.h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let d = &mut dst[(y - y0) * w..(y - y0 + 1) * w];
                    let lo = (-ox).max(0) as usize;
                    let hi = (w as isize - ox).min(w as isize).max(0) as usize;
                    if lo < hi {
                        let s0 = (lo as isize + ox) as usize;
                        d[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                    }
                }
                row += 1;
            }
        }
    }
}

fn tile_rows(w: usize) -> usize {
    (TILE_PIXELS / w.max(1)).max(1)
}

/// `C (m x n) = alpha * A (m x k) * B (k x n) + beta * C`, explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() >= (m - 1) * rsa + (k.max(1) - 1) * csa + 1 || k == 0);
    debug_assert!(c.len() >= (m - 1) * rsc + n);
    // SAFETY: the asserted extents bound every index matrixmultiply touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Same-padded, stride-1 correlation: `y[co] = b[co] + sum_ci w[co, ci] (*) x[ci]`.
/// `weights` is `cout x (cin * k * k)` row-major.
pub(crate) fn conv_forward(x: &Act, weights: &[f64], bias: Option<&[f64]>, cout: usize, k: usize) -> Act {
    let kk = x.c * k * k;
    debug_assert_eq!(weights.len(), cout * kk);
    let hw = x.plane();
    let mut y = Act::zeros(cout, x.h, x.w);
    if k == 1 {
        gemm(cout, x.c, hw, weights, kk, 1, &x.data, hw, 1, 0.0, &mut y.data, hw);
    } else {
        let rows = tile_rows(x.w);
        let mut cols = Vec::new();
        let mut y0 = 0;
        while y0 < x.h {
            let y1 = (y0 + rows).min(x.h);
            let tile = (y1 - y0) * x.w;
            im2col(x, k, y0, y1, &mut cols);
            let off = y0 * x.w;
            gemm(cout, kk, tile, weights, kk, 1, &cols, tile, 1, 0.0, &mut y.data[off..], hw);
            y0 = y1;
        }
    }
    if let Some(b) = bias {
        for (co, plane) in y.data.chunks_exact_mut(hw).enumerate() {
            let bc = b[co];
            plane.iter_mut().for_each(|v| *v += bc);
        }
    }
    y
}

/// Accumulate `dL/dw` and `dL/db` for [`conv_forward`] given its input and output gradient.
pub(crate) fn conv_param_grad(x: &Act, gy: &Act, k: usize, dw: &mut [f64], db: &mut [f64]) {
    let kk = x.c * k * k;
    let hw = x.plane();
    let cout = gy.c;
    debug_assert_eq!(dw.len(), cout * kk);
    if k == 1 {
        // dW = gY (cout x hw) * X^T (hw x cin)
        gemm(cout, hw, x.c, &gy.data, hw, 1, &x.data, 1, hw, 1.0, dw, kk);
    } else {
        let rows = tile_rows(x.w);
        let mut cols = Vec::new();
        let mut y0 = 0;
        while y0 < x.h {
            let y1 = (y0 + rows).min(x.h);
            let tile = (y1 - y0) * x.w;
            im2col(x, k, y0, y1, &mut cols);
            let off = y0 * x.w;
            gemm(cout, tile, kk, &gy.data[off..], hw, 1, &cols, 1, tile, 1.0, dw, kk);
            y0 = y1;
        }
    }
    for (co, plane) in gy.data.chunks_exact(hw).enumerate() {
        db[co] += plane.iter().sum::<f64>();
    }
}

/// `dL/dx` for [`conv_forward`]: a correlation with the channel-transposed,
/// spatially flipped weights.
pub(crate) fn conv_input_grad(gy: &Act, weights: &[f64], cin: usize, k: usize) -> Act {
    let cout = gy.c;
    let k2 = k * k;
    let mut wt = vec![0.0; cin * cout * k2];
    for co in 0..cout {
        for ci in 0..cin {
            for t in 0..k2 {
                wt[ci * cout * k2 + co * k2 + (k2 - 1 - t)] = weights[co * cin * k2 + ci * k2 + t];
            }
        }
    }
    conv_forward(gy, &wt, None, cin, k)
}

pub(crate) fn leaky_relu_inplace(a: &mut Act) {
    a.data.iter_mut().for_each(|v| {
        if *v <= 0.0 {
            *v *= LEAK;
        }
    });
}

/// Multiply `grad` by the leaky-ReLU derivative, read off the activation output.
pub(crate) fn leaky_relu_backward(grad: &mut Act, out: &Act) {
    for (g, &o) in grad.data.iter_mut().zip(&out.data) {
        if o <= 0.0 {
            *g *= LEAK;
        }
    }
}

pub(crate) fn avg_pool2(x: &Act) -> Act {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut y = Act::zeros(x.c, h, w);
    for c in 0..x.c {
        let src = &x.data[c * x.plane()..(c + 1) * x.plane()];
        let dst = &mut y.data[c * h * w..(c + 1) * h * w];
        for yy in 0..h {
            let r0 = &src[(2 * yy) * x.w..(2 * yy + 1) * x.w];
            let r1 = &src[(2 * yy + 1) * x.w..(2 * yy + 2) * x.w];
            for xx in 0..w {
                dst[yy * w + xx] = 0.25 * (r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1]);
            }
        }
    }
    y
}

pub(crate) fn avg_pool2_backward(gy: &Act) -> Act {
    let (h, w) = (gy.h * 2, gy.w * 2);
    let mut gx = Act::zeros(gy.c, h, w);
    for c in 0..gy.c {
        let src = &gy.data[c * gy.plane()..(c + 1) * gy.plane()];
        let dst = &mut gx.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = 0.25 * src[(y / 2) * gy.w + x / 2];
            }
        }
    }
    gx
}

pub(crate) fn upsample_nearest2(x: &Act) -> Act {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut y = Act::zeros(x.c, h, w);
    for c in 0..x.c {
        let src = &x.data[c * x.plane()..(c + 1) * x.plane()];
        let dst = &mut y.data[c * h * w..(c + 1) * h * w];
        for yy in 0..h {
            for xx in 0..w {
                dst[yy * w + xx] = src[(yy / 2) * x.w + xx / 2];
            }
        }
    }
    y
}

pub(crate) fn upsample_nearest2_backward(gy: &Act) -> Act {
    let (h, w) = (gy.h / 2, gy.w / 2);
    let mut gx = Act::zeros(gy.c, h, w);
    for c in 0..gy.c {
        let src = &gy.data[c * gy.plane()..(c + 1) * gy.plane()];
        let dst = &mut gx.data[c * h * w..(c + 1) * h * w];
        for y in 0..gy.h {
            for x in 0..gy.w {
                dst[(y / 2) * w + x / 2] += src[y * gy.w + x];
            }
        }
    }
    gx
}

pub(crate) fn concat(a: &Act, b: &Act) -> Act {
    debug_assert_eq!((a.h, a.w), (b.h, b.w));
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Act { c: a.c + b.c, h: a.h, w: a.w, data }
}

pub(crate) fn split(g: &Act, first: usize) -> (Act, Act) {
    let cut = first * g.plane();
    (
        Act { c: first, h: g.h, w: g.w, data: g.data[..cut].to_vec() },
        Act { c: g.c - first, h: g.h, w: g.w, data: g.data[cut..].to_vec() },
    )
}

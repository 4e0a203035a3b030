//! Forward and backward kernels for the tiny backbone. Activations are
//! channel-major `[c][y][x]` slices.

/// Visits the valid output rows/cols for a 3x3 tap offset `(dy, dx)` with
/// zero padding of one pixel.
#[inline]
fn tap_range(offset: isize, n: usize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (n as isize - offset.max(0)) as usize;
    (lo, hi)
}

/// 3x3 convolution, stride 1, zero padding 1.
pub fn conv3x3_forward(
    input: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    out_c: usize,
) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; out_c * plane];
    for o in 0..out_c {
        let out_plane = &mut out[o * plane..(o + 1) * plane];
        out_plane.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..in_c {
            let in_plane = &input[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = tap_range(dy, h);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = tap_range(dx, w);
                    let wv = weight[((o * in_c + i) * 3 + ky) * 3 + kx];
                    for y in y0..y1 {
                        let src_row = (y as isize + dy) as usize * w;
                        let dst = &mut out_plane[y * w + x0..y * w + x1];
                        let src = &in_plane[(src_row as isize + x0 as isize + dx) as usize
                            ..(src_row as isize + x1 as isize + dx) as usize];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward(
    input: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    out_c: usize,
    grad_out: &[f64],
    need_input_grad: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane = h * w;
    let mut grad_in = if need_input_grad {
        vec![0.0; in_c * plane]
    } else {
        Vec::new()
    };
    let mut grad_w = vec![0.0; weight.len()];
    let mut grad_b = vec![0.0; out_c];
    for o in 0..out_c {
        let g_plane = &grad_out[o * plane..(o + 1) * plane];
        grad_b[o] = g_plane.iter().sum();
        for i in 0..in_c {
            let in_plane = &input[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = tap_range(dy, h);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = tap_range(dx, w);
                    let widx = ((o * in_c + i) * 3 + ky) * 3 + kx;
                    let wv = weight[widx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let src_start = ((y as isize + dy) * w as isize + x0 as isize + dx) as usize;
                        let g = &g_plane[y * w + x0..y * w + x1];
                        let s = &in_plane[src_start..src_start + (x1 - x0)];
                        acc += g.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                        if need_input_grad {
                            let gi = &mut grad_in[i * plane + src_start..i * plane + src_start + (x1 - x0)];
                            for (d, gv) in gi.iter_mut().zip(g) {
                                *d += wv * gv;
                            }
                        }
                    }
                    grad_w[widx] = acc;
                }
            }
        }
    }
    (grad_in, grad_w, grad_b)
}

pub fn relu_inplace(x: &mut [f64]) {
    x.iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
}

/// Zeroes gradient entries whose pre-activation was not positive.
pub fn relu_backward_inplace(grad: &mut [f64], pre_activation: &[f64]) {
    for (g, z) in grad.iter_mut().zip(pre_activation) {
        if *z <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x2 average pooling with stride 2; `h` and `w` must be even.
pub fn avgpool2_forward(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let src = &input[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let s = src[2 * y * w + 2 * x]
                    + src[2 * y * w + 2 * x + 1]
                    + src[(2 * y + 1) * w + 2 * x]
                    + src[(2 * y + 1) * w + 2 * x + 1];
                out[(ch * oh + y) * ow + x] = 0.25 * s;
            }
        }
    }
    out
}

pub fn avgpool2_backward(grad_out: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut grad = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                grad[(ch * h + y) * w + x] = 0.25 * grad_out[(ch * oh + y / 2) * ow + x / 2];
            }
        }
    }
    grad
}

/// Mean over each channel plane.
pub fn global_mean(input: &[f64], c: usize, plane: usize) -> Vec<f64> {
    (0..c)
        .map(|ch| input[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64)
        .collect()
}

/// `out = W x` with `W` stored `[rows][cols]`.
pub fn matvec(weight: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| weight[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// Accumulates `dW += g xᵀ` and returns `Wᵀ g`.
pub fn matvec_backward(
    weight: &[f64],
    rows: usize,
    cols: usize,
    x: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
) -> Vec<f64> {
    let mut grad_x = vec![0.0; cols];
    for r in 0..rows {
        let g = grad_out[r];
        let wrow = &weight[r * cols..(r + 1) * cols];
        let gw = &mut grad_weight[r * cols..(r + 1) * cols];
        for c in 0..cols {
            gw[c] += g * x[c];
            grad_x[c] += g * wrow[c];
        }
    }
    grad_x
}

/// Gradient of `u / ‖u‖` given the normalized output `e` and `‖u‖`.
pub fn normalize_backward(e: &[f64], norm: f64, grad_e: &[f64]) -> Vec<f64> {
    let proj: f64 = e.iter().zip(grad_e).map(|(a, b)| a * b).sum();
    e.iter().zip(grad_e).map(|(ei, gi)| (gi - ei * proj) / norm).collect()
}

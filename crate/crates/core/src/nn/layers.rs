//! Forward and backward kernels on flat slices.
//!
//! Tensors are row-major: conv weights `[out_c, in_c, k, k]`, dense weights
//! `[out, in]`, feature maps `[c, h, w]`. Backward kernels accumulate into
//! the gradient slices they are given.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_c: usize,
    pub in_hw: usize,
    pub out_c: usize,
    pub out_hw: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.kernel * self.kernel
    }
    pub fn out_len(&self) -> usize {
        self.out_c * self.out_hw * self.out_hw
    }
    pub fn in_len(&self) -> usize {
        self.in_c * self.in_hw * self.in_hw
    }
}

/// Valid (unpadded) strided convolution followed by ReLU.
pub fn conv_relu_forward(s: &ConvShape, w: &[f64], b: &[f64], input: &[f64], out: &mut [f64]) {
    let (k, st, ih, oh) = (s.kernel, s.stride, s.in_hw, s.out_hw);
    for oc in 0..s.out_c {
        let plane = &mut out[oc * oh * oh..(oc + 1) * oh * oh];
        plane.iter_mut().for_each(|v| *v = b[oc]);
        for ic in 0..s.in_c {
            let src = &input[ic * ih * ih..(ic + 1) * ih * ih];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w[((oc * s.in_c + ic) * k + ky) * k + kx];
                    for oy in 0..oh {
                        let row = &src[(oy * st + ky) * ih + kx..];
                        let dst = &mut plane[oy * oh..(oy + 1) * oh];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            *d += wv * row[ox * st];
                        }
                    }
                }
            }
        }
        plane.iter_mut().for_each(|v| *v = v.max(0.0));
    }
}

/// Backward of [`conv_relu_forward`]. `out` is the post-ReLU activation,
/// `d_out` the gradient w.r.t. it. `d_in` may be skipped for the first layer.
pub fn conv_relu_backward(
    s: &ConvShape,
    w: &[f64],
    input: &[f64],
    out: &[f64],
    d_out: &[f64],
    d_w: &mut [f64],
    d_b: &mut [f64],
    d_in: Option<&mut [f64]>,
) {
    let (k, st, ih, oh) = (s.kernel, s.stride, s.in_hw, s.out_hw);
    let mut d_pre = alloc::vec![0.0; s.out_len()];
    for (i, dp) in d_pre.iter_mut().enumerate() {
        if out[i] > 0.0 {
            *dp = d_out[i];
        }
    }
    for oc in 0..s.out_c {
        let dplane = &d_pre[oc * oh * oh..(oc + 1) * oh * oh];
        d_b[oc] += dplane.iter().sum::<f64>();
        for ic in 0..s.in_c {
            let src = &input[ic * ih * ih..(ic + 1) * ih * ih];
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        let row = &src[(oy * st + ky) * ih + kx..];
                        let drow = &dplane[oy * oh..(oy + 1) * oh];
                        for (ox, d) in drow.iter().enumerate() {
                            acc += d * row[ox * st];
                        }
                    }
                    d_w[((oc * s.in_c + ic) * k + ky) * k + kx] += acc;
                }
            }
        }
    }
    if let Some(d_in) = d_in {
        for oc in 0..s.out_c {
            let dplane = &d_pre[oc * oh * oh..(oc + 1) * oh * oh];
            for ic in 0..s.in_c {
                let dsrc = &mut d_in[ic * ih * ih..(ic + 1) * ih * ih];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w[((oc * s.in_c + ic) * k + ky) * k + kx];
                        for oy in 0..oh {
                            let base = (oy * st + ky) * ih + kx;
                            let drow = &dplane[oy * oh..(oy + 1) * oh];
                            for (ox, d) in drow.iter().enumerate() {
                                dsrc[base + ox * st] += wv * d;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `out = W x + b`.
pub fn dense_forward(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, y) in out.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        *y = b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
    }
}

/// Backward of [`dense_forward`] given the gradient w.r.t. the pre-activation.
pub fn dense_backward(
    w: &[f64],
    x: &[f64],
    d_y: &[f64],
    d_w: &mut [f64],
    d_b: &mut [f64],
    d_x: Option<&mut [f64]>,
) {
    let n_in = x.len();
    for (o, &g) in d_y.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        d_b[o] += g;
        let drow = &mut d_w[o * n_in..(o + 1) * n_in];
        for (dw, xv) in drow.iter_mut().zip(x) {
            *dw += g * xv;
        }
    }
    if let Some(d_x) = d_x {
        for (o, &g) in d_y.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &w[o * n_in..(o + 1) * n_in];
            for (dx, wv) in d_x.iter_mut().zip(row) {
                *dx += g * wv;
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Cached LSTM step. Gate order in the stacked weights is input, forget, cell, output.
#[derive(Debug, Clone, Default)]
pub struct LstmCache {
    pub x: alloc::vec::Vec<f64>,
    pub h_prev: alloc::vec::Vec<f64>,
    pub c_prev: alloc::vec::Vec<f64>,
    /// Post-activation gates, `4 * hidden`.
    pub gates: alloc::vec::Vec<f64>,
    pub c: alloc::vec::Vec<f64>,
    pub tanh_c: alloc::vec::Vec<f64>,
    pub h: alloc::vec::Vec<f64>,
}

pub fn lstm_forward(
    w_ih: &[f64],
    w_hh: &[f64],
    b: &[f64],
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> LstmCache {
    let hid = h_prev.len();
    let mut pre = alloc::vec![0.0; 4 * hid];
    dense_forward(w_ih, b, x, &mut pre);
    for (g, p) in pre.iter_mut().enumerate() {
        let row = &w_hh[g * hid..(g + 1) * hid];
        *p += row.iter().zip(h_prev).map(|(a, c)| a * c).sum::<f64>();
    }
    let mut gates = pre;
    for j in 0..hid {
        gates[j] = sigmoid(gates[j]);
        gates[hid + j] = sigmoid(gates[hid + j]);
        gates[2 * hid + j] = libm::tanh(gates[2 * hid + j]);
        gates[3 * hid + j] = sigmoid(gates[3 * hid + j]);
    }
    let mut c = alloc::vec![0.0; hid];
    let mut tanh_c = alloc::vec![0.0; hid];
    let mut h = alloc::vec![0.0; hid];
    for j in 0..hid {
        c[j] = gates[hid + j] * c_prev[j] + gates[j] * gates[2 * hid + j];
        tanh_c[j] = libm::tanh(c[j]);
        h[j] = gates[3 * hid + j] * tanh_c[j];
    }
    LstmCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gates,
        c,
        tanh_c,
        h,
    }
}

/// Backward of one LSTM step. Returns `(d_x, d_h_prev, d_c_prev)`.
pub fn lstm_backward(
    w_ih: &[f64],
    w_hh: &[f64],
    cache: &LstmCache,
    d_h: &[f64],
    d_c_next: &[f64],
    d_w_ih: &mut [f64],
    d_w_hh: &mut [f64],
    d_b: &mut [f64],
) -> (
    alloc::vec::Vec<f64>,
    alloc::vec::Vec<f64>,
    alloc::vec::Vec<f64>,
) {
    let hid = cache.h.len();
    let g = &cache.gates;
    let mut d_pre = alloc::vec![0.0; 4 * hid];
    let mut d_c_prev = alloc::vec![0.0; hid];
    for j in 0..hid {
        let (i, f, cc, o) = (g[j], g[hid + j], g[2 * hid + j], g[3 * hid + j]);
        let tc = cache.tanh_c[j];
        let d_o = d_h[j] * tc;
        let dc = d_c_next[j] + d_h[j] * o * (1.0 - tc * tc);
        let d_i = dc * cc;
        let d_g = dc * i;
        let d_f = dc * cache.c_prev[j];
        d_c_prev[j] = dc * f;
        d_pre[j] = d_i * i * (1.0 - i);
        d_pre[hid + j] = d_f * f * (1.0 - f);
        d_pre[2 * hid + j] = d_g * (1.0 - cc * cc);
        d_pre[3 * hid + j] = d_o * o * (1.0 - o);
    }
    let mut d_x = alloc::vec![0.0; cache.x.len()];
    let mut d_h_prev = alloc::vec![0.0; hid];
    dense_backward(w_ih, &cache.x, &d_pre, d_w_ih, d_b, Some(&mut d_x));
    let mut scratch_b = alloc::vec![0.0; 4 * hid];
    dense_backward(
        w_hh,
        &cache.h_prev,
        &d_pre,
        d_w_hh,
        &mut scratch_b,
        Some(&mut d_h_prev),
    );
    (d_x, d_h_prev, d_c_prev)
}

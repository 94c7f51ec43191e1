//! Stacked LSTM with a linear head, with hand-written backpropagation through
//! time.
//!
//! All parameters live in one flat buffer so the optimizer and the gradient
//! check can treat them uniformly. Layer `l` owns a gate matrix of shape
//! `4H x (I_l + H)` (row-major, gate order input, forget, cell, output) and a
//! bias of length `4H`; the head is `O x H` plus an `O` bias.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub seq_len: usize,
    pub output_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self { input_dim: 20, hidden: 16, layers: 2, seq_len: 5, output_dim: 3 }
    }
}

#[derive(Clone, Copy, Debug)]
struct LayerOffsets {
    input: usize,
    w: usize,
    b: usize,
}

/// Parameter layout of an [`Architecture`].
#[derive(Clone, Debug)]
pub struct Layout {
    arch: Architecture,
    layers: Vec<LayerOffsets>,
    head_w: usize,
    head_b: usize,
    len: usize,
}

impl Layout {
    pub fn new(arch: Architecture) -> Self {
        let h = arch.hidden;
        let mut offset = 0;
        let mut layers = Vec::with_capacity(arch.layers);
        for l in 0..arch.layers {
            let input = if l == 0 { arch.input_dim } else { h };
            let w = offset;
            offset += 4 * h * (input + h);
            let b = offset;
            offset += 4 * h;
            layers.push(LayerOffsets { input, w, b });
        }
        let head_w = offset;
        offset += arch.output_dim * h;
        let head_b = offset;
        offset += arch.output_dim;
        Self { arch, layers, head_w, head_b, len: offset }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    /// Gate-matrix fan-in of each parameter index, used for initialization.
    pub(crate) fn init_ranges(&self) -> Vec<(std::ops::Range<usize>, f64, bool)> {
        let h = self.arch.hidden;
        let mut out = Vec::new();
        for l in &self.layers {
            let bound = 1.0 / ((l.input + h) as f64).sqrt();
            out.push((l.w..l.b, bound, false));
            out.push((l.b..l.b + 4 * h, bound, true));
        }
        let bound = 1.0 / (h as f64).sqrt();
        out.push((self.head_w..self.head_b, bound, false));
        out.push((self.head_b..self.len, 0.0, false));
        out
    }

    pub(crate) fn forget_bias_range(&self, layer: usize) -> std::ops::Range<usize> {
        let b = self.layers[layer].b;
        let h = self.arch.hidden;
        b + h..b + 2 * h
    }

    pub(crate) fn layer_weight_range(&self, layer: usize) -> std::ops::Range<usize> {
        self.layers[layer].w..self.layers[layer].b
    }

    pub(crate) fn layer_bias_range(&self, layer: usize) -> std::ops::Range<usize> {
        let b = self.layers[layer].b;
        b..b + 4 * self.arch.hidden
    }

    pub(crate) fn head_weight_range(&self) -> std::ops::Range<usize> {
        self.head_w..self.head_b
    }

    pub(crate) fn head_bias_range(&self) -> std::ops::Range<usize> {
        self.head_b..self.len
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one forward pass, reused across windows.
#[derive(Clone, Debug)]
pub struct Workspace {
    // Per layer, per step: concatenated input [x_t; h_{t-1}].
    z: Vec<Vec<f64>>,
    // Per layer, per step: gate activations i, f, g, o (4H).
    gates: Vec<Vec<f64>>,
    // Per layer, (T + 1) * H cell states, index 0 is the zero initial state.
    cell: Vec<Vec<f64>>,
    // Per layer, T * H hidden outputs.
    hidden: Vec<Vec<f64>>,
    // Backward scratch.
    d_below: Vec<f64>,
    d_above: Vec<f64>,
    da: Vec<f64>,
    dh_next: Vec<f64>,
    dc_next: Vec<f64>,
}

impl Workspace {
    pub fn new(layout: &Layout) -> Self {
        let a = layout.arch;
        let h = a.hidden;
        let t = a.seq_len;
        let z = layout.layers.iter().map(|l| vec![0.0; t * (l.input + h)]).collect();
        let gates = layout.layers.iter().map(|_| vec![0.0; t * 4 * h]).collect();
        let cell = layout.layers.iter().map(|_| vec![0.0; (t + 1) * h]).collect();
        let hidden = layout.layers.iter().map(|_| vec![0.0; t * h]).collect();
        let widest = a.input_dim.max(h);
        Self {
            z,
            gates,
            cell,
            hidden,
            d_below: vec![0.0; t * widest],
            d_above: vec![0.0; t * h],
            da: vec![0.0; 4 * h],
            dh_next: vec![0.0; h],
            dc_next: vec![0.0; h],
        }
    }
}

/// Forward pass over one window (`seq_len * input_dim`, row per step).
/// Writes the prediction into `out` and keeps activations in `ws`.
pub fn forward(layout: &Layout, params: &[f64], window: &[f64], ws: &mut Workspace, out: &mut [f64]) {
    let a = layout.arch;
    let h = a.hidden;
    let t_len = a.seq_len;
    debug_assert_eq!(window.len(), t_len * a.input_dim);
    for (l, lo) in layout.layers.iter().enumerate() {
        let zdim = lo.input + h;
        let w = &params[lo.w..lo.b];
        let b = &params[lo.b..lo.b + 4 * h];
        ws.cell[l][..h].fill(0.0);
        for t in 0..t_len {
            // Assemble z = [x_t; h_{t-1}].
            {
                let (z_all, prev_hidden) = (&mut ws.z[l], &ws.hidden[l]);
                let z = &mut z_all[t * zdim..(t + 1) * zdim];
                if l == 0 {
                    z[..lo.input].copy_from_slice(&window[t * lo.input..(t + 1) * lo.input]);
                } else {
                    z[..lo.input].copy_from_slice(&ws.hidden[l - 1][t * h..(t + 1) * h]);
                }
                if t == 0 {
                    z[lo.input..].fill(0.0);
                } else {
                    z[lo.input..].copy_from_slice(&prev_hidden[(t - 1) * h..t * h]);
                }
            }
            let z = &ws.z[l][t * zdim..(t + 1) * zdim];
            let gates = &mut ws.gates[l][t * 4 * h..(t + 1) * 4 * h];
            for r in 0..4 * h {
                let row = &w[r * zdim..(r + 1) * zdim];
                let mut acc = b[r];
                for (wi, zi) in row.iter().zip(z) {
                    acc += wi * zi;
                }
                gates[r] = if (2 * h..3 * h).contains(&r) { acc.tanh() } else { sigmoid(acc) };
            }
            let (c_prev_all, c_rest) = ws.cell[l].split_at_mut((t + 1) * h);
            let c_prev = &c_prev_all[t * h..];
            let c = &mut c_rest[..h];
            let hid = &mut ws.hidden[l][t * h..(t + 1) * h];
            for j in 0..h {
                let (i_g, f_g, g_g, o_g) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                c[j] = f_g * c_prev[j] + i_g * g_g;
                hid[j] = o_g * c[j].tanh();
            }
        }
    }
    let top = &ws.hidden[a.layers - 1][(t_len - 1) * h..t_len * h];
    let hw = &params[layout.head_w..layout.head_b];
    let hb = &params[layout.head_b..layout.len];
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = hb[k];
        for j in 0..h {
            acc += hw[k * h + j] * top[j];
        }
        *o = acc;
    }
}

/// Accumulates `∂loss/∂params` into `grad` given `d_out = ∂loss/∂prediction`
/// for the window last passed to [`forward`] with the same workspace.
pub fn backward(layout: &Layout, params: &[f64], ws: &mut Workspace, d_out: &[f64], grad: &mut [f64]) {
    let a = layout.arch;
    let h = a.hidden;
    let t_len = a.seq_len;
    let top = a.layers - 1;

    // Head.
    ws.d_above.fill(0.0);
    {
        let top_h = &ws.hidden[top][(t_len - 1) * h..t_len * h];
        let hw = &params[layout.head_w..layout.head_b];
        for (k, dk) in d_out.iter().enumerate() {
            grad[layout.head_b + k] += dk;
            for j in 0..h {
                grad[layout.head_w + k * h + j] += dk * top_h[j];
                ws.d_above[(t_len - 1) * h + j] += dk * hw[k * h + j];
            }
        }
    }

    for l in (0..a.layers).rev() {
        let lo = layout.layers[l];
        let zdim = lo.input + h;
        let w = &params[lo.w..lo.b];
        ws.dh_next.fill(0.0);
        ws.dc_next.fill(0.0);
        ws.d_below[..t_len * lo.input].fill(0.0);
        for t in (0..t_len).rev() {
            let gates = &ws.gates[l][t * 4 * h..(t + 1) * 4 * h];
            let c_prev = &ws.cell[l][t * h..(t + 1) * h];
            let c = &ws.cell[l][(t + 1) * h..(t + 2) * h];
            for j in 0..h {
                let (i_g, f_g, g_g, o_g) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let tc = c[j].tanh();
                let dh = ws.d_above[t * h + j] + ws.dh_next[j];
                let dc = ws.dc_next[j] + dh * o_g * (1.0 - tc * tc);
                ws.da[j] = dc * g_g * i_g * (1.0 - i_g);
                ws.da[h + j] = dc * c_prev[j] * f_g * (1.0 - f_g);
                ws.da[2 * h + j] = dc * i_g * (1.0 - g_g * g_g);
                ws.da[3 * h + j] = dh * tc * o_g * (1.0 - o_g);
                ws.dc_next[j] = dc * f_g;
            }
            let z = &ws.z[l][t * zdim..(t + 1) * zdim];
            ws.dh_next.fill(0.0);
            for r in 0..4 * h {
                let dar = ws.da[r];
                if dar == 0.0 {
                    continue;
                }
                grad[lo.b + r] += dar;
                let g_row = &mut grad[lo.w + r * zdim..lo.w + (r + 1) * zdim];
                for (g, zi) in g_row.iter_mut().zip(z) {
                    *g += dar * zi;
                }
                let w_row = &w[r * zdim..(r + 1) * zdim];
                let d_in = &mut ws.d_below[t * lo.input..(t + 1) * lo.input];
                for (d, wi) in d_in.iter_mut().zip(&w_row[..lo.input]) {
                    *d += dar * wi;
                }
                for (d, wi) in ws.dh_next.iter_mut().zip(&w_row[lo.input..]) {
                    *d += dar * wi;
                }
            }
        }
        if l > 0 {
            // Gradient w.r.t. this layer's inputs is the hidden-state
            // gradient of the layer below.
            let (src, dst) = (&ws.d_below[..t_len * h], &mut ws.d_above[..t_len * h]);
            dst.copy_from_slice(src);
        }
    }
}

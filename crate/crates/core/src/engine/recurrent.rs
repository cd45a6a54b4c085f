//! LSTM, GRU and bidirectional-LSTM cells and layers with backpropagation
//! through time.
//!
//! Every gate owns a weight matrix of shape `[n_h x (n_h + n_in)]` acting on
//! the concatenation `[h_prev, x]`, and a bias of shape `[n_h]`.

use super::ops::{dot, sigmoid};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Borrowed LSTM parameters (forget, input, output and candidate gates).
#[derive(Clone, Copy)]
pub struct LstmWeights<'a> {
    pub w_f: &'a Tensor,
    pub w_i: &'a Tensor,
    pub w_o: &'a Tensor,
    pub w_c: &'a Tensor,
    pub b_f: &'a Tensor,
    pub b_i: &'a Tensor,
    pub b_o: &'a Tensor,
    pub b_c: &'a Tensor,
}

/// Gradient accumulators matching [`LstmWeights`] field by field.
pub struct LstmGrads<'a> {
    pub w_f: &'a mut [f64],
    pub w_i: &'a mut [f64],
    pub w_o: &'a mut [f64],
    pub w_c: &'a mut [f64],
    pub b_f: &'a mut [f64],
    pub b_i: &'a mut [f64],
    pub b_o: &'a mut [f64],
    pub b_c: &'a mut [f64],
}

fn gate_dims(w: &Tensor, b: &Tensor, name: &str) -> Result<(usize, usize)> {
    let (rows, cols) = w.dims2()?;
    if b.shape() != [rows] {
        return Err(Error::dim(format!("{name}: bias {:?} vs {rows} rows", b.shape())));
    }
    if cols < rows {
        return Err(Error::dim(format!("{name}: {cols} columns cannot hold [h, x] for {rows} units")));
    }
    Ok((rows, cols - rows))
}

impl LstmWeights<'_> {
    /// `(n_h, n_in)`, checking every gate agrees.
    pub fn dims(&self) -> Result<(usize, usize)> {
        let d = gate_dims(self.w_f, self.b_f, "forget gate")?;
        for (w, b, name) in [
            (self.w_i, self.b_i, "input gate"),
            (self.w_o, self.b_o, "output gate"),
            (self.w_c, self.b_c, "candidate"),
        ] {
            if gate_dims(w, b, name)? != d {
                return Err(Error::dim(format!("{name} shape disagrees with forget gate")));
            }
        }
        Ok(d)
    }
}

/// Everything one LSTM step produced, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LstmStep {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

fn affine<'a>(w: &'a Tensor, b: &'a Tensor, z: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
    let cols = z.len();
    w.data().chunks_exact(cols).zip(b.data()).map(move |(row, &bias)| bias + dot(row, z))
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(a.len() + b.len());
    z.extend_from_slice(a);
    z.extend_from_slice(b);
    z
}

fn lstm_cell_raw(x: &[f64], h_prev: &[f64], c_prev: &[f64], w: &LstmWeights) -> LstmStep {
    let z = concat(h_prev, x);
    let f: Vec<f64> = affine(w.w_f, w.b_f, &z).map(sigmoid).collect();
    let i: Vec<f64> = affine(w.w_i, w.b_i, &z).map(sigmoid).collect();
    let o: Vec<f64> = affine(w.w_o, w.b_o, &z).map(sigmoid).collect();
    let g: Vec<f64> = affine(w.w_c, w.b_c, &z).map(f64::tanh).collect();
    let c: Vec<f64> = (0..f.len()).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h = o.iter().zip(&tanh_c).map(|(a, b)| a * b).collect();
    LstmStep { h, c, f, i, o, g, tanh_c }
}

/// One LSTM step with gate activations exposed.
pub fn lstm_cell_forward(x: &Tensor, h_prev: &Tensor, c_prev: &Tensor, w: &LstmWeights) -> Result<LstmStep> {
    let (n_h, n_in) = w.dims()?;
    if x.shape() != [n_in] || h_prev.shape() != [n_h] || c_prev.shape() != [n_h] {
        return Err(Error::dim(format!(
            "lstm cell expects x[{n_in}], h[{n_h}], c[{n_h}]; got {:?}, {:?}, {:?}",
            x.shape(),
            h_prev.shape(),
            c_prev.shape()
        )));
    }
    if x.data().iter().chain(h_prev.data()).chain(c_prev.data()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("lstm cell input"));
    }
    Ok(lstm_cell_raw(x.data(), h_prev.data(), c_prev.data(), w))
}

pub fn lstm_cell_step(x: &Tensor, h_prev: &Tensor, c_prev: &Tensor, w: &LstmWeights) -> Result<(Tensor, Tensor)> {
    let step = lstm_cell_forward(x, h_prev, c_prev, w)?;
    let n = step.h.len();
    Ok((Tensor::from_parts(vec![n], step.h), Tensor::from_parts(vec![n], step.c)))
}

/// Recorded forward pass of one LSTM layer from a zero initial state.
#[derive(Clone, Debug)]
pub struct LstmTrace {
    pub steps: Vec<LstmStep>,
    n_h: usize,
}

impl LstmTrace {
    pub fn output(&self, return_sequence: bool) -> Tensor {
        if return_sequence {
            let data = self.steps.iter().flat_map(|s| s.h.iter().copied()).collect();
            Tensor::from_parts(vec![self.steps.len(), self.n_h], data)
        } else {
            Tensor::from_parts(vec![self.n_h], self.steps.last().map(|s| s.h.clone()).unwrap_or_default())
        }
    }
}

fn check_seq(seq: &Tensor, n_in: usize, what: &str) -> Result<usize> {
    let (t_len, cols) = seq.dims2()?;
    if t_len == 0 {
        return Err(Error::EmptySequence);
    }
    if cols != n_in {
        return Err(Error::dim(format!("{what} expects {n_in} features per step, got {cols}")));
    }
    if seq.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("recurrent input"));
    }
    Ok(t_len)
}

pub fn lstm_layer_trace(seq: &Tensor, w: &LstmWeights) -> Result<LstmTrace> {
    let (n_h, n_in) = w.dims()?;
    let t_len = check_seq(seq, n_in, "lstm layer")?;
    Ok(lstm_trace_raw(seq, w, n_h, t_len))
}

pub(crate) fn lstm_trace_raw(seq: &Tensor, w: &LstmWeights, n_h: usize, t_len: usize) -> LstmTrace {
    let mut steps: Vec<LstmStep> = Vec::with_capacity(t_len);
    let zeros = vec![0.0; n_h];
    for t in 0..t_len {
        let (h_prev, c_prev) = match steps.last() {
            Some(s) => (&s.h[..], &s.c[..]),
            None => (&zeros[..], &zeros[..]),
        };
        let step = lstm_cell_raw(seq.row(t), h_prev, c_prev, w);
        steps.push(step);
    }
    LstmTrace { steps, n_h }
}

/// Runs the layer from `h_0 = c_0 = 0`; returns `[T x n_h]` or the final `[n_h]`.
pub fn lstm_layer_forward(seq: &Tensor, w: &LstmWeights, return_sequence: bool) -> Result<Tensor> {
    Ok(lstm_layer_trace(seq, w)?.output(return_sequence))
}

fn accumulate_gate(dz: &[f64], z: &[f64], w: &Tensor, dw: &mut [f64], db: &mut [f64], dzcat: &mut [f64]) {
    let cols = z.len();
    for (r, &d) in dz.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        db[r] += d;
        let row = &w.data()[r * cols..(r + 1) * cols];
        let drow = &mut dw[r * cols..(r + 1) * cols];
        for j in 0..cols {
            drow[j] += d * z[j];
            dzcat[j] += d * row[j];
        }
    }
}

/// Backpropagation through time. `d_h` is the loss gradient w.r.t. every
/// hidden output, `[T x n_h]` row-major (zeros except the last row when only
/// the final state was consumed).
pub fn lstm_layer_backward(
    seq: &Tensor,
    w: &LstmWeights,
    trace: &LstmTrace,
    d_h: &[f64],
    grads: &mut LstmGrads,
) -> Tensor {
    let n_h = trace.n_h;
    let (t_len, n_in) = (seq.shape()[0], seq.shape()[1]);
    let zeros = vec![0.0; n_h];
    let mut dx = vec![0.0; t_len * n_in];
    let mut dh_next = vec![0.0; n_h];
    let mut dc_next = vec![0.0; n_h];
    let mut dzf = vec![0.0; n_h];
    let mut dzi = vec![0.0; n_h];
    let mut dzo = vec![0.0; n_h];
    let mut dzg = vec![0.0; n_h];
    for t in (0..t_len).rev() {
        let s = &trace.steps[t];
        let (h_prev, c_prev) = if t > 0 {
            (&trace.steps[t - 1].h[..], &trace.steps[t - 1].c[..])
        } else {
            (&zeros[..], &zeros[..])
        };
        for k in 0..n_h {
            let dh = d_h[t * n_h + k] + dh_next[k];
            let d_o = dh * s.tanh_c[k];
            let dc = dc_next[k] + dh * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
            let d_f = dc * c_prev[k];
            let d_i = dc * s.g[k];
            let d_g = dc * s.i[k];
            dc_next[k] = dc * s.f[k];
            dzf[k] = d_f * s.f[k] * (1.0 - s.f[k]);
            dzi[k] = d_i * s.i[k] * (1.0 - s.i[k]);
            dzo[k] = d_o * s.o[k] * (1.0 - s.o[k]);
            dzg[k] = d_g * (1.0 - s.g[k] * s.g[k]);
        }
        let z = concat(h_prev, seq.row(t));
        let mut dz = vec![0.0; n_h + n_in];
        accumulate_gate(&dzf, &z, w.w_f, grads.w_f, grads.b_f, &mut dz);
        accumulate_gate(&dzi, &z, w.w_i, grads.w_i, grads.b_i, &mut dz);
        accumulate_gate(&dzo, &z, w.w_o, grads.w_o, grads.b_o, &mut dz);
        accumulate_gate(&dzg, &z, w.w_c, grads.w_c, grads.b_c, &mut dz);
        dh_next.copy_from_slice(&dz[..n_h]);
        dx[t * n_in..(t + 1) * n_in].copy_from_slice(&dz[n_h..]);
    }
    Tensor::from_parts(vec![t_len, n_in], dx)
}

/// Borrowed GRU parameters (update, reset and candidate).
#[derive(Clone, Copy)]
pub struct GruWeights<'a> {
    pub w_z: &'a Tensor,
    pub w_r: &'a Tensor,
    pub w_h: &'a Tensor,
    pub b_z: &'a Tensor,
    pub b_r: &'a Tensor,
    pub b_h: &'a Tensor,
}

pub struct GruGrads<'a> {
    pub w_z: &'a mut [f64],
    pub w_r: &'a mut [f64],
    pub w_h: &'a mut [f64],
    pub b_z: &'a mut [f64],
    pub b_r: &'a mut [f64],
    pub b_h: &'a mut [f64],
}

impl GruWeights<'_> {
    pub fn dims(&self) -> Result<(usize, usize)> {
        let d = gate_dims(self.w_z, self.b_z, "update gate")?;
        for (w, b, name) in [(self.w_r, self.b_r, "reset gate"), (self.w_h, self.b_h, "candidate")] {
            if gate_dims(w, b, name)? != d {
                return Err(Error::dim(format!("{name} shape disagrees with update gate")));
            }
        }
        Ok(d)
    }
}

#[derive(Clone, Debug)]
pub struct GruStep {
    pub h: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub h_tilde: Vec<f64>,
    rh: Vec<f64>,
}

fn gru_cell_raw(x: &[f64], h_prev: &[f64], w: &GruWeights) -> GruStep {
    let zc = concat(h_prev, x);
    let z: Vec<f64> = affine(w.w_z, w.b_z, &zc).map(sigmoid).collect();
    let r: Vec<f64> = affine(w.w_r, w.b_r, &zc).map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let h_tilde: Vec<f64> = affine(w.w_h, w.b_h, &concat(&rh, x)).map(f64::tanh).collect();
    let h = (0..z.len()).map(|k| (1.0 - z[k]) * h_prev[k] + z[k] * h_tilde[k]).collect();
    GruStep { h, z, r, h_tilde, rh }
}

pub fn gru_cell_step(x: &Tensor, h_prev: &Tensor, w: &GruWeights) -> Result<Tensor> {
    let (n_h, n_in) = w.dims()?;
    if x.shape() != [n_in] || h_prev.shape() != [n_h] {
        return Err(Error::dim(format!(
            "gru cell expects x[{n_in}], h[{n_h}]; got {:?}, {:?}",
            x.shape(),
            h_prev.shape()
        )));
    }
    if x.data().iter().chain(h_prev.data()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gru cell input"));
    }
    Ok(Tensor::from_parts(vec![n_h], gru_cell_raw(x.data(), h_prev.data(), w).h))
}

#[derive(Clone, Debug)]
pub struct GruTrace {
    pub steps: Vec<GruStep>,
    n_h: usize,
}

impl GruTrace {
    pub fn output(&self, return_sequence: bool) -> Tensor {
        if return_sequence {
            let data = self.steps.iter().flat_map(|s| s.h.iter().copied()).collect();
            Tensor::from_parts(vec![self.steps.len(), self.n_h], data)
        } else {
            Tensor::from_parts(vec![self.n_h], self.steps.last().map(|s| s.h.clone()).unwrap_or_default())
        }
    }
}

pub fn gru_layer_trace(seq: &Tensor, w: &GruWeights) -> Result<GruTrace> {
    let (n_h, n_in) = w.dims()?;
    let t_len = check_seq(seq, n_in, "gru layer")?;
    let mut steps: Vec<GruStep> = Vec::with_capacity(t_len);
    let zeros = vec![0.0; n_h];
    for t in 0..t_len {
        let h_prev = steps.last().map(|s| &s.h[..]).unwrap_or(&zeros[..]);
        let step = gru_cell_raw(seq.row(t), h_prev, w);
        steps.push(step);
    }
    Ok(GruTrace { steps, n_h })
}

pub fn gru_layer_forward(seq: &Tensor, w: &GruWeights, return_sequence: bool) -> Result<Tensor> {
    Ok(gru_layer_trace(seq, w)?.output(return_sequence))
}

pub fn gru_layer_backward(
    seq: &Tensor,
    w: &GruWeights,
    trace: &GruTrace,
    d_h: &[f64],
    grads: &mut GruGrads,
) -> Tensor {
    let n_h = trace.n_h;
    let (t_len, n_in) = (seq.shape()[0], seq.shape()[1]);
    let zeros = vec![0.0; n_h];
    let mut dx = vec![0.0; t_len * n_in];
    let mut dh_next = vec![0.0; n_h];
    let mut dzh = vec![0.0; n_h];
    let mut dzz = vec![0.0; n_h];
    let mut dzr = vec![0.0; n_h];
    for t in (0..t_len).rev() {
        let s = &trace.steps[t];
        let h_prev = if t > 0 { &trace.steps[t - 1].h[..] } else { &zeros[..] };
        let x = seq.row(t);
        let mut dh_prev = vec![0.0; n_h];
        let mut dz_gate = vec![0.0; n_h];
        for k in 0..n_h {
            let dh = d_h[t * n_h + k] + dh_next[k];
            dz_gate[k] = dh * (s.h_tilde[k] - h_prev[k]);
            dzh[k] = dh * s.z[k] * (1.0 - s.h_tilde[k] * s.h_tilde[k]);
            dh_prev[k] = dh * (1.0 - s.z[k]);
        }
        // candidate path through [r*h, x]
        let cand_in = concat(&s.rh, x);
        let mut d_cand = vec![0.0; n_h + n_in];
        accumulate_gate(&dzh, &cand_in, w.w_h, grads.w_h, grads.b_h, &mut d_cand);
        for k in 0..n_h {
            let d_rh = d_cand[k];
            dh_prev[k] += d_rh * s.r[k];
            let dr = d_rh * h_prev[k];
            dzr[k] = dr * s.r[k] * (1.0 - s.r[k]);
            dzz[k] = dz_gate[k] * s.z[k] * (1.0 - s.z[k]);
        }
        let zc = concat(h_prev, x);
        let mut dzc = vec![0.0; n_h + n_in];
        accumulate_gate(&dzz, &zc, w.w_z, grads.w_z, grads.b_z, &mut dzc);
        accumulate_gate(&dzr, &zc, w.w_r, grads.w_r, grads.b_r, &mut dzc);
        for k in 0..n_h {
            dh_next[k] = dh_prev[k] + dzc[k];
        }
        let dxt = &mut dx[t * n_in..(t + 1) * n_in];
        for j in 0..n_in {
            dxt[j] = dzc[n_h + j] + d_cand[n_h + j];
        }
    }
    Tensor::from_parts(vec![t_len, n_in], dx)
}

fn reverse_rows(seq: &Tensor) -> Tensor {
    let t_len = seq.shape()[0];
    let data = (0..t_len).rev().flat_map(|t| seq.row(t).iter().copied()).collect();
    Tensor::from_parts(seq.shape().to_vec(), data)
}

/// Forward-direction and reverse-direction LSTM traces over one sequence.
#[derive(Clone, Debug)]
pub struct BiLstmTrace {
    pub fwd: LstmTrace,
    pub bwd: LstmTrace,
    reversed: Tensor,
}

impl BiLstmTrace {
    /// Sequence output row `t` is `[h_fwd(t) ; h_bwd(t)]` with the backward
    /// state aligned to the original time index. Final output concatenates
    /// the last state of each direction.
    pub fn output(&self, return_sequence: bool) -> Tensor {
        let n_h = self.fwd.n_h;
        let t_len = self.fwd.steps.len();
        if return_sequence {
            let mut data = Vec::with_capacity(t_len * 2 * n_h);
            for t in 0..t_len {
                data.extend_from_slice(&self.fwd.steps[t].h);
                data.extend_from_slice(&self.bwd.steps[t_len - 1 - t].h);
            }
            Tensor::from_parts(vec![t_len, 2 * n_h], data)
        } else {
            let mut data = self.fwd.steps[t_len - 1].h.clone();
            data.extend_from_slice(&self.bwd.steps[t_len - 1].h);
            Tensor::from_parts(vec![2 * n_h], data)
        }
    }
}

pub fn bilstm_layer_trace(seq: &Tensor, fwd: &LstmWeights, bwd: &LstmWeights) -> Result<BiLstmTrace> {
    let (n_h, n_in) = fwd.dims()?;
    if bwd.dims()? != (n_h, n_in) {
        return Err(Error::dim("forward and backward directions differ in shape"));
    }
    let t_len = check_seq(seq, n_in, "bidirectional lstm")?;
    let reversed = reverse_rows(seq);
    Ok(BiLstmTrace {
        fwd: lstm_trace_raw(seq, fwd, n_h, t_len),
        bwd: lstm_trace_raw(&reversed, bwd, n_h, t_len),
        reversed,
    })
}

/// `[h_T^fwd ; h_T^bwd]`, the backward direction having consumed the
/// reversed sequence.
pub fn bidirectional_lstm_forward(seq: &Tensor, fwd: &LstmWeights, bwd: &LstmWeights) -> Result<Tensor> {
    Ok(bilstm_layer_trace(seq, fwd, bwd)?.output(false))
}

pub fn bilstm_layer_backward(
    seq: &Tensor,
    fwd: &LstmWeights,
    bwd: &LstmWeights,
    trace: &BiLstmTrace,
    d_out: &[f64],
    return_sequence: bool,
    g_fwd: &mut LstmGrads,
    g_bwd: &mut LstmGrads,
) -> Tensor {
    let n_h = trace.fwd.n_h;
    let t_len = trace.fwd.steps.len();
    let mut d_f = vec![0.0; t_len * n_h];
    let mut d_b = vec![0.0; t_len * n_h];
    if return_sequence {
        for t in 0..t_len {
            let row = &d_out[t * 2 * n_h..(t + 1) * 2 * n_h];
            d_f[t * n_h..(t + 1) * n_h].copy_from_slice(&row[..n_h]);
            let rt = t_len - 1 - t;
            d_b[rt * n_h..(rt + 1) * n_h].copy_from_slice(&row[n_h..]);
        }
    } else {
        let last = (t_len - 1) * n_h;
        d_f[last..].copy_from_slice(&d_out[..n_h]);
        d_b[last..].copy_from_slice(&d_out[n_h..]);
    }
    let dx_f = lstm_layer_backward(seq, fwd, &trace.fwd, &d_f, g_fwd);
    let dx_b = lstm_layer_backward(&trace.reversed, bwd, &trace.bwd, &d_b, g_bwd);
    let dx_b = reverse_rows(&dx_b);
    let data = dx_f.data().iter().zip(dx_b.data()).map(|(a, b)| a + b).collect();
    Tensor::from_parts(seq.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) struct OwnedLstm {
        pub t: Vec<Tensor>,
    }

    impl OwnedLstm {
        pub fn zeros(n_h: usize, n_in: usize) -> Self {
            let mut t = Vec::new();
            for _ in 0..4 {
                t.push(Tensor::zeros(&[n_h, n_h + n_in]));
            }
            for _ in 0..4 {
                t.push(Tensor::zeros(&[n_h]));
            }
            Self { t }
        }

        pub fn random(n_h: usize, n_in: usize, rng: &mut ChaCha8Rng) -> Self {
            let mut s = Self::zeros(n_h, n_in);
            for t in &mut s.t {
                t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            }
            s
        }

        pub fn weights(&self) -> LstmWeights<'_> {
            LstmWeights {
                w_f: &self.t[0],
                w_i: &self.t[1],
                w_o: &self.t[2],
                w_c: &self.t[3],
                b_f: &self.t[4],
                b_i: &self.t[5],
                b_o: &self.t[6],
                b_c: &self.t[7],
            }
        }
    }

    fn vec1(v: &[f64]) -> Tensor {
        Tensor::vector(v.to_vec()).unwrap()
    }

    #[test]
    fn zero_weights_give_half_gates() {
        let p = OwnedLstm::zeros(3, 2);
        let c0 = vec1(&[0.4, -1.2, 2.0]);
        let step = lstm_cell_forward(&vec1(&[1.0, -1.0]), &vec1(&[0.1, 0.2, 0.3]), &c0, &p.weights()).unwrap();
        for k in 0..3 {
            assert_eq!(step.f[k], 0.5);
            assert_eq!(step.i[k], 0.5);
            assert_eq!(step.o[k], 0.5);
            assert_eq!(step.c[k], 0.5 * c0.data()[k]);
            assert!((step.h[k] - 0.5 * (0.5 * c0.data()[k]).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_gates_carry_cell() {
        let mut p = OwnedLstm::zeros(1, 1);
        p.t[4].data_mut()[0] = 20.0;
        p.t[5].data_mut()[0] = -20.0;
        p.t[6].data_mut()[0] = 20.0;
        let (h, c) = lstm_cell_step(&vec1(&[0.7]), &vec1(&[0.0]), &vec1(&[0.3]), &p.weights()).unwrap();
        assert!((c.data()[0] - 0.3).abs() < 1e-8);
        assert!((h.data()[0] - 0.3f64.tanh()).abs() < 1e-8);
        assert!((h.data()[0] - 0.2913).abs() < 1e-4);
    }

    #[test]
    fn lstm_dimension_errors() {
        let p = OwnedLstm::zeros(2, 3);
        assert!(matches!(
            lstm_cell_step(&vec1(&[1.0]), &vec1(&[0.0, 0.0]), &vec1(&[0.0, 0.0]), &p.weights()),
            Err(Error::Dimension(_))
        ));
        let empty = Tensor::zeros(&[0, 3]);
        assert!(matches!(lstm_layer_forward(&empty, &p.weights(), false), Err(Error::EmptySequence)));
    }

    #[test]
    fn lstm_layer_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = OwnedLstm::random(4, 3, &mut rng);
        let seq = Tensor::matrix(6, 3, (0..18).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let full = lstm_layer_forward(&seq, &p.weights(), true).unwrap();
        let last = lstm_layer_forward(&seq, &p.weights(), false).unwrap();
        assert_eq!(full.row(5), last.data());

        let one = Tensor::matrix(1, 3, seq.row(0).to_vec()).unwrap();
        let z = Tensor::zeros(&[4]);
        let (h, _) = lstm_cell_step(&vec1(seq.row(0)), &z, &z, &p.weights()).unwrap();
        assert_eq!(lstm_layer_forward(&one, &p.weights(), false).unwrap(), h);

        let zero = OwnedLstm::zeros(4, 3);
        let out = lstm_layer_forward(&seq, &zero.weights(), false).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn lstm_ranges_hold_for_extreme_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = OwnedLstm::random(5, 2, &mut rng);
        for t in &mut p.t {
            t.data_mut().iter_mut().for_each(|v| *v *= 3.0);
        }
        let seq = Tensor::matrix(8, 2, (0..16).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let trace = lstm_layer_trace(&seq, &p.weights()).unwrap();
        for s in &trace.steps {
            for gate in [&s.f, &s.i, &s.o] {
                assert!(gate.iter().all(|v| *v > 0.0 && *v < 1.0));
            }
            assert!(s.h.iter().all(|v| *v > -1.0 && *v < 1.0));
        }
    }

    fn gru_owned(n_h: usize, n_in: usize) -> Vec<Tensor> {
        let mut t = Vec::new();
        for _ in 0..3 {
            t.push(Tensor::zeros(&[n_h, n_h + n_in]));
        }
        for _ in 0..3 {
            t.push(Tensor::zeros(&[n_h]));
        }
        t
    }

    fn gru_weights(t: &[Tensor]) -> GruWeights<'_> {
        GruWeights { w_z: &t[0], w_r: &t[1], w_h: &t[2], b_z: &t[3], b_r: &t[4], b_h: &t[5] }
    }

    #[test]
    fn gru_zero_and_copy_gate() {
        let t = gru_owned(2, 1);
        let h = gru_cell_step(&vec1(&[3.0]), &vec1(&[0.8, -0.4]), &gru_weights(&t)).unwrap();
        assert_eq!(h.data(), &[0.4, -0.2]);

        let mut t = gru_owned(2, 1);
        t[3].fill(-20.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        t[2].data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let hp = vec1(&[0.8, -0.4]);
        let h = gru_cell_step(&vec1(&[3.0]), &hp, &gru_weights(&t)).unwrap();
        for (a, b) in h.data().iter().zip(hp.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn gru_convex_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let mut t = gru_owned(3, 2);
            for p in &mut t {
                p.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
            }
            let hp: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let bound = hp.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let h = gru_cell_step(&vec1(&[rng.random_range(-2.0..2.0), 0.5]), &vec1(&hp), &gru_weights(&t)).unwrap();
            assert!(h.data().iter().all(|v| v.abs() < bound));
        }
    }

    #[test]
    fn bilstm_matches_two_unidirectional_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = OwnedLstm::random(3, 2, &mut rng);
        let b = OwnedLstm::random(3, 2, &mut rng);
        let seq = Tensor::matrix(5, 2, (0..10).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let out = bidirectional_lstm_forward(&seq, &f.weights(), &b.weights()).unwrap();
        let hf = lstm_layer_forward(&seq, &f.weights(), false).unwrap();
        let hb = lstm_layer_forward(&reverse_rows(&seq), &b.weights(), false).unwrap();
        assert_eq!(&out.data()[..3], hf.data());
        assert_eq!(&out.data()[3..], hb.data());

        // palindrome with shared params -> halves equal
        let pal = Tensor::matrix(3, 2, vec![0.1, 0.2, -0.5, 0.3, 0.1, 0.2]).unwrap();
        let out = bidirectional_lstm_forward(&pal, &f.weights(), &f.weights()).unwrap();
        assert_eq!(&out.data()[..3], &out.data()[3..]);

        let z = OwnedLstm::zeros(3, 2);
        let out = bidirectional_lstm_forward(&seq, &z.weights(), &z.weights()).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }
}

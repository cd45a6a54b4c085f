//! Shared fixtures for the integration tests and the acceptance runner.
#![allow(dead_code)]

use hydrodeep::datapipe::{prepare, PipelineConfig, Prepared};
use hydrodeep::engine::{
    bilstm_layer_backward, bilstm_layer_trace, conv1d_backward, conv1d_forward, dense_backward, dense_forward,
    gru_layer_backward, gru_layer_trace, lstm_layer_backward, lstm_layer_trace, maxpool1d_backward,
    maxpool1d_indexed, time_dense_backward, time_dense_forward, Activation, GruGrads, GruWeights, LstmGrads,
    LstmWeights, Objective, ParamId, ParamStore, Tensor,
};
use hydrodeep::synth::{generate, SynthSpec, SynthWatershed};
use hydrodeep::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug)]
pub enum LayerKind {
    Dense(Activation),
    TimeDense,
    /// tanh convolution followed by max-pooling
    ConvPool,
    Lstm { return_sequence: bool },
    Gru { return_sequence: bool },
    BiLstm { return_sequence: bool },
}

impl LayerKind {
    pub const ALL: [LayerKind; 11] = [
        LayerKind::Dense(Activation::Identity),
        LayerKind::Dense(Activation::Tanh),
        LayerKind::Dense(Activation::Relu),
        LayerKind::TimeDense,
        LayerKind::ConvPool,
        LayerKind::Lstm { return_sequence: true },
        LayerKind::Lstm { return_sequence: false },
        LayerKind::Gru { return_sequence: true },
        LayerKind::Gru { return_sequence: false },
        LayerKind::BiLstm { return_sequence: true },
        LayerKind::BiLstm { return_sequence: false },
    ];
}

const T: usize = 6;
const N_IN: usize = 3;
const N_H: usize = 4;

/// One layer under a squared-error loss. The layer input is stored as the
/// first parameter so its gradient is checked too.
pub struct LayerCase {
    pub kind: LayerKind,
    pub params: ParamStore,
    pub target: Vec<f64>,
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn gate_names(prefix: &str, gates: &[&str]) -> Vec<String> {
    let mut v: Vec<String> = gates.iter().map(|g| format!("{prefix}w_{g}")).collect();
    v.extend(gates.iter().map(|g| format!("{prefix}b_{g}")));
    v
}

impl LayerCase {
    pub fn new(kind: LayerKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let add = |p: &mut ParamStore, name: &str, shape: &[usize], rng: &mut ChaCha8Rng| {
            p.insert(name, random(rng, shape)).unwrap();
        };
        let gates = |p: &mut ParamStore, prefix: &str, names: &[&str], rng: &mut ChaCha8Rng| {
            for (i, n) in gate_names(prefix, names).into_iter().enumerate() {
                let shape = if i < names.len() { vec![N_H, N_H + N_IN] } else { vec![N_H] };
                p.insert(n, random(rng, &shape)).unwrap();
            }
        };
        match kind {
            LayerKind::Dense(_) => {
                add(&mut p, "input", &[N_IN], &mut rng);
                add(&mut p, "w", &[N_H, N_IN], &mut rng);
                add(&mut p, "b", &[N_H], &mut rng);
            }
            LayerKind::TimeDense => {
                add(&mut p, "input", &[T, N_IN], &mut rng);
                add(&mut p, "w", &[N_H, N_IN], &mut rng);
                add(&mut p, "b", &[N_H], &mut rng);
            }
            LayerKind::ConvPool => {
                add(&mut p, "input", &[T, N_IN], &mut rng);
                add(&mut p, "kernel", &[N_H, N_IN, 2], &mut rng);
                add(&mut p, "bias", &[N_H], &mut rng);
            }
            LayerKind::Lstm { .. } => {
                add(&mut p, "input", &[T, N_IN], &mut rng);
                gates(&mut p, "", &["f", "i", "o", "c"], &mut rng);
            }
            LayerKind::Gru { .. } => {
                add(&mut p, "input", &[T, N_IN], &mut rng);
                gates(&mut p, "", &["z", "r", "h"], &mut rng);
            }
            LayerKind::BiLstm { .. } => {
                add(&mut p, "input", &[T, N_IN], &mut rng);
                gates(&mut p, "fwd.", &["f", "i", "o", "c"], &mut rng);
                gates(&mut p, "bwd.", &["f", "i", "o", "c"], &mut rng);
            }
        }
        let mut case = LayerCase { kind, params: p, target: Vec::new() };
        let n = case.forward_backward(None).unwrap().0.len();
        case.target = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        case
    }

    fn v(&self, i: usize) -> &Tensor {
        &self.params.values()[i]
    }

    /// Output, and when `d_out` is given, accumulated gradients.
    fn forward_backward(&mut self, d_out: Option<&dyn Fn(&[f64]) -> Vec<f64>>) -> Result<(Vec<f64>, ())> {
        let kind = self.kind;
        let x = self.v(0).clone();
        let out: Vec<f64>;
        match kind {
            LayerKind::Dense(act) => {
                let y = dense_forward(&x, self.v(1), self.v(2), act)?;
                out = y.data().to_vec();
                if let Some(f) = d_out {
                    let d = f(&out);
                    let (vals, grads) = self.params.split_mut();
                    let [gx, gw, gb] = grads.get_disjoint_mut([0, 1, 2]).unwrap();
                    let dx = dense_backward(x.data(), &vals[1], &out, act, &d, gw.data_mut(), gb.data_mut());
                    add_into(gx, &dx);
                }
            }
            LayerKind::TimeDense => {
                let y = time_dense_forward(&x, self.v(1), self.v(2), Activation::Tanh)?;
                out = y.data().to_vec();
                if let Some(f) = d_out {
                    let d = Tensor::new(y.shape().to_vec(), f(&out))?;
                    let (vals, grads) = self.params.split_mut();
                    let [gx, gw, gb] = grads.get_disjoint_mut([0, 1, 2]).unwrap();
                    let dx = time_dense_backward(&x, &vals[1], &y, Activation::Tanh, &d, gw.data_mut(), gb.data_mut());
                    add_into(gx, dx.data());
                }
            }
            LayerKind::ConvPool => {
                let c = conv1d_forward(&x, self.v(1), self.v(2), Activation::Tanh)?;
                let (y, arg) = maxpool1d_indexed(&c, 2);
                out = y.data().to_vec();
                if let Some(f) = d_out {
                    let d = Tensor::new(y.shape().to_vec(), f(&out))?;
                    let dc = maxpool1d_backward(c.shape(), &arg, &d);
                    let (vals, grads) = self.params.split_mut();
                    let [gx, gk, gb] = grads.get_disjoint_mut([0, 1, 2]).unwrap();
                    let dx = conv1d_backward(&x, &vals[1], &c, Activation::Tanh, &dc, gk.data_mut(), gb.data_mut());
                    add_into(gx, dx.data());
                }
            }
            LayerKind::Lstm { return_sequence } => {
                let w = lstm_w(self.params.values(), 1);
                let trace = lstm_layer_trace(&x, &w)?;
                out = trace.output(return_sequence).into_data();
                if let Some(f) = d_out {
                    let d = spread(&f(&out), return_sequence);
                    let (vals, grads) = self.params.split_mut();
                    let (gx, rest) = grads.split_first_mut().unwrap();
                    let dx = lstm_layer_backward(&x, &lstm_w(vals, 1), &trace, &d, &mut lstm_g(rest));
                    add_into(gx, dx.data());
                }
            }
            LayerKind::Gru { return_sequence } => {
                let v = self.params.values();
                let w = GruWeights { w_z: &v[1], w_r: &v[2], w_h: &v[3], b_z: &v[4], b_r: &v[5], b_h: &v[6] };
                let trace = gru_layer_trace(&x, &w)?;
                out = trace.output(return_sequence).into_data();
                if let Some(f) = d_out {
                    let d = spread(&f(&out), return_sequence);
                    let (vals, grads) = self.params.split_mut();
                    let w = GruWeights {
                        w_z: &vals[1],
                        w_r: &vals[2],
                        w_h: &vals[3],
                        b_z: &vals[4],
                        b_r: &vals[5],
                        b_h: &vals[6],
                    };
                    let (gx, rest) = grads.split_first_mut().unwrap();
                    let [w_z, w_r, w_h, b_z, b_r, b_h] =
                        <&mut [Tensor; 6]>::try_from(rest).unwrap().each_mut().map(|t| t.data_mut());
                    let dx = gru_layer_backward(&x, &w, &trace, &d, &mut GruGrads { w_z, w_r, w_h, b_z, b_r, b_h });
                    add_into(gx, dx.data());
                }
            }
            LayerKind::BiLstm { return_sequence } => {
                let v = self.params.values();
                let trace = bilstm_layer_trace(&x, &lstm_w(v, 1), &lstm_w(v, 9))?;
                out = trace.output(return_sequence).into_data();
                if let Some(f) = d_out {
                    let d = f(&out);
                    let (vals, grads) = self.params.split_mut();
                    let (gx, rest) = grads.split_first_mut().unwrap();
                    let (gf, gb) = rest.split_at_mut(8);
                    let dx = bilstm_layer_backward(
                        &x,
                        &lstm_w(vals, 1),
                        &lstm_w(vals, 9),
                        &trace,
                        &d,
                        return_sequence,
                        &mut lstm_g(gf),
                        &mut lstm_g(gb),
                    );
                    add_into(gx, dx.data());
                }
            }
        }
        Ok((out, ()))
    }
}

fn add_into(g: &mut Tensor, d: &[f64]) {
    g.data_mut().iter_mut().zip(d).for_each(|(a, b)| *a += b);
}

/// Gradient w.r.t. the final state only, spread over `[T x n_h]`.
fn spread(d: &[f64], return_sequence: bool) -> Vec<f64> {
    if return_sequence {
        return d.to_vec();
    }
    let mut full = vec![0.0; T * N_H];
    full[(T - 1) * N_H..].copy_from_slice(d);
    full
}

fn lstm_w(v: &[Tensor], at: usize) -> LstmWeights<'_> {
    LstmWeights {
        w_f: &v[at],
        w_i: &v[at + 1],
        w_o: &v[at + 2],
        w_c: &v[at + 3],
        b_f: &v[at + 4],
        b_i: &v[at + 5],
        b_o: &v[at + 6],
        b_c: &v[at + 7],
    }
}

fn lstm_g(g: &mut [Tensor]) -> LstmGrads<'_> {
    let [w_f, w_i, w_o, w_c, b_f, b_i, b_o, b_c] = <&mut [Tensor; 8]>::try_from(g).unwrap().each_mut().map(|t| t.data_mut());
    LstmGrads { w_f, w_i, w_o, w_c, b_f, b_i, b_o, b_c }
}

impl Objective for LayerCase {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn loss(&self) -> Result<f64> {
        let mut probe = LayerCase { kind: self.kind, params: self.params.clone(), target: Vec::new() };
        let out = probe.forward_backward(None)?.0;
        Ok(out.iter().zip(&self.target).map(|(o, t)| (o - t) * (o - t)).sum())
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        self.params.zero_grads();
        let target = self.target.clone();
        let seed = move |out: &[f64]| out.iter().zip(&target).map(|(o, t)| 2.0 * (o - t)).collect::<Vec<f64>>();
        let out = self.forward_backward(Some(&seed))?.0;
        Ok(out.iter().zip(&self.target).map(|(o, t)| (o - t) * (o - t)).sum())
    }
}

pub fn param_id(p: &ParamStore, name: &str) -> ParamId {
    p.id(name).unwrap_or_else(|| panic!("no parameter {name}"))
}

/// A synthetic watershed with default hydrology.
pub fn watershed(grid_count: usize, days: usize, seed: u64, noise_std: f64) -> SynthWatershed {
    generate(&SynthSpec { grid_count, days, seed, noise_std, ..SynthSpec::default() }).unwrap()
}

pub fn prepared(w: &SynthWatershed, lag: usize) -> Prepared {
    prepare(&w.grid, &w.series, &PipelineConfig { lag, ..PipelineConfig::default() }).unwrap()
}

//! Layer stack, parameter layout and the recorded forward/backward pass.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Arch, LayerGroup, ModelConfig};
use crate::datapipe::{PipelineConfig, Scaler};
use crate::engine::{
    self, bilstm_layer_backward, bilstm_layer_trace, conv1d_raw, dense_backward, dense_raw, gru_layer_backward,
    gru_layer_trace, lstm_layer_backward, lstm_layer_trace, maxpool1d_backward, maxpool1d_indexed,
    time_dense_backward, Activation, BiLstmTrace, GruGrads, GruTrace, GruWeights, LstmGrads, LstmTrace, LstmWeights,
    Mode, ParamId, ParamStore, Tensor,
};
use crate::error::{Error, Result};

/// One parameter as laid out by a configuration, before allocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: LayerGroup,
    #[serde(skip)]
    fans: Option<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum SeqLayer {
    Adapter { w: ParamId, b: ParamId },
    Conv { k: ParamId, b: ParamId },
    Pool { size: usize },
    Lstm { p: [ParamId; 8], return_seq: bool },
    Gru { p: [ParamId; 6], return_seq: bool },
    BiLstm { fwd: [ParamId; 8], bwd: [ParamId; 8], return_seq: bool },
    Flatten,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Head {
    day_w: ParamId,
    day_b: ParamId,
    dense_w: ParamId,
    dense_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

/// Layer structure derived from a config; parameter ids index `specs`.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub seq: Vec<SeqLayer>,
    pub head: Head,
    pub specs: Vec<ParamSpec>,
    pub feature_width: usize,
}

struct LayoutBuilder {
    specs: Vec<ParamSpec>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, group: LayerGroup, fans: Option<(usize, usize)>) -> ParamId {
        self.specs.push(ParamSpec { name, shape, group, fans });
        ParamId(self.specs.len() - 1)
    }

    fn weight(&mut self, name: String, shape: Vec<usize>, group: LayerGroup, fans: (usize, usize)) -> ParamId {
        self.push(name, shape, group, Some(fans))
    }

    fn bias(&mut self, name: String, n: usize, group: LayerGroup) -> ParamId {
        self.push(name, vec![n], group, None)
    }

    fn gates<const N: usize>(&mut self, prefix: &str, gates: [&str; N], n_h: usize, n_in: usize) -> Vec<ParamId> {
        let mut ids = Vec::with_capacity(2 * N);
        for g in gates {
            ids.push(self.weight(format!("{prefix}.w_{g}"), vec![n_h, n_h + n_in], LayerGroup::Temporal, (n_h + n_in, n_h)));
        }
        for g in gates {
            ids.push(self.bias(format!("{prefix}.b_{g}"), n_h, LayerGroup::Temporal));
        }
        ids
    }
}

fn build_err(stage: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Build { stage: stage.into(), reason: reason.into() }
}

/// Validates a configuration and lays out its layers and parameters.
pub(crate) fn layout(cfg: &ModelConfig) -> Result<Layout> {
    let positive = [
        ("lag", cfg.lag),
        ("grid_count", cfg.grid_count),
        ("adapter_width", cfg.adapter_width),
        ("dense_units", cfg.dense_units),
    ];
    for (name, v) in positive {
        if v == 0 {
            return Err(build_err("config", format!("{name} must be positive")));
        }
    }
    if !(0.0..1.0).contains(&cfg.dropout_rate) {
        return Err(build_err("dropout", format!("rate {} outside [0, 1)", cfg.dropout_rate)));
    }
    // caps keep a hostile config from requesting absurd allocations
    let widths = [cfg.adapter_width, cfg.conv_filters, cfg.lstm_units, cfg.dense_units, cfg.grid_count];
    if widths.iter().any(|&w| w > 4096) || cfg.lag > 4096 || cfg.conv_layers > 64 || cfg.lstm_layers > 64 {
        return Err(build_err("config", "layer sizes exceed supported limits"));
    }

    let (w1, w2) = cfg.input_widths();
    let a = cfg.adapter_width;
    let mut b = LayoutBuilder { specs: Vec::new() };
    let mut seq = Vec::new();

    let w = b.weight("adapter.seq.w".into(), vec![a, w1], LayerGroup::InputAdapter, (w1, a));
    let bb = b.bias("adapter.seq.b".into(), a, LayerGroup::InputAdapter);
    seq.push(SeqLayer::Adapter { w, b: bb });
    let day_w = b.weight("adapter.day.w".into(), vec![a, w2], LayerGroup::InputAdapter, (w2, a));
    let day_b = b.bias("adapter.day.b".into(), a, LayerGroup::InputAdapter);

    let mut len = cfg.lag;
    let mut channels = a;

    if cfg.arch.has_conv() {
        if cfg.conv_layers > 0 && (cfg.kernel_width == 0 || cfg.conv_filters == 0) {
            return Err(build_err("conv0", "kernel_width and conv_filters must be positive"));
        }
        for i in 0..cfg.conv_layers {
            let stage = format!("conv{i}");
            if len < cfg.kernel_width {
                return Err(build_err(
                    stage,
                    format!("sequence of length {len} is shorter than kernel width {}", cfg.kernel_width),
                ));
            }
            len = len + 1 - cfg.kernel_width;
            let kw = cfg.kernel_width;
            let k = b.weight(
                format!("{stage}.kernel"),
                vec![cfg.conv_filters, channels, kw],
                LayerGroup::Spatial,
                (channels * kw, cfg.conv_filters * kw),
            );
            let kb = b.bias(format!("{stage}.bias"), cfg.conv_filters, LayerGroup::Spatial);
            seq.push(SeqLayer::Conv { k, b: kb });
            channels = cfg.conv_filters;
        }
        if cfg.pool_size == 0 {
            return Err(build_err("maxpool", "pool size must be positive"));
        }
        if len / cfg.pool_size == 0 {
            return Err(build_err(
                "maxpool",
                format!("pooling {len} steps by {} leaves nothing", cfg.pool_size),
            ));
        }
        len /= cfg.pool_size;
        seq.push(SeqLayer::Pool { size: cfg.pool_size });
    }

    let feature_width = if cfg.arch == Arch::Cnn {
        seq.push(SeqLayer::Flatten);
        len * channels
    } else {
        if cfg.lstm_layers == 0 || cfg.lstm_units == 0 {
            return Err(build_err("recurrent", "needs at least one layer with positive units"));
        }
        let n_h = cfg.lstm_units;
        let mut n_in = channels;
        for i in 0..cfg.lstm_layers {
            let return_seq = i + 1 < cfg.lstm_layers;
            match cfg.arch {
                Arch::Gru => {
                    let ids = b.gates(&format!("gru{i}"), ["z", "r", "h"], n_h, n_in);
                    seq.push(SeqLayer::Gru { p: ids.try_into().unwrap(), return_seq });
                    n_in = n_h;
                }
                Arch::Bilstm => {
                    let f = b.gates(&format!("bilstm{i}.fwd"), ["f", "i", "o", "c"], n_h, n_in);
                    let r = b.gates(&format!("bilstm{i}.bwd"), ["f", "i", "o", "c"], n_h, n_in);
                    seq.push(SeqLayer::BiLstm { fwd: f.try_into().unwrap(), bwd: r.try_into().unwrap(), return_seq });
                    n_in = 2 * n_h;
                }
                _ => {
                    let ids = b.gates(&format!("lstm{i}"), ["f", "i", "o", "c"], n_h, n_in);
                    seq.push(SeqLayer::Lstm { p: ids.try_into().unwrap(), return_seq });
                    n_in = n_h;
                }
            }
        }
        n_in
    };

    let concat = feature_width + a;
    let dense_w = b.weight("dense.w".into(), vec![cfg.dense_units, concat], LayerGroup::Head, (concat, cfg.dense_units));
    let dense_b = b.bias("dense.b".into(), cfg.dense_units, LayerGroup::Head);
    let out_w = b.weight("output.w".into(), vec![1, cfg.dense_units], LayerGroup::Head, (cfg.dense_units, 1));
    let out_b = b.bias("output.b".into(), 1, LayerGroup::Head);

    Ok(Layout {
        seq,
        head: Head { day_w, day_b, dense_w, dense_b, out_w, out_b },
        specs: b.specs,
        feature_width,
    })
}

/// Parameter names, shapes and groups a configuration produces.
pub fn param_layout(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
    Ok(layout(cfg)?.specs)
}

/// Scaling and windowing context a trained model depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub pipeline: PipelineConfig,
    pub scaler: Scaler,
}

/// A built network: configuration, layer structure and parameters.
#[derive(Clone, Debug)]
pub struct ModelGraph {
    pub(crate) config: ModelConfig,
    pub(crate) params: ParamStore,
    pub(crate) groups: Vec<LayerGroup>,
    pub(crate) seq: Vec<SeqLayer>,
    pub(crate) head: Head,
    pub(crate) feature_width: usize,
    pub(crate) rng: ChaCha8Rng,
    pub preprocessing: Option<Preprocessing>,
    tape: Option<Tape>,
}

fn glorot<R: Rng>(rng: &mut R, fans: (usize, usize), n: usize) -> Vec<f64> {
    let limit = (6.0 / (fans.0 + fans.1) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..=limit)).collect()
}

/// Glorot-uniform weights, zero biases, all drawn from `seed`.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<ModelGraph> {
    let lay = layout(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    for spec in &lay.specs {
        let n: usize = spec.shape.iter().product();
        let data = match spec.fans {
            Some(f) => glorot(&mut rng, f, n),
            None => vec![0.0; n],
        };
        params.insert(spec.name.clone(), Tensor::from_parts(spec.shape.clone(), data))?;
    }
    Ok(ModelGraph {
        config: cfg.clone(),
        groups: lay.specs.iter().map(|s| s.group).collect(),
        params,
        seq: lay.seq,
        head: lay.head,
        feature_width: lay.feature_width,
        rng,
        preprocessing: None,
        tape: None,
    })
}

#[derive(Clone, Debug)]
enum Cache {
    Adapter { out: Tensor },
    Conv { out: Tensor },
    Pool { argmax: Vec<usize>, in_shape: Vec<usize> },
    Lstm(LstmTrace),
    Gru(GruTrace),
    BiLstm(BiLstmTrace),
    Flatten { in_shape: Vec<usize> },
}

/// Intermediate values of one recorded forward pass.
#[derive(Clone, Debug)]
struct Tape {
    inputs: Vec<Tensor>,
    caches: Vec<Cache>,
    mask: Option<Vec<f64>>,
    input2: Vec<f64>,
    day: Vec<f64>,
    concat: Vec<f64>,
    hidden: Vec<f64>,
    prediction: f64,
}

fn lstm_weights<'a>(v: &'a [Tensor], p: &[ParamId; 8]) -> LstmWeights<'a> {
    LstmWeights {
        w_f: &v[p[0].0],
        w_i: &v[p[1].0],
        w_o: &v[p[2].0],
        w_c: &v[p[3].0],
        b_f: &v[p[4].0],
        b_i: &v[p[5].0],
        b_o: &v[p[6].0],
        b_c: &v[p[7].0],
    }
}

fn gru_weights<'a>(v: &'a [Tensor], p: &[ParamId; 6]) -> GruWeights<'a> {
    GruWeights { w_z: &v[p[0].0], w_r: &v[p[1].0], w_h: &v[p[2].0], b_z: &v[p[3].0], b_r: &v[p[4].0], b_h: &v[p[5].0] }
}

fn disjoint<const N: usize>(grads: &mut [Tensor], ids: [ParamId; N]) -> [&mut [f64]; N] {
    grads
        .get_disjoint_mut(ids.map(|p| p.0))
        .expect("parameter ids are distinct")
        .map(|t| t.data_mut())
}

fn lstm_grads<'a>(grads: &'a mut [Tensor], p: &[ParamId; 8]) -> LstmGrads<'a> {
    let [w_f, w_i, w_o, w_c, b_f, b_i, b_o, b_c] = disjoint(grads, *p);
    LstmGrads { w_f, w_i, w_o, w_c, b_f, b_i, b_o, b_c }
}

fn last_row_grad(d: &Tensor, t_len: usize, n: usize, return_seq: bool) -> Vec<f64> {
    if return_seq {
        d.data().to_vec()
    } else {
        let mut full = vec![0.0; t_len * n];
        full[(t_len - 1) * n..].copy_from_slice(d.data());
        full
    }
}

impl ModelGraph {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn group_of(&self, id: ParamId) -> LayerGroup {
        self.groups[id.0]
    }

    /// Parameter name → group.
    pub fn group_map(&self) -> BTreeMap<String, LayerGroup> {
        self.params.ids().map(|id| (self.params.name(id).to_string(), self.groups[id.0])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.total_elements()
    }

    pub fn group_param_count(&self, group: LayerGroup) -> usize {
        self.params.ids().filter(|id| self.groups[id.0] == group).map(|id| self.params.value(id).len()).sum()
    }

    /// Sets `trainable` on every parameter according to its group.
    pub fn set_group_trainable(&mut self, group: LayerGroup, trainable: bool) {
        let ids: Vec<ParamId> = self.params.ids().filter(|id| self.groups[id.0] == group).collect();
        for id in ids {
            self.params.set_trainable(id, trainable);
        }
    }

    pub fn rng_state(&self) -> ([u8; 32], u128) {
        (self.rng.get_seed(), self.rng.get_word_pos())
    }

    pub(crate) fn set_rng_state(&mut self, seed: [u8; 32], word_pos: u128) {
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_word_pos(word_pos);
        self.rng = rng;
    }

    pub(crate) fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Overwrites every parameter, biases included, with `U(-scale, scale)`.
    /// Gradient checks use unit scale so no layer starts near-silent.
    pub fn randomize_uniform(&mut self, scale: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<ParamId> = self.params.ids().collect();
        for id in ids {
            for v in self.params.value_mut(id).data_mut() {
                *v = rng.random_range(-scale..=scale);
            }
        }
    }

    fn check_inputs(&self, input1: &Tensor, input2: &Tensor) -> Result<()> {
        let (w1, w2) = self.config.input_widths();
        if input1.shape() != [self.config.lag, w1] {
            return Err(Error::dim(format!(
                "input 1 must be ({}, {w1}), got {:?}",
                self.config.lag,
                input1.shape()
            )));
        }
        if input2.shape() != [w2] {
            return Err(Error::dim(format!("input 2 must have {w2} values, got {:?}", input2.shape())));
        }
        if input1.data().iter().chain(input2.data()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model input"));
        }
        Ok(())
    }

    fn run(&self, input1: &Tensor, input2: &Tensor, mode: Mode, rng: Option<&mut ChaCha8Rng>) -> Result<Tape> {
        self.check_inputs(input1, input2)?;
        let v = self.params.values();
        let mut inputs = Vec::with_capacity(self.seq.len());
        let mut caches = Vec::with_capacity(self.seq.len());
        let mut x = input1.clone();
        for layer in &self.seq {
            let (out, cache) = match *layer {
                SeqLayer::Adapter { w, b } => {
                    let out = engine::time_dense_forward(&x, &v[w.0], &v[b.0], Activation::Identity)?;
                    (out.clone(), Cache::Adapter { out })
                }
                SeqLayer::Conv { k, b } => {
                    let out = conv1d_raw(&x, &v[k.0], &v[b.0], Activation::Tanh);
                    (out.clone(), Cache::Conv { out })
                }
                SeqLayer::Pool { size } => {
                    let (out, argmax) = maxpool1d_indexed(&x, size);
                    (out, Cache::Pool { argmax, in_shape: x.shape().to_vec() })
                }
                SeqLayer::Lstm { p, return_seq } => {
                    let trace = lstm_layer_trace(&x, &lstm_weights(v, &p))?;
                    (trace.output(return_seq), Cache::Lstm(trace))
                }
                SeqLayer::Gru { p, return_seq } => {
                    let trace = gru_layer_trace(&x, &gru_weights(v, &p))?;
                    (trace.output(return_seq), Cache::Gru(trace))
                }
                SeqLayer::BiLstm { fwd, bwd, return_seq } => {
                    let trace = bilstm_layer_trace(&x, &lstm_weights(v, &fwd), &lstm_weights(v, &bwd))?;
                    (trace.output(return_seq), Cache::BiLstm(trace))
                }
                SeqLayer::Flatten => {
                    let in_shape = x.shape().to_vec();
                    let n = x.len();
                    (x.clone().reshape(vec![n])?, Cache::Flatten { in_shape })
                }
            };
            inputs.push(std::mem::replace(&mut x, out));
            caches.push(cache);
        }
        let features = x.into_data();

        let mask = match mode {
            Mode::Eval => None,
            Mode::Train if self.config.dropout_rate > 0.0 => {
                let rng = rng.ok_or_else(|| Error::State("training forward pass needs an rng".into()))?;
                Some(engine::dropout_mask(features.len(), self.config.dropout_rate, rng))
            }
            Mode::Train => None,
        };
        let h = &self.head;
        let day = dense_raw(input2.data(), &v[h.day_w.0], &v[h.day_b.0], Activation::Identity);
        let mut concat: Vec<f64> = match &mask {
            Some(m) => features.iter().zip(m).map(|(a, b)| a * b).collect(),
            None => features,
        };
        concat.extend_from_slice(&day);
        let hidden = dense_raw(&concat, &v[h.dense_w.0], &v[h.dense_b.0], Activation::Relu);
        let prediction = dense_raw(&hidden, &v[h.out_w.0], &v[h.out_b.0], Activation::Identity)[0];
        Ok(Tape { inputs, caches, mask, input2: input2.data().to_vec(), day, concat, hidden, prediction })
    }

    /// Evaluation-mode prediction in normalized units.
    pub fn predict(&self, input1: &Tensor, input2: &Tensor) -> Result<f64> {
        Ok(self.run(input1, input2, Mode::Eval, None)?.prediction)
    }

    /// Forward pass that records intermediates for a later [`Self::backward`].
    pub fn forward(&mut self, input1: &Tensor, input2: &Tensor, mode: Mode, rng: Option<&mut ChaCha8Rng>) -> Result<f64> {
        let tape = self.run(input1, input2, mode, rng)?;
        let pred = tape.prediction;
        self.tape = Some(tape);
        Ok(pred)
    }

    /// Accumulates `seed · d(prediction)/dθ` into every gradient buffer,
    /// frozen parameters included. Consumes the recorded pass.
    pub fn backward(&mut self, seed: f64) -> Result<()> {
        let tape = self.tape.take().ok_or_else(|| Error::State("backward called before forward".into()))?;
        let head = self.head;
        let fw = self.feature_width;
        let (values, grads) = self.params.split_mut();

        let [gw, gb] = disjoint(grads, [head.out_w, head.out_b]);
        let d_hidden = dense_backward(&tape.hidden, &values[head.out_w.0], &[tape.prediction], Activation::Identity, &[seed], gw, gb);
        let [gw, gb] = disjoint(grads, [head.dense_w, head.dense_b]);
        let d_concat = dense_backward(&tape.concat, &values[head.dense_w.0], &tape.hidden, Activation::Relu, &d_hidden, gw, gb);
        let [gw, gb] = disjoint(grads, [head.day_w, head.day_b]);
        dense_backward(&tape.input2, &values[head.day_w.0], &tape.day, Activation::Identity, &d_concat[fw..], gw, gb);

        let mut d_feat = d_concat[..fw].to_vec();
        if let Some(mask) = &tape.mask {
            d_feat.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
        }
        let mut d = Tensor::from_parts(vec![fw], d_feat);

        for (idx, layer) in self.seq.iter().enumerate().rev() {
            let x = &tape.inputs[idx];
            d = match (layer, &tape.caches[idx]) {
                (SeqLayer::Adapter { w, b }, Cache::Adapter { out }) => {
                    let [gw, gb] = disjoint(grads, [*w, *b]);
                    time_dense_backward(x, &values[w.0], out, Activation::Identity, &d, gw, gb)
                }
                (SeqLayer::Conv { k, b }, Cache::Conv { out }) => {
                    let [gk, gb] = disjoint(grads, [*k, *b]);
                    engine::conv1d_backward(x, &values[k.0], out, Activation::Tanh, &d, gk, gb)
                }
                (SeqLayer::Pool { .. }, Cache::Pool { argmax, in_shape }) => maxpool1d_backward(in_shape, argmax, &d),
                (SeqLayer::Flatten, Cache::Flatten { in_shape }) => d.reshape(in_shape.clone())?,
                (SeqLayer::Lstm { p, return_seq }, Cache::Lstm(trace)) => {
                    let n_h = values[p[0].0].shape()[0];
                    let dh = last_row_grad(&d, x.shape()[0], n_h, *return_seq);
                    let w = lstm_weights(values, p);
                    lstm_layer_backward(x, &w, trace, &dh, &mut lstm_grads(grads, p))
                }
                (SeqLayer::Gru { p, return_seq }, Cache::Gru(trace)) => {
                    let n_h = values[p[0].0].shape()[0];
                    let dh = last_row_grad(&d, x.shape()[0], n_h, *return_seq);
                    let w = gru_weights(values, p);
                    let [w_z, w_r, w_h, b_z, b_r, b_h] = disjoint(grads, *p);
                    gru_layer_backward(x, &w, trace, &dh, &mut GruGrads { w_z, w_r, w_h, b_z, b_r, b_h })
                }
                (SeqLayer::BiLstm { fwd, bwd, return_seq }, Cache::BiLstm(trace)) => {
                    let wf = lstm_weights(values, fwd);
                    let wb = lstm_weights(values, bwd);
                    let mut both: Vec<Tensor> = Vec::new();
                    // take the backward-direction grads out so both sets can be borrowed
                    for id in bwd {
                        both.push(std::mem::replace(&mut grads[id.0], Tensor::zeros(&[0])));
                    }
                    let local: [ParamId; 8] = std::array::from_fn(ParamId);
                    let dx = {
                        let mut gf = lstm_grads(grads, fwd);
                        let mut gb = lstm_grads(&mut both, &local);
                        bilstm_layer_backward(x, &wf, &wb, trace, d.data(), *return_seq, &mut gf, &mut gb)
                    };
                    for (id, t) in bwd.iter().zip(both) {
                        grads[id.0] = t;
                    }
                    dx
                }
                _ => return Err(Error::State("tape does not match layer stack".into())),
            };
        }
        Ok(())
    }
}

//! Dense-then-convolutional image predictor with hand-written forward and
//! backward passes, plus the ADAM optimizer.
//!
//! Pipeline for one input tensor `d` of shape `N_r x N_f`:
//!
//! ```text
//! x = [Re d, Im d]                       (2 N_r N_f reals)
//! h_0 = relu(W x + b)                    reshaped to (C, N_x, N_y)
//! h_l = relu(conv_l(h_{l-1}))            l = 1..K, C -> C channels, same padding
//! p   = clamp(sigmoid(conv_out(h_K)))    C -> 1 channel
//! ```
//!
//! Hidden tensors are stored channel-major, each channel row-major over the
//! search grid, so channel `c` of `h_0` is the dense output slice
//! `c * N_x N_y .. (c + 1) * N_x N_y`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{atomic_write, ByteReader};
use crate::physics::ResponseTensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WGNN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` on output.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HiddenActivation {
    #[default]
    Relu,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    #[default]
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n_r: usize,
    pub n_f: usize,
    pub n_x: usize,
    pub n_y: usize,
    /// Hidden channel count `C`.
    pub channels: usize,
    /// Number `K` of hidden convolutions; a final convolution to one channel
    /// follows them.
    pub conv_layers: usize,
    pub kernel_size: usize,
    /// Multiplies the real/imaginary input features.
    #[serde(default = "one")]
    pub input_scale: f64,
    #[serde(default)]
    pub hidden_activation: HiddenActivation,
    #[serde(default)]
    pub output_activation: OutputActivation,
}

fn one() -> f64 {
    1.0
}

impl NetworkConfig {
    pub fn new(
        (n_r, n_f): (usize, usize),
        (n_x, n_y): (usize, usize),
        channels: usize,
        conv_layers: usize,
        kernel_size: usize,
    ) -> Result<Self> {
        let cfg = NetworkConfig {
            n_r,
            n_f,
            n_x,
            n_y,
            channels,
            conv_layers,
            kernel_size,
            input_scale: 1.0,
            hidden_activation: HiddenActivation::Relu,
            output_activation: OutputActivation::Sigmoid,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_r == 0 || self.n_f == 0 || self.n_x == 0 || self.n_y == 0 {
            return Err(Error::invalid("network.dims", "all dimensions must be positive"));
        }
        if self.channels == 0 {
            return Err(Error::invalid("network.channels", "must be at least 1"));
        }
        if self.conv_layers == 0 {
            return Err(Error::invalid("network.conv_layers", "must be at least 1"));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::invalid("network.kernel_size", "must be odd"));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return Err(Error::invalid("network.input_scale", "must be positive"));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        2 * self.n_r * self.n_f
    }

    pub fn pixels(&self) -> usize {
        self.n_x * self.n_y
    }

    pub fn dense_out(&self) -> usize {
        self.pixels() * self.channels
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    /// Indexed `[c_out][c_in][kx][ky]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    fn zeros(c_in: usize, c_out: usize, kernel: usize) -> Self {
        ConvLayer {
            c_in,
            c_out,
            kernel,
            weights: vec![0.0; c_out * c_in * kernel * kernel],
            bias: vec![0.0; c_out],
        }
    }

    #[inline]
    fn w(&self, co: usize, ci: usize, kx: usize, ky: usize) -> usize {
        ((co * self.c_in + ci) * self.kernel + kx) * self.kernel + ky
    }
}

/// All trainable tensors. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub config: NetworkConfig,
    /// `dense_out x input_len`, row-major.
    pub dense_w: Vec<f64>,
    pub dense_b: Vec<f64>,
    /// `K` hidden layers followed by the one-channel output layer.
    pub convs: Vec<ConvLayer>,
}

pub type Gradients = NetworkParams;

impl NetworkParams {
    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let mut convs: Vec<ConvLayer> = (0..config.conv_layers)
            .map(|_| ConvLayer::zeros(c, c, config.kernel_size))
            .collect();
        convs.push(ConvLayer::zeros(c, 1, config.kernel_size));
        Ok(NetworkParams {
            config: *config,
            dense_w: vec![0.0; config.dense_out() * config.input_len()],
            dense_b: vec![0.0; config.dense_out()],
            convs,
        })
    }

    /// Weights uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |w: &mut [f64], fan_in: usize| {
            let a = 1.0 / (fan_in as f64).sqrt();
            for v in w {
                *v = rng.random_range(-a..a);
            }
        };
        fill(&mut p.dense_w, config.input_len());
        for layer in &mut p.convs {
            let fan_in = layer.c_in * layer.kernel * layer.kernel;
            fill(&mut layer.weights, fan_in);
        }
        Ok(p)
    }

    /// Tensors in declaration order: dense weights, dense bias, then each
    /// convolution's weights and bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.dense_w, &self.dense_b];
        for l in &self.convs {
            out.push(&l.weights);
            out.push(&l.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.dense_w, &mut self.dense_b];
        for l in &mut self.convs {
            out.push(&mut l.weights);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn same_shape(&self, other: &NetworkParams) -> bool {
        self.config == other.config
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.config)?;
        let mut buf = Vec::with_capacity(16 + header.len() + 8 * self.num_params());
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        for t in self.tensors() {
            for v in t {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const KIND: &str = "checkpoint";
        let mut rd = ByteReader::new(bytes, KIND);
        if rd.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::format(KIND, "bad magic"));
        }
        let version = rd.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(KIND, format!("unsupported version {version}")));
        }
        let len = rd.u64()? as usize;
        let config: NetworkConfig = serde_json::from_slice(rd.take(len)?)?;
        let mut params = Self::zeros(&config)?;
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                *v = rd.f64()?;
            }
        }
        if !rd.is_empty() {
            return Err(Error::format(KIND, "trailing bytes"));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Network output over the search grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityImage {
    pub n_x: usize,
    pub n_y: usize,
    pub values: Vec<f64>,
}

/// Intermediate tensors of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: Vec<f64>,
    dense_pre: Vec<f64>,
    /// Input of every convolution (post-rectifier), `K + 1` entries.
    conv_inputs: Vec<Vec<f64>>,
    /// Pre-activation of every hidden convolution, `K` entries.
    conv_pre: Vec<Vec<f64>>,
    sigmoid: Vec<f64>,
}

impl ForwardCache {
    pub fn sigmoid(&self) -> &[f64] {
        &self.sigmoid
    }
}

fn encode_input(config: &NetworkConfig, d: &ResponseTensor) -> Result<Vec<f64>> {
    if d.dims() != (config.n_r, config.n_f) {
        return Err(Error::shape(
            "network input",
            format!("({}, {})", config.n_r, config.n_f),
            format!("{:?}", d.dims()),
        ));
    }
    let s = config.input_scale;
    let data = d.as_slice();
    let mut x = Vec::with_capacity(2 * data.len());
    x.extend(data.iter().map(|z| s * z.re));
    x.extend(data.iter().map(|z| s * z.im));
    Ok(x)
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&a| a.max(0.0)).collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Same-padded cross-correlation of `input` (`c_in` planes of `n_x x n_y`).
fn conv_forward(layer: &ConvLayer, input: &[f64], n_x: usize, n_y: usize) -> Vec<f64> {
    let plane = n_x * n_y;
    let r = (layer.kernel / 2) as isize;
    let mut out = vec![0.0; layer.c_out * plane];
    for co in 0..layer.c_out {
        let dst = &mut out[co * plane..(co + 1) * plane];
        dst.iter_mut().for_each(|v| *v = layer.bias[co]);
        for ci in 0..layer.c_in {
            let src = &input[ci * plane..(ci + 1) * plane];
            for kx in 0..layer.kernel {
                let ox = kx as isize - r;
                let (i0, i1) = valid_range(ox, n_x);
                for ky in 0..layer.kernel {
                    let oy = ky as isize - r;
                    let (j0, j1) = valid_range(oy, n_y);
                    let w = layer.weights[layer.w(co, ci, kx, ky)];
                    for i in i0..i1 {
                        let si = (i as isize + ox) as usize;
                        let d_row = &mut dst[i * n_y + j0..i * n_y + j1];
                        let sj0 = (j0 as isize + oy) as usize;
                        let s_row = &src[si * n_y + sj0..si * n_y + sj0 + (j1 - j0)];
                        for (d, s) in d_row.iter_mut().zip(s_row) {
                            *d += w * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients into `grad` and returns the gradient
/// with respect to the layer input.
fn conv_backward(
    layer: &ConvLayer,
    input: &[f64],
    grad_out: &[f64],
    grad: &mut ConvLayer,
    n_x: usize,
    n_y: usize,
) -> Vec<f64> {
    let plane = n_x * n_y;
    let r = (layer.kernel / 2) as isize;
    let mut grad_in = vec![0.0; layer.c_in * plane];
    for co in 0..layer.c_out {
        let g = &grad_out[co * plane..(co + 1) * plane];
        grad.bias[co] += g.iter().sum::<f64>();
        for ci in 0..layer.c_in {
            let src = &input[ci * plane..(ci + 1) * plane];
            for kx in 0..layer.kernel {
                let ox = kx as isize - r;
                let (i0, i1) = valid_range(ox, n_x);
                for ky in 0..layer.kernel {
                    let oy = ky as isize - r;
                    let (j0, j1) = valid_range(oy, n_y);
                    let widx = layer.w(co, ci, kx, ky);
                    let w = layer.weights[widx];
                    let sj0 = (j0 as isize + oy) as usize;
                    let mut acc = 0.0;
                    for i in i0..i1 {
                        let si = (i as isize + ox) as usize;
                        let g_row = &g[i * n_y + j0..i * n_y + j1];
                        let s_row = &src[si * n_y + sj0..si * n_y + sj0 + (j1 - j0)];
                        for (a, b) in g_row.iter().zip(s_row) {
                            acc += a * b;
                        }
                        let start = ci * plane + si * n_y + sj0;
                        let gi = &mut grad_in[start..start + (j1 - j0)];
                        for (d, a) in gi.iter_mut().zip(g_row) {
                            *d += w * a;
                        }
                    }
                    grad.weights[widx] += acc;
                }
            }
        }
    }
    grad_in
}

/// Output indices `i` for which `i + offset` is a valid input index.
fn valid_range(offset: isize, n: usize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (n as isize - offset.max(0)).max(0) as usize;
    (lo.min(n), hi.min(n))
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// Runs a batch through the network; results are identical to calling
/// [`forward`] on each input.
pub fn forward_batch(
    params: &NetworkParams,
    inputs: &[&ResponseTensor],
) -> Result<Vec<(ProbabilityImage, ForwardCache)>> {
    let cfg = &params.config;
    let xs = inputs
        .iter()
        .map(|d| encode_input(cfg, d))
        .collect::<Result<Vec<_>>>()?;
    let n_in = cfg.input_len();
    let n_out = cfg.dense_out();
    let mut dense: Vec<Vec<f64>> = vec![vec![0.0; n_out]; xs.len()];
    for o in 0..n_out {
        let row = &params.dense_w[o * n_in..(o + 1) * n_in];
        for (b, x) in xs.iter().enumerate() {
            let mut acc = 0.0;
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            dense[b][o] = acc + params.dense_b[o];
        }
    }
    xs.into_iter()
        .zip(dense)
        .map(|(input, dense_pre)| {
            check_finite(&dense_pre, "dense layer output")?;
            let mut conv_inputs = vec![relu(&dense_pre)];
            let mut conv_pre = Vec::with_capacity(cfg.conv_layers);
            for layer in &params.convs[..cfg.conv_layers] {
                let pre = conv_forward(layer, conv_inputs.last().unwrap(), cfg.n_x, cfg.n_y);
                check_finite(&pre, "convolution output")?;
                conv_inputs.push(relu(&pre));
                conv_pre.push(pre);
            }
            let logits = conv_forward(
                &params.convs[cfg.conv_layers],
                conv_inputs.last().unwrap(),
                cfg.n_x,
                cfg.n_y,
            );
            check_finite(&logits, "output logits")?;
            let s: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
            let values = s
                .iter()
                .map(|v| v.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
                .collect();
            Ok((
                ProbabilityImage {
                    n_x: cfg.n_x,
                    n_y: cfg.n_y,
                    values,
                },
                ForwardCache {
                    input,
                    dense_pre,
                    conv_inputs,
                    conv_pre,
                    sigmoid: s,
                },
            ))
        })
        .collect()
}

pub fn forward(params: &NetworkParams, d: &ResponseTensor) -> Result<(ProbabilityImage, ForwardCache)> {
    Ok(forward_batch(params, &[d])?.pop().unwrap())
}

/// Parameter gradients of `sum_b <grad_outputs[b], p_b>` where `p_b` is the
/// probability image of the cached forward pass `b`. The output clamp is
/// treated as the identity.
pub fn backward_batch(
    params: &NetworkParams,
    caches: &[ForwardCache],
    grad_outputs: &[Vec<f64>],
) -> Result<Gradients> {
    let cfg = &params.config;
    if caches.len() != grad_outputs.len() {
        return Err(Error::shape("backward batch", caches.len(), grad_outputs.len()));
    }
    let mut grads = NetworkParams::zeros(cfg)?;
    let n_in = cfg.input_len();
    let n_out = cfg.dense_out();
    let mut dense_grads = Vec::with_capacity(caches.len());
    for (cache, g_out) in caches.iter().zip(grad_outputs) {
        if g_out.len() != cfg.pixels() {
            return Err(Error::shape("output gradient", cfg.pixels(), g_out.len()));
        }
        if cache.input.len() != n_in || cache.conv_pre.len() != cfg.conv_layers {
            return Err(Error::shape(
                "forward cache",
                "cache from this network",
                "cache of another shape",
            ));
        }
        let mut g: Vec<f64> = g_out
            .iter()
            .zip(&cache.sigmoid)
            .map(|(g, s)| g * s * (1.0 - s))
            .collect();
        for l in (0..=cfg.conv_layers).rev() {
            let g_in = conv_backward(
                &params.convs[l],
                &cache.conv_inputs[l],
                &g,
                &mut grads.convs[l],
                cfg.n_x,
                cfg.n_y,
            );
            let pre = if l == 0 {
                &cache.dense_pre
            } else {
                &cache.conv_pre[l - 1]
            };
            g = g_in
                .iter()
                .zip(pre)
                .map(|(g, &z)| if z > 0.0 { *g } else { 0.0 })
                .collect();
        }
        dense_grads.push(g);
    }
    for o in 0..n_out {
        let row = &mut grads.dense_w[o * n_in..(o + 1) * n_in];
        for (cache, g) in caches.iter().zip(&dense_grads) {
            let go = g[o];
            if go == 0.0 {
                continue;
            }
            grads.dense_b[o] += go;
            for (w, x) in row.iter_mut().zip(&cache.input) {
                *w += go * x;
            }
        }
    }
    Ok(grads)
}

pub fn backward(params: &NetworkParams, cache: &ForwardCache, grad_output: &[f64]) -> Result<Gradients> {
    backward_batch(params, std::slice::from_ref(cache), &[grad_output.to_vec()])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first: NetworkParams,
    pub second: NetworkParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams, config: AdamConfig) -> Result<Self> {
        Ok(AdamState {
            config,
            first: NetworkParams::zeros(&params.config)?,
            second: NetworkParams::zeros(&params.config)?,
            step: 0,
        })
    }
}

/// One bias-corrected ADAM update, in place.
pub fn adam_step(params: &mut NetworkParams, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.first) {
        return Err(Error::shape(
            "adam step",
            "gradients shaped like the parameters",
            "mismatched network config",
        ));
    }
    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let g_t = grads.tensors();
    let m_t = state.first.tensors_mut();
    let v_t = state.second.tensors_mut();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(g_t).zip(m_t).zip(v_t) {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

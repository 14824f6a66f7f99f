use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{Graph, Tensor, Var};

/// How the first LSTM level slices the clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level1Mode {
    /// Non-overlapping windows of `window_len` steps, each run from a zero
    /// state; the final window is zero-padded.
    Windowed,
    /// One pass over the whole clip, emitting every `stride`-th hidden state.
    Strided,
}

impl std::str::FromStr for Level1Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "windowed" => Ok(Level1Mode::Windowed),
            "strided" => Ok(Level1Mode::Strided),
            other => Err(Error::InvalidArgument(format!("unknown level1 mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub feature_dim: usize,
    pub seq_len: usize,
    pub window_len: usize,
    pub level1_mode: Level1Mode,
    pub stride: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub embed_dim: usize,
    /// Keep-probability of the dropout applied to level-1 codes.
    pub dropout1_keep: f64,
    pub num_classes: usize,
    pub attention: bool,
}

impl EncoderConfig {
    /// Full-scale defaults: 52×500 clips, windows of 6, 1024/512 hidden
    /// units, 300-d output.
    pub fn with_classes(num_classes: usize) -> Self {
        Self {
            feature_dim: 500,
            seq_len: 52,
            window_len: 6,
            level1_mode: Level1Mode::Windowed,
            stride: 8,
            hidden1: 1024,
            hidden2: 512,
            embed_dim: 300,
            dropout1_keep: 0.5,
            num_classes,
            attention: true,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, dim) in [
            ("feature_dim", self.feature_dim),
            ("seq_len", self.seq_len),
            ("window_len", self.window_len),
            ("stride", self.stride),
            ("hidden1", self.hidden1),
            ("hidden2", self.hidden2),
            ("embed_dim", self.embed_dim),
        ] {
            if dim == 0 {
                v.push(format!("{name} must be >= 1"));
            }
        }
        if self.window_len > self.seq_len {
            v.push(format!(
                "window_len ({}) must not exceed seq_len ({})",
                self.window_len, self.seq_len
            ));
        }
        if self.level1_mode == Level1Mode::Strided && self.stride > self.seq_len {
            v.push(format!("stride ({}) must not exceed seq_len ({})", self.stride, self.seq_len));
        }
        if !(self.dropout1_keep > 0.0 && self.dropout1_keep <= 1.0) {
            v.push(format!("dropout1_keep must be in (0, 1], got {}", self.dropout1_keep));
        }
        if self.num_classes < 2 {
            v.push(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(v.join("; ")))
        }
    }

    /// Number of level-1 codes handed to the second LSTM.
    pub fn num_level1_codes(&self) -> usize {
        match self.level1_mode {
            Level1Mode::Windowed => self.seq_len.div_ceil(self.window_len),
            Level1Mode::Strided => self.seq_len / self.stride,
        }
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let lstm = |i: usize, h: usize| 4 * h * i + 4 * h * h + 4 * h;
        let attn = |i: usize, h: usize| if self.attention { h + h * i + h * h + h } else { 0 };
        lstm(self.feature_dim, self.hidden1)
            + attn(self.feature_dim, self.hidden1)
            + lstm(self.hidden1, self.hidden2)
            + attn(self.hidden1, self.hidden2)
            + self.embed_dim * self.hidden2
            + self.embed_dim
            + self.num_classes * self.embed_dim
            + self.num_classes
    }
}

/// LSTM cell weights. Gate rows are stacked as input, forget, output,
/// candidate, each `hidden` rows tall.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_input: Tensor,
    pub w_hidden: Tensor,
    pub bias: Tensor,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_input: Tensor::zeros(vec![4 * hidden, input]).with_grad(),
            w_hidden: Tensor::zeros(vec![4 * hidden, hidden]).with_grad(),
            bias: Tensor::zeros(vec![4 * hidden]).with_grad(),
        }
    }

    fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        Self {
            w_input: uniform(vec![4 * hidden, input], input, rng),
            w_hidden: uniform(vec![4 * hidden, hidden], hidden, rng),
            bias: Tensor::vector(bias).with_grad(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.shape()[1]
    }

    pub fn input(&self) -> usize {
        self.w_input.shape()[1]
    }
}

/// Additive attention: `e_j = wᵀ tanh(W_a x_j + U_a h + b_a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub score: Tensor,
    pub w_input: Tensor,
    pub w_hidden: Tensor,
    pub bias: Tensor,
}

impl AttentionParams {
    /// The scoring layer is as wide as the consuming LSTM's hidden state.
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            score: Tensor::zeros(vec![hidden]).with_grad(),
            w_input: Tensor::zeros(vec![hidden, input]).with_grad(),
            w_hidden: Tensor::zeros(vec![hidden, hidden]).with_grad(),
            bias: Tensor::zeros(vec![hidden]).with_grad(),
        }
    }

    fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            score: uniform(vec![hidden], hidden, rng),
            w_input: uniform(vec![hidden, input], input, rng),
            w_hidden: uniform(vec![hidden, hidden], hidden, rng),
            bias: Tensor::zeros(vec![hidden]).with_grad(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseParams {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![output, input]).with_grad(),
            bias: Tensor::zeros(vec![output]).with_grad(),
        }
    }

    fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: uniform(vec![output, input], input, rng),
            bias: Tensor::zeros(vec![output]).with_grad(),
        }
    }
}

/// Every trainable tensor of the encoder and its classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub lstm1: LstmParams,
    pub attention1: Option<AttentionParams>,
    pub lstm2: LstmParams,
    pub attention2: Option<AttentionParams>,
    pub projection: DenseParams,
    pub classifier: DenseParams,
}

impl EncoderParams {
    pub fn zeros(cfg: &EncoderConfig) -> Self {
        Self {
            lstm1: LstmParams::zeros(cfg.feature_dim, cfg.hidden1),
            attention1: cfg
                .attention
                .then(|| AttentionParams::zeros(cfg.feature_dim, cfg.hidden1)),
            lstm2: LstmParams::zeros(cfg.hidden1, cfg.hidden2),
            attention2: cfg
                .attention
                .then(|| AttentionParams::zeros(cfg.hidden1, cfg.hidden2)),
            projection: DenseParams::zeros(cfg.hidden2, cfg.embed_dim),
            classifier: DenseParams::zeros(cfg.embed_dim, cfg.num_classes),
        }
    }

    /// Uniform(±1/√fan_in) weights, zero biases except a forget-gate bias
    /// of 1.
    pub fn init<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Self {
        let lstm1 = LstmParams::init(cfg.feature_dim, cfg.hidden1, rng);
        let attention1 = cfg
            .attention
            .then(|| AttentionParams::init(cfg.feature_dim, cfg.hidden1, rng));
        let lstm2 = LstmParams::init(cfg.hidden1, cfg.hidden2, rng);
        let attention2 = cfg
            .attention
            .then(|| AttentionParams::init(cfg.hidden1, cfg.hidden2, rng));
        Self {
            lstm1,
            attention1,
            lstm2,
            attention2,
            projection: DenseParams::init(cfg.hidden2, cfg.embed_dim, rng),
            classifier: DenseParams::init(cfg.embed_dim, cfg.num_classes, rng),
        }
    }

    /// Tensors in canonical order with stable names. Checkpoints, gradient
    /// buffers and optimizer moments all follow this order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        fn lstm<'p>(prefix: &str, p: &'p LstmParams, out: &mut Vec<(String, &'p Tensor)>) {
            out.push((format!("{prefix}.w_input"), &p.w_input));
            out.push((format!("{prefix}.w_hidden"), &p.w_hidden));
            out.push((format!("{prefix}.bias"), &p.bias));
        }
        fn attn<'p>(prefix: &str, p: &'p Option<AttentionParams>, out: &mut Vec<(String, &'p Tensor)>) {
            if let Some(p) = p {
                out.push((format!("{prefix}.score"), &p.score));
                out.push((format!("{prefix}.w_input"), &p.w_input));
                out.push((format!("{prefix}.w_hidden"), &p.w_hidden));
                out.push((format!("{prefix}.bias"), &p.bias));
            }
        }
        let mut out = Vec::new();
        lstm("lstm1", &self.lstm1, &mut out);
        attn("attention1", &self.attention1, &mut out);
        lstm("lstm2", &self.lstm2, &mut out);
        attn("attention2", &self.attention2, &mut out);
        out.push(("projection.weight".into(), &self.projection.weight));
        out.push(("projection.bias".into(), &self.projection.bias));
        out.push(("classifier.weight".into(), &self.classifier.weight));
        out.push(("classifier.bias".into(), &self.classifier.bias));
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        fn lstm(p: &mut LstmParams) -> [&mut Tensor; 3] {
            [&mut p.w_input, &mut p.w_hidden, &mut p.bias]
        }
        fn attn(p: &mut AttentionParams) -> [&mut Tensor; 4] {
            [&mut p.score, &mut p.w_input, &mut p.w_hidden, &mut p.bias]
        }
        out.extend(lstm(&mut self.lstm1));
        if let Some(a) = self.attention1.as_mut() {
            out.extend(attn(a));
        }
        out.extend(lstm(&mut self.lstm2));
        if let Some(a) = self.attention2.as_mut() {
            out.extend(attn(a));
        }
        out.push(&mut self.projection.weight);
        out.push(&mut self.projection.bias);
        out.push(&mut self.classifier.weight);
        out.push(&mut self.classifier.bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors_mut().into_iter().for_each(Tensor::zero_grad);
    }

    /// Rebuilds parameters from flat per-tensor value buffers in canonical
    /// order.
    pub fn from_values(cfg: &EncoderConfig, values: Vec<Vec<f64>>) -> Result<Self> {
        let mut params = Self::zeros(cfg);
        let slots = params.tensors_mut();
        if slots.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter tensors, got {}",
                slots.len(),
                values.len()
            )));
        }
        for (slot, vals) in slots.into_iter().zip(values) {
            if slot.len() != vals.len() {
                return Err(Error::shape("from_values", &[slot.shape(), &[vals.len()]]));
            }
            slot.values_mut().copy_from_slice(&vals);
        }
        Ok(params)
    }

    /// Binds every tensor as a graph leaf.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a>) -> BoundParams {
        let lstm = |g: &mut Graph<'a>, p: &'a LstmParams| LstmVars {
            w_input: g.leaf(&p.w_input),
            w_hidden: g.leaf(&p.w_hidden),
            bias: g.leaf(&p.bias),
            hidden: p.hidden(),
        };
        let attn = |g: &mut Graph<'a>, p: &'a AttentionParams| AttentionVars {
            score: g.leaf(&p.score),
            w_input: g.leaf(&p.w_input),
            w_hidden: g.leaf(&p.w_hidden),
            bias: g.leaf(&p.bias),
        };
        let lstm1 = lstm(g, &self.lstm1);
        let attention1 = self.attention1.as_ref().map(|p| attn(g, p));
        let lstm2 = lstm(g, &self.lstm2);
        let attention2 = self.attention2.as_ref().map(|p| attn(g, p));
        let projection = DenseVars {
            weight: g.leaf(&self.projection.weight),
            bias: g.leaf(&self.projection.bias),
        };
        let classifier = DenseVars {
            weight: g.leaf(&self.classifier.weight),
            bias: g.leaf(&self.classifier.bias),
        };
        BoundParams {
            lstm1,
            attention1,
            lstm2,
            attention2,
            projection,
            classifier,
        }
    }
}

fn uniform<R: Rng + ?Sized>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Tensor {
    let k = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.gen_range(-k..=k)).collect();
    Tensor::new(shape, values).expect("shape matches").with_grad()
}

#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_input: Var,
    pub w_hidden: Var,
    pub bias: Var,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub score: Var,
    pub w_input: Var,
    pub w_hidden: Var,
    pub bias: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct DenseVars {
    pub weight: Var,
    pub bias: Var,
}

/// Graph handles for an [`EncoderParams`] binding.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub lstm1: LstmVars,
    pub attention1: Option<AttentionVars>,
    pub lstm2: LstmVars,
    pub attention2: Option<AttentionVars>,
    pub projection: DenseVars,
    pub classifier: DenseVars,
}

impl BoundParams {
    /// Handles in canonical order, matching [`EncoderParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut v = vec![self.lstm1.w_input, self.lstm1.w_hidden, self.lstm1.bias];
        if let Some(a) = self.attention1 {
            v.extend([a.score, a.w_input, a.w_hidden, a.bias]);
        }
        v.extend([self.lstm2.w_input, self.lstm2.w_hidden, self.lstm2.bias]);
        if let Some(a) = self.attention2 {
            v.extend([a.score, a.w_input, a.w_hidden, a.bias]);
        }
        v.extend([
            self.projection.weight,
            self.projection.bias,
            self.classifier.weight,
            self.classifier.bias,
        ]);
        v
    }
}

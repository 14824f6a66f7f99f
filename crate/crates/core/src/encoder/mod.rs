//! Two-level attentive LSTM encoder.
//!
//! Level 1 summarizes short stretches of the clip into codes; level 2 reads
//! the codes in order and its final hidden state is projected into the
//! word-vector space. Both levels feed their LSTM with soft-attention
//! contexts instead of raw inputs when attention is enabled.

mod params;

use rand::RngCore;

pub use params::{
    AttentionParams, AttentionVars, BoundParams, DenseParams, DenseVars, EncoderConfig, EncoderParams, Level1Mode,
    LstmParams, LstmVars,
};

use crate::datakit::FeatureSequence;
use crate::error::{Error, Result};
use crate::ndcore::{Graph, Var};

/// Forward-pass mode. Dropout is only active in `Train`.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut dyn RngCore),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionEmbedding {
    pub clip_id: String,
    pub vector: Vec<f64>,
}

/// One LSTM step: sigmoid input/forget/output gates, tanh candidate,
/// `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
pub fn lstm_cell_step(g: &mut Graph<'_>, x: Var, h: Var, c: Var, p: &LstmVars) -> Result<(Var, Var)> {
    let hd = p.hidden;
    if g.shape(h) != [hd] || g.shape(c) != [hd] {
        return Err(Error::Shape {
            op: "lstm_cell_step",
            shapes: vec![g.shape(x).to_vec(), g.shape(h).to_vec(), g.shape(c).to_vec()],
        });
    }
    let zx = g.matmul(p.w_input, x)?;
    let zh = g.matmul(p.w_hidden, h)?;
    let z = g.add(zx, zh)?;
    let z = g.add(z, p.bias)?;
    let i = g.slice(z, 0, hd)?;
    let f = g.slice(z, hd, hd)?;
    let o = g.slice(z, 2 * hd, hd)?;
    let cand = g.slice(z, 3 * hd, hd)?;
    let i = g.sigmoid(i)?;
    let f = g.sigmoid(f)?;
    let o = g.sigmoid(o)?;
    let cand = g.tanh(cand)?;
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let squashed = g.tanh(c_next)?;
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// The inputs an attention block scores over, with the `W_a x_j + b_a`
/// half of each score precomputed since it does not depend on the step.
#[derive(Debug, Clone)]
pub struct AttentionInputs {
    keys: Vec<Var>,
    inputs_t: Var,
}

impl AttentionInputs {
    pub fn new(g: &mut Graph<'_>, inputs: &[Var], p: &AttentionVars) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("attention over an empty window".into()));
        }
        let keys = inputs
            .iter()
            .map(|x| {
                let k = g.matmul(p.w_input, *x)?;
                g.add(k, p.bias)
            })
            .collect::<Result<Vec<_>>>()?;
        let stacked = g.stack(inputs)?;
        let inputs_t = g.transpose(stacked)?;
        Ok(Self { keys, inputs_t })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Attended {
    pub context: Var,
    pub weights: Var,
}

/// `e_j = wᵀ tanh(W_a x_j + U_a h + b_a)`, `α = softmax(e)`,
/// `context = Σ α_j x_j`.
pub fn soft_attention(g: &mut Graph<'_>, inputs: &AttentionInputs, h_prev: Var, p: &AttentionVars) -> Result<Attended> {
    let query = g.matmul(p.w_hidden, h_prev)?;
    let mut scores = Vec::with_capacity(inputs.len());
    for key in &inputs.keys {
        let pre = g.add(*key, query)?;
        let act = g.tanh(pre)?;
        scores.push(g.dot(p.score, act)?);
    }
    let scores = g.concat(&scores)?;
    let weights = g.softmax(scores)?;
    let context = g.matmul(inputs.inputs_t, weights)?;
    Ok(Attended { context, weights })
}

/// Runs `steps` LSTM steps from a zero state. At each step the input is
/// either the attention context over `inputs` or `inputs[step]` itself.
/// Returns the hidden state after every step.
fn run_lstm<'a>(
    g: &mut Graph<'a>,
    inputs: &[Var],
    block_of_step: impl Fn(usize) -> std::ops::Range<usize>,
    steps: usize,
    lstm: &LstmVars,
    attention: Option<&AttentionVars>,
) -> Result<Vec<Var>> {
    let mut h = g.zeros(lstm.hidden);
    let mut c = g.zeros(lstm.hidden);
    let mut hidden = Vec::with_capacity(steps);
    let mut cached: Option<(std::ops::Range<usize>, AttentionInputs)> = None;
    for step in 0..steps {
        let x = match attention {
            Some(p) => {
                let block = block_of_step(step);
                if cached.as_ref().is_none_or(|(r, _)| *r != block) {
                    let att = AttentionInputs::new(g, &inputs[block.clone()], p)?;
                    cached = Some((block, att));
                }
                let (_, att) = cached.as_ref().unwrap();
                soft_attention(g, att, h, p)?.context
            }
            None => inputs[step],
        };
        let (h2, c2) = lstm_cell_step(g, x, h, c, lstm)?;
        h = h2;
        c = c2;
        hidden.push(h);
    }
    Ok(hidden)
}

/// Level 1: one code per window (windowed mode) or per stride (strided
/// mode), each `hidden1` wide. Dropout is applied to the codes in training.
pub fn encode_level1<'a>(
    g: &mut Graph<'a>,
    seq: &'a FeatureSequence,
    params: &BoundParams,
    cfg: &EncoderConfig,
    mode: &mut Mode<'_>,
) -> Result<Vec<Var>> {
    if seq.len() != cfg.seq_len || seq.dim() != cfg.feature_dim {
        return Err(Error::Shape {
            op: "encode_level1",
            shapes: vec![vec![seq.len(), seq.dim()], vec![cfg.seq_len, cfg.feature_dim]],
        });
    }
    let rows: Vec<Var> = seq.rows().map(|r| g.constant_ref(r)).collect();
    let attention = params.attention1.as_ref();
    let codes = match cfg.level1_mode {
        Level1Mode::Windowed => {
            let l = cfg.window_len;
            let n_windows = seq.len().div_ceil(l);
            let mut codes = Vec::with_capacity(n_windows);
            for w in 0..n_windows {
                let mut window: Vec<Var> = rows[w * l..((w + 1) * l).min(rows.len())].to_vec();
                while window.len() < l {
                    window.push(g.zeros(cfg.feature_dim));
                }
                let hs = run_lstm(g, &window, |_| 0..l, l, &params.lstm1, attention)?;
                codes.push(*hs.last().unwrap());
            }
            codes
        }
        Level1Mode::Strided => {
            let s = cfg.stride;
            let t = rows.len();
            let hs = run_lstm(
                g,
                &rows,
                |step| {
                    let b = step / s;
                    b * s..((b + 1) * s).min(t)
                },
                t,
                &params.lstm1,
                attention,
            )?;
            (1..=t / s).map(|k| hs[k * s - 1]).collect()
        }
    };
    match mode {
        Mode::Eval => Ok(codes),
        Mode::Train(rng) => codes
            .into_iter()
            .map(|c| g.dropout(c, cfg.dropout1_keep, true, &mut **rng))
            .collect(),
    }
}

/// Level 2: reads the codes in order (attending over all of them at each
/// step) and returns the final `hidden2`-wide state.
pub fn encode_level2(g: &mut Graph<'_>, codes: &[Var], params: &BoundParams) -> Result<Var> {
    if codes.is_empty() {
        return Err(Error::InvalidArgument("level-2 encoder needs at least one code".into()));
    }
    let n = codes.len();
    let hs = run_lstm(g, codes, |_| 0..n, n, &params.lstm2, params.attention2.as_ref())?;
    Ok(*hs.last().unwrap())
}

pub fn project(g: &mut Graph<'_>, summary: Var, params: &BoundParams) -> Result<Var> {
    let z = g.matmul(params.projection.weight, summary)?;
    g.add(z, params.projection.bias)
}

pub fn classifier_logits(g: &mut Graph<'_>, embedding: Var, params: &BoundParams) -> Result<Var> {
    let z = g.matmul(params.classifier.weight, embedding)?;
    g.add(z, params.classifier.bias)
}

/// Per-class sigmoid scores of the projected embedding.
pub fn classify(g: &mut Graph<'_>, embedding: Var, params: &BoundParams) -> Result<Var> {
    let z = classifier_logits(g, embedding, params)?;
    g.sigmoid(z)
}

/// Full clip → embedding pass.
pub fn encode<'a>(
    g: &mut Graph<'a>,
    seq: &'a FeatureSequence,
    params: &BoundParams,
    cfg: &EncoderConfig,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let codes = encode_level1(g, seq, params, cfg, mode)?;
    let summary = encode_level2(g, &codes, params)?;
    project(g, summary, params)
}

/// Anything that maps a clip to a vector in the word-vector space.
pub trait Embedder {
    fn embed(&self, seq: &FeatureSequence) -> Result<Vec<f64>>;
}

/// A configured encoder with its parameters, evaluated outside of training.
#[derive(Debug, Clone)]
pub struct Hrnn {
    pub config: EncoderConfig,
    pub params: EncoderParams,
}

impl Hrnn {
    pub fn new(config: EncoderConfig, params: EncoderParams) -> Result<Self> {
        config.validate()?;
        if params.param_count() != config.param_count() {
            return Err(Error::InvalidArgument(format!(
                "parameters ({}) do not match config ({})",
                params.param_count(),
                config.param_count()
            )));
        }
        Ok(Self { config, params })
    }

    pub fn encode(&self, seq: &FeatureSequence) -> Result<ActionEmbedding> {
        Ok(ActionEmbedding {
            clip_id: seq.clip_id.clone(),
            vector: self.embed(seq)?,
        })
    }

    pub fn scores(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let e = g.constant(embedding.to_vec());
        let s = classify(&mut g, e, &bound)?;
        Ok(g.value(s).to_vec())
    }
}

impl Embedder for Hrnn {
    fn embed(&self, seq: &FeatureSequence) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let out = encode(&mut g, seq, &bound, &self.config, &mut Mode::Eval)?;
        Ok(g.value(out).to_vec())
    }
}

#[cfg(test)]
mod tests;

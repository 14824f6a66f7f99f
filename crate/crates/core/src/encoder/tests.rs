use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::ndcore::{sigmoid, Tensor};

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn toy_config() -> EncoderConfig {
    EncoderConfig {
        feature_dim: 5,
        seq_len: 9,
        window_len: 3,
        level1_mode: Level1Mode::Windowed,
        stride: 3,
        hidden1: 7,
        hidden2: 6,
        embed_dim: 4,
        dropout1_keep: 0.5,
        num_classes: 3,
        attention: true,
    }
}

fn random_seq(rng: &mut ChaCha8Rng, cfg: &EncoderConfig) -> FeatureSequence {
    let data = rand_vec(rng, cfg.seq_len * cfg.feature_dim);
    FeatureSequence::new("clip", 0, cfg.seq_len, cfg.feature_dim, data).unwrap()
}

/// Scalar-loop LSTM step over raw row-major buffers.
fn lstm_oracle(p: &LstmParams, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (hd, id) = (p.hidden(), p.input());
    let (wx, wh, b) = (p.w_input.values(), p.w_hidden.values(), p.bias.values());
    let mut z = vec![0.0; 4 * hd];
    for r in 0..4 * hd {
        let mut acc = b[r];
        for k in 0..id {
            acc += wx[r * id + k] * x[k];
        }
        for k in 0..hd {
            acc += wh[r * hd + k] * h[k];
        }
        z[r] = acc;
    }
    let mut h2 = vec![0.0; hd];
    let mut c2 = vec![0.0; hd];
    for j in 0..hd {
        let i = sigmoid(z[j]);
        let f = sigmoid(z[hd + j]);
        let o = sigmoid(z[2 * hd + j]);
        let gg = z[3 * hd + j].tanh();
        c2[j] = f * c[j] + i * gg;
        h2[j] = o * c2[j].tanh();
    }
    (h2, c2)
}

/// Direct evaluation of the three attention equations.
fn attention_oracle(p: &AttentionParams, window: &[Vec<f64>], h: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let a = p.score.len();
    let id = window[0].len();
    let hd = h.len();
    let (w, wa, ua, ba) = (p.score.values(), p.w_input.values(), p.w_hidden.values(), p.bias.values());
    let mut e = Vec::new();
    for x in window {
        let mut s = 0.0;
        for r in 0..a {
            let mut pre = ba[r];
            for k in 0..id {
                pre += wa[r * id + k] * x[k];
            }
            for k in 0..hd {
                pre += ua[r * hd + k] * h[k];
            }
            s += w[r] * pre.tanh();
        }
        e.push(s);
    }
    let max = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = e.iter().map(|v| (v - max).exp()).sum();
    let alpha: Vec<f64> = e.iter().map(|v| (v - max).exp() / z).collect();
    let mut ctx = vec![0.0; id];
    for (x, al) in window.iter().zip(&alpha) {
        for k in 0..id {
            ctx[k] += al * x[k];
        }
    }
    (alpha, ctx)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn lstm_zero_params_zero_state() {
    let p = LstmParams::zeros(3, 4);
    let mut g = Graph::new();
    let lstm = LstmVars {
        w_input: g.leaf(&p.w_input),
        w_hidden: g.leaf(&p.w_hidden),
        bias: g.leaf(&p.bias),
        hidden: 4,
    };
    let x = g.constant(vec![1.0, 2.0, 3.0]);
    let h = g.zeros(4);
    let c = g.zeros(4);
    let (h2, c2) = lstm_cell_step(&mut g, x, h, c, &lstm).unwrap();
    assert_eq!(g.value(h2), &[0.0; 4]);
    assert_eq!(g.value(c2), &[0.0; 4]);

    let c0 = vec![1.0, -2.0, 0.5, 4.0];
    let c = g.constant(c0.clone());
    let (h2, c2) = lstm_cell_step(&mut g, x, h, c, &lstm).unwrap();
    for j in 0..4 {
        assert_eq!(g.value(c2)[j], 0.5 * c0[j]);
        assert_eq!(g.value(h2)[j], 0.5 * (0.5 * c0[j]).tanh());
    }
}

#[test]
fn lstm_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let mut p = LstmParams::zeros(4, 4);
        for t in [&mut p.w_input, &mut p.w_hidden, &mut p.bias] {
            let n = t.len();
            t.values_mut().copy_from_slice(&rand_vec(&mut rng, n));
        }
        let (x, h, c) = (rand_vec(&mut rng, 4), rand_vec(&mut rng, 4), rand_vec(&mut rng, 4));
        let mut g = Graph::new();
        let lstm = LstmVars {
            w_input: g.leaf(&p.w_input),
            w_hidden: g.leaf(&p.w_hidden),
            bias: g.leaf(&p.bias),
            hidden: 4,
        };
        let (xv, hv, cv) = (g.constant(x.clone()), g.constant(h.clone()), g.constant(c.clone()));
        let (h2, c2) = lstm_cell_step(&mut g, xv, hv, cv, &lstm).unwrap();
        let (oh, oc) = lstm_oracle(&p, &x, &h, &c);
        assert!(max_abs_diff(g.value(h2), &oh) <= 1e-12);
        assert!(max_abs_diff(g.value(c2), &oc) <= 1e-12);
    }
}

#[test]
fn lstm_rejects_mismatched_state() {
    let p = LstmParams::zeros(3, 4);
    let mut g = Graph::new();
    let lstm = LstmVars {
        w_input: g.leaf(&p.w_input),
        w_hidden: g.leaf(&p.w_hidden),
        bias: g.leaf(&p.bias),
        hidden: 4,
    };
    let x = g.zeros(2);
    let h = g.zeros(4);
    let c = g.zeros(4);
    assert!(matches!(lstm_cell_step(&mut g, x, h, c, &lstm), Err(Error::Shape { .. })));
}

fn bind_attention<'a>(g: &mut Graph<'a>, p: &'a AttentionParams) -> AttentionVars {
    AttentionVars {
        score: g.leaf(&p.score),
        w_input: g.leaf(&p.w_input),
        w_hidden: g.leaf(&p.w_hidden),
        bias: g.leaf(&p.bias),
    }
}

#[test]
fn attention_uniform_when_scores_tie() {
    // zero score vector makes every e_j equal
    let p = AttentionParams::zeros(2, 3);
    let mut g = Graph::new();
    let vars = bind_attention(&mut g, &p);
    let xs: Vec<Var> = [[1.0, 2.0], [3.0, 4.0], [5.0, 9.0]]
        .iter()
        .map(|r| g.constant(r.to_vec()))
        .collect();
    let h = g.zeros(3);
    let inputs = AttentionInputs::new(&mut g, &xs, &vars).unwrap();
    let out = soft_attention(&mut g, &inputs, h, &vars).unwrap();
    assert_eq!(g.value(out.weights), &[1.0 / 3.0; 3]);
    let ctx = g.value(out.context);
    assert!((ctx[0] - 3.0).abs() < 1e-15 && (ctx[1] - 5.0).abs() < 1e-15);
}

#[test]
fn attention_singleton_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut p = AttentionParams::zeros(4, 3);
    p.score.values_mut().copy_from_slice(&rand_vec(&mut rng, 3));
    let mut g = Graph::new();
    let vars = bind_attention(&mut g, &p);
    let x = g.constant(vec![0.5, -1.0, 2.0, 0.25]);
    let h = g.constant(rand_vec(&mut rng, 3));
    let inputs = AttentionInputs::new(&mut g, &[x], &vars).unwrap();
    let out = soft_attention(&mut g, &inputs, h, &vars).unwrap();
    assert_eq!(g.value(out.weights), &[1.0]);
    assert_eq!(g.value(out.context), &[0.5, -1.0, 2.0, 0.25]);
}

#[test]
fn attention_rejects_empty_window() {
    let p = AttentionParams::zeros(2, 3);
    let mut g = Graph::new();
    let vars = bind_attention(&mut g, &p);
    assert!(AttentionInputs::new(&mut g, &[], &vars).is_err());
}

#[test]
fn attention_matches_equation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let mut p = AttentionParams::zeros(4, 5);
        for t in [&mut p.score, &mut p.w_input, &mut p.w_hidden, &mut p.bias] {
            let n = t.len();
            t.values_mut().copy_from_slice(&rand_vec(&mut rng, n));
        }
        let window: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(&mut rng, 4)).collect();
        let h = rand_vec(&mut rng, 5);
        let mut g = Graph::new();
        let vars = bind_attention(&mut g, &p);
        let xs: Vec<Var> = window.iter().map(|r| g.constant(r.clone())).collect();
        let hv = g.constant(h.clone());
        let inputs = AttentionInputs::new(&mut g, &xs, &vars).unwrap();
        let out = soft_attention(&mut g, &inputs, hv, &vars).unwrap();
        let (alpha, ctx) = attention_oracle(&p, &window, &h);
        assert!(max_abs_diff(g.value(out.weights), &alpha) <= 1e-12);
        assert!(max_abs_diff(g.value(out.context), &ctx) <= 1e-12);
        let w = g.value(out.weights);
        assert!(w.iter().all(|a| *a >= 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}

fn codes_for(cfg: &EncoderConfig) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = EncoderParams::init(cfg, &mut rng);
    let seq = random_seq(&mut rng, cfg);
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    encode_level1(&mut g, &seq, &bound, cfg, &mut Mode::Eval).unwrap().len()
}

#[test]
fn level1_code_counts() {
    let mut cfg = toy_config();
    cfg.feature_dim = 3;
    cfg.hidden1 = 4;
    cfg.seq_len = 52;
    cfg.window_len = 6;
    assert_eq!(cfg.num_level1_codes(), 9);
    assert_eq!(codes_for(&cfg), 9);

    cfg.level1_mode = Level1Mode::Strided;
    cfg.stride = 8;
    assert_eq!(cfg.num_level1_codes(), 6);
    assert_eq!(codes_for(&cfg), 6);

    cfg.level1_mode = Level1Mode::Windowed;
    cfg.seq_len = 18;
    cfg.window_len = 3;
    assert_eq!(codes_for(&cfg), 6);
}

#[test]
fn padded_window_equals_explicit_zero_rows() {
    // T=8, L=3: the last window holds rows 6,7 plus one zero row
    let mut cfg = toy_config();
    cfg.seq_len = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let params = EncoderParams::init(&cfg, &mut rng);
    let seq = random_seq(&mut rng, &cfg);
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let codes = encode_level1(&mut g, &seq, &bound, &cfg, &mut Mode::Eval).unwrap();
    assert_eq!(codes.len(), 3);

    let mut padded = seq.data().to_vec();
    padded.extend(vec![0.0; cfg.feature_dim]);
    let mut cfg9 = cfg.clone();
    cfg9.seq_len = 9;
    let seq9 = FeatureSequence::new("p", 0, 9, cfg.feature_dim, padded).unwrap();
    let mut g9 = Graph::new();
    let bound9 = params.bind(&mut g9);
    let codes9 = encode_level1(&mut g9, &seq9, &bound9, &cfg9, &mut Mode::Eval).unwrap();
    for (a, b) in codes.iter().zip(&codes9) {
        assert_eq!(g.value(*a), g9.value(*b));
    }
}

#[test]
fn window_permutation_permutes_codes() {
    let cfg = toy_config();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = EncoderParams::init(&cfg, &mut rng);
    let seq = random_seq(&mut rng, &cfg);
    let l = cfg.window_len;
    let order = [2usize, 0, 1];
    let mut permuted = Vec::new();
    for w in order {
        permuted.extend_from_slice(&seq.data()[w * l * cfg.feature_dim..(w + 1) * l * cfg.feature_dim]);
    }
    let seq_p = FeatureSequence::new("p", 0, cfg.seq_len, cfg.feature_dim, permuted).unwrap();

    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let codes = encode_level1(&mut g, &seq, &bound, &cfg, &mut Mode::Eval).unwrap();
    let mut gp = Graph::new();
    let bound_p = params.bind(&mut gp);
    let codes_p = encode_level1(&mut gp, &seq_p, &bound_p, &cfg, &mut Mode::Eval).unwrap();
    for (k, w) in order.iter().enumerate() {
        assert_eq!(gp.value(codes_p[k]), g.value(codes[*w]));
    }
}

#[test]
fn level2_output_width_and_zero_case() {
    let mut cfg = toy_config();
    cfg.hidden2 = 512;
    let params = EncoderParams::zeros(&cfg);
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let code = g.constant(vec![0.3; cfg.hidden1]);
    let out = encode_level2(&mut g, &[code], &bound).unwrap();
    assert_eq!(g.value(out), vec![0.0; 512].as_slice());
    assert!(encode_level2(&mut g, &[], &bound).is_err());
}

#[test]
fn level2_matches_step_oracle() {
    let cfg = toy_config();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let params = EncoderParams::init(&cfg, &mut rng);
        let codes: Vec<Vec<f64>> = (0..2).map(|_| rand_vec(&mut rng, cfg.hidden1)).collect();
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let cvars: Vec<Var> = codes.iter().map(|c| g.constant(c.clone())).collect();
        let out = encode_level2(&mut g, &cvars, &bound).unwrap();

        let att = params.attention2.as_ref().unwrap();
        let mut h = vec![0.0; cfg.hidden2];
        let mut c = vec![0.0; cfg.hidden2];
        for _ in 0..2 {
            let (_, ctx) = attention_oracle(att, &codes, &h);
            let (h2, c2) = lstm_oracle(&params.lstm2, &ctx, &h, &c);
            h = h2;
            c = c2;
        }
        assert!(max_abs_diff(g.value(out), &h) <= 1e-12);
    }
}

#[test]
fn default_scale_output_is_300d() {
    let cfg = EncoderConfig::with_classes(10);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = EncoderParams::init(&cfg, &mut rng);
    let seq = random_seq(&mut rng, &cfg);
    let model = Hrnn::new(cfg, params).unwrap();
    let e = model.encode(&seq).unwrap();
    assert_eq!(e.vector.len(), 300);
    assert!(e.vector.iter().all(|v| v.is_finite()));
}

#[test]
fn eval_mode_is_deterministic() {
    let cfg = toy_config();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = EncoderParams::init(&cfg, &mut rng);
    let seq = random_seq(&mut rng, &cfg);
    let model = Hrnn::new(cfg, params).unwrap();
    assert_eq!(model.embed(&seq).unwrap(), model.embed(&seq).unwrap());
}

#[test]
fn eval_mode_ignores_dropout_seed() {
    let cfg = toy_config();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = EncoderParams::init(&cfg, &mut rng);
    let seq = random_seq(&mut rng, &cfg);
    let run = |seed: u64| {
        let mut drop_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        // the RNG is unused in eval mode; consume it to prove it has no effect
        let _ = drop_rng.gen::<u64>();
        let out = encode(&mut g, &seq, &bound, &cfg, &mut Mode::Eval).unwrap();
        g.value(out).to_vec()
    };
    assert_eq!(run(1), run(99));

    let train = |seed: u64| {
        let mut drop_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let out = encode(&mut g, &seq, &bound, &cfg, &mut Mode::Train(&mut drop_rng)).unwrap();
        g.value(out).to_vec()
    };
    assert_eq!(train(1), train(1));
    assert_ne!(train(1), train(2));
}

#[test]
fn zero_params_output_projection_bias() {
    let cfg = toy_config();
    let mut params = EncoderParams::zeros(&cfg);
    params.projection.bias = Tensor::vector(vec![0.1, -0.2, 0.3, 0.4]).with_grad();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let seq = random_seq(&mut rng, &cfg);
    let model = Hrnn::new(cfg, params).unwrap();
    assert_eq!(model.embed(&seq).unwrap(), vec![0.1, -0.2, 0.3, 0.4]);
}

#[test]
fn classifier_scores() {
    let cfg = toy_config();
    let mut params = EncoderParams::zeros(&cfg);
    let model = Hrnn::new(cfg.clone(), params.clone()).unwrap();
    let s = model.scores(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(s, vec![0.5; cfg.num_classes]);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    params = EncoderParams::init(&cfg, &mut rng);
    let emb = rand_vec(&mut rng, cfg.embed_dim);
    let before = Hrnn::new(cfg.clone(), params.clone()).unwrap().scores(&emb).unwrap();
    params.classifier.bias.values_mut()[1] += 0.5;
    let after = Hrnn::new(cfg, params).unwrap().scores(&emb).unwrap();
    assert!(after[1] > before[1]);
    assert_eq!(after[0], before[0]);
    assert_eq!(after[2], before[2]);
    assert!(after.iter().all(|p| *p > 0.0 && *p < 1.0));
}

#[test]
fn param_count_formula_matches_allocation() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..10 {
        let seq_len = rng.gen_range(2..20);
        let cfg = EncoderConfig {
            feature_dim: rng.gen_range(1..9),
            seq_len,
            window_len: rng.gen_range(1..=seq_len),
            level1_mode: if rng.gen() { Level1Mode::Windowed } else { Level1Mode::Strided },
            stride: rng.gen_range(1..=seq_len),
            hidden1: rng.gen_range(1..9),
            hidden2: rng.gen_range(1..9),
            embed_dim: rng.gen_range(1..9),
            dropout1_keep: 0.5,
            num_classes: rng.gen_range(2..6),
            attention: rng.gen(),
        };
        let params = EncoderParams::init(&cfg, &mut rng);
        assert_eq!(params.param_count(), cfg.param_count());
        assert_eq!(params.tensors().len(), params.named_tensors().len());
        assert!(params.tensors().iter().all(|t| t.requires_grad()));
    }
}

#[test]
fn config_violations_are_all_reported() {
    let mut cfg = toy_config();
    cfg.window_len = 20;
    cfg.dropout1_keep = 0.0;
    cfg.num_classes = 1;
    assert_eq!(cfg.violations().len(), 3);
}

#[test]
fn wrong_sequence_length_is_a_shape_error() {
    let cfg = toy_config();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = EncoderParams::init(&cfg, &mut rng);
    let seq = FeatureSequence::new("x", 0, 4, cfg.feature_dim, vec![0.0; 4 * cfg.feature_dim]).unwrap();
    let model = Hrnn::new(cfg, params).unwrap();
    assert!(matches!(model.embed(&seq), Err(Error::Shape { .. })));
}

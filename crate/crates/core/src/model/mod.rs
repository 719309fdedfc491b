//! Attention-based sequence-to-sequence network.
//!
//! Frames are embedded by a learned linear map and read by a stacked
//! bidirectional GRU. A stacked GRU decoder attends over the encoder outputs
//! with an additive scorer and predicts one of `vocab_size` symbols per step.

mod beam;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::grad::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::reward::RewardTrace;
use crate::rng::{self, Rng};
use crate::vocab::{self, BOS, EOS, VOCAB_SIZE};

pub use beam::{beam_search_exhaustive, BeamConfig};

/// Network dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Width `F` of each input frame.
    pub feature_dim: usize,
    /// Width of the linear frame embedding.
    pub frame_embed: usize,
    /// Per-direction encoder GRU width.
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub attn_dim: usize,
    pub token_embed: usize,
    /// Layers in both the encoder and the decoder.
    pub layers: usize,
    /// Dropout on the decoder output features during training.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: VOCAB_SIZE,
            feature_dim: 48,
            frame_embed: 32,
            enc_hidden: 32,
            dec_hidden: 64,
            attn_dim: 32,
            token_embed: 16,
            layers: 2,
            dropout: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("feature_dim", self.feature_dim),
            ("frame_embed", self.frame_embed),
            ("enc_hidden", self.enc_hidden),
            ("dec_hidden", self.dec_hidden),
            ("attn_dim", self.attn_dim),
            ("token_embed", self.token_embed),
            ("layers", self.layers),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.vocab_size <= EOS as usize {
            return Err(Error::Config("model.vocab_size must exceed the EOS index".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("model.dropout must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn enc_out(&self) -> usize {
        2 * self.enc_hidden
    }
}

#[derive(Debug, Clone)]
struct GruParams {
    hidden: usize,
    w_ih: ParamId,
    w_hh: ParamId,
    b_ih: ParamId,
    b_hh: ParamId,
}

impl GruParams {
    fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        Ok(Self {
            hidden,
            w_ih: store.add_uniform(format!("{prefix}.w_ih"), &[input, 3 * hidden], bound, rng)?,
            w_hh: store.add_uniform(format!("{prefix}.w_hh"), &[hidden, 3 * hidden], bound, rng)?,
            b_ih: store.add_uniform(format!("{prefix}.b_ih"), &[1, 3 * hidden], bound, rng)?,
            b_hh: store.add_uniform(format!("{prefix}.b_hh"), &[1, 3 * hidden], bound, rng)?,
        })
    }

    /// Input projections for every row of `x` at once: `x W_ih + b_ih`.
    fn project(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.w_ih);
        let b = tape.param(self.b_ih);
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }

    /// One GRU step from a projected input row `gi` (`1 x 3H`):
    ///
    /// ```text
    /// r = σ(gi_r + gh_r)    z = σ(gi_z + gh_z)
    /// n = tanh(gi_n + r ⊙ gh_n)
    /// h' = (1 - z) ⊙ n + z ⊙ h
    /// ```
    fn step(&self, tape: &mut Tape, gi: Var, h: Var) -> Result<Var> {
        let hd = self.hidden;
        let w = tape.param(self.w_hh);
        let b = tape.param(self.b_hh);
        let hw = tape.matmul(h, w)?;
        let gh = tape.add_row(hw, b)?;
        let gi_rz = tape.slice_cols(gi, 0, 2 * hd)?;
        let gh_rz = tape.slice_cols(gh, 0, 2 * hd)?;
        let rz = tape.add(gi_rz, gh_rz)?;
        let rz = tape.sigmoid(rz);
        let r = tape.slice_cols(rz, 0, hd)?;
        let z = tape.slice_cols(rz, hd, hd)?;
        let gi_n = tape.slice_cols(gi, 2 * hd, hd)?;
        let gh_n = tape.slice_cols(gh, 2 * hd, hd)?;
        let rn = tape.mul(r, gh_n)?;
        let n = tape.add(gi_n, rn)?;
        let n = tape.tanh(n);
        let diff = tape.sub(h, n)?;
        let zd = tape.mul(z, diff)?;
        tape.add(n, zd)
    }
}

/// Parameter handles of the network. Handles are positional, so the same
/// `Network` evaluates any [`ParamStore`] with the same layout.
#[derive(Debug, Clone)]
pub struct Network {
    config: ModelConfig,
    frame_w: ParamId,
    frame_b: ParamId,
    /// `(forward, backward)` per encoder layer
    encoder: Vec<(GruParams, GruParams)>,
    init_w: Vec<ParamId>,
    init_b: Vec<ParamId>,
    token_embed: ParamId,
    attn_key: ParamId,
    attn_query: ParamId,
    attn_bias: ParamId,
    attn_v: ParamId,
    decoder: Vec<GruParams>,
    out_w: ParamId,
    out_b: ParamId,
}

/// Encoder outputs `O^e` (`T x 2H`), their attention keys, and the final
/// forward/backward state of each layer (`1 x 2H` each).
#[derive(Debug, Clone)]
pub struct EncoderState {
    pub outputs: Var,
    pub keys: Var,
    pub finals: Vec<Var>,
    pub len: usize,
}

/// Decoder hidden state, one `1 x H` row per layer.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub hidden: Vec<Var>,
}

/// Everything produced by one decoder step.
#[derive(Debug, Clone)]
pub struct DecoderStep {
    pub state: DecoderState,
    /// `1 x T`, a probability simplex.
    pub attention: Var,
    pub context: Var,
    pub logits: Var,
    pub log_probs: Var,
}

/// A sampled rollout: tokens drawn from the decoder's own distribution and
/// the log-probability nodes of each draw. Ends with `EOS` unless cut by
/// `max_len`.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub tokens: Vec<u32>,
    pub log_probs: Vec<Var>,
}

/// One Monte-Carlo episode with its rewards and per-step losses.
#[derive(Debug, Clone)]
pub struct Episode {
    pub sampled: Vec<u32>,
    pub log_probs: Vec<f64>,
    pub rewards: RewardTrace,
    pub losses: Vec<f64>,
}

/// Decoded sequence with its total log-probability under the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub log_prob: f64,
}

impl Hypothesis {
    /// Length-normalized score `log_prob / len^alpha`.
    pub fn score(&self, alpha: f64) -> f64 {
        length_normalize(self.log_prob, self.tokens.len(), alpha)
    }

    /// Printable content, cut at the first `EOS`.
    pub fn characters(&self) -> Vec<u32> {
        vocab::characters(&self.tokens)
    }
}

pub(crate) fn length_normalize(log_prob: f64, len: usize, alpha: f64) -> f64 {
    if alpha == 0.0 || len == 0 {
        log_prob
    } else {
        log_prob / (len as f64).powf(alpha)
    }
}

fn dropout_mask(rng: &mut Rng, len: usize, p: f64) -> Tensor {
    let keep = 1.0 / (1.0 - p);
    Tensor::row(
        (0..len)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect(),
    )
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Draws an index from `exp(log_probs / temperature)`. A zero temperature
/// is the argmax.
pub fn sample_index(log_probs: &[f64], temperature: f64, rng: &mut Rng) -> usize {
    if temperature <= 0.0 {
        return argmax(log_probs);
    }
    let max = log_probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_probs
        .iter()
        .map(|lp| ((lp - max) / temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u < 0.0 {
            return i;
        }
    }
    // rounding left a sliver of mass; fall back to the last non-zero weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

impl Network {
    pub fn build(config: &ModelConfig, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let c = config;
        let lin = |n: usize| 1.0 / (n as f64).sqrt();
        let frame_w = store.add_uniform("enc.frame.w", &[c.feature_dim, c.frame_embed], lin(c.feature_dim), rng)?;
        let frame_b = store.add_uniform("enc.frame.b", &[1, c.frame_embed], lin(c.feature_dim), rng)?;
        let mut encoder = Vec::with_capacity(c.layers);
        for l in 0..c.layers {
            let input = if l == 0 { c.frame_embed } else { c.enc_out() };
            let fwd = GruParams::register(store, &format!("enc.l{l}.fwd"), input, c.enc_hidden, rng)?;
            let bwd = GruParams::register(store, &format!("enc.l{l}.bwd"), input, c.enc_hidden, rng)?;
            encoder.push((fwd, bwd));
        }
        let mut init_w = Vec::new();
        let mut init_b = Vec::new();
        for l in 0..c.layers {
            init_w.push(store.add_uniform(format!("dec.init{l}.w"), &[c.enc_out(), c.dec_hidden], lin(c.enc_out()), rng)?);
            init_b.push(store.add_uniform(format!("dec.init{l}.b"), &[1, c.dec_hidden], lin(c.enc_out()), rng)?);
        }
        let token_embed = store.add_uniform("dec.embed", &[c.vocab_size, c.token_embed], 1.0, rng)?;
        let attn_key = store.add_uniform("attn.key", &[c.enc_out(), c.attn_dim], lin(c.enc_out()), rng)?;
        let attn_query = store.add_uniform("attn.query", &[c.dec_hidden, c.attn_dim], lin(c.dec_hidden), rng)?;
        let attn_bias = store.add_uniform("attn.bias", &[1, c.attn_dim], lin(c.dec_hidden), rng)?;
        let attn_v = store.add_uniform("attn.v", &[c.attn_dim, 1], lin(c.attn_dim), rng)?;
        let mut decoder = Vec::with_capacity(c.layers);
        for l in 0..c.layers {
            let input = if l == 0 { c.token_embed + c.enc_out() } else { c.dec_hidden };
            decoder.push(GruParams::register(store, &format!("dec.l{l}"), input, c.dec_hidden, rng)?);
        }
        let out_in = c.dec_hidden + c.enc_out();
        let out_w = store.add_uniform("dec.out.w", &[out_in, c.vocab_size], lin(out_in), rng)?;
        let out_b = store.add_uniform("dec.out.b", &[1, c.vocab_size], lin(out_in), rng)?;
        Ok(Self {
            config: c.clone(),
            frame_w,
            frame_b,
            encoder,
            init_w,
            init_b,
            token_embed,
            attn_key,
            attn_query,
            attn_bias,
            attn_v,
            decoder,
            out_w,
            out_b,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Runs the bidirectional encoder over a `T x F` frame matrix.
    pub fn encode(&self, tape: &mut Tape, frames: &Tensor) -> Result<EncoderState> {
        let (t_len, width) = frames.dims2();
        if width != self.config.feature_dim || t_len == 0 || frames.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "encode",
                lhs: frames.shape().to_vec(),
                rhs: vec![self.config.feature_dim],
            });
        }
        let x = tape.constant(frames.clone());
        self.encode_var(tape, x, t_len)
    }

    /// As [`Network::encode`] for frames already on the tape.
    pub fn encode_var(&self, tape: &mut Tape, frames: Var, t_len: usize) -> Result<EncoderState> {
        let w = tape.param(self.frame_w);
        let b = tape.param(self.frame_b);
        let xw = tape.matmul(frames, w)?;
        let mut layer_in = tape.add_row(xw, b)?;
        let mut finals = Vec::with_capacity(self.encoder.len());
        for (fwd, bwd) in &self.encoder {
            let h0 = tape.constant(Tensor::zeros(&[1, self.config.enc_hidden]));
            let gi_f = fwd.project(tape, layer_in)?;
            let gi_b = bwd.project(tape, layer_in)?;
            let mut fwd_states = Vec::with_capacity(t_len);
            let mut h = h0;
            for t in 0..t_len {
                let gi = tape.slice_rows(gi_f, t, 1)?;
                h = fwd.step(tape, gi, h)?;
                fwd_states.push(h);
            }
            let mut bwd_states = vec![h0; t_len];
            let mut h = h0;
            for t in (0..t_len).rev() {
                let gi = tape.slice_rows(gi_b, t, 1)?;
                h = bwd.step(tape, gi, h)?;
                bwd_states[t] = h;
            }
            let rows = fwd_states
                .iter()
                .zip(&bwd_states)
                .map(|(&f, &b)| tape.concat_cols(&[f, b]))
                .collect::<Result<Vec<_>>>()?;
            finals.push(tape.concat_cols(&[fwd_states[t_len - 1], bwd_states[0]])?);
            layer_in = tape.concat_rows(&rows)?;
        }
        let key_w = tape.param(self.attn_key);
        let keys = tape.matmul(layer_in, key_w)?;
        Ok(EncoderState {
            outputs: layer_in,
            keys,
            finals,
            len: t_len,
        })
    }

    /// Decoder start state: `tanh(W_l [h_fwd; h_bwd] + b_l)` per layer.
    pub fn initial_state(&self, tape: &mut Tape, enc: &EncoderState) -> Result<DecoderState> {
        let hidden = (0..self.decoder.len())
            .map(|l| {
                let w = tape.param(self.init_w[l]);
                let b = tape.param(self.init_b[l]);
                let src = enc.finals[l.min(enc.finals.len() - 1)];
                let x = tape.matmul(src, w)?;
                let x = tape.add_row(x, b)?;
                Ok(tape.tanh(x))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DecoderState { hidden })
    }

    /// Additive attention of a decoder state over the encoder outputs.
    /// Returns `(weights 1 x T, context 1 x 2H)`.
    pub fn attend(&self, tape: &mut Tape, h_prev: Var, enc: &EncoderState) -> Result<(Var, Var)> {
        let wq = tape.param(self.attn_query);
        let bq = tape.param(self.attn_bias);
        let v = tape.param(self.attn_v);
        let q = tape.matmul(h_prev, wq)?;
        let q = tape.add_row(q, bq)?;
        let s = tape.add_row(enc.keys, q)?;
        let s = tape.tanh(s);
        let e = tape.matmul(s, v)?;
        let e = tape.reshape(e, &[1, enc.len])?;
        let a = tape.softmax(e);
        let ctx = tape.matmul(a, enc.outputs)?;
        Ok((a, ctx))
    }

    /// Consumes `y_prev`, attends with the previous top-layer state, advances
    /// the GRU stack and projects to `vocab_size` logits.
    pub fn decode_step(
        &self,
        tape: &mut Tape,
        state: &DecoderState,
        y_prev: u32,
        enc: &EncoderState,
        dropout: Option<&mut Rng>,
    ) -> Result<DecoderStep> {
        if y_prev as usize >= self.config.vocab_size {
            return Err(Error::InvalidToken {
                token: y_prev,
                vocab_size: self.config.vocab_size,
            });
        }
        let top = *state.hidden.last().expect("at least one decoder layer");
        let (attention, context) = self.attend(tape, top, enc)?;
        let table = tape.param(self.token_embed);
        let emb = tape.embedding(table, y_prev as usize)?;
        let mut x = tape.concat_cols(&[emb, context])?;
        let mut hidden = Vec::with_capacity(self.decoder.len());
        for (gru, &h) in self.decoder.iter().zip(&state.hidden) {
            let gi = gru.project(tape, x)?;
            let h_new = gru.step(tape, gi, h)?;
            hidden.push(h_new);
            x = h_new;
        }
        let mut features = tape.concat_cols(&[x, context])?;
        if let Some(rng) = dropout {
            if self.config.dropout > 0.0 {
                let width = tape.shape(features)[1];
                let mask = tape.constant(dropout_mask(rng, width, self.config.dropout));
                features = tape.mul(features, mask)?;
            }
        }
        let w = tape.param(self.out_w);
        let b = tape.param(self.out_b);
        let logits = tape.matmul(features, w)?;
        let logits = tape.add_row(logits, b)?;
        let log_probs = tape.log_softmax(logits);
        Ok(DecoderStep {
            state: DecoderState { hidden },
            attention,
            context,
            logits,
            log_probs,
        })
    }

    /// Feeds the ground-truth previous token at every step (starting from
    /// `BOS`) and returns `log P(targets[u] | targets[..u])` nodes.
    pub fn decode_teacher_forced(
        &self,
        tape: &mut Tape,
        enc: &EncoderState,
        targets: &[u32],
        mut dropout: Option<&mut Rng>,
    ) -> Result<Vec<Var>> {
        let mut state = self.initial_state(tape, enc)?;
        let mut prev = BOS;
        let mut out = Vec::with_capacity(targets.len());
        for &target in targets {
            if target as usize >= self.config.vocab_size {
                return Err(Error::InvalidToken {
                    token: target,
                    vocab_size: self.config.vocab_size,
                });
            }
            let step = self.decode_step(tape, &state, prev, enc, dropout.as_deref_mut())?;
            out.push(tape.gather(step.log_probs, target as usize)?);
            state = step.state;
            prev = target;
        }
        Ok(out)
    }

    /// Samples from the decoder feeding back its own draws, stopping after
    /// `EOS` or `max_len` tokens.
    pub fn sample(
        &self,
        tape: &mut Tape,
        enc: &EncoderState,
        max_len: usize,
        temperature: f64,
        rng: &mut Rng,
        mut dropout: Option<&mut Rng>,
    ) -> Result<Rollout> {
        let mut state = self.initial_state(tape, enc)?;
        let mut prev = BOS;
        let mut tokens = Vec::new();
        let mut log_probs = Vec::new();
        for _ in 0..max_len {
            let step = self.decode_step(tape, &state, prev, enc, dropout.as_deref_mut())?;
            let tok = sample_index(tape.value(step.log_probs).data(), temperature, rng);
            log_probs.push(tape.gather(step.log_probs, tok)?);
            tokens.push(tok as u32);
            state = step.state;
            prev = tok as u32;
            if prev == EOS {
                break;
            }
        }
        Ok(Rollout { tokens, log_probs })
    }

    /// Argmax decoding with feedback.
    pub fn greedy(&self, tape: &mut Tape, enc: &EncoderState, max_len: usize) -> Result<Hypothesis> {
        let mut state = self.initial_state(tape, enc)?;
        let mut prev = BOS;
        let mut hyp = Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
        };
        for _ in 0..max_len {
            let step = self.decode_step(tape, &state, prev, enc, None)?;
            let lp = tape.value(step.log_probs).data();
            let tok = argmax(lp);
            hyp.log_prob += lp[tok];
            hyp.tokens.push(tok as u32);
            state = step.state;
            prev = tok as u32;
            if prev == EOS {
                break;
            }
        }
        Ok(hyp)
    }
}

/// A network together with its parameter values.
#[derive(Debug, Clone)]
pub struct Seq2Seq {
    net: Network,
    params: ParamStore,
}

impl Seq2Seq {
    /// Fresh model with parameters drawn from the `init` substream of `seed`.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = rng::stream(seed, rng::streams::INIT, 0);
        let net = Network::build(config, &mut store, &mut rng)?;
        Ok(Self { net, params: store })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn tape(&self) -> Tape<'_> {
        Tape::new(&self.params)
    }

    pub fn greedy_decode(&self, frames: &Tensor, max_len: usize) -> Result<Hypothesis> {
        let mut tape = self.tape();
        let enc = self.net.encode(&mut tape, frames)?;
        self.net.greedy(&mut tape, &enc, max_len)
    }

    pub fn beam_search(&self, frames: &Tensor, config: &BeamConfig) -> Result<Hypothesis> {
        let mut tape = self.tape();
        let enc = self.net.encode(&mut tape, frames)?;
        beam::beam_search(&self.net, &mut tape, &enc, config)
    }

    /// Total log-probability of a given token sequence (teacher-forced).
    pub fn sequence_log_prob(&self, frames: &Tensor, tokens: &[u32]) -> Result<f64> {
        let mut tape = self.tape();
        let enc = self.net.encode(&mut tape, frames)?;
        let lps = self.net.decode_teacher_forced(&mut tape, &enc, tokens, None)?;
        Ok(lps.iter().map(|&v| tape.item(v)).sum())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.meta.insert(
            "model".into(),
            serde_json::to_value(&self.net.config).expect("config serializes"),
        );
        ck.tensors = self
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        ck
    }

    /// Rebuilds a model from a checkpoint. Extra tensors (optimizer state)
    /// are ignored; missing or misshapen parameters are errors.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: ModelConfig = ck
            .meta
            .get("model")
            .cloned()
            .ok_or_else(|| Error::Format("checkpoint has no model config".into()))
            .and_then(|v| {
                serde_json::from_value(v).map_err(|e| Error::Format(format!("model config: {e}")))
            })?;
        let mut model = Self::new(&config, 0)?;
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id).to_string();
            let t = ck
                .tensor(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint is missing {name}")))?;
            model.params.set(id, t.clone())?;
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, check_param_grads, rel_error, FdSettings};
    use rand::SeedableRng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 40,
            feature_dim: 6,
            frame_embed: 5,
            enc_hidden: 4,
            dec_hidden: 8,
            attn_dim: 4,
            token_embed: 3,
            layers: 2,
            dropout: 0.0,
        }
    }

    fn frames(t: usize, f: usize, seed: u64) -> Tensor {
        let mut rng = Rng::seed_from_u64(seed);
        Tensor::new(&[t, f], (0..t * f).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn encode_shapes() {
        let m = Seq2Seq::new(&tiny(), 1).unwrap();
        let mut tape = m.tape();
        let enc = m.network().encode(&mut tape, &frames(1, 6, 2)).unwrap();
        assert_eq!(tape.shape(enc.outputs), &[1, 8]);
        let rep = Tensor::new(&[3, 6], frames(1, 6, 2).data().repeat(3)).unwrap();
        let enc = m.network().encode(&mut tape, &rep).unwrap();
        assert_eq!(tape.shape(enc.outputs), &[3, 8]);
        assert!(m.network().encode(&mut tape, &frames(3, 5, 2)).is_err());
    }

    #[test]
    fn encode_probe_gradient() {
        let m = Seq2Seq::new(&tiny(), 1).unwrap();
        let x = frames(4, 6, 9);
        let probe = |data: &[f64]| -> (f64, Vec<f64>) {
            let mut tape = m.tape();
            let xv = tape.input(Tensor::new(&[4, 6], data.to_vec()).unwrap());
            let enc = m.network().encode_var(&mut tape, xv, 4).unwrap();
            let t = tape.tanh(enc.outputs);
            let l = tape.sum(t);
            let g = tape.backward(l).unwrap();
            (tape.item(l), g.wrt(xv).unwrap().to_vec())
        };
        let (_, analytic) = probe(x.data());
        let numeric = central_difference(x.data(), 1e-6, |d| probe(d).0);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!(rel_error(*a, *n) < 1e-6, "{a} vs {n}");
        }
    }

    #[test]
    fn attention_singleton_and_loop_oracle() {
        let m = Seq2Seq::new(&tiny(), 3).unwrap();
        let mut tape = m.tape();
        let enc = m.network().encode(&mut tape, &frames(1, 6, 4)).unwrap();
        let st = m.network().initial_state(&mut tape, &enc).unwrap();
        let (a, ctx) = m.network().attend(&mut tape, st.hidden[1], &enc).unwrap();
        assert_eq!(tape.value(a).data(), &[1.0]);
        assert_eq!(tape.value(ctx).data(), tape.value(enc.outputs).data());

        let enc = m.network().encode(&mut tape, &frames(5, 6, 4)).unwrap();
        let st = m.network().initial_state(&mut tape, &enc).unwrap();
        let (a, ctx) = m.network().attend(&mut tape, st.hidden[1], &enc).unwrap();
        let w = tape.value(a).data().to_vec();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&x| x >= 0.0));
        let o = tape.value(enc.outputs);
        let width = o.dims2().1;
        for c in 0..width {
            let expect: f64 = (0..5).map(|t| w[t] * o.data()[t * width + c]).sum();
            assert!((expect - tape.value(ctx).data()[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_scores_give_uniform_weights() {
        let mut m = Seq2Seq::new(&tiny(), 3).unwrap();
        let v = m.params().id("attn.v").unwrap();
        m.params_mut().set(v, Tensor::zeros(&[4, 1])).unwrap();
        let mut tape = m.tape();
        let enc = m.network().encode(&mut tape, &frames(4, 6, 4)).unwrap();
        let st = m.network().initial_state(&mut tape, &enc).unwrap();
        let (a, _) = m.network().attend(&mut tape, st.hidden[1], &enc).unwrap();
        for &x in tape.value(a).data() {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn decode_step_contract() {
        let m = Seq2Seq::new(&ModelConfig { dropout: 0.5, ..tiny() }, 5).unwrap();
        let mut tape = m.tape();
        let enc = m.network().encode(&mut tape, &frames(3, 6, 1)).unwrap();
        let st = m.network().initial_state(&mut tape, &enc).unwrap();
        let mut rng = Rng::seed_from_u64(0);
        let step = m.network().decode_step(&mut tape, &st, BOS, &enc, Some(&mut rng)).unwrap();
        assert_eq!(tape.value(step.logits).len(), 40);
        let mass: f64 = tape.value(step.log_probs).data().iter().map(|x| x.exp()).sum();
        assert!((mass - 1.0).abs() < 1e-9);
        assert!(m.network().decode_step(&mut tape, &st, 40, &enc, None).is_err());
    }

    #[test]
    fn decode_step_gradient() {
        let m = Seq2Seq::new(&tiny(), 8).unwrap();
        let x = frames(3, 6, 2);
        let loss = |store: &ParamStore| -> Result<f64> {
            let mut tape = Tape::new(store);
            let enc = m.network().encode(&mut tape, &x)?;
            let st = m.network().initial_state(&mut tape, &enc)?;
            let step = m.network().decode_step(&mut tape, &st, 7, &enc, None)?;
            let l = tape.gather(step.log_probs, 11)?;
            Ok(tape.item(l))
        };
        let mut tape = m.tape();
        let enc = m.network().encode(&mut tape, &x).unwrap();
        let st = m.network().initial_state(&mut tape, &enc).unwrap();
        let step = m.network().decode_step(&mut tape, &st, 7, &enc, None).unwrap();
        let l = tape.gather(step.log_probs, 11).unwrap();
        let g = tape.backward(l).unwrap().to_param_grads(m.params());
        let report = check_param_grads("decode_step", m.params(), &g, FdSettings::MODEL, loss).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn teacher_forced_contract() {
        let m = Seq2Seq::new(&tiny(), 2).unwrap();
        let mut tape = m.tape();
        let enc = m.network().encode(&mut tape, &frames(4, 6, 3)).unwrap();
        let lps = m.network().decode_teacher_forced(&mut tape, &enc, &[5, 6, 7, EOS], None).unwrap();
        assert_eq!(lps.len(), 4);
        assert!(lps.iter().all(|&v| tape.item(v) <= 0.0));
    }

    #[test]
    fn sampling_is_seeded_and_zero_temperature_is_greedy() {
        let m = Seq2Seq::new(&tiny(), 4).unwrap();
        let x = frames(5, 6, 1);
        let run = |seed: u64, temp: f64| {
            let mut tape = m.tape();
            let enc = m.network().encode(&mut tape, &x).unwrap();
            let mut rng = Rng::seed_from_u64(seed);
            m.network().sample(&mut tape, &enc, 12, temp, &mut rng, None).unwrap().tokens
        };
        assert_eq!(run(9, 1.0), run(9, 1.0));
        let greedy = m.greedy_decode(&x, 12).unwrap();
        assert_eq!(run(9, 0.0), greedy.tokens);
        assert_eq!(run(9, 1e-9), greedy.tokens);
        let g2 = m.greedy_decode(&x, 12).unwrap();
        assert_eq!(greedy, g2);
        assert!(greedy.tokens.len() <= 12);
        if let Some(pos) = greedy.tokens.iter().position(|&t| t == EOS) {
            assert_eq!(pos + 1, greedy.tokens.len());
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = Seq2Seq::new(&tiny(), 6).unwrap();
        let bytes = m.to_checkpoint().to_bytes();
        let back = Seq2Seq::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.config(), m.config());
        let mut ck = m.to_checkpoint();
        ck.tensors.pop();
        assert!(Seq2Seq::from_checkpoint(&ck).is_err());
    }

    #[test]
    fn sample_index_distribution() {
        let mut rng = Rng::seed_from_u64(1);
        let lp = [0.25f64.ln(), 0.75f64.ln()];
        let ones = (0..20000).filter(|_| sample_index(&lp, 1.0, &mut rng) == 1).count();
        assert!((ones as f64 / 20000.0 - 0.75).abs() < 0.02);
    }
}

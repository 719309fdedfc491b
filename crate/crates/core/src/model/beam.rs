use serde::{Deserialize, Serialize};

use super::{length_normalize, DecoderState, EncoderState, Hypothesis, Network};
use crate::error::{Error, Result};
use crate::grad::Tape;
use crate::vocab::{BOS, EOS};

/// Beam search settings. Hypotheses are ranked by
/// `log_prob / len^length_alpha`; `length_alpha = 0` ranks by raw
/// log-probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamConfig {
    pub width: usize,
    pub max_len: usize,
    pub length_alpha: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            width: 4,
            max_len: 32,
            length_alpha: 1.0,
        }
    }
}

struct Live {
    tokens: Vec<u32>,
    log_prob: f64,
    state: DecoderState,
}

/// Keeps the `width` best extensions per step. Finished (`EOS`) candidates
/// compete for the same slots as live ones, so `width = 1` reproduces greedy
/// decoding exactly.
pub(super) fn beam_search(
    net: &Network,
    tape: &mut Tape,
    enc: &EncoderState,
    config: &BeamConfig,
) -> Result<Hypothesis> {
    if config.width == 0 {
        return Err(Error::invalid("beam width must be at least 1"));
    }
    let start = net.initial_state(tape, enc)?;
    let mut alive = vec![Live {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: start,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..config.max_len {
        if alive.is_empty() {
            break;
        }
        let mut steps = Vec::with_capacity(alive.len());
        let mut candidates: Vec<(usize, u32, f64)> = Vec::new();
        for (bi, hyp) in alive.iter().enumerate() {
            let prev = hyp.tokens.last().copied().unwrap_or(BOS);
            let step = net.decode_step(tape, &hyp.state, prev, enc, None)?;
            for (tok, lp) in tape.value(step.log_probs).data().iter().enumerate() {
                candidates.push((bi, tok as u32, hyp.log_prob + lp));
            }
            steps.push(step.state);
        }
        let len = alive[0].tokens.len() + 1;
        // stable: ties keep (beam, token) order
        candidates.sort_by(|a, b| {
            let sa = length_normalize(a.2, len, config.length_alpha);
            let sb = length_normalize(b.2, len, config.length_alpha);
            sb.total_cmp(&sa)
        });
        candidates.truncate(config.width);
        let mut next = Vec::with_capacity(candidates.len());
        for (bi, tok, log_prob) in candidates {
            let mut tokens = alive[bi].tokens.clone();
            tokens.push(tok);
            if tok == EOS {
                finished.push(Hypothesis { tokens, log_prob });
            } else {
                next.push(Live {
                    tokens,
                    log_prob,
                    state: steps[bi].clone(),
                });
            }
        }
        alive = next;
    }
    finished.extend(alive.into_iter().map(|l| Hypothesis {
        tokens: l.tokens,
        log_prob: l.log_prob,
    }));
    let mut best = finished.swap_remove(0);
    for h in finished {
        if h.score(config.length_alpha) > best.score(config.length_alpha) {
            best = h;
        }
    }
    Ok(best)
}

/// Scores every sequence that ends in `EOS` within `max_len` steps, or runs
/// to `max_len`, and returns the best under the same ranking as the beam.
/// Cost grows as `vocab_size^max_len`; meant for small checks.
pub fn beam_search_exhaustive(
    net: &Network,
    tape: &mut Tape,
    enc: &EncoderState,
    max_len: usize,
    length_alpha: f64,
) -> Result<Hypothesis> {
    fn walk(
        net: &Network,
        tape: &mut Tape,
        enc: &EncoderState,
        state: &DecoderState,
        prefix: &mut Vec<u32>,
        log_prob: f64,
        max_len: usize,
        alpha: f64,
        best: &mut Option<Hypothesis>,
    ) -> Result<()> {
        let prev = prefix.last().copied().unwrap_or(BOS);
        let step = net.decode_step(tape, state, prev, enc, None)?;
        let lps = tape.value(step.log_probs).data().to_vec();
        for (tok, lp) in lps.into_iter().enumerate() {
            prefix.push(tok as u32);
            let total = log_prob + lp;
            if tok as u32 == EOS || prefix.len() == max_len {
                let h = Hypothesis {
                    tokens: prefix.clone(),
                    log_prob: total,
                };
                if best.as_ref().is_none_or(|b| h.score(alpha) > b.score(alpha)) {
                    *best = Some(h);
                }
            } else {
                walk(net, tape, enc, &step.state, prefix, total, max_len, alpha, best)?;
            }
            prefix.pop();
        }
        Ok(())
    }

    if max_len == 0 {
        return Ok(Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
        });
    }
    let start = net.initial_state(tape, enc)?;
    let mut best = None;
    walk(net, tape, enc, &start, &mut Vec::new(), 0.0, max_len, length_alpha, &mut best)?;
    Ok(best.expect("at least one complete sequence"))
}

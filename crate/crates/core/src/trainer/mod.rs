//! Losses, optimizers, the training loop and the encoder probe.

mod optim;
mod probe;
mod run;

pub use optim::Optimizer;
pub use probe::{classifier_probe, ProbeConfig, ProbeMode, ProbeReport};
pub use run::{LogRow, StopReason, TrainOutcome, Trainer, CSV_HEADER};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{ParamGrads, Tape, Tensor, Var};
use crate::model::{Episode, EncoderState, Seq2Seq};
use crate::pcpg::{self, Padding, PcpgKernel};
use crate::reward::{self, DiscountMode, RewardTrace};
use crate::rng::Rng;
use crate::tasks::Sample;
use crate::vocab::EOS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// Which sequence the cross-entropy term is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CeSource {
    /// Ground-truth transcript, fed back token by token.
    #[default]
    TeacherForced,
    /// The model's own sampled episodes.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the PCPG term: `(1 - lambda) * CE + lambda * PCPG`.
    pub lambda: f64,
    pub gamma: f64,
    pub discount: DiscountMode,
    /// Monte-Carlo episodes per sample (`M`).
    pub episodes: usize,
    pub kernel_size: usize,
    pub kernel_stride: usize,
    /// Uniform when absent.
    pub kernel_weights: Option<Vec<f64>>,
    pub padding: Padding,
    /// Constant subtracted from every return.
    pub baseline: Option<f64>,
    pub ce_source: CeSource,
    pub temperature: f64,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// Rescale gradients whose global norm exceeds this.
    pub grad_clip: Option<f64>,
    pub batch_size: usize,
    pub max_iters: u64,
    pub eval_every: u64,
    /// Cap on evaluated samples per split; 0 evaluates everything.
    pub eval_samples: usize,
    /// Evaluations without a new best val CER before stopping; 0 disables.
    pub patience: u64,
    /// Stop as soon as val CER reaches this.
    pub target_cer: Option<f64>,
    pub max_decode_len: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            gamma: reward::DEFAULT_GAMMA,
            discount: DiscountMode::default(),
            episodes: 1,
            kernel_size: 5,
            kernel_stride: 1,
            kernel_weights: None,
            padding: Padding::default(),
            baseline: None,
            ce_source: CeSource::default(),
            temperature: 1.0,
            optimizer: OptimizerKind::default(),
            lr: 0.001,
            grad_clip: None,
            batch_size: 16,
            max_iters: 20_000,
            eval_every: 250,
            eval_samples: 200,
            patience: 0,
            target_cer: None,
            max_decode_len: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if self.episodes == 0 {
            return fail("episodes must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr {} must be positive", self.lr));
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.max_decode_len == 0 {
            return fail("batch_size, eval_every and max_decode_len must be positive".into());
        }
        if !(self.temperature >= 0.0) {
            return fail(format!("temperature {} must be >= 0", self.temperature));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return fail(format!("grad_clip {c} must be positive"));
            }
        }
        self.kernel()?;
        Ok(())
    }

    pub fn kernel(&self) -> Result<PcpgKernel> {
        match &self.kernel_weights {
            Some(w) => PcpgKernel::new(self.kernel_size, self.kernel_stride, w.clone()),
            None => PcpgKernel::uniform(self.kernel_size, self.kernel_stride),
        }
    }

    fn needs_episodes(&self) -> bool {
        self.lambda > 0.0 || self.ce_source == CeSource::Sampled
    }
}

/// `-sum_u log p(c_u)` over the given per-step log-probability nodes.
pub fn ce_loss(tape: &mut Tape, log_probs: &[Var]) -> Result<Var> {
    if log_probs.is_empty() {
        return Err(Error::invalid("ce_loss needs at least one step"));
    }
    let row = tape.concat_cols(log_probs)?;
    let total = tape.sum(row);
    Ok(tape.scale(total, -1.0))
}

/// PCPG loss of one episode: per-step losses `-R_u log p_u` pushed through
/// the window map and summed. Returns are constants.
pub fn episode_pcpg_loss(
    tape: &mut Tape,
    log_probs: &[Var],
    returns: &[f64],
    kernel: &PcpgKernel,
    padding: Padding,
) -> Result<Var> {
    let u = log_probs.len();
    if u == 0 || returns.len() != u {
        return Err(Error::invalid(format!(
            "episode has {u} log-probabilities and {} returns",
            returns.len()
        )));
    }
    let lp = tape.concat_cols(log_probs)?;
    let neg_r = tape.constant(Tensor::row(returns.iter().map(|r| -r).collect()));
    let losses = tape.mul(lp, neg_r)?;
    let m = pcpg::window_matrix(kernel, u, padding);
    let rows = m.len();
    // transpose so the map is a right multiplication of the loss row
    let mut wt = vec![0.0; u * rows];
    for (r, row) in m.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            wt[c * rows + r] = v;
        }
    }
    let wt = tape.constant(Tensor::matrix(u, rows, wt)?);
    let mapped = tape.matmul(losses, wt)?;
    Ok(tape.sum(mapped))
}

/// An episode sampled on a tape, with its rewards.
#[derive(Debug, Clone)]
pub struct TapeEpisode {
    pub tokens: Vec<u32>,
    pub log_probs: Vec<Var>,
    pub rewards: RewardTrace,
}

impl TapeEpisode {
    pub fn to_episode(&self, tape: &Tape, kernel: &PcpgKernel, padding: Padding) -> Result<Episode> {
        let log_probs: Vec<f64> = self.log_probs.iter().map(|&v| tape.item(v)).collect();
        let per_step = pcpg::per_step_losses(&self.rewards.returns, &log_probs)?;
        Ok(Episode {
            sampled: self.tokens.clone(),
            losses: pcpg::window_map(&per_step, kernel, padding),
            log_probs,
            rewards: self.rewards.clone(),
        })
    }
}

/// Samples `config.episodes` rollouts and scores them against `reference`.
pub fn sample_episodes(
    model: &Seq2Seq,
    tape: &mut Tape,
    enc: &EncoderState,
    reference: &[u32],
    config: &TrainConfig,
    rng: &mut Rng,
    mut dropout: Option<&mut Rng>,
) -> Result<Vec<TapeEpisode>> {
    (0..config.episodes)
        .map(|_| {
            let roll = model.network().sample(
                tape,
                enc,
                config.max_decode_len,
                config.temperature,
                rng,
                dropout.as_deref_mut(),
            )?;
            let mut rewards = RewardTrace::compute(&roll.tokens, reference, config.gamma, config.discount)?;
            if let Some(b) = config.baseline {
                reward::apply_baseline(&mut rewards.returns, b);
            }
            Ok(TapeEpisode {
                tokens: roll.tokens,
                log_probs: roll.log_probs,
                rewards,
            })
        })
        .collect()
}

/// `(1/M) sum_m episode_pcpg_loss(m)`.
pub fn pcpg_loss(
    tape: &mut Tape,
    episodes: &[TapeEpisode],
    kernel: &PcpgKernel,
    padding: Padding,
) -> Result<Var> {
    if episodes.is_empty() {
        return Err(Error::invalid("pcpg_loss needs at least one episode"));
    }
    let parts = episodes
        .iter()
        .map(|e| episode_pcpg_loss(tape, &e.log_probs, &e.rewards.returns, kernel, padding))
        .collect::<Result<Vec<_>>>()?;
    let row = tape.concat_cols(&parts)?;
    let total = tape.sum(row);
    Ok(tape.scale(total, 1.0 / episodes.len() as f64))
}

/// Batch-mean losses of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub ce: f64,
    /// `None` when no episodes were needed (`lambda = 0`, teacher-forced CE).
    pub pcpg: Option<f64>,
    /// `(1 - lambda) * ce + lambda * pcpg`, with `pcpg` read as 0 when absent.
    pub combined: f64,
    pub ce_per_token: f64,
    /// Mean total immediate reward per episode.
    pub mean_reward: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub losses: LossBreakdown,
    pub grads: ParamGrads,
}

/// Per-sample objective `(1 - lambda) * CE + lambda * PCPG`, averaged over
/// the batch, and its gradient.
pub fn combined_step(
    model: &Seq2Seq,
    batch: &[&Sample],
    config: &TrainConfig,
    kernel: &PcpgKernel,
    episode_rng: &mut Rng,
    mut dropout: Option<&mut Rng>,
) -> Result<StepOutput> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let lambda = config.lambda;
    let mut grads = ParamGrads::zeros_like(model.params());
    let inv_b = 1.0 / batch.len() as f64;
    let (mut ce_sum, mut pcpg_sum, mut tokens, mut reward_sum, mut n_episodes) = (0.0, 0.0, 0usize, 0.0, 0usize);
    for sample in batch {
        let mut tape = model.tape();
        let enc = model.network().encode(&mut tape, &sample.frames)?;
        let reference = sample.transcript.characters();
        let episodes = if config.needs_episodes() {
            sample_episodes(model, &mut tape, &enc, &reference, config, episode_rng, dropout.as_deref_mut())?
        } else {
            Vec::new()
        };
        let ce = match config.ce_source {
            CeSource::TeacherForced => {
                let mut targets = reference.clone();
                targets.push(EOS);
                tokens += targets.len();
                let lps = model
                    .network()
                    .decode_teacher_forced(&mut tape, &enc, &targets, dropout.as_deref_mut())?;
                ce_loss(&mut tape, &lps)?
            }
            CeSource::Sampled => {
                let per = episodes
                    .iter()
                    .map(|e| {
                        tokens += e.log_probs.len();
                        ce_loss(&mut tape, &e.log_probs)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let row = tape.concat_cols(&per)?;
                let total = tape.sum(row);
                tape.scale(total, 1.0 / episodes.len() as f64)
            }
        };
        ce_sum += tape.item(ce);
        let objective = if lambda > 0.0 {
            let p = pcpg_loss(&mut tape, &episodes, kernel, config.padding)?;
            pcpg_sum += tape.item(p);
            for e in &episodes {
                reward_sum += e.rewards.immediate.iter().sum::<f64>();
            }
            n_episodes += episodes.len();
            let a = tape.scale(ce, 1.0 - lambda);
            let b = tape.scale(p, lambda);
            tape.add(a, b)?
        } else {
            ce
        };
        tape.backward(objective)?.accumulate_into(&mut grads, inv_b);
    }
    let ce = ce_sum * inv_b;
    let pcpg = (lambda > 0.0).then_some(pcpg_sum * inv_b);
    Ok(StepOutput {
        losses: LossBreakdown {
            ce,
            pcpg,
            combined: pcpg::combine(ce, pcpg.unwrap_or(0.0), lambda)?,
            ce_per_token: ce_sum / tokens.max(1) as f64,
            mean_reward: (n_episodes > 0).then(|| reward_sum / n_episodes as f64),
        },
        grads,
    })
}

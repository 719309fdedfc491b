use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index;
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::grad::{ParamGrads, ParamStore};
use crate::metrics::cer_tokens;
use crate::model::Seq2Seq;
use crate::pcpg::PcpgKernel;
use crate::rng::{self, streams};
use crate::tasks::{Dataset, Sample};

use super::{combined_step, LossBreakdown, Optimizer, TrainConfig};

pub const CSV_HEADER: &str = "iter,loss_ce,loss_pcpg,loss_combined,train_cer,val_cer,grad_norm,seconds";

/// One metrics line, written at every evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iter: u64,
    pub loss_ce: f64,
    /// Empty in the CSV when the PCPG term was not computed.
    pub loss_pcpg: Option<f64>,
    pub loss_combined: f64,
    pub train_cer: f64,
    pub val_cer: f64,
    pub grad_norm: f64,
    pub seconds: f64,
}

impl LogRow {
    pub fn csv_line(&self) -> String {
        format!("{},{:.3}", self.csv_line_untimed(), self.seconds)
    }

    /// Every column except wall time, which is the only nondeterministic one.
    pub fn csv_line_untimed(&self) -> String {
        let pcpg = self.loss_pcpg.map(|p| format!("{p:?}")).unwrap_or_default();
        format!(
            "{},{:?},{pcpg},{:?},{:?},{:?},{:?}",
            self.iter, self.loss_ce, self.loss_combined, self.train_cer, self.val_cer, self.grad_norm
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIters,
    TargetReached,
    Plateau,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub rows: Vec<LogRow>,
    pub iterations: u64,
    pub best_val_cer: f64,
    pub best_iter: u64,
    pub last_val_cer: f64,
    pub stop: StopReason,
}

/// Mean per-sample CER of greedy decodes over the first `limit` samples
/// (all when `limit` is 0).
pub fn mean_cer(model: &Seq2Seq, data: &Dataset, limit: usize, max_len: usize) -> Result<f64> {
    let cers = sample_cers(model, data, limit, max_len)?;
    if cers.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty dataset"));
    }
    Ok(cers.iter().sum::<f64>() / cers.len() as f64)
}

pub fn sample_cers(model: &Seq2Seq, data: &Dataset, limit: usize, max_len: usize) -> Result<Vec<f64>> {
    let n = if limit == 0 { data.len() } else { limit.min(data.len()) };
    data.samples[..n]
        .iter()
        .map(|s| {
            let hyp = model.greedy_decode(&s.frames, max_len)?;
            cer_tokens(&hyp.characters(), &s.transcript.characters())
        })
        .collect()
}

/// Owns the model and optimizer for the length of a run. All randomness of
/// iteration `i` comes from substreams indexed by `i`, so a run resumed from
/// a checkpoint continues exactly as the uninterrupted one would.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Seq2Seq,
    pub config: TrainConfig,
    optimizer: Optimizer,
    kernel: PcpgKernel,
    iteration: u64,
    best_val_cer: f64,
    best_iter: u64,
    best_params: ParamStore,
    evals_since_best: u64,
}

impl Trainer {
    pub fn new(model: Seq2Seq, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Optimizer::new(config.optimizer, config.lr, model.params());
        Ok(Self {
            kernel: config.kernel()?,
            best_params: model.params().clone(),
            optimizer,
            model,
            config,
            iteration: 0,
            best_val_cer: f64::INFINITY,
            best_iter: 0,
            evals_since_best: 0,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn best_val_cer(&self) -> f64 {
        self.best_val_cer
    }

    /// The model with the parameters of the best evaluation so far.
    pub fn best_model(&self) -> Seq2Seq {
        let mut m = self.model.clone();
        *m.params_mut() = self.best_params.clone();
        m
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        ck.meta.insert("iteration".into(), self.iteration.into());
        ck.meta.insert("best_iter".into(), self.best_iter.into());
        ck.meta.insert("evals_since_best".into(), self.evals_since_best.into());
        ck.meta.insert(
            "best_val_cer_bits".into(),
            self.best_val_cer.to_bits().into(),
        );
        ck.meta.insert(
            "train".into(),
            serde_json::to_value(&self.config).expect("config serializes"),
        );
        self.optimizer.save_state(self.model.params(), &mut ck);
        for (name, t) in self.best_params.iter() {
            ck.tensors.push((format!("best.{name}"), t.clone()));
        }
        ck
    }

    /// Restores model, optimizer and progress counters; `config` may extend
    /// `max_iters` or change evaluation settings.
    pub fn resume(ck: &Checkpoint, config: TrainConfig) -> Result<Self> {
        let model = Seq2Seq::from_checkpoint(ck)?;
        let mut t = Self::new(model, config)?;
        let get = |k: &str| {
            ck.meta
                .get(k)
                .and_then(|v| v.as_u64())
                .ok_or_else(|| Error::Format(format!("checkpoint has no {k}")))
        };
        t.iteration = get("iteration")?;
        t.best_iter = get("best_iter")?;
        t.evals_since_best = get("evals_since_best")?;
        t.best_val_cer = f64::from_bits(get("best_val_cer_bits")?);
        t.optimizer.load_state(t.model.params(), ck)?;
        for id in t.best_params.ids().collect::<Vec<_>>() {
            let key = format!("best.{}", t.best_params.name(id));
            let tensor = ck
                .tensor(&key)
                .ok_or_else(|| Error::Format(format!("checkpoint is missing {key}")))?;
            t.best_params.set(id, tensor.clone())?;
        }
        Ok(t)
    }

    /// One optimizer update on a batch drawn for the next iteration.
    /// Returns the losses and the (unclipped) gradient norm.
    pub fn step(&mut self, train: &Dataset, dump_dir: Option<&Path>) -> Result<(LossBreakdown, f64)> {
        if train.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let i = self.iteration + 1;
        let seed = self.config.seed;
        let n = self.config.batch_size.min(train.len());
        let picks = index::sample(&mut rng::stream(seed, streams::BATCHES, i), train.len(), n).into_vec();
        let batch: Vec<&Sample> = picks.iter().map(|&k| &train.samples[k]).collect();
        let mut episodes = rng::stream(seed, streams::EPISODES, i);
        let mut dropout = rng::stream(seed, streams::DROPOUT, i);
        let use_dropout = self.model.config().dropout > 0.0;
        let out = combined_step(
            &self.model,
            &batch,
            &self.config,
            &self.kernel,
            &mut episodes,
            use_dropout.then_some(&mut dropout),
        )?;
        let mut grads = out.grads;
        let l = out.losses;
        let finite = l.ce.is_finite() && l.combined.is_finite() && l.pcpg.is_none_or(f64::is_finite);
        if !finite || !grads.is_finite() {
            let what = if finite { "gradient" } else { "loss" };
            let dump = self.dump_nonfinite(i, what, &picks, &l, &grads, dump_dir);
            return Err(Error::NonFinite {
                iteration: i,
                what: what.into(),
                dump,
            });
        }
        let norm = grads.norm();
        if let Some(clip) = self.config.grad_clip {
            if norm > clip {
                grads.scale(clip / norm);
            }
        }
        self.optimizer.step(self.model.params_mut(), &grads);
        self.iteration = i;
        Ok((l, norm))
    }

    fn dump_nonfinite(
        &self,
        iteration: u64,
        what: &str,
        batch: &[usize],
        losses: &LossBreakdown,
        grads: &ParamGrads,
        dir: Option<&Path>,
    ) -> Option<PathBuf> {
        let dir = dir.map_or_else(std::env::temp_dir, Path::to_path_buf);
        let bad: Vec<&str> = self
            .model
            .params()
            .ids()
            .filter(|&id| grads.get(id).data().iter().any(|g| !g.is_finite()))
            .map(|id| self.model.params().name(id))
            .collect();
        let report = json!({
            "iteration": iteration,
            "what": what,
            "batch": batch,
            "loss_ce": losses.ce.to_string(),
            "loss_pcpg": losses.pcpg.map(|p| p.to_string()),
            "loss_combined": losses.combined.to_string(),
            "nonfinite_grads": bad,
        });
        let path = dir.join(format!("nonfinite-{iteration}.json"));
        let text = serde_json::to_string_pretty(&report).ok()?;
        fs::write(&path, text).ok()?;
        let _ = self.model.to_checkpoint().save(&dir.join(format!("nonfinite-{iteration}.ckpt")));
        Some(path)
    }

    /// Trains until `max_iters`, the target CER, or a plateau. With `out`
    /// set, appends to `metrics.csv` and refreshes `last.ckpt` at every
    /// evaluation.
    pub fn run(
        &mut self,
        train: &Dataset,
        val: &Dataset,
        out: Option<&Path>,
        mut on_row: impl FnMut(&LogRow),
    ) -> Result<TrainOutcome> {
        let started = Instant::now();
        let mut csv = match out {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join("metrics.csv");
                let fresh = self.iteration == 0 || !path.exists();
                let mut f = OpenOptions::new()
                    .create(true)
                    .write(true)
                    .append(!fresh)
                    .truncate(fresh)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                if fresh {
                    writeln!(f, "{CSV_HEADER}").map_err(|e| Error::io(&path, e))?;
                }
                Some((path, f))
            }
            None => None,
        };
        let cfg = self.config.clone();
        let mut rows = Vec::new();
        let mut last_val = f64::NAN;
        let mut stop = StopReason::MaxIters;
        while self.iteration < cfg.max_iters {
            let (losses, grad_norm) = self.step(train, out)?;
            let i = self.iteration;
            if !i.is_multiple_of(cfg.eval_every) && i != cfg.max_iters {
                continue;
            }
            let train_cer = mean_cer(&self.model, train, cfg.eval_samples, cfg.max_decode_len)?;
            let val_cer = mean_cer(&self.model, val, cfg.eval_samples, cfg.max_decode_len)?;
            let row = LogRow {
                iter: i,
                loss_ce: losses.ce,
                loss_pcpg: losses.pcpg,
                loss_combined: losses.combined,
                train_cer,
                val_cer,
                grad_norm,
                seconds: started.elapsed().as_secs_f64(),
            };
            last_val = val_cer;
            if val_cer < self.best_val_cer {
                self.best_val_cer = val_cer;
                self.best_iter = i;
                self.best_params = self.model.params().clone();
                self.evals_since_best = 0;
            } else {
                self.evals_since_best += 1;
            }
            if let Some((path, f)) = csv.as_mut() {
                writeln!(f, "{}", row.csv_line()).map_err(|e| Error::io(path.as_path(), e))?;
            }
            if let Some(dir) = out {
                self.to_checkpoint().save(&dir.join("last.ckpt"))?;
            }
            on_row(&row);
            rows.push(row);
            if cfg.target_cer.is_some_and(|t| val_cer <= t) {
                stop = StopReason::TargetReached;
                break;
            }
            if cfg.patience > 0 && self.evals_since_best >= cfg.patience {
                stop = StopReason::Plateau;
                break;
            }
        }
        Ok(TrainOutcome {
            rows,
            iterations: self.iteration,
            best_val_cer: self.best_val_cer,
            best_iter: self.best_iter,
            last_val_cer: last_val,
            stop,
        })
    }
}

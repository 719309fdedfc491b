use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{ParamGrads, ParamId, Tape, Tensor, Var};
use crate::model::{argmax, Seq2Seq};
use crate::rng::{self, streams, Rng};
use crate::tasks::{Dataset, Sample};

use super::{Optimizer, OptimizerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeMode {
    /// Encoder frozen; only the classifier learns.
    FixEncoder,
    /// Encoder and classifier learn together.
    TrainEncoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub iters: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            iters: 300,
            lr: 0.01,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub mode: ProbeMode,
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub chance: f64,
}

struct Head {
    w: ParamId,
    b: ParamId,
}

/// Mean over time of the encoder outputs, `1 x 2H`.
fn pooled(model: &Seq2Seq, tape: &mut Tape, frames: &Tensor) -> Result<Var> {
    let enc = model.network().encode(tape, frames)?;
    let avg = tape.constant(Tensor::row(vec![1.0 / enc.len as f64; enc.len]));
    tape.matmul(avg, enc.outputs)
}

fn logits(tape: &mut Tape, head: &Head, features: Var) -> Result<Var> {
    let w = tape.param(head.w);
    let b = tape.param(head.b);
    let z = tape.matmul(features, w)?;
    tape.add_row(z, b)
}

fn label(s: &Sample, n_classes: usize) -> Result<usize> {
    match s.label {
        Some(l) if (l as usize) < n_classes => Ok(l as usize),
        _ => Err(Error::invalid("probe samples need a label below n_classes")),
    }
}

/// Trains a softmax classifier on mean-pooled encoder outputs with label
/// cross-entropy and reports accuracy on `test`.
pub fn classifier_probe(
    model: &Seq2Seq,
    train: &Dataset,
    test: &Dataset,
    n_classes: usize,
    mode: ProbeMode,
    config: &ProbeConfig,
) -> Result<ProbeReport> {
    if train.is_empty() || test.is_empty() || n_classes == 0 {
        return Err(Error::invalid("probe needs non-empty data and at least one class"));
    }
    let width = model.config().enc_out();
    let mut model = model.clone();
    let mut init = rng::stream(config.seed, streams::PROBE, 0);
    let bound = 1.0 / (width as f64).sqrt();
    let head = Head {
        w: model.params_mut().add_uniform("probe.w", &[width, n_classes], bound, &mut init)?,
        b: model.params_mut().add_uniform("probe.b", &[1, n_classes], bound, &mut init)?,
    };
    let trainable: Vec<bool> = model
        .params()
        .ids()
        .map(|id| {
            let name = model.params().name(id);
            name.starts_with("probe.") || (mode == ProbeMode::TrainEncoder && name.starts_with("enc."))
        })
        .collect();
    // a frozen encoder gives fixed features, so compute them once
    let frozen: Option<Vec<Tensor>> = match mode {
        ProbeMode::FixEncoder => Some(
            train
                .samples
                .iter()
                .map(|s| {
                    let mut tape = model.tape();
                    let f = pooled(&model, &mut tape, &s.frames)?;
                    Ok(tape.value(f).clone())
                })
                .collect::<Result<_>>()?,
        ),
        ProbeMode::TrainEncoder => None,
    };
    let mut opt = Optimizer::new(OptimizerKind::Adam, config.lr, model.params());
    let n = config.batch_size.min(train.len());
    for it in 1..=config.iters {
        let mut rng: Rng = rng::stream(config.seed, streams::PROBE, it);
        let picks = index::sample(&mut rng, train.len(), n).into_vec();
        let mut grads = ParamGrads::zeros_like(model.params());
        for &k in &picks {
            let s = &train.samples[k];
            let mut tape = model.tape();
            let features = match &frozen {
                Some(f) => tape.constant(f[k].clone()),
                None => pooled(&model, &mut tape, &s.frames)?,
            };
            let z = logits(&mut tape, &head, features)?;
            let lp = tape.log_softmax(z);
            let picked = tape.gather(lp, label(s, n_classes)?)?;
            let loss = tape.scale(picked, -1.0);
            tape.backward(loss)?.accumulate_into(&mut grads, 1.0 / n as f64);
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite {
                iteration: it,
                what: "probe gradient".into(),
                dump: None,
            });
        }
        opt.step_masked(model.params_mut(), &grads, |id| trainable[id.index()]);
    }
    let accuracy = |data: &Dataset| -> Result<f64> {
        let mut hits = 0usize;
        for s in &data.samples {
            let mut tape = model.tape();
            let f = pooled(&model, &mut tape, &s.frames)?;
            let z = logits(&mut tape, &head, f)?;
            if argmax(tape.value(z).data()) == label(s, n_classes)? {
                hits += 1;
            }
        }
        Ok(hits as f64 / data.len() as f64)
    };
    Ok(ProbeReport {
        mode,
        accuracy: accuracy(test)?,
        train_accuracy: accuracy(train)?,
        chance: 1.0 / n_classes as f64,
    })
}

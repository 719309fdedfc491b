use serde::Serialize;

use crate::error::Result;
use crate::metrics::{cer_tokens, wer};
use crate::model::{BeamConfig, Hypothesis, Seq2Seq};
use crate::tasks::Dataset;
use crate::vocab::{TokenSequence, SPACE};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Distribution {
    pub min: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub max: f64,
    /// Samples with CER exactly 0.
    pub exact: usize,
    /// Counts in `[0, 0.1), [0.1, 0.2), ..., [0.9, 1.0), [1.0, inf)`.
    pub histogram: Vec<usize>,
}

/// Linear-interpolated quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

impl Distribution {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mut histogram = vec![0; 11];
        for &x in &v {
            histogram[((x * 10.0).floor() as usize).min(10)] += 1;
        }
        Self {
            min: quantile(&v, 0.0),
            p25: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            p75: quantile(&v, 0.75),
            max: quantile(&v, 1.0),
            exact: v.iter().filter(|&&x| x == 0.0).count(),
            histogram,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodeReport {
    pub cer: f64,
    /// `None` when no reference has a word.
    pub wer: Option<f64>,
    pub mean_log_prob: f64,
    pub distribution: Distribution,
    pub per_sample_cer: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub samples: usize,
    pub beam_width: usize,
    pub greedy: DecodeReport,
    pub beam: DecodeReport,
}

fn report(hyps: &[Hypothesis], data: &Dataset) -> Result<DecodeReport> {
    let mut cers = Vec::with_capacity(hyps.len());
    let mut wers = Vec::new();
    for (h, s) in hyps.iter().zip(&data.samples) {
        cers.push(cer_tokens(&h.characters(), &s.transcript.characters())?);
        let hyp = TokenSequence::new(h.characters())?;
        if let Ok(w) = wer(&hyp, &s.transcript, SPACE) {
            wers.push(w);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(DecodeReport {
        cer: mean(&cers),
        wer: (!wers.is_empty()).then(|| mean(&wers)),
        mean_log_prob: hyps.iter().map(|h| h.log_prob).sum::<f64>() / hyps.len() as f64,
        distribution: Distribution::of(&cers),
        per_sample_cer: cers,
    })
}

/// Greedy and beam decodes of every sample, scored against the transcripts.
pub fn evaluate(model: &Seq2Seq, data: &Dataset, beam: &BeamConfig) -> Result<EvalReport> {
    let mut greedy = Vec::with_capacity(data.len());
    let mut beamed = Vec::with_capacity(data.len());
    for s in &data.samples {
        greedy.push(model.greedy_decode(&s.frames, beam.max_len)?);
        beamed.push(model.beam_search(&s.frames, beam)?);
    }
    Ok(EvalReport {
        samples: data.len(),
        beam_width: beam.width,
        greedy: report(&greedy, data)?,
        beam: report(&beamed, data)?,
    })
}

//! The finite-difference suite run by `pcpg grad-check`.

use rand::{Rng as _, SeedableRng};

use crate::error::Result;
use crate::grad::{ParamGrads, ParamStore, Tensor};
use crate::gradcheck::{check_input_grads, check_param_grads, CheckReport, FdSettings};
use crate::model::{ModelConfig, Seq2Seq};
use crate::rng::Rng;
use crate::tasks::{gen_copy, FrameSpec, Sample};
use crate::trainer::{combined_step, StepOutput, TrainConfig};

/// Deliberate defects used to show that the suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    /// Negates the analytic gradient of the PCPG term.
    FlipPcpgSign,
}

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Every tape primitive, each on random inputs.
pub fn primitive_checks(seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = Rng::seed_from_u64(seed);
    let s = FdSettings::PRIMITIVE;
    let b = random(&mut rng, &[5, 3]);
    let c = random(&mut rng, &[4, 5]);
    let row = random(&mut rng, &[1, 5]);
    let table = random(&mut rng, &[6, 3]);
    let x45 = random(&mut rng, &[4, 5]);
    let x1 = random(&mut rng, &[1, 6]);
    let mut reports = Vec::new();
    let mut run = |name: &str, x: &Tensor, out_len: usize, f: &dyn Fn(&mut crate::grad::Tape, crate::grad::Var) -> Result<crate::grad::Var>| -> Result<()> {
        let w: Vec<f64> = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();
        reports.push(check_input_grads(name, x, &w, s, f)?);
        Ok(())
    };
    run("matmul", &x45, 12, &|t, v| {
        let k = t.constant(b.clone());
        t.matmul(v, k)
    })?;
    run("matmul-rhs", &b, 12, &|t, v| {
        let k = t.constant(x45.clone());
        t.matmul(k, v)
    })?;
    run("add", &x45, 20, &|t, v| {
        let k = t.constant(c.clone());
        t.add(v, k)
    })?;
    run("sub", &x45, 20, &|t, v| {
        let k = t.constant(c.clone());
        t.sub(k, v)
    })?;
    run("mul", &x45, 20, &|t, v| {
        let k = t.constant(c.clone());
        let y = t.mul(v, k)?;
        t.mul(y, v)
    })?;
    run("add_row", &row, 20, &|t, v| {
        let k = t.constant(c.clone());
        t.add_row(k, v)
    })?;
    run("affine", &x45, 20, &|t, v| Ok(t.affine(v, -1.7, 0.3)))?;
    run("scale", &x45, 20, &|t, v| Ok(t.scale(v, 2.5)))?;
    run("sigmoid", &x45, 20, &|t, v| Ok(t.sigmoid(v)))?;
    run("tanh", &x45, 20, &|t, v| Ok(t.tanh(v)))?;
    run("log_softmax", &x45, 20, &|t, v| Ok(t.log_softmax(v)))?;
    run("softmax", &x45, 20, &|t, v| Ok(t.softmax(v)))?;
    run("embedding", &table, 3, &|t, v| t.embedding(v, 4))?;
    run("concat_cols", &x45, 60, &|t, v| {
        let k = t.constant(c.clone());
        t.concat_cols(&[v, k, v])
    })?;
    run("concat_rows", &x45, 40, &|t, v| {
        let k = t.constant(c.clone());
        t.concat_rows(&[k, v])
    })?;
    run("slice_rows", &x45, 10, &|t, v| t.slice_rows(v, 1, 2))?;
    run("slice_cols", &x45, 8, &|t, v| t.slice_cols(v, 2, 2))?;
    run("sum", &x45, 1, &|t, v| Ok(t.sum(v)))?;
    run("gather", &x1, 1, &|t, v| t.gather(v, 3))?;
    run("reshape", &x45, 20, &|t, v| t.reshape(v, &[2, 10]))?;
    Ok(reports)
}

/// Hidden size 8 throughout, two layers, no dropout.
pub fn check_model_config() -> ModelConfig {
    ModelConfig {
        frame_embed: 8,
        enc_hidden: 8,
        dec_hidden: 8,
        attn_dim: 8,
        token_embed: 8,
        dropout: 0.0,
        ..Default::default()
    }
}

/// Two samples with `T <= 6` frames and at most 3 characters, so that
/// `U <= 5` including `EOS`.
pub fn check_samples(seed: u64) -> Result<Vec<Sample>> {
    let spec = FrameSpec {
        max_repeat: 2,
        ..Default::default()
    };
    Ok(gen_copy(2, 2, 3, seed, &spec)?.samples)
}

fn step_with(model: &Seq2Seq, samples: &[Sample], lambda: f64, seed: u64) -> Result<StepOutput> {
    let cfg = TrainConfig {
        lambda,
        episodes: 2,
        max_decode_len: 5,
        ..Default::default()
    };
    let batch: Vec<&Sample> = samples.iter().collect();
    let mut rng = Rng::seed_from_u64(seed);
    combined_step(model, &batch, &cfg, &cfg.kernel()?, &mut rng, None)
}

/// End-to-end checks of `L_CE`, `L_PCPG` and their `lambda = 0.5`
/// combination on the hidden-size-8 model. Episodes are drawn from a fixed
/// seed, so each loss is a smooth function of the parameters near the
/// evaluation point.
pub fn model_checks(seed: u64, mutation: Option<Mutation>) -> Result<Vec<CheckReport>> {
    let model = Seq2Seq::new(&check_model_config(), seed)?;
    let samples = check_samples(seed)?;
    let episode_seed = seed ^ 0x5eed;
    let g_ce = step_with(&model, &samples, 0.0, episode_seed)?.grads;
    let mut g_pg = step_with(&model, &samples, 1.0, episode_seed)?.grads;
    if mutation == Some(Mutation::FlipPcpgSign) {
        g_pg.scale(-1.0);
    }
    let mut g_mix = ParamGrads::zeros_like(model.params());
    g_mix.add_scaled(&g_ce, 0.5);
    g_mix.add_scaled(&g_pg, 0.5);
    let loss = |lambda: f64| {
        let model = &model;
        let samples = &samples;
        move |store: &ParamStore| -> Result<f64> {
            let mut m = model.clone();
            *m.params_mut() = store.clone();
            let out = step_with(&m, samples, lambda, episode_seed)?;
            Ok(out.losses.combined)
        }
    };
    Ok(vec![
        check_param_grads("model L_CE", model.params(), &g_ce, FdSettings::MODEL, loss(0.0))?,
        check_param_grads("model L_PCPG", model.params(), &g_pg, FdSettings::MODEL, loss(1.0))?,
        check_param_grads("model L_combine (0.5)", model.params(), &g_mix, FdSettings::MODEL, loss(0.5))?,
    ])
}

pub fn run_suite(seed: u64, mutation: Option<Mutation>) -> Result<Vec<CheckReport>> {
    let mut reports = primitive_checks(seed)?;
    reports.extend(model_checks(seed, mutation)?);
    Ok(reports)
}

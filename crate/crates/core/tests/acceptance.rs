//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any fails. Pass criterion numbers to run a subset:
//! `cargo test --release --test acceptance -- 1 4 8`.

use std::process::ExitCode;
use std::time::Instant;

use pcpg::cli::eval::median;
use pcpg::grad::ParamGrads;
use pcpg::metrics::edit_distance;
use pcpg::model::{beam_search_exhaustive, BeamConfig, ModelConfig, Seq2Seq};
use pcpg::pcpg::{aggregate, coefficient_map, window_map, Padding, PcpgKernel};
use pcpg::reward::{immediate_rewards_exact, RewardTrace, DiscountMode};
use pcpg::rng::Rng;
use pcpg::selfcheck::{self, Mutation};
use pcpg::tasks::{gen_copy, gen_reverse, gen_words, Dataset, FrameSpec, Splits};
use pcpg::trainer::{classifier_probe, episode_pcpg_loss, ProbeConfig, ProbeMode, TrainConfig, Trainer};
use rand::{Rng as _, SeedableRng};

// Tolerances and budgets.
const DEGENERACY_LOSS_TOL: f64 = 1e-12;
const DEGENERACY_GRAD_TOL: f64 = 1e-10;
const LINEARITY_TOL: f64 = 1e-12;
const FD_TOL: f64 = 1e-4;
const FD_BUDGET_SECS: f64 = 60.0;
const CONVERGED_CER: f64 = 0.05;
const CE_MARGIN: f64 = 0.01;
const ITER_BUDGET: u64 = 20_000;
const RUN_BUDGET_SECS: f64 = 1800.0;
const PROBE_CHANCE_MULTIPLE: f64 = 5.0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn small_model(seed: u64) -> Seq2Seq {
    let cfg = ModelConfig {
        frame_embed: 8,
        enc_hidden: 8,
        dec_hidden: 8,
        attn_dim: 8,
        token_embed: 8,
        layers: 2,
        dropout: 0.0,
        ..Default::default()
    };
    Seq2Seq::new(&cfg, seed).unwrap()
}

fn random_chars(rng: &mut Rng, max_len: usize, alphabet: std::ops::Range<u32>) -> Vec<u32> {
    let n = rng.random_range(1..=max_len);
    (0..n).map(|_| rng.random_range(alphabet.clone())).collect()
}

/// 1. With `k = 1, s = 1, w = [1]` the windowed loss is plain REINFORCE.
fn pg_degeneracy() -> Verdict {
    let model = small_model(11);
    let data = gen_copy(100, 2, 6, 12, &FrameSpec::default()).unwrap();
    let identity = PcpgKernel::new(1, 1, vec![1.0]).unwrap();
    let mut rng = Rng::seed_from_u64(13);
    let (mut worst_loss, mut worst_grad) = (0.0f64, 0.0f64);
    for s in &data.samples {
        let mut tape = model.tape();
        let enc = model.network().encode(&mut tape, &s.frames).unwrap();
        let roll = model.network().sample(&mut tape, &enc, 8, 1.0, &mut rng, None).unwrap();
        let trace = RewardTrace::compute(&roll.tokens, &s.transcript.characters(), 0.99, DiscountMode::FromEnd).unwrap();
        let lps = &roll.log_probs[..trace.returns.len()];
        let windowed = episode_pcpg_loss(&mut tape, lps, &trace.returns, &identity, Padding::Zero).unwrap();
        // -sum_u R_u log p_u, built term by term
        let mut reinforce = tape.scale(lps[0], -trace.returns[0]);
        for (lp, r) in lps.iter().zip(&trace.returns).skip(1) {
            let term = tape.scale(*lp, -r);
            reinforce = tape.add(reinforce, term).unwrap();
        }
        let a = tape.value(windowed).data()[0];
        let b = tape.value(reinforce).data()[0];
        worst_loss = worst_loss.max((a - b).abs());
        let ga: ParamGrads = tape.backward(windowed).unwrap().to_param_grads(model.params());
        let gb = tape.backward(reinforce).unwrap().to_param_grads(model.params());
        worst_grad = worst_grad.max(ga.max_abs_diff(&gb));
    }
    verdict(
        worst_loss <= DEGENERACY_LOSS_TOL && worst_grad <= DEGENERACY_GRAD_TOL,
        format!("100 episodes, max |dL| {worst_loss:.2e}, max |dgrad| {worst_grad:.2e}"),
    )
}

/// 2. Rewards telescope to `|S| - ED(y, S)`.
fn telescoping() -> Verdict {
    let mut rng = Rng::seed_from_u64(2);
    let mut bad = 0;
    for _ in 0..1000 {
        let pred = random_chars(&mut rng, 20, 4..14);
        let reference = random_chars(&mut rng, 20, 4..14);
        let sum: i64 = immediate_rewards_exact(&pred, &reference).unwrap().iter().sum();
        if sum != reference.len() as i64 - edit_distance(&pred, &reference) as i64 {
            bad += 1;
        }
    }
    verdict(bad == 0, format!("1000 pairs, {bad} mismatches"))
}

/// 3. The windowed loss equals the coefficient-weighted sum of step losses;
/// stride-1 interior coefficients are exactly 1.
fn linearity() -> Verdict {
    let mut rng = Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut interior_bad = 0;
    for case in 0..500 {
        let k = rng.random_range(1..=7);
        let s = if case % 2 == 0 { 1 } else { rng.random_range(1..=7) };
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let kernel = PcpgKernel::new(k, s, w).unwrap();
        let u = rng.random_range(1..=50);
        let losses: Vec<f64> = (0..u).map(|_| rng.random_range(-3.0..3.0)).collect();
        let direct = aggregate(&window_map(&losses, &kernel, Padding::Zero));
        let coeffs = coefficient_map(&kernel, u, Padding::Zero);
        let via: f64 = coeffs.iter().zip(&losses).map(|(c, l)| c * l).sum();
        worst = worst.max((direct - via).abs());
        if s == 1 {
            let half = k / 2;
            let (lo, hi) = (k - 1 - half, u.saturating_sub(half));
            if lo < hi {
                interior_bad += coeffs[lo..hi].iter().filter(|&&c| c != 1.0).count();
            }
        }
    }
    verdict(
        worst <= LINEARITY_TOL && interior_bad == 0,
        format!("500 kernels, max |diff| {worst:.2e}, {interior_bad} interior coefficients != 1"),
    )
}

/// 4. Finite-difference checks of CE, PCPG and the 0.5 combination on the
/// hidden-size-8 model; the injected sign bug must be caught.
fn gradient_fidelity() -> Verdict {
    let t0 = Instant::now();
    let reports = selfcheck::model_checks(4, None).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let all = reports.iter().all(|r| r.passed() && r.tolerance <= FD_TOL);
    let mutated = selfcheck::model_checks(4, Some(Mutation::FlipPcpgSign)).unwrap();
    let caught = !mutated[1].passed() && !mutated[2].passed();
    verdict(
        all && caught && secs < FD_BUDGET_SECS,
        format!(
            "CE/PCPG/combined max rel err {worst:.2e} (tol {FD_TOL:.0e}) in {secs:.1} s (budget {FD_BUDGET_SECS} s); sign bug {}",
            if caught { "caught" } else { "missed" }
        ),
    )
}

fn brute(a: &[u32], b: &[u32]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => (brute(ra, rb) + usize::from(x != y))
            .min(brute(ra, b) + 1)
            .min(brute(a, rb) + 1),
    }
}

/// 5. Dynamic programming matches exhaustive recursion.
fn edit_distance_oracle() -> Verdict {
    let mut rng = Rng::seed_from_u64(5);
    let mut bad = 0;
    for _ in 0..500 {
        let a: Vec<u32> = (0..rng.random_range(0..=8)).map(|_| rng.random_range(0..4)).collect();
        let b: Vec<u32> = (0..rng.random_range(0..=8)).map(|_| rng.random_range(0..4)).collect();
        if edit_distance(&a, &b) != brute(&a, &b) {
            bad += 1;
        }
    }
    verdict(bad == 0, format!("500 pairs, {bad} mismatches"))
}

/// 8. Width-4 beam never loses to greedy under its own ranking score, and
/// an unbounded beam equals exhaustive search on a 5-symbol vocabulary.
///
/// The log-probability beam (alpha 0) is compared on raw log-probability,
/// the default length-normalized beam on the normalized score. A normalized
/// beam may legitimately pick a longer hypothesis with a lower raw total; how
/// often that happens is reported but not judged.
fn beam(model: &Seq2Seq, eval: &Dataset) -> Verdict {
    let mut worse = [0usize; 2];
    let mut longer_lower = 0;
    for s in &eval.samples {
        let g = model.greedy_decode(&s.frames, BEAM_MAX_LEN).unwrap();
        for (i, alpha) in [0.0, 1.0].into_iter().enumerate() {
            let cfg = BeamConfig {
                width: 4,
                max_len: BEAM_MAX_LEN,
                length_alpha: alpha,
            };
            let b = model.beam_search(&s.frames, &cfg).unwrap();
            if b.score(alpha) < g.score(alpha) {
                worse[i] += 1;
            }
            if alpha > 0.0 && b.log_prob < g.log_prob {
                longer_lower += 1;
            }
        }
    }
    let mut mismatches = 0;
    let mut cases = 0;
    for seed in 0..10 {
        let tiny = ModelConfig {
            vocab_size: 5,
            feature_dim: 6,
            frame_embed: 4,
            enc_hidden: 4,
            dec_hidden: 6,
            attn_dim: 4,
            token_embed: 3,
            layers: 2,
            dropout: 0.0,
        };
        let m = Seq2Seq::new(&tiny, seed).unwrap();
        let mut rng = Rng::seed_from_u64(seed + 50);
        let x = pcpg::grad::Tensor::new(&[4, 6], (0..24).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        for alpha in [0.0, 1.0] {
            for max_len in 1..=4 {
                let mut tape = m.tape();
                let enc = m.network().encode(&mut tape, &x).unwrap();
                let ex = beam_search_exhaustive(m.network(), &mut tape, &enc, max_len, alpha).unwrap();
                let wide = BeamConfig {
                    width: 5usize.pow(max_len as u32),
                    max_len,
                    length_alpha: alpha,
                };
                let b = m.beam_search(&x, &wide).unwrap();
                cases += 1;
                if b.tokens != ex.tokens || (b.log_prob - ex.log_prob).abs() > 1e-12 {
                    mismatches += 1;
                }
            }
        }
    }
    verdict(
        worse == [0, 0] && mismatches == 0,
        format!(
            "{} samples; log-prob beam below greedy log-prob on {}, normalized beam below greedy normalized score on {}; \
             normalized beam below greedy in raw log-prob on {longer_lower} (not judged); exhaustive mismatches {mismatches}/{cases}",
            eval.len(),
            worse[0],
            worse[1]
        ),
    )
}

// Convergence runs: see the README for why the noise is below the
// generator default.
const COPY_NOISE: f64 = 0.05;
const GRAD_CLIP: f64 = 5.0;
const DATA_SEED: u64 = 2024;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const PATIENCE: u64 = 16;
const BEAM_MAX_LEN: usize = 14;
const ABLATION_ITERS: u64 = 8_000;
const PROBE_SEEDS: [u64; 3] = [0, 1, 2];
const PROBE_CLASSES: usize = 20;
const PROBE_PER_CLASS: usize = 60;
const PRETRAIN_ITERS: u64 = 1_500;

fn toy_model() -> ModelConfig {
    ModelConfig {
        frame_embed: 48,
        enc_hidden: 16,
        dec_hidden: 32,
        attn_dim: 16,
        token_embed: 16,
        layers: 2,
        dropout: 0.0,
        ..Default::default()
    }
}

fn toy_frames() -> FrameSpec {
    FrameSpec {
        noise: COPY_NOISE,
        ..Default::default()
    }
}

fn toy_train(lambda: f64, k: usize, s: usize, seed: u64, max_iters: u64) -> TrainConfig {
    TrainConfig {
        lambda,
        kernel_size: k,
        kernel_stride: s,
        lr: 0.003,
        grad_clip: Some(GRAD_CLIP),
        batch_size: 16,
        max_iters,
        eval_every: 250,
        eval_samples: 0,
        patience: PATIENCE,
        max_decode_len: 14,
        seed,
        ..Default::default()
    }
}

/// 2,000 train and 200 val samples, lengths 4 to 10.
fn toy_splits(reverse: bool) -> Splits {
    let gen = if reverse { gen_reverse } else { gen_copy };
    gen(2200, 4, 10, DATA_SEED, &toy_frames())
        .unwrap()
        .split(200.0 / 2200.0, 0.0, DATA_SEED)
        .unwrap()
}

struct Run {
    /// Val CER of the best evaluation.
    cer: f64,
    best_iter: u64,
    secs: f64,
    model: Seq2Seq,
}

fn train(splits: &Splits, cfg: TrainConfig) -> Run {
    let model = Seq2Seq::new(&toy_model(), cfg.seed).unwrap();
    let mut t = Trainer::new(model, cfg).unwrap();
    let t0 = Instant::now();
    let out = t.run(&splits.train, &splits.val, None, |_| {}).unwrap();
    Run {
        cer: out.best_val_cer,
        best_iter: out.best_iter,
        secs: t0.elapsed().as_secs_f64(),
        model: t.best_model(),
    }
}

fn cers(runs: &[Run]) -> String {
    runs.iter()
        .map(|r| format!("{:.3}@{}", r.cer, r.best_iter))
        .collect::<Vec<_>>()
        .join(" ")
}

/// 6. CE-only and combined training both reach 5% val CER on the copy task,
/// and the combined median is within a point of the CE median.
fn toy_convergence(keep: &mut Option<(Seq2Seq, Dataset)>) -> Verdict {
    let splits = toy_splits(false);
    assert_eq!(splits.train.len(), 2000);
    let ce: Vec<Run> = SEEDS.iter().map(|&s| train(&splits, toy_train(0.0, 5, 1, s, ITER_BUDGET))).collect();
    let mix: Vec<Run> = SEEDS.iter().map(|&s| train(&splits, toy_train(0.5, 5, 1, s, ITER_BUDGET))).collect();
    let m_ce = median(&ce.iter().map(|r| r.cer).collect::<Vec<_>>());
    let m_mix = median(&mix.iter().map(|r| r.cer).collect::<Vec<_>>());
    let slowest = ce.iter().chain(&mix).map(|r| r.secs).fold(0.0, f64::max);
    let pass = m_ce <= CONVERGED_CER
        && m_mix <= CONVERGED_CER
        && m_mix <= m_ce + CE_MARGIN
        && slowest < RUN_BUDGET_SECS;
    let detail = format!(
        "median val CER: CE {m_ce:.4}, lambda=0.5 k=5 s=1 {m_mix:.4} (need both <= {CONVERGED_CER}, combined <= CE + {CE_MARGIN}); slowest run {slowest:.0} s; CE [{}]; combined [{}]",
        cers(&ce),
        cers(&mix)
    );
    *keep = mix.into_iter().next().map(|r| (r.model, splits.val));
    verdict(pass, detail)
}

/// 7. On reversal, the overlapping kernel beats both the non-overlapping
/// kernel and plain REINFORCE in median val CER.
fn ablation_ordering() -> Verdict {
    let splits = toy_splits(true);
    let cells = [(5, 1), (5, 5), (1, 1)];
    let runs: Vec<Vec<f64>> = cells
        .iter()
        .map(|&(k, s)| {
            SEEDS
                .iter()
                .map(|&seed| train(&splits, toy_train(0.5, k, s, seed, ABLATION_ITERS)).cer)
                .collect()
        })
        .collect();
    let medians: Vec<f64> = runs.iter().map(|r| median(r)).collect();
    let mut table = String::new();
    for ((k, s), (m, r)) in cells.iter().zip(medians.iter().zip(&runs)) {
        let per: Vec<String> = r.iter().map(|c| format!("{c:.3}")).collect();
        table.push_str(&format!("\n    k={k} s={s}: median {m:.4} [{}]", per.join(" ")));
    }
    // a comparison holds if the medians are ordered or at most one seed disagrees
    let holds = |other: usize| {
        let violations = (0..SEEDS.len()).filter(|&i| runs[0][i] > runs[other][i]).count();
        medians[0] <= medians[other] || violations <= 1
    };
    let (a, b) = (holds(1), holds(2));
    verdict(
        a && b,
        format!(
            "(5,1) <= (5,5): {}, (5,1) <= (1,1): {}{table}",
            if a { "yes" } else { "no" },
            if b { "yes" } else { "no" }
        ),
    )
}

/// 9. A probe on the frozen encoder of a combined-loss model beats chance
/// five times over, and training the encoder too does at least as well.
fn representation_probe() -> Verdict {
    let spec = FrameSpec::default();
    let data = gen_words(PROBE_CLASSES, PROBE_PER_CLASS, DATA_SEED, &spec).unwrap();
    let splits = data.split(0.0, 1.0 / 3.0, DATA_SEED).unwrap();
    let mut fe = Vec::new();
    let mut te = Vec::new();
    for &seed in &PROBE_SEEDS {
        let cfg = TrainConfig {
            patience: 0,
            eval_every: 500,
            eval_samples: 100,
            max_decode_len: 10,
            ..toy_train(0.5, 5, 1, seed, PRETRAIN_ITERS)
        };
        let model = Seq2Seq::new(&toy_model(), seed).unwrap();
        let mut t = Trainer::new(model, cfg).unwrap();
        t.run(&splits.train, &splits.test, None, |_| {}).unwrap();
        let pc = ProbeConfig {
            seed,
            ..Default::default()
        };
        for (mode, acc) in [(ProbeMode::FixEncoder, &mut fe), (ProbeMode::TrainEncoder, &mut te)] {
            let r = classifier_probe(&t.model, &splits.train, &splits.test, PROBE_CLASSES, mode, &pc).unwrap();
            acc.push(r.accuracy);
        }
    }
    let chance = 1.0 / PROBE_CLASSES as f64;
    let (m_fe, m_te) = (median(&fe), median(&te));
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    verdict(
        m_fe >= PROBE_CHANCE_MULTIPLE * chance && m_te >= m_fe,
        format!(
            "chance {chance:.3}; FE median {m_fe:.3} [{}] (need >= {:.3}); TE median {m_te:.3} [{}] (need >= FE)",
            fmt(&fe),
            PROBE_CHANCE_MULTIPLE * chance,
            fmt(&te)
        ),
    )
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: u32| wanted.is_empty() || wanted.contains(&n);
    // the training criteria take hours on one core; plain `cargo test` skips them
    let full = !wanted.is_empty() || std::env::var_os("PCPG_ACCEPTANCE_FULL").is_some();
    let slow = |n: u32, name: &str| {
        let go = run(n) && full;
        if run(n) && !full {
            println!("SKIP {n} {name}: set PCPG_ACCEPTANCE_FULL=1 or pass {n} as an argument");
        }
        go
    };
    let mut failed = 0;
    let mut report = |n: u32, name: &str, f: &mut dyn FnMut() -> Verdict| {
        let t0 = Instant::now();
        let v = f();
        let secs = t0.elapsed().as_secs_f64();
        println!("{} {n} {name}: {} [{secs:.1} s]", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failed += 1;
        }
    };
    if run(1) {
        report(1, "policy-gradient degeneracy", &mut pg_degeneracy);
    }
    if run(2) {
        report(2, "telescoping reward", &mut telescoping);
    }
    if run(3) {
        report(3, "coefficient-map linearity", &mut linearity);
    }
    if run(4) {
        report(4, "gradient fidelity", &mut gradient_fidelity);
    }
    if run(5) {
        report(5, "edit-distance oracle", &mut edit_distance_oracle);
    }
    let mut trained = None;
    if slow(6, "toy convergence") {
        report(6, "toy convergence", &mut || toy_convergence(&mut trained));
    }
    if slow(7, "ablation ordering") {
        report(7, "ablation ordering", &mut ablation_ordering);
    }
    if run(8) {
        // the first combined-loss copy model, or a short fresh run
        let (model, eval) = trained.take().unwrap_or_else(|| {
            let splits = toy_splits(false);
            let run = train(&splits, toy_train(0.5, 5, 1, 0, 2_000));
            (run.model, splits.val)
        });
        report(8, "beam search", &mut || beam(&model, &eval));
    }
    if slow(9, "representation probe") {
        report(9, "representation probe", &mut representation_probe);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

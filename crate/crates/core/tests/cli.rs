use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pcpg::tasks::Dataset;

const SMALL: &str = r#"
version = 1
seed = 3
[data]
samples = 40
[model]
frame_embed = 8
enc_hidden = 8
dec_hidden = 8
attn_dim = 8
token_embed = 8
layers = 1
[train]
optimizer = "sgd"
lr = 0.05
max_iters = 12
eval_every = 4
eval_samples = 4
batch_size = 4
max_decode_len = 12
[beam]
max_len = 12
[sweep]
seeds = [0, 1]
"#;

fn pcpg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcpg"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn untimed(csv: &str) -> Vec<String> {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect()
}

#[test]
fn gen_data_writes_parsable_files_and_refuses_overwrite() {
    let dir = setup();
    let o = pcpg(dir.path(), &["gen-data", "--config", "c.toml", "--out", "d"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let train = Dataset::load(&dir.path().join("d/train.txt")).unwrap();
    let val = Dataset::load(&dir.path().join("d/val.txt")).unwrap();
    assert_eq!(train.len() + val.len(), 40);
    let again = pcpg(dir.path(), &["gen-data", "--config", "c.toml", "--out", "d"]);
    assert_eq!(again.status.code(), Some(2));
    let forced = pcpg(dir.path(), &["gen-data", "--config", "c.toml", "--out", "d", "--force"]);
    assert_eq!(forced.status.code(), Some(0));
    assert_eq!(Dataset::load(&dir.path().join("d/train.txt")).unwrap(), train);
}

#[test]
fn train_is_reproducible_and_resumable() {
    let dir = setup();
    for out in ["a", "b"] {
        let o = pcpg(dir.path(), &["train", "--config", "c.toml", "--out", out]);
        assert_eq!(o.status.code(), Some(0), "{o:?}");
    }
    let a = fs::read_to_string(dir.path().join("a/metrics.csv")).unwrap();
    let b = fs::read_to_string(dir.path().join("b/metrics.csv")).unwrap();
    assert_eq!(untimed(&a), untimed(&b));
    assert_eq!(a.lines().count(), 4);

    // stop at 8, then resume to 12
    let short = SMALL.replace("max_iters = 12", "max_iters = 8");
    fs::write(dir.path().join("short.toml"), short).unwrap();
    let o = pcpg(dir.path(), &["train", "--config", "short.toml", "--out", "r"]);
    assert_eq!(o.status.code(), Some(0));
    let refused = pcpg(dir.path(), &["train", "--config", "c.toml", "--out", "r"]);
    assert_eq!(refused.status.code(), Some(2));
    let o = pcpg(dir.path(), &["train", "--config", "c.toml", "--out", "r", "--resume", "r/last.ckpt"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let r = fs::read_to_string(dir.path().join("r/metrics.csv")).unwrap();
    assert_eq!(untimed(&r), untimed(&a));
}

#[test]
fn different_seeds_differ() {
    let dir = setup();
    pcpg(dir.path(), &["train", "--config", "c.toml", "--out", "a"]);
    pcpg(dir.path(), &["train", "--config", "c.toml", "--out", "b", "--seed", "4"]);
    let a = fs::read_to_string(dir.path().join("a/metrics.csv")).unwrap();
    let b = fs::read_to_string(dir.path().join("b/metrics.csv")).unwrap();
    assert_ne!(untimed(&a), untimed(&b));
}

#[test]
fn eval_reports_greedy_and_beam() {
    let dir = setup();
    pcpg(dir.path(), &["gen-data", "--config", "c.toml", "--out", "d"]);
    pcpg(dir.path(), &["train", "--config", "c.toml", "--out", "t"]);
    let o = pcpg(
        dir.path(),
        &["eval", "--config", "c.toml", "--checkpoint", "t/best.ckpt", "--data", "d/val.txt", "--beam", "1"],
    );
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["beam_width"], 1);
    // width 1 is greedy
    assert_eq!(v["greedy"], v["beam"]);
    let n = v["samples"].as_u64().unwrap() as usize;
    assert_eq!(v["greedy"]["per_sample_cer"].as_array().unwrap().len(), n);
    let hist: u64 = v["greedy"]["distribution"]["histogram"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_u64().unwrap())
        .sum();
    assert_eq!(hist as usize, n);

    let missing = pcpg(dir.path(), &["eval", "--checkpoint", "nope.ckpt"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn sweep_emits_ablation_rows_and_resumes() {
    let dir = setup();
    let o = pcpg(dir.path(), &["sweep", "--config", "c.toml", "--out", "s"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let table = fs::read_to_string(dir.path().join("s/sweep/table.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for (row, (k, s)) in rows.iter().zip([(1, 1), (5, 5), (5, 1)]) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!((cols[1], cols[2]), (k.to_string().as_str(), s.to_string().as_str()));
        let cers: Vec<f64> = cols[6].split(' ').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cers.len(), 2);
        let median: f64 = cols[5].parse().unwrap();
        assert!((median - (cers[0] + cers[1]) / 2.0).abs() < 1e-6);
    }
    let again = pcpg(dir.path(), &["sweep", "--config", "c.toml", "--out", "s"]);
    assert!(stdout(&again).contains("reused"));
    assert_eq!(fs::read_to_string(dir.path().join("s/sweep/table.csv")).unwrap(), table);
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = setup();
    fs::write(dir.path().join("typo.toml"), "version = 1\n[train]\nlamda = 0.5\n").unwrap();
    for args in [
        &["bogus"][..],
        &["train", "--config", "typo.toml"],
        &["train", "--config", "absent.toml"],
        &["train", "--seed", "x"],
    ] {
        assert_eq!(pcpg(dir.path(), args).status.code(), Some(1), "{args:?}");
    }
    assert_eq!(pcpg(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn non_finite_training_exits_three() {
    let dir = setup();
    let blowup = SMALL.replace("lr = 0.05", "lr = 1e300");
    fs::write(dir.path().join("nan.toml"), blowup).unwrap();
    let o = pcpg(dir.path(), &["train", "--config", "nan.toml", "--out", "n"]);
    assert_eq!(o.status.code(), Some(3), "{o:?}");
}

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Seq2Seq;
use crate::tasks::Splits;
use crate::trainer::{TrainConfig, Trainer};

use super::config::{ExperimentConfig, KernelSpec};
use super::eval::median;

/// Result of one `(cell, seed)` training run, stored as JSON so that an
/// interrupted sweep picks up where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub train: TrainConfig,
    /// Val CER of the best checkpoint.
    pub final_val_cer: f64,
    pub last_val_cer: f64,
    pub best_iter: u64,
    pub iterations: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub kernel: KernelSpec,
    pub lambda: f64,
    pub val_cers: Vec<f64>,
    pub median_val_cer: f64,
}

pub const TABLE_HEADER: &str = "cell,kernel_size,kernel_stride,kernel_weights,lambda,median_val_cer,val_cers";

impl SweepRow {
    pub fn csv_line(&self, cell: usize) -> String {
        let weights = match &self.kernel.weights {
            Some(w) => w.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" "),
            None => "uniform".into(),
        };
        let cers: Vec<String> = self.val_cers.iter().map(|c| format!("{c:.6}")).collect();
        format!(
            "{cell},{},{},{weights},{},{:.6},{}",
            self.kernel.size,
            self.kernel.stride,
            self.lambda,
            self.median_val_cer,
            cers.join(" ")
        )
    }
}

pub fn cell_config(base: &TrainConfig, kernel: &KernelSpec, lambda: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        kernel_size: kernel.size,
        kernel_stride: kernel.stride,
        kernel_weights: kernel.weights.clone(),
        lambda,
        seed,
        ..base.clone()
    }
}

/// Trains one model and reports its best val CER.
pub fn train_once(cfg: &ExperimentConfig, train: TrainConfig, splits: &Splits) -> Result<RunRecord> {
    let model = Seq2Seq::new(&cfg.model, train.seed)?;
    let mut trainer = Trainer::new(model, train.clone())?;
    let out = trainer.run(&splits.train, &splits.val, None, |_| {})?;
    Ok(RunRecord {
        train,
        final_val_cer: out.best_val_cer,
        last_val_cer: out.last_val_cer,
        best_iter: out.best_iter,
        iterations: out.iterations,
    })
}

/// Every kernel x lambda cell, each the median over the configured seeds.
/// Finished runs found under `dir/cells` with a matching training config
/// are reused.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    splits: &Splits,
    dir: &Path,
    mut progress: impl FnMut(&str),
) -> Result<Vec<SweepRow>> {
    let cells_dir = dir.join("cells");
    fs::create_dir_all(&cells_dir).map_err(|e| Error::io(&cells_dir, e))?;
    let base = cfg.train_config();
    let mut rows = Vec::new();
    for kernel in cfg.sweep.kernel_grid() {
        for &lambda in &cfg.sweep.lambdas {
            let cell = rows.len();
            let mut cers = Vec::new();
            for &seed in &cfg.sweep.seeds {
                let train = cell_config(&base, &kernel, lambda, seed);
                let path = cells_dir.join(format!("cell{cell:02}-seed{seed}.json"));
                let cached = fs::read_to_string(&path)
                    .ok()
                    .and_then(|t| serde_json::from_str::<RunRecord>(&t).ok())
                    .filter(|r| r.train == train);
                let record = match cached {
                    Some(r) => {
                        progress(&format!("cell {cell} seed {seed}: reused {:.4}", r.final_val_cer));
                        r
                    }
                    None => {
                        let r = train_once(cfg, train, splits)?;
                        let text = serde_json::to_string_pretty(&r).expect("record serializes");
                        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
                        progress(&format!("cell {cell} seed {seed}: {:.4}", r.final_val_cer));
                        r
                    }
                };
                cers.push(record.final_val_cer);
            }
            rows.push(SweepRow {
                kernel: kernel.clone(),
                lambda,
                median_val_cer: median(&cers),
                val_cers: cers,
            });
        }
    }
    let table = dir.join("table.csv");
    let mut text = format!("{TABLE_HEADER}\n");
    for (i, r) in rows.iter().enumerate() {
        text.push_str(&r.csv_line(i));
        text.push('\n');
    }
    fs::write(&table, text).map_err(|e| Error::io(&table, e))?;
    Ok(rows)
}

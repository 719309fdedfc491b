use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BeamConfig, ModelConfig};
use crate::tasks::{self, Dataset, FrameSpec, Splits, Task};
use crate::trainer::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

/// One experiment, as read from a TOML file. Unknown keys are rejected at
/// every level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// Root of every random stream: data, init, batches, episodes.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    /// `train.seed` is replaced by the root seed.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub beam: BeamConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            out_dir: default_out(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            beam: BeamConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// `copy`, `reverse`, `words` or `sentences`.
    pub task: String,
    /// Total generated samples before splitting (copy, reverse, sentences).
    pub samples: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Word task only.
    pub n_classes: usize,
    pub per_class: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Existing dataset files. When `train` is set the generator is not
    /// used and `val` is required.
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub frames: FrameSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            task: "copy".into(),
            samples: 2200,
            min_len: 4,
            max_len: 10,
            n_classes: 20,
            per_class: 30,
            val_fraction: 200.0 / 2200.0,
            test_fraction: 0.0,
            train: None,
            val: None,
            test: None,
            frames: FrameSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepPreset {
    /// `(k, s)` in `(1, 1)`, `(5, 5)`, `(5, 1)` with uniform weights.
    Ablation,
    /// `k` in 1, 2, 3, 5, 7 at stride 1, uniform weights.
    KernelSize,
    /// Four fixed three-tap weightings at stride 1.
    KernelWeights,
    /// The configured `kernels` list.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub size: usize,
    pub stride: usize,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

impl KernelSpec {
    fn uniform(size: usize, stride: usize) -> Self {
        Self {
            size,
            stride,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Anything but `custom` ignores `kernels`.
    pub preset: SweepPreset,
    pub kernels: Vec<KernelSpec>,
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            preset: SweepPreset::Ablation,
            kernels: Vec::new(),
            lambdas: vec![0.5],
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

impl SweepConfig {
    pub fn kernel_grid(&self) -> Vec<KernelSpec> {
        match self.preset {
            SweepPreset::Ablation => vec![
                KernelSpec::uniform(1, 1),
                KernelSpec::uniform(5, 5),
                KernelSpec::uniform(5, 1),
            ],
            SweepPreset::KernelSize => [1, 2, 3, 5, 7]
                .into_iter()
                .map(|k| KernelSpec::uniform(k, 1))
                .collect(),
            SweepPreset::KernelWeights => [
                [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
                [0.25, 0.5, 0.25],
                [1.0 / 3.0, 0.5, 1.0 / 6.0],
                [1.0 / 6.0, 0.5, 1.0 / 3.0],
            ]
            .into_iter()
            .map(|w| KernelSpec {
                size: 3,
                stride: 1,
                weights: Some(w.to_vec()),
            })
            .collect(),
            SweepPreset::Custom => self.kernels.clone(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn task(&self) -> Result<Task> {
        Task::parse(&self.data.task).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.task()?;
        self.data.frames.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.model.feature_dim != self.data.frames.feature_dim {
            return Err(Error::Config(format!(
                "model.feature_dim {} differs from data.frames.feature_dim {}",
                self.model.feature_dim, self.data.frames.feature_dim
            )));
        }
        self.train.validate()?;
        if self.beam.width == 0 {
            return Err(Error::Config("beam.width must be at least 1".into()));
        }
        let d = &self.data;
        if !(0.0..1.0).contains(&(d.val_fraction + d.test_fraction)) || d.val_fraction < 0.0 || d.test_fraction < 0.0 {
            return Err(Error::Config("data fractions must be non-negative and sum below 1".into()));
        }
        if d.train.is_some() != d.val.is_some() {
            return Err(Error::Config("data.train and data.val must be given together".into()));
        }
        if self.sweep.kernel_grid().is_empty() || self.sweep.lambdas.is_empty() || self.sweep.seeds.is_empty() {
            return Err(Error::Config("sweep grids must be non-empty".into()));
        }
        Ok(())
    }

    /// Training settings with the root seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn generate(&self) -> Result<Dataset> {
        let d = &self.data;
        let spec = &d.frames;
        match self.task()? {
            Task::Copy => tasks::gen_copy(d.samples, d.min_len, d.max_len, self.seed, spec),
            Task::Reverse => tasks::gen_reverse(d.samples, d.min_len, d.max_len, self.seed, spec),
            Task::Words => tasks::gen_words(d.n_classes, d.per_class, self.seed, spec),
            Task::Sentences => tasks::gen_sentences(d.samples, self.seed, spec),
        }
    }

    /// Generated splits, or the configured files when present.
    pub fn splits(&self) -> Result<Splits> {
        let d = &self.data;
        match (&d.train, &d.val) {
            (Some(train), Some(val)) => {
                let test = match &d.test {
                    Some(p) => Dataset::load(p)?,
                    None => Dataset {
                        samples: Vec::new(),
                        ..Dataset::load(val)?
                    },
                };
                Ok(Splits {
                    train: Dataset::load(train)?,
                    val: Dataset::load(val)?,
                    test,
                })
            }
            _ => self.generate()?.split(d.val_fraction, d.test_fraction, self.seed),
        }
    }
}

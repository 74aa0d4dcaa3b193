//! Versioned experiment files: data source, model, training and pruning in one TOML document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_csv, synth_ltsf, synth_stf, CsvLayout, SeriesDataset, SplitRatios, SynthLtsf, SynthStf};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ProjectionHead};
use crate::prune::PruneSpec;
use crate::trainer::{Optimizer, Prepared, StepDecay, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    SynthStf(SynthStf),
    SynthLtsf(SynthLtsf),
    Csv(CsvSource),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    pub layout: CsvLayout,
}

impl DataSource {
    pub fn load(&self) -> Result<SeriesDataset> {
        match self {
            Self::SynthStf(c) => synth_stf(c),
            Self::SynthLtsf(c) => synth_ltsf(c),
            Self::Csv(c) => load_csv(&c.path, &c.layout),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub schema_version: u32,
    pub name: String,
    pub data: DataSource,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Scopes replaced for `compare` and `prune`; the full prune when absent.
    #[serde(default)]
    pub prune: Option<PruneSpec>,
}

impl Experiment {
    pub fn from_toml(text: &str) -> Result<Self> {
        let exp: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        exp.validate()?;
        Ok(exp)
    }

    /// Reads a file; relative CSV paths are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut exp = Self::from_toml(&std::fs::read_to_string(path)?)?;
        if let DataSource::Csv(c) = &mut exp.data {
            if c.path.is_relative() {
                if let Some(dir) = path.parent() {
                    c.path = dir.join(&c.path);
                }
            }
        }
        Ok(exp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.model.validate()?;
        self.train.validate()?;
        if let Some(p) = &self.prune {
            p.validate()?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment serialises")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn prune_spec(&self) -> PruneSpec {
        self.prune.unwrap_or_else(PruneSpec::all)
    }

    pub fn prepare(&self) -> Result<Prepared> {
        let ds = self.data.load()?.with_name(self.name.clone());
        Prepared::new(ds, self.train.split)
    }

    /// 16-node synthetic traffic at 5-minute resolution, 12-in/12-out, sized
    /// to train three seeds of four variants in minutes on one core.
    pub fn desk_stf() -> Self {
        let mut model = ModelConfig::stf(16, 16, 32, 2, 1);
        model.embedding.node_embedding = true;
        model.projection_head = ProjectionHead::Flatten;
        let mut data = SynthStf::new(16, 4032, 7);
        data.congestion = 0.3;
        data.capacity = -1.0;
        Self {
            schema_version: SCHEMA_VERSION,
            name: "synth-stf".into(),
            data: DataSource::SynthStf(data),
            model,
            train: TrainConfig {
                max_epochs: 60,
                patience: 60,
                lr_decay: Some(StepDecay { milestones: vec![40, 55], gamma: 0.1 }),
                ..Self::short_schedule()
            },
            prune: None,
        }
    }

    fn short_schedule() -> TrainConfig {
        TrainConfig {
            optimizer: Optimizer::adam(3e-3),
            batch_size: 32,
            max_epochs: 40,
            patience: 4,
            clip_norm: Some(5.0),
            loss: None,
            seeds: vec![0, 1, 2],
            split: SplitRatios::STANDARD,
            train_stride: 2,
            eval_stride: 4,
            max_batches_per_epoch: Some(25),
            metric_scale: Default::default(),
            lr_decay: None,
        }
    }

    /// 7 hourly channels, 96-in/96-out, 7:1:2 split.
    pub fn desk_ltsf() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: "synth-ltsf".into(),
            data: DataSource::SynthLtsf(SynthLtsf::new(7, 2400, 11)),
            model: ModelConfig::ltsf(7, 96, 96, 16, 32, 2, 1),
            train: TrainConfig {
                split: SplitRatios::SEVEN_ONE_TWO,
                ..Self::short_schedule()
            },
            prune: None,
        }
    }
}

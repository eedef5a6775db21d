//! Run configuration document: datasets, model specs, training and
//! evaluation blocks, output directory and seeds.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::MelConfig;
use crate::models::backbone::BackboneConfig;
use crate::models::cnn::FramewiseCnnConfig;
use crate::models::{Architecture, ModelConfig, NisqaHeadConfig};
use crate::stats::DEFAULT_ALPHA;
use crate::training::{AePretrainConfig, OptimizerKind, TrainConfig};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSize {
    #[default]
    Reference,
    Tiny,
}

/// Optional overrides on top of the per-architecture training defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingOverrides {
    pub optimizer: Option<OptimizerKind>,
    pub learning_rate: Option<f64>,
    pub patience_epochs: Option<usize>,
    pub max_epochs: Option<usize>,
    pub batch_size: Option<usize>,
}

impl TrainingOverrides {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(o) = self.optimizer {
            if o != cfg.optimizer {
                cfg.learning_rate = o.default_lr();
            }
            cfg.optimizer = o;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.patience_epochs {
            cfg.patience_epochs = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
    }
}

/// One model of the benchmark: an architecture trained on a named dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: String,
    pub architecture: Architecture,
    pub train_set: String,
    /// Load the autoencoder-pretrained trunk before training.
    #[serde(default)]
    pub pretrained_trunk: bool,
    /// Model id of the trained w2vMOS whose branch a fusion model reuses.
    #[serde(default)]
    pub w2v_source: Option<String>,
    #[serde(default)]
    pub size: ModelSize,
    #[serde(default)]
    pub cnn: Option<FramewiseCnnConfig>,
    #[serde(default)]
    pub nisqa: Option<NisqaHeadConfig>,
    #[serde(default)]
    pub backbone: Option<BackboneConfig>,
    #[serde(default)]
    pub fine_tune_backbone: Option<bool>,
    #[serde(default)]
    pub training: TrainingOverrides,
}

impl ModelSpec {
    pub fn new(id: &str, architecture: Architecture, train_set: &str) -> Self {
        Self {
            id: id.into(),
            architecture,
            train_set: train_set.into(),
            pretrained_trunk: false,
            w2v_source: None,
            size: ModelSize::Reference,
            cnn: None,
            nisqa: None,
            backbone: None,
            fine_tune_backbone: None,
            training: TrainingOverrides::default(),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut cfg = match self.size {
            ModelSize::Reference => ModelConfig::reference(self.architecture),
            ModelSize::Tiny => ModelConfig::tiny(self.architecture),
        };
        if let Some(c) = &self.cnn {
            cfg.cnn = c.clone();
        }
        if let Some(n) = &self.nisqa {
            cfg.nisqa = n.clone();
        }
        if let Some(b) = &self.backbone {
            cfg.backbone = b.clone();
        }
        if let Some(f) = self.fine_tune_backbone {
            cfg.fine_tune_backbone = f;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationBlock {
    /// Dataset whose TEST split every model is scored on.
    pub test_set: String,
    /// Dataset whose VAL split drives early stopping for every model.
    pub validation_set: String,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Only read Tukey decisions when ANOVA rejects.
    #[serde(default = "default_true")]
    pub anova_gate: bool,
    #[serde(default = "default_audit_k")]
    pub audit_top_k: usize,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_true() -> bool {
    true
}

fn default_audit_k() -> usize {
    5
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_schema() -> u32 {
    CONFIG_SCHEMA_VERSION
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Dataset name to labeled manifest path.
    pub datasets: BTreeMap<String, PathBuf>,
    /// Unlabeled manifest for autoencoder pretraining.
    #[serde(default)]
    pub unlabeled: Option<PathBuf>,
    #[serde(default)]
    pub features: MelConfig,
    #[serde(default)]
    pub training: TrainingOverrides,
    #[serde(default)]
    pub autoencoder: AePretrainConfig,
    pub evaluation: EvaluationBlock,
    #[serde(default)]
    pub models: Vec<ModelSpec>,
}

impl RunConfig {
    /// The eight benchmark models, with VoiceMOS as the shared train,
    /// validation and test corpus and NISQA/PSTN as alternative train sets.
    pub fn benchmark(datasets: BTreeMap<String, PathBuf>, unlabeled: Option<PathBuf>) -> Self {
        let mut models = vec![
            ModelSpec::new("ConvMaxPool", Architecture::ConvMaxPool, "voicemos"),
            ModelSpec {
                pretrained_trunk: true,
                ..ModelSpec::new("ConvMaxPool*", Architecture::ConvMaxPool, "voicemos")
            },
            ModelSpec::new("NISQA", Architecture::Nisqa, "voicemos"),
            ModelSpec::new("w2v_VoiceMOS", Architecture::W2vMos, "voicemos"),
            ModelSpec::new("w2v_NISQA", Architecture::W2vMos, "nisqa"),
            ModelSpec::new("w2v_PSTN", Architecture::W2vMos, "pstn"),
        ];
        for (id, arch) in [("Fusion 1", Architecture::Fusion1), ("Fusion 2", Architecture::Fusion2)] {
            models.push(ModelSpec {
                pretrained_trunk: true,
                w2v_source: Some("w2v_VoiceMOS".into()),
                ..ModelSpec::new(id, arch, "voicemos")
            });
        }
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            output_dir: default_output(),
            seeds: default_seeds(),
            datasets,
            unlabeled,
            features: MelConfig::default(),
            training: TrainingOverrides::default(),
            autoencoder: AePretrainConfig::default(),
            evaluation: EvaluationBlock {
                test_set: "voicemos".into(),
                validation_set: "voicemos".into(),
                alpha: DEFAULT_ALPHA,
                anova_gate: true,
                audit_top_k: default_audit_k(),
            },
            models,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        self.datasets.values_mut().for_each(fix);
        if let Some(u) = &mut self.unlabeled {
            fix(u);
        }
    }

    pub fn spec(&self, id: &str) -> Result<&ModelSpec> {
        self.models
            .iter()
            .find(|m| m.id == id)
            .ok_or_else(|| Error::Config(format!("no model with id `{id}`")))
    }

    pub fn dataset_path(&self, name: &str) -> Result<&Path> {
        self.datasets
            .get(name)
            .map(PathBuf::as_path)
            .ok_or_else(|| Error::Config(format!("unknown dataset `{name}`")))
    }

    /// Training config of `spec` for one seed: architecture defaults, then
    /// the global block, then the model's own block.
    pub fn train_config(&self, spec: &ModelSpec, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::for_architecture(spec.architecture, seed);
        self.training.apply(&mut cfg);
        spec.training.apply(&mut cfg);
        cfg
    }

    pub fn needs_autoencoder(&self) -> bool {
        self.models.iter().any(|m| m.pretrained_trunk)
    }

    /// Checks references between blocks and that every path exists.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported schema_version {}", self.schema_version)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let mut seen = HashSet::new();
        if !self.seeds.iter().all(|s| seen.insert(*s)) {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        for path in self.datasets.values() {
            if !path.exists() {
                return Err(Error::MissingPath(path.clone()));
            }
        }
        self.dataset_path(&self.evaluation.test_set)?;
        self.dataset_path(&self.evaluation.validation_set)?;
        if !(self.evaluation.alpha > 0.0 && self.evaluation.alpha < 1.0) {
            return Err(Error::Config("evaluation.alpha must lie in (0, 1)".into()));
        }
        self.features.validate()?;
        let mut ids = HashSet::new();
        for m in &self.models {
            if m.id.is_empty() || m.id.contains(['/', '\\']) {
                return Err(Error::Config(format!("invalid model id `{}`", m.id)));
            }
            if !ids.insert(m.id.as_str()) {
                return Err(Error::Config(format!("duplicate model id `{}`", m.id)));
            }
            self.dataset_path(&m.train_set)?;
            if m.pretrained_trunk && !m.architecture.needs_patches() {
                return Err(Error::Config(format!("`{}`: {} has no CNN trunk to pretrain", m.id, m.architecture)));
            }
            match (&m.w2v_source, m.architecture.is_fusion()) {
                (None, true) => return Err(Error::Config(format!("`{}`: fusion models need w2v_source", m.id))),
                (Some(_), false) => {
                    return Err(Error::Config(format!("`{}`: w2v_source only applies to fusion models", m.id)))
                }
                (Some(src), true) => {
                    let source = self.spec(src)?;
                    if source.architecture != Architecture::W2vMos {
                        return Err(Error::Config(format!("`{}`: w2v_source `{src}` is not a w2vMOS model", m.id)));
                    }
                }
                (None, false) => {}
            }
            let mut tc = self.train_config(m, 0);
            tc.seed = 0;
            tc.validate()?;
        }
        if self.needs_autoencoder() {
            match &self.unlabeled {
                None => return Err(Error::Config("pretrained_trunk models need an `unlabeled` manifest".into())),
                Some(p) if !p.exists() => return Err(Error::MissingPath(p.clone())),
                Some(_) => {}
            }
        }
        Ok(())
    }
}

//! Experiment configuration: one JSON document drives every command.

use std::path::{Path, PathBuf};

use mvsvdd::baselines::{BaselineMethod, Selection};
use mvsvdd::data::{AugmentationPolicy, AugmentedSet, DicesConfig, MnistConfig};
use mvsvdd::fusion::{PretrainHyperParams, Strategy};
use mvsvdd::hpo::{HalvingSettings, SearchSpace};
use mvsvdd::nets::NetSpec;
use mvsvdd::svdd::SvddHyperParams;
use mvsvdd::{derive_seed, Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Where samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Two-view digits built from IDX files in `dir`
    /// (`train-images-idx3-ubyte`, `train-labels-idx1-ubyte`, `t10k-*`).
    Idx {
        dir: PathBuf,
        #[serde(default)]
        mnist: MnistConfig,
    },
    /// `train.csv` / `test.csv` manifests with PNG views.
    DicesManifest {
        dir: PathBuf,
        #[serde(default)]
        target_size: Option<usize>,
    },
    /// Procedurally rendered dice.
    SynthDices {
        #[serde(default)]
        dices: DicesConfig,
    },
}

impl DatasetSpec {
    pub fn image_size(&self) -> Option<usize> {
        match self {
            DatasetSpec::Idx { mnist, .. } => Some(mnist.target_size),
            DatasetSpec::DicesManifest { target_size, .. } => *target_size,
            DatasetSpec::SynthDices { dices } => Some(dices.image_size),
        }
    }
}

/// Training-set augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    pub set: AugmentedSet,
    #[serde(default)]
    pub policy: AugmentationPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSpec {
    pub methods: Vec<BaselineMethod>,
    pub selection: Selection,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        Self { methods: BaselineMethod::ALL.to_vec(), selection: Selection::TestAuc }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HpoSpec {
    pub halving: HalvingSettings,
    pub space: SearchSpace,
    /// Select on `0.5 (AUC + macro-F1)` instead of AUC alone.
    pub imbalanced: bool,
}

impl Default for HpoSpec {
    fn default() -> Self {
        Self { halving: HalvingSettings::default(), space: SearchSpace::deep_svdd_default(), imbalanced: false }
    }
}

/// Full experiment description.
///
/// Defaults: early fusion, desk network, default pretraining and hypersphere
/// settings, no augmentation, master seed 0, three runs, output `runs/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    /// Keep only these views, in this order.
    #[serde(default)]
    pub views: Option<Vec<usize>>,
    #[serde(default)]
    pub augmentation: Option<AugmentationSpec>,
    #[serde(default = "default_net")]
    pub net: NetSpec,
    #[serde(default)]
    pub pretrain: PretrainHyperParams,
    #[serde(default)]
    pub svdd: SvddHyperParams,
    #[serde(default)]
    pub baselines: BaselineSpec,
    #[serde(default)]
    pub hpo: HpoSpec,
    /// Master seed; datasets and every run derive their generators from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

fn default_strategy() -> Strategy {
    Strategy::Early
}

fn default_net() -> NetSpec {
    NetSpec::desk(2)
}

fn default_runs() -> usize {
    3
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSpec) -> Self {
        Self {
            dataset,
            strategy: Strategy::Early,
            views: None,
            augmentation: None,
            net: default_net(),
            pretrain: PretrainHyperParams::default(),
            svdd: SvddHyperParams::default(),
            baselines: BaselineSpec::default(),
            hpo: HpoSpec::default(),
            seed: 0,
            runs: 3,
            out_dir: default_out(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| e.context(&path.display().to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Checks every section before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.pretrain.validate()?;
        self.svdd.validate()?;
        self.hpo.space.validate()?;
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if let Some(a) = &self.augmentation {
            a.set.policy(&a.policy).validate()?;
        }
        if let Some(v) = &self.views {
            if v.is_empty() {
                return Err(Error::Config("views must name at least one view".into()));
            }
        }
        if let Some(size) = self.dataset.image_size() {
            let [_, h, w] = self.net.input_shape;
            if (h, w) != (size, size) {
                return Err(Error::Config(format!("network expects {h}x{w} inputs, dataset produces {size}x{size}")));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON serialisation.
    /// Content hash of everything that affects results; the output directory is excluded.
    pub fn hash(&self) -> String {
        let mut cfg = self.clone();
        cfg.out_dir = PathBuf::new();
        hex::encode(Sha256::digest(serde_json::to_vec(&cfg).expect("config serialises")))
    }

    pub fn data_seed(&self) -> u64 {
        derive_seed(self.seed, 0)
    }

    /// Seeds of the individual runs.
    pub fn run_seeds(&self) -> Vec<u64> {
        (0..self.runs as u64).map(|i| derive_seed(self.seed, i + 1)).collect()
    }

    pub fn pipeline(&self) -> mvsvdd::fusion::PipelineConfig {
        mvsvdd::fusion::PipelineConfig {
            strategy: self.strategy,
            net: self.net.clone(),
            pretrain: self.pretrain.clone(),
            svdd: self.svdd.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth() -> ExperimentConfig {
        ExperimentConfig::new(DatasetSpec::SynthDices { dices: DicesConfig::default() })
    }

    #[test]
    fn round_trip_and_defaults() {
        let cfg = synth();
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        let minimal = ExperimentConfig::from_json(r#"{"dataset":{"source":"synth_dices"}}"#).unwrap();
        assert_eq!(minimal, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            r#"{"dataset":{"source":"synth_dices"},"colour":"red"}"#,
            r#"{"dataset":{"source":"synth_dices","bogus":1}}"#,
            r#"{"dataset":{"source":"synth_dices"},"svdd":{"nu":0.1,"mu":2}}"#,
        ] {
            assert_eq!(ExperimentConfig::from_json(text).unwrap_err().kind(), mvsvdd::ErrorKind::Config, "{text}");
        }
    }

    #[test]
    fn bias_is_rejected_at_load() {
        let text = r#"{"dataset":{"source":"synth_dices"},"net":{"input_shape":[2,28,28],"conv_channels":[8],"kernel":5,"stride":2,"padding":2,"latent_dim":8,"bias":true}}"#;
        let err = ExperimentConfig::from_json(text).unwrap_err();
        assert!(err.to_string().contains("collapse"), "{err}");
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let mut cfg = synth();
        cfg.net.input_shape = [2, 32, 32];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = synth();
        let mut b = synth();
        assert_eq!(a.hash(), b.hash());
        b.out_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_ne!(a.run_seeds(), b.run_seeds());
        assert_eq!(a.run_seeds().len(), 3);
    }
}

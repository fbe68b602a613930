//! Dataset loading, synthesis and augmentation.

pub mod augment;
pub mod dices;
pub mod idx;
pub mod image_ops;
pub mod mnist;

pub use augment::{augment, build_augmented_set, AugmentationPolicy, AugmentedSet};
pub use dices::{export_dices, load_dices, load_manifest, synth_dices, DicesConfig, SynthDice};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, LabeledImages};
pub use mnist::{synth_multiview_mnist, MnistConfig};

use serde::{Deserialize, Serialize};

use crate::fusion::ViewStack;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Test,
}

/// Samples of one split. Training splits are one-class and every pixel lies in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    samples: Vec<ViewStack>,
    pub role: Role,
    pub normal_class_desc: String,
}

impl DatasetSplit {
    pub fn new(samples: Vec<ViewStack>, role: Role, normal_class_desc: impl Into<String>) -> Result<Self> {
        if role == Role::Train {
            if let Some(i) = samples.iter().position(|s| s.label != 0) {
                return Err(Error::OneClass(format!("training sample {i} is labelled anomalous")));
            }
        }
        for (i, s) in samples.iter().enumerate() {
            if s.views().iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Data(format!("sample {i} has pixels outside [0, 1]")));
            }
        }
        Ok(Self { samples, role, normal_class_desc: normal_class_desc.into() })
    }

    pub fn samples(&self) -> &[ViewStack] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<ViewStack> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

//! Named experiments, one per report table.
//!
//! Every preset exists at two scales. `desk` uses 28x28 inputs and short
//! schedules so a row finishes in minutes on a CPU; `paper` uses 400x400
//! inputs and full-length tuned schedules and expects the full datasets
//! on disk.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use mvsvdd::baselines::BaselineMethod;
use mvsvdd::data::{AugmentationPolicy, AugmentedSet, DicesConfig, MnistConfig};
use mvsvdd::fusion::{PretrainHyperParams, Strategy};
use mvsvdd::nets::NetSpec;
use mvsvdd::svdd::SvddHyperParams;
use mvsvdd::{Error, Result};
use serde::Serialize;

use crate::config::{AugmentationSpec, DatasetSpec, ExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Deep,
    Baseline(BaselineMethod),
}

/// One line of a report.
#[derive(Debug, Clone)]
pub struct Row {
    pub label: String,
    pub kind: RowKind,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct Preset {
    pub name: String,
    pub rows: Vec<Row>,
}

/// Pretraining schedule for desk-scale dice runs.
pub fn desk_dices_pretrain(denoise: bool) -> PretrainHyperParams {
    PretrainHyperParams { epochs: 10, lr: 1e-3, batch_size: 32, weight_decay: 1e-6, denoise, noise_sigma: 0.1 }
}

pub fn desk_dices_svdd() -> SvddHyperParams {
    SvddHyperParams { nu: 0.4, weight_decay: 1e-6, warmup_epochs: 3, epochs: 10, lr: 1e-4, batch_size: 64, center_eps: 0.1 }
}

pub fn desk_dices_data() -> DicesConfig {
    DicesConfig::default()
}

/// Pretraining schedule for desk-scale digit runs.
pub fn desk_mnist_pretrain() -> PretrainHyperParams {
    PretrainHyperParams { epochs: 10, lr: 1e-3, batch_size: 32, weight_decay: 1e-6, denoise: true, noise_sigma: 0.1 }
}

pub fn desk_mnist_svdd() -> SvddHyperParams {
    SvddHyperParams { nu: 0.4, weight_decay: 1e-6, warmup_epochs: 5, epochs: 15, lr: 1e-4, batch_size: 64, center_eps: 0.1 }
}

/// Full-scale autoencoder and hypersphere settings per fusion strategy.
fn paper_hp(strategy: Strategy, denoise: bool) -> (PretrainHyperParams, SvddHyperParams, usize) {
    let (ae, sv, latent) = match strategy {
        Strategy::Early => ((23, 0.00657, 3.346e-08, 127), (11, 7.706e-06, 1.3025e-09, 80), 640),
        Strategy::Late => ((21, 0.000178, 4.8869e-07, 28), (28, 2.339e-05, 4.95e-08, 84), 392),
        Strategy::LateDual => ((24, 0.000627, 4.88e-08, 127), (11, 7.706e-05, 1.3025e-09, 80), 392),
    };
    let pre = PretrainHyperParams { batch_size: ae.0, lr: ae.1, weight_decay: ae.2, epochs: ae.3, denoise, noise_sigma: 0.1 };
    let svdd = SvddHyperParams {
        nu: 0.4,
        batch_size: sv.0,
        lr: sv.1,
        weight_decay: sv.2,
        epochs: sv.3,
        warmup_epochs: 10,
        center_eps: 0.1,
    };
    (pre, svdd, latent)
}

fn dices_dataset(scale: Scale, data: Option<&Path>) -> DatasetSpec {
    match scale {
        Scale::Desk => match data {
            Some(dir) => DatasetSpec::DicesManifest { dir: dir.to_path_buf(), target_size: Some(28) },
            None => DatasetSpec::SynthDices { dices: desk_dices_data() },
        },
        Scale::Paper => DatasetSpec::DicesManifest {
            dir: data.map_or_else(|| PathBuf::from("data/dices"), Path::to_path_buf),
            target_size: Some(400),
        },
    }
}

fn mnist_dataset(scale: Scale, digit: u8, data: Option<&Path>) -> DatasetSpec {
    let dir = data.map_or_else(|| PathBuf::from("data/mnist"), Path::to_path_buf);
    let mnist = match scale {
        Scale::Desk => MnistConfig { normal_digit: digit, ..MnistConfig::default() },
        Scale::Paper => MnistConfig::paper(digit),
    };
    DatasetSpec::Idx { dir, mnist }
}

fn deep(dataset: DatasetSpec, strategy: Strategy, denoise: bool, scale: Scale, digits: bool) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(dataset);
    cfg.strategy = strategy;
    match scale {
        Scale::Desk => {
            cfg.net = NetSpec::desk(2);
            if digits {
                cfg.pretrain = desk_mnist_pretrain();
                cfg.svdd = desk_mnist_svdd();
            } else {
                cfg.pretrain = desk_dices_pretrain(denoise);
                cfg.svdd = desk_dices_svdd();
            }
            cfg.pretrain.denoise = denoise;
        }
        Scale::Paper => {
            let (pre, svdd, latent) = paper_hp(strategy, denoise);
            cfg.net = NetSpec::paper(2, latent);
            cfg.pretrain = pre;
            cfg.svdd = svdd;
        }
    }
    cfg
}

fn baseline_rows(dataset: DatasetSpec) -> Vec<Row> {
    let labels = [(BaselineMethod::OcSvm, "PCA + OC-SVM"), (BaselineMethod::Kde, "PCA + KDE"), (BaselineMethod::IForest, "PCA + IF")];
    labels
        .into_iter()
        .map(|(m, label)| {
            let mut cfg = ExperimentConfig::new(dataset.clone());
            cfg.net.input_shape[1..].copy_from_slice(&[dataset.image_size().unwrap_or(28); 2]);
            cfg.baselines.methods = vec![m];
            Row { label: label.into(), kind: RowKind::Baseline(m), config: cfg }
        })
        .collect()
}

fn strategy_label(s: Strategy) -> &'static str {
    match s {
        Strategy::Early => "Early fusion",
        Strategy::Late => "Late fusion",
        Strategy::LateDual => "Late fusion, dual decoders",
    }
}

fn strategy_slug(s: Strategy) -> &'static str {
    match s {
        Strategy::Early => "early",
        Strategy::Late => "late",
        Strategy::LateDual => "dual",
    }
}

/// Every preset name.
pub fn preset_names() -> Vec<String> {
    let mut names = Vec::new();
    for s in Strategy::ALL {
        names.push(format!("table2-{}", strategy_slug(s)));
    }
    for s in Strategy::ALL {
        names.push(format!("table3-{}-denoise", strategy_slug(s)));
    }
    names.push("table3-single".into());
    names.push("table4-baselines".into());
    names.extend((0..10).map(|d| format!("table5-digit{d}")));
    names.extend((2..4).map(|d| format!("table6-baselines-digit{d}")));
    for set in AugmentedSet::ALL {
        names.push(format!("table7-aug-{}", set.name().replace('_', "-")));
    }
    names
}

/// Builds a preset. `data` overrides the dataset directory.
pub fn preset(name: &str, scale: Scale, data: Option<&Path>) -> Result<Preset> {
    let unknown = || Error::Config(format!("unknown preset `{name}`; known presets: {}", preset_names().join(", ")));
    let slug = |s: &str| Strategy::ALL.into_iter().find(|st| strategy_slug(*st) == s);
    let rows = if let Some(rest) = name.strip_prefix("table2-") {
        let s = slug(rest).ok_or_else(unknown)?;
        vec![Row { label: strategy_label(s).into(), kind: RowKind::Deep, config: deep(dices_dataset(scale, data), s, false, scale, false) }]
    } else if name == "table3-single" {
        let mut cfg = deep(dices_dataset(scale, data), Strategy::Early, true, scale, false);
        cfg.views = Some(vec![0]);
        cfg.net = cfg.net.with_channels(1);
        vec![Row { label: "Single perspective".into(), kind: RowKind::Deep, config: cfg }]
    } else if let Some(rest) = name.strip_prefix("table3-").and_then(|r| r.strip_suffix("-denoise")) {
        let s = slug(rest).ok_or_else(unknown)?;
        let label = format!("{} (DAE)", strategy_label(s));
        vec![Row { label, kind: RowKind::Deep, config: deep(dices_dataset(scale, data), s, true, scale, false) }]
    } else if name == "table4-baselines" {
        baseline_rows(dices_dataset(scale, data))
    } else if let Some(d) = name.strip_prefix("table5-digit") {
        let digit: u8 = d.parse().ok().filter(|v| *v < 10).ok_or_else(unknown)?;
        let cfg = deep(mnist_dataset(scale, digit, data), Strategy::Early, true, scale, true);
        vec![Row { label: format!("Digit {digit}"), kind: RowKind::Deep, config: cfg }]
    } else if let Some(d) = name.strip_prefix("table6-baselines-digit") {
        let digit: u8 = d.parse().ok().filter(|v| *v < 10).ok_or_else(unknown)?;
        baseline_rows(mnist_dataset(scale, digit, data))
    } else if let Some(rest) = name.strip_prefix("table7-aug-") {
        let set = AugmentedSet::ALL.into_iter().find(|s| s.name().replace('_', "-") == rest).ok_or_else(unknown)?;
        Strategy::ALL
            .into_iter()
            .map(|s| {
                let mut cfg = deep(dices_dataset(scale, data), s, true, scale, false);
                cfg.augmentation = Some(AugmentationSpec { set, policy: AugmentationPolicy::default() });
                Row { label: strategy_label(s).into(), kind: RowKind::Deep, config: cfg }
            })
            .collect()
    } else {
        return Err(unknown());
    };
    for r in &rows {
        r.config.validate()?;
    }
    Ok(Preset { name: name.into(), rows })
}

//! Where perspectives are merged: before the encoder (early), after it
//! (late), or after a shared encoder pretrained with one decoder per view
//! (late with dual decoders).

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::ndgrad::{AdamState, Graph, Tensor, Var};
use crate::nets::{
    build_decoder, build_encoder, cae_loss, dae_corrupt, embed, transfer_encoder, ImageSet, NetSpec,
    NetworkParams,
};
use crate::svdd::{self, EpochLog, SvddHyperParams, SvddModel};
use crate::{Error, Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Early,
    Late,
    LateDual,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Early, Strategy::Late, Strategy::LateDual];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Early => "early",
            Strategy::Late => "late",
            Strategy::LateDual => "late_dual",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion strategy `{s}` (early, late, late_dual)")))
    }
}

/// Strategy plus the number of perspectives a model was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionTag {
    pub strategy: Strategy,
    pub views: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyType {
    Drilling,
    MissingDots,
    Sawing,
    Scratching,
    /// Anomalies outside the defect taxonomy, such as a foreign digit.
    Other,
    None,
}

impl AnomalyType {
    pub const DEFECTS: [AnomalyType; 4] =
        [AnomalyType::Drilling, AnomalyType::MissingDots, AnomalyType::Sawing, AnomalyType::Scratching];

    pub fn name(self) -> &'static str {
        match self {
            AnomalyType::Drilling => "drilling",
            AnomalyType::MissingDots => "missing_dots",
            AnomalyType::Sawing => "sawing",
            AnomalyType::Scratching => "scratching",
            AnomalyType::Other => "other",
            AnomalyType::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.is_empty() {
            return Ok(AnomalyType::None);
        }
        Self::DEFECTS
            .into_iter()
            .chain([AnomalyType::Other, AnomalyType::None])
            .find(|a| a.name() == t)
            .ok_or_else(|| Error::Data(format!("unknown anomaly type `{s}`")))
    }
}

/// K single-channel images of one object, in fixed perspective order.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewStack {
    height: usize,
    width: usize,
    views: Vec<Vec<f64>>,
    pub label: u8,
    pub anomaly_type: AnomalyType,
}

impl ViewStack {
    pub fn new(
        height: usize,
        width: usize,
        views: Vec<Vec<f64>>,
        label: u8,
        anomaly_type: AnomalyType,
    ) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::Data("a view stack needs at least one view".into()));
        }
        if let Some(v) = views.iter().find(|v| v.len() != height * width) {
            return Err(Error::Data(format!("view of {} pixels in a {height}x{width} stack", v.len())));
        }
        if label > 1 {
            return Err(Error::Data(format!("label {label} is not 0 or 1")));
        }
        if (label == 0) != (anomaly_type == AnomalyType::None) {
            return Err(Error::Data(format!(
                "label {label} inconsistent with anomaly type `{}`",
                anomaly_type.name()
            )));
        }
        Ok(Self { height, width, views, label, anomaly_type })
    }

    pub fn normal(height: usize, width: usize, views: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(height, width, views, 0, AnomalyType::None)
    }

    pub fn k(&self) -> usize {
        self.views.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn view(&self, i: usize) -> &[f64] {
        &self.views[i]
    }

    pub fn views(&self) -> &[Vec<f64>] {
        &self.views
    }

    pub fn views_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.views
    }

    /// Same object with only the selected perspectives, in the given order.
    pub fn select(&self, order: &[usize]) -> Result<Self> {
        let views = order
            .iter()
            .map(|&i| self.views.get(i).cloned().ok_or_else(|| Error::Data(format!("no view {i}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.height, self.width, views, self.label, self.anomaly_type)
    }
}

/// Channel-wise concatenation `(K, H, W)` in view order.
pub fn stack_views(sample: &ViewStack) -> Result<Tensor> {
    let data: Vec<f64> = sample.views.iter().flatten().copied().collect();
    Tensor::new(vec![sample.k(), sample.height, sample.width], data)
}

/// Averaged late-fusion embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedEmbedding {
    pub phi_bar: Vec<f64>,
}

/// Uniform mean of per-view embeddings.
pub fn fuse_embeddings(phis: &[Vec<f64>]) -> Result<FusedEmbedding> {
    let first = phis.first().ok_or_else(|| Error::InvalidArgument("no embeddings to fuse".into()))?;
    let p = first.len();
    if phis.iter().any(|v| v.len() != p) {
        return Err(Error::Shape("embeddings of mixed lengths cannot be fused".into()));
    }
    let k = phis.len() as f64;
    let phi_bar = (0..p).map(|j| phis.iter().map(|v| v[j]).sum::<f64>() / k).collect();
    Ok(FusedEmbedding { phi_bar })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainHyperParams {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Train as a denoising autoencoder.
    pub denoise: bool,
    pub noise_sigma: f64,
}

impl Default for PretrainHyperParams {
    fn default() -> Self {
        Self { epochs: 20, lr: 1e-3, batch_size: 32, weight_decay: 1e-6, denoise: false, noise_sigma: 0.1 }
    }
}

impl PretrainHyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("pretraining needs positive epochs, batch_size and lr".into()));
        }
        if !(self.weight_decay >= 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("weight_decay and noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Result of the reconstruction stage.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub strategy: Strategy,
    pub spec: NetSpec,
    pub encoder: NetworkParams,
    /// One decoder, or one per view for dual decoders.
    pub decoders: Vec<NetworkParams>,
    /// Mean reconstruction loss before training, then after every epoch.
    pub loss_history: Vec<f64>,
}

/// Network spec for a strategy: K input channels for early fusion, one otherwise.
pub fn strategy_spec(strategy: Strategy, base: &NetSpec, k: usize) -> NetSpec {
    match strategy {
        Strategy::Early => base.with_channels(k),
        Strategy::Late | Strategy::LateDual => base.with_channels(1),
    }
}

fn check_training_set(samples: &[ViewStack]) -> Result<usize> {
    let first = samples.first().ok_or_else(|| Error::Data("empty training set".into()))?;
    if let Some(i) = samples.iter().position(|s| s.label != 0) {
        return Err(Error::OneClass(format!(
            "training sample {i} is labelled anomalous; training data must contain normal samples only"
        )));
    }
    let (k, h, w) = (first.k(), first.height, first.width);
    if samples.iter().any(|s| s.k() != k || s.height != h || s.width != w) {
        return Err(Error::Data("training samples differ in view count or size".into()));
    }
    Ok(k)
}

fn stacked_set(samples: &[ViewStack]) -> Result<ImageSet> {
    let s0 = &samples[0];
    let mut set = ImageSet::empty([s0.k(), s0.height, s0.width]);
    for s in samples {
        set.push(&s.views.concat())?;
    }
    Ok(set)
}

fn view_set(samples: &[ViewStack], view: usize) -> Result<ImageSet> {
    let s0 = &samples[0];
    let mut set = ImageSet::empty([1, s0.height, s0.width]);
    for s in samples {
        set.push(&s.views[view])?;
    }
    Ok(set)
}

fn all_views_set(samples: &[ViewStack]) -> Result<ImageSet> {
    let s0 = &samples[0];
    let mut set = ImageSet::empty([1, s0.height, s0.width]);
    for s in samples {
        for v in &s.views {
            set.push(v)?;
        }
    }
    Ok(set)
}

/// Network inputs the hypersphere stage trains on: stacks for early fusion,
/// every individual view for the late variants.
pub fn svdd_training_set(strategy: Strategy, samples: &[ViewStack]) -> Result<ImageSet> {
    check_training_set(samples)?;
    match strategy {
        Strategy::Early => stacked_set(samples),
        Strategy::Late | Strategy::LateDual => all_views_set(samples),
    }
}

/// One optimisation step over `sets` (one set per decoder, aligned by index).
#[allow(clippy::too_many_arguments)]
fn reconstruction_step(
    spec: &NetSpec,
    encoder: &mut NetworkParams,
    decoders: &mut [NetworkParams],
    sets: &[ImageSet],
    batch: &[usize],
    hp: &PretrainHyperParams,
    adam: &mut AdamState,
    rng: &mut Rng,
) -> Result<f64> {
    let mut g = Graph::new();
    let ew = encoder.bind(&mut g);
    let mut losses = Vec::with_capacity(decoders.len());
    let mut dws = Vec::with_capacity(decoders.len());
    for (dec, set) in decoders.iter().zip(sets) {
        let clean = set.gather(batch)?;
        let target = g.input(&clean);
        let input = if hp.denoise { g.input(&dae_corrupt(&clean, hp.noise_sigma, rng)?) } else { target };
        let dw = dec.bind(&mut g);
        losses.push(cae_loss(&mut g, spec, &ew, &dw, input, target)?);
        dws.push(dw);
    }
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = g.add(total, l)?;
    }
    let loss: Var = if losses.len() > 1 { g.scale(total, 1.0 / losses.len() as f64)? } else { total };
    let value = g.item(loss);
    let grads = g.backward(loss)?;
    encoder.accumulate_grads(&grads, &ew)?;
    for (dec, dw) in decoders.iter_mut().zip(&dws) {
        dec.accumulate_grads(&grads, dw)?;
    }
    let params = encoder.iter_mut().chain(decoders.iter_mut().flat_map(|d| d.iter_mut()));
    adam.step(params, hp.weight_decay)?;
    Ok(value)
}

fn mean_reconstruction(
    spec: &NetSpec,
    encoder: &NetworkParams,
    decoders: &[NetworkParams],
    sets: &[ImageSet],
) -> Result<f64> {
    let n = sets[0].len();
    let idx: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(64) {
        let mut per_view = 0.0;
        for (dec, set) in decoders.iter().zip(sets) {
            per_view += crate::nets::reconstruction_error(spec, encoder, dec, &set.gather(chunk)?)?;
        }
        total += per_view / decoders.len() as f64 * chunk.len() as f64;
    }
    Ok(total / n as f64)
}

/// Reconstruction pretraining for one strategy.
///
/// `base` fixes the architecture; its channel count is replaced according to
/// the strategy. Training data must be one-class.
pub fn pretrain(
    strategy: Strategy,
    samples: &[ViewStack],
    base: &NetSpec,
    hp: &PretrainHyperParams,
    rng: &mut Rng,
) -> Result<Pretrained> {
    hp.validate()?;
    let k = check_training_set(samples)?;
    let spec = strategy_spec(strategy, base, k);
    spec.validate()?;
    if spec.input_shape[1..] != [samples[0].height, samples[0].width] {
        return Err(Error::Config(format!(
            "network expects {}x{} images, data is {}x{}",
            spec.input_shape[1], spec.input_shape[2], samples[0].height, samples[0].width
        )));
    }
    let sets = match strategy {
        Strategy::Early => vec![stacked_set(samples)?],
        Strategy::Late => vec![all_views_set(samples)?],
        Strategy::LateDual => (0..k).map(|v| view_set(samples, v)).collect::<Result<_>>()?,
    };
    let mut encoder = build_encoder(&spec, rng)?;
    let mut decoders = (0..sets.len()).map(|_| build_decoder(&spec, rng)).collect::<Result<Vec<_>>>()?;

    let mut history = vec![mean_reconstruction(&spec, &encoder, &decoders, &sets)?];
    let mut adam = AdamState::new(hp.lr);
    let mut order: Vec<usize> = (0..sets[0].len()).collect();
    for epoch in 1..=hp.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(hp.batch_size) {
            let loss =
                reconstruction_step(&spec, &mut encoder, &mut decoders, &sets, batch, hp, &mut adam, rng)?;
            total += loss * batch.len() as f64;
        }
        let loss = total / order.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "reconstruction loss diverged at epoch {epoch}; try a lower learning rate"
            )));
        }
        log::debug!("{} pretrain epoch {epoch}: loss {loss:.6}", strategy.name());
        history.push(loss);
    }
    Ok(Pretrained { strategy, spec, encoder, decoders, loss_history: history })
}

/// Settings for the full two-stage pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub strategy: Strategy,
    pub net: NetSpec,
    #[serde(default)]
    pub pretrain: PretrainHyperParams,
    #[serde(default)]
    pub svdd: SvddHyperParams,
}

/// Everything produced by [`train`].
#[derive(Debug, Clone)]
pub struct TrainedPipeline {
    pub model: SvddModel,
    pub pretrained: Pretrained,
    pub svdd_log: Vec<EpochLog>,
}

/// Pretraining, encoder transfer and hypersphere training in one call.
pub fn train(config: &PipelineConfig, samples: &[ViewStack], rng: &mut Rng) -> Result<TrainedPipeline> {
    let pretrained = pretrain(config.strategy, samples, &config.net, &config.pretrain, rng)?;
    train_from_pretrained(config, pretrained, samples, rng)
}

/// Hypersphere stage on top of an existing pretraining result.
pub fn train_from_pretrained(
    config: &PipelineConfig,
    pretrained: Pretrained,
    samples: &[ViewStack],
    rng: &mut Rng,
) -> Result<TrainedPipeline> {
    if pretrained.strategy != config.strategy {
        return Err(Error::Config(format!(
            "pretrained weights are for `{}`, config asks for `{}`",
            pretrained.strategy.name(),
            config.strategy.name()
        )));
    }
    let k = check_training_set(samples)?;
    let spec = pretrained.spec.clone();
    let encoder = transfer_encoder(&pretrained.encoder, &spec)?;
    let set = svdd_training_set(config.strategy, samples)?;
    let tag = FusionTag { strategy: config.strategy, views: k };
    let (model, svdd_log) = svdd::train_svdd(&spec, encoder, &set, &config.svdd, tag, rng)?;
    Ok(TrainedPipeline { model, pretrained, svdd_log })
}

fn check_views(model: &SvddModel, sample: &ViewStack) -> Result<()> {
    let ok = match model.fusion.strategy {
        Strategy::Early => sample.k() == model.fusion.views,
        Strategy::Late | Strategy::LateDual => sample.k() == model.fusion.views || sample.k() == 1,
    };
    if !ok {
        return Err(Error::Data(format!(
            "model trained on {} views cannot score a sample with {}",
            model.fusion.views,
            sample.k()
        )));
    }
    Ok(())
}

/// Exactly one anomaly score per object.
pub fn score_sample(model: &SvddModel, sample: &ViewStack) -> Result<f64> {
    Ok(score_samples(model, std::slice::from_ref(sample))?[0])
}

/// Scores a batch of objects; per-view encodings are computed in one pass.
pub fn score_samples(model: &SvddModel, samples: &[ViewStack]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    for s in samples {
        check_views(model, s)?;
    }
    let [_, h, w] = model.spec.input_shape;
    if samples.iter().any(|s| s.height != h || s.width != w) {
        return Err(Error::Data(format!("model expects {h}x{w} views")));
    }
    match model.fusion.strategy {
        Strategy::Early => {
            let set = stacked_set(samples)?;
            embed(&model.spec, &model.encoder, &set)?.iter().map(|phi| svdd::anomaly_score(model, phi)).collect()
        }
        Strategy::Late | Strategy::LateDual => {
            let mut set = ImageSet::empty([1, h, w]);
            for s in samples {
                for v in &s.views {
                    set.push(v)?;
                }
            }
            let phis = embed(&model.spec, &model.encoder, &set)?;
            let mut out = Vec::with_capacity(samples.len());
            let mut at = 0;
            for s in samples {
                let fused = fuse_embeddings(&phis[at..at + s.k()])?;
                at += s.k();
                out.push(svdd::anomaly_score(model, &fused.phi_bar)?);
            }
            Ok(out)
        }
    }
}

//! Soft-boundary Deep SVDD: centre initialisation, objective, radius schedule,
//! training loop and scoring.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::fusion::FusionTag;
use crate::ndgrad::{sq_dist, AdamState, Graph, Var};
use crate::nets::{embed, encoder_forward, ImageSet, NetSpec, NetworkParams};
use crate::{Error, Result, Rng};

/// Centre `c` and radius `R` of the learned hypersphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypersphere {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Hypersphere {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::InvalidArgument(format!("radius {radius} must be finite and >= 0")));
        }
        if center.is_empty() || center.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("centre must be a non-empty finite vector".into()));
        }
        if center.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidArgument(
                "centre is identically zero; a zero centre admits the trivial collapsed solution".into(),
            ));
        }
        Ok(Self { center, radius })
    }

    /// `|phi - c|^2 - R^2`; positive outside the sphere.
    pub fn score(&self, phi: &[f64]) -> Result<f64> {
        if phi.len() != self.center.len() {
            return Err(Error::Shape(format!(
                "embedding of length {} scored against a centre of length {}",
                phi.len(),
                self.center.len()
            )));
        }
        Ok(sq_dist(phi, &self.center) - self.radius * self.radius)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvddHyperParams {
    pub nu: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub center_eps: f64,
}

impl Default for SvddHyperParams {
    fn default() -> Self {
        Self {
            nu: 0.4,
            weight_decay: 1e-6,
            warmup_epochs: 10,
            epochs: 30,
            lr: 1e-4,
            batch_size: 64,
            center_eps: 0.1,
        }
    }
}

impl SvddHyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::Config(format!("nu {} outside (0, 1]", self.nu)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) || !(self.center_eps > 0.0) {
            return Err(Error::Config("epochs, batch_size, lr and center_eps must be positive".into()));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        Ok(())
    }
}

/// Trained encoder plus hypersphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SvddModel {
    pub spec: NetSpec,
    pub encoder: NetworkParams,
    pub sphere: Hypersphere,
    pub hp: SvddHyperParams,
    pub fusion: FusionTag,
}

impl SvddModel {
    /// Rounds encoder weights to `f32`; scores are then reproducible from an `f32` checkpoint.
    pub fn snap_to_f32(&mut self) {
        self.encoder.snap_to_f32();
    }

    pub fn latent_dim(&self) -> usize {
        self.sphere.center.len()
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub radius: f64,
}

/// Column mean of `embeddings`, with components smaller than `eps` in
/// magnitude pushed out to `+-eps` (zero goes to `+eps`).
pub fn init_center(embeddings: &[Vec<f64>], eps: f64) -> Result<Vec<f64>> {
    let first = embeddings.first().ok_or_else(|| Error::Data("cannot initialise a centre from no embeddings".into()))?;
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps {eps} must be positive")));
    }
    let p = first.len();
    let mut c = vec![0.0; p];
    for row in embeddings {
        if row.len() != p {
            return Err(Error::Shape("embeddings have mixed lengths".into()));
        }
        c.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    let n = embeddings.len() as f64;
    for v in &mut c {
        *v /= n;
        if v.abs() < eps {
            *v = if *v < 0.0 { -eps } else { eps };
        }
    }
    Ok(c)
}

/// Records the soft-boundary objective for a `(B, P)` embedding node.
pub fn svdd_loss(g: &mut Graph, embeddings: Var, sphere: &Hypersphere, nu: f64) -> Result<Var> {
    g.sphere_hinge(embeddings, &sphere.center, sphere.radius * sphere.radius, nu)
}

/// Value of the soft-boundary objective for a batch of embeddings.
pub fn svdd_loss_value(embeddings: &[Vec<f64>], sphere: &Hypersphere, nu: f64) -> Result<f64> {
    let p = sphere.center.len();
    if embeddings.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let data: Vec<f64> = embeddings.iter().flatten().copied().collect();
    if data.len() != embeddings.len() * p {
        return Err(Error::Shape(format!("embeddings do not match a centre of length {p}")));
    }
    let mut g = Graph::new();
    let x = g.constant(vec![embeddings.len(), p], data)?;
    let loss = svdd_loss(&mut g, x, sphere, nu)?;
    Ok(g.item(loss))
}

/// Linear-interpolation quantile of unsorted values, `q` in [0, 1].
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("quantile of an empty set".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("quantile level {q} outside [0, 1]")));
    }
    let mut v = values.to_vec();
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::Numerical("NaN in quantile input".into()));
    }
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

/// `R = sqrt((1 - nu)-quantile of squared distances)`.
pub fn update_radius(distances_sq: &[f64], nu: f64) -> Result<f64> {
    if let Some(d) = distances_sq.iter().find(|d| **d < 0.0) {
        return Err(Error::Numerical(format!("negative squared distance {d}")));
    }
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::InvalidArgument(format!("nu {nu} outside (0, 1]")));
    }
    Ok(quantile(distances_sq, 1.0 - nu)?.sqrt())
}

fn distances_sq(embeddings: &[Vec<f64>], center: &[f64]) -> Vec<f64> {
    embeddings.iter().map(|e| sq_dist(e, center)).collect()
}

/// Second training stage on already-transferred encoder weights.
///
/// `train` holds one network input per row: channel stacks for early fusion,
/// individual views for the late variants. The centre and initial radius are
/// taken from a pass before any update. R stays frozen for the first
/// `warmup_epochs`; afterwards it is recomputed from a full pass at the end of
/// every epoch.
pub fn train_svdd(
    spec: &NetSpec,
    encoder: NetworkParams,
    train: &ImageSet,
    hp: &SvddHyperParams,
    fusion: FusionTag,
    rng: &mut Rng,
) -> Result<(SvddModel, Vec<EpochLog>)> {
    hp.validate()?;
    spec.validate()?;
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let mut encoder = encoder;
    let initial = embed(spec, &encoder, train)?;
    let center = init_center(&initial, hp.center_eps)?;
    let radius = update_radius(&distances_sq(&initial, &center), hp.nu)?;
    let mut sphere = Hypersphere::new(center, radius)?;

    let mut adam = AdamState::new(hp.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(hp.epochs);
    for epoch in 1..=hp.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch_idx in order.chunks(hp.batch_size) {
            let batch = train.gather(batch_idx)?;
            let mut g = Graph::new();
            let w = encoder.bind(&mut g);
            let x = g.input(&batch);
            let z = encoder_forward(&mut g, spec, &w, x)?;
            let loss = svdd_loss(&mut g, z, &sphere, hp.nu)?;
            total += g.item(loss) * batch_idx.len() as f64;
            let grads = g.backward(loss)?;
            encoder.accumulate_grads(&grads, &w)?;
            adam.step(encoder.iter_mut(), hp.weight_decay)?;
        }
        let loss = total / train.len() as f64;
        if !loss.is_finite() || encoder.iter().any(|(_, t)| !t.is_finite()) {
            return Err(Error::Numerical(format!(
                "hypersphere training diverged at epoch {epoch} (mean loss {loss}); try a lower learning rate"
            )));
        }
        if epoch > hp.warmup_epochs {
            let emb = embed(spec, &encoder, train)?;
            sphere.radius = update_radius(&distances_sq(&emb, &sphere.center), hp.nu)?;
        }
        log::debug!("svdd epoch {epoch}: loss {loss:.6} R {:.6}", sphere.radius);
        log.push(EpochLog { epoch, loss, radius: sphere.radius });
    }
    let model = SvddModel { spec: spec.clone(), encoder, sphere, hp: hp.clone(), fusion };
    Ok((model, log))
}

/// `|phi - c|^2 - R^2` for the model's sphere.
pub fn anomaly_score(model: &SvddModel, phi: &[f64]) -> Result<f64> {
    model.sphere.score(phi)
}

/// Sign rule: strictly positive scores are anomalous (1), everything else normal (0).
pub fn classify(score: f64) -> Result<u8> {
    if score.is_nan() {
        return Err(Error::Numerical("cannot classify a NaN score".into()));
    }
    Ok(u8::from(score > 0.0))
}

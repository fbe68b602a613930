//! Binary checkpoints: magic, manifest length (u32 LE), JSON manifest, then
//! little-endian `f32` weight blobs.
//!
//! Weights are stored at single precision; models are snapped to `f32`
//! before saving so that a loaded model scores exactly like the saved one.

use std::io::Write;
use std::path::Path;

use mvsvdd::fusion::{FusionTag, Pretrained, Strategy};
use mvsvdd::ndgrad::Tensor;
use mvsvdd::nets::{NetSpec, NetworkParams};
use mvsvdd::svdd::{Hypersphere, SvddHyperParams, SvddModel};
use mvsvdd::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MAGIC: &[u8; 8] = b"MVSVDD\x00\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    /// Encoder and decoders after reconstruction pretraining.
    Pretrained,
    /// Encoder and hypersphere after one-class training.
    Svdd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the blob section.
    pub offset: u64,
    /// Number of `f32` values.
    pub len: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: CheckpointKind,
    pub net: NetSpec,
    pub fusion: FusionTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sphere: Option<Hypersphere>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svdd: Option<SvddHyperParams>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_history: Vec<f64>,
    pub seed: u64,
    pub dataset_fingerprint: String,
    pub config_hash: String,
    pub tensors: Vec<TensorEntry>,
}

/// Provenance stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub seed: u64,
    pub dataset_fingerprint: String,
    pub config_hash: String,
}

/// A decoded checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub tensors: Vec<(String, Tensor)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Data(format!("checkpoint: {}", msg.into()))
}

fn tensor_bytes(t: &Tensor) -> Vec<u8> {
    t.data().iter().flat_map(|v| (*v as f32).to_le_bytes()).collect()
}

fn prefixed(prefix: &str, params: &NetworkParams) -> Vec<(String, Tensor)> {
    params.iter().map(|(n, t)| (format!("{prefix}/{n}"), t.clone())).collect()
}

fn take_network(tensors: &[(String, Tensor)], prefix: &str) -> Result<NetworkParams> {
    let head = format!("{prefix}/");
    let layers: Vec<(String, Tensor)> = tensors
        .iter()
        .filter_map(|(n, t)| n.strip_prefix(&head).map(|rest| (rest.to_string(), t.clone())))
        .collect();
    if layers.is_empty() {
        return Err(bad(format!("no tensors for `{prefix}`")));
    }
    NetworkParams::new(layers)
}

impl Checkpoint {
    fn build(
        kind: CheckpointKind,
        net: NetSpec,
        fusion: FusionTag,
        sphere: Option<Hypersphere>,
        svdd: Option<SvddHyperParams>,
        loss_history: Vec<f64>,
        prov: &Provenance,
        tensors: Vec<(String, Tensor)>,
    ) -> Self {
        let mut offset = 0u64;
        let entries = tensors
            .iter()
            .map(|(name, t)| {
                let bytes = tensor_bytes(t);
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                    len: t.len() as u64,
                    sha256: hex::encode(Sha256::digest(&bytes)),
                };
                offset += bytes.len() as u64;
                e
            })
            .collect();
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            kind,
            net,
            fusion,
            sphere,
            svdd,
            loss_history,
            seed: prov.seed,
            dataset_fingerprint: prov.dataset_fingerprint.clone(),
            config_hash: prov.config_hash.clone(),
            tensors: entries,
        };
        let tensors = tensors
            .into_iter()
            .map(|(n, t)| {
                let data = t.data().iter().map(|v| *v as f32 as f64).collect();
                (n, Tensor::new(t.shape().to_vec(), data).expect("shape unchanged"))
            })
            .collect();
        Self { manifest, tensors }
    }

    pub fn from_model(model: &SvddModel, prov: &Provenance) -> Self {
        Self::build(
            CheckpointKind::Svdd,
            model.spec.clone(),
            model.fusion,
            Some(model.sphere.clone()),
            Some(model.hp.clone()),
            Vec::new(),
            prov,
            prefixed("encoder", &model.encoder),
        )
    }

    pub fn from_pretrained(p: &Pretrained, views: usize, prov: &Provenance) -> Self {
        let mut tensors = prefixed("encoder", &p.encoder);
        for (i, d) in p.decoders.iter().enumerate() {
            tensors.extend(prefixed(&format!("decoder{i}"), d));
        }
        Self::build(
            CheckpointKind::Pretrained,
            p.spec.clone(),
            FusionTag { strategy: p.strategy, views },
            None,
            None,
            p.loss_history.clone(),
            prov,
            tensors,
        )
    }

    pub fn to_model(&self) -> Result<SvddModel> {
        let m = &self.manifest;
        if m.kind != CheckpointKind::Svdd {
            return Err(Error::Config("checkpoint holds pretrained weights, not a trained model".into()));
        }
        let sphere = m.sphere.clone().ok_or_else(|| bad("model checkpoint without a hypersphere"))?;
        let hp = m.svdd.clone().ok_or_else(|| bad("model checkpoint without hyperparameters"))?;
        let sphere = Hypersphere::new(sphere.center, sphere.radius)?;
        if sphere.center.len() != m.net.latent_dim {
            return Err(bad(format!(
                "centre has {} components, network latent size is {}",
                sphere.center.len(),
                m.net.latent_dim
            )));
        }
        Ok(SvddModel { spec: m.net.clone(), encoder: take_network(&self.tensors, "encoder")?, sphere, hp, fusion: m.fusion })
    }

    pub fn to_pretrained(&self) -> Result<Pretrained> {
        let m = &self.manifest;
        if m.kind != CheckpointKind::Pretrained {
            return Err(Error::Config("checkpoint holds a trained model, not pretrained weights".into()));
        }
        let n_dec = match m.fusion.strategy {
            Strategy::LateDual => m.fusion.views,
            Strategy::Early | Strategy::Late => 1,
        };
        let decoders = (0..n_dec).map(|i| take_network(&self.tensors, &format!("decoder{i}"))).collect::<Result<_>>()?;
        Ok(Pretrained {
            strategy: m.fusion.strategy,
            spec: m.net.clone(),
            encoder: take_network(&self.tensors, "encoder")?,
            decoders,
            loss_history: m.loss_history.clone(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest).expect("manifest serialises");
        let mut out = Vec::with_capacity(manifest.len() + 12);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        for (_, t) in &self.tensors {
            out.extend(tensor_bytes(t));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let head = MAGIC.len() + 4;
        if bytes.len() < head || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let mlen = u32::from_le_bytes(bytes[MAGIC.len()..head].try_into().expect("4 bytes")) as usize;
        let blob_start = head.checked_add(mlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated manifest"))?;
        let raw: serde_json::Value =
            serde_json::from_slice(&bytes[head..blob_start]).map_err(|e| bad(format!("unreadable manifest: {e}")))?;
        let version = raw.get("format_version").and_then(serde_json::Value::as_u64).ok_or_else(|| bad("missing format_version"))?;
        if version > u64::from(FORMAT_VERSION) {
            return Err(Error::Config(format!(
                "checkpoint format {version} is newer than this build supports ({FORMAT_VERSION}); upgrade mvsvdd to read it"
            )));
        }
        let manifest: Manifest = serde_json::from_value(raw).map_err(|e| bad(format!("invalid manifest: {e}")))?;
        let blobs = &bytes[blob_start..];
        let mut expected = 0u64;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            if e.offset != expected {
                return Err(bad(format!("tensor `{}` at offset {} where {expected} was expected", e.name, e.offset)));
            }
            if e.shape.iter().product::<usize>() as u64 != e.len {
                return Err(bad(format!("tensor `{}` shape {:?} disagrees with length {}", e.name, e.shape, e.len)));
            }
            let start = e.offset as usize;
            let end = start + 4 * e.len as usize;
            if end > blobs.len() {
                return Err(bad(format!("truncated: tensor `{}` at offset {} needs {} bytes", e.name, e.offset, end - start)));
            }
            let chunk = &blobs[start..end];
            if hex::encode(Sha256::digest(chunk)) != e.sha256 {
                return Err(bad(format!("tensor `{}` at offset {} is corrupt (checksum mismatch)", e.name, e.offset)));
            }
            let data = chunk.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))).collect();
            tensors.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
            expected = end as u64;
        }
        if expected as usize != blobs.len() {
            return Err(bad(format!("{} trailing bytes after the last tensor", blobs.len() - expected as usize)));
        }
        Ok(Self { manifest, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes).map_err(|e| e.context(&path.display().to_string()))
    }
}

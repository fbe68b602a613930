//! Random erasing, photometric jitter and geometric transforms, plus the
//! four augmented training sets used in the ablation.

use rand::{Rng as _, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::image_ops::{hflip, rotate, vflip};
use super::{DatasetSplit, Role};
use crate::fusion::ViewStack;
use crate::ndgrad::Tensor;
use crate::{derive_seed, rng_from_seed, Error, Result, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationPolicy {
    pub enable_erase: bool,
    pub enable_constituents: bool,
    pub enable_geometry: bool,
    /// Erased area as a fraction of the image, drawn uniformly from this range.
    pub erase_area_frac: (f64, f64),
    pub brightness: f64,
    pub contrast: f64,
    /// Accepted for completeness; has no effect on single-channel images.
    pub saturation: f64,
    pub gaussian_sigma: f64,
    pub rotation_degrees: (f64, f64),
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            enable_erase: true,
            enable_constituents: true,
            enable_geometry: true,
            erase_area_frac: (0.02, 0.2),
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            gaussian_sigma: 0.05,
            rotation_degrees: (-30.0, 30.0),
        }
    }
}

impl AugmentationPolicy {
    pub fn disabled() -> Self {
        Self { enable_erase: false, enable_constituents: false, enable_geometry: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.erase_area_frac;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::Config(format!("erase area fractions ({lo}, {hi}) must satisfy 0 < min <= max < 1")));
        }
        if self.rotation_degrees.0 > self.rotation_degrees.1 {
            return Err(Error::Config("rotation range is reversed".into()));
        }
        if [self.brightness, self.contrast, self.saturation, self.gaussian_sigma].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("jitter magnitudes must be >= 0".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Zeroes one rectangle covering `area` of the plane; returns its `(top, left, h, w)`.
fn erase(img: &mut [f64], h: usize, w: usize, area: f64, rng: &mut Rng) -> (usize, usize, usize, usize) {
    let target = area * (h * w) as f64;
    let (mut eh, mut ew) = (0, 0);
    for _ in 0..10 {
        let aspect = uniform(rng, 0.3f64.ln(), (1.0f64 / 0.3).ln()).exp();
        eh = (target * aspect).sqrt().round() as usize;
        ew = (target / aspect).sqrt().round() as usize;
        if (1..=h).contains(&eh) && (1..=w).contains(&ew) {
            break;
        }
    }
    if !((1..=h).contains(&eh) && (1..=w).contains(&ew)) {
        eh = (target.sqrt().round() as usize).clamp(1, h);
        ew = ((target / eh as f64).round() as usize).clamp(1, w);
    }
    let top = rng.random_range(0..=h - eh);
    let left = rng.random_range(0..=w - ew);
    for r in top..top + eh {
        img[r * w + left..r * w + left + ew].fill(0.0);
    }
    (top, left, eh, ew)
}

fn augment_plane(img: &[f64], h: usize, w: usize, policy: &AugmentationPolicy, rng: &mut Rng) -> Vec<f64> {
    let mut out = img.to_vec();
    if policy.enable_erase {
        let area = uniform(rng, policy.erase_area_frac.0, policy.erase_area_frac.1);
        erase(&mut out, h, w, area, rng);
    }
    if policy.enable_constituents {
        if rng.random_bool(0.5) {
            let b = uniform(rng, 1.0 - policy.brightness, 1.0 + policy.brightness);
            let c = uniform(rng, 1.0 - policy.contrast, 1.0 + policy.contrast);
            let _saturation = uniform(rng, 1.0 - policy.saturation, 1.0 + policy.saturation);
            let mean = out.iter().sum::<f64>() / out.len() as f64;
            for v in &mut out {
                *v = ((*v * b) - mean * b) * c + mean * b;
            }
        } else {
            for v in &mut out {
                let z: f64 = StandardNormal.sample(rng);
                *v += policy.gaussian_sigma * z;
            }
        }
    }
    if policy.enable_geometry {
        out = match rng.random_range(0..3) {
            0 => hflip(&out, h, w),
            1 => vflip(&out, h, w),
            _ => rotate(&out, h, w, uniform(rng, policy.rotation_degrees.0, policy.rotation_degrees.1)),
        };
    }
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    out
}

/// One random transform per enabled category, applied to every `(H, W)`
/// plane of `image` (the last two dimensions), then clipped to [0, 1].
pub fn augment(image: &Tensor, policy: &AugmentationPolicy, rng: &mut Rng) -> Result<Tensor> {
    policy.validate()?;
    let shape = image.shape();
    if shape.len() < 2 {
        return Err(Error::Shape(format!("augment needs an image, got shape {shape:?}")));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let mut data = Vec::with_capacity(image.len());
    for plane in image.data().chunks_exact(h * w) {
        data.extend(augment_plane(plane, h, w, policy, rng));
    }
    Tensor::new(shape.to_vec(), data)
}

/// The four training-set recipes of the augmentation ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentedSet {
    All,
    NoErase,
    NoConstituents,
    NoGeometry,
}

impl AugmentedSet {
    pub const ALL: [AugmentedSet; 4] =
        [AugmentedSet::All, AugmentedSet::NoErase, AugmentedSet::NoConstituents, AugmentedSet::NoGeometry];

    pub fn name(self) -> &'static str {
        match self {
            AugmentedSet::All => "all",
            AugmentedSet::NoErase => "no_erase",
            AugmentedSet::NoConstituents => "no_constituents",
            AugmentedSet::NoGeometry => "no_geometry",
        }
    }

    pub fn policy(self, base: &AugmentationPolicy) -> AugmentationPolicy {
        let mut p = base.clone();
        p.enable_erase = self != AugmentedSet::NoErase;
        p.enable_constituents = self != AugmentedSet::NoConstituents;
        p.enable_geometry = self != AugmentedSet::NoGeometry;
        p
    }
}

/// Originals followed by one augmented copy of each sample (`2n` stacks).
///
/// Each sample draws from its own generator seeded from a master seed and
/// its index; the views of a stack get independent parameters.
pub fn build_augmented_set(
    train: &DatasetSplit,
    set: AugmentedSet,
    base: &AugmentationPolicy,
    rng: &mut Rng,
) -> Result<DatasetSplit> {
    let policy = set.policy(base);
    policy.validate()?;
    let master = rng.next_u64();
    let mut samples = train.samples().to_vec();
    for (i, s) in train.samples().iter().enumerate() {
        let mut r = rng_from_seed(derive_seed(master, i as u64));
        let views = s.views().iter().map(|v| augment_plane(v, s.height(), s.width(), &policy, &mut r)).collect();
        samples.push(ViewStack::new(s.height(), s.width(), views, s.label, s.anomaly_type)?);
    }
    DatasetSplit::new(samples, Role::Train, format!("{} ({} augmentation)", train.normal_class_desc, set.name()))
}

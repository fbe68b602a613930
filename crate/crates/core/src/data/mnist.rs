//! Two-perspective digits: each stack holds two different images.

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use super::idx::LabeledImages;
use super::image_ops::resize_bilinear;
use super::{DatasetSplit, Role};
use crate::fusion::{AnomalyType, ViewStack};
use crate::{Error, Result, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MnistConfig {
    pub normal_digit: u8,
    pub n_train_stacks: usize,
    pub n_test: usize,
    /// Fraction of test stacks drawn from the normal digit.
    pub normal_frac: f64,
    pub target_size: usize,
}

impl Default for MnistConfig {
    fn default() -> Self {
        Self { normal_digit: 0, n_train_stacks: 500, n_test: 100, normal_frac: 0.1, target_size: 28 }
    }
}

impl MnistConfig {
    /// Full-resolution setting: 2000 stacks upscaled to 400x400, 400 test stacks.
    pub fn paper(normal_digit: u8) -> Self {
        Self { normal_digit, n_train_stacks: 2000, n_test: 400, normal_frac: 0.1, target_size: 400 }
    }
}

fn view(src: &LabeledImages, i: usize, size: usize) -> Vec<f64> {
    resize_bilinear(&src.images[i], src.rows, src.cols, size, size)
}

/// Builds train and test splits from the two IDX sources.
///
/// Training stacks pair two distinct images of the normal digit, drawn
/// without replacement. Normal test stacks do the same on the test source;
/// anomalous test stacks pair two random images of any other digits.
pub fn synth_multiview_mnist(
    train_src: &LabeledImages,
    test_src: &LabeledImages,
    cfg: &MnistConfig,
    rng: &mut Rng,
) -> Result<(DatasetSplit, DatasetSplit)> {
    if cfg.normal_digit > 9 {
        return Err(Error::Config(format!("normal digit {} is not 0-9", cfg.normal_digit)));
    }
    if !(0.0..=1.0).contains(&cfg.normal_frac) || cfg.target_size == 0 {
        return Err(Error::Config("normal_frac must lie in [0, 1] and target_size be positive".into()));
    }
    let size = cfg.target_size;
    let d = cfg.normal_digit;

    let mut pool = train_src.indices_of(d);
    if pool.len() < 2 * cfg.n_train_stacks {
        return Err(Error::Data(format!(
            "{} training stacks need {} images of digit {d}, only {} available",
            cfg.n_train_stacks,
            2 * cfg.n_train_stacks,
            pool.len()
        )));
    }
    pool.shuffle(rng);
    let train = pool[..2 * cfg.n_train_stacks]
        .chunks_exact(2)
        .map(|p| ViewStack::normal(size, size, vec![view(train_src, p[0], size), view(train_src, p[1], size)]))
        .collect::<Result<Vec<_>>>()?;

    let n_normal = (cfg.n_test as f64 * cfg.normal_frac).round() as usize;
    let n_anom = cfg.n_test - n_normal;
    let mut normals = test_src.indices_of(d);
    if normals.len() < 2 * n_normal {
        return Err(Error::Data(format!(
            "{n_normal} normal test stacks need {} images of digit {d}, only {} available",
            2 * n_normal,
            normals.len()
        )));
    }
    normals.shuffle(rng);
    let others: Vec<usize> = (0..test_src.len()).filter(|&i| test_src.labels[i] != d).collect();
    if others.len() < 2 && n_anom > 0 {
        return Err(Error::Data("no anomalous digits available for the test split".into()));
    }
    let mut test = Vec::with_capacity(cfg.n_test);
    for p in normals[..2 * n_normal].chunks_exact(2) {
        test.push(ViewStack::normal(size, size, vec![view(test_src, p[0], size), view(test_src, p[1], size)])?);
    }
    for _ in 0..n_anom {
        let pair: Vec<usize> = others.choose_multiple(rng, 2).copied().collect();
        let views = vec![view(test_src, pair[0], size), view(test_src, pair[1], size)];
        test.push(ViewStack::new(size, size, views, 1, AnomalyType::Other)?);
    }
    test.shuffle(rng);
    let desc = format!("digit {d}");
    Ok((DatasetSplit::new(train, Role::Train, &desc)?, DatasetSplit::new(test, Role::Test, desc)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    pub(crate) fn fake_digits(per_class: usize, size: usize) -> LabeledImages {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for d in 0..10u8 {
            for k in 0..per_class {
                images.push((0..size * size).map(|p| ((p * (d as usize + 1) + k) % 7) as f64 / 7.0).collect());
                labels.push(d);
            }
        }
        LabeledImages { rows: size, cols: size, images, labels }
    }

    #[test]
    fn desk_shapes_and_labels() {
        let src = fake_digits(30, 8);
        let cfg = MnistConfig { n_train_stacks: 10, n_test: 20, target_size: 12, ..Default::default() };
        let (train, test) = synth_multiview_mnist(&src, &src, &cfg, &mut rng_from_seed(1)).unwrap();
        assert_eq!(train.len(), 10);
        assert!(train.samples().iter().all(|s| s.label == 0 && s.k() == 2 && s.height() == 12));
        assert_eq!(test.len(), 20);
        assert_eq!(test.labels().iter().filter(|&&l| l == 0).count(), 2);
    }

    #[test]
    fn too_many_stacks_is_an_error() {
        let src = fake_digits(5, 4);
        let cfg = MnistConfig { n_train_stacks: 3, ..Default::default() };
        assert!(synth_multiview_mnist(&src, &src, &cfg, &mut rng_from_seed(1)).is_err());
    }

    #[test]
    fn deterministic() {
        let src = fake_digits(30, 8);
        let cfg = MnistConfig { n_train_stacks: 5, n_test: 10, target_size: 8, ..Default::default() };
        let a = synth_multiview_mnist(&src, &src, &cfg, &mut rng_from_seed(9)).unwrap();
        let b = synth_multiview_mnist(&src, &src, &cfg, &mut rng_from_seed(9)).unwrap();
        assert_eq!(a, b);
    }
}

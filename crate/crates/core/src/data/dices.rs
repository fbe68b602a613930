//! Two-perspective dice: manifest loading and export, plus a procedural
//! generator that renders opposite faces of a die with optional surface defects.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image_ops::resize_bilinear;
use super::{DatasetSplit, Role};
use crate::fusion::{AnomalyType, ViewStack};
use crate::{Error, Result, Rng};

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    experiment_id: String,
    view_a_path: String,
    view_b_path: String,
    label: u8,
    anomaly_type: String,
}

fn read_png(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    if !path.exists() {
        return Err(Error::Data(format!("image file {} does not exist", path.display())));
    }
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.pixels().map(|p| p.0[0] as f64 / 255.0).collect()))
}

fn write_png(path: &Path, h: usize, w: usize, pixels: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, bytes)
        .ok_or_else(|| Error::Data(format!("pixel buffer does not match {w}x{h}")))?;
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Reads one manifest. Image paths are relative to the manifest's directory.
/// With `target_size`, every view is resized to a square of that side.
pub fn load_manifest(path: impl AsRef<Path>, role: Role, target_size: Option<usize>) -> Result<DatasetSplit> {
    let path = path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("cannot open manifest {}: {e}", path.display())))?;
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    let mut size: Option<(usize, usize)> = None;
    for row in reader.deserialize() {
        let row: ManifestRow = row?;
        if !seen.insert(row.experiment_id.clone()) {
            return Err(Error::Data(format!("duplicate experiment id `{}`", row.experiment_id)));
        }
        let anomaly_type = AnomalyType::parse(&row.anomaly_type)?;
        if role == Role::Train && row.label != 0 {
            return Err(Error::OneClass(format!(
                "training manifest row `{}` is labelled anomalous",
                row.experiment_id
            )));
        }
        let mut views = Vec::with_capacity(2);
        let mut dims = (0, 0);
        for rel in [&row.view_a_path, &row.view_b_path] {
            let (h, w, px) = read_png(&base.join(rel))?;
            let (h, w, px) = match target_size {
                Some(t) => (t, t, resize_bilinear(&px, h, w, t, t)),
                None => (h, w, px),
            };
            if !views.is_empty() && dims != (h, w) {
                return Err(Error::Data(format!("views of `{}` differ in size", row.experiment_id)));
            }
            dims = (h, w);
            views.push(px);
        }
        if *size.get_or_insert(dims) != dims {
            return Err(Error::Data(format!("experiment `{}` differs in size from earlier rows", row.experiment_id)));
        }
        samples.push(ViewStack::new(dims.0, dims.1, views, row.label, anomaly_type).map_err(|e| {
            Error::Data(format!("experiment `{}`: {e}", row.experiment_id))
        })?);
    }
    DatasetSplit::new(samples, role, "good dice")
}

/// Loads `train.csv` and `test.csv` from `dir`.
pub fn load_dices(dir: impl AsRef<Path>, target_size: Option<usize>) -> Result<(DatasetSplit, DatasetSplit)> {
    let dir = dir.as_ref();
    Ok((
        load_manifest(dir.join("train.csv"), Role::Train, target_size)?,
        load_manifest(dir.join("test.csv"), Role::Test, target_size)?,
    ))
}

/// Writes both splits as PNG files plus `train.csv` / `test.csv` manifests.
pub fn export_dices(dir: impl AsRef<Path>, train: &DatasetSplit, test: &DatasetSplit) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("images"))?;
    for (name, split) in [("train", train), ("test", test)] {
        let mut writer = csv::Writer::from_path(dir.join(format!("{name}.csv")))?;
        for (i, s) in split.samples().iter().enumerate() {
            if s.k() != 2 {
                return Err(Error::Data(format!("manifest export needs two views, sample {i} has {}", s.k())));
            }
            let id = format!("{name}{i:05}");
            let rel: Vec<PathBuf> = ["a", "b"].iter().map(|v| PathBuf::from("images").join(format!("{id}_{v}.png"))).collect();
            for (v, r) in rel.iter().enumerate() {
                write_png(&dir.join(r), s.height(), s.width(), s.view(v))?;
            }
            writer.serialize(ManifestRow {
                experiment_id: id,
                view_a_path: rel[0].to_string_lossy().into_owned(),
                view_b_path: rel[1].to_string_lossy().into_owned(),
                label: s.label,
                anomaly_type: s.anomaly_type.name().into(),
            })?;
        }
        writer.flush()?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DicesConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub n_test_anomalous: usize,
    /// Proportions of drilling, missing dots, sawing and scratching.
    pub anomaly_mix: [f64; 4],
    pub image_size: usize,
    pub sensor_noise: f64,
}

impl Default for DicesConfig {
    fn default() -> Self {
        Self {
            n_train: 500,
            n_test: 133,
            n_test_anomalous: 60,
            anomaly_mix: [0.17, 0.33, 0.17, 0.33],
            image_size: 28,
            sensor_noise: 0.02,
        }
    }
}

/// Splits `n` into integer counts proportional to `mix` by the largest-remainder rule.
pub fn largest_remainder(n: usize, mix: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = mix.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..mix.len()).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())));
    let short = n.saturating_sub(counts.iter().sum());
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// A rendered stack with per-view masks of the pixels changed by a defect.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDice {
    pub sample: ViewStack,
    pub defect_masks: Vec<Vec<bool>>,
}

const DOT_OFFSET: f64 = 0.27;
const DOT_RADIUS: f64 = 0.09;

fn pips(face: u8) -> Vec<(f64, f64)> {
    let q = DOT_OFFSET;
    let corners = [(-q, -q), (q, q), (-q, q), (q, -q)];
    match face {
        1 => vec![(0.0, 0.0)],
        2 => corners[..2].to_vec(),
        3 => vec![corners[0], (0.0, 0.0), corners[1]],
        4 => corners.to_vec(),
        5 => corners.iter().copied().chain([(0.0, 0.0)]).collect(),
        _ => corners.iter().copied().chain([(0.0, -q), (0.0, q)]).collect(),
    }
}

/// Pose and shading of one view.
#[derive(Debug, Clone)]
struct Pose {
    cy: f64,
    cx: f64,
    side: f64,
    angle: f64,
    face_level: f64,
    background: f64,
}

#[derive(Debug, Clone)]
enum Defect {
    Disc { u: f64, v: f64, r: f64 },
    Missing(usize),
    Line { a: (f64, f64), b: (f64, f64), half_width: f64, level: Option<f64> },
}

fn seg_dist(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

/// Intensity at face coordinates `(u, v)` (face spans [-0.5, 0.5]^2).
fn shade(u: f64, v: f64, face: u8, pose: &Pose, defect: Option<&Defect>) -> f64 {
    let inside = u.abs() <= 0.5 && v.abs() <= 0.5;
    let mut level = if inside { pose.face_level } else { pose.background };
    if inside {
        for (i, &(pu, pv)) in pips(face).iter().enumerate() {
            if matches!(defect, Some(Defect::Missing(m)) if *m == i) {
                continue;
            }
            if (u - pu).hypot(v - pv) <= DOT_RADIUS {
                level = 0.12;
            }
        }
    }
    match defect {
        Some(Defect::Disc { u: du, v: dv, r }) if inside && (u - du).hypot(v - dv) <= *r => level = 0.02,
        Some(Defect::Line { a, b, half_width, level: l }) if seg_dist((u, v), *a, *b) <= *half_width => {
            match l {
                Some(l) if inside => level = level.min(*l),
                Some(_) => {}
                None => level = 0.0,
            }
        }
        _ => {}
    }
    level
}

fn render(size: usize, face: u8, pose: &Pose, defect: Option<&Defect>) -> Vec<f64> {
    const SS: usize = 3;
    let (s, c) = pose.angle.sin_cos();
    let mut out = Vec::with_capacity(size * size);
    for r in 0..size {
        for col in 0..size {
            let mut acc = 0.0;
            for sy in 0..SS {
                for sx in 0..SS {
                    let y = r as f64 + (sy as f64 + 0.5) / SS as f64 - pose.cy;
                    let x = col as f64 + (sx as f64 + 0.5) / SS as f64 - pose.cx;
                    let u = (c * x + s * y) / pose.side;
                    let v = (-s * x + c * y) / pose.side;
                    acc += shade(u, v, face, pose, defect);
                }
            }
            out.push(acc / (SS * SS) as f64);
        }
    }
    out
}

fn random_pose(size: usize, rng: &mut Rng) -> Pose {
    let n = size as f64;
    Pose {
        cy: n / 2.0 + rng.random_range(-0.02..0.02) * n,
        cx: n / 2.0 + rng.random_range(-0.02..0.02) * n,
        side: n * rng.random_range(0.70..0.76),
        angle: rng.random_range(-6f64..6.0).to_radians(),
        face_level: rng.random_range(0.75..0.85),
        background: rng.random_range(0.04..0.08),
    }
}

fn random_defect(kind: AnomalyType, face: u8, pose: &Pose, rng: &mut Rng) -> Defect {
    match kind {
        AnomalyType::Drilling => {
            let r = 0.11;
            loop {
                let (u, v) = (rng.random_range(-0.38..0.38), rng.random_range(-0.38..0.38));
                let clear = pips(face).iter().all(|&(pu, pv)| (u - pu).hypot(v - pv) > DOT_RADIUS + r + 0.02);
                if clear {
                    return Defect::Disc { u, v, r };
                }
            }
        }
        AnomalyType::MissingDots => Defect::Missing(rng.random_range(0..pips(face).len())),
        AnomalyType::Sawing => {
            let along = rng.random_range(-0.35..0.35);
            let depth = rng.random_range(0.3..0.45);
            let (a, b) = match rng.random_range(0..4) {
                0 => ((-0.6, along), (-0.5 + depth, along)),
                1 => ((0.6, along), (0.5 - depth, along)),
                2 => ((along, -0.6), (along, -0.5 + depth)),
                _ => ((along, 0.6), (along, 0.5 - depth)),
            };
            Defect::Line { a, b, half_width: 0.05, level: None }
        }
        _ => {
            let t = rng.random_range(0.0..std::f64::consts::PI);
            let len = rng.random_range(0.4..0.7);
            let (cu, cv) = (rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));
            let (du, dv) = (t.cos() * len / 2.0, t.sin() * len / 2.0);
            Defect::Line {
                a: (cu - du, cv - dv),
                b: (cu + du, cv + dv),
                half_width: 0.035,
                level: Some(pose.face_level - 0.45),
            }
        }
    }
}

/// Renders opposite faces `f` and `7 - f`; a defect, if any, lands in exactly one view.
pub fn render_stack(size: usize, defect: Option<AnomalyType>, sensor_noise: f64, rng: &mut Rng) -> Result<SynthDice> {
    if size < 8 {
        return Err(Error::Config(format!("image size {size} too small to render a die")));
    }
    let face_a: u8 = rng.random_range(1..=6);
    let faces = [face_a, 7 - face_a];
    let defect = defect.filter(|d| *d != AnomalyType::None);
    let defect_view = rng.random_range(0..2);
    let noise = Normal::new(0.0, sensor_noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut views = Vec::with_capacity(2);
    let mut masks = Vec::with_capacity(2);
    for (v, &face) in faces.iter().enumerate() {
        let pose = random_pose(size, rng);
        let clean = render(size, face, &pose, None);
        let (img, mask) = match defect {
            Some(kind) if v == defect_view => {
                let d = random_defect(kind, face, &pose, rng);
                let img = render(size, face, &pose, Some(&d));
                let mask = img.iter().zip(&clean).map(|(a, b)| (a - b).abs() > 1e-12).collect();
                (img, mask)
            }
            _ => (clean, vec![false; size * size]),
        };
        let img = img.into_iter().map(|p| (p + noise.sample(rng)).clamp(0.0, 1.0)).collect();
        views.push(img);
        masks.push(mask);
    }
    let (label, tag) = match defect {
        Some(kind) => (1, kind),
        None => (0, AnomalyType::None),
    };
    Ok(SynthDice { sample: ViewStack::new(size, size, views, label, tag)?, defect_masks: masks })
}

/// Procedural stand-in for the physical dice dataset.
pub fn synth_dices(cfg: &DicesConfig, rng: &mut Rng) -> Result<(DatasetSplit, DatasetSplit)> {
    let total: f64 = cfg.anomaly_mix.iter().sum();
    if (total - 1.0).abs() > 1e-6 || cfg.anomaly_mix.iter().any(|p| *p < 0.0) {
        return Err(Error::Config(format!("anomaly mix {:?} must be non-negative and sum to 1", cfg.anomaly_mix)));
    }
    if cfg.n_test_anomalous > cfg.n_test {
        return Err(Error::Config("more anomalous test stacks than test stacks".into()));
    }
    let train = (0..cfg.n_train)
        .map(|_| Ok(render_stack(cfg.image_size, None, cfg.sensor_noise, rng)?.sample))
        .collect::<Result<Vec<_>>>()?;
    let counts = largest_remainder(cfg.n_test_anomalous, &cfg.anomaly_mix);
    let mut kinds: Vec<Option<AnomalyType>> = vec![None; cfg.n_test - cfg.n_test_anomalous];
    for (kind, &n) in AnomalyType::DEFECTS.iter().zip(&counts) {
        kinds.extend(std::iter::repeat_n(Some(*kind), n));
    }
    kinds.shuffle(rng);
    let test = kinds
        .into_iter()
        .map(|k| Ok(render_stack(cfg.image_size, k, cfg.sensor_noise, rng)?.sample))
        .collect::<Result<Vec<_>>>()?;
    Ok((DatasetSplit::new(train, Role::Train, "good dice")?, DatasetSplit::new(test, Role::Test, "good dice")?))
}

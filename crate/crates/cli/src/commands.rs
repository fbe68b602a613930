//! Subcommand implementations. Each writes its artifacts and a
//! `run_manifest.json` under the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mvsvdd::baselines::{run_baseline, BaselineMethod};
use mvsvdd::data::{build_augmented_set, export_dices, load_dices, load_idx, synth_dices, synth_multiview_mnist, DatasetSplit};
use mvsvdd::eval::{evaluate, multi_seed_report, report_csv, report_table, AggregateReport, EvalReport};
use mvsvdd::fusion::{pretrain, score_samples, strategy_spec, train_from_pretrained, TrainedPipeline};
use mvsvdd::hpo::{selection_objective, successive_halving, Config, HalvingSettings};
use mvsvdd::svdd::SvddModel;
use mvsvdd::{derive_seed, rng_from_seed, Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::checkpoint::{Checkpoint, Provenance};
use crate::config::{DatasetSpec, ExperimentConfig};
use crate::presets::{preset, RowKind, Scale};

/// Train and test splits plus a content fingerprint.
#[derive(Debug, Clone)]
pub struct Data {
    pub train: DatasetSplit,
    pub test: DatasetSplit,
    pub fingerprint: String,
}

impl Data {
    pub fn views(&self) -> usize {
        self.train.samples().first().map_or(0, |s| s.k())
    }
}

fn fingerprint(splits: &[&DatasetSplit]) -> String {
    let mut h = Sha256::new();
    for split in splits {
        h.update((split.len() as u64).to_le_bytes());
        for s in split.samples() {
            h.update([s.label]);
            for v in s.views() {
                h.update((v.len() as u64).to_le_bytes());
                for p in v {
                    h.update(p.to_le_bytes());
                }
            }
        }
    }
    hex::encode(h.finalize())
}

fn select_views(split: DatasetSplit, order: &[usize]) -> Result<DatasetSplit> {
    let (role, desc) = (split.role, split.normal_class_desc.clone());
    let samples = split.samples().iter().map(|s| s.select(order)).collect::<Result<Vec<_>>>()?;
    DatasetSplit::new(samples, role, desc)
}

/// Builds or loads the dataset, then applies view selection and augmentation.
pub fn load_data(cfg: &ExperimentConfig) -> Result<Data> {
    let mut rng = rng_from_seed(cfg.data_seed());
    let (mut train, mut test) = match &cfg.dataset {
        DatasetSpec::Idx { dir, mnist } => {
            let train_src = load_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))
                .map_err(|e| e.context(&format!("IDX training files in {}", dir.display())))?;
            let test_src = load_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))
                .map_err(|e| e.context(&format!("IDX test files in {}", dir.display())))?;
            synth_multiview_mnist(&train_src, &test_src, mnist, &mut rng)?
        }
        DatasetSpec::DicesManifest { dir, target_size } => load_dices(dir, *target_size)?,
        DatasetSpec::SynthDices { dices } => synth_dices(dices, &mut rng)?,
    };
    if let Some(order) = &cfg.views {
        train = select_views(train, order)?;
        test = select_views(test, order)?;
    }
    if let Some(aug) = &cfg.augmentation {
        let mut r = rng_from_seed(derive_seed(cfg.data_seed(), 1));
        train = build_augmented_set(&train, aug.set, &aug.policy, &mut r)?;
    }
    let fingerprint = fingerprint(&[&train, &test]);
    Ok(Data { train, test, fingerprint })
}

/// Timings and artifacts of one command.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub timings_s: BTreeMap<String, f64>,
    pub artifacts: Vec<String>,
}

pub struct Recorder {
    out: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl Recorder {
    pub fn new(command: &str, cfg: &ExperimentConfig, out: &Path) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| Error::Data(format!("cannot create {}: {e}", out.display())))?;
        let versions = BTreeMap::from([
            ("mvsvdd".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("format".to_string(), crate::checkpoint::FORMAT_VERSION.to_string()),
        ]);
        Ok(Self {
            out: out.to_path_buf(),
            manifest: RunManifest {
                command: command.into(),
                config_hash: cfg.hash(),
                seed: cfg.seed,
                versions,
                timings_s: BTreeMap::new(),
                artifacts: Vec::new(),
            },
            started: Instant::now(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let r = f(self);
        *self.manifest.timings_s.entry(stage.to_string()).or_default() += t.elapsed().as_secs_f64();
        r
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
        self.manifest.artifacts.push(name.to_string());
        Ok(path)
    }

    pub fn checkpoint(&mut self, name: &str, ck: &Checkpoint) -> Result<PathBuf> {
        self.write(name, ck.to_bytes())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.manifest.timings_s.insert("total".into(), self.started.elapsed().as_secs_f64());
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serialises");
        let path = self.out.join("run_manifest.json");
        fs::write(&path, json)?;
        Ok(path)
    }
}

fn provenance(cfg: &ExperimentConfig, data: &Data, seed: u64) -> Provenance {
    Provenance { seed, dataset_fingerprint: data.fingerprint.clone(), config_hash: cfg.hash() }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serialisable") + "\n"
}

fn write_report(rec: &mut Recorder, rows: &[(String, AggregateReport)]) -> Result<()> {
    rec.write("report.csv", report_csv(rows))?;
    rec.write("report.txt", report_table(rows))?;
    Ok(())
}

/// Trains one seed end to end; weights are rounded to `f32` before scoring
/// so that a saved checkpoint reproduces the reported scores exactly.
pub fn train_one(cfg: &ExperimentConfig, data: &Data, seed: u64) -> Result<TrainedPipeline> {
    let mut rng = rng_from_seed(seed);
    let pipeline = cfg.pipeline();
    let pre = pretrain(cfg.strategy, data.train.samples(), &cfg.net, &cfg.pretrain, &mut rng)?;
    let mut out = train_from_pretrained(&pipeline, pre, data.train.samples(), &mut rng)?;
    out.model.snap_to_f32();
    Ok(out)
}

fn eval_model(model: &SvddModel, data: &Data, seed: u64) -> Result<(EvalReport, Vec<f64>)> {
    let scores = score_samples(model, data.test.samples())?;
    let numeric = scores.iter().all(|s| s.is_finite());
    if !numeric {
        return Err(Error::Numerical("non-finite anomaly score".into()));
    }
    Ok((evaluate(&scores, &data.test.labels(), seed)?, scores))
}

fn scores_csv(data: &Data, scores: &[f64]) -> String {
    let mut out = String::from("index,label,anomaly_type,score\n");
    for (i, (s, score)) in data.test.samples().iter().zip(scores).enumerate() {
        out += &format!("{i},{},{},{score:.17e}\n", s.label, s.anomaly_type.name());
    }
    out
}

/// Deep runs over every configured seed. The best seed's model is saved.
fn deep_rows(rec: &mut Recorder, cfg: &ExperimentConfig, data: &Data, label: &str, prefix: &str) -> Result<AggregateReport> {
    let mut best: Option<(f64, u64, SvddModel)> = None;
    let agg = multi_seed_report(&cfg.run_seeds(), |seed| {
        let out = rec.time("train", |_| train_one(cfg, data, seed))?;
        let (report, _) = rec.time("eval", |_| eval_model(&out.model, data, seed))?;
        if best.as_ref().is_none_or(|(auc, _, _)| report.roc_auc > *auc) {
            best = Some((report.roc_auc, seed, out.model));
        }
        Ok(report)
    })
    .map_err(|e| e.context(label))?;
    if let Some((_, seed, model)) = best {
        rec.checkpoint(&format!("{prefix}model.ckpt"), &Checkpoint::from_model(&model, &provenance(cfg, data, seed)))?;
    }
    Ok(agg)
}

fn baseline_label(m: BaselineMethod) -> &'static str {
    match m {
        BaselineMethod::OcSvm => "PCA + OC-SVM",
        BaselineMethod::Kde => "PCA + KDE",
        BaselineMethod::IForest => "PCA + IF",
    }
}

fn baseline_report(cfg: &ExperimentConfig, data: &Data, method: BaselineMethod) -> Result<AggregateReport> {
    multi_seed_report(&cfg.run_seeds(), |seed| {
        let r = run_baseline(method, &data.train, &data.test, cfg.baselines.selection, &mut rng_from_seed(seed))?;
        let shifted: Vec<f64> = r.test_scores.iter().map(|s| s - r.threshold).collect();
        evaluate(&shifted, &data.test.labels(), seed)
    })
}

/// Writes the dataset as PNG views plus `train.csv` / `test.csv`.
pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let mut rec = Recorder::new("synth", cfg, out)?;
    let data = rec.time("data", |_| load_data(cfg))?;
    let dir = rec.path("dataset");
    rec.time("export", |_| export_dices(&dir, &data.train, &data.test))?;
    rec.write("dataset_fingerprint.txt", format!("{}\n", data.fingerprint))?;
    rec.finish()
}

/// Reconstruction pretraining on the first run seed.
pub fn cmd_pretrain(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let mut rec = Recorder::new("pretrain", cfg, out)?;
    let data = rec.time("data", |_| load_data(cfg))?;
    let seed = cfg.run_seeds()[0];
    let mut rng = rng_from_seed(seed);
    let mut pre = rec.time("pretrain", |_| pretrain(cfg.strategy, data.train.samples(), &cfg.net, &cfg.pretrain, &mut rng))?;
    pre.encoder.snap_to_f32();
    pre.decoders.iter_mut().for_each(|d| d.snap_to_f32());
    rec.write("pretrain_loss.json", to_json(&pre.loss_history))?;
    rec.checkpoint("pretrained.ckpt", &Checkpoint::from_pretrained(&pre, data.views(), &provenance(cfg, &data, seed)))?;
    rec.finish()
}

/// Hypersphere training on the first run seed, optionally from saved pretrained weights.
pub fn cmd_train(cfg: &ExperimentConfig, pretrained: Option<&Path>, out: &Path) -> Result<PathBuf> {
    let mut rec = Recorder::new("train", cfg, out)?;
    let data = rec.time("data", |_| load_data(cfg))?;
    let seed = cfg.run_seeds()[0];
    let out_model = match pretrained {
        None => rec.time("train", |_| train_one(cfg, &data, seed))?,
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let pre = ck.to_pretrained()?;
            let want = strategy_spec(cfg.strategy, &cfg.net, data.views());
            if pre.spec != want {
                return Err(Error::Config(format!(
                    "pretrained network {:?} (latent {}) does not match the configured {:?} (latent {})",
                    pre.spec.input_shape, pre.spec.latent_dim, want.input_shape, want.latent_dim
                )));
            }
            let mut rng = rng_from_seed(derive_seed(seed, 1));
            let mut t = rec.time("train", |_| train_from_pretrained(&cfg.pipeline(), pre, data.train.samples(), &mut rng))?;
            t.model.snap_to_f32();
            t
        }
    };
    rec.write("svdd_log.json", to_json(&out_model.svdd_log))?;
    rec.checkpoint("model.ckpt", &Checkpoint::from_model(&out_model.model, &provenance(cfg, &data, seed)))?;
    rec.finish()
}

/// Checks that a stored model fits the configured evaluation.
pub fn check_compatible(model: &SvddModel, cfg: &ExperimentConfig, views: usize) -> Result<()> {
    if model.fusion.strategy != cfg.strategy {
        return Err(Error::Config(format!(
            "checkpoint uses {} fusion, config asks for {}",
            model.fusion.strategy.name(),
            cfg.strategy.name()
        )));
    }
    let want = strategy_spec(cfg.strategy, &cfg.net, views);
    if model.spec.latent_dim != want.latent_dim {
        return Err(Error::Config(format!(
            "checkpoint latent dimension {} disagrees with the configured {}",
            model.spec.latent_dim, want.latent_dim
        )));
    }
    if model.spec != want {
        return Err(Error::Config(format!(
            "checkpoint network (input {:?}, channels {:?}) disagrees with the configured one (input {:?}, channels {:?})",
            model.spec.input_shape, model.spec.conv_channels, want.input_shape, want.conv_channels
        )));
    }
    Ok(())
}

/// Scores the test split with a saved model.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<PathBuf> {
    let mut rec = Recorder::new("eval", cfg, out)?;
    let ck = Checkpoint::load(checkpoint)?;
    let model = ck.to_model()?;
    let data = rec.time("data", |_| load_data(cfg))?;
    check_compatible(&model, cfg, data.views())?;
    let (report, scores) = rec.time("eval", |_| eval_model(&model, &data, ck.manifest.seed))?;
    rec.write("eval.json", to_json(&report))?;
    rec.write("scores.csv", scores_csv(&data, &scores))?;
    let agg = AggregateReport::from_runs(vec![report])?;
    write_report(&mut rec, &[(cfg.strategy.name().to_string(), agg)])?;
    rec.finish()
}

/// Shallow baselines on flattened stacks.
pub fn cmd_baseline(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let mut rec = Recorder::new("baseline", cfg, out)?;
    let data = rec.time("data", |_| load_data(cfg))?;
    let mut rows = Vec::new();
    for &m in &cfg.baselines.methods {
        let agg = rec.time(m.name(), |_| baseline_report(cfg, &data, m))?;
        rows.push((baseline_label(m).to_string(), agg));
    }
    write_report(&mut rec, &rows)?;
    rec.finish()
}

/// Search dimensions understood by [`apply_trial`].
pub const TRIAL_KEYS: [&str; 10] = [
    "lr",
    "batch_size",
    "weight_decay",
    "nu",
    "latent_dim",
    "pretrain_lr",
    "pretrain_batch_size",
    "pretrain_weight_decay",
    "pretrain_epochs",
    "noise_sigma",
];

/// Applies one sampled configuration to a copy of `cfg`; the budget is the
/// number of hypersphere epochs.
pub fn apply_trial(cfg: &ExperimentConfig, trial: &Config, budget: usize) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    let int = |v: f64| v.round().max(1.0) as usize;
    for (k, &v) in trial {
        match k.as_str() {
            "lr" => c.svdd.lr = v,
            "batch_size" => c.svdd.batch_size = int(v),
            "weight_decay" => c.svdd.weight_decay = v,
            "nu" => c.svdd.nu = v,
            "latent_dim" => c.net.latent_dim = int(v),
            "pretrain_lr" => c.pretrain.lr = v,
            "pretrain_batch_size" => c.pretrain.batch_size = int(v),
            "pretrain_weight_decay" => c.pretrain.weight_decay = v,
            "pretrain_epochs" => c.pretrain.epochs = int(v),
            "noise_sigma" => c.pretrain.noise_sigma = v,
            other => return Err(Error::Config(format!("search dimension `{other}` does not map to a hyperparameter"))),
        }
    }
    c.svdd.epochs = budget;
    c.svdd.warmup_epochs = c.svdd.warmup_epochs.min(budget);
    c.validate()?;
    Ok(c)
}

/// Successive-halving search, then the winner re-run on every seed.
pub fn cmd_hpo(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let mut rec = Recorder::new("hpo", cfg, out)?;
    let data = rec.time("data", |_| load_data(cfg))?;
    let trial_seed = cfg.run_seeds()[0];
    let settings = HalvingSettings { seed: trial_seed, ..cfg.hpo.halving.clone() };
    if let Some(k) = cfg.hpo.space.dims.keys().find(|k| !TRIAL_KEYS.contains(&k.as_str())) {
        return Err(Error::Config(format!("search dimension `{k}` does not map to a hyperparameter ({})", TRIAL_KEYS.join(", "))));
    }
    let mut sampler = rng_from_seed(derive_seed(cfg.seed, u64::MAX));
    let result = rec.time("search", |_| {
        successive_halving(&cfg.hpo.space, &settings, &mut sampler, |trial, budget, seed| {
            let c = apply_trial(cfg, trial, budget)?;
            let t = train_one(&c, &data, seed)?;
            let (report, _) = eval_model(&t.model, &data, seed)?;
            Ok(selection_objective(&report, cfg.hpo.imbalanced))
        })
    })?;
    let mut log = Vec::new();
    result.write_jsonl(&mut log)?;
    rec.write("trials.jsonl", log)?;
    let best_cfg = apply_trial(cfg, &result.best.config, settings.max_budget)?;
    rec.write("best_config.json", best_cfg.to_json() + "\n")?;
    let agg = deep_rows(&mut rec, &best_cfg, &data, "best configuration", "best_")?;
    write_report(&mut rec, &[(format!("{} (tuned)", cfg.strategy.name()), agg)])?;
    rec.finish()
}

/// Runs every row of a named preset and writes a table-shaped report.
pub fn cmd_repro(name: &str, scale: Scale, data_dir: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<PathBuf> {
    let p = preset(name, scale, data_dir)?;
    let mut rows_cfg: Vec<_> = p.rows;
    if let Some(s) = seed {
        rows_cfg.iter_mut().for_each(|r| r.config.seed = s);
    }
    let head = &rows_cfg[0].config;
    let mut rec = Recorder::new(&format!("repro {name}"), head, out)?;
    let mut rows = Vec::new();
    for (i, row) in rows_cfg.iter().enumerate() {
        rec.write(&format!("config_{i}.json"), row.config.to_json() + "\n")?;
        let data = rec.time("data", |_| load_data(&row.config))?;
        let agg = match row.kind {
            RowKind::Deep => deep_rows(&mut rec, &row.config, &data, &row.label, &format!("row{i}_"))?,
            RowKind::Baseline(m) => rec.time(m.name(), |_| baseline_report(&row.config, &data, m))?,
        };
        log::info!("{name}: {} mean AUC {:.4}", row.label, agg.mean_auc);
        rows.push((row.label.clone(), agg));
    }
    write_report(&mut rec, &rows)?;
    rec.finish()
}

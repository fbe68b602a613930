//! Successive-halving search over randomly sampled configurations.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::eval::{multi_seed_report, AggregateReport, EvalReport};
use crate::{Error, Result, Rng};

/// One searchable hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dim {
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    IntRange { lo: i64, hi: i64 },
    Choice { values: Vec<f64> },
}

impl Dim {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            Dim::Uniform { lo, hi } => lo <= hi,
            Dim::LogUniform { lo, hi } => *lo > 0.0 && lo <= hi,
            Dim::IntRange { lo, hi } => lo <= hi,
            Dim::Choice { values } => !values.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("search dimension `{name}` has an empty or invalid range")))
        }
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        match self {
            Dim::Uniform { lo, hi } if hi > lo => rng.random_range(*lo..*hi),
            Dim::LogUniform { lo, hi } if hi > lo => rng.random_range(lo.ln()..hi.ln()).exp(),
            Dim::Uniform { lo, .. } | Dim::LogUniform { lo, .. } => *lo,
            Dim::IntRange { lo, hi } => rng.random_range(*lo..=*hi) as f64,
            Dim::Choice { values } => values[rng.random_range(0..values.len())],
        }
    }
}

/// Named dimensions, sampled in name order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dims: BTreeMap<String, Dim>,
}

impl SearchSpace {
    pub fn with(mut self, name: &str, dim: Dim) -> Self {
        self.dims.insert(name.to_string(), dim);
        self
    }

    /// Learning rate, batch size, weight decay, latent size and nu.
    pub fn deep_svdd_default() -> Self {
        SearchSpace::default()
            .with("lr", Dim::LogUniform { lo: 1e-5, hi: 1e-2 })
            .with("batch_size", Dim::Choice { values: vec![16.0, 32.0, 64.0, 128.0] })
            .with("weight_decay", Dim::LogUniform { lo: 1e-7, hi: 1e-3 })
            .with("latent_dim", Dim::Choice { values: vec![16.0, 32.0, 64.0] })
            .with("nu", Dim::Choice { values: vec![0.05, 0.1, 0.2, 0.4] })
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.iter().try_for_each(|(n, d)| d.validate(n))
    }
}

pub type Config = BTreeMap<String, f64>;

/// Independent draw per dimension.
pub fn sample_config(space: &SearchSpace, rng: &mut Rng) -> Config {
    space.dims.iter().map(|(n, d)| (n.clone(), d.sample(rng))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: usize,
    pub config: Config,
    pub budget: usize,
    pub objective: Option<f64>,
    pub seed: u64,
    pub wall_time: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HalvingSettings {
    pub n_configs: usize,
    pub min_budget: usize,
    pub max_budget: usize,
    pub eta: usize,
    pub seed: u64,
}

impl Default for HalvingSettings {
    fn default() -> Self {
        Self { n_configs: 9, min_budget: 10, max_budget: 90, eta: 3, seed: 0 }
    }
}

/// `min, min*eta, ...` with the last rung clamped to `max`.
pub fn rung_budgets(min_budget: usize, max_budget: usize, eta: usize) -> Result<Vec<usize>> {
    if min_budget == 0 || min_budget >= max_budget || eta < 2 {
        return Err(Error::Config(format!(
            "need 0 < min_budget < max_budget and eta >= 2 (got {min_budget}, {max_budget}, {eta})"
        )));
    }
    let mut rungs = Vec::new();
    let mut b = min_budget;
    while b < max_budget {
        rungs.push(b);
        b *= eta;
    }
    rungs.push(max_budget);
    Ok(rungs)
}

/// Result of a search: every trial in execution order plus the winner.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchResult {
    pub trials: Vec<Trial>,
    pub best: Trial,
}

impl SearchResult {
    /// One JSON object per line.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for t in &self.trials {
            serde_json::to_writer(&mut out, t).map_err(|e| Error::Data(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// One bracket: `n_configs` random configurations start at the minimum
/// budget, the best `ceil(n / eta)` advance each rung. Failed trials are
/// logged and dropped. Returns the highest-objective trial of the final rung.
pub fn successive_halving<F>(
    space: &SearchSpace,
    settings: &HalvingSettings,
    rng: &mut Rng,
    mut objective: F,
) -> Result<SearchResult>
where
    F: FnMut(&Config, usize, u64) -> Result<f64>,
{
    space.validate()?;
    if settings.n_configs == 0 {
        return Err(Error::Config("n_configs must be positive".into()));
    }
    let rungs = rung_budgets(settings.min_budget, settings.max_budget, settings.eta)?;
    let mut alive: Vec<Config> = (0..settings.n_configs).map(|_| sample_config(space, rng)).collect();
    let mut trials: Vec<Trial> = Vec::new();
    let mut last_rung: Vec<Trial> = Vec::new();
    for (r, &budget) in rungs.iter().enumerate() {
        let mut rung: Vec<Trial> = Vec::with_capacity(alive.len());
        for config in &alive {
            let start = Instant::now();
            let outcome = objective(config, budget, settings.seed);
            let (objective, error) = match outcome {
                Ok(v) if v.is_finite() => (Some(v), None),
                Ok(v) => (None, Some(format!("non-finite objective {v}"))),
                Err(e) => (None, Some(e.to_string())),
            };
            if let Some(e) = &error {
                log::warn!("trial {} at budget {budget} failed: {e}", trials.len());
            }
            let trial = Trial {
                id: trials.len(),
                config: config.clone(),
                budget,
                objective,
                seed: settings.seed,
                wall_time: start.elapsed().as_secs_f64(),
                error,
            };
            trials.push(trial.clone());
            rung.push(trial);
        }
        let mut ok: Vec<Trial> = rung.into_iter().filter(|t| t.objective.is_some()).collect();
        if ok.is_empty() {
            return Err(Error::Numerical(format!("every trial failed at budget {budget}")));
        }
        ok.sort_by(|a, b| b.objective.unwrap().total_cmp(&a.objective.unwrap()).then(a.id.cmp(&b.id)));
        if r + 1 < rungs.len() {
            let keep = ok.len().div_ceil(settings.eta);
            alive = ok[..keep].iter().map(|t| t.config.clone()).collect();
        }
        last_rung = ok;
    }
    let best = last_rung.into_iter().next().expect("non-empty final rung");
    Ok(SearchResult { trials, best })
}

/// `0.5 (AUC + macro-F1)` for imbalanced test sets, plain AUC otherwise.
pub fn selection_objective(report: &EvalReport, imbalanced: bool) -> f64 {
    if imbalanced {
        0.5 * (report.roc_auc + report.f1_macro)
    } else {
        report.roc_auc
    }
}

/// Re-runs the winning configuration at full budget on every seed.
pub fn finalize<F>(seeds: &[u64], run: F) -> Result<AggregateReport>
where
    F: FnMut(u64) -> Result<EvalReport>,
{
    multi_seed_report(seeds, run)
}

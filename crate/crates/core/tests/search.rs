use mvsvdd::eval::{evaluate, EvalReport};
use mvsvdd::hpo::{finalize, successive_halving, Dim, HalvingSettings, SearchSpace};
use mvsvdd::{rng_from_seed, Error};

#[test]
fn synthetic_landscape_winner_is_in_the_top_decile() {
    let target = 3e-4f64;
    let space = SearchSpace::default().with("lr", Dim::LogUniform { lo: 1e-6, hi: 1e-2 });
    let settings = HalvingSettings { n_configs: 30, min_budget: 1, max_budget: 9, eta: 3, seed: 0 };
    let r = successive_halving(&space, &settings, &mut rng_from_seed(17), |c, _, _| Ok(-(c["lr"] - target).powi(2)))
        .unwrap();
    let mut dists: Vec<f64> = r.trials.iter().filter(|t| t.budget == 1).map(|t| (t.config["lr"] - target).abs()).collect();
    assert_eq!(dists.len(), 30);
    dists.sort_by(f64::total_cmp);
    let best = (r.best.config["lr"] - target).abs();
    assert!(best <= dists[2], "{best} vs decile {}", dists[2]);
    assert_eq!(r.best.budget, 9);
}

#[test]
fn identical_configs_tie() {
    let space = SearchSpace::default().with("lr", Dim::Choice { values: vec![1e-3] });
    let r = successive_halving(&space, &HalvingSettings::default(), &mut rng_from_seed(0), |_, _, _| Ok(0.5)).unwrap();
    assert_eq!(r.best.objective, Some(0.5));
    assert_eq!(r.best.config["lr"], 1e-3);
    assert!(r.trials.iter().all(|t| t.budget <= 90));
}

#[test]
fn every_failure_is_an_error() {
    let space = SearchSpace::deep_svdd_default();
    let settings = HalvingSettings { n_configs: 3, ..Default::default() };
    let r = successive_halving(&space, &settings, &mut rng_from_seed(0), |_, _, _| Err(Error::Numerical("nan".into())));
    assert!(r.is_err());
}

fn fake_run(seed: u64) -> mvsvdd::Result<EvalReport> {
    let shift = seed as f64 * 0.1;
    let scores = [-1.0, 0.5 - shift, 0.2, 2.0, -0.3 + shift];
    evaluate(&scores, &[0, 0, 1, 1, 0], seed)
}

#[test]
fn finalize_averages_over_seeds() {
    let agg = finalize(&[1, 2, 3], fake_run).unwrap();
    let aucs: Vec<f64> = agg.runs.iter().map(|r| r.roc_auc).collect();
    let lo = aucs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = aucs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(agg.mean_auc >= lo && agg.mean_auc <= hi);
    assert_eq!(agg.seeds(), vec![1, 2, 3]);
    let again = finalize(&[1, 2, 3], fake_run).unwrap();
    assert_eq!(agg.mean_auc, again.mean_auc);
}

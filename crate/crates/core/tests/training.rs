use mvsvdd::fusion::{
    fuse_embeddings, pretrain, score_sample, score_samples, train, FusionTag, PipelineConfig, PretrainHyperParams,
    Strategy, ViewStack,
};
use mvsvdd::ndgrad::Graph;
use mvsvdd::nets::{
    build_cae, cae_loss, dae_corrupt, embed, reconstruction_error, ImageSet, NetSpec,
};
use mvsvdd::svdd::{anomaly_score, quantile, train_svdd, Hypersphere, SvddHyperParams, SvddModel};
use mvsvdd::{rng_from_seed, Rng};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

fn tiny_spec(ch: usize) -> NetSpec {
    NetSpec {
        input_shape: [ch, 12, 12],
        conv_channels: vec![4, 8],
        kernel: 3,
        stride: 2,
        padding: 1,
        latent_dim: 8,
        leaky_slope: 0.1,
        bias: false,
    }
}

fn blob_view(rng: &mut Rng, size: usize) -> Vec<f64> {
    let (cy, cx) = (rng.random_range(4.0..8.0), rng.random_range(4.0..8.0));
    (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64, (i % size) as f64);
            (-((y - cy).powi(2) + (x - cx).powi(2)) / 6.0).exp()
        })
        .collect()
}

fn blob_stacks(n: usize, k: usize, rng: &mut Rng) -> Vec<ViewStack> {
    (0..n).map(|_| ViewStack::normal(12, 12, (0..k).map(|_| blob_view(rng, 12)).collect()).unwrap()).collect()
}

#[test]
fn cae_overfits_a_repeated_image() {
    let mut rng = rng_from_seed(1);
    let view = blob_view(&mut rng, 12);
    let samples: Vec<ViewStack> =
        (0..16).map(|_| ViewStack::normal(12, 12, vec![view.clone(), view.clone()]).unwrap()).collect();
    let hp = PretrainHyperParams { epochs: 10, lr: 5e-3, batch_size: 4, ..Default::default() };
    let p = pretrain(Strategy::Early, &samples, &tiny_spec(2), &hp, &mut rng).unwrap();
    let (first, last) = (p.loss_history[0], *p.loss_history.last().unwrap());
    assert!(last < first / 2.0, "{first} -> {last}");
}

#[test]
fn pretraining_reduces_reconstruction_loss_for_every_strategy() {
    let mut rng = rng_from_seed(2);
    let samples = blob_stacks(50, 2, &mut rng);
    let hp = PretrainHyperParams { epochs: 3, lr: 3e-3, batch_size: 10, ..Default::default() };
    for strategy in Strategy::ALL {
        let p = pretrain(strategy, &samples, &tiny_spec(2), &hp, &mut rng).unwrap();
        assert!(p.loss_history.last().unwrap() < &p.loss_history[0], "{strategy:?} {:?}", p.loss_history);
        let expect_channels = if strategy == Strategy::Early { 2 } else { 1 };
        assert_eq!(p.spec.input_shape[0], expect_channels);
        let decoders = if strategy == Strategy::LateDual { 2 } else { 1 };
        assert_eq!(p.decoders.len(), decoders);
    }
}

#[test]
fn denoising_pretraining_runs() {
    let mut rng = rng_from_seed(3);
    let samples = blob_stacks(30, 2, &mut rng);
    let hp = PretrainHyperParams { epochs: 2, lr: 3e-3, batch_size: 10, denoise: true, noise_sigma: 0.1, ..Default::default() };
    let p = pretrain(Strategy::Early, &samples, &tiny_spec(2), &hp, &mut rng).unwrap();
    assert!(p.loss_history.iter().all(|l| l.is_finite()));
}

#[test]
fn dual_decoders_share_one_encoder() {
    let mut rng = rng_from_seed(4);
    let samples = blob_stacks(12, 2, &mut rng);
    let hp = PretrainHyperParams { epochs: 1, batch_size: 4, ..Default::default() };
    let mut p = pretrain(Strategy::LateDual, &samples, &tiny_spec(2), &hp, &mut rng).unwrap();
    let x = ImageSet::new([1, 12, 12], samples[0].view(0).to_vec()).unwrap().gather(&[0]).unwrap();
    let before: Vec<f64> = p.decoders.iter().map(|d| reconstruction_error(&p.spec, &p.encoder, d, &x).unwrap()).collect();
    p.encoder.iter_mut().for_each(|(_, t)| t.data_mut().iter_mut().for_each(|v| *v *= 1.5));
    for (i, d) in p.decoders.iter().enumerate() {
        assert_ne!(reconstruction_error(&p.spec, &p.encoder, d, &x).unwrap(), before[i]);
    }
}

#[test]
fn dae_target_receives_no_gradient() {
    let mut rng = rng_from_seed(5);
    let spec = tiny_spec(1);
    let (enc, dec) = build_cae(&spec, &mut rng).unwrap();
    let clean = ImageSet::new([1, 12, 12], blob_view(&mut rng, 12)).unwrap().gather(&[0]).unwrap();
    let noisy = dae_corrupt(&clean, 0.1, &mut rng).unwrap();
    assert_ne!(clean.data(), noisy.data());
    let mut g = Graph::new();
    let ew = enc.bind(&mut g);
    let dw = dec.bind(&mut g);
    let target = g.input(&clean);
    let input = g.input(&noisy);
    let loss = cae_loss(&mut g, &spec, &ew, &dw, input, target).unwrap();
    let grads = g.backward(loss).unwrap();
    assert!(grads.get(target).is_none_or(|gr| gr.iter().all(|&v| v == 0.0)));
    assert!(grads.get(ew[0]).unwrap().iter().any(|&v| v != 0.0));
}

fn linear_spec() -> NetSpec {
    NetSpec {
        input_shape: [1, 1, 2],
        conv_channels: vec![],
        kernel: 1,
        stride: 1,
        padding: 0,
        latent_dim: 2,
        leaky_slope: 0.1,
        bias: false,
    }
}

fn cluster(n: usize, rng: &mut Rng) -> ImageSet {
    let noise = Normal::new(0.0, 0.3).unwrap();
    let data: Vec<f64> = (0..n).flat_map(|_| [2.0 + noise.sample(rng), -1.0 + noise.sample(rng)]).collect();
    ImageSet::new([1, 1, 2], data).unwrap()
}

#[test]
fn nu_bounds_the_training_outlier_fraction() {
    let spec = linear_spec();
    for nu in [0.1, 0.4] {
        let mut rng = rng_from_seed(6);
        let set = cluster(200, &mut rng);
        let (enc, _) = build_cae(&spec, &mut rng).unwrap();
        let hp = SvddHyperParams { nu, epochs: 20, warmup_epochs: 5, lr: 1e-2, batch_size: 32, ..Default::default() };
        let tag = FusionTag { strategy: Strategy::Early, views: 1 };
        let (model, _) = train_svdd(&spec, enc, &set, &hp, tag, &mut rng).unwrap();
        let phis = embed(&spec, &model.encoder, &set).unwrap();
        let d: Vec<f64> = phis.iter().map(|p| anomaly_score(&model, p).unwrap() + model.sphere.radius.powi(2)).collect();
        let outside = d.iter().filter(|&&v| v > model.sphere.radius.powi(2)).count() as f64 / d.len() as f64;
        assert!(outside <= nu + 0.05, "nu={nu}: {outside}");
        let q = quantile(&d, 1.0 - nu).unwrap();
        assert!((model.sphere.radius - q.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn full_warmup_keeps_the_initial_radius_and_training_is_deterministic() {
    let spec = linear_spec();
    let run = |warmup| {
        let mut rng = rng_from_seed(7);
        let set = cluster(50, &mut rng);
        let (enc, _) = build_cae(&spec, &mut rng).unwrap();
        let hp = SvddHyperParams { epochs: 6, warmup_epochs: warmup, lr: 1e-2, ..Default::default() };
        let tag = FusionTag { strategy: Strategy::Early, views: 1 };
        train_svdd(&spec, enc, &set, &hp, tag, &mut rng).unwrap()
    };
    let (_, log) = run(6);
    assert!(log.iter().all(|e| e.radius == log[0].radius));
    let (a, _) = run(2);
    let (b, _) = run(2);
    assert_eq!(a.sphere.radius, b.sphere.radius);
    assert_eq!(a, b);
}

fn small_pipeline(strategy: Strategy) -> PipelineConfig {
    PipelineConfig {
        strategy,
        net: tiny_spec(2),
        pretrain: PretrainHyperParams { epochs: 1, batch_size: 8, ..Default::default() },
        svdd: SvddHyperParams { epochs: 2, warmup_epochs: 1, batch_size: 8, ..Default::default() },
    }
}

#[test]
fn late_fusion_of_duplicated_views_equals_single_view_scoring() {
    let mut rng = rng_from_seed(8);
    let samples = blob_stacks(16, 2, &mut rng);
    for strategy in [Strategy::Late, Strategy::LateDual] {
        let trained = train(&small_pipeline(strategy), &samples, &mut rng).unwrap();
        for s in &samples[..4] {
            let v = s.view(1).to_vec();
            let dup = ViewStack::normal(12, 12, vec![v.clone(), v.clone()]).unwrap();
            let single = ViewStack::normal(12, 12, vec![v]).unwrap();
            let a = score_sample(&trained.model, &dup).unwrap();
            let b = score_sample(&trained.model, &single).unwrap();
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn early_fusion_emits_one_score_per_stack() {
    let mut rng = rng_from_seed(9);
    let samples = blob_stacks(16, 2, &mut rng);
    let trained = train(&small_pipeline(Strategy::Early), &samples, &mut rng).unwrap();
    assert_eq!(score_samples(&trained.model, &samples).unwrap().len(), samples.len());
    let single = ViewStack::normal(12, 12, vec![samples[0].view(0).to_vec()]).unwrap();
    assert!(score_sample(&trained.model, &single).is_err());
}

#[test]
fn three_view_stacks_work_for_every_strategy() {
    let mut rng = rng_from_seed(10);
    let samples = blob_stacks(12, 3, &mut rng);
    for strategy in Strategy::ALL {
        let trained = train(&small_pipeline(strategy), &samples, &mut rng).unwrap();
        assert_eq!(trained.model.fusion.views, 3);
        assert_eq!(score_samples(&trained.model, &samples).unwrap().len(), 12);
    }
}

#[test]
fn averaging_can_hide_an_outlying_view() {
    let sphere = Hypersphere { center: vec![0.0, 0.0], radius: 1.0 };
    let fused = fuse_embeddings(&[vec![1.8, 0.0], vec![0.0, 0.0]]).unwrap();
    assert_eq!(fused.phi_bar, vec![0.9, 0.0]);
    let score = sphere.score(&fused.phi_bar).unwrap();
    assert!((score - (0.81 - 1.0)).abs() < 1e-12);
    assert!(score < 0.0);
    assert!(sphere.score(&[1.8, 0.0]).unwrap() > 0.0);
}

#[test]
fn model_scores_match_the_formula() {
    let mut rng = rng_from_seed(12);
    let spec = linear_spec();
    let (enc, _) = build_cae(&spec, &mut rng).unwrap();
    let model = SvddModel {
        spec,
        encoder: enc,
        sphere: Hypersphere::new(vec![0.3, -0.2], 0.7).unwrap(),
        hp: SvddHyperParams::default(),
        fusion: FusionTag { strategy: Strategy::Early, views: 1 },
    };
    for _ in 0..100 {
        let phi = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let want = (phi[0] - 0.3f64).powi(2) + (phi[1] + 0.2f64).powi(2) - 0.49;
        assert!((anomaly_score(&model, &phi).unwrap() - want).abs() < 1e-12);
    }
}

use mvsvdd::baselines::{ocsvm_fit, pca_fit, pca_inverse, pca_transform, Kde};
use mvsvdd::data::image_ops::{hflip, vflip};
use mvsvdd::data::{augment, AugmentationPolicy};
use mvsvdd::eval::{confusion_matrix_pct, labels_from_scores, macro_precision_recall, roc_auc};
use mvsvdd::fusion::fuse_embeddings;
use mvsvdd::ndgrad::conv::{conv_out_len, tconv_out_len};
use mvsvdd::ndgrad::Tensor;
use mvsvdd::rng_from_seed;
use mvsvdd::svdd::{classify, quantile, svdd_loss_value, update_radius, Hypersphere};
use proptest::prelude::*;

fn scored_set() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(-5i32..5, n).prop_map(|v| v.into_iter().map(f64::from).collect()),
            prop::collection::vec(0u8..2, n),
        )
    })
    .prop_filter("both classes", |(_, l)| l.contains(&0) && l.contains(&1))
}

fn pairwise_auc(s: &[f64], l: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in s.iter().enumerate() {
        for (j, &sj) in s.iter().enumerate() {
            if l[i] == 1 && l[j] == 0 {
                den += 1.0;
                num += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    num / den
}

proptest! {
    #[test]
    fn auc_matches_pairwise_estimator((s, l) in scored_set()) {
        prop_assert!((roc_auc(&s, &l).unwrap() - pairwise_auc(&s, &l)).abs() <= 1e-12);
    }

    #[test]
    fn auc_is_invariant_to_monotone_maps((s, l) in scored_set()) {
        let t: Vec<f64> = s.iter().map(|v| (0.3 * v).exp() * 2.0 + 7.0).collect();
        prop_assert!((roc_auc(&s, &l).unwrap() - roc_auc(&t, &l).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn auc_of_negated_scores_is_complementary(n in 2usize..50, seed in any::<u64>()) {
        use rand::Rng as _;
        let mut rng = rng_from_seed(seed);
        let s: Vec<f64> = (0..n).map(|i| i as f64 + rng.random_range(0.0..0.5)).collect();
        let mut l: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        l[0] = 0;
        l[n - 1] = 1;
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((roc_auc(&s, &l).unwrap() + roc_auc(&neg, &l).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn macro_metrics_symmetric_under_class_swap(
        pred in prop::collection::vec(0u8..2, 1..40),
        truth in prop::collection::vec(0u8..2, 1..40),
    ) {
        let n = pred.len().min(truth.len());
        let (p, t) = (&pred[..n], &truth[..n]);
        let swap = |v: &[u8]| v.iter().map(|x| 1 - x).collect::<Vec<u8>>();
        let a = macro_precision_recall(p, t).unwrap();
        let b = macro_precision_recall(&swap(p), &swap(t)).unwrap();
        prop_assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
    }

    #[test]
    fn confusion_rows_sum_to_100(
        pred in prop::collection::vec(0u8..2, 1..40),
        truth in prop::collection::vec(0u8..2, 1..40),
    ) {
        let n = pred.len().min(truth.len());
        let cm = confusion_matrix_pct(&pred[..n], &truth[..n]).unwrap();
        for row in cm.rows.iter().flatten() {
            prop_assert!((row[0] + row[1] - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sign_rule_partitions_at_zero(s in prop::collection::vec(-3.0f64..3.0, 1..30)) {
        let labels = labels_from_scores(&s).unwrap();
        for (x, l) in s.iter().zip(labels) {
            prop_assert_eq!(l, classify(*x).unwrap());
            prop_assert_eq!(l == 1, *x > 0.0);
        }
    }

    #[test]
    fn fusion_is_permutation_invariant(
        phis in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 4), 2..6),
        rot in 0usize..6,
    ) {
        let mut shuffled = phis.clone();
        shuffled.rotate_left(rot % phis.len());
        let a = fuse_embeddings(&phis).unwrap().phi_bar;
        let b = fuse_embeddings(&shuffled).unwrap().phi_bar;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn two_view_fusion_is_the_midpoint(a in prop::collection::vec(-5.0f64..5.0, 3), b in prop::collection::vec(-5.0f64..5.0, 3)) {
        let f = fuse_embeddings(&[a.clone(), b.clone()]).unwrap().phi_bar;
        for i in 0..3 {
            prop_assert!((f[i] - (a[i] + b[i]) / 2.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn conv_shape_laws(h in 1usize..40, k in 1usize..7, s in 1usize..4, p in 0usize..3) {
        if let Some(o) = conv_out_len(h, k, s, p) {
            prop_assert_eq!(o, (h + 2 * p - k) / s + 1);
            let op = (h + 2 * p - k) % s;
            if let Some(back) = tconv_out_len(o, k, s, p, op) {
                prop_assert_eq!(back, h);
            }
        } else {
            prop_assert!(h + 2 * p < k);
        }
    }

    #[test]
    fn loss_equals_scalar_formula(
        rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 1..20),
        c in prop::collection::vec(0.1f64..1.0, 3),
        r in 0.0f64..2.0,
        nu in 0.05f64..1.0,
    ) {
        let sphere = Hypersphere::new(c.clone(), r).unwrap();
        let mut hinge = 0.0;
        for row in &rows {
            let d: f64 = row.iter().zip(&c).map(|(x, y)| (x - y) * (x - y)).sum();
            hinge += f64::max(0.0, d - r * r);
        }
        let want = r * r + hinge / (nu * rows.len() as f64);
        prop_assert!((svdd_loss_value(&rows, &sphere, nu).unwrap() - want).abs() <= 1e-12 * want.max(1.0));
    }

    #[test]
    fn score_is_monotone_in_distance(c in prop::collection::vec(0.1f64..1.0, 2), r in 0.0f64..2.0, t1 in 0.0f64..5.0, t2 in 0.0f64..5.0) {
        let sphere = Hypersphere::new(c.clone(), r).unwrap();
        let at = |t: f64| sphere.score(&[c[0] + t, c[1]]).unwrap();
        if t1 < t2 {
            prop_assert!(at(t1) < at(t2));
        }
        prop_assert_eq!(classify(at(t1)).unwrap() == 1, t1 * t1 > r * r);
    }

    #[test]
    fn radius_is_the_quantile(d in prop::collection::vec(0.0f64..10.0, 1..50), nu in 0.01f64..1.0) {
        let r = update_radius(&d, nu).unwrap();
        prop_assert!((r * r - quantile(&d, 1.0 - nu).unwrap()).abs() <= 1e-12);
        let mut sorted = d.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assert!(r * r >= sorted[0] - 1e-12 && r * r <= sorted[d.len() - 1] + 1e-12);
    }

    #[test]
    fn augmentation_stays_in_unit_range(seed in any::<u64>(), px in prop::collection::vec(0.0f64..=1.0, 64)) {
        let img = Tensor::new([1, 8, 8], px).unwrap();
        let out = augment(&img, &AugmentationPolicy::default(), &mut rng_from_seed(seed)).unwrap();
        prop_assert_eq!(out.shape(), img.shape());
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn flips_are_involutions(px in prop::collection::vec(-1.0f64..1.0, 30)) {
        prop_assert_eq!(hflip(&hflip(&px, 5, 6), 5, 6), px.clone());
        prop_assert_eq!(vflip(&vflip(&px, 5, 6), 5, 6), px);
    }

    #[test]
    fn kde_is_permutation_invariant(pts in prop::collection::vec(-3.0f64..3.0, 2..15), x in -4.0f64..4.0, h in 0.2f64..3.0) {
        let train: Vec<Vec<f64>> = pts.iter().map(|&v| vec![v]).collect();
        let mut rev = train.clone();
        rev.reverse();
        let a = Kde::new(train, h).unwrap().score(&[x]);
        let b = Kde::new(rev, h).unwrap().score(&[x]);
        prop_assert!((a - b).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ocsvm_dual_is_feasible(seed in any::<u64>(), nu in 0.05f64..1.0, n in 5usize..40) {
        use rand::Rng as _;
        let mut rng = rng_from_seed(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let m = ocsvm_fit(&x, 0.5, nu).unwrap();
        let sum: f64 = m.alphas.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-6);
        let c = 1.0 / (nu * n as f64);
        prop_assert!(m.alphas.iter().all(|&a| a >= -1e-12 && a <= c + 1e-12));
    }

    #[test]
    fn pca_components_are_orthonormal(seed in any::<u64>(), n in 3usize..30, d in 2usize..12) {
        use rand::Rng as _;
        let mut rng = rng_from_seed(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let m = pca_fit(&x, 0.95).unwrap();
        prop_assert!(m.explained_variance_ratio.iter().sum::<f64>() >= 0.95 - 1e-12);
        for (i, a) in m.components.iter().enumerate() {
            for (j, b) in m.components.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(u, v)| u * v).sum();
                prop_assert!((dot - f64::from(u8::from(i == j))).abs() <= 1e-8);
            }
        }
        let full = pca_fit(&x, 1.0).unwrap();
        let back = pca_inverse(&full, &pca_transform(&full, &x).unwrap());
        for (r, s) in x.iter().zip(&back) {
            for (u, v) in r.iter().zip(s) {
                prop_assert!((u - v).abs() <= 1e-8);
            }
        }
    }
}

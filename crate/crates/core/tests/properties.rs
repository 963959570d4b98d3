use proptest::prelude::*;

use aeg_core::affective::{learn_affective_gmm, posterior_map, AffectiveGMM, LearnConfig, Provenance};
use aeg_core::annotation::{Annotation, CorpusPriors, EmotionCorpus};
use aeg_core::bundle::{ModelBundle, SegmentSet};
use aeg_core::features::{SegmentMatrix, StandardizationStats};
use aeg_core::gaussian::{kl2, kl_divergence, Gaussian2, GaussianD, SymMat2};
use aeg_core::predict::reduce_to_gaussian;
use aeg_core::retrieval::{cosine, fold_in, rank_ensemble, rank_random, LibraryIndex, Query};
use aeg_core::{AcousticGMM, TopicPosterior};

fn gaussian() -> impl Strategy<Value = Gaussian2> {
    (-1.0f64..1.0, -1.0f64..1.0, 0.01f64..1.0, 0.01f64..1.0, -0.95f64..0.95).prop_map(|(mx, my, vx, vy, r)| {
        Gaussian2::new([mx, my], SymMat2::new(vx, r * (vx * vy).sqrt(), vy)).unwrap()
    })
}

fn model_and_theta() -> impl Strategy<Value = (AffectiveGMM, Vec<f64>)> {
    (1usize..7).prop_flat_map(|k| {
        (
            prop::collection::vec(gaussian(), k),
            prop::collection::vec(0.0f64..1.0, k).prop_filter("some mass", |w| w.iter().sum::<f64>() > 1e-3),
        )
            .prop_map(|(gs, w)| {
                let s: f64 = w.iter().sum();
                (
                    AffectiveGMM::from_gaussians(gs, Provenance::Uniform).unwrap(),
                    w.iter().map(|x| x / s).collect(),
                )
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn kl_is_nonnegative_and_zero_on_identity(a in gaussian(), b in gaussian()) {
        prop_assert!(kl_divergence(&a, &b) >= 0.0);
        prop_assert!(kl_divergence(&a, &a).abs() < 1e-12);
        prop_assert_eq!(kl2(&a, &b), kl2(&b, &a));
    }

    #[test]
    fn reduction_matches_mixture_moments((model, theta) in model_and_theta()) {
        let g = reduce_to_gaussian(&theta, &model).unwrap();
        prop_assert!(g.cov().is_positive_definite());
        let mut mean = [0.0; 2];
        for c in model.components() {
            mean[0] += theta[c.topic] * c.gaussian.mean()[0];
            mean[1] += theta[c.topic] * c.gaussian.mean()[1];
        }
        prop_assert!((g.mean()[0] - mean[0]).abs() < 1e-12 && (g.mean()[1] - mean[1]).abs() < 1e-12);
        // Total variance decomposes into within- plus between-component parts.
        let tr: f64 = model.components().iter().map(|c| {
            let m = c.gaussian.mean();
            theta[c.topic] * (c.gaussian.cov().trace() + (m[0] - mean[0]).powi(2) + (m[1] - mean[1]).powi(2))
        }).sum();
        prop_assert!((g.cov().trace() - tr).abs() < 1e-10);
    }

    #[test]
    fn fold_in_stays_on_the_simplex((model, _) in model_and_theta(), v in -1.0f64..1.0, a in -1.0f64..1.0) {
        let song = fold_in(&Query::Point([v, a]), &model, 3).unwrap();
        prop_assert_eq!(song.lambda.len(), model.k_original());
        prop_assert!(song.lambda.iter().all(|l| *l >= 0.0));
        prop_assert!((song.lambda.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cosine_is_bounded(x in prop::collection::vec(0.0f64..1.0, 1..8), y in prop::collection::vec(0.0f64..1.0, 1..8)) {
        let n = x.len().min(y.len());
        if let Ok(c) = cosine(&x[..n], &y[..n]) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
        }
    }

    #[test]
    fn ensemble_of_a_list_with_itself_keeps_its_order(n in 1usize..30, seed in any::<u64>()) {
        let entries = (0..n).map(|i| aeg_core::retrieval::IndexEntry {
            clip_id: format!("c{i:03}"),
            theta: vec![1.0],
            reduced: Gaussian2::standard(),
            metadata: Default::default(),
        }).collect();
        let index = LibraryIndex { entries, model_ref: "p".into() };
        let r = rank_random(&index, seed);
        let e = rank_ensemble(&r, &r).unwrap();
        prop_assert_eq!(e.clip_ids(), r.clip_ids());
    }

    #[test]
    fn em_bound_never_decreases(
        clips in prop::collection::vec(
            (prop::collection::vec(0.01f64..1.0, 3), prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..6)),
            3..12,
        )
    ) {
        let mut posts = Vec::new();
        let mut annos = Vec::new();
        for (i, (w, pts)) in clips.iter().enumerate() {
            let id = format!("c{i:02}");
            let s: f64 = w.iter().sum();
            posts.push(TopicPosterior::new(&id, w.iter().map(|x| x / s).collect()).unwrap());
            for (j, (v, a)) in pts.iter().enumerate() {
                annos.push(Annotation::new(&id, format!("s{j}"), [*v, *a]).unwrap());
            }
        }
        let corpus = EmotionCorpus::from_annotations(annos);
        let config = LearnConfig { max_iters: 25, min_rel_gain: 0.0, ..LearnConfig::default() };
        if let Ok((_, trace)) = learn_affective_gmm(&posterior_map(posts).unwrap(), &corpus, &CorpusPriors::uniform(&corpus), &config) {
            for (t, w) in trace.lbound.windows(2).enumerate() {
                if trace.removals.iter().all(|r| r.iteration != t + 1) {
                    prop_assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
                }
            }
        }
    }

    #[test]
    fn bundle_bytes_round_trip(
        means in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..5),
        var in 0.1f64..2.0,
    ) {
        let comps: Vec<GaussianD> = means.iter().map(|m| GaussianD::diagonal(m.clone(), vec![var; 4]).unwrap()).collect();
        let k = comps.len();
        let acoustic = AcousticGMM::new(comps, vec![1.0 / k as f64; k]).unwrap();
        let bundle = ModelBundle::new(StandardizationStats::identity(2), acoustic);
        let bytes = bundle.to_bytes().unwrap();
        let back = ModelBundle::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &bundle);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn segment_sets_round_trip(rows in prop::collection::vec(prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 4), 1..20)) {
        let set = SegmentSet {
            standardization: StandardizationStats::identity(2),
            window: 16,
            hop: 4,
            clips: vec![SegmentMatrix { clip_id: "x".into(), segments: rows }],
        };
        let back = SegmentSet::from_bytes(&set.to_bytes().unwrap()).unwrap();
        prop_assert_eq!(back, set);
    }
}

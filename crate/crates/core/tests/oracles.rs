//! Independent reference computations checked against the library.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use aeg_core::acoustic::{topic_posterior, train_acoustic_gmm, AcousticTrainConfig};
use aeg_core::affective::{learn_with_mode, posterior_map, AffectiveGMM, LearnConfig, Provenance};
use aeg_core::evaluation::{
    partition_folds, run_cross_validation, synthesize_corpus, synthesize_features, CvConfig, FeatureSynthSpec,
    SyntheticSpec,
};
use aeg_core::features::{aggregate_segments, apply_standardization, fit_standardization, SegmentMatrix};
use aeg_core::gaussian::{kl_divergence, CovarianceD, Gaussian2, SymMat2};
use aeg_core::predict::reduce_to_gaussian;
use aeg_core::retrieval::{fold_in, rank, LibraryIndex, MatchMode, Method, Query, DEFAULT_FOLD_IN_ITERS};
use aeg_core::AcousticGMM;

fn g(mean: [f64; 2], xx: f64, xy: f64, yy: f64) -> Gaussian2 {
    Gaussian2::new(mean, SymMat2::new(xx, xy, yy)).unwrap()
}

#[test]
fn density_integrates_to_one() {
    for gauss in [g([0.0, 0.0], 1.0, 0.0, 1.0), g([0.3, -0.4], 0.05, 0.02, 0.03), g([1.0, 2.0], 4.0, -1.5, 1.0)] {
        let c = gauss.cov();
        let (sx, sy) = (c.xx.sqrt(), c.yy.sqrt());
        let n = 800;
        let (hx, hy) = (16.0 * sx / n as f64, 16.0 * sy / n as f64);
        let m = gauss.mean();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = [m[0] - 8.0 * sx + (i as f64 + 0.5) * hx, m[1] - 8.0 * sy + (j as f64 + 0.5) * hy];
                total += gauss.pdf(x) * hx * hy;
            }
        }
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }
}

#[test]
fn kl_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pairs = [
        (g([0.2, 0.1], 0.3, 0.1, 0.2), g([-0.1, 0.4], 0.5, -0.1, 0.4)),
        (g([0.0, 0.0], 0.05, 0.0, 0.1), g([0.3, 0.3], 0.2, 0.05, 0.2)),
    ];
    for (a, b) in pairs {
        let n = 400_000;
        let mc: f64 = (0..n)
            .map(|_| {
                let x = a.sample_with([StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)]);
                a.log_pdf(x) - b.log_pdf(x)
            })
            .sum::<f64>()
            / n as f64;
        let exact = kl_divergence(&a, &b);
        assert!((mc - exact).abs() < 0.02 * exact.max(0.1), "{mc} vs {exact}");
    }
}

fn small_pipeline(seed: u64) -> (Vec<SegmentMatrix>, AcousticGMM, aeg_core::evaluation::SyntheticCorpus) {
    let mut shape = SyntheticSpec::ring(3, 0.6, 0.15).unwrap();
    shape.clips = 30;
    shape.subjects_per_clip = (4, 6);
    shape.seed = seed;
    let syn = synthesize_corpus(&shape).unwrap();
    let frames = synthesize_features(
        &syn.posteriors,
        &FeatureSynthSpec {
            dim: 3,
            seed,
            ..FeatureSynthSpec::default()
        },
    )
    .unwrap();
    let stats = fit_standardization(&frames).unwrap();
    let segs: Vec<SegmentMatrix> = frames
        .iter()
        .map(|f| aggregate_segments(&apply_standardization(f, &stats).unwrap(), 16, 4).unwrap())
        .collect();
    let rows: Vec<Vec<f64>> = segs.iter().flat_map(|s| s.segments.iter().cloned()).collect();
    let config = AcousticTrainConfig {
        seed,
        ..AcousticTrainConfig::default()
    };
    let (gmm, _) = train_acoustic_gmm(&rows, 3, &config).unwrap();
    (segs, gmm, syn)
}

/// Diagonal-Gaussian log density from the raw parameters.
fn log_density(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(var)
        .map(|((x, m), v)| -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - m).powi(2) / v))
        .sum()
}

#[test]
fn theta_is_mean_of_segment_softmaxes() {
    let (segs, gmm, _) = small_pipeline(4);
    for seg in segs.iter().take(10) {
        let theta = topic_posterior(seg, &gmm).unwrap().theta;
        let mut want = vec![0.0; gmm.k()];
        for x in &seg.segments {
            let logs: Vec<f64> = gmm
                .components()
                .iter()
                .map(|c| match c.covariance() {
                    CovarianceD::Diagonal(v) => log_density(x, c.mean(), v),
                    CovarianceD::Full { .. } => unreachable!("diagonal model"),
                })
                .collect();
            let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logs.iter().map(|l| (l - max).exp()).sum();
            for (w, l) in want.iter_mut().zip(&logs) {
                *w += (l - max).exp() / z / seg.len() as f64;
            }
        }
        for (a, b) in theta.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10, "{theta:?} vs {want:?}");
        }
    }
}

fn indexed(seed: u64) -> (LibraryIndex, AffectiveGMM) {
    let (segs, gmm, syn) = small_pipeline(seed);
    let posts: Vec<_> = segs.iter().map(|s| topic_posterior(s, &gmm).unwrap()).collect();
    let thetas = posterior_map(posts.clone()).unwrap();
    let (model, _) = learn_with_mode(&thetas, &syn.corpus, &LearnConfig::default()).unwrap();
    let index = LibraryIndex::from_posteriors(&posts, &model, "test").unwrap().index;
    (index, model)
}

#[test]
fn index_holds_reduced_predictions() {
    let (index, model) = indexed(5);
    for e in &index.entries {
        assert_eq!(e.reduced, reduce_to_gaussian(&e.theta, &model).unwrap());
    }
}

#[test]
fn emotion_prediction_orders_by_density_and_distance() {
    let (index, model) = indexed(6);
    let p = [0.2, -0.3];
    let ranked = rank(&Query::Point(p), &index, &model, Method::EmotionPrediction, MatchMode::SingleGaussian).unwrap();
    let mut want: Vec<(f64, &str)> = index
        .entries
        .iter()
        .map(|e| {
            let c = e.reduced.cov();
            let det = c.xx * c.yy - c.xy * c.xy;
            let d = [p[0] - e.reduced.mean()[0], p[1] - e.reduced.mean()[1]];
            let maha = (c.yy * d[0] * d[0] - 2.0 * c.xy * d[0] * d[1] + c.xx * d[1] * d[1]) / det;
            ((-0.5 * maha).exp() / (2.0 * std::f64::consts::PI * det.sqrt()), e.clip_id.as_str())
        })
        .collect();
    want.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    assert_eq!(ranked.clip_ids(), want.iter().map(|w| w.1).collect::<Vec<_>>());

    let q = g([-0.1, 0.2], 0.05, 0.0, 0.05);
    let ranked = rank(&Query::Gaussian(q), &index, &model, Method::EmotionPrediction, MatchMode::SingleGaussian).unwrap();
    let scores: Vec<f64> = ranked.items.iter().map(|i| i.score).collect();
    assert!(scores.windows(2).all(|w| w[0] <= w[1]), "KL2 distances must ascend");
}

#[test]
fn folding_in_orders_by_cosine() {
    let (index, model) = indexed(7);
    let q = Query::Point([0.4, 0.1]);
    let lambda = fold_in(&q, &model, DEFAULT_FOLD_IN_ITERS).unwrap().lambda;
    let ranked = rank(&q, &index, &model, Method::FoldingIn, MatchMode::SingleGaussian).unwrap();
    let by_id: BTreeMap<&str, f64> = ranked.items.iter().map(|i| (i.clip_id.as_str(), i.score)).collect();
    for e in &index.entries {
        let dot: f64 = lambda.iter().zip(&e.theta).map(|(a, b)| a * b).sum();
        let n = lambda.iter().map(|x| x * x).sum::<f64>().sqrt() * e.theta.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((by_id[e.clip_id.as_str()] - dot / n).abs() < 1e-12);
    }
}

#[test]
fn near_one_hot_clips_cluster_on_their_topic() {
    let mut shape = SyntheticSpec::ring(4, 0.5 * 2f64.sqrt(), 0.15).unwrap();
    shape.dirichlet_alpha = 0.01;
    shape.seed = 9;
    let syn = synthesize_corpus(&shape).unwrap();
    let means: Vec<[f64; 2]> = syn.truth.components().iter().map(|c| c.gaussian.mean()).collect();
    let mut hits = 0;
    let mut total = 0;
    for p in &syn.posteriors {
        let dominant = (0..4).max_by(|a, b| p.theta[*a].total_cmp(&p.theta[*b])).unwrap();
        for a in &syn.corpus.get(&p.clip_id).unwrap().annotations {
            let nearest = (0..4)
                .min_by(|x, y| {
                    let d = |k: usize| (a.e[0] - means[k][0]).powi(2) + (a.e[1] - means[k][1]).powi(2);
                    d(*x).total_cmp(&d(*y))
                })
                .unwrap();
            hits += usize::from(nearest == dominant);
            total += 1;
        }
    }
    let acc = hits as f64 / total as f64;
    assert!(acc > 0.9, "{acc}");
}

fn ring_cv(seed: u64) -> aeg_core::evaluation::CvReport {
    let mut shape = SyntheticSpec::ring(4, 0.5 * 2f64.sqrt(), 0.15).unwrap();
    shape.seed = seed;
    let syn = synthesize_corpus(&shape).unwrap();
    let thetas = posterior_map(syn.posteriors.clone()).unwrap();
    let config = CvConfig {
        seed,
        ..CvConfig::default()
    };
    run_cross_validation(&syn.corpus, &thetas, &config, Some(&syn.truth)).unwrap()
}

#[test]
fn base_rate_explains_no_variance_on_a_symmetric_corpus() {
    let report = ring_cv(21);
    let base = report.row("base_rate").unwrap();
    assert!(base.r2_valence.abs() < 0.02 && base.r2_arousal.abs() < 0.02, "{base:?}");
}

#[test]
fn true_model_has_lower_akl_than_the_learned_one() {
    let report = ring_cv(22);
    let oracle = report.row("oracle").unwrap();
    let aeg = report.row("aeg").unwrap();
    // AED is not compared: a learned mean can sit marginally closer to the
    // finite-sample annotation centroids than the generating mean does.
    assert!(oracle.akl < aeg.akl, "{oracle:?} vs {aeg:?}");
}

#[test]
fn leave_one_out_partition() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ids: Vec<String> = (0..17).map(|i| format!("c{:02}", rng.random_range(0..100) * 100 + i)).collect();
    let folds = partition_folds(&ids, ids.len(), 3).unwrap();
    assert!(folds.iter().all(|f| f.len() == 1));
    let mut all: Vec<String> = folds.into_iter().flatten().collect();
    all.sort();
    let mut want = ids.clone();
    want.sort();
    assert_eq!(all, want);
}

#[test]
fn one_hot_reduction_returns_the_component() {
    let comps = vec![g([0.1, 0.2], 0.1, 0.0, 0.2), g([-0.3, 0.4], 0.05, 0.01, 0.07)];
    let model = AffectiveGMM::from_gaussians(comps.clone(), Provenance::Uniform).unwrap();
    assert_eq!(reduce_to_gaussian(&[0.0, 1.0], &model).unwrap(), comps[1]);
}

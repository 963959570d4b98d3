#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use aeg_core::acoustic::{topic_posterior, train_acoustic_gmm, AcousticTrainConfig};
use aeg_core::affective::{learn_with_mode, posterior_map};
use aeg_core::evaluation::{synthesize_corpus, synthesize_features, FeatureSynthSpec, SyntheticCorpus, SyntheticSpec};
use aeg_core::features::{aggregate_segments, apply_standardization, fit_standardization};
use aeg_core::retrieval::{model_fingerprint, LibraryIndex};
use aeg_core::{LearnConfig, ModelBundle};

/// A trained and indexed bundle over a small ring corpus.
pub fn small_bundle(seed: u64) -> (ModelBundle, SyntheticCorpus) {
    let mut shape = SyntheticSpec::ring(4, 0.5, 0.15).unwrap();
    shape.clips = 40;
    shape.subjects_per_clip = (5, 8);
    shape.seed = seed;
    let syn = synthesize_corpus(&shape).unwrap();
    let frames = synthesize_features(
        &syn.posteriors,
        &FeatureSynthSpec {
            dim: 2,
            seed,
            ..FeatureSynthSpec::default()
        },
    )
    .unwrap();
    let stats = fit_standardization(&frames).unwrap();
    let segs: Vec<_> = frames
        .iter()
        .map(|f| aggregate_segments(&apply_standardization(f, &stats).unwrap(), 16, 4).unwrap())
        .collect();
    let rows: Vec<Vec<f64>> = segs.iter().flat_map(|s| s.segments.iter().cloned()).collect();
    let config = AcousticTrainConfig {
        seed,
        ..AcousticTrainConfig::default()
    };
    let (acoustic, _) = train_acoustic_gmm(&rows, 4, &config).unwrap();
    let posts: Vec<_> = segs.iter().map(|s| topic_posterior(s, &acoustic).unwrap()).collect();
    let thetas = posterior_map(posts.clone()).unwrap();
    let (affective, _) = learn_with_mode(&thetas, &syn.corpus, &LearnConfig::default()).unwrap();
    let fp = model_fingerprint(Some(&acoustic), &affective);
    let index = LibraryIndex::from_posteriors(&posts, &affective, fp).unwrap().index;
    let mut bundle = ModelBundle::new(stats, acoustic);
    bundle.affective = Some(affective);
    bundle.index = Some(index);
    (bundle, syn)
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn aeg(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_aeg"))
        .current_dir(dir)
        .env_remove("SOURCE_DATE_EPOCH")
        .env_remove("AEG_BUNDLE")
        .args(args)
        .output()
        .expect("spawn aeg");
    assert!(
        out.status.success(),
        "aeg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

/// Runs the whole workflow on the committed fixture corpus in `dir` and
/// returns every artifact by name.
pub fn run_pipeline(dir: &Path) -> BTreeMap<&'static str, Vec<u8>> {
    let feats = fixture("features.csv");
    let annos = fixture("annotations.csv");
    let (feats, annos) = (feats.to_str().unwrap(), annos.to_str().unwrap());
    let mut out = BTreeMap::new();
    aeg(dir, &["features", "--input", feats, "--output", "segs.bin"]);
    aeg(dir, &["--seed", "5", "train-acoustic", "--segments", "segs.bin", "--k", "3", "--output", "m.aeg"]);
    aeg(dir, &["posteriors", "--bundle", "m.aeg", "--segments", "segs.bin", "--output", "post.csv"]);
    out.insert("train_affective.txt", aeg(
        dir,
        &["train-affective", "--bundle", "m.aeg", "--posteriors", "post.csv", "--annotations", annos, "--mode", "hybrid"],
    ));
    aeg(dir, &["index", "--bundle", "m.aeg", "--segments", "segs.bin"]);
    out.insert("predict.json", aeg(dir, &["predict", "--bundle", "m.aeg", "--posteriors", "post.csv", "--mixture"]));
    out.insert("retrieve_ep.txt", aeg(dir, &["retrieve", "--bundle", "m.aeg", "--point", "0.2,-0.4", "--topk", "8"]));
    out.insert(
        "retrieve_ensemble.txt",
        aeg(dir, &["retrieve", "--bundle", "m.aeg", "--gaussian", "-0.3,0.1,0.04,0.01,0.06", "--method", "ensemble", "--topk", "8"]),
    );
    out.insert(
        "evaluate_mer.txt",
        aeg(dir, &["--seed", "2", "evaluate", "--task", "mer", "--annotations", annos, "--posteriors", "post.csv"]),
    );
    out.insert(
        "evaluate_retrieval.txt",
        aeg(dir, &["evaluate", "--task", "retrieval", "--bundle", "m.aeg", "--annotations", annos, "--queries", "25"]),
    );
    aeg(dir, &["adapt", "--bundle", "m.aeg", "--user", "s01", "--annotations", annos, "--posteriors", "post.csv"]);
    out.insert("inspect.json", aeg(dir, &["inspect", "--bundle", "m.aeg"]));
    out.insert("posteriors.csv", std::fs::read(dir.join("post.csv")).unwrap());
    out.insert("model.aeg", std::fs::read(dir.join("m.aeg")).unwrap());
    out
}

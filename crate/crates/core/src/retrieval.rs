//! Emotion-based retrieval over an indexed library.
//!
//! Every indexed clip carries both its topic posterior θ̂ and its reduced
//! Gaussian, so one index serves the three rankers:
//!
//! * emotion prediction: likelihood of a point query, or KL2 distance to a
//!   Gaussian query, under each clip's predicted distribution;
//! * folding-in: the query is folded into a pseudo song λ by a few EM steps
//!   over the affective GMM, then clips are ranked by cosine(λ, θ̂);
//! * ensemble: mean of the two ordinal positions.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acoustic::{topic_posterior, AcousticGMM, TopicPosterior};
use crate::affective::AffectiveGMM;
use crate::error::{Error, Result};
use crate::features::SegmentMatrix;
use crate::gaussian::{kl2, CovarianceD, Gaussian2};
use crate::predict::{predict_mixture, reduce_to_gaussian};

/// Default number of folding-in EM updates.
pub const DEFAULT_FOLD_IN_ITERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Query {
    Point([f64; 2]),
    Gaussian(Gaussian2),
}

impl Query {
    pub fn point(v: f64, a: f64) -> Result<Self> {
        if !v.is_finite() || !a.is_finite() {
            return Err(Error::InvalidInput("query point must be finite".into()));
        }
        Ok(Query::Point([v, a]))
    }

    pub fn center(&self) -> [f64; 2] {
        match self {
            Query::Point(p) => *p,
            Query::Gaussian(g) => g.mean(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub clip_id: String,
    /// θ̂ renormalized over surviving topics; length K.
    pub theta: Vec<f64>,
    pub reduced: Gaussian2,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryIndex {
    pub entries: Vec<IndexEntry>,
    pub model_ref: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexBuild {
    pub index: LibraryIndex,
    /// Clips that could not be indexed, with the reason.
    pub skipped: Vec<(String, Error)>,
}

fn push_f64s(h: &mut Sha256, v: &[f64]) {
    for x in v {
        h.update(x.to_le_bytes());
    }
}

/// Short content hash identifying an (acoustic, affective) model pair.
pub fn model_fingerprint(acoustic: Option<&AcousticGMM>, affective: &AffectiveGMM) -> String {
    let mut h = Sha256::new();
    if let Some(a) = acoustic {
        h.update((a.k() as u64).to_le_bytes());
        for c in a.components() {
            push_f64s(&mut h, c.mean());
            match c.covariance() {
                CovarianceD::Diagonal(v) => push_f64s(&mut h, v),
                CovarianceD::Full { matrix, .. } => push_f64s(&mut h, matrix),
            }
        }
    }
    h.update((affective.k_original() as u64).to_le_bytes());
    for c in affective.components() {
        h.update((c.topic as u64).to_le_bytes());
        push_f64s(&mut h, &c.gaussian.mean());
        push_f64s(&mut h, &c.gaussian.cov().to_array());
    }
    let digest = h.finalize();
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

impl LibraryIndex {
    pub fn empty(model_ref: impl Into<String>) -> Self {
        Self {
            entries: Vec::new(),
            model_ref: model_ref.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, clip_id: &str) -> Option<&IndexEntry> {
        self.entries.iter().find(|e| e.clip_id == clip_id)
    }

    /// Indexes precomputed topic posteriors. Duplicate ids are an error;
    /// clips the model cannot predict are skipped and reported.
    pub fn from_posteriors(
        posteriors: &[TopicPosterior],
        affective: &AffectiveGMM,
        model_ref: impl Into<String>,
    ) -> Result<IndexBuild> {
        let mut seen = BTreeSet::new();
        let mut entries = Vec::with_capacity(posteriors.len());
        let mut skipped = Vec::new();
        for p in posteriors {
            if !seen.insert(p.clip_id.clone()) {
                return Err(Error::DuplicateClip(p.clip_id.clone()));
            }
            match index_entry(&p.clip_id, &p.theta, affective) {
                Ok(e) => entries.push(e),
                Err(e) => skipped.push((p.clip_id.clone(), e)),
            }
        }
        Ok(IndexBuild {
            index: LibraryIndex {
                entries,
                model_ref: model_ref.into(),
            },
            skipped,
        })
    }

    /// Re-predicts every entry under another affective model (for example a
    /// user's adapted model), keeping θ̂.
    pub fn with_model(&self, affective: &AffectiveGMM, model_ref: impl Into<String>) -> Result<Self> {
        let entries = self
            .entries
            .iter()
            .map(|e| {
                let mut out = index_entry(&e.clip_id, &e.theta, affective)?;
                out.metadata = e.metadata.clone();
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            entries,
            model_ref: model_ref.into(),
        })
    }
}

fn index_entry(clip_id: &str, theta: &[f64], affective: &AffectiveGMM) -> Result<IndexEntry> {
    Ok(IndexEntry {
        clip_id: clip_id.to_string(),
        theta: affective.renormalize(theta)?,
        reduced: reduce_to_gaussian(theta, affective)?,
        metadata: BTreeMap::new(),
    })
}

pub fn build_index(clips: &[SegmentMatrix], acoustic: &AcousticGMM, affective: &AffectiveGMM) -> Result<IndexBuild> {
    if acoustic.k() != affective.k_original() {
        return Err(Error::ModelMismatch(format!(
            "acoustic K {} vs affective K {}",
            acoustic.k(),
            affective.k_original()
        )));
    }
    let mut seen = BTreeSet::new();
    let mut posteriors = Vec::with_capacity(clips.len());
    let mut skipped = Vec::new();
    for seg in clips {
        if !seen.insert(seg.clip_id.clone()) {
            return Err(Error::DuplicateClip(seg.clip_id.clone()));
        }
        match topic_posterior(seg, acoustic) {
            Ok(p) => posteriors.push(p),
            Err(e) => skipped.push((seg.clip_id.clone(), e)),
        }
    }
    let mut build = LibraryIndex::from_posteriors(
        &posteriors,
        affective,
        model_fingerprint(Some(acoustic), affective),
    )?;
    skipped.append(&mut build.skipped);
    build.skipped = skipped;
    Ok(build)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    EmotionPrediction,
    FoldingIn,
    Ensemble,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Larger scores rank higher.
    Descending,
    /// Smaller scores rank higher.
    Ascending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    #[default]
    SingleGaussian,
    FullMixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub clip_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub items: Vec<RankedItem>,
    pub method: Method,
    pub direction: Direction,
}

impl RankedList {
    fn sorted(mut items: Vec<RankedItem>, method: Method, direction: Direction) -> Self {
        items.sort_by(|a, b| {
            let ord = match direction {
                Direction::Descending => b.score.total_cmp(&a.score),
                Direction::Ascending => a.score.total_cmp(&b.score),
            };
            ord.then_with(|| a.clip_id.cmp(&b.clip_id))
        });
        Self {
            items,
            method,
            direction,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn clip_ids(&self) -> Vec<&str> {
        self.items.iter().map(|i| i.clip_id.as_str()).collect()
    }

    pub fn truncated(mut self, k: usize) -> Self {
        self.items.truncate(k);
        self
    }
}

/// Ranks by likelihood (point query) or KL2 distance (Gaussian query)
/// against each clip's predicted emotion distribution.
pub fn rank_emotion_prediction(
    query: &Query,
    index: &LibraryIndex,
    model: &AffectiveGMM,
    mode: MatchMode,
) -> Result<RankedList> {
    let mut items = Vec::with_capacity(index.len());
    for e in &index.entries {
        let score = match (query, mode) {
            (Query::Point(p), MatchMode::SingleGaussian) => e.reduced.log_pdf(*p),
            (Query::Point(p), MatchMode::FullMixture) => predict_mixture(&e.theta, model)?.log_pdf(*p),
            (Query::Gaussian(q), MatchMode::SingleGaussian) => kl2(q, &e.reduced),
            (Query::Gaussian(q), MatchMode::FullMixture) => {
                let w = model.renormalize(&e.theta)?;
                model
                    .components()
                    .iter()
                    .filter(|c| w[c.topic] > 0.0)
                    .map(|c| w[c.topic] * kl2(q, &c.gaussian))
                    .sum()
            }
        };
        items.push(RankedItem {
            clip_id: e.clip_id.clone(),
            score,
        });
    }
    let direction = match query {
        Query::Point(_) => Direction::Descending,
        Query::Gaussian(_) => Direction::Ascending,
    };
    Ok(RankedList::sorted(items, Method::EmotionPrediction, direction))
}

/// A query folded into topic space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoSong {
    pub lambda: Vec<f64>,
    /// Every component likelihood underflowed; λ was left uniform.
    pub far_from_model: bool,
}

/// Folds a query into a pseudo song by `iters` EM updates of λ starting
/// from uniform over surviving topics.
pub fn fold_in(query: &Query, model: &AffectiveGMM, iters: usize) -> Result<PseudoSong> {
    if iters == 0 {
        return Err(Error::InvalidInput("folding-in needs at least one iteration".into()));
    }
    let comps = model.components();
    // Per-component log-likelihood of the query; fixed across iterations.
    let loglik: Vec<f64> = comps
        .iter()
        .map(|c| match query {
            Query::Point(p) => c.gaussian.log_pdf(*p),
            Query::Gaussian(q) => -kl2(q, &c.gaussian),
        })
        .collect();
    let uniform = 1.0 / comps.len() as f64;
    let mut lambda = vec![0.0; model.k_original()];
    for c in comps {
        lambda[c.topic] = uniform;
    }
    if loglik.iter().all(|l| l.exp() == 0.0) {
        return Ok(PseudoSong {
            lambda,
            far_from_model: true,
        });
    }
    let mut local = vec![uniform; comps.len()];
    for _ in 0..iters {
        let terms: Vec<f64> = local
            .iter()
            .zip(&loglik)
            .map(|(l, ll)| if *l > 0.0 { l.ln() + ll } else { f64::NEG_INFINITY })
            .collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = terms.iter().map(|t| (t - max).exp()).collect();
        let total: f64 = w.iter().sum();
        local = w.into_iter().map(|x| x / total).collect();
    }
    for (c, l) in comps.iter().zip(local) {
        lambda[c.topic] = l;
    }
    Ok(PseudoSong {
        lambda,
        far_from_model: false,
    })
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Ranks clips by cosine similarity between the pseudo song and θ̂.
pub fn rank_folding_in(lambda: &[f64], index: &LibraryIndex) -> Result<RankedList> {
    if lambda.iter().all(|l| *l == 0.0) {
        return Err(Error::ZeroVector);
    }
    let items = index
        .entries
        .iter()
        .map(|e| {
            Ok(RankedItem {
                clip_id: e.clip_id.clone(),
                score: cosine(lambda, &e.theta)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankedList::sorted(items, Method::FoldingIn, Direction::Descending))
}

/// Averages 1-based ordinal positions from two rankings.
pub fn rank_ensemble(a: &RankedList, b: &RankedList) -> Result<RankedList> {
    let pos_b: BTreeMap<&str, usize> = b
        .items
        .iter()
        .enumerate()
        .map(|(i, it)| (it.clip_id.as_str(), i + 1))
        .collect();
    if pos_b.len() != b.len() || a.len() != b.len() {
        return Err(Error::ListMismatch("rankings cover different clips".into()));
    }
    let items = a
        .items
        .iter()
        .enumerate()
        .map(|(i, it)| {
            let pb = pos_b
                .get(it.clip_id.as_str())
                .ok_or_else(|| Error::ListMismatch(format!("clip {} missing", it.clip_id)))?;
            Ok(RankedItem {
                clip_id: it.clip_id.clone(),
                score: 0.5 * ((i + 1) as f64 + *pb as f64),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankedList::sorted(items, Method::Ensemble, Direction::Ascending))
}

/// A seeded random permutation of the library; score is the position.
pub fn rank_random(index: &LibraryIndex, seed: u64) -> RankedList {
    let mut ids: Vec<String> = index.entries.iter().map(|e| e.clip_id.clone()).collect();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let items = ids
        .into_iter()
        .enumerate()
        .map(|(i, clip_id)| RankedItem {
            clip_id,
            score: (i + 1) as f64,
        })
        .collect();
    RankedList {
        items,
        method: Method::Random,
        direction: Direction::Ascending,
    }
}

/// One-call ranking with the chosen method (folding-in uses the default
/// iteration count).
pub fn rank(query: &Query, index: &LibraryIndex, model: &AffectiveGMM, method: Method, mode: MatchMode) -> Result<RankedList> {
    match method {
        Method::EmotionPrediction => rank_emotion_prediction(query, index, model, mode),
        Method::FoldingIn => {
            let song = fold_in(query, model, DEFAULT_FOLD_IN_ITERS)?;
            rank_folding_in(&song.lambda, index)
        }
        Method::Ensemble => {
            let ep = rank_emotion_prediction(query, index, model, mode)?;
            let song = fold_in(query, model, DEFAULT_FOLD_IN_ITERS)?;
            rank_ensemble(&ep, &rank_folding_in(&song.lambda, index)?)
        }
        Method::Random => Ok(rank_random(index, 0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affective::Provenance;
    use crate::gaussian::SymMat2;

    fn g(mean: [f64; 2], cov: SymMat2) -> Gaussian2 {
        Gaussian2::new(mean, cov).unwrap()
    }

    fn separated_model() -> AffectiveGMM {
        let cov = SymMat2::scaled_identity(0.01);
        AffectiveGMM::from_gaussians(
            vec![g([-0.6, -0.6], cov), g([0.6, 0.6], cov), g([0.6, -0.6], cov)],
            Provenance::Uniform,
        )
        .unwrap()
    }

    fn entry(id: &str, mean: [f64; 2], theta: Vec<f64>) -> IndexEntry {
        IndexEntry {
            clip_id: id.into(),
            theta,
            reduced: g(mean, SymMat2::identity()),
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn empty_index_gives_empty_lists() {
        let idx = LibraryIndex::empty("m");
        let m = separated_model();
        let q = Query::Point([0.0, 0.0]);
        for method in [Method::EmotionPrediction, Method::FoldingIn, Method::Ensemble] {
            assert!(rank(&q, &idx, &m, method, MatchMode::SingleGaussian).unwrap().is_empty());
        }
    }

    #[test]
    fn point_at_clip_mean_ranks_it_first() {
        let idx = LibraryIndex {
            entries: vec![
                entry("a", [0.5, 0.5], vec![1.0, 0.0, 0.0]),
                entry("b", [-0.2, 0.1], vec![1.0, 0.0, 0.0]),
                entry("c", [0.0, -0.7], vec![1.0, 0.0, 0.0]),
            ],
            model_ref: "m".into(),
        };
        let r = rank_emotion_prediction(&Query::Point([-0.2, 0.1]), &idx, &separated_model(), MatchMode::SingleGaussian)
            .unwrap();
        assert_eq!(r.items[0].clip_id, "b");
        assert_eq!(r.direction, Direction::Descending);
    }

    #[test]
    fn gaussian_query_equal_to_clip_scores_zero() {
        let idx = LibraryIndex {
            entries: vec![entry("a", [0.5, 0.5], vec![1.0, 0.0, 0.0]), entry("b", [-0.2, 0.1], vec![1.0, 0.0, 0.0])],
            model_ref: "m".into(),
        };
        let q = Query::Gaussian(idx.entries[1].reduced);
        let r = rank_emotion_prediction(&q, &idx, &separated_model(), MatchMode::SingleGaussian).unwrap();
        assert_eq!(r.items[0].clip_id, "b");
        assert_eq!(r.items[0].score, 0.0);
        assert_eq!(r.direction, Direction::Ascending);
    }

    #[test]
    fn fold_in_cases() {
        let single = AffectiveGMM::from_gaussians(vec![Gaussian2::standard()], Provenance::Uniform).unwrap();
        assert_eq!(fold_in(&Query::Point([0.3, 0.3]), &single, 5).unwrap().lambda, vec![1.0]);

        let song = fold_in(&Query::Point([0.6, 0.6]), &separated_model(), 3).unwrap();
        assert!(song.lambda[1] > 0.99);
        assert!(!song.far_from_model);

        let twin = AffectiveGMM::from_gaussians(vec![Gaussian2::standard(), Gaussian2::standard()], Provenance::Uniform)
            .unwrap();
        for iters in [1, 3, 50] {
            assert_eq!(fold_in(&Query::Point([2.0, -1.0]), &twin, iters).unwrap().lambda, vec![0.5, 0.5]);
        }
        assert!(fold_in(&Query::Point([0.0, 0.0]), &twin, 0).is_err());
    }

    #[test]
    fn far_query_keeps_uniform() {
        let song = fold_in(&Query::Point([1e3, 1e3]), &separated_model(), 3).unwrap();
        assert!(song.far_from_model);
        assert_eq!(song.lambda, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn cosine_ranking_cases() {
        let idx = LibraryIndex {
            entries: vec![
                entry("a", [0.0, 0.0], vec![0.2, 0.8, 0.0]),
                entry("b", [0.0, 0.0], vec![0.0, 0.0, 1.0]),
                entry("c", [0.0, 0.0], vec![0.5, 0.5, 0.0]),
            ],
            model_ref: "m".into(),
        };
        let r = rank_folding_in(&[0.2, 0.8, 0.0], &idx).unwrap();
        assert_eq!(r.items[0].clip_id, "a");
        assert!((r.items[0].score - 1.0).abs() < 1e-15);
        assert_eq!(r.items[2].clip_id, "b");
        assert_eq!(r.items[2].score, 0.0);
        assert_eq!(rank_folding_in(&[0.0, 0.0, 0.0], &idx), Err(Error::ZeroVector));
    }

    fn list(ids: &[&str]) -> RankedList {
        RankedList {
            items: ids
                .iter()
                .enumerate()
                .map(|(i, id)| RankedItem {
                    clip_id: id.to_string(),
                    score: -(i as f64),
                })
                .collect(),
            method: Method::EmotionPrediction,
            direction: Direction::Descending,
        }
    }

    #[test]
    fn ensemble_rules() {
        let a = list(&["x", "y", "z"]);
        assert_eq!(rank_ensemble(&a, &a).unwrap().clip_ids(), vec!["x", "y", "z"]);

        let r = rank_ensemble(&list(&["y", "x"]), &list(&["x", "y"])).unwrap();
        assert_eq!(r.clip_ids(), vec!["x", "y"]);
        assert_eq!(r.items[0].score, 1.5);
        assert_eq!(r.items[1].score, 1.5);

        // positions: a → p,q,r,s,t ; b → t,s,p,r,q
        // p: (1+3)/2=2, q: (2+5)/2=3.5, r: (3+4)/2=3.5, s: (4+2)/2=3, t: (5+1)/2=3
        let r = rank_ensemble(&list(&["p", "q", "r", "s", "t"]), &list(&["t", "s", "p", "r", "q"])).unwrap();
        assert_eq!(r.clip_ids(), vec!["p", "s", "t", "q", "r"]);
        let scores: Vec<f64> = r.items.iter().map(|i| i.score).collect();
        assert_eq!(scores, vec![2.0, 3.0, 3.0, 3.5, 3.5]);

        assert!(matches!(
            rank_ensemble(&list(&["a", "b"]), &list(&["a", "c"])),
            Err(Error::ListMismatch(_))
        ));
        assert!(matches!(
            rank_ensemble(&list(&["a", "b"]), &list(&["a"])),
            Err(Error::ListMismatch(_))
        ));
    }

    #[test]
    fn duplicate_clip_rejected() {
        let m = separated_model();
        let p = TopicPosterior::new("a", vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(
            LibraryIndex::from_posteriors(&[p.clone(), p], &m, "r").unwrap_err(),
            Error::DuplicateClip("a".into())
        );
    }

    #[test]
    fn random_ranking_is_seeded_permutation() {
        let idx = LibraryIndex {
            entries: (0..10).map(|i| entry(&format!("c{i}"), [0.0, 0.0], vec![1.0, 0.0, 0.0])).collect(),
            model_ref: "m".into(),
        };
        let a = rank_random(&idx, 4);
        assert_eq!(a, rank_random(&idx, 4));
        let mut ids = a.clip_ids();
        ids.sort();
        assert_eq!(ids.len(), 10);
        assert_ne!(a.clip_ids(), rank_random(&idx, 5).clip_ids());
    }

    #[test]
    fn query_json_shapes() {
        let q: Query = serde_json::from_str(r#"{"point":[0.1,-0.2]}"#).unwrap();
        assert_eq!(q, Query::Point([0.1, -0.2]));
        let q: Query = serde_json::from_str(r#"{"gaussian":{"mean":[0.1,0.2],"cov":[0.1,0.0,0.1]}}"#).unwrap();
        assert!(matches!(q, Query::Gaussian(_)));
        assert!(serde_json::from_str::<Query>(r#"{"gaussian":{"mean":[0,0],"cov":[0.1,0.5,0.1]}}"#).is_err());
    }
}

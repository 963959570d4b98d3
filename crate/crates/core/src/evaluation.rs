//! Metrics, the cross-validation and retrieval harnesses, query generation,
//! and a synthetic generative corpus with known ground truth.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_4, PI};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::acoustic::TopicPosterior;
use crate::affective::{initialize_affective, learn_from, learn_hybrid, AffectiveGMM, LearnConfig, Provenance};
use crate::annotation::{
    fit_clip_model, mean_and_scatter, priors_for_mode, regularize, Annotation, ClipAnnotationModel, EmotionCorpus,
};
use crate::error::{Error, Result};
use crate::features::FrameMatrix;
use crate::gaussian::{kl2, Gaussian2, SymMat2};
use crate::par_map;
use crate::personalize::{adapt_incrementally, AdaptConfig, AdaptSchedule, PersonalDatum};
use crate::predict::reduce_to_gaussian;
use crate::retrieval::{
    fold_in, rank_emotion_prediction, rank_ensemble, rank_folding_in, rank_random, LibraryIndex, MatchMode, Method,
    Query, RankedList, DEFAULT_FOLD_IN_ITERS,
};

pub const DEFAULT_C_MIN: f64 = 0.01;
pub const DEFAULT_C_MAX: f64 = 0.25;
pub const DEFAULT_CUTOFFS: [usize; 4] = [5, 10, 20, 30];

/// Per-clip annotation Gaussians (a_i, B_i), keyed by clip id.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub models: BTreeMap<String, ClipAnnotationModel>,
}

impl GroundTruth {
    pub fn from_corpus(corpus: &EmotionCorpus) -> Result<Self> {
        let models = corpus
            .clips
            .iter()
            .map(|c| Ok((c.clip_id.clone(), fit_clip_model(c)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self { models })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

fn paired<'a>(
    preds: &'a BTreeMap<String, Gaussian2>,
    truth: &'a GroundTruth,
) -> Result<Vec<(&'a Gaussian2, &'a ClipAnnotationModel)>> {
    if preds.is_empty() {
        return Err(Error::EmptyInput("no predictions".into()));
    }
    if preds.len() != truth.models.len() || preds.keys().zip(truth.models.keys()).any(|(a, b)| a != b) {
        return Err(Error::ListMismatch("prediction and truth clip sets differ".into()));
    }
    Ok(preds.values().zip(truth.models.values()).collect())
}

/// Average KL2 between truth and prediction.
pub fn metric_akl(preds: &BTreeMap<String, Gaussian2>, truth: &GroundTruth) -> Result<f64> {
    let pairs = paired(preds, truth)?;
    Ok(pairs.iter().map(|(p, t)| kl2(&t.gaussian, p)).sum::<f64>() / pairs.len() as f64)
}

/// Average Euclidean distance between truth and predicted means.
pub fn metric_aed(preds: &BTreeMap<String, Gaussian2>, truth: &GroundTruth) -> Result<f64> {
    let pairs = paired(preds, truth)?;
    Ok(pairs.iter().map(|(p, t)| dist(p.mean(), t.mean())).sum::<f64>() / pairs.len() as f64)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn metric_r2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::ListMismatch(format!("{} predictions for {} values", pred.len(), truth.len())));
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput("no values".into()));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::DegenerateTruth);
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, y)| (p - y).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Average likelihood of each ground-truth point under its prediction.
pub fn metric_alh(preds: &[Gaussian2], truth_points: &[[f64; 2]]) -> Result<f64> {
    if preds.len() != truth_points.len() {
        return Err(Error::ListMismatch(format!(
            "{} predictions for {} points",
            preds.len(),
            truth_points.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput("no predictions".into()));
    }
    Ok(preds.iter().zip(truth_points).map(|(g, e)| g.pdf(*e)).sum::<f64>() / preds.len() as f64)
}

fn discount(position: usize) -> f64 {
    if position <= 1 {
        1.0
    } else {
        1.0 / (position as f64).log2()
    }
}

/// NDCG at cutoff `p`. The ideal ordering is computed over every item in
/// the list. When every relevance is zero the score is 1.
pub fn metric_ndcg(ranked: &RankedList, relevance: &BTreeMap<String, f64>, p: usize) -> Result<f64> {
    if p == 0 || p > ranked.len() {
        return Err(Error::InvalidCutoff {
            cutoff: p,
            len: ranked.len(),
        });
    }
    let rel = ranked
        .items
        .iter()
        .map(|it| match relevance.get(&it.clip_id) {
            Some(r) if *r >= 0.0 && r.is_finite() => Ok(*r),
            Some(r) => Err(Error::InvalidInput(format!("relevance {r} for {}", it.clip_id))),
            None => Err(Error::ListMismatch(format!("no relevance for {}", it.clip_id))),
        })
        .collect::<Result<Vec<f64>>>()?;
    let dcg = |r: &[f64]| -> f64 { r.iter().take(p).enumerate().map(|(i, x)| x * discount(i + 1)).sum() };
    let mut ideal = rel.clone();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let z = dcg(&ideal);
    if z == 0.0 {
        return Ok(1.0);
    }
    Ok((dcg(&rel) / z).min(1.0))
}

/// `n` points drawn uniformly from [−1, 1]².
pub fn generate_point_queries(n: usize, seed: u64) -> Result<Vec<Query>> {
    if n == 0 {
        return Err(Error::InvalidCount("at least one query is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| Query::Point([rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]))
        .collect())
}

/// Isotropic query variance, shrinking linearly with distance from the
/// origin (normalized by √2).
pub fn query_variance(e: [f64; 2], c_min: f64, c_max: f64) -> f64 {
    let d = (e[0].hypot(e[1]) / 2f64.sqrt()).min(1.0);
    c_min + (c_max - c_min) * (1.0 - d)
}

pub fn pointify_to_gaussian_queries(points: &[Query], c_min: f64, c_max: f64) -> Result<Vec<Query>> {
    if !(c_min > 0.0 && c_min < c_max && c_max.is_finite()) {
        return Err(Error::InvalidInput(format!("need 0 < c_min < c_max, got {c_min}, {c_max}")));
    }
    points
        .iter()
        .map(|q| match q {
            Query::Point(e) => Ok(Query::Gaussian(Gaussian2::new(
                *e,
                SymMat2::scaled_identity(query_variance(*e, c_min, c_max)),
            )?)),
            Query::Gaussian(_) => Err(Error::InvalidQueryKind("expected a point query".into())),
        })
        .collect()
}

/// Parameters of the synthetic generative corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub true_affective: AffectiveGMM,
    pub dirichlet_alpha: f64,
    pub clips: usize,
    /// Inclusive range of annotators per clip.
    pub subjects_per_clip: (usize, usize),
    pub seed: u64,
}

impl SyntheticSpec {
    /// `k` isotropic components with standard deviation `sigma`, means
    /// evenly spaced on a circle of the given radius (for k = 4 and radius
    /// 0.5·√2 the means sit at (±0.5, ±0.5)).
    pub fn ring(k: usize, radius: f64, sigma: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidCount("k must be positive".into()));
        }
        let cov = SymMat2::scaled_identity(sigma * sigma);
        let gaussians = (0..k)
            .map(|j| {
                let t = FRAC_PI_4 + 2.0 * PI * j as f64 / k as f64;
                let mean = if k == 1 { [0.0, 0.0] } else { [radius * t.cos(), radius * t.sin()] };
                Gaussian2::new(mean, cov)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            true_affective: AffectiveGMM::from_gaussians(gaussians, Provenance::Uniform)?,
            dirichlet_alpha: 0.3,
            clips: 200,
            subjects_per_clip: (20, 20),
            seed: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.subjects_per_clip;
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return Err(Error::InvalidInput("dirichlet_alpha must be positive".into()));
        }
        if self.clips == 0 || lo == 0 || hi < lo {
            return Err(Error::InvalidCount("clips and subjects per clip must be positive".into()));
        }
        if !self.true_affective.removed_topics().is_empty() {
            return Err(Error::InvalidInput("true model must keep every topic".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: EmotionCorpus,
    /// True θ per clip, sorted by clip id.
    pub posteriors: Vec<TopicPosterior>,
    pub truth: AffectiveGMM,
}

/// Clip ids are zero-padded so lexical and numeric order agree.
pub fn synthetic_clip_id(i: usize) -> String {
    format!("clip{i:04}")
}

/// Symmetric Dirichlet draw computed in log space, so tiny concentrations
/// give near-one-hot vectors instead of all-zero underflow.
fn sample_dirichlet(k: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let boosted = Gamma::new(alpha + 1.0, 1.0).expect("positive shape");
    let logs: Vec<f64> = (0..k)
        .map(|_| {
            let g: f64 = boosted.sample(rng);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            g.ln() + u.ln() / alpha
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn sample_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn standard_normal2(rng: &mut ChaCha8Rng) -> [f64; 2] {
    [StandardNormal.sample(rng), StandardNormal.sample(rng)]
}

/// Draws θ ~ Dirichlet(α·1) per clip and each annotation from the
/// θ-weighted true mixture.
pub fn synthesize_corpus(shape: &SyntheticSpec) -> Result<SyntheticCorpus> {
    shape.validate()?;
    let k = shape.true_affective.k_original();
    let comps = shape.true_affective.components();
    let mut rng = ChaCha8Rng::seed_from_u64(shape.seed);
    let mut annotations = Vec::new();
    let mut posteriors = Vec::with_capacity(shape.clips);
    for i in 0..shape.clips {
        let id = synthetic_clip_id(i);
        let theta = sample_dirichlet(k, shape.dirichlet_alpha, &mut rng);
        let n = rng.random_range(shape.subjects_per_clip.0..=shape.subjects_per_clip.1);
        for s in 0..n {
            let topic = sample_index(&theta, &mut rng);
            let e = comps[topic].gaussian.sample_with(standard_normal2(&mut rng));
            annotations.push(Annotation::new(&id, format!("s{s:02}"), e)?);
        }
        posteriors.push(TopicPosterior::new(id, theta)?);
    }
    Ok(SyntheticCorpus {
        corpus: EmotionCorpus::from_annotations(annotations),
        posteriors,
        truth: shape.true_affective.clone(),
    })
}

/// Frame-level features whose acoustic structure follows each clip's θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSynthSpec {
    pub dim: usize,
    pub frames_per_clip: usize,
    /// Consecutive frames drawn from the same topic.
    pub run_length: usize,
    /// Distance of each topic center from the origin.
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for FeatureSynthSpec {
    fn default() -> Self {
        Self {
            dim: 4,
            frames_per_clip: 64,
            run_length: 16,
            separation: 4.0,
            noise: 1.0,
            seed: 0,
        }
    }
}

/// Topic `k` is centered on ±`separation` along axis `k mod dim`.
pub fn synthesize_features(posteriors: &[TopicPosterior], shape: &FeatureSynthSpec) -> Result<Vec<FrameMatrix>> {
    if shape.dim == 0 || shape.frames_per_clip == 0 || shape.run_length == 0 {
        return Err(Error::InvalidCount("feature dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(shape.seed);
    posteriors
        .iter()
        .map(|p| {
            if p.k() > 2 * shape.dim {
                return Err(Error::InvalidInput(format!(
                    "{} topics need at least {} feature dimensions",
                    p.k(),
                    p.k().div_ceil(2)
                )));
            }
            let mut frames = Vec::with_capacity(shape.frames_per_clip);
            let mut topic = 0;
            for f in 0..shape.frames_per_clip {
                if f % shape.run_length == 0 {
                    topic = sample_index(&p.theta, &mut rng);
                }
                let mut x: Vec<f64> = (0..shape.dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        shape.noise * z
                    })
                    .collect();
                let sign = if topic < shape.dim { 1.0 } else { -1.0 };
                x[topic % shape.dim] += sign * shape.separation;
                frames.push(x);
            }
            FrameMatrix::new(p.clip_id.clone(), frames)
        })
        .collect()
}

/// Minimum-cost assignment of each `truth` mean to a distinct `learned`
/// mean by exhaustive dynamic programming over subsets. Returns
/// `(truth_index, learned_index, distance)` per truth mean.
pub fn match_components(truth: &[[f64; 2]], learned: &[[f64; 2]]) -> Result<Vec<(usize, usize, f64)>> {
    let (n, m) = (truth.len(), learned.len());
    if n == 0 {
        return Err(Error::EmptyInput("no components to match".into()));
    }
    if n > m {
        return Err(Error::InsufficientData(format!("{n} true components but only {m} learned")));
    }
    if m > 20 {
        return Err(Error::InvalidInput("matching supports at most 20 components".into()));
    }
    let full = 1usize << m;
    let mut cost = vec![f64::INFINITY; full];
    let mut choice = vec![usize::MAX; full];
    cost[0] = 0.0;
    for mask in 0..full {
        let i = mask.count_ones() as usize;
        if i >= n || !cost[mask].is_finite() {
            continue;
        }
        for j in (0..m).filter(|j| mask & (1 << j) == 0) {
            let next = mask | (1 << j);
            let c = cost[mask] + dist(truth[i], learned[j]);
            if c < cost[next] {
                cost[next] = c;
                choice[next] = j;
            }
        }
    }
    let best = (0..full)
        .filter(|m| m.count_ones() as usize == n)
        .min_by(|a, b| cost[*a].total_cmp(&cost[*b]))
        .expect("at least one full assignment");
    let mut out = vec![(0, 0, 0.0); n];
    let mut mask = best;
    for i in (0..n).rev() {
        let j = choice[mask];
        out[i] = (i, j, dist(truth[i], learned[j]));
        mask &= !(1 << j);
    }
    Ok(out)
}

/// Which affective model the cross-validation trains per fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    #[default]
    Uniform,
    AnnoPrior,
    Hybrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    pub train: TrainMode,
    pub learn: LearnConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 3,
            seed: 0,
            train: TrainMode::Uniform,
            learn: LearnConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub akl: f64,
    pub aed: f64,
    pub r2_valence: f64,
    pub r2_arousal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldDiagnostics {
    pub fold: usize,
    pub train_clips: usize,
    pub test_clips: usize,
    pub lbound: Vec<f64>,
    pub removed_topics: Vec<usize>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub clips: usize,
    pub rows: Vec<MetricRow>,
    pub diagnostics: Vec<FoldDiagnostics>,
}

impl CvReport {
    pub fn row(&self, method: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{}-fold cross-validation over {} clips\n", self.folds, self.clips);
        let _ = writeln!(s, "{:<10} {:>8} {:>8} {:>10} {:>10}", "method", "AKL", "AED", "R2 val", "R2 aro");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} {:>8.4} {:>8.4} {:>10.4} {:>10.4}",
                r.method, r.akl, r.aed, r.r2_valence, r.r2_arousal
            );
        }
        s
    }
}

/// Seeded partition of sorted clip ids into `folds` groups.
pub fn partition_folds(clip_ids: &[String], folds: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if folds < 2 {
        return Err(Error::InvalidCount("need at least two folds".into()));
    }
    if clip_ids.len() < folds {
        return Err(Error::InsufficientData(format!("{} clips for {folds} folds", clip_ids.len())));
    }
    let mut ids = clip_ids.to_vec();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (i, id) in ids.into_iter().enumerate() {
        out[i % folds].push(id);
    }
    for f in &mut out {
        f.sort();
    }
    Ok(out)
}

fn train_fold(
    thetas: &BTreeMap<String, TopicPosterior>,
    corpus: &EmotionCorpus,
    config: &CvConfig,
) -> Result<(AffectiveGMM, Vec<f64>, usize)> {
    match config.train {
        TrainMode::Hybrid => {
            let (m, tu, ta) = learn_hybrid(thetas, corpus, &config.learn)?;
            Ok((m, tu.lbound, tu.iterations.max(ta.iterations)))
        }
        mode => {
            let learn = LearnConfig {
                mode: if mode == TrainMode::AnnoPrior {
                    crate::annotation::PriorMode::AnnoPrior
                } else {
                    crate::annotation::PriorMode::Uniform
                },
                ..config.learn.clone()
            };
            let priors = priors_for_mode(corpus, learn.mode)?;
            let init = initialize_affective(thetas, corpus)?;
            let (m, t) = learn_from(init, thetas, corpus, &priors, &learn)?;
            Ok((m, t.lbound, t.iterations))
        }
    }
}

/// Global mean and regularized covariance of every annotation.
pub fn base_rate_gaussian(corpus: &EmotionCorpus) -> Result<Gaussian2> {
    let pts: Vec<[f64; 2]> = corpus.annotations().map(|a| a.e).collect();
    if pts.is_empty() {
        return Err(Error::EmptyInput("no annotations".into()));
    }
    let (m, s) = mean_and_scatter(&pts);
    Gaussian2::new(m, regularize(s))
}

fn score_row(method: &str, preds: &BTreeMap<String, Gaussian2>, truth: &GroundTruth) -> Result<MetricRow> {
    let pv: Vec<f64> = preds.values().map(|g| g.mean()[0]).collect();
    let pa: Vec<f64> = preds.values().map(|g| g.mean()[1]).collect();
    let tv: Vec<f64> = truth.models.values().map(|m| m.mean()[0]).collect();
    let ta: Vec<f64> = truth.models.values().map(|m| m.mean()[1]).collect();
    Ok(MetricRow {
        method: method.to_string(),
        akl: metric_akl(preds, truth)?,
        aed: metric_aed(preds, truth)?,
        r2_valence: metric_r2(&pv, &tv)?,
        r2_arousal: metric_r2(&pa, &ta)?,
    })
}

/// K-fold cross-validation with metrics computed once over the pooled
/// held-out predictions. Rows: `aeg`, `base_rate`, and `oracle` when a true
/// model is supplied (it predicts from the same θ with the true mixture).
pub fn run_cross_validation(
    corpus: &EmotionCorpus,
    thetas: &BTreeMap<String, TopicPosterior>,
    config: &CvConfig,
    oracle: Option<&AffectiveGMM>,
) -> Result<CvReport> {
    let ids: Vec<String> = corpus.clips.iter().map(|c| c.clip_id.clone()).collect();
    for id in &ids {
        if !thetas.contains_key(id) {
            return Err(Error::MissingPosterior(id.clone()));
        }
    }
    let folds = partition_folds(&ids, config.folds, config.seed)?;
    let fold_results = par_map(&folds, |test| -> Result<_> {
        let train = corpus.subset(|id| test.binary_search_by(|t| t.as_str().cmp(id)).is_err());
        let (model, lbound, iterations) = train_fold(thetas, &train, config)?;
        let base = base_rate_gaussian(&train)?;
        let mut aeg = Vec::with_capacity(test.len());
        for id in test {
            aeg.push((id.clone(), reduce_to_gaussian(&thetas[id].theta, &model)?));
        }
        let diag = FoldDiagnostics {
            fold: 0,
            train_clips: train.len(),
            test_clips: test.len(),
            lbound,
            removed_topics: model.removed_topics().iter().copied().collect(),
            iterations,
        };
        Ok((aeg, base, diag))
    });

    let mut aeg = BTreeMap::new();
    let mut base = BTreeMap::new();
    let mut diagnostics = Vec::with_capacity(folds.len());
    for (fold, (test, res)) in folds.iter().zip(fold_results).enumerate() {
        let (preds, b, mut diag) = res?;
        aeg.extend(preds);
        for id in test {
            base.insert(id.clone(), b);
        }
        diag.fold = fold;
        diagnostics.push(diag);
    }

    let truth = GroundTruth::from_corpus(corpus)?;
    let mut rows = vec![score_row("aeg", &aeg, &truth)?, score_row("base_rate", &base, &truth)?];
    if let Some(true_model) = oracle {
        let preds = ids
            .iter()
            .map(|id| Ok((id.clone(), reduce_to_gaussian(&thetas[id].theta, true_model)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        rows.push(score_row("oracle", &preds, &truth)?);
    }
    Ok(CvReport {
        folds: folds.len(),
        clips: ids.len(),
        rows,
        diagnostics,
    })
}

/// Relevance of each clip for a query under the ground truth: density of
/// the point, or exp(−KL2) for a Gaussian query.
pub fn query_relevance(query: &Query, truth: &GroundTruth) -> BTreeMap<String, f64> {
    truth
        .models
        .iter()
        .map(|(id, m)| {
            let r = match query {
                Query::Point(p) => m.gaussian.pdf(*p),
                Query::Gaussian(g) => (-kl2(g, &m.gaussian)).exp(),
            };
            (id.clone(), r)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub method: Method,
    /// Mean NDCG per cutoff, aligned with `RetrievalReport::cutoffs`.
    pub ndcg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub queries: usize,
    pub cutoffs: Vec<usize>,
    pub rows: Vec<RetrievalRow>,
}

impl RetrievalReport {
    pub fn mean_ndcg(&self, method: Method, cutoff: usize) -> Option<f64> {
        let c = self.cutoffs.iter().position(|p| *p == cutoff)?;
        self.rows.iter().find(|r| r.method == method).map(|r| r.ndcg[c])
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("mean NDCG over {} queries\n", self.queries);
        let _ = write!(s, "{:<20}", "method");
        for p in &self.cutoffs {
            let _ = write!(s, " {:>8}", format!("@{p}"));
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{:<20}", format!("{:?}", r.method));
            for v in &r.ndcg {
                let _ = write!(s, " {v:>8.4}");
            }
            s.push('\n');
        }
        s
    }
}

/// Mean NDCG@P over a query set for emotion prediction, folding-in, their
/// ensemble, and a random permutation seeded per query index.
pub fn run_retrieval_eval(
    index: &LibraryIndex,
    model: &AffectiveGMM,
    queries: &[Query],
    truth: &GroundTruth,
    cutoffs: &[usize],
    mode: MatchMode,
    seed: u64,
) -> Result<RetrievalReport> {
    if queries.is_empty() {
        return Err(Error::InvalidCount("no queries".into()));
    }
    let mut index_ids: Vec<&str> = index.entries.iter().map(|e| e.clip_id.as_str()).collect();
    index_ids.sort_unstable();
    if !index_ids.iter().copied().eq(truth.models.keys().map(String::as_str)) {
        return Err(Error::ListMismatch("index and truth cover different clips".into()));
    }
    if let Some(p) = cutoffs.iter().find(|p| **p == 0 || **p > index.len()) {
        return Err(Error::InvalidCutoff {
            cutoff: *p,
            len: index.len(),
        });
    }
    let methods = [Method::EmotionPrediction, Method::FoldingIn, Method::Ensemble, Method::Random];
    let numbered: Vec<(usize, &Query)> = queries.iter().enumerate().collect();
    let per_query = par_map(&numbered, |(qi, q)| -> Result<Vec<Vec<f64>>> {
        let rel = query_relevance(q, truth);
        let ep = rank_emotion_prediction(q, index, model, mode)?;
        let song = fold_in(q, model, DEFAULT_FOLD_IN_ITERS)?;
        let fi = rank_folding_in(&song.lambda, index)?;
        let en = rank_ensemble(&ep, &fi)?;
        let rnd = rank_random(index, seed.wrapping_add(*qi as u64));
        [ep, fi, en, rnd]
            .iter()
            .map(|list| cutoffs.iter().map(|p| metric_ndcg(list, &rel, *p)).collect())
            .collect()
    });
    let mut sums = vec![vec![0.0; cutoffs.len()]; methods.len()];
    for q in per_query {
        for (m, scores) in q?.into_iter().enumerate() {
            for (c, v) in scores.into_iter().enumerate() {
                sums[m][c] += v;
            }
        }
    }
    let n = queries.len() as f64;
    Ok(RetrievalReport {
        queries: queries.len(),
        cutoffs: cutoffs.to_vec(),
        rows: methods
            .iter()
            .zip(sums)
            .map(|(m, s)| RetrievalRow {
                method: *m,
                ndcg: s.into_iter().map(|x| x / n).collect(),
            })
            .collect(),
    })
}

/// Accuracy of a model on one user's held-out data after `n` adaptation
/// samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub aed: f64,
    pub alh: f64,
}

fn score_user(model: &AffectiveGMM, eval: &[PersonalDatum], n: usize) -> Result<CurvePoint> {
    let preds = eval
        .iter()
        .map(|d| reduce_to_gaussian(&d.theta.theta, model))
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<[f64; 2]> = eval.iter().map(|d| d.e).collect();
    let aed = preds.iter().zip(&points).map(|(g, e)| dist(g.mean(), *e)).sum::<f64>() / eval.len() as f64;
    Ok(CurvePoint {
        n,
        aed,
        alh: metric_alh(&preds, &points)?,
    })
}

/// Scores the background model and then the model after each batch. The
/// first point has `n = 0`.
pub fn personalization_curve(
    background: &AffectiveGMM,
    batches: &[Vec<PersonalDatum>],
    eval: &[PersonalDatum],
    config: &AdaptConfig,
    schedule: AdaptSchedule,
) -> Result<Vec<CurvePoint>> {
    if eval.is_empty() {
        return Err(Error::EmptyInput("no evaluation data".into()));
    }
    let models = adapt_incrementally(background, batches, config, schedule)?;
    let mut out = vec![score_user(background, eval, 0)?];
    let mut n = 0;
    for (m, b) in models.iter().zip(batches) {
        n += b.len();
        out.push(score_user(m, eval, n)?);
    }
    Ok(out)
}

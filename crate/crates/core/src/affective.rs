//! The affective GMM and its EM learner.
//!
//! Component `k` of the affective GMM is the valence–arousal Gaussian of
//! acoustic topic `k`. Learning maximizes the γ-weighted lower bound
//!
//! ```text
//! L_bound = Σ_i Σ_j γ_ij · log Σ_k θ_ik · N(e_ij; μ_k, Σ_k)
//! ```
//!
//! by EM with the clip topic posteriors θ held fixed. Components whose
//! updated covariance is not positive definite are removed on the spot;
//! the remaining components keep their topic index.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::acoustic::TopicPosterior;
use crate::annotation::{regularize, mean_and_scatter, CorpusPriors, EmotionCorpus, PriorMode};
use crate::error::{Error, Result};
use crate::gaussian::{log_sum_exp, Gaussian2, SymMat2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Uniform,
    AnnoPrior,
    Hybrid,
    Adapted,
}

impl From<PriorMode> for Provenance {
    fn from(m: PriorMode) -> Self {
        match m {
            PriorMode::Uniform => Provenance::Uniform,
            PriorMode::AnnoPrior => Provenance::AnnoPrior,
        }
    }
}

/// One surviving affective component, tagged with its topic index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopicGaussian {
    pub topic: usize,
    pub gaussian: Gaussian2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AffectiveRepr", into = "AffectiveRepr")]
pub struct AffectiveGMM {
    components: Vec<TopicGaussian>,
    k_original: usize,
    removed: BTreeSet<usize>,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct AffectiveRepr {
    k_original: usize,
    provenance: Provenance,
    components: Vec<TopicGaussian>,
}

impl TryFrom<AffectiveRepr> for AffectiveGMM {
    type Error = Error;
    fn try_from(r: AffectiveRepr) -> Result<Self> {
        AffectiveGMM::new(r.k_original, r.components, r.provenance)
    }
}

impl From<AffectiveGMM> for AffectiveRepr {
    fn from(m: AffectiveGMM) -> Self {
        AffectiveRepr {
            k_original: m.k_original,
            provenance: m.provenance,
            components: m.components,
        }
    }
}

impl AffectiveGMM {
    /// Topics absent from `components` count as removed.
    pub fn new(k_original: usize, mut components: Vec<TopicGaussian>, provenance: Provenance) -> Result<Self> {
        if k_original == 0 {
            return Err(Error::InvalidInput("K must be at least 1".into()));
        }
        if components.is_empty() {
            return Err(Error::ModelCollapsed);
        }
        components.sort_by_key(|c| c.topic);
        for w in components.windows(2) {
            if w[0].topic == w[1].topic {
                return Err(Error::InvalidInput(format!("topic {} appears twice", w[0].topic)));
            }
        }
        if let Some(c) = components.iter().find(|c| c.topic >= k_original) {
            return Err(Error::InvalidInput(format!(
                "topic {} outside 0..{k_original}",
                c.topic
            )));
        }
        let present: BTreeSet<usize> = components.iter().map(|c| c.topic).collect();
        let removed = (0..k_original).filter(|k| !present.contains(k)).collect();
        Ok(Self {
            components,
            k_original,
            removed,
            provenance,
        })
    }

    /// A model with one Gaussian per topic, in order.
    pub fn from_gaussians(gaussians: Vec<Gaussian2>, provenance: Provenance) -> Result<Self> {
        let k = gaussians.len();
        Self::new(
            k,
            gaussians
                .into_iter()
                .enumerate()
                .map(|(topic, gaussian)| TopicGaussian { topic, gaussian })
                .collect(),
            provenance,
        )
    }

    pub fn k_original(&self) -> usize {
        self.k_original
    }

    pub fn components(&self) -> &[TopicGaussian] {
        &self.components
    }

    pub fn removed_topics(&self) -> &BTreeSet<usize> {
        &self.removed
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn with_provenance(mut self, p: Provenance) -> Self {
        self.provenance = p;
        self
    }

    pub fn component(&self, topic: usize) -> Option<&Gaussian2> {
        self.components
            .binary_search_by_key(&topic, |c| c.topic)
            .ok()
            .map(|i| &self.components[i].gaussian)
    }

    /// θ restricted to surviving topics and renormalized, as a full
    /// length-K vector with zeros on removed topics.
    pub fn renormalize(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.k_original {
            return Err(Error::DimensionMismatch {
                expected: self.k_original,
                got: theta.len(),
            });
        }
        let mass: f64 = self.components.iter().map(|c| theta[c.topic]).sum();
        if !(mass > 0.0) {
            return Err(Error::NoSupportingTopics);
        }
        let mut out = vec![0.0; self.k_original];
        for c in &self.components {
            out[c.topic] = theta[c.topic] / mass;
        }
        Ok(out)
    }

    /// Posterior over surviving components for one annotation, aligned with
    /// [`Self::components`], plus `log Σ_k θ_k N(e; μ_k, Σ_k)`. `theta` must
    /// already be renormalized.
    pub fn posterior(&self, theta: &[f64], e: [f64; 2]) -> (Vec<f64>, f64) {
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                let t = theta[c.topic];
                if t > 0.0 {
                    t.ln() + c.gaussian.log_pdf(e)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let lse = log_sum_exp(&logs);
        (logs.into_iter().map(|l| (l - lse).exp()).collect(), lse)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub max_iters: usize,
    pub min_rel_gain: f64,
    pub mode: PriorMode,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            max_iters: 9,
            min_rel_gain: 0.01,
            mode: PriorMode::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalEvent {
    /// M-step count at which the component failed.
    pub iteration: usize,
    pub topic: usize,
}

/// Diagnostics from one learning run. `lbound[0]` is the bound at the
/// initial parameters; `lbound[t]` follows the t-th M-step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LearnTrace {
    pub lbound: Vec<f64>,
    pub removals: Vec<RemovalEvent>,
    pub iterations: usize,
    pub converged: bool,
    /// Annotations skipped because their clip's θ has no mass on surviving
    /// topics.
    pub unsupported_annotations: usize,
}

/// Keyed lookup of topic posteriors, rejecting duplicate clip ids.
pub fn posterior_map(posteriors: Vec<TopicPosterior>) -> Result<BTreeMap<String, TopicPosterior>> {
    let mut map = BTreeMap::new();
    for p in posteriors {
        if map.contains_key(&p.clip_id) {
            return Err(Error::DuplicateClip(p.clip_id));
        }
        map.insert(p.clip_id.clone(), p);
    }
    Ok(map)
}

struct Item<'a> {
    theta: &'a [f64],
    e: [f64; 2],
    gamma: f64,
}

fn flatten<'a>(
    thetas: &'a BTreeMap<String, TopicPosterior>,
    corpus: &EmotionCorpus,
    priors: Option<&CorpusPriors>,
    k: usize,
) -> Result<Vec<Item<'a>>> {
    let mut items = Vec::with_capacity(corpus.annotation_count());
    for clip in &corpus.clips {
        let theta = thetas
            .get(&clip.clip_id)
            .ok_or_else(|| Error::MissingPosterior(clip.clip_id.clone()))?;
        if theta.k() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: theta.k(),
            });
        }
        let weights = match priors {
            Some(p) => {
                let w = p.gamma.get(&clip.clip_id).ok_or_else(|| {
                    Error::InvalidInput(format!("no annotation prior for clip {}", clip.clip_id))
                })?;
                if w.len() != clip.annotations.len() {
                    return Err(Error::ListMismatch(format!(
                        "prior for clip {} has {} weights for {} annotations",
                        clip.clip_id,
                        w.len(),
                        clip.annotations.len()
                    )));
                }
                Some(w)
            }
            None => None,
        };
        for (j, e) in clip.points().enumerate() {
            items.push(Item {
                theta: &theta.theta,
                e,
                gamma: weights.map_or(1.0, |w| w[j]),
            });
        }
    }
    Ok(items)
}

fn topic_count(thetas: &BTreeMap<String, TopicPosterior>, corpus: &EmotionCorpus) -> Result<usize> {
    let first = corpus
        .clips
        .first()
        .ok_or_else(|| Error::EmptyInput("empty corpus".into()))?;
    thetas
        .get(&first.clip_id)
        .map(TopicPosterior::k)
        .ok_or_else(|| Error::MissingPosterior(first.clip_id.clone()))
}

/// θ-weighted annotation mean per topic, with the global annotation
/// covariance for every component.
pub fn initialize_affective(
    thetas: &BTreeMap<String, TopicPosterior>,
    corpus: &EmotionCorpus,
) -> Result<AffectiveGMM> {
    let k = topic_count(thetas, corpus)?;
    let items = flatten(thetas, corpus, None, k)?;
    if items.is_empty() {
        return Err(Error::EmptyInput("corpus has no annotations".into()));
    }
    let points: Vec<[f64; 2]> = items.iter().map(|it| it.e).collect();
    let (global_mean, scatter) = mean_and_scatter(&points);
    let global_cov = regularize(scatter);
    let mut sums = vec![[0.0f64; 2]; k];
    let mut mass = vec![0.0f64; k];
    for it in &items {
        for t in 0..k {
            sums[t][0] += it.theta[t] * it.e[0];
            sums[t][1] += it.theta[t] * it.e[1];
            mass[t] += it.theta[t];
        }
    }
    let gaussians = (0..k)
        .map(|t| {
            let mean = if mass[t] > 0.0 {
                [sums[t][0] / mass[t], sums[t][1] / mass[t]]
            } else {
                global_mean
            };
            Gaussian2::new(mean, global_cov)
        })
        .collect::<Result<Vec<_>>>()?;
    AffectiveGMM::from_gaussians(gaussians, Provenance::Uniform)
}

/// Runs one E-step: responsibilities per item (aligned with the model's
/// components) and the bound value.
fn e_step(model: &AffectiveGMM, items: &[Item<'_>]) -> (Vec<Option<Vec<f64>>>, f64, usize) {
    let mut bound = 0.0;
    let mut skipped = 0;
    let resp = items
        .iter()
        .map(|it| match model.renormalize(it.theta) {
            Ok(theta) => {
                let (r, lse) = model.posterior(&theta, it.e);
                bound += it.gamma * lse;
                Some(r)
            }
            Err(_) => {
                skipped += 1;
                None
            }
        })
        .collect();
    (resp, bound, skipped)
}

/// γ-weighted mean/scatter update of every surviving component; returns
/// the updated components and the topics that failed the PD check.
fn m_step(
    model: &AffectiveGMM,
    items: &[Item<'_>],
    resp: &[Option<Vec<f64>>],
) -> (Vec<TopicGaussian>, Vec<usize>) {
    let mut kept = Vec::new();
    let mut failed = Vec::new();
    for (p, comp) in model.components().iter().enumerate() {
        let mut w = 0.0;
        let mut sum = [0.0; 2];
        for (it, r) in items.iter().zip(resp) {
            if let Some(r) = r {
                let g = it.gamma * r[p];
                w += g;
                sum[0] += g * it.e[0];
                sum[1] += g * it.e[1];
            }
        }
        let mean = [sum[0] / w, sum[1] / w];
        let mut scatter = SymMat2::zeros();
        for (it, r) in items.iter().zip(resp) {
            if let Some(r) = r {
                let d = [it.e[0] - mean[0], it.e[1] - mean[1]];
                scatter = scatter.add(&SymMat2::outer(d).scale(it.gamma * r[p]));
            }
        }
        match Gaussian2::new(mean, scatter.scale(1.0 / w)) {
            Ok(gaussian) if w > 0.0 => kept.push(TopicGaussian {
                topic: comp.topic,
                gaussian,
            }),
            _ => failed.push(comp.topic),
        }
    }
    (kept, failed)
}

/// Learns the affective GMM by EM on the lower bound.
pub fn learn_affective_gmm(
    thetas: &BTreeMap<String, TopicPosterior>,
    corpus: &EmotionCorpus,
    priors: &CorpusPriors,
    config: &LearnConfig,
) -> Result<(AffectiveGMM, LearnTrace)> {
    let init = initialize_affective(thetas, corpus)?;
    learn_from(init, thetas, corpus, priors, config)
}

/// Runs EM from a given starting model.
pub fn learn_from(
    init: AffectiveGMM,
    thetas: &BTreeMap<String, TopicPosterior>,
    corpus: &EmotionCorpus,
    priors: &CorpusPriors,
    config: &LearnConfig,
) -> Result<(AffectiveGMM, LearnTrace)> {
    if config.max_iters == 0 {
        return Err(Error::InvalidInput("max_iters must be at least 1".into()));
    }
    if !(config.min_rel_gain >= 0.0) {
        return Err(Error::InvalidInput("min_rel_gain must be nonnegative".into()));
    }
    if priors.mode != config.mode {
        return Err(Error::InvalidInput(format!(
            "priors computed for {:?} but config requests {:?}",
            priors.mode, config.mode
        )));
    }
    let k = init.k_original();
    let items = flatten(thetas, corpus, Some(priors), k)?;
    let provenance = Provenance::from(config.mode);
    let mut model = init.with_provenance(provenance);
    let mut trace = LearnTrace::default();

    let (mut resp, bound, skipped) = e_step(&model, &items);
    trace.lbound.push(bound);
    trace.unsupported_annotations = skipped;

    for iteration in 1..=config.max_iters {
        let (kept, failed) = m_step(&model, &items, &resp);
        if kept.is_empty() {
            return Err(Error::ModelCollapsed);
        }
        for topic in &failed {
            trace.removals.push(RemovalEvent {
                iteration,
                topic: *topic,
            });
        }
        model = AffectiveGMM::new(k, kept, provenance)?;
        let (r, bound, skipped) = e_step(&model, &items);
        resp = r;
        trace.unsupported_annotations = skipped;
        let prev = *trace.lbound.last().expect("bound recorded");
        trace.lbound.push(bound);
        trace.iterations = iteration;
        if failed.is_empty() {
            let gain = (bound - prev) / prev.abs().max(f64::MIN_POSITIVE);
            if gain < config.min_rel_gain {
                trace.converged = true;
                break;
            }
        }
    }
    Ok((model, trace))
}

/// Computes the priors for `config.mode` and learns.
pub fn learn_with_mode(
    thetas: &BTreeMap<String, TopicPosterior>,
    corpus: &EmotionCorpus,
    config: &LearnConfig,
) -> Result<(AffectiveGMM, LearnTrace)> {
    let priors = crate::annotation::priors_for_mode(corpus, config.mode)?;
    learn_affective_gmm(thetas, corpus, &priors, config)
}

/// Per topic: mean from `uniform`, covariance from `annoprior`. A topic
/// removed from either parent is removed from the result.
pub fn combine_hybrid(uniform: &AffectiveGMM, annoprior: &AffectiveGMM) -> Result<AffectiveGMM> {
    if uniform.k_original() != annoprior.k_original() {
        return Err(Error::ModelMismatch(format!(
            "K {} vs {}",
            uniform.k_original(),
            annoprior.k_original()
        )));
    }
    let components: Vec<TopicGaussian> = uniform
        .components()
        .iter()
        .filter_map(|u| {
            annoprior.component(u.topic).map(|a| TopicGaussian {
                topic: u.topic,
                gaussian: a.with_mean(u.gaussian.mean()),
            })
        })
        .collect();
    if components.is_empty() {
        return Err(Error::ModelCollapsed);
    }
    AffectiveGMM::new(uniform.k_original(), components, Provenance::Hybrid)
}

/// Learns both the Uniform and AnnoPrior variants and combines them.
pub fn learn_hybrid(
    thetas: &BTreeMap<String, TopicPosterior>,
    corpus: &EmotionCorpus,
    config: &LearnConfig,
) -> Result<(AffectiveGMM, LearnTrace, LearnTrace)> {
    let uni = LearnConfig {
        mode: PriorMode::Uniform,
        ..config.clone()
    };
    let ann = LearnConfig {
        mode: PriorMode::AnnoPrior,
        ..config.clone()
    };
    let (u, tu) = learn_with_mode(thetas, corpus, &uni)?;
    let (a, ta) = learn_with_mode(thetas, corpus, &ann)?;
    Ok((combine_hybrid(&u, &a)?, tu, ta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{compute_corpus_priors, AnnotatedClip, Annotation};

    fn clip(id: &str, pts: &[[f64; 2]]) -> AnnotatedClip {
        AnnotatedClip {
            clip_id: id.into(),
            annotations: pts
                .iter()
                .enumerate()
                .map(|(j, e)| Annotation::new(id, format!("u{j}"), *e).unwrap())
                .collect(),
        }
    }

    fn thetas(entries: &[(&str, Vec<f64>)]) -> BTreeMap<String, TopicPosterior> {
        posterior_map(
            entries
                .iter()
                .map(|(id, t)| TopicPosterior::new(*id, t.clone()).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn g(mean: [f64; 2], cov: SymMat2) -> Gaussian2 {
        Gaussian2::new(mean, cov).unwrap()
    }

    #[test]
    fn single_topic_closed_form() {
        let corpus = EmotionCorpus {
            clips: vec![
                clip("a", &[[0.1, 0.2], [0.3, -0.1], [0.0, 0.0]]),
                clip("b", &[[-0.5, 0.4], [-0.2, 0.6]]),
            ],
        };
        let th = thetas(&[("a", vec![1.0]), ("b", vec![1.0])]);
        let priors = compute_corpus_priors(&corpus).unwrap();
        let cfg = LearnConfig {
            mode: PriorMode::AnnoPrior,
            ..Default::default()
        };
        let (m, _) = learn_affective_gmm(&th, &corpus, &priors, &cfg).unwrap();
        let mut w = 0.0;
        let mut mu = [0.0; 2];
        for c in &corpus.clips {
            for (j, e) in c.points().enumerate() {
                let gm = priors.gamma[&c.clip_id][j];
                w += gm;
                mu[0] += gm * e[0];
                mu[1] += gm * e[1];
            }
        }
        mu = [mu[0] / w, mu[1] / w];
        let mut s = SymMat2::zeros();
        for c in &corpus.clips {
            for (j, e) in c.points().enumerate() {
                let gm = priors.gamma[&c.clip_id][j];
                s = s.add(&SymMat2::outer([e[0] - mu[0], e[1] - mu[1]]).scale(gm / w));
            }
        }
        let got = m.component(0).unwrap();
        assert!((got.mean()[0] - mu[0]).abs() < 1e-12);
        assert!((got.mean()[1] - mu[1]).abs() < 1e-12);
        let c = got.cov();
        assert!((c.xx - s.xx).abs() < 1e-12 && (c.xy - s.xy).abs() < 1e-12 && (c.yy - s.yy).abs() < 1e-12);
    }

    #[test]
    fn one_hot_topics_decouple() {
        let a = [[0.5, 0.5], [0.6, 0.4], [0.55, 0.6], [0.45, 0.52]];
        let b = [[-0.5, -0.5], [-0.7, -0.4], [-0.4, -0.6], [-0.52, -0.3]];
        let corpus = EmotionCorpus {
            clips: vec![clip("a", &a), clip("b", &b)],
        };
        let th = thetas(&[("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])]);
        let cfg = LearnConfig::default();
        let (m, _) = learn_with_mode(&th, &corpus, &cfg).unwrap();
        for (topic, pts) in [(0usize, &a[..]), (1, &b[..])] {
            let (mean, scatter) = mean_and_scatter(pts);
            let got = m.component(topic).unwrap();
            assert!((got.mean()[0] - mean[0]).abs() < 1e-12);
            assert!((got.mean()[1] - mean[1]).abs() < 1e-12);
            assert!((got.cov().xx - scatter.xx).abs() < 1e-12);
        }
    }

    #[test]
    fn initialization_cases() {
        let corpus = EmotionCorpus {
            clips: vec![clip("a", &[[0.2, 0.2], [0.4, 0.0]]), clip("b", &[[-0.6, 0.1]])],
        };
        let one_hot = thetas(&[("a", vec![1.0, 0.0, 0.0]), ("b", vec![0.0, 1.0, 0.0])]);
        let m = initialize_affective(&one_hot, &corpus).unwrap();
        assert!((m.component(0).unwrap().mean()[0] - 0.3).abs() < 1e-15);
        assert_eq!(m.component(1).unwrap().mean(), [-0.6, 0.1]);
        // topic 2 has no mass: global mean
        let gm = m.component(2).unwrap().mean();
        assert!((gm[0] - 0.0).abs() < 1e-15 && (gm[1] - 0.1).abs() < 1e-15);

        let flat = thetas(&[("a", vec![0.5, 0.5]), ("b", vec![0.5, 0.5])]);
        let m = initialize_affective(&flat, &corpus).unwrap();
        assert_eq!(m.component(0).unwrap().mean(), m.component(1).unwrap().mean());
    }

    #[test]
    fn missing_posterior() {
        let corpus = EmotionCorpus {
            clips: vec![clip("a", &[[0.2, 0.2]]), clip("b", &[[0.1, 0.1]])],
        };
        let th = thetas(&[("a", vec![1.0])]);
        assert_eq!(
            learn_with_mode(&th, &corpus, &LearnConfig::default()).unwrap_err(),
            Error::MissingPosterior("b".into())
        );
    }

    #[test]
    fn singular_component_is_removed() {
        // Topic 1 only explains two collinear annotations → rank-1 scatter.
        let corpus = EmotionCorpus {
            clips: vec![
                clip("a", &[[0.5, 0.5], [0.6, 0.4], [0.55, 0.6], [0.45, 0.52]]),
                clip("b", &[[-0.5, -0.5], [-0.3, -0.3]]),
            ],
        };
        let th = thetas(&[("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])]);
        let (m, trace) = learn_with_mode(&th, &corpus, &LearnConfig::default()).unwrap();
        assert_eq!(m.removed_topics().iter().copied().collect::<Vec<_>>(), vec![1]);
        assert_eq!(trace.removals, vec![RemovalEvent { iteration: 1, topic: 1 }]);
        assert_eq!(trace.unsupported_annotations, 2);
        assert!(m.component(0).is_some());
    }

    #[test]
    fn total_collapse() {
        let corpus = EmotionCorpus {
            clips: vec![clip("a", &[[0.5, 0.5], [0.6, 0.6]])],
        };
        let th = thetas(&[("a", vec![1.0])]);
        assert_eq!(
            learn_with_mode(&th, &corpus, &LearnConfig::default()).unwrap_err(),
            Error::ModelCollapsed
        );
    }

    #[test]
    fn hybrid_rules() {
        let a = AffectiveGMM::from_gaussians(
            vec![g([0.1, 0.1], SymMat2::identity()), g([0.2, 0.3], SymMat2::diag(0.5, 0.4))],
            Provenance::Uniform,
        )
        .unwrap();
        assert_eq!(
            combine_hybrid(&a, &a).unwrap(),
            a.clone().with_provenance(Provenance::Hybrid)
        );
        let b = AffectiveGMM::from_gaussians(
            vec![g([0.7, 0.1], SymMat2::identity()), g([0.9, 0.3], SymMat2::diag(0.5, 0.4))],
            Provenance::AnnoPrior,
        )
        .unwrap();
        let h = combine_hybrid(&a, &b).unwrap();
        assert_eq!(h.component(0).unwrap().mean(), [0.1, 0.1]);
        assert_eq!(h.component(1).unwrap().cov(), SymMat2::diag(0.5, 0.4));

        let mk = |skip: usize| {
            AffectiveGMM::new(
                7,
                (0..7)
                    .filter(|k| *k != skip)
                    .map(|topic| TopicGaussian {
                        topic,
                        gaussian: Gaussian2::standard(),
                    })
                    .collect(),
                Provenance::Uniform,
            )
            .unwrap()
        };
        let h = combine_hybrid(&mk(2), &mk(5)).unwrap();
        assert_eq!(h.removed_topics().iter().copied().collect::<Vec<_>>(), vec![2, 5]);
        assert_eq!(h.provenance(), Provenance::Hybrid);

        let small = AffectiveGMM::from_gaussians(vec![Gaussian2::standard()], Provenance::Uniform).unwrap();
        assert!(matches!(combine_hybrid(&small, &a), Err(Error::ModelMismatch(_))));
    }

    #[test]
    fn renormalize_over_survivors() {
        let m = AffectiveGMM::new(
            3,
            vec![
                TopicGaussian { topic: 0, gaussian: Gaussian2::standard() },
                TopicGaussian { topic: 2, gaussian: Gaussian2::standard() },
            ],
            Provenance::Uniform,
        )
        .unwrap();
        assert_eq!(m.renormalize(&[0.25, 0.5, 0.25]).unwrap(), vec![0.5, 0.0, 0.5]);
        assert_eq!(m.renormalize(&[0.0, 1.0, 0.0]), Err(Error::NoSupportingTopics));
        assert!(matches!(m.renormalize(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn serde_roundtrip() {
        let m = AffectiveGMM::new(
            4,
            vec![TopicGaussian { topic: 3, gaussian: g([0.1, 0.2], SymMat2::new(0.3, 0.01, 0.2)) }],
            Provenance::Adapted,
        )
        .unwrap();
        let back: AffectiveGMM = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.removed_topics().len(), 3);
    }
}

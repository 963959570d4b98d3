//! Per-clip annotation Gaussians and the corpus-level annotation prior.
//!
//! Each clip's annotations are summarized by a Gaussian `(a, B)`. An
//! annotation's weight is its density under its own clip's Gaussian,
//! normalized over every annotation in the corpus.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{Gaussian2, SymMat2};

/// Ridge added to a clip covariance whose smallest eigenvalue is below
/// [`RIDGE_TRIGGER`].
pub const RIDGE: f64 = 1e-3;
pub const RIDGE_TRIGGER: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub clip_id: String,
    pub subject_id: String,
    pub e: [f64; 2],
}

impl Annotation {
    pub fn new(clip_id: impl Into<String>, subject_id: impl Into<String>, e: [f64; 2]) -> Result<Self> {
        let (clip_id, subject_id) = (clip_id.into(), subject_id.into());
        if clip_id.is_empty() || subject_id.is_empty() {
            return Err(Error::InvalidInput("annotation ids must be nonempty".into()));
        }
        if !e[0].is_finite() || !e[1].is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite annotation for clip {clip_id}"
            )));
        }
        Ok(Self {
            clip_id,
            subject_id,
            e,
        })
    }
}

/// All annotations of one clip, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedClip {
    pub clip_id: String,
    pub annotations: Vec<Annotation>,
}

impl AnnotatedClip {
    pub fn points(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.annotations.iter().map(|a| a.e)
    }
}

/// Emotion-annotated corpus, clips sorted by id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmotionCorpus {
    pub clips: Vec<AnnotatedClip>,
}

impl EmotionCorpus {
    /// Groups flat annotations by clip; clips end up sorted by id and
    /// annotations keep their relative order.
    pub fn from_annotations(annotations: Vec<Annotation>) -> Self {
        let mut grouped: BTreeMap<String, Vec<Annotation>> = BTreeMap::new();
        for a in annotations {
            grouped.entry(a.clip_id.clone()).or_default().push(a);
        }
        Self {
            clips: grouped
                .into_iter()
                .map(|(clip_id, annotations)| AnnotatedClip {
                    clip_id,
                    annotations,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn annotation_count(&self) -> usize {
        self.clips.iter().map(|c| c.annotations.len()).sum()
    }

    pub fn get(&self, clip_id: &str) -> Option<&AnnotatedClip> {
        self.clips
            .binary_search_by(|c| c.clip_id.as_str().cmp(clip_id))
            .ok()
            .map(|i| &self.clips[i])
    }

    /// Keeps only clips whose id satisfies `keep`.
    pub fn subset<F: Fn(&str) -> bool>(&self, keep: F) -> Self {
        Self {
            clips: self.clips.iter().filter(|c| keep(&c.clip_id)).cloned().collect(),
        }
    }

    /// Keeps only annotations from one subject.
    pub fn for_subject(&self, subject_id: &str) -> Self {
        Self {
            clips: self
                .clips
                .iter()
                .filter_map(|c| {
                    let annotations: Vec<Annotation> = c
                        .annotations
                        .iter()
                        .filter(|a| a.subject_id == subject_id)
                        .cloned()
                        .collect();
                    (!annotations.is_empty()).then(|| AnnotatedClip {
                        clip_id: c.clip_id.clone(),
                        annotations,
                    })
                })
                .collect(),
        }
    }

    pub fn annotations(&self) -> impl Iterator<Item = &Annotation> {
        self.clips.iter().flat_map(|c| c.annotations.iter())
    }
}

/// Annotation Gaussian `(a, B)` of one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipAnnotationModel {
    pub clip_id: String,
    pub gaussian: Gaussian2,
    pub count: usize,
}

impl ClipAnnotationModel {
    pub fn mean(&self) -> [f64; 2] {
        self.gaussian.mean()
    }

    pub fn cov(&self) -> SymMat2 {
        self.gaussian.cov()
    }
}

/// Adds `RIDGE·I` when the smallest eigenvalue falls below the trigger.
pub fn regularize(cov: SymMat2) -> SymMat2 {
    if cov.eigenvalues()[0] < RIDGE_TRIGGER {
        cov.add(&SymMat2::scaled_identity(RIDGE))
    } else {
        cov
    }
}

/// Mean and divisor-N scatter of a point set (unregularized).
pub fn mean_and_scatter(points: &[[f64; 2]]) -> ([f64; 2], SymMat2) {
    let n = points.len() as f64;
    let mut a = [0.0; 2];
    for p in points {
        a[0] += p[0];
        a[1] += p[1];
    }
    a = [a[0] / n, a[1] / n];
    let mut b = SymMat2::zeros();
    for p in points {
        b = b.add(&SymMat2::outer([p[0] - a[0], p[1] - a[1]]));
    }
    (a, b.scale(1.0 / n))
}

pub fn fit_clip_model(clip: &AnnotatedClip) -> Result<ClipAnnotationModel> {
    if clip.annotations.is_empty() {
        return Err(Error::EmptyInput(format!("clip {} has no annotations", clip.clip_id)));
    }
    let points: Vec<[f64; 2]> = clip.points().collect();
    let (a, b) = mean_and_scatter(&points);
    let gaussian = Gaussian2::new(a, regularize(b))?;
    Ok(ClipAnnotationModel {
        clip_id: clip.clip_id.clone(),
        gaussian,
        count: points.len(),
    })
}

pub fn fit_clip_models(corpus: &EmotionCorpus) -> Result<Vec<ClipAnnotationModel>> {
    corpus.clips.iter().map(fit_clip_model).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorMode {
    /// Every annotation weighted 1.
    Uniform,
    /// Corpus-level annotation prior, summing to 1 over the corpus.
    AnnoPrior,
}

/// Per-annotation weights γ, keyed by clip id and indexed by the
/// annotation's position within its clip.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusPriors {
    pub mode: PriorMode,
    pub gamma: BTreeMap<String, Vec<f64>>,
}

impl CorpusPriors {
    pub fn uniform(corpus: &EmotionCorpus) -> Self {
        Self {
            mode: PriorMode::Uniform,
            gamma: corpus
                .clips
                .iter()
                .map(|c| (c.clip_id.clone(), vec![1.0; c.annotations.len()]))
                .collect(),
        }
    }

    pub fn weight(&self, clip_id: &str, j: usize) -> Option<f64> {
        self.gamma.get(clip_id).and_then(|w| w.get(j)).copied()
    }

    pub fn total(&self) -> f64 {
        self.gamma.values().flatten().sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            mode: self.mode,
            gamma: self
                .gamma
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|g| g * factor).collect()))
                .collect(),
        }
    }
}

/// Corpus-level annotation prior γ_{i,j}: each annotation's density under
/// its own clip Gaussian, normalized over the whole corpus in log space.
pub fn compute_corpus_priors(corpus: &EmotionCorpus) -> Result<CorpusPriors> {
    let models = fit_clip_models(corpus)?;
    compute_corpus_priors_with(corpus, &models)
}

pub fn compute_corpus_priors_with(
    corpus: &EmotionCorpus,
    models: &[ClipAnnotationModel],
) -> Result<CorpusPriors> {
    if models.len() != corpus.clips.len() {
        return Err(Error::ListMismatch(
            "one clip model per corpus clip is required".into(),
        ));
    }
    let logs: Vec<Vec<f64>> = corpus
        .clips
        .iter()
        .zip(models)
        .map(|(clip, m)| {
            if m.clip_id != clip.clip_id {
                return Err(Error::ListMismatch(format!(
                    "clip model {} paired with clip {}",
                    m.clip_id, clip.clip_id
                )));
            }
            Ok(clip.points().map(|e| m.gaussian.log_pdf(e)).collect())
        })
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = logs.iter().flatten().copied().collect();
    let lse = crate::gaussian::log_sum_exp(&flat);
    Ok(CorpusPriors {
        mode: PriorMode::AnnoPrior,
        gamma: corpus
            .clips
            .iter()
            .zip(logs)
            .map(|(c, l)| (c.clip_id.clone(), l.into_iter().map(|v| (v - lse).exp()).collect()))
            .collect(),
    })
}

pub fn priors_for_mode(corpus: &EmotionCorpus, mode: PriorMode) -> Result<CorpusPriors> {
    match mode {
        PriorMode::Uniform => Ok(CorpusPriors::uniform(corpus)),
        PriorMode::AnnoPrior => compute_corpus_priors(corpus),
    }
}

/// Reads the annotation CSV format `clip_id,subject_id,valence,arousal`.
pub fn read_annotation_csv<R: Read>(reader: R) -> Result<Vec<Annotation>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["clip_id", "subject_id", "valence", "arousal"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::InvalidInput(
            "annotation CSV header must be clip_id,subject_id,valence,arousal".into(),
        ));
    }
    rdr.records()
        .enumerate()
        .map(|(line, rec)| {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidInput(format!("bad number on row {}", line + 2)))
            };
            Annotation::new(&rec[0], &rec[1], [parse(&rec[2])?, parse(&rec[3])?])
        })
        .collect()
}

pub fn write_annotation_csv<W: std::io::Write>(writer: W, annotations: &[Annotation]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["clip_id", "subject_id", "valence", "arousal"])?;
    for a in annotations {
        wtr.write_record([
            a.clip_id.clone(),
            a.subject_id.clone(),
            format!("{:?}", a.e[0]),
            format!("{:?}", a.e[1]),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

//! Emotion prediction from a topic posterior.
//!
//! The predicted distribution is the θ-weighted affective GMM. Its
//! single-Gaussian summary minimizes `Σ_k θ_k · KL(G_k ‖ G)`, which is
//! attained by moment matching:
//!
//! ```text
//! μ̂ = Σ_k θ_k μ_k
//! Σ̂ = Σ_k θ_k (Σ_k + (μ_k − μ̂)(μ_k − μ̂)ᵀ)
//! ```

use serde::{Deserialize, Serialize};

use crate::affective::AffectiveGMM;
use crate::error::Result;
use crate::gaussian::{Gaussian2, Mixture, SymMat2};

/// The θ-weighted affective GMM over surviving topics (zero-weight topics
/// included so indices stay aligned with the model's components).
pub fn predict_mixture(theta: &[f64], model: &AffectiveGMM) -> Result<Mixture<Gaussian2>> {
    let w = model.renormalize(theta)?;
    let (weights, comps) = model
        .components()
        .iter()
        .map(|c| (w[c.topic], c.gaussian))
        .unzip();
    Mixture::new(weights, comps)
}

/// Moment-matched single Gaussian of a 2-D mixture.
pub fn merge_mixture(mixture: &Mixture<Gaussian2>) -> Result<Gaussian2> {
    let mut mean = [0.0; 2];
    for (w, g) in mixture.iter() {
        let m = g.mean();
        mean[0] += w * m[0];
        mean[1] += w * m[1];
    }
    let mut cov = SymMat2::zeros();
    for (w, g) in mixture.iter() {
        if w == 0.0 {
            continue;
        }
        let m = g.mean();
        let d = [m[0] - mean[0], m[1] - mean[1]];
        cov = cov.add(&g.cov().add(&SymMat2::outer(d)).scale(w));
    }
    Gaussian2::new(mean, cov)
}

pub fn reduce_to_gaussian(theta: &[f64], model: &AffectiveGMM) -> Result<Gaussian2> {
    // A one-hot θ returns its component untouched.
    let w = model.renormalize(theta)?;
    if let Some(c) = model.components().iter().find(|c| w[c.topic] == 1.0) {
        return Ok(c.gaussian);
    }
    merge_mixture(&predict_mixture(theta, model)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub topic: usize,
    pub weight: f64,
    pub gaussian: Gaussian2,
}

/// Prediction record for one clip: the reduced Gaussian and optionally the
/// weighted mixture it summarizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionPrediction {
    pub clip_id: String,
    pub theta: Vec<f64>,
    pub reduced: Gaussian2,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<Vec<MixtureComponent>>,
}

impl EmotionPrediction {
    pub fn new(clip_id: impl Into<String>, theta: &[f64], model: &AffectiveGMM, with_mixture: bool) -> Result<Self> {
        let reduced = reduce_to_gaussian(theta, model)?;
        let weights = model.renormalize(theta)?;
        let mixture = with_mixture.then(|| {
            model
                .components()
                .iter()
                .filter(|c| weights[c.topic] > 0.0)
                .map(|c| MixtureComponent {
                    topic: c.topic,
                    weight: weights[c.topic],
                    gaussian: c.gaussian,
                })
                .collect()
        });
        Ok(Self {
            clip_id: clip_id.into(),
            theta: weights,
            reduced,
            mixture,
        })
    }
}

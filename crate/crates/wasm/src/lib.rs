//! Browser bindings for the demo page in `www/`.
//!
//! Everything crosses the boundary as JSON strings. The `*_json` functions
//! hold the logic and are tested natively; the `#[wasm_bindgen]` wrappers
//! only convert errors.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use aeg_core::affective::{learn_with_mode, posterior_map, AffectiveGMM, LearnConfig};
use aeg_core::evaluation::{synthesize_corpus, SyntheticSpec};
use aeg_core::gaussian::{Gaussian2, Mixture};
use aeg_core::predict::merge_mixture;
use aeg_core::retrieval::{rank, LibraryIndex, MatchMode, Method, Query};

#[derive(Debug, Deserialize)]
struct MixtureInput {
    weights: Vec<f64>,
    components: Vec<Gaussian2>,
}

/// Moment-matched single Gaussian of a weighted mixture.
///
/// Input: `{"weights": [..], "components": [{"mean": [v, a], "cov": [xx, xy, yy]}, ..]}`.
pub fn reduce_mixture_json(input: &str) -> Result<String, String> {
    let m: MixtureInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let mixture = Mixture::new(m.weights, m.components).map_err(|e| e.to_string())?;
    let g = merge_mixture(&mixture).map_err(|e| e.to_string())?;
    serde_json::to_string(&g).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
struct ClipView<'a> {
    clip_id: &'a str,
    mean: [f64; 2],
    cov: [f64; 3],
    theta: &'a [f64],
}

#[derive(Debug, Serialize)]
struct Hit {
    clip_id: String,
    score: f64,
    mean: [f64; 2],
}

#[derive(Debug, Deserialize)]
struct RetrieveInput {
    query: Query,
    #[serde(default = "default_method")]
    method: Method,
    #[serde(default = "default_topk")]
    topk: usize,
}

fn default_method() -> Method {
    Method::EmotionPrediction
}

fn default_topk() -> usize {
    10
}

/// A synthetic library: a ring-shaped affective model learned from a
/// generated corpus, with every clip indexed.
#[wasm_bindgen]
pub struct Library {
    model: AffectiveGMM,
    index: LibraryIndex,
}

impl Library {
    pub fn build(k: usize, clips: usize, seed: u64) -> Result<Library, String> {
        if !(2..=12).contains(&k) || !(5..=500).contains(&clips) {
            return Err("k must be in 2..=12 and clips in 5..=500".into());
        }
        let mut synth = SyntheticSpec::ring(k, 0.6, 0.15).map_err(|e| e.to_string())?;
        synth.clips = clips;
        synth.subjects_per_clip = (8, 12);
        synth.seed = seed;
        let syn = synthesize_corpus(&synth).map_err(|e| e.to_string())?;
        let thetas = posterior_map(syn.posteriors.clone()).map_err(|e| e.to_string())?;
        let (model, _) = learn_with_mode(&thetas, &syn.corpus, &LearnConfig::default()).map_err(|e| e.to_string())?;
        let index = LibraryIndex::from_posteriors(&syn.posteriors, &model, format!("demo-{seed}"))
            .map_err(|e| e.to_string())?
            .index;
        Ok(Library { model, index })
    }

    pub fn clips_json(&self) -> Result<String, String> {
        let view: Vec<ClipView> = self
            .index
            .entries
            .iter()
            .map(|e| ClipView {
                clip_id: &e.clip_id,
                mean: e.reduced.mean(),
                cov: e.reduced.cov().to_array(),
                theta: &e.theta,
            })
            .collect();
        serde_json::to_string(&view).map_err(|e| e.to_string())
    }

    pub fn components_json(&self) -> Result<String, String> {
        let comps: Vec<Gaussian2> = self.model.components().iter().map(|c| c.gaussian).collect();
        serde_json::to_string(&comps).map_err(|e| e.to_string())
    }

    /// Input: `{"query": {"point": [v, a]} | {"gaussian": {..}}, "method": "ensemble", "topk": 10}`.
    pub fn retrieve_json(&self, input: &str) -> Result<String, String> {
        let req: RetrieveInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
        let ranked = rank(&req.query, &self.index, &self.model, req.method, MatchMode::SingleGaussian)
            .map_err(|e| e.to_string())?
            .truncated(req.topk);
        let hits: Vec<Hit> = ranked
            .items
            .into_iter()
            .map(|i| {
                let mean = self.index.get(&i.clip_id).map_or([f64::NAN; 2], |e| e.reduced.mean());
                Hit {
                    clip_id: i.clip_id,
                    score: i.score,
                    mean,
                }
            })
            .collect();
        serde_json::to_string(&hits).map_err(|e| e.to_string())
    }
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen]
impl Library {
    #[wasm_bindgen(constructor)]
    pub fn new(k: usize, clips: usize, seed: u32) -> Result<Library, JsError> {
        Library::build(k, clips, u64::from(seed)).map_err(js)
    }

    pub fn clips(&self) -> Result<String, JsError> {
        self.clips_json().map_err(js)
    }

    pub fn components(&self) -> Result<String, JsError> {
        self.components_json().map_err(js)
    }

    pub fn retrieve(&self, input: &str) -> Result<String, JsError> {
        self.retrieve_json(input).map_err(js)
    }
}

#[wasm_bindgen(js_name = reduceMixture)]
pub fn reduce_mixture(input: &str) -> Result<String, JsError> {
    reduce_mixture_json(input).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn reduces_two_components() {
        let out = reduce_mixture_json(
            r#"{"weights":[0.5,0.5],"components":[
                {"mean":[-1.0,0.0],"cov":[1.0,0.0,1.0]},
                {"mean":[1.0,0.0],"cov":[1.0,0.0,1.0]}]}"#,
        )
        .unwrap();
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["mean"], serde_json::json!([0.0, 0.0]));
        // Within variance 1 plus between variance 1 on the valence axis.
        assert_eq!(v["cov"], serde_json::json!([2.0, 0.0, 1.0]));
    }

    #[test]
    fn rejects_bad_mixtures() {
        assert!(reduce_mixture_json(r#"{"weights":[1.0],"components":[]}"#).is_err());
        assert!(reduce_mixture_json("not json").is_err());
    }
}

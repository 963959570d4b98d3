//! Acoustic emotion Gaussians.
//!
//! Clips are described by a topic posterior θ over an acoustic GMM. An
//! affective GMM assigns every topic a bivariate Gaussian on the
//! valence–arousal plane, so each clip's emotion is predicted as the
//! θ-weighted mixture (or its moment-matched single Gaussian). The same
//! model supports MAP personalization and emotion-based retrieval.
//!
//! Typical flow: [`features`] → [`acoustic`] → [`annotation`] →
//! [`affective`] → [`predict`] / [`personalize`] / [`retrieval`], with
//! [`bundle`] for persistence and [`evaluation`] for metrics and synthetic
//! ground truth.

pub mod acoustic;
pub mod affective;
pub mod annotation;
pub mod bundle;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod gaussian;
pub mod personalize;
pub mod predict;
pub mod retrieval;

pub use acoustic::{topic_posterior, train_acoustic_gmm, AcousticGMM, AcousticTrainConfig, TopicPosterior};
pub use affective::{learn_affective_gmm, AffectiveGMM, LearnConfig, LearnTrace, Provenance};
pub use annotation::{Annotation, EmotionCorpus, PriorMode};
pub use bundle::{load_bundle, save_bundle, ModelBundle};
pub use error::{Error, Result};
pub use gaussian::{kl2, kl_divergence, Gaussian2, SymMat2};
pub use personalize::{map_adapt, AdaptConfig, PersonalDatum};
pub use predict::{reduce_to_gaussian, EmotionPrediction};
pub use retrieval::{LibraryIndex, Method, Query, RankedList};

/// Maps over a slice, in parallel when the `parallel` feature is on.
pub(crate) fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

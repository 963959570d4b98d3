//! MAP adaptation of a background affective GMM toward one user.
//!
//! Each component is interpolated between the background parameters and
//! the user's expected sufficient statistics, with weight
//! `α_k = Γ_k / (Γ_k + β)` where `Γ_k` is the component's accumulated
//! responsibility. Mixture weights are never touched: they are the clip's
//! topic posterior.

use serde::{Deserialize, Serialize};

use crate::acoustic::TopicPosterior;
use crate::affective::{AffectiveGMM, Provenance, TopicGaussian};
use crate::error::{Error, Result};
use crate::gaussian::{Gaussian2, SymMat2};

#[derive(Debug, Clone, PartialEq)]
pub struct PersonalDatum {
    pub theta: TopicPosterior,
    pub e: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub beta_mean: f64,
    pub beta_cov: f64,
    pub adapt_cov: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            beta_mean: 0.01,
            beta_cov: 0.01,
            adapt_cov: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptResult {
    pub model: AffectiveGMM,
    /// Γ_k per surviving component, aligned with `model.components()`.
    pub occupancy: Vec<f64>,
    /// Topics whose adapted covariance was not PD and fell back to the
    /// background covariance.
    pub cov_fallbacks: Vec<usize>,
}

pub fn map_adapt(background: &AffectiveGMM, data: &[PersonalDatum], config: &AdaptConfig) -> Result<AdaptResult> {
    if data.is_empty() {
        return Err(Error::EmptyInput("no personal annotations".into()));
    }
    if !(config.beta_mean >= 0.0) || !(config.beta_cov >= 0.0) {
        return Err(Error::InvalidInput("beta must be nonnegative".into()));
    }
    let comps = background.components();
    let mut resp = Vec::with_capacity(data.len());
    for d in data {
        let theta = background.renormalize(&d.theta.theta)?;
        resp.push(background.posterior(&theta, d.e).0);
    }

    let mut occupancy = Vec::with_capacity(comps.len());
    let mut cov_fallbacks = Vec::new();
    let mut adapted = Vec::with_capacity(comps.len());
    for (p, comp) in comps.iter().enumerate() {
        let gamma: f64 = resp.iter().map(|r| r[p]).sum();
        occupancy.push(gamma);
        if !(gamma > 0.0) {
            adapted.push(*comp);
            continue;
        }
        let mut e_mean = [0.0; 2];
        for (d, r) in data.iter().zip(&resp) {
            e_mean[0] += r[p] * d.e[0];
            e_mean[1] += r[p] * d.e[1];
        }
        e_mean = [e_mean[0] / gamma, e_mean[1] / gamma];
        let mu = comp.gaussian.mean();
        let alpha_m = gamma / (gamma + config.beta_mean);
        let new_mean = [
            alpha_m * e_mean[0] + (1.0 - alpha_m) * mu[0],
            alpha_m * e_mean[1] + (1.0 - alpha_m) * mu[1],
        ];
        let mut gaussian = comp.gaussian.with_mean(new_mean);
        if config.adapt_cov {
            let mut e_cov = SymMat2::zeros();
            for (d, r) in data.iter().zip(&resp) {
                e_cov = e_cov.add(&SymMat2::outer([d.e[0] - e_mean[0], d.e[1] - e_mean[1]]).scale(r[p]));
            }
            e_cov = e_cov.scale(1.0 / gamma);
            let alpha_v = gamma / (gamma + config.beta_cov);
            // Interpolate second moments, then recenter on the new mean.
            let cov = e_cov
                .add(&SymMat2::outer(e_mean))
                .scale(alpha_v)
                .add(&comp.gaussian.cov().add(&SymMat2::outer(mu)).scale(1.0 - alpha_v))
                .sub(&SymMat2::outer(new_mean));
            match Gaussian2::new(new_mean, cov) {
                Ok(g) => gaussian = g,
                Err(_) => cov_fallbacks.push(comp.topic),
            }
        }
        adapted.push(TopicGaussian {
            topic: comp.topic,
            gaussian,
        });
    }
    Ok(AdaptResult {
        model: AffectiveGMM::new(background.k_original(), adapted, Provenance::Adapted)?,
        occupancy,
        cov_fallbacks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AdaptSchedule {
    /// Each batch adapts the previously adapted model.
    #[default]
    Online,
    /// Each step re-adapts the background model on all batches so far.
    Cumulative,
}

/// Adapts batch by batch and returns the model after every step.
pub fn adapt_incrementally(
    background: &AffectiveGMM,
    batches: &[Vec<PersonalDatum>],
    config: &AdaptConfig,
    schedule: AdaptSchedule,
) -> Result<Vec<AffectiveGMM>> {
    if batches.is_empty() {
        return Err(Error::EmptyInput("no batches".into()));
    }
    let mut out = Vec::with_capacity(batches.len());
    let mut current = background.clone();
    let mut seen: Vec<PersonalDatum> = Vec::new();
    for batch in batches {
        if batch.is_empty() {
            return Err(Error::EmptyInput("empty adaptation batch".into()));
        }
        current = match schedule {
            AdaptSchedule::Online => map_adapt(&current, batch, config)?.model,
            AdaptSchedule::Cumulative => {
                seen.extend(batch.iter().cloned());
                map_adapt(background, &seen, config)?.model
            }
        };
        out.push(current.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn background() -> AffectiveGMM {
        AffectiveGMM::from_gaussians(
            vec![
                Gaussian2::new([0.5, 0.5], SymMat2::scaled_identity(0.04)).unwrap(),
                Gaussian2::new([-0.5, 0.5], SymMat2::scaled_identity(0.04)).unwrap(),
                Gaussian2::new([0.0, -0.5], SymMat2::new(0.05, 0.01, 0.03)).unwrap(),
            ],
            Provenance::Uniform,
        )
        .unwrap()
    }

    fn datum(theta: Vec<f64>, e: [f64; 2]) -> PersonalDatum {
        PersonalDatum {
            theta: TopicPosterior::new("c", theta).unwrap(),
            e,
        }
    }

    #[test]
    fn untouched_topic_is_bit_identical() {
        let bg = background();
        let data = vec![datum(vec![0.6, 0.4, 0.0], [0.3, 0.2]), datum(vec![1.0, 0.0, 0.0], [0.7, 0.6])];
        let out = map_adapt(&bg, &data, &AdaptConfig::default()).unwrap();
        assert_eq!(out.occupancy[2], 0.0);
        assert_eq!(out.model.component(2), bg.component(2));
        assert_eq!(out.model.provenance(), Provenance::Adapted);
    }

    #[test]
    fn zero_beta_adapts_fully() {
        let bg = background();
        let cfg = AdaptConfig {
            beta_mean: 0.0,
            ..Default::default()
        };
        let out = map_adapt(&bg, &[datum(vec![0.0, 1.0, 0.0], [0.1, -0.9])], &cfg).unwrap();
        assert_eq!(out.model.component(1).unwrap().mean(), [0.1, -0.9]);
    }

    #[test]
    fn huge_beta_is_a_no_op() {
        let bg = background();
        let cfg = AdaptConfig {
            beta_mean: 1e9,
            ..Default::default()
        };
        let data: Vec<_> = (0..10)
            .map(|i| datum(vec![0.3, 0.3, 0.4], [0.1 * i as f64 - 0.5, 0.9]))
            .collect();
        let out = map_adapt(&bg, &data, &cfg).unwrap();
        for (a, b) in out.model.components().iter().zip(bg.components()) {
            let (ma, mb) = (a.gaussian.mean(), b.gaussian.mean());
            assert!((ma[0] - mb[0]).abs().max((ma[1] - mb[1]).abs()) <= 1e-6);
        }
    }

    #[test]
    fn covariance_untouched_without_flag_and_adapted_with_it() {
        let bg = background();
        let data: Vec<_> = (0..8)
            .map(|i| datum(vec![0.5, 0.25, 0.25], [0.2 * (i % 3) as f64, 0.1 * i as f64 - 0.3]))
            .collect();
        let out = map_adapt(&bg, &data, &AdaptConfig::default()).unwrap();
        for (a, b) in out.model.components().iter().zip(bg.components()) {
            assert_eq!(a.gaussian.cov(), b.gaussian.cov());
        }
        let cfg = AdaptConfig {
            adapt_cov: true,
            ..Default::default()
        };
        let out = map_adapt(&bg, &data, &cfg).unwrap();
        assert!(out.cov_fallbacks.is_empty());
        assert_ne!(out.model.component(0).unwrap().cov(), bg.component(0).unwrap().cov());
    }

    #[test]
    fn degenerate_cov_adaptation_falls_back() {
        let bg = background();
        let cfg = AdaptConfig {
            adapt_cov: true,
            beta_cov: 0.0,
            ..Default::default()
        };
        let out = map_adapt(&bg, &[datum(vec![1.0, 0.0, 0.0], [0.4, 0.4])], &cfg).unwrap();
        assert_eq!(out.cov_fallbacks, vec![0]);
        assert_eq!(out.model.component(0).unwrap().cov(), bg.component(0).unwrap().cov());
    }

    #[test]
    fn empty_inputs() {
        let bg = background();
        assert!(matches!(map_adapt(&bg, &[], &AdaptConfig::default()), Err(Error::EmptyInput(_))));
        let batches = vec![vec![datum(vec![1.0, 0.0, 0.0], [0.4, 0.4])], vec![]];
        assert!(matches!(
            adapt_incrementally(&bg, &batches, &AdaptConfig::default(), AdaptSchedule::Online),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn one_batch_equals_single_call() {
        let bg = background();
        let batch = vec![datum(vec![0.2, 0.5, 0.3], [0.1, 0.2]), datum(vec![0.9, 0.1, 0.0], [0.5, 0.1])];
        let cfg = AdaptConfig::default();
        let single = map_adapt(&bg, &batch, &cfg).unwrap().model;
        for schedule in [AdaptSchedule::Online, AdaptSchedule::Cumulative] {
            let traj = adapt_incrementally(&bg, std::slice::from_ref(&batch), &cfg, schedule).unwrap();
            assert_eq!(traj, vec![single.clone()]);
        }
    }

    proptest! {
        #[test]
        fn means_are_convex_combinations(
            pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, 0.01f64..1.0, 0.01f64..1.0, 0.01f64..1.0), 1..20),
            beta in 0.0f64..10.0,
        ) {
            let bg = background();
            let data: Vec<_> = pts.iter().map(|(v, a, t0, t1, t2)| {
                let s = t0 + t1 + t2;
                datum(vec![t0 / s, t1 / s, 1.0 - t0 / s - t1 / s], [*v, *a])
            }).collect();
            let cfg = AdaptConfig { beta_mean: beta, ..Default::default() };
            let out = map_adapt(&bg, &data, &cfg).unwrap();
            let total: f64 = out.occupancy.iter().sum();
            prop_assert!((total - data.len() as f64).abs() < 1e-9);
            for ((a, b), gamma) in out.model.components().iter().zip(bg.components()).zip(&out.occupancy) {
                let r = bg.components().iter().position(|c| c.topic == b.topic).unwrap();
                // Recompute E(μ_k) independently.
                let mut em = [0.0; 2];
                for d in &data {
                    let th = bg.renormalize(&d.theta.theta).unwrap();
                    let (post, _) = bg.posterior(&th, d.e);
                    em[0] += post[r] * d.e[0];
                    em[1] += post[r] * d.e[1];
                }
                if *gamma > 0.0 {
                    em = [em[0] / gamma, em[1] / gamma];
                    for i in 0..2 {
                        let lo = em[i].min(b.gaussian.mean()[i]) - 1e-12;
                        let hi = em[i].max(b.gaussian.mean()[i]) + 1e-12;
                        prop_assert!(a.gaussian.mean()[i] >= lo && a.gaussian.mean()[i] <= hi);
                    }
                }
                prop_assert_eq!(a.gaussian.cov(), b.gaussian.cov());
            }
        }
    }
}

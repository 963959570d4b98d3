//! Acoustic GMM over segment vectors and clip-level topic posteriors.
//!
//! Each acoustic component is one latent topic. A clip's topic posterior is
//! the average, over its segments, of the per-segment component
//! responsibilities computed with equal component weights; the EM-learned
//! weights are kept only for reference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SegmentMatrix;
use crate::gaussian::{log_sum_exp, GaussianD};

/// Relative floor applied to per-dimension variances during EM.
pub const VARIANCE_FLOOR_RATIO: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    #[default]
    Diagonal,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticTrainConfig {
    pub max_iters: usize,
    /// Stop when the relative log-likelihood gain drops below this.
    pub tol: f64,
    pub seed: u64,
    pub covariance: CovarianceKind,
}

impl Default for AcousticTrainConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-5,
            seed: 0,
            covariance: CovarianceKind::Diagonal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcousticGMM {
    components: Vec<GaussianD>,
    trained_weights: Vec<f64>,
}

impl AcousticGMM {
    pub fn new(components: Vec<GaussianD>, trained_weights: Vec<f64>) -> Result<Self> {
        let dim = components
            .first()
            .map(GaussianD::dim)
            .ok_or_else(|| Error::EmptyInput("acoustic GMM needs a component".into()))?;
        if components.iter().any(|c| c.dim() != dim) {
            return Err(Error::InvalidInput("acoustic components differ in dimension".into()));
        }
        if trained_weights.len() != components.len() {
            return Err(Error::DimensionMismatch {
                expected: components.len(),
                got: trained_weights.len(),
            });
        }
        let total: f64 = trained_weights.iter().sum();
        if trained_weights.iter().any(|w| *w < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("trained weights are not on the simplex".into()));
        }
        Ok(Self {
            components,
            trained_weights,
        })
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn components(&self) -> &[GaussianD] {
        &self.components
    }

    pub fn trained_weights(&self) -> &[f64] {
        &self.trained_weights
    }

    /// Equal-weight responsibilities of every component for one segment.
    pub fn responsibilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        let logs = self
            .components
            .iter()
            .map(|c| c.log_pdf(x))
            .collect::<Result<Vec<f64>>>()?;
        let lse = log_sum_exp(&logs);
        Ok(logs.into_iter().map(|l| (l - lse).exp()).collect())
    }
}

/// Clip-level topic posterior θ, a point on the K-simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicPosterior {
    pub clip_id: String,
    pub theta: Vec<f64>,
}

impl TopicPosterior {
    pub fn new(clip_id: impl Into<String>, theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::EmptyInput("empty topic posterior".into()));
        }
        if theta.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(Error::InvalidInput("topic posterior has negative entries".into()));
        }
        let total: f64 = theta.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("topic posterior sums to {total}")));
        }
        Ok(Self {
            clip_id: clip_id.into(),
            theta,
        })
    }

    pub fn k(&self) -> usize {
        self.theta.len()
    }
}

fn map_rows<T: Send, F>(rows: &[Vec<f64>], f: F) -> Vec<T>
where
    F: Fn(&[f64]) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        rows.par_iter().map(|r| f(r)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        rows.iter().map(|r| f(r)).collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: returns `k` row indices.
fn kmeans_pp(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = rows.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &rows[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (d, r) in d2.iter_mut().zip(rows) {
            *d = d.min(sq_dist(r, &rows[next]));
        }
    }
    chosen
}

/// Trains the acoustic GMM by EM. Returns the model and the log-likelihood
/// evaluated at each E-step.
pub fn train_acoustic_gmm(
    rows: &[Vec<f64>],
    k: usize,
    config: &AcousticTrainConfig,
) -> Result<(AcousticGMM, Vec<f64>)> {
    if k == 0 {
        return Err(Error::InvalidInput("K must be at least 1".into()));
    }
    if rows.len() < k {
        return Err(Error::InsufficientData(format!(
            "{} segment rows for {k} components",
            rows.len()
        )));
    }
    let dim = rows[0].len();
    if dim == 0 {
        return Err(Error::EmptyInput("zero-width segment rows".into()));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let n = rows.len() as f64;
    let mut global_mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in global_mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut global_var = vec![0.0; dim];
    for r in rows {
        for ((g, v), m) in global_var.iter_mut().zip(r).zip(&global_mean) {
            *g += (v - m) * (v - m) / n;
        }
    }
    let floor: Vec<f64> = global_var
        .iter()
        .map(|v| (VARIANCE_FLOOR_RATIO * v).max(1e-9))
        .collect();
    let init_var: Vec<f64> = global_var.iter().zip(&floor).map(|(v, f)| v.max(*f)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let seeds = kmeans_pp(rows, k, &mut rng);
    let mut weights = vec![1.0 / k as f64; k];
    let mut components = seeds
        .iter()
        .map(|&i| build_component(rows[i].clone(), CovFill::Diag(init_var.clone()), config.covariance))
        .collect::<Result<Vec<_>>>()?;

    let mut trace: Vec<f64> = Vec::new();
    for _ in 0..config.max_iters.max(1) {
        let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
        let per_row: Vec<(Vec<f64>, f64)> = map_rows(rows, |x| {
            let logs: Vec<f64> = components
                .iter()
                .zip(&log_w)
                .map(|(c, lw)| lw + c.log_pdf(x).unwrap_or(f64::NEG_INFINITY))
                .collect();
            let lse = log_sum_exp(&logs);
            (logs.into_iter().map(|l| (l - lse).exp()).collect(), lse)
        });
        let ll: f64 = per_row.iter().map(|(_, l)| l).sum();
        let converged = trace
            .last()
            .is_some_and(|prev: &f64| (ll - prev) / prev.abs().max(f64::MIN_POSITIVE) < config.tol);
        trace.push(ll);
        if converged {
            break;
        }

        let mut new_components = Vec::with_capacity(k);
        let mut new_weights = Vec::with_capacity(k);
        for (j, old) in components.iter().enumerate() {
            let nk: f64 = per_row.iter().map(|(r, _)| r[j]).sum();
            if nk < 1e-10 {
                // Component lost all support; keep it where it was.
                new_components.push(old.clone());
                new_weights.push(nk.max(0.0));
                continue;
            }
            let mut mean = vec![0.0; dim];
            for (x, (r, _)) in rows.iter().zip(&per_row) {
                for (m, v) in mean.iter_mut().zip(x) {
                    *m += r[j] * v;
                }
            }
            for m in &mut mean {
                *m /= nk;
            }
            let fill = match config.covariance {
                CovarianceKind::Diagonal => {
                    let mut var = vec![0.0; dim];
                    for (x, (r, _)) in rows.iter().zip(&per_row) {
                        for d in 0..dim {
                            let c = x[d] - mean[d];
                            var[d] += r[j] * c * c;
                        }
                    }
                    CovFill::Diag(
                        var.iter()
                            .zip(&floor)
                            .map(|(v, f)| (v / nk).max(*f))
                            .collect(),
                    )
                }
                CovarianceKind::Full => {
                    let mut cov = vec![0.0; dim * dim];
                    for (x, (r, _)) in rows.iter().zip(&per_row) {
                        for a in 0..dim {
                            let ca = r[j] * (x[a] - mean[a]);
                            for b in 0..=a {
                                cov[a * dim + b] += ca * (x[b] - mean[b]);
                            }
                        }
                    }
                    for a in 0..dim {
                        for b in 0..=a {
                            let v = cov[a * dim + b] / nk;
                            cov[a * dim + b] = v;
                            cov[b * dim + a] = v;
                        }
                        cov[a * dim + a] = cov[a * dim + a].max(floor[a]);
                    }
                    CovFill::Full(cov)
                }
            };
            new_components.push(
                build_component(mean, fill, config.covariance).unwrap_or_else(|_| old.clone()),
            );
            new_weights.push(nk / n);
        }
        let total: f64 = new_weights.iter().sum();
        weights = new_weights.into_iter().map(|w| w / total).collect();
        components = new_components;
    }
    Ok((AcousticGMM::new(components, weights)?, trace))
}

enum CovFill {
    Diag(Vec<f64>),
    Full(Vec<f64>),
}

fn build_component(mean: Vec<f64>, fill: CovFill, kind: CovarianceKind) -> Result<GaussianD> {
    let dim = mean.len();
    match (fill, kind) {
        (CovFill::Diag(v), CovarianceKind::Diagonal) => GaussianD::diagonal(mean, v),
        (CovFill::Diag(v), CovarianceKind::Full) => {
            let mut m = vec![0.0; dim * dim];
            for (d, x) in v.into_iter().enumerate() {
                m[d * dim + d] = x;
            }
            GaussianD::full(mean, m)
        }
        (CovFill::Full(m), _) => GaussianD::full(mean, m),
    }
}

/// Averages equal-weight segment responsibilities into the clip's θ.
pub fn topic_posterior(seg: &SegmentMatrix, model: &AcousticGMM) -> Result<TopicPosterior> {
    if seg.is_empty() {
        return Err(Error::EmptyInput(format!("clip {} has no segments", seg.clip_id)));
    }
    if seg.dim() != model.feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.feature_dim(),
            got: seg.dim(),
        });
    }
    let k = model.k();
    let per_seg: Vec<Result<Vec<f64>>> = map_rows(&seg.segments, |x| model.responsibilities(x));
    let mut theta = vec![0.0; k];
    for r in per_seg {
        for (t, v) in theta.iter_mut().zip(r?) {
            *t += v;
        }
    }
    let t = seg.len() as f64;
    for v in &mut theta {
        *v /= t;
    }
    // Renormalize away accumulated round-off.
    let total: f64 = theta.iter().sum();
    for v in &mut theta {
        *v /= total;
    }
    TopicPosterior::new(seg.clip_id.clone(), theta)
}

/// Reads posteriors as `clip_id,t0,..,t{K-1}`.
pub fn read_posterior_csv<R: std::io::Read>(reader: R) -> Result<Vec<TopicPosterior>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let k = headers.len().saturating_sub(1);
    let valid = headers.get(0) == Some("clip_id")
        && k > 0
        && headers.iter().skip(1).enumerate().all(|(i, h)| h == format!("t{i}"));
    if !valid {
        return Err(Error::InvalidInput("posterior CSV header must be clip_id,t0,..,t{K-1}".into()));
    }
    rdr.records()
        .enumerate()
        .map(|(line, rec)| {
            let rec = rec?;
            let theta = rec
                .iter()
                .skip(1)
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidInput(format!("bad number on row {}", line + 2)))
                })
                .collect::<Result<Vec<_>>>()?;
            TopicPosterior::new(&rec[0], theta)
        })
        .collect()
}

pub fn write_posterior_csv<W: std::io::Write>(writer: W, posteriors: &[TopicPosterior]) -> Result<()> {
    let k = posteriors.first().map_or(0, TopicPosterior::k);
    if posteriors.iter().any(|p| p.k() != k) {
        return Err(Error::InvalidInput("posteriors differ in length".into()));
    }
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["clip_id".to_string()];
    header.extend((0..k).map(|i| format!("t{i}")));
    wtr.write_record(&header)?;
    for p in posteriors {
        let mut row = vec![p.clip_id.clone()];
        row.extend(p.theta.iter().map(|v| format!("{v:?}")));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

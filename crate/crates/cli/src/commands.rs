//! Command-line verbs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use aeg_core::acoustic::{
    read_posterior_csv, topic_posterior, train_acoustic_gmm, write_posterior_csv, AcousticTrainConfig,
    CovarianceKind, TopicPosterior,
};
use aeg_core::affective::{learn_hybrid, learn_with_mode, posterior_map, LearnConfig, LearnTrace};
use aeg_core::annotation::{read_annotation_csv, write_annotation_csv, EmotionCorpus, PriorMode};
use aeg_core::bundle::{inspect_bundle, load_bundle, save_bundle, ModelBundle, SegmentSet};
use aeg_core::evaluation::{
    generate_point_queries, personalization_curve, pointify_to_gaussian_queries, run_cross_validation,
    run_retrieval_eval, synthesize_corpus, synthesize_features, CvConfig, FeatureSynthSpec, GroundTruth, SyntheticSpec,
    TrainMode, DEFAULT_CUTOFFS, DEFAULT_C_MAX, DEFAULT_C_MIN,
};
use aeg_core::features::{
    aggregate_segments, apply_standardization, fit_standardization, read_feature_csv, write_feature_csv,
    DEFAULT_HOP, DEFAULT_WINDOW,
};
use aeg_core::gaussian::{Gaussian2, SymMat2};
use aeg_core::personalize::{map_adapt, AdaptConfig, AdaptSchedule, PersonalDatum};
use aeg_core::predict::EmotionPrediction;
use aeg_core::retrieval::{build_index, model_fingerprint, rank, LibraryIndex, MatchMode, Method, Query};

use crate::config::{pick, FileConfig};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "aeg", version, about = "Train, personalize and query acoustic emotion Gaussian models")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every stochastic step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Standardize frame features and aggregate them into segments.
    Features(FeaturesArgs),
    /// Fit the acoustic GMM on segments and start a bundle.
    TrainAcoustic(TrainAcousticArgs),
    /// Compute clip-level topic posteriors.
    Posteriors(PosteriorsArgs),
    /// Learn the affective GMM from posteriors and annotations.
    TrainAffective(TrainAffectiveArgs),
    /// MAP-adapt the affective GMM to one user's annotations.
    Adapt(AdaptArgs),
    /// Predict emotion distributions for clips.
    Predict(PredictArgs),
    /// Index a library for retrieval.
    Index(IndexArgs),
    /// Rank the indexed library against a point or Gaussian query.
    Retrieve(RetrieveArgs),
    /// Run an evaluation protocol.
    Evaluate(EvaluateArgs),
    /// Write a synthetic corpus with known ground truth.
    Synth(SynthArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Print a bundle's manifest without loading its parameters.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// Frame feature CSV (clip_id,frame_idx,f0..).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub hop: Option<usize>,
    /// Reuse the standardization and segmentation of an existing bundle.
    #[arg(long)]
    pub stats_from: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CovarianceArg {
    Diagonal,
    Full,
}

#[derive(Debug, Args)]
pub struct TrainAcousticArgs {
    #[arg(long)]
    pub segments: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Number of acoustic topics.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, value_enum)]
    pub covariance: Option<CovarianceArg>,
}

#[derive(Debug, Args)]
pub struct PosteriorsArgs {
    #[arg(long, env = "AEG_BUNDLE")]
    pub bundle: PathBuf,
    #[arg(long)]
    pub segments: PathBuf,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Uniform,
    Annoprior,
    Hybrid,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Uniform => TrainMode::Uniform,
            ModeArg::Annoprior => TrainMode::AnnoPrior,
            ModeArg::Hybrid => TrainMode::Hybrid,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainAffectiveArgs {
    #[arg(long, env = "AEG_BUNDLE")]
    pub bundle: PathBuf,
    #[arg(long)]
    pub posteriors: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub min_rel_gain: Option<f64>,
    /// Write here instead of updating the bundle in place.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[arg(long, env = "AEG_BUNDLE")]
    pub bundle: PathBuf,
    /// Subject id whose annotations are used.
    #[arg(long)]
    pub user: String,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub posteriors: PathBuf,
    #[arg(long)]
    pub beta_mean: Option<f64>,
    #[arg(long)]
    pub beta_cov: Option<f64>,
    /// Also adapt covariances.
    #[arg(long)]
    pub adapt_cov: bool,
    /// Re-adapt the general model on all of the user's data.
    #[arg(long, conflicts_with = "online")]
    pub cumulative: bool,
    /// Adapt the user's current model with the new data (default).
    #[arg(long)]
    pub online: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(id = "theta_source", required = true, multiple = false)]
pub struct ThetaSource {
    /// Posterior CSV (clip_id,t0..).
    #[arg(long, group = "theta_source")]
    pub posteriors: Option<PathBuf>,
    /// Segment file from `features`.
    #[arg(long, group = "theta_source")]
    pub segments: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, env = "AEG_BUNDLE")]
    pub bundle: PathBuf,
    #[command(flatten)]
    pub source: ThetaSource,
    #[arg(long)]
    pub user: Option<String>,
    /// Include the weighted mixture in the output.
    #[arg(long)]
    pub mixture: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long, env = "AEG_BUNDLE")]
    pub bundle: PathBuf,
    #[command(flatten)]
    pub source: ThetaSource,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Ep,
    Fi,
    Ensemble,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Ep => Method::EmotionPrediction,
            MethodArg::Fi => Method::FoldingIn,
            MethodArg::Ensemble => Method::Ensemble,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MatchArg {
    Single,
    Mixture,
}

impl From<MatchArg> for MatchMode {
    fn from(m: MatchArg) -> Self {
        match m {
            MatchArg::Single => MatchMode::SingleGaussian,
            MatchArg::Mixture => MatchMode::FullMixture,
        }
    }
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long, env = "AEG_BUNDLE")]
    pub bundle: PathBuf,
    /// Point query `valence,arousal`.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "gaussian", required_unless_present = "gaussian")]
    pub point: Option<String>,
    /// Gaussian query `valence,arousal,s11,s12,s22`.
    #[arg(long, allow_hyphen_values = true)]
    pub gaussian: Option<String>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub topk: Option<usize>,
    /// Emotion-prediction matching against the reduced Gaussian or the mixture.
    #[arg(long, value_enum)]
    pub mode: Option<MatchArg>,
    #[arg(long)]
    pub user: Option<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Mer,
    Personalized,
    Retrieval,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long, env = "AEG_BUNDLE")]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub posteriors: Option<PathBuf>,
    /// Affective training mode for `mer`.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub min_rel_gain: Option<f64>,
    /// Number of random queries for `retrieval`.
    #[arg(long)]
    pub queries: Option<usize>,
    /// User for `personalized`.
    #[arg(long)]
    pub user: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub batches: Option<usize>,
    #[arg(long)]
    pub beta_mean: Option<f64>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory for annotations.csv, features.csv, posteriors_true.csv and truth.json.
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub clips: Option<usize>,
    #[arg(long)]
    pub subjects_min: Option<usize>,
    #[arg(long)]
    pub subjects_max: Option<usize>,
    /// Dirichlet concentration of θ.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "AEG_BUNDLE")]
    pub bundle: PathBuf,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub host: Option<String>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long, env = "AEG_BUNDLE")]
    pub bundle: PathBuf,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    let seed = pick(cli.seed, cfg.seed, 0);
    match cli.command {
        Command::Features(a) => features(a, &cfg, out),
        Command::TrainAcoustic(a) => train_acoustic(a, &cfg, seed, out),
        Command::Posteriors(a) => posteriors(a, out),
        Command::TrainAffective(a) => train_affective(a, &cfg, out),
        Command::Adapt(a) => adapt(a, &cfg, out),
        Command::Predict(a) => predict(a, out),
        Command::Index(a) => index(a, out),
        Command::Retrieve(a) => retrieve(a, &cfg, out),
        Command::Evaluate(a) => evaluate(a, &cfg, seed, out),
        Command::Synth(a) => synth(a, &cfg, seed, out),
        Command::Serve(a) => serve(a, &cfg),
        Command::Inspect(a) => {
            let m = inspect_bundle(&a.bundle)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&m)?)?;
            Ok(())
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn read_posteriors(path: &Path) -> Result<Vec<TopicPosterior>> {
    Ok(read_posterior_csv(open(path)?)?)
}

fn read_corpus(path: &Path) -> Result<EmotionCorpus> {
    Ok(EmotionCorpus::from_annotations(read_annotation_csv(open(path)?)?))
}

fn features(a: FeaturesArgs, cfg: &FileConfig, out: &mut dyn Write) -> Result<()> {
    let clips = read_feature_csv(open(&a.input)?)?;
    let (stats, window, hop) = match &a.stats_from {
        Some(p) => {
            let b = load_bundle(p)?;
            (b.standardization, b.window, b.hop)
        }
        None => (
            fit_standardization(&clips)?,
            pick(a.window, cfg.features.window, DEFAULT_WINDOW),
            pick(a.hop, cfg.features.hop, DEFAULT_HOP),
        ),
    };
    let mut segments = Vec::with_capacity(clips.len());
    let mut skipped = 0;
    for clip in &clips {
        let std = apply_standardization(clip, &stats)?;
        match aggregate_segments(&std, window, hop) {
            Ok(s) => segments.push(s),
            Err(e) => {
                eprintln!("skipping {}: {e}", clip.clip_id);
                skipped += 1;
            }
        }
    }
    let n_seg: usize = segments.iter().map(|s| s.len()).sum();
    let set = SegmentSet {
        standardization: stats,
        window,
        hop,
        clips: segments,
    };
    set.save(&a.output)?;
    writeln!(
        out,
        "{} clips, {n_seg} segments (window {window}, hop {hop}), {skipped} skipped",
        set.clips.len()
    )?;
    Ok(())
}

fn train_acoustic(a: TrainAcousticArgs, cfg: &FileConfig, seed: u64, out: &mut dyn Write) -> Result<()> {
    let set = SegmentSet::load(&a.segments)?;
    let k = a
        .k
        .or(cfg.acoustic.k)
        .ok_or_else(|| CliError::Usage("--k is required (flag or [acoustic] k)".into()))?;
    let covariance = match a.covariance {
        Some(CovarianceArg::Full) => CovarianceKind::Full,
        Some(CovarianceArg::Diagonal) => CovarianceKind::Diagonal,
        None => match cfg.acoustic.covariance.as_deref() {
            None | Some("diagonal") => CovarianceKind::Diagonal,
            Some("full") => CovarianceKind::Full,
            Some(other) => return Err(CliError::Config(format!("unknown covariance {other}"))),
        },
    };
    let defaults = AcousticTrainConfig::default();
    let config = AcousticTrainConfig {
        max_iters: pick(a.max_iters, cfg.acoustic.max_iters, defaults.max_iters),
        tol: pick(a.tol, cfg.acoustic.tol, defaults.tol),
        seed,
        covariance,
    };
    let rows: Vec<Vec<f64>> = set.clips.iter().flat_map(|c| c.segments.iter().cloned()).collect();
    let (gmm, trace) = train_acoustic_gmm(&rows, k, &config)?;
    let mut bundle = ModelBundle::new(set.standardization, gmm);
    bundle.window = set.window;
    bundle.hop = set.hop;
    bundle.provenance.seeds.insert("acoustic".into(), seed);
    bundle.provenance.config.insert(
        "acoustic".into(),
        json!({"k": k, "max_iters": config.max_iters, "tol": config.tol, "covariance": format!("{covariance:?}").to_lowercase()}),
    );
    save_bundle(&bundle, &a.output)?;
    writeln!(
        out,
        "acoustic GMM: K={k}, {} segments, {} EM steps, final log-likelihood {:.6}",
        rows.len(),
        trace.len(),
        trace.last().copied().unwrap_or(f64::NAN)
    )?;
    Ok(())
}

fn posteriors_from_segments(bundle: &ModelBundle, path: &Path) -> Result<Vec<TopicPosterior>> {
    let set = SegmentSet::load(path)?;
    if set.standardization != bundle.standardization || set.window != bundle.window || set.hop != bundle.hop {
        return Err(aeg_core::Error::ModelMismatch(
            "segments were prepared with different statistics; rerun `features --stats-from <bundle>`".into(),
        )
        .into());
    }
    let mut out = Vec::with_capacity(set.clips.len());
    for s in &set.clips {
        match topic_posterior(s, &bundle.acoustic) {
            Ok(p) => out.push(p),
            Err(e) => eprintln!("skipping {}: {e}", s.clip_id),
        }
    }
    Ok(out)
}

fn theta_source(bundle: &ModelBundle, src: &ThetaSource) -> Result<Vec<TopicPosterior>> {
    match (&src.posteriors, &src.segments) {
        (Some(p), _) => read_posteriors(p),
        (None, Some(s)) => posteriors_from_segments(bundle, s),
        (None, None) => Err(CliError::Usage("give --posteriors or --segments".into())),
    }
}

fn write_to(path: Option<&Path>, out: &mut dyn Write, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            f(&mut w)?;
            w.flush()?;
            Ok(())
        }
        None => f(out),
    }
}

fn posteriors(a: PosteriorsArgs, out: &mut dyn Write) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let ps = posteriors_from_segments(&bundle, &a.segments)?;
    write_to(a.output.as_deref(), out, |w| Ok(write_posterior_csv(w, &ps)?))
}

fn learn_config(max_iters: Option<usize>, min_rel_gain: Option<f64>, cfg: &FileConfig) -> LearnConfig {
    let d = LearnConfig::default();
    LearnConfig {
        max_iters: pick(max_iters, cfg.affective.max_iters, d.max_iters),
        min_rel_gain: pick(min_rel_gain, cfg.affective.min_rel_gain, d.min_rel_gain),
        mode: d.mode,
    }
}

fn mode_from(flag: Option<ModeArg>, cfg: &FileConfig) -> Result<ModeArg> {
    if let Some(m) = flag {
        return Ok(m);
    }
    match cfg.affective.mode.as_deref() {
        None | Some("uniform") => Ok(ModeArg::Uniform),
        Some("annoprior") => Ok(ModeArg::Annoprior),
        Some("hybrid") => Ok(ModeArg::Hybrid),
        Some(other) => Err(CliError::Config(format!("unknown affective mode {other}"))),
    }
}

fn describe_trace(out: &mut dyn Write, label: &str, t: &LearnTrace) -> Result<()> {
    writeln!(
        out,
        "{label}: {} iterations, converged {}, L_bound {:.6} -> {:.6}, removed {:?}",
        t.iterations,
        t.converged,
        t.lbound.first().copied().unwrap_or(f64::NAN),
        t.lbound.last().copied().unwrap_or(f64::NAN),
        t.removals.iter().map(|r| r.topic).collect::<Vec<_>>()
    )?;
    if t.unsupported_annotations > 0 {
        writeln!(out, "{label}: {} annotations had no supporting topic", t.unsupported_annotations)?;
    }
    Ok(())
}

fn train_affective(a: TrainAffectiveArgs, cfg: &FileConfig, out: &mut dyn Write) -> Result<()> {
    let mut bundle = load_bundle(&a.bundle)?;
    let thetas = posterior_map(read_posteriors(&a.posteriors)?)?;
    let corpus = read_corpus(&a.annotations)?;
    let mode = mode_from(a.mode, cfg)?;
    let mut learn = learn_config(a.max_iters, a.min_rel_gain, cfg);
    let model = match mode {
        ModeArg::Hybrid => {
            let (m, tu, ta) = learn_hybrid(&thetas, &corpus, &learn)?;
            describe_trace(out, "uniform", &tu)?;
            describe_trace(out, "annoprior", &ta)?;
            m
        }
        ModeArg::Uniform | ModeArg::Annoprior => {
            learn.mode = if mode == ModeArg::Annoprior {
                PriorMode::AnnoPrior
            } else {
                PriorMode::Uniform
            };
            let (m, t) = learn_with_mode(&thetas, &corpus, &learn)?;
            describe_trace(out, &format!("{mode:?}").to_lowercase(), &t)?;
            m
        }
    };
    if bundle.index.is_some() || !bundle.adapted.is_empty() {
        writeln!(out, "dropping index and adapted models built on the previous affective model")?;
    }
    bundle.index = None;
    bundle.adapted.clear();
    bundle.affective = Some(model);
    bundle.provenance.config.insert(
        "affective".into(),
        json!({"mode": format!("{mode:?}").to_lowercase(), "max_iters": learn.max_iters, "min_rel_gain": learn.min_rel_gain}),
    );
    save_bundle(&bundle, a.output.as_ref().unwrap_or(&a.bundle))?;
    Ok(())
}

fn personal_data(corpus: &EmotionCorpus, thetas: &BTreeMap<String, TopicPosterior>) -> Result<Vec<PersonalDatum>> {
    corpus
        .annotations()
        .map(|an| {
            let theta = thetas
                .get(&an.clip_id)
                .ok_or_else(|| aeg_core::Error::MissingPosterior(an.clip_id.clone()))?;
            Ok(PersonalDatum {
                theta: theta.clone(),
                e: an.e,
            })
        })
        .collect()
}

fn adapt_config(beta_mean: Option<f64>, beta_cov: Option<f64>, adapt_cov: bool, cfg: &FileConfig) -> AdaptConfig {
    let d = AdaptConfig::default();
    AdaptConfig {
        beta_mean: pick(beta_mean, cfg.adapt.beta_mean, d.beta_mean),
        beta_cov: pick(beta_cov, cfg.adapt.beta_cov, d.beta_cov),
        adapt_cov: adapt_cov || cfg.adapt.adapt_cov.unwrap_or(d.adapt_cov),
    }
}

fn adapt(a: AdaptArgs, cfg: &FileConfig, out: &mut dyn Write) -> Result<()> {
    let mut bundle = load_bundle(&a.bundle)?;
    let thetas = posterior_map(read_posteriors(&a.posteriors)?)?;
    let corpus = read_corpus(&a.annotations)?.for_subject(&a.user);
    if corpus.is_empty() {
        return Err(CliError::Usage(format!("no annotations by subject {}", a.user)));
    }
    let data = personal_data(&corpus, &thetas)?;
    let schedule = if a.cumulative {
        AdaptSchedule::Cumulative
    } else if a.online {
        AdaptSchedule::Online
    } else {
        match cfg.adapt.schedule.as_deref() {
            None | Some("online") => AdaptSchedule::Online,
            Some("cumulative") => AdaptSchedule::Cumulative,
            Some(other) => return Err(CliError::Config(format!("unknown schedule {other}"))),
        }
    };
    let config = adapt_config(a.beta_mean, a.beta_cov, a.adapt_cov, cfg);
    let base = match schedule {
        AdaptSchedule::Online => bundle.model_for(Some(&a.user))?,
        AdaptSchedule::Cumulative => bundle.affective()?,
    };
    let result = map_adapt(base, &data, &config)?;
    writeln!(
        out,
        "adapted {} for {} annotations ({schedule:?}); occupancy {:?}",
        a.user,
        data.len(),
        result.occupancy.iter().map(|g| (g * 1e4).round() / 1e4).collect::<Vec<_>>()
    )?;
    bundle.adapted.insert(a.user, result.model);
    save_bundle(&bundle, a.output.as_ref().unwrap_or(&a.bundle))?;
    Ok(())
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let model = bundle.model_for(a.user.as_deref())?;
    let ps = theta_source(&bundle, &a.source)?;
    let preds = ps
        .iter()
        .map(|p| EmotionPrediction::new(&p.clip_id, &p.theta, model, a.mixture))
        .collect::<aeg_core::Result<Vec<_>>>()?;
    write_to(a.output.as_deref(), out, |w| {
        writeln!(w, "{}", serde_json::to_string_pretty(&preds)?)?;
        Ok(())
    })
}

fn index(a: IndexArgs, out: &mut dyn Write) -> Result<()> {
    let mut bundle = load_bundle(&a.bundle)?;
    let affective = bundle.affective()?.clone();
    let build = match (&a.source.posteriors, &a.source.segments) {
        (Some(p), _) => LibraryIndex::from_posteriors(
            &read_posteriors(p)?,
            &affective,
            model_fingerprint(Some(&bundle.acoustic), &affective),
        )?,
        (None, Some(s)) => {
            let set = SegmentSet::load(s)?;
            if set.standardization != bundle.standardization {
                return Err(aeg_core::Error::ModelMismatch("segments use different standardization".into()).into());
            }
            build_index(&set.clips, &bundle.acoustic, &affective)?
        }
        (None, None) => return Err(CliError::Usage("give --posteriors or --segments".into())),
    };
    for (id, e) in &build.skipped {
        eprintln!("skipping {id}: {e}");
    }
    writeln!(
        out,
        "indexed {} clips, skipped {}, model {}",
        build.index.len(),
        build.skipped.len(),
        build.index.model_ref
    )?;
    bundle.index = Some(build.index);
    save_bundle(&bundle, a.output.as_ref().unwrap_or(&a.bundle))?;
    Ok(())
}

fn parse_floats(s: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let v = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| CliError::Usage(format!("{what}: expected {n} comma-separated numbers")))?;
    if v.len() != n {
        return Err(CliError::Usage(format!("{what}: expected {n} comma-separated numbers")));
    }
    Ok(v)
}

pub fn parse_query(point: Option<&str>, gaussian: Option<&str>) -> Result<Query> {
    match (point, gaussian) {
        (Some(p), None) => {
            let v = parse_floats(p, 2, "--point")?;
            Ok(Query::point(v[0], v[1])?)
        }
        (None, Some(g)) => {
            let v = parse_floats(g, 5, "--gaussian")?;
            Ok(Query::Gaussian(Gaussian2::new([v[0], v[1]], SymMat2::new(v[2], v[3], v[4]))?))
        }
        _ => Err(CliError::Usage("give exactly one of --point or --gaussian".into())),
    }
}

/// The index as seen by `model`: re-predicted when it is a user's adapted model.
pub fn index_for(bundle: &ModelBundle, user: Option<&str>) -> Result<LibraryIndex> {
    let idx = bundle
        .index
        .as_ref()
        .ok_or_else(|| CliError::Usage("bundle has no index; run `aeg index` first".into()))?;
    match user.and_then(|u| bundle.adapted.get(u)) {
        Some(m) => Ok(idx.with_model(m, model_fingerprint(Some(&bundle.acoustic), m))?),
        None => Ok(idx.clone()),
    }
}

fn retrieve(a: RetrieveArgs, cfg: &FileConfig, out: &mut dyn Write) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let query = parse_query(a.point.as_deref(), a.gaussian.as_deref())?;
    let method: Method = match a.method {
        Some(m) => m.into(),
        None => match cfg.retrieve.method.as_deref() {
            None | Some("ep") => Method::EmotionPrediction,
            Some("fi") => Method::FoldingIn,
            Some("ensemble") => Method::Ensemble,
            Some(other) => return Err(CliError::Config(format!("unknown method {other}"))),
        },
    };
    let mode: MatchMode = match a.mode {
        Some(m) => m.into(),
        None => match cfg.retrieve.mode.as_deref() {
            None | Some("single") => MatchMode::SingleGaussian,
            Some("mixture") => MatchMode::FullMixture,
            Some(other) => return Err(CliError::Config(format!("unknown match mode {other}"))),
        },
    };
    let topk = pick(a.topk, cfg.retrieve.topk, 10);
    let model = bundle.model_for(a.user.as_deref())?;
    let idx = index_for(&bundle, a.user.as_deref())?;
    let ranked = rank(&query, &idx, model, method, mode)?.truncated(topk);
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&ranked)?)?;
        return Ok(());
    }
    for (i, item) in ranked.items.iter().enumerate() {
        writeln!(out, "{:>3}  {:<24} {:.6}", i + 1, item.clip_id, item.score)?;
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs, cfg: &FileConfig, seed: u64, out: &mut dyn Write) -> Result<()> {
    let corpus = read_corpus(&a.annotations)?;
    match a.task {
        TaskArg::Mer => {
            let path = a
                .posteriors
                .as_ref()
                .ok_or_else(|| CliError::Usage("--posteriors is required for mer".into()))?;
            let thetas = posterior_map(read_posteriors(path)?)?;
            let config = CvConfig {
                folds: pick(a.folds, cfg.evaluate.folds, 3),
                seed,
                train: mode_from(a.mode, cfg)?.into(),
                learn: learn_config(a.max_iters, a.min_rel_gain, cfg),
            };
            let report = run_cross_validation(&corpus, &thetas, &config, None)?;
            if a.json {
                writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            } else {
                write!(out, "{}", report.to_table())?;
            }
        }
        TaskArg::Retrieval => {
            let path = a
                .bundle
                .as_ref()
                .ok_or_else(|| CliError::Usage("--bundle is required for retrieval".into()))?;
            let bundle = load_bundle(path)?;
            let idx = index_for(&bundle, None)?;
            let model = bundle.affective()?;
            let truth = GroundTruth::from_corpus(&corpus.subset(|id| idx.get(id).is_some()))?;
            let cutoffs: Vec<usize> = DEFAULT_CUTOFFS.iter().copied().filter(|p| *p <= idx.len()).collect();
            if cutoffs.is_empty() {
                return Err(CliError::Usage(format!("index has only {} clips", idx.len())));
            }
            let points = generate_point_queries(pick(a.queries, cfg.evaluate.queries, 100), seed)?;
            let gaussians = pointify_to_gaussian_queries(&points, DEFAULT_C_MIN, DEFAULT_C_MAX)?;
            let mode = MatchMode::SingleGaussian;
            let rp = run_retrieval_eval(&idx, model, &points, &truth, &cutoffs, mode, seed)?;
            let rg = run_retrieval_eval(&idx, model, &gaussians, &truth, &cutoffs, mode, seed)?;
            if a.json {
                writeln!(out, "{}", serde_json::to_string_pretty(&json!({"point": rp, "gaussian": rg}))?)?;
            } else {
                write!(out, "point queries\n{}\ngaussian queries\n{}", rp.to_table(), rg.to_table())?;
            }
        }
        TaskArg::Personalized => {
            let (Some(bpath), Some(ppath), Some(user)) = (&a.bundle, &a.posteriors, &a.user) else {
                return Err(CliError::Usage(
                    "personalized evaluation needs --bundle, --posteriors and --user".into(),
                ));
            };
            let bundle = load_bundle(bpath)?;
            let thetas = posterior_map(read_posteriors(ppath)?)?;
            let mine = corpus.for_subject(user);
            let mut ids: Vec<String> = mine.clips.iter().map(|c| c.clip_id.clone()).collect();
            ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let size = pick(a.batch_size, cfg.evaluate.batch_size, 10);
            let count = pick(a.batches, cfg.evaluate.batches, 5);
            if size == 0 || count == 0 || ids.len() <= size * count {
                return Err(CliError::Usage(format!(
                    "{user} has {} clips; need more than {} for {count} batches of {size}",
                    ids.len(),
                    size * count
                )));
            }
            let (train, test) = ids.split_at(size * count);
            let data_for = |set: &[String]| personal_data(&mine.subset(|id| set.iter().any(|s| s == id)), &thetas);
            let batches = train.chunks(size).map(data_for).collect::<Result<Vec<_>>>()?;
            let eval = data_for(test)?;
            let config = adapt_config(a.beta_mean, None, false, cfg);
            let curve = personalization_curve(bundle.affective()?, &batches, &eval, &config, AdaptSchedule::Cumulative)?;
            if a.json {
                writeln!(out, "{}", serde_json::to_string_pretty(&curve)?)?;
            } else {
                writeln!(out, "{:>6} {:>10} {:>10}", "n", "AED", "ALH")?;
                for p in &curve {
                    writeln!(out, "{:>6} {:>10.4} {:>10.4}", p.n, p.aed, p.alh)?;
                }
            }
        }
    }
    Ok(())
}

fn synth(a: SynthArgs, cfg: &FileConfig, seed: u64, out: &mut dyn Write) -> Result<()> {
    let s = &cfg.synth;
    let k = pick(a.k, s.k, 4);
    let mut shape = SyntheticSpec::ring(k, pick(a.radius, s.radius, 0.5 * 2f64.sqrt()), pick(a.sigma, s.sigma, 0.15))?;
    shape.clips = pick(a.clips, s.clips, shape.clips);
    let lo = pick(a.subjects_min, s.subjects_min, shape.subjects_per_clip.0);
    shape.subjects_per_clip = (lo, pick(a.subjects_max, s.subjects_max, lo.max(shape.subjects_per_clip.1)));
    shape.dirichlet_alpha = pick(a.alpha, s.alpha, shape.dirichlet_alpha);
    shape.seed = seed;
    let syn = synthesize_corpus(&shape)?;
    let fspec = FeatureSynthSpec {
        dim: pick(a.feature_dim, s.feature_dim, k.div_ceil(2).max(2)),
        frames_per_clip: pick(a.frames, s.frames, 64),
        seed: seed.wrapping_add(1),
        ..FeatureSynthSpec::default()
    };
    let frames = synthesize_features(&syn.posteriors, &fspec)?;
    std::fs::create_dir_all(&a.output_dir)?;
    let dir = &a.output_dir;
    let annotations: Vec<_> = syn.corpus.annotations().cloned().collect();
    write_annotation_csv(File::create(dir.join("annotations.csv"))?, &annotations)?;
    write_feature_csv(File::create(dir.join("features.csv"))?, &frames)?;
    write_posterior_csv(File::create(dir.join("posteriors_true.csv"))?, &syn.posteriors)?;
    std::fs::write(dir.join("truth.json"), serde_json::to_string_pretty(&syn.truth)?)?;
    writeln!(
        out,
        "wrote {} clips, {} annotations, {} feature frames to {}",
        syn.corpus.len(),
        annotations.len(),
        frames.iter().map(|f| f.len()).sum::<usize>(),
        dir.display()
    )?;
    Ok(())
}

fn serve(a: ServeArgs, cfg: &FileConfig) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let port = pick(a.port, cfg.serve.port, 8080);
    let host = pick(a.host, cfg.serve.host.clone(), "127.0.0.1".to_string());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, crate::server::router(bundle))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn queries_parse() {
        assert_eq!(parse_query(Some("0.5,-0.25"), None).unwrap(), Query::Point([0.5, -0.25]));
        match parse_query(None, Some("0,0,0.1,0,0.2")).unwrap() {
            Query::Gaussian(g) => assert_eq!(g.cov().to_array(), [0.1, 0.0, 0.2]),
            q => panic!("{q:?}"),
        }
        assert!(parse_query(Some("1"), None).is_err());
        assert!(parse_query(Some("a,b"), None).is_err());
        assert!(parse_query(None, Some("0,0,1,2,1")).is_err());
        assert!(parse_query(None, None).is_err());
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "aeg", "--seed", "3", "retrieve", "--bundle", "b", "--point", "-0.2,0.1", "--method", "ensemble",
        ])
        .unwrap();
        assert_eq!(cli.seed, Some(3));
        match cli.command {
            Command::Retrieve(r) => {
                assert_eq!(r.point.as_deref(), Some("-0.2,0.1"));
                assert_eq!(r.method, Some(MethodArg::Ensemble));
            }
            c => panic!("{c:?}"),
        }
        assert!(Cli::try_parse_from(["aeg", "retrieve", "--bundle", "b"]).is_err());
        assert!(Cli::try_parse_from(["aeg", "predict", "--bundle", "b", "--posteriors", "p", "--segments", "s"]).is_err());
        assert!(Cli::try_parse_from(["aeg", "adapt", "--bundle", "b", "--user", "u", "--annotations", "a", "--posteriors", "p", "--online", "--cumulative"]).is_err());
    }
}

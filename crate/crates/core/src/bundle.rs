//! Binary model bundles.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "AEGB" | version u32 | manifest_len u64 | manifest (JSON)
//!              | value_count u64 | values (f64 LE) | sha256 of all preceding bytes
//! ```
//!
//! The manifest carries structure (ids, counts, provenance); every float
//! parameter lives in the value block, so a round trip is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acoustic::AcousticGMM;
use crate::affective::{AffectiveGMM, Provenance, TopicGaussian};
use crate::error::{Error, Result};
use crate::features::{SegmentMatrix, StandardizationStats, DEFAULT_HOP, DEFAULT_WINDOW};
use crate::gaussian::{CovarianceD, Gaussian2, GaussianD, SymMat2};
use crate::retrieval::{model_fingerprint, IndexEntry, LibraryIndex};

pub const BUNDLE_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"AEGB";
const HEADER_LEN: usize = 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct BundleProvenance {
    #[serde(default)]
    pub seeds: BTreeMap<String, u64>,
    /// Snapshot of the configuration that produced each stage.
    #[serde(default)]
    pub config: BTreeMap<String, serde_json::Value>,
    /// Seconds since the epoch, taken from `SOURCE_DATE_EPOCH` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created: Option<u64>,
}

impl BundleProvenance {
    pub fn from_env() -> Self {
        Self {
            created: std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub standardization: StandardizationStats,
    pub window: usize,
    pub hop: usize,
    pub acoustic: AcousticGMM,
    pub affective: Option<AffectiveGMM>,
    /// Per-user adapted models.
    pub adapted: BTreeMap<String, AffectiveGMM>,
    pub index: Option<LibraryIndex>,
    pub provenance: BundleProvenance,
}

impl ModelBundle {
    pub fn new(standardization: StandardizationStats, acoustic: AcousticGMM) -> Self {
        Self {
            standardization,
            window: DEFAULT_WINDOW,
            hop: DEFAULT_HOP,
            acoustic,
            affective: None,
            adapted: BTreeMap::new(),
            index: None,
            provenance: BundleProvenance::from_env(),
        }
    }

    /// Fingerprint of the acoustic and general affective models.
    pub fn model_ref(&self) -> Option<String> {
        self.affective.as_ref().map(|a| model_fingerprint(Some(&self.acoustic), a))
    }

    pub fn affective(&self) -> Result<&AffectiveGMM> {
        self.affective
            .as_ref()
            .ok_or_else(|| Error::ModelMismatch("bundle has no affective model".into()))
    }

    /// The user's adapted model, or the general one.
    pub fn model_for(&self, user: Option<&str>) -> Result<&AffectiveGMM> {
        match user.and_then(|u| self.adapted.get(u)) {
            Some(m) => Ok(m),
            None => self.affective(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.acoustic.k();
        let seg_dim = self.acoustic.feature_dim();
        if seg_dim != 2 * self.standardization.dim() {
            return Err(Error::ModelMismatch(format!(
                "acoustic dim {seg_dim} vs feature dim {}",
                self.standardization.dim()
            )));
        }
        if self.window == 0 || self.hop == 0 {
            return Err(Error::InvalidInput("window and hop must be positive".into()));
        }
        for m in self.affective.iter().chain(self.adapted.values()) {
            if m.k_original() != k {
                return Err(Error::ModelMismatch(format!("acoustic K {k} vs affective K {}", m.k_original())));
            }
        }
        if !self.adapted.is_empty() && self.affective.is_none() {
            return Err(Error::ModelMismatch("adapted models without a general model".into()));
        }
        if let Some(idx) = &self.index {
            if Some(&idx.model_ref) != self.model_ref().as_ref() {
                return Err(Error::ModelMismatch("index was built from a different model".into()));
            }
            if idx.entries.iter().any(|e| e.theta.len() != k) {
                return Err(Error::ModelMismatch("index posterior length differs from K".into()));
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            version: BUNDLE_VERSION,
            kind: "model".into(),
            k: self.acoustic.k(),
            feature_dim: self.standardization.dim(),
            segment_dim: self.acoustic.feature_dim(),
            window: self.window,
            hop: self.hop,
            covariance: match self.acoustic.components()[0].covariance() {
                CovarianceD::Diagonal(_) => "diagonal".into(),
                CovarianceD::Full { .. } => "full".into(),
            },
            affective: self.affective.as_ref().map(AffectiveLayout::of),
            adapted: self.adapted.iter().map(|(u, m)| (u.clone(), AffectiveLayout::of(m))).collect(),
            index: self.index.as_ref().map(|idx| IndexLayout {
                model_ref: idx.model_ref.clone(),
                clips: idx
                    .entries
                    .iter()
                    .map(|e| ClipLayout {
                        clip_id: e.clip_id.clone(),
                        metadata: e.metadata.clone(),
                    })
                    .collect(),
            }),
            provenance: self.provenance.clone(),
        }
    }

    fn values(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend(&self.standardization.mean);
        v.extend(&self.standardization.std);
        v.extend(self.acoustic.trained_weights());
        for c in self.acoustic.components() {
            v.extend(c.mean());
            match c.covariance() {
                CovarianceD::Diagonal(d) => v.extend(d),
                CovarianceD::Full { matrix, .. } => v.extend(matrix),
            }
        }
        for m in self.affective.iter().chain(self.adapted.values()) {
            for c in m.components() {
                push_gaussian(&mut v, &c.gaussian);
            }
        }
        if let Some(idx) = &self.index {
            for e in &idx.entries {
                v.extend(&e.theta);
                push_gaussian(&mut v, &e.reduced);
            }
        }
        v
    }

    fn from_parts(manifest: Manifest, values: Vec<f64>) -> Result<Self> {
        if manifest.kind != "model" {
            return Err(Error::CorruptBundle(format!("expected a model bundle, found {}", manifest.kind)));
        }
        let mut r = Values::new(values);
        let d = manifest.feature_dim;
        let standardization = StandardizationStats {
            mean: r.take(d)?,
            std: r.take(d)?,
        };
        let k = manifest.k;
        let weights = r.take(k)?;
        let sd = manifest.segment_dim;
        let full = match manifest.covariance.as_str() {
            "diagonal" => false,
            "full" => true,
            other => return Err(Error::CorruptBundle(format!("unknown covariance kind {other}"))),
        };
        let components = (0..k)
            .map(|_| {
                let mean = r.take(sd)?;
                if full {
                    GaussianD::full(mean, r.take(sd * sd)?)
                } else {
                    GaussianD::diagonal(mean, r.take(sd)?)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let acoustic = AcousticGMM::new(components, weights)?;
        let affective = manifest.affective.as_ref().map(|l| l.read(&mut r)).transpose()?;
        let adapted = manifest
            .adapted
            .iter()
            .map(|(u, l)| Ok((u.clone(), l.read(&mut r)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let index = manifest
            .index
            .map(|layout| {
                let entries = layout
                    .clips
                    .into_iter()
                    .map(|c| {
                        Ok(IndexEntry {
                            clip_id: c.clip_id,
                            theta: r.take(k)?,
                            reduced: r.gaussian()?,
                            metadata: c.metadata,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok::<_, Error>(LibraryIndex {
                    entries,
                    model_ref: layout.model_ref,
                })
            })
            .transpose()?;
        r.finish()?;
        let bundle = Self {
            standardization,
            window: manifest.window,
            hop: manifest.hop,
            acoustic,
            affective,
            adapted,
            index,
            provenance: manifest.provenance,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        encode(&self.manifest(), &self.values())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (manifest, values) = decode::<Manifest>(bytes)?;
        Self::from_parts(manifest, values)
    }
}

fn push_gaussian(v: &mut Vec<f64>, g: &Gaussian2) {
    v.extend(g.mean());
    v.extend(g.cov().to_array());
}

struct Values {
    data: Vec<f64>,
    pos: usize,
}

impl Values {
    fn new(data: Vec<f64>) -> Self {
        Self { data, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<Vec<f64>> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.data.len());
        let end = end.ok_or_else(|| Error::CorruptBundle("value block shorter than manifest".into()))?;
        let out = self.data[self.pos..end].to_vec();
        self.pos = end;
        Ok(out)
    }

    fn gaussian(&mut self) -> Result<Gaussian2> {
        let v = self.take(5)?;
        Gaussian2::new([v[0], v[1]], SymMat2::new(v[2], v[3], v[4]))
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::CorruptBundle("value block longer than manifest".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffectiveLayout {
    pub k_original: usize,
    /// Surviving topics in stored order.
    pub topics: Vec<usize>,
    pub provenance: Provenance,
}

impl AffectiveLayout {
    fn of(m: &AffectiveGMM) -> Self {
        Self {
            k_original: m.k_original(),
            topics: m.components().iter().map(|c| c.topic).collect(),
            provenance: m.provenance(),
        }
    }

    fn read(&self, r: &mut Values) -> Result<AffectiveGMM> {
        let comps = self
            .topics
            .iter()
            .map(|t| {
                Ok(TopicGaussian {
                    topic: *t,
                    gaussian: r.gaussian()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        AffectiveGMM::new(self.k_original, comps, self.provenance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipLayout {
    pub clip_id: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexLayout {
    pub model_ref: String,
    pub clips: Vec<ClipLayout>,
}

/// Bundle header, readable without decoding any parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub kind: String,
    pub k: usize,
    pub feature_dim: usize,
    pub segment_dim: usize,
    pub window: usize,
    pub hop: usize,
    pub covariance: String,
    pub affective: Option<AffectiveLayout>,
    #[serde(default)]
    pub adapted: BTreeMap<String, AffectiveLayout>,
    pub index: Option<IndexLayout>,
    pub provenance: BundleProvenance,
}

fn encode<M: Serialize>(manifest: &M, values: &[f64]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(manifest).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + 8 + 8 * values.len() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn read_u64(bytes: &[u8], at: usize) -> Result<usize> {
    let b = bytes
        .get(at..at + 8)
        .ok_or_else(|| Error::CorruptBundle("truncated length field".into()))?;
    usize::try_from(u64::from_le_bytes(b.try_into().expect("8 bytes")))
        .map_err(|_| Error::CorruptBundle("length does not fit in memory".into()))
}

/// Checks magic and version; returns the manifest's byte range.
fn header(bytes: &[u8]) -> Result<(usize, usize)> {
    let head: &[u8; HEADER_LEN] = bytes
        .get(..HEADER_LEN)
        .and_then(|h| h.try_into().ok())
        .ok_or_else(|| Error::CorruptBundle("not a bundle file".into()))?;
    let (start, end) = header_prefix(head)?;
    if end > bytes.len() {
        return Err(Error::CorruptBundle("truncated manifest".into()));
    }
    Ok((start, end))
}

fn parse_manifest<M: DeserializeOwned>(json: &[u8]) -> Result<M> {
    serde_json::from_slice(json).map_err(|e| Error::CorruptBundle(format!("manifest: {e}")))
}

fn decode<M: DeserializeOwned>(bytes: &[u8]) -> Result<(M, Vec<f64>)> {
    let (start, end) = header(bytes)?;
    let count = read_u64(bytes, end)?;
    let body = end + 8;
    let values_end = count
        .checked_mul(8)
        .and_then(|n| n.checked_add(body))
        .filter(|e| e.checked_add(32) == Some(bytes.len()))
        .ok_or_else(|| Error::CorruptBundle("file length does not match its header".into()))?;
    let digest = Sha256::digest(&bytes[..values_end]);
    if digest.as_slice() != &bytes[values_end..] {
        return Err(Error::CorruptBundle("checksum mismatch".into()));
    }
    let manifest = parse_manifest(&bytes[start..end])?;
    let values = bytes[body..values_end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((manifest, values))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_bundle(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &bundle.to_bytes()?)
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    ModelBundle::from_bytes(&std::fs::read(path)?)
}

/// Reads only the header and manifest of a bundle file.
pub fn inspect_bundle(path: impl AsRef<Path>) -> Result<Manifest> {
    use std::io::Read;
    let mut f = std::fs::File::open(path)?;
    let mut head = [0u8; HEADER_LEN];
    f.read_exact(&mut head)
        .map_err(|_| Error::CorruptBundle("not a bundle file".into()))?;
    let (_, end) = header_prefix(&head)?;
    let mut json = vec![0u8; end - HEADER_LEN];
    f.read_exact(&mut json)
        .map_err(|_| Error::CorruptBundle("truncated manifest".into()))?;
    parse_manifest(&json)
}

fn header_prefix(head: &[u8; HEADER_LEN]) -> Result<(usize, usize)> {
    if &head[..4] != MAGIC {
        return Err(Error::CorruptBundle("not a bundle file".into()));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes"));
    if version != BUNDLE_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let len = read_u64(head, 8)?;
    if len > (1 << 30) {
        return Err(Error::CorruptBundle("manifest length implausible".into()));
    }
    Ok((HEADER_LEN, HEADER_LEN + len))
}

/// Standardized, segmented features for a set of clips.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet {
    pub standardization: StandardizationStats,
    pub window: usize,
    pub hop: usize,
    pub clips: Vec<SegmentMatrix>,
}

#[derive(Serialize, Deserialize)]
struct SegmentManifest {
    kind: String,
    feature_dim: usize,
    window: usize,
    hop: usize,
    clips: Vec<(String, usize)>,
}

impl SegmentSet {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let d = self.standardization.dim();
        let mut values = Vec::new();
        values.extend(&self.standardization.mean);
        values.extend(&self.standardization.std);
        for c in &self.clips {
            if c.segments.iter().any(|s| s.len() != 2 * d) {
                return Err(Error::DimensionMismatch {
                    expected: 2 * d,
                    got: c.dim(),
                });
            }
            values.extend(c.segments.iter().flatten());
        }
        let manifest = SegmentManifest {
            kind: "segments".into(),
            feature_dim: d,
            window: self.window,
            hop: self.hop,
            clips: self.clips.iter().map(|c| (c.clip_id.clone(), c.len())).collect(),
        };
        encode(&manifest, &values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (m, values) = decode::<SegmentManifest>(bytes)?;
        if m.kind != "segments" {
            return Err(Error::CorruptBundle(format!("expected a segment file, found {}", m.kind)));
        }
        let d = m.feature_dim;
        let mut r = Values::new(values);
        let standardization = StandardizationStats {
            mean: r.take(d)?,
            std: r.take(d)?,
        };
        let clips = m
            .clips
            .into_iter()
            .map(|(clip_id, n)| {
                let segments = (0..n).map(|_| r.take(2 * d)).collect::<Result<Vec<_>>>()?;
                Ok(SegmentMatrix { clip_id, segments })
            })
            .collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Ok(Self {
            standardization,
            window: m.window,
            hop: m.hop,
            clips,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

//! Frame-level feature ingest, standardization, and segment aggregation.
//!
//! A segment is the concatenation `[mean ‖ std]` of a fixed window of
//! consecutive frames; trailing frames that do not fill a window are
//! dropped.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of frames per segment.
pub const DEFAULT_WINDOW: usize = 16;
/// Default hop between consecutive segments, in frames.
pub const DEFAULT_HOP: usize = 4;

/// Standard deviations below this are replaced by 1.
const MIN_STD: f64 = 1e-12;

/// Frame-level features of one clip, rows in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    pub clip_id: String,
    pub frames: Vec<Vec<f64>>,
    pub frame_rate_hz: f64,
}

impl FrameMatrix {
    pub fn new(clip_id: impl Into<String>, frames: Vec<Vec<f64>>) -> Result<Self> {
        let clip_id = clip_id.into();
        let dim = frames
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::EmptyInput(format!("clip {clip_id} has no frames")))?;
        if dim == 0 {
            return Err(Error::EmptyInput(format!("clip {clip_id} has empty frames")));
        }
        for row in &frames {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "clip {clip_id} contains non-finite features"
                )));
            }
        }
        Ok(Self {
            clip_id,
            frames,
            frame_rate_hz: 40.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.frames[0].len()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Segment-level vectors of one clip; each row is `2·D` wide.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMatrix {
    pub clip_id: String,
    pub segments: Vec<Vec<f64>>,
}

impl SegmentMatrix {
    pub fn dim(&self) -> usize {
        self.segments.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardizationStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Per-dimension mean and population standard deviation over every frame
/// of every clip.
pub fn fit_standardization(corpus: &[FrameMatrix]) -> Result<StandardizationStats> {
    let first = corpus
        .first()
        .ok_or_else(|| Error::EmptyInput("no clips to standardize".into()))?;
    let dim = first.dim();
    let mut sum = vec![0.0; dim];
    let mut count = 0usize;
    for fm in corpus {
        if fm.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: fm.dim(),
            });
        }
        for row in &fm.frames {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
        }
        count += fm.len();
    }
    let n = count as f64;
    let mean: Vec<f64> = sum.into_iter().map(|s| s / n).collect();
    let mut sq = vec![0.0; dim];
    for fm in corpus {
        for row in &fm.frames {
            for ((s, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
    }
    let std = sq
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd < MIN_STD {
                1.0
            } else {
                sd
            }
        })
        .collect();
    Ok(StandardizationStats { mean, std })
}

pub fn apply_standardization(fm: &FrameMatrix, stats: &StandardizationStats) -> Result<FrameMatrix> {
    if fm.dim() != stats.dim() {
        return Err(Error::DimensionMismatch {
            expected: stats.dim(),
            got: fm.dim(),
        });
    }
    let frames = fm
        .frames
        .iter()
        .map(|row| {
            row.iter()
                .zip(&stats.mean)
                .zip(&stats.std)
                .map(|((v, m), s)| (v - m) / s)
                .collect()
        })
        .collect();
    Ok(FrameMatrix {
        clip_id: fm.clip_id.clone(),
        frames,
        frame_rate_hz: fm.frame_rate_hz,
    })
}

/// Number of full windows that fit in `frames` frames.
pub fn segment_count(frames: usize, window: usize, hop: usize) -> usize {
    if frames < window || hop == 0 {
        0
    } else {
        (frames - window) / hop + 1
    }
}

pub fn aggregate_segments(fm: &FrameMatrix, window: usize, hop: usize) -> Result<SegmentMatrix> {
    if window < 2 || hop < 1 {
        return Err(Error::InvalidInput(format!(
            "window must be >= 2 and hop >= 1 (got {window}, {hop})"
        )));
    }
    if fm.len() < window {
        return Err(Error::ClipTooShort {
            clip_id: fm.clip_id.clone(),
            frames: fm.len(),
            window,
        });
    }
    let dim = fm.dim();
    let w = window as f64;
    let segments = (0..segment_count(fm.len(), window, hop))
        .map(|s| {
            let rows = &fm.frames[s * hop..s * hop + window];
            let mut out = vec![0.0; 2 * dim];
            for row in rows {
                for (o, v) in out[..dim].iter_mut().zip(row) {
                    *o += v;
                }
            }
            for o in &mut out[..dim] {
                *o /= w;
            }
            for row in rows {
                for d in 0..dim {
                    let c = row[d] - out[d];
                    out[dim + d] += c * c;
                }
            }
            for o in &mut out[dim..] {
                *o = (*o / w).sqrt();
            }
            out
        })
        .collect();
    Ok(SegmentMatrix {
        clip_id: fm.clip_id.clone(),
        segments,
    })
}

/// Reads the feature CSV format `clip_id,frame_idx,f0..f{D-1}`.
///
/// Clips are returned sorted by `clip_id`; frames inside a clip must appear
/// with strictly increasing `frame_idx`.
pub fn read_feature_csv<R: Read>(reader: R) -> Result<Vec<FrameMatrix>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "clip_id" || &headers[1] != "frame_idx" {
        return Err(Error::InvalidInput(
            "feature CSV header must be clip_id,frame_idx,f0,...".into(),
        ));
    }
    for (d, h) in headers.iter().skip(2).enumerate() {
        if h != format!("f{d}") {
            return Err(Error::InvalidInput(format!(
                "feature column {} should be named f{d}, found {h}",
                d + 2
            )));
        }
    }
    let mut clips: BTreeMap<String, (Option<u64>, Vec<Vec<f64>>)> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::InvalidInput(format!("row {} has wrong width", line + 2)));
        }
        let clip = rec[0].to_string();
        let idx: u64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad frame_idx on row {}", line + 2)))?;
        let row = rec
            .iter()
            .skip(2)
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidInput(format!("bad feature value on row {}", line + 2)))
            })
            .collect::<Result<Vec<f64>>>()?;
        let entry = clips.entry(clip.clone()).or_insert((None, Vec::new()));
        if let Some(prev) = entry.0 {
            if idx <= prev {
                return Err(Error::InvalidInput(format!(
                    "frames of clip {clip} are not sorted by frame_idx"
                )));
            }
        }
        entry.0 = Some(idx);
        entry.1.push(row);
    }
    clips
        .into_iter()
        .map(|(id, (_, frames))| FrameMatrix::new(id, frames))
        .collect()
}

/// Writes frames in the feature CSV format.
pub fn write_feature_csv<W: std::io::Write>(writer: W, clips: &[FrameMatrix]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let dim = clips.first().map_or(0, FrameMatrix::dim);
    let mut header = vec!["clip_id".to_string(), "frame_idx".to_string()];
    header.extend((0..dim).map(|d| format!("f{d}")));
    wtr.write_record(&header)?;
    for fm in clips {
        for (t, row) in fm.frames.iter().enumerate() {
            let mut rec = vec![fm.clip_id.clone(), t.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

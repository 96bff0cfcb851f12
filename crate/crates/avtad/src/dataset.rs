//! Dataset directories.
//!
//! ```text
//! <dir>/annotations.json
//! <dir>/features/<video_id>.visual.avtf
//! <dir>/features/<video_id>.audio.avtf
//! ```
//!
//! A feature blob is the 4-byte magic `AVTF`, then little-endian `u32` version,
//! `u32` timesteps T, `u32` dimension D, `f64` stride in seconds, then T·D
//! `f32` values row by row. Feature values are stored at `f32` precision, so a
//! dataset whose features are already `f32`-representable (as generated ones
//! are) round-trips bit for bit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use avtad_core::encoder::{FeatureSequence, Modality};
use avtad_core::labels::GroundTruthSegment;
use avtad_core::synth::SyntheticVideo;
use avtad_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const ANNOTATIONS: &str = "annotations.json";
pub const FEATURES_DIR: &str = "features";
const MAGIC: &[u8; 4] = b"AVTF";
const BLOB_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRecord {
    pub start_seconds: f64,
    pub end_seconds: f64,
    pub verb_id: usize,
    pub noun_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoRecord {
    pub video_id: String,
    pub duration_seconds: f64,
    pub segments: Vec<SegmentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotations {
    pub videos: Vec<VideoRecord>,
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(AppError::data(format!("video id `{id}` is not usable as a file name")))
    }
}

pub fn feature_path(dir: &Path, video_id: &str, modality: Modality) -> PathBuf {
    dir.join(FEATURES_DIR).join(format!("{video_id}.{}.avtf", modality.as_str()))
}

/// Writes `bytes` to `path` through a temporary sibling and a rename, so a
/// reader never sees a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| AppError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| AppError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| AppError::io(path, e))?;
    tmp.persist(path).map_err(|e| AppError::io(path, e.error))?;
    Ok(())
}

pub fn encode_features(seq: &FeatureSequence) -> Vec<u8> {
    let (t, d) = (seq.len(), seq.dim());
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t * d);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&seq.stride_seconds.to_le_bytes());
    for v in seq.features.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// Parses a feature blob; `name` labels error messages.
pub fn decode_features(bytes: &[u8], modality: Modality, name: &str) -> Result<FeatureSequence> {
    let err = |offset: usize, msg: &str| AppError::data(format!("{name}: byte {offset}: {msg}"));
    if bytes.len() < HEADER_LEN {
        return Err(err(bytes.len(), "truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(err(0, "not an AVTF feature blob"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != BLOB_VERSION {
        return Err(err(4, &format!("unsupported version {version}")));
    }
    let (t, d) = (u32_at(8) as usize, u32_at(12) as usize);
    let stride = f64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    if !(stride > 0.0 && stride.is_finite()) {
        return Err(err(16, &format!("invalid stride {stride}")));
    }
    let want = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| err(8, "shape overflows"))?;
    if bytes.len() != want {
        let what = if bytes.len() < want { "truncated data" } else { "trailing bytes" };
        return Err(err(bytes.len().min(want), &format!("{what}: expected {want} bytes for {t}×{d}, found {}", bytes.len())));
    }
    let data: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(err(HEADER_LEN + 4 * i, "non-finite feature value"));
    }
    let features = Tensor::new(vec![t, d], data).map_err(|e| err(8, &e.to_string()))?;
    FeatureSequence::new(modality, stride, features).map_err(|e| err(8, &e.to_string()))
}

pub fn annotations_of(videos: &[SyntheticVideo]) -> Annotations {
    Annotations {
        videos: videos
            .iter()
            .map(|v| VideoRecord {
                video_id: v.video_id.clone(),
                duration_seconds: v.duration,
                segments: v
                    .segments
                    .iter()
                    .map(|s| SegmentRecord {
                        start_seconds: s.start,
                        end_seconds: s.end,
                        verb_id: s.verb,
                        noun_id: s.noun,
                    })
                    .collect(),
            })
            .collect(),
    }
}

/// Writes a dataset directory. Feature blobs go first and the annotations
/// document last, so an interrupted write leaves no annotations that point at
/// missing features.
pub fn write_dataset(videos: &[SyntheticVideo], dir: &Path) -> Result<()> {
    let feat = dir.join(FEATURES_DIR);
    fs::create_dir_all(&feat).map_err(|e| AppError::io(&feat, e))?;
    for v in videos {
        check_id(&v.video_id)?;
        for seq in [&v.visual, &v.audio] {
            write_atomic(&feature_path(dir, &v.video_id, seq.modality), &encode_features(seq))?;
        }
    }
    let json = serde_json::to_vec_pretty(&annotations_of(videos)).expect("plain data serialises");
    write_atomic(&dir.join(ANNOTATIONS), &json)
}

pub fn parse_annotations(text: &str, name: &str) -> Result<Annotations> {
    serde_json::from_str(text).map_err(|e| {
        AppError::data(format!("{name}: line {} column {}: {e}", e.line(), e.column()))
    })
}

fn read_blob(path: &Path, modality: Modality) -> Result<FeatureSequence> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode_features(&bytes, modality, &path.display().to_string())
}

/// Reads a dataset directory. Either every video loads and validates, or an
/// error is returned.
pub fn read_dataset(dir: &Path) -> Result<Vec<SyntheticVideo>> {
    let path = dir.join(ANNOTATIONS);
    let text = fs::read_to_string(&path).map_err(|e| AppError::io(&path, e))?;
    let ann = parse_annotations(&text, &path.display().to_string())?;
    let mut out = Vec::with_capacity(ann.videos.len());
    for rec in ann.videos {
        check_id(&rec.video_id)?;
        let visual = read_blob(&feature_path(dir, &rec.video_id, Modality::Visual), Modality::Visual)?;
        let audio = read_blob(&feature_path(dir, &rec.video_id, Modality::Audio), Modality::Audio)?;
        if visual.len() != audio.len() || visual.stride_seconds != audio.stride_seconds {
            return Err(AppError::data(format!(
                "{}: visual ({} × {} s) and audio ({} × {} s) are not aligned",
                rec.video_id,
                visual.len(),
                visual.stride_seconds,
                audio.len(),
                audio.stride_seconds
            )));
        }
        if !(rec.duration_seconds > 0.0) {
            return Err(AppError::data(format!("{}: duration must be positive", rec.video_id)));
        }
        let segments = rec
            .segments
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let g = GroundTruthSegment::new(s.start_seconds, s.end_seconds, s.verb_id, s.noun_id)
                    .map_err(|e| AppError::data(format!("{} segment {i}: {e}", rec.video_id)))?;
                if g.end > rec.duration_seconds {
                    return Err(AppError::data(format!(
                        "{} segment {i}: ends at {} s, after the video ({} s)",
                        rec.video_id, g.end, rec.duration_seconds
                    )));
                }
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(SyntheticVideo {
            video_id: rec.video_id,
            duration: rec.duration_seconds,
            segments,
            visual,
            audio,
        });
    }
    Ok(out)
}

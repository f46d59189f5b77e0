//! Track files, deterministic splits and the synthetic scenario generator.

mod synth;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use synth::{synth_generate, SyntheticConfig};

/// One video frame of a tracked pedestrian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    /// `N` key-points `(x, y)`, normalised by frame size.
    pub keypoints: Vec<[f64; 2]>,
    /// `(x1, y1, x2, y2)`, normalised.
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ego_speed: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub track_id: String,
    pub fps: f64,
    pub frames: Vec<FrameRecord>,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_frame: Option<usize>,
}

/// A field-level validation failure.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub field: String,
    pub reason: String,
}

fn violation(field: impl Into<String>, reason: impl Into<String>) -> Violation {
    Violation {
        field: field.into(),
        reason: reason.into(),
    }
}

fn unit(v: f64) -> bool {
    v.is_finite() && (0.0..=1.0).contains(&v)
}

impl TrackRecord {
    pub fn joints(&self) -> usize {
        self.frames.first().map_or(0, |f| f.keypoints.len())
    }

    pub fn has_speed(&self) -> bool {
        self.frames.first().is_some_and(|f| f.ego_speed.is_some())
    }

    /// Checks every record invariant. `joints` fixes the expected key-point count;
    /// otherwise the first frame defines it.
    pub fn validate(&self, joints: Option<usize>) -> Result<(), Violation> {
        if self.track_id.is_empty() {
            return Err(violation("track_id", "must be non-empty"));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(violation(
                "fps",
                format!("must be positive, got {}", self.fps),
            ));
        }
        if self.label > 1 {
            return Err(violation(
                "label",
                format!("must be 0 or 1, got {}", self.label),
            ));
        }
        if self.frames.is_empty() {
            return Err(violation("frames", "track has no frames"));
        }
        match (self.label, self.event_frame) {
            (1, None) => return Err(violation("event_frame", "required when label is 1")),
            (_, Some(e)) if e >= self.frames.len() => {
                return Err(violation(
                    "event_frame",
                    format!("{e} outside track of {} frames", self.frames.len()),
                ))
            }
            _ => {}
        }
        let n = joints.unwrap_or_else(|| self.joints());
        if n == 0 {
            return Err(violation("frames[0].keypoints", "no key-points"));
        }
        let speed = self.has_speed();
        for (i, f) in self.frames.iter().enumerate() {
            if f.keypoints.len() != n {
                return Err(violation(
                    format!("frames[{i}].keypoints"),
                    format!("expected {n} key-points, got {}", f.keypoints.len()),
                ));
            }
            if let Some(j) = f.keypoints.iter().position(|p| !unit(p[0]) || !unit(p[1])) {
                return Err(violation(
                    format!("frames[{i}].keypoints[{j}]"),
                    format!("coordinate {:?} outside [0, 1]", f.keypoints[j]),
                ));
            }
            let b = f.bbox;
            if !b.iter().all(|&v| unit(v)) || b[0] > b[2] || b[1] > b[3] {
                return Err(violation(
                    format!("frames[{i}].bbox"),
                    format!("malformed box {b:?}"),
                ));
            }
            match f.ego_speed {
                Some(v) if !v.is_finite() => {
                    return Err(violation(format!("frames[{i}].ego_speed"), "non-finite"))
                }
                Some(_) if !speed => {
                    return Err(violation(
                        format!("frames[{i}].ego_speed"),
                        "present on some frames only",
                    ))
                }
                None if speed => {
                    return Err(violation(
                        format!("frames[{i}].ego_speed"),
                        "missing on some frames only",
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Reads a line-delimited track file, inferring the key-point count from the first record.
pub fn load_tracks(path: impl AsRef<Path>) -> Result<Vec<TrackRecord>> {
    load_tracks_with(path, None)
}

/// Reads a line-delimited track file; every record must carry `joints` key-points per
/// frame when given. Blank lines are skipped.
pub fn load_tracks_with(path: impl AsRef<Path>, joints: Option<usize>) -> Result<Vec<TrackRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut expected = joints;
    let mut tracks = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record_err = |field: String, reason: String| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            field,
            reason,
        };
        let track: TrackRecord =
            serde_json::from_str(&line).map_err(|e| record_err("record".into(), e.to_string()))?;
        track
            .validate(expected)
            .map_err(|v| record_err(v.field, v.reason))?;
        expected.get_or_insert(track.joints());
        tracks.push(track);
    }
    Ok(tracks)
}

/// Writes `contents` to `path` through a sibling temporary file and an atomic rename.
pub fn write_atomic(
    path: impl AsRef<Path>,
    write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        write(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn save_tracks(path: impl AsRef<Path>, tracks: &[TrackRecord]) -> Result<()> {
    let mut lines = Vec::with_capacity(tracks.len());
    for t in tracks {
        lines.push(serde_json::to_string(t)?);
    }
    write_atomic(path, |w| {
        for l in &lines {
            writeln!(w, "{l}")?;
        }
        Ok(())
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub train: Vec<TrackRecord>,
    pub val: Vec<TrackRecord>,
    pub test: Vec<TrackRecord>,
}

/// Uniform draw in `[0, 1)` from `sha256(seed ‖ track_id)`.
pub fn split_key(track_id: &str, seed: u64) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(track_id.as_bytes());
    let digest = h.finalize();
    let mut top = [0u8; 8];
    top.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(top) >> 11) as f64 / (1u64 << 53) as f64
}

/// Partitions tracks into train/val/test by hashed track id. Assignment depends only on
/// the id and seed, so it is stable across runs and input orderings.
pub fn split(tracks: &[TrackRecord], fractions: [f64; 3], seed: u64) -> Result<Split> {
    if tracks.is_empty() {
        return Err(Error::Data("cannot split an empty track list".into()));
    }
    if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::Data(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let mut out = Split::default();
    for t in tracks {
        let u = split_key(&t.track_id, seed);
        let dest = if u < fractions[0] {
            &mut out.train
        } else if u < fractions[0] + fractions[1] {
            &mut out.val
        } else {
            &mut out.test
        };
        dest.push(t.clone());
    }
    Ok(out)
}

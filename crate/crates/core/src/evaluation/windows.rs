use serde::{Deserialize, Serialize};

use crate::data::TrackRecord;
use crate::error::{Error, Result};
use crate::features::{ContextFeatures, ContextStats, EncodedSample, PoseSequence};

/// Observation-window sampling rule. Time-to-event bounds are in frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub fps: f64,
    /// Observation length.
    pub m: usize,
    /// Minimum frames between the last observed frame and the event.
    pub tte_min: usize,
    /// Maximum frames between the last observed frame and the event.
    pub tte_max: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self::from_seconds(30.0, 16, 1.0, 2.0, 8)
    }
}

impl WindowSpec {
    pub fn from_seconds(fps: f64, m: usize, tte_min_s: f64, tte_max_s: f64, stride: usize) -> Self {
        WindowSpec {
            fps,
            m,
            tte_min: (fps * tte_min_s).round() as usize,
            tte_max: (fps * tte_max_s).round() as usize,
            stride,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.stride == 0 || self.tte_min >= self.tte_max || !(self.fps > 0.0) {
            return Err(Error::Evaluation(format!(
                "invalid window spec {self:?}: need m >= 1, stride >= 1, tte_min < tte_max, fps > 0"
            )));
        }
        Ok(())
    }

    /// Last-observed frames of every window drawn from `track`.
    pub fn last_frames(&self, track: &TrackRecord) -> Vec<usize> {
        let len = track.frames.len();
        if len < self.m {
            log::debug!(
                "track {} has {len} frames, shorter than m = {}",
                track.track_id,
                self.m
            );
            return Vec::new();
        }
        let (lo, hi) = match track.event_frame {
            Some(event) => {
                if event < self.tte_min {
                    return Vec::new();
                }
                (
                    event.saturating_sub(self.tte_max).max(self.m - 1),
                    event - self.tte_min,
                )
            }
            None => {
                if len < 2 * self.m {
                    return Vec::new();
                }
                (self.m - 1, len - 1 - self.m)
            }
        };
        if lo > hi {
            return Vec::new();
        }
        (lo..=hi).step_by(self.stride).collect()
    }
}

/// One raw observation window.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub track_id: String,
    pub last_frame: usize,
    pub pose: PoseSequence,
    pub context: ContextFeatures,
    pub label: u8,
}

/// Windows of one track. Event tracks end their observation between `tte_min` and
/// `tte_max` frames before the event; tracks without an event end at least `m` frames
/// before the track ends. Both are stride-spaced from the earliest admissible frame.
pub fn sample_windows(track: &TrackRecord, spec: &WindowSpec) -> Result<Vec<Window>> {
    spec.validate()?;
    let joints = track.joints();
    let speed_present = track.has_speed();
    spec.last_frames(track)
        .into_iter()
        .map(|last| {
            let frames = &track.frames[last + 1 - spec.m..=last];
            let values = frames
                .iter()
                .flat_map(|f| f.keypoints.iter().flat_map(|p| p.iter().copied()))
                .collect();
            Ok(Window {
                track_id: track.track_id.clone(),
                last_frame: last,
                pose: PoseSequence::new(spec.m, joints, 2, values)?,
                context: ContextFeatures {
                    boxes: frames.iter().map(|f| f.bbox).collect(),
                    speed: if speed_present {
                        frames.iter().map(|f| f.ego_speed.unwrap_or(0.0)).collect()
                    } else {
                        Vec::new()
                    },
                    speed_present,
                },
                label: track.label,
            })
        })
        .collect()
}

pub fn windows_for(tracks: &[TrackRecord], spec: &WindowSpec) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    for t in tracks {
        out.extend(sample_windows(t, spec)?);
    }
    Ok(out)
}

pub fn encode_windows(
    windows: &[Window],
    stats: Option<&ContextStats>,
) -> Result<Vec<EncodedSample>> {
    windows
        .iter()
        .map(|w| EncodedSample::encode(&w.pose, &w.context, w.label, stats))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FrameRecord;

    fn track(len: usize, event: Option<usize>) -> TrackRecord {
        TrackRecord {
            track_id: "t".into(),
            fps: 30.0,
            frames: (0..len)
                .map(|t| FrameRecord {
                    keypoints: vec![[0.5, t as f64 / len as f64]; 18],
                    bbox: [0.1, 0.1, 0.2, 0.3],
                    ego_speed: None,
                })
                .collect(),
            label: u8::from(event.is_some()),
            event_frame: event,
        }
    }

    #[test]
    fn event_windows_follow_the_tte_rule() {
        let spec = WindowSpec {
            stride: 1,
            ..WindowSpec::default()
        };
        let t = track(230, Some(200));
        let last = spec.last_frames(&t);
        assert_eq!(last.len(), 31);
        assert_eq!((last[0], last[30]), (140, 170));
        assert_eq!(
            WindowSpec::default().last_frames(&t),
            vec![140, 148, 156, 164]
        );
    }

    #[test]
    fn windows_carry_the_right_frames() {
        let t = track(230, Some(200));
        let w = sample_windows(&t, &WindowSpec::default()).unwrap();
        assert_eq!(w.len(), 4);
        assert_eq!(w[0].pose.frames(), 16);
        assert_eq!(w[0].pose.get(15, 0, 1), 140.0 / 230.0);
        assert_eq!(w[0].pose.get(0, 0, 1), 125.0 / 230.0);
        assert!(!w[0].context.speed_present);
        assert_eq!(w[0].label, 1);
    }

    #[test]
    fn short_tracks_give_nothing() {
        assert!(sample_windows(&track(15, None), &WindowSpec::default())
            .unwrap()
            .is_empty());
        assert!(sample_windows(&track(20, Some(10)), &WindowSpec::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn non_event_windows_stop_m_frames_before_the_end() {
        let t = track(64, None);
        let last = WindowSpec::default().last_frames(&t);
        assert_eq!(last, vec![15, 23, 31, 39, 47]);
        assert!(last.iter().all(|&l| l + 16 < 64));
    }
}

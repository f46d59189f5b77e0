//! Synthetic pedestrians seen from a forward-facing vehicle camera.
//!
//! Each pedestrian is an 18-joint articulated walker in the OpenPose COCO layout. Joints
//! live in a body frame (lateral `s`, forward `f`, height `z`, in body heights) and are
//! projected with heading `φ`: `φ = 0` walks along the road (front view), `φ = π/2`
//! walks across it (profile view).

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{FrameRecord, TrackRecord};
use crate::error::{Error, Result};

pub const JOINTS: usize = 18;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_tracks: usize,
    pub seed: u64,
    /// Gaussian key-point noise, in normalised image units.
    pub noise_std: f64,
    pub fps: f64,
    /// Fraction of crossing tracks.
    pub positive_fraction: f64,
    /// Fraction of non-crossers that stand still.
    pub standing_fraction: f64,
    /// Fraction of non-crossers that turn toward the road and stop at the kerb.
    pub hesitant_fraction: f64,
    /// Gait cycles per second.
    pub step_frequency: (f64, f64),
    /// Peak leg swing angle in radians.
    pub step_amplitude: (f64, f64),
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_tracks: 200,
            seed: 0,
            noise_std: 0.004,
            fps: 30.0,
            positive_fraction: 0.5,
            standing_fraction: 0.3,
            hesitant_fraction: 0.2,
            step_frequency: (1.6, 2.0),
            step_amplitude: (0.3, 0.5),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.n_tracks < 2 {
            errs.push(format!(
                "n_tracks must be at least 2, got {}",
                self.n_tracks
            ));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            errs.push(format!(
                "noise_std must be non-negative, got {}",
                self.noise_std
            ));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            errs.push(format!("fps must be positive, got {}", self.fps));
        }
        for (name, v) in [
            ("positive_fraction", self.positive_fraction),
            ("standing_fraction", self.standing_fraction),
            ("hesitant_fraction", self.hesitant_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                errs.push(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.standing_fraction + self.hesitant_fraction > 1.0 {
            errs.push("standing_fraction + hesitant_fraction exceeds 1".into());
        }
        for (name, (lo, hi)) in [
            ("step_frequency", self.step_frequency),
            ("step_amplitude", self.step_amplitude),
        ] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
                errs.push(format!(
                    "{name} must be an ordered positive range, got ({lo}, {hi})"
                ));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Data(format!(
                "invalid synthetic config: {}",
                errs.join("; ")
            )))
        }
    }
}

/// Walker pose parameters for one frame.
struct Pose {
    /// Hip centre, normalised image x.
    x: f64,
    /// Ground contact, normalised image y.
    ground: f64,
    /// Body height in normalised image units.
    height: f64,
    heading: f64,
    /// +1 when walking right in the image.
    dir: f64,
    phase: f64,
    swing: f64,
}

/// Body-frame `(s, f, z)` of the fixed head and torso joints.
const RIGID: [(usize, f64, f64, f64); 8] = [
    (0, 0.0, 0.05, 0.93),
    (1, 0.0, 0.0, 0.85),
    (2, 0.13, 0.0, 0.82),
    (5, -0.13, 0.0, 0.82),
    (14, 0.03, 0.04, 0.95),
    (15, -0.03, 0.04, 0.95),
    (16, 0.06, 0.0, 0.94),
    (17, -0.06, 0.0, 0.94),
];

fn skeleton(p: &Pose) -> Vec<[f64; 2]> {
    let mut body = [(0.0, 0.0, 0.0); JOINTS];
    for &(j, s, f, z) in &RIGID {
        body[j] = (s, f, z);
    }
    let bob = 0.01 * p.swing * (2.0 * p.phase).cos();
    // (hip, knee, ankle) and (shoulder, elbow, wrist) per side; +1 right, -1 left
    for (side, sign) in [(0usize, 1.0f64), (1, -1.0)] {
        let (hip, knee, ankle) = if side == 0 { (8, 9, 10) } else { (11, 12, 13) };
        let (sh, elbow, wrist) = if side == 0 { (2, 3, 4) } else { (5, 6, 7) };
        let leg = sign * p.swing * p.phase.sin();
        let flex = 0.8 * p.swing * (0.5 + 0.5 * (p.phase + sign * FRAC_PI_2).sin());
        let hs = 0.09 * sign;
        body[hip] = (hs, 0.0, 0.53);
        body[knee] = (hs, 0.25 * leg.sin(), 0.53 - 0.25 * leg.cos());
        let shin = leg - flex;
        body[ankle] = (
            hs,
            body[knee].1 + 0.25 * shin.sin(),
            body[knee].2 - 0.25 * shin.cos(),
        );
        let arm = -0.7 * leg;
        let (ss, _, sz) = body[sh];
        body[elbow] = (ss, 0.17 * arm.sin(), sz - 0.17 * arm.cos());
        let fore = arm + 0.3 * p.swing;
        body[wrist] = (
            ss,
            body[elbow].1 + 0.15 * fore.sin(),
            body[elbow].2 - 0.15 * fore.cos(),
        );
    }
    let (c, s) = (p.heading.cos(), p.heading.sin());
    body.iter()
        .map(|&(ls, lf, lz)| {
            let x = p.x + p.height * (ls * c + lf * s * p.dir);
            let y = p.ground - p.height * (lz + bob);
            [x, y]
        })
        .collect()
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

#[derive(Clone, Copy, PartialEq)]
enum Behaviour {
    Crossing,
    Walking,
    Standing,
    Hesitant,
}

fn generate_track(cfg: &SyntheticConfig, index: usize, behaviour: Behaviour) -> TrackRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).unwrap();
    let fps = cfg.fps;
    let per_second = fps / 30.0;

    let left = rng.random_bool(0.5);
    let dir = if left { 1.0 } else { -1.0 };
    let height0 = rng.random_range(0.18..0.3);
    let x0 = {
        let off = rng.random_range(0.06..0.22);
        if left {
            off
        } else {
            1.0 - off
        }
    };
    let ground = rng.random_range(0.62..0.8);
    let freq0 = rng.random_range(cfg.step_frequency.0..=cfg.step_frequency.1);
    let swing0 = rng.random_range(cfg.step_amplitude.0..=cfg.step_amplitude.1);
    // walking speed in body heights per second
    let pace = rng.random_range(0.45..0.7);
    // non-crossers may follow diagonal paths, so lateral motion alone does not give
    // the label away
    let heading0 = match behaviour {
        Behaviour::Walking => rng.random_range(0.0..0.6),
        _ => rng.random_range(0.0..0.25),
    };
    let depth_drift = rng.random_range(-0.15..0.15);

    // frames; `onset`/`settle` bracket the turn toward the road
    let (len, event, onset, settle, heading_end) = match behaviour {
        Behaviour::Crossing => {
            let lead = (rng.random_range(90.0..120.0) * per_second) as usize;
            let onset_back = (rng.random_range(70.0..100.0) * per_second) as usize;
            let settle_back = (rng.random_range(15.0..40.0) * per_second) as usize;
            let tail = (rng.random_range(5.0..15.0) * per_second) as usize;
            let event = lead.max(onset_back);
            (
                event + tail,
                Some(event),
                event - onset_back,
                event - settle_back,
                rng.random_range(1.0..FRAC_PI_2),
            )
        }
        Behaviour::Hesitant => {
            let len = (rng.random_range(48.0..80.0) * per_second) as usize;
            let onset = rng.random_range(0..len / 2);
            let settle = onset + (rng.random_range(20.0..40.0) * per_second) as usize;
            (len, None, onset, settle, rng.random_range(0.5..1.0))
        }
        _ => {
            let len = (rng.random_range(48.0..80.0) * per_second) as usize;
            (len, None, len, len, heading0)
        }
    };

    let standing = behaviour == Behaviour::Standing;
    let mut jitter = 0.0f64;
    let mut x = x0;
    let mut phase = rng.random_range(0.0..2.0 * PI);
    let mut speed = rng.random_range(0.0..12.0);
    let mut accel = 0.0f64;
    let mut frames = Vec::with_capacity(len);
    for t in 0..len {
        let progress = if settle > onset {
            smoothstep((t as f64 - onset as f64) / (settle - onset) as f64)
        } else {
            0.0
        };
        // hesitant walkers slow to a stop while turning
        let (gait, heading) = match behaviour {
            Behaviour::Crossing => (
                1.0 + 0.3 * progress,
                heading0 + (heading_end - heading0) * progress,
            ),
            Behaviour::Hesitant => (
                1.0 - progress,
                heading0 + (heading_end - heading0) * progress,
            ),
            Behaviour::Walking => {
                jitter = (0.97 * jitter + rng.random_range(-0.02..0.02f64)).clamp(-0.15, 0.15);
                (1.0, (heading0 + jitter).max(0.0))
            }
            Behaviour::Standing => (0.0, heading0),
        };
        let height = if standing {
            height0
        } else {
            height0 * (1.0 + depth_drift * t as f64 / fps)
        };
        let freq = freq0 * (1.0 + 0.25 * progress);
        if !standing {
            phase += 2.0 * PI * freq / fps * gait.max(0.2);
            x += dir * pace * gait * height * heading.sin() / fps;
        }
        let pose = Pose {
            x,
            ground,
            height,
            heading,
            dir,
            phase,
            swing: swing0 * gait,
        };
        let mut keypoints = skeleton(&pose);
        for k in &mut keypoints {
            for v in k.iter_mut() {
                if cfg.noise_std > 0.0 {
                    *v += noise.sample(&mut rng);
                }
                *v = v.clamp(0.0, 1.0);
            }
        }
        let pad = 0.02 * height;
        let (mut bbox, mut lo, mut hi) = ([0.0; 4], [1.0f64; 2], [0.0f64; 2]);
        for k in &keypoints {
            for d in 0..2 {
                lo[d] = lo[d].min(k[d]);
                hi[d] = hi[d].max(k[d]);
            }
        }
        bbox[0] = (lo[0] - pad).clamp(0.0, 1.0);
        bbox[1] = (lo[1] - pad).clamp(0.0, 1.0);
        bbox[2] = (hi[0] + pad).clamp(0.0, 1.0);
        bbox[3] = (hi[1] + pad).clamp(0.0, 1.0);
        accel = 0.9 * accel + rng.random_range(-0.05..0.05);
        speed = (speed + accel).clamp(0.0, 20.0);
        frames.push(FrameRecord {
            keypoints,
            bbox,
            ego_speed: Some(speed),
        });
    }
    TrackRecord {
        track_id: format!("synth-{}-{index:05}", cfg.seed),
        fps,
        frames,
        label: u8::from(behaviour == Behaviour::Crossing),
        event_frame: event,
    }
}

/// Generates `n_tracks` labelled tracks. Output is a pure function of the config.
pub fn synth_generate(cfg: &SyntheticConfig) -> Result<Vec<TrackRecord>> {
    cfg.validate()?;
    let n_pos = (cfg.n_tracks as f64 * cfg.positive_fraction).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..cfg.n_tracks).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let tracks = (0..cfg.n_tracks)
        .map(|i| {
            let behaviour = if order[i] < n_pos {
                Behaviour::Crossing
            } else {
                let u: f64 = rng.random();
                if u < cfg.standing_fraction {
                    Behaviour::Standing
                } else if u < cfg.standing_fraction + cfg.hesitant_fraction {
                    Behaviour::Hesitant
                } else {
                    Behaviour::Walking
                }
            };
            generate_track(cfg, i, behaviour)
        })
        .collect();
    Ok(tracks)
}

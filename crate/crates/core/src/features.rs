//! Input encodings: pose pseudo-images, joint-collection distances (JCD) and
//! standardised context features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Key-point trajectory of one observation window, `frames × joints × dims`, row-major.
/// Coordinates are normalised to `[0, 1]` by the frame size.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    frames: usize,
    joints: usize,
    dims: usize,
    values: Vec<f64>,
}

impl PoseSequence {
    pub fn new(frames: usize, joints: usize, dims: usize, values: Vec<f64>) -> Result<Self> {
        if frames == 0 || joints == 0 || dims == 0 {
            return Err(Error::Feature(format!(
                "pose sequence extents must be positive, got {frames}x{joints}x{dims}"
            )));
        }
        if values.len() != frames * joints * dims {
            return Err(Error::Feature(format!(
                "pose sequence {frames}x{joints}x{dims} needs {} values, got {}",
                frames * joints * dims,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Feature(format!(
                "non-finite coordinate at flat index {i}"
            )));
        }
        Ok(PoseSequence {
            frames,
            joints,
            dims,
            values,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, t: usize, j: usize, c: usize) -> f64 {
        self.values[(t * self.joints + j) * self.dims + c]
    }
}

/// Pose sequence laid out as an image: rows are frames, columns are joints, channels are
/// coordinates. Shape `(m, N, d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoImage {
    shape: [usize; 3],
    data: Vec<f64>,
}

impl PseudoImage {
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, t: usize, j: usize, c: usize) -> f64 {
        self.data[(t * self.shape[1] + j) * self.shape[2] + c]
    }

    /// Channel-first copy `(d, m, N)` as consumed by the convolution stream.
    pub fn channels_first(&self) -> Vec<f64> {
        let [m, n, d] = self.shape;
        let mut out = vec![0.0; m * n * d];
        for t in 0..m {
            for j in 0..n {
                for c in 0..d {
                    out[(c * m + t) * n + j] = self.data[(t * n + j) * d + c];
                }
            }
        }
        out
    }
}

pub fn encode_pseudo_image(pose: &PoseSequence) -> PseudoImage {
    PseudoImage {
        shape: [pose.frames, pose.joints, pose.dims],
        data: pose.values.clone(),
    }
}

pub fn decode_pseudo_image(image: &PseudoImage) -> PoseSequence {
    let [frames, joints, dims] = image.shape;
    PoseSequence {
        frames,
        joints,
        dims,
        values: image.data.clone(),
    }
}

/// Joint pairs `(j, k)` with `j < k` in lexicographic order.
pub fn joint_pairs(joints: usize) -> Vec<(usize, usize)> {
    (0..joints)
        .flat_map(|j| (j + 1..joints).map(move |k| (j, k)))
        .collect()
}

/// Per-frame pairwise joint distances, `frames × N(N−1)/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct JcdFeature {
    frames: usize,
    pairs: usize,
    values: Vec<f64>,
}

impl JcdFeature {
    pub fn shape(&self) -> [usize; 2] {
        [self.frames, self.pairs]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.pairs..(t + 1) * self.pairs]
    }
}

/// Euclidean distance between every joint pair at every frame, over all coordinate
/// dimensions, pairs in [`joint_pairs`] order.
pub fn jcd(pose: &PoseSequence) -> JcdFeature {
    let pairs = joint_pairs(pose.joints);
    let mut values = Vec::with_capacity(pose.frames * pairs.len());
    for t in 0..pose.frames {
        for &(j, k) in &pairs {
            let d2: f64 = (0..pose.dims)
                .map(|c| {
                    let d = pose.get(t, j, c) - pose.get(t, k, c);
                    d * d
                })
                .sum();
            values.push(d2.sqrt());
        }
    }
    JcdFeature {
        frames: pose.frames,
        pairs: pairs.len(),
        values,
    }
}

/// Bounding boxes and ego-vehicle speed of one window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextFeatures {
    /// `(x1, y1, x2, y2)` per frame, normalised coordinates.
    pub boxes: Vec<[f64; 4]>,
    /// One value per frame; empty when `speed_present` is false.
    pub speed: Vec<f64>,
    pub speed_present: bool,
}

impl ContextFeatures {
    pub fn validate(&self) -> Result<()> {
        for (t, b) in self.boxes.iter().enumerate() {
            if b.iter().any(|v| !v.is_finite()) || b[0] > b[2] || b[1] > b[3] {
                return Err(Error::Feature(format!(
                    "malformed bounding box at frame {t}: {b:?}"
                )));
            }
        }
        if self.speed_present && self.speed.len() != self.boxes.len() {
            return Err(Error::Feature(format!(
                "{} speed values for {} frames",
                self.speed.len(),
                self.boxes.len()
            )));
        }
        Ok(())
    }

    pub fn flat_boxes(&self) -> Vec<f64> {
        self.boxes.iter().flatten().copied().collect()
    }
}

/// Train-split statistics for z-scoring the speed channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextStats {
    pub speed_mean: f64,
    pub speed_std: f64,
}

impl ContextStats {
    /// Mean and population standard deviation of every speed value present.
    /// Returns `None` when no context carries speed.
    pub fn fit<'a>(contexts: impl IntoIterator<Item = &'a ContextFeatures>) -> Option<Self> {
        let (mut n, mut sum, mut sum2) = (0usize, 0.0, 0.0);
        let mut values = Vec::new();
        for c in contexts.into_iter().filter(|c| c.speed_present) {
            values.extend_from_slice(&c.speed);
        }
        for &v in &values {
            n += 1;
            sum += v;
        }
        if n == 0 {
            return None;
        }
        let mean = sum / n as f64;
        for &v in &values {
            sum2 += (v - mean) * (v - mean);
        }
        Some(ContextStats {
            speed_mean: mean,
            speed_std: (sum2 / n as f64).sqrt(),
        })
    }
}

/// Z-scores the speed channel with train-split statistics; boxes are left untouched.
pub fn standardize_context(
    context: &ContextFeatures,
    stats: &ContextStats,
) -> Result<ContextFeatures> {
    let mut out = context.clone();
    if !context.speed_present {
        return Ok(out);
    }
    if !(stats.speed_std > 0.0) {
        return Err(Error::ZeroStd("ego_speed"));
    }
    for v in &mut out.speed {
        *v = (*v - stats.speed_mean) / stats.speed_std;
    }
    Ok(out)
}

/// Every model input for one observation window.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSample {
    pub pseudo_image: PseudoImage,
    pub jcd: JcdFeature,
    pub context: ContextFeatures,
    pub label: u8,
}

impl EncodedSample {
    /// Encodes a raw window; `stats` standardises speed when given.
    pub fn encode(
        pose: &PoseSequence,
        context: &ContextFeatures,
        label: u8,
        stats: Option<&ContextStats>,
    ) -> Result<Self> {
        context.validate()?;
        if context.boxes.len() != pose.frames() {
            return Err(Error::Feature(format!(
                "context has {} frames, pose sequence has {}",
                context.boxes.len(),
                pose.frames()
            )));
        }
        let context = match stats {
            Some(s) => standardize_context(context, s)?,
            None => context.clone(),
        };
        Ok(EncodedSample {
            pseudo_image: encode_pseudo_image(pose),
            jcd: jcd(pose),
            context,
            label,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shapes() {
        let pose = PoseSequence::new(16, 18, 2, vec![0.5; 16 * 18 * 2]).unwrap();
        assert_eq!(encode_pseudo_image(&pose).shape(), [16, 18, 2]);
        assert_eq!(jcd(&pose).shape(), [16, 153]);
    }

    #[test]
    fn pseudo_image_placement_and_round_trip() {
        let mut values = vec![0.0; 16 * 18 * 2];
        values[(3 * 18 + 5) * 2] = 0.7;
        let pose = PoseSequence::new(16, 18, 2, values).unwrap();
        let img = encode_pseudo_image(&pose);
        assert_eq!(img.at(3, 5, 0), 0.7);
        assert_eq!(img.data().iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(decode_pseudo_image(&img), pose);
        let chw = img.channels_first();
        assert_eq!(chw[3 * 18 + 5], 0.7);
    }

    #[test]
    fn three_four_five_triangle() {
        let pose = PoseSequence::new(1, 3, 2, vec![0.0, 0.0, 3.0, 4.0, 0.0, 4.0]).unwrap();
        assert_eq!(jcd(&pose).row(0), &[5.0, 4.0, 3.0]);
        assert_eq!(joint_pairs(3), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn coincident_joints_zero_row() {
        let pose = PoseSequence::new(2, 4, 2, vec![0.3; 16]).unwrap();
        assert!(jcd(&pose).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_pose() {
        assert!(PoseSequence::new(2, 2, 2, vec![0.0; 7]).is_err());
        assert!(PoseSequence::new(1, 1, 2, vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn standardisation() {
        let ctx = ContextFeatures {
            boxes: vec![[0.1, 0.2, 0.3, 0.4]; 3],
            speed: vec![10.0; 3],
            speed_present: true,
        };
        let stats = ContextStats {
            speed_mean: 10.0,
            speed_std: 2.0,
        };
        let z = standardize_context(&ctx, &stats).unwrap();
        assert_eq!(z.speed, vec![0.0; 3]);
        assert_eq!(z.boxes, ctx.boxes);
        let zero = ContextStats {
            speed_mean: 0.0,
            speed_std: 0.0,
        };
        assert!(matches!(
            standardize_context(&ctx, &zero),
            Err(Error::ZeroStd("ego_speed"))
        ));
        let absent = ContextFeatures {
            speed: vec![],
            speed_present: false,
            ..ctx
        };
        assert_eq!(standardize_context(&absent, &zero).unwrap(), absent);
    }

    #[test]
    fn train_stats_centre_train_split() {
        let contexts: Vec<ContextFeatures> = (0..20)
            .map(|i| ContextFeatures {
                boxes: vec![[0.0, 0.0, 1.0, 1.0]; 4],
                speed: (0..4)
                    .map(|t| (i * 7 + t * 3) as f64 * 0.37 + 5.0)
                    .collect(),
                speed_present: true,
            })
            .collect();
        let stats = ContextStats::fit(&contexts).unwrap();
        let z: Vec<f64> = contexts
            .iter()
            .flat_map(|c| standardize_context(c, &stats).unwrap().speed)
            .collect();
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        assert!(mean.abs() < 1e-9);
    }

    #[test]
    fn malformed_box_rejected() {
        let ctx = ContextFeatures {
            boxes: vec![[0.5, 0.2, 0.3, 0.4]],
            speed: vec![],
            speed_present: false,
        };
        assert!(ctx.validate().is_err());
    }
}

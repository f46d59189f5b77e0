use proptest::prelude::*;
use trouspi::data::{split, synth_generate, FrameRecord, SyntheticConfig, TrackRecord};
use trouspi::evaluation::{metrics, sample_windows, WindowSpec};
use trouspi::features::{decode_pseudo_image, encode_pseudo_image, jcd, PoseSequence};
use trouspi::training::{bce, weighted_bce};
use trouspi::Tensor;

fn pose_strategy() -> impl Strategy<Value = PoseSequence> {
    (1usize..6, 2usize..7).prop_flat_map(|(m, n)| {
        prop::collection::vec(0.0f64..1.0, m * n * 2)
            .prop_map(move |v| PoseSequence::new(m, n, 2, v).unwrap())
    })
}

fn track(id: usize, len: usize, event: Option<usize>) -> TrackRecord {
    TrackRecord {
        track_id: format!("t{id:04}"),
        fps: 30.0,
        frames: (0..len)
            .map(|t| {
                let x = (t as f64 / len as f64).min(1.0);
                FrameRecord {
                    keypoints: vec![[x, 0.5], [x, 0.6]],
                    bbox: [x * 0.5, 0.4, x * 0.5 + 0.1, 0.7],
                    ego_speed: None,
                }
            })
            .collect(),
        label: u8::from(event.is_some()),
        event_frame: event,
    }
}

fn track_strategy() -> impl Strategy<Value = TrackRecord> {
    (1usize..260).prop_flat_map(|len| {
        prop_oneof![Just(None), (0..len).prop_map(Some)].prop_map(move |event| track(0, len, event))
    })
}

fn scored() -> impl Strategy<Value = Vec<(f64, u8)>> {
    prop::collection::vec((0.0f64..1.0, 0u8..2), 1..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn jcd_ignores_translation_and_scales_with_the_pose(
        pose in pose_strategy(),
        shift in (-3.0f64..3.0, -3.0f64..3.0),
        factor in 0.1f64..10.0,
    ) {
        let base = jcd(&pose);
        let moved: Vec<f64> = pose.values().chunks(2).flat_map(|p| [p[0] + shift.0, p[1] + shift.1]).collect();
        let scaled: Vec<f64> = pose.values().iter().map(|v| v * factor).collect();
        let (m, n) = (pose.frames(), pose.joints());
        let moved = jcd(&PoseSequence::new(m, n, 2, moved).unwrap());
        let scaled = jcd(&PoseSequence::new(m, n, 2, scaled).unwrap());
        prop_assert_eq!(base.shape(), [m, n * (n - 1) / 2]);
        for ((a, b), c) in base.values().iter().zip(moved.values()).zip(scaled.values()) {
            prop_assert!(*a >= 0.0);
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!((a * factor - c).abs() < 1e-9 * factor.max(1.0));
        }
    }

    #[test]
    fn pseudo_image_is_a_lossless_relayout(pose in pose_strategy()) {
        let image = encode_pseudo_image(&pose);
        prop_assert_eq!(image.shape(), [pose.frames(), pose.joints(), pose.dims()]);
        for t in 0..pose.frames() {
            for j in 0..pose.joints() {
                for c in 0..pose.dims() {
                    prop_assert_eq!(image.at(t, j, c).to_bits(), pose.get(t, j, c).to_bits());
                }
            }
        }
        prop_assert_eq!(decode_pseudo_image(&image), pose);
    }

    #[test]
    fn event_windows_respect_the_time_to_event_bound(track in track_strategy(), stride in 1usize..12) {
        let spec = WindowSpec::from_seconds(30.0, 16, 1.0, 2.0, stride);
        let windows = sample_windows(&track, &spec).unwrap();
        for w in &windows {
            prop_assert!(w.last_frame + 1 >= spec.m && w.last_frame < track.frames.len());
            prop_assert_eq!(w.label, track.label);
            match track.event_frame {
                Some(event) => {
                    let tte = event as i64 - w.last_frame as i64;
                    prop_assert!((30..=60).contains(&tte), "tte {}", tte);
                }
                None => prop_assert!(w.last_frame + spec.m < track.frames.len()),
            }
            let first = w.last_frame + 1 - spec.m;
            prop_assert_eq!(w.pose.get(0, 0, 0), track.frames[first].keypoints[0][0]);
            prop_assert_eq!(w.pose.get(spec.m - 1, 1, 1), track.frames[w.last_frame].keypoints[1][1]);
        }
        for pair in windows.windows(2) {
            prop_assert_eq!(pair[1].last_frame - pair[0].last_frame, stride);
        }
    }

    #[test]
    fn split_is_a_partition_invariant_to_order(n in 1usize..80, seed in any::<u64>(), rot in 0usize..80) {
        let tracks: Vec<TrackRecord> = (0..n).map(|i| track(i, 3, None)).collect();
        let s = split(&tracks, [0.7, 0.15, 0.15], seed).unwrap();
        let mut ids: Vec<String> = s.train.iter().chain(&s.val).chain(&s.test).map(|t| t.track_id.clone()).collect();
        ids.sort();
        let mut expected: Vec<String> = tracks.iter().map(|t| t.track_id.clone()).collect();
        expected.sort();
        prop_assert_eq!(ids, expected);

        let mut shuffled = tracks.clone();
        shuffled.rotate_left(rot % n);
        shuffled.reverse();
        let t = split(&shuffled, [0.7, 0.15, 0.15], seed).unwrap();
        let names = |v: &[TrackRecord]| {
            let mut x: Vec<String> = v.iter().map(|t| t.track_id.clone()).collect();
            x.sort();
            x
        };
        prop_assert_eq!(names(&s.train), names(&t.train));
        prop_assert_eq!(names(&s.val), names(&t.val));
        prop_assert_eq!(names(&s.test), names(&t.test));
    }

    #[test]
    fn metrics_are_permutation_invariant(scores in scored(), rot in 0usize..60) {
        let a = metrics(&scores).unwrap();
        let mut other = scores.clone();
        other.rotate_left(rot % scores.len());
        other.reverse();
        prop_assert_eq!(a, metrics(&other).unwrap());
    }

    #[test]
    fn f1_is_the_harmonic_mean_of_independent_precision_and_recall(scores in scored()) {
        let m = metrics(&scores).unwrap();
        let (mut tp, mut fp, mut fneg, mut tn) = (0.0, 0.0, 0.0, 0.0);
        for &(p, y) in &scores {
            match (p >= 0.5, y == 1) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fneg += 1.0,
                (false, false) => tn += 1.0,
            }
        }
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        prop_assert!((m.precision - precision).abs() < 1e-12);
        prop_assert!((m.recall - recall).abs() < 1e-12);
        prop_assert!((m.f1 - f1).abs() < 1e-12);
        prop_assert!((m.acc - (tp + tn) / scores.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn clamped_loss_is_always_finite(p in 0.0f64..=1.0, y in 0u8..2, w in 0.01f64..10.0) {
        prop_assert!(bce(p, y, (w, w)).is_finite());
        let t = Tensor::param(&[1], vec![p]).unwrap();
        let loss = weighted_bce(&t, &[y], (w, w)).unwrap();
        prop_assert!(loss.item().unwrap().is_finite());
        loss.backward().unwrap();
        prop_assert!(t.grad().unwrap()[0].is_finite());
    }

    #[test]
    fn structural_ops_invert_bit_exactly(
        rows in 1usize..5,
        cols in 1usize..5,
        cut in 0usize..5,
        seed in any::<u64>(),
    ) {
        let data: Vec<f64> = (0..rows * cols).map(|i| ((seed.wrapping_add(i as u64) % 997) as f64).sin()).collect();
        let x = Tensor::new(&[rows, cols], data.clone()).unwrap();
        prop_assert_eq!(x.reverse(1).unwrap().reverse(1).unwrap().to_vec(), data.clone());
        prop_assert_eq!(x.reshape(&[cols, rows]).unwrap().reshape(&[rows, cols]).unwrap().to_vec(), data.clone());
        if cols > 1 {
            let cut = 1 + cut % (cols - 1);
            let parts = [x.slice(1, 0, cut).unwrap(), x.slice(1, cut, cols).unwrap()];
            prop_assert_eq!(Tensor::concat(&parts, 1).unwrap().to_vec(), data);
        }
        let s = x.softmax(1).unwrap();
        for row in s.data().chunks(cols) {
            prop_assert!(row.iter().all(|v| *v > 0.0 && *v < 1.0 || cols == 1));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_tracks_are_always_valid(
        n in 2usize..12,
        seed in any::<u64>(),
        noise in 0.0f64..0.05,
        positive in 0.0f64..=1.0,
        standing in 0.0f64..0.5,
        hesitant in 0.0f64..0.5,
    ) {
        let cfg = SyntheticConfig {
            n_tracks: n,
            seed,
            noise_std: noise,
            positive_fraction: positive,
            standing_fraction: standing,
            hesitant_fraction: hesitant,
            ..SyntheticConfig::default()
        };
        let tracks = synth_generate(&cfg).unwrap();
        prop_assert_eq!(tracks.len(), n);
        for t in &tracks {
            prop_assert!(t.validate(Some(18)).is_ok(), "{:?}", t.validate(Some(18)));
            prop_assert_eq!(t.label == 1, t.event_frame.is_some());
            prop_assert!(t.has_speed());
        }
        let positives = tracks.iter().filter(|t| t.label == 1).count();
        prop_assert_eq!(positives, (positive * n as f64).round() as usize);
    }
}

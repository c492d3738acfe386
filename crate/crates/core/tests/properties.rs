use posecast_core::autodiff::{Tape, Tensor};
use posecast_core::encodings::{build_psi, g_index, soft_dtw, DistanceKind, Point, TrajectorySimilarity, TrpeConfig};
use posecast_core::motion::{
    dct_matrix, dct_time, differences, idct_time, integrate_displacements, lowpass_smooth, scene_from_json,
    scene_to_json, Scene, Sequence, Skeleton, Unit,
};
use posecast_core::tbpm::TokenLayout;
use posecast_core::training::{ape, fde, jpe, rec_loss, rec_loss_value, split_indices, stack_persons};
use proptest::prelude::*;

const J: usize = 15;

fn sequence(frames: usize) -> impl Strategy<Value = Sequence> {
    prop::collection::vec(-2.0..2.0f64, frames * J * 3).prop_map(move |d| Sequence::new(frames, J, d).unwrap())
}

fn persons(p: usize, frames: usize) -> impl Strategy<Value = Vec<Sequence>> {
    prop::collection::vec(sequence(frames), p)
}

fn walk(len: usize) -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec(prop::array::uniform3(-1.0..1.0f64), len).prop_map(|steps| {
        let mut p = [0.0; 3];
        steps
            .into_iter()
            .map(|s| {
                for c in 0..3 {
                    p[c] += s[c];
                }
                p
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dct_rows_are_orthonormal(n in 1usize..64) {
        let d = dct_matrix(n);
        for a in 0..n {
            for b in 0..n {
                let dot: f64 = (0..n).map(|i| d[a * n + i] * d[b * n + i]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dct_roundtrip(n in 1usize..40, width in 1usize..6, seed in any::<u64>()) {
        let x: Vec<f64> = (0..n * width).map(|i| ((i as u64 ^ seed) % 1000) as f64 / 100.0 - 5.0).collect();
        let back = idct_time(&dct_time(&x, n, n).unwrap(), n, n).unwrap();
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn lowpass_is_idempotent(seq in sequence(12), k in 1usize..=12) {
        let once = lowpass_smooth(&seq, k).unwrap();
        let twice = lowpass_smooth(&once, k).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn g_index_is_odd_monotone_and_bounded(a in -5000.0..5000.0f64, b in -5000.0..5000.0f64) {
        let g = |e| g_index(e, 1, 9, 2000.0);
        prop_assert_eq!(g(-a), -g(a));
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(g(lo) <= g(hi));
        prop_assert!((-9..=9).contains(&g(a)));
    }

    #[test]
    fn dtw_is_symmetric_and_zero_on_self(a in walk(6), b in walk(6)) {
        let ab = soft_dtw(&a, &b, 0.0).unwrap();
        let ba = soft_dtw(&b, &a, 0.0).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(soft_dtw(&a, &a, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn psi_structure(p in 1usize..4, t in 4usize..10, l in 1usize..4, parts in 1usize..4, seed in 0u64..1000) {
        let roots: Vec<Vec<Point>> = (0..p)
            .map(|m| (0..t).map(|i| {
                let x = ((seed + 7 * m as u64 + i as u64) % 13) as f64;
                [x * 30.0, 0.0, m as f64 * 50.0]
            }).collect())
            .collect();
        let cfg = TrpeConfig::default();
        let sim = TrajectorySimilarity::compute(&roots, l, 1, DistanceKind::SlDtw, 0.0).unwrap();
        let windows = t - l + 1;
        let layout = TokenLayout { persons: p, windows, parts };
        let psi = build_psi(&sim, layout, &cfg).unwrap();
        prop_assert_eq!(psi.size(), p * windows * parts);
        for i in 0..psi.size() {
            for j in 0..psi.size() {
                let v = psi.get(i, j);
                prop_assert_eq!(v, psi.get(j, i));
                prop_assert!(v <= 9);
                let (a, b) = (layout.token(i), layout.token(j));
                if a.person == b.person {
                    prop_assert_eq!(v, 0);
                } else if a.window != b.window {
                    prop_assert_eq!(v, 9);
                }
            }
        }
    }

    #[test]
    fn layout_rows_roundtrip(p in 1usize..5, w in 1usize..8, b in 1usize..6) {
        let layout = TokenLayout { persons: p, windows: w, parts: b };
        prop_assert_eq!(layout.len(), p * w * b);
        for r in 0..layout.len() {
            prop_assert_eq!(layout.row(layout.token(r)), r);
        }
    }

    #[test]
    fn errors_vanish_on_truth_and_are_nonnegative(pred in persons(2, 3), truth in persons(2, 3)) {
        for f in 0..3 {
            prop_assert_eq!(jpe(&truth, &truth, f, Unit::Meters).unwrap(), 0.0);
            prop_assert!(jpe(&pred, &truth, f, Unit::Meters).unwrap() >= 0.0);
            prop_assert!(ape(&pred, &truth, f, 0, Unit::Meters).unwrap() >= 0.0);
        }
        prop_assert!(fde(&pred, &truth, 0, Unit::Meters).unwrap() >= 0.0);
    }

    #[test]
    fn ape_ignores_per_person_translation(
        pred in persons(3, 2),
        truth in persons(3, 2),
        shifts in prop::collection::vec(prop::array::uniform3(-3.0..3.0f64), 3),
    ) {
        let moved: Vec<Sequence> = pred.iter().zip(&shifts).map(|(s, d)| {
            let mut s = s.clone();
            for t in 0..s.frames() {
                for j in 0..J {
                    let q = s.point(t, j);
                    s.set_point(t, j, [q[0] + d[0], q[1] + d[1], q[2] + d[2]]);
                }
            }
            s
        }).collect();
        for f in 0..2 {
            let a = ape(&pred, &truth, f, 0, Unit::Meters).unwrap();
            let b = ape(&moved, &truth, f, 0, Unit::Meters).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_offset_gives_its_length(truth in persons(2, 2), d in prop::array::uniform3(-1.0..1.0f64)) {
        let moved: Vec<Sequence> = truth.iter().map(|s| {
            let data = s.data().chunks(3).flat_map(|p| [p[0] + d[0], p[1] + d[1], p[2] + d[2]]).collect();
            Sequence::new(s.frames(), J, data).unwrap()
        }).collect();
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let got = jpe(&moved, &truth, 1, Unit::Millimeters).unwrap();
        prop_assert!((got - norm).abs() < 1e-9);
    }

    #[test]
    fn tape_loss_matches_loop(pred in persons(2, 3), truth in persons(2, 3)) {
        let mut tape = Tape::new();
        let p = tape.leaf(stack_persons(&pred).unwrap());
        let loss = rec_loss(&mut tape, p, &stack_persons(&truth).unwrap()).unwrap();
        let want = rec_loss_value(&pred, &truth).unwrap();
        prop_assert!((tape.value(loss).data()[0] - want).abs() < 1e-12);
        prop_assert!(want > 0.0);
    }

    #[test]
    fn differences_integrate_back(seq in sequence(6)) {
        let disp = differences(&seq);
        let start = vec![seq.frame(0).to_vec()];
        let back = &integrate_displacements(&start, &[disp]).unwrap()[0];
        for t in 1..6 {
            for (a, b) in back.frame(t - 1).iter().zip(seq.frame(t)) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn scene_json_roundtrip_is_exact(people in persons(2, 4)) {
        let scene = Scene::new(25.0, Unit::Meters, Skeleton::default_15(), people).unwrap();
        let back = scene_from_json(&scene_to_json(&scene, None).unwrap()).unwrap().scene;
        for (a, b) in scene.persons.iter().zip(&back.persons) {
            prop_assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn split_partitions(n in 0usize..300, seed in any::<u64>()) {
        let (train, held) = split_indices(n, seed);
        prop_assert_eq!(train.len() + held.len(), n);
        if n >= 2 {
            prop_assert_eq!(held.len(), (n / 10).max(1));
        }
        let mut all: Vec<usize> = train.into_iter().chain(held).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}

#[test]
fn tensor_shapes_are_checked() {
    assert!(Tensor::new([2, 3], vec![0.0; 5]).is_err());
}

use worldfeatures::gaze::{
    fixation_transform, fixation_transform_with, order_saccades, pursuit_track, saccade_track, synth_motion,
    synth_motion_track, temporal_diff_saliency, variance_box, FixationFit, GazePath, MotionSpec, SaliencyMap,
};
use worldfeatures::{
    warp_clip, BoundingBox, Error, FeatureMap, FrameTransform, InterpMode, ValidityMask,
};

fn bx(y0: f64, x0: f64, y1: f64, x1: f64) -> BoundingBox {
    BoundingBox::new(y0, x0, y1, x1).unwrap()
}

#[test]
fn saliency_examples() {
    let still = FeatureMap::new((4, 2, 3, 3), vec![0.3; 72]).unwrap();
    let s = temporal_diff_saliency(&still).unwrap();
    assert_eq!(s.dims(), (3, 3, 3));
    assert!(s.data().iter().all(|v| *v == 0.0));

    let frames = (0..5)
        .map(|t| {
            let mut f = vec![0.0; 12];
            f[7] = (t % 2) as f32;
            f
        })
        .collect();
    let blink = FeatureMap::from_frames(1, 3, 4, frames).unwrap();
    let s = temporal_diff_saliency(&blink).unwrap();
    for t in 0..4 {
        for k in 0..12 {
            assert_eq!(s.data()[t * 12 + k], if k == 7 { 1.0 } else { 0.0 });
        }
    }
    assert!(matches!(
        temporal_diff_saliency(&FeatureMap::zeros((1, 1, 2, 2)).unwrap()),
        Err(Error::Contract(_))
    ));
}

#[test]
fn variance_box_examples() {
    let mut data = vec![0.0; 2 * 6 * 8];
    data[3 * 8 + 5] = 2.0;
    let s = SaliencyMap::new((2, 6, 8), data).unwrap();
    assert_eq!(variance_box(&s, 0.8).unwrap(), bx(2.5, 4.5, 3.5, 5.5));

    let uniform = SaliencyMap::new((1, 10, 10), vec![1.0; 100]).unwrap();
    let b = variance_box(&uniform, 0.8).unwrap();
    // each axis may drop 10 of its 100 units of mass, i.e. one row or column
    assert_eq!((b.height(), b.width()), (9.0, 9.0));
    assert!(b.area() >= 80.0);

    let mut data = vec![0.0; 49];
    for (y, x) in [(1, 2), (4, 5), (3, 3)] {
        data[y * 7 + x] = 1.0;
    }
    let sparse = SaliencyMap::new((1, 7, 7), data).unwrap();
    assert_eq!(variance_box(&sparse, 1.0).unwrap(), bx(0.5, 1.5, 4.5, 5.5));

    let empty = SaliencyMap::new((1, 3, 3), vec![0.0; 9]).unwrap();
    assert!(matches!(variance_box(&empty, 0.8), Err(Error::Degenerate(_))));
    assert!(variance_box(&uniform, 0.0).is_err());
    assert!(SaliencyMap::new((1, 1, 1), vec![-1.0]).is_err());
}

#[test]
fn fixation_examples() {
    let (h, w) = (9, 9);
    assert!(fixation_transform(&BoundingBox::full_frame(h, w), h, w)
        .unwrap()
        .max_abs_diff(&FrameTransform::identity())
        < 1e-15);
    let half = fixation_transform(&bx(2.0, 2.0, 6.0, 6.0), h, w).unwrap();
    assert!(half.max_abs_diff(&FrameTransform::scale(0.5)) < 1e-15);
    assert_eq!(half.apply_point((1.0, 1.0)).unwrap(), (0.5, 0.5));
    // quarter-size box in the top-left
    let q = fixation_transform(&bx(0.0, 0.0, 2.0, 2.0), h, w).unwrap();
    assert!(q.max_abs_diff(&FrameTransform::translate(-0.75, -0.75).compose(&FrameTransform::scale(0.25))) < 1e-15);
    assert_eq!(q.apply_point((-1.0, -1.0)).unwrap(), (-1.0, -1.0));
    assert_eq!(q.apply_point((1.0, 1.0)).unwrap(), (-0.5, -0.5));

    assert!(fixation_transform(&bx(20.0, 20.0, 30.0, 30.0), h, w).is_err());
    let tall = fixation_transform_with(&bx(0.0, 3.0, 8.0, 5.0), h, w, FixationFit::PreserveAspect).unwrap();
    let p = tall.params();
    assert!((p[0] - p[4]).abs() < 1e-15);
}

#[test]
fn pursuit_examples() {
    let (h, w) = (17, 33);
    let full = vec![BoundingBox::full_frame(h, w); 4];
    assert!(pursuit_track(&full, h, w).unwrap().iter().all(|t| t.max_abs_diff(&FrameTransform::identity()) < 1e-15));

    let centered = vec![bx(4.0, 8.0, 12.0, 24.0); 3];
    for t in pursuit_track(&centered, h, w).unwrap().iter() {
        assert!(t.max_abs_diff(&FrameTransform::scale(0.5)) < 1e-15);
    }

    let moving: Vec<BoundingBox> = (0..5).map(|t| bx(4.0, 2.0 + t as f64, 12.0, 18.0 + t as f64)).collect();
    let track = pursuit_track(&moving, h, w).unwrap();
    for t in 1..5 {
        let d = track.get(t).unwrap().params()[5] - track.get(t - 1).unwrap().params()[5];
        assert!((d - 2.0 / (w - 1) as f64).abs() < 1e-12);
    }

    let bad = vec![bx(0.0, 0.0, 2.0, 2.0), bx(50.0, 50.0, 60.0, 60.0)];
    let err = pursuit_track(&bad, h, w).unwrap_err();
    assert!(err.to_string().contains("frame 1"), "{err}");
}

#[test]
fn pursuit_warp_fills_frame_with_box() {
    // box content lands on the output corners
    let (h, w) = (9, 9);
    let data: Vec<f32> = (0..81).map(|k| k as f32).collect();
    let clip = FeatureMap::new((1, 1, h, w), data).unwrap();
    let track = pursuit_track(&[bx(2.0, 2.0, 6.0, 6.0)], h, w).unwrap();
    let (out, valid) = warp_clip(&clip, &ValidityMask::ones((1, h, w)), &track, InterpMode::Nearest).unwrap();
    assert_eq!(out.get(0, 0, 0, 0), clip.get(0, 0, 2, 2));
    assert_eq!(out.get(0, 0, 8, 8), clip.get(0, 0, 6, 6));
    assert_eq!(out.get(0, 0, 0, 8), clip.get(0, 0, 2, 6));
    assert!(valid.data().iter().all(|v| *v == 1.0));
}

#[test]
fn saccade_ordering_examples() {
    let a = bx(0.0, 0.0, 10.0, 10.0);
    let b = bx(1.0, 1.0, 9.0, 9.0);
    let c = bx(3.0, 3.0, 6.0, 6.0);
    assert!(a.iou(&b) > a.iou(&c));
    assert_eq!(order_saccades(&[c, a, b]).unwrap().order(), &[1, 2, 0]);

    let same = vec![b; 6];
    assert_eq!(order_saccades(&same).unwrap().order(), &[0, 1, 2, 3, 4, 5]);

    let path = order_saccades(&[c, a, b]).unwrap();
    assert_eq!(path.boxes(), &[a, b, c]);
}

#[test]
fn saccade_track_examples() {
    let (h, w) = (32, 32);
    let full = GazePath::new(vec![BoundingBox::full_frame(h, w); 64]).unwrap();
    let track = saccade_track(&full, h, w).unwrap();
    assert_eq!(track.len(), 64);
    assert!(track.iter().all(|t| t.max_abs_diff(&FrameTransform::identity()) < 1e-15));

    let boxes: Vec<BoundingBox> = (0..64)
        .map(|k| {
            let (y, x) = ((k / 8) as f64 * 3.0, (k % 8) as f64 * 3.0);
            bx(y, x, y + 8.0, x + 8.0)
        })
        .collect();
    let path = order_saccades(&boxes).unwrap();
    assert_eq!(path.len(), 64);
    let mut seen = path.order().to_vec();
    seen.sort();
    assert_eq!(seen, (0..64).collect::<Vec<_>>());
    assert_eq!(saccade_track(&path, h, w).unwrap().len(), 64);

    let big = BoundingBox::full_frame(h, w);
    let small = bx(8.0, 8.0, 23.0, 23.0);
    let alt = GazePath::new(vec![big, small, big, small]).unwrap();
    let track = saccade_track(&alt, h, w).unwrap();
    let sb = fixation_transform(&small, h, w).unwrap();
    for (t, tf) in track.iter().enumerate() {
        let want = if t % 2 == 0 { FrameTransform::identity() } else { sb };
        assert!(tf.max_abs_diff(&want) < 1e-15);
    }
    assert!(GazePath::new(Vec::new()).is_err());
}

#[test]
fn motion_examples() {
    let spec = MotionSpec::new(64, 42);
    assert_eq!(synth_motion_track(&spec).unwrap(), synth_motion_track(&spec).unwrap());
    assert_ne!(synth_motion_track(&spec).unwrap(), synth_motion_track(&MotionSpec::new(64, 43)).unwrap());

    let still = MotionSpec {
        scale_range: (1.0, 1.0),
        center_extent: 0.0,
        ..spec
    };
    let track = synth_motion_track(&still).unwrap();
    assert!(track.iter().all(|t| t.max_abs_diff(&FrameTransform::identity()) < 1e-15));

    let m = synth_motion(&spec).unwrap();
    assert_eq!(m.track.len(), 64);
    let mid = (64 - 1) / 2;
    assert_eq!(spec.waypoint_frame(1), mid);
    assert_eq!(*m.track.get(mid).unwrap(), m.waypoints[1].transform());
    assert_eq!(*m.track.get(0).unwrap(), m.waypoints[0].transform());
    assert_eq!(*m.track.get(63).unwrap(), m.waypoints[2].transform());

    // midpoint of a segment averages the endpoints in (center, log scale)
    let (a, b) = (m.states[0], m.states[2]);
    let s1 = m.states[1];
    assert!((s1.center.0 - (a.center.0 + b.center.0) / 2.0).abs() < 1e-12);
    assert!((s1.scale.ln() - (a.scale.ln() + b.scale.ln()) / 2.0).abs() < 1e-12);

    assert!(synth_motion_track(&MotionSpec::new(2, 0)).is_err());
    let bad = MotionSpec {
        scale_range: (0.0, 3.0),
        ..spec
    };
    assert!(bad.validate().is_err());
}

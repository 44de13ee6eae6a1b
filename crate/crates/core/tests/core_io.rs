mod common;

use common::*;
use worldfeatures::io::{
    boxes_from_json, boxes_to_json, decode_tensor, encode_tensor, read_image_dir, read_tensor, track_from_json,
    track_to_json, write_image_dir, write_tensor, TENSOR_MAGIC,
};
use worldfeatures::{
    replicate_image, BoundingBox, Error, FeatureMap, FrameTransform, TransformTrack, ValidityMask, WorldFeature,
};

#[test]
fn single_value_tensor_is_24_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.wft");
    write_tensor(&FeatureMap::zeros((1, 1, 1, 1)).unwrap(), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes.len(), 24);
    assert_eq!(&bytes[..4], TENSOR_MAGIC);
}

#[test]
fn tensor_file_round_trip() {
    let mut r = rng(1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.wft");
    let fm = FeatureMap::new((2, 3, 4, 5), random_values(&mut r, 120)).unwrap();
    write_tensor(&fm, &path).unwrap();
    let back = read_tensor(&path).unwrap();
    assert!(fm.data().iter().zip(back.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(back.dims(), (2, 3, 4, 5));
}

#[test]
fn bad_magic_is_format_error() {
    let mut bytes = encode_tensor(&FeatureMap::zeros((1, 1, 1, 1)).unwrap()).unwrap();
    bytes[..4].copy_from_slice(b"XXXX");
    assert!(matches!(decode_tensor(&bytes), Err(Error::Format(_))));
}

#[test]
fn short_payload_is_truncation_error() {
    let bytes = encode_tensor(&FeatureMap::zeros((2, 3, 4, 5)).unwrap()).unwrap();
    let cut = &bytes[..20 + 4 * 100];
    assert!(matches!(
        decode_tensor(cut),
        Err(Error::Truncated {
            expected: 120,
            found: 100
        })
    ));
}

#[test]
fn unwritable_path_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing").join("x.wft");
    let err = write_tensor(&FeatureMap::zeros((1, 1, 1, 1)).unwrap(), &path).unwrap_err();
    assert!(matches!(err, Error::IoAt { .. } | Error::Io(_)), "{err}");
    assert!(matches!(read_tensor(&path), Err(Error::IoAt { .. })));
}

#[test]
fn replicate_examples() {
    let img = FeatureMap::new((1, 3, 224, 224), (0..3 * 224 * 224).map(|k| (k % 251) as f32).collect()).unwrap();
    let clip = replicate_image(&img, 64).unwrap();
    assert_eq!(clip.dims(), (64, 3, 224, 224));
    assert!((0..64).all(|t| clip.frame(t) == img.data()));
    assert_eq!(replicate_image(&img, 1).unwrap(), img);

    let mut data = vec![0.0; 4];
    data[0] = 7.0;
    let tiny = FeatureMap::new((1, 1, 2, 2), data).unwrap();
    let three = replicate_image(&tiny, 3).unwrap();
    assert!((0..3).all(|t| three.get(t, 0, 0, 0) == 7.0));

    assert!(matches!(replicate_image(&three, 2), Err(Error::Contract(_))));
    assert!(replicate_image(&tiny, 0).is_err());
}

#[test]
fn world_feature_checks_consistency() {
    let fm = FeatureMap::zeros((3, 2, 4, 4)).unwrap();
    assert!(WorldFeature::observed(fm.clone(), TransformTrack::identity(2)).is_err());
    assert!(WorldFeature::new(fm.clone(), TransformTrack::identity(3), ValidityMask::ones((3, 4, 5))).is_err());
    let bad = ValidityMask::new((1, 1, 1), vec![1.5]);
    assert!(bad.is_err());
    let wf = WorldFeature::camera(fm);
    assert!(wf.validity().data().iter().all(|v| *v == 1.0));
    assert!(wf.track().iter().all(|t| t.is_identity()));
    assert!(FeatureMap::new((1, 1, 2, 2), vec![0.0; 3]).is_err());
}

#[test]
fn transform_json_round_trip() {
    let affine = TransformTrack::new(vec![
        FrameTransform::identity(),
        FrameTransform::translate(0.25, -0.5),
        FrameTransform::rotation(0.3).compose(&FrameTransform::scale(1.7)),
    ])
    .unwrap();
    let back = track_from_json(&track_to_json(&affine).unwrap()).unwrap();
    assert_eq!(back, affine);

    let h = FrameTransform::homography([1.0, 0.1, 0.0, 0.0, 1.0, 0.2, 0.05, 0.0, 1.0]).unwrap();
    let mixed = TransformTrack::new(vec![FrameTransform::identity(), h]).unwrap();
    let back = track_from_json(&track_to_json(&mixed).unwrap()).unwrap();
    assert_eq!(back, mixed);

    let text = track_to_json(&affine).unwrap().replace("normalized_corner_aligned", "pixels");
    assert!(matches!(track_from_json(&text), Err(Error::Format(_))));
}

#[test]
fn box_json_round_trip() {
    let boxes = vec![
        BoundingBox::new(1.0, 2.0, 10.5, 20.25).unwrap(),
        BoundingBox::new(0.0, 0.0, 3.0, 3.0).unwrap().at_frame(4),
    ];
    assert_eq!(boxes_from_json(&boxes_to_json(&boxes).unwrap()).unwrap(), boxes);
    let bad = r#"{"version":1,"boxes":[{"y0":5,"x0":0,"y1":2,"x1":3}]}"#;
    assert!(matches!(boxes_from_json(bad), Err(Error::Contract(_))));
}

#[test]
fn image_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let frames: Vec<Vec<f32>> = (0..3)
        .map(|t| (0..3 * 6 * 5).map(|k| ((k * 7 + t * 31) % 256) as f32 / 255.0).collect())
        .collect();
    let clip = FeatureMap::from_frames(3, 6, 5, frames).unwrap();
    let paths = write_image_dir(&clip, dir.path(), "frame").unwrap();
    assert_eq!(paths.len(), 3);
    let back = read_image_dir(dir.path()).unwrap();
    assert_eq!(back.dims(), clip.dims());
    assert!(back.data().iter().zip(clip.data()).all(|(a, b)| (a - b).abs() < 1e-6));

    let empty = tempfile::tempdir().unwrap();
    assert!(read_image_dir(empty.path()).is_err());
}

#[test]
fn box_geometry() {
    let a = BoundingBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
    let b = BoundingBox::new(1.0, 1.0, 3.0, 3.0).unwrap();
    assert_eq!(a.intersection_area(&b), 1.0);
    assert!((a.iou(&b) - 1.0 / 7.0).abs() < 1e-15);
    assert_eq!(a.iou(&a), 1.0);
    assert!(a.intersects_frame(4, 4));
    assert!(!BoundingBox::new(10.0, 10.0, 12.0, 12.0).unwrap().intersects_frame(4, 4));
    assert!(BoundingBox::new(0.0, 0.0, 0.0, 1.0).is_err());
}

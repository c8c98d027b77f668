mod common;

use common::random;
use proptest::prelude::*;
use robself::data::{
    degrade, load_pair, make_synthetic_pair, save_image, warp_homography, write_group, BitDepth, ImagePair,
    MisalignSpec, PairSource,
};
use robself::model::{Modality, RobSelfConfig};
use robself::tensor::nearest_broadcast;
use robself::{Error, Tensor};

fn depth_group(dir: &std::path::Path, factor: usize, with_gt: bool) {
    let (h, w) = (288, 320);
    let src = Tensor::<f64>::from_fn3(1, h, w, |_, y, x| ((y * 31 + x * 17) % 60000) as f64);
    let guide = Tensor::<f64>::from_fn3(3, h * factor, w * factor, |c, y, x| ((x + y + c) % 256) as f64 / 255.0);
    let gt = nearest_broadcast(&src, factor).unwrap();
    let mut pair = ImagePair::new(src, guide, with_gt.then_some(gt), factor, "g").unwrap();
    pair.source_depth = BitDepth::Sixteen;
    pair.modality = Some(Modality::Depth);
    pair.value_scale = 0.001;
    write_group(dir, &pair, factor, "png", BitDepth::Eight).unwrap();
}

#[test]
fn realmis_x2_depth_group_shapes() {
    let dir = tempfile::tempdir().unwrap();
    depth_group(dir.path(), 2, true);
    let cfg = RobSelfConfig::preset("real-depth-x2").unwrap();
    let pair = load_pair::<f64>(&PairSource::RealMis(dir.path().to_path_buf()), &cfg).unwrap();
    assert_eq!(pair.source_lr.shape(), &[1, 288, 320]);
    assert_eq!(pair.guide_hr.shape(), &[3, 576, 640]);
    assert_eq!(pair.gt_hr.as_ref().unwrap().shape(), &[1, 576, 640]);
    assert_eq!(pair.source_depth, BitDepth::Sixteen);
    assert_eq!(pair.value_scale, 0.001);
    assert_eq!(pair.source_lr.at3(0, 5, 7), (5 * 31 + 7 * 17) as f64);
}

#[test]
fn realmis_x4_group_has_no_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    depth_group(dir.path(), 4, false);
    let cfg = RobSelfConfig::preset("real-depth-x4").unwrap();
    let pair = load_pair::<f32>(&PairSource::RealMis(dir.path().to_path_buf()), &cfg).unwrap();
    assert!(pair.gt_hr.is_none());
    assert_eq!(pair.guide_hr.shape(), &[3, 1152, 1280]);
}

#[test]
fn modality_and_channel_mismatches_are_contract_errors() {
    let dir = tempfile::tempdir().unwrap();
    depth_group(dir.path(), 2, false);
    let nir = RobSelfConfig::preset("real-nir-x2").unwrap();
    let err = load_pair::<f64>(&PairSource::RealMis(dir.path().to_path_buf()), &nir).unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "{err}");
    let mut gray = RobSelfConfig::preset("real-depth-x2").unwrap();
    gray.psi = 1;
    let err = load_pair::<f64>(&PairSource::RealMis(dir.path().to_path_buf()), &gray).unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "{err}");
}

#[test]
fn flat_layout_with_wrong_ratio_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (s, g) = (dir.path().join("s.png"), dir.path().join("g.png"));
    save_image(&s, &Tensor::<f64>::zeros(vec![1, 8, 8]), BitDepth::Eight).unwrap();
    save_image(&g, &Tensor::<f64>::zeros(vec![3, 24, 24]), BitDepth::Eight).unwrap();
    let cfg = RobSelfConfig::preset("real-depth-x2").unwrap();
    let err = load_pair::<f64>(&PairSource::Flat { source: s, guide: g, gt: None }, &cfg).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn missing_guide_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    save_image(&dir.path().join("source_lr.png"), &Tensor::<f64>::zeros(vec![1, 8, 8]), BitDepth::Eight).unwrap();
    let cfg = RobSelfConfig::preset("real-depth-x2").unwrap();
    match load_pair::<f64>(&PairSource::RealMis(dir.path().to_path_buf()), &cfg) {
        Err(Error::MissingFile(p)) => assert!(p.ends_with("guide_x2.png")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn synthetic_group_round_trip_replays_the_homography() {
    let dir = tempfile::tempdir().unwrap();
    let src = random(&[1, 32, 32], 1, 0.0, 1.0);
    let guide = random(&[3, 32, 32], 2, 0.0, 1.0);
    let spec = MisalignSpec { translation: 8.0, rotation: 4.0, perspective: 0.02, seed: 1 };
    let pair = make_synthetic_pair(&src, &guide, &spec, 4).unwrap();
    write_group(dir.path(), &pair, 4, "tfm", BitDepth::Float).unwrap();
    let cfg = RobSelfConfig::preset("syn-depth-x4").unwrap();
    let back = load_pair::<f64>(&PairSource::RealMis(dir.path().to_path_buf()), &cfg).unwrap();
    assert_eq!(back.source_lr, pair.source_lr);
    assert_eq!(back.guide_hr, pair.guide_hr);
    assert_eq!(back.gt_hr, pair.gt_hr);
    assert_eq!(back.homography, pair.homography);
    assert_eq!(warp_homography(&guide, back.homography.as_ref().unwrap()).unwrap(), back.guide_hr);
}

proptest! {
    #[test]
    fn degrade_is_a_projection(seed in 0u64..1000, factor in prop::sample::select(vec![2usize, 4])) {
        let x = random(&[2, 8, 8], seed, -1.0, 1.0);
        let d = degrade(&x, factor).unwrap();
        let again = degrade(&nearest_broadcast(&d, factor).unwrap(), factor).unwrap();
        let tol = (factor * factor) as f64 * f64::EPSILON;
        prop_assert!(d.max_abs_diff(&again).unwrap() <= tol);
    }

    #[test]
    fn synthetic_pairs_never_touch_the_source(seed in 0u64..200) {
        let src = random(&[1, 16, 16], seed, 0.0, 1.0);
        let guide = random(&[3, 16, 16], seed + 1, 0.0, 1.0);
        let spec = MisalignSpec { translation: 6.0, rotation: 3.0, perspective: 0.0, seed };
        let p = make_synthetic_pair(&src, &guide, &spec, 2).unwrap();
        prop_assert_eq!(p.gt_hr.as_ref().unwrap(), &src);
    }
}

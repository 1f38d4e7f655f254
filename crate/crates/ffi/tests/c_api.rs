use std::ffi::{CStr, CString};
use std::ptr;

use pkt_pcqa::cloud::{write_ply, PlyEncoding};
use pkt_pcqa::distortion::{generate_reference, RefShape};
use pkt_pcqa::eval::ModelPredictor;
use pkt_pcqa::kce::{extract_key_clusters, KceConfig};
use pkt_pcqa::nn::{Checkpoint, CheckpointMeta, NetworkConfig, QaModel, Task};
use pkt_pcqa::train::KceCache;
use pkt_pcqa_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(pkt_last_error()) }.to_string_lossy().into_owned()
}

fn cstr(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn sample_cloud() -> (Vec<f64>, Vec<u8>) {
    let pc = generate_reference(RefShape::Torus, 600, 5).unwrap();
    let xyz = pc.coords().iter().flatten().copied().collect();
    let rgb = pc.colors().iter().flatten().copied().collect();
    (xyz, rgb)
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(pkt_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_reported() {
    unsafe {
        let mut cloud = ptr::null_mut();
        assert_eq!(pkt_cloud_load(ptr::null(), &mut cloud), PktStatus::NullArgument);
        assert!(cloud.is_null());
        assert!(last_error().contains("null"));
        assert_eq!(pkt_cloud_len(ptr::null()), 0);
        pkt_cloud_free(ptr::null_mut());
        let mut out = 0.0;
        assert_eq!(pkt_plcc(ptr::null(), ptr::null(), 3, &mut out), PktStatus::NullArgument);
    }
}

#[test]
fn key_clusters_match_the_library() {
    let (xyz, rgb) = sample_cloud();
    unsafe {
        let mut cloud = ptr::null_mut();
        assert_eq!(pkt_cloud_from_arrays(xyz.as_ptr(), rgb.as_ptr(), 600, &mut cloud), PktStatus::Ok);
        assert_eq!(pkt_cloud_len(cloud), 600);

        let mut kc = ptr::null_mut();
        assert_eq!(pkt_keyclusters_extract(cloud, 5000, 4, &mut kc), PktStatus::CloudTooSmall);
        assert!(kc.is_null());
        assert!(last_error().contains("5000"));

        assert_eq!(pkt_keyclusters_extract(cloud, 32, 4, &mut kc), PktStatus::Ok);
        assert_eq!(last_error(), "");
        let (mut beta, mut k) = (0usize, 0usize);
        assert_eq!(pkt_keyclusters_shape(kc, &mut beta, &mut k), PktStatus::Ok);
        assert_eq!((beta, k), (32, 4));

        let mut buf = vec![0.0; beta * k * 6];
        assert_eq!(pkt_keyclusters_copy(kc, buf.as_mut_ptr(), buf.len() - 1), PktStatus::BufferTooSmall);
        assert_eq!(pkt_keyclusters_copy(kc, buf.as_mut_ptr(), buf.len()), PktStatus::Ok);

        let pc = pkt_pcqa::cloud::PointCloud::new(
            xyz.chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
            rgb.chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
            "x",
        )
        .unwrap();
        let cfg = KceConfig { beta: 32, k: 4, ..KceConfig::default() };
        assert_eq!(buf, extract_key_clusters(&pc, &cfg).unwrap().clusters);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kc.pkcs");
        assert_eq!(pkt_keyclusters_save(kc, cstr(&path).as_ptr()), PktStatus::Ok);
        assert!(path.is_file());

        pkt_keyclusters_free(kc);
        pkt_cloud_free(cloud);
    }
}

#[test]
fn model_scores_agree_with_file_scoring() {
    let dir = tempfile::tempdir().unwrap();
    let net = NetworkConfig::tiny(16, 4);
    let ck = Checkpoint {
        model: QaModel::new(net, 3).unwrap(),
        meta: CheckpointMeta {
            stage: Task::Prediction,
            epoch: 0,
            seed: 3,
            mos_scale: (1.0, 10.0),
            level_thresholds: Some((0.4, 0.6)),
        },
    };
    let model_path = dir.path().join("m.ckpt");
    ck.save(&model_path).unwrap();
    let ply = dir.path().join("c.ply");
    let pc = generate_reference(RefShape::Cube, 500, 1).unwrap();
    write_ply(&ply, &pc, PlyEncoding::BinaryLittleEndian).unwrap();
    let expect = ModelPredictor::new(ck, KceCache::default()).score(&ply).unwrap();

    unsafe {
        let mut model = ptr::null_mut();
        let missing = cstr(&dir.path().join("nope.ckpt"));
        assert_eq!(pkt_model_load(missing.as_ptr(), &mut model), PktStatus::Io);
        assert_eq!(pkt_model_load(cstr(&model_path).as_ptr(), &mut model), PktStatus::Ok);
        let mut cloud = ptr::null_mut();
        assert_eq!(pkt_cloud_load(cstr(&ply).as_ptr(), &mut cloud), PktStatus::Ok);
        let (mut mos, mut level) = (0.0, -1);
        assert_eq!(pkt_model_score(model, cloud, &mut mos, &mut level), PktStatus::Ok);
        assert_eq!(mos, expect.0);
        assert_eq!(level, expect.1.index() as i32);
        assert!((1.0..=10.0).contains(&mos));
        pkt_cloud_free(cloud);
        pkt_model_free(model);
    }
}

#[test]
fn correlations() {
    let x = [1.0, 2.0, 3.0];
    let y = [1.0, 3.0, 2.0];
    let rev = [3.0, 2.0, 1.0];
    let mut out = 0.0;
    unsafe {
        assert_eq!(pkt_plcc(x.as_ptr(), y.as_ptr(), 3, &mut out), PktStatus::Ok);
        assert!((out - 0.5).abs() < 1e-15);
        assert_eq!(pkt_srocc(x.as_ptr(), rev.as_ptr(), 3, &mut out), PktStatus::Ok);
        assert_eq!(out, -1.0);
        let flat = [2.0; 3];
        assert_eq!(pkt_plcc(flat.as_ptr(), y.as_ptr(), 3, &mut out), PktStatus::ConstantVector);
    }
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/pkt_pcqa.h");
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header])
        .status()
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(status.success());
}

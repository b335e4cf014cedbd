use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use latentflow::model::ModelConfig;
use latentflow::prior::PriorKind;
use latentflow::rng::Rng;
use latentflow::train::{load_bundle, TrainConfig, Trainer};
use latentflow_ffi::*;

fn config(prior: PriorKind) -> ModelConfig {
    ModelConfig {
        data_dim: 6,
        latent_dim: 3,
        hidden: vec![8],
        prior,
        flow_depth: 2,
        flow_width: 8,
        gen_width: 8,
        gen_layers: 2,
        disc_width: 8,
        disc_layers: 2,
    }
}

fn save_model(dir: &Path, prior: PriorKind) -> CString {
    let path = dir.join("model.lfck");
    Trainer::new(config(prior), TrainConfig::default())
        .unwrap()
        .save(&path)
        .unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

fn load(path: &CString) -> *mut LfModel {
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { lf_model_load(path.as_ptr(), &mut m) },
        LfStatus::Ok
    );
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    let p = lf_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn matches_rust_api() {
    let dir = tempfile::tempdir().unwrap();
    let path = save_model(dir.path(), PriorKind::Flow);
    let bundle = load_bundle(Path::new(path.to_str().unwrap())).unwrap();
    let m = load(&path);
    unsafe {
        let (mut dd, mut ld) = (0usize, 0usize);
        assert_eq!(lf_model_dims(m, &mut dd, &mut ld), LfStatus::Ok);
        assert_eq!((dd, ld), (6, 3));
        let mut flag = -1;
        assert_eq!(lf_model_has_flow(m, &mut flag), LfStatus::Ok);
        assert_eq!(flag, 1);

        let x = Rng::seed_from_u64(3)
            .normal_tensor(vec![4, 6])
            .map(|v| 1.0 / (1.0 + (-v).exp()));
        let mut z = vec![0.0; 12];
        assert_eq!(
            lf_model_encode(m, x.data().as_ptr(), 4, z.as_mut_ptr(), z.len()),
            LfStatus::Ok
        );
        assert_eq!(z, bundle.encode_mean(&x).unwrap().data());

        let mut xr = vec![0.0; 24];
        assert_eq!(
            lf_model_decode(m, z.as_ptr(), 4, xr.as_mut_ptr(), xr.len()),
            LfStatus::Ok
        );
        let zt = latentflow::Tensor::matrix(4, 3, z.clone()).unwrap();
        assert_eq!(xr, bundle.decode(&zt).unwrap().data());

        let mut s = vec![0.0; 12];
        assert_eq!(
            lf_model_sample(m, 2, 9, s.as_mut_ptr(), s.len()),
            LfStatus::Ok
        );
        assert_eq!(
            s,
            bundle.sample(&mut Rng::seed_from_u64(9), 2).unwrap().data()
        );

        let mut z0 = vec![0.0; 12];
        let mut logdet = vec![0.0; 4];
        assert_eq!(
            lf_flow_forward(
                m,
                z.as_ptr(),
                4,
                z0.as_mut_ptr(),
                12,
                logdet.as_mut_ptr(),
                4
            ),
            LfStatus::Ok
        );
        let mut back = vec![0.0; 12];
        assert_eq!(
            lf_flow_inverse(m, z0.as_ptr(), 4, back.as_mut_ptr(), 12),
            LfStatus::Ok
        );
        for (a, b) in back.iter().zip(&z) {
            assert!((a - b).abs() < 1e-10);
        }
        assert_eq!(
            lf_flow_forward(m, z.as_ptr(), 4, z0.as_mut_ptr(), 12, ptr::null_mut(), 0),
            LfStatus::Ok
        );

        let mut lp = vec![0.0; 4];
        assert_eq!(
            lf_model_log_prior(m, z.as_ptr(), 4, lp.as_mut_ptr(), 4),
            LfStatus::Ok
        );
        assert_eq!(
            lp,
            bundle.prior.log_prob_values(&bundle.store, &zt).unwrap()
        );
        lf_model_free(m);
    }
}

#[test]
fn error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let path = save_model(dir.path(), PriorKind::StandardNormal);
    let m = load(&path);
    unsafe {
        let z = [0.0; 3];
        let mut out = [0.0; 6];
        assert_eq!(
            lf_model_decode(ptr::null(), z.as_ptr(), 1, out.as_mut_ptr(), 6),
            LfStatus::NullPointer
        );
        assert_eq!(
            lf_model_decode(m, ptr::null(), 1, out.as_mut_ptr(), 6),
            LfStatus::NullPointer
        );
        assert_eq!(
            lf_model_decode(m, z.as_ptr(), 1, out.as_mut_ptr(), 5),
            LfStatus::Shape
        );
        assert!(last_error().contains("6 required"));
        assert_eq!(
            lf_model_decode(m, z.as_ptr(), 0, out.as_mut_ptr(), 6),
            LfStatus::InvalidArgument
        );
        assert_eq!(
            lf_model_sample(m, 0, 1, out.as_mut_ptr(), 6),
            LfStatus::InvalidArgument
        );

        let mut z0 = [0.0; 3];
        assert_eq!(
            lf_flow_forward(m, z.as_ptr(), 1, z0.as_mut_ptr(), 3, ptr::null_mut(), 0),
            LfStatus::Unsupported
        );
        assert_eq!(
            lf_flow_inverse(m, z.as_ptr(), 1, z0.as_mut_ptr(), 3),
            LfStatus::Unsupported
        );

        assert_eq!(
            lf_model_decode(m, z.as_ptr(), 1, out.as_mut_ptr(), 6),
            LfStatus::Ok
        );
        assert!(lf_last_error_message().is_null());
        lf_model_free(m);
        lf_model_free(ptr::null_mut());
    }
}

#[test]
fn load_failures() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = ptr::null_mut();
    let missing = CString::new(dir.path().join("nope.lfck").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { lf_model_load(missing.as_ptr(), &mut m) },
        LfStatus::Io
    );
    assert!(m.is_null());

    let junk = dir.path().join("junk.lfck");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { lf_model_load(junk.as_ptr(), &mut m) },
        LfStatus::Format
    );
    assert!(!last_error().is_empty());
    assert_eq!(
        unsafe { lf_model_load(ptr::null(), &mut m) },
        LfStatus::NullPointer
    );
}

#[test]
fn frechet_matches_core() {
    let mut rng = Rng::seed_from_u64(4);
    let a = rng.normal_tensor(vec![50, 3]);
    let b = rng.normal_tensor(vec![40, 3]).map(|v| 1.5 * v + 0.2);
    let mut ab = f64::NAN;
    let mut ba = f64::NAN;
    unsafe {
        assert_eq!(
            lf_frechet_distance(a.data().as_ptr(), 50, b.data().as_ptr(), 40, 3, &mut ab),
            LfStatus::Ok
        );
        assert_eq!(
            lf_frechet_distance(b.data().as_ptr(), 40, a.data().as_ptr(), 50, 3, &mut ba),
            LfStatus::Ok
        );
        assert_eq!(
            lf_frechet_distance(a.data().as_ptr(), 1, b.data().as_ptr(), 40, 3, &mut ba),
            LfStatus::InvalidArgument
        );
    }
    assert_eq!(ab, latentflow::metrics::frechet_between(&a, &b).unwrap());
    assert!((ab - ba).abs() < 1e-10);
}

#[test]
fn header_declares_entry_points() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/latentflow.h"))
            .unwrap();
    for name in [
        "lf_model_load",
        "lf_model_free",
        "lf_model_dims",
        "lf_model_sample",
        "lf_model_encode",
        "lf_model_decode",
        "lf_model_log_prior",
        "lf_flow_forward",
        "lf_flow_inverse",
        "lf_frechet_distance",
        "lf_last_error_message",
        "LF_STATUS_OK",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

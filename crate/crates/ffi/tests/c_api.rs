use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;

use tailcal_ffi::*;

fn last_error() -> String {
    let p = tc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn softmax_matches_core() {
    let z = [1.0, 2.0, 3.0];
    let mut out = [0.0; 3];
    assert_eq!(unsafe { tc_softmax(z.as_ptr(), 3, out.as_mut_ptr()) }, TC_OK);
    let want = tailcal::numerics::softmax(&z).unwrap();
    assert_eq!(out.as_slice(), want.as_slice());
}

#[test]
fn null_pointers_are_reported() {
    let mut out = [0.0; 2];
    assert_eq!(unsafe { tc_softmax(std::ptr::null(), 2, out.as_mut_ptr()) }, TC_ERR_NULL);
    assert!(last_error().contains("z"));
    assert_eq!(unsafe { tc_prior_num_classes(std::ptr::null()) }, 0);
    unsafe { tc_prior_free(std::ptr::null_mut()) };
}

#[test]
fn prior_adjust_round_trip() {
    let probs = [0.8, 0.2];
    let mut h: *mut TcPrior = std::ptr::null_mut();
    assert_eq!(unsafe { tc_prior_new(probs.as_ptr(), 2, TC_ESTIMATOR_VAL_SIDE, 100, 1.0, &mut h) }, TC_OK);
    assert_eq!(unsafe { tc_prior_num_classes(h) }, 2);
    let mut back = [0.0; 2];
    assert_eq!(unsafe { tc_prior_probs(h, back.as_mut_ptr(), 2) }, TC_OK);
    assert!((back[0] - 0.8).abs() < 1e-12);

    let z = [0.0, 0.0, 1.0, -1.0];
    let mut out = [0.0; 4];
    let rc = unsafe { tc_adjust_logits(z.as_ptr(), 2, 2, TC_METHOD_P2P_LA, h, std::ptr::null(), -1.0, out.as_mut_ptr()) };
    assert_eq!(rc, TC_OK);
    let shift = (0.2f64).ln() - (0.8f64).ln();
    assert!(((out[1] - out[0]) - ((z[1] - z[0]) - shift)).abs() < 1e-12);

    let rc = unsafe { tc_adjust_logits(z.as_ptr(), 2, 2, TC_METHOD_P2P_CE, h, std::ptr::null(), 1.0, out.as_mut_ptr()) };
    assert_eq!(rc, TC_ERR_INVALID);
    assert!(!last_error().is_empty());

    let rc = unsafe { tc_adjust_logits(z.as_ptr(), 2, 2, 99, h, std::ptr::null(), 1.0, out.as_mut_ptr()) };
    assert_eq!(rc, TC_ERR_INVALID);

    let rc = unsafe { tc_adjust_logits(z.as_ptr(), 2, 2, TC_METHOD_NONE, std::ptr::null(), std::ptr::null(), 1.0, out.as_mut_ptr()) };
    assert_eq!(rc, TC_OK);
    assert_eq!(out, z);
    unsafe { tc_prior_free(h) };
}

#[test]
fn model_handle() {
    use tailcal::model::{save_model, LinearSoftmaxModel, Model, Provenance, SavedModel};
    use tailcal::numerics::{Matrix, RngStream};
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], 2).unwrap();
    let m = Model::Linear(LinearSoftmaxModel::new(w, vec![0.5, -0.5]).unwrap());
    save_model(&SavedModel { model: m, provenance: Provenance::stage1(RngStream::new(0, 0)) }, &path).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut h: *mut TcModel = std::ptr::null_mut();
    assert_eq!(unsafe { tc_model_load(cpath.as_ptr(), &mut h) }, TC_OK);
    assert_eq!(unsafe { (tc_model_num_classes(h), tc_model_dims(h)) }, (2, 2));
    let x = [2.0, 3.0];
    let mut z = [0.0; 2];
    assert_eq!(unsafe { tc_model_predict_logits(h, x.as_ptr(), 1, 2, z.as_mut_ptr()) }, TC_OK);
    assert_eq!(z, [2.5, 2.5]);
    assert_eq!(unsafe { tc_model_predict_logits(h, x.as_ptr(), 2, 1, z.as_mut_ptr()) }, TC_ERR_INPUT);
    unsafe { tc_model_free(h) };

    let missing = CString::new("/nonexistent/model.json").unwrap();
    let mut h2: *mut TcModel = std::ptr::null_mut();
    assert_eq!(unsafe { tc_model_load(missing.as_ptr(), &mut h2) }, TC_ERR_INPUT);
    assert!(h2.is_null());
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(tc_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include").join("tailcal.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["tc_softmax", "tc_prior_new", "tc_adjust_logits", "tc_model_predict_logits", "TC_ERR_NUMERIC"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"tailcal.h\"\nint main(void) { double z[2] = {0, 1}, p[2]; return tc_softmax(z, 2, p); }\n",
    )
    .unwrap();
    let Ok(status) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
    else {
        eprintln!("no C compiler; skipping syntax check");
        return;
    };
    assert!(status.success());
}

use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use locconf::predictor::MlpIouPredictor;
use locconf::pooling::PoolGrid;
use locconf::FeatureMap;
use locconf_ffi::*;
use rand::SeedableRng;

fn last_error() -> String {
    unsafe { CStr::from_ptr(lc_last_error()) }.to_string_lossy().into_owned()
}

fn map(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> *mut LcFeatureMap {
    let values: Vec<f64> = (0..h * w).map(|k| f(k / w, k % w)).collect();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { lc_featmap_new(h, w, 1, values.as_ptr(), values.len(), &mut m) }, LcStatus::Ok);
    m
}

#[test]
fn iou_and_errors() {
    let (a, b) = ([0.0, 0.0, 10.0, 10.0], [5.0, 0.0, 15.0, 10.0]);
    let mut v = 0.0;
    assert_eq!(unsafe { lc_iou(a.as_ptr(), b.as_ptr(), &mut v) }, LcStatus::Ok);
    assert!((v - 1.0 / 3.0).abs() < 1e-12);

    let degenerate = [1.0, 1.0, 0.0, 2.0];
    assert_eq!(unsafe { lc_iou(a.as_ptr(), degenerate.as_ptr(), &mut v) }, LcStatus::Degenerate);
    assert!(last_error().contains("degenerate"));
    assert_eq!(unsafe { lc_iou(ptr::null(), b.as_ptr(), &mut v) }, LcStatus::NullPointer);
    assert_eq!(unsafe { lc_iou(a.as_ptr(), b.as_ptr(), ptr::null_mut()) }, LcStatus::NullPointer);
}

#[test]
fn featmap_shape_is_checked() {
    let values = [0.0; 5];
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { lc_featmap_new(2, 2, 1, values.as_ptr(), 5, &mut m) }, LcStatus::InvalidArgument);
    assert!(m.is_null());
    let m = map(3, 4, |_, _| 0.0);
    let (mut h, mut w, mut c) = (0, 0, 0);
    assert_eq!(unsafe { lc_featmap_dims(m, &mut h, &mut w, &mut c) }, LcStatus::Ok);
    assert_eq!((h, w, c), (3, 4, 1));
    unsafe { lc_featmap_free(m) };
    unsafe { lc_featmap_free(ptr::null_mut()) };
}

#[test]
fn pooling_matches_linear_map() {
    // The interpolation of a map linear in the column index is that same
    // linear function, so its average over a bin is the value at the centre.
    let m = map(8, 8, |_, j| j as f64);
    let bin = [1.25, 2.0, 4.75, 5.5];
    let mut v = 0.0;
    assert_eq!(unsafe { lc_prpool_bin(m, bin.as_ptr(), 0, &mut v) }, LcStatus::Ok);
    assert!((v - 3.0).abs() < 1e-12);
    let mut g = [0.0; 4];
    assert_eq!(unsafe { lc_prpool_grad(m, bin.as_ptr(), 0, g.as_mut_ptr()) }, LcStatus::Ok);
    // d/dx1 of the mean of x over [x1, x2] is 1/2; y has no effect.
    for (got, want) in g.iter().zip([0.5, 0.0, 0.5, 0.0]) {
        assert!((got - want).abs() < 1e-12, "{g:?}");
    }
    assert_eq!(unsafe { lc_prpool_bin(m, bin.as_ptr(), 3, &mut v) }, LcStatus::InvalidArgument);
    unsafe { lc_featmap_free(m) };
}

fn det(b: [f64; 4], cls: f64, loc: Option<f64>) -> LcDetection {
    LcDetection { bbox: b, class_id: 0, cls_score: cls, loc_score: loc.unwrap_or(0.0), has_loc_score: loc.is_some() }
}

#[test]
fn nms_variants_and_capacity() {
    let dets = [
        det([0.0, 0.0, 10.0, 10.0], 0.9, Some(0.6)),
        det([0.0, 0.0, 10.0, 11.0], 0.8, Some(0.95)),
        det([30.0, 30.0, 40.0, 40.0], 0.5, Some(0.7)),
    ];
    let mut cfg = lc_nms_config_default();
    let mut kept = [det([0.0; 4], 0.0, None); 3];
    let mut n = 0;
    assert_eq!(unsafe { lc_nms(dets.as_ptr(), 3, &cfg, kept.as_mut_ptr(), 3, &mut n) }, LcStatus::Ok);
    assert_eq!(n, 2);
    assert_eq!(kept[0].cls_score, 0.9);

    cfg.variant = LcNmsVariant::IouGuided;
    assert_eq!(unsafe { lc_nms(dets.as_ptr(), 3, &cfg, kept.as_mut_ptr(), 3, &mut n) }, LcStatus::Ok);
    assert_eq!(n, 2);
    // The better-localized box survives and inherits the higher class score.
    assert_eq!(kept[0].bbox, [0.0, 0.0, 10.0, 11.0]);
    assert_eq!(kept[0].cls_score, 0.9);

    assert_eq!(unsafe { lc_nms(dets.as_ptr(), 3, &cfg, kept.as_mut_ptr(), 1, &mut n) }, LcStatus::BufferTooSmall);
    assert_eq!(n, 2);

    let no_loc = [det([0.0, 0.0, 1.0, 1.0], 0.5, None)];
    assert_eq!(unsafe { lc_nms(no_loc.as_ptr(), 1, &cfg, kept.as_mut_ptr(), 3, &mut n) }, LcStatus::InvalidArgument);

    cfg.omega_nms = 1.5;
    assert_eq!(unsafe { lc_nms(dets.as_ptr(), 3, &cfg, kept.as_mut_ptr(), 3, &mut n) }, LcStatus::InvalidArgument);
}

#[test]
fn oracle_refinement_improves_iou() {
    let gt = LcGroundTruth { bbox: [10.0, 10.0, 30.0, 26.0], class_id: 0, object_id: 0 };
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { lc_predictor_oracle_new(&gt, 1, &mut p) }, LcStatus::Ok);
    let m = map(4, 4, |_, _| 0.0);
    let mut boxes = [12.0, 8.0, 33.0, 25.0, 9.0, 11.0, 28.0, 29.0];
    let before: Vec<f64> = boxes
        .chunks(4)
        .map(|b| {
            let mut v = 0.0;
            assert_eq!(unsafe { lc_predictor_value(p, m, b.as_ptr(), 0, &mut v) }, LcStatus::Ok);
            v
        })
        .collect();
    let mut scores = [0.0; 2];
    let cfg = lc_refine_config_default();
    assert_eq!(unsafe { lc_refine(p, m, &cfg, boxes.as_mut_ptr(), ptr::null(), 2, scores.as_mut_ptr()) }, LcStatus::Ok);
    for k in 0..2 {
        assert!(scores[k] > before[k], "{scores:?} vs {before:?}");
    }
    unsafe {
        lc_predictor_free(p);
        lc_featmap_free(m);
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("head.prwt");
    let fmap_path = dir.path().join("map.prfm");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let head = MlpIouPredictor::init(PoolGrid::new(2, 2).unwrap(), 1, 4, &mut rng).unwrap();
    head.save(&weights).unwrap();
    let fmap = FeatureMap::from_fn(12, 12, 1, |i, j, _| (i * j) as f64 / 100.0).unwrap();
    fmap.save(&fmap_path).unwrap();

    let c = |p: &Path| CString::new(p.to_str().unwrap()).unwrap();
    let (mut p, mut m) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(unsafe { lc_predictor_load(c(&weights).as_ptr(), &mut p) }, LcStatus::Ok);
    assert_eq!(unsafe { lc_featmap_load(c(&fmap_path).as_ptr(), &mut m) }, LcStatus::Ok);
    let b = [2.0, 3.0, 8.0, 9.0];
    let mut v = 0.0;
    assert_eq!(unsafe { lc_predictor_value(p, m, b.as_ptr(), 0, &mut v) }, LcStatus::Ok);
    // Both files store single precision, so compare against reloaded copies.
    use locconf::IouPredictor;
    let (head, fmap) = (MlpIouPredictor::load(&weights).unwrap(), FeatureMap::load(&fmap_path).unwrap());
    assert_eq!(v, head.value(&fmap, &locconf::BoundingBox::from_array(b), 0).unwrap());

    let missing = c(&dir.path().join("missing.prwt"));
    let mut q = ptr::null_mut();
    assert_eq!(unsafe { lc_predictor_load(missing.as_ptr(), &mut q) }, LcStatus::Io);
    assert_eq!(unsafe { lc_featmap_load(c(&weights).as_ptr(), &mut q.cast()) }, LcStatus::Format);
    unsafe {
        lc_predictor_free(p);
        lc_featmap_free(m);
    }
}

fn find_compiler() -> Option<String> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .map(str::to_owned)
}

#[test]
fn c_program_links_against_header_and_staticlib() {
    let Some(cc) = find_compiler() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/<test binary>
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("liblocconf_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let build = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(build.status.success(), "{}", String::from_utf8_lossy(&build.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}

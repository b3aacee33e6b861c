use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use ordmeta::dataset::{self, Recording};
use ordmeta::features::{FeaturePrep, PhenotypeStats};
use ordmeta::learners::LearnerKind;
use ordmeta::metamodel::{train_metamodel, BankPlan, PipelineConfig};
use ordmeta::synth::{generate, SynthConfig};
use ordmeta_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(om_last_error()) }.to_string_lossy().into_owned()
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn scalar_helpers() {
    let x = [1.0, 2.0, 3.0, 4.0];
    let y = [1.0, 3.0, 2.0, 4.0];
    let mut r = 0.0;
    assert_eq!(unsafe { om_pearson(x.as_ptr(), y.as_ptr(), 4, &mut r) }, OmStatus::Ok);
    assert!((r - 0.8).abs() < 1e-12);
    assert_eq!(last_error(), "");

    let (mut t, mut p) = (0.0, 0.0);
    assert_eq!(unsafe { om_corr_significance(0.0, 10, &mut t, &mut p) }, OmStatus::Ok);
    assert_eq!((t, p), (0.0, 1.0));

    let th = [0.5, 1.5, 2.5, 3.5, 4.5, 5.5, 6.5];
    let mut bits = [9u8; 7];
    assert_eq!(unsafe { om_threshold_labels(3, th.as_ptr(), 7, bits.as_mut_ptr()) }, OmStatus::Ok);
    assert_eq!(bits, [1, 1, 1, 0, 0, 0, 0]);

    assert_eq!(om_upper_triangle_len(116), 6670);
    let mut n = 0;
    assert_eq!(unsafe { om_window_count(235, 90, 10, &mut n) }, OmStatus::Ok);
    assert_eq!(n, 15);
}

#[test]
fn errors_map_to_status_codes() {
    let x = [1.0, 1.0, 1.0];
    let mut r = 0.0;
    assert_eq!(unsafe { om_pearson(x.as_ptr(), x.as_ptr(), 3, &mut r) }, OmStatus::Data);
    assert!(last_error().contains("zero variance"), "{}", last_error());

    assert_eq!(
        unsafe { om_pearson(ptr::null(), x.as_ptr(), 3, &mut r) },
        OmStatus::NullPointer
    );
    assert!(last_error().contains("null pointer"));

    let mut n = 0;
    assert_eq!(unsafe { om_window_count(10, 90, 10, &mut n) }, OmStatus::Data);
    assert_eq!(unsafe { om_window_count(100, 90, 0, &mut n) }, OmStatus::InvalidArgument);

    let bad = [1.5, 0.5];
    let mut bits = [0u8; 2];
    assert_eq!(
        unsafe { om_threshold_labels(1, bad.as_ptr(), 2, bits.as_mut_ptr()) },
        OmStatus::InvalidArgument
    );

    let mut m: *mut OmMetamodel = ptr::null_mut();
    let missing = CString::new("/definitely/not/here").unwrap();
    assert_eq!(unsafe { om_metamodel_load(missing.as_ptr(), &mut m) }, OmStatus::Io);
    assert!(m.is_null());
    // free functions accept null
    unsafe {
        om_metamodel_free(ptr::null_mut());
        om_dataset_free(ptr::null_mut());
        om_predictions_free(ptr::null_mut());
    }
}

#[test]
fn predictions_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&SynthConfig {
        n_subjects: 30,
        rois: 6,
        time_points: 40,
        signal_pairs: vec![(0, 1), (2, 3)],
        score_distribution: vec![1.0 / 9.0; 9],
        ..SynthConfig::default()
    })
    .unwrap();
    let data_dir = dir.path().join("data");
    dataset::write_dataset(&ds, &data_dir).unwrap();

    let subjects: Vec<_> = ds.subjects().iter().collect();
    let prep = FeaturePrep {
        window_length: 20,
        stride: 10,
        phenotypes: PhenotypeStats::fit(&subjects),
    };
    let ex = prep.build_subjects(&subjects[..24]).unwrap();
    let vs = prep.build_subjects(&subjects[24..]).unwrap();
    let cfg = PipelineConfig::default();
    let mm = train_metamodel(&ex, &vs, &prep, &BankPlan::homogeneous(LearnerKind::Lr, 7), &cfg, 5).unwrap();
    let model_dir = dir.path().join("model");
    mm.save(&model_dir).unwrap();
    let recs: Vec<Recording> = ds.subjects().iter().map(Recording::from).collect();
    let want = mm.predict_recordings(&recs).unwrap();

    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(om_metamodel_load(cstr(&model_dir).as_ptr(), &mut m), OmStatus::Ok);
        let mut k = 0;
        assert_eq!(om_metamodel_threshold_count(m, &mut k), OmStatus::Ok);
        assert_eq!(k, 7);
        let mut d = ptr::null_mut();
        assert_eq!(om_dataset_load(cstr(&data_dir).as_ptr(), &mut d), OmStatus::Ok);
        let mut n = 0;
        assert_eq!(om_dataset_len(d, &mut n), OmStatus::Ok);
        assert_eq!(n, 30);
        let mut p = ptr::null_mut();
        assert_eq!(om_metamodel_predict(m, d, &mut p), OmStatus::Ok);
        let mut rows = 0;
        assert_eq!(om_predictions_len(p, &mut rows), OmStatus::Ok);
        assert_eq!(rows, want.len());
        for (i, (id, v)) in want.iter().enumerate() {
            let mut pid = ptr::null();
            let mut score = 0.0;
            assert_eq!(om_predictions_get(p, i, &mut pid, &mut score), OmStatus::Ok);
            assert_eq!(CStr::from_ptr(pid).to_str().unwrap(), id);
            assert_eq!(score, *v);
        }
        let mut pid = ptr::null();
        let mut score = 0.0;
        assert_eq!(om_predictions_get(p, rows, &mut pid, &mut score), OmStatus::InvalidArgument);
        om_predictions_free(p);
        om_dataset_free(d);
        om_metamodel_free(m);
    }
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ordmeta.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["om_metamodel_load", "om_metamodel_predict", "om_last_error", "OM_STATUS_PANIC"] {
        assert!(text.contains(f), "header lacks {f}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"ordmeta.h\"\nint main(void) { OmMetamodel *m = 0; (void)m; return om_upper_triangle_len(4) == 6 ? 0 : 1; }\n",
    )
    .unwrap();
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-fsyntax-only")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header failed to compile"),
        Err(e) => eprintln!("no C compiler available, syntax check skipped: {e}"),
    }
}

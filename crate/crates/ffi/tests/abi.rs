use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use mlsd::embed_store::{save_store, EmbeddingStore};
use mlsd::metric::checkpoint::{save_checkpoint, CheckpointMeta};
use mlsd::metric::nn::{Linear, ProjectionParams};
use mlsd::metric::{MetricModel, TrainConfig};
use mlsd_ffi::*;

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = mlsd_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn identity(n: usize) -> Linear<f32> {
    let mut l = Linear::zeros(n, n);
    for i in 0..n {
        l.weight[i * n + i] = 1.0;
    }
    l
}

/// Identity projection and head, so logits are relu(x).
fn write_identity_model(dir: &Path) -> std::path::PathBuf {
    let model = MetricModel {
        projection: ProjectionParams {
            layer1: identity(2),
            layer2: identity(2),
        },
        head: identity(2),
    };
    let path = dir.join("model.json");
    let meta = CheckpointMeta {
        config: TrainConfig::default(),
        epoch: 0,
        val_loss: None,
        config_hash: None,
    };
    save_checkpoint(&model, meta, &path).unwrap();
    path
}

fn write_store(dir: &Path) -> std::path::PathBuf {
    let store = EmbeddingStore::from_rows(3, vec![(7, vec![1.0, 2.0, 3.0]), (9, vec![0.0, -1.0, 0.5])]).unwrap();
    let path = dir.join("emb.bin");
    save_store(&store, &path).unwrap();
    path
}

#[test]
fn store_roundtrip_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let path = cpath(&write_store(dir.path()));
    unsafe {
        let mut store = ptr::null_mut();
        assert_eq!(mlsd_store_load(path.as_ptr(), &mut store), MlsdStatus::Ok);
        let (mut dim, mut count) = (0usize, 0usize);
        assert_eq!(mlsd_store_dim(store, &mut dim), MlsdStatus::Ok);
        assert_eq!(mlsd_store_count(store, &mut count), MlsdStatus::Ok);
        assert_eq!((dim, count), (3, 2));

        let mut buf = [0f32; 3];
        assert_eq!(mlsd_store_get(store, 9, buf.as_mut_ptr(), 3), MlsdStatus::Ok);
        assert_eq!(buf, [0.0, -1.0, 0.5]);
        assert_eq!(mlsd_store_get(store, 8, buf.as_mut_ptr(), 3), MlsdStatus::NotFound);
        assert!(last_error().contains('8'));
        assert_eq!(mlsd_store_get(store, 7, buf.as_mut_ptr(), 2), MlsdStatus::DimMismatch);
        mlsd_store_free(store);
        mlsd_store_free(ptr::null_mut());
    }
}

#[test]
fn load_errors_map_to_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = cpath(&dir.path().join("nope.bin"));
    let junk_path = dir.path().join("junk.bin");
    std::fs::write(&junk_path, b"NOTMAGIC0000").unwrap();
    let junk = cpath(&junk_path);
    unsafe {
        let mut store = ptr::null_mut();
        assert_eq!(mlsd_store_load(missing.as_ptr(), &mut store), MlsdStatus::Io);
        assert!(store.is_null());
        assert_eq!(mlsd_store_load(junk.as_ptr(), &mut store), MlsdStatus::Format);
        assert_eq!(mlsd_store_load(ptr::null(), &mut store), MlsdStatus::NullPointer);
        assert_eq!(mlsd_store_load(junk.as_ptr(), ptr::null_mut()), MlsdStatus::NullPointer);
        let mut dim = 0;
        assert_eq!(mlsd_store_dim(ptr::null(), &mut dim), MlsdStatus::NullPointer);
    }
}

#[test]
fn vector_helpers() {
    let a = [3.0f32, 4.0];
    let b = [0.0f32, 0.0];
    let c = [6.0f32, 8.0];
    let mut out = 0.0;
    unsafe {
        assert_eq!(mlsd_euclidean(a.as_ptr(), b.as_ptr(), 2, &mut out), MlsdStatus::Ok);
        assert_eq!(out, 5.0);
        assert_eq!(mlsd_cosine(a.as_ptr(), c.as_ptr(), 2, &mut out), MlsdStatus::Ok);
        assert!((out - 1.0).abs() < 1e-12);
        assert_eq!(mlsd_cosine(a.as_ptr(), b.as_ptr(), 2, &mut out), MlsdStatus::Numeric);
        assert_eq!(mlsd_cosine(ptr::null(), b.as_ptr(), 2, &mut out), MlsdStatus::NullPointer);
    }
}

#[test]
fn model_confidence_matches_softmax() {
    let dir = tempfile::tempdir().unwrap();
    let path = cpath(&write_identity_model(dir.path()));
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(mlsd_model_load(path.as_ptr(), &mut model), MlsdStatus::Ok);
        let mut dim = 0;
        assert_eq!(mlsd_model_input_dim(model, &mut dim), MlsdStatus::Ok);
        assert_eq!(dim, 2);

        let x = [1.0f32, 0.0];
        let mut conf = 0.0;
        assert_eq!(mlsd_model_confidence(model, x.as_ptr(), 2, &mut conf), MlsdStatus::Ok);
        let e = 1f64.exp();
        assert!((conf - e / (e + 1.0)).abs() < 1e-6, "{conf}");

        let bad = [1.0f32; 3];
        assert_eq!(mlsd_model_confidence(model, bad.as_ptr(), 3, &mut conf), MlsdStatus::DimMismatch);
        mlsd_model_free(model);
    }
}

#[test]
fn macro_f1_by_index() {
    // Three-way: indices 0 FAVOR, 1 AGAINST, 2 NEITHER.
    let pred = [0u32, 0, 1, 2];
    let gold = [0u32, 1, 1, 2];
    let mut f1 = 0.0;
    unsafe {
        let s = mlsd_macro_f1(MlsdScheme::ThreeWay as u32, pred.as_ptr(), gold.as_ptr(), 4, &mut f1);
        assert_eq!(s, MlsdStatus::Ok);
        // FAVOR: p=1/2 r=1 -> 2/3; AGAINST: p=1 r=1/2 -> 2/3.
        assert!((f1 - 2.0 / 3.0).abs() < 1e-15);
        let bad = [5u32, 0, 0, 0];
        assert_eq!(mlsd_macro_f1(0, bad.as_ptr(), gold.as_ptr(), 4, &mut f1), MlsdStatus::InvalidArgument);
        assert_eq!(mlsd_macro_f1(9, pred.as_ptr(), gold.as_ptr(), 4, &mut f1), MlsdStatus::InvalidArgument);
        assert!(last_error().contains("scheme"));
    }
}

#[test]
fn t_test_through_abi() {
    let a = [2.0, 4.0, 7.0];
    let b = [1.0, 3.0, 5.0];
    let (mut t, mut p, mut zv) = (0.0, 0.0, -1);
    unsafe {
        assert_eq!(mlsd_paired_t_test(a.as_ptr(), b.as_ptr(), 3, &mut t, &mut p, &mut zv), MlsdStatus::Ok);
        assert!((t - 4.0).abs() < 1e-12);
        assert!((p - (1.0 - 4.0 / 18f64.sqrt())).abs() < 1e-12);
        assert_eq!(zv, 0);
        assert_eq!(mlsd_paired_t_test(a.as_ptr(), a.as_ptr(), 3, &mut t, &mut p, ptr::null_mut()), MlsdStatus::Ok);
        assert_eq!(p, 1.0);
        assert_eq!(mlsd_paired_t_test(a.as_ptr(), b.as_ptr(), 1, &mut t, &mut p, &mut zv), MlsdStatus::InvalidArgument);
    }
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(mlsd_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

const C_SMOKE: &str = r#"
#include <stdio.h>
#include <math.h>
#include "mlsd.h"

int main(int argc, char **argv) {
    MlsdStore *store = NULL;
    if (mlsd_store_load(argv[1], &store) != MLSD_STATUS_OK) {
        fprintf(stderr, "%s\n", mlsd_last_error());
        return 10;
    }
    size_t dim = 0;
    mlsd_store_dim(store, &dim);
    float v[3];
    if (dim != 3 || mlsd_store_get(store, 7, v, 3) != MLSD_STATUS_OK) return 11;
    mlsd_store_free(store);
    if (mlsd_store_load("/nonexistent/x.bin", &store) != MLSD_STATUS_IO) return 12;

    double d = 0;
    float z[3] = {0, 0, 0};
    mlsd_euclidean(v, z, 3, &d);
    if (fabs(d * d - 14.0) > 1e-9) return 13;

    uint32_t pred[4] = {0, 0, 1, 2}, gold[4] = {0, 1, 1, 2};
    double f1 = 0;
    if (mlsd_macro_f1(MLSD_SCHEME_THREE_WAY, pred, gold, 4, &f1) != MLSD_STATUS_OK) return 14;
    printf("%s %.6f\n", mlsd_version(), f1);
    return 0;
}
"#;

/// Compiles a C program against the generated header and static library.
/// Skipped when no C compiler or static archive is available.
#[test]
fn c_program_links_against_header() {
    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("skipping: no C compiler");
        return;
    };
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let archive = profile_dir.join("libmlsd_ffi.a");
    if !archive.exists() {
        eprintln!("skipping: {} not built", archive.display());
        return;
    }
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(&src, C_SMOKE).unwrap();
    let bin = dir.path().join("smoke");
    let out = Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&archive)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "compile failed: {}", String::from_utf8_lossy(&out.stderr));

    let store = write_store(dir.path());
    let run = Command::new(&bin).arg(&store).output().unwrap();
    assert!(run.status.success(), "exit {:?}: {}", run.status.code(), String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert_eq!(stdout.trim(), format!("{} 0.666667", env!("CARGO_PKG_VERSION")));
}

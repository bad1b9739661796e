use std::path::Path;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "sentinel.h"

int main(void) {
    char *out = NULL;
    double s = 0.0, c = 0.0;
    uint32_t days = 0;
    SentinelModel *model = NULL;
    SentinelPipeline *pipeline = NULL;
    size_t label = 0;
    double scores[2];
    double row[2] = {0.0, 0.0};

    printf("%s\n", sentinel_version());
    if (sentinel_preprocess_minimal("hello", &out) == SENTINEL_STATUS_OK) sentinel_string_free(out);
    if (sentinel_preprocess_classical("hello", &out) == SENTINEL_STATUS_OK) sentinel_string_free(out);
    if (sentinel_class_weights("[\"a\"]", &out) == SENTINEL_STATUS_OK) sentinel_string_free(out);
    sentinel_hour_encoding(6, &s, &c);
    sentinel_temporal_features("2017-08-07T21:30:00Z", "2017-08-08", 180, &days, &s, &c);
    if (sentinel_model_load("missing.json", &model) != SENTINEL_STATUS_OK) puts(sentinel_last_error());
    sentinel_model_predict(model, row, 2, &label, scores, 2);
    (void)sentinel_model_dim(model);
    (void)sentinel_model_n_classes(model);
    (void)sentinel_model_label(model, 0);
    sentinel_model_free(model);
    sentinel_pipeline_load("bundle", NULL, &pipeline);
    sentinel_pipeline_add_deployment(pipeline, "{}");
    sentinel_pipeline_classify(pipeline, "", &out);
    sentinel_pipeline_free(pipeline);
    return 0;
}
"#;

fn compilers() -> Vec<&'static str> {
    ["cc", "gcc", "clang"].into_iter().filter(|cc| Command::new(cc).arg("--version").output().is_ok()).collect()
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/sentinel.h")).unwrap();
    let src = include_str!("../src/lib.rs");
    let mut n = 0;
    for line in src.lines() {
        let Some(rest) = line.split("extern \"C\" fn ").nth(1) else { continue };
        let name = rest.split('(').next().unwrap();
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
        n += 1;
    }
    assert!(n >= 18, "only {n} exports found");
    assert!(header.contains("SENTINEL_STATUS_BUFFER_TOO_SMALL = 7"));
    assert!(header.contains("typedef struct SentinelPipeline SentinelPipeline;"));
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let ccs = compilers();
    assert!(!ccs.is_empty(), "no C compiler on PATH");
    let dir = tempfile::tempdir().unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    for (ext, extra) in [("c", &["-std=c99"][..]), ("cpp", &["-x", "c++"][..])] {
        let file = dir.path().join(format!("main.{ext}"));
        std::fs::write(&file, PROGRAM).unwrap();
        let out = Command::new(ccs[0])
            .args(extra)
            .args(["-Wall", "-Werror", "-fsyntax-only", "-I"])
            .arg(&include)
            .arg(&file)
            .output()
            .unwrap();
        assert!(out.status.success(), "{ext}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

const RUNNABLE: &str = r#"
#include <stdio.h>
#include <string.h>
#include "sentinel.h"

int main(void) {
    char *out = NULL;
    double s = 0.0, c = 0.0;
    SentinelModel *model = NULL;
    if (sentinel_class_weights("[\"a\",\"a\",\"a\",\"b\"]", &out) != SENTINEL_STATUS_OK) return 1;
    printf("%s\n", out);
    sentinel_string_free(out);
    if (sentinel_hour_encoding(6, &s, &c) != SENTINEL_STATUS_OK) return 2;
    printf("%.3f %.3f\n", s, c);
    if (sentinel_model_load(NULL, &model) != SENTINEL_STATUS_NULL_POINTER) return 3;
    if (strstr(sentinel_last_error(), "path") == NULL) return 4;
    if (sentinel_preprocess_minimal("ok", NULL) != SENTINEL_STATUS_NULL_POINTER) return 5;
    return 0;
}
"#;

#[test]
fn c_program_links_and_runs() {
    let ccs = compilers();
    assert!(!ccs.is_empty(), "no C compiler on PATH");
    let deps = std::env::current_exe().unwrap().parent().unwrap().to_path_buf();
    assert!(deps.join("libsentinel_ffi.so").exists(), "shared library not built in {}", deps.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, RUNNABLE).unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let out = Command::new(ccs[0])
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(&include)
        .arg(&src)
        .arg("-o")
        .arg(&exe)
        .arg(format!("-L{}", deps.display()))
        .arg(format!("-Wl,-rpath,{}", deps.display()))
        .arg("-lsentinel_ffi")
        .output()
        .unwrap();
    assert!(out.status.success(), "link: {}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}: {}", run.status.code(), String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    let mut lines = stdout.lines();
    let weights: std::collections::BTreeMap<String, f64> = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert!((weights["a"] - 4.0 / 6.0).abs() < 1e-12 && (weights["b"] - 2.0).abs() < 1e-12);
    assert_eq!(lines.next(), Some("1.000 0.000"));
}

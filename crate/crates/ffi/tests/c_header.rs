//! Compiles and runs a C program against the generated header and cdylib.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "freqct.h"

int main(void) {
    FctGrid *phantom = NULL, *sino = NULL, *recon = NULL;
    FctGeometry geom = { 32, 24, 47, 1.0 };
    if (fct_shepp_logan(32, &phantom) != FCT_STATUS_OK) return 10;
    if (fct_radon(phantom, &geom, &sino) != FCT_STATUS_OK) return 11;
    if (fct_fbp(sino, &geom, &recon) != FCT_STATUS_OK) return 12;
    size_t rows = 0, cols = 0;
    fct_grid_shape(recon, &rows, &cols);
    if (rows != 32 || cols != 32) return 13;
    if (fct_grid_read("/nonexistent.fct", &sino) != FCT_STATUS_IO) return 14;
    if (fct_last_error() == NULL) return 15;
    printf("ok %s\n", fct_version());
    fct_grid_free(phantom);
    fct_grid_free(sino);
    fct_grid_free(recon);
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let lib_dir = target_dir();
    if !lib_dir.join("libfreqct_ffi.so").exists() && !lib_dir.join("libfreqct_ffi.dylib").exists() {
        eprintln!("skipping: cdylib not found in {}", lib_dir.display());
        return;
    }
    let Ok(cc) = Command::new("cc").arg("--version").output() else {
        eprintln!("skipping: no C compiler");
        return;
    };
    assert!(cc.status.success());

    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror"])
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lfreqct_ffi")
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .arg("-o")
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(
        out.status.success(),
        "C program exited with {:?}",
        out.status.code()
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}

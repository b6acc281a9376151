use std::path::{Path, PathBuf};
use std::process::Command;

fn manifest() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

/// `deps/` directory of this build, next to the test binary, where cargo
/// places the freshly built `libedspec_ffi.a`.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().to_path_buf()
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(manifest().join("include/edspec.h")).unwrap();
    for name in [
        "EDSPEC_H",
        "typedef struct EdspecSystem EdspecSystem;",
        "typedef struct EdspecSpectrum EdspecSpectrum;",
        "EDSPEC_STATUS_OK = 0",
        "edspec_system_builtin(",
        "edspec_system_from_json(",
        "edspec_spectrum(",
        "edspec_dichotomy(",
        "edspec_last_error_message(",
        "edspec_system_free(",
        "edspec_spectrum_free(",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}

#[test]
fn c_program_links_and_runs() {
    let lib = artifact_dir().join("libedspec_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let out_dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let exe = out_dir.join("edspec_smoke");
    let status = Command::new(std::env::var("CC").unwrap_or_else(|_| "cc".into()))
        .arg(manifest().join("tests/smoke.c"))
        .arg("-I")
        .arg(manifest().join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let run = Command::new(&exe).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(
        run.status.success(),
        "{stdout}{}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(stdout.starts_with("ok 0.1.0 [-0.5"), "{stdout}");
}

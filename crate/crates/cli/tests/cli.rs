use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn surfstokes(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_surfstokes"))
        .args(args)
        .output()
        .expect("failed to launch surfstokes")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("surfstokes-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn run_into(dir: &Path, extra: &[&str]) {
    let mut args = vec!["--levels", "0:1", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = surfstokes(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn default_csv(dir: &Path, extra: &[&str]) -> String {
    run_into(dir, extra);
    std::fs::read_to_string(dir.join("convergence_r2_k2_gauss-lobatto.csv")).unwrap()
}

#[test]
fn repeated_runs_write_identical_csv() {
    let (a, b) = (scratch("a"), scratch("b"));
    let first = default_csv(&a, &["--threads", "1"]);
    let second = default_csv(&b, &["--threads", "3"]);
    assert_eq!(first, second);
    let mut lines = first.lines();
    assert_eq!(
        lines.next().unwrap(),
        "level,h,dofs,energy_error,l2_error,energy_eoc,l2_eoc"
    );
    assert_eq!(lines.count(), 2);
    assert!(a.join("convergence_r2_k2_gauss-lobatto.json").exists());
    for d in [a, b] {
        std::fs::remove_dir_all(d).unwrap();
    }
}

#[test]
fn diagnostics_file_is_written() {
    let dir = scratch("diag");
    run_into(&dir, &["--diagnostics", "--dofs", "equispaced"]);
    let text = std::fs::read_to_string(dir.join("diagnostics_r2_k2_equispaced.json")).unwrap();
    for key in ["geometric", "conformity", "infsup", "node_transfer"] {
        assert!(text.contains(key), "missing {key}");
    }
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn invalid_flags_fail_with_a_message() {
    for args in [
        &["--r", "7"][..],
        &["--levels", "3:1"],
        &["--surface", "torus:1,2"],
        &["--dofs", "random"],
        &["--threads", "0", "--levels", "0:0"],
        &["--base-mesh", "/nonexistent/mesh.off", "--levels", "0:0"],
    ] {
        let out = surfstokes(args);
        assert!(!out.status.success(), "{args:?} succeeded");
        assert!(!out.stderr.is_empty(), "{args:?} printed nothing");
    }
}

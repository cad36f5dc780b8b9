use std::path::Path;
use std::process::Command;

fn hho(args: &[&str], dir: &Path) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_hho")).args(args).current_dir(dir).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into(), String::from_utf8_lossy(&out.stderr).into())
}

fn config(dir: &Path, name: &str, json: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn verify_small_suite_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "v.json", r#"{"sizes": [2, 3], "degrees": [0, 1], "random_fields": 5}"#);
    let (code, stdout, stderr) = hho(&["verify", "--config", &cfg, "--out", "out", "--threads", "2"], dir.path());
    assert_eq!(code, 0, "{stdout}{stderr}");
    assert!(stdout.contains("0 failed"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/verify.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert!(report["checks"].as_array().unwrap().len() > 10);
}

#[test]
fn corrupted_mesh_fails_the_mesh_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "v.json", r#"{"degrees": [0], "random_fields": 2}"#);
    // two cells share an edge with the same orientation and a third overlaps them
    std::fs::write(dir.path().join("bad.mesh"), "4 3\n0 0\n1 0\n0 1\n1 1\n0 1 2\n1 3 2\n0 1 2\n").unwrap();
    let (code, stdout, _) = hho(&["verify", "--config", &cfg, "--mesh", "bad.mesh"], dir.path());
    assert_eq!(code, 1, "{stdout}");
    assert!(stdout.contains("FAIL mesh invariants"));
}

#[test]
fn verify_on_a_mesh_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "v.json", r#"{"degrees": [1], "random_fields": 3, "variants": ["scott-zhang"]}"#);
    std::fs::write(dir.path().join("sq.mesh"), hho_core::SimplicialMesh::unit_square(3).unwrap().to_text()).unwrap();
    let (code, stdout, _) = hho(&["verify", "--config", &cfg, "--mesh", "sq.mesh"], dir.path());
    assert_eq!(code, 0, "{stdout}");
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "c.json", "{\n  \"degree\": 1,\n  \"method\": \"fast\"\n}");
    let (code, _, stderr) = hho(&["converge", "--config", &cfg], dir.path());
    assert_eq!(code, 2);
    assert!(stderr.contains("method"), "{stderr}");
    let cfg = config(dir.path(), "d.json", "{\n  \"degree\": 1,\n  \"levls\": [2, 4]\n}");
    let (code, _, stderr) = hho(&["converge", "--config", &cfg], dir.path());
    assert_eq!(code, 2);
    assert!(stderr.contains("levls") && stderr.contains("line 3"), "{stderr}");
    let (code, _, _) = hho(&["converge", "--config", "missing.json"], dir.path());
    assert_eq!(code, 2);
}

#[test]
fn classical_method_refuses_divergence_load() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "k.json", r#"{"case": "kink-aligned", "method": "classical", "levels": [2, 4]}"#);
    let (code, _, stderr) = hho(&["converge", "--config", &cfg], dir.path());
    assert_eq!(code, 2);
    assert!(stderr.contains("method inapplicable"), "{stderr}");
}

#[test]
fn converge_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "c.json",
        r#"{"case": "kink-aligned", "degree": 0, "levels": [4, 8, 16], "output": "kink"}"#,
    );
    let (code, stdout, stderr) = hho(&["converge", "--config", &cfg, "--out", "a"], dir.path());
    assert_eq!(code, 0, "{stdout}{stderr}");
    let (code, _, _) = hho(&["converge", "--config", &cfg, "--out", "b", "--threads", "1"], dir.path());
    assert_eq!(code, 0);
    for name in ["kink.csv", "kink.json", "kink-e_H1.dat", "kink-e_L2.dat", "kink-best_H1.dat"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let csv = std::fs::read_to_string(dir.path().join("a/kink.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    let eoc: f64 = last.split(',').nth(8).unwrap().parse().unwrap();
    assert!((eoc - 1.0).abs() < 0.15, "{csv}");
    // 17 significant digits
    let h = last.split(',').nth(1).unwrap();
    assert_eq!(h.split('e').next().unwrap().replace(['.', '-'], "").len(), 17, "{h}");
    let dat = std::fs::read_to_string(dir.path().join("a/kink-e_H1.dat")).unwrap();
    assert_eq!(dat.lines().count(), 3);
    assert_eq!(dat.lines().next().unwrap().split(' ').count(), 2);
}

#[test]
fn quadrature_override_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "c.json", r#"{"degree": 1, "levels": [2, 4], "output": "s"}"#);
    let run = |extra: &str, out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_hho"))
            .args(["converge", "--config", &cfg, "--out", out])
            .env("HHO_QUAD_EXTRA", extra)
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert!(o.status.success());
        std::fs::read_to_string(dir.path().join(out).join("s.csv")).unwrap()
    };
    assert_ne!(run("0", "q0"), run("12", "q12"));
    let o = Command::new(env!("CARGO_BIN_EXE_hho"))
        .args(["converge", "--config", &cfg])
        .env("HHO_QUAD_EXTRA", "lots")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_load_gives_zero_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "z.json", r#"{"case": "zero", "levels": [3], "output": "z"}"#);
    let (code, stdout, stderr) = hho(&["solve", "--config", &cfg], dir.path());
    assert_eq!(code, 0, "{stdout}{stderr}");
    let csv = std::fs::read_to_string(dir.path().join("z.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x,y,value"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 18 * 10);
    assert!(rows.iter().all(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap() == 0.0));
}

#[test]
fn smooth_solve_is_close_to_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "s.json", r#"{"degree": 2, "levels": [16], "output": "s"}"#);
    let (code, stdout, _) = hho(&["solve", "--config", &cfg], dir.path());
    assert_eq!(code, 0);
    let err: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("max |RU - u| at the samples: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(err < 1e-4, "{err}");
    let first = std::fs::read(dir.path().join("s.csv")).unwrap();
    hho(&["solve", "--config", &cfg], dir.path());
    assert_eq!(first, std::fs::read(dir.path().join("s.csv")).unwrap());
}

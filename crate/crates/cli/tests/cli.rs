use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn trimer(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trimer"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.json");
    fs::write(
        &path,
        r#"{"model": {"n_particles": 8}, "grid": {"m1": 32, "m2": 32}, "lock": {"t_end": 200.0}}"#,
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

fn error_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stderr).expect("stderr holds one JSON object")
}

#[test]
fn spectrum_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = trimer(&["spectrum", "--paper-defaults"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("spectrum/spectrum.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "index,energy");
    assert_eq!(rows.len(), 497);
    let first: f64 = rows[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!((first - 23.907).abs() < 5e-3);
    let meta: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("spectrum/spectrum.csv.meta.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(meta["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn wavefn_ridge_on_psi1_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = trimer(
        &["wavefn", "--paper-defaults", "--states", "461"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pgm = fs::read(dir.path().join("wavefn/phi461.pgm")).unwrap();
    let header = b"P5\n128 128\n255\n";
    assert_eq!(&pgm[..header.len()], header);
    let pixels = &pgm[header.len()..];
    let darkness: Vec<u64> = (0..128)
        .map(|a| (0..128).map(|row| 255 - pixels[row * 128 + a] as u64).sum())
        .collect();
    let darkest = (0..128).max_by_key(|&a| darkness[a]).unwrap();
    let psi1 = -PI / 2.0 + 2.0 * PI * darkest as f64 / 128.0;
    assert!(psi1.abs() < 0.1, "ridge at psi1 = {psi1}");
    for f in ["phi461_density.csv", "phi461_phase.csv"] {
        let text = fs::read_to_string(dir.path().join("wavefn").join(f)).unwrap();
        assert_eq!(text.lines().count(), 128);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 128);
    }
}

#[test]
fn evolve_self_trapped_is_type_c() {
    let dir = tempfile::tempdir().unwrap();
    let o = trimer(
        &["evolve", "--paper-defaults", "--number-state", "2,5,23"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("evolve/n2_5_23_locks.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["center"], "C");
    let csv = fs::read_to_string(dir.path().join("evolve/n2_5_23.csv")).unwrap();
    assert!(csv.starts_with("t,re_c1,im_c1,re_c2,im_c2,re_c3,im_c3,n1,n2,n3,energy\n"));
}

#[test]
fn classify_and_gridmap_small_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = trimer(&["classify", "--config", &cfg], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("classify/assignments.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "index,energy,center,qn1,qn2,confidence"
    );
    assert_eq!(lines.count(), 45);
    let summary: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("classify/summary.json")).unwrap(),
    )
    .unwrap();
    let total: u64 = summary["counts"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(total, 45);

    let o = trimer(&["gridmap", "--config", &cfg], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let grid = fs::read_to_string(dir.path().join("gridmap/grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 46);
}

#[test]
fn poincare_writes_section() {
    let dir = tempfile::tempdir().unwrap();
    let o = trimer(
        &[
            "poincare",
            "--paper-defaults",
            "--energy",
            "40",
            "--seeds",
            "3,3",
            "--crossings",
            "5",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("poincare/section_e40.csv")).unwrap();
    for row in csv.lines().skip(1) {
        let v: Vec<f64> = row.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v[2].abs() < 1e-9);
        assert!((v[6] - 40.0).abs() < 1e-8);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert!(trimer(&["classify", "--config", &cfg], out)
            .status
            .success());
        assert!(trimer(
            &["evolve", "--config", &cfg, "--number-state", "2,2,4"],
            out
        )
        .status
        .success());
    }
    for f in [
        "classify/assignments.csv",
        "classify/summary.json",
        "classify/assignments.csv.meta.json",
        "evolve/n2_2_4.csv",
        "evolve/n2_2_4_locks.json",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn errors_are_json() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"model\": {\"n_particles\": \"many\"}}").unwrap();
    let o = trimer(&["spectrum", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"]["kind"], "config");

    let o = trimer(&["spectrum"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"]["kind"], "config");

    let o = trimer(&["wavefn", "--paper-defaults", "--states", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"]["kind"], "usage");

    let o = trimer(
        &["poincare", "--paper-defaults", "--energy", "5"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_json(&o)["error"]["kind"], "model");
}

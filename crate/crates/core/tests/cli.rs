use std::path::Path;
use std::process::Command;

fn stabperturb(args: &[&str], out: &Path) -> (i32, String, String) {
    let o = Command::new(env!("CARGO_BIN_EXE_stabperturb"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("STABPERTURB_THREADS", "1")
        .output()
        .expect("binary runs");
    (
        o.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&o.stdout).into_owned(),
        String::from_utf8_lossy(&o.stderr).into_owned(),
    )
}

#[test]
fn certify_writes_bundle_and_circle_scan() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, _) = stabperturb(&["certify", "--scenario", "builtin:S1"], dir.path());
    assert_eq!(code, 0);
    assert!(stdout.contains("certified"));
    let bundle: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("bundle.json")).unwrap()).unwrap();
    assert_eq!(bundle["command"], "certify");
    assert_eq!(bundle["schema_version"], 1);

    // One CSV row per circle angle of the scan grid.
    let s = stabperturb::scenario::builtin("S1").unwrap();
    let grid = stabperturb::geometry::build_grids(&s.profile, &s.experiment.resolution).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("circle_scan.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("phi,nearest_k,dist,resnorm,weighted"));
    assert_eq!(lines.count(), grid.circle_angles().len());
}

#[test]
fn zero_perturbation_is_preserved() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, stderr) = stabperturb(
        &["stability", "--scenario", "builtin:S1-P1", "--scale-b", "0", "--scale-c", "0"],
        dir.path(),
    );
    assert_eq!(code, 0, "{stdout}{stderr}");
    assert!(stdout.contains("preserved"));
}

#[test]
fn process_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, stderr) = stabperturb(
        &["threshold", "--scenario", "builtin:S1-P1", "--lo", "3", "--hi", "1"],
        dir.path(),
    );
    assert_eq!(code, 1);
    assert!(stderr.contains("BracketInvalid"));

    let (code, _, stderr) = stabperturb(&["certify", "--scenario", "/nonexistent/s.json"], dir.path());
    assert_eq!(code, 1);
    assert!(stderr.contains("IoError"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"schema_version\": 1,\n  \"name\": \"x\",\n  oops\n}").unwrap();
    let (code, _, stderr) = stabperturb(&["certify", "--scenario", bad.to_str().unwrap()], dir.path());
    assert_eq!(code, 1);
    assert!(stderr.contains("ParseError") && stderr.contains("line 4"), "{stderr}");

    let (code, _, stderr) = stabperturb(&["perturb", "--scenario", "builtin:S1", "--scale-b", "2"], dir.path());
    assert_eq!(code, 1);
    assert!(stderr.contains("ValidationError"));
}

#[test]
fn violated_run_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, _) = stabperturb(
        &["perturb", "--scenario", "builtin:S1-P1", "--scale-b", "20", "--scale-c", "20"],
        dir.path(),
    );
    assert_eq!(code, 2, "{stdout}");
}

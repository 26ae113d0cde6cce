use std::path::Path;
use std::process::{Command, Output};

fn prevsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prevsynth")).args(args).output().expect("binary runs")
}

fn simulate(dir: &Path, seed: &str) {
    let out = prevsynth(&["simulate", "--out", dir.to_str().unwrap(), "--seed", seed]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn manifest(dir: &Path) -> String {
    dir.join("manifest.toml").to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn edit_observations(dir: &Path, f: impl Fn(Vec<String>) -> Vec<String>) {
    let path = dir.join("observations.csv");
    let lines: Vec<String> = std::fs::read_to_string(&path).unwrap().lines().map(String::from).collect();
    std::fs::write(&path, f(lines).join("\n") + "\n").unwrap();
}

#[test]
fn simulate_is_deterministic() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    simulate(a.path(), "5");
    simulate(b.path(), "5");
    simulate(c.path(), "6");
    for f in ["observations.csv", "truth.json", "sources.toml", "census.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_ne!(
        std::fs::read(a.path().join("observations.csv")).unwrap(),
        std::fs::read(c.path().join("observations.csv")).unwrap()
    );
}

#[test]
fn validate_clean_corpus() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "1");
    let out = prevsynth(&["validate", "--manifest", &manifest(d.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.contains("0 errors"));
    assert!(text.contains("NSDUH") && text.contains("national"));
}

#[test]
fn validate_reports_line_of_bad_row() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "1");
    edit_observations(d.path(), |mut lines| {
        // Row 4 of the file: set y above n.
        let mut f: Vec<String> = lines[3].split(',').map(String::from).collect();
        let n: u64 = f[6].parse().unwrap();
        f[5] = (n + 1).to_string();
        lines[3] = f.join(",");
        lines
    });
    let out = prevsynth(&["validate", "--manifest", &manifest(d.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains("line 4"), "{}", stdout(&out));
}

#[test]
fn validate_names_unidentified_family() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "1");
    edit_observations(d.path(), |lines| lines.into_iter().filter(|l| !l.starts_with("HANES,pi_non")).collect());
    let out = prevsynth(&["validate", "--manifest", &manifest(d.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains("pi_non"), "{}", stdout(&out));
}

#[test]
fn empty_data_needs_flag_and_fits_prior() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "1");
    edit_observations(d.path(), |lines| lines.into_iter().take(1).collect());
    let m = manifest(d.path());
    let out = prevsynth(&["fit", "--manifest", &m, "--iters", "400", "--burnin", "200"]);
    assert_eq!(out.status.code(), Some(2));
    let out_dir = d.path().join("prior");
    let out = prevsynth(&[
        "fit",
        "--manifest",
        &m,
        "--allow-prior-only",
        "--iters",
        "3000",
        "--burnin",
        "1000",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(matches!(out.status.code(), Some(0 | 3)));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out_dir.join("summary.json")).unwrap()).unwrap();
    let pi = json["quantities"].as_array().unwrap().iter().find(|q| q["name"] == "pi.non").unwrap();
    let mean = pi["mean"].as_f64().unwrap();
    assert!((0.3..0.7).contains(&mean), "{mean}");
}

#[test]
fn fit_is_reproducible_and_writes_reports() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "2");
    let m = manifest(d.path());
    let run = |sub: &str| {
        let dir = d.path().join(sub);
        let out = prevsynth(&[
            "fit", "--manifest", &m, "--iters", "600", "--burnin", "300", "--seed", "9", "--trace", "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(matches!(out.status.code(), Some(0 | 3)), "{}", String::from_utf8_lossy(&out.stderr));
        dir
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(std::fs::read(a.join("summary.json")).unwrap(), std::fs::read(b.join("summary.json")).unwrap());
    assert_eq!(std::fs::read(a.join("trace.csv")).unwrap(), std::fs::read(b.join("trace.csv")).unwrap());
    let tables = std::fs::read_to_string(a.join("tables.txt")).unwrap();
    assert!(tables.contains("Total") && tables.contains("deviance"));
    let trace = std::fs::read_to_string(a.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 2 * 300);
}

#[test]
fn sweep_and_cv_write_reports() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "3");
    let m = manifest(d.path());
    let out = prevsynth(&["sweep", "--manifest", &m, "--iters", "200", "--burnin", "100", "--chains", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(d.path().join("out/sweep.txt")).unwrap();
    for b in ["B1", "B4", "B7"] {
        assert!(text.contains(b));
    }
    let out = prevsynth(&["cv", "--manifest", &m, "--iters", "200", "--burnin", "100"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(d.path().join("out/cv.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 11);
    assert!(json["rows"][0]["removed"].is_null());
}

#[test]
fn bad_manifest_is_an_error() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("m.toml");
    std::fs::write(&p, "observations = \"missing.csv\"\n").unwrap();
    let out = prevsynth(&["validate", "--manifest", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains("missing.csv"));
}

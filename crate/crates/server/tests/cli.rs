use std::path::Path;
use std::process::{Command, Output};

fn study(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_study")).args(args).output().expect("study binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = study(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_scripted_study() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("study");
    let d = dir.to_str().unwrap();
    let created = ok(&["new", "--study", d, "--groups", "fpv,haptic", "--subjects", "4", "--seed", "17"]);
    assert!(created.contains("s01\tfpv") && created.contains("s04\thaptic"));

    let out = study(&["run", "--study", d, "--subject", "s01", "--input", "pilot"]);
    assert!(!out.status.success(), "running before calibration must fail");

    for s in ["s01", "s02", "s03"] {
        ok(&["calibrate", "--study", d, "--subject", s, "--range", "35,150"]);
    }
    let sweep = tmp.path().join("sweep.txt");
    std::fs::write(&sweep, "# sweep\nANG 40.0 0\nANG 120.5 500\nANG 155.0 1000\n").unwrap();
    ok(&["calibrate", "--study", d, "--subject", "s04", "--sweep", sweep.to_str().unwrap()]);
    let narrow = tmp.path().join("narrow.txt");
    std::fs::write(&narrow, "ANG 90 0\nANG 95 10\n").unwrap();
    assert!(!study(&["calibrate", "--study", d, "--subject", "s04", "--sweep", narrow.to_str().unwrap()]).status.success());

    let one = ok(&["run", "--study", d, "--subject", "s01", "--input", "pilot:3"]);
    assert_eq!(one.lines().count(), 1);
    assert!(one.contains("#01 waypoint baseline 1"));
    for s in ["s01", "s02", "s03", "s04"] {
        let out = ok(&["run", "--study", d, "--subject", s, "--input", "pilot", "--all"]);
        assert!(out.contains("plan complete"));
    }

    let report = ok(&["analyze", "--study", d]);
    assert!(report.contains("haptic") && report.contains("fpv"), "{report}");
    let json: serde_json::Value = serde_json::from_str(&ok(&["analyze", "--study", d, "--json"])).unwrap();
    assert_eq!(json["subjects"].as_object().unwrap().len(), 4);
    let csv = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 21);

    let trial = first_trial(&dir.join("subjects/s03/trials"), "09-");
    let replay = ok(&["replay", "--trial", trial.to_str().unwrap()]);
    assert!(replay.starts_with("replay identical: 1600 ticks"));

    // a trace edited after the fact no longer verifies
    let text = std::fs::read_to_string(&trial).unwrap();
    let edited = text.replacen("\"z\":", "\"z\":1", 1);
    let bad = tmp.path().join("bad.jsonl");
    std::fs::write(&bad, edited).unwrap();
    assert!(!study(&["replay", "--trial", bad.to_str().unwrap()]).status.success());
}

#[test]
fn script_input_runs_headless() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("study");
    let d = dir.to_str().unwrap();
    ok(&["new", "--study", d, "--groups", "arrows", "--subjects", "1", "--seed", "2"]);
    ok(&["calibrate", "--study", d, "--subject", "s01", "--range", "30,150"]);
    let script = tmp.path().join("hold.txt");
    std::fs::write(&script, "ANG 90 0\n").unwrap();
    let out = ok(&["run", "--study", d, "--subject", "s01", "--input", &format!("script:{}", script.display())]);
    assert!(out.contains("#01"), "{out}");
    assert!(!study(&["run", "--study", d, "--subject", "s01", "--input", "mouse"]).status.success());
    assert!(!study(&["run", "--study", d, "--subject", "s01", "--input", "pilot", "--session", "3"]).status.success());
}

fn first_trial(dir: &Path, prefix: &str) -> std::path::PathBuf {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .expect("trial file present")
}

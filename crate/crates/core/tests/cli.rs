use std::path::Path;
use std::process::{Command, Output};

fn rmtq(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rmtq"))
        .args(args)
        .current_dir(dir)
        .env_remove("RMTQ_THREADS")
        .output()
        .expect("spawn rmtq")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &str = r#"schema_version = 1
kind = "annealed_gap"
seed = 9
sizes = [10]
samples = 25
output = "out/annealed.csv"
"#;

#[test]
fn run_writes_csv_and_meta() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.toml"), SMALL).unwrap();
    let o = rmtq(&["run", "a.toml"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let csv = std::fs::read_to_string(dir.path().join("out/annealed.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,repetition,trial,index,lambda,raw_gap,rho,s"));
    assert_eq!(lines.count(), 25);

    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/annealed.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["kind"], "annealed_gap");
    assert_eq!(meta["seed"], 9);
    assert_eq!(meta["rows"]["scheduled"], 25);
    assert_eq!(meta["rows"]["emitted"], 25);
    assert!(meta["git_describe"].is_string());

    // --seed and --out override the config; --threads does not change bytes.
    let o = rmtq(
        &["run", "a.toml", "--seed", "9", "--threads", "3", "--out", "b.csv"],
        dir.path(),
    );
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(dir.path().join("b.csv")).unwrap(), csv);
    let o = rmtq(&["run", "a.toml", "--seed", "10", "--out", "c.csv"], dir.path());
    assert!(o.status.success());
    assert_ne!(std::fs::read_to_string(dir.path().join("c.csv")).unwrap(), csv);
}

#[test]
fn dry_run_prints_schedule_without_output() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.toml"), SMALL).unwrap();
    let o = rmtq(&["run", "a.toml", "--dry-run"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("annealed_gap"), "{text}");
    assert!(text.contains("seed 9"), "{text}");
    assert!(text.contains("out/annealed.csv"), "{text}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), format!("{SMALL}bogus_key = 1\n")).unwrap();
    let o = rmtq(&["run", "bad.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus_key"));

    std::fs::write(dir.path().join("noseed.toml"), SMALL.replace("seed = 9\n", "")).unwrap();
    let o = rmtq(&["run", "noseed.toml", "--dry-run"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(rmtq(&["run", "noseed.toml", "--dry-run", "--seed", "1"], dir.path())
        .status
        .success());

    let o = rmtq(&["run", "missing.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_configs_validate() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&configs).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            for extra in [&[][..], &["--paper-scale"][..]] {
                let mut args = vec!["run", path.to_str().unwrap(), "--dry-run"];
                args.extend_from_slice(extra);
                let o = rmtq(&args, &configs);
                assert!(
                    o.status.success(),
                    "{}: {}",
                    path.display(),
                    String::from_utf8_lossy(&o.stderr)
                );
            }
            seen += 1;
        }
    }
    assert_eq!(seen, 6);
}

#[test]
fn reference_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = rmtq(&["ref", "--beta", "2", "--s-max", "2", "--points", "21"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("s,p,cdf,provenance"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 21);

    let o = rmtq(
        &[
            "ref", "--beta", "1", "--source", "surmise", "--points", "11", "--out", "w.csv",
        ],
        dir.path(),
    );
    assert!(o.status.success());
    assert_eq!(
        std::fs::read_to_string(dir.path().join("w.csv"))
            .unwrap()
            .lines()
            .count(),
        12
    );

    let o = rmtq(&["ref", "--beta", "1", "--source", "fredholm"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = rmtq(&["ref", "--beta", "4"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn check_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = rmtq(&["check"], dir.path());
    let text = stdout(&o);
    assert!(o.status.success(), "{text}");
    assert!(text.contains("0 failed"), "{text}");
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const PASSING: &str = "experiment = fixed_point\ndim = 2\nn = 8\nsteps = 20\n";
const FAILING: &str =
    "experiment = fixed_point\ndim = 2\nn = 8\nsteps = 20\nbackground = warped\nbackground.amplitude = 0.01\n";
const BAD_KEY: &str = "experiment = fixed_point\nstep.courant = 0.5\n";

fn hflow(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hflow"))
        .args(args)
        .env("HFLOW_OUTPUT_ROOT", root)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn exit_codes_follow_the_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("out");
    for (text, code) in [(PASSING, 0), (FAILING, 1), (BAD_KEY, 2)] {
        let cfg = write(dir.path(), "case.cfg", text);
        let out = hflow(&["run", cfg.to_str().unwrap()], &root);
        assert_eq!(out.status.code(), Some(code), "{}{}", stdout(&out), String::from_utf8_lossy(&out.stderr));
    }
    let missing = hflow(&["run", dir.path().join("none.cfg").to_str().unwrap()], &root);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn output_root_comes_from_the_environment_unless_overridden() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "fp.cfg", PASSING);
    let env_root = dir.path().join("env");
    assert!(hflow(&["run", cfg.to_str().unwrap()], &env_root).status.success());
    assert!(env_root.join("fp/record.json").is_file());

    let flag_root = dir.path().join("flag");
    let out = hflow(&["--output", flag_root.to_str().unwrap(), "run", cfg.to_str().unwrap()], &env_root);
    assert!(out.status.success());
    assert!(flag_root.join("fp/record.json").is_file());
}

#[test]
fn check_reevaluates_stored_records() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("out");
    let cfg = write(dir.path(), "fp.cfg", FAILING);
    assert_eq!(hflow(&["run", cfg.to_str().unwrap()], &root).status.code(), Some(1));
    let record = root.join("fp/record.json");
    let out = hflow(&["check", record.to_str().unwrap()], &root);
    assert_eq!(out.status.code(), Some(1));
    assert!(!stdout(&out).contains("differ"));

    // loosening the stored threshold flips the verdict without rerunning
    let text = std::fs::read_to_string(&record).unwrap();
    let loose = text.replace("verdict.fixed_point_tol = 0.0000000001", "verdict.fixed_point_tol = 1000");
    assert_ne!(text, loose);
    std::fs::write(&record, loose).unwrap();
    let out = hflow(&["check", record.to_str().unwrap()], &root);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("differ"));

    std::fs::write(&record, "{").unwrap();
    assert_eq!(hflow(&["check", record.to_str().unwrap()], &root).status.code(), Some(2));
}

#[test]
fn sweep_writes_one_row_per_config_and_combines_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfgs = dir.path().join("cfgs");
    std::fs::create_dir(&cfgs).unwrap();
    write(&cfgs, "a_pass.cfg", PASSING);
    write(&cfgs, "b_fail.cfg", FAILING);
    write(&cfgs, "c_bad.cfg", BAD_KEY);
    write(&cfgs, "notes.txt", "ignored");
    let root = dir.path().join("out");
    let out = hflow(&["sweep", cfgs.to_str().unwrap(), "--jobs", "2"], &root);
    assert_eq!(out.status.code(), Some(2));
    let csv = std::fs::read_to_string(root.join("summary.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3, "{csv}");
    assert!(rows[0].starts_with("a_pass.cfg") && rows[0].contains("pass"));
    assert!(rows[1].contains("fail"));
    assert!(rows[2].contains("config-error"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["runs"].as_array().map(Vec::len), Some(3));
    assert_eq!(json["by_status"]["pass"], 1);
}

#[test]
fn identical_configs_give_identical_csv_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "fp.cfg", PASSING);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(hflow(&["run", cfg.to_str().unwrap()], &a).status.success());
    assert!(hflow(&["run", cfg.to_str().unwrap()], &b).status.success());
    let mut csvs = 0;
    for entry in std::fs::read_dir(a.join("fp")).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|x| x == "csv") {
            csvs += 1;
            let other = b.join("fp").join(p.file_name().unwrap());
            assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(other).unwrap());
        }
    }
    assert!(csvs > 0);
}

#[test]
fn oracle_subcommand_lists_and_rejects_unknown_names() {
    let dir = tempfile::tempdir().unwrap();
    let list = hflow(&["oracle", "list"], dir.path());
    assert!(list.status.success());
    assert!(stdout(&list).lines().count() >= 10);
    let first = stdout(&list).lines().next().unwrap().to_string();
    assert!(hflow(&["oracle", &first], dir.path()).status.success());
    assert_eq!(hflow(&["oracle", "no_such_oracle"], dir.path()).status.code(), Some(2));
}

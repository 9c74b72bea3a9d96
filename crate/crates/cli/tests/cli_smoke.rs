use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_playstyle");

const SMALL: &str = r#"
seed = 3

[league]
teams = 3
rounds = 3
bench = 1
half_minutes = 12.0

[split]
test_min = 6
test_take = 3
val_min = 5
val_take = 2

[train]
max_selections = 2
max_epochs_per_selection = 2

[train.net]
channels = [2, 4, 4, 4]
fc_hidden = 16
"#;

fn playstyle(config: &Path, work: &Path, args: &[&str]) -> std::process::Output {
    Command::new(BIN)
        .arg("--config")
        .arg(config)
        .arg("--work")
        .arg(work)
        .args(args)
        .output()
        .unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn small_pipeline_runs_and_stage_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    std::fs::write(&config, SMALL).unwrap();
    let work = dir.path().join("work");

    let out = playstyle(&config, &work, &["run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["roles/labels.csv", "heatmaps/single.txt", "model/model.bin", "report/evaluation.json", "report/table.txt"] {
        assert!(work.join(f).is_file(), "{f} missing");
    }
    let table = String::from_utf8(read(&work.join("report/table.txt"))).unwrap();
    assert!(table.contains("p10-ATL25"));

    let before: Vec<Vec<u8>> = ["roles/labels.csv", "model/model.bin", "report/evaluation.json"].iter().map(|f| read(&work.join(f))).collect();
    let out = playstyle(&config, &work, &["run", "--from", "roles"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let after: Vec<Vec<u8>> = ["roles/labels.csv", "model/model.bin", "report/evaluation.json"].iter().map(|f| read(&work.join(f))).collect();
    assert!(before == after, "rerun changed outputs");

    let logs = String::from_utf8(read(&work.join("logs/train.jsonl"))).unwrap();
    assert!(logs.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
}

#[test]
fn exit_codes_name_the_failure() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("work");
    let code = |out: std::process::Output| out.status.code().unwrap();

    let missing = dir.path().join("absent.toml");
    assert_eq!(code(playstyle(&missing, &work, &["config"])), 2);

    let good = dir.path().join("good.toml");
    std::fs::write(&good, SMALL).unwrap();
    let out = playstyle(&good, &work, &["ingest"]);
    assert_eq!(code(out), 2, "ingest without raw data");

    let malformed = dir.path().join("malformed.toml");
    std::fs::write(&malformed, "[train\nlearning_rate = ").unwrap();
    let out = playstyle(&malformed, &work, &["config"]);
    assert_eq!(code(out), 3);

    let range = dir.path().join("range.toml");
    std::fs::write(&range, "[train]\nlearning_rate = -1.0\n").unwrap();
    let out = playstyle(&range, &work, &["config"]);
    assert_eq!(code(out.clone()), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[E004]"));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pseudoscore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pseudoscore"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"
seed = 7

[data.synthetic]
users = 300
apps = 60
app_clusters = 4
signal_strength = 0.8

[node2vec]
dimensions = 4
walks_per_node = 2
walk_length = 10
context_window = 3
epochs = 1
dimension_sweep = [2]

[[models]]
name = "lr"
spec = { kind = "logistic_regression" }

[[models]]
name = "forest"
spec = { kind = "random_forest", trees = 5, max_depth = 3 }

[[models]]
name = "net"
spec = { kind = "feedforward_net", hidden_units = 3, epochs = 3 }

[experiment]
folds = 3
bootstrap_rounds = 200
importance_repeats = 1
extra_combinations = [["neighborhood", "influence"]]
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn run(config: &str, out: &Path, cmd: &str) -> Output {
    let o = pseudoscore(&[cmd, "--config", config, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{cmd} failed: {}", stderr(&o));
    o
}

#[test]
fn synth_writes_the_four_dataset_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("data");
    let o = pseudoscore(&["synth", "--users", "120", "--seed", "42", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["users.csv", "app_usage.csv", "calls.csv", "loans.csv"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let users = fs::read_to_string(out.join("users.csv")).unwrap();
    assert_eq!(users.lines().count(), 121);
    assert!(users.starts_with("user_id,"));

    let again = tmp.path().join("again");
    pseudoscore(&["synth", "--users", "120", "--seed", "42", "--out", again.to_str().unwrap()]);
    assert_eq!(fs::read(out.join("calls.csv")).unwrap(), fs::read(again.join("calls.csv")).unwrap());
}

#[test]
fn unknown_config_key_fails_before_any_work() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &format!("{SMALL}\n[network]\nthreshold = 3\n"));
    let out = tmp.path().join("run");
    let o = pseudoscore(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("threshold"));
    assert!(!out.exists());
}

#[test]
fn bad_arguments_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    let zero = pseudoscore(&["build-net", "--config", &config, "--out", out.to_str().unwrap(), "--threads", "0"]);
    assert_eq!(zero.status.code(), Some(1));
    assert_eq!(pseudoscore(&["train"]).status.code(), Some(1));
    assert_eq!(pseudoscore(&["--help"]).status.code(), Some(0));
}

#[test]
fn stage_without_upstream_names_the_missing_step() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    let o = pseudoscore(&["featurize", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("run `pseudoscore build-net` first"), "{}", stderr(&o));
    assert!(out.join("INCOMPLETE").is_file());
}

#[test]
fn failing_stage_marks_the_run_incomplete() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replace("[data.synthetic]\nusers = 300\napps = 60\napp_clusters = 4\nsignal_strength = 0.8\n", "[data.input]\ndir = \"nowhere\"\n");
    let config = write_config(tmp.path(), &text);
    let out = tmp.path().join("run");
    let o = pseudoscore(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let marker = fs::read_to_string(out.join("INCOMPLETE")).unwrap();
    assert!(marker.contains("data stage failed"), "{marker}");
}

#[test]
fn subcommands_chain_into_the_same_report_as_run() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL);
    let staged = tmp.path().join("staged");
    for cmd in ["build-net", "featurize", "train", "evaluate"] {
        run(&config, &staged, cmd);
    }
    let shown = run(&config, &staged, "report");
    let whole = tmp.path().join("whole");
    run(&config, &whole, "run");
    let report = fs::read(staged.join("report/report.json")).unwrap();
    assert_eq!(report, fs::read(whole.join("report/report.json")).unwrap());
    assert!(!staged.join("INCOMPLETE").exists());
    assert!(!staged.join("report/scores.tsv").exists());

    // the printed table carries the stored mean AUCs
    let json: serde_json::Value = serde_json::from_slice(&report).unwrap();
    let stdout = String::from_utf8(shown.stdout).unwrap();
    for row in json["ablation"].as_array().unwrap() {
        let combo: Vec<&str> = row["combination"]["groups"].as_array().unwrap().iter().map(|g| g.as_str().unwrap()).collect();
        let combo = combo.join("+");
        let model = row["model"].as_str().unwrap();
        let auc = format!("{:.4}", row["mean"]["auc"].as_f64().unwrap());
        let line = stdout
            .lines()
            .find(|l| l.split_whitespace().take(2).eq([combo.as_str(), model]))
            .unwrap_or_else(|| panic!("no row for {combo} / {model}"));
        assert_eq!(line.split_whitespace().nth(2), Some(auc.as_str()), "{line}");
    }
}

#[test]
fn changing_node2vec_reuses_data_and_network() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let config = write_config(tmp.path(), SMALL);
    run(&config, &out, "run");
    let config = write_config(tmp.path(), &SMALL.replace("dimensions = 4", "dimensions = 6"));
    let o = run(&config, &out, "run");
    let log = stderr(&o);
    assert!(log.contains("[data] reusing cached output"), "{log}");
    assert!(log.contains("[network] reusing cached output"), "{log}");
    assert!(log.contains("[features] running"), "{log}");
    let timings: serde_json::Value = serde_json::from_slice(&fs::read(out.join("timings.json")).unwrap()).unwrap();
    assert_eq!(timings[0]["cached"], true);
    assert_eq!(timings[2]["cached"], false);
}

#[test]
fn rerun_and_seed_override_behave() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &SMALL.replace("importance_repeats = 1", "importance_repeats = 1\nexport_scores = true"));
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    run(&config, &a, "run");
    run(&config, &b, "run");
    assert_eq!(fs::read(a.join("report/report.json")).unwrap(), fs::read(b.join("report/report.json")).unwrap());
    assert_eq!(fs::read(a.join("report/ablation.tsv")).unwrap(), fs::read(b.join("report/ablation.tsv")).unwrap());
    let scores = fs::read_to_string(a.join("report/scores.tsv")).unwrap();
    assert!(scores.starts_with("user_id\tcombination\tmodel\tfold\tscore\n"));

    let o = pseudoscore(&["run", "--config", &config, "--out", c.to_str().unwrap(), "--seed", "8", "--threads", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_ne!(fs::read(a.join("report/report.json")).unwrap(), fs::read(c.join("report/report.json")).unwrap());
}

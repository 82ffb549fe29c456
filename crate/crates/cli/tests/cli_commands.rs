//! End-to-end CLI behaviour: exit codes, config resolution and output files.

use std::path::Path;

use convdepth_cli::execute_command;

fn cli(args: &[&str]) -> i32 {
    execute_command(std::iter::once("convdepth").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(cli(&["frobnicate"]), 2);
    assert_eq!(cli(&["run", "--sessions", "many"]), 2);
    assert_eq!(cli(&["analyze"]), 2);
}

#[test]
fn config_paths_resolve_against_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("mock.txt"), "seed 4\n").unwrap();
    std::fs::write(
        tmp.path().join("experiment.toml"),
        r#"
model_ids = ["mock-a"]
sessions_per_model = 3
repetitions = 2
master_seed = 8
questionnaires = ["GSE", "LMS"]
run_dir = "out"

[backend]
kind = "mock"
mock_script = "mock.txt"
"#,
    )
    .unwrap();
    let config = tmp.path().join("experiment.toml");
    let run = tmp.path().join("out");

    assert_eq!(cli(&["run", "--config", p(&config)]), 0);
    assert!(run.join("manifest.json").is_file());
    assert_eq!(cli(&["validate", "--config", p(&config), "--run", p(&run)]), 0);

    // flags override the file, and a changed seed no longer matches the run
    assert_eq!(cli(&["run", "--config", p(&config), "--seed", "9"]), 1);

    assert_eq!(cli(&["analyze", "--run", p(&run)]), 0);
    assert_eq!(cli(&["report", "--run", p(&run)]), 0);
    assert_eq!(cli(&["topics", "--run", p(&run), "--k", "3"]), 0);
    for file in ["trend_table.txt", "trend_table.csv", "analyses.csv", "topics.txt", "topics.csv", "topic_assignments.csv"] {
        assert!(run.join(file).is_file(), "{file} missing");
    }
}

#[test]
fn a_stored_run_supplies_its_own_settings() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("r");
    let args = ["run", "--run", p(&run), "--models", "mock-a", "--sessions", "2", "--repetitions", "1", "--questionnaires", "GSE", "--seed", "2"];
    assert_eq!(cli(&args), 0);
    let before = std::fs::read_to_string(run.join("responses.jsonl")).unwrap();
    // no flags: the manifest provides the configuration and nothing is left to do
    assert_eq!(cli(&["run", "--run", p(&run)]), 0);
    assert_eq!(std::fs::read_to_string(run.join("responses.jsonl")).unwrap(), before);
}

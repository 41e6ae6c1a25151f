use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use cocreate::comms::MockGenerator;
use cocreate::log::ManualClock;
use cocreate::session::{FeedbackParts, Rating, Session, SessionConfig};
use cocreate::story::{SessionId, StoryField};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cocreate")).args(args).output().unwrap()
}

fn finished_log(path: &Path) {
    let cfg = SessionConfig { seed: 8, ..Default::default() };
    let mut s = Session::with_clock(SessionId("cli".into()), cfg, Arc::new(ManualClock::default())).unwrap();
    let g = MockGenerator::new(8);
    for i in 0..10 {
        s.edit(StoryField::Beginning, &"x".repeat(10 + i)).unwrap();
        s.skip().unwrap();
        s.run_agent_turn(&g).unwrap();
        s.submit_feedback(FeedbackParts { action: Some(Rating::Good), content: Some(Rating::Bad) })
            .unwrap();
    }
    std::fs::write(path, s.log().to_jsonl()).unwrap();
}

#[test]
fn experiment_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["experiment", "--repetitions", "40", "--seed", "3", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv_a = std::fs::read_to_string(a.join("oracle.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read_to_string(b.join("oracle.csv")).unwrap());
    assert_eq!(
        std::fs::read_to_string(a.join("oracle_plot.json")).unwrap(),
        std::fs::read_to_string(b.join("oracle_plot.json")).unwrap()
    );
    assert_eq!(csv_a.lines().next().unwrap(), "policy,accuracy,repetitions,steps,mean_normalized,std_normalized,seed");
    assert_eq!(csv_a.lines().count(), 1 + 6 * 5);
}

#[test]
fn experiment_flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[experiment]\npolicies = [\"ucb1\", \"thompson\"]\nrepetitions = 5\naccuracies = [0.9]\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "experiment",
        "--config",
        cfg.to_str().unwrap(),
        "--policies",
        "uniform_random",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(out.join("oracle.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("uniform_random,0.9,5,10,"));
}

#[test]
fn bad_flags_exit_two() {
    for args in [
        &["experiment", "--policies", "bogus"][..],
        &["experiment", "--accuracies", "0.2"],
        &["experiment", "--steps", "-1"],
        &["experiment", "--liked-arm", "7"],
        &["frobnicate"],
    ] {
        let o = run(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn replay_prints_ten_rewards() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.jsonl");
    finished_log(&path);
    let o = run(&["replay", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let rewards: Vec<&str> = stdout.lines().filter(|l| l.trim_start().starts_with("turn ")).collect();
    assert_eq!(rewards.len(), 10, "{stdout}");
    assert!(rewards.iter().all(|l| l.contains("reward 0.800")));
}

#[test]
fn truncated_log_warns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.jsonl");
    finished_log(&path);
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, &text[..text.len() - 10]).unwrap();
    let o = run(&["replay", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("incomplete"));
}

#[test]
fn corrupt_log_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.jsonl");
    finished_log(&path);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();

    // Garbage in the middle.
    let mut garbled = lines.clone();
    garbled[4] = "{not json".into();
    std::fs::write(&path, garbled.join("\n") + "\n").unwrap();
    let o = run(&["replay", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 5"));

    // A record removed: the sequence gap is reported.
    lines.remove(6);
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let o = run(&["replay", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seq 7"), "{}", String::from_utf8_lossy(&o.stderr));
}

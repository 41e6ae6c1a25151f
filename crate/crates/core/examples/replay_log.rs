//! Writes a session log to disk, reads it back, rebuilds the session from the
//! log alone and prints the report.
//!
//! cargo run --example replay_log

use std::sync::Arc;

use cocreate::comms::MockGenerator;
use cocreate::log::ManualClock;
use cocreate::replay::{check_transitions, parse_log, replay};
use cocreate::session::{FeedbackParts, Rating, Session, SessionConfig};
use cocreate::story::{SessionId, StoryField};

fn main() {
    let dir = std::env::temp_dir().join("cocreate-replay-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("session.jsonl");

    let config = SessionConfig { max_turns: 3, seed: 9, ..Default::default() };
    let mut s = Session::with_clock(SessionId("demo".into()), config, Arc::new(ManualClock::default()))
        .expect("valid config");
    s.log_mut().set_sink(Box::new(std::fs::File::create(&path).expect("log file")));
    let generator = MockGenerator::new(9);
    for i in 0..3 {
        s.edit(StoryField::Development, &"the river remembers ".repeat(3 + i)).expect("edit");
        s.skip().expect("skip");
        s.run_agent_turn(&generator).expect("mock never fails");
        s.submit_feedback(FeedbackParts { action: Some(Rating::Good), content: Some(Rating::Good) })
            .expect("feedback");
    }

    let text = std::fs::read_to_string(&path).expect("read back");
    let parsed = parse_log(&text).expect("well-formed log");
    check_transitions(&parsed.records).expect("legal transitions");
    let rebuilt = replay(&parsed.records).expect("consistent log");
    assert_eq!(&rebuilt.document, s.document());
    assert_eq!(&rebuilt.bandit, s.bandit());
    print!("{}", rebuilt.report());
    println!("log: {}", path.display());
}

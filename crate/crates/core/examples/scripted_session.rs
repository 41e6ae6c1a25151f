//! Drives one full session in-process with the mock generator and a scripted
//! writer, then prints the story, the bandit posterior and the log size.
//!
//! cargo run --example scripted_session -- [ablation]

use cocreate::comms::MockGenerator;
use cocreate::session::{FeedbackParts, FeedbackStep, Phase, Rating, Session, SessionConfig};
use cocreate::story::{SessionId, StoryField};

const LINES: [&str; 4] = [
    "Mira found a door in the orchard wall that had not been there yesterday.",
    "Behind it the seasons ran backwards and her grandmother was young again.",
    "The door began to close while Mira was still on the far side.",
    "She stepped through at the last moment carrying a single winter apple.",
];

fn main() {
    let ablation = std::env::args().nth(1).as_deref() == Some("ablation");
    let config = SessionConfig {
        ablation,
        seed: 42,
        ..Default::default()
    };
    let mut session = Session::new(SessionId("example".into()), config).expect("valid config");
    let generator = MockGenerator::new(42);

    let mut line = 0;
    while session.phase() != Phase::Finished {
        let field = StoryField::ALL[line % 4];
        let current = session.document().get(field).to_string();
        session
            .edit(field, format!("{current} {}", LINES[line % 4]).trim())
            .expect("edit");
        line += 1;
        if !session.leave_field().expect("leave") {
            continue;
        }
        let turn = session.run_agent_turn(&generator).expect("mock never fails");
        println!("turn {:2}: arm {} ({})", session.state().turn, turn.arm, turn.outcome.kind.as_str());
        // This writer likes rewrites of the closing parts and nothing else.
        let liked = turn.arm == 1;
        let rating = if liked { Rating::Good } else { Rating::Bad };
        let parts = if ablation {
            FeedbackParts { action: None, content: Some(rating) }
        } else {
            FeedbackParts { action: Some(rating), content: Some(rating) }
        };
        match session.submit_feedback(parts).expect("feedback") {
            FeedbackStep::Resolved { reward, reverted, .. } => {
                println!("         reward {reward:?}, reverted {reverted}");
            }
            FeedbackStep::AwaitingContent => unreachable!("both answers were given"),
        }
    }

    println!();
    for field in StoryField::ALL {
        println!("{}: {}", field.label(), session.document().get(field));
    }
    println!();
    for (i, a) in session.bandit().arms().iter().enumerate() {
        println!("arm {i}: pulls {}  Beta({:.1}, {:.1})", a.pulls, a.alpha, a.beta);
    }
    println!("{} log records", session.records().len());
}

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use cocreate::comms::{
    build_prompt, CommunicationKind, GenerationRequest, Generator, GeneratorError, HttpBackendConfig, HttpGenerator,
};
use cocreate::session::{Phase, Session, SessionConfig, SessionError};
use cocreate::story::{SessionId, StoryDocument, StoryField};

enum Reply {
    Json(u16, String),
    Stall(Duration),
}

struct Seen {
    body: String,
    authorization: Option<String>,
}

/// One-thread HTTP server answering requests from a script, in order.
fn fake_server(script: Vec<Reply>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for reply in script {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = Some(line["authorization:".len()..].trim().to_string());
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push(Seen {
                body: String::from_utf8(body).unwrap(),
                authorization: auth,
            });
            let mut stream = stream;
            match reply {
                Reply::Json(status, text) => {
                    let _ = write!(
                        stream,
                        "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{text}",
                        text.len()
                    );
                }
                Reply::Stall(d) => thread::sleep(d),
            }
        }
    });
    (format!("http://{addr}/complete"), seen)
}

fn doc() -> StoryDocument {
    let mut d = StoryDocument::default();
    d.apply_edit(StoryField::Beginning, "A cat inherits a bakery.");
    d.apply_edit(StoryField::Conclusion, "The bread is finally right.");
    d
}

#[test]
fn posts_prompt_and_reads_pointer() {
    let (url, seen) = fake_server(vec![Reply::Json(200, r#"{"text":"_Nice story._"}"#.into())]);
    let mut cfg = HttpBackendConfig::new(url);
    cfg.model = Some("tiny".into());
    cfg.auth_token_env = Some("COCREATE_TEST_TOKEN".into());
    std::env::set_var("COCREATE_TEST_TOKEN", "s3cret");
    let g = HttpGenerator::new(cfg);
    let d = doc();
    let prompt = build_prompt(CommunicationKind::Review, &d);
    let out = g
        .generate(&GenerationRequest {
            kind: CommunicationKind::Review,
            prompt: &prompt,
            document: &d,
            nonce: 1,
        })
        .unwrap();
    assert_eq!(out, "_Nice story._");
    let seen = seen.lock().unwrap();
    let body: serde_json::Value = serde_json::from_str(&seen[0].body).unwrap();
    assert_eq!(body["prompt"], prompt.as_str());
    assert_eq!(body["model"], "tiny");
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer s3cret"));
}

#[test]
fn error_status_and_bad_shape() {
    let (url, _) = fake_server(vec![
        Reply::Json(500, "{}".into()),
        Reply::Json(200, r#"{"choices":[]}"#.into()),
    ]);
    let g = HttpGenerator::new(HttpBackendConfig::new(url));
    let d = doc();
    let req = GenerationRequest {
        kind: CommunicationKind::Review,
        prompt: "p",
        document: &d,
        nonce: 0,
    };
    assert!(matches!(g.generate(&req), Err(GeneratorError::Backend(_))));
    assert!(matches!(g.generate(&req), Err(GeneratorError::Malformed(_))));
}

#[test]
fn slow_backend_times_out() {
    let (url, _) = fake_server(vec![Reply::Stall(Duration::from_millis(800))]);
    let mut cfg = HttpBackendConfig::new(url);
    cfg.timeout_ms = 100;
    let g = HttpGenerator::new(cfg);
    let d = doc();
    let req = GenerationRequest {
        kind: CommunicationKind::Review,
        prompt: "p",
        document: &d,
        nonce: 0,
    };
    assert!(matches!(g.generate(&req), Err(GeneratorError::Timeout(100))));
}

fn session_at_agent_turn(max_turns: u32) -> Session {
    let cfg = SessionConfig {
        max_turns,
        policy: "uniform_random".into(),
        seed: 2,
        ..Default::default()
    };
    let mut s = Session::new(SessionId("h".into()), cfg).unwrap();
    s.edit(StoryField::Beginning, "Once there was a lighthouse.").unwrap();
    s.skip().unwrap();
    s
}

#[test]
fn one_retry_then_success() {
    let (url, seen) = fake_server(vec![
        Reply::Json(503, "{}".into()),
        Reply::Json(200, r#"{"text":"_First half.|Second half._"}"#.into()),
    ]);
    let g = HttpGenerator::new(HttpBackendConfig::new(url));
    let mut s = session_at_agent_turn(10);
    let turn = s.run_agent_turn(&g).unwrap();
    assert_eq!(seen.lock().unwrap().len(), 2);
    assert_eq!(s.state().turn, 1);
    assert!(s.phase().is_awaiting());
    if turn.outcome.kind.is_rewrite() {
        let changed = turn.outcome.changed_fields();
        assert_eq!(s.document().get(changed[0]), "First half.");
    }
}

#[test]
fn two_failures_hand_control_back() {
    let (url, _) = fake_server(vec![Reply::Json(500, "{}".into()), Reply::Json(500, "{}".into())]);
    let g = HttpGenerator::new(HttpBackendConfig::new(url));
    let mut s = session_at_agent_turn(10);
    let before = s.document().clone();
    let err = s.run_agent_turn(&g).unwrap_err();
    assert!(matches!(err, SessionError::GenerationFailed { attempts: 2, .. }));
    assert_eq!(s.phase(), Phase::HumanInitiative);
    assert_eq!(s.state().turn, 0);
    assert_eq!(s.document(), &before);
    assert_eq!(s.bandit().total_pulls(), 0);
    assert!(s.records().iter().any(|r| r.event.name() == "turn_failed"));
}

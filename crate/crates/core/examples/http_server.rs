//! Starts the session API on an ephemeral port, drives one agent turn over
//! real HTTP and shuts down.
//!
//! cargo run --example http_server

use std::time::Duration;

use cocreate::api::{router, AppState, ServerOptions};
use serde_json::{json, Value};

#[tokio::main]
async fn main() {
    let state = AppState::new(ServerOptions::default()).expect("in-memory state");
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind");
    let base = format!("http://{}", listener.local_addr().expect("addr"));
    tokio::spawn(async move { axum::serve(listener, router(state)).await });

    let out = tokio::task::spawn_blocking(move || {
        let client = reqwest::blocking::Client::new();
        let post = |path: &str, body: Value| -> Value {
            client
                .post(format!("{base}{path}"))
                .json(&body)
                .send()
                .expect("request")
                .json()
                .expect("json")
        };
        let created = post("/sessions", json!({"policy": "ucb1", "seed": 1}));
        let id = created["session"]["session_id"].as_str().expect("id").to_string();
        println!("created {id}");
        post(
            &format!("/sessions/{id}/edit"),
            json!({"field": "beginning", "text": "The clockmaker's daughter hears time skip."}),
        );
        let after = post(&format!("/sessions/{id}/leave_field"), json!({}));
        println!("phase after leaving the field: {}", after["phase"]);
        let view = loop {
            let v: Value = client
                .get(format!("{base}/sessions/{id}"))
                .send()
                .expect("get")
                .json()
                .expect("json");
            if v["phase"] != "agent_initiative" {
                break v;
            }
            std::thread::sleep(Duration::from_millis(10));
        };
        println!("agent proposed: {}", serde_json::to_string_pretty(&view["pending"]).unwrap());
        let done = post(&format!("/sessions/{id}/feedback"), json!({"action": "good", "content": "good"}));
        println!("phase {}, turn {}", done["phase"], done["turn"]);
        client.get(format!("{base}/sessions/{id}/log")).send().expect("log").text().expect("text")
    })
    .await
    .expect("client task");
    println!("{} log records", out.lines().count());
}

//! The agent's three Communications and the text generator behind them.
//!
//! Each [`CommunicationKind`] maps to one bandit arm. A Communication builds
//! a few-shot question/answer prompt, sends it to a [`Generator`], and pulls
//! the answer out of the first `_..._` span in the response.
//!
//! The few-shot examples below were written for this crate.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::story::{StoryDocument, StoryField};

/// System preamble that opens every prompt.
pub const PREAMBLE: &str = "You are an AI writing assistant, collaborating with a human on the task of writing a story.You are very concise, and answer only what is absolutely necessary, without any explanations or introductions.You make sure that all your answers are surrounded by an underscore, such as _My answer_ .";

/// Separates the two rewritten parts inside one answer.
pub const PART_SEPARATOR: char = '|';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommunicationKind {
    /// (Re)write the beginning and development.
    RewriteOpening,
    /// (Re)write the climax and conclusion.
    RewriteClosing,
    /// One positive sentence, one negative, one suggestion.
    Review,
}

impl CommunicationKind {
    /// Arm order: index `i` of the bandit is `ALL[i]`.
    pub const ALL: [CommunicationKind; 3] = [
        CommunicationKind::RewriteOpening,
        CommunicationKind::RewriteClosing,
        CommunicationKind::Review,
    ];

    pub fn arm(&self) -> usize {
        match self {
            CommunicationKind::RewriteOpening => 0,
            CommunicationKind::RewriteClosing => 1,
            CommunicationKind::Review => 2,
        }
    }

    pub fn from_arm(arm: usize) -> Option<Self> {
        Self::ALL.get(arm).copied()
    }

    /// Fields replaced by a rewrite; empty for a review.
    pub fn target_fields(&self) -> &'static [StoryField] {
        match self {
            CommunicationKind::RewriteOpening => &[StoryField::Beginning, StoryField::Development],
            CommunicationKind::RewriteClosing => &[StoryField::Climax, StoryField::Conclusion],
            CommunicationKind::Review => &[],
        }
    }

    pub fn is_rewrite(&self) -> bool {
        !matches!(self, CommunicationKind::Review)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            CommunicationKind::RewriteOpening => "rewrite_opening",
            CommunicationKind::RewriteClosing => "rewrite_closing",
            CommunicationKind::Review => "review",
        }
    }

    fn instruction(&self) -> &'static str {
        match self {
            CommunicationKind::RewriteOpening => {
                "(Re)write the beginning and development of the story so that they lead into the climax and conclusion. Write 20 to 30 words for each part and separate the two parts with a | character."
            }
            CommunicationKind::RewriteClosing => {
                "(Re)write the climax and conclusion of the story so that they follow from the beginning and development. Write 20 to 30 words for each part and separate the two parts with a | character."
            }
            CommunicationKind::Review => {
                "Write a review of the story, one sentence positive, one negative, and one suggestion for improvements."
            }
        }
    }
}

impl fmt::Display for CommunicationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CommunicationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown communication `{s}`"))
    }
}

struct Shot {
    story: [&'static str; 4],
    answer: &'static str,
}

const OPENING_SHOTS: &[Shot] = &[Shot {
    story: [
        "",
        "",
        "The storm tore the lighthouse lamp from its mount just as the ferry turned toward the rocks.",
        "Mara rebuilt the lamp from lanterns, and the keeper's log gained a new name.",
    ],
    answer: "Mara had kept the lighthouse alone since her father's boat went missing, polishing the great lamp each dusk and counting ships. | One autumn a ferry full of strangers began crossing nightly, and the sky grew heavier with every trip they made.",
}];

const CLOSING_SHOTS: &[Shot] = &[Shot {
    story: [
        "A young baker in a mountain village discovered that her bread could make people remember forgotten things.",
        "Word spread, and soon a line of grieving travelers waited at her door before dawn each day.",
        "",
        "",
    ],
    answer: "A cold stranger demanded a loaf to recall where he had buried stolen gold, and she refused him to his face. | That night she baked for the village instead, and everyone remembered that the stranger had once been their kind mayor.",
}];

const REVIEW_SHOTS: &[Shot] = &[Shot {
    story: [
        "A robot gardener tends the last greenhouse on a frozen planet.",
        "It talks to the tomatoes and names each of them after old films.",
        "A crack spreads in the glass roof during the long night.",
        "The robot seals it with its own chest plate and keeps working.",
    ],
    answer: "The robot's quiet devotion is touching and easy to picture. The ending arrives too abruptly to land its emotional weight. Consider showing one tomato's name paying off in the final scene.",
}];

fn shots(kind: CommunicationKind) -> &'static [Shot] {
    match kind {
        CommunicationKind::RewriteOpening => OPENING_SHOTS,
        CommunicationKind::RewriteClosing => CLOSING_SHOTS,
        CommunicationKind::Review => REVIEW_SHOTS,
    }
}

fn write_story(out: &mut String, fields: [&str; 4]) {
    for (field, text) in StoryField::ALL.iter().zip(fields) {
        out.push_str(field.label());
        out.push_str(": ");
        out.push_str(text);
        out.push('\n');
    }
}

/// Builds the full prompt for `kind` over the current document.
pub fn build_prompt(kind: CommunicationKind, doc: &StoryDocument) -> String {
    let mut out = String::with_capacity(2048);
    out.push_str(PREAMBLE);
    out.push_str("\n\n");
    for shot in shots(kind) {
        out.push_str("Question: ");
        out.push_str(kind.instruction());
        out.push('\n');
        write_story(&mut out, shot.story);
        out.push_str("Answer: _");
        out.push_str(shot.answer);
        out.push_str("_\n\n");
    }
    out.push_str("Question: ");
    out.push_str(kind.instruction());
    out.push('\n');
    write_story(&mut out, StoryField::ALL.map(|f| doc.get(f)));
    out.push_str("Answer:");
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no underscore-delimited span in response")]
pub struct NoDelimitedSpan;

/// Returns the trimmed content of the first `_..._` span.
pub fn parse_generated(raw: &str) -> Result<String, NoDelimitedSpan> {
    let start = raw.find('_').ok_or(NoDelimitedSpan)?;
    let rest = &raw[start + 1..];
    let end = rest.find('_').ok_or(NoDelimitedSpan)?;
    Ok(rest[..end].trim().to_string())
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeneratorError {
    #[error("generator timed out after {0} ms")]
    Timeout(u64),
    #[error("generator backend error: {0}")]
    Backend(String),
    #[error("malformed generator response: {0}")]
    Malformed(String),
}

/// Everything a generator may look at for one call.
#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub kind: CommunicationKind,
    pub prompt: &'a str,
    pub document: &'a StoryDocument,
    /// Drawn from the caller's seeded stream.
    pub nonce: u64,
}

/// Produces a raw completion for a prompt.
pub trait Generator: Send + Sync {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, GeneratorError>;
}

/// Result of one executed Communication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommOutcome {
    pub kind: CommunicationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_fields: Option<BTreeMap<StoryField, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review_text: Option<String>,
    pub raw_response: String,
}

impl CommOutcome {
    pub fn changed_fields(&self) -> Vec<StoryField> {
        self.new_fields
            .as_ref()
            .map(|m| m.keys().copied().collect())
            .unwrap_or_default()
    }
}

fn split_parts(answer: &str) -> Result<(String, String), GeneratorError> {
    if let Some((a, b)) = answer.split_once(PART_SEPARATOR) {
        let (a, b) = (a.trim(), b.trim());
        if !a.is_empty() && !b.is_empty() {
            return Ok((a.to_string(), b.to_string()));
        }
    }
    // No separator: split at the sentence boundary nearest the middle.
    let bounds: Vec<usize> = answer
        .match_indices(['.', '!', '?'])
        .map(|(i, _)| i + 1)
        .filter(|&i| i < answer.trim_end().len())
        .collect();
    let mid = answer.len() / 2;
    let cut = bounds
        .into_iter()
        .min_by_key(|&i| i.abs_diff(mid))
        .ok_or_else(|| GeneratorError::Malformed(format!("cannot split into two parts: {answer:?}")))?;
    let (a, b) = answer.split_at(cut);
    Ok((a.trim().to_string(), b.trim().to_string()))
}

/// Runs one Communication against `generator`. Never touches `doc`.
pub fn execute_communication(
    kind: CommunicationKind,
    doc: &StoryDocument,
    generator: &dyn Generator,
    rng: &mut dyn RngCore,
) -> Result<CommOutcome, GeneratorError> {
    let prompt = build_prompt(kind, doc);
    let request = GenerationRequest {
        kind,
        prompt: &prompt,
        document: doc,
        nonce: rng.next_u64(),
    };
    let raw = generator.generate(&request)?;
    let answer = match parse_generated(&raw) {
        Ok(a) => a,
        Err(_) => {
            tracing::warn!(%kind, "response has no _..._ span, using whole response");
            raw.trim().to_string()
        }
    };
    if answer.is_empty() {
        return Err(GeneratorError::Malformed("empty answer".into()));
    }
    match kind.target_fields() {
        [first, second] => {
            let (a, b) = split_parts(&answer)?;
            let fields = BTreeMap::from([(*first, a), (*second, b)]);
            Ok(CommOutcome {
                kind,
                new_fields: Some(fields),
                review_text: None,
                raw_response: raw,
            })
        }
        _ => Ok(CommOutcome {
            kind,
            new_fields: None,
            review_text: Some(answer),
            raw_response: raw,
        }),
    }
}

/// Which generator to build, as read from config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum GeneratorBackend {
    Mock {
        #[serde(default)]
        seed: u64,
    },
    Http(HttpBackendConfig),
}

impl Default for GeneratorBackend {
    fn default() -> Self {
        GeneratorBackend::Mock { seed: 0 }
    }
}

impl GeneratorBackend {
    pub fn build(&self) -> Box<dyn Generator> {
        match self {
            GeneratorBackend::Mock { seed } => Box::new(MockGenerator::new(*seed)),
            GeneratorBackend::Http(cfg) => Box::new(HttpGenerator::new(cfg.clone())),
        }
    }
}

// ---------------------------------------------------------------------------
// Mock generator

/// FNV-1a, stable across platforms and releases.
fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

const HEROES: &[&str] = &[
    "a weary cartographer",
    "the youngest lamplighter",
    "an exiled court musician",
    "a retired smuggler",
    "a curious apprentice",
    "the village clockmaker",
];
const PLACES: &[&str] = &[
    "a harbor town wrapped in fog",
    "the edge of a salt desert",
    "a library that never closed",
    "a floating market",
    "an orchard under a broken moon",
];
const RISING: &[&str] = &[
    "Strange letters began arriving, each one older than the last.",
    "Every night the same song drifted in from somewhere no one could find.",
    "A stranger offered a bargain that seemed far too generous.",
    "Small things started disappearing, first keys, then whole afternoons.",
];
const TURNS: &[&str] = &[
    "At the height of the storm the truth came out, and it was worse than anyone feared.",
    "Cornered at last, the hero had to choose between the map and the friend.",
    "The bell rang thirteen times, and everything hidden stepped into the light.",
    "When the bridge gave way, only one promise still held.",
];
const ENDINGS: &[&str] = &[
    "By morning the town was quieter, but it remembered what it had almost lost.",
    "They kept the secret, and it kept them, for the rest of their long lives.",
    "The road home was shorter than expected, and lighter too.",
    "Years later children still told it wrong, and that was how it stayed true.",
];
const PRAISE: &[&str] = &[
    "The opening sets a vivid mood in very few words.",
    "The central image is memorable and easy to picture.",
    "The pacing moves briskly from setup to payoff.",
];
const CRITIQUE: &[&str] = &[
    "The climax resolves too quickly to feel earned.",
    "The hero's motivation stays vague through the middle.",
    "Some transitions between parts feel abrupt.",
];
const SUGGEST: &[&str] = &[
    "Consider planting a small detail early that pays off at the end.",
    "Try giving the hero one concrete want in the first sentence.",
    "Add a single sensory detail to anchor the climax.",
];

/// Deterministic offline generator built from template banks.
///
/// Output depends on the seed, the kind, every story field, and the request
/// nonce, so it changes with the story but repeats exactly for equal inputs.
#[derive(Debug, Clone)]
pub struct MockGenerator {
    seed: u64,
}

impl MockGenerator {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn key(&self, request: &GenerationRequest<'_>) -> u64 {
        let mut h = fnv1a(0xcbf2_9ce4_8422_2325, &self.seed.to_le_bytes());
        h = fnv1a(h, request.kind.as_str().as_bytes());
        for field in StoryField::ALL {
            h = fnv1a(h, request.document.get(field).as_bytes());
            h = fnv1a(h, &[0xff]);
        }
        fnv1a(h, &request.nonce.to_le_bytes())
    }
}

/// Longest word in the story, used to tie mock output to the user's text.
fn motif(doc: &StoryDocument) -> Option<String> {
    StoryField::ALL
        .iter()
        .flat_map(|f| doc.get(*f).split_whitespace())
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| w.chars().count() >= 5 && w.chars().all(char::is_alphanumeric))
        .max_by_key(|w| w.chars().count())
        .map(str::to_lowercase)
}

impl Generator for MockGenerator {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, GeneratorError> {
        let mut state = self.key(request);
        let mut pick = |bank: &[&'static str]| {
            state = splitmix(state);
            bank[(state % bank.len() as u64) as usize]
        };
        let motif = motif(request.document)
            .map(|m| format!(" Nobody could stop thinking about the {m}."))
            .unwrap_or_default();
        let answer = match request.kind {
            CommunicationKind::RewriteOpening => {
                let hero = pick(HEROES);
                let place = pick(PLACES);
                format!(
                    "In {place} lived {hero} who had stopped expecting surprises.{motif} {PART_SEPARATOR} {} {}",
                    pick(RISING),
                    pick(RISING)
                )
            }
            CommunicationKind::RewriteClosing => {
                format!("{}{motif} {PART_SEPARATOR} {}", pick(TURNS), pick(ENDINGS))
            }
            CommunicationKind::Review => {
                format!("{} {} {}", pick(PRAISE), pick(CRITIQUE), pick(SUGGEST))
            }
        };
        Ok(format!("_{answer}_"))
    }
}

// ---------------------------------------------------------------------------
// HTTP generator

fn default_max_tokens() -> u32 {
    256
}

fn default_temperature() -> f64 {
    0.7
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_response_pointer() -> String {
    "/text".to_string()
}

/// Settings for a JSON-over-HTTP completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Name of the environment variable holding a bearer token.
    #[serde(default)]
    pub auth_token_env: Option<String>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// JSON body template. String values equal to `{{prompt}}`, `{{model}}`,
    /// `{{max_tokens}}` or `{{temperature}}` are substituted. When unset the
    /// body is `{prompt, max_tokens, temperature}` plus `model` if configured.
    #[serde(default)]
    pub request_template: Option<String>,
    /// JSON pointer to the completion text in the response body.
    #[serde(default = "default_response_pointer")]
    pub response_pointer: String,
}

impl HttpBackendConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: None,
            timeout_ms: default_timeout_ms(),
            auth_token_env: None,
            max_tokens: default_max_tokens(),
            temperature: default_temperature(),
            request_template: None,
            response_pointer: default_response_pointer(),
        }
    }

    /// Request body for `prompt`.
    pub fn request_body(&self, prompt: &str) -> Result<serde_json::Value, GeneratorError> {
        use serde_json::{json, Value};
        let Some(template) = &self.request_template else {
            let mut body = json!({
                "prompt": prompt,
                "max_tokens": self.max_tokens,
                "temperature": self.temperature,
            });
            if let Some(model) = &self.model {
                body["model"] = json!(model);
            }
            return Ok(body);
        };
        let mut body: Value = serde_json::from_str(template)
            .map_err(|e| GeneratorError::Backend(format!("bad request_template: {e}")))?;
        fn fill(v: &mut Value, cfg: &HttpBackendConfig, prompt: &str) {
            match v {
                Value::String(s) => match s.as_str() {
                    "{{prompt}}" => *v = json!(prompt),
                    "{{model}}" => *v = json!(cfg.model),
                    "{{max_tokens}}" => *v = json!(cfg.max_tokens),
                    "{{temperature}}" => *v = json!(cfg.temperature),
                    _ => {}
                },
                Value::Array(items) => items.iter_mut().for_each(|i| fill(i, cfg, prompt)),
                Value::Object(map) => map.values_mut().for_each(|i| fill(i, cfg, prompt)),
                _ => {}
            }
        }
        fill(&mut body, self, prompt);
        Ok(body)
    }
}

/// Generator that POSTs to a completion endpoint.
///
/// Blocking; call it off the async executor. At most one request per instance
/// is in flight, so one instance per session gives a per-session limit of one.
pub struct HttpGenerator {
    config: HttpBackendConfig,
    client: OnceLock<reqwest::blocking::Client>,
    in_flight: Mutex<()>,
}

impl HttpGenerator {
    pub fn new(config: HttpBackendConfig) -> Self {
        Self {
            config,
            client: OnceLock::new(),
            in_flight: Mutex::new(()),
        }
    }

    fn client(&self) -> Result<&reqwest::blocking::Client, GeneratorError> {
        if let Some(c) = self.client.get() {
            return Ok(c);
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(self.config.timeout_ms))
            .build()
            .map_err(|e| GeneratorError::Backend(e.to_string()))?;
        Ok(self.client.get_or_init(|| client))
    }
}

impl Generator for HttpGenerator {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, GeneratorError> {
        let _guard = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        let body = self.config.request_body(request.prompt)?;
        let mut req = self.client()?.post(&self.config.endpoint).json(&body);
        if let Some(var) = &self.config.auth_token_env {
            match std::env::var(var) {
                Ok(token) => req = req.bearer_auth(token),
                Err(_) => tracing::warn!(var = %var, "auth token variable is not set"),
            }
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                GeneratorError::Timeout(self.config.timeout_ms)
            } else {
                GeneratorError::Backend(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(GeneratorError::Backend(format!("HTTP {status}")));
        }
        let value: serde_json::Value = resp.json().map_err(|e| {
            if e.is_timeout() {
                GeneratorError::Timeout(self.config.timeout_ms)
            } else {
                GeneratorError::Malformed(e.to_string())
            }
        })?;
        value
            .pointer(&self.config.response_pointer)
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| {
                GeneratorError::Malformed(format!(
                    "no string at {} in response",
                    self.config.response_pointer
                ))
            })
    }
}

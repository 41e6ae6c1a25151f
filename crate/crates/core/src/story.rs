//! The four-part story document and its snapshot/revert support.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Advisory per-part word range.
pub const PART_WORDS: (usize, usize) = (20, 30);
/// Advisory total word target and tolerance.
pub const TOTAL_WORDS_TARGET: usize = 100;
pub const TOTAL_WORDS_TOLERANCE: usize = 30;

#[derive(Debug, Error, PartialEq)]
pub enum StoryError {
    #[error("unknown story field `{0}`")]
    UnknownField(String),
    #[error("snapshot belongs to session {snapshot}, not {current}")]
    StaleSnapshot { snapshot: String, current: String },
}

/// Opaque session identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub String);

impl SessionId {
    pub fn new_random() -> Self {
        SessionId(uuid::Uuid::new_v4().simple().to_string())
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One of the four story parts, in narrative order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoryField {
    Beginning,
    Development,
    Climax,
    Conclusion,
}

impl StoryField {
    pub const ALL: [StoryField; 4] = [
        StoryField::Beginning,
        StoryField::Development,
        StoryField::Climax,
        StoryField::Conclusion,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            StoryField::Beginning => "beginning",
            StoryField::Development => "development",
            StoryField::Climax => "climax",
            StoryField::Conclusion => "conclusion",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            StoryField::Beginning => "Beginning",
            StoryField::Development => "Development",
            StoryField::Climax => "Climax",
            StoryField::Conclusion => "Conclusion",
        }
    }
}

impl fmt::Display for StoryField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StoryField {
    type Err = StoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StoryField::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| StoryError::UnknownField(s.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryDocument {
    pub beginning: String,
    pub development: String,
    pub climax: String,
    pub conclusion: String,
    pub revision: u64,
}

/// What a single field update changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditDelta {
    pub field: StoryField,
    /// Net characters inserted; deletions count as zero.
    pub chars_added: usize,
    pub field_switched: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotCause {
    PreAgentEdit,
}

/// Frozen copy of a document taken before an agent edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    document: StoryDocument,
    taken_at_turn: u32,
    cause: SnapshotCause,
    session: SessionId,
}

impl Snapshot {
    pub fn document(&self) -> &StoryDocument {
        &self.document
    }

    pub fn taken_at_turn(&self) -> u32 {
        self.taken_at_turn
    }

    pub fn cause(&self) -> SnapshotCause {
        self.cause
    }

    pub fn session(&self) -> &SessionId {
        &self.session
    }
}

impl StoryDocument {
    pub fn get(&self, field: StoryField) -> &str {
        match field {
            StoryField::Beginning => &self.beginning,
            StoryField::Development => &self.development,
            StoryField::Climax => &self.climax,
            StoryField::Conclusion => &self.conclusion,
        }
    }

    fn slot(&mut self, field: StoryField) -> &mut String {
        match field {
            StoryField::Beginning => &mut self.beginning,
            StoryField::Development => &mut self.development,
            StoryField::Climax => &mut self.climax,
            StoryField::Conclusion => &mut self.conclusion,
        }
    }

    /// Replaces one field's content and bumps the revision.
    pub fn apply_edit(&mut self, field: StoryField, new_text: &str) -> EditDelta {
        let slot = self.slot(field);
        let old_len = slot.chars().count();
        let new_len = new_text.chars().count();
        *slot = new_text.to_string();
        self.revision += 1;
        EditDelta {
            field,
            chars_added: new_len.saturating_sub(old_len),
            field_switched: false,
        }
    }

    /// Like [`apply_edit`](Self::apply_edit) but with the field given by name.
    pub fn apply_named_edit(&mut self, field: &str, new_text: &str) -> Result<EditDelta, StoryError> {
        Ok(self.apply_edit(field.parse()?, new_text))
    }

    pub fn snapshot(&self, session: &SessionId, turn: u32) -> Snapshot {
        Snapshot {
            document: self.clone(),
            taken_at_turn: turn,
            cause: SnapshotCause::PreAgentEdit,
            session: session.clone(),
        }
    }

    /// Restores the four fields from `snapshot`. Counts as a mutation.
    pub fn revert(&mut self, snapshot: &Snapshot, session: &SessionId) -> Result<(), StoryError> {
        if &snapshot.session != session {
            return Err(StoryError::StaleSnapshot {
                snapshot: snapshot.session.to_string(),
                current: session.to_string(),
            });
        }
        for field in StoryField::ALL {
            *self.slot(field) = snapshot.document.get(field).to_string();
        }
        self.revision += 1;
        Ok(())
    }

    pub fn same_content(&self, other: &StoryDocument) -> bool {
        StoryField::ALL.iter().all(|f| self.get(*f) == other.get(*f))
    }

    pub fn word_count_report(&self) -> WordCountReport {
        let parts = StoryField::ALL.map(|field| {
            let words = self.get(field).split_whitespace().count();
            PartCount {
                field,
                words,
                flag: LengthFlag::classify(words, PART_WORDS.0, PART_WORDS.1),
            }
        });
        let total: usize = parts.iter().map(|p| p.words).sum();
        WordCountReport {
            parts,
            total,
            total_flag: LengthFlag::classify(
                total,
                TOTAL_WORDS_TARGET - TOTAL_WORDS_TOLERANCE,
                TOTAL_WORDS_TARGET + TOTAL_WORDS_TOLERANCE,
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthFlag {
    Ok,
    TooShort,
    TooLong,
}

impl LengthFlag {
    fn classify(n: usize, lo: usize, hi: usize) -> Self {
        if n < lo {
            LengthFlag::TooShort
        } else if n > hi {
            LengthFlag::TooLong
        } else {
            LengthFlag::Ok
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PartCount {
    pub field: StoryField,
    pub words: usize,
    pub flag: LengthFlag,
}

/// Word counts per part. Advisory: nothing in the engine enforces them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WordCountReport {
    pub parts: [PartCount; 4],
    pub total: usize,
    pub total_flag: LengthFlag,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sid(s: &str) -> SessionId {
        SessionId(s.to_string())
    }

    #[test]
    fn insertion_into_empty_field() {
        let mut doc = StoryDocument::default();
        let d = doc.apply_edit(StoryField::Beginning, "Once upon");
        assert_eq!(d.chars_added, 9);
        assert_eq!(doc.beginning, "Once upon");
        assert_eq!(doc.revision, 1);
    }

    #[test]
    fn deletion_adds_nothing() {
        let mut doc = StoryDocument::default();
        doc.apply_edit(StoryField::Climax, "abc");
        assert_eq!(doc.apply_edit(StoryField::Climax, "ab").chars_added, 0);
        assert_eq!(doc.apply_edit(StoryField::Climax, "abXc").chars_added, 2);
    }

    #[test]
    fn single_insert() {
        let mut doc = StoryDocument::default();
        doc.apply_edit(StoryField::Climax, "abc");
        assert_eq!(doc.apply_edit(StoryField::Climax, "abXc").chars_added, 1);
    }

    #[test]
    fn counts_characters_not_bytes() {
        let mut doc = StoryDocument::default();
        assert_eq!(doc.apply_edit(StoryField::Beginning, "día ✨").chars_added, 5);
    }

    #[test]
    fn unknown_field() {
        let mut doc = StoryDocument::default();
        assert_eq!(
            doc.apply_named_edit("epilogue", "x"),
            Err(StoryError::UnknownField("epilogue".into()))
        );
        assert_eq!(doc.revision, 0);
    }

    #[test]
    fn revert_without_edit_bumps_revision() {
        let mut doc = StoryDocument::default();
        doc.apply_edit(StoryField::Beginning, "Hello");
        let snap = doc.snapshot(&sid("a"), 0);
        doc.revert(&snap, &sid("a")).unwrap();
        assert!(doc.same_content(snap.document()));
        assert_eq!(doc.revision, 2);
    }

    #[test]
    fn revert_undoes_two_edits() {
        let mut doc = StoryDocument::default();
        doc.apply_edit(StoryField::Beginning, "start");
        let snap = doc.snapshot(&sid("a"), 1);
        let expected = doc.clone();
        doc.apply_edit(StoryField::Climax, "boom");
        doc.apply_edit(StoryField::Beginning, "changed");
        doc.revert(&snap, &sid("a")).unwrap();
        assert!(doc.same_content(&expected));
    }

    #[test]
    fn stale_snapshot_rejected() {
        let mut doc = StoryDocument::default();
        let snap = doc.snapshot(&sid("a"), 0);
        assert!(matches!(
            doc.revert(&snap, &sid("b")),
            Err(StoryError::StaleSnapshot { .. })
        ));
        assert_eq!(doc.revision, 0);
    }

    #[test]
    fn word_counts() {
        let doc = StoryDocument::default();
        let r = doc.word_count_report();
        assert!(r.parts.iter().all(|p| p.words == 0 && p.flag == LengthFlag::TooShort));
        assert_eq!(r.total_flag, LengthFlag::TooShort);

        let words25 = vec!["word"; 25].join(" ");
        let doc = StoryDocument {
            beginning: words25.clone(),
            development: words25.clone(),
            climax: words25.clone(),
            conclusion: words25,
            revision: 0,
        };
        let r = doc.word_count_report();
        assert!(r.parts.iter().all(|p| p.words == 25 && p.flag == LengthFlag::Ok));
        assert_eq!(r.total, 100);
        assert_eq!(r.total_flag, LengthFlag::Ok);

        let doc = StoryDocument {
            beginning: vec!["w"; 31].join("  \n"),
            ..Default::default()
        };
        assert_eq!(doc.word_count_report().parts[0].flag, LengthFlag::TooLong);
    }

    #[test]
    fn json_shape() {
        let doc = StoryDocument {
            beginning: "a".into(),
            revision: 3,
            ..Default::default()
        };
        let v = serde_json::to_value(&doc).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"beginning":"a","development":"","climax":"","conclusion":"","revision":3})
        );
    }

    fn arb_doc() -> impl Strategy<Value = StoryDocument> {
        (".{0,40}", ".{0,40}", ".{0,40}", ".{0,40}", 0u64..100).prop_map(|(b, d, c, e, r)| {
            StoryDocument {
                beginning: b,
                development: d,
                climax: c,
                conclusion: e,
                revision: r,
            }
        })
    }

    proptest! {
        #[test]
        fn snapshot_revert_identity(doc in arb_doc(), edits in proptest::collection::vec((0usize..4, ".{0,20}"), 0..6)) {
            let session = sid("s");
            let snap = doc.snapshot(&session, 0);
            let mut live = doc.clone();
            for (i, text) in &edits {
                live.apply_edit(StoryField::ALL[*i], text);
            }
            live.revert(&snap, &session).unwrap();
            prop_assert!(live.same_content(&doc));
            prop_assert_eq!(live.revision, doc.revision + edits.len() as u64 + 1);
        }

        #[test]
        fn edit_touches_one_field(doc in arb_doc(), i in 0usize..4, text in ".{0,30}") {
            let mut live = doc.clone();
            let field = StoryField::ALL[i];
            let delta = live.apply_edit(field, &text);
            for other in StoryField::ALL {
                if other != field {
                    prop_assert_eq!(live.get(other), doc.get(other));
                }
            }
            // Length-delta oracle.
            let expected = (text.chars().count() as i64 - doc.get(field).chars().count() as i64).max(0);
            prop_assert_eq!(delta.chars_added as i64, expected);
        }
    }
}

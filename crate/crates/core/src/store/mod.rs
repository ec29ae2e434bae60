//! Manuscript ingestion and session-scoped storage.
//!
//! Each session owns exactly one directory under the data root:
//!
//! ```text
//! <data_root>/<session_id>/manuscript.raw   uploaded bytes
//! <data_root>/<session_id>/text.json        extracted text and offset maps
//! ```
//!
//! Ending a session deletes that directory synchronously; nothing derived
//! from the manuscript is kept anywhere else.

mod extract;
mod normalize;

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extract::{extractor_for, PdfExtractor, PlainTextExtractor, SourceKind, TextExtractor};
pub use normalize::{normalize, normalize_excerpt, raw_to_norm, Normalized};

pub const RAW_FILE: &str = "manuscript.raw";
pub const TEXT_FILE: &str = "text.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("manuscript is empty")]
    EmptyInput,
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("unknown session `{0}`")]
    UnknownSession(SessionId),
    #[error("session `{0}` already exists")]
    SessionExists(SessionId),
    #[error("invalid session id `{0}`")]
    InvalidSessionId(String),
    #[error("storage I/O: {0}")]
    Io(#[from] io::Error),
    #[error("storage encoding: {0}")]
    Encoding(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(String);

impl SessionId {
    /// Ids double as directory names, so only `[A-Za-z0-9_-]` is allowed.
    pub fn parse(s: &str) -> Result<Self, StoreError> {
        let ok = !s.is_empty()
            && s.len() <= 64
            && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if ok {
            Ok(SessionId(s.to_string()))
        } else {
            Err(StoreError::InvalidSessionId(s.to_string()))
        }
    }

    pub fn random() -> Self {
        SessionId(uuid::Uuid::new_v4().simple().to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Active,
    Ended,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: SessionId,
    pub status: SessionStatus,
    pub created_at: DateTime<Utc>,
}

/// One page's half-open range of raw character positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageRange {
    pub page: u32,
    pub start: usize,
    pub end: usize,
}

/// An ingested manuscript. Immutable once built.
#[derive(Debug, Clone)]
pub struct Manuscript {
    pub session_id: SessionId,
    pub source_kind: SourceKind,
    pub raw_text: String,
    pub normalized_text: String,
    pub page_map: Vec<PageRange>,
    /// Raw character span of every normalized character.
    pub norm_spans: Vec<(usize, usize)>,
    pub raw_to_norm: Vec<usize>,
    pub ingested_at: DateTime<Utc>,
    normalized_chars: Vec<char>,
    // byte offset of every raw char, plus a final entry for raw_text.len()
    raw_char_bytes: Vec<usize>,
}

impl Manuscript {
    pub fn from_pages(
        session_id: SessionId,
        source_kind: SourceKind,
        pages: Vec<String>,
        ingested_at: DateTime<Utc>,
    ) -> Self {
        let mut raw_text = String::new();
        let mut page_map = Vec::with_capacity(pages.len());
        let mut offset = 0;
        for (i, page) in pages.iter().enumerate() {
            let n = page.chars().count();
            page_map.push(PageRange {
                page: i as u32 + 1,
                start: offset,
                end: offset + n,
            });
            offset += n;
            raw_text.push_str(page);
        }
        Self::assemble(session_id, source_kind, raw_text, page_map, ingested_at)
    }

    fn assemble(
        session_id: SessionId,
        source_kind: SourceKind,
        raw_text: String,
        page_map: Vec<PageRange>,
        ingested_at: DateTime<Utc>,
    ) -> Self {
        let Normalized { text, spans } = normalize(&raw_text);
        let mut raw_char_bytes: Vec<usize> = raw_text.char_indices().map(|(b, _)| b).collect();
        raw_char_bytes.push(raw_text.len());
        let raw_len = raw_char_bytes.len() - 1;
        Manuscript {
            session_id,
            source_kind,
            raw_to_norm: raw_to_norm(&spans, raw_len),
            normalized_chars: text.chars().collect(),
            normalized_text: text,
            norm_spans: spans,
            raw_text,
            page_map,
            ingested_at,
            raw_char_bytes,
        }
    }

    /// Length of the raw text in characters.
    pub fn raw_len(&self) -> usize {
        self.raw_char_bytes.len() - 1
    }

    pub fn normalized_chars(&self) -> &[char] {
        &self.normalized_chars
    }

    pub fn norm_to_raw(&self, i: usize) -> usize {
        self.norm_spans[i].0
    }

    /// Raw character range covered by the normalized range `norm`.
    pub fn raw_range_of(&self, norm: Range<usize>) -> Range<usize> {
        if norm.is_empty() {
            let at = self.norm_spans.get(norm.start).map_or(self.raw_len(), |s| s.0);
            return at..at;
        }
        self.norm_spans[norm.start].0..self.norm_spans[norm.end - 1].1
    }

    /// Slice of the raw text by character range.
    pub fn raw_slice(&self, range: Range<usize>) -> &str {
        &self.raw_text[self.raw_char_bytes[range.start]..self.raw_char_bytes[range.end]]
    }

    /// Page containing raw character `pos`; positions past the end belong
    /// to the last page.
    pub fn page_of(&self, pos: usize) -> u32 {
        self.page_map
            .iter()
            .find(|p| p.start <= pos && pos < p.end)
            .or_else(|| self.page_map.iter().rev().find(|p| p.start < p.end))
            .map_or(1, |p| p.page)
    }

    fn to_record(&self) -> TextRecord {
        TextRecord {
            session_id: self.session_id.clone(),
            source_kind: self.source_kind,
            raw_text: self.raw_text.clone(),
            normalized_text: self.normalized_text.clone(),
            page_map: self.page_map.clone(),
            norm_to_raw: self.norm_spans.iter().map(|&(s, e)| [s, e]).collect(),
            raw_to_norm: self
                .raw_to_norm
                .iter()
                .enumerate()
                .map(|(r, &n)| [r, n])
                .collect(),
            ingested_at: self.ingested_at,
        }
    }
}

/// On-disk form of a manuscript (`text.json`).
///
/// `norm_to_raw[i]` is the `[start, end)` raw span of normalized character
/// `i`; `raw_to_norm` holds `[raw_index, normalized_index]` pairs.
#[derive(Debug, Serialize, Deserialize)]
pub struct TextRecord {
    pub session_id: SessionId,
    pub source_kind: SourceKind,
    pub raw_text: String,
    pub normalized_text: String,
    pub page_map: Vec<PageRange>,
    pub norm_to_raw: Vec<[usize; 2]>,
    pub raw_to_norm: Vec<[usize; 2]>,
    pub ingested_at: DateTime<Utc>,
}

struct Entry {
    state: SessionState,
    manuscript: Option<Arc<Manuscript>>,
}

/// Session registry plus the persistence root.
pub struct DocumentStore {
    root: PathBuf,
    sessions: RwLock<HashMap<SessionId, Entry>>,
}

impl DocumentStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(DocumentStore {
            root,
            sessions: RwLock::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_dir(&self, id: &SessionId) -> PathBuf {
        self.root.join(id.as_str())
    }

    /// Ingest under a fresh random session id.
    pub fn ingest(&self, bytes: &[u8], kind: SourceKind) -> Result<Arc<Manuscript>, StoreError> {
        self.ingest_as(SessionId::random(), bytes, kind)
    }

    pub fn ingest_as(
        &self,
        id: SessionId,
        bytes: &[u8],
        kind: SourceKind,
    ) -> Result<Arc<Manuscript>, StoreError> {
        if bytes.is_empty() {
            return Err(StoreError::EmptyInput);
        }
        let pages = extractor_for(kind).extract(bytes)?;
        let now = Utc::now();
        let manuscript = Arc::new(Manuscript::from_pages(id.clone(), kind, pages, now));

        let mut sessions = self.sessions.write().expect("session registry poisoned");
        if sessions.contains_key(&id) || self.session_dir(&id).exists() {
            return Err(StoreError::SessionExists(id));
        }
        let dir = self.session_dir(&id);
        let persisted = fs::create_dir_all(&dir)
            .and_then(|_| fs::write(dir.join(RAW_FILE), bytes))
            .map_err(StoreError::from)
            .and_then(|_| {
                let json = serde_json::to_vec(&manuscript.to_record())?;
                fs::write(dir.join(TEXT_FILE), json).map_err(StoreError::from)
            });
        if let Err(e) = persisted {
            let _ = fs::remove_dir_all(&dir);
            return Err(e);
        }
        sessions.insert(
            id.clone(),
            Entry {
                state: SessionState {
                    session_id: id,
                    status: SessionStatus::Active,
                    created_at: now,
                },
                manuscript: Some(manuscript.clone()),
            },
        );
        Ok(manuscript)
    }

    pub fn manuscript(&self, id: &SessionId) -> Result<Arc<Manuscript>, StoreError> {
        let sessions = self.sessions.read().expect("session registry poisoned");
        sessions
            .get(id)
            .and_then(|e| e.manuscript.clone())
            .ok_or_else(|| StoreError::UnknownSession(id.clone()))
    }

    /// Status of a session, including ones that have ended.
    pub fn state(&self, id: &SessionId) -> Result<SessionState, StoreError> {
        let sessions = self.sessions.read().expect("session registry poisoned");
        sessions
            .get(id)
            .map(|e| e.state.clone())
            .ok_or_else(|| StoreError::UnknownSession(id.clone()))
    }

    pub fn is_active(&self, id: &SessionId) -> bool {
        self.manuscript(id).is_ok()
    }

    /// Erase everything stored for the session. A second call for the same
    /// session fails with `UnknownSession`.
    pub fn end_session(&self, id: &SessionId) -> Result<(), StoreError> {
        let mut sessions = self.sessions.write().expect("session registry poisoned");
        let entry = match sessions.get_mut(id) {
            Some(e) if e.state.status == SessionStatus::Active => e,
            _ => return Err(StoreError::UnknownSession(id.clone())),
        };
        entry.manuscript = None;
        entry.state.status = SessionStatus::Ended;
        let dir = self.session_dir(id);
        match fs::remove_dir_all(&dir) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(e.into()),
        }
    }
}

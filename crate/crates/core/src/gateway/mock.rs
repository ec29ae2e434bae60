//! Deterministic stand-in for the model.
//!
//! Responses come from a fixture table keyed by template and criterion.
//! Without a matching fixture the mock synthesizes an answer from the
//! request bindings, so any manuscript can be run offline.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::json;

use super::{Backend, BackendKind, Completion, GatewayError, GatewayRequest};
use crate::prompt::{Placeholder, TemplateName};
use crate::store::SessionId;

/// Fixture file stem for a template and optional criterion:
/// `annotate__rigor`, `compile`, ...
pub fn fixture_key(template: TemplateName, criterion: Option<&str>) -> String {
    match criterion {
        Some(c) => format!("{}__{}", template.as_str(), slug(c)),
        None => template.as_str().to_string(),
    }
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.trim().chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            out.push(c);
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

#[derive(Debug, Default)]
pub struct MockBackend {
    fixtures: BTreeMap<String, String>,
    delay: Mutex<Duration>,
    script: Mutex<VecDeque<GatewayError>>,
    calls: AtomicU64,
    requests: Mutex<Vec<GatewayRequest>>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Load every `*.txt` file of a directory as a fixture keyed by its stem.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut mock = Self::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                mock.fixtures.insert(stem.to_string(), std::fs::read_to_string(&path)?);
            }
        }
        Ok(mock)
    }

    pub fn with_fixture(mut self, template: TemplateName, criterion: Option<&str>, text: &str) -> Self {
        self.fixtures.insert(fixture_key(template, criterion), text.to_string());
        self
    }

    pub fn with_delay(self, delay: Duration) -> Self {
        *self.delay.lock().expect("delay lock") = delay;
        self
    }

    pub fn set_delay(&self, delay: Duration) {
        *self.delay.lock().expect("delay lock") = delay;
    }

    /// Fail the next call with `error`; queued errors are consumed in order.
    pub fn push_error(&self, error: GatewayError) {
        self.script.lock().expect("script lock").push_back(error);
    }

    /// Attempts received, including failed ones.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Requests received and not yet forgotten, in arrival order.
    pub fn requests(&self) -> Vec<GatewayRequest> {
        self.requests.lock().expect("requests lock").clone()
    }

    fn lookup(&self, request: &GatewayRequest) -> Option<&String> {
        request
            .criterion
            .as_deref()
            .and_then(|c| self.fixtures.get(&fixture_key(request.template, Some(c))))
            .or_else(|| self.fixtures.get(&fixture_key(request.template, None)))
    }
}

impl Backend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn complete(&self, request: &GatewayRequest) -> Result<Completion, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.requests.lock().expect("requests lock").push(request.clone());
        let delay = *self.delay.lock().expect("delay lock");
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
        if let Some(err) = self.script.lock().expect("script lock").pop_front() {
            return Err(err);
        }
        let text = match self.lookup(request) {
            Some(t) => t.clone(),
            None => synthesize(request),
        };
        Ok(Completion {
            token_usage: Some((word_count(&request.prompt), word_count(&text))),
            text,
        })
    }

    fn forget(&self, session: &SessionId) {
        self.requests.lock().expect("requests lock").retain(|r| &r.session_id != session);
    }
}

fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

// FNV-1a, stable across runs and platforms.
fn fnv(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for b in p.bytes().chain([0xff]) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

fn binding(request: &GatewayRequest, p: Placeholder) -> &str {
    request.bindings.get(&p).map(String::as_str).unwrap_or("")
}

fn synthesize(request: &GatewayRequest) -> String {
    let criterion = request.criterion.as_deref().unwrap_or("the manuscript");
    match request.template {
        TemplateName::Annotate => synthesize_annotate(request, criterion),
        TemplateName::Factcheck => format!(
            "The excerpt \"{}\" is consistent with the rest of the manuscript; no external citation is required.",
            binding(request, Placeholder::Excerpt)
        ),
        TemplateName::Social => "The excerpt raises no ethical, privacy or fairness concern.".to_string(),
        TemplateName::Clarify => format!(
            "Regarding \"{}\": the manuscript does not settle this question, so the authors should address it.",
            binding(request, Placeholder::Question)
        ),
        TemplateName::Compile | TemplateName::ReportByCriteria | TemplateName::Viewpoints => {
            let items = count_items(binding(request, Placeholder::AnnotationsDigest));
            let what = match request.template {
                TemplateName::Viewpoints => "An alternative reading of",
                _ => "Summary of",
            };
            format!("{what} {items} annotation(s) for {criterion}.")
        }
        TemplateName::ReportBySentiment => {
            let items = count_items(binding(request, Placeholder::AnnotationsDigest));
            format!("{criterion}: {items} point(s) raised.")
        }
    }
}

fn count_items(digest: &str) -> usize {
    digest.lines().filter(|l| l.starts_with('[')).count()
}

const MIN_SENTENCE: usize = 30;
const MAX_SENTENCE: usize = 300;

fn synthesize_annotate(request: &GatewayRequest, criterion: &str) -> String {
    let n: usize = binding(request, Placeholder::NumExcerpts).parse().unwrap_or(3);
    let text = binding(request, Placeholder::ManuscriptText);
    let sentences: Vec<String> = text
        .split_inclusive(['.', '?', '!'])
        .map(|s| s.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|s| (MIN_SENTENCE..=MAX_SENTENCE).contains(&s.chars().count()) && !s.contains("[...]"))
        .collect();
    if sentences.is_empty() {
        return "I could not find any passage relevant to this criterion.".to_string();
    }
    let mut picked: Vec<usize> = Vec::new();
    let mut salt = 0u64;
    while picked.len() < n.min(sentences.len()) {
        let i = (fnv(&[criterion, &salt.to_string()]) % sentences.len() as u64) as usize;
        if !picked.contains(&i) {
            picked.push(i);
        }
        salt += 1;
    }
    picked.sort_unstable();
    let items: Vec<_> = picked
        .iter()
        .map(|&i| {
            let positive = fnv(&[criterion, &sentences[i]]).is_multiple_of(2);
            json!({
                "excerpt": sentences[i],
                "sentiment": if positive { "strength" } else { "weakness" },
                "comment": if positive {
                    format!("This passage supports the {criterion} of the work.")
                } else {
                    format!("This passage weakens the {criterion} of the work.")
                },
            })
        })
        .collect();
    serde_json::to_string_pretty(&items).expect("json")
}

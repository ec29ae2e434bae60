//! The review workflow: ingest, annotate, refine, compile, report.
//!
//! Every session has one writer lock. Gateway calls run outside it, so
//! annotate requests for different criteria can be in flight together;
//! their results are committed one at a time.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::anchor::{self, Anchor, Located, MatchKind};
use crate::config::{ConfigError, EngineConfig, SessionIdStrategy};
use crate::criteria::{default_criteria, CriteriaError, CriteriaSet, Criterion};
use crate::gateway::{CallLogEntry, Gateway, GatewayError, PromptCall};
use crate::model::{
    Annotation, AnnotationFlag, NewAnnotation, Origin, OutputKind, Recap, RelevanceFeedback, ReportSection,
    ReportStructure, Review, ReviewError, ReviewReport, Sentiment,
};
use crate::prompt::{
    digest_annotations, digest_list, parse_annotate_response, truncate_head_tail, Bindings, ParseError,
    Placeholder, TemplateError, TemplateName, TemplateSet,
};
use crate::report::{render_html, section_body};
use crate::store::{DocumentStore, Manuscript, PageRange, SessionId, SourceKind, StoreError};

pub const REVIEW_FILE: &str = "review.json";
pub const FEEDBACK_FILE: &str = "feedback.jsonl";
pub const AUDIT_FILE: &str = "audit.jsonl";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Criteria(#[from] CriteriaError),
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("clarify needs a question")]
    MissingQuestion,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("the review changed while the report was built; retry")]
    Conflict,
    #[error("cannot persist session state: {0}")]
    Persist(String),
}

impl EngineError {
    /// Stable error name for API clients.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::Store(e) => match e {
                StoreError::EmptyInput => "EmptyInput",
                StoreError::UnsupportedFormat(_) => "UnsupportedFormat",
                StoreError::UnknownSession(_) => "UnknownSession",
                StoreError::SessionExists(_) => "SessionExists",
                StoreError::InvalidSessionId(_) => "UnknownSession",
                StoreError::Io(_) | StoreError::Encoding(_) => "StorageError",
            },
            EngineError::Criteria(e) => match e {
                CriteriaError::DuplicateName(_) => "DuplicateName",
                CriteriaError::EmptyCriteria => "EmptyCriteria",
                _ => "InvalidCriteria",
            },
            EngineError::Review(e) => match e {
                ReviewError::UnknownCriterion(_) => "UnknownCriterion",
                ReviewError::UnknownAnnotation(_) => "UnknownAnnotation",
                ReviewError::EmptyExcerpt => "EmptyExcerpt",
                ReviewError::EmptyComment => "EmptyComment",
                ReviewError::EmptyAnswer => "EmptyAnswer",
                ReviewError::HumanAnchorNotExact => "HumanAnchorNotExact",
                ReviewError::NoAnnotations(_) => "NoAnnotations",
                ReviewError::EmptyReview => "EmptyReview",
                ReviewError::NoReport => "NoReport",
                ReviewError::UnknownValue { .. } => "InvalidArgument",
            },
            EngineError::Template(TemplateError::MissingBinding(_)) => "MissingBinding",
            EngineError::Template(_) => "TemplateError",
            EngineError::Gateway(e) => match e {
                GatewayError::Timeout(_) => "Timeout",
                GatewayError::AuthFailure(_) => "AuthFailure",
                GatewayError::RateLimited => "RateLimited",
                GatewayError::BackendError { .. } => "BackendError",
                GatewayError::InvalidRequest(_) => "BackendError",
            },
            EngineError::Parse(ParseError::UnparseableResponse(_)) => "UnparseableResponse",
            EngineError::Parse(ParseError::EmptyItems) => "EmptyItems",
            EngineError::Config(_) => "ConfigError",
            EngineError::MissingQuestion => "MissingQuestion",
            EngineError::InvalidArgument(_) => "InvalidArgument",
            EngineError::Conflict => "Conflict",
            EngineError::Persist(_) => "StorageError",
        }
    }

    fn unknown_session(id: &SessionId) -> Self {
        EngineError::Store(StoreError::UnknownSession(id.clone()))
    }
}

pub type Result<T, E = EngineError> = std::result::Result<T, E>;

/// A reviewer's own highlight: a raw character range or an exact quote.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum Selection {
    Range { start: usize, end: usize },
    Excerpt { excerpt: String },
}

/// What `PATCH /annotations/{id}` may change.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationPatch {
    pub sentiment: Option<Sentiment>,
    pub relevance_feedback: Option<RelevanceFeedback>,
    /// Resolve an ambiguous anchor to one of its candidates.
    pub candidate: Option<usize>,
}

/// The text view served to clients.
#[derive(Debug, Clone, Serialize)]
pub struct TextView {
    pub raw_text: String,
    pub page_map: Vec<PageRange>,
}

struct Session {
    manuscript: Arc<Manuscript>,
    criteria: CriteriaSet,
    review: Review,
    dir: PathBuf,
    ended: bool,
}

impl Session {
    fn persist(&self) -> Result<()> {
        if self.ended {
            return Ok(());
        }
        let tmp = self.dir.join(format!("{REVIEW_FILE}.tmp"));
        fs::write(&tmp, self.review.to_json())
            .and_then(|_| fs::rename(&tmp, self.dir.join(REVIEW_FILE)))
            .map_err(|e| EngineError::Persist(e.to_string()))
    }

    fn append(&self, file: &str, line: serde_json::Value) -> Result<()> {
        if self.ended {
            return Ok(());
        }
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join(file))
            .and_then(|mut f| writeln!(f, "{line}"))
            .map_err(|e| EngineError::Persist(e.to_string()))
    }

    fn criterion(&self, name: &str) -> Result<Criterion> {
        self.criteria
            .get(name)
            .cloned()
            .ok_or_else(|| ReviewError::UnknownCriterion(name.to_string()).into())
    }
}

pub struct Engine {
    config: EngineConfig,
    store: DocumentStore,
    gateway: Gateway,
    templates: TemplateSet,
    sessions: RwLock<HashMap<SessionId, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("data_root", &self.config.data_root)
            .field("gateway", &self.gateway)
            .finish()
    }
}

fn recommendations_text(c: &Criterion) -> String {
    if c.recommendations.is_empty() {
        "none".to_string()
    } else {
        c.recommendations.iter().map(|r| format!("- {r}")).collect::<Vec<_>>().join("\n")
    }
}

fn criterion_bindings(c: &Criterion) -> Bindings {
    Bindings::from([
        (Placeholder::CriterionName, c.name.clone()),
        (Placeholder::CriterionDescription, c.description.clone()),
        (Placeholder::Recommendations, recommendations_text(c)),
    ])
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        let gateway = Gateway::from_settings(config.llm.clone())?;
        Self::with_gateway(config, gateway)
    }

    pub fn with_gateway(config: EngineConfig, gateway: Gateway) -> Result<Self> {
        config.validate()?;
        let templates = match &config.prompt.template_dir {
            Some(dir) => TemplateSet::with_overrides(dir)?,
            None => TemplateSet::builtin(),
        };
        Ok(Engine {
            store: DocumentStore::open(&config.data_root)?,
            config,
            gateway,
            templates,
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn data_root(&self) -> &Path {
        self.store.root()
    }

    fn session(&self, id: &SessionId) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| EngineError::unknown_session(id))
    }

    /// Lock a session for writing; fails if it ended meanwhile.
    fn lock<'a>(&self, id: &SessionId, s: &'a Mutex<Session>) -> Result<MutexGuard<'a, Session>> {
        let guard = s.lock().expect("session lock poisoned");
        if guard.ended {
            return Err(EngineError::unknown_session(id));
        }
        Ok(guard)
    }

    fn with_session<T>(&self, id: &SessionId, f: impl FnOnce(&mut Session) -> Result<T>) -> Result<T> {
        let s = self.session(id)?;
        let mut guard = self.lock(id, &s)?;
        f(&mut guard)
    }

    fn fresh_id(&self) -> SessionId {
        match self.config.session_ids {
            SessionIdStrategy::Random => SessionId::random(),
            SessionIdStrategy::Sequential => {
                let n = self.next_id.fetch_add(1, Ordering::SeqCst);
                SessionId::parse(&format!("s{n:04}")).expect("valid id")
            }
        }
    }

    // ---- sessions ----

    pub fn create_session(&self, bytes: &[u8], kind: SourceKind) -> Result<SessionId> {
        let id = self.fresh_id();
        let manuscript = self.store.ingest_as(id.clone(), bytes, kind)?;
        let criteria = default_criteria();
        let session = Session {
            review: Review::new(id.clone(), &criteria),
            criteria,
            manuscript,
            dir: self.store.session_dir(&id),
            ended: false,
        };
        session.persist()?;
        self.sessions
            .write()
            .expect("session map poisoned")
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        tracing::info!(session = %id, "session created");
        Ok(id)
    }

    /// Erase the manuscript, the review and the call log of a session.
    pub fn end_session(&self, id: &SessionId) -> Result<()> {
        let s = self
            .sessions
            .write()
            .expect("session map poisoned")
            .remove(id)
            .ok_or_else(|| EngineError::unknown_session(id))?;
        let mut guard = s.lock().expect("session lock poisoned");
        guard.ended = true;
        self.store.end_session(id)?;
        self.gateway.purge(id);
        tracing::info!(session = %id, "session ended");
        Ok(())
    }

    pub fn is_active(&self, id: &SessionId) -> bool {
        self.session(id).is_ok()
    }

    pub fn manuscript(&self, id: &SessionId) -> Result<Arc<Manuscript>> {
        self.with_session(id, |s| Ok(s.manuscript.clone()))
    }

    pub fn text(&self, id: &SessionId) -> Result<TextView> {
        let m = self.manuscript(id)?;
        Ok(TextView {
            raw_text: m.raw_text.clone(),
            page_map: m.page_map.clone(),
        })
    }

    pub fn call_log(&self, id: &SessionId) -> Result<Vec<CallLogEntry>> {
        self.session(id)?;
        Ok(self.gateway.call_log(id))
    }

    // ---- criteria ----

    pub fn criteria(&self, id: &SessionId) -> Result<CriteriaSet> {
        self.with_session(id, |s| Ok(s.criteria.clone()))
    }

    /// Replace the criteria configuration. Returns ids of annotations that
    /// went away with removed criteria.
    pub fn set_criteria(&self, id: &SessionId, criteria: CriteriaSet) -> Result<Vec<String>> {
        self.with_session(id, |s| {
            let removed = s.review.replace_criteria(&criteria);
            s.criteria = criteria;
            s.persist()?;
            Ok(removed)
        })
    }

    // ---- annotations ----

    pub fn review(&self, id: &SessionId) -> Result<Review> {
        self.with_session(id, |s| Ok(s.review.clone()))
    }

    pub fn annotations(&self, id: &SessionId) -> Result<Vec<Annotation>> {
        self.with_session(id, |s| Ok(s.review.live_annotations().into_iter().cloned().collect()))
    }

    fn manuscript_binding(&self, m: &Manuscript) -> (String, bool) {
        truncate_head_tail(&m.raw_text, self.config.prompt.manuscript_char_budget)
    }

    /// Ask the model for evidence excerpts on one criterion and store them
    /// as anchored annotations.
    pub fn annotate_criterion(&self, id: &SessionId, criterion: &str, num_excerpts: Option<usize>) -> Result<Vec<Annotation>> {
        let prepared = self.prepare_annotate(id, criterion, num_excerpts)?;
        self.commit_annotations(id, criterion, prepared)
    }

    /// Annotate every configured criterion. Gateway calls run in parallel;
    /// results are committed in configuration order so annotation ids do
    /// not depend on response timing.
    pub fn annotate_all(&self, id: &SessionId, num_excerpts: Option<usize>) -> Result<Vec<(String, Result<Vec<Annotation>>)>> {
        let names: Vec<String> = self.criteria(id)?.iter().map(|c| c.name.clone()).collect();
        let prepared: Vec<Result<Vec<NewAnnotation>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = names
                .iter()
                .map(|name| scope.spawn(move || self.prepare_annotate(id, name, num_excerpts)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("annotate worker panicked")).collect()
        });
        Ok(names
            .into_iter()
            .zip(prepared)
            .map(|(name, p)| {
                let committed = p.and_then(|p| self.commit_annotations(id, &name, p));
                (name, committed)
            })
            .collect())
    }

    fn prepare_annotate(&self, id: &SessionId, criterion: &str, num_excerpts: Option<usize>) -> Result<Vec<NewAnnotation>> {
        let n = num_excerpts.unwrap_or(self.config.num_excerpts_default);
        if n == 0 {
            return Err(EngineError::InvalidArgument("num_excerpts must be at least 1".into()));
        }
        let (manuscript, c) = self.with_session(id, |s| Ok((s.manuscript.clone(), s.criterion(criterion)?)))?;
        let (text, truncated) = self.manuscript_binding(&manuscript);
        let mut bindings = criterion_bindings(&c);
        bindings.insert(Placeholder::NumExcerpts, n.to_string());
        bindings.insert(Placeholder::ManuscriptText, text);
        let prompt = self.templates.render(TemplateName::Annotate, &bindings)?;
        let response = self.gateway.complete(
            id,
            PromptCall {
                template: TemplateName::Annotate,
                criterion: Some(c.name.clone()),
                prompt,
                bindings,
            },
        )?;
        let parsed = parse_annotate_response(&response.text, n)?;
        for w in &parsed.warnings {
            tracing::warn!(session = %id, criterion = %c.name, "annotate response: {w}");
        }

        let params = self.config.anchor.params();
        Ok(parsed
            .items
            .into_iter()
            .map(|item| {
                let (anchor, candidates) = match anchor::locate(&manuscript, &item.excerpt, &params) {
                    Ok(located) => located.resolve(self.config.anchor.auto_pick),
                    Err(_) => (Anchor::unanchored(), Vec::new()),
                };
                let mut new = NewAnnotation::new(&c.name, &item.excerpt, anchor, item.sentiment, Origin::Llm);
                new.candidates = candidates;
                new.model_comment = item.comment;
                if truncated {
                    new.flags.insert(AnnotationFlag::ContextTruncated);
                }
                if item.sentiment_unrecognized {
                    new.flags.insert(AnnotationFlag::SentimentUnrecognized);
                }
                new
            })
            .collect())
    }

    fn commit_annotations(&self, id: &SessionId, criterion: &str, items: Vec<NewAnnotation>) -> Result<Vec<Annotation>> {
        self.with_session(id, |s| {
            s.criterion(criterion)?;
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                out.push(s.review.add_annotation(item)?.clone());
            }
            s.persist()?;
            Ok(out)
        })
    }

    /// A reviewer-made annotation on text they selected.
    pub fn add_human_annotation(
        &self,
        id: &SessionId,
        criterion: &str,
        selection: Selection,
        sentiment: Sentiment,
        comment: Option<&str>,
    ) -> Result<Annotation> {
        self.with_session(id, |s| {
            s.criterion(criterion)?;
            let m = &s.manuscript;
            let (excerpt, anchor) = match selection {
                Selection::Range { start, end } => {
                    if start >= end || end > m.raw_len() {
                        return Err(EngineError::InvalidArgument(format!(
                            "range {start}..{end} is outside the manuscript (0..{})",
                            m.raw_len()
                        )));
                    }
                    (m.raw_slice(start..end).to_string(), Anchor::exact(start..end, m.page_of(start)))
                }
                Selection::Excerpt { excerpt } => {
                    let located = anchor::locate(m, &excerpt, &self.config.anchor.params())
                        .map_err(|_| ReviewError::EmptyExcerpt)?;
                    match located {
                        Located::Anchored(a) if a.match_kind == MatchKind::Exact => (excerpt, a),
                        _ => return Err(ReviewError::HumanAnchorNotExact.into()),
                    }
                }
            };
            if let Some(c) = comment {
                if c.trim().is_empty() {
                    return Err(ReviewError::EmptyComment.into());
                }
            }
            let aid = s
                .review
                .add_annotation(NewAnnotation::new(criterion, &excerpt, anchor, sentiment, Origin::Human))?
                .id
                .clone();
            if let Some(c) = comment {
                s.review.add_comment(&aid, c)?;
            }
            s.persist()?;
            Ok(s.review.annotation(&aid)?.clone())
        })
    }

    pub fn update_sentiment(&self, id: &SessionId, aid: &str, sentiment: Sentiment) -> Result<Annotation> {
        self.patch_annotation(
            id,
            aid,
            AnnotationPatch {
                sentiment: Some(sentiment),
                ..Default::default()
            },
        )
    }

    pub fn set_relevance_feedback(&self, id: &SessionId, aid: &str, verdict: RelevanceFeedback) -> Result<Annotation> {
        self.patch_annotation(
            id,
            aid,
            AnnotationPatch {
                relevance_feedback: Some(verdict),
                ..Default::default()
            },
        )
    }

    pub fn patch_annotation(&self, id: &SessionId, aid: &str, patch: AnnotationPatch) -> Result<Annotation> {
        self.with_session(id, |s| {
            s.review.annotation(aid)?;
            if let Some(i) = patch.candidate {
                s.review.choose_candidate(aid, i)?;
            }
            if let Some(sentiment) = patch.sentiment {
                s.review.update_sentiment(aid, sentiment)?;
            }
            if let Some(verdict) = patch.relevance_feedback {
                let a = s.review.set_relevance_feedback(aid, verdict)?.clone();
                s.append(
                    FEEDBACK_FILE,
                    json!({
                        "at": Utc::now(),
                        "annotation_id": a.id,
                        "criterion": a.criterion_name,
                        "origin": a.origin,
                        "verdict": verdict,
                    }),
                )?;
            }
            s.persist()?;
            Ok(s.review.annotation(aid)?.clone())
        })
    }

    pub fn add_comment(&self, id: &SessionId, aid: &str, comment: &str) -> Result<Annotation> {
        self.with_session(id, |s| {
            let a = s.review.add_comment(aid, comment)?.clone();
            s.persist()?;
            Ok(a)
        })
    }

    pub fn remove_annotation(&self, id: &SessionId, aid: &str) -> Result<()> {
        self.with_session(id, |s| {
            s.review.remove_annotation(aid)?;
            s.persist()
        })
    }

    /// Fact-check, social judgment or clarification on one annotation.
    pub fn annotation_followup(&self, id: &SessionId, aid: &str, kind: OutputKind, question: Option<&str>) -> Result<String> {
        let question = question.map(str::trim).filter(|q| !q.is_empty());
        if kind == OutputKind::Clarify && question.is_none() {
            return Err(EngineError::MissingQuestion);
        }
        let (manuscript, annotation, criterion) = self.with_session(id, |s| {
            let a = s.review.annotation(aid)?.clone();
            let c = s.criterion(&a.criterion_name)?;
            Ok((s.manuscript.clone(), a, c))
        })?;
        let mut bindings = criterion_bindings(&criterion);
        bindings.insert(Placeholder::Excerpt, annotation.excerpt.clone());
        bindings.insert(Placeholder::ManuscriptText, self.manuscript_binding(&manuscript).0);
        if let Some(q) = question {
            bindings.insert(Placeholder::Question, q.to_string());
        }
        let template = TemplateName::from(kind);
        let prompt = self.templates.render(template, &bindings)?;
        let response = self.gateway.complete(
            id,
            PromptCall {
                template,
                criterion: Some(criterion.name),
                prompt,
                bindings,
            },
        )?;
        Ok(response.text)
    }

    pub fn save_output(&self, id: &SessionId, aid: &str, kind: OutputKind, question: Option<&str>, answer: &str) -> Result<Annotation> {
        self.with_session(id, |s| {
            let a = s.review.save_output(aid, kind, question, answer)?.clone();
            s.persist()?;
            Ok(a)
        })
    }

    // ---- criterion reviews ----

    pub fn compile_criterion(&self, id: &SessionId, criterion: &str) -> Result<String> {
        self.summarize(id, criterion, TemplateName::Compile)
    }

    pub fn viewpoints_criterion(&self, id: &SessionId, criterion: &str) -> Result<String> {
        self.summarize(id, criterion, TemplateName::Viewpoints)
    }

    fn summarize(&self, id: &SessionId, criterion: &str, template: TemplateName) -> Result<String> {
        let (c, digest) = self.with_session(id, |s| {
            let c = s.criterion(criterion)?;
            let cr = s.review.criterion_review(criterion)?;
            let digest = digest_annotations(cr).map_err(|e| ReviewError::NoAnnotations(e.0))?;
            Ok((c, digest))
        })?;
        let text = self.summary_call(id, &c, digest, template)?;
        self.with_session(id, |s| {
            let previous = match template {
                TemplateName::Viewpoints => s.review.set_viewpoints(criterion, text.clone())?,
                _ => s.review.set_compilation(criterion, text.clone())?,
            };
            if let Some(previous) = previous {
                s.append(
                    AUDIT_FILE,
                    json!({"at": Utc::now(), "event": format!("{template}_replaced"), "criterion": criterion, "previous": previous}),
                )?;
            }
            s.persist()?;
            Ok(text)
        })
    }

    fn summary_call(&self, id: &SessionId, c: &Criterion, digest: String, template: TemplateName) -> Result<String> {
        let mut bindings = criterion_bindings(c);
        bindings.insert(Placeholder::AnnotationsDigest, digest);
        let prompt = self.templates.render(template, &bindings)?;
        let response = self.gateway.complete(
            id,
            PromptCall {
                template,
                criterion: Some(c.name.clone()),
                prompt,
                bindings,
            },
        )?;
        Ok(response.text)
    }

    /// Local rendering of a criterion's material. Never calls the model.
    pub fn recap(&self, id: &SessionId, criterion: &str) -> Result<Recap> {
        self.with_session(id, |s| Ok(s.review.recap(criterion)?))
    }

    // ---- reports ----

    pub fn build_report(&self, id: &SessionId, structure: ReportStructure) -> Result<ReviewReport> {
        let snapshot = self.review(id)?;
        if snapshot.live_annotations().is_empty() {
            return Err(ReviewError::EmptyReview.into());
        }
        let mut generated: Vec<(String, String)> = Vec::new();
        let mut sections = Vec::new();
        match structure {
            ReportStructure::ByCriteria => {
                for cr in &snapshot.criterion_reviews {
                    let live: Vec<&Annotation> = cr.live().collect();
                    if live.is_empty() && cr.compilation.is_none() {
                        continue;
                    }
                    let prose = match &cr.compilation {
                        Some(c) => c.clone(),
                        None => {
                            let digest = digest_list(&live, false);
                            let text = self.summary_call(id, &cr.criterion, digest, TemplateName::ReportByCriteria)?;
                            generated.push((cr.criterion.name.clone(), text.clone()));
                            text
                        }
                    };
                    sections.push(ReportSection {
                        heading: cr.criterion.name.clone(),
                        body: section_body(&prose, &live),
                        cited_annotation_ids: live.iter().map(|a| a.id.clone()).collect(),
                    });
                }
            }
            ReportStructure::BySentiment => {
                let partition = snapshot.partition_by_sentiment();
                for (heading, group) in partition.groups() {
                    let prose = if group.is_empty() {
                        format!("No {} recorded.", heading.to_lowercase())
                    } else {
                        let mut bindings = Bindings::from([(Placeholder::AnnotationsDigest, digest_list(group, true))]);
                        bindings.insert(Placeholder::CriterionName, heading.to_string());
                        let prompt = self.templates.render(TemplateName::ReportBySentiment, &bindings)?;
                        self.gateway
                            .complete(
                                id,
                                PromptCall {
                                    template: TemplateName::ReportBySentiment,
                                    criterion: Some(heading.to_string()),
                                    prompt,
                                    bindings,
                                },
                            )?
                            .text
                    };
                    sections.push(ReportSection {
                        heading: heading.to_string(),
                        body: section_body(&prose, group),
                        cited_annotation_ids: group.iter().map(|a| a.id.clone()).collect(),
                    });
                }
            }
        }
        let report = ReviewReport::new(structure, sections);

        self.with_session(id, |s| {
            let known: Vec<&str> = s.review.all_annotations().iter().map(|a| a.id.as_str()).collect();
            let consistent = report
                .sections
                .iter()
                .flat_map(|sec| &sec.cited_annotation_ids)
                .all(|cid| known.contains(&cid.as_str()));
            if !consistent {
                return Err(EngineError::Conflict);
            }
            for (criterion, text) in generated {
                if s.review.criterion_review(&criterion).is_ok_and(|cr| cr.compilation.is_none()) {
                    let _ = s.review.set_compilation(&criterion, text);
                }
            }
            s.review.report = Some(report.clone());
            s.persist()?;
            Ok(report)
        })
    }

    pub fn report(&self, id: &SessionId) -> Result<ReviewReport> {
        self.with_session(id, |s| Ok(s.review.report()?.clone()))
    }

    pub fn export_report_html(&self, id: &SessionId) -> Result<String> {
        self.with_session(id, |s| Ok(render_html(&s.review, s.review.report()?)))
    }
}

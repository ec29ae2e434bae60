//! The review data model: a `Review` holds one `CriterionReview` per
//! configured criterion, and each of those accumulates `Annotation`s plus
//! the `compilation` and `viewpoints` summaries produced from them.
//!
//! Annotations are never physically removed while their criterion exists;
//! deletion leaves a tombstone so report citations keep resolving.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor::{Anchor, MatchKind};
use crate::criteria::{CriteriaSet, Criterion};
use crate::store::SessionId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReviewError {
    #[error("unknown criterion `{0}`")]
    UnknownCriterion(String),
    #[error("unknown annotation `{0}`")]
    UnknownAnnotation(String),
    #[error("excerpt is empty")]
    EmptyExcerpt,
    #[error("comment is empty")]
    EmptyComment,
    #[error("answer is empty")]
    EmptyAnswer,
    #[error("human annotations must anchor exactly on the selected text")]
    HumanAnchorNotExact,
    #[error("criterion `{0}` has no annotations yet")]
    NoAnnotations(String),
    #[error("the review has no annotations")]
    EmptyReview,
    #[error("no report has been built")]
    NoReport,
    #[error("unknown {what} `{value}`")]
    UnknownValue { what: &'static str, value: String },
}

macro_rules! lowercase_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub fn as_str(&self) -> &'static str {
                match self { $(Self::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = ReviewError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($text => Ok(Self::$variant),)+
                    other => Err(ReviewError::UnknownValue {
                        what: stringify!($name),
                        value: other.to_string(),
                    }),
                }
            }
        }
    };
}

lowercase_enum!(Sentiment {
    Strength => "strength",
    Weakness => "weakness",
    Unset => "unset",
});

lowercase_enum!(Origin {
    Llm => "llm",
    Human => "human",
});

lowercase_enum!(
    /// Follow-up questions that can be asked about an annotation.
    OutputKind {
        Factcheck => "factcheck",
        Social => "social",
        Clarify => "clarify",
    }
);

lowercase_enum!(RelevanceFeedback {
    Relevant => "relevant",
    Irrelevant => "irrelevant",
    Unset => "unset",
});

lowercase_enum!(
    /// Markers shown alongside an annotation.
    AnnotationFlag {
        Unanchored => "unanchored",
        Ambiguous => "ambiguous",
        ContextTruncated => "context_truncated",
        SentimentUnrecognized => "sentiment_unrecognized",
        Deemphasized => "deemphasized",
    }
);

lowercase_enum!(ReportStructure {
    ByCriteria => "by_criteria",
    BySentiment => "by_sentiment",
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedOutput {
    pub kind: OutputKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    pub answer: String,
    pub saved_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub seq: u64,
    pub criterion_name: String,
    pub excerpt: String,
    pub anchor: Anchor,
    /// Unresolved alternatives when the excerpt matched several places.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<Anchor>,
    /// The model's own justification, kept apart from reviewer comments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_comment: Option<String>,
    pub comments: Vec<String>,
    pub sentiment: Sentiment,
    pub origin: Origin,
    pub saved_outputs: Vec<SavedOutput>,
    pub relevance_feedback: RelevanceFeedback,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub flags: BTreeSet<AnnotationFlag>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub deleted: bool,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl Annotation {
    pub fn is_live(&self) -> bool {
        !self.deleted
    }

    fn touch(&mut self) {
        self.updated_at = Utc::now();
    }
}

/// Input for [`Review::add_annotation`].
#[derive(Debug, Clone)]
pub struct NewAnnotation {
    pub criterion_name: String,
    pub excerpt: String,
    pub anchor: Anchor,
    pub candidates: Vec<Anchor>,
    pub model_comment: Option<String>,
    pub sentiment: Sentiment,
    pub origin: Origin,
    pub flags: BTreeSet<AnnotationFlag>,
}

impl NewAnnotation {
    pub fn new(criterion_name: &str, excerpt: &str, anchor: Anchor, sentiment: Sentiment, origin: Origin) -> Self {
        NewAnnotation {
            criterion_name: criterion_name.to_string(),
            excerpt: excerpt.to_string(),
            anchor,
            candidates: Vec::new(),
            model_comment: None,
            sentiment,
            origin,
            flags: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReview {
    pub criterion: Criterion,
    pub annotations: Vec<Annotation>,
    pub compilation: Option<String>,
    pub viewpoints: Option<String>,
}

impl CriterionReview {
    fn new(criterion: Criterion) -> Self {
        CriterionReview {
            criterion,
            annotations: Vec::new(),
            compilation: None,
            viewpoints: None,
        }
    }

    pub fn live(&self) -> impl Iterator<Item = &Annotation> {
        self.annotations.iter().filter(|a| a.is_live())
    }

    pub fn has_annotations(&self) -> bool {
        self.live().next().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSection {
    pub heading: String,
    pub body: String,
    pub cited_annotation_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewReport {
    pub structure: ReportStructure,
    pub sections: Vec<ReportSection>,
    pub generated_at: DateTime<Utc>,
    pub editable_body: String,
}

impl ReviewReport {
    pub fn new(structure: ReportStructure, sections: Vec<ReportSection>) -> Self {
        let editable_body = sections
            .iter()
            .map(|s| format!("## {}\n\n{}\n", s.heading, s.body.trim_end()))
            .collect::<Vec<_>>()
            .join("\n");
        ReviewReport {
            structure,
            sections,
            generated_at: Utc::now(),
            editable_body,
        }
    }
}

pub const STRENGTHS: &str = "Strengths";
pub const WEAKNESSES: &str = "Weaknesses";
pub const UNCLASSIFIED: &str = "Unclassified";

/// Live annotations grouped by sentiment, each group in creation order.
#[derive(Debug, Default)]
pub struct SentimentPartition<'a> {
    pub strengths: Vec<&'a Annotation>,
    pub weaknesses: Vec<&'a Annotation>,
    pub unclassified: Vec<&'a Annotation>,
}

impl<'a> SentimentPartition<'a> {
    /// Sections in report order; `Unclassified` only when non-empty.
    pub fn groups(&self) -> Vec<(&'static str, &[&'a Annotation])> {
        let mut out = vec![
            (STRENGTHS, self.strengths.as_slice()),
            (WEAKNESSES, self.weaknesses.as_slice()),
        ];
        if !self.unclassified.is_empty() {
            out.push((UNCLASSIFIED, self.unclassified.as_slice()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Review {
    pub session_id: SessionId,
    pub criterion_reviews: Vec<CriterionReview>,
    pub report: Option<ReviewReport>,
    next_seq: u64,
}

impl Review {
    pub fn new(session_id: SessionId, criteria: &CriteriaSet) -> Self {
        Review {
            session_id,
            criterion_reviews: criteria.iter().cloned().map(CriterionReview::new).collect(),
            report: None,
            next_seq: 1,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("review serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn criteria(&self) -> impl Iterator<Item = &Criterion> {
        self.criterion_reviews.iter().map(|cr| &cr.criterion)
    }

    pub fn criterion_review(&self, name: &str) -> Result<&CriterionReview, ReviewError> {
        self.criterion_reviews
            .iter()
            .find(|cr| cr.criterion.name == name)
            .ok_or_else(|| ReviewError::UnknownCriterion(name.to_string()))
    }

    pub fn criterion_review_mut(&mut self, name: &str) -> Result<&mut CriterionReview, ReviewError> {
        self.criterion_reviews
            .iter_mut()
            .find(|cr| cr.criterion.name == name)
            .ok_or_else(|| ReviewError::UnknownCriterion(name.to_string()))
    }

    /// Every annotation including tombstones, in creation order.
    pub fn all_annotations(&self) -> Vec<&Annotation> {
        let mut all: Vec<&Annotation> =
            self.criterion_reviews.iter().flat_map(|cr| cr.annotations.iter()).collect();
        all.sort_by_key(|a| a.seq);
        all
    }

    pub fn live_annotations(&self) -> Vec<&Annotation> {
        self.all_annotations().into_iter().filter(|a| a.is_live()).collect()
    }

    pub fn annotation(&self, id: &str) -> Result<&Annotation, ReviewError> {
        self.criterion_reviews
            .iter()
            .flat_map(|cr| cr.annotations.iter())
            .find(|a| a.id == id && a.is_live())
            .ok_or_else(|| ReviewError::UnknownAnnotation(id.to_string()))
    }

    fn annotation_mut(&mut self, id: &str) -> Result<&mut Annotation, ReviewError> {
        self.criterion_reviews
            .iter_mut()
            .flat_map(|cr| cr.annotations.iter_mut())
            .find(|a| a.id == id && a.is_live())
            .ok_or_else(|| ReviewError::UnknownAnnotation(id.to_string()))
    }

    pub fn add_annotation(&mut self, new: NewAnnotation) -> Result<&Annotation, ReviewError> {
        if new.excerpt.trim().is_empty() {
            return Err(ReviewError::EmptyExcerpt);
        }
        if new.origin == Origin::Human && new.anchor.match_kind != MatchKind::Exact {
            return Err(ReviewError::HumanAnchorNotExact);
        }
        self.criterion_review(&new.criterion_name)?;
        let seq = self.next_seq;
        self.next_seq += 1;
        let cr = self.criterion_review_mut(&new.criterion_name)?;
        let now = Utc::now();
        let mut flags = new.flags;
        if !new.anchor.is_anchored() {
            flags.insert(AnnotationFlag::Unanchored);
        }
        if !new.candidates.is_empty() {
            flags.insert(AnnotationFlag::Ambiguous);
        }
        cr.annotations.push(Annotation {
            id: format!("a{seq}"),
            seq,
            criterion_name: new.criterion_name,
            excerpt: new.excerpt,
            anchor: new.anchor,
            candidates: new.candidates,
            model_comment: new.model_comment,
            comments: Vec::new(),
            sentiment: new.sentiment,
            origin: new.origin,
            saved_outputs: Vec::new(),
            relevance_feedback: RelevanceFeedback::Unset,
            flags,
            deleted: false,
            created_at: now,
            updated_at: now,
        });
        Ok(cr.annotations.last().expect("just pushed"))
    }

    pub fn update_sentiment(&mut self, id: &str, sentiment: Sentiment) -> Result<&Annotation, ReviewError> {
        let a = self.annotation_mut(id)?;
        a.sentiment = sentiment;
        a.flags.remove(&AnnotationFlag::SentimentUnrecognized);
        a.touch();
        Ok(a)
    }

    pub fn add_comment(&mut self, id: &str, comment: &str) -> Result<&Annotation, ReviewError> {
        if comment.trim().is_empty() {
            return Err(ReviewError::EmptyComment);
        }
        let a = self.annotation_mut(id)?;
        a.comments.push(comment.to_string());
        a.touch();
        Ok(a)
    }

    pub fn save_output(
        &mut self,
        id: &str,
        kind: OutputKind,
        question: Option<&str>,
        answer: &str,
    ) -> Result<&Annotation, ReviewError> {
        if answer.trim().is_empty() {
            return Err(ReviewError::EmptyAnswer);
        }
        let a = self.annotation_mut(id)?;
        a.saved_outputs.push(SavedOutput {
            kind,
            question: question.filter(|q| !q.trim().is_empty()).map(str::to_string),
            answer: answer.to_string(),
            saved_at: Utc::now(),
        });
        a.touch();
        Ok(a)
    }

    pub fn set_relevance_feedback(
        &mut self,
        id: &str,
        verdict: RelevanceFeedback,
    ) -> Result<&Annotation, ReviewError> {
        let a = self.annotation_mut(id)?;
        a.relevance_feedback = verdict;
        if verdict == RelevanceFeedback::Irrelevant {
            a.flags.insert(AnnotationFlag::Deemphasized);
        } else {
            a.flags.remove(&AnnotationFlag::Deemphasized);
        }
        a.touch();
        Ok(a)
    }

    /// Pick one of the stored alternatives of an ambiguous annotation.
    pub fn choose_candidate(&mut self, id: &str, index: usize) -> Result<&Annotation, ReviewError> {
        let a = self.annotation_mut(id)?;
        if index >= a.candidates.len() {
            return Err(ReviewError::UnknownValue {
                what: "candidate",
                value: index.to_string(),
            });
        }
        a.anchor = a.candidates.swap_remove(index);
        a.candidates.clear();
        a.flags.remove(&AnnotationFlag::Ambiguous);
        a.flags.remove(&AnnotationFlag::Unanchored);
        a.touch();
        Ok(a)
    }

    /// Soft delete.
    pub fn remove_annotation(&mut self, id: &str) -> Result<(), ReviewError> {
        let a = self.annotation_mut(id)?;
        a.deleted = true;
        a.touch();
        Ok(())
    }

    pub fn set_compilation(&mut self, criterion: &str, text: String) -> Result<Option<String>, ReviewError> {
        let cr = self.criterion_review_mut(criterion)?;
        if !cr.has_annotations() {
            return Err(ReviewError::NoAnnotations(criterion.to_string()));
        }
        Ok(cr.compilation.replace(text))
    }

    pub fn set_viewpoints(&mut self, criterion: &str, text: String) -> Result<Option<String>, ReviewError> {
        let cr = self.criterion_review_mut(criterion)?;
        if !cr.has_annotations() {
            return Err(ReviewError::NoAnnotations(criterion.to_string()));
        }
        Ok(cr.viewpoints.replace(text))
    }

    /// Swap in a new criteria configuration. Criteria that disappear take
    /// their `CriterionReview` and annotations with them; criteria that
    /// stay keep theirs with updated metadata. A report citing a removed
    /// annotation is dropped. Returns the ids of removed annotations.
    pub fn replace_criteria(&mut self, criteria: &CriteriaSet) -> Vec<String> {
        let mut old = std::mem::take(&mut self.criterion_reviews);
        let mut removed = Vec::new();
        for c in criteria.iter() {
            let cr = match old.iter().position(|cr| cr.criterion.name == c.name) {
                Some(i) => {
                    let mut cr = old.remove(i);
                    cr.criterion = c.clone();
                    cr
                }
                None => CriterionReview::new(c.clone()),
            };
            self.criterion_reviews.push(cr);
        }
        for cr in old {
            removed.extend(cr.annotations.into_iter().map(|a| a.id));
        }
        let stale = self.report.as_ref().is_some_and(|r| {
            r.sections
                .iter()
                .flat_map(|s| &s.cited_annotation_ids)
                .any(|id| removed.contains(id))
        });
        if stale {
            self.report = None;
        }
        removed
    }

    pub fn partition_by_sentiment(&self) -> SentimentPartition<'_> {
        let mut p = SentimentPartition::default();
        for a in self.live_annotations() {
            match a.sentiment {
                Sentiment::Strength => p.strengths.push(a),
                Sentiment::Weakness => p.weaknesses.push(a),
                Sentiment::Unset => p.unclassified.push(a),
            }
        }
        p
    }

    /// LLM-free rendering of what has been gathered for one criterion.
    pub fn recap(&self, criterion: &str) -> Result<Recap, ReviewError> {
        let cr = self.criterion_review(criterion)?;
        Ok(Recap {
            criterion: cr.criterion.name.clone(),
            items: cr
                .live()
                .map(|a| RecapItem {
                    annotation_id: a.id.clone(),
                    excerpt: a.excerpt.clone(),
                    page: a.anchor.page,
                    sentiment: a.sentiment,
                    origin: a.origin,
                    comments: a.comments.clone(),
                    saved_outputs: a.saved_outputs.clone(),
                })
                .collect(),
            compilation: cr.compilation.clone(),
            viewpoints: cr.viewpoints.clone(),
        })
    }

    pub fn report(&self) -> Result<&ReviewReport, ReviewError> {
        self.report.as_ref().ok_or(ReviewError::NoReport)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecapItem {
    pub annotation_id: String,
    pub excerpt: String,
    pub page: Option<u32>,
    pub sentiment: Sentiment,
    pub origin: Origin,
    pub comments: Vec<String>,
    pub saved_outputs: Vec<SavedOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recap {
    pub criterion: String,
    pub items: Vec<RecapItem>,
    pub compilation: Option<String>,
    pub viewpoints: Option<String>,
}

pub const NO_ANNOTATIONS_YET: &str = "No annotations yet.";

impl Recap {
    pub fn render(&self) -> String {
        let mut out = format!("# {}\n\n", self.criterion);
        if self.items.is_empty() {
            out.push_str(NO_ANNOTATIONS_YET);
            out.push('\n');
        }
        for (i, item) in self.items.iter().enumerate() {
            let page = item.page.map(|p| format!(", p. {p}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{}. [{}{page}] ({}, {}) \"{}\"",
                i + 1,
                item.annotation_id,
                item.sentiment,
                item.origin,
                item.excerpt
            );
            for c in &item.comments {
                let _ = writeln!(out, "   - comment: {c}");
            }
            for s in &item.saved_outputs {
                match &s.question {
                    Some(q) => {
                        let _ = writeln!(out, "   - {} ({q}): {}", s.kind, s.answer);
                    }
                    None => {
                        let _ = writeln!(out, "   - {}: {}", s.kind, s.answer);
                    }
                }
            }
        }
        if let Some(c) = &self.compilation {
            let _ = write!(out, "\nCompilation:\n{c}\n");
        }
        if let Some(v) = &self.viewpoints {
            let _ = write!(out, "\nViewpoints:\n{v}\n");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criteria::default_criteria;
    use proptest::prelude::*;

    fn review() -> Review {
        Review::new(SessionId::parse("s1").unwrap(), &default_criteria())
    }

    fn add(r: &mut Review, criterion: &str, excerpt: &str, sentiment: Sentiment) -> String {
        r.add_annotation(NewAnnotation::new(
            criterion,
            excerpt,
            Anchor::exact(0..excerpt.len(), 1),
            sentiment,
            Origin::Llm,
        ))
        .unwrap()
        .id
        .clone()
    }

    #[test]
    fn annotation_lands_under_its_criterion() {
        let mut r = review();
        let id = add(&mut r, "Originality", "a novel interaction model", Sentiment::Strength);
        let cr = r.criterion_review("Originality").unwrap();
        assert_eq!(cr.annotations.len(), 1);
        assert_eq!(cr.annotations[0].id, id);
        assert_eq!(cr.annotations[0].sentiment, Sentiment::Strength);
    }

    #[test]
    fn unknown_criterion_and_empty_excerpt() {
        let mut r = review();
        let err = r
            .add_annotation(NewAnnotation::new("Foo", "x", Anchor::exact(0..1, 1), Sentiment::Unset, Origin::Llm))
            .unwrap_err();
        assert_eq!(err, ReviewError::UnknownCriterion("Foo".into()));
        let err = r
            .add_annotation(NewAnnotation::new("Rigor", "  ", Anchor::exact(0..1, 1), Sentiment::Unset, Origin::Llm))
            .unwrap_err();
        assert_eq!(err, ReviewError::EmptyExcerpt);
    }

    #[test]
    fn identical_excerpts_get_distinct_ids() {
        let mut r = review();
        let a = add(&mut r, "Rigor", "same text", Sentiment::Unset);
        let b = add(&mut r, "Rigor", "same text", Sentiment::Unset);
        assert_ne!(a, b);
    }

    #[test]
    fn human_annotations_must_be_exact() {
        let mut r = review();
        let err = r
            .add_annotation(NewAnnotation::new("Rigor", "x", Anchor::unanchored(), Sentiment::Unset, Origin::Human))
            .unwrap_err();
        assert_eq!(err, ReviewError::HumanAnchorNotExact);
    }

    #[test]
    fn sentiment_updates() {
        let mut r = review();
        let id = add(&mut r, "Rigor", "nine subjects", Sentiment::Strength);
        r.update_sentiment(&id, Sentiment::Weakness).unwrap();
        assert_eq!(r.annotation(&id).unwrap().sentiment, Sentiment::Weakness);
        let id2 = add(&mut r, "Rigor", "other", Sentiment::Unset);
        r.update_sentiment(&id2, Sentiment::Strength).unwrap();
        assert_eq!(r.annotation(&id2).unwrap().sentiment, Sentiment::Strength);
        assert_eq!(
            r.update_sentiment("a99", Sentiment::Strength).unwrap_err(),
            ReviewError::UnknownAnnotation("a99".into())
        );
    }

    #[test]
    fn comments_append_in_order() {
        let mut r = review();
        let id = add(&mut r, "Rigor", "nine subjects", Sentiment::Weakness);
        r.add_comment(&id, "needs a citation").unwrap();
        r.add_comment(&id, "and a power analysis").unwrap();
        assert_eq!(r.annotation(&id).unwrap().comments, ["needs a citation", "and a power analysis"]);
        assert_eq!(r.add_comment(&id, " ").unwrap_err(), ReviewError::EmptyComment);
    }

    #[test]
    fn saved_outputs() {
        let mut r = review();
        let id = add(&mut r, "Rigor", "nine participants", Sentiment::Weakness);
        r.save_output(&id, OutputKind::Clarify, Some("9 subjects enough for TAM evaluation?"), "Probably not.")
            .unwrap();
        r.save_output(&id, OutputKind::Factcheck, None, "Supported by section 5.").unwrap();
        let saved = &r.annotation(&id).unwrap().saved_outputs;
        assert_eq!(saved[0].question.as_deref(), Some("9 subjects enough for TAM evaluation?"));
        assert_eq!(saved[1].question, None);
        assert!("summary".parse::<OutputKind>().is_err());
        assert_eq!(
            r.save_output("nope", OutputKind::Social, None, "x").unwrap_err(),
            ReviewError::UnknownAnnotation("nope".into())
        );
    }

    #[test]
    fn recap_lists_everything() {
        let mut r = review();
        let empty = r.recap("Rigor").unwrap();
        assert!(empty.items.is_empty());
        assert!(empty.render().contains(NO_ANNOTATIONS_YET));

        let a = add(&mut r, "Rigor", "first excerpt", Sentiment::Strength);
        add(&mut r, "Rigor", "second excerpt", Sentiment::Weakness);
        r.save_output(&a, OutputKind::Clarify, Some("why?"), "because").unwrap();
        let recap = r.recap("Rigor").unwrap();
        let text = recap.render();
        assert_eq!(recap.items.len(), 2);
        for needle in ["first excerpt", "second excerpt", "clarify (why?): because"] {
            assert!(text.contains(needle), "{needle} missing from {text}");
        }
        assert_eq!(r.recap("Foo").unwrap_err(), ReviewError::UnknownCriterion("Foo".into()));
    }

    #[test]
    fn tombstones_hide_but_keep_annotations() {
        let mut r = review();
        let id = add(&mut r, "Rigor", "gone soon", Sentiment::Strength);
        r.remove_annotation(&id).unwrap();
        assert!(r.annotation(&id).is_err());
        assert_eq!(r.all_annotations().len(), 1);
        assert!(r.live_annotations().is_empty());
        assert!(r.set_compilation("Rigor", "x".into()).is_err());
    }

    #[test]
    fn compilation_requires_annotations() {
        let mut r = review();
        assert_eq!(
            r.set_compilation("Rigor", "x".into()).unwrap_err(),
            ReviewError::NoAnnotations("Rigor".into())
        );
        add(&mut r, "Rigor", "e", Sentiment::Unset);
        assert_eq!(r.set_compilation("Rigor", "one".into()).unwrap(), None);
        assert_eq!(r.set_compilation("Rigor", "two".into()).unwrap(), Some("one".into()));
    }

    #[test]
    fn criteria_cascade_removes_only_dropped_criteria() {
        let mut r = review();
        let keep = add(&mut r, "Rigor", "kept", Sentiment::Strength);
        let gone = add(&mut r, "Relevance", "dropped", Sentiment::Weakness);
        r.report = Some(ReviewReport::new(
            ReportStructure::ByCriteria,
            vec![ReportSection {
                heading: "Relevance".into(),
                body: String::new(),
                cited_annotation_ids: vec![gone.clone()],
            }],
        ));
        let set = CriteriaSet::new(
            default_criteria().iter().filter(|c| c.name != "Relevance").cloned().collect(),
        )
        .unwrap();
        let removed = r.replace_criteria(&set);
        assert_eq!(removed, vec![gone]);
        assert_eq!(r.criterion_reviews.len(), 3);
        assert!(r.annotation(&keep).is_ok());
        assert!(r.report.is_none());
    }

    #[test]
    fn feedback_sets_deemphasis() {
        let mut r = review();
        let id = add(&mut r, "Rigor", "x", Sentiment::Unset);
        r.set_relevance_feedback(&id, RelevanceFeedback::Irrelevant).unwrap();
        assert!(r.annotation(&id).unwrap().flags.contains(&AnnotationFlag::Deemphasized));
        r.set_relevance_feedback(&id, RelevanceFeedback::Relevant).unwrap();
        let a = r.annotation(&id).unwrap();
        assert_eq!(a.relevance_feedback, RelevanceFeedback::Relevant);
        assert!(!a.flags.contains(&AnnotationFlag::Deemphasized));
    }

    #[test]
    fn enums_serialize_lowercase() {
        assert_eq!(serde_json::to_string(&Sentiment::Strength).unwrap(), "\"strength\"");
        assert_eq!(serde_json::to_string(&ReportStructure::BySentiment).unwrap(), "\"by_sentiment\"");
        assert_eq!(serde_json::to_string(&AnnotationFlag::ContextTruncated).unwrap(), "\"context_truncated\"");
        assert_eq!("By_Criteria".parse::<ReportStructure>().unwrap(), ReportStructure::ByCriteria);
    }

    fn sentiment() -> impl Strategy<Value = Sentiment> {
        prop::sample::select(vec![Sentiment::Strength, Sentiment::Weakness, Sentiment::Unset])
    }

    proptest! {
        #[test]
        fn persistence_round_trip(items in prop::collection::vec((0usize..4, sentiment(), "[a-z ]{1,20}", any::<bool>()), 0..12)) {
            let mut r = review();
            let names: Vec<String> = r.criteria().map(|c| c.name.clone()).collect();
            for (c, s, text, comment) in items {
                prop_assume!(!text.trim().is_empty());
                let id = add(&mut r, &names[c], &text, s);
                if comment {
                    r.add_comment(&id, "note").unwrap();
                }
            }
            let back = Review::from_json(&r.to_json()).unwrap();
            prop_assert_eq!(back, r);
        }

        #[test]
        fn sentiment_groups_partition_live_annotations(
            items in prop::collection::vec((0usize..4, sentiment(), any::<bool>()), 0..30)
        ) {
            let mut r = review();
            let names: Vec<String> = r.criteria().map(|c| c.name.clone()).collect();
            for (c, s, delete) in items {
                let id = add(&mut r, &names[c], "text", s);
                if delete {
                    r.remove_annotation(&id).unwrap();
                }
            }
            let p = r.partition_by_sentiment();
            let mut seen = BTreeSet::new();
            for (_, group) in p.groups() {
                for a in group {
                    prop_assert!(seen.insert(a.id.clone()), "{} in two groups", a.id);
                }
            }
            let live: BTreeSet<String> = r.live_annotations().iter().map(|a| a.id.clone()).collect();
            prop_assert_eq!(seen, live);
        }
    }
}

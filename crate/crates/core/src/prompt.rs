//! Prompt templates, their rendering, and parsing of structured responses.
//!
//! Templates are plain text with `{name}` placeholders; `{{` and `}}` stand
//! for literal braces. Only the names in [`Placeholder`] are allowed.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{Annotation, CriterionReview, Sentiment};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template `{template}` uses unknown placeholder `{{{name}}}`")]
    UnknownPlaceholder { template: TemplateName, name: String },
    #[error("template `{template}` has an unmatched brace at byte {at}")]
    UnmatchedBrace { template: TemplateName, at: usize },
    #[error("missing binding for `{{{0}}}`")]
    MissingBinding(Placeholder),
    #[error("cannot read template `{template}`: {message}")]
    Io { template: TemplateName, message: String },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("response contains no usable JSON: {0}")]
    UnparseableResponse(String),
    #[error("response contains no excerpts")]
    EmptyItems,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("criterion `{0}` has no annotations yet")]
pub struct NoAnnotations(pub String);

macro_rules! name_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

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
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok(Self::$variant),)+
                    other => Err(format!("unknown {} `{other}`", stringify!($name))),
                }
            }
        }
    };
}

name_enum!(TemplateName {
    Annotate => "annotate",
    Factcheck => "factcheck",
    Social => "social",
    Clarify => "clarify",
    Compile => "compile",
    Viewpoints => "viewpoints",
    ReportByCriteria => "report_by_criteria",
    ReportBySentiment => "report_by_sentiment",
});

name_enum!(Placeholder {
    CriterionName => "criterion_name",
    CriterionDescription => "criterion_description",
    Recommendations => "recommendations",
    NumExcerpts => "num_excerpts",
    Excerpt => "excerpt",
    Question => "question",
    AnnotationsDigest => "annotations_digest",
    ManuscriptText => "manuscript_text",
});

impl TemplateName {
    pub fn builtin_body(&self) -> &'static str {
        match self {
            TemplateName::Annotate => include_str!("../templates/annotate.txt"),
            TemplateName::Factcheck => include_str!("../templates/factcheck.txt"),
            TemplateName::Social => include_str!("../templates/social.txt"),
            TemplateName::Clarify => include_str!("../templates/clarify.txt"),
            TemplateName::Compile => include_str!("../templates/compile.txt"),
            TemplateName::Viewpoints => include_str!("../templates/viewpoints.txt"),
            TemplateName::ReportByCriteria => include_str!("../templates/report_by_criteria.txt"),
            TemplateName::ReportBySentiment => include_str!("../templates/report_by_sentiment.txt"),
        }
    }

    pub fn file_name(&self) -> String {
        format!("{}.txt", self.as_str())
    }
}

impl From<crate::model::OutputKind> for TemplateName {
    fn from(kind: crate::model::OutputKind) -> Self {
        use crate::model::OutputKind;
        match kind {
            OutputKind::Factcheck => TemplateName::Factcheck,
            OutputKind::Social => TemplateName::Social,
            OutputKind::Clarify => TemplateName::Clarify,
        }
    }
}

pub type Bindings = BTreeMap<Placeholder, String>;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(Placeholder),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub body: String,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn parse(name: TemplateName, body: &str) -> Result<Self, TemplateError> {
        let mut segments = Vec::new();
        let mut lit = String::new();
        let bytes = body.as_bytes();
        let mut i = 0;
        while i < body.len() {
            match bytes[i] {
                b'{' if bytes.get(i + 1) == Some(&b'{') => {
                    lit.push('{');
                    i += 2;
                }
                b'}' if bytes.get(i + 1) == Some(&b'}') => {
                    lit.push('}');
                    i += 2;
                }
                b'{' => {
                    let close = body[i + 1..]
                        .find('}')
                        .map(|k| i + 1 + k)
                        .ok_or(TemplateError::UnmatchedBrace { template: name, at: i })?;
                    let ident = &body[i + 1..close];
                    if ident.is_empty() || !ident.bytes().all(|b| b.is_ascii_lowercase() || b == b'_') {
                        return Err(TemplateError::UnmatchedBrace { template: name, at: i });
                    }
                    let slot = ident.parse::<Placeholder>().map_err(|_| TemplateError::UnknownPlaceholder {
                        template: name,
                        name: ident.to_string(),
                    })?;
                    if !lit.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut lit)));
                    }
                    segments.push(Segment::Slot(slot));
                    i = close + 1;
                }
                b'}' => return Err(TemplateError::UnmatchedBrace { template: name, at: i }),
                _ => {
                    let next = body[i..].find(['{', '}']).map_or(body.len(), |k| i + k);
                    lit.push_str(&body[i..next]);
                    i = next;
                }
            }
        }
        if !lit.is_empty() {
            segments.push(Segment::Literal(lit));
        }
        Ok(PromptTemplate {
            name,
            body: body.to_string(),
            segments,
        })
    }

    /// Placeholders the template uses, in first-use order.
    pub fn placeholders(&self) -> Vec<Placeholder> {
        let mut out = Vec::new();
        for s in &self.segments {
            if let Segment::Slot(p) = s {
                if !out.contains(p) {
                    out.push(*p);
                }
            }
        }
        out
    }

    pub fn render(&self, bindings: &Bindings) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.body.len());
        for s in &self.segments {
            match s {
                Segment::Literal(l) => out.push_str(l),
                Segment::Slot(p) => out.push_str(bindings.get(p).ok_or(TemplateError::MissingBinding(*p))?),
            }
        }
        Ok(out)
    }
}

/// One template per [`TemplateName`].
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateName, PromptTemplate>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = TemplateName::ALL
            .iter()
            .map(|&n| (n, PromptTemplate::parse(n, n.builtin_body()).expect("shipped templates are valid")))
            .collect();
        TemplateSet { templates }
    }

    /// Built-in templates, replaced by `<dir>/<name>.txt` where present.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::builtin();
        for &name in TemplateName::ALL {
            let path = dir.join(name.file_name());
            if !path.exists() {
                continue;
            }
            let body = std::fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                template: name,
                message: e.to_string(),
            })?;
            set.templates.insert(name, PromptTemplate::parse(name, &body)?);
        }
        Ok(set)
    }

    pub fn get(&self, name: TemplateName) -> &PromptTemplate {
        &self.templates[&name]
    }

    pub fn render(&self, name: TemplateName, bindings: &Bindings) -> Result<String, TemplateError> {
        self.get(name).render(bindings)
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Keep the first and last `budget / 2` characters of an oversized text.
/// Returns the text and whether anything was cut.
pub fn truncate_head_tail(text: &str, budget: usize) -> (String, bool) {
    let len = text.chars().count();
    if len <= budget {
        return (text.to_string(), false);
    }
    let head = budget / 2;
    let tail = budget - head;
    let mut out: String = text.chars().take(head).collect();
    out.push_str("\n[...]\n");
    out.extend(text.chars().skip(len - tail));
    (out, true)
}

/// Enumerate annotations for a compile, viewpoints or report prompt.
pub fn digest_annotations(review: &CriterionReview) -> Result<String, NoAnnotations> {
    let live: Vec<&Annotation> = review.live().collect();
    if live.is_empty() {
        return Err(NoAnnotations(review.criterion.name.clone()));
    }
    Ok(digest_list(&live, false))
}

/// Digest of an arbitrary annotation list, ordered by creation.
pub fn digest_list(annotations: &[&Annotation], with_criterion: bool) -> String {
    let mut sorted = annotations.to_vec();
    sorted.sort_by_key(|a| a.seq);
    let mut out = String::new();
    for (i, a) in sorted.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = write!(out, "[{}] ", i + 1);
        if with_criterion {
            let _ = write!(out, "({}) ", a.criterion_name);
        }
        let _ = writeln!(out, "{}: \"{}\"", a.sentiment, a.excerpt);
        for c in &a.comments {
            let _ = writeln!(out, "    Comment: {c}");
        }
        for s in &a.saved_outputs {
            match &s.question {
                Some(q) => {
                    let _ = writeln!(out, "    {} ({q}): {}", s.kind, s.answer);
                }
                None => {
                    let _ = writeln!(out, "    {}: {}", s.kind, s.answer);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnnotateItem {
    pub excerpt: String,
    pub sentiment: Sentiment,
    pub comment: Option<String>,
    /// The response gave a sentiment outside {strength, weakness}.
    pub sentiment_unrecognized: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnnotateResponse {
    pub items: Vec<AnnotateItem>,
    pub warnings: Vec<String>,
}

const FENCE: &str = "```";
const MAX_JSON_CANDIDATES: usize = 64;

/// Parse the answer to an annotate prompt. Never panics.
pub fn parse_annotate_response(raw: &str, num_excerpts: usize) -> Result<AnnotateResponse, ParseError> {
    let body = strip_fence(raw);
    let mut first_err = None;
    for value in json_values(body) {
        match interpret(value, raw, num_excerpts) {
            Ok(r) => return Ok(r),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    Err(first_err.unwrap_or_else(|| ParseError::UnparseableResponse("no JSON array or object found".into())))
}

fn interpret(value: Value, raw: &str, num_excerpts: usize) -> Result<AnnotateResponse, ParseError> {

    let entries: Vec<Value> = match value {
        Value::Array(a) => a,
        Value::Object(mut o) => {
            match ["items", "annotations", "excerpts"].iter().find_map(|k| match o.remove(*k) {
                Some(Value::Array(a)) => Some(a),
                _ => None,
            }) {
                Some(a) => a,
                None if o.contains_key("excerpt") => vec![Value::Object(o)],
                None => return Err(ParseError::UnparseableResponse("object without items".into())),
            }
        }
        _ => return Err(ParseError::UnparseableResponse("not an array or object".into())),
    };

    let mut warnings = Vec::new();
    let mut items = Vec::new();
    for (i, entry) in entries.iter().enumerate() {
        let Some(excerpt) = entry.get("excerpt").and_then(Value::as_str).map(str::trim) else {
            warnings.push(format!("item {} has no excerpt", i + 1));
            continue;
        };
        if excerpt.is_empty() {
            warnings.push(format!("item {} has an empty excerpt", i + 1));
            continue;
        }
        if !appears_in(excerpt, raw) {
            warnings.push(format!("item {} excerpt is not quoted verbatim", i + 1));
            continue;
        }
        let (sentiment, unrecognized) = match entry.get("sentiment").and_then(Value::as_str) {
            Some(s) if s.trim().eq_ignore_ascii_case("strength") => (Sentiment::Strength, false),
            Some(s) if s.trim().eq_ignore_ascii_case("weakness") => (Sentiment::Weakness, false),
            other => {
                warnings.push(format!(
                    "item {} has unrecognized sentiment {}",
                    i + 1,
                    other.map_or("(missing)".to_string(), |s| format!("`{s}`"))
                ));
                (Sentiment::Unset, true)
            }
        };
        let comment = entry
            .get("comment")
            .and_then(Value::as_str)
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .map(str::to_string);
        items.push(AnnotateItem {
            excerpt: excerpt.to_string(),
            sentiment,
            comment,
            sentiment_unrecognized: unrecognized,
        });
    }
    if items.is_empty() {
        return Err(ParseError::EmptyItems);
    }
    if items.len() > num_excerpts.max(1) {
        warnings.push(format!("{} excerpts returned, kept {}", items.len(), num_excerpts.max(1)));
        items.truncate(num_excerpts.max(1));
    }
    Ok(AnnotateResponse { items, warnings })
}

/// Whether an excerpt occurs in the raw response, either as-is or in the
/// escaped form a JSON string literal gives it.
pub fn appears_in(excerpt: &str, raw: &str) -> bool {
    if raw.contains(excerpt) {
        return true;
    }
    let escaped = serde_json::to_string(excerpt).expect("strings serialize");
    raw.contains(&escaped[1..escaped.len() - 1])
}

fn strip_fence(raw: &str) -> &str {
    let Some(open) = raw.find(FENCE) else {
        return raw;
    };
    let after = &raw[open + FENCE.len()..];
    // skip the info string (`json`, ...) up to the end of the line
    let content_start = after.find('\n').map_or(after.len(), |k| k + 1);
    let content = &after[content_start..];
    match content.find(FENCE) {
        Some(close) => &content[..close],
        None => content,
    }
}

/// Bracket-balanced arrays and objects that parse, directly or after
/// removing trailing commas, in order of appearance.
fn json_values(text: &str) -> impl Iterator<Item = Value> + '_ {
    text.char_indices()
        .filter(|(_, c)| matches!(c, '[' | '{'))
        .take(MAX_JSON_CANDIDATES)
        .filter_map(|(start, _)| {
            let candidate = &text[start..balanced_end(text, start)?];
            serde_json::from_str::<Value>(candidate)
                .or_else(|_| serde_json::from_str::<Value>(&remove_trailing_commas(candidate)))
                .ok()
        })
}

fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let mut stack = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '[' => stack.push(']'),
            '{' => stack.push('}'),
            ']' | '}' => {
                if stack.pop() != Some(c) {
                    return None;
                }
                if stack.is_empty() {
                    return Some(start + i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn remove_trailing_commas(json: &str) -> String {
    let chars: Vec<char> = json.chars().collect();
    let mut out = String::with_capacity(json.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            out.push(c);
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        if c == ',' {
            let next = chars[i + 1..].iter().find(|n| !n.is_whitespace());
            if matches!(next, Some(']' | '}')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

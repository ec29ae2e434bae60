//! Review criteria: the named dimensions a review is organized by.
//!
//! Criteria can be shared as XML:
//!
//! ```xml
//! <criteria>
//!   <criterion name="Rigor" color="#ffcc80">
//!     <description>...</description>
//!     <recommendation>...</recommendation>
//!   </criterion>
//! </criteria>
//! ```
//!
//! `color` is optional on import; missing colors are taken from [`PALETTE`]
//! in document order, skipping colors already in use. JSON with the same
//! fields is accepted as well.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use quick_xml::escape::escape;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_CRITERIA: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CriteriaError {
    #[error("malformed criteria XML: {0}")]
    MalformedXml(String),
    #[error("malformed criteria JSON: {0}")]
    MalformedJson(String),
    #[error("duplicate criterion name `{0}`")]
    DuplicateName(String),
    #[error("color {0} is used by more than one criterion")]
    DuplicateColor(Color),
    #[error("a criteria set needs at least one criterion")]
    EmptyCriteria,
    #[error("at most {MAX_CRITERIA} criteria are supported, got {0}")]
    TooManyCriteria(usize),
    #[error("invalid criterion: {0}")]
    InvalidCriterion(String),
    #[error("invalid color `{0}`, expected #rrggbb")]
    InvalidColor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Color(pub [u8; 3]);

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [r, g, b] = self.0;
        write!(f, "#{r:02x}{g:02x}{b:02x}")
    }
}

impl FromStr for Color {
    type Err = CriteriaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CriteriaError::InvalidColor(s.to_string());
        let hex = s.trim().strip_prefix('#').ok_or_else(bad)?;
        if hex.len() != 6 || !hex.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(bad());
        }
        let byte = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|_| bad());
        Ok(Color([byte(0)?, byte(2)?, byte(4)?]))
    }
}

impl Serialize for Color {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Color {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

const fn rgb(hex: u32) -> Color {
    Color([(hex >> 16) as u8, (hex >> 8) as u8, hex as u8])
}

pub const YELLOW: Color = rgb(0xfff176);
pub const GREEN: Color = rgb(0xa5d6a7);
pub const BLUE: Color = rgb(0x90caf9);
pub const ORANGE: Color = rgb(0xffcc80);

/// Highlighter palette used for automatic color assignment.
pub const PALETTE: [Color; MAX_CRITERIA] = [
    YELLOW,
    GREEN,
    BLUE,
    ORANGE,
    rgb(0xf48fb1), // pink
    rgb(0xce93d8), // purple
    rgb(0x80cbc4), // teal
    rgb(0xef9a9a), // red
    rgb(0xe6ee9c), // lime
    rgb(0x80deea), // cyan
    rgb(0xffe082), // amber
    rgb(0x9fa8da), // indigo
    rgb(0xbcaaa4), // brown
    rgb(0xb0bec5), // blue grey
    rgb(0xffab91), // deep orange
    rgb(0xc5e1a5), // light green
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub recommendations: Vec<String>,
    pub color: Color,
}

impl Criterion {
    pub fn new(name: &str, description: &str, color: Color) -> Self {
        Criterion {
            name: name.to_string(),
            description: description.to_string(),
            recommendations: Vec::new(),
            color,
        }
    }

    pub fn with_recommendations<I, S>(mut self, recs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.recommendations = recs.into_iter().map(Into::into).collect();
        self
    }
}

/// A validated, ordered set of criteria.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CriteriaSet {
    criteria: Vec<Criterion>,
}

impl CriteriaSet {
    /// Validate: 1..=16 criteria, non-empty single-line trimmed names that
    /// are unique ignoring case, non-empty descriptions, distinct colors.
    pub fn new(criteria: Vec<Criterion>) -> Result<Self, CriteriaError> {
        if criteria.is_empty() {
            return Err(CriteriaError::EmptyCriteria);
        }
        if criteria.len() > MAX_CRITERIA {
            return Err(CriteriaError::TooManyCriteria(criteria.len()));
        }
        let mut names = HashSet::new();
        let mut colors = HashSet::new();
        for c in &criteria {
            check_text("name", &c.name)?;
            if c.name.contains(['\n', '\r', '\t']) {
                return Err(CriteriaError::InvalidCriterion(format!(
                    "name `{}` must be a single line",
                    c.name.escape_debug()
                )));
            }
            check_text("description", &c.description)?;
            for r in &c.recommendations {
                check_text("recommendation", r)?;
            }
            if !names.insert(c.name.to_lowercase()) {
                return Err(CriteriaError::DuplicateName(c.name.clone()));
            }
            if !colors.insert(c.color) {
                return Err(CriteriaError::DuplicateColor(c.color));
            }
        }
        Ok(CriteriaSet { criteria })
    }

    pub fn criteria(&self) -> &[Criterion] {
        &self.criteria
    }

    pub fn iter(&self) -> impl Iterator<Item = &Criterion> {
        self.criteria.iter()
    }

    pub fn len(&self) -> usize {
        self.criteria.len()
    }

    pub fn is_empty(&self) -> bool {
        self.criteria.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.name == name)
    }
}

fn check_text(field: &str, value: &str) -> Result<(), CriteriaError> {
    if value.trim().is_empty() {
        return Err(CriteriaError::InvalidCriterion(format!("{field} must not be empty")));
    }
    if value.trim() != value {
        return Err(CriteriaError::InvalidCriterion(format!(
            "{field} `{}` has surrounding whitespace",
            value.escape_debug()
        )));
    }
    Ok(())
}

/// The four criteria the tool ships with.
pub fn default_criteria() -> CriteriaSet {
    CriteriaSet::new(vec![
        Criterion::new(
            "Contribution",
            "What the manuscript adds: the artifact, method or knowledge it delivers and how clearly that is stated.",
            BLUE,
        )
        .with_recommendations([
            "State the contribution explicitly in the introduction.",
            "Relate each claimed contribution to supporting evidence.",
        ]),
        Criterion::new(
            "Originality",
            "Novelty of the problem framing, approach or results with respect to prior work.",
            GREEN,
        )
        .with_recommendations(["Contrast the approach with the closest related work."]),
        Criterion::new(
            "Relevance",
            "Importance of the addressed problem for the venue's community and for practice.",
            YELLOW,
        ),
        Criterion::new(
            "Rigor",
            "Soundness of the research method, the evaluation design and the validity of conclusions.",
            ORANGE,
        )
        .with_recommendations([
            "Check that sample sizes support the claims.",
            "Look for a discussion of threats to validity.",
        ]),
    ])
    .expect("default criteria are valid")
}

/// A criterion as written by a user, color optional.
#[derive(Debug, Clone, Deserialize)]
struct CriterionDraft {
    name: String,
    description: String,
    #[serde(default)]
    recommendations: Vec<String>,
    #[serde(default)]
    color: Option<String>,
}

fn finish(drafts: Vec<CriterionDraft>) -> Result<CriteriaSet, CriteriaError> {
    if drafts.is_empty() {
        return Err(CriteriaError::EmptyCriteria);
    }
    if drafts.len() > MAX_CRITERIA {
        return Err(CriteriaError::TooManyCriteria(drafts.len()));
    }
    let explicit: Vec<Option<Color>> = drafts
        .iter()
        .map(|d| d.color.as_deref().map(str::parse).transpose())
        .collect::<Result<_, _>>()?;
    let mut used: HashSet<Color> = explicit.iter().flatten().copied().collect();
    let mut criteria = Vec::with_capacity(drafts.len());
    for (draft, color) in drafts.into_iter().zip(explicit) {
        let color = match color {
            Some(c) => c,
            None => {
                let c = *PALETTE
                    .iter()
                    .find(|c| !used.contains(c))
                    .expect("palette has a free color for every missing one");
                used.insert(c);
                c
            }
        };
        criteria.push(Criterion {
            name: draft.name.trim().to_string(),
            description: draft.description.trim().to_string(),
            recommendations: draft
                .recommendations
                .iter()
                .map(|r| r.trim().to_string())
                .collect(),
            color,
        });
    }
    CriteriaSet::new(criteria)
}

pub fn import_json(bytes: &[u8]) -> Result<CriteriaSet, CriteriaError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Doc {
        Wrapped { criteria: Vec<CriterionDraft> },
        Bare(Vec<CriterionDraft>),
    }
    let doc: Doc =
        serde_json::from_slice(bytes).map_err(|e| CriteriaError::MalformedJson(e.to_string()))?;
    finish(match doc {
        Doc::Wrapped { criteria } | Doc::Bare(criteria) => criteria,
    })
}

pub fn export_json(set: &CriteriaSet) -> String {
    serde_json::to_string_pretty(set).expect("criteria serialize")
}

#[derive(PartialEq)]
enum Field {
    Description,
    Recommendation,
}

pub fn import_xml(bytes: &[u8]) -> Result<CriteriaSet, CriteriaError> {
    let malformed = |msg: String| CriteriaError::MalformedXml(msg);
    let mut reader = Reader::from_reader(bytes);
    reader.config_mut().check_end_names = true;
    let mut buf = Vec::new();

    let mut seen_root = false;
    let mut root_closed = false;
    let mut drafts: Vec<CriterionDraft> = Vec::new();
    let mut current: Option<CriterionDraft> = None;
    let mut field: Option<Field> = None;
    let mut text = String::new();

    loop {
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| malformed(format!("at byte {}: {e}", reader.error_position())))?;
        match event {
            Event::Eof => break,
            Event::Decl(_) | Event::Comment(_) | Event::PI(_) | Event::DocType(_) => {}
            Event::Start(e) => match (e.name().as_ref(), seen_root, &current, &field) {
                (b"criteria", false, None, None) => seen_root = true,
                (b"criterion", true, None, None) if !root_closed => {
                    current = Some(criterion_start(&e)?);
                }
                (b"description", _, Some(_), None) => {
                    field = Some(Field::Description);
                    text.clear();
                }
                (b"recommendation", _, Some(_), None) => {
                    field = Some(Field::Recommendation);
                    text.clear();
                }
                (other, ..) => {
                    return Err(malformed(format!(
                        "unexpected element <{}>",
                        String::from_utf8_lossy(other)
                    )))
                }
            },
            Event::Empty(e) => match (e.name().as_ref(), seen_root, &current) {
                (b"criteria", false, None) => {
                    seen_root = true;
                    root_closed = true;
                }
                (b"criterion", true, None) if !root_closed => {
                    // no description: let validation report it
                    drafts.push(criterion_start(&e)?);
                }
                (b"recommendation", _, Some(_)) | (b"description", _, Some(_)) => {
                    return Err(CriteriaError::InvalidCriterion(format!(
                        "empty <{}>",
                        String::from_utf8_lossy(e.name().as_ref())
                    )))
                }
                (other, ..) => {
                    return Err(malformed(format!(
                        "unexpected element <{}/>",
                        String::from_utf8_lossy(other)
                    )))
                }
            },
            Event::Text(t) => {
                let s = t.unescape().map_err(|e| malformed(e.to_string()))?;
                if field.is_some() {
                    text.push_str(&s);
                } else if !s.trim().is_empty() {
                    return Err(malformed(format!("stray text `{}`", s.trim())));
                }
            }
            Event::CData(t) => {
                if field.is_none() {
                    return Err(malformed("stray CDATA".into()));
                }
                text.push_str(&String::from_utf8_lossy(&t.into_inner()));
            }
            Event::End(e) => match e.name().as_ref() {
                b"description" | b"recommendation" => {
                    let draft = current.as_mut().expect("field inside criterion");
                    match field.take() {
                        Some(Field::Description) => draft.description = text.trim().to_string(),
                        Some(Field::Recommendation) => {
                            draft.recommendations.push(text.trim().to_string())
                        }
                        None => unreachable!("end tag checked by reader"),
                    }
                }
                b"criterion" => drafts.push(current.take().expect("open criterion")),
                b"criteria" => root_closed = true,
                _ => {}
            },
        }
        buf.clear();
    }
    if !seen_root {
        return Err(malformed("missing <criteria> root element".into()));
    }
    if !root_closed {
        return Err(malformed("unclosed <criteria> element".into()));
    }
    finish(drafts)
}

fn criterion_start(e: &BytesStart) -> Result<CriterionDraft, CriteriaError> {
    let mut name = None;
    let mut color = None;
    for attr in e.attributes() {
        let attr = attr.map_err(|err| CriteriaError::MalformedXml(err.to_string()))?;
        let value = attr
            .unescape_value()
            .map_err(|err| CriteriaError::MalformedXml(err.to_string()))?
            .into_owned();
        match attr.key.as_ref() {
            b"name" => name = Some(value),
            b"color" => color = Some(value),
            other => {
                return Err(CriteriaError::MalformedXml(format!(
                    "unknown attribute `{}` on <criterion>",
                    String::from_utf8_lossy(other)
                )))
            }
        }
    }
    Ok(CriterionDraft {
        name: name.ok_or_else(|| {
            CriteriaError::MalformedXml("<criterion> without a name attribute".into())
        })?,
        description: String::new(),
        recommendations: Vec::new(),
        color,
    })
}

/// Canonical XML: criteria in set order, two-space indentation, UTF-8,
/// lowercase `#rrggbb` colors, no `<recommendation>` when there are none.
pub fn export_xml(set: &CriteriaSet) -> Vec<u8> {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<criteria>\n");
    for c in set.iter() {
        out.push_str(&format!(
            "  <criterion name=\"{}\" color=\"{}\">\n",
            escape(c.name.as_str()),
            c.color
        ));
        out.push_str(&format!(
            "    <description>{}</description>\n",
            escape(c.description.as_str())
        ));
        for r in &c.recommendations {
            out.push_str(&format!("    <recommendation>{}</recommendation>\n", escape(r.as_str())));
        }
        out.push_str("  </criterion>\n");
    }
    out.push_str("</criteria>\n");
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_set_names_and_palette() {
        let set = default_criteria();
        let names: Vec<_> = set.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["Contribution", "Originality", "Relevance", "Rigor"]);
        assert_eq!(set.get("Relevance").unwrap().color, YELLOW);
        assert_eq!(set.get("Originality").unwrap().color, GREEN);
        assert!(CriteriaSet::new(set.criteria().to_vec()).is_ok());
    }

    #[test]
    fn missing_colors_are_assigned_in_order() {
        let xml = br##"<criteria>
            <criterion name="Clarity"><description>Is it readable?</description></criterion>
            <criterion name="Impact" color="#FFF176"><description>Does it matter?</description></criterion>
            <criterion name="Ethics"><description>Any concerns?</description></criterion>
        </criteria>"##;
        let set = import_xml(xml).unwrap();
        let colors: Vec<_> = set.iter().map(|c| c.color).collect();
        // yellow is taken explicitly, so auto-assignment starts at green
        assert_eq!(colors, vec![GREEN, YELLOW, BLUE]);
    }

    #[test]
    fn names_are_unique_ignoring_case() {
        let xml = br#"<criteria>
            <criterion name="Rigor"><description>a</description></criterion>
            <criterion name="rigor"><description>b</description></criterion>
        </criteria>"#;
        assert_eq!(import_xml(xml), Err(CriteriaError::DuplicateName("rigor".into())));
    }

    #[test]
    fn empty_and_malformed_inputs() {
        assert_eq!(import_xml(b"<criteria></criteria>"), Err(CriteriaError::EmptyCriteria));
        assert_eq!(import_xml(b"<criteria/>"), Err(CriteriaError::EmptyCriteria));
        assert!(matches!(import_xml(b"<criteria><criterion name=\"x\">"), Err(CriteriaError::MalformedXml(_))));
        assert!(matches!(import_xml(b"not xml at all"), Err(CriteriaError::MalformedXml(_))));
        assert!(matches!(
            import_xml(b"<criteria><foo/></criteria>"),
            Err(CriteriaError::MalformedXml(_))
        ));
        assert!(matches!(
            import_xml(br#"<criteria><criterion name="x"></criterion></criteria>"#),
            Err(CriteriaError::InvalidCriterion(_))
        ));
        assert!(matches!(
            import_xml(br##"<criteria><criterion name="x" color="#12"><description>d</description></criterion></criteria>"##),
            Err(CriteriaError::InvalidColor(_))
        ));
    }

    #[test]
    fn duplicate_explicit_colors_rejected() {
        let xml = br##"<criteria>
            <criterion name="A" color="#000000"><description>a</description></criterion>
            <criterion name="B" color="#000000"><description>b</description></criterion>
        </criteria>"##;
        assert_eq!(import_xml(xml), Err(CriteriaError::DuplicateColor(Color([0, 0, 0]))));
    }

    #[test]
    fn export_layout() {
        let set = CriteriaSet::new(vec![
            Criterion::new("A & B", "Uses <tags>", Color([0xAB, 0xCD, 0xEF])),
            Criterion::new("C", "plain", GREEN).with_recommendations(["do \"this\""]),
        ])
        .unwrap();
        let xml = String::from_utf8(export_xml(&set)).unwrap();
        assert_eq!(
            xml,
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<criteria>\n  \
             <criterion name=\"A &amp; B\" color=\"#abcdef\">\n    \
             <description>Uses &lt;tags&gt;</description>\n  </criterion>\n  \
             <criterion name=\"C\" color=\"#a5d6a7\">\n    <description>plain</description>\n    \
             <recommendation>do &quot;this&quot;</recommendation>\n  </criterion>\n</criteria>\n"
        );
        assert_eq!(import_xml(xml.as_bytes()).unwrap(), set);
    }

    #[test]
    fn json_form_is_equivalent() {
        let json = br#"{"criteria": [{"name": "Rigor", "description": "Sound method"}]}"#;
        let set = import_json(json).unwrap();
        assert_eq!(set.criteria()[0].color, YELLOW);
        assert_eq!(import_json(export_json(&set).as_bytes()).unwrap(), set);
        let bare = br##"[{"name": "Rigor", "description": "Sound method", "color": "#010203"}]"##;
        assert_eq!(import_json(bare).unwrap().criteria()[0].color, Color([1, 2, 3]));
        assert_eq!(import_json(b"[]"), Err(CriteriaError::EmptyCriteria));
    }

    #[test]
    fn seventeen_criteria_rejected() {
        let body: String = (0..17)
            .map(|i| format!("<criterion name=\"c{i}\"><description>d</description></criterion>"))
            .collect();
        let xml = format!("<criteria>{body}</criteria>");
        assert_eq!(import_xml(xml.as_bytes()), Err(CriteriaError::TooManyCriteria(17)));
    }

    proptest! {
        #[test]
        fn colors_stay_injective(explicit in prop::collection::vec(prop::option::of(0usize..16), 1..16)) {
            let mut used = HashSet::new();
            let body: String = explicit.iter().enumerate().map(|(i, c)| {
                let color = match c {
                    Some(p) if used.insert(*p) => format!(" color=\"{}\"", PALETTE[*p]),
                    _ => String::new(),
                };
                format!("<criterion name=\"c{i}\"{color}><description>d</description></criterion>")
            }).collect();
            let set = import_xml(format!("<criteria>{body}</criteria>").as_bytes()).unwrap();
            let colors: HashSet<_> = set.iter().map(|c| c.color).collect();
            prop_assert_eq!(colors.len(), set.len());
        }
    }
}

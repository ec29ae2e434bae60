//! Text normalization with character-level provenance.
//!
//! The rules run in a fixed order and the order is part of the public
//! contract, because anchoring results depend on it:
//!
//! 1. Unicode compatibility normalization (NFKC), applied per starter
//!    segment so every output character can be traced to its source.
//! 2. Ligature expansion (`ﬁ` → `fi`, ...).
//! 3. Soft hyphen (U+00AD) removal.
//! 4. De-hyphenation: a hyphen, optional blanks, a line break, optional
//!    blanks and then a lowercase letter are joined into one word.
//! 5. Every whitespace run collapses to a single ASCII space.
//! 6. Lowercasing.
//!
//! Positions are counted in Unicode scalar values (Rust `char`s), never
//! bytes.

use unicode_normalization::char::canonical_combining_class;
use unicode_normalization::UnicodeNormalization;

const SOFT_HYPHEN: char = '\u{00AD}';

/// Normalized text plus, for every normalized character, the half-open
/// raw character range it was produced from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Normalized {
    pub text: String,
    pub spans: Vec<(usize, usize)>,
}

impl Normalized {
    /// Raw index the normalized character `i` originated from.
    pub fn norm_to_raw(&self, i: usize) -> usize {
        self.spans[i].0
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }
}

// (char, raw start, raw end)
type Traced = Vec<(char, usize, usize)>;

pub fn normalize(raw: &str) -> Normalized {
    let chars: Vec<char> = raw.chars().collect();
    let traced = compatibility(&chars);
    let traced = expand_ligatures(traced);
    let traced = traced.into_iter().filter(|(c, ..)| *c != SOFT_HYPHEN).collect();
    let traced = join_hyphenated(traced);
    let traced = collapse_whitespace(traced);
    let traced = lowercase(traced);

    let mut out = Normalized {
        text: String::with_capacity(traced.len()),
        spans: Vec::with_capacity(traced.len()),
    };
    for (c, start, end) in traced {
        out.text.push(c);
        out.spans.push((start, end));
    }
    out
}

/// Normalize text the way excerpts are matched: the full pipeline, then
/// leading and trailing spaces trimmed.
pub fn normalize_excerpt(excerpt: &str) -> String {
    normalize(excerpt).text.trim_matches(' ').to_string()
}

/// Inverse map: for each raw index, the first normalized character whose
/// raw span ends after it. Raw characters dropped by normalization map to
/// the next surviving character (or `len` at the end).
pub fn raw_to_norm(spans: &[(usize, usize)], raw_len: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(raw_len);
    let mut i = 0;
    for r in 0..raw_len {
        while i < spans.len() && spans[i].1 <= r {
            i += 1;
        }
        out.push(i);
    }
    out
}

fn is_segment_start(c: char) -> bool {
    canonical_combining_class(c) == 0
}

fn compatibility(chars: &[char]) -> Traced {
    let mut out = Vec::with_capacity(chars.len());
    let mut start = 0;
    while start < chars.len() {
        let mut end = start + 1;
        while end < chars.len() && !is_segment_start(chars[end]) {
            end += 1;
        }
        if end - start == 1 && chars[start].is_ascii() {
            out.push((chars[start], start, end));
        } else {
            let segment: String = chars[start..end].iter().collect();
            for c in segment.nfkc() {
                out.push((c, start, end));
            }
        }
        start = end;
    }
    out
}

fn ligature(c: char) -> Option<&'static str> {
    Some(match c {
        '\u{FB00}' => "ff",
        '\u{FB01}' => "fi",
        '\u{FB02}' => "fl",
        '\u{FB03}' => "ffi",
        '\u{FB04}' => "ffl",
        '\u{FB05}' | '\u{FB06}' => "st",
        '\u{0132}' => "IJ",
        '\u{0133}' => "ij",
        _ => return None,
    })
}

fn expand_ligatures(traced: Traced) -> Traced {
    let mut out = Vec::with_capacity(traced.len());
    for (c, s, e) in traced {
        match ligature(c) {
            Some(expansion) => out.extend(expansion.chars().map(|x| (x, s, e))),
            None => out.push((c, s, e)),
        }
    }
    out
}

fn is_hyphen(c: char) -> bool {
    matches!(c, '-' | '\u{2010}')
}

fn is_blank(c: char) -> bool {
    matches!(c, ' ' | '\t')
}

fn is_line_break(c: char) -> bool {
    matches!(
        c,
        '\n' | '\r' | '\u{0B}' | '\u{0C}' | '\u{85}' | '\u{2028}' | '\u{2029}'
    )
}

/// Length of a hyphenated line break starting at `i`, if the pattern
/// `hyphen blank* linebreak blank* lowercase` matches there. The returned
/// length covers everything up to, not including, the lowercase letter.
fn hyphen_break_len(t: &Traced, i: usize) -> Option<usize> {
    if !is_hyphen(t[i].0) {
        return None;
    }
    let mut j = i + 1;
    while j < t.len() && is_blank(t[j].0) {
        j += 1;
    }
    if j >= t.len() || !is_line_break(t[j].0) {
        return None;
    }
    // \r\n counts as a single break
    if t[j].0 == '\r' && j + 1 < t.len() && t[j + 1].0 == '\n' {
        j += 1;
    }
    j += 1;
    while j < t.len() && is_blank(t[j].0) {
        j += 1;
    }
    (j < t.len() && t[j].0.is_lowercase()).then_some(j - i)
}

fn join_hyphenated(traced: Traced) -> Traced {
    let mut out = Vec::with_capacity(traced.len());
    let mut i = 0;
    while i < traced.len() {
        if let Some(skip) = hyphen_break_len(&traced, i) {
            i += skip;
            continue;
        }
        out.push(traced[i]);
        i += 1;
    }
    out
}

fn collapse_whitespace(traced: Traced) -> Traced {
    let mut out: Traced = Vec::with_capacity(traced.len());
    let mut in_run = false;
    for (c, s, e) in traced {
        if c.is_whitespace() {
            if in_run {
                if let Some(last) = out.last_mut() {
                    last.2 = e;
                }
            } else {
                out.push((' ', s, e));
                in_run = true;
            }
        } else {
            out.push((c, s, e));
            in_run = false;
        }
    }
    out
}

fn lowercase(traced: Traced) -> Traced {
    let mut out = Vec::with_capacity(traced.len());
    for (c, s, e) in traced {
        if c.is_ascii() {
            out.push((c.to_ascii_lowercase(), s, e));
        } else {
            out.extend(c.to_lowercase().map(|x| (x, s, e)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Character-by-character replay of the rules on an ASCII input.
    #[test]
    fn collapses_whitespace_and_maps_offsets() {
        let n = normalize("A  B\nC");
        assert_eq!(n.text, "a b c");
        assert_eq!(n.norm_to_raw(4), 5);
        assert_eq!(n.spans, vec![(0, 1), (1, 3), (3, 4), (4, 5), (5, 6)]);
    }

    #[test]
    fn joins_line_break_hyphenation() {
        assert_eq!(normalize("con-\ntribution").text, "contribution");
        assert_eq!(normalize("con- \r\n  tribution").text, "contribution");
        // uppercase continuation is not a hyphenated word
        assert_eq!(normalize("Smith-\nJones").text, "smith- jones");
        // hyphen inside a line is kept
        assert_eq!(normalize("well-known").text, "well-known");
    }

    #[test]
    fn empty_input() {
        let n = normalize("");
        assert_eq!(n.text, "");
        assert!(n.spans.is_empty());
    }

    #[test]
    fn expands_ligatures_and_drops_soft_hyphens() {
        let n = normalize("e\u{FB03}cient de\u{AD}sign");
        assert_eq!(n.text, "efficient design");
        // both halves of the ligature point at the same raw char
        assert_eq!(n.spans[1], (1, 2));
        assert_eq!(n.spans[3], (1, 2));
    }

    #[test]
    fn compatibility_forms_fold() {
        assert_eq!(normalize("\u{2460} x\u{00A0}y").text, "1 x y");
        // decomposed accent composes, span covers both raw chars
        let n = normalize("Cafe\u{0301}");
        assert_eq!(n.text, "café");
        assert_eq!(n.spans[3], (3, 5));
    }

    #[test]
    fn inverse_map_points_at_surviving_chars() {
        let raw = "con-\ntribution";
        let n = normalize(raw);
        let inv = raw_to_norm(&n.spans, raw.chars().count());
        assert_eq!(inv[0], 0);
        // dropped hyphen and newline map to the next surviving char
        assert_eq!(inv[3], 3);
        assert_eq!(inv[4], 3);
        assert_eq!(inv[5], 3);
    }

    fn texty() -> impl Strategy<Value = String> {
        let pieces = prop::sample::select(vec![
            "a", "B", "z", "é", "e\u{301}", "\u{FB01}", "\u{FB03}", "\u{AD}", "-", "-\n", " ", "  ",
            "\n", "\r\n", "\t", "\u{A0}", "İ", "ß", "Σ", "ς", "\u{2460}", "Ⅻ", "ǅ", "1", ".", "ﬅ",
        ]);
        prop::collection::vec(pieces, 0..40).prop_map(|v| v.concat())
    }

    proptest! {
        #[test]
        fn idempotent_on_text(raw in texty()) {
            let once = normalize(&raw).text;
            prop_assert_eq!(normalize(&once).text, once);
        }

        #[test]
        fn idempotent_on_arbitrary(raw in "\\PC{0,24}") {
            let once = normalize(&raw).text;
            prop_assert_eq!(normalize(&once).text, once);
        }

        #[test]
        fn spans_are_monotone_and_in_bounds(raw in texty()) {
            let n = normalize(&raw);
            let len = raw.chars().count();
            for w in n.spans.windows(2) {
                prop_assert!(w[0].0 <= w[1].0);
            }
            for &(s, e) in &n.spans {
                prop_assert!(s < e && e <= len);
            }
        }

        #[test]
        fn round_trip_stays_in_token(raw in texty()) {
            let n = normalize(&raw);
            let inv = raw_to_norm(&n.spans, raw.chars().count());
            for i in 0..n.len() {
                let back = inv[n.norm_to_raw(i)];
                // same normalization token: both indices come from the same raw span
                prop_assert_eq!(n.spans[back], n.spans[i]);
            }
        }
    }
}

//! Locating quoted excerpts inside a manuscript.
//!
//! Matching happens on normalized text. A verbatim occurrence wins
//! outright; otherwise every window whose length is within 20% of the
//! excerpt length is scored by edit distance and the best window under
//! `max_ratio` becomes a fuzzy anchor. Several non-overlapping windows
//! scoring within `ambiguity_band` of the best are reported as a candidate
//! set instead of being silently resolved.
//!
//! [`SearchMode::Seeded`] narrows the scan with exact seed pieces of the
//! excerpt. The pieces are chosen so that any window under the threshold
//! must contain at least one of them verbatim, so the seeded search and
//! [`SearchMode::Exhaustive`] always agree.

use std::collections::{HashMap, HashSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{normalize_excerpt, Manuscript};

/// Longest seed piece used by the seeded search.
pub const MAX_SEED_LEN: usize = 5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnchorError {
    #[error("excerpt is empty after normalization")]
    EmptyExcerpt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Exact,
    Fuzzy,
    Unanchored,
}

/// Where an excerpt sits in the raw manuscript text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "AnchorRecord", try_from = "AnchorRecord")]
pub struct Anchor {
    pub raw_range: Option<Range<usize>>,
    pub page: Option<u32>,
    pub match_kind: MatchKind,
    pub distance_ratio: f64,
}

impl Anchor {
    pub fn unanchored() -> Self {
        Anchor {
            raw_range: None,
            page: None,
            match_kind: MatchKind::Unanchored,
            distance_ratio: 1.0,
        }
    }

    pub fn exact(raw_range: Range<usize>, page: u32) -> Self {
        Anchor {
            raw_range: Some(raw_range),
            page: Some(page),
            match_kind: MatchKind::Exact,
            distance_ratio: 0.0,
        }
    }

    pub fn is_anchored(&self) -> bool {
        self.match_kind != MatchKind::Unanchored
    }

    pub fn start(&self) -> Option<usize> {
        self.raw_range.as_ref().map(|r| r.start)
    }
}

// Wire form: {start, end, page, kind, ratio}
#[derive(Serialize, Deserialize)]
struct AnchorRecord {
    start: Option<usize>,
    end: Option<usize>,
    page: Option<u32>,
    kind: MatchKind,
    ratio: f64,
}

impl From<Anchor> for AnchorRecord {
    fn from(a: Anchor) -> Self {
        AnchorRecord {
            start: a.raw_range.as_ref().map(|r| r.start),
            end: a.raw_range.as_ref().map(|r| r.end),
            page: a.page,
            kind: a.match_kind,
            ratio: a.distance_ratio,
        }
    }
}

impl TryFrom<AnchorRecord> for Anchor {
    type Error = String;

    fn try_from(r: AnchorRecord) -> Result<Self, Self::Error> {
        if !(0.0..=1.0).contains(&r.ratio) {
            return Err(format!("anchor ratio {} outside [0, 1]", r.ratio));
        }
        let raw_range = match (r.kind, r.start, r.end) {
            (MatchKind::Unanchored, _, _) => None,
            (_, Some(s), Some(e)) if s < e => Some(s..e),
            _ => return Err("anchored excerpt needs a non-empty start..end".into()),
        };
        if r.kind == MatchKind::Exact && r.ratio != 0.0 {
            return Err("exact anchor with non-zero ratio".into());
        }
        Ok(Anchor {
            raw_range,
            page: if r.kind == MatchKind::Unanchored { None } else { r.page },
            match_kind: r.kind,
            distance_ratio: r.ratio,
        })
    }
}

/// Several equally plausible anchors, best distance first, ties by offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorCandidateSet {
    candidates: Vec<Anchor>,
}

impl AnchorCandidateSet {
    fn new(mut candidates: Vec<Anchor>) -> Self {
        assert!(!candidates.is_empty());
        candidates.sort_by(|a, b| {
            a.distance_ratio
                .total_cmp(&b.distance_ratio)
                .then(a.start().cmp(&b.start()))
        });
        AnchorCandidateSet { candidates }
    }

    pub fn candidates(&self) -> &[Anchor] {
        &self.candidates
    }

    pub fn into_candidates(self) -> Vec<Anchor> {
        self.candidates
    }

    pub fn earliest(&self) -> &Anchor {
        self.candidates
            .iter()
            .min_by_key(|a| a.start())
            .expect("candidate sets are non-empty")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Located {
    Anchored(Anchor),
    Ambiguous(AnchorCandidateSet),
    Unanchored,
}

/// What to do with an ambiguous result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoPick {
    /// Leave the excerpt unanchored and keep the candidates for the reviewer.
    #[default]
    None,
    /// Take the candidate that starts first in the document.
    Earliest,
}

impl Located {
    /// Resolve into the anchor to store plus any unresolved alternatives.
    pub fn resolve(self, policy: AutoPick) -> (Anchor, Vec<Anchor>) {
        match self {
            Located::Anchored(a) => (a, Vec::new()),
            Located::Unanchored => (Anchor::unanchored(), Vec::new()),
            Located::Ambiguous(set) => match policy {
                AutoPick::Earliest => (set.earliest().clone(), Vec::new()),
                AutoPick::None => (Anchor::unanchored(), set.into_candidates()),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchMode {
    #[default]
    Seeded,
    /// Score every window directly. Slow; used as a reference.
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorParams {
    pub max_ratio: f64,
    pub ambiguity_band: f64,
    pub mode: SearchMode,
}

impl Default for AnchorParams {
    fn default() -> Self {
        AnchorParams {
            max_ratio: 0.2,
            ambiguity_band: 0.02,
            mode: SearchMode::Seeded,
        }
    }
}

/// A scored window of the normalized text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Window {
    pub start: usize,
    pub len: usize,
    pub dist: usize,
}

impl Window {
    fn end(&self) -> usize {
        self.start + self.len
    }

    fn overlaps(&self, other: &Window) -> bool {
        self.start < other.end() && other.start < self.end()
    }
}

/// Hits in normalized coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hits {
    pub exact: bool,
    pub windows: Vec<Window>,
}

pub fn locate(
    manuscript: &Manuscript,
    excerpt: &str,
    params: &AnchorParams,
) -> Result<Located, AnchorError> {
    let pattern: Vec<char> = normalize_excerpt(excerpt).chars().collect();
    if pattern.is_empty() {
        return Err(AnchorError::EmptyExcerpt);
    }
    let hits = find_hits(manuscript.normalized_chars(), &pattern, params);
    let m = pattern.len() as f64;
    let to_anchor = |w: &Window| {
        let raw = manuscript.raw_range_of(w.start..w.end());
        Anchor {
            page: Some(manuscript.page_of(raw.start)),
            raw_range: Some(raw),
            match_kind: if hits.exact { MatchKind::Exact } else { MatchKind::Fuzzy },
            distance_ratio: if hits.exact { 0.0 } else { w.dist as f64 / m },
        }
    };
    Ok(match hits.windows.as_slice() {
        [] => Located::Unanchored,
        [one] => Located::Anchored(to_anchor(one)),
        many => Located::Ambiguous(AnchorCandidateSet::new(many.iter().map(to_anchor).collect())),
    })
}

/// Both search phases on already-normalized text.
pub fn find_hits(text: &[char], pattern: &[char], params: &AnchorParams) -> Hits {
    let exact = exact_occurrences(text, pattern);
    if !exact.is_empty() {
        return Hits {
            exact: true,
            windows: exact
                .into_iter()
                .map(|start| Window {
                    start,
                    len: pattern.len(),
                    dist: 0,
                })
                .collect(),
        };
    }
    let m = pattern.len();
    let max_dist = ratio_to_dist(params.max_ratio, m);
    let band = ratio_to_dist(params.ambiguity_band, m);
    let windows = if max_dist == 0 {
        Vec::new()
    } else {
        match params.mode {
            SearchMode::Exhaustive => exhaustive_windows(text, pattern, max_dist),
            SearchMode::Seeded => seeded_windows(text, pattern, max_dist, band),
        }
    };
    Hits {
        exact: false,
        windows: select_hits(windows, band),
    }
}

fn ratio_to_dist(ratio: f64, m: usize) -> usize {
    (ratio * m as f64 + 1e-9).floor().max(0.0) as usize
}

/// Window lengths considered for an excerpt of `m` characters.
pub fn window_lengths(m: usize) -> Range<usize> {
    let slack = m / 5;
    (m - slack).max(1)..m + slack + 1
}

/// Non-overlapping, leftmost-first verbatim occurrences.
fn exact_occurrences(text: &[char], pattern: &[char]) -> Vec<usize> {
    let m = pattern.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i + m <= text.len() {
        if text[i] == pattern[0] && text[i..i + m] == *pattern {
            out.push(i);
            i += m;
        } else {
            i += 1;
        }
    }
    out
}

/// Greedy pick of non-overlapping windows within `band` of the best.
fn select_hits(mut windows: Vec<Window>, band: usize) -> Vec<Window> {
    windows.sort_by_key(|w| (w.dist, w.start, w.len));
    windows.dedup();
    let Some(best) = windows.first().map(|w| w.dist) else {
        return Vec::new();
    };
    let mut hits: Vec<Window> = Vec::new();
    for w in windows {
        if w.dist > best + band {
            break;
        }
        if hits.iter().all(|h| !h.overlaps(&w)) {
            hits.push(w);
        }
    }
    hits
}

fn exhaustive_windows(text: &[char], pattern: &[char], max_dist: usize) -> Vec<Window> {
    let lens = window_lengths(pattern.len());
    let mut out = Vec::new();
    for start in 0..text.len() {
        for len in lens.clone() {
            if start + len > text.len() {
                break;
            }
            let dist = levenshtein(pattern, &text[start..start + len]);
            if dist <= max_dist {
                out.push(Window { start, len, dist });
            }
        }
    }
    out
}

fn seeded_windows(text: &[char], pattern: &[char], max_dist: usize, band: usize) -> Vec<Window> {
    let m = pattern.len();
    let lens = window_lengths(m);
    let max_len = lens.end - 1;

    // per end position: min distance over all starts inside its region
    let mut best_at_end: Vec<(usize, usize)> = Vec::new();
    for region in seed_regions(text, pattern, max_dist, max_len) {
        let scores = semi_global_scores(pattern, &text[region.clone()]);
        best_at_end.extend(
            scores
                .iter()
                .enumerate()
                .skip(1)
                .map(|(j, &d)| (region.start + j, d)),
        );
    }
    let Some(global_best) = best_at_end.iter().map(|&(_, d)| d).min() else {
        return Vec::new();
    };

    // Only windows within `band` of the true best can become hits. The best
    // window under the length constraint may score worse than the
    // unconstrained minimum, so raise the floor until they agree.
    let mut floor = global_best;
    loop {
        if floor > max_dist {
            return Vec::new();
        }
        let threshold = (floor + band).min(max_dist);
        let windows = windows_at_ends(text, pattern, &best_at_end, threshold, &lens);
        match windows.iter().map(|w| w.dist).min() {
            None if threshold >= max_dist => return Vec::new(),
            None => floor = threshold + 1,
            Some(b) if b == floor => return windows,
            Some(b) => floor = b,
        }
    }
}

fn windows_at_ends(
    text: &[char],
    pattern: &[char],
    best_at_end: &[(usize, usize)],
    threshold: usize,
    lens: &Range<usize>,
) -> Vec<Window> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for &(end, best) in best_at_end {
        if best > threshold || !seen.insert(end) {
            continue;
        }
        let dists = distances_ending_at(pattern, text, end, lens.end - 1);
        for len in lens.clone() {
            if len > end {
                break;
            }
            if dists[len] <= threshold {
                out.push(Window {
                    start: end - len,
                    len,
                    dist: dists[len],
                });
            }
        }
    }
    out
}

/// Text regions that can contain a window within `max_dist` of the
/// pattern. The pattern is cut into at least `max_dist + 1` pieces of at
/// most [`MAX_SEED_LEN`] characters; a window with `max_dist` edits leaves
/// at least one piece intact, so every such window contains a seed.
fn seed_regions(
    text: &[char],
    pattern: &[char],
    max_dist: usize,
    max_len: usize,
) -> Vec<Range<usize>> {
    let m = pattern.len();
    if max_dist + 1 > m || text.is_empty() {
        return std::iter::once(0..text.len()).collect();
    }
    let pieces_n = (max_dist + 1).max(m.div_ceil(MAX_SEED_LEN));
    let (base, extra) = (m / pieces_n, m % pieces_n);
    let mut pieces: Vec<(usize, &[char])> = Vec::with_capacity(pieces_n);
    let mut offset = 0;
    for i in 0..pieces_n {
        let len = base + usize::from(i < extra);
        pieces.push((offset, &pattern[offset..offset + len]));
        offset += len;
    }

    let mut by_piece: HashMap<&[char], Vec<usize>> = HashMap::new();
    for &(_, piece) in &pieces {
        by_piece.entry(piece).or_default();
    }
    let piece_lens: HashSet<usize> = pieces.iter().map(|(_, p)| p.len()).collect();
    for len in piece_lens {
        for (t, gram) in text.windows(len).enumerate() {
            if let Some(slots) = by_piece.get_mut(gram) {
                slots.push(t);
            }
        }
    }

    let mut regions: Vec<Range<usize>> = Vec::new();
    for &(p_off, piece) in &pieces {
        for &t in &by_piece[piece] {
            let lo = t.saturating_sub(p_off + max_dist);
            let hi = (t + max_dist).saturating_sub(p_off) + max_len;
            regions.push(lo..hi.min(text.len()));
        }
    }
    regions.sort_by_key(|r| r.start);
    let mut merged: Vec<Range<usize>> = Vec::new();
    for r in regions {
        match merged.last_mut() {
            Some(last) if r.start <= last.end => last.end = last.end.max(r.end),
            _ => merged.push(r),
        }
    }
    merged
}

/// `out[j]` is the smallest edit distance between `pattern` and any
/// substring of `text` that ends at `j` (free start). Bit-parallel over
/// 64-row blocks.
pub fn semi_global_scores(pattern: &[char], text: &[char]) -> Vec<usize> {
    let m = pattern.len();
    let mut out = Vec::with_capacity(text.len() + 1);
    out.push(m);
    if m == 0 {
        out.resize(text.len() + 1, 0);
        return out;
    }
    let blocks = m.div_ceil(64);
    let mut peq: HashMap<char, Vec<u64>> = HashMap::new();
    for (i, &c) in pattern.iter().enumerate() {
        peq.entry(c).or_insert_with(|| vec![0; blocks])[i / 64] |= 1 << (i % 64);
    }
    let no_match = vec![0u64; blocks];
    let last_high = 1u64 << ((m - 1) % 64);
    let mut pv = vec![!0u64; blocks];
    let mut mv = vec![0u64; blocks];
    let mut score = m as i64;
    for c in text {
        let eq = peq.get(c).unwrap_or(&no_match);
        let mut carry = 0i32;
        for b in 0..blocks {
            let high = if b + 1 == blocks { last_high } else { 1 << 63 };
            carry = advance_block(&mut pv[b], &mut mv[b], eq[b], carry, high);
        }
        score += i64::from(carry);
        out.push(score as usize);
    }
    out
}

// One column step of Myers' algorithm for a 64-row block. `hin` is the
// horizontal delta entering the block's top row; the return value is the
// delta leaving the row marked by `high`.
fn advance_block(pv: &mut u64, mv: &mut u64, eq: u64, hin: i32, high: u64) -> i32 {
    let (p, m) = (*pv, *mv);
    let xv = eq | m;
    let eq = if hin < 0 { eq | 1 } else { eq };
    let xh = ((eq & p).wrapping_add(p) ^ p) | eq;
    let mut ph = m | !(xh | p);
    let mut mh = p & xh;
    let hout = if ph & high != 0 {
        1
    } else if mh & high != 0 {
        -1
    } else {
        0
    };
    ph <<= 1;
    mh <<= 1;
    if hin < 0 {
        mh |= 1;
    } else if hin > 0 {
        ph |= 1;
    }
    *pv = mh | !(xv | ph);
    *mv = ph & xv;
    hout
}

/// `out[len]` is the edit distance between `pattern` and the `len`
/// characters of `text` ending at `end`, for `len` up to `max_len`.
fn distances_ending_at(pattern: &[char], text: &[char], end: usize, max_len: usize) -> Vec<usize> {
    let m = pattern.len();
    let max_len = max_len.min(end);
    let mut col: Vec<usize> = (0..=m).collect();
    let mut out = Vec::with_capacity(max_len + 1);
    out.push(col[m]);
    for j in 1..=max_len {
        let c = text[end - j];
        let mut diag = col[0];
        col[0] = j;
        for i in 1..=m {
            let up = col[i];
            let sub = diag + usize::from(pattern[m - i] != c);
            col[i] = sub.min(up + 1).min(col[i - 1] + 1);
            diag = up;
        }
        out.push(col[m]);
    }
    out
}

fn levenshtein(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=a.len()).collect();
    for (j, cb) in b.iter().enumerate() {
        let mut diag = row[0];
        row[0] = j + 1;
        for (i, ca) in a.iter().enumerate() {
            let up = row[i + 1];
            row[i + 1] = (diag + usize::from(ca != cb)).min(up + 1).min(row[i] + 1);
            diag = up;
        }
    }
    row[a.len()]
}

/// Levenshtein distance with unit costs, over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein(&a, &b)
}

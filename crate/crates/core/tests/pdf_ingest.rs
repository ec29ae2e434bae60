mod support;

use marginalia_core::anchor::{locate, AnchorParams, Located, MatchKind};
use marginalia_core::store::{DocumentStore, SourceKind, StoreError};
use support::pdf_with_pages;

const PAGE_1: &[&str] = &[
    "Annotation-centric review support",
    "We describe a tool that highlights evidence in a manuscript.",
];
const PAGE_2: &[&str] = &[
    "The main con-",
    "tribution is a set of criterion-specific prompts.",
];
const PAGE_3: &[&str] = &["Nine participants evaluated the tool.", "Future work follows."];

#[test]
fn three_page_pdf_maps_pages_to_the_embedded_text() {
    let fixture = pdf_with_pages(&[PAGE_1, PAGE_2, PAGE_3]);
    let dir = tempfile::tempdir().unwrap();
    let store = DocumentStore::open(dir.path()).unwrap();
    let m = store.ingest(&fixture.bytes, SourceKind::Pdf).unwrap();

    assert_eq!(m.page_map.len(), 3);
    let mut expected_start = 0;
    for (range, text) in m.page_map.iter().zip(&fixture.page_texts) {
        assert_eq!(range.start, expected_start, "ranges are contiguous");
        assert!(range.start < range.end);
        assert_eq!(m.raw_slice(range.start..range.end), text.as_str());
        expected_start = range.end;
    }
    assert_eq!(expected_start, m.raw_len());
    assert_eq!(m.raw_text, fixture.page_texts.concat());
}

#[test]
fn excerpts_anchor_across_pdf_line_breaks() {
    let fixture = pdf_with_pages(&[PAGE_1, PAGE_2, PAGE_3]);
    let dir = tempfile::tempdir().unwrap();
    let store = DocumentStore::open(dir.path()).unwrap();
    let m = store.ingest(&fixture.bytes, SourceKind::Pdf).unwrap();

    let Located::Anchored(a) = locate(&m, "The main contribution is a set", &AnchorParams::default()).unwrap() else {
        panic!("not anchored");
    };
    assert_eq!(a.match_kind, MatchKind::Exact);
    assert_eq!(a.page, Some(2));
    assert_eq!(m.raw_slice(a.raw_range.unwrap()), "The main con-\ntribution is a set");

    let Located::Anchored(b) = locate(&m, "Nine participants evaluted the tool", &AnchorParams::default()).unwrap() else {
        panic!("not anchored");
    };
    assert_eq!(b.match_kind, MatchKind::Fuzzy);
    assert_eq!(b.page, Some(3));
}

#[test]
fn pdf_without_text_is_unsupported() {
    let fixture = pdf_with_pages(&[&[], &[]]);
    let dir = tempfile::tempdir().unwrap();
    let store = DocumentStore::open(dir.path()).unwrap();
    assert!(matches!(store.ingest(&fixture.bytes, SourceKind::Pdf), Err(StoreError::UnsupportedFormat(_))));
}

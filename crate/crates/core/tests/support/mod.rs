#![allow(dead_code)]

use lopdf::content::{Content, Operation};
use lopdf::{dictionary, Document, Object, Stream};

/// A generated PDF plus the text extraction must recover from each page.
pub struct PdfFixture {
    pub bytes: Vec<u8>,
    pub page_texts: Vec<String>,
}

/// Build a text-layer PDF with one text object per line. Lines must be
/// printable ASCII.
pub fn pdf_with_pages(pages: &[&[&str]]) -> PdfFixture {
    let mut doc = Document::with_version("1.5");
    let pages_id = doc.new_object_id();
    let font_id = doc.add_object(dictionary! {
        "Type" => "Font",
        "Subtype" => "Type1",
        "BaseFont" => "Courier",
    });
    let resources_id = doc.add_object(dictionary! {
        "Font" => dictionary! { "F1" => font_id },
    });
    let mut kids = Vec::new();
    let mut page_texts = Vec::new();
    for lines in pages {
        let mut ops = Vec::new();
        let mut text = String::new();
        for (i, line) in lines.iter().enumerate() {
            assert!(line.bytes().all(|b| (0x20..0x7f).contains(&b)), "fixture lines are ASCII");
            ops.push(Operation::new("BT", vec![]));
            ops.push(Operation::new("Tf", vec!["F1".into(), 11.into()]));
            ops.push(Operation::new("Td", vec![50.into(), (800 - 14 * i as i64).into()]));
            ops.push(Operation::new("Tj", vec![Object::string_literal(*line)]));
            ops.push(Operation::new("ET", vec![]));
            text.push_str(line);
            text.push('\n');
        }
        let content = Content { operations: ops };
        let content_id = doc.add_object(Stream::new(dictionary! {}, content.encode().unwrap()));
        let page_id = doc.add_object(dictionary! {
            "Type" => "Page",
            "Parent" => pages_id,
            "Contents" => content_id,
        });
        kids.push(page_id.into());
        page_texts.push(text);
    }
    let count = kids.len() as i64;
    doc.objects.insert(
        pages_id,
        Object::Dictionary(dictionary! {
            "Type" => "Pages",
            "Kids" => kids,
            "Count" => count,
            "Resources" => resources_id,
            "MediaBox" => vec![0.into(), 0.into(), 595.into(), 842.into()],
        }),
    );
    let catalog_id = doc.add_object(dictionary! {
        "Type" => "Catalog",
        "Pages" => pages_id,
    });
    doc.trailer.set("Root", catalog_id);
    let mut bytes = Vec::new();
    doc.save_to(&mut bytes).unwrap();
    PdfFixture { bytes, page_texts }
}

/// Every file below `root` whose content contains a `window`-char slice
/// of `secret`. Returns (path, offending slice).
pub fn scan_for_leaks(root: &std::path::Path, secret: &str, window: usize) -> Vec<(std::path::PathBuf, String)> {
    let chars: Vec<char> = secret.chars().collect();
    let windows: std::collections::HashSet<String> = chars
        .windows(window)
        .map(|w| w.iter().collect())
        .collect();
    let mut hits = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&dir) else { continue };
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let content = String::from_utf8_lossy(&std::fs::read(&path).unwrap()).to_string();
            let cs: Vec<char> = content.chars().collect();
            if let Some(w) = cs.windows(window).map(|w| w.iter().collect::<String>()).find(|w| windows.contains(w)) {
                hits.push((path, w));
            }
        }
    }
    hits
}

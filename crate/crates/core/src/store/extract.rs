//! Turning uploaded bytes into per-page text.

use serde::{Deserialize, Serialize};

use super::StoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    PlainText,
    Pdf,
}

impl SourceKind {
    /// Guess from the leading bytes; anything without a PDF header is text.
    pub fn sniff(bytes: &[u8]) -> SourceKind {
        let head = &bytes[..bytes.len().min(1024)];
        if head.windows(5).any(|w| w == b"%PDF-") {
            SourceKind::Pdf
        } else {
            SourceKind::PlainText
        }
    }
}

impl std::str::FromStr for SourceKind {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "plain_text" | "text" | "txt" | "plain" => Ok(SourceKind::PlainText),
            "pdf" => Ok(SourceKind::Pdf),
            other => Err(StoreError::UnsupportedFormat(format!(
                "unknown source kind `{other}`"
            ))),
        }
    }
}

/// Text of each page, in page order. Concatenating the pages yields the
/// manuscript's raw text.
pub trait TextExtractor: Send + Sync {
    fn extract(&self, bytes: &[u8]) -> Result<Vec<String>, StoreError>;
}

/// UTF-8 text; form feeds act as page separators and stay with the page
/// they terminate.
#[derive(Debug, Default, Clone, Copy)]
pub struct PlainTextExtractor;

impl TextExtractor for PlainTextExtractor {
    fn extract(&self, bytes: &[u8]) -> Result<Vec<String>, StoreError> {
        let bytes = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
        let text = std::str::from_utf8(bytes)
            .map_err(|e| StoreError::UnsupportedFormat(format!("text is not valid UTF-8: {e}")))?;
        let pages: Vec<String> = text.split_inclusive('\u{0C}').map(str::to_string).collect();
        Ok(if pages.is_empty() { vec![String::new()] } else { pages })
    }
}

/// Text-layer extraction through `lopdf`. Documents whose pages yield no
/// visible text are rejected; there is no OCR fallback.
#[derive(Debug, Default, Clone, Copy)]
pub struct PdfExtractor;

impl TextExtractor for PdfExtractor {
    fn extract(&self, bytes: &[u8]) -> Result<Vec<String>, StoreError> {
        let doc = lopdf::Document::load_mem(bytes)
            .map_err(|e| StoreError::UnsupportedFormat(format!("cannot read PDF: {e}")))?;
        let mut pages = Vec::new();
        for (number, _) in doc.get_pages() {
            let text = match doc.extract_text(&[number]) {
                Ok(text) => text,
                Err(e) => {
                    tracing::warn!(page = number, error = %e, "page text extraction failed");
                    String::new()
                }
            };
            pages.push(text);
        }
        if pages.iter().all(|p| p.trim().is_empty()) {
            return Err(StoreError::UnsupportedFormat(
                "PDF has no extractable text layer".into(),
            ));
        }
        Ok(pages)
    }
}

pub fn extractor_for(kind: SourceKind) -> &'static dyn TextExtractor {
    match kind {
        SourceKind::PlainText => &PlainTextExtractor,
        SourceKind::Pdf => &PdfExtractor,
    }
}

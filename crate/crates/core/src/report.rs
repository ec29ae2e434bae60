//! Report assembly helpers and the standalone HTML export.

use std::fmt::Write as _;

use chrono::SecondsFormat;
use quick_xml::escape::escape;

use crate::criteria::Color;
use crate::model::{Annotation, AnnotationFlag, ReportStructure, Review, ReviewReport};

const NEUTRAL: &str = "#9e9e9e";

const STYLE: &str = "
body { font-family: Georgia, 'Times New Roman', serif; max-width: 48em; margin: 2em auto; padding: 0 1em; color: #212121; line-height: 1.5; }
h1 { font-size: 1.6em; margin-bottom: 0.2em; }
h2 { font-size: 1.25em; padding-left: 0.5em; border-left: 0.5em solid; }
section { margin: 2em 0; }
blockquote { margin: 1em 0; padding: 0.5em 1em; border-left: 0.4em solid; background: #fafafa; }
blockquote p { margin: 0; }
blockquote footer { margin-top: 0.3em; font-size: 0.85em; color: #616161; }
.meta { color: #757575; font-size: 0.9em; }
.deemphasized { opacity: 0.55; }
";

/// Block quote lines appended to a section body, one per annotation.
pub fn quote_lines(annotations: &[&Annotation]) -> String {
    let mut out = String::new();
    for a in annotations {
        let place = match a.anchor.page {
            Some(p) => format!("p. {p}"),
            None => "unanchored".to_string(),
        };
        let _ = writeln!(out, "> \"{}\" ({place})", a.excerpt);
    }
    out
}

/// Section body: prose, a blank line, then the quoted excerpts.
pub fn section_body(prose: &str, annotations: &[&Annotation]) -> String {
    let prose = prose.trim();
    if annotations.is_empty() {
        return format!("{prose}\n");
    }
    format!("{prose}\n\n{}", quote_lines(annotations))
}

fn prose_paragraphs(body: &str) -> Vec<String> {
    body.split("\n\n")
        .map(|p| {
            p.lines()
                .filter(|l| !l.starts_with("> "))
                .collect::<Vec<_>>()
                .join("\n")
        })
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .collect()
}

fn color_of(review: &Review, criterion: &str) -> String {
    review
        .criterion_review(criterion)
        .map(|cr| cr.criterion.color.to_string())
        .unwrap_or_else(|_| NEUTRAL.to_string())
}

/// Self-contained XHTML document for a built report.
pub fn render_html(review: &Review, report: &ReviewReport) -> String {
    let all = review.all_annotations();
    let find = |id: &str| all.iter().find(|a| a.id == id).copied();

    let mut out = String::new();
    out.push_str("<!DOCTYPE html>\n<html xmlns=\"http://www.w3.org/1999/xhtml\" lang=\"en\">\n<head>\n");
    out.push_str("<meta charset=\"utf-8\"/>\n<title>Review report</title>\n<style>");
    out.push_str(STYLE);
    out.push_str("</style>\n</head>\n<body>\n<h1>Review report</h1>\n");
    let structure = match report.structure {
        ReportStructure::ByCriteria => "by criteria",
        ReportStructure::BySentiment => "by sentiment",
    };
    let _ = writeln!(
        out,
        "<p class=\"meta\">Structured {structure}. Generated <time>{}</time>.</p>",
        report.generated_at.to_rfc3339_opts(SecondsFormat::Secs, true)
    );

    for (i, section) in report.sections.iter().enumerate() {
        let accent = match report.structure {
            ReportStructure::ByCriteria => color_of(review, &section.heading),
            ReportStructure::BySentiment => NEUTRAL.to_string(),
        };
        let heading = escape(section.heading.as_str());
        let _ = writeln!(out, "<section id=\"section-{}\">", i + 1);
        let _ = writeln!(
            out,
            "<h2 style=\"border-left-color: {accent}\" data-color=\"{accent}\">{heading}</h2>"
        );
        for p in prose_paragraphs(&section.body) {
            let _ = writeln!(out, "<p>{}</p>", escape(p.as_str()).replace('\n', "<br/>"));
        }
        for id in &section.cited_annotation_ids {
            let Some(a) = find(id) else { continue };
            let color = color_of(review, &a.criterion_name);
            let class = if a.flags.contains(&AnnotationFlag::Deemphasized) {
                " class=\"deemphasized\""
            } else {
                ""
            };
            let page = a.anchor.page.map(|p| format!("p. {p}")).unwrap_or_else(|| "unanchored".into());
            let _ = writeln!(
                out,
                "<blockquote id=\"{}\"{class} style=\"border-left-color: {color}\" data-color=\"{color}\" data-criterion=\"{}\"><p>{}</p><footer>{}, {page}, {}</footer></blockquote>",
                escape(a.id.as_str()),
                escape(a.criterion_name.as_str()),
                escape(a.excerpt.as_str()),
                escape(a.criterion_name.as_str()),
                a.sentiment,
            );
        }
        out.push_str("</section>\n");
    }
    out.push_str("</body>\n</html>\n");
    out
}

/// Colors a rendered report uses, keyed by what they decorate:
/// `("h2", heading)` or `("blockquote", criterion)`.
pub fn html_colors(html: &str) -> Result<Vec<(String, String, Color)>, String> {
    use quick_xml::events::Event;
    use quick_xml::Reader;

    let mut reader = Reader::from_str(html);
    reader.config_mut().check_end_names = true;
    let mut out = Vec::new();
    let mut pending: Option<(String, Color)> = None;
    let mut text = String::new();
    loop {
        match reader.read_event().map_err(|e| e.to_string())? {
            Event::Start(e) => {
                let tag = String::from_utf8_lossy(e.name().as_ref()).to_string();
                let mut color = None;
                let mut criterion = None;
                for attr in e.attributes() {
                    let attr = attr.map_err(|e| e.to_string())?;
                    let value = attr.unescape_value().map_err(|e| e.to_string())?.to_string();
                    match attr.key.as_ref() {
                        b"data-color" => color = Some(value.parse::<Color>().map_err(|e| e.to_string())?),
                        b"data-criterion" => criterion = Some(value),
                        _ => {}
                    }
                }
                if let Some(c) = color {
                    match criterion {
                        Some(name) => out.push((tag, name, c)),
                        None => {
                            pending = Some((tag, c));
                            text.clear();
                        }
                    }
                }
            }
            Event::Text(t) if pending.is_some() => {
                text.push_str(&t.unescape().map_err(|e| e.to_string())?);
            }
            Event::End(_) => {
                if let Some((tag, c)) = pending.take() {
                    out.push((tag, text.trim().to_string(), c));
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(out)
}

mod common;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use serde_json::json;

use common::{call, harness, multipart, send, upload};
use marginalia_core::gateway::{GatewayError, MockBackend};
use marginalia_core::prompt::TemplateName;

const MANUSCRIPT: &str = "We study collaborative reviewing with language models in the loop.\n\
The evaluation involved nine reviewers who used the tool for one paper.\n\
Participants valued the highlights but asked for more control over prompts.\n\
Future work targets authors who want a preliminary assessment of drafts.\n";

#[tokio::test]
async fn upload_and_read_text() {
    let tmp = tempfile::tempdir().unwrap();
    let h = harness(tmp.path());
    let id = upload(&h.app, MANUSCRIPT.as_bytes()).await;
    let r = call(&h.app, Method::GET, &format!("/sessions/{id}/text"), None).await;
    assert_eq!(r.status, StatusCode::OK);
    let v = r.json();
    assert_eq!(v["raw_text"], MANUSCRIPT);
    assert_eq!(v["page_map"][0]["page"], 1);
}

#[tokio::test]
async fn upload_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let h = harness(tmp.path());
    let r = send(&h.app, multipart(&[("manuscript", b"")])).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.error_code(), "EmptyInput");

    let r = send(&h.app, multipart(&[("manuscript", b"%PDF-1.4 not really")])).await;
    assert_eq!(r.status, StatusCode::UNSUPPORTED_MEDIA_TYPE);
    assert_eq!(r.error_code(), "UnsupportedFormat");

    let r = send(&h.app, multipart(&[("other", b"x")])).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let r = send(&h.app, multipart(&[("manuscript", b"hello"), ("source_kind", b"docx")])).await;
    assert_eq!(r.status, StatusCode::UNSUPPORTED_MEDIA_TYPE);
}

#[tokio::test]
async fn unknown_session_is_404() {
    let tmp = tempfile::tempdir().unwrap();
    let h = harness(tmp.path());
    for (m, uri) in [
        (Method::GET, "/sessions/nope/text"),
        (Method::GET, "/sessions/nope/annotations"),
        (Method::DELETE, "/sessions/nope"),
        (Method::GET, "/sessions/nope/report.html"),
    ] {
        let r = call(&h.app, m, uri, None).await;
        assert_eq!(r.status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(r.error_code(), "UnknownSession");
    }
}

#[tokio::test]
async fn criteria_round_trip_in_both_formats() {
    let tmp = tempfile::tempdir().unwrap();
    let h = harness(tmp.path());
    let id = upload(&h.app, MANUSCRIPT.as_bytes()).await;

    let r = call(&h.app, Method::GET, &format!("/sessions/{id}/criteria"), None).await;
    let names: Vec<_> = r.json()["criteria"].as_array().unwrap().iter().map(|c| c["name"].clone()).collect();
    assert_eq!(names, vec![json!("Contribution"), json!("Originality"), json!("Relevance"), json!("Rigor")]);

    let xml = r##"<criteria><criterion name="Clarity" color="#90caf9"><description>Is it readable?</description></criterion></criteria>"##;
    let req = Request::builder()
        .method(Method::PUT)
        .uri(format!("/sessions/{id}/criteria"))
        .header(header::CONTENT_TYPE, "application/xml")
        .body(Body::from(xml))
        .unwrap();
    let r = send(&h.app, req).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    assert_eq!(r.json()["criteria"][0]["name"], "Clarity");

    let req = Request::builder()
        .uri(format!("/sessions/{id}/criteria"))
        .header(header::ACCEPT, "application/xml")
        .body(Body::empty())
        .unwrap();
    let r = send(&h.app, req).await;
    assert!(r.content_type.contains("xml"));
    assert!(r.text().contains("Clarity"));

    let body = json!({"criteria": [{"name": "A", "description": "a", "color": "#90caf9"},
                                    {"name": "A", "description": "b", "color": "#a5d6a7"}]});
    let r = call(&h.app, Method::PUT, &format!("/sessions/{id}/criteria"), Some(body)).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.error_code(), "DuplicateName");

    let r = call(&h.app, Method::PUT, &format!("/sessions/{id}/criteria"), Some(json!({"criteria": []}))).await;
    assert_eq!(r.error_code(), "EmptyCriteria");
}

#[tokio::test]
async fn annotate_then_edit_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let h = harness(tmp.path());
    let id = upload(&h.app, MANUSCRIPT.as_bytes()).await;
    let base = format!("/sessions/{id}");

    let r = call(&h.app, Method::POST, &format!("{base}/criteria/Rigor/annotate"), None).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    let anns = r.json()["annotations"].as_array().unwrap().clone();
    assert_eq!(anns.len(), 3);
    for a in &anns {
        assert_eq!(a["origin"], "llm");
        assert_eq!(a["anchor"]["kind"], "exact");
        let (s, e) = (a["anchor"]["start"].as_u64().unwrap() as usize, a["anchor"]["end"].as_u64().unwrap() as usize);
        let slice: String = MANUSCRIPT.chars().skip(s).take(e - s).collect();
        assert_eq!(slice, a["excerpt"].as_str().unwrap());
    }

    let r = call(&h.app, Method::POST, &format!("{base}/criteria/Relevance/annotate"), Some(json!({"num_excerpts": 1}))).await;
    assert_eq!(r.json()["annotations"].as_array().unwrap().len(), 1);

    let r = call(&h.app, Method::POST, &format!("{base}/criteria/Nope/annotate"), None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(r.error_code(), "UnknownCriterion");

    let aid = anns[0]["id"].as_str().unwrap();
    let r = call(&h.app, Method::PATCH, &format!("{base}/annotations/{aid}"), Some(json!({"sentiment": "weakness"}))).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    assert_eq!(r.json()["sentiment"], "weakness");

    let r = call(&h.app, Method::PATCH, &format!("{base}/annotations/{aid}"), Some(json!({"relevance_feedback": "irrelevant"}))).await;
    assert!(r.json()["flags"].as_array().unwrap().contains(&json!("deemphasized")));

    let r = call(&h.app, Method::PATCH, &format!("{base}/annotations/zzz"), Some(json!({"sentiment": "strength"}))).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    let r = call(&h.app, Method::PATCH, &format!("{base}/annotations/{aid}"), Some(json!({"colour": "red"}))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let r = call(&h.app, Method::POST, &format!("{base}/annotations/{aid}/comments"), Some(json!({"comment": "cite related work"}))).await;
    assert_eq!(r.json()["comments"].as_array().unwrap().len(), 1);

    let r = call(&h.app, Method::POST, &format!("{base}/annotations/{aid}/comments"), Some(json!({"comment": "  "}))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);

    let r = call(&h.app, Method::POST, &format!("{base}/annotations/{aid}/followup"), Some(json!({"kind": "factcheck"}))).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    let answer = r.json()["answer"].as_str().unwrap().to_string();
    let calls = h.mock.calls();
    let r = call(
        &h.app,
        Method::POST,
        &format!("{base}/annotations/{aid}/followup"),
        Some(json!({"kind": "factcheck", "answer": answer})),
    )
    .await;
    assert_eq!(r.json()["annotation"]["saved_outputs"].as_array().unwrap().len(), 1);
    assert_eq!(h.mock.calls(), calls, "saving makes no model call");

    let r = call(&h.app, Method::POST, &format!("{base}/annotations/{aid}/followup"), Some(json!({"kind": "clarify"}))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.error_code(), "MissingQuestion");

    let r = call(
        &h.app,
        Method::POST,
        &format!("{base}/annotations"),
        Some(json!({"criterion": "Contribution", "excerpt": "preliminary assessment of drafts", "sentiment": "strength"})),
    )
    .await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.text());
    assert_eq!(r.json()["origin"], "human");

    let r = call(
        &h.app,
        Method::POST,
        &format!("{base}/annotations"),
        Some(json!({"criterion": "Contribution", "start": 3, "end": 8})),
    )
    .await;
    assert_eq!(r.status, StatusCode::CREATED);
    assert_eq!(r.json()["excerpt"], "study");

    let r = call(
        &h.app,
        Method::POST,
        &format!("{base}/annotations"),
        Some(json!({"criterion": "Contribution", "excerpt": "not in the text at all"})),
    )
    .await;
    assert_eq!(r.error_code(), "HumanAnchorNotExact");

    let r = call(&h.app, Method::GET, &format!("{base}/criteria/Rigor/recap"), None).await;
    assert!(r.json()["rendered"].as_str().unwrap().contains("cite related work"));

    let r = call(&h.app, Method::POST, &format!("{base}/criteria/Originality/compile"), None).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.error_code(), "NoAnnotations");

    let r = call(&h.app, Method::POST, &format!("{base}/criteria/Rigor/compile"), None).await;
    assert_eq!(r.status, StatusCode::OK);
    let r = call(&h.app, Method::POST, &format!("{base}/criteria/Rigor/viewpoints"), None).await;
    assert!(!r.json()["viewpoints"].as_str().unwrap().is_empty());

    let r = call(&h.app, Method::GET, &format!("{base}/report.html"), None).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.error_code(), "NoReport");

    let r = call(&h.app, Method::POST, &format!("{base}/report"), Some(json!({"structure": "by_criteria"}))).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    let headings: Vec<_> = r.json()["sections"].as_array().unwrap().iter().map(|s| s["heading"].clone()).collect();
    assert_eq!(headings, vec![json!("Contribution"), json!("Relevance"), json!("Rigor")]);

    let r = call(&h.app, Method::GET, &format!("{base}/report.html"), None).await;
    assert!(r.content_type.starts_with("text/html"));
    assert!(marginalia_core::report::html_colors(&r.text()).is_ok());

    let r = call(&h.app, Method::POST, &format!("{base}/report"), Some(json!({"structure": "sideways"}))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn criteria_change_cascades() {
    let tmp = tempfile::tempdir().unwrap();
    let h = harness(tmp.path());
    let id = upload(&h.app, MANUSCRIPT.as_bytes()).await;
    let base = format!("/sessions/{id}");
    call(&h.app, Method::POST, &format!("{base}/criteria/Rigor/annotate"), None).await;
    let body = json!({"criteria": [{"name": "Contribution", "description": "What is new?", "color": "#90caf9"}]});
    let r = call(&h.app, Method::PUT, &format!("{base}/criteria"), Some(body)).await;
    assert_eq!(r.json()["removed_annotation_ids"], json!(["a1", "a2", "a3"]));
    let r = call(&h.app, Method::GET, &format!("{base}/annotations"), None).await;
    assert!(r.json()["annotations"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn gateway_failures_map_to_gateway_statuses() {
    let tmp = tempfile::tempdir().unwrap();
    let mock = MockBackend::new().with_fixture(TemplateName::Annotate, Some("Rigor"), "I cannot help with that.");
    mock.push_error(GatewayError::AuthFailure("bad key".into()));
    let h = common::harness_with(tmp.path(), mock);
    let id = upload(&h.app, MANUSCRIPT.as_bytes()).await;
    let r = call(&h.app, Method::POST, &format!("/sessions/{id}/criteria/Rigor/annotate"), None).await;
    assert_eq!(r.status, StatusCode::BAD_GATEWAY);
    assert_eq!(r.error_code(), "AuthFailure");
    let r = call(&h.app, Method::POST, &format!("/sessions/{id}/criteria/Rigor/annotate"), None).await;
    assert_eq!(r.status, StatusCode::BAD_GATEWAY);
    assert_eq!(r.error_code(), "UnparseableResponse");
}

#[tokio::test]
async fn ending_a_session_removes_it() {
    let tmp = tempfile::tempdir().unwrap();
    let h = harness(tmp.path());
    let id = upload(&h.app, MANUSCRIPT.as_bytes()).await;
    let r = call(&h.app, Method::DELETE, &format!("/sessions/{id}"), None).await;
    assert_eq!(r.status, StatusCode::NO_CONTENT);
    assert!(!tmp.path().join(&id).exists());
    let r = call(&h.app, Method::GET, &format!("/sessions/{id}/text"), None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

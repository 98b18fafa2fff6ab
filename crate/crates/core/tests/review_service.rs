use std::sync::{Arc, RwLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use pii_forge::corpus::{conll_to_string, AnnotatedSentence, Corpus, EntitySpan, TagClass::*};
use pii_forge::infobox::PiiRecord;
use pii_forge::review::server::router;
use pii_forge::review::{Action, ReviewDecision, ReviewSession, ReviewState, SpanInput};

fn machine() -> Corpus {
    let s = |id: &str, page: &str, text: &str, spans: &[EntitySpan]| AnnotatedSentence::from_spans(id, page, text, spans).unwrap();
    Corpus::new(
        "m",
        vec![
            s("a-0", "a", "Her son Troy lives in Troy.", &[EntitySpan::new(2, 3, CH), EntitySpan::new(5, 6, CH)]),
            s("b-0", "b", "Jane Doe married Bob Ray in 2001.", &[EntitySpan::new(0, 2, SP)]),
            s("b-1", "b", "She studied at Yale.", &[]),
            s("b-2", "b", "Born 3 May 1950.", &[EntitySpan::new(1, 4, BD)]),
        ],
    )
    .unwrap()
}

fn records() -> Vec<PiiRecord> {
    let mut a = PiiRecord::new("a");
    a.push(CH, "Troy");
    let mut b = PiiRecord::new("b");
    b.push(SP, "Jane Doe");
    b.push(SP, "Bob Ray");
    b.push(ED, "Yale University");
    vec![a, b]
}

fn decision(id: u64, sentence: &str, action: Action, target: Option<&str>, span: Option<(usize, usize, &str)>) -> ReviewDecision {
    ReviewDecision {
        decision_id: id,
        sentence_id: sentence.into(),
        action,
        target: target.map(String::from),
        span: span.map(|(start, end, tag)| SpanInput { start, end, tag: tag.into() }),
        annotator: "t".into(),
        timestamp: String::new(),
    }
}

#[test]
fn mixed_decisions_export_matches_hand_built_conll() {
    let mut state = ReviewState::new(&machine(), &records());
    for d in [
        // "Troy" the city is not a child
        decision(1, "a-0", Action::Correct, Some("m1"), Some((5, 6, "O"))),
        decision(2, "a-0", Action::Confirm, Some("m0"), None),
        decision(3, "b-0", Action::Add, None, Some((3, 5, "SP"))),
        decision(4, "b-0", Action::Confirm, None, None),
        decision(5, "b-1", Action::Add, None, Some((3, 4, "ED"))),
        decision(6, "b-2", Action::Correct, Some("m0"), Some((1, 3, "BD"))),
    ] {
        state.apply(&d).unwrap();
    }
    let expected = "\
#page=a
#sentence=a-0
#text=Her son Troy lives in Troy.
Her\tO
son\tO
Troy\tB_CH
lives\tO
in\tO
Troy\tO
.\tO

#page=b
#sentence=b-0
#text=Jane Doe married Bob Ray in 2001.
Jane\tB_SP
Doe\tI_SP
married\tO
Bob\tB_SP
Ray\tI_SP
in\tO
2001\tO
.\tO

#sentence=b-1
#text=She studied at Yale.
She\tO
studied\tO
at\tO
Yale\tB_ED
.\tO

#sentence=b-2
#text=Born 3 May 1950.
Born\tO
3\tB_BD
May\tI_BD
1950\tO
.\tO

";
    assert_eq!(conll_to_string(&state.export_gold(false)).unwrap(), expected);
    // no entity is left pending anywhere
    let done: Vec<String> = state.export_gold(true).sentences.into_iter().map(|s| s.sentence_id).collect();
    assert_eq!(done, ["a-0", "b-0", "b-1", "b-2"]);
    let fresh = ReviewState::new(&machine(), &records());
    assert!(fresh.export_gold(true).sentences.is_empty());
}

#[test]
fn rejected_entity_can_be_restored_unless_space_was_taken() {
    let mut state = ReviewState::new(&machine(), &records());
    state.apply(&decision(1, "b-2", Action::Reject, Some("m0"), None)).unwrap();
    state.apply(&decision(2, "b-2", Action::Confirm, Some("m0"), None)).unwrap();
    assert_eq!(state.sentence("b-2").unwrap().gold_spans(), [EntitySpan::new(1, 4, BD)]);
    state.apply(&decision(3, "b-2", Action::Reject, Some("m0"), None)).unwrap();
    state.apply(&decision(4, "b-2", Action::Add, None, Some((2, 3, "BD")))).unwrap();
    assert!(state.apply(&decision(5, "b-2", Action::Confirm, Some("m0"), None)).is_err());
}

fn app(log: &std::path::Path) -> axum::Router {
    router(Arc::new(RwLock::new(ReviewSession::open(&machine(), &records(), log).unwrap())))
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value, String) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    (status, serde_json::from_str(&text).unwrap_or(Value::Null), text)
}

#[tokio::test]
async fn http_api_contract() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    let app = app(&log);

    // pages a and b both carry two machine entities; ties keep corpus order
    let (st, next, _) = call(&app, "GET", "/api/next?annotator=ann1", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(next["annotator"], "ann1");
    assert_eq!(next["sentence"]["sentence_id"], "a-0");
    assert_eq!(next["sentence"]["entities"].as_array().unwrap().len(), 2);
    assert_eq!(next["sentence"]["infobox"]["CH"], json!(["Troy"]));
    assert_eq!(next["sentence"]["tokens"][2]["text"], "Troy");
    assert_eq!(next["progress"]["done"], 0);

    let (st, body, _) = call(&app, "POST", "/api/decision", Some(json!({"sentence_id": "a-0", "action": "CONFIRM", "annotator": "ann1"}))).await;
    assert_eq!(st, StatusCode::OK, "{body}");
    assert_eq!(body["decision_id"], 1);
    assert_eq!(body["sentence"]["status"], "done");

    let (_, next, _) = call(&app, "GET", "/api/next", None).await;
    assert_eq!(next["progress"]["done"], 1);
    assert_eq!(next["sentence"]["sentence_id"], "b-0");

    let (st, body, _) = call(&app, "POST", "/api/decision", Some(json!({"sentence_id": "b-0", "action": "ADD", "span": {"start": 6, "end": 40, "tag": "SP"}}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("outside"));

    let (st, _, _) = call(&app, "POST", "/api/decision", Some(json!({"sentence_id": "b-0", "action": "ADD", "span": {"start": 1, "end": 3, "tag": "SP"}}))).await;
    assert_eq!(st, StatusCode::CONFLICT);
    let (st, _, _) = call(&app, "POST", "/api/decision", Some(json!({"sentence_id": "zz", "action": "CONFIRM"}))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _, _) = call(&app, "POST", "/api/decision", Some(json!({"sentence_id": "b-0", "action": "REJECT", "target": "m9"}))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _, _) = call(&app, "POST", "/api/decision", Some(json!({"sentence_id": "b-0", "action": "EXPLODE"}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, _, _) = call(&app, "GET", "/api/sentence/nope", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);

    let (st, body, _) = call(&app, "POST", "/api/decision", Some(json!({"sentence_id": "b-0", "action": "ADD", "span": {"start": 3, "end": 5, "tag": "SP"}}))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["decision_id"], 2, "rejected requests must not consume ids");

    let (st, s, _) = call(&app, "GET", "/api/sentence/b-0", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(s["entities"][1]["id"], "a2");

    let (_, _, all) = call(&app, "GET", "/api/export", None).await;
    let (_, _, done) = call(&app, "GET", "/api/export?only_done=true", None).await;
    assert_eq!(all.matches("#sentence=").count(), 4);
    assert_eq!(done.matches("#sentence=").count(), 1);
    assert!(done.contains("#sentence=a-0"));
    assert!(all.contains("Bob\tB_SP\nRay\tI_SP"));

    let (_, p, _) = call(&app, "GET", "/api/progress", None).await;
    assert_eq!(p, json!({"sentences": 4, "done": 1, "pending": 3, "decisions": 2}));

    // restart: a fresh session on the same log sees the same state
    drop(app);
    let again = self::app(&log);
    let (_, p2, _) = call(&again, "GET", "/api/progress", None).await;
    assert_eq!(p2, p);
    let (_, s2, _) = call(&again, "GET", "/api/sentence/b-0", None).await;
    assert_eq!(s2["entities"], s["entities"]);
    let (_, body, _) = call(&again, "POST", "/api/decision", Some(json!({"sentence_id": "b-2", "action": "REJECT", "target": "m0"}))).await;
    assert_eq!(body["decision_id"], 3);
}

#[test]
fn corrupt_log_reports_last_good_offset() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    let good = serde_json::to_string(&decision(1, "a-0", Action::Confirm, None, None)).unwrap() + "\n";
    std::fs::write(&log, format!("{good}{{\"decision_id\": 2, \"sent")).unwrap();
    let err = ReviewSession::open(&machine(), &records(), &log).unwrap_err().to_string();
    assert!(err.contains(&format!("offset {}", good.len())), "{err}");
}

mod common;

use axum::http::StatusCode;
use common::*;
use serde_json::json;

/// Drives a session through feedback and one retraining round, then
/// rebuilds the service from disk and compares every read.
#[tokio::test]
async fn restart_reproduces_explanations_and_feedback() {
    let f = fixture();
    let app = f.app();
    let id = create_from_model(&app, &f).await;
    let (_, page) = call_json(&app, "GET", &format!("/sessions/{id}/instances"), None).await;
    let item = &page["items"][1];
    let fb = format!("/sessions/{id}/feedback");
    for body in [
        json!({"scope": "task", "op": "remove", "word": "decoy"}),
        json!({"scope": "instance", "op": "add", "word": item["tokens"][0], "example_id": item["example_id"]}),
    ] {
        let (status, _) = call_json(&app, "POST", &fb, Some(body)).await;
        assert_eq!(status, StatusCode::OK);
    }
    call_json(&app, "POST", &format!("/sessions/{id}/retrain"), None).await;
    wait_idle(&app, &id).await;
    let (_, page) = call_json(&app, "GET", &format!("/sessions/{id}/instances"), None).await;
    let example = page["items"][0]["example_id"].clone();
    let word = page["items"][0]["tokens"][1].clone();
    call_json(&app, "POST", &fb, Some(json!({"scope": "instance", "op": "remove", "word": word, "example_id": example}))).await;

    let reads = [
        format!("/sessions/{id}/instances?page=0"),
        format!("/sessions/{id}/instances?page=3"),
        format!("/sessions/{id}/task-explanation?top_k=50"),
        format!("/sessions/{id}/feedback"),
        format!("/sessions/{id}/export"),
        format!("/sessions/{id}"),
    ];
    let mut before = Vec::new();
    for uri in &reads {
        before.push(call(&app, "GET", uri, None).await);
    }
    drop(app);

    // Simulate a crash in the middle of committing round 2: the archive is
    // on disk but session.json still says round 1.
    let session_dir = f.data_dir().join("sessions").join(&id);
    std::fs::copy(session_dir.join("model_round_1.bin"), session_dir.join("model_round_2.bin")).unwrap();

    let restarted = f.app();
    for (uri, expected) in reads.iter().zip(&before) {
        let got = call(&restarted, "GET", uri, None).await;
        assert_eq!(got.0, StatusCode::OK, "{uri}");
        assert_eq!(&got, expected, "{uri}");
    }
    assert!(!session_dir.join("model_round_2.bin").exists());
    let (_, status) = call_json(&restarted, "GET", &format!("/sessions/{id}/status"), None).await;
    assert_eq!(status["round"], 1);
    assert_eq!(status["live_ops"], 3);

    // Timestamps continue after the recovered log.
    let (_, ack) = call_json(&restarted, "POST", &fb, Some(json!({"scope": "task", "op": "reset", "word": "decoy"}))).await;
    assert_eq!(ack["op"]["timestamp"], 3);
}

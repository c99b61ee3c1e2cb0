use std::net::SocketAddr;
use std::sync::Arc;

use irp::domain::{validate_query, RawInteraction};
use irp::model::{FeatureMask, ModelConfig, ModelParams, Predictor};
use irp::service::{self, PredictResponse, ServiceState, MAX_BODY_BYTES};
use irp::summarize::SummarizerConfig;
use irp::text::Vocabulary;

const RECORD: &str = r#"{"query": {"text": "find me a red dress", "intent": "product_search"},
 "products": [{"title": "acme red dress", "brand": "acme", "color": "red",
   "reviews": {"count": 12, "rating": 4.2}, "price": 20.0, "type": "dress"}]}"#;

fn predictor() -> Predictor {
    let vocab = Vocabulary::with_tokens(["find", "me", "a", "red", "blue", "dress", "acme", "product_search"]).unwrap();
    let config = ModelConfig {
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        max_len: 64,
        ..ModelConfig::new(vocab.len())
    };
    Predictor {
        params: ModelParams::init(config, 11).unwrap(),
        vocab,
        features: FeatureMask::full(),
        summarizer: SummarizerConfig::default(),
        threshold: 0.4,
    }
}

async fn start() -> (SocketAddr, Arc<ServiceState>) {
    let state = Arc::new(ServiceState {
        predictor: predictor(),
        model_version: "irp-test".into(),
    });
    let (addr, _) = service::spawn("127.0.0.1:0".parse().unwrap(), state.clone()).await.unwrap();
    (addr, state)
}

fn library(state: &ServiceState, body: &str) -> f64 {
    let q = validate_query(RawInteraction::from_json(body).unwrap(), true).unwrap();
    state.predictor.probability(&q).unwrap()
}

#[tokio::test]
async fn healthz_reports_the_model() {
    let (addr, _) = start().await;
    let v: serde_json::Value = reqwest::get(format!("http://{addr}/healthz")).await.unwrap().json().await.unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["model_version"], "irp-test");
}

#[tokio::test]
async fn predict_matches_the_library() {
    let (addr, state) = start().await;
    let resp = reqwest::Client::new()
        .post(format!("http://{addr}/predict"))
        .body(RECORD)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    let r: PredictResponse = resp.json().await.unwrap();
    let p = library(&state, RECORD);
    assert_eq!(r.probability.to_bits(), p.to_bits());
    assert_eq!(r.decision, u8::from(p >= 0.4));
    assert_eq!(r.threshold, 0.4);
    assert_eq!(r.model_version, "irp-test");
}

#[tokio::test]
async fn label_is_ignored() {
    let (addr, _) = start().await;
    let client = reqwest::Client::new();
    let labelled = RECORD.replacen('{', r#"{"label": 1, "#, 1);
    let mut probs = Vec::new();
    for body in [RECORD.to_string(), labelled] {
        let r: PredictResponse = client
            .post(format!("http://{addr}/predict"))
            .body(body)
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        probs.push(r.probability.to_bits());
    }
    assert_eq!(probs[0], probs[1]);
}

#[tokio::test]
async fn malformed_requests_are_400() {
    let (addr, _) = start().await;
    let client = reqwest::Client::new();
    for (body, needle) in [
        ("{not json", "malformed JSON"),
        (r#"{"query": {"text": "red dress"}, "products": []}"#, "query.intent"),
        (r#"{"query": {"text": "red dress", "intent": "browse"}}"#, "products"),
        (r#"{"query": {"text": 7, "intent": "browse"}, "products": []}"#, "query.text"),
    ] {
        let resp = client.post(format!("http://{addr}/predict")).body(body).send().await.unwrap();
        assert_eq!(resp.status(), 400, "{body}");
        let v: serde_json::Value = resp.json().await.unwrap();
        let msg = v["error"].as_str().unwrap();
        assert!(msg.contains(needle), "{body}: {msg}");
    }
}

#[tokio::test]
async fn oversized_body_is_413() {
    let (addr, _) = start().await;
    let body = format!(r#"{{"pad": "{}"}}"#, "x".repeat(MAX_BODY_BYTES + 1));
    let resp = reqwest::Client::new()
        .post(format!("http://{addr}/predict"))
        .body(body)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 413);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_agree() {
    let (addr, state) = start().await;
    let expected = library(&state, RECORD).to_bits();
    let client = reqwest::Client::new();
    let tasks: Vec<_> = (0..32)
        .map(|_| {
            let client = client.clone();
            tokio::spawn(async move {
                let r: PredictResponse = client
                    .post(format!("http://{addr}/predict"))
                    .body(RECORD)
                    .send()
                    .await
                    .unwrap()
                    .json()
                    .await
                    .unwrap();
                r.probability.to_bits()
            })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap(), expected);
    }
}

use std::collections::BTreeMap;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use factorlens_core::evaluation::{run_heldout, LambdaChoice, StudyConfig};
use factorlens_core::{Dataset, ExplanationTable, ForestConfig, ModelBundle, Subspace, Task};
use factorlens_service::{router, AppState, ExplainRequest, InstancesResponse, ModelInfo};
use http_body_util::BodyExt;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

const NAMES: [(&str, &str); 4] = [
    ("# Bathrooms", "count"),
    ("Living Area", "ksqft"),
    ("Grade", "grade"),
    ("Age", "years"),
];

fn house_like_bundle() -> ModelBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 400;
    let x = Array2::from_shape_fn((n, 4), |(_, j)| match j {
        0 => rng.random_range(1.0..4.0),
        1 => rng.random_range(0.8..4.5),
        2 => rng.random_range(5.0..11.0),
        _ => rng.random_range(0.0..100.0),
    });
    let y: Array1<f64> = x
        .rows()
        .into_iter()
        .map(|r| 50.0 + 17.0 * r[0] + 95.0 * r[1] + 120.0 * (r[1] - 2.5_f64).max(0.0) + 20.0 * r[2] - 0.5 * r[3])
        .collect();
    let mut data = Dataset::from_arrays("House-like", x, y, Task::Regression);
    for (f, (name, unit)) in data.features.iter_mut().zip(NAMES) {
        f.name = name.to_string();
        f.unit = unit.to_string();
    }
    data.target_unit = "$k".into();
    let config = StudyConfig {
        forest: ForestConfig {
            n_trees: 15,
            ..ForestConfig::default()
        },
        lambda: LambdaChoice::Fixed { lambda: 50.0 },
        ..StudyConfig::default()
    };
    let held = run_heldout(&data, 11, &config, "test-hash").unwrap();
    held.bundle(&data, 11, &config, "test-hash")
}

fn app(bundle: Option<ModelBundle>) -> axum::Router {
    router(bundle.map_or_else(AppState::empty, AppState::new))
}

async fn send(app: &axum::Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get(app: &axum::Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post_json(app: &axum::Router, body: String) -> (StatusCode, Vec<u8>) {
    let req = Request::post("/api/explain")
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    send(app, req).await
}

async fn explain(app: &axum::Router, req: &ExplainRequest) -> (StatusCode, Vec<u8>) {
    post_json(app, serde_json::to_string(req).unwrap()).await
}

fn table(bytes: &[u8]) -> ExplanationTable {
    serde_json::from_slice(bytes).unwrap()
}

fn request(xai: &str, values: Vec<f64>, overrides: Option<BTreeMap<String, f64>>) -> ExplainRequest {
    ExplainRequest {
        xai_type: xai.into(),
        values,
        factor_overrides: overrides,
    }
}

fn identity_holds(t: &ExplanationTable) -> bool {
    let mut acc = t.adjustment.value.full;
    for r in &t.rows {
        acc += r.contribution.full;
    }
    acc == t.explainer_estimate.full
}

#[tokio::test]
async fn health_reports_load_state() {
    let (s, body) = get(&app(None), "/api/health").await;
    assert_eq!(s, StatusCode::OK);
    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["bundle_loaded"], false);
    let (_, body) = get(&app(Some(house_like_bundle())), "/api/health").await;
    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["bundle_loaded"], true);
}

#[tokio::test]
async fn endpoints_answer_503_without_bundle() {
    let a = app(None);
    assert_eq!(get(&a, "/api/model").await.0, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(get(&a, "/api/instances").await.0, StatusCode::SERVICE_UNAVAILABLE);
    let (s, _) = explain(&a, &request("global", vec![1.0; 4], None)).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn model_metadata_lists_features_and_seed() {
    let bundle = house_like_bundle();
    let (s, body) = get(&app(Some(bundle.clone())), "/api/model").await;
    assert_eq!(s, StatusCode::OK);
    let info: ModelInfo = serde_json::from_slice(&body).unwrap();
    assert_eq!(info.seed, bundle.seed);
    let units: Vec<&str> = info.features.iter().map(|f| f.meta.unit.as_str()).collect();
    assert_eq!(units, ["count", "ksqft", "grade", "years"]);
    assert_eq!(info.xai_types.len(), 4);
    let sub = info.explainers.iter().find(|e| e.entry.rule().is_some()).unwrap();
    assert!(sub.rule_text.as_deref().unwrap().starts_with("Living Area"));
    // Round trip through the wire format.
    let again: ModelInfo = serde_json::from_str(&serde_json::to_string(&info).unwrap()).unwrap();
    assert_eq!(again, info);
}

#[tokio::test]
async fn empty_explainer_set_is_an_empty_list() {
    let mut bundle = house_like_bundle();
    bundle.explainers.clear();
    let (s, body) = get(&app(Some(bundle)), "/api/model").await;
    assert_eq!(s, StatusCode::OK);
    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["explainers"], serde_json::json!([]));
}

#[tokio::test]
async fn zero_override_removes_contribution() {
    let a = app(Some(house_like_bundle()));
    let values = vec![1.75, 1.8, 7.0, 30.0];
    let (s, body) = explain(&a, &request("global", values.clone(), None)).await;
    assert_eq!(s, StatusCode::OK);
    let plain = table(&body);
    assert!(!plain.what_if);
    assert!(identity_holds(&plain));
    assert!(plain.rule_text.is_none());

    let overrides = BTreeMap::from([("# Bathrooms".to_string(), 0.0)]);
    let (s, body) = explain(&a, &request("global", values.clone(), Some(overrides))).await;
    assert_eq!(s, StatusCode::OK);
    let what_if = table(&body);
    assert!(what_if.what_if);
    assert!(what_if.rows[0].overridden);
    assert_eq!(what_if.rows[0].contribution.full, 0.0);
    assert_eq!(what_if.rows[0].contribution.display, "0");
    let drop = plain.rows[0].factor.full * 1.75;
    assert!((plain.explainer_estimate.full - what_if.explainer_estimate.full - drop).abs() < 1e-9);
    assert_eq!(what_if.predictor_prediction, plain.predictor_prediction);
    assert!(identity_holds(&what_if));
}

#[tokio::test]
async fn adjustment_override_is_flagged() {
    let a = app(Some(house_like_bundle()));
    let overrides = BTreeMap::from([("adjustment".to_string(), 10.0)]);
    let (s, body) = explain(&a, &request("subglobal", vec![2.0, 1.5, 7.0, 20.0], Some(overrides))).await;
    assert_eq!(s, StatusCode::OK);
    let t = table(&body);
    assert!(t.what_if);
    assert!(t.adjustment.overridden);
    assert_eq!(t.adjustment.value.full, 10.0);
    assert!(identity_holds(&t));
}

#[tokio::test]
async fn incremental_outlier_has_delta_column() {
    let bundle = house_like_bundle();
    let rule = bundle.rule().unwrap().clone();
    let mut values = vec![2.0, 2.0, 8.0, 20.0];
    let meta = &bundle.dataset_meta.features[rule.feature_index];
    values[rule.feature_index] = match rule.typical_side {
        factorlens_core::TypicalSide::Below => meta.max,
        factorlens_core::TypicalSide::AtOrAbove => meta.min,
    };
    assert_eq!(rule.subspace_of(&values), Subspace::Outlier);
    let a = app(Some(bundle));
    let (s, body) = explain(&a, &request("incremental", values.clone(), None)).await;
    assert_eq!(s, StatusCode::OK);
    let t = table(&body);
    assert_eq!(t.subspace_label, Some(Subspace::Outlier));
    assert!(t.rows.iter().all(|r| r.delta.is_some() && r.base_factor.is_some()));
    assert!(t.rule_text.is_some());
    assert!(identity_holds(&t));

    let (_, body) = explain(&a, &request("incremental", vec![2.0, 1.0, 8.0, 20.0], None)).await;
    let typical = table(&body);
    assert_eq!(typical.subspace_label, Some(Subspace::Typical));
    assert!(typical.rows.iter().all(|r| r.delta.is_none()));
}

#[tokio::test]
async fn identical_requests_give_identical_bytes() {
    let a = app(Some(house_like_bundle()));
    for xai in ["global", "subglobal", "incremental", "local"] {
        let req = request(xai, vec![2.25, 2.1, 8.0, 35.0], None);
        let (s1, b1) = explain(&a, &req).await;
        let (s2, b2) = explain(&a, &req).await;
        assert_eq!(s1, StatusCode::OK, "{}", String::from_utf8_lossy(&b1));
        assert_eq!(s2, StatusCode::OK);
        assert_eq!(b1, b2, "{xai}");
        assert!(identity_holds(&table(&b1)));
    }
}

#[tokio::test]
async fn concurrent_requests_match_serial() {
    let a = app(Some(house_like_bundle()));
    let reqs: Vec<ExplainRequest> = (0..6)
        .map(|i| request(["local", "incremental"][i % 2], vec![1.0 + i as f64 * 0.4, 1.2 + i as f64 * 0.5, 7.0, 10.0 * i as f64], None))
        .collect();
    let mut serial = Vec::new();
    for r in &reqs {
        serial.push(explain(&a, r).await);
    }
    let handles: Vec<_> = reqs
        .iter()
        .cloned()
        .map(|r| {
            let a = a.clone();
            tokio::spawn(async move { explain(&a, &r).await })
        })
        .collect();
    for (h, expect) in handles.into_iter().zip(serial) {
        assert_eq!(h.await.unwrap(), expect);
    }
}

#[tokio::test]
async fn bad_explain_requests_are_400() {
    let a = app(Some(house_like_bundle()));
    let cases = [
        r#"{"xai_type":"lime","values":[1,2,3,4]}"#.to_string(),
        r#"{"xai_type":"global","values":[1,2,null,4]}"#.to_string(),
        r#"{"xai_type":"global","values":[1,2,3]}"#.to_string(),
        r#"{"xai_type":"global","values":[1,2,3,1e9]}"#.to_string(),
        r#"{"xai_type":"global","values":[1,2,3,4],"factor_overrides":{"Pool":1}}"#.to_string(),
        "not json".to_string(),
    ];
    for body in cases {
        let (s, bytes) = post_json(&a, body.clone()).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
        let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert!(v["error"].as_str().is_some_and(|m| !m.is_empty()));
    }
}

#[tokio::test]
async fn balanced_instances_split_evenly() {
    let bundle = house_like_bundle();
    let rule = bundle.rule().unwrap().clone();
    let a = app(Some(bundle));
    let (s, body) = get(&a, "/api/instances?subspace=balanced&count=30").await;
    assert_eq!(s, StatusCode::OK);
    let r: InstancesResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(r.instances.len(), 30);
    let outliers = r.instances.iter().filter(|i| rule.subspace_of(&i.values) == Subspace::Outlier).count();
    assert_eq!(outliers, 15);
    let (_, again) = get(&a, "/api/instances?subspace=balanced&count=30").await;
    assert_eq!(body, again);
}

#[tokio::test]
async fn instance_filters_hold() {
    let bundle = house_like_bundle();
    let rule = bundle.rule().unwrap().clone();
    let a = app(Some(bundle));
    for (q, want) in [("typical", Subspace::Typical), ("outlier", Subspace::Outlier)] {
        let (s, body) = get(&a, &format!("/api/instances?subspace={q}&count=12")).await;
        assert_eq!(s, StatusCode::OK);
        let r: InstancesResponse = serde_json::from_slice(&body).unwrap();
        assert_eq!(r.instances.len(), 12);
        for i in &r.instances {
            assert_eq!(rule.subspace_of(&i.values), want);
            assert_eq!(i.subspace, Some(want));
        }
    }
    let (_, body) = get(&a, "/api/instances?count=0").await;
    let r: InstancesResponse = serde_json::from_slice(&body).unwrap();
    assert!(r.instances.is_empty());
}

#[tokio::test]
async fn bad_instance_params_are_400() {
    let a = app(Some(house_like_bundle()));
    for uri in ["/api/instances?count=-1", "/api/instances?count=abc", "/api/instances?subspace=weird"] {
        assert_eq!(get(&a, uri).await.0, StatusCode::BAD_REQUEST, "{uri}");
    }
}

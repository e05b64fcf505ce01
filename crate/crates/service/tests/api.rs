mod common;

use axum::body::Body;
use axum::http::{Method, StatusCode};
use common::{key, petclinic_with_platinum_pets, Client};
use pricing_core::token::{verify_token, TokenVerdict};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

fn verified(token: &Value) -> pricing_core::token::TokenClaims {
    let now = chrono::Utc::now().timestamp();
    match verify_token(token.as_str().unwrap(), &key(), now) {
        TokenVerdict::Valid(claims) => claims,
        other => panic!("token did not verify: {other:?}"),
    }
}

#[tokio::test]
async fn healthz_reports_version() {
    let c = Client::new();
    let r = c.get("/healthz").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body, json!({"status": "ok", "pricingVersion": 1}));
}

#[tokio::test]
async fn pricing_document_is_served() {
    let c = Client::new();
    let r = c.get("/pricing").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body["name"], "PetClinic");
    assert_eq!(r.body["plans"].as_array().unwrap().len(), 3);
    assert_eq!(r.body["features"].as_array().unwrap().len(), 10);
}

#[tokio::test]
async fn evaluate_returns_all_statuses_and_a_valid_token() {
    let c = Client::new();
    c.subscribe("ana", "PLATINUM", &[]).await;
    let r = c.post("/subscriptions/ana/evaluate", json!({})).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);
    let statuses = r.body["result"]["statuses"].as_object().unwrap();
    assert_eq!(statuses.len(), 10);
    assert_eq!(r.body["result"]["pricingVersion"], 1);
    assert!(r.body["result"]["evaluatedAt"].is_string());
    let claims = verified(&r.body["token"]);
    assert_eq!(claims.sub, "ana");
    assert_eq!(claims.plan, "PLATINUM");
    assert_eq!(claims.features.len(), 10);
    for (name, status) in statuses {
        assert_eq!(claims.features[name].e, status["enabled"].as_bool().unwrap(), "{name}");
    }
}

#[tokio::test]
async fn evaluate_accepts_an_empty_body_and_context_overrides() {
    let c = Client::new();
    c.subscribe("ana", "GOLD", &[]).await;
    let r = c.raw(Method::POST, "/subscriptions/ana/evaluate", Body::empty(), false).await;
    assert_eq!(r.body["result"]["statuses"]["pets per owner"]["enabled"], true);
    let r = c.post("/subscriptions/ana/evaluate", json!({"context": {"userPets": 9}})).await;
    assert_eq!(r.body["result"]["statuses"]["pets per owner"]["enabled"], false);
    assert_eq!(r.body["result"]["statuses"]["pets per owner"]["reason"], "EXPRESSION_FALSE");
}

#[tokio::test]
async fn unknown_subscriber_is_404() {
    let c = Client::new();
    for r in [
        c.post("/subscriptions/ghost/evaluate", json!({})).await,
        c.get("/subscriptions/ghost").await,
        c.get("/subscriptions/ghost/features/vet%20selection").await,
        c.post("/subscriptions/ghost/usage", json!({"limitName": "pets per owner", "amount": 1})).await,
        c.put("/subscriptions/ghost", json!({"planName": "GOLD"})).await,
        c.delete("/subscriptions/ghost").await,
    ] {
        assert_eq!(r.status, StatusCode::NOT_FOUND);
        assert_eq!(r.body["code"], "UNKNOWN_SUBSCRIPTION");
    }
}

async fn vet_selection(c: &Client) -> Value {
    c.post("/subscriptions/bo/evaluate", json!({})).await.body["result"]["statuses"]["vet selection"]["enabled"].clone()
}

#[tokio::test]
async fn subscription_crud_round_trips() {
    let c = Client::new();
    c.subscribe("bo", "BASIC", &[]).await;
    let again = c
        .post("/subscriptions", json!({"subscriberId": "bo", "planName": "GOLD"}))
        .await;
    assert_eq!((again.status, again.body["code"].as_str()), (StatusCode::CONFLICT, Some("SUBSCRIPTION_EXISTS")));

    let r = c.get("/subscriptions/bo").await;
    assert_eq!(r.body["planName"], "BASIC");
    assert_eq!(r.body["addOnNames"], json!([]));

    assert_eq!(vet_selection(&c).await, false);
    let r = c
        .put("/subscriptions/bo", json!({"planName": "GOLD", "addOnNames": ["SMART_REPORTS"]}))
        .await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body["addOnNames"], json!(["SMART_REPORTS"]));
    assert_eq!(vet_selection(&c).await, true);

    assert_eq!(c.delete("/subscriptions/bo").await.status, StatusCode::NO_CONTENT);
    assert_eq!(c.get("/subscriptions/bo").await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn subscriptions_must_resolve() {
    let c = Client::new();
    for body in [
        json!({"subscriberId": "x", "planName": "DIAMOND"}),
        json!({"subscriberId": "x", "planName": "GOLD", "addOnNames": ["GROOMING"]}),
    ] {
        let r = c.post("/subscriptions", body).await;
        assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("INVALID_SUBSCRIPTION")));
    }
}

#[tokio::test]
async fn pricing_update_requires_the_admin_token() {
    let c = Client::new();
    let doc = petclinic_with_platinum_pets(2, 4);
    let r = c.raw(Method::PUT, "/pricing", doc.clone(), false).await;
    assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::UNAUTHORIZED, Some("UNAUTHORIZED")));
    assert_eq!(c.get("/healthz").await.body["pricingVersion"], 1);
}

#[tokio::test]
async fn pricing_update_hot_swaps_and_reports_changes() {
    let c = Client::new();
    c.subscribe("ana", "PLATINUM", &[]).await;
    let before = c.post("/subscriptions/ana/evaluate", json!({})).await;
    assert_eq!(before.body["result"]["statuses"]["pets per owner"]["limit"]["max"], 7);

    let r = c.put_pricing(&petclinic_with_platinum_pets(2, 4)).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);
    assert_eq!(r.body["version"], 2);
    let changes = r.body["changes"].as_array().unwrap();
    assert_eq!(changes.len(), 1);
    assert_eq!(changes[0]["kind"], "LimitValueChanged");
    assert_eq!(changes[0]["impact"], "DEGRADES_EXISTING");
    assert_eq!(changes[0]["path"], "plans.PLATINUM.limitValues.pets per owner");

    let after = c.post("/subscriptions/ana/evaluate", json!({})).await;
    assert_eq!(after.body["result"]["pricingVersion"], 2);
    assert_eq!(after.body["result"]["statuses"]["pets per owner"]["limit"]["max"], 4);
    assert_eq!(verified(&after.body["token"]).ver, 2);

    let again = c.put_pricing(&petclinic_with_platinum_pets(2, 4)).await;
    assert_eq!((again.status, again.body["code"].as_str()), (StatusCode::CONFLICT, Some("STALE_VERSION")));
}

#[tokio::test]
async fn invalid_documents_are_rejected_with_violations() {
    let c = Client::new();
    let dangling = petclinic_with_platinum_pets(2, 7).replace("      online consultations: true\n      support priority: HIGH", "      grooming: true\n      support priority: HIGH");
    let r = c.put_pricing(&dangling).await;
    assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("VALIDATION_FAILED")));
    let kinds: Vec<&str> = r.body["violations"].as_array().unwrap().iter().map(|v| v["kind"].as_str().unwrap()).collect();
    assert!(kinds.contains(&"DanglingReference"), "{kinds:?}");

    let r = c.put_pricing("name: [unclosed").await;
    assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("PARSE_ERROR")));
    assert_eq!(c.get("/healthz").await.body["pricingVersion"], 1);
}

#[tokio::test]
async fn diff_endpoints() {
    let c = Client::new();
    let r = c.get("/pricing/diff?against=1").await;
    assert_eq!(r.body, json!({"from": 1, "to": 1, "changes": []}));
    c.put_pricing(&petclinic_with_platinum_pets(2, 4)).await;
    let r = c.get("/pricing/diff?against=1").await;
    assert_eq!(r.body["to"], 2);
    assert_eq!(r.body["changes"].as_array().unwrap().len(), 1);
    assert_eq!(c.get("/pricing/diff?against=9").await.body["code"], "UNKNOWN_VERSION");
    assert_eq!(c.get("/pricing/diff").await.body["code"], "MISSING_PARAMETER");
    assert_eq!(c.get("/pricing/diff?against=x").await.body["code"], "INVALID_PARAMETER");

    let draft = petclinic_with_platinum_pets(3, 9);
    let r = c.raw(Method::POST, "/pricing/diff", draft, false).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body["changes"][0]["impact"], "SAFE");
    assert_eq!(r.body["violations"], json!([]));
    assert_eq!(c.get("/healthz").await.body["pricingVersion"], 2);
}

#[tokio::test]
async fn consume_grants_below_the_limit_and_refreshes_the_token() {
    let c = Client::new();
    c.subscribe("ana", "GOLD", &[]).await;
    let body = json!({"limitName": "pets per owner", "amount": 1});
    let r = c.post("/subscriptions/ana/usage", body.clone()).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);
    assert_eq!(r.body["result"], json!({"granted": true, "used": 1, "max": 4, "limitName": "pets per owner"}));
    let l = verified(&r.body["token"]).features["pets per owner"].l.clone().unwrap();
    assert_eq!((l.u, l.m), (1.0, 4.0));
    let r = c.post("/subscriptions/ana/usage", body).await;
    assert_eq!(verified(&r.body["token"]).features["pets per owner"].l.as_ref().unwrap().u, 2.0);
}

#[tokio::test]
async fn consume_at_the_limit_is_409_and_leaves_the_counter() {
    let c = Client::new();
    c.subscribe("ana", "GOLD", &[]).await;
    let fill = c.post("/subscriptions/ana/usage", json!({"limitName": "pets per owner", "amount": 4})).await;
    assert_eq!(fill.status, StatusCode::OK);
    let r = c.post("/subscriptions/ana/usage", json!({"limitName": "pets per owner", "amount": 1})).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.body["code"], "LIMIT_EXHAUSTED");
    assert_eq!(r.body["result"]["granted"], false);
    assert_eq!(r.body["result"]["used"], 4.0);
    assert!(!verified(&r.body["token"]).enabled("pets per owner"));

    let g = c.get("/subscriptions/ana/features/pets%20per%20owner").await;
    assert_eq!(g.body["enabled"], false);
    assert_eq!(g.body["reason"], "LIMIT_EXHAUSTED");

    let rel = c
        .post("/subscriptions/ana/usage", json!({"limitName": "pets per owner", "amount": 1, "operation": "release"}))
        .await;
    assert_eq!(rel.status, StatusCode::OK);
    assert_eq!(rel.body["result"]["used"], 3.0);
}

#[tokio::test]
async fn usage_argument_errors() {
    let c = Client::new();
    c.subscribe("ana", "GOLD", &[]).await;
    let cases = [
        (json!({"limitName": "grooming", "amount": 1}), "UNKNOWN_LIMIT"),
        (json!({"limitName": "max visits", "amount": 1}), "ENTITY_KEY_REQUIRED"),
        (json!({"limitName": "pets per owner", "amount": 1, "entityKey": "rex"}), "UNEXPECTED_ENTITY_KEY"),
        (json!({"limitName": "pets per owner", "amount": -1}), "INVALID_AMOUNT"),
        (json!({"limitName": "pets per owner", "amount": "1"}), "MALFORMED_BODY"),
        (json!({"limitName": "pets per owner", "amount": 1, "operation": "steal"}), "MALFORMED_BODY"),
    ];
    for (body, code) in cases {
        let r = c.post("/subscriptions/ana/usage", body).await;
        assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::BAD_REQUEST, Some(code)));
    }
    let visit = c
        .post("/subscriptions/ana/usage", json!({"limitName": "max visits", "amount": 1, "entityKey": "rex"}))
        .await;
    assert_eq!(visit.status, StatusCode::OK);
}

#[tokio::test]
async fn guard_follows_plan_and_add_ons() {
    let c = Client::new();
    c.subscribe("ana", "GOLD", &[]).await;
    let r = c.get("/subscriptions/ana/features/online%20consultations").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!((r.body["enabled"].as_bool(), r.body["reason"].as_str()), (Some(false), Some("PLAN_DISABLED")));
    c.put("/subscriptions/ana", json!({"planName": "GOLD", "addOnNames": ["SMART_REPORTS"]})).await;
    let r = c.get("/subscriptions/ana/features/online%20consultations").await;
    assert_eq!((r.body["enabled"].as_bool(), r.body["reason"].as_str()), (Some(true), Some("EXPRESSION_TRUE")));
    let r = c.get("/subscriptions/ana/features/grooming").await;
    assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::NOT_FOUND, Some("UNKNOWN_FEATURE")));
}

#[tokio::test]
async fn unknown_routes_and_methods_use_the_error_shape() {
    let c = Client::new();
    let r = c.get("/nope").await;
    assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::NOT_FOUND, Some("NOT_FOUND")));
    let r = c.delete("/pricing").await;
    assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::METHOD_NOT_ALLOWED, Some("METHOD_NOT_ALLOWED")));
}

type BodyShape<'a> = &'a dyn Fn(&mut StdRng) -> Vec<u8>;

fn random_body(rng: &mut StdRng) -> Vec<u8> {
    let shapes: [BodyShape; 6] = [
        &|r| (0..r.gen_range(0..40)).map(|_| r.gen()).collect(),
        &|_| b"{".to_vec(),
        &|_| b"[]".to_vec(),
        &|_| b"null".to_vec(),
        &|r| json!({"limitName": r.gen::<u32>(), "amount": {"x": 1}}).to_string().into_bytes(),
        &|r| json!({"subscriberId": "z", "planName": "GOLD", "extra": r.gen::<bool>()}).to_string().into_bytes(),
    ];
    let i = rng.gen_range(0..shapes.len());
    shapes[i](rng)
}

#[tokio::test]
async fn malformed_bodies_never_produce_server_errors() {
    let c = Client::new();
    c.subscribe("ana", "GOLD", &[]).await;
    let mut rng = StdRng::seed_from_u64(99);
    let targets = [
        (Method::POST, "/subscriptions", false),
        (Method::PUT, "/subscriptions/ana", false),
        (Method::POST, "/subscriptions/ana/evaluate", false),
        (Method::POST, "/subscriptions/ana/usage", false),
        (Method::PUT, "/pricing", true),
        (Method::POST, "/pricing/diff", false),
    ];
    for _ in 0..50 {
        for (method, uri, admin) in &targets {
            let body = random_body(&mut rng);
            let r = c.raw(method.clone(), uri, body.clone(), *admin).await;
            assert!(
                r.status.is_client_error() || r.status.is_success(),
                "{method} {uri} {:?} -> {} {}",
                String::from_utf8_lossy(&body),
                r.status,
                r.body
            );
            if r.status.is_client_error() {
                assert!(r.body["code"].is_string());
            }
        }
    }
}

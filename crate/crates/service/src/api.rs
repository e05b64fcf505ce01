use std::collections::BTreeSet;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, RawQuery, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use pricing_core::expr::ValueMap;
use pricing_core::model::{
    diff_pricing, parse_pricing, pricing_to_json, resolve_entitlements, validate_pricing, Pricing, Subscription,
};
use pricing_core::router::{EvaluationResult, Overlay, PricingSnapshot};
use pricing_core::token::issue_token;
use pricing_core::usage::ConsumeResult;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value as JsonValue};

use crate::error::ApiError;
use crate::AppState;

type Shared = State<Arc<AppState>>;
type ApiResult<T = Response> = Result<T, ApiError>;

pub fn app(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/pricing", get(get_pricing).put(put_pricing))
        .route("/pricing/diff", get(diff_against).post(diff_draft))
        .route("/subscriptions", post(create_subscription))
        .route(
            "/subscriptions/{id}",
            get(get_subscription).put(update_subscription).delete(delete_subscription),
        )
        .route("/subscriptions/{id}/evaluate", post(evaluate))
        .route("/subscriptions/{id}/usage", post(usage))
        .route("/subscriptions/{id}/features/{name}", get(guard))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", "no such route") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "METHOD_NOT_ALLOWED", "method not allowed on this route")
        })
        .with_state(state)
}

/// Parses a JSON body; an empty body reads as `{}` when `empty_ok`.
fn parse_body<T: DeserializeOwned>(body: &Bytes, empty_ok: bool) -> ApiResult<T> {
    let bytes: &[u8] = if empty_ok && body.iter().all(u8::is_ascii_whitespace) {
        b"{}"
    } else {
        body
    };
    serde_json::from_slice(bytes).map_err(|e| ApiError::malformed_body(e.to_string()))
}

fn require_admin(state: &AppState, headers: &HeaderMap) -> ApiResult<()> {
    let Some(expected) = &state.admin_token else {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "ADMIN_DISABLED",
            "no admin token is configured",
        ));
    };
    let presented = headers
        .get(header::AUTHORIZATION)
        .and_then(|h| h.to_str().ok())
        .and_then(|h| h.strip_prefix("Bearer "));
    match presented {
        Some(t) if constant_time_eq(t.as_bytes(), expected.as_bytes()) => Ok(()),
        _ => Err(ApiError::new(StatusCode::UNAUTHORIZED, "UNAUTHORIZED", "admin bearer token required")),
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn load_subscription(state: &AppState, id: &str) -> ApiResult<Subscription> {
    state
        .tracker
        .store()
        .get_subscription(id)?
        .ok_or_else(|| ApiError::unknown_subscription(id))
}

fn token_for(state: &AppState, result: &EvaluationResult, sub: &Subscription) -> ApiResult<String> {
    issue_token(result, sub, state.ttl_seconds, &state.key, Utc::now().timestamp())
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "TOKEN_ERROR", e.to_string()))
}

/// One context fetch, one evaluation, one token.
fn evaluate_and_sign(
    state: &AppState,
    snapshot: &PricingSnapshot,
    sub: &Subscription,
    overrides: &ValueMap,
) -> ApiResult<(EvaluationResult, String)> {
    let provider = Overlay {
        base: &state.tracker,
        overrides,
    };
    let result = snapshot.evaluate_with(sub, &provider)?;
    let token = token_for(state, &result, sub)?;
    Ok((result, token))
}

async fn healthz(State(state): Shared) -> Json<JsonValue> {
    Json(json!({ "status": "ok", "pricingVersion": state.router.version() }))
}

async fn get_pricing(State(state): Shared) -> Json<JsonValue> {
    Json(pricing_to_json(&state.router.current_snapshot().pricing))
}

async fn put_pricing(State(state): Shared, headers: HeaderMap, body: Bytes) -> ApiResult {
    require_admin(&state, &headers)?;
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::malformed_body("document is not UTF-8"))?;
    let next = parse_pricing(text)?;
    let violations = validate_pricing(&next);
    if !violations.is_empty() {
        return Err(ApiError::validation_failed(violations));
    }
    let mut history = state.history.lock();
    let current = state.router.current_snapshot();
    let changes = diff_pricing(&current.pricing, &next);
    let version = state.router.swap_pricing(next.clone())?;
    history.insert(version, next);
    drop(history);
    tracing::info!(from = current.version, to = version, changes = changes.len(), "pricing updated");
    Ok(Json(json!({ "version": version, "previousVersion": current.version, "changes": changes })).into_response())
}

async fn diff_against(State(state): Shared, RawQuery(query): RawQuery) -> ApiResult {
    let against = query
        .as_deref()
        .unwrap_or("")
        .split('&')
        .find_map(|kv| kv.strip_prefix("against="))
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "MISSING_PARAMETER", "query parameter `against` is required"))?;
    let against: u64 = against
        .parse()
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "INVALID_PARAMETER", "`against` must be a version number"))?;
    let old = state
        .pricing_version(against)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UNKNOWN_VERSION", format!("no pricing version {against}")))?;
    let current = state.router.current_snapshot();
    let changes = diff_pricing(&old, &current.pricing);
    Ok(Json(json!({ "from": against, "to": current.version, "changes": changes })).into_response())
}

/// Dry run of `PUT /pricing`: parses and validates a draft and reports the
/// changes it would make, without publishing it.
async fn diff_draft(State(state): Shared, body: Bytes) -> ApiResult {
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::malformed_body("document is not UTF-8"))?;
    let draft = parse_pricing(text)?;
    let current = state.router.current_snapshot();
    let changes = diff_pricing(&current.pricing, &draft);
    Ok(Json(json!({
        "from": current.version,
        "to": draft.version,
        "changes": changes,
        "violations": validate_pricing(&draft),
    }))
    .into_response())
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct CreateSubscription {
    subscriber_id: String,
    plan_name: String,
    #[serde(default)]
    add_on_names: BTreeSet<String>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct UpdateSubscription {
    plan_name: String,
    #[serde(default)]
    add_on_names: BTreeSet<String>,
}

fn check_resolvable(pricing: &Pricing, sub: &Subscription) -> ApiResult<()> {
    resolve_entitlements(pricing, &sub.plan_name, sub.add_on_names.iter().map(String::as_str))
        .map(|_| ())
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "INVALID_SUBSCRIPTION", e.to_string()))
}

async fn create_subscription(State(state): Shared, body: Bytes) -> ApiResult {
    let req: CreateSubscription = parse_body(&body, false)?;
    if req.subscriber_id.is_empty() {
        return Err(ApiError::malformed_body("subscriberId must not be empty"));
    }
    let mut sub = Subscription::new(req.subscriber_id, req.plan_name);
    sub.add_on_names = req.add_on_names;
    check_resolvable(&state.router.current_snapshot().pricing, &sub)?;
    let _guard = state.subscriptions_lock.lock();
    let store = state.tracker.store();
    if store.get_subscription(&sub.subscriber_id)?.is_some() {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "SUBSCRIPTION_EXISTS",
            format!("subscription `{}` already exists", sub.subscriber_id),
        ));
    }
    store.put_subscription(&sub)?;
    Ok((StatusCode::CREATED, Json(sub)).into_response())
}

async fn get_subscription(State(state): Shared, Path(id): Path<String>) -> ApiResult {
    Ok(Json(load_subscription(&state, &id)?).into_response())
}

async fn update_subscription(State(state): Shared, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let req: UpdateSubscription = parse_body(&body, false)?;
    let _guard = state.subscriptions_lock.lock();
    let mut sub = load_subscription(&state, &id)?;
    sub.plan_name = req.plan_name;
    sub.add_on_names = req.add_on_names;
    check_resolvable(&state.router.current_snapshot().pricing, &sub)?;
    state.tracker.store().put_subscription(&sub)?;
    Ok(Json(sub).into_response())
}

async fn delete_subscription(State(state): Shared, Path(id): Path<String>) -> ApiResult {
    let _guard = state.subscriptions_lock.lock();
    if state.tracker.store().delete_subscription(&id)? {
        Ok(StatusCode::NO_CONTENT.into_response())
    } else {
        Err(ApiError::unknown_subscription(&id))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateRequest {
    #[serde(default)]
    context: Option<JsonValue>,
}

async fn evaluate(State(state): Shared, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let req: EvaluateRequest = parse_body(&body, true)?;
    let overrides = match &req.context {
        None => ValueMap::new(),
        Some(ctx) => ValueMap::context_from_json(ctx).map_err(ApiError::malformed_body)?,
    };
    let sub = load_subscription(&state, &id)?;
    let snapshot = state.router.current_snapshot();
    let (result, token) = evaluate_and_sign(&state, &snapshot, &sub, &overrides)?;
    Ok(Json(json!({ "result": result.to_json(true), "token": token })).into_response())
}

#[derive(Deserialize, Default, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum Operation {
    #[default]
    Consume,
    Release,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct UsageRequest {
    limit_name: String,
    amount: f64,
    #[serde(default)]
    entity_key: Option<String>,
    #[serde(default)]
    operation: Operation,
}

async fn usage(State(state): Shared, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let req: UsageRequest = parse_body(&body, false)?;
    let sub = load_subscription(&state, &id)?;
    let snapshot = state.router.current_snapshot();
    let pricing = &snapshot.pricing;
    let entity = req.entity_key.as_deref();
    let result = match req.operation {
        Operation::Consume => state.tracker.try_consume(pricing, &sub, &req.limit_name, req.amount, entity)?,
        Operation::Release => {
            let used = state.tracker.release_usage(pricing, &sub, &req.limit_name, req.amount, entity)?;
            let max = resolve_entitlements(pricing, &sub.plan_name, sub.add_on_names.iter().map(String::as_str))
                .ok()
                .and_then(|ent| ent.limit(&req.limit_name))
                .unwrap_or(0.0);
            ConsumeResult {
                granted: true,
                used,
                max,
                limit_name: req.limit_name.clone(),
            }
        }
    };
    let (_, token) = evaluate_and_sign(&state, &snapshot, &sub, &ValueMap::new())?;
    let result_json = serde_json::to_value(&result).expect("consume result serializes");
    if result.granted {
        return Ok(Json(json!({ "result": result_json, "token": token })).into_response());
    }
    let mut extra = serde_json::Map::new();
    extra.insert("result".into(), result_json);
    extra.insert("token".into(), token.into());
    Err(ApiError::new(
        StatusCode::CONFLICT,
        "LIMIT_EXHAUSTED",
        format!(
            "consuming {} of `{}` would exceed the limit of {}",
            req.amount, result.limit_name, result.max
        ),
    )
    .with_extra(extra))
}

async fn guard(State(state): Shared, Path((id, name)): Path<(String, String)>) -> ApiResult {
    let sub = load_subscription(&state, &id)?;
    let snapshot = state.router.current_snapshot();
    if snapshot.pricing.feature(&name).is_none() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "UNKNOWN_FEATURE", format!("unknown feature `{name}`")));
    }
    let ctx = state.tracker.get_context(&sub, &snapshot.pricing)?;
    let status = snapshot.evaluate_feature(&sub, &ctx, &name)?;
    Ok(Json(status).into_response())
}

#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use pricing_core::model::petclinic;
use pricing_core::token::TokenKey;
use pricing_core::usage::MemoryStore;
use pricing_service::{app, AppState};
use serde_json::Value;
use tower::ServiceExt;

pub const ADMIN: &str = "admin-secret";
pub const KEY: &[u8; 32] = b"0123456789abcdef0123456789abcdef";

pub fn key() -> TokenKey {
    TokenKey::new(KEY.to_vec()).unwrap()
}

pub fn state() -> Arc<AppState> {
    Arc::new(AppState::new(petclinic(), Arc::new(MemoryStore::new()), key(), 300, Some(ADMIN.into())).unwrap())
}

pub struct Client {
    pub state: Arc<AppState>,
    router: Router,
}

pub struct Reply {
    pub status: StatusCode,
    pub body: Value,
}

impl Client {
    pub fn new() -> Self {
        let state = state();
        Self {
            router: app(state.clone()),
            state,
        }
    }

    pub async fn raw(&self, method: Method, uri: &str, body: impl Into<Body>, admin: bool) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        if admin {
            req = req.header("authorization", format!("Bearer {ADMIN}"));
        }
        let resp = self.router.clone().oneshot(req.body(body.into()).unwrap()).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let body = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| panic!("non-JSON body: {}", String::from_utf8_lossy(&bytes)))
        };
        Reply { status, body }
    }

    pub async fn get(&self, uri: &str) -> Reply {
        self.raw(Method::GET, uri, Body::empty(), false).await
    }

    pub async fn post(&self, uri: &str, body: Value) -> Reply {
        self.raw(Method::POST, uri, body.to_string(), false).await
    }

    pub async fn put(&self, uri: &str, body: Value) -> Reply {
        self.raw(Method::PUT, uri, body.to_string(), false).await
    }

    pub async fn delete(&self, uri: &str) -> Reply {
        self.raw(Method::DELETE, uri, Body::empty(), false).await
    }

    pub async fn put_pricing(&self, document: &str) -> Reply {
        self.raw(Method::PUT, "/pricing", document.to_string(), true).await
    }

    pub async fn subscribe(&self, id: &str, plan: &str, add_ons: &[&str]) {
        let r = self
            .post(
                "/subscriptions",
                serde_json::json!({ "subscriberId": id, "planName": plan, "addOnNames": add_ons }),
            )
            .await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", r.body);
    }
}

/// The bundled document with PLATINUM's pet limit and the version changed.
pub fn petclinic_with_platinum_pets(version: u64, pets: u32) -> String {
    let doc = pricing_core::model::PETCLINIC_YAML;
    assert!(doc.contains("version: 1\n") && doc.contains("      pets per owner: 7\n"));
    doc.replace("version: 1\n", &format!("version: {version}\n"))
        .replace("      pets per owner: 7\n", &format!("      pets per owner: {pets}\n"))
}

#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use cornet_gateway::auth::{Role, Session};
use cornet_gateway::clock::ManualClock;
use cornet_gateway::{router, AppState, ServeConfig};

pub const ALICE: &str = "alice-token";
pub const BOB: &str = "bob-token";
pub const ROOT: &str = "root-token";
pub const T0: i64 = 1_700_000_000;

pub fn sessions() -> Vec<Session> {
    vec![
        Session::new("alice", ALICE, Role::User),
        Session::new("bob", BOB, Role::User),
        Session::new("root", ROOT, Role::Admin),
    ]
}

pub struct TestApp {
    pub app: Router,
    pub clock: Arc<ManualClock>,
    pub state: Arc<AppState>,
}

impl TestApp {
    pub fn in_memory() -> TestApp {
        TestApp::with_config(ServeConfig {
            sessions: sessions(),
            ..ServeConfig::default()
        })
    }

    pub fn with_config(config: ServeConfig) -> TestApp {
        let clock = Arc::new(ManualClock::at(T0));
        let state = Arc::new(AppState::open(config, clock.clone()).unwrap());
        TestApp {
            app: router(state.clone()),
            clock,
            state,
        }
    }

    pub async fn call(&self, method: Method, path: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(path);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(serde_json::to_vec(&b).unwrap()))
                .unwrap(),
            None => req.body(Body::empty()).unwrap(),
        };
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
        (status, value)
    }

    pub async fn get(&self, path: &str, token: &str) -> (StatusCode, Value) {
        self.call(Method::GET, path, Some(token), None).await
    }

    pub async fn post(&self, path: &str, token: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::POST, path, Some(token), Some(body)).await
    }

    pub async fn put(&self, path: &str, token: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::PUT, path, Some(token), Some(body)).await
    }
}

/// Asserts the status and error name of a failed call.
pub fn assert_error(got: &(StatusCode, Value), status: u16, name: &str) {
    assert_eq!(got.0.as_u16(), status, "{}", got.1);
    assert_eq!(got.1["error"], name, "{}", got.1);
    assert!(got.1["message"].is_string(), "{}", got.1);
}

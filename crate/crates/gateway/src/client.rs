//! Blocking HTTP client used by the CLI.

use std::time::Duration;

use reqwest::blocking::Client as Http;
use reqwest::Method;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// A failed call: HTTP status plus the server's error name and message.
/// Status 0 means the server could not be reached.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{status} {error}: {message}")]
pub struct CallError {
    pub status: u16,
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    token: Option<String>,
    http: Http,
}

impl Client {
    pub fn new(base: &str, token: Option<String>) -> Result<Client, CallError> {
        let http = Http::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .map_err(|e| unreachable_err(e.to_string()))?;
        Ok(Client {
            base: base.trim_end_matches('/').to_string(),
            token,
            http,
        })
    }

    pub fn call(&self, method: Method, path: &str, body: Option<&Value>) -> Result<Value, CallError> {
        let mut req = self.http.request(method, format!("{}{}", self.base, path));
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().map_err(|e| unreachable_err(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| unreachable_err(e.to_string()))?;
        let value: Value = if text.is_empty() {
            Value::Null
        } else {
            serde_json::from_str(&text).unwrap_or(Value::String(text))
        };
        if status.is_success() {
            return Ok(value);
        }
        let field = |k: &str| value.get(k).and_then(Value::as_str).map(str::to_string);
        Err(CallError {
            status: status.as_u16(),
            error: field("error").unwrap_or_else(|| status.canonical_reason().unwrap_or("Error").to_string()),
            message: field("message").unwrap_or_else(|| value.to_string()),
        })
    }

    pub fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, CallError> {
        decode(self.call(Method::GET, path, None)?)
    }

    pub fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, CallError> {
        let body = serde_json::to_value(body).map_err(|e| local_err(e.to_string()))?;
        decode(self.call(Method::POST, path, Some(&body))?)
    }

    pub fn put<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, CallError> {
        let body = serde_json::to_value(body).map_err(|e| local_err(e.to_string()))?;
        decode(self.call(Method::PUT, path, Some(&body))?)
    }
}

fn decode<T: DeserializeOwned>(v: Value) -> Result<T, CallError> {
    serde_json::from_value(v).map_err(|e| local_err(format!("unexpected response: {e}")))
}

fn unreachable_err(message: String) -> CallError {
    CallError {
        status: 0,
        error: "ConnectionError".into(),
        message,
    }
}

fn local_err(message: String) -> CallError {
    CallError {
        status: 0,
        error: "ClientError".into(),
        message,
    }
}

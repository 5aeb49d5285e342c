//! HTTP-style JSON protocol shared by the cloud gateway, the HTTP server and
//! the remote clients. Every response body is `{"ok": true, "data": ...}` or
//! `{"ok": false, "error": {"kind": ..., "message": ...}}`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const SESSION_HEADER: &str = "x-session-token";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    GET,
    POST,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiRequest {
    pub method: Method,
    pub path: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub query: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub headers: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<Value>,
}

impl ApiRequest {
    pub fn get(path: impl Into<String>) -> Self {
        ApiRequest {
            method: Method::GET,
            path: path.into(),
            query: BTreeMap::new(),
            headers: BTreeMap::new(),
            body: None,
        }
    }

    pub fn post(path: impl Into<String>, body: Value) -> Self {
        ApiRequest {
            method: Method::POST,
            body: Some(body),
            ..ApiRequest::get(path)
        }
    }

    pub fn with_query(mut self, key: &str, value: impl ToString) -> Self {
        self.query.insert(key.to_string(), value.to_string());
        self
    }

    pub fn with_header(mut self, key: &str, value: impl Into<String>) -> Self {
        self.headers.insert(key.to_ascii_lowercase(), value.into());
        self
    }

    pub fn header(&self, key: &str) -> Option<&str> {
        self.headers.get(&key.to_ascii_lowercase()).map(String::as_str)
    }

    /// Deserializes the body, mapping absence or shape errors to
    /// protocol errors.
    pub fn json<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        let body = self
            .body
            .clone()
            .ok_or_else(|| Error::Protocol(format!("{} requires a JSON body", self.path)))?;
        serde_json::from_value(body).map_err(|e| Error::Protocol(format!("malformed body: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Envelope,
}

impl ApiResponse {
    pub fn ok(data: Value) -> Self {
        ApiResponse {
            status: 200,
            body: Envelope {
                ok: true,
                data: Some(data),
                error: None,
            },
        }
    }

    pub fn from_error(err: &Error) -> Self {
        ApiResponse {
            status: err.status(),
            body: Envelope {
                ok: false,
                data: None,
                error: Some(ErrorBody {
                    kind: err.kind().to_string(),
                    message: err.to_string(),
                }),
            },
        }
    }

    /// Turns an error envelope back into the matching [`Error`].
    pub fn into_data(self) -> Result<Value> {
        if self.body.ok {
            return self
                .body
                .data
                .ok_or_else(|| Error::Protocol("ok response without data".into()));
        }
        let e = self
            .body
            .error
            .ok_or_else(|| Error::Protocol("error response without error body".into()))?;
        let msg = e.message;
        Err(match e.kind.as_str() {
            "validation" => Error::Validation(msg),
            "conflict" => Error::Conflict(msg),
            "not_found" => Error::NotFound(msg),
            "auth_failed" => Error::AuthFailed(msg),
            "routing" => Error::Routing(msg),
            "dataset" => Error::Dataset(msg),
            "unavailable" | "detection_failed" => Error::Unavailable(msg),
            _ => Error::Protocol(msg),
        })
    }
}

/// Anything that can carry a request to the cloud and bring back a response.
pub trait Transport: Send + Sync {
    fn call(&self, request: &ApiRequest) -> Result<ApiResponse>;
}

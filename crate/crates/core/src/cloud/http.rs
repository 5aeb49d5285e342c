//! The gateway over real HTTP: a small blocking server and a client
//! transport speaking the same envelopes as the in-process path.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use tiny_http::{Header, Response, Server};

use crate::error::{Error, Result};
use crate::protocol::{ApiRequest, ApiResponse, Envelope, Method, Transport};

use super::CloudService;

/// A running server. Dropping it without [`HttpServer::shutdown`] leaves the
/// accept loop running until the process exits.
pub struct HttpServer {
    server: Arc<Server>,
    addr: SocketAddr,
    worker: Option<JoinHandle<()>>,
}

impl HttpServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the accept loop ends.
    pub fn join(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

/// Binds `addr` (port 0 picks a free port) and serves `cloud` on a
/// background thread. Requests are handled one at a time.
pub fn serve(addr: &str, cloud: Arc<CloudService>) -> Result<HttpServer> {
    let server = Server::http(addr).map_err(|e| Error::Unavailable(format!("cannot bind {addr}: {e}")))?;
    let bound = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| Error::Unavailable(format!("{addr} is not an IP listener")))?;
    let server = Arc::new(server);
    let accept = server.clone();
    let worker = std::thread::spawn(move || {
        for rq in accept.incoming_requests() {
            handle_one(rq, &cloud);
        }
    });
    log::info!("cloud gateway listening on http://{bound}");
    Ok(HttpServer {
        server,
        addr: bound,
        worker: Some(worker),
    })
}

fn handle_one(mut rq: tiny_http::Request, cloud: &CloudService) {
    let response = match to_api_request(&mut rq) {
        Ok(req) => {
            log::debug!("{:?} {}", req.method, req.path);
            cloud.handle(&req)
        }
        Err(e) => ApiResponse::from_error(&e),
    };
    let body = serde_json::to_vec(&response.body).expect("envelopes serialize");
    let content_type = Header::from_bytes("Content-Type", "application/json").expect("static header");
    let out = Response::from_data(body)
        .with_status_code(response.status)
        .with_header(content_type);
    if let Err(e) = rq.respond(out) {
        log::warn!("failed to send response: {e}");
    }
}

fn to_api_request(rq: &mut tiny_http::Request) -> Result<ApiRequest> {
    let method = match rq.method() {
        tiny_http::Method::Get => Method::GET,
        tiny_http::Method::Post => Method::POST,
        other => return Err(Error::NotFound(format!("no route for method {other}"))),
    };
    let url = rq.url().to_string();
    let (path, query) = url.split_once('?').unwrap_or((&url, ""));
    let query: BTreeMap<String, String> = form_urlencoded::parse(query.as_bytes()).into_owned().collect();
    let headers = rq
        .headers()
        .iter()
        .map(|h| {
            (
                h.field.as_str().as_str().to_ascii_lowercase(),
                h.value.as_str().to_string(),
            )
        })
        .collect();
    let mut raw = String::new();
    rq.as_reader()
        .read_to_string(&mut raw)
        .map_err(|e| Error::Protocol(format!("unreadable body: {e}")))?;
    let body = if raw.trim().is_empty() {
        None
    } else {
        Some(serde_json::from_str(&raw).map_err(|e| Error::Protocol(format!("body is not JSON: {e}")))?)
    };
    Ok(ApiRequest {
        method,
        path: path.to_string(),
        query,
        headers,
        body,
    })
}

/// Client side. Connection failures surface as [`Error::Unavailable`].
pub struct HttpTransport {
    base_url: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(base_url: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        HttpTransport {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
        }
    }
}

impl Transport for HttpTransport {
    fn call(&self, request: &ApiRequest) -> Result<ApiResponse> {
        let url = format!("{}{}", self.base_url, request.path);
        let unavailable = |e: ureq::Error| Error::Unavailable(format!("{url}: {e}"));
        let mut response = match request.method {
            Method::GET => {
                let mut r = self.agent.get(&url);
                for (k, v) in &request.query {
                    r = r.query(k, v);
                }
                for (k, v) in &request.headers {
                    r = r.header(k, v);
                }
                r.call().map_err(unavailable)?
            }
            Method::POST => {
                let mut r = self.agent.post(&url);
                for (k, v) in &request.query {
                    r = r.query(k, v);
                }
                for (k, v) in &request.headers {
                    r = r.header(k, v);
                }
                match &request.body {
                    Some(b) => r.send_json(b).map_err(unavailable)?,
                    None => r.send_empty().map_err(unavailable)?,
                }
            }
        };
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(unavailable)?;
        let body: Envelope = serde_json::from_str(&text)
            .map_err(|e| Error::Protocol(format!("status {status} with non-envelope body: {e}")))?;
        Ok(ApiResponse { status, body })
    }
}

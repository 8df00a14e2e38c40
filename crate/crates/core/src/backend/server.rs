//! Serve any [`Backend`] over the JSON wire protocol.
//!
//! `POST /v1/generate`, `/v1/score` and `/v1/embed` accept the request types
//! wrapped in `{"id": <u64>, "model": <string>?, ...}` and answer with the
//! same `id`. Failures return a non-2xx status with `{"error": <string>}`.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::de::DeserializeOwned;
use serde::Serialize;
use tiny_http::{Header, Method, Response, Server};

use super::wire::{Envelope, ErrorBody, GenerateResponse, ScoreResponse};
use super::{Backend, BackendError, EmbedRequest, GenRequest, ScoreRequest};

pub struct ServerHandle {
    server: Arc<Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Block until the server is shut down from another thread or process exit.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.server.unblock();
        for _ in 1..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if !self.workers.is_empty() {
            self.stop();
        }
    }
}

fn json_response<T: Serialize>(status: u16, body: &T) -> Response<std::io::Cursor<Vec<u8>>> {
    let bytes = serde_json::to_vec(body).expect("serializable body");
    Response::from_data(bytes)
        .with_status_code(status)
        .with_header(Header::from_bytes("Content-Type", "application/json").unwrap())
}

fn error_status(e: &BackendError) -> u16 {
    match e {
        BackendError::InvalidRequest(_) | BackendError::Protocol(_) => 400,
        BackendError::Remote { status, .. } => *status,
        BackendError::Transport(_) => 503,
    }
}

fn handle<Req, Resp>(
    body: &str,
    f: impl FnOnce(&Req) -> Result<Resp, BackendError>,
) -> Response<std::io::Cursor<Vec<u8>>>
where
    Req: DeserializeOwned,
    Resp: Serialize,
{
    let env: Envelope<Req> = match serde_json::from_str(body) {
        Ok(e) => e,
        Err(e) => return json_response(400, &ErrorBody { error: format!("malformed request: {e}") }),
    };
    match f(&env.body) {
        Ok(resp) => json_response(
            200,
            &Envelope {
                id: env.id,
                model: env.model,
                body: resp,
            },
        ),
        Err(e) => json_response(error_status(&e), &ErrorBody { error: e.to_string() }),
    }
}

fn route(backend: &dyn Backend, method: &Method, path: &str, body: &str) -> Response<std::io::Cursor<Vec<u8>>> {
    if *method != Method::Post {
        return json_response(405, &ErrorBody { error: "only POST is supported".into() });
    }
    match path {
        "/v1/generate" => handle(body, |r: &GenRequest| {
            backend.generate(r).map(|candidates| GenerateResponse { candidates })
        }),
        "/v1/score" => handle(body, |r: &ScoreRequest| backend.score(r).map(|logprobs| ScoreResponse { logprobs })),
        "/v1/embed" => handle(body, |r: &EmbedRequest| backend.embed(r)),
        other => json_response(404, &ErrorBody { error: format!("no endpoint {other}") }),
    }
}

/// Bind `addr` (use port 0 for an ephemeral port) and serve on `threads`
/// worker threads until the handle is dropped or shut down.
pub fn serve(backend: Arc<dyn Backend>, addr: &str, threads: usize) -> std::io::Result<ServerHandle> {
    let server = Server::http(addr).map_err(|e| std::io::Error::other(e.to_string()))?;
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| std::io::Error::other("not an IP listener"))?;
    let server = Arc::new(server);
    let workers = (0..threads.max(1))
        .map(|_| {
            let server = Arc::clone(&server);
            let backend = Arc::clone(&backend);
            std::thread::spawn(move || {
                while let Ok(mut request) = server.recv() {
                    let mut body = String::new();
                    let response = if request.as_reader().read_to_string(&mut body).is_err() {
                        json_response(400, &ErrorBody { error: "body is not UTF-8".into() })
                    } else {
                        let path = request.url().split('?').next().unwrap_or("").to_string();
                        route(backend.as_ref(), request.method(), &path, &body)
                    };
                    let _ = request.respond(response);
                }
            })
        })
        .collect();
    Ok(ServerHandle { server, addr, workers })
}

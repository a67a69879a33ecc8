//! Serves any [`ScorerHandle`] over the `/v1` protocol.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::de::DeserializeOwned;
use serde::Serialize;
use tiny_http::{Header, Method, Request, Response, Server};

use super::protocol::{
    ConditionalRequest, ConditionalResponse, EmbedMode, EmbedRequest, EmbedResponse, ErrorResponse, InfoResponse,
    ScoreSpanRequest, ScoreSpanResponse, VERSION,
};
use super::ScorerHandle;
use crate::error::{Error, Result};

/// A bridge listening on a local port; stops when dropped.
pub struct RunningBridge {
    addr: SocketAddr,
    server: Arc<Server>,
    workers: Vec<JoinHandle<()>>,
}

impl RunningBridge {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the workers exit.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(self) {}
}

impl Drop for RunningBridge {
    fn drop(&mut self) {
        if self.workers.is_empty() {
            return;
        }
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

/// Binds `addr` (port 0 picks a free port) and answers with `threads`
/// worker threads.
pub fn serve(scorer: ScorerHandle, addr: &str, threads: usize) -> Result<RunningBridge> {
    let server = Server::http(addr).map_err(|e| Error::ScorerUnavailable(format!("cannot bind {addr}: {e}")))?;
    let bound = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| Error::Config(format!("{addr} is not an IP address")))?;
    let server = Arc::new(server);
    let workers = (0..threads.max(1))
        .map(|_| {
            let server = Arc::clone(&server);
            let scorer = scorer.clone();
            std::thread::spawn(move || {
                while let Ok(req) = server.recv() {
                    handle(&scorer, req);
                }
            })
        })
        .collect();
    Ok(RunningBridge {
        addr: bound,
        server,
        workers,
    })
}

type Reply = std::result::Result<Vec<u8>, (u16, String)>;

fn status_of(e: &Error) -> u16 {
    match e {
        Error::InvalidInput(_) | Error::MissingCapability(_) | Error::Json(_) | Error::Protocol(_) => 400,
        _ => 503,
    }
}

fn run<Q: DeserializeOwned, R: Serialize>(body: &[u8], f: impl FnOnce(Q) -> Result<R>) -> Reply {
    let q: Q = serde_json::from_slice(body).map_err(|e| (400, format!("malformed request: {e}")))?;
    let r = f(q).map_err(|e| (status_of(&e), e.to_string()))?;
    serde_json::to_vec(&r).map_err(|e| (503, e.to_string()))
}

fn dispatch(scorer: &ScorerHandle, method: &Method, path: &str, body: &[u8]) -> Reply {
    let Some(route) = path.strip_prefix(&format!("/{VERSION}/")) else {
        return Err((404, format!("unknown path {path}")));
    };
    match (method, route) {
        (Method::Get, "info") => {
            let info = scorer.info();
            let resp = InfoResponse {
                version: VERSION.into(),
                capabilities: info.capabilities.clone(),
                vocab_size: info.vocab_size,
                model_tag: info.model_tag.clone(),
                top_n: None,
            };
            serde_json::to_vec(&resp).map_err(|e| (503, e.to_string()))
        }
        (Method::Post, "score_span") => run(body, |q: ScoreSpanRequest| {
            let s = scorer.score_raw(&q.prefix, &q.suffix, &q.candidate)?;
            Ok(ScoreSpanResponse {
                nll_sum: s.nll_sum,
                piece_count: s.piece_count,
                per_piece_nll: s.per_piece_nll,
            })
        }),
        (Method::Post, "conditional") => run(body, |q: ConditionalRequest| {
            let d = scorer.conditional(&q.tokens, q.position)?;
            Ok(ConditionalResponse {
                tokens: d.tokens.to_vec(),
                logprobs: d.probs.iter().map(|p| p.ln()).collect(),
                log_z: None,
            })
        }),
        (Method::Post, "embed") => run(body, |q: EmbedRequest| {
            let vectors = match q.mode {
                EmbedMode::Text => vec![scorer.embed_text(&q.text)?],
                EmbedMode::Tokens => scorer.embed_tokens(&q.text)?,
            };
            Ok(EmbedResponse { vectors })
        }),
        _ => Err((404, format!("unknown route {method} {path}"))),
    }
}

fn handle(scorer: &ScorerHandle, mut req: Request) {
    let mut body = Vec::new();
    let reply = match req.as_reader().read_to_end(&mut body) {
        Ok(_) => dispatch(scorer, req.method(), req.url(), &body),
        Err(e) => Err((400, format!("cannot read request body: {e}"))),
    };
    let (status, bytes) = match reply {
        Ok(b) => (200, b),
        Err((status, error)) => (status, serde_json::to_vec(&ErrorResponse { error }).unwrap_or_default()),
    };
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    let resp = Response::from_data(bytes).with_status_code(status).with_header(header);
    if let Err(e) = req.respond(resp) {
        log::warn!("failed to send response: {e}");
    }
}

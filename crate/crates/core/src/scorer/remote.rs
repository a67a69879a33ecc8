use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::protocol::{
    ConditionalRequest, ConditionalResponse, EmbedMode, EmbedRequest, EmbedResponse, ErrorResponse, InfoResponse,
    ScoreSpanRequest, ScoreSpanResponse, VERSION,
};
use super::{Scorer, ScorerInfo, SpanScore, TokenDistribution};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8080`.
    pub endpoint: String,
    pub timeout_ms: u64,
    pub max_inflight: usize,
    /// Extra attempts after a connection failure.
    pub retries: u32,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            timeout_ms: 30_000,
            max_inflight: 4,
            retries: 2,
        }
    }
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Client for a scorer served over the `/v1` protocol.
pub struct RemoteScorer {
    config: RemoteConfig,
    agent: ureq::Agent,
    info: ScorerInfo,
    gate: Arc<Gate>,
}

impl std::fmt::Debug for RemoteScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteScorer").field("endpoint", &self.config.endpoint).finish()
    }
}

impl RemoteScorer {
    /// Fetches `/v1/info` and checks the protocol version.
    pub fn connect(config: RemoteConfig) -> Result<Self> {
        if config.endpoint.is_empty() {
            return Err(Error::Config("remote scorer endpoint is empty".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let mut scorer = Self {
            gate: Arc::new(Gate::new(config.max_inflight)),
            config,
            agent,
            info: ScorerInfo {
                capabilities: Default::default(),
                vocab_size: 0,
                model_tag: String::new(),
            },
        };
        let info: InfoResponse = scorer.call("info", None::<&()>)?;
        if info.version != VERSION {
            return Err(Error::Protocol(format!(
                "scorer speaks protocol `{}`, expected `{VERSION}`",
                info.version
            )));
        }
        scorer.info = ScorerInfo {
            capabilities: info.capabilities,
            vocab_size: info.vocab_size,
            model_tag: info.model_tag,
        };
        Ok(scorer)
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{VERSION}/{path}", self.config.endpoint.trim_end_matches('/'))
    }

    fn call<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: Option<&B>) -> Result<T> {
        let _permit = self.gate.acquire();
        let url = self.url(path);
        let mut attempt = 0;
        loop {
            let sent = match body {
                Some(b) => self.agent.post(&url).send_json(b),
                None => self.agent.get(&url).call(),
            };
            let mut resp = match sent {
                Ok(r) => r,
                Err(ureq::Error::Timeout(_)) => {
                    return Err(Error::ScorerUnavailable(format!("{url}: timed out")));
                }
                Err(e @ (ureq::Error::ConnectionFailed | ureq::Error::Io(_))) if attempt < self.config.retries => {
                    attempt += 1;
                    log::warn!("{url}: {e}; retrying ({attempt}/{})", self.config.retries);
                    std::thread::sleep(Duration::from_millis(50 * u64::from(attempt)));
                    continue;
                }
                Err(e) => return Err(Error::ScorerUnavailable(format!("{url}: {e}"))),
            };
            let status = resp.status().as_u16();
            let body = resp.body_mut();
            return match status {
                200 => body.read_json::<T>().map_err(|e| match e {
                    ureq::Error::Timeout(_) => Error::ScorerUnavailable(format!("{url}: timed out")),
                    e => Error::Protocol(format!("{url}: bad response body: {e}")),
                }),
                _ => {
                    let message = body
                        .read_json::<ErrorResponse>()
                        .map(|e| e.error)
                        .unwrap_or_else(|_| "no error message".into());
                    if status == 400 {
                        Err(Error::Protocol(format!("{url}: {message}")))
                    } else {
                        Err(Error::ScorerUnavailable(format!("{url}: status {status}: {message}")))
                    }
                }
            };
        }
    }
}

impl Scorer for RemoteScorer {
    fn info(&self) -> &ScorerInfo {
        &self.info
    }

    fn score_span(&self, prefix: &str, suffix: &str, candidate: &str) -> Result<SpanScore> {
        let req = ScoreSpanRequest {
            prefix: prefix.into(),
            suffix: suffix.into(),
            candidate: candidate.into(),
        };
        let resp: ScoreSpanResponse = self.call("score_span", Some(&req))?;
        if resp.per_piece_nll.len() != resp.piece_count {
            return Err(Error::Protocol("piece_count disagrees with per_piece_nll".into()));
        }
        Ok(SpanScore {
            nll_sum: resp.nll_sum,
            piece_count: resp.piece_count,
            per_piece_nll: resp.per_piece_nll,
        })
    }

    fn conditional(&self, tokens: &[String], position: usize) -> Result<TokenDistribution> {
        let req = ConditionalRequest {
            tokens: tokens.to_vec(),
            position,
        };
        let resp: ConditionalResponse = self.call("conditional", Some(&req))?;
        if resp.tokens.len() != resp.logprobs.len() || resp.tokens.is_empty() {
            return Err(Error::Protocol("malformed conditional response".into()));
        }
        // a truncated top-N list is renormalized over the returned tokens
        let mut probs: Vec<f64> = resp.logprobs.iter().map(|lp| lp.exp()).collect();
        let total: f64 = probs.iter().sum();
        if resp.log_z.is_some() || (total - 1.0).abs() > 1e-9 {
            probs.iter_mut().for_each(|p| *p /= total);
        }
        Ok(TokenDistribution {
            tokens: Arc::new(resp.tokens),
            probs,
        })
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let req = EmbedRequest {
            text: text.into(),
            mode: EmbedMode::Text,
        };
        let mut resp: EmbedResponse = self.call("embed", Some(&req))?;
        if resp.vectors.len() != 1 {
            return Err(Error::Protocol("text embedding must return one vector".into()));
        }
        Ok(resp.vectors.remove(0))
    }

    fn embed_tokens(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        let req = EmbedRequest {
            text: text.into(),
            mode: EmbedMode::Tokens,
        };
        let resp: EmbedResponse = self.call("embed", Some(&req))?;
        Ok(resp.vectors)
    }
}

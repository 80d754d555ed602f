//! HTTP+JSON client for a remote language model.
//!
//! Two endpoints, both `POST` with `Content-Type: application/json`:
//!
//! * `{base}/generate`: `{"prefix", "num_new_tokens", "num_samples", "strategy": {"kind", "param"}, "seed"}`
//!   answered by `{"samples": [string]}`.
//! * `{base}/score`: `{"prefix", "continuation"}` answered by `{"logprob", "token_count"}`.
//!
//! Errors come back as `{"error": string}` with a non-2xx status. A server that honors the
//! seed field says so with the response header `X-Seed-Honored: true`.

use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::tokenize;
use crate::error::{Error, Result};
use crate::lm::{Generator, LanguageModel};
use crate::sampling::SamplingStrategy;

pub const SEED_HEADER: &str = "x-seed-honored";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeEndpoint {
    pub base_url: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub auth_token: Option<String>,
    /// Delay before the first retry; doubles on each further attempt.
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl BridgeEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        BridgeEndpoint {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            timeout_ms: 30_000,
            max_retries: 3,
            auth_token: None,
            backoff_ms: 100,
            max_in_flight: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(Error::invalid(
                "base_url",
                format!("not an http(s) URL: {}", self.base_url),
            ));
        }
        if self.timeout_ms == 0 {
            return Err(Error::invalid("timeout_ms", "must be > 0"));
        }
        if self.max_in_flight == 0 {
            return Err(Error::invalid("max_in_flight", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prefix: String,
    pub num_new_tokens: usize,
    pub num_samples: usize,
    pub strategy: SamplingStrategy,
    pub seed: u64,
}

impl GenerateRequest {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::invalid("num_samples", "must be >= 1"));
        }
        self.strategy.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub samples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prefix: String,
    pub continuation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub logprob: f64,
    pub token_count: u64,
}

/// Parses JSON, reporting failures with the byte offset of the error.
pub fn parse_json(body: &str) -> Result<Value> {
    serde_json::from_str(body).map_err(|e| Error::Parse {
        offset: if e.is_eof() {
            body.len()
        } else {
            byte_offset(body, e.line(), e.column())
        },
        message: e.to_string(),
    })
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

fn object(v: &Value) -> Result<&serde_json::Map<String, Value>> {
    v.as_object().ok_or_else(|| {
        Error::Schema(format!(
            "response: expected a JSON object, got {}",
            kind_of(v)
        ))
    })
}

fn kind_of(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Field-by-field check of a `/generate` response against the request.
pub fn validate_generate(v: &Value, expected_samples: usize) -> Result<GenerateResponse> {
    let obj = object(v)?;
    let samples = obj
        .get("samples")
        .ok_or_else(|| Error::Schema("field `samples`: missing".into()))?
        .as_array()
        .ok_or_else(|| {
            Error::Schema(format!(
                "field `samples`: expected array, got {}",
                kind_of(&obj["samples"])
            ))
        })?;
    let samples = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.as_str().map(str::to_string).ok_or_else(|| {
                Error::Schema(format!(
                    "field `samples[{i}]`: expected string, got {}",
                    kind_of(s)
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if samples.len() != expected_samples {
        return Err(Error::Schema(format!(
            "samples length: expected {expected_samples}, got {}",
            samples.len()
        )));
    }
    Ok(GenerateResponse { samples })
}

/// Field-by-field check of a `/score` response.
pub fn validate_score(v: &Value) -> Result<ScoreResponse> {
    let obj = object(v)?;
    let logprob = match obj.get("logprob") {
        None => return Err(Error::Schema("field `logprob`: missing".into())),
        Some(x) => x
            .as_f64()
            .filter(|l| l.is_finite() || *l == f64::NEG_INFINITY)
            .ok_or_else(|| {
                Error::Schema(format!(
                    "field `logprob`: expected number, got {}",
                    kind_of(x)
                ))
            })?,
    };
    let token_count = match obj.get("token_count") {
        None => return Err(Error::Schema("field `token_count`: missing".into())),
        Some(x) => x.as_u64().ok_or_else(|| {
            Error::Schema(format!(
                "field `token_count`: expected non-negative integer, got {x}"
            ))
        })?,
    };
    Ok(ScoreResponse {
        logprob,
        token_count,
    })
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Gate {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn enter(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

const ATTEST_UNKNOWN: u8 = 0;
const ATTEST_YES: u8 = 1;
const ATTEST_NO: u8 = 2;

struct Reply {
    body: String,
    seed_honored: bool,
}

/// Generator and language model backed by a bridge server. Safe to share between threads.
pub struct BridgeClient {
    endpoint: BridgeEndpoint,
    agent: ureq::Agent,
    gate: Gate,
    attested: AtomicU8,
    warnings: Mutex<Vec<String>>,
}

impl std::fmt::Debug for BridgeClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeClient")
            .field("endpoint", &self.endpoint)
            .finish()
    }
}

impl BridgeClient {
    pub fn new(endpoint: BridgeEndpoint) -> Result<Self> {
        endpoint.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(endpoint.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(BridgeClient {
            gate: Gate::new(endpoint.max_in_flight),
            endpoint,
            agent,
            attested: AtomicU8::new(ATTEST_UNKNOWN),
            warnings: Mutex::new(Vec::new()),
        })
    }

    pub fn endpoint(&self) -> &BridgeEndpoint {
        &self.endpoint
    }

    /// Protocol anomalies seen so far (e.g. positive log-probabilities).
    pub fn warnings(&self) -> Vec<String> {
        self.warnings.lock().unwrap().clone()
    }

    fn warn(&self, msg: String) {
        log::warn!("bridge {}: {msg}", self.endpoint.base_url);
        self.warnings.lock().unwrap().push(msg);
    }

    fn post(&self, path: &str, body: &str) -> Result<Reply> {
        let _slot = self.gate.enter();
        let url = format!("{}{path}", self.endpoint.base_url);
        let mut attempt = 0u32;
        loop {
            let mut req = self
                .agent
                .post(&url)
                .header("Content-Type", "application/json");
            if let Some(tok) = &self.endpoint.auth_token {
                req = req.header("Authorization", &format!("Bearer {tok}"));
            }
            let failure = match req.send(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let seed_honored = resp
                        .headers()
                        .get(SEED_HEADER)
                        .and_then(|v| v.to_str().ok())
                        .is_some_and(|v| v.trim().eq_ignore_ascii_case("true"));
                    let text = resp
                        .body_mut()
                        .read_to_string()
                        .map_err(|e| Error::Transport(format!("{url}: reading body: {e}")));
                    match text {
                        Ok(text) if (200..300).contains(&status) => {
                            return Ok(Reply {
                                body: text,
                                seed_honored,
                            })
                        }
                        Ok(text) => {
                            let err = Error::HttpStatus { status, body: text };
                            if status < 500 && status != 429 {
                                return Err(err);
                            }
                            err
                        }
                        Err(e) => e,
                    }
                }
                Err(e) => Error::Transport(format!("{url}: {e}")),
            };
            if attempt >= self.endpoint.max_retries {
                return Err(failure);
            }
            let delay = self
                .endpoint
                .backoff_ms
                .saturating_mul(1u64 << attempt.min(16));
            log::debug!("bridge retry {} after {delay} ms: {failure}", attempt + 1);
            std::thread::sleep(Duration::from_millis(delay));
            attempt += 1;
        }
    }

    pub fn remote_generate(&self, req: &GenerateRequest) -> Result<GenerateResponse> {
        req.validate()?;
        let reply = self.post("/generate", &serde_json::to_string(req)?)?;
        let resp = validate_generate(&parse_json(&reply.body)?, req.num_samples)?;
        let state = if reply.seed_honored {
            ATTEST_YES
        } else {
            ATTEST_NO
        };
        // Once any response fails to attest, the client stays unattested.
        let _ = self
            .attested
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |cur| {
                (cur != ATTEST_NO).then_some(state)
            });
        Ok(resp)
    }

    pub fn remote_score(&self, req: &ScoreRequest) -> Result<ScoreResponse> {
        let reply = self.post("/score", &serde_json::to_string(req)?)?;
        let resp = validate_score(&parse_json(&reply.body)?)?;
        if resp.logprob > 0.0 {
            self.warn(format!(
                "positive logprob {} for a normalized model",
                resp.logprob
            ));
        }
        if req.continuation.trim().is_empty() && resp.logprob != 0.0 {
            self.warn(format!(
                "empty continuation scored {} instead of 0",
                resp.logprob
            ));
        }
        Ok(resp)
    }
}

impl Generator for BridgeClient {
    /// Samples are re-tokenized locally and cut to `num_new_tokens` tokens.
    fn generate(
        &self,
        prefix: &[String],
        num_new_tokens: usize,
        num_samples: usize,
        strategy: &SamplingStrategy,
        seed: u64,
    ) -> Result<Vec<Vec<String>>> {
        let resp = self.remote_generate(&GenerateRequest {
            prefix: prefix.join(" "),
            num_new_tokens,
            num_samples,
            strategy: *strategy,
            seed,
        })?;
        Ok(resp
            .samples
            .iter()
            .map(|s| {
                let mut toks = tokenize(s).0;
                toks.truncate(num_new_tokens);
                toks
            })
            .collect())
    }

    fn seed_attested(&self) -> bool {
        self.attested.load(Ordering::SeqCst) == ATTEST_YES
    }
}

impl LanguageModel for BridgeClient {
    fn sequence_logprob(&self, prefix: &[String], continuation: &[String]) -> Result<f64> {
        Ok(self
            .remote_score(&ScoreRequest {
                prefix: prefix.join(" "),
                continuation: continuation.join(" "),
            })?
            .logprob)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn byte_offsets_follow_lines() {
        match parse_json("{\"a\": 1,\n \"b\": }") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 15),
            other => panic!("{other:?}"),
        }
        match parse_json("[1, 2") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn generate_schema() {
        let ok = json!({"samples": ["a", "b", "c"]});
        assert_eq!(validate_generate(&ok, 3).unwrap().samples.len(), 3);
        let short = validate_generate(&json!({"samples": ["a", "b"]}), 3).unwrap_err();
        assert!(short.to_string().contains("samples length"), "{short}");
        let typed = validate_generate(&json!({"samples": ["a", 2]}), 2).unwrap_err();
        assert!(typed.to_string().contains("samples[1]"), "{typed}");
        assert!(validate_generate(&json!([]), 0).is_err());
    }

    #[test]
    fn score_schema() {
        let r = validate_score(&json!({"logprob": -1.5, "token_count": 2})).unwrap();
        assert_eq!(r.token_count, 2);
        let e = validate_score(&json!({"logprob": "x", "token_count": 2})).unwrap_err();
        assert!(e.to_string().contains("logprob"));
        let e = validate_score(&json!({"logprob": -1.0, "token_count": -2})).unwrap_err();
        assert!(e.to_string().contains("token_count"));
    }

    #[test]
    fn request_round_trips() {
        let req = GenerateRequest {
            prefix: "a b".into(),
            num_new_tokens: 4,
            num_samples: 2,
            strategy: SamplingStrategy::Nucleus(0.9),
            seed: 7,
        };
        let text = serde_json::to_string(&req).unwrap();
        assert!(
            text.contains(r#""strategy":{"kind":"nucleus","param":0.9}"#),
            "{text}"
        );
        assert_eq!(serde_json::from_str::<GenerateRequest>(&text).unwrap(), req);
    }

    #[test]
    fn endpoint_validation() {
        assert!(BridgeClient::new(BridgeEndpoint::new("localhost:1")).is_err());
        let mut e = BridgeEndpoint::new("http://127.0.0.1:1/");
        assert_eq!(e.base_url, "http://127.0.0.1:1");
        e.timeout_ms = 0;
        assert!(BridgeClient::new(e).is_err());
    }
}

//! Newline-delimited JSON client for external model servers.
//!
//! Each request line carries a string `id`; the server answers every id
//! exactly once, in any order. A response holding an `error` field instead of
//! a result is a per-id failure.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{ScoreRequest, ScorerBackend, ScoringError};

/// Requests written before the client waits for their responses.
const CHUNK: usize = 64;
pub const DEFAULT_ATTEMPTS: usize = 3;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("unreachable after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("{0}")]
    Protocol(String),
}

impl From<ClientError> for ScoringError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Transport { attempts, message } => ScoringError::Transport { attempts, message },
            ClientError::Protocol(m) => ScoringError::Protocol(m),
        }
    }
}

enum ExchangeError {
    Io(io::Error),
    Protocol(String),
}

impl From<io::Error> for ExchangeError {
    fn from(e: io::Error) -> Self {
        ExchangeError::Io(e)
    }
}

/// Strip an optional `tcp://` scheme.
pub fn parse_endpoint(endpoint: &str) -> &str {
    endpoint.strip_prefix("tcp://").unwrap_or(endpoint)
}

/// Write `(id, request)` pairs and collect one decoded response per id.
pub fn exchange<Req, Resp, R, W>(reader: &mut R, writer: &mut W, requests: &[(String, Req)]) -> Result<HashMap<String, Resp>, ClientError>
where
    Req: Serialize,
    Resp: DeserializeOwned,
    R: BufRead,
    W: Write,
{
    exchange_inner(reader, writer, requests).map_err(|e| match e {
        ExchangeError::Io(e) => ClientError::Transport { attempts: 1, message: e.to_string() },
        ExchangeError::Protocol(m) => ClientError::Protocol(m),
    })
}

fn exchange_inner<Req, Resp, R, W>(reader: &mut R, writer: &mut W, requests: &[(String, Req)]) -> Result<HashMap<String, Resp>, ExchangeError>
where
    Req: Serialize,
    Resp: DeserializeOwned,
    R: BufRead,
    W: Write,
{
    let mut out = HashMap::with_capacity(requests.len());
    let mut line = String::new();
    for chunk in requests.chunks(CHUNK) {
        let mut pending: HashMap<&str, ()> = HashMap::with_capacity(chunk.len());
        for (id, req) in chunk {
            if pending.insert(id.as_str(), ()).is_some() || out.contains_key(id) {
                return Err(ExchangeError::Protocol(format!("duplicate request id `{id}`")));
            }
            serde_json::to_writer(&mut *writer, req).map_err(|e| ExchangeError::Protocol(e.to_string()))?;
            writer.write_all(b"\n")?;
        }
        writer.flush()?;
        while !pending.is_empty() {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "server closed the stream").into());
            }
            if line.trim().is_empty() {
                continue;
            }
            let value: Value = serde_json::from_str(&line)
                .map_err(|e| ExchangeError::Protocol(format!("unparseable response `{}`: {e}", line.trim_end())))?;
            let id = value
                .get("id")
                .and_then(Value::as_str)
                .ok_or_else(|| ExchangeError::Protocol(format!("response without id: {}", line.trim_end())))?
                .to_owned();
            if pending.remove(id.as_str()).is_none() {
                return Err(ExchangeError::Protocol(format!("unexpected or repeated response id `{id}`")));
            }
            if let Some(err) = value.get("error") {
                return Err(ExchangeError::Protocol(format!("server error for `{id}`: {err}")));
            }
            let resp: Resp = serde_json::from_value(value)
                .map_err(|e| ExchangeError::Protocol(format!("bad response for `{id}`: {e}")))?;
            out.insert(id, resp);
        }
    }
    Ok(out)
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

/// A TCP connection to an NDJSON server, reconnecting with backoff on
/// transport failures.
pub struct NdjsonClient {
    addr: String,
    attempts: usize,
    timeout: Duration,
    conn: Mutex<Option<Connection>>,
}

impl NdjsonClient {
    pub fn new(endpoint: &str) -> Self {
        NdjsonClient {
            addr: parse_endpoint(endpoint).to_owned(),
            attempts: DEFAULT_ATTEMPTS,
            timeout: Duration::from_secs(60),
            conn: Mutex::new(None),
        }
    }

    pub fn with_attempts(mut self, attempts: usize) -> Self {
        self.attempts = attempts.max(1);
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    fn connect(&self) -> io::Result<Connection> {
        let mut last = io::Error::new(io::ErrorKind::NotFound, format!("`{}` resolved to no address", self.addr));
        for addr in self.addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&addr, self.timeout) {
                Ok(stream) => {
                    stream.set_read_timeout(Some(self.timeout))?;
                    stream.set_nodelay(true)?;
                    let writer = stream.try_clone()?;
                    return Ok(Connection { reader: BufReader::new(stream), writer });
                }
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    pub fn round_trip<Req, Resp>(&self, requests: &[(String, Req)]) -> Result<HashMap<String, Resp>, ClientError>
    where
        Req: Serialize,
        Resp: DeserializeOwned,
    {
        let mut guard = self.conn.lock().expect("ndjson connection poisoned");
        let mut last = String::new();
        for attempt in 0..self.attempts {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(50 << attempt.min(6)));
            }
            if guard.is_none() {
                match self.connect() {
                    Ok(c) => *guard = Some(c),
                    Err(e) => {
                        last = e.to_string();
                        continue;
                    }
                }
            }
            let conn = guard.as_mut().expect("connected above");
            match exchange_inner(&mut conn.reader, &mut conn.writer, requests) {
                Ok(out) => return Ok(out),
                Err(ExchangeError::Protocol(m)) => {
                    *guard = None;
                    return Err(ClientError::Protocol(m));
                }
                Err(ExchangeError::Io(e)) => {
                    *guard = None;
                    last = e.to_string();
                }
            }
        }
        Err(ClientError::Transport { attempts: self.attempts, message: format!("{}: {last}", self.addr) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireScoreRequest {
    pub id: String,
    pub question: String,
    /// The full encoded input (question, paragraph and answer slot with their
    /// special tokens), aligned with `segment_ids`.
    pub paragraph_tokens: Vec<u32>,
    pub segment_ids: Vec<u8>,
    /// `"mask"` or `"text"`.
    pub answer_mode: String,
}

impl WireScoreRequest {
    pub fn from_request(r: &ScoreRequest<'_>) -> Self {
        WireScoreRequest {
            id: r.id.clone(),
            question: r.question.to_owned(),
            paragraph_tokens: r.input.token_ids.clone(),
            segment_ids: r.input.segment_ids.clone(),
            answer_mode: if r.answer.is_some() { "text" } else { "mask" }.to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireScoreResponse {
    pub id: String,
    pub logit: f64,
}

/// Scorer backend served over the NDJSON sentence-scoring protocol.
pub struct NdjsonScorer {
    client: NdjsonClient,
    identity: String,
}

impl NdjsonScorer {
    pub fn new(endpoint: &str) -> Self {
        let client = NdjsonClient::new(endpoint);
        let identity = format!("ndjson-scorer:{}", client.addr());
        NdjsonScorer { client, identity }
    }

    /// Override the identity used in cache keys, e.g. with a model hash.
    pub fn with_identity(mut self, identity: impl Into<String>) -> Self {
        self.identity = identity.into();
        self
    }

    pub fn with_client(mut self, client: NdjsonClient) -> Self {
        self.client = client;
        self
    }
}

impl ScorerBackend for NdjsonScorer {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn score_batch(&self, requests: &[ScoreRequest<'_>]) -> Result<Vec<f64>, ScoringError> {
        let wire: Vec<(String, WireScoreRequest)> =
            requests.iter().map(|r| (r.id.clone(), WireScoreRequest::from_request(r))).collect();
        let mut responses: HashMap<String, WireScoreResponse> = self.client.round_trip(&wire)?;
        requests
            .iter()
            .map(|r| {
                let resp = responses.remove(&r.id).ok_or_else(|| ScoringError::Protocol(format!("no response for `{}`", r.id)))?;
                if !resp.logit.is_finite() {
                    return Err(ScoringError::NonFinite(r.id.clone()));
                }
                Ok(resp.logit)
            })
            .collect()
    }
}

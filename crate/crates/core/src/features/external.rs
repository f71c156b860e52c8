//! Out-of-process embedding providers.
//!
//! One JSON request per chunk, either as a line on a child process's stdin
//! (answered by one line on its stdout) or as the body of `POST /embed`.
//! Samples travel as base64 little-endian `f32`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{checked_vector, EmbeddingProvider, FeatureError, FeatureVector, ProviderDescriptor};
use crate::audio_io::Chunk;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub chunk_id: String,
    pub sample_rate_hz: u32,
    pub samples: String,
}

impl EmbedRequest {
    pub fn from_chunk(chunk: &Chunk) -> Self {
        let mut raw = Vec::with_capacity(chunk.samples.len() * 4);
        for &s in &chunk.samples {
            raw.extend_from_slice(&(s as f32).to_le_bytes());
        }
        Self {
            chunk_id: chunk.id(),
            sample_rate_hz: chunk.sample_rate_hz,
            samples: B64.encode(raw),
        }
    }

    pub fn decode_samples(&self) -> Result<Vec<f64>, String> {
        let raw = B64.decode(&self.samples).map_err(|e| format!("samples: {e}"))?;
        if raw.len() % 4 != 0 {
            return Err("samples: length not a multiple of 4".into());
        }
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect())
    }

    /// Rebuilds a chunk from the request. `chunk_id` is split at its last `#`.
    pub fn to_chunk(&self) -> Result<Chunk, String> {
        let samples = self.decode_samples()?;
        if samples.iter().any(|s| !s.is_finite()) {
            return Err("samples: non-finite value".into());
        }
        let (source_id, index) = match self.chunk_id.rsplit_once('#') {
            Some((s, i)) => (s.to_owned(), i.parse().unwrap_or(0)),
            None => (self.chunk_id.clone(), 0),
        };
        Ok(Chunk {
            samples,
            sample_rate_hz: self.sample_rate_hz,
            source_id,
            index,
            start_s: 0.0,
            padded: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EmbedReply {
    Vector { chunk_id: String, dim: usize, values: Vec<f64> },
    Error { error: String },
}

impl EmbedReply {
    /// Server side of the protocol: answers one request with `provider`.
    pub fn answer(provider: &dyn EmbeddingProvider, request: &EmbedRequest) -> Self {
        let chunk = match request.to_chunk() {
            Ok(c) => c,
            Err(error) => return EmbedReply::Error { error },
        };
        match provider.embed(&chunk) {
            Ok(v) => EmbedReply::Vector {
                chunk_id: request.chunk_id.clone(),
                dim: v.dim(),
                values: v.values.iter().map(|&x| x as f64).collect(),
            },
            Err(e) => EmbedReply::Error { error: e.to_string() },
        }
    }
}

/// Serves the line protocol until `input` reaches EOF.
pub fn serve_stdio<R: BufRead, W: Write>(provider: &dyn EmbeddingProvider, input: R, mut output: W) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<EmbedRequest>(&line) {
            Ok(req) => EmbedReply::answer(provider, &req),
            Err(e) => EmbedReply::Error {
                error: format!("bad request: {e}"),
            },
        };
        serde_json::to_writer(&mut output, &reply)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Base URL; requests go to `<url>/embed`.
    Http(String),
    /// Program and arguments speaking the line protocol on stdio.
    Command(Vec<String>),
}

impl Endpoint {
    pub fn parse(s: &str) -> Result<Self, FeatureError> {
        let s = s.trim();
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(Endpoint::Http(s.trim_end_matches('/').to_owned()));
        }
        let argv: Vec<String> = s.strip_prefix("cmd:").unwrap_or(s).split_whitespace().map(str::to_owned).collect();
        if argv.is_empty() {
            return Err(FeatureError::ProviderUnavailable("empty endpoint".into()));
        }
        Ok(Endpoint::Command(argv))
    }
}

struct StdioChannel {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

enum Transport {
    Http { agent: ureq::Agent, url: String },
    Stdio(Mutex<StdioChannel>),
}

/// Provider backed by a separate model process or HTTP service.
pub struct ExternalProvider {
    descriptor: ProviderDescriptor,
    transport: Transport,
}

impl std::fmt::Debug for ExternalProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalProvider").field("descriptor", &self.descriptor).finish_non_exhaustive()
    }
}

impl ExternalProvider {
    pub fn connect(mut descriptor: ProviderDescriptor, endpoint: Endpoint) -> Result<Self, FeatureError> {
        let transport = match endpoint {
            Endpoint::Http(base) => {
                let agent: ureq::Agent = ureq::Agent::config_builder()
                    .timeout_global(Some(Duration::from_secs(120)))
                    .build()
                    .into();
                Transport::Http {
                    agent,
                    url: format!("{base}/embed"),
                }
            }
            Endpoint::Command(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| FeatureError::ProviderUnavailable(format!("spawning {}: {e}", argv[0])))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
                descriptor.single_consumer = true;
                Transport::Stdio(Mutex::new(StdioChannel { child, stdin, stdout }))
            }
        };
        Ok(Self { descriptor, transport })
    }

    fn round_trip(&self, request: &EmbedRequest) -> Result<EmbedReply, FeatureError> {
        let body = serde_json::to_string(request).expect("request serializes");
        let unavailable = |e: &dyn std::fmt::Display| FeatureError::ProviderUnavailable(format!("{}: {e}", self.descriptor.provider_id));
        let text = match &self.transport {
            Transport::Http { agent, url } => agent
                .post(url)
                .header("content-type", "application/json")
                .send(body)
                .map_err(|e| unavailable(&e))?
                .body_mut()
                .read_to_string()
                .map_err(|e| unavailable(&e))?,
            Transport::Stdio(channel) => {
                let mut ch = channel.lock().unwrap_or_else(|p| p.into_inner());
                writeln!(ch.stdin, "{body}").and_then(|_| ch.stdin.flush()).map_err(|e| unavailable(&e))?;
                let mut line = String::new();
                let n = ch.stdout.read_line(&mut line).map_err(|e| unavailable(&e))?;
                if n == 0 {
                    return Err(unavailable(&"provider process closed its output"));
                }
                line
            }
        };
        serde_json::from_str(&text).map_err(|e| unavailable(&format!("unparseable reply: {e}")))
    }
}

impl EmbeddingProvider for ExternalProvider {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn embed(&self, chunk: &Chunk) -> Result<FeatureVector, FeatureError> {
        let request = EmbedRequest::from_chunk(chunk);
        match self.round_trip(&request)? {
            EmbedReply::Error { error } => Err(FeatureError::ProviderUnavailable(format!(
                "{} rejected {}: {error}",
                self.descriptor.provider_id, request.chunk_id
            ))),
            EmbedReply::Vector { chunk_id, dim, values } => {
                if chunk_id != request.chunk_id {
                    return Err(FeatureError::ProviderUnavailable(format!(
                        "reply for {chunk_id} while waiting for {}",
                        request.chunk_id
                    )));
                }
                if dim != values.len() {
                    return Err(FeatureError::DimMismatch {
                        provider: self.descriptor.provider_id.clone(),
                        expected: dim,
                        got: values.len(),
                    });
                }
                checked_vector(&self.descriptor, chunk_id, values.into_iter().map(|v| v as f32).collect())
            }
        }
    }
}

impl Drop for ExternalProvider {
    fn drop(&mut self) {
        if let Transport::Stdio(channel) = &mut self.transport {
            let ch = channel.get_mut().unwrap_or_else(|p| p.into_inner());
            let _ = ch.child.kill();
            let _ = ch.child.wait();
        }
    }
}

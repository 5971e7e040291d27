//! Blocking HTTP client for an inference sidecar.
//!
//! Endpoints (JSON bodies, POST):
//! - `/v1/capabilities`
//! - `/v1/next_logits`     `{image_png_base64, prompt, prefix_ids}`
//! - `/v1/sequence_logits` `{image_png_base64, prompt, continuation}`
//!
//! Logits arrive either as JSON number arrays or, when `"encoding": "f16"`
//! is requested, as base64 of little-endian IEEE half floats.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use half::f16;
use serde::{Deserialize, Serialize};

use super::{Capabilities, LogitProvider, SequenceLogits};
use crate::error::{Error, Result};
use crate::types::{ImageBuffer, LogitVector, TokenId, TokenSequence};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogitEncoding {
    #[default]
    F32,
    F16,
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub url: String,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub encoding: LogitEncoding,
    /// Overrides the sidecar-reported end-of-sequence id.
    pub eos_id: Option<TokenId>,
    /// Overrides the sidecar-reported affirmative token ids.
    pub affirmative_ids: Option<Vec<TokenId>>,
}

impl HttpConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout: Duration::from_secs(120),
            max_in_flight: 4,
            encoding: LogitEncoding::F32,
            eos_id: None,
            affirmative_ids: None,
        }
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WireLogits {
    Values(Vec<f64>),
    Packed(String),
}

impl WireLogits {
    fn decode(self) -> Result<LogitVector> {
        match self {
            WireLogits::Values(v) => LogitVector::new(v),
            WireLogits::Packed(b64) => LogitVector::new(decode_f16(&b64)?),
        }
    }
}

/// Decodes base64 little-endian half floats.
pub(crate) fn decode_f16(b64: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(b64)
        .map_err(|e| Error::BackendProtocol(format!("bad base64 logits: {e}")))?;
    if bytes.len() % 2 != 0 {
        return Err(Error::BackendProtocol("odd byte count in f16 logits".into()));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|b| f64::from(f16::from_le_bytes([b[0], b[1]]).to_f32()))
        .collect())
}

#[derive(Serialize)]
struct NextRequest<'a> {
    image_png_base64: &'a str,
    prompt: &'a str,
    prefix_ids: &'a [TokenId],
    #[serde(skip_serializing_if = "Option::is_none")]
    encoding: Option<LogitEncoding>,
}

#[derive(Serialize)]
struct SequenceRequest<'a> {
    image_png_base64: &'a str,
    prompt: &'a str,
    continuation: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    encoding: Option<LogitEncoding>,
}

#[derive(Deserialize)]
struct NextResponse {
    logits: WireLogits,
    vocab_size: usize,
}

#[derive(Deserialize)]
struct SequenceResponse {
    continuation_ids: Vec<TokenId>,
    pieces: Vec<String>,
    logits_per_step: Vec<WireLogits>,
}

#[derive(Deserialize, Default)]
struct ErrorBody {
    #[serde(default)]
    error: String,
    #[serde(default)]
    detail: String,
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    capabilities: Capabilities,
    in_flight: Semaphore,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("url", &self.config.url)
            .field("capabilities", &self.capabilities)
            .finish()
    }
}

impl HttpBackend {
    /// Connects and fetches capabilities; fails with `BackendUnavailable`
    /// when the sidecar cannot be reached.
    pub fn connect(config: HttpConfig) -> Result<Self> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut backend = Self {
            in_flight: Semaphore::new(config.max_in_flight),
            config,
            agent,
            capabilities: Capabilities {
                vocab_size: 0,
                supports_sequence_scoring: false,
                model_id: String::new(),
                eos_id: None,
                affirmative_ids: vec![],
            },
        };
        let mut caps: Capabilities = backend.post("/v1/capabilities", &serde_json::json!({}))?;
        if caps.vocab_size == 0 {
            return Err(Error::BackendProtocol("sidecar reported vocab_size 0".into()));
        }
        if let Some(eos) = backend.config.eos_id {
            caps.eos_id = Some(eos);
        }
        if let Some(ids) = &backend.config.affirmative_ids {
            caps.affirmative_ids = ids.clone();
        }
        backend.capabilities = caps;
        Ok(backend)
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}{}", self.config.url.trim_end_matches('/'), path)
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, path: &str, body: &B) -> Result<R> {
        let url = self.endpoint(path);
        let payload = serde_json::to_string(body)?;
        let _permit = self.in_flight.acquire();
        let mut response = self
            .agent
            .post(&url)
            .header("content-type", "application/json")
            .send(payload.as_str())
            .map_err(|e| Error::BackendUnavailable(format!("{url}: {e}")))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .with_config()
            .limit(1 << 30)
            .read_to_string()
            .map_err(|e| Error::BackendUnavailable(format!("{url}: reading body: {e}")))?;
        if status != 200 {
            let body: ErrorBody = serde_json::from_str(&text).unwrap_or_default();
            if status == 503 {
                return Err(Error::BackendUnavailable(format!(
                    "{url}: {} {}",
                    body.error, body.detail
                )));
            }
            return Err(Error::BackendRejected {
                status,
                error: body.error,
                detail: body.detail,
            });
        }
        serde_json::from_str(&text).map_err(|e| Error::BackendProtocol(format!("{url}: {e}")))
    }

    fn encoding(&self) -> Option<LogitEncoding> {
        match self.config.encoding {
            LogitEncoding::F32 => None,
            LogitEncoding::F16 => Some(LogitEncoding::F16),
        }
    }
}

impl LogitProvider for HttpBackend {
    fn capabilities(&self) -> &Capabilities {
        &self.capabilities
    }

    fn next_logits(
        &self,
        image: &ImageBuffer,
        prompt: &str,
        prefix: &[TokenId],
    ) -> Result<LogitVector> {
        let image_png_base64 = STANDARD.encode(image.encode_png()?);
        let response: NextResponse = self.post(
            "/v1/next_logits",
            &NextRequest {
                image_png_base64: &image_png_base64,
                prompt,
                prefix_ids: prefix,
                encoding: self.encoding(),
            },
        )?;
        let logits = response.logits.decode()?;
        if logits.vocab_size() != response.vocab_size {
            return Err(Error::VocabMismatch {
                expected: response.vocab_size,
                actual: logits.vocab_size(),
            });
        }
        Ok(logits)
    }

    fn sequence_logits(
        &self,
        image: &ImageBuffer,
        prompt: &str,
        continuation: &str,
    ) -> Result<SequenceLogits> {
        let image_png_base64 = STANDARD.encode(image.encode_png()?);
        let response: SequenceResponse = self.post(
            "/v1/sequence_logits",
            &SequenceRequest {
                image_png_base64: &image_png_base64,
                prompt,
                continuation,
                encoding: self.encoding(),
            },
        )?;
        let per_step = response
            .logits_per_step
            .into_iter()
            .map(WireLogits::decode)
            .collect::<Result<Vec<_>>>()?;
        let tokens = TokenSequence::new(response.continuation_ids, response.pieces)
            .map_err(|e| Error::BackendProtocol(e.to_string()))?;
        SequenceLogits::new(per_step, tokens)
    }
}

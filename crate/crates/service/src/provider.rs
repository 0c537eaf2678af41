//! OpenAI-style chat-completions backend.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use aromagen_core::gateway::{Provider, ProviderError};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde_json::{json, Value};
use thiserror::Error;

pub const ENV_ENDPOINT: &str = "AROMAGEN_LLM_ENDPOINT";
pub const ENV_MODEL: &str = "AROMAGEN_LLM_MODEL";
pub const ENV_API_KEY: &str = "AROMAGEN_LLM_API_KEY";
pub const ENV_TIMEOUT: &str = "AROMAGEN_LLM_TIMEOUT_SECS";
pub const ENV_DEBUG_LOG: &str = "AROMAGEN_LLM_DEBUG_LOG";

const DEFAULT_TIMEOUT_SECS: u64 = 60;

const IMAGE_INSTRUCTION: &str = "Describe the food or drink in this image in one or two sentences, focusing on ingredients, preparation and anything that hints at its smell.";
const AUDIO_INSTRUCTION: &str = "Transcribe this audio verbatim. Reply with the transcript only.";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0} is not set")]
    Missing(&'static str),
    #[error("{name} is invalid: {value}")]
    Invalid { name: &'static str, value: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Mirror every request/response pair to this JSONL file.
    pub debug_log: Option<PathBuf>,
}

impl HttpConfig {
    pub fn from_env() -> Result<Self, ConfigError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let required = |name: &'static str| {
            get(name)
                .filter(|v| !v.trim().is_empty())
                .ok_or(ConfigError::Missing(name))
        };
        let timeout = match get(ENV_TIMEOUT) {
            None => DEFAULT_TIMEOUT_SECS,
            Some(v) => v
                .trim()
                .parse()
                .ok()
                .filter(|s| *s > 0)
                .ok_or(ConfigError::Invalid {
                    name: ENV_TIMEOUT,
                    value: v,
                })?,
        };
        Ok(Self {
            endpoint: required(ENV_ENDPOINT)?,
            model: required(ENV_MODEL)?,
            api_key: get(ENV_API_KEY).filter(|v| !v.is_empty()),
            timeout: Duration::from_secs(timeout),
            debug_log: get(ENV_DEBUG_LOG)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from),
        })
    }
}

pub struct HttpProvider {
    config: HttpConfig,
    agent: ureq::Agent,
    debug_log: Option<Mutex<File>>,
}

impl HttpProvider {
    pub fn new(config: HttpConfig) -> std::io::Result<Self> {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        let debug_log = match &config.debug_log {
            Some(path) => Some(Mutex::new(
                OpenOptions::new().create(true).append(true).open(path)?,
            )),
            None => None,
        };
        Ok(Self {
            config,
            agent,
            debug_log,
        })
    }

    fn chat(&self, kind: &str, messages: Value) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": 0,
        });
        let started = Instant::now();
        let result = self.post(&body);
        self.mirror(kind, &body, &result, started.elapsed());
        result
    }

    fn post(&self, body: &Value) -> Result<String, ProviderError> {
        let mut request = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(body).map_err(transport)?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(transport)?;
        if !(200..300).contains(&status) {
            return Err(ProviderError::Status { status, body: text });
        }
        let reply: Value = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Protocol(format!("response is not JSON: {e}")))?;
        reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| ProviderError::Protocol("missing choices[0].message.content".into()))
    }

    fn mirror(
        &self,
        kind: &str,
        request: &Value,
        result: &Result<String, ProviderError>,
        took: Duration,
    ) {
        let Some(log) = &self.debug_log else { return };
        let at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or_default();
        let entry = json!({
            "unix_ms": at,
            "kind": kind,
            "elapsed_ms": took.as_millis(),
            "request": request,
            "response": result.as_ref().ok(),
            "error": result.as_ref().err().map(ToString::to_string),
        });
        let mut line = entry.to_string();
        line.push('\n');
        let mut file = log.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = file.write_all(line.as_bytes()) {
            tracing::warn!(%e, "could not write provider debug log");
        }
    }
}

fn transport(e: ureq::Error) -> ProviderError {
    match e {
        ureq::Error::Timeout(_) => ProviderError::Timeout,
        other => ProviderError::Transport(other.to_string()),
    }
}

fn image_mime(bytes: &[u8]) -> &'static str {
    match bytes {
        [0x89, b'P', b'N', b'G', ..] => "image/png",
        [b'G', b'I', b'F', b'8', ..] => "image/gif",
        [b'R', b'I', b'F', b'F', _, _, _, _, b'W', b'E', b'B', b'P', ..] => "image/webp",
        _ => "image/jpeg",
    }
}

fn audio_format(bytes: &[u8]) -> &'static str {
    match bytes {
        [b'I', b'D', b'3', ..] | [0xFF, 0xFB, ..] | [0xFF, 0xF3, ..] => "mp3",
        _ => "wav",
    }
}

impl Provider for HttpProvider {
    fn complete(&self, system: &str, user: &str) -> Result<String, ProviderError> {
        self.chat(
            "complete",
            json!([
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ]),
        )
    }

    fn describe_image(&self, image: &[u8]) -> Result<String, ProviderError> {
        let url = format!(
            "data:{};base64,{}",
            image_mime(image),
            STANDARD.encode(image)
        );
        self.chat(
            "describe_image",
            json!([{"role": "user", "content": [
                {"type": "text", "text": IMAGE_INSTRUCTION},
                {"type": "image_url", "image_url": {"url": url}},
            ]}]),
        )
    }

    fn transcribe(&self, audio: &[u8]) -> Result<String, ProviderError> {
        self.chat(
            "transcribe",
            json!([{"role": "user", "content": [
                {"type": "text", "text": AUDIO_INSTRUCTION},
                {"type": "input_audio", "input_audio": {
                    "data": STANDARD.encode(audio),
                    "format": audio_format(audio),
                }},
            ]}]),
        )
    }
}

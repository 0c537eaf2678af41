use std::collections::VecDeque;
use std::sync::Mutex;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("provider returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("provider timed out")]
    Timeout,
    #[error("malformed provider reply: {0}")]
    Protocol(String),
}

/// A chat-completion backend plus the two cascade steps that turn images and
/// audio into text. Implementations must tolerate concurrent calls.
pub trait Provider: Send + Sync {
    fn complete(&self, system: &str, user: &str) -> Result<String, ProviderError>;
    fn describe_image(&self, image: &[u8]) -> Result<String, ProviderError>;
    fn transcribe(&self, audio: &[u8]) -> Result<String, ProviderError>;
}

impl<P: Provider + ?Sized> Provider for std::sync::Arc<P> {
    fn complete(&self, system: &str, user: &str) -> Result<String, ProviderError> {
        (**self).complete(system, user)
    }
    fn describe_image(&self, image: &[u8]) -> Result<String, ProviderError> {
        (**self).describe_image(image)
    }
    fn transcribe(&self, audio: &[u8]) -> Result<String, ProviderError> {
        (**self).transcribe(audio)
    }
}

/// Replays a fixed list of completions and records every request.
///
/// Image and audio bytes are echoed back as (lossy) UTF-8.
#[derive(Default)]
pub struct ScriptedProvider {
    replies: Mutex<VecDeque<Result<String, ProviderError>>>,
    calls: Mutex<Vec<(String, String)>>,
}

impl ScriptedProvider {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::from_results(replies.into_iter().map(|s| Ok(s.into())))
    }

    pub fn from_results(replies: impl IntoIterator<Item = Result<String, ProviderError>>) -> Self {
        Self {
            replies: Mutex::new(replies.into_iter().collect()),
            calls: Mutex::default(),
        }
    }

    pub fn push(&self, reply: impl Into<String>) {
        self.replies.lock().unwrap().push_back(Ok(reply.into()));
    }

    /// `(system, user)` pairs seen so far.
    pub fn calls(&self) -> Vec<(String, String)> {
        self.calls.lock().unwrap().clone()
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, system: &str, user: &str) -> Result<String, ProviderError> {
        self.calls
            .lock()
            .unwrap()
            .push((system.to_owned(), user.to_owned()));
        self.replies
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(ProviderError::Transport("script exhausted".into())))
    }

    fn describe_image(&self, image: &[u8]) -> Result<String, ProviderError> {
        Ok(String::from_utf8_lossy(image).into_owned())
    }

    fn transcribe(&self, audio: &[u8]) -> Result<String, ProviderError> {
        Ok(String::from_utf8_lossy(audio).into_owned())
    }
}

//! Chat-completion clients: a remote endpoint or a scripted stub keyed by
//! prompt digest.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::embed::{post_json, API_KEY_ENV};
use crate::error::{Error, Result};

/// Script key matching any prompt without its own entry.
pub const DEFAULT_KEY: &str = "*";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LlmClientSpec {
    Remote { endpoint: String, model: String },
    ScriptedStub { script: BTreeMap<String, String> },
}

/// Lowercase hex sha256 of the prompt; the stub's lookup key.
pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug)]
pub enum LlmClient {
    Remote {
        endpoint: String,
        model: String,
        api_key: Option<String>,
        requests: AtomicUsize,
        backoff: Duration,
    },
    Stub {
        script: BTreeMap<String, String>,
    },
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

impl LlmClient {
    pub fn from_spec(spec: &LlmClientSpec) -> LlmClient {
        match spec {
            LlmClientSpec::Remote { endpoint, model } => LlmClient::Remote {
                endpoint: endpoint.clone(),
                model: model.clone(),
                api_key: std::env::var(API_KEY_ENV).ok(),
                requests: AtomicUsize::new(0),
                backoff: Duration::from_millis(200),
            },
            LlmClientSpec::ScriptedStub { script } => LlmClient::Stub {
                script: script.clone(),
            },
        }
    }

    pub fn stub(script: impl IntoIterator<Item = (String, String)>) -> LlmClient {
        LlmClient::Stub {
            script: script.into_iter().collect(),
        }
    }

    /// A stub that gives `reply` to every prompt.
    pub fn constant(reply: impl Into<String>) -> LlmClient {
        LlmClient::stub([(DEFAULT_KEY.to_owned(), reply.into())])
    }

    /// Loads a stub script: a JSON object from prompt digest (or `"*"`) to
    /// reply text.
    pub fn load_script(path: &Path) -> Result<LlmClient> {
        let script: BTreeMap<String, String> = serde_json::from_slice(&std::fs::read(path)?)
            .map_err(|e| Error::config(format!("llm script {}: {e}", path.display())))?;
        Ok(LlmClient::Stub { script })
    }

    pub fn with_backoff(mut self, base: Duration) -> LlmClient {
        if let LlmClient::Remote { backoff, .. } = &mut self {
            *backoff = base;
        }
        self
    }

    /// HTTP requests issued so far; always 0 for the stub.
    pub fn requests_issued(&self) -> usize {
        match self {
            LlmClient::Remote { requests, .. } => requests.load(Ordering::Relaxed),
            LlmClient::Stub { .. } => 0,
        }
    }

    pub fn complete(&self, prompt: &str) -> Result<String> {
        match self {
            LlmClient::Stub { script } => {
                let digest = prompt_digest(prompt);
                script
                    .get(&digest)
                    .or_else(|| script.get(DEFAULT_KEY))
                    .cloned()
                    .ok_or(Error::NoScriptedReply(digest))
            }
            LlmClient::Remote {
                endpoint,
                model,
                api_key,
                requests,
                backoff,
            } => {
                let body = json!({
                    "model": model,
                    "messages": [{"role": "user", "content": prompt}],
                })
                .to_string();
                let raw = post_json(endpoint, api_key.as_deref(), &body, requests, *backoff)?;
                let resp: ChatResponse =
                    serde_json::from_str(&raw).map_err(|e| Error::Provider {
                        endpoint: endpoint.clone(),
                        status: None,
                        message: format!("malformed chat response: {e}"),
                    })?;
                resp.choices
                    .into_iter()
                    .next()
                    .map(|c| c.message.content)
                    .ok_or_else(|| Error::Provider {
                        endpoint: endpoint.clone(),
                        status: None,
                        message: "chat response has no choices".into(),
                    })
            }
        }
    }
}

/// Parses `["a", 'b', ...]`. Anything else, including trailing prose, is
/// rejected with a reason.
pub fn parse_string_list(reply: &str) -> std::result::Result<Vec<String>, String> {
    let s = reply.trim();
    let inner = s
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| "reply is not a bracketed list".to_owned())?;
    let mut out = Vec::new();
    let mut chars = inner.chars().peekable();
    loop {
        while chars.next_if(|c| c.is_whitespace()).is_some() {}
        let Some(quote) = chars.next() else { break };
        if quote != '"' && quote != '\'' {
            return Err(format!("expected a quoted string, found {quote:?}"));
        }
        let mut item = String::new();
        loop {
            match chars.next() {
                None => return Err("unterminated string".into()),
                Some('\\') => match chars.next() {
                    Some('n') => item.push('\n'),
                    Some('t') => item.push('\t'),
                    Some(c) => item.push(c),
                    None => return Err("unterminated escape".into()),
                },
                Some(c) if c == quote => break,
                Some(c) => item.push(c),
            }
        }
        out.push(item);
        while chars.next_if(|c| c.is_whitespace()).is_some() {}
        match chars.next() {
            None => break,
            Some(',') => {}
            Some(c) => return Err(format!("expected ',' between items, found {c:?}")),
        }
    }
    Ok(out)
}

//! Dataset-level concepts queried from a text-completion LLM.
//!
//! The class list (or chunks of it) is sent with a fixed question; each
//! completion is cut at the first sentence, singularized, title-cased and
//! dropped when it names a non-specific category. The most common surviving
//! answer across chunks wins.

mod http;

pub use http::HttpLlmClient;

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CategorySet;
use crate::error::{Error, Result};

/// Answers too generic to guide retrieval.
pub const FILTER_TERMS: [&str; 6] = ["Object", "Thing", "Verb", "Adjective", "Noun", "Word"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptQuery {
    pub class_chunk: Vec<String>,
    pub rendered_query: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConceptResult {
    pub concept: Option<String>,
    pub raw_responses: Vec<String>,
    pub filtered: bool,
}

fn default_api_key_env() -> Option<String> {
    Some("OPENAI_API_KEY".into())
}
fn default_max_classes() -> usize {
    100
}
fn default_timeout() -> f64 {
    30.0
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> f64 {
    1.0
}
fn default_body_template() -> serde_json::Value {
    serde_json::json!({
        "model": "{model}",
        "prompt": "{query}",
        "max_tokens": 16,
        "temperature": 0,
        "stop": ["\n"]
    })
}
fn default_response_pointer() -> String {
    "/choices/0/text".into()
}

/// Where and how to send concept queries. The API key itself is only ever
/// read from the environment variable named here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmEndpointConfig {
    pub base_url: String,
    pub model_name: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_max_classes")]
    pub max_classes_per_query: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// First retry delay; doubles on every further retry.
    #[serde(default = "default_backoff")]
    pub backoff_base_secs: f64,
    /// Request body. Every string value has `{model}` and `{query}` replaced.
    #[serde(default = "default_body_template")]
    pub body_template: serde_json::Value,
    /// JSON pointer to the completion text in the response body.
    #[serde(default = "default_response_pointer")]
    pub response_pointer: String,
}

impl LlmEndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key_env: default_api_key_env(),
            max_classes_per_query: default_max_classes(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            backoff_base_secs: default_backoff(),
            body_template: default_body_template(),
            response_pointer: default_response_pointer(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_classes_per_query == 0 {
            return Err(Error::invalid("max_classes_per_query must be positive"));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(Error::invalid("timeout must be positive"));
        }
        if !(self.backoff_base_secs.is_finite() && self.backoff_base_secs >= 0.0) {
            return Err(Error::invalid("backoff must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub enum LlmError {
    /// Worth retrying: connection failures, timeouts, 429 and 5xx.
    Transient(String),
    Fatal(Error),
}

/// A completion endpoint. Called from one worker at a time.
pub trait LlmClient {
    fn complete(&mut self, query: &str) -> Result<String, LlmError>;
}

pub fn build_query(classnames: &[String]) -> Result<ConceptQuery> {
    if classnames.is_empty() {
        return Err(Error::invalid("concept query needs at least one class"));
    }
    let rendered_query = format!(
        "Q: Tell me in five words or less what {} have in common. It may be nothing. A: They are all ",
        classnames.join(", ")
    );
    Ok(ConceptQuery {
        class_chunk: classnames.to_vec(),
        rendered_query,
    })
}

fn title_case(s: &str) -> String {
    s.split_whitespace()
        .map(|w| {
            let mut chars = w.chars();
            match chars.next() {
                Some(first) => first.to_uppercase().chain(chars.flat_map(char::to_lowercase)).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<String>>()
        .join(" ")
}

/// First sentence of the completion, singularized and title-cased.
pub fn extract_concept(raw: &str) -> Result<String> {
    let head = raw.split(['.', '\n', '\r']).next().unwrap_or_default().trim();
    let head = match head.strip_suffix('s') {
        Some(stem) if head.chars().count() > 3 => stem,
        _ => head,
    };
    let concept = title_case(head);
    if concept.is_empty() {
        return Err(Error::EmptyConcept);
    }
    Ok(concept)
}

pub fn filter_concept(concept: &str) -> Option<String> {
    let generic = FILTER_TERMS.iter().any(|t| t.eq_ignore_ascii_case(concept.trim()));
    (!generic).then(|| concept.to_owned())
}

fn backoff_delay(base_secs: f64, retry: u32) -> Duration {
    let jitter: f64 = rand::rng().random_range(0.5..1.5);
    Duration::from_secs_f64(base_secs * 2f64.powi(retry as i32) * jitter)
}

fn complete_with_retry<C, S>(client: &mut C, query: &str, cfg: &LlmEndpointConfig, sleep: &mut S) -> Result<String>
where
    C: LlmClient + ?Sized,
    S: FnMut(Duration),
{
    let mut retry = 0;
    loop {
        match client.complete(query) {
            Ok(text) => return Ok(text),
            Err(LlmError::Fatal(e)) => return Err(e),
            Err(LlmError::Transient(msg)) => {
                if retry >= cfg.max_retries {
                    return Err(Error::Network(format!("{msg} (after {} retries)", cfg.max_retries)));
                }
                sleep(backoff_delay(cfg.backoff_base_secs, retry));
                retry += 1;
            }
        }
    }
}

/// Queries the LLM for a shared concept, sleeping between retries.
pub fn derive_concept<C: LlmClient + ?Sized>(
    categories: &CategorySet,
    cfg: &LlmEndpointConfig,
    client: &mut C,
) -> Result<ConceptResult> {
    derive_concept_with_sleep(categories, cfg, client, std::thread::sleep)
}

/// As [`derive_concept`], with the retry wait supplied by the caller.
pub fn derive_concept_with_sleep<C, S>(
    categories: &CategorySet,
    cfg: &LlmEndpointConfig,
    client: &mut C,
    mut sleep: S,
) -> Result<ConceptResult>
where
    C: LlmClient + ?Sized,
    S: FnMut(Duration),
{
    cfg.validate()?;
    let names: Vec<String> = categories.names().map(str::to_owned).collect();
    if names.is_empty() {
        return Err(Error::invalid("cannot derive a concept for an empty class list"));
    }
    let mut raw_responses = Vec::new();
    // (concept, votes), in first-seen order
    let mut tally: Vec<(String, usize)> = Vec::new();
    for chunk in names.chunks(cfg.max_classes_per_query) {
        let query = build_query(chunk)?;
        let raw = complete_with_retry(client, &query.rendered_query, cfg, &mut sleep)?;
        if let Some(concept) = extract_concept(&raw).ok().and_then(|c| filter_concept(&c)) {
            match tally.iter_mut().find(|(c, _)| *c == concept) {
                Some((_, n)) => *n += 1,
                None => tally.push((concept, 1)),
            }
        }
        raw_responses.push(raw);
    }
    // max_by_key keeps the last maximum; fold keeps the first
    let winner = tally
        .into_iter()
        .fold(None::<(String, usize)>, |best, (c, n)| match best {
            Some((_, m)) if m >= n => best,
            _ => Some((c, n)),
        })
        .map(|(c, _)| c);
    Ok(ConceptResult {
        filtered: winner.is_none(),
        concept: winner,
        raw_responses,
    })
}

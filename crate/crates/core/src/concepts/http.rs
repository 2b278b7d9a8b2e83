use std::time::Duration;

use serde_json::Value;

use super::{LlmClient, LlmEndpointConfig, LlmError};
use crate::error::{Error, Result};

/// Blocking JSON-over-HTTP completion client.
pub struct HttpLlmClient {
    agent: ureq::Agent,
    cfg: LlmEndpointConfig,
    api_key: Option<String>,
}

impl HttpLlmClient {
    pub fn new(cfg: LlmEndpointConfig) -> Result<Self> {
        cfg.validate()?;
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::invalid(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { agent, cfg, api_key })
    }

    pub fn request_body(&self, query: &str) -> Value {
        fill_template(&self.cfg.body_template, &self.cfg.model_name, query)
    }
}

fn fill_template(template: &Value, model: &str, query: &str) -> Value {
    match template {
        Value::String(s) => Value::String(s.replace("{model}", model).replace("{query}", query)),
        Value::Array(items) => Value::Array(items.iter().map(|v| fill_template(v, model, query)).collect()),
        Value::Object(map) => Value::Object(
            map.iter()
                .map(|(k, v)| (k.clone(), fill_template(v, model, query)))
                .collect(),
        ),
        other => other.clone(),
    }
}

impl LlmClient for HttpLlmClient {
    fn complete(&mut self, query: &str) -> Result<String, LlmError> {
        let body = self.request_body(query).to_string();
        let mut request = self
            .agent
            .post(&self.cfg.base_url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send(body)
            .map_err(|e| LlmError::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| LlmError::Transient(e.to_string()))?;
        match status {
            200..=299 => {}
            429 | 500..=599 => return Err(LlmError::Transient(format!("HTTP {status}"))),
            _ => {
                return Err(LlmError::Fatal(Error::Network(format!(
                    "HTTP {status}: {}",
                    text.chars().take(200).collect::<String>()
                ))))
            }
        }
        let json: Value = serde_json::from_str(&text)
            .map_err(|e| LlmError::Fatal(Error::MalformedResponse(e.to_string())))?;
        json.pointer(&self.cfg.response_pointer)
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| {
                LlmError::Fatal(Error::MalformedResponse(format!(
                    "no string at {}",
                    self.cfg.response_pointer
                )))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_placeholders_are_json_safe() {
        let t = serde_json::json!({"model": "{model}", "messages": [{"content": "say: {query}"}], "n": 1});
        let v = fill_template(&t, "m1", "a \"quoted\"\nline");
        assert_eq!(v["model"], "m1");
        assert_eq!(v["messages"][0]["content"], "say: a \"quoted\"\nline");
        assert_eq!(v["n"], 1);
        let round: Value = serde_json::from_str(&v.to_string()).unwrap();
        assert_eq!(round, v);
    }

    #[test]
    fn missing_api_key_env_is_a_config_error() {
        let cfg = LlmEndpointConfig {
            api_key_env: Some("WAFFLE_TEST_SURELY_UNSET_KEY".into()),
            ..LlmEndpointConfig::new("http://127.0.0.1:1", "m")
        };
        assert!(matches!(HttpLlmClient::new(cfg), Err(Error::InvalidArgument(_))));
    }
}

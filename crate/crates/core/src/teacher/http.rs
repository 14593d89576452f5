use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::Teacher;
use crate::error::{Error, Result};

/// Connection settings for one chat-completion teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherEndpoint {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key. Empty means no
    /// `Authorization` header.
    pub api_key_env: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub temperature: f64,
    /// First backoff delay; doubles per retry, capped at `max_backoff_ms`.
    pub backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for TeacherEndpoint {
    fn default() -> Self {
        TeacherEndpoint {
            base_url: "http://localhost:8000/v1".into(),
            model_name: "teacher".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_ms: 60_000,
            max_retries: 4,
            temperature: 0.0,
            backoff_ms: 500,
            max_backoff_ms: 30_000,
            max_in_flight: 8,
        }
    }
}

impl TeacherEndpoint {
    pub fn validate(&self) -> Result<()> {
        if self.timeout_ms == 0 {
            return Err(Error::invalid("teacher timeout must be > 0"));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("teacher temperature must be finite and >= 0"));
        }
        if self.max_in_flight == 0 {
            return Err(Error::invalid("max_in_flight must be >= 1"));
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .backoff_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.max_backoff_ms);
        Duration::from_millis(ms)
    }
}

struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.active.lock().expect("in-flight counter poisoned");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("in-flight counter poisoned");
        }
        *n += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.active.lock().expect("in-flight counter poisoned");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Blocking chat-completion client with retry and a bound on concurrent
/// requests. Wrap in [`super::CachedTeacher`] for response caching.
pub struct HttpTeacher {
    endpoint: TeacherEndpoint,
    agent: ureq::Agent,
    in_flight: InFlight,
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
    content: Option<String>,
}

enum Attempt {
    Done(String),
    Retry(Error),
    Fatal(Error),
}

fn excerpt(body: &str) -> String {
    const MAX: usize = 240;
    match body.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}…", &body[..i]),
        None => body.to_string(),
    }
}

impl HttpTeacher {
    pub fn new(endpoint: TeacherEndpoint) -> Result<Self> {
        endpoint.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(endpoint.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let limit = endpoint.max_in_flight;
        Ok(HttpTeacher {
            endpoint,
            agent,
            in_flight: InFlight {
                limit,
                active: Mutex::new(0),
                freed: Condvar::new(),
            },
        })
    }

    pub fn endpoint(&self) -> &TeacherEndpoint {
        &self.endpoint
    }

    fn api_key(&self) -> Result<Option<String>> {
        if self.endpoint.api_key_env.is_empty() {
            return Ok(None);
        }
        std::env::var(&self.endpoint.api_key_env)
            .map(Some)
            .map_err(|_| Error::Usage(format!("environment variable {} is not set", self.endpoint.api_key_env)))
    }

    fn attempt(&self, body: &serde_json::Value, key: Option<&str>) -> Attempt {
        let _slot = self.in_flight.acquire();
        let mut req = self.agent.post(self.endpoint.completions_url());
        if let Some(k) = key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(Error::Transport(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(Error::Transport(e.to_string())),
        };
        if !(200..300).contains(&status) {
            let err = Error::Protocol {
                status,
                body: excerpt(&text),
            };
            return if status == 408 || status == 429 || status >= 500 {
                Attempt::Retry(err)
            } else {
                Attempt::Fatal(err)
            };
        }
        let parsed: ChatResponse = match serde_json::from_str(&text) {
            Ok(p) => p,
            Err(e) => {
                return Attempt::Fatal(Error::Protocol {
                    status,
                    body: format!("malformed response ({e}): {}", excerpt(&text)),
                })
            }
        };
        match parsed.choices.into_iter().next().and_then(|c| c.message.content) {
            Some(content) => Attempt::Done(content),
            None => Attempt::Fatal(Error::Protocol {
                status,
                body: format!("response has no message content: {}", excerpt(&text)),
            }),
        }
    }
}

impl Teacher for HttpTeacher {
    fn name(&self) -> &str {
        &self.endpoint.model_name
    }

    fn temperature(&self) -> f64 {
        self.endpoint.temperature
    }

    fn complete(&self, prompt: &str, _sample: u32) -> Result<String> {
        let key = self.api_key()?;
        let body = json!({
            "model": self.endpoint.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.endpoint.temperature,
        });
        let mut attempt = 0;
        loop {
            match self.attempt(&body, key.as_deref()) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) if attempt >= self.endpoint.max_retries => return Err(e),
                Attempt::Retry(e) => {
                    let wait = self.endpoint.backoff(attempt);
                    log::warn!("teacher request failed ({e}); retrying in {wait:?}");
                    std::thread::sleep(wait);
                    attempt += 1;
                }
            }
        }
    }
}

// SPDX-License-Identifier: Apache-2.0

//! OpenAI-style chat-completion client with bounded retries and a per-handle
//! in-flight cap.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::Serialize;
use serde_json::Value;

use super::prompt::PromptBundle;
use super::{GenError, Generator, SamplingParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
    seed: u64,
}

/// Counting gate limiting concurrent requests.
#[derive(Debug)]
struct InFlight {
    cap: usize,
    busy: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn enter(&self) -> InFlightGuard<'_> {
        let mut busy = self.busy.lock().expect("in-flight lock");
        while *busy >= self.cap {
            busy = self.freed.wait(busy).expect("in-flight lock");
        }
        *busy += 1;
        InFlightGuard { gate: self }
    }
}

struct InFlightGuard<'a> {
    gate: &'a InFlight,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.gate.busy.lock().expect("in-flight lock") -= 1;
        self.gate.freed.notify_one();
    }
}

pub struct HttpChatGenerator {
    endpoint: String,
    model: String,
    sampling: SamplingParams,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
    gate: InFlight,
}

impl std::fmt::Debug for HttpChatGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpChatGenerator")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .finish()
    }
}

impl HttpChatGenerator {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        sampling: SamplingParams,
        max_in_flight: usize,
        retry: RetryPolicy,
        request_timeout: Duration,
    ) -> Result<Self, GenError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(request_timeout)
            .build()
            .map_err(|e| GenError::Config(format!("http client: {e}")))?;
        Ok(Self {
            endpoint: endpoint.into(),
            model: model.into(),
            sampling,
            retry,
            client,
            gate: InFlight {
                cap: max_in_flight.max(1),
                busy: Mutex::new(0),
                freed: Condvar::new(),
            },
        })
    }

    fn attempt(&self, body: &ChatRequest<'_>) -> Result<String, Attempt> {
        let resp = self
            .client
            .post(&self.endpoint)
            .json(body)
            .send()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            let msg = format!("HTTP {status}: {}", text.chars().take(200).collect::<String>());
            return Err(if status.is_server_error() || status.as_u16() == 429 {
                Attempt::Retry(msg)
            } else {
                Attempt::Fatal(GenError::Transport { attempts: 1, message: msg })
            });
        }
        let v: Value = resp.json().map_err(|e| Attempt::Retry(format!("bad response body: {e}")))?;
        let content = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .unwrap_or_default();
        if content.trim().is_empty() {
            return Err(Attempt::Fatal(GenError::EmptyCompletion));
        }
        Ok(content.to_string())
    }
}

enum Attempt {
    Retry(String),
    Fatal(GenError),
}

impl Generator for HttpChatGenerator {
    fn generate(&self, bundle: &PromptBundle, seed: u64) -> Result<String, GenError> {
        let body = ChatRequest {
            model: &self.model,
            messages: bundle
                .messages
                .iter()
                .map(|m| WireMessage {
                    role: m.role.as_str(),
                    content: &m.text,
                })
                .collect(),
            temperature: self.sampling.temperature,
            top_p: self.sampling.top_p,
            max_tokens: self.sampling.max_output_tokens,
            seed,
        };
        let _slot = self.gate.enter();
        let mut backoff = self.retry.initial_backoff;
        let mut last = String::new();
        for attempt in 0..=self.retry.max_retries {
            if attempt > 0 {
                thread::sleep(backoff);
                backoff *= 2;
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    tracing::debug!(endpoint = %self.endpoint, attempt, %msg, "chat request failed");
                    last = msg;
                }
            }
        }
        Err(GenError::Transport {
            attempts: self.retry.max_retries + 1,
            message: last,
        })
    }
}

// SPDX-License-Identifier: Apache-2.0

//! Generator bridge: prompt rendering, model invocation and testbench
//! extraction.

mod extract;
mod http;
mod prompt;
mod scripted;

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use extract::extract_testbench;
pub use http::{HttpChatGenerator, RetryPolicy};
pub use prompt::{
    render_memoryless, render_vanilla, BundleView, Message, PromptBundle, PromptMode, Role,
    FEEDBACK_HEADER, SYSTEM_INSTRUCTION, TESTBENCH_HEADER,
};
pub use scripted::{BinGreedyParams, ScriptManifest, ScriptedGenerator, ScriptedStrategy};

pub(crate) use prompt::fenced;

/// Built-in syntax-constraint rules injected into teacher prompts on demand.
pub const SPECIALIST_PROMPT: &str = include_str!("../../assets/specialist_prompt.txt");

/// Asset reference naming [`SPECIALIST_PROMPT`].
pub const BUILTIN_SPECIALIST: &str = "builtin:specialist";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GenError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("model returned an empty completion")]
    EmptyCompletion,
    #[error("unknown scripted strategy `{0}`")]
    UnknownStrategy(String),
    #[error("generator config: {0}")]
    Config(String),
}

impl GenError {
    /// Errors that downstream treats as an unusable candidate rather than a
    /// failed job.
    pub fn is_candidate_level(&self) -> bool {
        matches!(self, GenError::EmptyCompletion)
    }
}

/// A text generator conditioned on a prompt bundle.
pub trait Generator: Send + Sync {
    fn generate(&self, bundle: &PromptBundle, seed: u64) -> Result<String, GenError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorBackend {
    HttpChat,
    #[default]
    Scripted,
}

fn default_temperature() -> f64 {
    0.7
}
fn default_top_p() -> f64 {
    0.8
}
fn default_max_tokens() -> u32 {
    8192
}
fn default_in_flight() -> usize {
    8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: default_temperature(),
            top_p: default_top_p(),
            max_output_tokens: default_max_tokens(),
        }
    }
}

/// Declarative description of a model (teacher, student or stage checkpoint).
///
/// For the scripted backend `model_name` names a strategy in the script
/// manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorHandle {
    pub id: String,
    #[serde(default)]
    pub backend: GeneratorBackend,
    #[serde(default)]
    pub endpoint: String,
    #[serde(rename = "model")]
    pub model_name: String,
    #[serde(flatten)]
    pub sampling: SamplingParams,
    #[serde(default)]
    pub specialist_prompt: Option<String>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

impl GeneratorHandle {
    pub fn scripted(id: impl Into<String>, strategy: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            backend: GeneratorBackend::Scripted,
            endpoint: String::new(),
            model_name: strategy.into(),
            sampling: SamplingParams::default(),
            specialist_prompt: None,
            max_in_flight: default_in_flight(),
        }
    }

    pub fn http(id: impl Into<String>, endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            backend: GeneratorBackend::HttpChat,
            endpoint: endpoint.into(),
            model_name: model.into(),
            sampling: SamplingParams::default(),
            specialist_prompt: None,
            max_in_flight: default_in_flight(),
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.id.is_empty() {
            return Err(GenError::Config("generator id must be nonempty".into()));
        }
        if self.backend == GeneratorBackend::HttpChat
            && (self.endpoint.is_empty() || self.model_name.is_empty())
        {
            return Err(GenError::Config(format!(
                "generator `{}`: http_chat needs endpoint and model",
                self.id
            )));
        }
        let s = &self.sampling;
        if !(s.temperature >= 0.0 && s.top_p > 0.0 && s.top_p <= 1.0 && s.max_output_tokens > 0) {
            return Err(GenError::Config(format!(
                "generator `{}`: invalid sampling parameters",
                self.id
            )));
        }
        Ok(())
    }

    /// Resolved specialist text, or the built-in rules when `fallback_builtin`.
    pub fn specialist_text(&self, fallback_builtin: bool) -> Result<Option<String>, GenError> {
        match self.specialist_prompt.as_deref() {
            Some(reference) => resolve_asset(reference).map(Some),
            None if fallback_builtin => Ok(Some(SPECIALIST_PROMPT.to_string())),
            None => Ok(None),
        }
    }
}

/// Loads a prompt asset: `builtin:specialist` or a file path.
pub fn resolve_asset(reference: &str) -> Result<String, GenError> {
    if reference == BUILTIN_SPECIALIST {
        return Ok(SPECIALIST_PROMPT.to_string());
    }
    std::fs::read_to_string(Path::new(reference))
        .map_err(|e| GenError::Config(format!("prompt asset {reference}: {e}")))
}

/// A handle bound to a live generator.
#[derive(Clone)]
pub struct Model {
    handle: GeneratorHandle,
    generator: Arc<dyn Generator>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model").field("id", &self.handle.id).finish()
    }
}

impl Model {
    pub fn new(handle: GeneratorHandle, generator: Arc<dyn Generator>) -> Self {
        Self { handle, generator }
    }

    pub fn connect(handle: GeneratorHandle, scripts: &ScriptManifest) -> Result<Self, GenError> {
        Self::connect_with_retry(handle, scripts, RetryPolicy::default())
    }

    pub fn connect_with_retry(
        handle: GeneratorHandle,
        scripts: &ScriptManifest,
        retry: RetryPolicy,
    ) -> Result<Self, GenError> {
        handle.validate()?;
        let generator: Arc<dyn Generator> = match handle.backend {
            GeneratorBackend::Scripted => {
                Arc::new(ScriptedGenerator::new(scripts.get(&handle.model_name)?.clone()))
            }
            GeneratorBackend::HttpChat => Arc::new(HttpChatGenerator::new(
                handle.endpoint.clone(),
                handle.model_name.clone(),
                handle.sampling,
                handle.max_in_flight,
                retry,
                Duration::from_secs(600),
            )?),
        };
        Ok(Self { handle, generator })
    }

    /// Scripted model built directly from a strategy.
    pub fn scripted(id: impl Into<String>, strategy: ScriptedStrategy) -> Self {
        let id = id.into();
        Self {
            handle: GeneratorHandle::scripted(id.clone(), id),
            generator: Arc::new(ScriptedGenerator::new(strategy)),
        }
    }

    pub fn id(&self) -> &str {
        &self.handle.id
    }

    pub fn handle(&self) -> &GeneratorHandle {
        &self.handle
    }

    pub fn generate(&self, bundle: &PromptBundle, seed: u64) -> Result<String, GenError> {
        self.generator.generate(bundle, seed)
    }
}

/// `generate(handle, bundle, seed)` for callers holding a connected model.
pub fn generate(model: &Model, bundle: &PromptBundle, seed: u64) -> Result<String, GenError> {
    model.generate(bundle, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn handle_defaults_and_validation() {
        let h: GeneratorHandle = toml::from_str(
            r#"
id = "teacher"
backend = "http_chat"
endpoint = "http://127.0.0.1:9/v1/chat/completions"
model = "coder-30b"
"#,
        )
        .unwrap();
        assert_eq!(h.sampling.temperature, 0.7);
        assert_eq!(h.sampling.top_p, 0.8);
        h.validate().unwrap();

        let mut bad = h.clone();
        bad.endpoint.clear();
        assert!(bad.validate().is_err());
        let mut bad = h;
        bad.sampling.top_p = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn specialist_asset_has_sentinel() {
        assert!(SPECIALIST_PROMPT.contains("Do not use based literals"));
        assert_eq!(resolve_asset(BUILTIN_SPECIALIST).unwrap(), SPECIALIST_PROMPT);
        let h = GeneratorHandle::scripted("t", "t");
        assert_eq!(h.specialist_text(false).unwrap(), None);
        assert!(h.specialist_text(true).unwrap().is_some());
    }
}

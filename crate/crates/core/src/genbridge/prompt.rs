// SPDX-License-Identifier: Apache-2.0

//! Prompt rendering under the memoryless contract and the full-history
//! (vanilla) ablation, plus a reader that recovers the rendered sections.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::domain::{coverage_score, FeedbackObservation, Repository, SimStatus, State, Testbench};

pub const SYSTEM_INSTRUCTION: &str = "You are a hardware verification engineer. You are given a \
hardware design repository and, when available, the current testbench together with the \
simulator feedback it produced. Write a complete SystemVerilog testbench that compiles, \
simulates cleanly and maximizes coverage of the design. Always regenerate the whole \
testbench file and return it in a single fenced code block.";

pub const REPO_HEADER: &str = "## Repository";
pub const FILE_HEADER: &str = "### File: ";
pub const TESTBENCH_HEADER: &str = "## Current testbench";
pub const FEEDBACK_HEADER: &str = "## Simulator feedback";
pub const SPECIALIST_HEADER: &str = "## Additional rules";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Memoryless,
    Vanilla,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

impl Message {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptBundle {
    pub mode: PromptMode,
    pub messages: Vec<Message>,
}

impl PromptBundle {
    /// Total rendered size in bytes.
    pub fn len_bytes(&self) -> usize {
        self.messages.iter().map(|m| m.text.len()).sum()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.messages.iter().any(|m| m.text.contains(needle))
    }

    pub fn view(&self) -> BundleView<'_> {
        BundleView { bundle: self }
    }
}

/// Chooses a backtick fence longer than any run inside `body`.
fn fence_for(body: &str) -> String {
    let mut longest = 0;
    let mut run = 0;
    for c in body.chars() {
        if c == '`' {
            run += 1;
            longest = longest.max(run);
        } else {
            run = 0;
        }
    }
    "`".repeat(longest.max(2) + 1)
}

pub(crate) fn fenced(body: &str, lang: &str) -> String {
    let fence = fence_for(body);
    format!("{fence}{lang}\n{body}\n{fence}")
}

fn render_repo(repo: &Repository) -> String {
    let mut out = format!("{REPO_HEADER} `{}`\n", repo.id);
    for (path, content) in &repo.files {
        let _ = write!(out, "\n{FILE_HEADER}{path}\n{}\n", fenced(content, "text"));
    }
    out
}

fn render_testbench(tb: &Testbench) -> String {
    format!("{TESTBENCH_HEADER}\n{}\n", fenced(&tb.text, "systemverilog"))
}

fn render_feedback(o: &FeedbackObservation) -> String {
    let mut out = format!("{FEEDBACK_HEADER}\nstatus: {}\n", o.status);
    let _ = writeln!(out, "coverage: {:.4}", coverage_score(o));
    if !o.metrics.is_empty() {
        out.push_str("metrics:\n");
        for (name, m) in &o.metrics {
            let _ = writeln!(out, "- {name}: {}/{} ({:.4})", m.covered, m.total, m.ratio());
        }
    }
    let _ = writeln!(out, "log:\n{}", fenced(&o.log, "text"));
    out
}

fn render_specialist(text: &str) -> String {
    format!("{SPECIALIST_HEADER}\n{text}\n")
}

/// Renders `s_t` alone: repository, current testbench (if any), latest
/// feedback (if any) and the optional specialist rules.
pub fn render_memoryless(state: &State, specialist_prompt: Option<&str>) -> PromptBundle {
    let mut user = render_repo(&state.repo);
    if !state.testbench.is_empty() {
        user.push('\n');
        user.push_str(&render_testbench(&state.testbench));
    }
    if !state.observation.is_null() {
        user.push('\n');
        user.push_str(&render_feedback(&state.observation));
    }
    if let Some(extra) = specialist_prompt {
        user.push('\n');
        user.push_str(&render_specialist(extra));
    }
    PromptBundle {
        mode: PromptMode::Memoryless,
        messages: vec![
            Message::new(Role::System, SYSTEM_INSTRUCTION),
            Message::new(Role::User, user),
        ],
    }
}

/// Renders the full interaction history as alternating turns.
pub fn render_vanilla(
    history: &[(Testbench, FeedbackObservation)],
    repo: &Repository,
    specialist_prompt: Option<&str>,
) -> PromptBundle {
    let mut first = render_repo(repo);
    if let Some(extra) = specialist_prompt {
        first.push('\n');
        first.push_str(&render_specialist(extra));
    }
    let mut messages = vec![
        Message::new(Role::System, SYSTEM_INSTRUCTION),
        Message::new(Role::User, first),
    ];
    for (tb, obs) in history {
        messages.push(Message::new(Role::Assistant, fenced(&tb.text, "systemverilog")));
        messages.push(Message::new(Role::User, render_feedback(obs)));
    }
    PromptBundle {
        mode: PromptMode::Vanilla,
        messages,
    }
}

/// Read-only access to the sections of a rendered bundle; used by scripted
/// generators that act on what a model would see.
#[derive(Debug, Clone, Copy)]
pub struct BundleView<'a> {
    bundle: &'a PromptBundle,
}

/// Body of the first fenced block after `header` in `text`.
fn fenced_after<'t>(text: &'t str, header: &str) -> Option<&'t str> {
    let start = text.find(header)? + header.len();
    let rest = &text[start..];
    let line_end = rest.find('\n')?;
    let after = &rest[line_end + 1..];
    let fence_len = after.chars().take_while(|&c| c == '`').count();
    if fence_len < 3 {
        return None;
    }
    let fence = &after[..fence_len];
    let body_start = after.find('\n')? + 1;
    let body = &after[body_start..];
    let close = format!("\n{fence}");
    if let Some(rest) = body.strip_prefix(fence) {
        if rest.is_empty() || rest.starts_with('\n') {
            return Some("");
        }
    }
    let end = body.find(&close)?;
    Some(&body[..end])
}

impl<'a> BundleView<'a> {
    fn user_texts(&self) -> impl Iterator<Item = &'a str> {
        self.bundle
            .messages
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.text.as_str())
    }

    /// Content of a repository file as rendered in the prompt.
    pub fn repo_file(&self, path: &str) -> Option<&'a str> {
        let header = format!("{FILE_HEADER}{path}\n");
        self.user_texts().find_map(|t| {
            let idx = t.find(&header)?;
            fenced_after(&t[idx..], FILE_HEADER.trim_end())
        })
    }

    /// The latest testbench the prompt conditions on, if any.
    pub fn current_testbench(&self) -> Option<String> {
        match self.bundle.mode {
            PromptMode::Memoryless => self
                .user_texts()
                .last()
                .and_then(|t| fenced_after(t, TESTBENCH_HEADER))
                .map(str::to_string),
            PromptMode::Vanilla => self
                .bundle
                .messages
                .iter()
                .rev()
                .find(|m| m.role == Role::Assistant)
                .map(|m| super::extract_testbench(&m.text).text),
        }
    }

    /// Status line of the latest feedback section, if any.
    pub fn current_status(&self) -> Option<SimStatus> {
        let text = self.user_texts().filter(|t| t.contains(FEEDBACK_HEADER)).last()?;
        let idx = text.rfind(FEEDBACK_HEADER)?;
        let line = text[idx..].lines().nth(1)?;
        let value = line.strip_prefix("status: ")?;
        serde_json::from_value(serde_json::Value::String(value.trim().to_string())).ok()
    }

    pub fn testbench_sections(&self) -> usize {
        match self.bundle.mode {
            PromptMode::Memoryless => self.user_texts().map(|t| t.matches(TESTBENCH_HEADER).count()).sum(),
            PromptMode::Vanilla => self
                .bundle
                .messages
                .iter()
                .filter(|m| m.role == Role::Assistant)
                .count(),
        }
    }

    pub fn feedback_sections(&self) -> usize {
        self.user_texts().map(|t| t.matches(FEEDBACK_HEADER).count()).sum()
    }
}

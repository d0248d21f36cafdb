// SPDX-License-Identifier: Apache-2.0

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::StageError;
use crate::genbridge::GeneratorHandle;

/// One registered checkpoint: the student model for stage `index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub index: u32,
    #[serde(default)]
    pub checkpoint: String,
    #[serde(flatten)]
    pub handle: GeneratorHandle,
}

/// Stage index → student handle, loaded from TOML:
///
/// ```toml
/// [[stage]]
/// index = 0
/// checkpoint = "base"
/// id = "student-s0"
/// backend = "http_chat"
/// endpoint = "http://127.0.0.1:8000/v1/chat/completions"
/// model = "base-4b"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRegistry {
    #[serde(rename = "stage")]
    pub stages: Vec<StageEntry>,
}

impl StageRegistry {
    pub fn parse(text: &str) -> Result<Self, StageError> {
        let reg: Self = toml::from_str(text).map_err(|e| StageError::Registry(e.to_string()))?;
        reg.validate()?;
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self, StageError> {
        let text = std::fs::read_to_string(path).map_err(|e| StageError::io(path, e))?;
        Self::parse(&text)
    }

    /// Indices must run 0, 1, 2, … with distinct model ids.
    pub fn validate(&self) -> Result<(), StageError> {
        for (pos, e) in self.stages.iter().enumerate() {
            if e.index as usize != pos {
                return Err(StageError::Registry(format!(
                    "expected stage {pos} at position {pos}, found {}",
                    e.index
                )));
            }
            e.handle.validate()?;
            if self.stages[..pos].iter().any(|p| p.handle.id == e.handle.id) {
                return Err(StageError::Registry(format!(
                    "model id `{}` registered for more than one stage",
                    e.handle.id
                )));
            }
        }
        Ok(())
    }

    pub fn student_for(&self, stage_index: u32) -> Result<&GeneratorHandle, StageError> {
        self.stages
            .get(stage_index as usize)
            .map(|e| &e.handle)
            .ok_or_else(|| StageError::Registry(format!("no checkpoint registered for stage {stage_index}")))
    }
}

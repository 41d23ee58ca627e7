//! Prompt assembly: a basic instruction block, a per-setting block, an
//! output-format block, then the code (and prior responses when validating).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::estimate_text_tokens;
use crate::model::{DetectionMode, DetectionSetting, MisuseCategory, SourceUnit};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template slot `{0}` has no binding")]
    MissingBinding(String),
    #[error("unit {0} has no content")]
    EmptyUnit(String),
    #[error("validation needs at least one prior response")]
    NoResponses,
    #[error("reading template {path}: {message}")]
    Io { path: String, message: String },
}

/// Substitutes `{{slot}}` placeholders in one pass. Bound values are
/// emitted verbatim and never re-expanded.
pub fn render(template: &str, bindings: &BTreeMap<&str, &str>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let Some(close) = after.find("}}") else {
            out.push_str(&rest[open..]);
            return Ok(out);
        };
        let name = after[..close].trim();
        if is_slot_name(name) {
            let value = bindings
                .get(name)
                .ok_or_else(|| PromptError::MissingBinding(name.to_string()))?;
            out.push_str(value);
            rest = &after[close + 2..];
        } else {
            out.push_str("{{");
            rest = after;
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn is_slot_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase() || c == '_')
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptPhase {
    Detection(DetectionMode),
    Validation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub phase: PromptPhase,
    pub system_text: String,
    pub setting_text: String,
    pub formatting_text: String,
    pub code_payload: String,
    pub prior_responses: Option<Vec<String>>,
    pub rendered_text: String,
    pub token_estimate: u64,
}

impl PromptBundle {
    /// System message for chat-style transports.
    pub fn system_message(&self) -> String {
        format!("{}\n\n{}\n\n{}", self.system_text, self.setting_text, self.formatting_text)
    }

    /// User message: the code, followed by prior responses when validating.
    pub fn user_message(&self) -> String {
        match &self.prior_responses {
            Some(rs) => format!("{}\n{}", self.code_payload, render_prior_responses(rs)),
            None => self.code_payload.clone(),
        }
    }
}

pub const RESPONSE_OPEN: &str = "<<<RESPONSE ";
pub const RESPONSE_CLOSE: &str = "<<<END RESPONSE ";

fn render_prior_responses(responses: &[String]) -> String {
    let mut out = String::from("Earlier responses:\n");
    for (i, r) in responses.iter().enumerate() {
        let n = i + 1;
        out.push_str(&format!("{RESPONSE_OPEN}{n}>>>\n{r}\n{RESPONSE_CLOSE}{n}>>>\n"));
    }
    out
}

/// The template set. Each field corresponds to one editable file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptForge {
    pub layout: String,
    pub basic: String,
    pub detect_unconstrained: String,
    pub detect_task_aware: String,
    pub validate: String,
    pub format_detect: String,
    pub format_validate: String,
}

const TEMPLATE_FILES: [&str; 7] = [
    "layout.txt",
    "basic.txt",
    "detect_uc.txt",
    "detect_ta.txt",
    "validate.txt",
    "format_detect.txt",
    "format_validate.txt",
];

impl Default for PromptForge {
    fn default() -> Self {
        Self {
            layout: include_str!("../data/prompts/layout.txt").to_string(),
            basic: include_str!("../data/prompts/basic.txt").to_string(),
            detect_unconstrained: include_str!("../data/prompts/detect_uc.txt").to_string(),
            detect_task_aware: include_str!("../data/prompts/detect_ta.txt").to_string(),
            validate: include_str!("../data/prompts/validate.txt").to_string(),
            format_detect: include_str!("../data/prompts/format_detect.txt").to_string(),
            format_validate: include_str!("../data/prompts/format_validate.txt").to_string(),
        }
    }
}

impl PromptForge {
    /// Bundled templates, with any same-named file in `dir` taking precedence.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut forge = Self::default();
        for name in TEMPLATE_FILES {
            let path = dir.join(name);
            if !path.exists() {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|e| PromptError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            *forge.slot_mut(name) = text;
        }
        Ok(forge)
    }

    fn slot_mut(&mut self, file: &str) -> &mut String {
        match file {
            "layout.txt" => &mut self.layout,
            "basic.txt" => &mut self.basic,
            "detect_uc.txt" => &mut self.detect_unconstrained,
            "detect_ta.txt" => &mut self.detect_task_aware,
            "validate.txt" => &mut self.validate,
            "format_detect.txt" => &mut self.format_detect,
            _ => &mut self.format_validate,
        }
    }

    fn category_list() -> String {
        MisuseCategory::TAXONOMY
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{}. {}: {}", i + 1, c.display_name(), c.description()))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn setting_text(&self, mode: DetectionMode) -> Result<String, PromptError> {
        let text = match mode {
            DetectionMode::Unconstrained => self.detect_unconstrained.clone(),
            DetectionMode::TaskAware => {
                let categories = Self::category_list();
                let b = BTreeMap::from([("categories", categories.as_str())]);
                render(&self.detect_task_aware, &b)?
            }
        };
        Ok(text.trim_end().to_string())
    }

    fn assemble(
        &self,
        phase: PromptPhase,
        unit: &SourceUnit,
        setting_text: String,
        formatting: &str,
        prior: Option<Vec<String>>,
    ) -> Result<PromptBundle, PromptError> {
        let system_text = self.basic.trim_end().to_string();
        let formatting_text = formatting.trim_end().to_string();
        let prior_block = prior.as_deref().map(render_prior_responses).unwrap_or_default();
        let bindings = BTreeMap::from([
            ("basic", system_text.as_str()),
            ("setting", setting_text.as_str()),
            ("formatting", formatting_text.as_str()),
            ("code", unit.content.as_str()),
            ("prior_responses", prior_block.as_str()),
        ]);
        let rendered_text = render(&self.layout, &bindings)?;
        Ok(PromptBundle {
            phase,
            token_estimate: estimate_text_tokens(&rendered_text),
            system_text,
            setting_text,
            formatting_text,
            code_payload: unit.content.clone(),
            prior_responses: prior,
            rendered_text,
        })
    }

    pub fn build_detection_prompt(
        &self,
        unit: &SourceUnit,
        setting: &DetectionSetting,
    ) -> Result<PromptBundle, PromptError> {
        if unit.content.is_empty() {
            return Err(PromptError::EmptyUnit(unit.path.clone()));
        }
        let setting_text = self.setting_text(setting.mode())?;
        self.assemble(
            PromptPhase::Detection(setting.mode()),
            unit,
            setting_text,
            &self.format_detect,
            None,
        )
    }

    pub fn build_validation_prompt(
        &self,
        unit: &SourceUnit,
        responses: &[String],
    ) -> Result<PromptBundle, PromptError> {
        if responses.is_empty() {
            return Err(PromptError::NoResponses);
        }
        if unit.content.is_empty() {
            return Err(PromptError::EmptyUnit(unit.path.clone()));
        }
        self.assemble(
            PromptPhase::Validation,
            unit,
            self.validate.trim_end().to_string(),
            &self.format_validate,
            Some(responses.to_vec()),
        )
    }
}

/// Response bodies embedded in a rendered validation prompt, in order.
pub fn extract_prior_responses(rendered: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = rendered;
    while let Some(start) = rest.find(RESPONSE_OPEN) {
        let after = &rest[start + RESPONSE_OPEN.len()..];
        let Some(hdr_end) = after.find(">>>\n") else { break };
        let n = &after[..hdr_end];
        let body_start = &after[hdr_end + 4..];
        let close = format!("\n{RESPONSE_CLOSE}{n}>>>");
        let Some(end) = body_start.find(&close) else { break };
        out.push(body_start[..end].to_string());
        rest = &body_start[end + close.len()..];
    }
    out
}

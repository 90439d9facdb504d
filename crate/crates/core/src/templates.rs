//! Prompt templates, keyed by dataset and purpose.
//!
//! The built-in set is compiled in from `templates/`. A directory holding files
//! with the same names can override any of them.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::DatasetKind;

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("template {id}: unresolved placeholder {{{name}}}")]
    Unresolved { id: String, name: String },
    #[error("template {id}: {message}")]
    Io { id: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateKind {
    /// Summarization over a marked context.
    Marked,
    Direct,
    Cot,
    ReflectInitial,
    ReflectRefine,
    Identify,
    /// Downstream inference over a compressed profile.
    Infer,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 7] = [
        TemplateKind::Marked,
        TemplateKind::Direct,
        TemplateKind::Cot,
        TemplateKind::ReflectInitial,
        TemplateKind::ReflectRefine,
        TemplateKind::Identify,
        TemplateKind::Infer,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateKind::Marked => "marked",
            TemplateKind::Direct => "direct",
            TemplateKind::Cot => "cot",
            TemplateKind::ReflectInitial => "reflect-initial",
            TemplateKind::ReflectRefine => "reflect-refine",
            TemplateKind::Identify => "identify",
            TemplateKind::Infer => "infer",
        }
    }

    /// File name inside a template directory.
    pub fn file_name(&self, dataset: DatasetKind) -> String {
        match self {
            TemplateKind::Identify => "identify.txt".to_string(),
            k => format!("{}-{}.txt", dataset.as_str(), k.as_str()),
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn builtin(dataset: DatasetKind, kind: TemplateKind) -> &'static str {
    use DatasetKind::*;
    use TemplateKind::*;
    match (dataset, kind) {
        (_, Identify) => include_str!("../templates/identify.txt"),
        (Selection, Marked) => include_str!("../templates/selection-marked.txt"),
        (Selection, Direct) => include_str!("../templates/selection-direct.txt"),
        (Selection, Cot) => include_str!("../templates/selection-cot.txt"),
        (Selection, ReflectInitial) => include_str!("../templates/selection-reflect-initial.txt"),
        (Selection, ReflectRefine) => include_str!("../templates/selection-reflect-refine.txt"),
        (Selection, Infer) => include_str!("../templates/selection-infer.txt"),
        (Generation, Marked) => include_str!("../templates/generation-marked.txt"),
        (Generation, Direct) => include_str!("../templates/generation-direct.txt"),
        (Generation, Cot) => include_str!("../templates/generation-cot.txt"),
        (Generation, ReflectInitial) => include_str!("../templates/generation-reflect-initial.txt"),
        (Generation, ReflectRefine) => include_str!("../templates/generation-reflect-refine.txt"),
        (Generation, Infer) => include_str!("../templates/generation-infer.txt"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub id: String,
    pub text: String,
}

impl Template {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }

    /// Substitutes `{name}` placeholders in one pass; substituted values are
    /// never rescanned. Any `{identifier}` left over is an error.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        let text = self.text.trim_end();
        let mut out = String::with_capacity(text.len());
        let mut rest = text;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let close = after.find('}');
            let name = close.map(|c| &after[..c]);
            match name {
                Some(n) if is_ident(n) => match vars.iter().find(|(k, _)| *k == n) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        return Err(TemplateError::Unresolved {
                            id: self.id.clone(),
                            name: n.to_string(),
                        })
                    }
                },
                _ => {
                    out.push('{');
                    rest = after;
                    continue;
                }
            }
            rest = &after[close.unwrap() + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }

    /// Placeholders named in the template, in order of first appearance.
    pub fn placeholders(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(c) if is_ident(&after[..c]) => {
                    let n = after[..c].to_string();
                    if !names.contains(&n) {
                        names.push(n);
                    }
                    rest = &after[c + 1..];
                }
                _ => rest = after,
            }
        }
        names
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase() || c == '_')
}

/// All templates for one dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    dataset: DatasetKind,
    templates: Vec<(TemplateKind, Template)>,
}

impl TemplateSet {
    pub fn builtin(dataset: DatasetKind) -> Self {
        let templates = TemplateKind::ALL
            .iter()
            .map(|&k| (k, Template::new(template_id(dataset, k), builtin(dataset, k))))
            .collect();
        Self { dataset, templates }
    }

    /// Built-ins, with each file found in `dir` taking precedence.
    pub fn with_overrides(dataset: DatasetKind, dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::builtin(dataset);
        for (kind, tpl) in &mut set.templates {
            let path = dir.join(kind.file_name(dataset));
            if path.exists() {
                tpl.text = fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                    id: tpl.id.clone(),
                    message: format!("{}: {e}", path.display()),
                })?;
            }
        }
        Ok(set)
    }

    pub fn dataset(&self) -> DatasetKind {
        self.dataset
    }

    pub fn get(&self, kind: TemplateKind) -> &Template {
        &self
            .templates
            .iter()
            .find(|(k, _)| *k == kind)
            .expect("every kind is populated")
            .1
    }
}

pub fn template_id(dataset: DatasetKind, kind: TemplateKind) -> String {
    format!("{}/{}", dataset.as_str(), kind.as_str())
}

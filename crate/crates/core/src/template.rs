//! Prompt template files.
//!
//! Grammar: plain UTF-8 text in which `{{name}}` is replaced by the value
//! bound to `name`. Names use lowercase ASCII letters, digits and `_`;
//! whitespace just inside the braces is ignored. Single braces are literal.
//! There is no escaping, conditionals or loops. A single trailing newline in
//! a template file is dropped so files can end with a line break.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unterminated placeholder at byte {0}")]
    Unterminated(usize),
    #[error("invalid placeholder name {0:?}")]
    BadName(String),
    #[error("template {template} uses unknown placeholder {name:?}")]
    UnknownPlaceholder { template: &'static str, name: String },
    #[error("no value bound for placeholder {0:?}")]
    MissingValue(String),
    #[error("failed to read template {path}: {reason}")]
    Read { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Part {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    parts: Vec<Part>,
}

impl Template {
    pub fn parse(source: &str) -> Result<Self, TemplateError> {
        let source = source.strip_suffix('\n').unwrap_or(source);
        let source = source.strip_suffix('\r').unwrap_or(source);
        let mut parts = Vec::new();
        let mut rest = source;
        let mut consumed = 0;
        while let Some(open) = rest.find("{{") {
            if open > 0 {
                parts.push(Part::Text(rest[..open].to_string()));
            }
            let after = &rest[open + 2..];
            let close = after.find("}}").ok_or(TemplateError::Unterminated(consumed + open))?;
            let name = after[..close].trim();
            if name.is_empty() || !name.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_') {
                return Err(TemplateError::BadName(name.to_string()));
            }
            parts.push(Part::Slot(name.to_string()));
            let advance = open + 2 + close + 2;
            consumed += advance;
            rest = &rest[advance..];
        }
        if !rest.is_empty() {
            parts.push(Part::Text(rest.to_string()));
        }
        Ok(Template { parts })
    }

    pub fn placeholders(&self) -> BTreeSet<&str> {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Slot(n) => Some(n.as_str()),
                Part::Text(_) => None,
            })
            .collect()
    }

    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut out = String::new();
        for part in &self.parts {
            match part {
                Part::Text(t) => out.push_str(t),
                Part::Slot(name) => {
                    let v = values
                        .iter()
                        .find(|(k, _)| k == name)
                        .ok_or_else(|| TemplateError::MissingValue(name.clone()))?;
                    out.push_str(v.1);
                }
            }
        }
        Ok(out)
    }

    fn check_names(&self, template: &'static str, allowed: &[&str]) -> Result<(), TemplateError> {
        match self.placeholders().into_iter().find(|n| !allowed.contains(n)) {
            Some(name) => Err(TemplateError::UnknownPlaceholder { template, name: name.to_string() }),
            None => Ok(()),
        }
    }
}

const HEADER_SLOTS: [&str; 5] = ["stay_id", "gender", "age", "disease", "narrative"];

/// The full set of prompt templates, one file each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub system: Template,
    pub presetting: Template,
    pub what_if: Template,
    pub why_not: Template,
    pub why_not_peer: Template,
    pub so_what: Template,
    pub how_about: Template,
    pub discharge_prediction: Template,
    pub prediction_body: Template,
}

struct Spec {
    file: &'static str,
    default: &'static str,
    extra: &'static [&'static str],
    header: bool,
}

const SPECS: [Spec; 9] = [
    Spec { file: "system.txt", default: include_str!("../templates/system.txt"), extra: &[], header: false },
    Spec {
        file: "presetting.txt",
        default: include_str!("../templates/presetting.txt"),
        extra: &["what_if_examples", "why_not_examples", "so_what_examples", "how_about_examples"],
        header: false,
    },
    Spec {
        file: "what_if.txt",
        default: include_str!("../templates/what_if.txt"),
        extra: &["new_diagnoses"],
        header: true,
    },
    Spec { file: "why_not.txt", default: include_str!("../templates/why_not.txt"), extra: &[], header: true },
    Spec {
        file: "why_not_peer.txt",
        default: include_str!("../templates/why_not_peer.txt"),
        extra: &["alternative_plan"],
        header: true,
    },
    Spec { file: "so_what.txt", default: include_str!("../templates/so_what.txt"), extra: &[], header: true },
    Spec {
        file: "how_about.txt",
        default: include_str!("../templates/how_about.txt"),
        extra: &["target_disease", "target_diagnoses"],
        header: true,
    },
    Spec {
        file: "discharge_prediction.txt",
        default: include_str!("../templates/discharge_prediction.txt"),
        extra: &["stay_id", "prediction_body"],
        header: false,
    },
    Spec {
        file: "prediction_body.txt",
        default: include_str!("../templates/prediction_body.txt"),
        extra: &[],
        header: true,
    },
];

impl PromptTemplates {
    fn from_sources(sources: Vec<String>) -> Result<Self, TemplateError> {
        let mut parsed = Vec::with_capacity(SPECS.len());
        for (spec, src) in SPECS.iter().zip(&sources) {
            let t = Template::parse(src)?;
            let mut allowed: Vec<&str> = spec.extra.to_vec();
            if spec.header {
                allowed.extend(HEADER_SLOTS);
            }
            t.check_names(spec.file, &allowed)?;
            parsed.push(t);
        }
        let mut it = parsed.into_iter();
        let mut next = || it.next().expect("one template per spec");
        Ok(PromptTemplates {
            system: next(),
            presetting: next(),
            what_if: next(),
            why_not: next(),
            why_not_peer: next(),
            so_what: next(),
            how_about: next(),
            discharge_prediction: next(),
            prediction_body: next(),
        })
    }

    /// Built-in templates, overridden by any same-named file present in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut sources = Vec::with_capacity(SPECS.len());
        for spec in &SPECS {
            let path = dir.join(spec.file);
            let src = if path.exists() {
                std::fs::read_to_string(&path)
                    .map_err(|e| TemplateError::Read { path: path.clone(), reason: e.to_string() })?
            } else {
                spec.default.to_string()
            };
            sources.push(src);
        }
        Self::from_sources(sources)
    }

    pub fn file_names() -> impl Iterator<Item = &'static str> {
        SPECS.iter().map(|s| s.file)
    }
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::from_sources(SPECS.iter().map(|s| s.default.to_string()).collect()).expect("built-in templates are valid")
    }
}

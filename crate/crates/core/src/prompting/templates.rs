//! Versioned prompt templates with `{name}` placeholders.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("template '{template}' uses unknown placeholder {{{placeholder}}}")]
    UnknownPlaceholder { template: &'static str, placeholder: String },
    #[error("template '{template}' is missing required placeholder {{{placeholder}}}")]
    MissingPlaceholder { template: &'static str, placeholder: &'static str },
    #[error("template '{0}' is empty")]
    Empty(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TemplateName {
    Premise,
    Instruction,
    RoundExact,
    RoundAlmost,
    RoundTermination,
    SameReceiver,
    PrevAverages,
    InferOther,
    ActionDirect,
    CotPrefix,
    ValidityReminder,
}

impl TemplateName {
    pub const ALL: [TemplateName; 11] = [
        TemplateName::Premise,
        TemplateName::Instruction,
        TemplateName::RoundExact,
        TemplateName::RoundAlmost,
        TemplateName::RoundTermination,
        TemplateName::SameReceiver,
        TemplateName::PrevAverages,
        TemplateName::InferOther,
        TemplateName::ActionDirect,
        TemplateName::CotPrefix,
        TemplateName::ValidityReminder,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            TemplateName::Premise => "premise",
            TemplateName::Instruction => "instruction",
            TemplateName::RoundExact => "round_exact",
            TemplateName::RoundAlmost => "round_almost",
            TemplateName::RoundTermination => "round_termination",
            TemplateName::SameReceiver => "same_receiver",
            TemplateName::PrevAverages => "prev_averages",
            TemplateName::InferOther => "infer_other",
            TemplateName::ActionDirect => "action_direct",
            TemplateName::CotPrefix => "cot_prefix",
            TemplateName::ValidityReminder => "validity_reminder",
        }
    }

    /// Placeholders that must appear exactly as listed; no others are allowed.
    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateName::Premise => &["objective"],
            TemplateName::RoundExact | TemplateName::RoundAlmost => &["xx"],
            TemplateName::RoundTermination => &["p"],
            TemplateName::PrevAverages => &["yy", "zz"],
            _ => &[],
        }
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").unwrap())
}

/// Names of every `{placeholder}` left in `text`.
pub fn find_placeholders(text: &str) -> Vec<String> {
    placeholder_re().captures_iter(text).map(|c| c[1].to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    version: String,
    templates: BTreeMap<TemplateName, String>,
}

macro_rules! builtin {
    ($stem:literal) => {
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/templates/v1/", $stem, ".txt"))
    };
}

impl TemplateSet {
    /// The templates shipped with the crate.
    pub fn builtin() -> &'static TemplateSet {
        static SET: OnceLock<TemplateSet> = OnceLock::new();
        SET.get_or_init(|| {
            let texts = [
                builtin!("premise"),
                builtin!("instruction"),
                builtin!("round_exact"),
                builtin!("round_almost"),
                builtin!("round_termination"),
                builtin!("same_receiver"),
                builtin!("prev_averages"),
                builtin!("infer_other"),
                builtin!("action_direct"),
                builtin!("cot_prefix"),
                builtin!("validity_reminder"),
            ];
            let version = include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/templates/v1/VERSION"));
            TemplateSet {
                version: version.trim().to_string(),
                templates: TemplateName::ALL
                    .into_iter()
                    .zip(texts)
                    .map(|(n, t)| (n, t.to_string()))
                    .collect(),
            }
        })
    }

    /// Loads `<stem>.txt` for every template from `dir`, plus an optional
    /// `VERSION` file. Files are taken byte-for-byte.
    pub fn load_dir(dir: &Path) -> Result<TemplateSet, TemplateError> {
        let read = |path: &Path| {
            fs::read_to_string(path)
                .map_err(|source| TemplateError::Io { path: path.display().to_string(), source })
        };
        let mut templates = BTreeMap::new();
        for name in TemplateName::ALL {
            let text = read(&dir.join(format!("{}.txt", name.file_stem())))?;
            templates.insert(name, text);
        }
        let version_path = dir.join("VERSION");
        let version = if version_path.exists() {
            read(&version_path)?.trim().to_string()
        } else {
            "unversioned".to_string()
        };
        let set = TemplateSet { version, templates };
        set.validate()?;
        Ok(set)
    }

    /// Replaces one template without validating; call [`TemplateSet::validate`] afterwards.
    pub fn with_template(mut self, name: TemplateName, text: String) -> Self {
        self.templates.insert(name, text);
        self
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn get(&self, name: TemplateName) -> &str {
        &self.templates[&name]
    }

    /// Checks placeholder usage of every template.
    pub fn validate(&self) -> Result<(), TemplateError> {
        for name in TemplateName::ALL {
            let text = self.get(name);
            let stem = name.file_stem();
            if text.trim().is_empty() {
                return Err(TemplateError::Empty(stem));
            }
            let allowed = name.placeholders();
            let found = find_placeholders(text);
            if let Some(bad) = found.iter().find(|p| !allowed.contains(&p.as_str())) {
                return Err(TemplateError::UnknownPlaceholder { template: stem, placeholder: bad.clone() });
            }
            if let Some(missing) = allowed.iter().find(|a| !found.iter().any(|f| f == *a)) {
                return Err(TemplateError::MissingPlaceholder { template: stem, placeholder: missing });
            }
        }
        Ok(())
    }

    /// SHA-256 over the version and every template, in a fixed order.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.version.as_bytes());
        h.update([0]);
        for (name, text) in &self.templates {
            h.update(name.file_stem().as_bytes());
            h.update([0]);
            h.update(text.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }

    /// Substitutes `vars` into the named template. Leftover markers are reported
    /// by the caller, which sees the whole composed text.
    pub fn render(&self, name: TemplateName, vars: &[(&str, &str)]) -> String {
        let mut out = self.get(name).to_string();
        for (key, value) in vars {
            out = out.replace(&format!("{{{key}}}"), value);
        }
        out
    }
}

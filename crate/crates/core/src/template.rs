//! Versioned prompt templates with `{name}` placeholders.
//!
//! A template file starts with optional `#` comment lines, followed by
//! sections introduced by a `[section]` line. Section text runs until the
//! next marker; trailing blank lines are dropped.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    id: String,
    sections: BTreeMap<String, String>,
}

const BUILTIN: &[(&str, &str)] = &[
    ("stance-v1", include_str!("../templates/stance-v1.txt")),
    ("aspect-v1", include_str!("../templates/aspect-v1.txt")),
    ("condition-v1", include_str!("../templates/condition-v1.txt")),
    ("narrative-v1", include_str!("../templates/narrative-v1.txt")),
];

impl Template {
    pub fn parse(id: impl Into<String>, text: &str) -> Result<Self> {
        let id = id.into();
        let mut sections = BTreeMap::new();
        let mut current: Option<(String, Vec<&str>)> = None;
        for line in text.lines() {
            let trimmed = line.trim_end();
            if trimmed.starts_with('[') && trimmed.ends_with(']') && trimmed.len() > 2 {
                if let Some((name, body)) = current.take() {
                    insert_section(&id, &mut sections, name, body)?;
                }
                current = Some((trimmed[1..trimmed.len() - 1].to_string(), Vec::new()));
            } else if let Some((_, body)) = current.as_mut() {
                body.push(line);
            } else if !(trimmed.is_empty() || trimmed.starts_with('#')) {
                return Err(Error::Invalid(format!("template `{id}`: text before first section")));
            }
        }
        if let Some((name, body)) = current.take() {
            insert_section(&id, &mut sections, name, body)?;
        }
        Ok(Self { id, sections })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse(id, &text)
    }

    pub fn builtin(id: &str) -> Result<Self> {
        let (_, text) = BUILTIN
            .iter()
            .find(|(k, _)| *k == id)
            .ok_or_else(|| Error::Config(format!("unknown template id `{id}`")))?;
        Self::parse(id, text)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.sections.contains_key(name)
    }

    pub fn section(&self, name: &str) -> Result<&str> {
        self.sections
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("template `{}` has no [{name}] section", self.id)))
    }

    /// Substitute `vars` into a section. Every placeholder must be bound;
    /// substituted values are inserted verbatim and never re-scanned.
    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> Result<String> {
        let src = self.section(name)?;
        let mut out = String::with_capacity(src.len() + 64);
        let mut rest = src;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let close = after
                .find('}')
                .ok_or_else(|| Error::Config(format!("template `{}`: unclosed placeholder", self.id)))?;
            let key = &after[..close];
            let value = vars
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Config(format!("template `{}`: unbound placeholder `{key}`", self.id)))?;
            out.push_str(value);
            rest = &after[close + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

fn insert_section(id: &str, sections: &mut BTreeMap<String, String>, name: String, body: Vec<&str>) -> Result<()> {
    let mut lines = body;
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    if sections.insert(name.clone(), lines.join("\n")).is_some() {
        return Err(Error::Invalid(format!("template `{id}`: section [{name}] repeated")));
    }
    Ok(())
}

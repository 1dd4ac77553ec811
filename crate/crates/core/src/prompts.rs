//! Operator prompt templates. Templates live as plain-text files (one per
//! operator) with `{name}` placeholders.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

pub const STRUCTURE: &str = "structure";
pub const GROUP: &str = "group";
pub const CLARIFY: &str = "clarify";
pub const LINK: &str = "link";
pub const SUMMARIZE: &str = "summarize";
pub const SUMMARIZE_RETRY: &str = "summarize_retry";
pub const FOLLOW_UP: &str = "follow_up";
pub const BRANCH: &str = "branch";
pub const REGENERATE: &str = "regenerate";

/// Template id under which reasoning-model calls are recorded in fixtures.
pub const REASON: &str = "reason";

/// Every template id a catalog must provide, with the placeholders the
/// operators bind for it.
pub const REQUIRED: &[(&str, &[&str])] = &[
    (STRUCTURE, &["reasoning"]),
    (GROUP, &["query", "reasoning", "max_segments"]),
    (CLARIFY, &["reasoning", "context"]),
    (LINK, &["premises", "hypotheses"]),
    (SUMMARIZE, &["subtree_context", "max_words"]),
    (SUMMARIZE_RETRY, &["subtree_context", "max_words", "previous"]),
    (FOLLOW_UP, &["query", "path", "question", "answer"]),
    (BRANCH, &["query", "path", "instruction"]),
    (REGENERATE, &["query", "path", "previous"]),
];

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("template `{template}` needs placeholder `{name}`, which was not bound")]
    MissingPlaceholder { template: String, name: String },
    #[error("template `{template}` does not reference placeholder `{name}`")]
    UnusedPlaceholder { template: String, name: String },
    #[error("reading template `{template}`: {source}")]
    Io {
        template: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug)]
pub struct PromptCatalog {
    templates: BTreeMap<String, String>,
}

impl PromptCatalog {
    /// The templates shipped in this crate's `prompts/` directory.
    pub fn bundled() -> Self {
        let files: [(&str, &str); 9] = [
            (STRUCTURE, include_str!("../prompts/structure.txt")),
            (GROUP, include_str!("../prompts/group.txt")),
            (CLARIFY, include_str!("../prompts/clarify.txt")),
            (LINK, include_str!("../prompts/link.txt")),
            (SUMMARIZE, include_str!("../prompts/summarize.txt")),
            (SUMMARIZE_RETRY, include_str!("../prompts/summarize_retry.txt")),
            (FOLLOW_UP, include_str!("../prompts/follow_up.txt")),
            (BRANCH, include_str!("../prompts/branch.txt")),
            (REGENERATE, include_str!("../prompts/regenerate.txt")),
        ];
        let catalog = PromptCatalog {
            templates: files
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        };
        catalog.check().expect("bundled templates are consistent");
        catalog
    }

    /// Loads `{id}.txt` for every required template from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut templates = BTreeMap::new();
        for (id, _) in REQUIRED {
            let path = dir.join(format!("{id}.txt"));
            let body = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                template: id.to_string(),
                source,
            })?;
            templates.insert(id.to_string(), body);
        }
        let catalog = PromptCatalog { templates };
        catalog.check()?;
        Ok(catalog)
    }

    pub fn from_templates(templates: BTreeMap<String, String>) -> Result<Self, PromptError> {
        let catalog = PromptCatalog { templates };
        catalog.check()?;
        Ok(catalog)
    }

    /// Every placeholder an operator binds must appear in its template, and
    /// the template must not ask for anything the operator doesn't bind.
    fn check(&self) -> Result<(), PromptError> {
        for (id, bound) in REQUIRED {
            let body = self
                .templates
                .get(*id)
                .ok_or_else(|| PromptError::UnknownTemplate(id.to_string()))?;
            let used = placeholders(body);
            for name in *bound {
                if !used.contains(*name) {
                    return Err(PromptError::UnusedPlaceholder {
                        template: id.to_string(),
                        name: name.to_string(),
                    });
                }
            }
            if let Some(extra) = used.iter().find(|u| !bound.contains(&u.as_str())) {
                return Err(PromptError::MissingPlaceholder {
                    template: id.to_string(),
                    name: extra.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn template(&self, id: &str) -> Option<&str> {
        self.templates.get(id).map(String::as_str)
    }

    /// Substitutes `{name}` placeholders in one pass. Bound values are not
    /// re-scanned, so they may contain braces freely.
    pub fn render(&self, id: &str, bindings: &[(&str, &str)]) -> Result<String, PromptError> {
        let body = self
            .template(id)
            .ok_or_else(|| PromptError::UnknownTemplate(id.to_string()))?;
        let mut out = String::with_capacity(body.len());
        let mut rest = body;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match placeholder_at(after) {
                Some(name) => {
                    let value = bindings
                        .iter()
                        .find(|(k, _)| *k == name)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| PromptError::MissingPlaceholder {
                            template: id.to_string(),
                            name: name.to_string(),
                        })?;
                    out.push_str(value);
                    rest = &after[name.len() + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

/// `s` starts right after a `{`; returns the identifier if it closes with `}`.
fn placeholder_at(s: &str) -> Option<&str> {
    let end = s.find('}')?;
    let name = &s[..end];
    let mut chars = name.chars();
    let first = chars.next()?;
    if (first.is_ascii_alphabetic() || first == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
    {
        Some(name)
    } else {
        None
    }
}

/// Placeholder names referenced by a template body.
pub fn placeholders(body: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        if let Some(name) = placeholder_at(after) {
            out.insert(name.to_string());
        }
        rest = after;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_matches_directory() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("prompts");
        let loaded = PromptCatalog::load_dir(&dir).unwrap();
        for (id, _) in REQUIRED {
            assert_eq!(loaded.template(id), PromptCatalog::bundled().template(id));
        }
    }

    #[test]
    fn json_braces_are_not_placeholders() {
        let cat = PromptCatalog::bundled();
        assert_eq!(
            placeholders(cat.template(LINK).unwrap()),
            ["hypotheses", "premises"].iter().map(|s| s.to_string()).collect()
        );
        let out = cat
            .render(LINK, &[("premises", "[{\"id\": 1}]"), ("hypotheses", "{reasoning}")])
            .unwrap();
        assert!(out.contains("[{\"id\": 1}]"));
        assert!(out.contains("{reasoning}"));
        assert!(out.contains("\"entailment_strength\""));
    }

    #[test]
    fn unbound_placeholder_is_reported() {
        let cat = PromptCatalog::bundled();
        let err = cat.render(SUMMARIZE, &[("subtree_context", "x")]).unwrap_err();
        assert!(matches!(err, PromptError::MissingPlaceholder { ref name, .. } if name == "max_words"));
    }

    #[test]
    fn catalog_rejects_template_without_required_placeholder() {
        let mut t: BTreeMap<String, String> = REQUIRED
            .iter()
            .map(|(id, names)| {
                let body = names.iter().map(|n| format!("{{{n}}}")).collect::<Vec<_>>().join(" ");
                (id.to_string(), body)
            })
            .collect();
        assert!(PromptCatalog::from_templates(t.clone()).is_ok());
        t.insert(STRUCTURE.into(), "no input here".into());
        assert!(matches!(
            PromptCatalog::from_templates(t),
            Err(PromptError::UnusedPlaceholder { .. })
        ));
    }
}

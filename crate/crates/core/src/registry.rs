//! The toolbox: every tool spec by name, plus the default tool set.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spec::{validate_spec, SpecialTool, ToolSpec, Violation};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("duplicate tool name `{0}`")]
    DuplicateName(String),
    #[error("tool `{name}` is invalid: {}", describe(.violations))]
    InvalidSpec { name: String, violations: Vec<Violation> },
    #[error("subset manifest names unknown tool `{0}`")]
    UnknownTool(String),
}

fn describe(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Immutable once built; share by reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registry {
    specs: BTreeMap<String, ToolSpec>,
    default_tools: Vec<String>,
}

impl Default for Registry {
    fn default() -> Self {
        Registry::new()
    }
}

impl Registry {
    /// A registry holding only the Special tools, which form the default set.
    pub fn new() -> Self {
        let mut specs = BTreeMap::new();
        let mut default_tools = Vec::new();
        for s in SpecialTool::ALL {
            specs.insert(s.name().to_string(), s.spec());
            default_tools.push(s.name().to_string());
        }
        Registry { specs, default_tools }
    }

    pub fn from_specs<I: IntoIterator<Item = ToolSpec>>(specs: I) -> Result<Self, RegistryError> {
        let mut registry = Registry::new();
        for spec in specs {
            registry.insert(spec)?;
        }
        Ok(registry)
    }

    /// Adds a validated spec. Names, including the Special tool names, are unique.
    pub fn insert(&mut self, spec: ToolSpec) -> Result<(), RegistryError> {
        if self.specs.contains_key(&spec.name) {
            return Err(RegistryError::DuplicateName(spec.name));
        }
        let report = validate_spec(&spec);
        if !report.is_valid() {
            return Err(RegistryError::InvalidSpec {
                name: spec.name,
                violations: report.violations,
            });
        }
        self.specs.insert(spec.name.clone(), spec);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.specs.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.specs.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn default_tools(&self) -> &[String] {
        &self.default_tools
    }

    pub fn specs(&self) -> impl Iterator<Item = &ToolSpec> {
        self.specs.values()
    }

    /// Specs backed by an API or a simulator, i.e. everything but the builtins.
    pub fn api_tools(&self) -> impl Iterator<Item = &ToolSpec> {
        self.specs.values().filter(|s| !s.is_special())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.keys().map(String::as_str)
    }

    /// Looks up the spec registered for a builtin, whatever it is named.
    pub fn special(&self, builtin: SpecialTool) -> Option<&ToolSpec> {
        self.specs.values().find(|s| s.special() == Some(builtin))
    }

    /// Restricts the registry to the listed tools plus the defaults.
    pub fn subset<S: AsRef<str>>(&self, names: &[S]) -> Result<Registry, RegistryError> {
        let mut specs = BTreeMap::new();
        for d in &self.default_tools {
            if let Some(s) = self.specs.get(d) {
                specs.insert(d.clone(), s.clone());
            }
        }
        for n in names {
            let n = n.as_ref();
            let spec = self
                .specs
                .get(n)
                .ok_or_else(|| RegistryError::UnknownTool(n.to_string()))?;
            specs.insert(n.to_string(), spec.clone());
        }
        Ok(Registry {
            specs,
            default_tools: self.default_tools.clone(),
        })
    }

    /// Serialized form: a JSON array of specs in name order.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&RegistryDoc(self.specs.values().cloned().collect())).unwrap_or_default()
    }

    /// Parses [`Registry::to_json`] output. Special tools in the document are
    /// accepted when identical to the builtins.
    pub fn from_json(text: &str) -> Result<Registry, RegistryLoadError> {
        let doc: RegistryDoc = serde_json::from_str(text).map_err(|e| RegistryLoadError::Parse(e.to_string()))?;
        let mut registry = Registry::new();
        for spec in doc.0 {
            if let Some(b) = spec.special() {
                if spec == b.spec() {
                    continue;
                }
            }
            registry.insert(spec)?;
        }
        Ok(registry)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(transparent)]
struct RegistryDoc(Vec<ToolSpec>);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryLoadError {
    #[error("schema violation: {0}")]
    Parse(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

/// True when each subset contains all tools of the one before it.
pub fn is_nested<S: AsRef<str>>(subsets: &[Vec<S>]) -> bool {
    subsets.windows(2).all(|w| {
        w[0].iter()
            .all(|a| w[1].iter().any(|b| b.as_ref() == a.as_ref()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::fixtures::get_indications;

    #[test]
    fn empty_registry_holds_the_four_special_tools() {
        let r = Registry::new();
        assert_eq!(r.len(), 4);
        assert_eq!(r.default_tools(), ["ToolRAG", "Finish", "GiveAnswer", "End"]);
        assert_eq!(r.api_tools().count(), 0);
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut r = Registry::new();
        r.insert(get_indications()).unwrap();
        assert_eq!(
            r.insert(get_indications()),
            Err(RegistryError::DuplicateName("get_indications".into()))
        );
        let mut finish = SpecialTool::Finish.spec();
        finish.description = "other".into();
        assert!(matches!(r.insert(finish), Err(RegistryError::DuplicateName(_))));
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut spec = get_indications();
        spec.unknown_required.push("dose".into());
        assert!(matches!(
            Registry::new().insert(spec),
            Err(RegistryError::InvalidSpec { .. })
        ));
    }

    #[test]
    fn json_round_trip_is_equal() {
        let r = Registry::from_specs([get_indications()]).unwrap();
        let back = Registry::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn subset_keeps_defaults() {
        let r = Registry::from_specs([get_indications()]).unwrap();
        let empty: [&str; 0] = [];
        assert_eq!(r.subset(&empty).unwrap().len(), 4);
        assert_eq!(r.subset(&["get_indications"]).unwrap().len(), 5);
        assert!(r.subset(&["nope"]).is_err());
    }

    #[test]
    fn nesting_check() {
        assert!(is_nested(&[alloc::vec!["a"], alloc::vec!["a", "b"], alloc::vec!["b", "a", "c"]]));
        assert!(!is_nested(&[alloc::vec!["a", "x"], alloc::vec!["a", "b"]]));
    }
}

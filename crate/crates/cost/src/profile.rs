//! Per-domain prompt content and rule presets, stored as TOML.

use std::path::Path;
use std::str::FromStr;

use cost_core::model::{object_names, ObjectName};
use cost_core::prompt::StepsExample;
use cost_core::validate::{Alternation, ClosureLevel, DomainRules};
use serde::{Deserialize, Serialize};

use crate::io::read_text;

const TABLETOP: &str = include_str!("../profiles/tabletop.toml");
const KITCHEN: &str = include_str!("../profiles/kitchen.toml");

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("unknown domain profile {0:?}")]
    Unknown(String),
    #[error("{0}")]
    Io(#[from] crate::io::IoError),
    #[error("bad profile: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("bad rules: {0}")]
    Rules(String),
}

/// Which steps prompt a build uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepsVariant {
    /// Objects in front of the robot are given.
    Fixed,
    /// The model also names the objects it needs.
    Flexible,
}

impl FromStr for StepsVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(StepsVariant::Fixed),
            "flexible" => Ok(StepsVariant::Flexible),
            other => Err(format!("unknown steps variant {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepsExampleSpec {
    pub command: String,
    #[serde(default)]
    pub objects: Vec<String>,
    pub steps: String,
    #[serde(default)]
    pub required_objects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainProfile {
    pub domain: String,
    pub variant: StepsVariant,
    /// Rules preset name or path.
    pub rules: String,
    pub object_target: u32,
    pub min_objects: u32,
    pub robot_info: String,
    pub command_note: String,
    pub steps_note: String,
    #[serde(default)]
    pub seed_objects: Vec<String>,
    pub example_command: String,
    #[serde(default)]
    pub example_objects: Vec<String>,
    pub steps_example: StepsExampleSpec,
}

fn names(raw: &[String]) -> Vec<ObjectName> {
    if raw.is_empty() {
        Vec::new()
    } else {
        object_names(raw.iter().map(String::as_str))
    }
}

impl DomainProfile {
    pub fn builtin(name: &str) -> Option<Self> {
        let text = match name {
            "tabletop" => TABLETOP,
            "kitchen" => KITCHEN,
            _ => return None,
        };
        Some(toml::from_str(text).expect("bundled profile parses"))
    }

    pub fn parse(text: &str) -> Result<Self, ProfileError> {
        Ok(toml::from_str(text)?)
    }

    /// A bundled name, or a path to a TOML file.
    pub fn resolve(name_or_path: &str) -> Result<Self, ProfileError> {
        if let Some(p) = Self::builtin(name_or_path) {
            return Ok(p);
        }
        let path = Path::new(name_or_path);
        if path.exists() {
            return Self::parse(&read_text(path)?);
        }
        Err(ProfileError::Unknown(name_or_path.to_string()))
    }

    pub fn seed_objects(&self) -> Vec<ObjectName> {
        names(&self.seed_objects)
    }

    pub fn example_objects(&self) -> Vec<ObjectName> {
        names(&self.example_objects)
    }

    pub fn steps_example(&self) -> StepsExample {
        StepsExample {
            command: self.steps_example.command.clone(),
            objects: names(&self.steps_example.objects),
            steps: self.steps_example.steps.clone(),
            required_objects: names(&self.steps_example.required_objects),
        }
    }

    pub fn domain_rules(&self) -> Result<DomainRules, ProfileError> {
        load_rules(&self.rules)
    }
}

/// Optional overrides on top of a preset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RulesFile {
    pub preset: Option<String>,
    pub allowed_actions: Option<Vec<String>>,
    pub utilize_verbs: Option<Vec<String>>,
    pub alternation: Option<Alternation>,
    pub gripper_capacity: Option<u32>,
    pub closure_level: Option<ClosureLevel>,
}

pub fn preset_rules(name: &str) -> Option<DomainRules> {
    match name {
        "tabletop" => Some(DomainRules::tabletop()),
        "kitchen" => Some(DomainRules::kitchen()),
        _ => None,
    }
}

impl RulesFile {
    pub fn resolve(&self) -> Result<DomainRules, ProfileError> {
        let preset = self.preset.as_deref().unwrap_or("tabletop");
        let mut rules = match (&self.utilize_verbs, preset) {
            (Some(verbs), "kitchen") => DomainRules::kitchen_with(verbs),
            _ => preset_rules(preset).ok_or_else(|| ProfileError::Rules(format!("unknown preset {preset:?}")))?,
        };
        if let Some(actions) = &self.allowed_actions {
            rules.allowed_actions = actions.iter().map(|a| cost_core::model::normalize_text(a)).collect();
        }
        if let Some(a) = self.alternation {
            rules.alternation = a;
        }
        if let Some(c) = self.gripper_capacity {
            rules.gripper_capacity = c;
        }
        if let Some(c) = self.closure_level {
            rules.closure_level = c;
        }
        rules.check().map_err(|e| ProfileError::Rules(e.to_string()))?;
        Ok(rules)
    }
}

/// `tabletop`, `kitchen`, or a TOML rules file.
pub fn load_rules(name_or_path: &str) -> Result<DomainRules, ProfileError> {
    if let Some(r) = preset_rules(name_or_path) {
        return Ok(r);
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        return Err(ProfileError::Unknown(name_or_path.to_string()));
    }
    let file: RulesFile = toml::from_str(&read_text(path)?)?;
    file.resolve()
}

#[cfg(test)]
mod tests {
    use super::*;
    use cost_core::validate::DEFAULT_UTILIZE_VERBS;

    #[test]
    fn bundled_profiles_load() {
        let t = DomainProfile::builtin("tabletop").unwrap();
        assert_eq!(t.variant, StepsVariant::Fixed);
        assert_eq!(t.domain_rules().unwrap(), DomainRules::tabletop());
        let k = DomainProfile::builtin("kitchen").unwrap();
        assert_eq!(k.variant, StepsVariant::Flexible);
        assert_eq!(k.steps_example().required_objects.len(), 3);
        assert!(DomainProfile::builtin("garage").is_none());
    }

    #[test]
    fn rules_file_overrides() {
        let f: RulesFile =
            toml::from_str("preset = \"kitchen\"\ngripper_capacity = 1\nclosure_level = \"strict\"").unwrap();
        let r = f.resolve().unwrap();
        assert_eq!(r.gripper_capacity, 1);
        assert_eq!(r.closure_level, ClosureLevel::Strict);
        assert!(r.allows("wash"));
        let f: RulesFile = toml::from_str("preset = \"kitchen\"\nutilize_verbs = [\"Zest\"]").unwrap();
        let r = f.resolve().unwrap();
        assert!(r.allows("zest") && !r.allows("wash"));
        let bad: RulesFile = toml::from_str("allowed_actions = [\"move\"]").unwrap();
        assert!(bad.resolve().is_err());
        assert!(toml::from_str::<RulesFile>("colour = 1").is_err());
        assert!(DEFAULT_UTILIZE_VERBS.contains(&"wash"));
    }
}

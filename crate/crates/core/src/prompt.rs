//! Prompt templates and their rendering.
//!
//! Templates are plain text files with a small front-matter block:
//!
//! ```text
//! ---
//! template_id: command_gen
//! version: 1.0
//! required_placeholders: domain, count
//! ---
//! body with {{domain}} and {{count}} markers
//! ```
//!
//! Markers use `{{name}}` so the literal `<MASK>`, `<INSTRUCTION>` and
//! `<USED_OBJECTS>` strings the prompts must carry are never substituted.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{format_object_list, ObjectName};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    ObjectList,
    CommandGen,
    StepsFixed,
    StepsFlexible,
}

impl TemplateId {
    pub const ALL: [TemplateId; 4] = [
        TemplateId::ObjectList,
        TemplateId::CommandGen,
        TemplateId::StepsFixed,
        TemplateId::StepsFlexible,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::ObjectList => "object_list",
            TemplateId::CommandGen => "command_gen",
            TemplateId::StepsFixed => "steps_fixed",
            TemplateId::StepsFlexible => "steps_flexible",
        }
    }
}

impl FromStr for TemplateId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|id| id.as_str() == s.trim())
            .ok_or_else(|| PromptError::FrontMatter(alloc::format!("unknown template_id {s:?}")))
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("missing or empty value for placeholder {0:?}")]
    MissingPlaceholder(String),
    #[error("object list is empty")]
    EmptyObjectList,
    #[error("count must be at least 1")]
    ZeroCount,
    #[error("bad template front-matter: {0}")]
    FrontMatter(String),
    #[error("placeholder {0:?} used in body but not declared")]
    UndeclaredPlaceholder(String),
    #[error("placeholder {0:?} declared but never used in body")]
    UnusedPlaceholder(String),
    #[error("substituted value introduces placeholder marker {0:?}")]
    ResidualMarker(String),
    #[error("template {found} supplied where {expected} was expected")]
    WrongTemplate { expected: TemplateId, found: TemplateId },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub template_id: TemplateId,
    pub version: String,
    pub body: String,
    pub required_placeholders: BTreeSet<String>,
    /// Set for templates authored without a published original.
    pub stand_in: bool,
}

/// Byte span and name of each `{{name}}` marker in `text`.
pub fn scan_placeholders(text: &str) -> Vec<(usize, usize, &str)> {
    let bytes = text.as_bytes();
    let mut found = Vec::new();
    let mut i = 0;
    while i + 1 < bytes.len() {
        if bytes[i] == b'{' && bytes[i + 1] == b'{' {
            let start = i;
            let mut j = i + 2;
            while j < bytes.len() && (bytes[j].is_ascii_lowercase() || bytes[j].is_ascii_digit() || bytes[j] == b'_') {
                j += 1;
            }
            if j > i + 2 && j + 1 < bytes.len() && bytes[j] == b'}' && bytes[j + 1] == b'}' {
                found.push((start, j + 2, &text[i + 2..j]));
                i = j + 2;
                continue;
            }
        }
        i += 1;
    }
    found
}

impl PromptTemplate {
    /// Parses a template file: front-matter between `---` lines, then body.
    pub fn parse(source: &str) -> Result<Self, PromptError> {
        let source = source.strip_prefix('\u{feff}').unwrap_or(source);
        let mut lines = source.split_inclusive('\n');
        let first = lines.next().unwrap_or("");
        if first.trim_end() != "---" {
            return Err(PromptError::FrontMatter("missing opening ---".into()));
        }
        let mut consumed = first.len();
        let mut fields = BTreeMap::new();
        let mut closed = false;
        for line in lines {
            consumed += line.len();
            let trimmed = line.trim();
            if trimmed == "---" {
                closed = true;
                break;
            }
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once(':')
                .ok_or_else(|| PromptError::FrontMatter(alloc::format!("not a key: value line: {trimmed:?}")))?;
            fields.insert(key.trim().to_string(), value.trim().to_string());
        }
        if !closed {
            return Err(PromptError::FrontMatter("missing closing ---".into()));
        }
        let mut body = &source[consumed..];
        body = body.strip_suffix('\n').unwrap_or(body);
        body = body.strip_suffix('\r').unwrap_or(body);

        let template_id: TemplateId = fields
            .get("template_id")
            .ok_or_else(|| PromptError::FrontMatter("template_id missing".into()))?
            .parse()?;
        let version = fields
            .get("version")
            .filter(|v| !v.is_empty())
            .ok_or_else(|| PromptError::FrontMatter("version missing".into()))?
            .clone();
        let required_placeholders: BTreeSet<String> = fields
            .get("required_placeholders")
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(ToString::to_string)
                    .collect()
            })
            .unwrap_or_default();
        let stand_in = fields.get("stand_in").is_some_and(|v| v == "true");

        let used: BTreeSet<&str> = scan_placeholders(body).into_iter().map(|(_, _, n)| n).collect();
        if let Some(name) = used.iter().find(|n| !required_placeholders.contains(**n)) {
            return Err(PromptError::UndeclaredPlaceholder(name.to_string()));
        }
        if let Some(name) = required_placeholders.iter().find(|n| !used.contains(n.as_str())) {
            return Err(PromptError::UnusedPlaceholder(name.clone()));
        }

        Ok(Self {
            template_id,
            version,
            body: body.to_string(),
            required_placeholders,
            stand_in,
        })
    }

    /// Substitutes every marker in one pass. Every declared placeholder must
    /// be bound to a nonblank value.
    pub fn render(&self, substitutions: BTreeMap<String, String>) -> Result<RenderedPrompt, PromptError> {
        for name in &self.required_placeholders {
            match substitutions.get(name) {
                Some(value) if !value.trim().is_empty() => {}
                _ => return Err(PromptError::MissingPlaceholder(name.clone())),
            }
        }
        let mut text = String::with_capacity(self.body.len() + 256);
        let mut last = 0;
        for (start, end, name) in scan_placeholders(&self.body) {
            text.push_str(&self.body[last..start]);
            text.push_str(&substitutions[name]);
            last = end;
        }
        text.push_str(&self.body[last..]);
        if let Some((_, _, name)) = scan_placeholders(&text).first() {
            return Err(PromptError::ResidualMarker(name.to_string()));
        }
        Ok(RenderedPrompt {
            template_id: self.template_id,
            version: self.version.clone(),
            substitutions,
            text,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub template_id: TemplateId,
    pub version: String,
    pub substitutions: BTreeMap<String, String>,
    pub text: String,
}

/// A worked example shown to the model inside a steps prompt.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepsExample {
    pub command: String,
    /// Objects shown in the fixed-objects prompt.
    #[serde(default)]
    pub objects: Vec<ObjectName>,
    /// Pre-formatted `Step N. ...` lines.
    pub steps: String,
    /// Shown in the flexible-objects prompt.
    #[serde(default)]
    pub required_objects: Vec<ObjectName>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandPromptInput<'a> {
    pub domain: &'a str,
    pub count: u32,
    pub objects: &'a [ObjectName],
    pub note: &'a str,
    pub example_command: &'a str,
    /// Objects shown next to the example command; when empty the first
    /// `min_objects` entries of `objects` are shown.
    pub example_objects: &'a [ObjectName],
    pub min_objects: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedStepsInput<'a> {
    pub command: &'a str,
    pub objects: &'a [ObjectName],
    pub robot_info: &'a str,
    pub note: &'a str,
    pub example: &'a StepsExample,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlexibleStepsInput<'a> {
    pub command: &'a str,
    pub note: &'a str,
    pub example: &'a StepsExample,
}

fn comma_list(objects: &[ObjectName]) -> String {
    let mut out = String::new();
    for (i, o) in objects.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(o.raw());
    }
    out
}

fn subs<const N: usize>(pairs: [(&str, String); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// The four templates used by a build.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub object_list: PromptTemplate,
    pub command_gen: PromptTemplate,
    pub steps_fixed: PromptTemplate,
    pub steps_flexible: PromptTemplate,
}

pub const BUILTIN_SOURCES: [(TemplateId, &str); 4] = [
    (TemplateId::ObjectList, include_str!("../templates/object_list.txt")),
    (TemplateId::CommandGen, include_str!("../templates/command_gen.txt")),
    (TemplateId::StepsFixed, include_str!("../templates/steps_fixed.txt")),
    (
        TemplateId::StepsFlexible,
        include_str!("../templates/steps_flexible.txt"),
    ),
];

impl TemplateSet {
    pub fn builtin() -> Self {
        let load = |id: TemplateId| {
            let (_, src) = BUILTIN_SOURCES
                .iter()
                .find(|(i, _)| *i == id)
                .expect("builtin template");
            PromptTemplate::parse(src).expect("builtin template parses")
        };
        Self {
            object_list: load(TemplateId::ObjectList),
            command_gen: load(TemplateId::CommandGen),
            steps_fixed: load(TemplateId::StepsFixed),
            steps_flexible: load(TemplateId::StepsFlexible),
        }
    }

    /// Replaces the slot matching `template.template_id`.
    pub fn replace(&mut self, template: PromptTemplate) {
        match template.template_id {
            TemplateId::ObjectList => self.object_list = template,
            TemplateId::CommandGen => self.command_gen = template,
            TemplateId::StepsFixed => self.steps_fixed = template,
            TemplateId::StepsFlexible => self.steps_flexible = template,
        }
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        match id {
            TemplateId::ObjectList => &self.object_list,
            TemplateId::CommandGen => &self.command_gen,
            TemplateId::StepsFixed => &self.steps_fixed,
            TemplateId::StepsFlexible => &self.steps_flexible,
        }
    }

    pub fn render_object_list_prompt(&self, domain: &str, count: u32) -> Result<RenderedPrompt, PromptError> {
        if count == 0 {
            return Err(PromptError::ZeroCount);
        }
        self.object_list.render(subs([
            ("domain", domain.trim().to_string()),
            ("count", count.to_string()),
        ]))
    }

    pub fn render_command_prompt(&self, input: &CommandPromptInput<'_>) -> Result<RenderedPrompt, PromptError> {
        if input.objects.is_empty() {
            return Err(PromptError::EmptyObjectList);
        }
        if input.count == 0 || input.min_objects == 0 {
            return Err(PromptError::ZeroCount);
        }
        let example_objects = if input.example_objects.is_empty() {
            let n = (input.min_objects as usize).min(input.objects.len());
            comma_list(&input.objects[..n])
        } else {
            comma_list(input.example_objects)
        };
        self.command_gen.render(subs([
            ("domain", input.domain.trim().to_string()),
            ("count", input.count.to_string()),
            ("min_objects", input.min_objects.to_string()),
            ("example_objects", example_objects),
            ("example_command", input.example_command.trim().to_string()),
            ("note", input.note.trim().to_string()),
            ("object_list", format_object_list(input.objects)),
        ]))
    }

    pub fn render_steps_prompt_fixed(&self, input: &FixedStepsInput<'_>) -> Result<RenderedPrompt, PromptError> {
        let objects = if input.objects.is_empty() {
            String::new()
        } else {
            format_object_list(input.objects)
        };
        let example_objects = if input.example.objects.is_empty() {
            String::new()
        } else {
            format_object_list(&input.example.objects)
        };
        self.steps_fixed.render(subs([
            ("robot_info", input.robot_info.trim().to_string()),
            ("example_command", input.example.command.trim().to_string()),
            ("example_objects", example_objects),
            ("example_steps", input.example.steps.trim().to_string()),
            ("note", input.note.trim().to_string()),
            ("command", input.command.trim().to_string()),
            ("objects", objects),
        ]))
    }

    pub fn render_steps_prompt_flexible(&self, input: &FlexibleStepsInput<'_>) -> Result<RenderedPrompt, PromptError> {
        let required = if input.example.required_objects.is_empty() {
            String::new()
        } else {
            format_object_list(&input.example.required_objects)
        };
        self.steps_flexible.render(subs([
            ("example_command", input.example.command.trim().to_string()),
            ("example_steps", input.example.steps.trim().to_string()),
            ("example_required_objects", required),
            ("note", input.note.trim().to_string()),
            ("command", input.command.trim().to_string()),
        ]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::object_names;
    use alloc::vec;

    fn fixed_example() -> StepsExample {
        StepsExample {
            command: "Put the red block in the red bowl.".into(),
            objects: object_names(["Red block", "Red bowl", "Blue block"]),
            steps: "Step 1. PICK up the red block. (ACTION: Pick | TARGET: Red block)\n\
                    Step 2. PLACE the red block in the red bowl. (ACTION: Place | TARGET: Red bowl)"
                .into(),
            required_objects: vec![],
        }
    }

    #[test]
    fn builtin_templates_parse_and_declare_all_markers() {
        let set = TemplateSet::builtin();
        for id in TemplateId::ALL {
            let t = set.get(id);
            assert_eq!(t.template_id, id);
            let used: BTreeSet<String> = scan_placeholders(&t.body)
                .iter()
                .map(|(_, _, n)| n.to_string())
                .collect();
            assert_eq!(used, t.required_placeholders);
        }
        assert!(set.object_list.stand_in);
        assert!(!set.command_gen.stand_in);
    }

    #[test]
    fn literal_prompt_tokens_are_not_placeholders() {
        assert!(scan_placeholders("<MASK> <INSTRUCTION> {A sample} { {x} }").is_empty());
        assert_eq!(scan_placeholders("a {{b_1}} c")[0], (2, 9, "b_1"));
    }

    #[test]
    fn front_matter_errors() {
        assert!(matches!(
            PromptTemplate::parse("no front matter"),
            Err(PromptError::FrontMatter(_))
        ));
        let undeclared =
            "---\ntemplate_id: object_list\nversion: 1\nrequired_placeholders: domain\n---\n{{domain}} {{count}}";
        assert_eq!(
            PromptTemplate::parse(undeclared),
            Err(PromptError::UndeclaredPlaceholder("count".into()))
        );
        let unused = "---\ntemplate_id: object_list\nversion: 1\nrequired_placeholders: domain, count\n---\n{{domain}}";
        assert_eq!(
            PromptTemplate::parse(unused),
            Err(PromptError::UnusedPlaceholder("count".into()))
        );
    }

    #[test]
    fn object_list_prompt() {
        let set = TemplateSet::builtin();
        let p = set.render_object_list_prompt("kitchen", 30).unwrap();
        assert!(p.text.contains("kitchen"));
        assert!(p.text.contains("30 different objects"));
        assert!(p.text.contains("1. <OBJECT>"));
        assert_eq!(set.render_object_list_prompt("kitchen", 30).unwrap(), p);
        assert_eq!(
            set.render_object_list_prompt("", 10),
            Err(PromptError::MissingPlaceholder("domain".into()))
        );
        assert_eq!(set.render_object_list_prompt("kitchen", 0), Err(PromptError::ZeroCount));
    }

    #[test]
    fn command_prompt_embeds_objects_and_output_template() {
        let set = TemplateSet::builtin();
        let objects = object_names(["Egg", "Bowl", "Whisk"]);
        let input = CommandPromptInput {
            domain: "kitchen",
            count: 20,
            objects: &objects,
            note: "Use household kitchen tasks.",
            example_command: "Make a sandwich.",
            example_objects: &[],
            min_objects: 2,
        };
        let p = set.render_command_prompt(&input).unwrap();
        assert!(p.text.contains("(<USED_OBJECTS>), <INSTRUCTION>"));
        assert!(p.text.contains("generate 20 sets of instructions"));
        assert!(p.text.contains("Select 2 or more objects"));
        assert!(p.text.contains("['Egg', 'Bowl', 'Whisk']"));
        assert!(p.text.contains("(Egg, Bowl) Make a sandwich."));
        assert!(p.text.contains("[Note]\nUse household kitchen tasks."));
        assert!(p.text.ends_with("[Output]\n1."));
        assert_eq!(p.template_id, TemplateId::CommandGen);

        let empty = CommandPromptInput {
            objects: &[],
            ..input.clone()
        };
        assert_eq!(set.render_command_prompt(&empty), Err(PromptError::EmptyObjectList));
        let no_note = CommandPromptInput { note: "  ", ..input };
        assert_eq!(
            set.render_command_prompt(&no_note),
            Err(PromptError::MissingPlaceholder("note".into()))
        );
    }

    #[test]
    fn fixed_steps_prompt() {
        let set = TemplateSet::builtin();
        let objects = object_names([
            "Yellow semicircle block",
            "Red circle block",
            "Red semicircle block",
            "Yellow bowl",
            "Red bowl",
        ]);
        let example = fixed_example();
        let input = FixedStepsInput {
            command: "Arrange semicircle blocks in the same colored bowl as the picked block.",
            objects: &objects,
            robot_info: "The robot can only pick up one object and place it.",
            note: "Use only pick and place.",
            example: &example,
        };
        let p = set.render_steps_prompt_fixed(&input).unwrap();
        assert!(p.text.contains(
            "Objects in front of the robot= ['Yellow semicircle block', 'Red circle block', \
             'Red semicircle block', 'Yellow bowl', 'Red bowl']"
        ));
        assert!(p.text.contains("[Information about the robot]"));
        assert!(p.text.contains("Action Steps= <MASK>"));
        assert_eq!(set.render_steps_prompt_fixed(&input).unwrap(), p);

        let no_robot = FixedStepsInput {
            robot_info: "",
            ..input.clone()
        };
        assert_eq!(
            set.render_steps_prompt_fixed(&no_robot),
            Err(PromptError::MissingPlaceholder("robot_info".into()))
        );
        let no_objects = FixedStepsInput { objects: &[], ..input };
        assert_eq!(
            set.render_steps_prompt_fixed(&no_objects),
            Err(PromptError::MissingPlaceholder("objects".into()))
        );
    }

    #[test]
    fn flexible_steps_prompt() {
        let set = TemplateSet::builtin();
        let example = StepsExample {
            command: "Make a cup of tea.".into(),
            objects: vec![],
            steps: "Step 1. PICK up the cup. (ACTION: Pick | TARGET: Cup)".into(),
            required_objects: object_names(["Cup"]),
        };
        let input = FlexibleStepsInput {
            command: "Beat the egg in a bowl.",
            note: "Hold at most two objects.",
            example: &example,
        };
        let p = set.render_steps_prompt_flexible(&input).unwrap();
        assert!(p.text.contains("Required Objects= <MASK>"));
        assert_eq!(p.text.matches("[Output template]\n").count(), 1);
        assert!(!p.text.contains("[Information about the robot]"));
        assert!(p.text.contains("Command= Beat the egg in a bowl."));
        let blank = FlexibleStepsInput { command: "", ..input };
        assert_eq!(
            set.render_steps_prompt_flexible(&blank),
            Err(PromptError::MissingPlaceholder("command".into()))
        );
    }

    #[test]
    fn injected_markers_are_rejected() {
        let set = TemplateSet::builtin();
        assert_eq!(
            set.render_object_list_prompt("{{count}}", 3),
            Err(PromptError::ResidualMarker("count".into()))
        );
    }
}

//! Shared domain types for command/steps records and their canonical
//! one-line JSON encoding.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

/// Case-folds, trims and collapses internal whitespace runs to one space.
pub fn normalize_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for word in raw.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// An object name as emitted, plus its comparison key.
///
/// Equality of two `ObjectName`s compares the raw text; use
/// [`ObjectName::same_as`] for normalized comparison.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectName {
    raw: String,
    normalized: String,
}

impl ObjectName {
    pub fn new(raw: &str) -> Result<Self, ModelError> {
        let raw = raw.trim();
        let normalized = normalize_text(raw);
        if normalized.is_empty() {
            return Err(ModelError::EmptyObjectName);
        }
        Ok(Self {
            raw: raw.to_string(),
            normalized,
        })
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn normalized(&self) -> &str {
        &self.normalized
    }

    pub fn same_as(&self, other: &ObjectName) -> bool {
        self.normalized == other.normalized
    }
}

impl fmt::Debug for ObjectName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(&self.raw, f)
    }
}

impl fmt::Display for ObjectName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl Serialize for ObjectName {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.raw)
    }
}

impl<'de> Deserialize<'de> for ObjectName {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        ObjectName::new(&raw).map_err(serde::de::Error::custom)
    }
}

/// Builds object names from raw strings, panicking on empty input.
/// Intended for fixtures and literals.
pub fn object_names<I, S>(raw: I) -> Vec<ObjectName>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    raw.into_iter()
        .map(|s| ObjectName::new(s.as_ref()).expect("object name must be nonempty"))
        .collect()
}

/// Renders names the way the prompts and records show them:
/// `['Bowl', 'Whisk', 'Egg']`.
pub fn format_object_list(objects: &[ObjectName]) -> String {
    let mut out = String::from("[");
    for (i, name) in objects.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let raw = name.raw();
        let quote = if raw.contains('\'') && !raw.contains('"') {
            '"'
        } else {
            '\''
        };
        out.push(quote);
        for c in raw.chars() {
            if c == quote || c == '\\' {
                out.push('\\');
            }
            out.push(c);
        }
        out.push(quote);
    }
    out.push(']');
    out
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Domain {
    Tabletop,
    Kitchen,
    Custom(String),
}

impl Domain {
    pub fn parse(raw: &str) -> Self {
        match normalize_text(raw).as_str() {
            "tabletop" => Domain::Tabletop,
            "kitchen" => Domain::Kitchen,
            _ => Domain::Custom(raw.trim().to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Domain::Tabletop => "tabletop",
            Domain::Kitchen => "kitchen",
            Domain::Custom(name) => name,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Domain {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Domain {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        if raw.trim().is_empty() {
            return Err(serde::de::Error::custom("domain must be nonempty"));
        }
        Ok(Domain::parse(&raw))
    }
}

/// One intermediate step: description plus ACTION/TARGET annotation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionStep {
    pub index: u32,
    pub text: String,
    pub action: String,
    pub targets: Vec<String>,
}

impl ActionStep {
    pub fn new(index: u32, text: &str, action: &str, targets: &[&str]) -> Self {
        Self {
            index,
            text: text.to_string(),
            action: action.to_string(),
            targets: targets.iter().map(|t| t.to_string()).collect(),
        }
    }

    /// Case-folded action verb.
    pub fn action_key(&self) -> String {
        normalize_text(&self.action)
    }

    pub fn is_action(&self, verb: &str) -> bool {
        self.action.trim().eq_ignore_ascii_case(verb)
    }

    /// Renders the step in the realized pipe form:
    /// `Step 1. PICK up the egg. (ACTION: Pick | TARGET: Egg)`.
    pub fn to_line(&self) -> String {
        format!(
            "Step {}. {} (ACTION: {} | TARGET: {})",
            self.index,
            self.text,
            self.action,
            self.targets.join(", ")
        )
    }
}

/// Renders an `Action Steps=` block, one step per line.
pub fn format_steps(steps: &[ActionStep]) -> String {
    let mut out = String::new();
    for (i, step) in steps.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&step.to_line());
    }
    out
}

/// RFC-3339 timestamp text, e.g. `2024-05-01T12:00:00Z`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Timestamp(String);

impl Timestamp {
    pub fn parse(raw: &str) -> Result<Self, ModelError> {
        if is_rfc3339(raw) {
            Ok(Self(raw.to_string()))
        } else {
            Err(ModelError::BadTimestamp(raw.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Timestamp::parse(&raw).map_err(serde::de::Error::custom)
    }
}

// Shape check only: `YYYY-MM-DDTHH:MM:SS[.frac](Z|±HH:MM)`.
fn is_rfc3339(raw: &str) -> bool {
    let b = raw.as_bytes();
    if b.len() < 20 {
        return false;
    }
    let digits = |range: core::ops::Range<usize>| b[range].iter().all(u8::is_ascii_digit);
    let head_ok = digits(0..4)
        && b[4] == b'-'
        && digits(5..7)
        && b[7] == b'-'
        && digits(8..10)
        && matches!(b[10], b'T' | b't')
        && digits(11..13)
        && b[13] == b':'
        && digits(14..16)
        && b[16] == b':'
        && digits(17..19);
    if !head_ok {
        return false;
    }
    let mut rest = &b[19..];
    if rest.first() == Some(&b'.') {
        let frac = rest[1..].iter().take_while(|c| c.is_ascii_digit()).count();
        if frac == 0 {
            return false;
        }
        rest = &rest[1 + frac..];
    }
    match rest {
        [b'Z' | b'z'] => true,
        [b'+' | b'-', h1, h2, b':', m1, m2] => [h1, h2, m1, m2].iter().all(|c| c.is_ascii_digit()),
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_id: String,
    pub template_id: String,
    pub template_version: String,
    pub request_fingerprint: String,
    pub created_at: Timestamp,
}

/// One command/steps sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub domain: Domain,
    pub objects: Vec<ObjectName>,
    pub command: String,
    pub steps: Vec<ActionStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required_objects: Option<Vec<ObjectName>>,
    pub provenance: Provenance,
    /// Keys this version does not know about, kept for re-emission.
    #[serde(flatten)]
    pub extras: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    EmptyId,
    EmptyCommand,
    EmptySteps,
    IndexGap { expected: u32, found: u32 },
    EmptyStepText { index: u32 },
    EmptyAction { index: u32 },
    MultiTokenAction { index: u32 },
    EmptyTargets { index: u32 },
    EmptyTarget { index: u32 },
    DuplicateObject { name: String },
    EmptyRequiredObjects,
}

impl Violation {
    pub fn field(&self) -> &'static str {
        match self {
            Violation::EmptyId => "id",
            Violation::EmptyCommand => "command",
            Violation::EmptySteps | Violation::IndexGap { .. } => "steps",
            Violation::EmptyStepText { .. } => "steps.text",
            Violation::EmptyAction { .. } | Violation::MultiTokenAction { .. } => "steps.action",
            Violation::EmptyTargets { .. } | Violation::EmptyTarget { .. } => "steps.targets",
            Violation::DuplicateObject { .. } => "objects",
            Violation::EmptyRequiredObjects => "required_objects",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId => write!(f, "id is empty"),
            Violation::EmptyCommand => write!(f, "command is empty"),
            Violation::EmptySteps => write!(f, "steps is empty"),
            Violation::IndexGap { expected, found } => {
                write!(f, "step index gap: expected {expected}, found {found}")
            }
            Violation::EmptyStepText { index } => write!(f, "step {index} has empty text"),
            Violation::EmptyAction { index } => write!(f, "step {index} has empty action"),
            Violation::MultiTokenAction { index } => {
                write!(f, "step {index} action is not a single token")
            }
            Violation::EmptyTargets { index } => write!(f, "step {index} has no targets"),
            Violation::EmptyTarget { index } => write!(f, "step {index} has an empty target"),
            Violation::DuplicateObject { name } => write!(f, "duplicate object {name:?}"),
            Violation::EmptyRequiredObjects => write!(f, "required_objects present but empty"),
        }
    }
}

pub fn validate_record(record: &DatasetRecord) -> Vec<Violation> {
    let mut violations = Vec::new();
    if record.id.trim().is_empty() {
        violations.push(Violation::EmptyId);
    }
    if record.command.trim().is_empty() {
        violations.push(Violation::EmptyCommand);
    }
    if record.steps.is_empty() {
        violations.push(Violation::EmptySteps);
    }
    for (pos, step) in record.steps.iter().enumerate() {
        let expected = pos as u32 + 1;
        if step.index != expected {
            violations.push(Violation::IndexGap {
                expected,
                found: step.index,
            });
        }
        if step.text.trim().is_empty() {
            violations.push(Violation::EmptyStepText { index: step.index });
        }
        let action = step.action.trim();
        if action.is_empty() {
            violations.push(Violation::EmptyAction { index: step.index });
        } else if action.split_whitespace().nth(1).is_some() {
            violations.push(Violation::MultiTokenAction { index: step.index });
        }
        if step.targets.is_empty() {
            violations.push(Violation::EmptyTargets { index: step.index });
        } else if step.targets.iter().any(|t| t.trim().is_empty()) {
            violations.push(Violation::EmptyTarget { index: step.index });
        }
    }
    let mut seen = alloc::collections::BTreeSet::new();
    for object in &record.objects {
        if !seen.insert(object.normalized()) {
            violations.push(Violation::DuplicateObject {
                name: object.raw().to_string(),
            });
        }
    }
    if matches!(&record.required_objects, Some(list) if list.is_empty()) {
        violations.push(Violation::EmptyRequiredObjects);
    }
    violations
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("object name is empty after normalization")]
    EmptyObjectName,
    #[error("not an RFC-3339 timestamp: {0:?}")]
    BadTimestamp(String),
    #[error("record fails validation: {0:?}")]
    InvalidRecord(Vec<Violation>),
    #[error("malformed line at byte {offset}: {message}")]
    MalformedLine { offset: usize, message: String },
}

/// Encodes a record as one canonical JSON line (sorted keys, no trailing
/// newline). Fails only when the record violates its invariants.
pub fn serialize_record(record: &DatasetRecord) -> Result<String, ModelError> {
    let violations = validate_record(record);
    if !violations.is_empty() {
        return Err(ModelError::InvalidRecord(violations));
    }
    to_canonical_json(record).map_err(|e| ModelError::MalformedLine {
        offset: 0,
        message: e.to_string(),
    })
}

/// Serializes through `Value`, whose object maps are key-sorted.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let value = serde_json::to_value(value)?;
    serde_json::to_string(&value)
}

pub fn parse_record(line: &str) -> Result<DatasetRecord, ModelError> {
    let trimmed = line.trim_end_matches(['\n', '\r']);
    if trimmed.trim().is_empty() {
        return Err(ModelError::MalformedLine {
            offset: 0,
            message: "empty line".to_string(),
        });
    }
    serde_json::from_str(trimmed).map_err(|e| ModelError::MalformedLine {
        offset: byte_offset(trimmed, e.line(), e.column()),
        message: e.to_string(),
    })
}

// serde_json reports 1-based line and byte column.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split('\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(text.len());
        }
        offset += l.len() + 1;
    }
    text.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupPolicy {
    NormalizedExact,
    Off,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub domain: Domain,
    /// Commands requested per command-generation call.
    pub commands_per_call: u32,
    /// Number of command-generation calls.
    pub n_calls: u32,
    /// Objects sampled from the pool into each command prompt.
    pub objects_sample_size: u32,
    /// Inclusive `(min, max)` number of distractor objects per record.
    pub distractor_count_range: (u32, u32),
    pub grow_object_pool: bool,
    pub dedup_policy: DedupPolicy,
    pub random_seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            domain: Domain::Tabletop,
            commands_per_call: 20,
            n_calls: 1,
            objects_sample_size: 15,
            distractor_count_range: (1, 2),
            grow_object_pool: true,
            dedup_policy: DedupPolicy::NormalizedExact,
            random_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("{field} must be at least 1")]
    NotPositive { field: &'static str },
    #[error("distractor range {min}..={max} is empty")]
    EmptyRange { min: u32, max: u32 },
}

impl BuildConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, value) in [
            ("commands_per_call", self.commands_per_call),
            ("n_calls", self.n_calls),
            ("objects_sample_size", self.objects_sample_size),
        ] {
            if value == 0 {
                return Err(ConfigError::NotPositive { field });
            }
        }
        let (min, max) = self.distractor_count_range;
        if min > max {
            return Err(ConfigError::EmptyRange { min, max });
        }
        Ok(())
    }

    /// Upper bound on commands before deduplication.
    pub fn target_commands(&self) -> u64 {
        u64::from(self.commands_per_call) * u64::from(self.n_calls)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    pub(crate) fn egg_record() -> DatasetRecord {
        DatasetRecord {
            id: "kitchen-00000".into(),
            domain: Domain::Kitchen,
            objects: object_names(["Bowl", "Whisk", "Table", "Egg", "Apple"]),
            command: "Beat the egg in a bowl.".into(),
            steps: vec![
                ActionStep::new(1, "PICK up the egg.", "Pick", &["Egg"]),
                ActionStep::new(2, "CRACK the egg into the bowl.", "Crack", &["Bowl"]),
                ActionStep::new(3, "PICK up the whisk.", "Pick", &["Whisk"]),
                ActionStep::new(
                    4,
                    "BEAT the egg in the bowl using the whisk.",
                    "Beat",
                    &["Whisk", "Egg", "Bowl"],
                ),
            ],
            required_objects: Some(object_names(["Bowl", "Whisk", "Egg"])),
            provenance: Provenance {
                model_id: "gpt-3.5-turbo".into(),
                template_id: "steps_flexible".into(),
                template_version: "1".into(),
                request_fingerprint: "ab".repeat(32),
                created_at: Timestamp::parse("2024-01-01T00:00:00Z").unwrap(),
            },
            extras: BTreeMap::new(),
        }
    }

    #[test]
    fn egg_record_is_valid() {
        assert_eq!(validate_record(&egg_record()), vec![]);
    }

    #[test]
    fn empty_steps_flagged() {
        let mut r = egg_record();
        r.steps.clear();
        assert_eq!(validate_record(&r), vec![Violation::EmptySteps]);
    }

    #[test]
    fn index_gap_flagged() {
        let mut r = egg_record();
        r.steps.truncate(2);
        r.steps[1].index = 3;
        assert_eq!(validate_record(&r), vec![Violation::IndexGap { expected: 2, found: 3 }]);
    }

    #[test]
    fn duplicate_objects_after_normalization() {
        let mut r = egg_record();
        r.objects.push(ObjectName::new("  bowl ").unwrap());
        assert_eq!(
            validate_record(&r),
            vec![Violation::DuplicateObject { name: "bowl".into() }]
        );
    }

    #[test]
    fn multi_token_action_and_empty_required() {
        let mut r = egg_record();
        r.steps[0].action = "Pick up".into();
        r.required_objects = Some(vec![]);
        let v = validate_record(&r);
        assert!(v.contains(&Violation::MultiTokenAction { index: 1 }));
        assert!(v.contains(&Violation::EmptyRequiredObjects));
    }

    #[test]
    fn serialized_line_has_expected_keys_and_round_trips() {
        let r = egg_record();
        let line = serialize_record(&r).unwrap();
        assert!(!line.contains('\n'));
        for key in ["\"objects\"", "\"command\"", "\"steps\""] {
            assert!(line.contains(key), "{key} missing from {line}");
        }
        assert_eq!(parse_record(&line).unwrap(), r);
    }

    #[test]
    fn serialize_rejects_invalid_record() {
        let mut r = egg_record();
        r.steps.clear();
        assert!(matches!(serialize_record(&r), Err(ModelError::InvalidRecord(_))));
    }

    #[test]
    fn empty_line_is_malformed() {
        assert!(matches!(
            parse_record(""),
            Err(ModelError::MalformedLine { offset: 0, .. })
        ));
    }

    #[test]
    fn malformed_line_reports_offset() {
        let err = parse_record("{\"id\": 5,}").unwrap_err();
        match err {
            ModelError::MalformedLine { offset, .. } => assert!(offset > 0 && offset <= 10),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_preserved() {
        let r = egg_record();
        let line = serialize_record(&r).unwrap();
        let extended = format!(
            "{},\"goal\":[{{\"object\":\"Egg\",\"in\":\"Bowl\"}}],\"zz_future\":1}}",
            &line[..line.len() - 1]
        );
        let parsed = parse_record(&extended).unwrap();
        assert_eq!(parsed.extras.len(), 2);
        assert!(parsed.extras.contains_key("goal"));
        let again = serialize_record(&parsed).unwrap();
        assert!(again.contains("\"zz_future\":1"));
        assert_eq!(parse_record(&again).unwrap(), parsed);
    }

    #[test]
    fn normalization_collapses_and_folds() {
        assert_eq!(normalize_text("  Red   Bowl\t"), "red bowl");
        let n = ObjectName::new(" Red  Bowl ").unwrap();
        assert_eq!(n.raw(), "Red  Bowl");
        assert_eq!(n.normalized(), "red bowl");
        assert!(ObjectName::new("   ").is_err());
    }

    #[test]
    fn object_list_formatting_matches_record_style() {
        let objs = object_names(["Bowl", "Whisk", "Table", "Egg", "Apple"]);
        assert_eq!(format_object_list(&objs), "['Bowl', 'Whisk', 'Table', 'Egg', 'Apple']");
        assert_eq!(
            format_object_list(&object_names(["Chef's knife"])),
            "[\"Chef's knife\"]"
        );
    }

    #[test]
    fn timestamp_shapes() {
        for ok in [
            "2024-01-01T00:00:00Z",
            "2024-01-01T00:00:00.123Z",
            "2024-01-01T00:00:00+09:00",
        ] {
            assert!(Timestamp::parse(ok).is_ok(), "{ok}");
        }
        for bad in ["2024-01-01", "2024-01-01 00:00:00Z", "2024-01-01T00:00:00.Z"] {
            assert!(Timestamp::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn build_config_invariants() {
        assert!(BuildConfig::default().validate().is_ok());
        let c = BuildConfig {
            objects_sample_size: 0,
            ..BuildConfig::default()
        };
        assert_eq!(
            c.validate(),
            Err(ConfigError::NotPositive {
                field: "objects_sample_size"
            })
        );
        let c = BuildConfig {
            distractor_count_range: (3, 1),
            ..BuildConfig::default()
        };
        assert!(c.validate().is_err());
        let c = BuildConfig {
            commands_per_call: 20,
            n_calls: 2,
            ..BuildConfig::default()
        };
        assert_eq!(c.target_commands(), 40);
    }
}

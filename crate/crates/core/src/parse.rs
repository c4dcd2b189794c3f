//! Parsers for the template-constrained model outputs: numbered command
//! lines, `Action Steps` blocks and object lists.
//!
//! Nothing here fails on bad input. Each rejected or suspicious line yields
//! a [`Diagnostic`] carrying its 1-based line number in the raw text, and
//! parsing continues with the next line. Every pass is a constant number of
//! linear scans per line.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::Serialize;

use crate::model::{ActionStep, ObjectName};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
    Info,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
            Severity::Info => "info",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ParseRule {
    EmptyOutput,
    IgnoredLine,
    ImplicitOrdinal,
    MissingObjectsGroup,
    EmptyObjectsGroup,
    EmptyInstruction,
    UnclosedGroup,
    DuplicateObject,
    TrimmedDescription,
    MissingAnnotation,
    MalformedAnnotation,
    MultiWordAction,
    EmptyStepText,
    EmptyTargets,
    NonContiguousIndices,
    MissingStepNumber,
    MissingRequiredObjects,
    NoSteps,
}

impl ParseRule {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseRule::EmptyOutput => "EmptyOutput",
            ParseRule::IgnoredLine => "IgnoredLine",
            ParseRule::ImplicitOrdinal => "ImplicitOrdinal",
            ParseRule::MissingObjectsGroup => "MissingObjectsGroup",
            ParseRule::EmptyObjectsGroup => "EmptyObjectsGroup",
            ParseRule::EmptyInstruction => "EmptyInstruction",
            ParseRule::UnclosedGroup => "UnclosedGroup",
            ParseRule::DuplicateObject => "DuplicateObject",
            ParseRule::TrimmedDescription => "TrimmedDescription",
            ParseRule::MissingAnnotation => "MissingAnnotation",
            ParseRule::MalformedAnnotation => "MalformedAnnotation",
            ParseRule::MultiWordAction => "MultiWordAction",
            ParseRule::EmptyStepText => "EmptyStepText",
            ParseRule::EmptyTargets => "EmptyTargets",
            ParseRule::NonContiguousIndices => "NonContiguousIndices",
            ParseRule::MissingStepNumber => "MissingStepNumber",
            ParseRule::MissingRequiredObjects => "MissingRequiredObjects",
            ParseRule::NoSteps => "NoSteps",
        }
    }
}

impl fmt::Display for ParseRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    /// 1-based line in the raw input; 0 refers to the input as a whole.
    pub line: usize,
    pub rule: ParseRule,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}",
            self.severity.as_str(),
            self.line,
            self.rule,
            self.message
        )
    }
}

pub fn has_errors(diagnostics: &[Diagnostic]) -> bool {
    diagnostics.iter().any(|d| d.severity == Severity::Error)
}

#[derive(Default)]
struct Sink(Vec<Diagnostic>);

impl Sink {
    fn push(&mut self, severity: Severity, line: usize, rule: ParseRule, message: impl Into<String>) {
        self.0.push(Diagnostic {
            severity,
            line,
            rule,
            message: message.into(),
        });
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParsedCommandLine {
    pub ordinal: u32,
    pub used_objects: Vec<ObjectName>,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CommandListParse {
    pub lines: Vec<ParsedCommandLine>,
    /// Parsed objects absent from the pool, first occurrence order.
    pub novel_objects: Vec<ObjectName>,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParsedStepsBlock {
    pub steps: Vec<ActionStep>,
    pub required_objects: Option<Vec<ObjectName>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParseOutcome<T> {
    pub value: Option<T>,
    pub diagnostics: Vec<Diagnostic>,
    /// A value was produced even though error diagnostics were raised.
    pub recovered: bool,
}

impl<T> ParseOutcome<T> {
    pub fn is_clean(&self) -> bool {
        self.value.is_some() && !has_errors(&self.diagnostics)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ObjectListParse {
    pub objects: Vec<ObjectName>,
    pub diagnostics: Vec<Diagnostic>,
}

fn numbered_lines(raw: &str) -> impl Iterator<Item = (usize, &str)> {
    raw.split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
}

/// ASCII case-insensitive search.
fn find_ci(haystack: &str, needle: &str) -> Option<usize> {
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    if n.len() > h.len() {
        return None;
    }
    (0..=h.len() - n.len()).find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

fn starts_with_ci(s: &str, prefix: &str) -> bool {
    s.len() >= prefix.len() && s.as_bytes()[..prefix.len()].eq_ignore_ascii_case(prefix.as_bytes())
}

/// Splits `N.` / `N)` ordinals off the front of a line.
fn split_ordinal(s: &str) -> Option<(u32, &str)> {
    let digits = s.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &s[digits..];
    let rest = rest.strip_prefix(['.', ')', ':'])?;
    let ordinal = s[..digits].parse::<u32>().unwrap_or(u32::MAX);
    Some((ordinal, rest.trim_start()))
}

fn split_bullet(s: &str) -> Option<&str> {
    ["- ", "* ", "• "]
        .iter()
        .find_map(|b| s.strip_prefix(b))
        .map(str::trim_start)
}

/// Splits on commas outside of brackets.
fn split_top_level(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&s[start..]);
    parts
}

fn strip_wrapping(s: &str) -> &str {
    let mut s = s.trim();
    loop {
        let before = s.len();
        for (open, close) in [
            ("'", "'"),
            ("\"", "\""),
            ("{", "}"),
            ("`", "`"),
            ("**", "**"),
            ("<", ">"),
        ] {
            if s.len() >= open.len() + close.len() && s.starts_with(open) && s.ends_with(close) {
                s = s[open.len()..s.len() - close.len()].trim();
            }
        }
        if s.len() == before {
            return s;
        }
    }
}

/// Position of the `)` matching an opening `(` at byte 0.
fn matching_paren(s: &str) -> Option<usize> {
    let mut depth = 0usize;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

fn parse_name_list(s: &str) -> Vec<ObjectName> {
    let s = s.trim();
    let s = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')).unwrap_or(s);
    split_top_level(s)
        .into_iter()
        .map(strip_wrapping)
        .filter(|p| !p.is_empty() && !p.eq_ignore_ascii_case("mask"))
        .filter_map(|p| ObjectName::new(p).ok())
        .collect()
}

fn dedup_names(names: Vec<ObjectName>, line: usize, sink: &mut Sink) -> Vec<ObjectName> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        if seen.insert(name.normalized().to_string()) {
            out.push(name);
        } else {
            sink.push(
                Severity::Warning,
                line,
                ParseRule::DuplicateObject,
                format!("duplicate object {:?} dropped", name.raw()),
            );
        }
    }
    out
}

/// Parses `N. (obj, obj, ...), instruction` lines.
pub fn parse_command_list(raw: &str, object_pool: &[ObjectName]) -> CommandListParse {
    let mut sink = Sink::default();
    let mut lines = Vec::new();
    let pool: BTreeSet<&str> = object_pool.iter().map(ObjectName::normalized).collect();
    let mut novel_seen = BTreeSet::new();
    let mut novel_objects = Vec::new();
    let mut any_content = false;

    for (n, line) in numbered_lines(raw) {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        any_content = true;
        let (ordinal, rest) = match split_ordinal(trimmed) {
            Some(parts) => parts,
            None if lines.is_empty() && trimmed.starts_with('(') => {
                // The prompt ends with a primed "1." the completion continues.
                sink.push(
                    Severity::Info,
                    n,
                    ParseRule::ImplicitOrdinal,
                    "unnumbered first line taken as 1",
                );
                (1, trimmed)
            }
            None => {
                sink.push(
                    Severity::Warning,
                    n,
                    ParseRule::IgnoredLine,
                    "not a numbered command line",
                );
                continue;
            }
        };
        if !rest.starts_with('(') {
            sink.push(
                Severity::Error,
                n,
                ParseRule::MissingObjectsGroup,
                "expected a parenthesized object group after the ordinal",
            );
            continue;
        }
        let Some(close) = matching_paren(rest) else {
            sink.push(
                Severity::Error,
                n,
                ParseRule::UnclosedGroup,
                "object group is never closed",
            );
            continue;
        };
        let objects = parse_name_list(&rest[1..close]);
        let objects = dedup_names(objects, n, &mut sink);
        let instruction = rest[close + 1..]
            .trim_start()
            .trim_start_matches([',', ':', '-'])
            .trim();
        if objects.is_empty() {
            sink.push(
                Severity::Error,
                n,
                ParseRule::EmptyObjectsGroup,
                "object group has no names",
            );
            continue;
        }
        if instruction.is_empty() {
            sink.push(
                Severity::Error,
                n,
                ParseRule::EmptyInstruction,
                "no instruction after object group",
            );
            continue;
        }
        for object in &objects {
            if !pool.contains(object.normalized()) && novel_seen.insert(object.normalized().to_string()) {
                novel_objects.push(object.clone());
            }
        }
        lines.push(ParsedCommandLine {
            ordinal,
            used_objects: objects,
            instruction: instruction.to_string(),
        });
    }
    if !any_content {
        sink.push(Severity::Error, 0, ParseRule::EmptyOutput, "completion is empty");
    }
    CommandListParse {
        lines,
        novel_objects,
        diagnostics: sink.0,
    }
}

/// Parses numbered or bulleted object names, deduplicated by normalized
/// form in first-occurrence order.
pub fn parse_object_list(raw: &str) -> ObjectListParse {
    let mut sink = Sink::default();
    let mut seen = BTreeSet::new();
    let mut objects = Vec::new();
    for (n, line) in numbered_lines(raw) {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let item = match split_ordinal(trimmed).map(|(_, r)| r).or_else(|| split_bullet(trimmed)) {
            Some(item) => item,
            None => {
                sink.push(
                    Severity::Warning,
                    n,
                    ParseRule::IgnoredLine,
                    "not a numbered or bulleted item",
                );
                continue;
            }
        };
        let mut item = strip_wrapping(item);
        for sep in [" - ", " – ", ": ", " (", " — "] {
            if let Some(pos) = item.find(sep) {
                sink.push(
                    Severity::Info,
                    n,
                    ParseRule::TrimmedDescription,
                    "description after the name dropped",
                );
                item = strip_wrapping(&item[..pos]);
            }
        }
        let item = strip_wrapping(item.trim_end_matches(['.', ',', ';']));
        let Ok(name) = ObjectName::new(item) else {
            sink.push(Severity::Warning, n, ParseRule::IgnoredLine, "item has no name");
            continue;
        };
        if seen.insert(name.normalized().to_string()) {
            objects.push(name);
        } else {
            sink.push(
                Severity::Warning,
                n,
                ParseRule::DuplicateObject,
                format!("duplicate object {:?} dropped", name.raw()),
            );
        }
    }
    if objects.is_empty() {
        sink.push(Severity::Error, 0, ParseRule::EmptyOutput, "no objects found");
    }
    ObjectListParse {
        objects,
        diagnostics: sink.0,
    }
}

/// `Step N.` prefix, or a bare `N.` ordinal.
fn split_step_prefix(s: &str) -> Option<(u32, &str)> {
    if starts_with_ci(s, "step") {
        let rest = s[4..].trim_start();
        let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
        if digits == 0 {
            return None;
        }
        let index = rest[..digits].parse::<u32>().unwrap_or(u32::MAX);
        let rest = rest[digits..].trim_start_matches(['.', ':', ')']).trim_start();
        return Some((index, rest));
    }
    split_ordinal(s)
}

/// Byte offset of the annotation's opening `(`, the last one whose content
/// begins with `ACTION`.
fn find_annotation(s: &str) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut found = None;
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'(' {
            let rest = s[i + 1..].trim_start();
            if starts_with_ci(rest, "action") {
                found = Some(i);
            }
        }
    }
    found
}

enum Annotation {
    Parsed { action: String, targets: Vec<String> },
    Malformed(&'static str),
    MultiWord(String),
    NoTargets,
}

/// Parses `ACTION: X | TARGET: a, b` or `ACTION : X, TARGET: a, b`.
fn parse_annotation(inner: &str) -> Annotation {
    let rest = inner.trim_start();
    let rest = rest[6.min(rest.len())..].trim_start();
    let rest = rest.strip_prefix(':').unwrap_or(rest).trim_start();
    let Some(tpos) = find_ci(rest, "target") else {
        return Annotation::Malformed("TARGET field missing");
    };
    let action = rest[..tpos].trim_end().trim_end_matches(['|', ',', ';', '/']).trim();
    let action = strip_wrapping(action);
    let mut after = &rest[tpos + 6..];
    if starts_with_ci(after, "s") {
        after = &after[1..];
    }
    let after = after.trim_start();
    let after = after.strip_prefix(':').unwrap_or(after);
    if action.is_empty() {
        return Annotation::Malformed("ACTION value is empty");
    }
    if action.split_whitespace().nth(1).is_some() {
        return Annotation::MultiWord(action.to_string());
    }
    let targets: Vec<String> = split_top_level(after)
        .into_iter()
        .map(strip_wrapping)
        .filter(|t| !t.is_empty())
        .map(ToString::to_string)
        .collect();
    if targets.is_empty() {
        return Annotation::NoTargets;
    }
    Annotation::Parsed {
        action: action.to_string(),
        targets,
    }
}

fn strip_header<'a>(s: &'a str, header: &str) -> Option<&'a str> {
    if !starts_with_ci(s, header) {
        return None;
    }
    let rest = &s[header.len()..];
    let rest = rest.strip_prefix('s').unwrap_or(rest).trim_start();
    let rest = rest.strip_prefix(['=', ':'])?;
    Some(rest.trim_start())
}

/// Parses an `Action Steps` block and, when asked, a `Required Objects`
/// line. Steps are renumbered from 1 in emission order.
pub fn parse_steps_block(raw: &str, expect_required_objects: bool) -> ParseOutcome<ParsedStepsBlock> {
    let mut sink = Sink::default();
    let mut steps: Vec<ActionStep> = Vec::new();
    let mut required: Option<(usize, Vec<ObjectName>)> = None;
    let mut collecting_required = false;
    let mut last_source_index: Option<u32> = None;
    let mut any_content = false;

    for (n, line) in numbered_lines(raw) {
        let mut text = line.trim();
        if text.is_empty() {
            continue;
        }
        any_content = true;
        if let Some(rest) = strip_header(text, "action step") {
            collecting_required = false;
            if rest.is_empty() {
                continue;
            }
            text = rest;
        }
        if let Some(rest) = strip_header(text, "required object") {
            let names = dedup_names(parse_name_list(rest), n, &mut sink);
            collecting_required = names.is_empty();
            required = Some((n, names));
            continue;
        }
        let prefix = split_step_prefix(text);
        let annotation_at = find_annotation(text);
        if collecting_required && annotation_at.is_none() {
            let item = prefix.map(|(_, r)| r).or_else(|| split_bullet(text)).unwrap_or(text);
            let names = parse_name_list(item);
            if let Some((_, list)) = required.as_mut() {
                list.extend(names);
            }
            continue;
        }
        let (source_index, body) = match prefix {
            Some((index, body)) => (Some(index), body),
            None if annotation_at.is_some() => {
                sink.push(
                    Severity::Warning,
                    n,
                    ParseRule::MissingStepNumber,
                    "annotated line without a step number",
                );
                (None, text)
            }
            None => {
                sink.push(Severity::Info, n, ParseRule::IgnoredLine, "not a step line");
                continue;
            }
        };
        if let Some(index) = source_index {
            let expected = last_source_index.map_or(1, |i| i.saturating_add(1));
            if index != expected {
                sink.push(
                    Severity::Error,
                    n,
                    ParseRule::NonContiguousIndices,
                    format!("expected step {expected}, found step {index}"),
                );
            }
            last_source_index = Some(index);
        } else {
            last_source_index = Some(last_source_index.map_or(1, |i| i.saturating_add(1)));
        }
        let Some(open) = find_annotation(body) else {
            sink.push(
                Severity::Error,
                n,
                ParseRule::MissingAnnotation,
                "step has no (ACTION ..., TARGET ...) group",
            );
            continue;
        };
        let description = body[..open].trim();
        let mut inner = &body[open + 1..];
        match inner.rfind(')') {
            Some(close) => inner = &inner[..close],
            None => sink.push(
                Severity::Warning,
                n,
                ParseRule::UnclosedGroup,
                "annotation group is never closed",
            ),
        }
        if description.is_empty() {
            sink.push(Severity::Error, n, ParseRule::EmptyStepText, "step has no description");
            continue;
        }
        match parse_annotation(inner) {
            Annotation::Parsed { action, targets } => steps.push(ActionStep {
                index: steps.len() as u32 + 1,
                text: description.to_string(),
                action,
                targets,
            }),
            Annotation::Malformed(why) => {
                sink.push(Severity::Error, n, ParseRule::MalformedAnnotation, why);
            }
            Annotation::MultiWord(action) => sink.push(
                Severity::Error,
                n,
                ParseRule::MultiWordAction,
                format!("ACTION {action:?} is not a single verb"),
            ),
            Annotation::NoTargets => {
                sink.push(Severity::Error, n, ParseRule::EmptyTargets, "TARGET list is empty");
            }
        }
    }

    if !any_content {
        sink.push(Severity::Error, 0, ParseRule::EmptyOutput, "completion is empty");
    }
    let required_objects = match required {
        Some((line, names)) if names.is_empty() => {
            if expect_required_objects {
                sink.push(
                    Severity::Error,
                    line,
                    ParseRule::MissingRequiredObjects,
                    "Required Objects list is empty",
                );
            }
            None
        }
        Some((_, names)) => Some(names),
        None => {
            if expect_required_objects {
                sink.push(
                    Severity::Error,
                    0,
                    ParseRule::MissingRequiredObjects,
                    "no Required Objects line",
                );
            }
            None
        }
    };
    if steps.is_empty() {
        sink.push(Severity::Error, 0, ParseRule::NoSteps, "no step could be parsed");
        return ParseOutcome {
            value: None,
            diagnostics: sink.0,
            recovered: false,
        };
    }
    let recovered = has_errors(&sink.0);
    ParseOutcome {
        value: Some(ParsedStepsBlock {
            steps,
            required_objects,
        }),
        diagnostics: sink.0,
        recovered,
    }
}

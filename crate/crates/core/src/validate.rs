//! Domain action constraints over parsed plans.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{normalize_text, DatasetRecord, ObjectName};

/// Verbs seeded into the kitchen whitelist beyond pick, place and move.
pub const DEFAULT_UTILIZE_VERBS: &[&str] = &[
    "beat", "boil", "chop", "clean", "close", "cook", "crack", "cut", "dice", "dry", "fill", "flip", "fry", "grate",
    "heat", "mix", "open", "peel", "pour", "press", "rinse", "scoop", "season", "serve", "slice", "spread", "squeeze",
    "stir", "toast", "turn", "wash", "whisk", "wipe",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternation {
    /// Plan must read `(Pick, Place)*` over its pick/place steps and end
    /// with nothing held.
    PickPlaceStrict,
    /// Only two directly adjacent Pick steps are flagged; other verbs may
    /// sit between a Pick and its Place.
    NoAdjacentPick,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosureLevel {
    Off,
    Lenient,
    Strict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainRules {
    /// Case-folded verbs; empty means any verb is allowed.
    pub allowed_actions: BTreeSet<String>,
    pub alternation: Alternation,
    pub gripper_capacity: u32,
    pub closure_level: ClosureLevel,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RulesError {
    #[error("pick_place_strict alternation requires pick and place to be allowed")]
    StrictWithoutPickPlace,
    #[error("gripper capacity must be at least 1")]
    ZeroCapacity,
}

impl DomainRules {
    pub fn tabletop() -> Self {
        Self {
            allowed_actions: ["pick", "place"].into_iter().map(String::from).collect(),
            alternation: Alternation::PickPlaceStrict,
            gripper_capacity: 1,
            closure_level: ClosureLevel::Lenient,
        }
    }

    pub fn kitchen() -> Self {
        Self::kitchen_with(DEFAULT_UTILIZE_VERBS)
    }

    /// Kitchen preset: pick, place and move plus the given utilize verbs.
    /// Holds up to two objects, as the kitchen samples pick a tool while
    /// still holding an ingredient.
    pub fn kitchen_with<S: AsRef<str>>(utilize: &[S]) -> Self {
        let mut allowed: BTreeSet<String> = ["pick", "place", "move"].into_iter().map(String::from).collect();
        allowed.extend(utilize.iter().map(|v| normalize_text(v.as_ref())));
        Self {
            allowed_actions: allowed,
            alternation: Alternation::NoAdjacentPick,
            gripper_capacity: 2,
            closure_level: ClosureLevel::Lenient,
        }
    }

    pub fn check(&self) -> Result<(), RulesError> {
        if self.gripper_capacity == 0 {
            return Err(RulesError::ZeroCapacity);
        }
        if self.alternation == Alternation::PickPlaceStrict
            && !self.allowed_actions.is_empty()
            && !(self.allowed_actions.contains("pick") && self.allowed_actions.contains("place"))
        {
            return Err(RulesError::StrictWithoutPickPlace);
        }
        Ok(())
    }

    pub fn allows(&self, action: &str) -> bool {
        self.allowed_actions.is_empty() || self.allowed_actions.contains(&normalize_text(action))
    }
}

impl Default for DomainRules {
    fn default() -> Self {
        Self::tabletop()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PlanRule {
    DisallowedAction,
    ConsecutivePick,
    OrphanPlace,
    DanglingPick,
    CapacityExceeded,
    ClosureMiss,
}

impl PlanRule {
    pub fn as_str(self) -> &'static str {
        match self {
            PlanRule::DisallowedAction => "DisallowedAction",
            PlanRule::ConsecutivePick => "ConsecutivePick",
            PlanRule::OrphanPlace => "OrphanPlace",
            PlanRule::DanglingPick => "DanglingPick",
            PlanRule::CapacityExceeded => "CapacityExceeded",
            PlanRule::ClosureMiss => "ClosureMiss",
        }
    }
}

impl fmt::Display for PlanRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanViolation {
    pub step: u32,
    pub rule: PlanRule,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub record_id: String,
    pub violations: Vec<PlanViolation>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn has(&self, rule: PlanRule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    pub fn first(&self, rule: PlanRule) -> Option<&PlanViolation> {
        self.violations.iter().find(|v| v.rule == rule)
    }
}

const MULTIWORD_PREPOSITIONS: &[&str] = &["on top of ", "in front of ", "next to ", "inside of ", "out of "];
const PREPOSITIONS: &[&str] = &[
    "on ", "in ", "into ", "onto ", "to ", "at ", "from ", "under ", "inside ", "over ", "near ", "beside ", "toward ",
    "towards ", "with ", "above ", "below ", "beneath ",
];
const ARTICLES: &[&str] = &["the ", "a ", "an ", "some "];
const MODIFIERS: &[&str] = &[
    "sliced ",
    "chopped ",
    "diced ",
    "washed ",
    "cut ",
    "cracked ",
    "peeled ",
    "cooked ",
    "boiled ",
    "beaten ",
    "melted ",
    "grated ",
    "minced ",
    "mashed ",
    "fried ",
    "toasted ",
    "rinsed ",
    "cleaned ",
    "dried ",
    "filled ",
    "heated ",
    "warmed ",
    "cooled ",
    "frozen ",
    "opened ",
    "poured ",
    "mixed ",
    "stirred ",
    "whisked ",
    "scrambled ",
    "baked ",
    "roasted ",
    "steamed ",
    "shredded ",
    "crushed ",
    "squeezed ",
    "brewed ",
    "folded ",
    "rolled ",
    "seasoned ",
    "halved ",
    "quartered ",
    "used ",
    "empty ",
    "clean ",
    "dirty ",
];

fn strip_one_prefix(s: &str) -> Option<&str> {
    MULTIWORD_PREPOSITIONS
        .iter()
        .chain(PREPOSITIONS)
        .chain(ARTICLES)
        .chain(MODIFIERS)
        .find_map(|p| s.strip_prefix(p))
        .map(str::trim_start)
        .filter(|rest| !rest.is_empty())
}

/// Resolves a TARGET phrase to one of `objects`.
///
/// `Strict` requires an exact normalized match. `Lenient` additionally
/// retries after peeling leading prepositions (`on the`), articles and
/// known state modifiers (`sliced`), one word group at a time.
pub fn resolve_target(phrase: &str, objects: &[ObjectName], level: ClosureLevel) -> Option<ObjectName> {
    let lookup = |key: &str| objects.iter().find(|o| o.normalized() == key).cloned();
    let key = normalize_text(phrase);
    match level {
        ClosureLevel::Off => None,
        ClosureLevel::Strict => lookup(&key),
        ClosureLevel::Lenient => {
            let mut current = key.as_str();
            loop {
                if let Some(found) = lookup(current) {
                    return Some(found);
                }
                current = strip_one_prefix(current)?;
            }
        }
    }
}

/// The table surface is always present even when not listed.
pub fn is_table_surface(phrase: &str) -> bool {
    let key = normalize_text(phrase);
    let mut current = key.as_str();
    loop {
        if current == "table" || current == "tabletop" || current == "table surface" {
            return true;
        }
        match strip_one_prefix(current) {
            Some(next) => current = next,
            None => return false,
        }
    }
}

pub fn validate_plan(record: &DatasetRecord, rules: &DomainRules) -> ValidationReport {
    let mut violations = Vec::new();
    let mut push = |step: u32, rule: PlanRule, message: String| {
        violations.push(PlanViolation { step, rule, message });
    };

    let mut held: u32 = 0;
    let mut previous_action: Option<String> = None;
    let mut last_unplaced_pick: Option<u32> = None;

    for step in &record.steps {
        let action = step.action_key();
        if !rules.allows(&action) {
            push(
                step.index,
                PlanRule::DisallowedAction,
                format!("action {:?} is not allowed", step.action),
            );
        }
        let is_pick = action == "pick";
        let is_place = action == "place";

        match rules.alternation {
            Alternation::PickPlaceStrict => {
                if is_pick {
                    if last_unplaced_pick.is_some() {
                        push(
                            step.index,
                            PlanRule::ConsecutivePick,
                            "pick while a picked object is unplaced".into(),
                        );
                    }
                    last_unplaced_pick = Some(step.index);
                } else if is_place {
                    if held == 0 {
                        push(step.index, PlanRule::OrphanPlace, "place with nothing picked".into());
                    }
                    last_unplaced_pick = None;
                }
            }
            Alternation::NoAdjacentPick => {
                if is_pick && previous_action.as_deref() == Some("pick") {
                    push(step.index, PlanRule::ConsecutivePick, "two adjacent pick steps".into());
                }
            }
            Alternation::None => {}
        }

        if is_pick {
            held += 1;
            if held > rules.gripper_capacity {
                push(
                    step.index,
                    PlanRule::CapacityExceeded,
                    format!("holding {held} objects, capacity {}", rules.gripper_capacity),
                );
            }
        } else if is_place {
            held = held.saturating_sub(1);
        }

        if rules.closure_level != ClosureLevel::Off {
            for target in &step.targets {
                if resolve_target(target, &record.objects, rules.closure_level).is_none() && !is_table_surface(target) {
                    push(
                        step.index,
                        PlanRule::ClosureMiss,
                        format!("target {target:?} matches no listed object"),
                    );
                }
            }
        }
        previous_action = Some(action);
    }

    if rules.alternation == Alternation::PickPlaceStrict {
        if let Some(index) = last_unplaced_pick {
            push(
                index,
                PlanRule::DanglingPick,
                "plan ends holding a picked object".into(),
            );
        }
    }

    ValidationReport {
        record_id: record.id.clone(),
        passed: violations.is_empty(),
        violations,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub total: usize,
    pub passed: usize,
    /// `None` for an empty dataset.
    pub pass_rate: Option<f64>,
    pub rule_counts: BTreeMap<PlanRule, usize>,
}

/// Aggregates reports; each rule is counted once per failing record.
pub fn summarize<'a, I>(reports: I) -> DatasetSummary
where
    I: IntoIterator<Item = &'a ValidationReport>,
{
    let mut total = 0;
    let mut passed = 0;
    let mut rule_counts = BTreeMap::new();
    for report in reports {
        total += 1;
        if report.passed {
            passed += 1;
        }
        let rules: BTreeSet<PlanRule> = report.violations.iter().map(|v| v.rule).collect();
        for rule in rules {
            *rule_counts.entry(rule).or_insert(0) += 1;
        }
    }
    DatasetSummary {
        total,
        passed,
        pass_rate: (total > 0).then(|| passed as f64 / total as f64),
        rule_counts,
    }
}

impl DatasetSummary {
    pub fn meets(&self, min_pass: f64) -> bool {
        self.pass_rate.is_some_and(|r| r >= min_pass)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{object_names, ActionStep, Domain, Provenance, Timestamp};
    use alloc::vec;

    fn record(objects: &[&str], steps: Vec<ActionStep>) -> DatasetRecord {
        DatasetRecord {
            id: "r".into(),
            domain: Domain::Tabletop,
            objects: object_names(objects),
            command: "c".into(),
            steps,
            required_objects: None,
            provenance: Provenance {
                model_id: "m".into(),
                template_id: "t".into(),
                template_version: "1".into(),
                request_fingerprint: "f".into(),
                created_at: Timestamp::parse("2024-01-01T00:00:00Z").unwrap(),
            },
            extras: BTreeMap::new(),
        }
    }

    fn semicircle() -> DatasetRecord {
        record(
            &[
                "Yellow semicircle block",
                "Red circle block",
                "Red semicircle block",
                "Yellow bowl",
                "Red bowl",
            ],
            vec![
                ActionStep::new(
                    1,
                    "PICK up the red semicircle block.",
                    "Pick",
                    &["Red semicircle block"],
                ),
                ActionStep::new(
                    2,
                    "PLACE the red semicircle block in the red bowl.",
                    "Place",
                    &["Red bowl"],
                ),
                ActionStep::new(
                    3,
                    "PICK up the yellow semicircle block.",
                    "Pick",
                    &["Yellow semicircle block"],
                ),
                ActionStep::new(
                    4,
                    "PLACE the yellow semicircle block in the yellow bowl.",
                    "Place",
                    &["Yellow bowl"],
                ),
            ],
        )
    }

    fn lettuce() -> DatasetRecord {
        record(
            &["Cucumber", "Lettuce", "Tray", "Sink", "Knife", "Cup"],
            vec![
                ActionStep::new(1, "PICK up the lettuce.", "Pick", &["Lettuce"]),
                ActionStep::new(2, "MOVE to the sink.", "Move", &["Sink"]),
                ActionStep::new(3, "WASH the lettuce under running water.", "Wash", &["Lettuce"]),
                ActionStep::new(4, "PICK up the knife.", "Pick", &["Knife"]),
                ActionStep::new(5, "SLICE the lettuce using the knife.", "Slice", &["Knife", "Lettuce"]),
                ActionStep::new(
                    6,
                    "PLACE the sliced lettuce on the tray.",
                    "Place",
                    &["Sliced lettuce", "On the tray"],
                ),
            ],
        )
    }

    #[test]
    fn semicircle_passes_tabletop() {
        let report = validate_plan(&semicircle(), &DomainRules::tabletop());
        assert!(report.passed, "{:?}", report.violations);
    }

    #[test]
    fn consecutive_pick_flagged_at_second_step() {
        let r = record(
            &["Egg", "Whisk"],
            vec![
                ActionStep::new(1, "Pick egg.", "Pick", &["Egg"]),
                ActionStep::new(2, "Pick whisk.", "Pick", &["Whisk"]),
            ],
        );
        let report = validate_plan(&r, &DomainRules::tabletop());
        assert_eq!(report.first(PlanRule::ConsecutivePick).unwrap().step, 2);
        assert!(report.has(PlanRule::CapacityExceeded));
        assert!(report.has(PlanRule::DanglingPick));
    }

    #[test]
    fn swapped_pair_is_orphan_place() {
        let mut r = semicircle();
        r.steps.swap(0, 1);
        r.steps[0].index = 1;
        r.steps[1].index = 2;
        let report = validate_plan(&r, &DomainRules::tabletop());
        assert_eq!(report.first(PlanRule::OrphanPlace).unwrap().step, 1);
    }

    #[test]
    fn lettuce_passes_kitchen() {
        let rules = DomainRules::kitchen_with(&["wash", "slice"]);
        let report = validate_plan(&lettuce(), &rules);
        assert!(report.passed, "{:?}", report.violations);
        assert!(validate_plan(&lettuce(), &DomainRules::kitchen()).passed);
    }

    #[test]
    fn kitchen_verbs_fail_tabletop() {
        let report = validate_plan(&lettuce(), &DomainRules::tabletop());
        assert_eq!(
            report
                .violations
                .iter()
                .filter(|v| v.rule == PlanRule::DisallowedAction)
                .count(),
            3
        );
    }

    #[test]
    fn open_vocabulary_allows_anything() {
        let rules = DomainRules {
            allowed_actions: BTreeSet::new(),
            alternation: Alternation::None,
            gripper_capacity: 5,
            closure_level: ClosureLevel::Off,
        };
        assert!(validate_plan(&lettuce(), &rules).passed);
    }

    #[test]
    fn closure_miss() {
        let mut r = semicircle();
        r.steps[1].targets = vec!["Green bowl".into()];
        let report = validate_plan(&r, &DomainRules::tabletop());
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].rule, PlanRule::ClosureMiss);
        r.steps[1].targets = vec!["On the table".into()];
        assert!(validate_plan(&r, &DomainRules::tabletop()).passed);
    }

    #[test]
    fn resolve_target_levels() {
        let objs = object_names(["Lettuce", "Tray"]);
        assert_eq!(
            resolve_target("Sliced lettuce", &objs, ClosureLevel::Lenient),
            Some(objs[0].clone())
        );
        assert_eq!(
            resolve_target("On the tray", &objs, ClosureLevel::Lenient),
            Some(objs[1].clone())
        );
        assert_eq!(resolve_target("On the tray", &objs, ClosureLevel::Strict), None);
        assert_eq!(
            resolve_target("Banana", &object_names(["Lettuce"]), ClosureLevel::Strict),
            None
        );
        assert_eq!(
            resolve_target("tray", &objs, ClosureLevel::Strict),
            Some(objs[1].clone())
        );
        assert_eq!(resolve_target("on", &objs, ClosureLevel::Lenient), None);
        let bowls = object_names(["Red bowl", "Bowl"]);
        assert_eq!(
            resolve_target("red bowl", &bowls, ClosureLevel::Lenient),
            Some(bowls[0].clone())
        );
    }

    #[test]
    fn rules_check() {
        assert!(DomainRules::tabletop().check().is_ok());
        assert!(DomainRules::kitchen().check().is_ok());
        let mut bad = DomainRules::tabletop();
        bad.allowed_actions.remove("place");
        assert_eq!(bad.check(), Err(RulesError::StrictWithoutPickPlace));
        bad.gripper_capacity = 0;
        assert_eq!(bad.check(), Err(RulesError::ZeroCapacity));
    }

    #[test]
    fn summary_counts_and_empty_marker() {
        let pass = validate_plan(&semicircle(), &DomainRules::tabletop());
        let mut r = semicircle();
        r.steps[2].action = "Push".into();
        let fail = validate_plan(&r, &DomainRules::tabletop());
        let mut reports = vec![pass.clone(); 9];
        reports.push(fail);
        let s = summarize(&reports);
        assert_eq!((s.total, s.passed), (10, 9));
        assert_eq!(s.pass_rate, Some(0.9));
        assert_eq!(s.rule_counts.get(&PlanRule::DisallowedAction), Some(&1));
        assert!(s.meets(0.9) && !s.meets(0.95));

        let all = summarize(&vec![pass; 10]);
        assert_eq!(all.pass_rate, Some(1.0));

        let empty = summarize(core::iter::empty());
        assert_eq!(empty.pass_rate, None);
        assert!(!empty.meets(0.0));
    }
}

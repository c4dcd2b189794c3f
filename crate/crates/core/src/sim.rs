//! Symbolic pick-and-place tabletop world with goal predicates.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{normalize_text, ActionStep, DatasetRecord, ObjectName};
use crate::validate::{is_table_surface, resolve_target, ClosureLevel};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("duplicate object {0:?}")]
    DuplicateObject(String),
    #[error("container {0:?} is not a spawned object")]
    UnknownContainer(String),
    #[error("gripper already holds {0:?}")]
    GripperFull(String),
    #[error("gripper is empty")]
    GripperEmpty,
    #[error("no object matches {0:?}")]
    UnknownObject(String),
    #[error("unsupported action {0:?}")]
    UnsupportedAction(String),
    #[error("cannot place {0:?} inside itself")]
    SelfContainment(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    OnTable,
    InContainer(ObjectName),
    InGripper,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::OnTable => f.write_str("on_table"),
            Location::InContainer(c) => write!(f, "in_container({c})"),
            Location::InGripper => f.write_str("in_gripper"),
        }
    }
}

/// Object locations in spawn order. The gripper is whichever object is
/// `InGripper`; transitions keep that to at most one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    pub objects: Vec<(ObjectName, Location)>,
    pub containers: BTreeSet<String>,
}

const CONTAINER_NOUNS: &[&str] = &[
    "bowl",
    "tray",
    "plate",
    "box",
    "basket",
    "bin",
    "container",
    "pot",
    "pan",
    "dish",
    "jar",
    "drawer",
    "crate",
    "bucket",
    "cup",
    "mug",
    "sink",
];

/// Objects whose last word is a receptacle noun such as bowl or tray.
pub fn default_containers(objects: &[ObjectName]) -> Vec<ObjectName> {
    objects
        .iter()
        .filter(|o| {
            let last = o.normalized().rsplit(' ').next().unwrap_or("");
            let singular = last
                .strip_suffix("es")
                .filter(|s| s.ends_with('x'))
                .or_else(|| last.strip_suffix('s'));
            CONTAINER_NOUNS.contains(&last) || singular.is_some_and(|s| CONTAINER_NOUNS.contains(&s))
        })
        .cloned()
        .collect()
}

/// Places every object on the table with an empty gripper. The seed is
/// accepted for future spatial layouts and has no effect on symbolic state.
pub fn spawn(objects: &[ObjectName], containers: &[ObjectName], _seed: u64) -> Result<WorldState, SimError> {
    let mut seen = BTreeSet::new();
    for o in objects {
        if !seen.insert(o.normalized().to_string()) {
            return Err(SimError::DuplicateObject(o.raw().to_string()));
        }
    }
    let mut container_keys = BTreeSet::new();
    for c in containers {
        if !seen.contains(c.normalized()) {
            return Err(SimError::UnknownContainer(c.raw().to_string()));
        }
        container_keys.insert(c.normalized().to_string());
    }
    Ok(WorldState {
        objects: objects.iter().map(|o| (o.clone(), Location::OnTable)).collect(),
        containers: container_keys,
    })
}

/// What a single step did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    pub step: u32,
    pub action: String,
    pub object: Option<String>,
    pub from: Option<Location>,
    pub to: Option<Location>,
    pub warning: Option<String>,
    pub error: Option<String>,
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {}\t{}", self.step, self.action)?;
        if let Some(o) = &self.object {
            write!(f, "\t{o}")?;
        }
        if let (Some(from), Some(to)) = (&self.from, &self.to) {
            write!(f, "\t{from} -> {to}")?;
        }
        if let Some(w) = &self.warning {
            write!(f, "\twarning: {w}")?;
        }
        if let Some(e) = &self.error {
            write!(f, "\terror: {e}")?;
        }
        Ok(())
    }
}

impl WorldState {
    pub fn names(&self) -> Vec<ObjectName> {
        self.objects.iter().map(|(o, _)| o.clone()).collect()
    }

    pub fn location_of(&self, object: &ObjectName) -> Option<&Location> {
        self.objects.iter().find(|(o, _)| o.same_as(object)).map(|(_, l)| l)
    }

    pub fn holding(&self) -> Option<&ObjectName> {
        self.objects
            .iter()
            .find(|(_, l)| *l == Location::InGripper)
            .map(|(o, _)| o)
    }

    pub fn is_container(&self, object: &ObjectName) -> bool {
        self.containers.contains(object.normalized())
    }

    fn resolve(&self, phrase: &str) -> Option<ObjectName> {
        resolve_target(phrase, &self.names(), ClosureLevel::Lenient)
    }

    fn set(&mut self, object: &ObjectName, location: Location) {
        if let Some(slot) = self.objects.iter_mut().find(|(o, _)| o.same_as(object)) {
            slot.1 = location;
        }
    }

    /// True when `inner` sits, directly or transitively, inside `outer`.
    fn is_inside(&self, inner: &ObjectName, outer: &ObjectName) -> bool {
        let mut current = inner.clone();
        for _ in 0..self.objects.len() {
            match self.location_of(&current) {
                Some(Location::InContainer(c)) if c.same_as(outer) => return true,
                Some(Location::InContainer(c)) => current = c.clone(),
                _ => return false,
            }
        }
        false
    }

    /// Applies one step to a copy of the state. Pick takes the first target
    /// that names an object; Place uses the last target. Placing onto an
    /// object that is not a container lands on the table with a warning.
    pub fn step(&self, action: &ActionStep) -> Result<(WorldState, TraceEntry), SimError> {
        let mut next = self.clone();
        let mut entry = TraceEntry {
            step: action.index,
            action: action.action.clone(),
            object: None,
            from: None,
            to: None,
            warning: None,
            error: None,
        };
        match action.action_key().as_str() {
            "pick" => {
                if let Some(held) = self.holding() {
                    return Err(SimError::GripperFull(held.raw().to_string()));
                }
                let object = action
                    .targets
                    .iter()
                    .find_map(|t| self.resolve(t))
                    .ok_or_else(|| SimError::UnknownObject(action.targets.first().cloned().unwrap_or_default()))?;
                entry.from = self.location_of(&object).cloned();
                entry.to = Some(Location::InGripper);
                entry.object = Some(object.raw().to_string());
                next.set(&object, Location::InGripper);
            }
            "place" => {
                let held = self.holding().ok_or(SimError::GripperEmpty)?.clone();
                let target = action.targets.last().map(String::as_str).unwrap_or("");
                let location = if is_table_surface(target) {
                    Location::OnTable
                } else {
                    let dest = self
                        .resolve(target)
                        .ok_or_else(|| SimError::UnknownObject(target.to_string()))?;
                    if dest.same_as(&held) || self.is_inside(&dest, &held) {
                        return Err(SimError::SelfContainment(held.raw().to_string()));
                    }
                    if self.is_container(&dest) {
                        Location::InContainer(dest)
                    } else {
                        entry.warning = Some(format!("{} is not a container; placed on the table", dest.raw()));
                        Location::OnTable
                    }
                };
                entry.from = Some(Location::InGripper);
                entry.to = Some(location.clone());
                entry.object = Some(held.raw().to_string());
                next.set(&held, location);
            }
            _ => return Err(SimError::UnsupportedAction(action.action.clone())),
        }
        Ok((next, entry))
    }
}

/// Where a goal wants an object to end up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalAssertion {
    pub object: String,
    /// A container name, or `table`.
    #[serde(rename = "in")]
    pub location: String,
}

/// Every assertion must hold.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GoalSpec {
    pub assertions: Vec<GoalAssertion>,
}

impl GoalSpec {
    pub fn new(pairs: &[(&str, &str)]) -> Self {
        GoalSpec {
            assertions: pairs
                .iter()
                .map(|(o, l)| GoalAssertion {
                    object: o.to_string(),
                    location: l.to_string(),
                })
                .collect(),
        }
    }

    /// Reads the `goal` key of a test-set record, if present.
    pub fn from_record(record: &DatasetRecord) -> Option<Result<GoalSpec, serde_json::Error>> {
        record
            .extras
            .get("goal")
            .map(|v| serde_json::from_value::<GoalSpec>(v.clone()))
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).unwrap_or(Value::Null)
    }

    /// Assertions naming objects absent from `state`.
    pub fn unknown_objects(&self, state: &WorldState) -> Vec<String> {
        self.assertions
            .iter()
            .filter(|a| {
                let known = |name: &str| {
                    state
                        .objects
                        .iter()
                        .any(|(o, _)| o.normalized() == normalize_text(name))
                };
                !known(&a.object) || !(is_table_surface(&a.location) || known(&a.location))
            })
            .map(|a| a.object.clone())
            .collect()
    }

    pub fn holds(&self, state: &WorldState) -> bool {
        self.assertions.iter().all(|a| {
            let Some((_, loc)) = state
                .objects
                .iter()
                .find(|(o, _)| o.normalized() == normalize_text(&a.object))
            else {
                return false;
            };
            if is_table_surface(&a.location) {
                *loc == Location::OnTable
            } else {
                matches!(loc, Location::InContainer(c) if c.normalized() == normalize_text(&a.location))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlanRun {
    pub final_state: WorldState,
    pub success: bool,
    /// Step index of the failed transition, if any.
    pub halted_at: Option<u32>,
    pub trace: Vec<TraceEntry>,
}

impl PlanRun {
    pub fn trace_text(&self) -> String {
        let mut out = String::new();
        for e in &self.trace {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }
}

/// Executes steps in order, stopping at the first failed transition.
pub fn run_plan(state: &WorldState, steps: &[ActionStep], goal: &GoalSpec) -> PlanRun {
    let mut current = state.clone();
    let mut trace = Vec::with_capacity(steps.len());
    for step in steps {
        match current.step(step) {
            Ok((next, entry)) => {
                current = next;
                trace.push(entry);
            }
            Err(e) => {
                trace.push(TraceEntry {
                    step: step.index,
                    action: step.action.clone(),
                    object: None,
                    from: None,
                    to: None,
                    warning: None,
                    error: Some(e.to_string()),
                });
                return PlanRun {
                    final_state: current,
                    success: false,
                    halted_at: Some(step.index),
                    trace,
                };
            }
        }
    }
    PlanRun {
        success: goal.holds(&current),
        final_state: current,
        halted_at: None,
        trace,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExportError {
    #[error("step {0} has no matching pick/place partner")]
    UnpairedStep(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CliportInstruction {
    pub phrase: String,
    pub pick: String,
    pub place: String,
}

/// The phrase template handed to the manipulation model.
pub fn cliport_phrase(pick: &str, place: &str) -> String {
    format!("put the {} in the {}", pick.to_lowercase(), place.to_lowercase())
}

/// Pairs each Pick with the following Place.
pub fn export_cliport(steps: &[ActionStep]) -> Result<Vec<CliportInstruction>, ExportError> {
    let mut out = Vec::new();
    let mut it = steps.iter();
    while let Some(pick) = it.next() {
        if !pick.is_action("pick") {
            return Err(ExportError::UnpairedStep(pick.index));
        }
        let place = it.next().ok_or(ExportError::UnpairedStep(pick.index))?;
        if !place.is_action("place") {
            return Err(ExportError::UnpairedStep(place.index));
        }
        let x = pick.targets.first().map(String::as_str).unwrap_or("");
        let t = place.targets.last().map(String::as_str).unwrap_or("");
        out.push(CliportInstruction {
            phrase: cliport_phrase(x, t),
            pick: x.to_string(),
            place: t.to_string(),
        });
    }
    Ok(out)
}

/// One test case: a scene, a plan and a goal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimCase {
    pub id: String,
    pub objects: Vec<ObjectName>,
    pub containers: Vec<ObjectName>,
    pub steps: Vec<ActionStep>,
    pub goal: GoalSpec,
}

impl SimCase {
    /// Builds a case from a test-set record; containers are inferred from
    /// object names.
    pub fn from_record(record: &DatasetRecord) -> Result<SimCase, String> {
        let goal = match GoalSpec::from_record(record) {
            Some(Ok(g)) => g,
            Some(Err(e)) => return Err(format!("record {}: bad goal: {e}", record.id)),
            None => return Err(format!("record {}: no goal", record.id)),
        };
        Ok(SimCase {
            id: record.id.clone(),
            containers: default_containers(&record.objects),
            objects: record.objects.clone(),
            steps: record.steps.clone(),
            goal,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CaseOutcome {
    pub id: String,
    pub success: bool,
    pub halted_at: Option<u32>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub cases: Vec<CaseOutcome>,
    pub successes: usize,
    /// `None` for an empty test set.
    pub success_rate: Option<f64>,
}

pub fn run_case(case: &SimCase) -> CaseOutcome {
    let state = match spawn(&case.objects, &case.containers, 0) {
        Ok(s) => s,
        Err(e) => {
            return CaseOutcome {
                id: case.id.clone(),
                success: false,
                halted_at: None,
                error: Some(e.to_string()),
            }
        }
    };
    let unknown = case.goal.unknown_objects(&state);
    if !unknown.is_empty() {
        return CaseOutcome {
            id: case.id.clone(),
            success: false,
            halted_at: None,
            error: Some(format!("goal names unknown objects: {}", unknown.join(", "))),
        };
    }
    let run = run_plan(&state, &case.steps, &case.goal);
    CaseOutcome {
        id: case.id.clone(),
        success: run.success,
        halted_at: run.halted_at,
        error: run.trace.last().and_then(|e| e.error.clone()),
    }
}

pub fn evaluate(cases: &[SimCase]) -> Evaluation {
    let outcomes: Vec<CaseOutcome> = cases.iter().map(run_case).collect();
    summarize_outcomes(outcomes)
}

pub fn summarize_outcomes(cases: Vec<CaseOutcome>) -> Evaluation {
    let successes = cases.iter().filter(|c| c.success).count();
    let success_rate = (!cases.is_empty()).then(|| successes as f64 / cases.len() as f64);
    Evaluation {
        cases,
        successes,
        success_rate,
    }
}

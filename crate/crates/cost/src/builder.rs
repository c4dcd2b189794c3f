//! Object pool, command and step generation, dataset splits and run
//! manifests.

use std::collections::{BTreeMap, BTreeSet};

use cost_core::model::{
    normalize_text, validate_record, BuildConfig, ConfigError, DatasetRecord, DedupPolicy, ObjectName, Provenance,
};
use cost_core::parse::{has_errors, parse_command_list, parse_object_list, parse_steps_block, Diagnostic};
use cost_core::prompt::{
    CommandPromptInput, FixedStepsInput, FlexibleStepsInput, PromptError, RenderedPrompt, TemplateSet,
};
use cost_core::validate::{resolve_target, ClosureLevel};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clock::Clock;
use crate::llm::{CompletionRequest, LlmClient, LlmError, DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE};
use crate::profile::{DomainProfile, StepsVariant};
use crate::seed::{sample_indices, stage_rng};

/// Object-list calls made before giving up on reaching the target size.
pub const MAX_OBJECT_CALLS: u32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("prompt: {0}")]
    Prompt(#[from] PromptError),
    #[error("llm: {0}")]
    Llm(#[from] LlmError),
    #[error("object pool is empty")]
    EmptyPool,
    #[error("target size must be at least 1")]
    ZeroTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolSource {
    Seed,
    LlmObjectPrompt,
    NovelFromCommand,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub name: ObjectName,
    pub source: PoolSource,
    /// Call index that produced the entry, when one did.
    pub call: Option<u32>,
}

/// Deduplicated objects in insertion order, with the log that explains
/// each member.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectPool {
    pub members: Vec<ObjectName>,
    pub history: Vec<PoolEntry>,
}

impl ObjectPool {
    pub fn contains(&self, name: &ObjectName) -> bool {
        self.members.iter().any(|m| m.same_as(name))
    }

    /// Adds `name` unless an equal name is present.
    pub fn add(&mut self, name: ObjectName, source: PoolSource, call: Option<u32>) -> bool {
        if self.contains(&name) {
            return false;
        }
        self.members.push(name.clone());
        self.history.push(PoolEntry { name, source, call });
        true
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn count_by_source(&self, source: PoolSource) -> usize {
        self.history.iter().filter(|e| e.source == source).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingCommand {
    pub id: String,
    pub call: u32,
    pub ordinal: u32,
    pub used_objects: Vec<ObjectName>,
    pub instruction: String,
}

/// Everything needed to continue a build after command generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildState {
    pub config: BuildConfig,
    pub pool: ObjectPool,
    pub pending_commands: Vec<PendingCommand>,
    pub calls_done: u32,
    pub duplicates_dropped: u64,
    pub lines_parsed: u64,
    pub diagnostics: u64,
}

impl BuildState {
    pub fn new(config: BuildConfig, pool: ObjectPool) -> Self {
        Self {
            config,
            pool,
            pending_commands: Vec::new(),
            calls_done: 0,
            duplicates_dropped: 0,
            lines_parsed: 0,
            diagnostics: 0,
        }
    }
}

/// A command that produced no record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reject {
    pub id: String,
    pub command: String,
    pub reason: String,
    pub request_fingerprint: Option<String>,
    pub diagnostics: Vec<Diagnostic>,
    pub raw_output: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            model_id: "gpt-3.5-turbo".into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            stop_sequences: Vec::new(),
        }
    }
}

impl ModelSettings {
    pub fn request(&self, prompt: &RenderedPrompt) -> CompletionRequest {
        CompletionRequest {
            model_id: self.model_id.clone(),
            prompt_text: prompt.text.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            stop_sequences: self.stop_sequences.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepsOutput {
    pub records: Vec<DatasetRecord>,
    pub rejects: Vec<Reject>,
}

pub struct Builder<'a> {
    pub client: &'a LlmClient,
    pub templates: &'a TemplateSet,
    pub profile: &'a DomainProfile,
    pub clock: &'a dyn Clock,
    pub model: ModelSettings,
    pub max_in_flight: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct PoolReport {
    pub calls: u32,
    pub shortfall: Option<usize>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Builder<'_> {
    /// Seeds the pool from the profile, then asks for the remaining count
    /// until the target is met, the same request would repeat, or the call
    /// cap is hit.
    pub async fn build_object_pool(&self, target_size: u32) -> Result<(ObjectPool, PoolReport), BuildError> {
        if target_size == 0 {
            return Err(BuildError::ZeroTarget);
        }
        let target = target_size as usize;
        let mut pool = ObjectPool::default();
        for o in self.profile.seed_objects() {
            pool.add(o, PoolSource::Seed, None);
        }
        let mut report = PoolReport::default();
        let mut seen = BTreeSet::new();
        for call in 0..MAX_OBJECT_CALLS {
            if pool.len() >= target {
                break;
            }
            let want = (target - pool.len()) as u32;
            let prompt = self.templates.render_object_list_prompt(&self.profile.domain, want)?;
            let request = self.model.request(&prompt);
            if !seen.insert(request.fingerprint()) {
                break;
            }
            let response = self.client.complete(&request).await?;
            report.calls += 1;
            let parsed = parse_object_list(&response.text);
            report.diagnostics.extend(parsed.diagnostics);
            for o in parsed.objects {
                pool.add(o, PoolSource::LlmObjectPrompt, Some(call));
            }
        }
        if pool.len() < target {
            report.shortfall = Some(target - pool.len());
        }
        Ok((pool, report))
    }

    pub fn command_prompt(
        &self,
        config: &BuildConfig,
        pool: &ObjectPool,
        call: u32,
    ) -> Result<RenderedPrompt, BuildError> {
        let mut rng = stage_rng(config.random_seed, "commands", u64::from(call));
        let picks = sample_indices(&mut rng, pool.len(), config.objects_sample_size as usize);
        let objects: Vec<ObjectName> = picks.into_iter().map(|i| pool.members[i].clone()).collect();
        let example_objects = self.profile.example_objects();
        let input = CommandPromptInput {
            domain: &self.profile.domain,
            count: config.commands_per_call,
            objects: &objects,
            note: &self.profile.command_note,
            example_command: &self.profile.example_command,
            example_objects: &example_objects,
            min_objects: self.profile.min_objects,
        };
        Ok(self.templates.render_command_prompt(&input)?)
    }

    /// Runs the remaining command-generation calls of `state`.
    pub async fn generate_commands(&self, state: &mut BuildState) -> Result<(), BuildError> {
        state.config.validate()?;
        if state.pool.is_empty() {
            return Err(BuildError::EmptyPool);
        }
        let mut seen: BTreeSet<String> = state
            .pending_commands
            .iter()
            .map(|c| normalize_text(&c.instruction))
            .collect();
        for call in state.calls_done..state.config.n_calls {
            let prompt = self.command_prompt(&state.config, &state.pool, call)?;
            let response = self.client.complete(&self.model.request(&prompt)).await?;
            let parsed = parse_command_list(&response.text, &state.pool.members);
            state.diagnostics += parsed.diagnostics.len() as u64;
            if state.config.grow_object_pool {
                for o in parsed.novel_objects {
                    state.pool.add(o, PoolSource::NovelFromCommand, Some(call));
                }
            }
            for line in parsed.lines.into_iter().take(state.config.commands_per_call as usize) {
                state.lines_parsed += 1;
                if state.config.dedup_policy == DedupPolicy::NormalizedExact
                    && !seen.insert(normalize_text(&line.instruction))
                {
                    state.duplicates_dropped += 1;
                    continue;
                }
                let id = format!("{}-{:05}", state.config.domain.as_str(), state.pending_commands.len());
                state.pending_commands.push(PendingCommand {
                    id,
                    call,
                    ordinal: line.ordinal,
                    used_objects: line.used_objects,
                    instruction: line.instruction,
                });
            }
            state.calls_done = call + 1;
        }
        Ok(())
    }

    pub fn steps_prompt(&self, command: &PendingCommand, variant: StepsVariant) -> Result<RenderedPrompt, BuildError> {
        let example = self.profile.steps_example();
        let prompt = match variant {
            StepsVariant::Fixed => self.templates.render_steps_prompt_fixed(&FixedStepsInput {
                command: &command.instruction,
                objects: &command.used_objects,
                robot_info: &self.profile.robot_info,
                note: &self.profile.steps_note,
                example: &example,
            })?,
            StepsVariant::Flexible => self.templates.render_steps_prompt_flexible(&FlexibleStepsInput {
                command: &command.instruction,
                note: &self.profile.steps_note,
                example: &example,
            })?,
        };
        Ok(prompt)
    }

    /// One record or one reject per pending command, in command order.
    pub async fn generate_steps(&self, state: &BuildState, variant: StepsVariant) -> Result<StepsOutput, BuildError> {
        let mut prompts = Vec::with_capacity(state.pending_commands.len());
        for c in &state.pending_commands {
            prompts.push(self.steps_prompt(c, variant)?);
        }
        let requests: Vec<CompletionRequest> = prompts.iter().map(|p| self.model.request(p)).collect();
        let results = self.client.complete_batch(&requests, self.max_in_flight).await;

        let mut records = Vec::new();
        let mut rejects = Vec::new();
        for (i, result) in results {
            let command = &state.pending_commands[i];
            let fingerprint = requests[i].fingerprint();
            let reject = |reason: &str, diagnostics: Vec<Diagnostic>, raw: Option<String>| Reject {
                id: command.id.clone(),
                command: command.instruction.clone(),
                reason: reason.to_string(),
                request_fingerprint: Some(fingerprint.clone()),
                diagnostics,
                raw_output: raw,
            };
            let response = match result {
                Ok(r) => r,
                Err(e) => {
                    rejects.push(reject(&format!("llm: {e}"), Vec::new(), None));
                    continue;
                }
            };
            let outcome = parse_steps_block(&response.text, variant == StepsVariant::Flexible);
            let parsed = match outcome.value {
                Some(v) if !has_errors(&outcome.diagnostics) => v,
                _ => {
                    rejects.push(reject("unparseable steps", outcome.diagnostics, Some(response.text)));
                    continue;
                }
            };
            let required = parsed.required_objects.clone();
            let base = match variant {
                StepsVariant::Fixed => command.used_objects.clone(),
                StepsVariant::Flexible => required.clone().unwrap_or_default(),
            };
            let targets: Vec<&str> = parsed
                .steps
                .iter()
                .flat_map(|s| s.targets.iter().map(String::as_str))
                .collect();
            let mut objects = base;
            objects.extend(self.distractors(&state.config, &state.pool, i as u64, &objects, &targets));
            let record = DatasetRecord {
                id: command.id.clone(),
                domain: state.config.domain.clone(),
                objects,
                command: command.instruction.clone(),
                steps: parsed.steps,
                required_objects: match variant {
                    StepsVariant::Fixed => None,
                    StepsVariant::Flexible => required,
                },
                provenance: Provenance {
                    model_id: self.model.model_id.clone(),
                    template_id: prompts[i].template_id.as_str().to_string(),
                    template_version: prompts[i].version.clone(),
                    request_fingerprint: fingerprint.clone(),
                    created_at: self.clock.timestamp(),
                },
                extras: BTreeMap::new(),
            };
            let violations = validate_record(&record);
            if !violations.is_empty() {
                let message = violations
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("; ");
                rejects.push(reject(
                    &format!("invalid record: {message}"),
                    Vec::new(),
                    Some(response.text),
                ));
                continue;
            }
            records.push(record);
        }
        Ok(StepsOutput { records, rejects })
    }

    /// Pool members outside `present` that no step target names, drawn in
    /// seeded order; the count is uniform in the configured range.
    pub fn distractors(
        &self,
        config: &BuildConfig,
        pool: &ObjectPool,
        command_index: u64,
        present: &[ObjectName],
        targets: &[&str],
    ) -> Vec<ObjectName> {
        let mut rng = stage_rng(config.random_seed, "distractors", command_index);
        let (lo, hi) = config.distractor_count_range;
        let count = rng.random_range(lo..=hi) as usize;
        let candidates: Vec<&ObjectName> = pool
            .members
            .iter()
            .filter(|m| !present.iter().any(|p| p.same_as(m)))
            .filter(|m| {
                let one = std::slice::from_ref(*m);
                targets
                    .iter()
                    .all(|t| resolve_target(t, one, ClosureLevel::Lenient).is_none())
            })
            .collect();
        sample_indices(&mut rng, candidates.len(), count)
            .into_iter()
            .map(|i| candidates[i].clone())
            .collect()
    }

    /// All stages in sequence.
    pub async fn build(
        &self,
        config: &BuildConfig,
        variant: StepsVariant,
        pool_target: u32,
    ) -> Result<BuildRun, BuildError> {
        config.validate()?;
        let (pool, pool_report) = self.build_object_pool(pool_target).await?;
        let mut state = BuildState::new(config.clone(), pool);
        self.generate_commands(&mut state).await?;
        let output = self.generate_steps(&state, variant).await?;
        Ok(BuildRun {
            pool_report,
            state,
            output,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildRun {
    pub pool_report: PoolReport,
    pub state: BuildState,
    pub output: StepsOutput,
}

impl BuildRun {
    pub fn counts(&self) -> BTreeMap<String, u64> {
        let s = &self.state;
        let mut c = BTreeMap::new();
        c.insert("pool_size".into(), s.pool.len() as u64);
        c.insert("pool_seed".into(), s.pool.count_by_source(PoolSource::Seed) as u64);
        c.insert(
            "pool_llm".into(),
            s.pool.count_by_source(PoolSource::LlmObjectPrompt) as u64,
        );
        c.insert(
            "pool_novel".into(),
            s.pool.count_by_source(PoolSource::NovelFromCommand) as u64,
        );
        c.insert("pool_shortfall".into(), self.pool_report.shortfall.unwrap_or(0) as u64);
        c.insert("commands_target".into(), s.config.target_commands());
        c.insert("commands_parsed".into(), s.lines_parsed);
        c.insert("commands_duplicate".into(), s.duplicates_dropped);
        c.insert("commands_sent".into(), s.pending_commands.len() as u64);
        c.insert("records".into(), self.output.records.len() as u64);
        c.insert("rejects".into(), self.output.rejects.len() as u64);
        c
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplitError {
    #[error("ratios must be non-negative and sum to 1, got {0:?}")]
    Ratio((f64, f64, f64)),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub train: Vec<DatasetRecord>,
    pub validation: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
}

/// Seeded split that never puts one normalized command in both test and
/// another split: groups that do not fit the test quota go to train.
pub fn split_dataset(records: &[DatasetRecord], ratios: (f64, f64, f64), seed: u64) -> Result<Split, SplitError> {
    let (tr, va, te) = ratios;
    if tr < 0.0 || va < 0.0 || te < 0.0 || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(SplitError::Ratio(ratios));
    }
    let n = records.len();
    let n_test = (te * n as f64).round() as usize;
    let n_val = ((va * n as f64).round() as usize).min(n - n_test);

    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let key = normalize_text(&r.command);
        let g = groups.entry(key.clone()).or_default();
        if g.is_empty() {
            order.push(key);
        }
        g.push(i);
    }
    order.shuffle(&mut stage_rng(seed, "split", 0));

    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for key in &order {
        let g = &groups[key];
        if test.len() + g.len() <= n_test {
            test.extend(g);
        } else if val.len() + g.len() <= n_val {
            val.extend(g);
        } else {
            train.extend(g);
        }
    }
    let pick = |mut idx: Vec<usize>| {
        idx.sort_unstable();
        idx.into_iter().map(|i| records[i].clone()).collect::<Vec<_>>()
    };
    Ok(Split {
        train: pick(train),
        validation: pick(val),
        test: pick(test),
    })
}

/// One line per CLI run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Value,
    pub cassette_sha256: Option<String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, FileDigest>,
    pub counts: BTreeMap<String, u64>,
    pub started_at: String,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

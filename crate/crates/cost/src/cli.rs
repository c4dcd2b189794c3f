//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure or a missed `--min-pass` /
//! `--min-success` threshold, 2 usage error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use cost_core::complexity::{
    analyze, render_table, segment_and_tokenize, AnalyzeConfig, Corpus, CorpusReport, Denominator, LogBase, SegmentMode,
};
use cost_core::model::{to_canonical_json, BuildConfig, DatasetRecord, DedupPolicy, Domain};
use cost_core::prompt::{PromptTemplate, TemplateSet};
use cost_core::sim::{export_cliport, run_case, run_plan, spawn, summarize_outcomes, CaseOutcome, SimCase};
use cost_core::validate::{summarize, validate_plan, ValidationReport};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::builder::{split_dataset, BuildState, Builder, FileDigest, ModelSettings, ObjectPool, RunManifest};
use crate::clock::{Clock, FixedClock, SystemClock};
use crate::conllu::parse_conllu;
use crate::io::{append_line, file_sha256, read_records, read_text, to_json_lines, write_atomic, write_records};
use crate::llm::{Cassette, CassetteMode, HttpTransport, LlmClient, RetryPolicy, Transport};
use crate::profile::{load_rules, DomainProfile, StepsVariant};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(#[from] crate::io::IoError),
    #[error("{0}")]
    Build(#[from] crate::builder::BuildError),
    #[error("{0}")]
    Llm(#[from] crate::llm::LlmError),
    #[error("{0}")]
    Profile(#[from] crate::profile::ProfileError),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Failed(String),
}

#[derive(Debug, Parser)]
#[command(name = "cost", version, about = "Build, check and measure command/steps datasets")]
pub struct Cli {
    /// Manifest file to append to; defaults to `<primary path>.manifest.jsonl`.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Pin every timestamp to this RFC 3339 instant.
    #[arg(long, global = true)]
    pub fixed_clock: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create the object pool.
    GenObjects {
        #[command(flatten)]
        config: ConfigFlags,
        #[command(flatten)]
        llm: LlmFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate high-level commands into a build state file.
    GenCommands {
        #[command(flatten)]
        config: ConfigFlags,
        #[command(flatten)]
        llm: LlmFlags,
        /// Pool written by gen-objects.
        #[arg(long, conflicts_with = "resume", required_unless_present = "resume")]
        pool: Option<PathBuf>,
        /// Continue a saved build state; `--n-calls` raises its call count.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate steps for every pending command of a build state.
    GenSteps {
        #[command(flatten)]
        config: ConfigFlags,
        #[command(flatten)]
        llm: LlmFlags,
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rejects: Option<PathBuf>,
    },
    /// Run every generation stage.
    Build {
        #[command(flatten)]
        config: ConfigFlags,
        #[command(flatten)]
        llm: LlmFlags,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rejects: Option<PathBuf>,
        /// Also save the build state.
        #[arg(long)]
        state_out: Option<PathBuf>,
    },
    /// Split a dataset into train, validation and test files.
    Split {
        input: PathBuf,
        /// train,validation,test
        #[arg(long, default_value = "0.8,0.1,0.1", value_parser = parse_ratios)]
        ratios: (f64, f64, f64),
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Check plans against domain rules.
    Validate {
        input: PathBuf,
        /// `tabletop`, `kitchen`, or a rules TOML file.
        #[arg(long, default_value = "tabletop")]
        rules: String,
        #[arg(long)]
        min_pass: Option<f64>,
        /// Write the full report here instead of standard output.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Corpus complexity metrics.
    Analyze {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "lines", value_parser = parse_segment_mode)]
        mode: SegmentMode,
        /// Text taken from JSONL inputs.
        #[arg(long, default_value = "commands", value_parser = ["commands", "steps"])]
        field: String,
        /// `conllu` uses the tags and trees of `.conllu` inputs.
        #[arg(long, default_value = "builtin", value_parser = ["builtin", "conllu"])]
        tagger: String,
        #[arg(long, default_value = "e", value_parser = parse_base)]
        base: LogBase,
        #[arg(long, default_value = "per-group", value_parser = parse_denominator)]
        denominator: Denominator,
        #[arg(long, default_value = "table", value_parser = ["table", "json"])]
        format: String,
        /// Row labels, in input order; defaults to file stems.
        #[arg(long = "label")]
        labels: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute tabletop plans against goal assertions.
    Simulate {
        /// Test set JSONL whose records carry a `goal`.
        testset: PathBuf,
        /// Plans to run instead of the test set's own steps, matched by id.
        #[arg(long)]
        plans: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        min_success: Option<f64>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Turn pick/place plans into CLIPort instructions.
    ExportCliport {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Build settings. Precedence: flags, then `--config`, then `COST_*`
/// environment variables, then defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigFlags {
    /// TOML file with any of the keys below (snake_case).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub domain: Option<String>,
    /// Bundled profile name or profile TOML path; defaults to the domain.
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long, value_parser = StepsVariant::from_str)]
    pub variant: Option<StepsVariant>,
    #[arg(long)]
    pub commands_per_call: Option<u32>,
    #[arg(long)]
    pub n_calls: Option<u32>,
    #[arg(long)]
    pub objects_sample_size: Option<u32>,
    #[arg(long)]
    pub distractor_min: Option<u32>,
    #[arg(long)]
    pub distractor_max: Option<u32>,
    #[arg(long)]
    pub grow_object_pool: Option<bool>,
    #[arg(long, value_parser = parse_dedup)]
    pub dedup_policy: Option<DedupPolicy>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Object pool size to aim for; defaults to the profile's.
    #[arg(long)]
    pub pool_target: Option<u32>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Replace a bundled prompt template.
    #[arg(long = "template")]
    pub templates: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct LlmFlags {
    #[arg(long)]
    pub cassette: Option<PathBuf>,
    /// record, replay_strict, replay_fallthrough or live.
    #[arg(long, value_parser = CassetteMode::from_str)]
    pub mode: Option<CassetteMode>,
    /// Shorthand for `--cassette PATH --mode replay_strict`.
    #[arg(long, conflicts_with_all = ["cassette", "record"])]
    pub replay: Option<PathBuf>,
    /// Shorthand for `--cassette PATH --mode record`.
    #[arg(long, conflicts_with = "cassette")]
    pub record: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
}

fn parse_ratios(s: &str) -> Result<(f64, f64, f64), String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err("expected three comma-separated ratios".into()),
    }
}

fn parse_segment_mode(s: &str) -> Result<SegmentMode, String> {
    match s {
        "lines" => Ok(SegmentMode::Lines),
        "raw" => Ok(SegmentMode::Raw),
        _ => Err("expected lines or raw".into()),
    }
}

fn parse_base(s: &str) -> Result<LogBase, String> {
    match s {
        "e" | "natural" => Ok(LogBase::Natural),
        "2" => Ok(LogBase::Two),
        _ => Err("expected e or 2".into()),
    }
}

fn parse_denominator(s: &str) -> Result<Denominator, String> {
    match s.replace('_', "-").as_str() {
        "per-group" => Ok(Denominator::PerGroup),
        "whole-document" => Ok(Denominator::WholeDocument),
        _ => Err("expected per-group or whole-document".into()),
    }
}

fn parse_dedup(s: &str) -> Result<DedupPolicy, String> {
    serde_json::from_value(Value::String(s.replace('-', "_"))).map_err(|_| "expected normalized_exact or off".into())
}

/// One source of settings; higher layers fill gaps from lower ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub domain: Option<String>,
    pub profile: Option<String>,
    pub variant: Option<StepsVariant>,
    pub commands_per_call: Option<u32>,
    pub n_calls: Option<u32>,
    pub objects_sample_size: Option<u32>,
    pub distractor_min: Option<u32>,
    pub distractor_max: Option<u32>,
    pub grow_object_pool: Option<bool>,
    pub dedup_policy: Option<DedupPolicy>,
    pub seed: Option<u64>,
    pub pool_target: Option<u32>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub max_in_flight: Option<usize>,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr, $($f:ident),*) => {
        ConfigLayer { $($f: $hi.$f.or($lo.$f)),* }
    };
}

impl ConfigLayer {
    /// `self` wins wherever it is set.
    pub fn over(self, lower: ConfigLayer) -> ConfigLayer {
        overlay!(
            self,
            lower,
            domain,
            profile,
            variant,
            commands_per_call,
            n_calls,
            objects_sample_size,
            distractor_min,
            distractor_max,
            grow_object_pool,
            dedup_policy,
            seed,
            pool_target,
            model,
            temperature,
            max_tokens,
            max_in_flight
        )
    }

    /// Reads `COST_<FIELD>` variables, e.g. `COST_N_CALLS`.
    pub fn from_env(env: &BTreeMap<String, String>) -> Result<ConfigLayer, CliError> {
        let mut table = toml::Table::new();
        for (key, raw) in env {
            let Some(field) = key.strip_prefix("COST_") else {
                continue;
            };
            let field = field.to_ascii_lowercase();
            let value = match field.as_str() {
                "domain" | "profile" | "variant" | "dedup_policy" | "model" => toml::Value::String(raw.clone()),
                "grow_object_pool" => toml::Value::Boolean(
                    raw.parse()
                        .map_err(|_| CliError::Usage(format!("{key}: expected true or false")))?,
                ),
                "temperature" => toml::Value::Float(
                    raw.parse()
                        .map_err(|_| CliError::Usage(format!("{key}: expected a number")))?,
                ),
                "commands_per_call"
                | "n_calls"
                | "objects_sample_size"
                | "distractor_min"
                | "distractor_max"
                | "seed"
                | "pool_target"
                | "max_tokens"
                | "max_in_flight" => toml::Value::Integer(
                    raw.parse()
                        .map_err(|_| CliError::Usage(format!("{key}: expected an integer")))?,
                ),
                _ => continue,
            };
            table.insert(field, value);
        }
        table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("environment: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<ConfigLayer, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config file: {e}")))
    }
}

impl ConfigFlags {
    fn layer(&self) -> ConfigLayer {
        ConfigLayer {
            domain: self.domain.clone(),
            profile: self.profile.clone(),
            variant: self.variant,
            commands_per_call: self.commands_per_call,
            n_calls: self.n_calls,
            objects_sample_size: self.objects_sample_size,
            distractor_min: self.distractor_min,
            distractor_max: self.distractor_max,
            grow_object_pool: self.grow_object_pool,
            dedup_policy: self.dedup_policy,
            seed: self.seed,
            pool_target: self.pool_target,
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            max_in_flight: self.max_in_flight,
        }
    }
}

/// Fully resolved settings for a generation run.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub build: BuildConfig,
    pub profile_name: String,
    pub profile: DomainProfile,
    pub variant: StepsVariant,
    pub pool_target: u32,
    pub model: ModelSettings,
    pub max_in_flight: usize,
    pub templates: TemplateSet,
}

impl Resolved {
    pub fn snapshot(&self) -> Value {
        json!({
            "build": self.build,
            "profile": self.profile_name,
            "variant": self.variant,
            "pool_target": self.pool_target,
            "model": self.model,
            "max_in_flight": self.max_in_flight,
            "templates": {
                "object_list": self.templates.object_list.version,
                "command_gen": self.templates.command_gen.version,
                "steps_fixed": self.templates.steps_fixed.version,
                "steps_flexible": self.templates.steps_flexible.version,
            },
        })
    }
}

pub fn resolve_config(flags: &ConfigFlags, env: &BTreeMap<String, String>) -> Result<Resolved, CliError> {
    let file = match &flags.config {
        Some(p) => ConfigLayer::from_toml(&read_text(p)?)?,
        None => ConfigLayer::default(),
    };
    let layer = flags.layer().over(file).over(ConfigLayer::from_env(env)?);

    let profile_name = layer
        .profile
        .clone()
        .or_else(|| layer.domain.clone())
        .unwrap_or_else(|| "tabletop".to_string());
    let profile = DomainProfile::resolve(&profile_name)?;
    let defaults = BuildConfig::default();
    let model_defaults = ModelSettings::default();
    let build = BuildConfig {
        domain: Domain::parse(layer.domain.as_deref().unwrap_or(&profile.domain)),
        commands_per_call: layer.commands_per_call.unwrap_or(defaults.commands_per_call),
        n_calls: layer.n_calls.unwrap_or(defaults.n_calls),
        objects_sample_size: layer.objects_sample_size.unwrap_or(defaults.objects_sample_size),
        distractor_count_range: (
            layer.distractor_min.unwrap_or(defaults.distractor_count_range.0),
            layer.distractor_max.unwrap_or(defaults.distractor_count_range.1),
        ),
        grow_object_pool: layer.grow_object_pool.unwrap_or(defaults.grow_object_pool),
        dedup_policy: layer.dedup_policy.unwrap_or(defaults.dedup_policy),
        random_seed: layer.seed.unwrap_or(defaults.random_seed),
    };
    build.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let model = ModelSettings {
        model_id: layer.model.unwrap_or(model_defaults.model_id),
        temperature: layer.temperature.unwrap_or(model_defaults.temperature),
        max_tokens: layer.max_tokens.unwrap_or(model_defaults.max_tokens),
        stop_sequences: Vec::new(),
    };
    let mut templates = TemplateSet::builtin();
    for path in &flags.templates {
        let t = PromptTemplate::parse(&read_text(path)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        templates.replace(t);
    }
    let pool_target = layer.pool_target.unwrap_or(profile.object_target);
    if pool_target == 0 {
        return Err(CliError::Usage("pool_target must be at least 1".into()));
    }
    Ok(Resolved {
        variant: layer.variant.unwrap_or(profile.variant),
        build,
        profile_name,
        profile,
        pool_target,
        model,
        max_in_flight: layer.max_in_flight.unwrap_or(4).max(1),
        templates,
    })
}

impl LlmFlags {
    fn cassette(&self) -> Result<Cassette, CliError> {
        let (path, mode) = match (&self.replay, &self.record, &self.cassette) {
            (Some(p), _, _) => (Some(p), CassetteMode::ReplayStrict),
            (_, Some(p), _) => (Some(p), CassetteMode::Record),
            (_, _, Some(p)) => (Some(p), self.mode.unwrap_or(CassetteMode::ReplayStrict)),
            _ => (None, self.mode.unwrap_or(CassetteMode::Live)),
        };
        if self.mode.is_some() && (self.replay.is_some() || self.record.is_some()) {
            return Err(CliError::Usage("--mode only combines with --cassette".into()));
        }
        Ok(match path {
            Some(p) => Cassette::open(p, mode)?,
            None if mode == CassetteMode::ReplayStrict => {
                return Err(CliError::Usage("replay_strict needs --cassette".into()))
            }
            None => Cassette::in_memory(mode),
        })
    }

    fn client(&self) -> Result<LlmClient, CliError> {
        let cassette = Arc::new(self.cassette()?);
        let transport: Option<Arc<dyn Transport>> = match cassette.mode() {
            CassetteMode::ReplayStrict => None,
            _ => Some(Arc::new(HttpTransport::from_env(Duration::from_secs(
                self.timeout_secs,
            ))?)),
        };
        Ok(LlmClient::new(transport, cassette, RetryPolicy::default()))
    }

    fn input_paths(&self) -> Option<&PathBuf> {
        self.replay.as_ref().or(self.record.as_ref()).or(self.cassette.as_ref())
    }
}

/// What a subcommand touched; turned into a manifest line at the end.
struct Run<'a> {
    subcommand: &'static str,
    clock: &'a dyn Clock,
    started: chrono::DateTime<chrono::Utc>,
    config: Value,
    cassette_sha256: Option<String>,
    inputs: BTreeMap<String, String>,
    outputs: Vec<(String, PathBuf)>,
    counts: BTreeMap<String, u64>,
}

impl<'a> Run<'a> {
    fn new(subcommand: &'static str, clock: &'a dyn Clock) -> Self {
        Self {
            subcommand,
            clock,
            started: clock.now(),
            config: Value::Null,
            cassette_sha256: None,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            counts: BTreeMap::new(),
        }
    }

    fn input(&mut self, role: &str, path: &Path) {
        self.inputs.insert(role.to_string(), path.display().to_string());
    }

    fn output(&mut self, role: &str, path: &Path) {
        self.outputs.push((role.to_string(), path.to_path_buf()));
    }

    fn count(&mut self, key: &str, n: usize) {
        self.counts.insert(key.to_string(), n as u64);
    }

    fn finish(self, manifest: Option<&Path>, primary: &Path) -> Result<(), CliError> {
        let mut outputs = BTreeMap::new();
        for (role, path) in &self.outputs {
            outputs.insert(
                role.clone(),
                FileDigest {
                    path: path.display().to_string(),
                    sha256: file_sha256(path)?,
                },
            );
        }
        let elapsed = (self.clock.now() - self.started).num_milliseconds().max(0) as u64;
        let m = RunManifest {
            subcommand: self.subcommand.to_string(),
            config: self.config,
            cassette_sha256: self.cassette_sha256,
            inputs: self.inputs,
            outputs,
            counts: self.counts,
            started_at: self.started.to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            wall_time_ms: elapsed,
        };
        let path = match manifest {
            Some(p) => p.to_path_buf(),
            None => sibling(primary, "manifest.jsonl"),
        };
        append_line(&path, &to_canonical_json(&m)?)?;
        Ok(())
    }
}

/// `ds.jsonl` + `rejects.jsonl` gives `ds.rejects.jsonl`.
fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// `ds.jsonl` + `manifest.jsonl` gives `ds.jsonl.manifest.jsonl`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{name}.{suffix}"))
}

fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Failed(format!("runtime: {e}")))
}

/// Parses `argv` and runs it with the process environment.
pub fn run_from_args() -> i32 {
    let env: BTreeMap<String, String> = std::env::vars().collect();
    run(std::env::args_os(), &env)
}

pub fn run<I, T>(argv: I, env: &BTreeMap<String, String>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli, env) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(CliError::Usage(m)) => {
            eprintln!("usage error: {m}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// `Ok(false)` means a threshold was missed.
pub fn dispatch(cli: Cli, env: &BTreeMap<String, String>) -> Result<bool, CliError> {
    let clock: Box<dyn Clock> = match &cli.fixed_clock {
        Some(t) => Box::new(FixedClock::parse(t).map_err(|e| CliError::Usage(format!("--fixed-clock: {e}")))?),
        None => Box::new(SystemClock),
    };
    let clock = clock.as_ref();
    let manifest = cli.manifest.as_deref();
    match cli.command {
        Command::GenObjects { config, llm, out } => {
            let resolved = resolve_config(&config, env)?;
            let client = llm.client()?;
            let mut run = Run::new("gen-objects", clock);
            let builder = builder(&resolved, &client, clock);
            let (pool, report) = runtime()?.block_on(builder.build_object_pool(resolved.pool_target))?;
            if let Some(n) = report.shortfall {
                eprintln!("warning: object pool is {n} short of {}", resolved.pool_target);
            }
            write_json_pretty(&out, &pool)?;
            run.config = resolved.snapshot();
            run.cassette_sha256 = Some(client.cassette().sha256());
            if let Some(p) = llm.input_paths() {
                run.input("cassette", p);
            }
            run.output("pool", &out);
            run.count("pool_size", pool.len());
            run.count("object_calls", report.calls as usize);
            run.count("pool_shortfall", report.shortfall.unwrap_or(0));
            eprintln!("wrote {} objects to {}", pool.len(), out.display());
            run.finish(manifest, &out)?;
            Ok(true)
        }
        Command::GenCommands {
            config,
            llm,
            pool,
            resume,
            out,
        } => {
            let resolved = resolve_config(&config, env)?;
            let client = llm.client()?;
            let mut run = Run::new("gen-commands", clock);
            let mut state = match (&pool, &resume) {
                (_, Some(path)) => {
                    run.input("state", path);
                    let mut state = read_json::<BuildState>(path)?;
                    // The saved config wins, except that --n-calls may extend it.
                    if config.n_calls.is_some() {
                        state.config.n_calls = resolved.build.n_calls;
                    }
                    state
                }
                (Some(path), None) => {
                    run.input("pool", path);
                    BuildState::new(resolved.build.clone(), read_json::<ObjectPool>(path)?)
                }
                (None, None) => return Err(CliError::Usage("--pool or --resume is required".into())),
            };
            let builder = builder(&resolved, &client, clock);
            runtime()?.block_on(builder.generate_commands(&mut state))?;
            write_json_pretty(&out, &state)?;
            run.config = json!({ "build": state.config, "model": resolved.model, "profile": resolved.profile_name });
            run.cassette_sha256 = Some(client.cassette().sha256());
            if let Some(p) = llm.input_paths() {
                run.input("cassette", p);
            }
            run.output("state", &out);
            run.count("commands", state.pending_commands.len());
            run.count("duplicates_dropped", state.duplicates_dropped as usize);
            run.count("pool_size", state.pool.len());
            eprintln!("{} commands pending in {}", state.pending_commands.len(), out.display());
            run.finish(manifest, &out)?;
            Ok(true)
        }
        Command::GenSteps {
            config,
            llm,
            state,
            out,
            rejects,
        } => {
            let resolved = resolve_config(&config, env)?;
            let client = llm.client()?;
            let mut run = Run::new("gen-steps", clock);
            run.input("state", &state);
            let loaded: BuildState = read_json(&state)?;
            let builder = builder(&resolved, &client, clock);
            let output = runtime()?.block_on(builder.generate_steps(&loaded, resolved.variant))?;
            let rejects = rejects.unwrap_or_else(|| with_suffix(&out, "rejects.jsonl"));
            write_records(&out, &output.records)?;
            write_atomic(&rejects, to_json_lines(&output.rejects)?.as_bytes())?;
            run.config = json!({ "build": loaded.config, "model": resolved.model, "variant": resolved.variant });
            run.cassette_sha256 = Some(client.cassette().sha256());
            if let Some(p) = llm.input_paths() {
                run.input("cassette", p);
            }
            run.output("dataset", &out);
            run.output("rejects", &rejects);
            run.count("commands_sent", loaded.pending_commands.len());
            run.count("records", output.records.len());
            run.count("rejects", output.rejects.len());
            eprintln!(
                "wrote {} records to {}, {} rejects to {}",
                output.records.len(),
                out.display(),
                output.rejects.len(),
                rejects.display()
            );
            run.finish(manifest, &out)?;
            Ok(true)
        }
        Command::Build {
            config,
            llm,
            out,
            rejects,
            state_out,
        } => {
            let resolved = resolve_config(&config, env)?;
            let client = llm.client()?;
            let mut run = Run::new("build", clock);
            let builder = builder(&resolved, &client, clock);
            let result = runtime()?.block_on(builder.build(&resolved.build, resolved.variant, resolved.pool_target))?;
            if let Some(n) = result.pool_report.shortfall {
                eprintln!("warning: object pool is {n} short of {}", resolved.pool_target);
            }
            let rejects = rejects.unwrap_or_else(|| with_suffix(&out, "rejects.jsonl"));
            write_records(&out, &result.output.records)?;
            write_atomic(&rejects, to_json_lines(&result.output.rejects)?.as_bytes())?;
            run.output("dataset", &out);
            run.output("rejects", &rejects);
            if let Some(p) = &state_out {
                write_json_pretty(p, &result.state)?;
                run.output("state", p);
            }
            run.config = resolved.snapshot();
            run.cassette_sha256 = Some(client.cassette().sha256());
            if let Some(p) = llm.input_paths() {
                run.input("cassette", p);
            }
            run.counts = result.counts();
            eprintln!(
                "wrote {} records to {}, {} rejects to {}",
                result.output.records.len(),
                out.display(),
                result.output.rejects.len(),
                rejects.display()
            );
            run.finish(manifest, &out)?;
            Ok(true)
        }
        Command::Split {
            input,
            ratios,
            seed,
            out_dir,
        } => {
            let mut run = Run::new("split", clock);
            run.input("dataset", &input);
            let records = read_records(&input)?;
            let split = split_dataset(&records, ratios, seed).map_err(|e| CliError::Usage(e.to_string()))?;
            let dir = out_dir.unwrap_or_else(|| input.parent().map(Path::to_path_buf).unwrap_or_default());
            let stem = input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            for (name, part) in [
                ("train", &split.train),
                ("validation", &split.validation),
                ("test", &split.test),
            ] {
                let path = dir.join(format!("{stem}.{name}.jsonl"));
                write_records(&path, part)?;
                run.output(name, &path);
                run.count(name, part.len());
            }
            run.config = json!({ "ratios": [ratios.0, ratios.1, ratios.2], "seed": seed });
            eprintln!(
                "split {} records into {}/{}/{}",
                records.len(),
                split.train.len(),
                split.validation.len(),
                split.test.len()
            );
            run.finish(manifest, &input)?;
            Ok(true)
        }
        Command::Validate {
            input,
            rules,
            min_pass,
            report,
        } => {
            let mut run = Run::new("validate", clock);
            run.input("dataset", &input);
            let domain_rules = load_rules(&rules)?;
            let records = read_records(&input)?;
            let reports: Vec<ValidationReport> = records.iter().map(|r| validate_plan(r, &domain_rules)).collect();
            let summary = summarize(&reports);
            let failures: Vec<&ValidationReport> = reports.iter().filter(|r| !r.passed).collect();
            let body = json!({ "summary": summary, "failures": failures });
            emit(&body, report.as_deref(), &mut run)?;
            run.config = json!({ "rules": rules, "min_pass": min_pass });
            run.count("total", summary.total);
            run.count("passed", summary.passed);
            let ok = min_pass.is_none_or(|m| summary.meets(m));
            match summary.pass_rate {
                Some(r) => eprintln!("pass rate {r:.4} ({}/{})", summary.passed, summary.total),
                None => eprintln!("pass rate undefined (no records)"),
            }
            run.finish(manifest, &input)?;
            Ok(ok)
        }
        Command::Analyze {
            inputs,
            mode,
            field,
            tagger,
            base,
            denominator,
            format,
            labels,
            out,
        } => {
            let mut run = Run::new("analyze", clock);
            let config = AnalyzeConfig { base, denominator };
            let mut reports: Vec<CorpusReport> = Vec::new();
            for (i, path) in inputs.iter().enumerate() {
                run.input(&format!("corpus{i}"), path);
                let label = labels.get(i).cloned().unwrap_or_else(|| {
                    path.file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default()
                });
                reports.push(analyze_input(path, &label, mode, &field, &tagger, config)?);
            }
            match format.as_str() {
                "json" => emit(&serde_json::to_value(&reports)?, out.as_deref(), &mut run)?,
                _ => emit_text(&render_table(&reports), out.as_deref(), &mut run)?,
            }
            run.config = json!({
                "mode": format!("{mode:?}"),
                "field": field,
                "tagger": tagger,
                "base": format!("{base:?}"),
                "denominator": format!("{denominator:?}"),
            });
            run.count("corpora", reports.len());
            run.finish(manifest, out.as_deref().unwrap_or(&inputs[0]))?;
            Ok(true)
        }
        Command::Simulate {
            testset,
            plans,
            trace,
            min_success,
            report,
        } => {
            let mut run = Run::new("simulate", clock);
            run.input("testset", &testset);
            let records = read_records(&testset)?;
            let plan_records = match &plans {
                Some(p) => {
                    run.input("plans", p);
                    Some(read_records(p)?)
                }
                None => None,
            };
            let mut outcomes = Vec::new();
            let mut trace_text = String::new();
            for record in &records {
                let mut case = SimCase::from_record(record).map_err(CliError::Failed)?;
                if let Some(plans) = &plan_records {
                    match plans.iter().find(|p| p.id == record.id) {
                        Some(p) => case.steps = p.steps.clone(),
                        None => {
                            outcomes.push(CaseOutcome {
                                id: case.id.clone(),
                                success: false,
                                halted_at: None,
                                error: Some("no plan with this id".into()),
                            });
                            continue;
                        }
                    }
                }
                if trace.is_some() {
                    trace_text.push_str(&format!("# {}\n", case.id));
                    match spawn(&case.objects, &case.containers, 0) {
                        Ok(state) => trace_text.push_str(&run_plan(&state, &case.steps, &case.goal).trace_text()),
                        Err(e) => trace_text.push_str(&format!("spawn failed: {e}\n")),
                    }
                }
                outcomes.push(run_case(&case));
            }
            let evaluation = summarize_outcomes(outcomes);
            if let Some(p) = &trace {
                write_atomic(p, trace_text.as_bytes())?;
                run.output("trace", p);
            }
            emit(&serde_json::to_value(&evaluation)?, report.as_deref(), &mut run)?;
            run.config = json!({ "min_success": min_success });
            run.count("cases", evaluation.cases.len());
            run.count("successes", evaluation.successes);
            match evaluation.success_rate {
                Some(r) => eprintln!(
                    "success rate {r:.4} ({}/{})",
                    evaluation.successes,
                    evaluation.cases.len()
                ),
                None => eprintln!("success rate undefined (no cases)"),
            }
            let ok = min_success.is_none_or(|m| evaluation.success_rate.is_some_and(|r| r >= m));
            run.finish(manifest, &testset)?;
            Ok(ok)
        }
        Command::ExportCliport { input, out } => {
            let mut run = Run::new("export-cliport", clock);
            run.input("dataset", &input);
            let records = read_records(&input)?;
            let mut lines = String::new();
            let mut failed = 0usize;
            for r in &records {
                match export_cliport(&r.steps) {
                    Ok(instructions) => {
                        lines.push_str(&to_canonical_json(
                            &json!({ "id": r.id, "instructions": instructions }),
                        )?);
                        lines.push('\n');
                    }
                    Err(e) => {
                        failed += 1;
                        eprintln!("{}: {e}", r.id);
                    }
                }
            }
            emit_text(&lines, out.as_deref(), &mut run)?;
            run.count("exported", records.len() - failed);
            run.count("failed", failed);
            run.finish(manifest, out.as_deref().unwrap_or(&input))?;
            if failed > 0 {
                return Err(CliError::Failed(format!("{failed} records could not be exported")));
            }
            Ok(true)
        }
    }
}

fn builder<'a>(resolved: &'a Resolved, client: &'a LlmClient, clock: &'a dyn Clock) -> Builder<'a> {
    Builder {
        client,
        templates: &resolved.templates,
        profile: &resolved.profile,
        clock,
        model: resolved.model.clone(),
        max_in_flight: resolved.max_in_flight,
    }
}

fn emit(value: &Value, path: Option<&Path>, run: &mut Run<'_>) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit_text(&text, path, run)
}

fn emit_text(text: &str, path: Option<&Path>, run: &mut Run<'_>) -> Result<(), CliError> {
    match path {
        Some(p) => {
            write_atomic(p, text.as_bytes())?;
            run.output("report", p);
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn record_texts(records: &[DatasetRecord], field: &str) -> Vec<String> {
    match field {
        "steps" => records
            .iter()
            .flat_map(|r| r.steps.iter().map(|s| s.text.clone()))
            .collect(),
        _ => records.iter().map(|r| r.command.clone()).collect(),
    }
}

fn analyze_input(
    path: &Path,
    label: &str,
    mode: SegmentMode,
    field: &str,
    tagger: &str,
    config: AnalyzeConfig,
) -> Result<CorpusReport, CliError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let metric = |e: cost_core::complexity::MetricError| CliError::Failed(format!("{}: {e}", path.display()));
    match ext {
        "conllu" => {
            let sentences =
                parse_conllu(&read_text(path)?).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
            let corpus = cost_core::complexity::corpus_from_annotations(&sentences);
            let annotations = (tagger == "conllu").then_some(sentences.as_slice());
            analyze(label, &corpus, annotations, config).map_err(metric)
        }
        _ if tagger == "conllu" => Err(CliError::Usage(format!(
            "{}: --tagger conllu needs .conllu inputs",
            path.display()
        ))),
        "jsonl" => {
            let records = read_records(path)?;
            let mut corpus = Corpus::default();
            for text in record_texts(&records, field) {
                corpus
                    .sentences
                    .extend(segment_and_tokenize(&text, SegmentMode::Raw).sentences);
            }
            analyze(label, &corpus, None, config).map_err(metric)
        }
        _ => {
            let corpus = segment_and_tokenize(&read_text(path)?, mode);
            analyze(label, &corpus, None, config).map_err(metric)
        }
    }
}

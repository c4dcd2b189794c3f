//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. Runs without the libtest harness so the lines always print.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use cost::conllu::parse_conllu;
use cost::core::complexity::{
    count_syllables, entropy_from_counts, kincaid_grade, pos_entropy, segment_and_tokenize, tree_depths, Denominator,
    LogBase, PosGroup, SegmentMode, TaggedToken,
};
use cost::core::model::{format_steps, ActionStep, DatasetRecord, Domain, ObjectName, Provenance, Timestamp};
use cost::core::parse::{parse_command_list, parse_steps_block, Diagnostic};
use cost::core::sim::{default_containers, run_plan, spawn, GoalSpec, Location, WorldState};
use cost::core::validate::{validate_plan, DomainRules, PlanRule};
use cost::io::read_records;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use serde_json::Value;

type Check = Result<(), String>;
type Annotated<'a> = &'a [(&'a str, &'a [&'a str])];
type Criterion = (&'static str, fn() -> Check, Duration);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(rel: &str) -> PathBuf {
    root().join("fixtures").join(rel)
}

fn names(raw: &[&str]) -> Vec<ObjectName> {
    raw.iter().map(|o| ObjectName::new(o).unwrap()).collect()
}

fn record(objects: &[&str], steps: Vec<ActionStep>) -> DatasetRecord {
    DatasetRecord {
        id: "acceptance".into(),
        domain: Domain::Tabletop,
        objects: names(objects),
        command: "c".into(),
        steps,
        required_objects: None,
        provenance: Provenance {
            model_id: "m".into(),
            template_id: "t".into(),
            template_version: "1".into(),
            request_fingerprint: "f".into(),
            created_at: Timestamp::parse("2024-05-01T00:00:00Z").unwrap(),
        },
        extras: BTreeMap::new(),
    }
}

const EGG: &str = "Step 1. PICK up the egg. (ACTION: Pick | TARGET: Egg)
Step 2. CRACK the egg into the bowl. (ACTION: Crack | TARGET: Bowl)
Step 3. PICK up the whisk. (ACTION: Pick | TARGET: Whisk)
Step 4. BEAT the egg in the bowl using the whisk. (ACTION: Beat | TARGET: Whisk, Egg, Bowl)";

const LETTUCE: &str = "Step 1. PICK up the lettuce. (ACTION: Pick | TARGET: Lettuce)
Step 2. MOVE to the sink. (ACTION: Move | TARGET: Sink)
Step 3. WASH the lettuce under running water. (ACTION: Wash | TARGET: Lettuce)
Step 4. PICK up the knife. (ACTION: Pick | TARGET: Knife)
Step 5. SLICE the lettuce using the knife. (ACTION: Slice | TARGET: Knife, Lettuce)
Step 6. PLACE the sliced lettuce on the tray. (ACTION: Place | TARGET: Sliced lettuce, On the tray)";

const SEMICIRCLE_OBJECTS: &[&str] = &[
    "Yellow semicircle block",
    "Red circle block",
    "Red semicircle block",
    "Yellow bowl",
    "Red bowl",
];

const SEMICIRCLE: &str = "Step 1. PICK up the red semicircle block. (ACTION: Pick | TARGET: Red semicircle block)
Step 2. PLACE the red semicircle block in the red bowl. (ACTION: Place | TARGET: Red bowl)
Step 3. PICK up the yellow semicircle block. (ACTION: Pick | TARGET: Yellow semicircle block)
Step 4. PLACE the yellow semicircle block in the yellow bowl. (ACTION: Place | TARGET: Yellow bowl)";

fn steps_of(raw: &str) -> Result<Vec<ActionStep>, String> {
    let out = parse_steps_block(raw, false);
    ensure(out.is_clean(), || format!("diagnostics: {:?}", out.diagnostics))?;
    out.value.map(|v| v.steps).ok_or_else(|| "no steps".to_string())
}

fn grammar_fidelity() -> Check {
    let cases: [(&str, Annotated); 2] = [
        (
            EGG,
            &[
                ("Pick", &["Egg"]),
                ("Crack", &["Bowl"]),
                ("Pick", &["Whisk"]),
                ("Beat", &["Whisk", "Egg", "Bowl"]),
            ],
        ),
        (
            LETTUCE,
            &[
                ("Pick", &["Lettuce"]),
                ("Move", &["Sink"]),
                ("Wash", &["Lettuce"]),
                ("Pick", &["Knife"]),
                ("Slice", &["Knife", "Lettuce"]),
                ("Place", &["Sliced lettuce", "On the tray"]),
            ],
        ),
    ];
    for (raw, expected) in cases {
        let steps = steps_of(raw)?;
        let got: Vec<(&str, Vec<&str>)> = steps
            .iter()
            .map(|s| (s.action.as_str(), s.targets.iter().map(String::as_str).collect()))
            .collect();
        let want: Vec<(&str, Vec<&str>)> = expected.iter().map(|(a, t)| (*a, t.to_vec())).collect();
        ensure(got == want, || format!("got {got:?}"))?;
        for (i, s) in steps.iter().enumerate() {
            ensure(s.index == i as u32 + 1, || format!("index {}", s.index))?;
        }
        let text = format_steps(&steps);
        ensure(text == raw, || format!("serialized differently:\n{text}"))?;
        ensure(steps_of(&text)? == steps, || "round trip changed the steps".into())?;
    }
    Ok(())
}

fn renumber(steps: &mut [ActionStep]) {
    for (i, s) in steps.iter_mut().enumerate() {
        s.index = i as u32 + 1;
    }
}

fn validator_soundness() -> Check {
    let rules = DomainRules::tabletop();
    let base = record(SEMICIRCLE_OBJECTS, steps_of(SEMICIRCLE)?);
    let report = validate_plan(&base, &rules);
    ensure(report.passed, || {
        format!("reference plan failed: {:?}", report.violations)
    })?;

    let records = read_records(&fixture("datasets/tabletop.jsonl")).map_err(|e| e.to_string())?;
    let mut mutants = 0;
    for r in &records {
        ensure(validate_plan(r, &rules).passed, || {
            format!("{} fails before mutation", r.id)
        })?;
        ensure(
            r.steps.len() >= 2 && r.steps[0].is_action("Pick") && r.steps[1].is_action("Place"),
            || format!("{} does not open with a pick/place pair", r.id),
        )?;

        let mut doubled = r.clone();
        doubled.steps.insert(1, r.steps[0].clone());
        renumber(&mut doubled.steps);

        let mut swapped = r.clone();
        swapped.steps.swap(0, 1);
        renumber(&mut swapped.steps);

        let mut verb = r.clone();
        let last = verb.steps.len() - 1;
        verb.steps[last].action = "Stir".into();

        for (mutant, rule, step) in [
            (doubled, PlanRule::ConsecutivePick, 2),
            (swapped, PlanRule::OrphanPlace, 1),
            (verb, PlanRule::DisallowedAction, last as u32 + 1),
        ] {
            let report = validate_plan(&mutant, &rules);
            let hit = report.first(rule).map(|v| v.step);
            ensure(!report.passed && hit == Some(step), || {
                format!(
                    "{} {rule:?}: expected at step {step}, got {:?}",
                    r.id, report.violations
                )
            })?;
            mutants += 1;
        }
    }
    ensure(mutants >= 50, || format!("only {mutants} mutants"))
}

const BLOCKS: &[&str] = &[
    "Red block",
    "Blue block",
    "Green block",
    "Yellow cube",
    "Red semicircle block",
];
const BOWLS: &[&str] = &["Red bowl", "Blue bowl", "Tray"];

fn valid_plan() -> impl Strategy<Value = Vec<ActionStep>> {
    prop::collection::vec((0..BLOCKS.len(), 0..BOWLS.len() + 2), 0..12).prop_map(|pairs| {
        let mut steps = Vec::new();
        for (b, dest) in pairs {
            let target = match dest {
                d if d < BOWLS.len() => BOWLS[d],
                d if d == BOWLS.len() => "Table",
                _ => BLOCKS[(b + 1) % BLOCKS.len()],
            };
            let n = steps.len() as u32;
            steps.push(ActionStep::new(n + 1, "PICK it up.", "Pick", &[BLOCKS[b]]));
            steps.push(ActionStep::new(n + 2, "PLACE it.", "Place", &[target]));
        }
        steps
    })
}

fn inventory(state: &WorldState) -> Vec<String> {
    let mut v: Vec<String> = state.objects.iter().map(|(o, _)| o.normalized().to_string()).collect();
    v.sort();
    v
}

fn simulator_correctness() -> Check {
    let objects = names(SEMICIRCLE_OBJECTS);
    let world = spawn(&objects, &default_containers(&objects), 0).map_err(|e| e.to_string())?;
    let goal = GoalSpec::new(&[
        ("Red semicircle block", "Red bowl"),
        ("Yellow semicircle block", "Yellow bowl"),
    ]);
    let run = run_plan(&world, &steps_of(SEMICIRCLE)?, &goal);
    ensure(run.success, || format!("goal not reached:\n{}", run.trace_text()))?;

    let all: Vec<&str> = BLOCKS.iter().chain(BOWLS).copied().collect();
    let start = spawn(&names(&all), &names(BOWLS), 0).map_err(|e| e.to_string())?;
    let rules = DomainRules::tabletop();
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&valid_plan(), |plan| {
            let r = record(&all, plan.clone());
            prop_assert!(validate_plan(&r, &rules).passed);
            let before = inventory(&start);
            let mut state = start.clone();
            for step in &plan {
                let (next, _) = state.step(step).map_err(|e| TestCaseError::fail(e.to_string()))?;
                let held = next.objects.iter().filter(|(_, l)| *l == Location::InGripper).count();
                prop_assert!(held <= 1);
                prop_assert_eq!(inventory(&next), before.clone());
                state = next;
            }
            prop_assert_eq!(state.holding(), None);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn brute_entropy(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    counts
        .iter()
        .map(|&c| c as f64 / total as f64)
        .map(|p| -p * p.ln())
        .sum()
}

fn tokens(counts: &[u64]) -> Vec<TaggedToken> {
    let mut v = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            v.push(TaggedToken {
                word: format!("w{i}"),
                group: Some(PosGroup::NN),
            });
        }
    }
    v
}

fn group_entropy(counts: &[u64]) -> Result<f64, String> {
    pos_entropy(&tokens(counts), LogBase::Natural, Denominator::PerGroup)
        .get(&PosGroup::NN)
        .cloned()
        .ok_or("no NN group")?
        .map_err(|e| e.to_string())
}

fn metric_oracles() -> Check {
    let c = segment_and_tokenize("The cat sat on the mat.", SegmentMode::Raw);
    let grade = kincaid_grade(&c, count_syllables).map_err(|e| e.to_string())?;
    ensure((grade - (-1.45)).abs() <= 1e-9, || format!("kincaid {grade}"))?;

    for k in 1..=12u64 {
        let h = group_entropy(&vec![3; k as usize])?;
        ensure((h - (k as f64).ln()).abs() <= 1e-12, || format!("uniform k={k}: {h}"))?;
    }
    ensure(group_entropy(&[7])? == 0.0, || "degenerate entropy is not 0".into())?;

    let mut runner = TestRunner::new(Config {
        cases: 50,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&prop::collection::vec(1u64..30, 1..10), |counts| {
            let oracle = brute_entropy(&counts);
            let total: u64 = counts.iter().sum();
            let direct = entropy_from_counts(counts.iter().copied(), total, LogBase::Natural);
            prop_assert!((direct - oracle).abs() <= 1e-12);
            let via = group_entropy(&counts).map_err(TestCaseError::fail)?;
            prop_assert!((via - oracle).abs() <= 1e-12);
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    let text = std::fs::read_to_string(fixture("conllu/forest.conllu")).map_err(|e| e.to_string())?;
    let sentences = parse_conllu(&text).map_err(|e| e.to_string())?;
    let heads: Vec<Vec<usize>> = sentences.iter().map(|s| s.heads().unwrap()).collect();
    let stats = tree_depths(heads.iter().map(Vec::as_slice)).map_err(|e| e.to_string())?;
    // Depths 3, 4 and 2.
    ensure(
        stats.mean == 3.0 && stats.variance == 2.0 / 3.0 && stats.sentences == 3,
        || format!("{stats:?}"),
    )
}

fn cost_bin(cwd: &Path, args: &[&str]) -> Result<std::process::Output, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cost"));
    for (k, _) in std::env::vars() {
        if k.starts_with("COST_") {
            cmd.env_remove(k);
        }
    }
    cmd.current_dir(cwd)
        .args(args)
        .env_remove("OPENAI_API_KEY")
        .env("OPENAI_BASE_URL", "http://192.0.2.1:9/v1")
        .output()
        .map_err(|e| e.to_string())
}

fn replay_build() -> Check {
    let mut outputs = Vec::new();
    let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs {
        std::fs::copy(fixture("cassettes/tabletop.json"), d.path().join("cassette.json")).map_err(|e| e.to_string())?;
        let o = cost_bin(
            d.path(),
            &[
                "build",
                "--domain",
                "tabletop",
                "--n-calls",
                "2",
                "--seed",
                "7",
                "--replay",
                "cassette.json",
                "--fixed-clock",
                "2024-05-01T00:00:00Z",
                "--out",
                "ds.jsonl",
            ],
        )?;
        ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
        let read = |n: &str| std::fs::read(d.path().join(n)).map_err(|e| e.to_string());
        outputs.push((
            read("ds.jsonl")?,
            read("ds.rejects.jsonl")?,
            read("ds.jsonl.manifest.jsonl")?,
        ));
    }
    ensure(outputs[0] == outputs[1], || "two runs differ".into())?;
    let bundled = std::fs::read(fixture("datasets/tabletop.jsonl")).map_err(|e| e.to_string())?;
    ensure(outputs[0].0 == bundled, || {
        "dataset differs from the bundled copy".into()
    })?;

    let manifest: Value = serde_json::from_slice(&outputs[0].2).map_err(|e| e.to_string())?;
    let n = |k: &str| manifest["counts"][k].as_u64().unwrap_or(u64::MAX);
    ensure(n("records") + n("rejects") == n("commands_sent"), || {
        format!("counts {}", manifest["counts"])
    })?;
    let lines = |b: &[u8]| b.iter().filter(|&&c| c == b'\n').count() as u64;
    ensure(
        lines(&outputs[0].0) == n("records") && lines(&outputs[0].1) == n("rejects"),
        || "file line counts disagree with the manifest".into(),
    )
}

#[derive(serde::Deserialize)]
struct MalformedCase {
    file: String,
    kind: String,
    expect_required: bool,
    parsed: Option<usize>,
    diagnostics: Vec<(usize, String)>,
}

fn robust_ingestion() -> Check {
    let dir = fixture("malformed");
    let text = std::fs::read_to_string(dir.join("expected.json")).map_err(|e| e.to_string())?;
    let cases: Vec<MalformedCase> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    ensure(cases.len() == 20, || format!("{} samples", cases.len()))?;
    let mut recovered = 0;
    for case in &cases {
        let raw = std::fs::read_to_string(dir.join(&case.file)).map_err(|e| e.to_string())?;
        let outcome = catch_unwind(AssertUnwindSafe(|| -> (Option<usize>, Vec<Diagnostic>) {
            if case.kind == "commands" {
                let out = parse_command_list(&raw, &[]);
                ((!out.lines.is_empty()).then_some(out.lines.len()), out.diagnostics)
            } else {
                let out = parse_steps_block(&raw, case.expect_required);
                (out.value.map(|v| v.steps.len()), out.diagnostics)
            }
        }))
        .map_err(|_| format!("{} panicked", case.file))?;
        let got: Vec<(usize, String)> = outcome.1.iter().map(|d| (d.line, d.rule.to_string())).collect();
        ensure(outcome.0 == case.parsed, || {
            format!("{}: parsed {:?}", case.file, outcome.0)
        })?;
        ensure(got == case.diagnostics, || {
            format!("{}: diagnostics {got:?}", case.file)
        })?;
        recovered += usize::from(outcome.0.is_some());
    }
    ensure(recovered >= 15, || format!("recovered {recovered}"))
}

fn corpus_pattern() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for domain in ["tabletop", "kitchen"] {
        let ds = fixture(&format!("datasets/{domain}.jsonl"));
        let ds = ds.to_str().unwrap();
        let mut grades = Vec::new();
        for field in ["commands", "steps"] {
            let o = cost_bin(
                dir.path(),
                &[
                    "analyze",
                    ds,
                    "--field",
                    field,
                    "--format",
                    "json",
                    "--manifest",
                    "m.jsonl",
                ],
            )?;
            ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
            let rows: Value = serde_json::from_slice(&o.stdout).map_err(|e| e.to_string())?;
            grades.push(rows[0]["kincaid"].as_f64().ok_or("no kincaid")?);
        }
        ensure(grades[1] < grades[0], || {
            format!("{domain}: steps {} vs commands {}", grades[1], grades[0])
        })?;
    }
    Ok(())
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("grammar fidelity", grammar_fidelity, Duration::from_secs(1)),
        ("validator soundness", validator_soundness, Duration::from_secs(5)),
        ("simulator correctness", simulator_correctness, Duration::from_secs(30)),
        ("metric oracles", metric_oracles, Duration::from_secs(5)),
        ("replay-deterministic build", replay_build, Duration::from_secs(10)),
        ("robust ingestion", robust_ingestion, Duration::from_secs(2)),
        (
            "steps read easier than commands",
            corpus_pattern,
            Duration::from_secs(5),
        ),
    ];
    let mut failed = 0;
    for (name, check, budget) in criteria {
        let start = Instant::now();
        let result = catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let result = result.and_then(|()| ensure(elapsed <= budget, || format!("took longer than {budget:?}")));
        match result {
            Ok(()) => println!("[PASS] {name} ({} ms)", elapsed.as_millis()),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {name} ({} ms): {why}", elapsed.as_millis());
            }
        }
    }
    println!("{} of {} acceptance criteria passed", 7 - failed, 7);
    if failed > 0 {
        std::process::exit(1);
    }
}

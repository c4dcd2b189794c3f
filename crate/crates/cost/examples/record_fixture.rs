//! Regenerates the bundled cassettes, datasets and tabletop test set.
//!
//! A scripted chat-completions server stands in for the model: it answers
//! object-list, command and steps prompts from small phrase tables, with
//! some preambles, refusals and dropped annotations mixed in. The `cost`
//! CLI records against it, then replays the cassette with a fixed clock.
//!
//! ```text
//! cargo run -p cost --example record_fixture            # from the workspace root
//! ```

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::routing::post;
use axum::{Json, Router};
use cost::core::model::{normalize_text, to_canonical_json, ObjectName};
use cost::core::sim::{default_containers, run_case, GoalSpec, SimCase};
use cost::core::validate::{validate_plan, DomainRules};
use cost::io::{read_records, write_atomic};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

const FIXED_CLOCK: &str = "2024-05-01T00:00:00Z";
const SEED: &str = "7";
const N_CALLS: &str = "2";

const TABLETOP_CATALOG: &[&str] = &[
    "Red circle block",
    "Red semicircle block",
    "Yellow semicircle block",
    "Blue triangle block",
    "Green star block",
    "Orange block",
    "White block",
    "Pink block",
    "Brown bowl",
    "Gray bowl",
    "Cyan plate",
    "Black box",
    "Pink bowl",
];
const TABLETOP_NOVEL: &[&str] = &["Purple block", "Orange bowl", "White plate"];

const KITCHEN_CATALOG: &[&str] = &[
    "Apple", "Tomato", "Carrot", "Onion", "Potato", "Bread", "Butter", "Milk", "Pan", "Pot", "Spoon", "Fork", "Plate",
    "Mug", "Kettle", "Sponge", "Towel", "Colander", "Spatula", "Ladle", "Teapot", "Cheese", "Banana", "Lemon", "Jar",
];
const KITCHEN_NOVEL: &[&str] = &["Grater", "Peeler", "Lid"];
const PRODUCE: &[&str] = &[
    "Apple", "Tomato", "Carrot", "Onion", "Potato", "Lettuce", "Cucumber", "Banana", "Lemon",
];
const SURFACES: &[&str] = &["Cutting board", "Plate", "Tray"];
const DISHES: &[&str] = &["Plate", "Bowl", "Pan", "Pot", "Mug", "Cup"];

#[derive(Clone)]
struct Step {
    verb: &'static str,
    text: String,
    targets: Vec<String>,
}

#[derive(Clone)]
enum Intent {
    Tabletop(Vec<(String, String)>),
    Kitchen(Vec<Step>, Vec<String>),
}

#[derive(Default)]
struct Script {
    intents: Mutex<HashMap<String, Intent>>,
}

fn rng_for(prompt: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(prompt.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(b))
}

fn between<'a>(s: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = s.find(start)? + start.len();
    let len = s[from..].find(end)?;
    Some(&s[from..from + len])
}

fn names_line(line: &str) -> Vec<String> {
    line.trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .split(", ")
        .map(|p| p.trim_matches(|c| c == '\'' || c == '"').to_string())
        .filter(|p| !p.is_empty())
        .collect()
}

fn quoted(names: &[String]) -> String {
    let inner: Vec<String> = names.iter().map(|n| format!("'{n}'")).collect();
    format!("[{}]", inner.join(", "))
}

fn lc(s: &str) -> String {
    s.to_lowercase()
}

impl Script {
    fn answer(&self, prompt: &str) -> String {
        if prompt.starts_with("I want to collect a list of objects") {
            self.objects(prompt)
        } else if prompt.starts_with("I want to collect examples of instructions") {
            self.commands(prompt)
        } else if prompt.contains("Command= ") {
            self.steps(prompt)
        } else {
            "I'm not sure what you are asking for.".into()
        }
    }

    fn objects(&self, prompt: &str) -> String {
        let domain = between(prompt, "can exist in ", ".").unwrap_or("");
        let count: usize = between(prompt, "generate ", " different")
            .and_then(|c| c.parse().ok())
            .unwrap_or(1);
        let (catalog, dup) = if domain == "kitchen" {
            (KITCHEN_CATALOG, "bowl")
        } else {
            (TABLETOP_CATALOG, "red block")
        };
        let mut items: Vec<String> = if count <= 3 {
            catalog[..count.min(catalog.len())]
                .iter()
                .map(|s| s.to_string())
                .collect()
        } else {
            catalog[catalog.len().saturating_sub(count)..]
                .iter()
                .map(|s| s.to_string())
                .collect()
        };
        if items.len() > 3 {
            items[2] = dup.to_string();
        }
        let mut out = String::from("Here is a list of objects:\n\n");
        for (i, item) in items.iter().enumerate() {
            out.push_str(&format!("{}. {item}\n", i + 1));
        }
        out
    }

    fn commands(&self, prompt: &str) -> String {
        let mut rng = rng_for(prompt);
        let domain = between(prompt, "give to a robot in ", ". You").unwrap_or("");
        let count: usize = between(prompt, "generate ", " sets")
            .and_then(|c| c.parse().ok())
            .unwrap_or(1);
        let objects = names_line(between(prompt, "[Object list]\n", "\n").unwrap_or(""));
        let mut out = format!("Sure! Here are {count} sets of instructions:\n\n");
        let mut n = 1;
        let novel_at = rng.random_range(0..count.max(1) * 3);
        for i in 0..count {
            let mut available = objects.clone();
            if i == novel_at {
                let pool = if domain == "kitchen" {
                    KITCHEN_NOVEL
                } else {
                    TABLETOP_NOVEL
                };
                available.push(pool.choose(&mut rng).unwrap().to_string());
            }
            let made = if domain == "kitchen" {
                kitchen_command(&available, &mut rng, i == novel_at)
            } else {
                tabletop_command(&available, &mut rng, i == novel_at)
            };
            let Some((instruction, used, intent)) = made else {
                continue;
            };
            self.intents
                .lock()
                .unwrap()
                .insert(normalize_text(&instruction), intent);
            if rng.random_range(0..20) == 0 {
                out.push_str(&format!("{n}. {instruction}\n"));
            } else {
                out.push_str(&format!("{n}. ({}), {instruction}\n", used.join(", ")));
            }
            n += 1;
        }
        out
    }

    fn steps(&self, prompt: &str) -> String {
        let mut rng = rng_for(prompt);
        let command = prompt
            .lines()
            .rev()
            .find_map(|l| l.strip_prefix("Command= "))
            .unwrap_or("")
            .trim();
        let intent = self.intents.lock().unwrap().get(&normalize_text(command)).cloned();
        let roll = rng.random_range(0..100);
        if intent.is_none() || roll < 7 {
            return "I'm sorry, but I cannot determine the steps for this command.".into();
        }
        let (steps, required) = match intent.unwrap() {
            Intent::Tabletop(pairs) => {
                let mut steps = Vec::new();
                for (x, y) in pairs {
                    let pick = if rng.random_bool(0.5) {
                        format!("PICK up the {}.", lc(&x))
                    } else {
                        format!("PICK the {} up.", lc(&x))
                    };
                    let place = if rng.random_bool(0.5) {
                        format!("PLACE it in the {}.", lc(&y))
                    } else {
                        format!("PLACE the {} in the {}.", lc(&x), lc(&y))
                    };
                    steps.push(Step {
                        verb: "Pick",
                        text: pick,
                        targets: vec![x],
                    });
                    steps.push(Step {
                        verb: "Place",
                        text: place,
                        targets: vec![y],
                    });
                }
                (steps, None)
            }
            Intent::Kitchen(steps, required) => (steps, Some(required)),
        };
        let mut out = String::from("Action Steps=\n");
        let bare = (12..16).contains(&roll).then(|| rng.random_range(0..steps.len()));
        for (i, s) in steps.iter().enumerate() {
            if bare == Some(i) {
                out.push_str(&format!("Step {}. {}\n", i + 1, s.text));
            } else {
                out.push_str(&format!(
                    "Step {}. {} (ACTION: {} | TARGET: {})\n",
                    i + 1,
                    s.text,
                    s.verb,
                    s.targets.join(", ")
                ));
            }
        }
        if let Some(req) = required {
            if !(16..21).contains(&roll) {
                out.push_str(&format!("Required Objects= {}\n", quoted(&req)));
            }
        }
        if (7..12).contains(&roll) {
            out.push_str("\nThese steps complete the command.\n");
        }
        out
    }
}

type Made = (String, Vec<String>, Intent);

fn tabletop_command(available: &[String], rng: &mut ChaCha8Rng, prefer_last: bool) -> Option<Made> {
    let names: Vec<ObjectName> = available.iter().filter_map(|n| ObjectName::new(n).ok()).collect();
    let containers: Vec<String> = default_containers(&names).iter().map(|c| c.raw().to_string()).collect();
    let mut items: Vec<String> = available.iter().filter(|n| !containers.contains(n)).cloned().collect();
    if containers.is_empty() || items.is_empty() {
        return None;
    }
    items.shuffle(rng);
    let novel = available.last().cloned().filter(|_| prefer_last);
    if let Some(n) = &novel {
        if !containers.contains(n) {
            items.retain(|i| i != n);
            items.insert(0, n.clone());
        }
    }
    let mut y1 = containers.choose(rng).unwrap().clone();
    if let Some(n) = &novel {
        if containers.contains(n) {
            y1 = n.clone();
        }
    }
    let x1 = items[0].clone();
    let two = items.len() > 1 && rng.random_bool(0.4);
    let (x, y) = (lc(&x1), lc(&y1));
    if !two {
        let templates = [
            format!("Could you please pick up the {x} from the table and carefully put it inside the {y} for me?"),
            format!("I would like the {x} to end up sitting inside the {y}, so please move it there now."),
            format!("Tidy up the table by taking the {x} and dropping it into the {y} right next to it."),
            format!("Please gather the {x} and deliver it straight into the {y} without disturbing anything else."),
            format!("Put the {x} in the {y}."),
        ];
        let text = templates.choose(rng).unwrap().clone();
        return Some((text, vec![x1.clone(), y1.clone()], Intent::Tabletop(vec![(x1, y1)])));
    }
    let x2 = items[1].clone();
    let y2 = containers.choose(rng).unwrap().clone();
    let (a, b) = (lc(&x2), lc(&y2));
    let templates = [
        format!("First place the {x} inside the {y}, and after that move the {a} into the {b} as well."),
        format!("Sort the table by putting the {x} into the {y} and the {a} into the {b}."),
        format!("Could you organize everything by transferring the {x} to the {y} and then the {a} to the {b}?"),
    ];
    let text = templates.choose(rng).unwrap().clone();
    let mut used = vec![x1.clone(), y1.clone(), x2.clone()];
    if !used.contains(&y2) {
        used.push(y2.clone());
    }
    Some((text, used, Intent::Tabletop(vec![(x1, y1), (x2, y2)])))
}

/// Appends one of a few phrase endings before the final punctuation.
fn vary(text: &str, rng: &mut ChaCha8Rng) -> String {
    let tails = [
        "",
        " before dinner",
        " for the morning",
        " when you have a moment",
        " right now",
        " for the guests",
    ];
    let tail = tails.choose(rng).unwrap();
    let (body, end) = text.split_at(text.len() - 1);
    format!("{body}{tail}{end}")
}

fn step(verb: &'static str, text: String, targets: &[&str]) -> Step {
    Step {
        verb,
        text,
        targets: targets.iter().map(|t| t.to_string()).collect(),
    }
}

fn kitchen_command(available: &[String], rng: &mut ChaCha8Rng, prefer_last: bool) -> Option<Made> {
    let has = |n: &str| available.iter().any(|a| a == n);
    let first = |set: &[&str], rng: &mut ChaCha8Rng| -> Option<String> {
        let found: Vec<&&str> = set.iter().filter(|s| has(s)).collect();
        found.choose(rng).map(|s| s.to_string())
    };
    let mut recipes: Vec<u8> = vec![0, 1, 2, 3, 4];
    recipes.shuffle(rng);
    if prefer_last {
        recipes.clear();
    }
    for r in recipes {
        match r {
            0 => {
                let (Some(p), Some(s)) = (first(PRODUCE, rng), first(SURFACES, rng)) else {
                    continue;
                };
                if !has("Sink") || !has("Knife") {
                    continue;
                }
                let (pl, sl) = (lc(&p), lc(&s));
                let text = [
                    format!(
                        "Wash the {pl} in the sink, slice it with the knife and then serve the slices on the {sl}."
                    ),
                    format!(
                        "Could you rinse the {pl} under the tap, cut it into thin slices and arrange them on the {sl}?"
                    ),
                ]
                .choose(rng)
                .unwrap()
                .clone();
                let sliced = format!("Sliced {pl}");
                let on = format!("On the {sl}");
                let steps = vec![
                    step("Pick", format!("PICK up the {pl}."), &[&p]),
                    step("Move", format!("MOVE the {pl} to the sink."), &[&p, "Sink"]),
                    step("Wash", format!("WASH the {pl}."), &[&p]),
                    step("Pick", "PICK up the knife.".into(), &["Knife"]),
                    step("Slice", format!("SLICE the {pl} with the knife."), &[&p, "Knife"]),
                    step("Place", format!("PLACE the sliced {pl} on the {sl}."), &[&sliced, &on]),
                ];
                let used = vec![p.clone(), "Sink".into(), "Knife".into(), s.clone()];
                return Some((vary(&text, rng), used.clone(), Intent::Kitchen(steps, used)));
            }
            1 => {
                if !(has("Egg") && has("Bowl") && has("Whisk")) {
                    continue;
                }
                let text = [
                    "Crack the egg into the bowl and beat it well with the whisk until it looks smooth.",
                    "I need a beaten egg, so please crack one into the bowl and whisk it thoroughly.",
                ]
                .choose(rng)
                .unwrap()
                .to_string();
                let steps = vec![
                    step("Pick", "PICK up the egg.".into(), &["Egg"]),
                    step("Crack", "CRACK the egg into the bowl.".into(), &["Bowl"]),
                    step("Pick", "PICK up the whisk.".into(), &["Whisk"]),
                    step(
                        "Beat",
                        "BEAT the egg in the bowl using the whisk.".into(),
                        &["Whisk", "Egg", "Bowl"],
                    ),
                ];
                let used: Vec<String> = ["Bowl", "Whisk", "Egg"].iter().map(|s| s.to_string()).collect();
                return Some((vary(&text, rng), used.clone(), Intent::Kitchen(steps, used)));
            }
            2 => {
                let Some(c) = first(&["Cup", "Mug"], rng) else { continue };
                if !has("Milk") {
                    continue;
                }
                let cl = lc(&c);
                let text = format!("Pour some milk into the {cl} and leave the carton back on the counter afterwards.");
                let steps = vec![
                    step("Pick", "PICK up the milk.".into(), &["Milk"]),
                    step("Pour", format!("POUR the milk into the {cl}."), &["Milk", &c]),
                    step("Place", "PLACE the milk on the table.".into(), &["Table"]),
                ];
                let used = vec!["Milk".to_string(), c.clone()];
                return Some((vary(&text, rng), used.clone(), Intent::Kitchen(steps, used)));
            }
            3 => {
                let Some(d) = first(DISHES, rng) else { continue };
                if !(has("Sponge") && has("Sink")) {
                    continue;
                }
                let dl = lc(&d);
                let text = format!(
                    "Clean the dirty {dl} with the sponge over the sink and put the sponge back when you are done."
                );
                let steps = vec![
                    step("Pick", format!("PICK up the {dl}."), &[&d]),
                    step("Move", format!("MOVE the {dl} to the sink."), &[&d, "Sink"]),
                    step("Pick", "PICK up the sponge.".into(), &["Sponge"]),
                    step("Wash", format!("WASH the {dl} with the sponge."), &[&d, "Sponge"]),
                    step("Place", "PLACE the sponge next to the sink.".into(), &["Sink"]),
                    step("Place", format!("PLACE the {dl} on the table."), &["Table"]),
                ];
                let used = vec![d.clone(), "Sponge".into(), "Sink".into()];
                return Some((vary(&text, rng), used.clone(), Intent::Kitchen(steps, used)));
            }
            _ => {
                if !(has("Bread") && has("Butter") && has("Knife")) {
                    continue;
                }
                let text =
                    "Slice the bread, spread some butter on it with the knife, and leave it ready for breakfast."
                        .to_string();
                let steps = vec![
                    step("Pick", "PICK up the knife.".into(), &["Knife"]),
                    step("Slice", "SLICE the bread.".into(), &["Bread", "Knife"]),
                    step("Spread", "SPREAD the butter on the bread.".into(), &["Butter", "Bread"]),
                    step("Place", "PLACE the knife on the table.".into(), &["Table"]),
                ];
                let used = vec!["Bread".to_string(), "Butter".into(), "Knife".into()];
                return Some((vary(&text, rng), used.clone(), Intent::Kitchen(steps, used)));
            }
        }
    }
    // Fallback: move one object onto a surface or into a dish.
    let mut things: Vec<&String> = available
        .iter()
        .filter(|a| !SURFACES.contains(&a.as_str()) && a.as_str() != "Sink")
        .collect();
    if prefer_last {
        things = vec![available.last()?];
    }
    let x = things.choose(rng)?.to_string();
    let targets: Vec<&String> = available
        .iter()
        .filter(|a| SURFACES.contains(&a.as_str()) && **a != x)
        .collect();
    let y = targets.choose(rng)?.to_string();
    let (xl, yl) = (lc(&x), lc(&y));
    let text = format!("Move the {xl} from the counter over to the {yl} so that the counter is clear.");
    let steps = vec![
        step("Pick", format!("PICK up the {xl}."), &[&x]),
        step("Place", format!("PLACE the {xl} on the {yl}."), &[&y]),
    ];
    let used = vec![x, y];
    Some((vary(&text, rng), used.clone(), Intent::Kitchen(steps, used)))
}

async fn chat(State(script): State<Arc<Script>>, Json(body): Json<Value>) -> Json<Value> {
    let prompt = body["messages"][0]["content"].as_str().unwrap_or("");
    let text = script.answer(prompt);
    let prompt_tokens = prompt.split_whitespace().count();
    let completion_tokens = text.split_whitespace().count();
    Json(json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
        "usage": {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
            "total_tokens": prompt_tokens + completion_tokens,
        },
    }))
}

fn cli(args: &[&str]) {
    let mut argv = vec!["cost"];
    argv.extend_from_slice(args);
    let code = cost::cli::run(argv.clone(), &BTreeMap::new());
    assert_eq!(code, 0, "cost {}", args.join(" "));
}

fn remove(path: &str) {
    let _ = std::fs::remove_file(path);
}

fn build(domain: &str) {
    let cassette = format!("fixtures/cassettes/{domain}.json");
    let dataset = format!("fixtures/datasets/{domain}.jsonl");
    let scratch = tempfile::tempdir().unwrap();
    let scratch_out = scratch.path().join("recorded.jsonl");
    remove(&cassette);
    for suffix in ["", ".manifest.jsonl"] {
        remove(&format!("{dataset}{suffix}"));
    }
    remove(&format!("fixtures/datasets/{domain}.rejects.jsonl"));
    cli(&[
        "build",
        "--domain",
        domain,
        "--n-calls",
        N_CALLS,
        "--seed",
        SEED,
        "--record",
        &cassette,
        "--out",
        scratch_out.to_str().unwrap(),
    ]);
    cli(&[
        "build",
        "--domain",
        domain,
        "--n-calls",
        N_CALLS,
        "--seed",
        SEED,
        "--replay",
        &cassette,
        "--fixed-clock",
        FIXED_CLOCK,
        "--out",
        &dataset,
    ]);
}

fn tabletop_testset(script: &Script) {
    let records = read_records(Path::new("fixtures/datasets/tabletop.jsonl")).unwrap();
    let intents = script.intents.lock().unwrap();
    let rules = DomainRules::tabletop();
    let mut out = String::new();
    let mut kept = 0;
    for mut record in records {
        if kept == 20 {
            break;
        }
        let Some(Intent::Tabletop(pairs)) = intents.get(&normalize_text(&record.command)) else {
            continue;
        };
        let pairs: Vec<(&str, &str)> = pairs.iter().map(|(x, y)| (x.as_str(), y.as_str())).collect();
        record.extras.insert("goal".into(), GoalSpec::new(&pairs).to_value());
        let case = SimCase::from_record(&record).unwrap();
        if !validate_plan(&record, &rules).passed || !run_case(&case).success {
            continue;
        }
        out.push_str(&to_canonical_json(&record).unwrap());
        out.push('\n');
        kept += 1;
    }
    assert_eq!(kept, 20, "not enough clean tabletop records for a test set");
    write_atomic(Path::new("fixtures/testsets/tabletop_test.jsonl"), out.as_bytes()).unwrap();
}

fn main() {
    let script = Arc::new(Script::default());
    let app = Router::new()
        .route("/v1/chat/completions", post(chat))
        .with_state(script.clone());
    let runtime = tokio::runtime::Runtime::new().unwrap();
    let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    runtime.spawn(async move { axum::serve(listener, app).await.unwrap() });

    std::env::set_var("OPENAI_BASE_URL", format!("http://{addr}/v1"));
    std::env::set_var("OPENAI_API_KEY", "scripted-responder-key");
    for dir in ["fixtures/cassettes", "fixtures/datasets", "fixtures/testsets"] {
        std::fs::create_dir_all(dir).unwrap();
    }
    build("tabletop");
    build("kitchen");
    tabletop_testset(&script);
    eprintln!("fixtures written");
}

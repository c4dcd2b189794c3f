use std::fs;
use std::path::PathBuf;

use cost_core::complexity::count_syllables;

fn fixture() -> Vec<(String, u32)> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/syllables.tsv");
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let (w, n) = l.split_once('\t').unwrap();
            (w.to_string(), n.parse().unwrap())
        })
        .collect()
}

#[test]
fn heuristic_agrees_with_dictionary_counts() {
    let words = fixture();
    assert!(words.len() >= 200);
    let misses: Vec<_> = words
        .iter()
        .filter(|(w, n)| count_syllables(w) != *n)
        .map(|(w, n)| format!("{w}: {} vs {n}", count_syllables(w)))
        .collect();
    let accuracy = 1.0 - misses.len() as f64 / words.len() as f64;
    println!("syllable accuracy {accuracy:.3}; misses {misses:?}");
    assert!(accuracy >= 0.9, "accuracy {accuracy:.3}: {misses:?}");
}

#[test]
fn never_below_one() {
    for w in ["", "x", "rhythm", "tsk", "1999", "e"] {
        assert!(count_syllables(w) >= 1, "{w}");
    }
}

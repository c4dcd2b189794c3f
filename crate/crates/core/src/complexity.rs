//! Corpus complexity metrics: Flesch-Kincaid grade, dependency-tree depth,
//! type counts and per part-of-speech word entropy.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("sentence {sentence}: malformed dependency tree: {reason}")]
    MalformedTree { sentence: usize, reason: TreeError },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TreeError {
    #[error("sentence has no tokens")]
    Empty,
    #[error("no root token")]
    NoRoot,
    #[error("{0} root tokens")]
    MultipleRoots(usize),
    #[error("token {token} points at missing head {head}")]
    DanglingHead { token: usize, head: usize },
    #[error("token {0} is its own head")]
    SelfLoop(usize),
    #[error("cycle through token {0}")]
    Cycle(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Corpus {
    pub label: String,
    pub sentences: Vec<Vec<String>>,
}

impl Corpus {
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flatten().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentMode {
    /// Line breaks end sentences in addition to terminal punctuation.
    #[default]
    Lines,
    /// Line breaks are ordinary whitespace.
    Raw,
}

const ABBREVIATIONS: &[&str] = &[
    "dr", "mr", "mrs", "ms", "prof", "st", "jr", "sr", "vs", "etc", "e.g", "i.e", "approx", "fig", "no", "inc", "ltd",
    "co", "mt", "dept", "est", "min", "max", "tbsp", "tsp", "oz", "lb", "lbs",
];

fn is_token_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\'' || c == '\u{2019}'
}

struct Segmenter {
    sentences: Vec<Vec<String>>,
    sentence: Vec<String>,
    token: String,
}

impl Segmenter {
    fn end_token(&mut self) {
        let t = self.token.trim_matches(['\'', '\u{2019}']);
        if !t.is_empty() {
            self.sentence.push(t.to_string());
        }
        self.token.clear();
    }

    fn end_sentence(&mut self) {
        self.end_token();
        if !self.sentence.is_empty() {
            self.sentences.push(core::mem::take(&mut self.sentence));
        }
    }

    fn feed(&mut self, text: &str) {
        let chars: Vec<char> = text.chars().collect();
        let mut run_start = 0;
        for (i, &c) in chars.iter().enumerate() {
            if c.is_whitespace() {
                self.end_token();
                run_start = i + 1;
                continue;
            }
            if is_token_char(c) {
                self.token.push(c);
                continue;
            }
            self.end_token();
            let next = chars.get(i + 1).copied();
            let boundary = match c {
                '!' | '?' => true,
                '.' => {
                    let at_break =
                        next.is_none_or(|n| n.is_whitespace() || matches!(n, '"' | '\'' | ')' | ']' | '\u{201d}'));
                    let run: String = chars[run_start..i]
                        .iter()
                        .skip_while(|c| !c.is_alphanumeric())
                        .flat_map(|c| c.to_lowercase())
                        .collect();
                    at_break && !ABBREVIATIONS.contains(&run.as_str())
                }
                _ => false,
            };
            if boundary {
                self.end_sentence();
            }
        }
        self.end_token();
    }
}

/// Splits text into sentences on terminal punctuation (with an abbreviation
/// guard) and sentences into maximal letter/digit/apostrophe runs.
pub fn segment_and_tokenize(raw: &str, mode: SegmentMode) -> Corpus {
    let mut seg = Segmenter {
        sentences: Vec::new(),
        sentence: Vec::new(),
        token: String::new(),
    };
    match mode {
        SegmentMode::Raw => seg.feed(raw),
        SegmentMode::Lines => {
            for line in raw.lines() {
                seg.feed(line);
                seg.end_sentence();
            }
        }
    }
    seg.end_sentence();
    Corpus {
        label: String::new(),
        sentences: seg.sentences,
    }
}

/// Heuristic English syllable count: vowel groups, minus a silent final
/// `e`, keeping consonant + `le` endings; never below 1.
pub fn count_syllables(word: &str) -> u32 {
    let letters: Vec<char> = word
        .chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    let is_vowel = |i: usize| match letters[i] {
        'a' | 'e' | 'i' | 'o' | 'u' => true,
        'y' => i > 0,
        _ => false,
    };
    let mut count = 0u32;
    let mut in_group = false;
    for i in 0..letters.len() {
        let v = is_vowel(i);
        if v && !in_group {
            count += 1;
        }
        in_group = v;
    }
    let n = letters.len();
    if count > 1 && n >= 2 && letters[n - 1] == 'e' {
        let consonant_le = n >= 3 && letters[n - 2] == 'l' && !is_vowel(n - 3);
        if !consonant_le {
            count -= 1;
        }
    }
    count.max(1)
}

/// `0.39 * words/sentences + 11.8 * syllables/words - 15.59`, unclamped.
pub fn kincaid_grade<F>(corpus: &Corpus, syllables: F) -> Result<f64, MetricError>
where
    F: Fn(&str) -> u32,
{
    let sentences = corpus.sentences.len();
    let words = corpus.token_count();
    if sentences == 0 || words == 0 {
        return Err(MetricError::UndefinedMetric(
            "kincaid needs at least one sentence and one word",
        ));
    }
    let syllable_total: u64 = corpus.tokens().map(|w| u64::from(syllables(w))).sum();
    let words_per_sentence = words as f64 / sentences as f64;
    let syllables_per_word = syllable_total as f64 / words as f64;
    Ok(0.39 * words_per_sentence + 11.8 * syllables_per_word - 15.59)
}

/// Number of nodes on the longest root-to-leaf path. `heads[i]` is the
/// 1-based head of token `i + 1`; 0 marks the root.
pub fn tree_depth(heads: &[usize]) -> Result<u32, TreeError> {
    let n = heads.len();
    if n == 0 {
        return Err(TreeError::Empty);
    }
    let roots = heads.iter().filter(|&&h| h == 0).count();
    match roots {
        0 => return Err(TreeError::NoRoot),
        1 => {}
        k => return Err(TreeError::MultipleRoots(k)),
    }
    for (i, &h) in heads.iter().enumerate() {
        if h > n {
            return Err(TreeError::DanglingHead { token: i + 1, head: h });
        }
        if h == i + 1 {
            return Err(TreeError::SelfLoop(i + 1));
        }
    }
    // 0 = unknown, u32::MAX = on the current walk.
    const ON_PATH: u32 = u32::MAX;
    let mut depth = vec![0u32; n];
    let mut path = Vec::new();
    for start in 0..n {
        if depth[start] != 0 {
            continue;
        }
        let mut node = start;
        let base = loop {
            if depth[node] == ON_PATH {
                return Err(TreeError::Cycle(node + 1));
            }
            if depth[node] != 0 {
                break depth[node];
            }
            depth[node] = ON_PATH;
            path.push(node);
            match heads[node] {
                0 => break 0,
                h => node = h - 1,
            }
        };
        let mut d = base;
        while let Some(node) = path.pop() {
            d += 1;
            depth[node] = d;
        }
    }
    Ok(depth.into_iter().max().unwrap_or(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthStats {
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub sentences: usize,
}

pub fn mean_and_variance(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, variance))
}

pub fn tree_depths<'a, I>(trees: I) -> Result<DepthStats, MetricError>
where
    I: IntoIterator<Item = &'a [usize]>,
{
    let mut depths = Vec::new();
    for (i, heads) in trees.into_iter().enumerate() {
        let d = tree_depth(heads).map_err(|reason| MetricError::MalformedTree {
            sentence: i + 1,
            reason,
        })?;
        depths.push(f64::from(d));
    }
    let (mean, variance) =
        mean_and_variance(&depths).ok_or(MetricError::UndefinedMetric("no sentences to measure depth"))?;
    Ok(DepthStats {
        mean,
        variance,
        sentences: depths.len(),
    })
}

/// Distinct case-folded tokens.
pub fn type_count(corpus: &Corpus) -> usize {
    corpus.tokens().map(str::to_lowercase).collect::<BTreeSet<_>>().len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PosGroup {
    NN,
    VB,
    AD,
}

impl PosGroup {
    pub const ALL: [PosGroup; 3] = [PosGroup::NN, PosGroup::VB, PosGroup::AD];

    pub fn as_str(self) -> &'static str {
        match self {
            PosGroup::NN => "NN",
            PosGroup::VB => "VB",
            PosGroup::AD => "AD",
        }
    }

    /// Maps Penn Treebank or Universal tags onto a group; `None` for every
    /// other tag.
    pub fn from_tag(tag: &str) -> Option<PosGroup> {
        let t = tag.trim();
        match t {
            "NOUN" | "PROPN" => return Some(PosGroup::NN),
            "VERB" | "AUX" => return Some(PosGroup::VB),
            "ADJ" | "ADV" => return Some(PosGroup::AD),
            _ => {}
        }
        if t.starts_with("NN") {
            Some(PosGroup::NN)
        } else if t.starts_with("VB") {
            Some(PosGroup::VB)
        } else if t.starts_with("JJ") || t.starts_with("RB") || t == "WRB" {
            Some(PosGroup::AD)
        } else {
            None
        }
    }
}

impl fmt::Display for PosGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Natural,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// Probabilities over the tokens of the group itself.
    #[default]
    PerGroup,
    /// Probabilities over every token of the document.
    WholeDocument,
}

/// Word-frequency counts for one part-of-speech group.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PosDistribution {
    pub counts: BTreeMap<String, u64>,
}

impl PosDistribution {
    pub fn add(&mut self, word: &str) {
        *self.counts.entry(word.to_lowercase()).or_insert(0) += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Associative merge for sharded counting.
    pub fn merge(&mut self, other: &PosDistribution) {
        for (w, c) in &other.counts {
            *self.counts.entry(w.clone()).or_insert(0) += c;
        }
    }
}

/// `-Σ p·log p` with `p = count / denominator`.
pub fn entropy_from_counts<I>(counts: I, denominator: u64, base: LogBase) -> f64
where
    I: IntoIterator<Item = u64>,
{
    let d = denominator as f64;
    let mut h = 0.0;
    for c in counts {
        if c == 0 {
            continue;
        }
        let p = c as f64 / d;
        h -= p * libm::log(p);
    }
    match base {
        LogBase::Natural => h,
        LogBase::Two => h / core::f64::consts::LN_2,
    }
}

/// A token with an optional group assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedToken {
    pub word: String,
    pub group: Option<PosGroup>,
}

/// Per-group entropy. Groups without tokens are `UndefinedMetric`.
pub fn pos_entropy(
    tokens: &[TaggedToken],
    base: LogBase,
    denominator: Denominator,
) -> BTreeMap<PosGroup, Result<f64, MetricError>> {
    let mut groups: BTreeMap<PosGroup, PosDistribution> = BTreeMap::new();
    for t in tokens {
        if let Some(g) = t.group {
            groups.entry(g).or_default().add(&t.word);
        }
    }
    let doc_total = tokens.len() as u64;
    PosGroup::ALL
        .into_iter()
        .map(|g| {
            let value = match groups.get(&g) {
                Some(dist) if dist.total() > 0 => {
                    let d = match denominator {
                        Denominator::PerGroup => dist.total(),
                        Denominator::WholeDocument => doc_total,
                    };
                    Ok(entropy_from_counts(dist.counts.values().copied(), d, base))
                }
                _ => Err(MetricError::UndefinedMetric("no tokens in group")),
            };
            (g, value)
        })
        .collect()
}

const CLOSED_CLASS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "it", "its", "them", "they", "their", "he", "she", "his",
    "her", "him", "you", "your", "i", "me", "my", "we", "us", "our", "and", "or", "but", "nor", "so", "if", "then",
    "than", "of", "in", "on", "into", "onto", "to", "from", "with", "without", "at", "by", "for", "under", "over",
    "above", "below", "between", "behind", "beside", "next", "inside", "near", "up", "down", "out", "off", "through",
    "each", "every", "all", "both", "either", "any", "some", "other", "another", "one", "can", "could", "will",
    "would", "should", "may", "might", "must", "shall", "not", "as", "which", "who", "what", "where", "when", "how",
    "there", "here", "while", "after", "before", "until", "please", "'s",
];
const VERBS: &[&str] = &[
    "is",
    "are",
    "was",
    "were",
    "be",
    "been",
    "being",
    "am",
    "have",
    "has",
    "had",
    "do",
    "does",
    "did",
    "pick",
    "place",
    "put",
    "move",
    "take",
    "grab",
    "bring",
    "give",
    "hand",
    "open",
    "close",
    "wash",
    "slice",
    "cut",
    "chop",
    "pour",
    "stir",
    "mix",
    "beat",
    "crack",
    "whisk",
    "boil",
    "cook",
    "fry",
    "bake",
    "heat",
    "serve",
    "set",
    "arrange",
    "stack",
    "sort",
    "push",
    "pull",
    "slide",
    "rotate",
    "turn",
    "fill",
    "empty",
    "clean",
    "wipe",
    "rinse",
    "dry",
    "peel",
    "grate",
    "spread",
    "toss",
    "make",
    "prepare",
    "get",
    "fetch",
    "find",
    "lift",
    "drop",
    "insert",
    "remove",
    "store",
    "organize",
    "line",
    "group",
    "align",
    "separate",
    "swap",
    "cover",
    "use",
    "match",
    "pair",
    "gather",
    "collect",
    "transfer",
    "lay",
    "hold",
    "release",
    "dice",
    "mash",
    "squeeze",
    "scoop",
    "toast",
    "brew",
    "season",
    "melt",
    "microwave",
    "refrigerate",
    "freeze",
    "unstack",
    "fold",
    "hang",
    "throw",
    "discard",
    "load",
    "unload",
    "plug",
    "press",
    "flip",
    "steam",
    "roast",
    "grill",
    "knead",
    "roll",
    "blend",
    "sprinkle",
    "drain",
    "dip",
    "wrap",
    "unwrap",
];
const MODIFIERS: &[&str] = &[
    "red",
    "blue",
    "green",
    "yellow",
    "orange",
    "purple",
    "pink",
    "black",
    "white",
    "brown",
    "gray",
    "grey",
    "big",
    "small",
    "large",
    "little",
    "tiny",
    "huge",
    "long",
    "short",
    "tall",
    "hot",
    "cold",
    "warm",
    "fresh",
    "clean",
    "dirty",
    "full",
    "same",
    "different",
    "left",
    "right",
    "top",
    "bottom",
    "middle",
    "first",
    "last",
    "second",
    "third",
    "together",
    "again",
    "also",
    "only",
    "just",
    "very",
    "carefully",
    "gently",
    "slowly",
    "quickly",
    "back",
    "away",
    "apart",
    "closer",
    "nearest",
    "farthest",
    "new",
    "old",
    "whole",
    "half",
    "ripe",
];

/// Lexicon-and-suffix tagger for the short imperative register of robot
/// commands. Lower fidelity than a trained tagger.
pub fn builtin_group(word: &str) -> Option<PosGroup> {
    let w = word.to_lowercase();
    let w = w.as_str();
    if w.chars().all(|c| c.is_ascii_digit()) || CLOSED_CLASS.contains(&w) {
        return None;
    }
    if MODIFIERS.contains(&w) {
        return Some(PosGroup::AD);
    }
    if VERBS.contains(&w) {
        return Some(PosGroup::VB);
    }
    if let Some(stem) = w.strip_suffix('s') {
        if VERBS.contains(&stem) && !w.ends_with("ss") {
            return Some(PosGroup::VB);
        }
    }
    let len = w.chars().count();
    if len > 4 && w.ends_with("ly") {
        return Some(PosGroup::AD);
    }
    if len > 5
        && ["ful", "ous", "ive", "able", "ible", "less", "ical"]
            .iter()
            .any(|s| w.ends_with(s))
    {
        return Some(PosGroup::AD);
    }
    if len > 4 && (w.ends_with("ing") || w.ends_with("ed")) {
        return Some(PosGroup::VB);
    }
    Some(PosGroup::NN)
}

pub fn tag_builtin(corpus: &Corpus) -> Vec<TaggedToken> {
    corpus
        .tokens()
        .map(|w| TaggedToken {
            word: w.to_string(),
            group: builtin_group(w),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedToken {
    pub form: String,
    pub upos: Option<String>,
    pub xpos: Option<String>,
    /// 0 for the root; `None` when the annotation carries no parse.
    pub head: Option<usize>,
}

impl AnnotatedToken {
    /// Prefers the language-specific tag when it maps to a group.
    pub fn group(&self) -> Option<PosGroup> {
        self.xpos
            .as_deref()
            .and_then(PosGroup::from_tag)
            .or_else(|| self.upos.as_deref().and_then(PosGroup::from_tag))
    }

    pub fn is_punct(&self) -> bool {
        self.upos.as_deref() == Some("PUNCT") || !self.form.chars().any(char::is_alphanumeric)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub tokens: Vec<AnnotatedToken>,
}

impl AnnotatedSentence {
    pub fn heads(&self) -> Option<Vec<usize>> {
        self.tokens.iter().map(|t| t.head).collect()
    }
}

/// Builds a corpus from annotated forms, dropping punctuation tokens.
pub fn corpus_from_annotations(sentences: &[AnnotatedSentence]) -> Corpus {
    Corpus {
        label: String::new(),
        sentences: sentences
            .iter()
            .map(|s| {
                s.tokens
                    .iter()
                    .filter(|t| !t.is_punct())
                    .map(|t| t.form.clone())
                    .collect::<Vec<_>>()
            })
            .filter(|s| !s.is_empty())
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnalyzeConfig {
    pub base: LogBase,
    pub denominator: Denominator,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusReport {
    pub label: String,
    pub sentences: usize,
    pub tokens: usize,
    pub kincaid: Option<f64>,
    pub tree_depth_mean: Option<f64>,
    pub tree_depth_variance: Option<f64>,
    pub type_count: usize,
    pub entropy: BTreeMap<PosGroup, Option<f64>>,
    /// `builtin` or `annotations`.
    pub tagger: String,
    pub base: LogBase,
    pub denominator: Denominator,
}

/// Full report. With annotations, tokens, tags and trees come from them;
/// otherwise the built-in tagger runs and depth is reported unavailable.
pub fn analyze(
    label: &str,
    corpus: &Corpus,
    annotations: Option<&[AnnotatedSentence]>,
    config: AnalyzeConfig,
) -> Result<CorpusReport, MetricError> {
    let (corpus, tagged, depth, tagger) = match annotations {
        Some(sents) => {
            let tagged: Vec<TaggedToken> = sents
                .iter()
                .flat_map(|s| s.tokens.iter())
                .filter(|t| !t.is_punct())
                .map(|t| TaggedToken {
                    word: t.form.clone(),
                    group: t.group(),
                })
                .collect();
            let heads: Option<Vec<Vec<usize>>> = sents.iter().map(AnnotatedSentence::heads).collect();
            let depth = match heads {
                Some(h) if !h.is_empty() => Some(tree_depths(h.iter().map(Vec::as_slice))?),
                _ => None,
            };
            (corpus_from_annotations(sents), tagged, depth, "annotations")
        }
        None => (corpus.clone(), tag_builtin(corpus), None, "builtin"),
    };
    let kincaid = match kincaid_grade(&corpus, count_syllables) {
        Ok(v) => Some(v),
        Err(MetricError::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    let entropy = pos_entropy(&tagged, config.base, config.denominator)
        .into_iter()
        .map(|(g, v)| (g, v.ok()))
        .collect();
    Ok(CorpusReport {
        label: label.to_string(),
        sentences: corpus.sentences.len(),
        tokens: corpus.token_count(),
        kincaid,
        tree_depth_mean: depth.map(|d| d.mean),
        tree_depth_variance: depth.map(|d| d.variance),
        type_count: type_count(&corpus),
        entropy,
        tagger: tagger.to_string(),
        base: config.base,
        denominator: config.denominator,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

/// Aligned text table with Kincaid, tree depth `mean (variance)`, type
/// count and per-group entropy columns.
pub fn render_table(reports: &[CorpusReport]) -> String {
    let header = ["Dataset", "Kincaid", "Syntactic tree", "#Types", "NN", "VB", "AD"];
    let mut rows: Vec<[String; 7]> = Vec::new();
    for r in reports {
        let tree = match (r.tree_depth_mean, r.tree_depth_variance) {
            (Some(m), Some(v)) => format!("{m:.2} ({v:.2})"),
            _ => "n/a".to_string(),
        };
        let e = |g| cell(r.entropy.get(&g).copied().flatten());
        rows.push([
            r.label.clone(),
            cell(r.kincaid),
            tree,
            r.type_count.to_string(),
            e(PosGroup::NN),
            e(PosGroup::VB),
            e(PosGroup::AD),
        ]);
    }
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &rows {
        for (w, c) in widths.iter_mut().zip(row.iter()) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[&str]| {
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                out.push_str(" | ");
            }
            out.push_str(c);
            let pad = widths[i] - c.chars().count();
            if i + 1 < cells.len() {
                out.extend(core::iter::repeat_n(' ', pad));
            }
        }
        out.push('\n');
    };
    line(&header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&rule.iter().map(String::as_str).collect::<Vec<_>>());
    for row in &rows {
        line(&row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segmentation_basics() {
        let c = segment_and_tokenize("Pick the egg. Place it.", SegmentMode::Raw);
        assert_eq!(c.sentences, vec![vec!["Pick", "the", "egg"], vec!["Place", "it"]]);
        assert!(segment_and_tokenize("", SegmentMode::Raw).is_empty());
        assert_eq!(
            segment_and_tokenize("Dr. Smith cooks.", SegmentMode::Raw)
                .sentences
                .len(),
            1
        );
        assert_eq!(
            segment_and_tokenize("Use e.g. a spoon. Then stir.", SegmentMode::Raw)
                .sentences
                .len(),
            2
        );
        assert_eq!(
            segment_and_tokenize("Add 2.5 cups. Stir!", SegmentMode::Raw).sentences[0],
            vec!["Add", "2", "5", "cups"]
        );
    }

    #[test]
    fn line_mode_breaks_on_newlines() {
        let text = "Pick the block\nPlace it in the bowl";
        assert_eq!(segment_and_tokenize(text, SegmentMode::Lines).sentences.len(), 2);
        assert_eq!(segment_and_tokenize(text, SegmentMode::Raw).sentences.len(), 1);
    }

    #[test]
    fn apostrophes_stay_in_tokens() {
        let c = segment_and_tokenize("Put the chef's knife in 'the' drawer.", SegmentMode::Raw);
        assert_eq!(
            c.sentences[0],
            vec!["Put", "the", "chef's", "knife", "in", "the", "drawer"]
        );
    }

    #[test]
    fn syllable_rules() {
        assert_eq!(count_syllables("cat"), 1);
        assert_eq!(count_syllables("table"), 2);
        assert_eq!(count_syllables("a"), 1);
        assert_eq!(count_syllables("the"), 1);
        assert_eq!(count_syllables("make"), 1);
        assert_eq!(count_syllables("whole"), 1);
        assert_eq!(count_syllables("yellow"), 2);
        assert_eq!(count_syllables("20"), 1);
    }

    #[test]
    fn kincaid_hand_computed() {
        let c = segment_and_tokenize("The cat sat on the mat.", SegmentMode::Raw);
        let grade = kincaid_grade(&c, count_syllables).unwrap();
        assert!((grade - (-1.45)).abs() < 1e-9, "{grade}");
        assert!(kincaid_grade(&Corpus::default(), count_syllables).is_err());
    }

    #[test]
    fn depth_examples() {
        assert_eq!(tree_depth(&[0]), Ok(1));
        assert_eq!(tree_depth(&[0, 1, 2]), Ok(3));
        assert_eq!(tree_depth(&[2, 0, 2]), Ok(2));
        assert_eq!(tree_depth(&[]), Err(TreeError::Empty));
        assert_eq!(tree_depth(&[2, 1]), Err(TreeError::NoRoot));
        assert_eq!(tree_depth(&[0, 0]), Err(TreeError::MultipleRoots(2)));
        assert_eq!(tree_depth(&[0, 5]), Err(TreeError::DanglingHead { token: 2, head: 5 }));
        assert_eq!(tree_depth(&[0, 2]), Err(TreeError::SelfLoop(2)));
        assert!(matches!(tree_depth(&[0, 3, 2]), Err(TreeError::Cycle(_))));
    }

    #[test]
    fn depth_stats() {
        let a = [0usize, 1];
        let b = [0usize, 1, 2, 3];
        let s = tree_depths([&a[..], &b[..]]).unwrap();
        assert_eq!((s.mean, s.variance), (3.0, 1.0));
        let bad = [1usize];
        assert!(matches!(
            tree_depths([&a[..], &bad[..]]),
            Err(MetricError::MalformedTree { sentence: 2, .. })
        ));
    }

    #[test]
    fn type_counts() {
        let c = segment_and_tokenize("pick the block pick the bowl", SegmentMode::Raw);
        assert_eq!(type_count(&c), 4);
        assert_eq!(type_count(&Corpus::default()), 0);
        assert_eq!(type_count(&segment_and_tokenize("Pick pick", SegmentMode::Raw)), 1);
    }

    fn tagged(words: &[(&str, Option<PosGroup>)]) -> Vec<TaggedToken> {
        words
            .iter()
            .map(|(w, g)| TaggedToken {
                word: w.to_string(),
                group: *g,
            })
            .collect()
    }

    #[test]
    fn entropy_degenerate_and_uniform() {
        let nn = Some(PosGroup::NN);
        let t = tagged(&[("egg", nn); 5]);
        let h = pos_entropy(&t, LogBase::Natural, Denominator::PerGroup);
        assert_eq!(h[&PosGroup::NN], Ok(0.0));
        assert!(h[&PosGroup::VB].is_err());

        let t = tagged(&[("egg", nn), ("bowl", nn), ("cup", nn), ("tray", nn)]);
        let h = pos_entropy(&t, LogBase::Natural, Denominator::PerGroup)[&PosGroup::NN]
            .clone()
            .unwrap();
        assert!((h - 1.3862943611198906).abs() < 1e-12);
        let h2 = pos_entropy(&t, LogBase::Two, Denominator::PerGroup)[&PosGroup::NN]
            .clone()
            .unwrap();
        assert!((h2 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn tag_mapping() {
        assert_eq!(PosGroup::from_tag("NNS"), Some(PosGroup::NN));
        assert_eq!(PosGroup::from_tag("VBZ"), Some(PosGroup::VB));
        assert_eq!(PosGroup::from_tag("RBR"), Some(PosGroup::AD));
        assert_eq!(PosGroup::from_tag("JJ"), Some(PosGroup::AD));
        assert_eq!(PosGroup::from_tag("ADV"), Some(PosGroup::AD));
        assert_eq!(PosGroup::from_tag("DT"), None);
        assert_eq!(PosGroup::from_tag("PUNCT"), None);
    }

    #[test]
    fn builtin_tagger_on_commands() {
        let groups: Vec<_> = ["Pick", "the", "red", "block", "carefully", "places", "2"]
            .iter()
            .map(|w| builtin_group(w))
            .collect();
        assert_eq!(
            groups,
            vec![
                Some(PosGroup::VB),
                None,
                Some(PosGroup::AD),
                Some(PosGroup::NN),
                Some(PosGroup::AD),
                Some(PosGroup::VB),
                None
            ]
        );
    }

    #[test]
    fn empty_report_is_all_undefined() {
        let r = analyze("empty", &Corpus::default(), None, AnalyzeConfig::default()).unwrap();
        assert_eq!(r.kincaid, None);
        assert_eq!(r.tree_depth_mean, None);
        assert_eq!(r.type_count, 0);
        assert!(r.entropy.values().all(Option::is_none));
        assert!(render_table(&[r]).contains("n/a"));
    }

    #[test]
    fn annotated_report_uses_trees_and_tags() {
        let tok = |form: &str, xpos: &str, head: usize| AnnotatedToken {
            form: form.into(),
            upos: None,
            xpos: Some(xpos.into()),
            head: Some(head),
        };
        let sents = vec![
            AnnotatedSentence {
                tokens: vec![tok("Pick", "VB", 0), tok("block", "NN", 1), tok(".", ".", 1)],
            },
            AnnotatedSentence {
                tokens: vec![
                    tok("Put", "VB", 0),
                    tok("it", "PRP", 1),
                    tok("in", "IN", 4),
                    tok("bowl", "NN", 1),
                ],
            },
        ];
        let r = analyze("ann", &Corpus::default(), Some(&sents), AnalyzeConfig::default()).unwrap();
        assert_eq!(r.tree_depth_mean, Some(2.5));
        assert_eq!(r.tree_depth_variance, Some(0.25));
        assert_eq!(r.tokens, 6);
        assert_eq!(r.entropy[&PosGroup::VB], Some(libm::log(2.0)));
        assert_eq!(r.entropy[&PosGroup::AD], None);
    }
}

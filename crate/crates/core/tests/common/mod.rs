//! Independent reference implementations used as test oracles, plus fixtures.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tmpl_detect::classifier::{Node, Tree};
use tmpl_detect::features::N_FEATURES;
use tmpl_detect::matcher::{MatchParams, MatchSpan, SourceKind};
use tmpl_detect::registry::{load_registry, Registry, Template};
use tmpl_detect::pipeline::PromptSet;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn fixture_registry() -> Registry {
    load_registry(&fixture("registry.json"), 5).expect("fixture registry")
}

pub fn fixture_prompts() -> PromptSet {
    PromptSet::load(&fixture("prompts.json")).expect("fixture prompts")
}

/// Full dynamic-programming edit distance, no banding or early exit.
pub fn dp_levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut m = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in m.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in m[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let c = usize::from(a[i - 1] != b[j - 1]);
            m[i][j] = (m[i - 1][j - 1] + c).min(m[i - 1][j] + 1).min(m[i][j - 1] + 1);
        }
    }
    m[a.len()][b.len()]
}

fn oracle_starts(n: usize, w: usize, stride: usize) -> Vec<usize> {
    let mut s = Vec::new();
    let mut i = 0;
    while i + w <= n {
        s.push(i);
        i += stride;
    }
    if n >= w && !s.contains(&(n - w)) {
        s.push(n - w);
    }
    s
}

/// Exhaustive all-pairs window comparison with full DP distance.
pub fn oracle_match_templates(
    response_tokens: &[String],
    registry: &Registry,
    params: &MatchParams,
) -> Vec<MatchSpan> {
    let n = response_tokens.len();
    let mut spans = Vec::new();
    if n == 0 {
        return spans;
    }
    for sub in registry.subtemplates() {
        let sub_tokens: Vec<&str> = sub.text.split(' ').collect();
        let w = params.window_tokens.min(sub_tokens.len()).min(n);
        let mut accepted: Vec<(usize, usize, f64)> = Vec::new();
        for s in oracle_starts(n, w, params.stride_tokens) {
            let rw = response_tokens[s..s + w].join(" ");
            let mut best: Option<f64> = None;
            for t in 0..=sub_tokens.len() - w {
                let sw = sub_tokens[t..t + w].join(" ");
                let len = rw.chars().count().max(sw.chars().count());
                let d = dp_levenshtein(&rw, &sw) as f64 / len as f64;
                if d <= params.max_norm_distance {
                    best = Some(best.map_or(d, |b: f64| b.min(d)));
                }
            }
            if let Some(b) = best {
                accepted.push((s, s + w, b));
            }
        }
        accepted.sort_by_key(|a| a.0);
        let mut merged: Vec<(usize, usize, f64)> = Vec::new();
        for (s, e, sc) in accepted {
            match merged.last_mut() {
                Some(last) if s < last.1 => {
                    last.1 = last.1.max(e);
                    last.2 = last.2.min(sc);
                }
                _ => merged.push((s, e, sc)),
            }
        }
        for (s, e, sc) in merged {
            spans.push(MatchSpan {
                kind: SourceKind::Template,
                source_id: format!("{}#{}", sub.template_id, sub.index),
                token_start: s,
                token_end: e,
                score: sc,
            });
        }
    }
    spans
}

/// Longest-common-suffix table; a run is maximal where it cannot extend right.
pub fn oracle_match_prompt(resp: &[String], prompt: &[String], id: &str, min: usize) -> Vec<MatchSpan> {
    let (n, m) = (resp.len(), prompt.len());
    let mut table = vec![vec![0usize; m + 1]; n + 1];
    for i in 1..=n {
        for j in 1..=m {
            if resp[i - 1] == prompt[j - 1] {
                table[i][j] = table[i - 1][j - 1] + 1;
            }
        }
    }
    let mut runs = Vec::new();
    for i in 1..=n {
        for j in 1..=m {
            let l = table[i][j];
            let extends = i < n && j < m && resp[i] == prompt[j];
            if l >= min && !extends {
                runs.push((i - l, i));
            }
        }
    }
    runs.sort();
    runs.dedup();
    runs.into_iter()
        .map(|(s, e)| MatchSpan {
            kind: SourceKind::Prompt,
            source_id: id.to_string(),
            token_start: s,
            token_end: e,
            score: 0.0,
        })
        .collect()
}

/// O(n * spans) interval stabbing.
pub fn oracle_coverage(n: usize, spans: &[MatchSpan], kind: SourceKind) -> Vec<bool> {
    (0..n)
        .map(|i| {
            spans
                .iter()
                .any(|s| s.kind == kind && s.token_start <= i && i < s.token_end)
        })
        .collect()
}

/// Naive per-token counter: (non-template, non-prompt, authentic, n).
pub fn oracle_counts(template: &[bool], prompt: &[bool]) -> (u64, u64, u64) {
    let mut c = (0, 0, 0);
    for i in 0..template.len() {
        if !template[i] {
            c.0 += 1;
        }
        if !prompt[i] {
            c.1 += 1;
        }
        if !template[i] && !prompt[i] {
            c.2 += 1;
        }
    }
    c
}

/// Recursive tree walk, independent of `Tree::leaf_value`.
pub fn oracle_tree_value(tree: &Tree, node: usize, x: &[f64; N_FEATURES]) -> f64 {
    match &tree.nodes[node] {
        Node::Leaf { leaf } => *leaf,
        Node::Split { feature, threshold, left, right } => {
            if x[*feature] > *threshold {
                oracle_tree_value(tree, *right, x)
            } else {
                oracle_tree_value(tree, *left, x)
            }
        }
    }
}

pub const VOCAB: &[&str] = &[
    "the", "a", "of", "to", "and", "in", "is", "that", "it", "for", "people", "believe", "many",
    "world", "benefit", "argue", "however", "this", "essay", "will", "explain", "why", "number",
    "arguments", "favour", "stance", "life", "one's", "concerns", "today", "myriad", "upsurge",
];

pub fn random_words(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n).map(|_| VOCAB.choose(rng).unwrap().to_string()).collect()
}

pub fn mutate_word(rng: &mut ChaCha8Rng, w: &str) -> String {
    let mut chars: Vec<char> = w.chars().collect();
    let pos = rng.gen_range(0..chars.len());
    match rng.gen_range(0..3) {
        0 => chars[pos] = (b'a' + rng.gen_range(0..26u8)) as char,
        1 if chars.len() > 1 => {
            chars.remove(pos);
        }
        _ => chars.insert(pos, (b'a' + rng.gen_range(0..26u8)) as char),
    }
    chars.into_iter().collect()
}

/// Registry of `k` single-sentence gap-free templates of 6..=20 random words.
pub fn random_registry(rng: &mut ChaCha8Rng, k: usize) -> Registry {
    let mut templates = Vec::new();
    while templates.len() < k {
        let len = rng.gen_range(6..=20);
        let text = random_words(rng, len).join(" ");
        templates.push(Template {
            id: format!("r{}", templates.len()),
            text,
            source: None,
        });
    }
    Registry::new(templates, 5).unwrap()
}

/// Random words with occasional (lightly mutated) sub-template excerpts spliced in.
pub fn random_response(rng: &mut ChaCha8Rng, registry: &Registry, len: usize) -> Vec<String> {
    let mut out = Vec::new();
    while out.len() < len {
        if rng.gen_bool(0.3) && !registry.subtemplates().is_empty() {
            let sub = registry.subtemplates().choose(rng).unwrap();
            let toks: Vec<&str> = sub.text.split(' ').collect();
            let a = rng.gen_range(0..toks.len());
            let b = rng.gen_range(a..toks.len()) + 1;
            for t in &toks[a..b] {
                if rng.gen_bool(0.15) {
                    out.push(mutate_word(rng, t));
                } else {
                    out.push(t.to_string());
                }
            }
        } else {
            let k = rng.gen_range(1..6);
            out.extend(random_words(rng, k));
        }
    }
    out.truncate(len);
    out
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

//! Fuzzy sub-template matching and exact prompt matching over token windows.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::text::{levenshtein_bounded, tokenize, BitPattern, TokenizedText};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchParams {
    pub window_tokens: usize,
    pub stride_tokens: usize,
    pub max_norm_distance: f64,
    pub min_prompt_match_tokens: usize,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams {
            window_tokens: 8,
            stride_tokens: 1,
            max_norm_distance: 0.25,
            min_prompt_match_tokens: 4,
        }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_tokens == 0 || self.stride_tokens == 0 || self.min_prompt_match_tokens == 0 {
            return Err(Error::InvalidParams(
                "window, stride and min prompt match must be positive".into(),
            ));
        }
        if self.stride_tokens > self.window_tokens {
            return Err(Error::InvalidParams(format!(
                "stride {} exceeds window {}",
                self.stride_tokens, self.window_tokens
            )));
        }
        if !(0.0..=1.0).contains(&self.max_norm_distance) {
            return Err(Error::InvalidParams(format!(
                "max_norm_distance {} outside [0, 1]",
                self.max_norm_distance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SourceKind {
    Template,
    Prompt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSpan {
    pub kind: SourceKind,
    /// `"<template id>#<sub-template index>"` for templates, the prompt id for prompts.
    pub source_id: String,
    pub token_start: usize,
    pub token_end: usize,
    pub score: f64,
}

pub fn subtemplate_source_id(template_id: &str, index: usize) -> String {
    format!("{template_id}#{index}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageMask {
    pub response_id: String,
    pub n_tokens: usize,
    pub template_covered: Vec<bool>,
    pub prompt_covered: Vec<bool>,
    pub spans: Vec<MatchSpan>,
}

/// Window start offsets over `n` tokens: every `stride`-th start plus a final
/// window flush with the end so trailing tokens are always examined.
pub fn window_starts(n: usize, window: usize, stride: usize) -> Vec<usize> {
    if window == 0 || n < window {
        return Vec::new();
    }
    let last = n - window;
    let mut starts: Vec<usize> = (0..=last).step_by(stride.max(1)).collect();
    if starts.last() != Some(&last) {
        starts.push(last);
    }
    starts
}

/// Largest edit count `k` such that `k / len` stays within `max_norm`,
/// evaluated with the same float division used for the accept test.
fn distance_bound(len: usize, max_norm: f64) -> usize {
    let mut k = ((max_norm * len as f64).floor() as usize).min(len);
    while k < len && ((k + 1) as f64 / len as f64) <= max_norm {
        k += 1;
    }
    while k > 0 && (k as f64 / len as f64) > max_norm {
        k -= 1;
    }
    k
}

const BINS: usize = 64;

fn bag_bin(c: char) -> usize {
    match c {
        'a'..='z' => c as usize - 'a' as usize,
        '0'..='9' => 26 + (c as usize - '0' as usize),
        ' ' => 36,
        _ => 37,
    }
}

fn gram_bin(a: char, b: char) -> usize {
    let h = (a as u32).wrapping_mul(0x9E37_79B1) ^ (b as u32).wrapping_mul(0x85EB_CA77);
    (h.wrapping_mul(0x2545_F491) >> 26) as usize
}

// At most 64 * 255, so wrapping adds are exact; they also keep the loop free
// of overflow-check branches so it vectorizes.
fn l1(a: &[u8; BINS], b: &[u8; BINS]) -> usize {
    a.iter()
        .zip(b)
        .fold(0u32, |sum, (x, y)| sum.wrapping_add(u32::from(x.abs_diff(*y)))) as usize
}

/// A window's characters plus count filters. Counts are only kept for windows
/// short enough that no `u8` bin can overflow.
struct Window {
    chars: Vec<char>,
    counts: Option<Box<([u8; BINS], [u8; BINS])>>,
}

impl Window {
    fn new(tokens: &[&str]) -> Self {
        let chars: Vec<char> = tokens.join(" ").chars().collect();
        let counts = (chars.len() <= u8::MAX as usize).then(|| {
            let mut bag = [0u8; BINS];
            for &c in &chars {
                bag[bag_bin(c)] += 1;
            }
            let mut grams = [0u8; BINS];
            for pair in chars.windows(2) {
                grams[gram_bin(pair[0], pair[1])] += 1;
            }
            Box::new((bag, grams))
        });
        Window { chars, counts }
    }

    /// False only when the strings cannot be within `bound` edits.
    ///
    /// Characters: each edit moves at most one symbol in or out of a bin, so
    /// half of `L1 + |len difference|` is a lower bound (pooling symbols into
    /// bins only coarsens it). Bigrams: each edit destroys at most two bigram
    /// occurrences, so at least `longest - 1 - 2 * bound` of them are shared;
    /// hash collisions only raise the shared count.
    fn may_match(&self, other: &Window, bound: usize) -> bool {
        let (la, lb) = (self.chars.len(), other.chars.len());
        if la.abs_diff(lb) > bound {
            return false;
        }
        let (Some(a), Some(b)) = (&self.counts, &other.counts) else {
            return true;
        };
        if (l1(&a.0, &b.0) + la.abs_diff(lb)) / 2 > bound {
            return false;
        }
        let longest = la.max(lb);
        let need = longest.saturating_sub(1).saturating_sub(2 * bound);
        if need == 0 {
            return true;
        }
        let total = la.saturating_sub(1) + lb.saturating_sub(1);
        (total - l1(&a.1, &b.1)) / 2 >= need
    }
}

struct SubWindow {
    window: Window,
    pattern: Option<BitPattern>,
}

impl SubWindow {
    fn build(tokens: &[&str], w: usize) -> Vec<SubWindow> {
        (0..=tokens.len() - w)
            .map(|s| {
                let window = Window::new(&tokens[s..s + w]);
                let pattern = (window.chars.len() <= 64).then(|| BitPattern::new(&window.chars));
                SubWindow { window, pattern }
            })
            .collect()
    }
}

struct CompiledSub {
    source_id: String,
    tokens: Vec<String>,
    /// Windows of `min(window_tokens, tokens.len())` tokens.
    windows: Vec<SubWindow>,
}

/// Sub-template windows precomputed once for a registry and parameter set.
pub struct TemplateMatcher {
    params: MatchParams,
    subs: Vec<CompiledSub>,
    bounds: Vec<usize>,
}

impl TemplateMatcher {
    pub fn new(registry: &Registry, params: &MatchParams) -> Self {
        let subs = registry
            .subtemplates()
            .iter()
            .filter_map(|sub| {
                let tokens: Vec<String> = tokenize(&sub.text)
                    .tokens
                    .into_iter()
                    .map(|t| t.text)
                    .collect();
                if tokens.is_empty() {
                    return None;
                }
                let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
                let windows = SubWindow::build(&refs, params.window_tokens.min(tokens.len()));
                Some(CompiledSub {
                    source_id: subtemplate_source_id(&sub.template_id, sub.index),
                    tokens,
                    windows,
                })
            })
            .collect();
        let bounds = (0..=256).map(|len| distance_bound(len, params.max_norm_distance)).collect();
        TemplateMatcher {
            params: *params,
            subs,
            bounds,
        }
    }

    pub fn params(&self) -> &MatchParams {
        &self.params
    }

    /// See [`match_templates`].
    pub fn match_response(&self, response: &TokenizedText) -> Vec<MatchSpan> {
        let params = &self.params;
        let resp_tokens = response.token_texts();
        let n = resp_tokens.len();
        if n == 0 {
            return Vec::new();
        }
        let mut response_windows: HashMap<usize, Vec<(usize, Window)>> = HashMap::new();
        let mut spans = Vec::new();

        for sub in &self.subs {
            let full_w = params.window_tokens.min(sub.tokens.len());
            let w = full_w.min(n);
            let short_windows;
            let sub_windows = if w == full_w {
                &sub.windows
            } else {
                let refs: Vec<&str> = sub.tokens.iter().map(String::as_str).collect();
                short_windows = SubWindow::build(&refs, w);
                &short_windows
            };
            let resp_windows = response_windows.entry(w).or_insert_with(|| {
                window_starts(n, w, params.stride_tokens)
                    .into_iter()
                    .map(|s| (s, Window::new(&resp_tokens[s..s + w])))
                    .collect()
            });

            let mut accepted: Vec<(usize, usize, f64)> = Vec::new();
            for (start, rw) in resp_windows.iter() {
                if let Some(score) = best_window_score(rw, sub_windows, params.max_norm_distance, &self.bounds) {
                    accepted.push((*start, start + w, score));
                }
            }
            merge_accepted(&sub.source_id, accepted, &mut spans);
        }
        spans
    }
}

/// Minimum normalized distance from `rw` to any sub-template window, if any is within `max_norm`.
/// `bounds[len]` caches `distance_bound(len, max_norm)`.
fn best_window_score(rw: &Window, sub_windows: &[SubWindow], max_norm: f64, bounds: &[usize]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for sw in sub_windows {
        let len = rw.chars.len().max(sw.window.chars.len());
        if len == 0 {
            return Some(0.0);
        }
        // only strictly better scores matter once one window is accepted
        let bound = match best {
            Some(b) if b < max_norm => distance_bound(len, b),
            _ => bounds.get(len).copied().unwrap_or_else(|| distance_bound(len, max_norm)),
        };
        if !rw.may_match(&sw.window, bound) {
            continue;
        }
        let d = match &sw.pattern {
            Some(p) => Some(p.distance(&rw.chars)).filter(|&d| d <= bound),
            None => levenshtein_bounded(&rw.chars, &sw.window.chars, bound),
        };
        if let Some(d) = d {
            let score = d as f64 / len as f64;
            best = Some(best.map_or(score, |b: f64| b.min(score)));
            if d == 0 {
                break;
            }
        }
    }
    best
}

/// Merge accepted windows (sorted by start) that share at least one token.
fn merge_accepted(source_id: &str, accepted: Vec<(usize, usize, f64)>, spans: &mut Vec<MatchSpan>) {
    let mut push = |(s, e, score): (usize, usize, f64)| {
        spans.push(MatchSpan {
            kind: SourceKind::Template,
            source_id: source_id.to_string(),
            token_start: s,
            token_end: e,
            score,
        })
    };
    let mut current: Option<(usize, usize, f64)> = None;
    for (s, e, score) in accepted {
        current = match current {
            Some((cs, ce, cscore)) if s < ce => Some((cs, ce.max(e), cscore.min(score))),
            Some(done) => {
                push(done);
                Some((s, e, score))
            }
            None => Some((s, e, score)),
        };
    }
    if let Some(done) = current {
        push(done);
    }
}

/// Fuzzy-match every response window against every equal-length window of
/// each sub-template and merge overlapping accepted windows per sub-template.
///
/// The window length used for a (response, sub-template) pair is the smallest
/// of `window_tokens`, the sub-template length and the response length.
/// Spans come out in registry sub-template order, then by `token_start`.
pub fn match_templates(
    response: &TokenizedText,
    registry: &Registry,
    params: &MatchParams,
) -> Vec<MatchSpan> {
    TemplateMatcher::new(registry, params).match_response(response)
}

/// Every maximal run of identical tokens shared by response and prompt with at
/// least `min_prompt_match_tokens` tokens, as response spans sorted by position.
pub fn match_prompt(
    response: &TokenizedText,
    prompt: &TokenizedText,
    prompt_id: &str,
    params: &MatchParams,
) -> Vec<MatchSpan> {
    let resp = response.token_texts();
    let prm = prompt.token_texts();
    let mut positions: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, t) in prm.iter().enumerate() {
        positions.entry(t).or_default().push(j);
    }

    let mut runs: Vec<(usize, usize)> = Vec::new();
    for (i, tok) in resp.iter().enumerate() {
        let Some(starts) = positions.get(tok) else {
            continue;
        };
        for &j in starts {
            // only start runs that cannot be extended to the left
            if i > 0 && j > 0 && resp[i - 1] == prm[j - 1] {
                continue;
            }
            let len = resp[i..]
                .iter()
                .zip(&prm[j..])
                .take_while(|(a, b)| a == b)
                .count();
            if len >= params.min_prompt_match_tokens {
                runs.push((i, i + len));
            }
        }
    }
    runs.sort_unstable();
    runs.dedup();
    runs.into_iter()
        .map(|(s, e)| MatchSpan {
            kind: SourceKind::Prompt,
            source_id: prompt_id.to_string(),
            token_start: s,
            token_end: e,
            score: 0.0,
        })
        .collect()
}

pub fn build_mask(
    response_id: &str,
    response: &TokenizedText,
    template_spans: Vec<MatchSpan>,
    prompt_spans: Vec<MatchSpan>,
) -> CoverageMask {
    let n = response.len();
    let mut template_covered = vec![false; n];
    let mut prompt_covered = vec![false; n];
    let mut spans = template_spans;
    spans.extend(prompt_spans);
    for span in &spans {
        let target = match span.kind {
            SourceKind::Template => &mut template_covered,
            SourceKind::Prompt => &mut prompt_covered,
        };
        let end = span.token_end.min(n);
        for flag in target.iter_mut().take(end).skip(span.token_start) {
            *flag = true;
        }
    }
    CoverageMask {
        response_id: response_id.to_string(),
        n_tokens: n,
        template_covered,
        prompt_covered,
        spans,
    }
}

#[derive(Serialize)]
struct Explanation<'a> {
    response_id: &'a str,
    spans: &'a [MatchSpan],
}

/// One JSONL line of match evidence for a response.
pub fn explanation_line(mask: &CoverageMask) -> Result<String> {
    Ok(serde_json::to_string(&Explanation {
        response_id: &mask.response_id,
        spans: &mask.spans,
    })?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Template;

    fn registry(texts: &[&str]) -> Registry {
        let templates = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Template {
                id: format!("t{i}"),
                text: t.to_string(),
                source: None,
            })
            .collect();
        Registry::new(templates, 5).unwrap()
    }

    const SUB: &str = "there are a number of arguments in favour of my stance";

    #[test]
    fn identical_response_is_fully_covered() {
        let reg = registry(&[SUB]);
        let resp = tokenize(SUB);
        let spans = match_templates(&resp, &reg, &MatchParams::default());
        assert_eq!(spans.len(), 1);
        assert_eq!((spans[0].token_start, spans[0].token_end), (0, resp.len()));
        assert_eq!(spans[0].score, 0.0);
        assert_eq!(spans[0].source_id, "t0#0");
    }

    #[test]
    fn empty_registry_yields_nothing() {
        let resp = tokenize(SUB);
        assert!(match_templates(&resp, &Registry::empty(), &MatchParams::default()).is_empty());
    }

    #[test]
    fn short_response_compared_whole() {
        let reg = registry(&[SUB]);
        let resp = tokenize("number of arguments in favour");
        let spans = match_templates(&resp, &reg, &MatchParams::default());
        assert_eq!(spans.len(), 1);
        assert_eq!((spans[0].token_start, spans[0].token_end), (0, 5));
    }

    #[test]
    fn small_edits_still_match() {
        let reg = registry(&[SUB]);
        let resp = tokenize("Honestly, there are a numbr of argumets in favor of my stance today.");
        let spans = match_templates(&resp, &reg, &MatchParams::default());
        assert_eq!(spans.len(), 1);
        assert!(spans[0].score > 0.0 && spans[0].score <= 0.25);
        assert_eq!((spans[0].token_start, spans[0].token_end), (1, 12));
    }

    #[test]
    fn window_starts_cover_tail() {
        assert_eq!(window_starts(10, 4, 3), vec![0, 3, 6]);
        assert_eq!(window_starts(11, 4, 3), vec![0, 3, 6, 7]);
        assert_eq!(window_starts(3, 4, 1), Vec::<usize>::new());
        assert_eq!(window_starts(4, 4, 2), vec![0]);
    }

    #[test]
    fn distance_bound_agrees_with_division() {
        for len in 1..300 {
            for t in [0.0, 0.1, 0.25, 0.3333, 0.5, 1.0] {
                let k = distance_bound(len, t);
                assert!(k as f64 / len as f64 <= t);
                if k < len {
                    assert!((k + 1) as f64 / len as f64 > t);
                }
            }
        }
    }

    #[test]
    fn prompt_verbatim_repeat() {
        let prompt = tokenize("Some people believe that cities should invest more in public parks than roads today");
        assert_eq!(prompt.len(), 14);
        let twelve = prompt.token_texts()[..12].join(" ");
        let resp = tokenize(&format!("I think {twelve} and more."));
        let spans = match_prompt(&resp, &prompt, "p1", &MatchParams::default());
        assert_eq!(spans.len(), 1);
        assert_eq!((spans[0].token_start, spans[0].token_end), (2, 14));
        assert_eq!(spans[0].kind, SourceKind::Prompt);
    }

    #[test]
    fn prompt_no_shared_run() {
        let prompt = tokenize("alpha beta gamma delta epsilon");
        let resp = tokenize("alpha beta gamma zeta delta epsilon alpha");
        assert!(match_prompt(&resp, &prompt, "p", &MatchParams::default()).is_empty());
    }

    #[test]
    fn mask_examples() {
        let resp = tokenize("a b c d e f g h i j");
        let empty = build_mask("r", &resp, vec![], vec![]);
        assert!(empty.template_covered.iter().chain(&empty.prompt_covered).all(|f| !f));
        let span = MatchSpan {
            kind: SourceKind::Template,
            source_id: "t#0".into(),
            token_start: 0,
            token_end: 5,
            score: 0.1,
        };
        let mask = build_mask("r", &resp, vec![span], vec![]);
        assert_eq!(mask.template_covered.iter().filter(|f| **f).count(), 5);
        assert!(mask.prompt_covered.iter().all(|f| !f));
    }

    #[test]
    fn explanation_format() {
        let resp = tokenize(SUB);
        let mask = build_mask("r9", &resp, match_templates(&resp, &registry(&[SUB]), &MatchParams::default()), vec![]);
        let line = explanation_line(&mask).unwrap();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["response_id"], "r9");
        assert_eq!(v["spans"][0]["kind"], "TEMPLATE");
        assert_eq!(v["spans"][0]["source_id"], "t0#0");
        assert_eq!(v["spans"][0]["token_end"], 11);
    }

    #[test]
    fn params_validation() {
        assert!(MatchParams::default().validate().is_ok());
        let bad = MatchParams {
            stride_tokens: 9,
            ..MatchParams::default()
        };
        assert!(bad.validate().is_err());
    }
}

mod common;

use proptest::prelude::*;
use rand::Rng;

use common::*;
use tmpl_detect::matcher::{build_mask, match_prompt, match_templates, MatchParams, SourceKind};
use tmpl_detect::registry::Template;
use tmpl_detect::text::tokenize;

fn tokens_of(words: &[String]) -> tmpl_detect::text::TokenizedText {
    let t = tokenize(&words.join(" "));
    assert_eq!(t.len(), words.len());
    t
}

#[test]
fn template_matches_equal_bruteforce_oracle() {
    let mut r = rng(11);
    let registry = random_registry(&mut r, 5);
    let param_sets = [
        MatchParams::default(),
        MatchParams { window_tokens: 5, stride_tokens: 2, max_norm_distance: 0.35, ..Default::default() },
        MatchParams { window_tokens: 12, stride_tokens: 7, max_norm_distance: 0.1, ..Default::default() },
    ];
    for params in &param_sets {
        for _ in 0..50 {
            let len = r.gen_range(1..80);
            let words = random_response(&mut r, &registry, len);
            let resp = tokens_of(&words);
            let got = match_templates(&resp, &registry, params);
            let want = oracle_match_templates(&words, &registry, params);
            assert_eq!(got, want, "params {params:?}, response {:?}", words.join(" "));
        }
    }
}

#[test]
fn prompt_matches_equal_lcs_oracle() {
    let mut r = rng(5);
    for _ in 0..200 {
        let n = r.gen_range(0..60);
        let m = r.gen_range(0..40);
        // tiny vocabulary forces many shared runs
        let resp: Vec<String> = (0..n).map(|_| ["a", "b", "c"][r.gen_range(0..3)].to_string()).collect();
        let prompt: Vec<String> = (0..m).map(|_| ["a", "b", "c"][r.gen_range(0..3)].to_string()).collect();
        let min = r.gen_range(1..6);
        let params = MatchParams { min_prompt_match_tokens: min, ..Default::default() };
        let got = match_prompt(&tokenize(&resp.join(" ")), &tokenize(&prompt.join(" ")), "p", &params);
        assert_eq!(got, oracle_match_prompt(&resp, &prompt, "p", min));
    }
}

#[test]
fn mask_equals_interval_stabbing() {
    let mut r = rng(9);
    for _ in 0..300 {
        let n = r.gen_range(0..50);
        let resp = tokenize(&vec!["w"; n].join(" "));
        let mut spans = Vec::new();
        for _ in 0..r.gen_range(0..8) {
            if n == 0 {
                break;
            }
            let s = r.gen_range(0..n);
            let e = r.gen_range(s + 1..=n);
            let kind = if r.gen_bool(0.5) { SourceKind::Template } else { SourceKind::Prompt };
            spans.push(tmpl_detect::MatchSpan { kind, source_id: "x".into(), token_start: s, token_end: e, score: 0.0 });
        }
        let (t, p): (Vec<_>, Vec<_>) = spans.iter().cloned().partition(|s| s.kind == SourceKind::Template);
        let mask = build_mask("r", &resp, t, p);
        assert_eq!(mask.template_covered, oracle_coverage(n, &spans, SourceKind::Template));
        assert_eq!(mask.prompt_covered, oracle_coverage(n, &spans, SourceKind::Prompt));
    }
}

#[test]
fn upsurge_template_with_filled_gaps_is_covered() {
    let registry = fixture_registry();
    let template = &registry.templates()[0];
    let text = template.text.replace("{{gap}}", "remote work");
    let resp = tokenize(&text);
    let mask = build_mask("r", &resp, match_templates(&resp, &registry, &MatchParams::default()), vec![]);
    let uncovered = mask.template_covered.iter().filter(|c| !**c).count();
    assert!(uncovered <= 8, "{uncovered} tokens uncovered");
}

fn coverage(words: &[String], registry: &tmpl_detect::Registry, params: &MatchParams) -> Vec<bool> {
    let resp = tokens_of(words);
    build_mask("r", &resp, match_templates(&resp, registry, params), vec![]).template_covered
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn coverage_monotone_in_threshold(seed in 0u64..10_000, lo in 0.0f64..0.5, extra in 0.0f64..0.5) {
        let mut r = rng(seed);
        let registry = random_registry(&mut r, 3);
        let len = r.gen_range(5..60);
        let words = random_response(&mut r, &registry, len);
        let tight = MatchParams { max_norm_distance: lo, ..Default::default() };
        let loose = MatchParams { max_norm_distance: (lo + extra).min(1.0), ..Default::default() };
        let a = coverage(&words, &registry, &tight);
        let b = coverage(&words, &registry, &loose);
        for i in 0..a.len() {
            prop_assert!(!a[i] || b[i]);
        }
    }

    #[test]
    fn adding_template_never_reduces_coverage(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let registry = random_registry(&mut r, 3);
        let len = r.gen_range(5..60);
        let words = random_response(&mut r, &registry, len);
        let more = registry
            .with_template(Template { id: "extra".into(), text: random_words(&mut r, 12).join(" "), source: None })
            .unwrap();
        let params = MatchParams::default();
        let a = coverage(&words, &registry, &params);
        let b = coverage(&words, &more, &params);
        for i in 0..a.len() {
            prop_assert!(!a[i] || b[i]);
        }
    }

    #[test]
    fn matching_is_deterministic(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let registry = random_registry(&mut r, 4);
        let len = r.gen_range(1..50);
        let words = random_response(&mut r, &registry, len);
        let resp = tokens_of(&words);
        let params = MatchParams::default();
        prop_assert_eq!(match_templates(&resp, &registry, &params), match_templates(&resp, &registry, &params));
    }

    #[test]
    fn stride_one_covers_every_close_window(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let registry = random_registry(&mut r, 2);
        let len = r.gen_range(8..40);
        let words = random_response(&mut r, &registry, len);
        let params = MatchParams::default();
        let covered = coverage(&words, &registry, &params);
        for sub in registry.subtemplates() {
            let st: Vec<&str> = sub.text.split(' ').collect();
            let w = params.window_tokens.min(st.len()).min(words.len());
            for s in 0..=words.len() - w {
                let rw = words[s..s + w].join(" ");
                let close = (0..=st.len() - w).any(|t| {
                    let sw = st[t..t + w].join(" ");
                    let len = rw.chars().count().max(sw.chars().count());
                    dp_levenshtein(&rw, &sw) as f64 / len as f64 <= params.max_norm_distance
                });
                if close {
                    prop_assert!(covered[s..s + w].iter().all(|c| *c));
                }
            }
        }
    }
}

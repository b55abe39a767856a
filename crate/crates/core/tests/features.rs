mod common;

use proptest::prelude::*;
use rand::Rng;

use common::*;
use tmpl_detect::features::{extract_features, FeatureVector};
use tmpl_detect::matcher::{build_mask, CoverageMask, MatchParams, MatchSpan, SourceKind};
use tmpl_detect::pipeline::FeatureExtractor;
use tmpl_detect::text::tokenize;
use tmpl_detect::Registry;

fn random_mask(r: &mut rand_chacha::ChaCha8Rng) -> CoverageMask {
    let n = r.gen_range(0..200);
    let pt = r.gen_range(0.0..1.0);
    let pp = r.gen_range(0.0..1.0);
    CoverageMask {
        response_id: "m".into(),
        n_tokens: n,
        template_covered: (0..n).map(|_| r.gen_bool(pt)).collect(),
        prompt_covered: (0..n).map(|_| r.gen_bool(pp)).collect(),
        spans: Vec::new(),
    }
}

fn check_against_counter(mask: &CoverageMask, f: &FeatureVector) {
    let (nt, np, na) = oracle_counts(&mask.template_covered, &mask.prompt_covered);
    let n = mask.n_tokens as f64;
    let pct = |c: u64| if mask.n_tokens == 0 { 0.0 } else { 100.0 * c as f64 / n };
    assert_eq!(f.num_non_template_tokens, nt);
    assert_eq!(f.num_non_prompt_tokens, np);
    assert_eq!(f.num_authentic_tokens, na);
    assert_eq!(f.pct_non_template_tokens, pct(nt));
    assert_eq!(f.pct_non_prompt_tokens, pct(np));
    assert_eq!(f.pct_authentic_tokens, pct(na));
}

#[test]
fn features_equal_naive_counter() {
    let mut r = rng(77);
    for _ in 0..1000 {
        let mask = random_mask(&mut r);
        let f = extract_features(&mask);
        check_against_counter(&mask, &f);
        assert!(f.num_authentic_tokens <= f.num_non_template_tokens.min(f.num_non_prompt_tokens));
    }
}

#[test]
fn empty_registry_and_prompt_is_fully_authentic() {
    let ex = FeatureExtractor::new(&Registry::empty(), &MatchParams::default()).unwrap();
    let mut r = rng(3);
    for _ in 0..20 {
        let len = r.gen_range(1..60);
        let words = random_words(&mut r, len);
        let mask = ex.mask("r", &words.join(" "), &tokenize(""), "p");
        assert_eq!(extract_features(&mask).pct_authentic_tokens, 100.0);
    }
}

fn span(kind: SourceKind, s: usize, e: usize) -> MatchSpan {
    MatchSpan { kind, source_id: "s".into(), token_start: s, token_end: e, score: 0.0 }
}

fn spans_strategy() -> impl Strategy<Value = (usize, Vec<(bool, usize, usize)>)> {
    (1usize..40).prop_flat_map(|n| {
        (Just(n), proptest::collection::vec((any::<bool>(), 0..n, 1..=n), 0..10))
    })
}

proptest! {
    #[test]
    fn order_and_multiplicity_do_not_matter((n, raw) in spans_strategy()) {
        let resp = tokenize(&vec!["x"; n].join(" "));
        let spans: Vec<MatchSpan> = raw
            .iter()
            .filter(|(_, s, e)| s < e)
            .map(|&(t, s, e)| span(if t { SourceKind::Template } else { SourceKind::Prompt }, s, e))
            .collect();
        let split = |v: &[MatchSpan]| -> (Vec<MatchSpan>, Vec<MatchSpan>) {
            v.iter().cloned().partition(|s| s.kind == SourceKind::Template)
        };
        let (t, p) = split(&spans);
        let base = extract_features(&build_mask("r", &resp, t, p));

        let mut shuffled: Vec<MatchSpan> = spans.iter().rev().cloned().collect();
        shuffled.extend(spans.iter().cloned());
        let (t2, p2) = split(&shuffled);
        prop_assert_eq!(base, extract_features(&build_mask("r", &resp, t2, p2)));
    }

    #[test]
    fn adding_spans_never_increases_features((n, raw) in spans_strategy(), extra in (any::<bool>(), 0usize..40, 1usize..=40)) {
        let resp = tokenize(&vec!["x"; n].join(" "));
        let to_span = |&(t, s, e): &(bool, usize, usize)| span(if t { SourceKind::Template } else { SourceKind::Prompt }, s, e);
        let spans: Vec<MatchSpan> = raw.iter().filter(|(_, s, e)| s < e).map(to_span).collect();
        let (t, p): (Vec<_>, Vec<_>) = spans.iter().cloned().partition(|s| s.kind == SourceKind::Template);
        let before = extract_features(&build_mask("r", &resp, t.clone(), p.clone())).to_array();
        let (s, e) = (extra.1.min(n - 1), extra.2.min(n));
        prop_assume!(s < e);
        let (mut t, mut p) = (t, p);
        if extra.0 { t.push(span(SourceKind::Template, s, e)) } else { p.push(span(SourceKind::Prompt, s, e)) }
        let after = extract_features(&build_mask("r", &resp, t, p)).to_array();
        for i in 0..6 {
            prop_assert!(after[i] <= before[i]);
        }
    }
}

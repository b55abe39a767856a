//! Normalization, tokenization and edit distance shared by the rest of the crate.

use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// A normalized token with character offsets into the original text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    /// Inclusive start, counted in `char`s of the original text.
    pub start: usize,
    /// Exclusive end, counted in `char`s of the original text.
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedText {
    pub original: String,
    pub tokens: Vec<Token>,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token_texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }
}

fn fold_apostrophe(c: char) -> char {
    match c {
        '\u{2018}' | '\u{2019}' | '\u{201B}' | '\u{02BC}' | '\u{2032}' => '\'',
        other => other,
    }
}

fn fold_piece(piece: &str, out: &mut String) {
    for c in piece.nfkc() {
        for l in c.to_lowercase() {
            out.push(fold_apostrophe(l));
        }
    }
}

/// Compatibility-normalize, lowercase, fold apostrophe variants and collapse whitespace.
pub fn normalize(text: &str) -> String {
    let mut folded = String::with_capacity(text.len());
    fold_piece(text, &mut folded);
    let mut out = String::with_capacity(folded.len());
    for word in folded.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

#[inline]
fn is_token_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\''
}

/// Split `text` into tokens: maximal runs of letters, digits and apostrophes
/// in the normalized text. Combining marks stay attached to the run they follow.
///
/// Normalization is applied per cluster (a base character plus trailing
/// combining marks) so each token can be mapped back to original offsets.
pub fn tokenize(text: &str) -> TokenizedText {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut cur_start = 0usize;
    let mut cur_end = 0usize;
    let mut piece = String::new();
    let mut folded = String::new();

    let mut i = 0;
    while i < chars.len() {
        let cluster_start = i;
        i += 1;
        while i < chars.len() && is_combining_mark(chars[i]) {
            i += 1;
        }
        piece.clear();
        piece.extend(&chars[cluster_start..i]);
        folded.clear();
        fold_piece(&piece, &mut folded);

        for c in folded.chars() {
            let joins = is_token_char(c) || (!current.is_empty() && is_combining_mark(c));
            if joins {
                if current.is_empty() {
                    cur_start = cluster_start;
                }
                current.push(c);
                cur_end = i;
            } else if !current.is_empty() {
                tokens.push(Token {
                    text: std::mem::take(&mut current),
                    start: cur_start,
                    end: cur_end,
                });
            }
        }
    }
    if !current.is_empty() {
        tokens.push(Token {
            text: current,
            start: cur_start,
            end: cur_end,
        });
    }
    TokenizedText {
        original: text.to_string(),
        tokens,
    }
}

/// Character-level Levenshtein distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

pub fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return long.len();
    }
    if short.len() <= 64 {
        return BitPattern::new(short).distance(long);
    }
    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (i, &lc) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &sc) in short.iter().enumerate() {
            let sub = diag + usize::from(lc != sc);
            diag = row[j + 1];
            row[j + 1] = sub.min(diag + 1).min(row[j] + 1);
        }
    }
    row[short.len()]
}

/// Levenshtein distance if it is at most `bound`, otherwise `None`.
pub fn levenshtein_bounded(a: &[char], b: &[char], bound: usize) -> Option<usize> {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if long.len() - short.len() > bound {
        return None;
    }
    if short.is_empty() {
        return Some(long.len());
    }
    if short.len() <= 64 {
        let d = BitPattern::new(short).distance(long);
        return (d <= bound).then_some(d);
    }
    banded(short, long, bound)
}

// Ukkonen band of width 2*bound+1 around the diagonal with early exit.
fn banded(short: &[char], long: &[char], bound: usize) -> Option<usize> {
    const INF: usize = usize::MAX / 2;
    let n = short.len();
    let mut prev = vec![INF; n + 1];
    let mut cur = vec![INF; n + 1];
    for (j, slot) in prev.iter_mut().enumerate().take(bound.min(n) + 1) {
        *slot = j;
    }
    for i in 1..=long.len() {
        let lo = i.saturating_sub(bound);
        let hi = (i + bound).min(n);
        cur.iter_mut().for_each(|v| *v = INF);
        if lo == 0 {
            cur[0] = i;
        }
        let mut row_min = if lo == 0 { i } else { INF };
        for j in lo.max(1)..=hi {
            let sub = prev[j - 1] + usize::from(long[i - 1] != short[j - 1]);
            let v = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
            cur[j] = v;
            row_min = row_min.min(v);
        }
        if row_min > bound {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let d = prev[n];
    (d <= bound).then_some(d)
}

/// Precomputed match masks for Myers' bit-parallel edit distance (pattern ≤ 64 chars).
#[derive(Debug, Clone)]
pub struct BitPattern {
    ascii: [u64; 128],
    other: Vec<(char, u64)>,
    len: usize,
}

impl BitPattern {
    pub fn new(pattern: &[char]) -> Self {
        assert!(pattern.len() <= 64, "bit pattern limited to 64 chars");
        let mut ascii = [0u64; 128];
        let mut other: Vec<(char, u64)> = Vec::new();
        for (i, &c) in pattern.iter().enumerate() {
            let bit = 1u64 << i;
            if (c as u32) < 128 {
                ascii[c as usize] |= bit;
            } else if let Some(e) = other.iter_mut().find(|(k, _)| *k == c) {
                e.1 |= bit;
            } else {
                other.push((c, bit));
            }
        }
        BitPattern {
            ascii,
            other,
            len: pattern.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    fn peq(&self, c: char) -> u64 {
        if (c as u32) < 128 {
            self.ascii[c as usize]
        } else {
            self.other
                .iter()
                .find(|(k, _)| *k == c)
                .map_or(0, |(_, m)| *m)
        }
    }

    /// Global edit distance between the pattern and `text`.
    pub fn distance(&self, text: &[char]) -> usize {
        let m = self.len;
        if m == 0 {
            return text.len();
        }
        let last = 1u64 << (m - 1);
        let mut pv = if m == 64 { !0u64 } else { (1u64 << m) - 1 };
        let mut mv = 0u64;
        let mut score = m;
        for &c in text {
            let eq = self.peq(c);
            let xv = eq | mv;
            let xh = (((eq & pv).wrapping_add(pv)) ^ pv) | eq;
            let mut ph = mv | !(xh | pv);
            let mut mh = pv & xh;
            if ph & last != 0 {
                score += 1;
            } else if mh & last != 0 {
                score -= 1;
            }
            // Global alignment: the top row grows by one per text char.
            ph = (ph << 1) | 1;
            mh <<= 1;
            pv = mh | !(xv | ph);
            mv = ph & xv;
        }
        score
    }
}

/// `levenshtein(a, b) / max(len(a), len(b))`, or 0 when both are empty.
pub fn normalized_distance(a: &str, b: &str) -> f64 {
    let la = a.chars().count();
    let lb = b.chars().count();
    let m = la.max(lb);
    if m == 0 {
        return 0.0;
    }
    levenshtein(a, b) as f64 / m as f64
}

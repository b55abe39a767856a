//! End-to-end detection: text in, detection record out. Also corpus I/O and
//! the seeded synthetic corpus generator used as ground truth in tests.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    collapse_label, predict_proba, BinaryLabel, ForestModel, TernaryLabel,
};
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureVector};
use crate::matcher::{build_mask, match_prompt, CoverageMask, MatchParams, MatchSpan, TemplateMatcher};
use crate::registry::{Registry, GAP_MARKER};
use crate::text::{tokenize, TokenizedText};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub text: String,
}

/// Prompts indexed by id, pre-tokenized.
#[derive(Debug, Clone, Default)]
pub struct PromptSet {
    prompts: Vec<Prompt>,
    index: HashMap<String, (usize, TokenizedText)>,
}

impl PromptSet {
    pub fn new(prompts: Vec<Prompt>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, p) in prompts.iter().enumerate() {
            if index.insert(p.id.clone(), (i, tokenize(&p.text))).is_some() {
                return Err(Error::InvalidParams(format!("duplicate prompt id {:?}", p.id)));
            }
        }
        Ok(PromptSet { prompts, index })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let prompts: Vec<Prompt> = serde_json::from_str(&raw).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::new(prompts)
    }

    pub fn get(&self, id: &str) -> Option<&TokenizedText> {
        self.index.get(id).map(|(_, t)| t)
    }

    pub fn prompts(&self) -> &[Prompt] {
        &self.prompts
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }
}

/// One line of an input corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub response_id: String,
    pub prompt_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<TernaryLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

/// Parse JSONL where each non-blank line is a `T`; errors cite the 1-based line.
pub fn parse_jsonl<T: for<'de> Deserialize<'de>>(path: &Path, raw: &str) -> Result<Vec<T>> {
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::Record {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(path, &raw)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

/// Date part of an ISO-8601 date or date-time.
pub fn parse_timestamp_date(ts: &str) -> Option<NaiveDate> {
    let ts = ts.trim();
    if let Ok(d) = ts.parse::<NaiveDate>() {
        return Some(d);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(ts) {
        return Some(dt.date_naive());
    }
    ts.parse::<NaiveDateTime>().ok().map(|dt| dt.date())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub response_id: String,
    pub probability: f64,
    pub label: BinaryLabel,
    /// Operating threshold the label was derived with.
    pub threshold: f64,
    pub features: FeatureVector,
    pub registry_version: String,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spans: Option<Vec<MatchSpan>>,
}

/// Turns response text into a coverage mask and features for one registry.
pub struct FeatureExtractor {
    matcher: TemplateMatcher,
    registry_version: String,
}

impl FeatureExtractor {
    pub fn new(registry: &Registry, params: &MatchParams) -> Result<Self> {
        params.validate()?;
        Ok(FeatureExtractor {
            matcher: TemplateMatcher::new(registry, params),
            registry_version: registry.version().to_string(),
        })
    }

    pub fn registry_version(&self) -> &str {
        &self.registry_version
    }

    pub fn params(&self) -> &MatchParams {
        self.matcher.params()
    }

    pub fn mask(&self, response_id: &str, text: &str, prompt: &TokenizedText, prompt_id: &str) -> CoverageMask {
        let response = tokenize(text);
        let template_spans = self.matcher.match_response(&response);
        let prompt_spans = match_prompt(&response, prompt, prompt_id, self.matcher.params());
        build_mask(response_id, &response, template_spans, prompt_spans)
    }

    /// Features for every record, in input order. Unknown prompt ids are an error
    /// naming the record's 1-based position.
    pub fn corpus_features(
        &self,
        records: &[CorpusRecord],
        prompts: &PromptSet,
    ) -> Result<Vec<FeatureVector>> {
        records
            .par_iter()
            .enumerate()
            .map(|(i, r)| {
                let prompt = lookup_prompt(prompts, r, i)?;
                Ok(extract_features(&self.mask(&r.response_id, &r.text, prompt, &r.prompt_id)))
            })
            .collect()
    }
}

fn lookup_prompt<'a>(prompts: &'a PromptSet, r: &CorpusRecord, i: usize) -> Result<&'a TokenizedText> {
    prompts.get(&r.prompt_id).ok_or_else(|| {
        Error::InvalidParams(format!(
            "record {} ({}): unknown prompt id {:?}",
            i + 1,
            r.response_id,
            r.prompt_id
        ))
    })
}

/// A trained model bound to the registry and matcher settings it scores with.
pub struct Detector {
    extractor: FeatureExtractor,
    model: ForestModel,
    model_id: String,
    threshold: f64,
    explain: bool,
}

impl Detector {
    pub fn new(registry: &Registry, model: ForestModel, params: &MatchParams) -> Result<Self> {
        model.validate()?;
        if !model.registry_version.is_empty() && model.registry_version != registry.version() {
            log::warn!(
                "model was trained with registry {} but detecting with {}",
                model.registry_version,
                registry.version()
            );
        }
        Ok(Detector {
            extractor: FeatureExtractor::new(registry, params)?,
            model_id: model.model_id(),
            threshold: model.threshold,
            model,
            explain: false,
        })
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::InvalidParams(format!("threshold {threshold} outside [0, 1]")));
        }
        self.threshold = threshold;
        Ok(self)
    }

    pub fn with_explanations(mut self, explain: bool) -> Self {
        self.explain = explain;
        self
    }

    pub fn model(&self) -> &ForestModel {
        &self.model
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn detect_one(
        &self,
        response_id: &str,
        text: &str,
        prompt: &TokenizedText,
        prompt_id: &str,
        timestamp: Option<String>,
    ) -> DetectionRecord {
        let mask = self.extractor.mask(response_id, text, prompt, prompt_id);
        let features = extract_features(&mask);
        let probability = predict_proba(&self.model, &features);
        DetectionRecord {
            response_id: response_id.to_string(),
            probability,
            label: BinaryLabel::from(probability >= self.threshold),
            threshold: self.threshold,
            features,
            registry_version: self.extractor.registry_version().to_string(),
            model_id: self.model_id.clone(),
            timestamp,
            spans: self.explain.then_some(mask.spans),
        }
    }

    /// Detect every record in parallel; output order follows input order.
    pub fn detect_batch(
        &self,
        records: &[CorpusRecord],
        prompts: &PromptSet,
    ) -> Result<Vec<DetectionRecord>> {
        records
            .par_iter()
            .enumerate()
            .map(|(i, r)| {
                let prompt = lookup_prompt(prompts, r, i)?;
                Ok(self.detect_one(&r.response_id, &r.text, prompt, &r.prompt_id, r.timestamp.clone()))
            })
            .collect()
    }
}

/// Single-shot detection of one response.
pub fn detect(
    response_id: &str,
    response: &str,
    prompt: &Prompt,
    registry: &Registry,
    model: &ForestModel,
    params: &MatchParams,
) -> Result<DetectionRecord> {
    let detector = Detector::new(registry, model.clone(), params)?;
    Ok(detector.detect_one(response_id, response, &tokenize(&prompt.text), &prompt.id, None))
}

/// Binary training pairs from labeled records. Records without a label are an error.
pub fn labeled_dataset(
    records: &[CorpusRecord],
    features: &[FeatureVector],
) -> Result<Vec<(FeatureVector, BinaryLabel)>> {
    records
        .iter()
        .zip(features)
        .enumerate()
        .map(|(i, (r, f))| {
            let label = r.label.ok_or_else(|| {
                Error::InvalidParams(format!("record {} ({}) has no label", i + 1, r.response_id))
            })?;
            Ok((*f, collapse_label(label)))
        })
        .collect()
}

const FILLER_VOCABULARY: &[&str] = &[
    "people", "time", "year", "way", "day", "man", "thing", "woman", "life", "child", "world",
    "school", "state", "family", "student", "group", "country", "problem", "hand", "part",
    "place", "case", "week", "company", "system", "program", "question", "work", "government",
    "number", "night", "point", "home", "water", "room", "mother", "area", "money", "story",
    "fact", "month", "lot", "right", "study", "book", "eye", "job", "word", "business", "issue",
    "side", "kind", "head", "house", "service", "friend", "father", "power", "hour", "game",
    "line", "end", "member", "law", "car", "city", "community", "name", "president", "team",
    "minute", "idea", "kid", "body", "information", "back", "parent", "face", "others", "level",
    "office", "door", "health", "person", "art", "war", "history", "party", "result", "change",
    "morning", "reason", "research", "girl", "guy", "moment", "air", "teacher", "force",
    "education", "go", "make", "know", "take", "see", "come", "think", "look", "want", "give",
    "use", "find", "tell", "ask", "feel", "try", "leave", "call", "good", "new", "first", "last",
    "long", "great", "little", "own", "old", "big", "high", "different", "small", "large",
    "next", "early", "young", "important", "few", "public", "bad", "same", "able", "often",
    "really", "very", "still", "maybe", "quite", "usually", "because", "when", "if", "but",
    "and", "or", "so", "then", "my", "our", "their", "with", "from", "about", "for", "in", "on",
];

fn perturb(text: &str, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = text.chars().collect();
    let max_edits = chars.len() * 2 / 100;
    let edits = rng.gen_range(0..=max_edits);
    for _ in 0..edits {
        let letters: Vec<usize> = (0..chars.len()).filter(|&i| chars[i].is_ascii_lowercase()).collect();
        let Some(&pos) = letters.choose(rng) else {
            break;
        };
        let letter = (b'a' + rng.gen_range(0..26u8)) as char;
        match rng.gen_range(0..3) {
            0 => chars[pos] = letter,
            1 => {
                chars.remove(pos);
            }
            _ => chars.insert(pos, letter),
        }
    }
    chars.into_iter().collect()
}

fn templated_response(template: &str, prompt: &TokenizedText, rng: &mut ChaCha8Rng) -> String {
    let words = prompt.token_texts();
    let mut out = String::new();
    for (i, part) in template.split(GAP_MARKER).enumerate() {
        if i > 0 {
            let k = rng.gen_range(1..=3usize).min(words.len().max(1));
            if words.is_empty() {
                out.push_str("something");
            } else {
                let start = rng.gen_range(0..=words.len() - k);
                out.push_str(&words[start..start + k].join(" "));
            }
        }
        out.push_str(part);
    }
    perturb(&out, rng)
}

fn authentic_response(n_tokens: usize, prompt: &TokenizedText, rng: &mut ChaCha8Rng) -> String {
    let mut vocab: Vec<&str> = FILLER_VOCABULARY.to_vec();
    vocab.extend(prompt.token_texts());
    let mut out = String::new();
    let mut written = 0;
    while written < n_tokens {
        let len = rng.gen_range(8..=15usize).min(n_tokens - written);
        let sentence: Vec<&str> = (0..len).map(|_| *vocab.choose(rng).expect("non-empty")).collect();
        let mut s = sentence.join(" ");
        if let Some(first) = s.get(..1) {
            s.replace_range(..1, &first.to_uppercase());
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&s);
        out.push('.');
        written += len;
    }
    out
}

/// Seeded labeled corpus: templated responses (gaps filled from the paired
/// prompt, light character noise) labeled High, and word-salad responses of
/// matching length labeled None. Order is shuffled.
pub fn generate_synthetic_corpus(
    registry: &Registry,
    prompts: &PromptSet,
    n_templated: usize,
    n_authentic: usize,
    seed: u64,
) -> Result<Vec<CorpusRecord>> {
    if n_templated + n_authentic == 0 {
        return Err(Error::Empty("requested an empty synthetic corpus".into()));
    }
    let templates = registry.templates();
    if templates.is_empty() || prompts.is_empty() {
        return Err(Error::Empty("synthetic corpus needs templates and prompts".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_templated + n_authentic);
    for i in 0..n_templated + n_authentic {
        let prompt = prompts.prompts().choose(&mut rng).expect("non-empty");
        let prompt_tokens = prompts.get(&prompt.id).expect("indexed");
        let template = templates.choose(&mut rng).expect("non-empty");
        let (text, label) = if i < n_templated {
            (templated_response(&template.text, prompt_tokens, &mut rng), TernaryLabel::High)
        } else {
            let n = tokenize(&template.text.replace(GAP_MARKER, " ")).len();
            (authentic_response(n, prompt_tokens, &mut rng), TernaryLabel::None)
        };
        out.push(CorpusRecord {
            response_id: String::new(),
            prompt_id: prompt.id.clone(),
            text,
            label: Some(label),
            timestamp: None,
        });
    }
    out.shuffle(&mut rng);
    for (i, r) in out.iter_mut().enumerate() {
        r.response_id = format!("syn-{seed}-{i:05}");
    }
    Ok(out)
}

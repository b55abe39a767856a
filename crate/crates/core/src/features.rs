//! The six token-coverage summary features.

use serde::{Deserialize, Serialize, Serializer};

use crate::matcher::CoverageMask;

pub const FEATURE_NAMES: [&str; 6] = [
    "num_non_template_tokens",
    "pct_non_template_tokens",
    "num_non_prompt_tokens",
    "pct_non_prompt_tokens",
    "num_authentic_tokens",
    "pct_authentic_tokens",
];

pub const N_FEATURES: usize = FEATURE_NAMES.len();

fn round4<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64((v * 1e4).round() / 1e4)
}

/// Counts are stored as `u64`; percentages are in `[0, 100]` and unrounded in memory.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub num_non_template_tokens: u64,
    #[serde(serialize_with = "round4")]
    pub pct_non_template_tokens: f64,
    pub num_non_prompt_tokens: u64,
    #[serde(serialize_with = "round4")]
    pub pct_non_prompt_tokens: f64,
    pub num_authentic_tokens: u64,
    #[serde(serialize_with = "round4")]
    pub pct_authentic_tokens: f64,
}

impl FeatureVector {
    /// Values in `FEATURE_NAMES` order.
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            self.num_non_template_tokens as f64,
            self.pct_non_template_tokens,
            self.num_non_prompt_tokens as f64,
            self.pct_non_prompt_tokens,
            self.num_authentic_tokens as f64,
            self.pct_authentic_tokens,
        ]
    }
}

fn pct(count: u64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * count as f64 / n as f64
    }
}

pub fn extract_features(mask: &CoverageMask) -> FeatureVector {
    let n = mask.n_tokens;
    let (mut non_template, mut non_prompt, mut authentic) = (0u64, 0u64, 0u64);
    for (t, p) in mask.template_covered.iter().zip(&mask.prompt_covered) {
        non_template += u64::from(!t);
        non_prompt += u64::from(!p);
        authentic += u64::from(!t && !p);
    }
    FeatureVector {
        num_non_template_tokens: non_template,
        pct_non_template_tokens: pct(non_template, n),
        num_non_prompt_tokens: non_prompt,
        pct_non_prompt_tokens: pct(non_prompt, n),
        num_authentic_tokens: authentic,
        pct_authentic_tokens: pct(authentic, n),
    }
}

#[derive(Serialize)]
struct FeatureLine<'a> {
    response_id: &'a str,
    features: &'a FeatureVector,
}

/// One JSONL line of the feature dump.
pub fn feature_line(response_id: &str, features: &FeatureVector) -> serde_json::Result<String> {
    serde_json::to_string(&FeatureLine {
        response_id,
        features,
    })
}

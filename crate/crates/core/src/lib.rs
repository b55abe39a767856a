//! Detection of essay responses produced from memorized templates.
//!
//! A response is matched against a registry of templates (split into
//! sub-templates and compared with fuzzy n-gram windows) and against its
//! prompt (exact token runs). The resulting per-token coverage is summarized
//! into six features and scored by a random forest with a high-precision
//! operating threshold. Evaluation, calibration and drift reporting live in
//! [`evaluation`]; the operator CLI is in [`cli`].

pub mod classifier;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod matcher;
pub mod pipeline;
pub mod registry;
pub mod text;

pub use classifier::{
    classify, collapse_label, predict_proba, train, BinaryLabel, ForestHyperparams, ForestModel,
    ParamGrid, TernaryLabel,
};
pub use error::{Error, Result};
pub use features::{extract_features, FeatureVector};
pub use matcher::{build_mask, match_prompt, match_templates, CoverageMask, MatchParams, MatchSpan};
pub use pipeline::{detect, generate_synthetic_corpus, Detector, DetectionRecord, Prompt, PromptSet};
pub use registry::{load_registry, segment, Registry, SubTemplate, Template};

//! Write a seeded synthetic labeled corpus as JSONL.
//!
//! ```text
//! cargo run --example synth -- --registry fixtures/registry.json \
//!     --prompts fixtures/prompts.json --templated 60 --authentic 60 --seed 7
//! ```

use std::path::PathBuf;

use chrono::{Duration, NaiveDate};
use clap::Parser;
use tmpl_detect::pipeline::{generate_synthetic_corpus, to_jsonl, PromptSet};
use tmpl_detect::registry::{load_registry, DEFAULT_MIN_SUBTEMPLATE_TOKENS};

#[derive(Parser)]
struct Args {
    #[arg(long)]
    registry: PathBuf,
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long, default_value_t = 50)]
    templated: usize,
    #[arg(long, default_value_t = 50)]
    authentic: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stamp records one per `--every-hours` starting at this date.
    #[arg(long)]
    start_date: Option<NaiveDate>,
    #[arg(long, default_value_t = 12)]
    every_hours: i64,
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args = Args::parse();
    let registry = load_registry(&args.registry, DEFAULT_MIN_SUBTEMPLATE_TOKENS)?;
    let prompts = PromptSet::load(&args.prompts)?;
    let mut corpus = generate_synthetic_corpus(&registry, &prompts, args.templated, args.authentic, args.seed)?;
    if let Some(start) = args.start_date {
        let t0 = start.and_hms_opt(9, 0, 0).expect("valid time");
        for (i, r) in corpus.iter_mut().enumerate() {
            let t = t0 + Duration::hours(args.every_hours * i as i64);
            r.timestamp = Some(t.format("%Y-%m-%dT%H:%M:%SZ").to_string());
        }
    }
    print!("{}", to_jsonl(&corpus)?);
    Ok(())
}

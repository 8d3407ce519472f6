//! Runs the default simulated pipeline and prints the scores.
//!
//! `cargo run --release -p nabqr-core --example pipeline_run -- [seed] [output_dir]`

use std::time::Instant;

use nabqr_core::pipeline::{run_nabqr_pipeline, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut config = PipelineConfig::default();
    if let Some(seed) = args.next() {
        config.seed = seed.parse()?;
    }
    config.output_dir = args.next().unwrap_or_else(|| "nabqr_output".into()).into();
    let start = Instant::now();
    let result = run_nabqr_pipeline(&config)?;
    println!("{}", serde_json::to_string_pretty(&result.scores)?);
    for s in &result.stages {
        println!("{:<18} {:?} {}", s.stage, s.rows.map(|r| (r.start, r.end)), s.detail);
    }
    println!("elapsed {:.1?}", start.elapsed());
    Ok(())
}

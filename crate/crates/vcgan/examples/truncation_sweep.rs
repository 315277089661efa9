//! Test-time truncation sweep: train once, then score the same checkpoint
//! at every truncation range. The model is never retrained; truncation is
//! a post-processing step on the latent draw.
//!
//!     cargo run --release --example truncation_sweep

use vcgan::harness::{ablation_run, ExperimentConfig};
use vcgan::models::Variant;
use vcgan::probdist::TruncationRange;

fn main() {
    let mut base = ExperimentConfig::default();
    base.steps = 3000;
    base.eval_samples = 1600;
    base.out_dir = "target/examples-out/sweep".into();
    base.ablate_variants = vec![Variant::Vcgan];
    base.ablate_seeds = vec![1];
    base.ablate_ranges = vec![
        TruncationRange::None,
        TruncationRange::Multiplier(2.0),
        TruncationRange::Multiplier(1.5),
        TruncationRange::Multiplier(1.0),
        TruncationRange::Multiplier(0.5),
    ];

    let rows = ablation_run(&base).expect("sweep failed");
    println!("{:<8} {:>8} {:>8} {:>10}", "range", "is_mean", "is_std", "fid");
    for row in rows {
        if let Some(s) = row.scores {
            println!(
                "{:<8} {:>8.3} {:>8.3} {:>10.4}",
                row.range.to_string(),
                s.inception_score_mean,
                s.inception_score_std,
                s.fid
            );
        }
    }
    println!("table: {}", base.out_dir.join("ablation.csv").display());
}

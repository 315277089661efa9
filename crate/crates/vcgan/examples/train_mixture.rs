//! Train the variational conditional generator on the 8-mode Gaussian
//! mixture and print the final scores.
//!
//!     cargo run --release --example train_mixture
//!
//! Artifacts (training log, score reports, sample scatter, checkpoint)
//! land in target/examples-out/mixture.

use vcgan::harness::{run_experiment, ExperimentConfig};

fn main() {
    let mut config = ExperimentConfig::default();
    config.steps = 4000;
    config.eval_interval = 2000;
    config.out_dir = "target/examples-out/mixture".into();

    let artifacts = run_experiment(&config).expect("training failed");
    println!("artifacts in {}", artifacts.out_dir.display());
    if let Some(scores) = &artifacts.final_scores {
        println!(
            "inception score {:.3} +/- {:.3}, frechet distance {:.4}",
            scores.inception_score_mean, scores.inception_score_std, scores.fid
        );
        for c in &scores.coverage {
            match c.fraction {
                Some(f) => println!("class {}: {:.1}% of conditional samples match", c.class, 100.0 * f),
                None => println!("class {}: no samples", c.class),
            }
        }
    }
}

//! Interrupt-and-resume: stop a run halfway, restore from the checkpoint,
//! and confirm the continuation matches an uninterrupted run bitwise.
//!
//!     cargo run --release --example checkpoint_resume

use vcgan::harness::{run_experiment, ExperimentConfig};

fn small(out: &str) -> ExperimentConfig {
    let mut config = ExperimentConfig::default();
    config.steps = 400;
    config.batch_size = 32;
    config.samples_per_class = 128;
    config.eval_samples = 0;
    config.out_dir = out.into();
    config
}

fn main() {
    let full = small("target/examples-out/resume/full");
    let full_run = run_experiment(&full).expect("full run failed");

    let mut head = small("target/examples-out/resume/head");
    head.steps = 200;
    let head_run = run_experiment(&head).expect("head run failed");

    let mut tail = small("target/examples-out/resume/tail");
    tail.resume = head_run.final_checkpoint.display().to_string();
    let tail_run = run_experiment(&tail).expect("resumed run failed");

    let from_full: Vec<_> = full_run.reports.iter().filter(|r| r.step >= 200).collect();
    let matches = from_full
        .iter()
        .zip(&tail_run.reports)
        .filter(|(a, b)| ***a == **b)
        .count();
    println!(
        "resumed run reproduced {}/{} post-interruption loss reports exactly",
        matches,
        from_full.len()
    );
    assert_eq!(matches, from_full.len());
    println!("resume is bitwise faithful");
}

//! Exercise the convolutional path: train briefly on the 8x8 glyph
//! dataset and emit a class-by-sample image grid.
//!
//!     cargo run --release --example train_shapes

use vcgan::harness::{run_experiment, ExperimentConfig};

fn main() {
    let mut config = ExperimentConfig::default();
    config.set("dataset", "shapes").unwrap();
    config.classes = 4;
    config.samples_per_class = 200;
    config.steps = 300;
    config.batch_size = 32;
    config.conv_channels = 8;
    config.eval_samples = 400;
    config.eval_groups = 4;
    config.out_dir = "target/examples-out/shapes".into();

    let artifacts = run_experiment(&config).expect("training failed");
    println!("artifacts in {}", artifacts.out_dir.display());
    println!("sample grid: {}", artifacts.out_dir.join("samples_final.pgm").display());
    if let Some(scores) = &artifacts.final_scores {
        println!(
            "inception score {:.3}, frechet distance {:.3} ({})",
            scores.inception_score_mean, scores.fid, scores.feature_space
        );
    }
}

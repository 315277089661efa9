//! The evaluation stack in isolation: train the scoring classifier on real
//! data, then compute the Inception score, Frechet distance, and mode
//! coverage of a (deliberately bad) untrained generator against it.
//!
//!     cargo run --release --example evaluate_metrics

use vcgan::harness::{build_classifier, build_dataset, evaluate_bundle, ExperimentConfig};
use vcgan::models::ModelBundle;
use vcgan::probdist::TruncationRange;
use vcgan::rng::Rng;

fn main() {
    let mut config = ExperimentConfig::default();
    config.eval_samples = 1600;
    config.out_dir = "target/examples-out/metrics".into();

    let mut data_rng = Rng::from_seed(7);
    let data = build_dataset(&config, &mut data_rng).unwrap();
    let classifier = build_classifier(&config, &data).unwrap();
    println!(
        "classifier held-out accuracy: {:.1}% over {} classes",
        100.0 * classifier.holdout_accuracy,
        config.classes
    );

    let mut model_rng = Rng::from_seed(config.seed);
    let bundle = ModelBundle::new(config.variant, config.model_dims(), &mut model_rng).unwrap();

    let mut holdout_rng = Rng::from_seed(99);
    let mut holdout_config = config.clone();
    holdout_config.samples_per_class = config.eval_samples / config.classes;
    let holdout = build_dataset(&holdout_config, &mut holdout_rng).unwrap();

    let mut eval_rng = Rng::from_seed(123);
    let scores = evaluate_bundle(
        &bundle,
        &classifier,
        &holdout,
        &config,
        TruncationRange::None,
        &mut eval_rng,
    )
    .unwrap();
    println!("untrained generator, as expected, scores poorly:");
    print!("{}", scores.to_csv());
}

//! Sweep the condition vector between two classes with every source of
//! randomness held fixed, and write the frames as a scatter CSV.
//!
//!     cargo run --release --example interpolate_conditions

use vcgan::harness::{emit_scatter, run_experiment, ExperimentConfig};
use vcgan::models::{ConditionVector, NoiseVector};
use vcgan::probdist::TruncationRange;
use vcgan::rng::Rng;
use vcgan::training::load_checkpoint;

fn main() {
    let mut config = ExperimentConfig::default();
    config.steps = 2000;
    config.eval_samples = 0;
    config.out_dir = "target/examples-out/interpolate".into();
    let artifacts = run_experiment(&config).expect("training failed");

    // reload the trained bundle from its checkpoint
    let ckpt = load_checkpoint(&artifacts.final_checkpoint).expect("checkpoint unreadable");
    let mut rng = Rng::from_seed(2024);
    let bundle = vcgan::models::ModelBundle::<f32>::new(
        config.variant,
        config.model_dims(),
        &mut rng,
    )
    .unwrap();
    bundle.load_state(&ckpt.tensors).unwrap();

    let k = config.classes;
    let c_a = ConditionVector::one_hot(0, k).unwrap();
    let c_b = ConditionVector::one_hot(k / 2, k).unwrap();
    let phi = NoiseVector::standard(config.n_noise, &mut rng);
    let frames = bundle
        .interpolate_conditions(&c_a, &c_b, 8, &phi, TruncationRange::Multiplier(2.0), &mut rng)
        .unwrap();

    let points: Vec<(f64, f64, usize)> = frames
        .iter()
        .enumerate()
        .map(|(i, f)| (f.data[0] as f64, f.data[1] as f64, i))
        .collect();
    let path = config.out_dir.join("interpolation.csv");
    emit_scatter(&points, &path).unwrap();
    println!("8 frames from class 0 to class {}:", k / 2);
    for (x, y, step) in &points {
        println!("  step {step}: ({x:+.3}, {y:+.3})");
    }
    println!("written to {}", path.display());
}

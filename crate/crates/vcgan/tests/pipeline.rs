//! Cross-module behavior: encoder input gradients, statistical FID
//! convergence, dataset separability, and the CLI round trip.

mod common;

use std::fs;

use vcgan::diffcore::gradcheck::{fd_gradient, max_rel_err};
use vcgan::diffcore::{Graph, Tensor};
use vcgan::harness::{
    build_classifier, cli, make_shapes_dataset, read_scatter, ExperimentConfig,
};
use vcgan::metrics::fid_from_features;
use vcgan::models::{ModelBundle, ModelDims, Variant};
use vcgan::probdist;
use vcgan::rng::Rng;

#[test]
fn cvae_kl_gradient_with_respect_to_encoder_inputs_matches_fd() {
    let mut rng = Rng::from_seed(31);
    let dims = ModelDims {
        n_classes: 3,
        n_condition: 3,
        n_noise: 4,
        n_latent: 2,
        sample_shape: vec![2],
        enc_hidden: vec![6],
        dec_hidden: vec![6],
        disc_hidden: vec![6],
        conv_channels: 2,
    };
    let bundle: ModelBundle<f64> = ModelBundle::new(Variant::Cvae, dims, &mut rng).unwrap();
    // move off the tiny initialization so the quotient is well conditioned
    for p in bundle.image_encoder_params() {
        if p.name.ends_with(".w") {
            for v in p.value_mut().data.iter_mut() {
                *v *= 20.0;
            }
        }
    }
    let cond = Tensor::from_vec(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
    let x0 = vec![0.35, -0.6, 0.8, 0.15];

    let run = |x: &[f64], backward: bool| -> (f64, Option<Vec<f64>>) {
        let mut g = Graph::<f64>::new();
        let xn = g.input_with_grad("x", vec![2, 2]);
        let cn = g.constant(cond.clone());
        let post = bundle.build_image_encoder(&mut g, xn, cn).unwrap();
        let kl = probdist::kl_node(&mut g, post.mu, post.logvar).unwrap();
        let xt = Tensor::from_vec(vec![2, 2], x.to_vec()).unwrap();
        g.evaluate(&[("x", &xt)]).unwrap();
        let value = g.scalar_value(kl).unwrap();
        if backward {
            g.backward_scalar(kl).unwrap();
            (value, Some(g.input_grad("x").unwrap().to_vec()))
        } else {
            (value, None)
        }
    };

    let (_, analytic) = run(&x0, true);
    let fd = fd_gradient(&x0, |x| run(x, false).0, 1e-5);
    let err = max_rel_err(&analytic.unwrap(), &fd);
    assert!(err < 1e-4, "max rel err {err}");
}

#[test]
fn fid_converges_to_the_analytic_value_between_known_gaussians() {
    // two diagonal 2-D Gaussians with known closed-form distance
    let mean_a = [0.3, -0.2];
    let sd_a = [1.0, 0.6];
    let mean_b = [-0.5, 0.4];
    let sd_b = [0.8, 1.2];
    let analytic: f64 = (0..2)
        .map(|j| (mean_a[j] - mean_b[j]) * (mean_a[j] - mean_b[j]) + (sd_a[j] - sd_b[j]) * (sd_a[j] - sd_b[j]))
        .sum();

    let mut rng = Rng::from_seed(41);
    let n = 10_000;
    let draw = |rng: &mut Rng, mean: &[f64; 2], sd: &[f64; 2], n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| vec![mean[0] + sd[0] * rng.gaussian(), mean[1] + sd[1] * rng.gaussian()])
            .collect()
    };
    let a = draw(&mut rng, &mean_a, &sd_a, n);
    let b = draw(&mut rng, &mean_b, &sd_b, n);
    let estimated = fid_from_features(&a, &b).unwrap();
    assert!(
        (estimated - analytic).abs() / analytic < 0.10,
        "estimated {estimated} vs analytic {analytic}"
    );
}

#[test]
fn shapes_dataset_is_classifier_separable() {
    let mut rng = Rng::from_seed(51);
    let data = make_shapes_dataset(6, 80, true, &mut rng).unwrap();
    let mut config = ExperimentConfig::default();
    config.set("dataset", "shapes").unwrap();
    config.classes = 6;
    let classifier = build_classifier(&config, &data).unwrap();
    assert!(
        classifier.holdout_accuracy >= 0.99,
        "held-out accuracy {}",
        classifier.holdout_accuracy
    );
}

#[test]
fn cli_round_trip_train_sample_eval_interpolate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let args = |list: &[&str]| -> Vec<String> { list.iter().map(|s| s.to_string()).collect() };

    let code = cli::run(args(&[
        "train",
        "--steps", "30",
        "--batch_size", "8",
        "--samples_per_class", "16",
        "--classes", "4",
        "--n_noise", "4",
        "--n_latent", "2",
        "--enc_hidden", "8",
        "--dec_hidden", "8",
        "--disc_hidden", "8",
        "--eval_samples", "0",
        "--out_dir", out.to_str().unwrap(),
    ]));
    assert_eq!(code, 0);
    let ckpt = out.join("checkpoint_final.ckpt");
    assert!(ckpt.exists());

    let scatter = dir.path().join("cli_samples.csv");
    let code = cli::run(args(&[
        "sample",
        "--checkpoint", ckpt.to_str().unwrap(),
        "--count", "5",
        "--truncation", "2.0",
        "--out", scatter.to_str().unwrap(),
    ]));
    assert_eq!(code, 0);
    let points = read_scatter(&scatter).unwrap();
    assert_eq!(points.len(), 4 * 5);

    let scores = dir.path().join("cli_scores.csv");
    let code = cli::run(args(&[
        "eval",
        "--checkpoint", ckpt.to_str().unwrap(),
        "--eval_samples", "64",
        "--eval_groups", "2",
        "--out", scores.to_str().unwrap(),
    ]));
    assert_eq!(code, 0);
    let text = fs::read_to_string(&scores).unwrap();
    assert!(text.starts_with("metric,value,detail\n"));
    assert!(text.contains("coverage_class_3"));

    let frames = dir.path().join("cli_interp.csv");
    let code = cli::run(args(&[
        "interpolate",
        "--checkpoint", ckpt.to_str().unwrap(),
        "--class-a", "0",
        "--class-b", "3",
        "--frames", "8",
        "--out", frames.to_str().unwrap(),
    ]));
    assert_eq!(code, 0);
    assert_eq!(read_scatter(&frames).unwrap().len(), 8);

    // missing checkpoint flag is a runtime error, not a panic
    assert_eq!(cli::run(args(&["sample"])), 1);
}

//! Experiment orchestration: dataset construction, the training loop with
//! logging and checkpointing, conditional evaluation, and the
//! variant-by-truncation ablation sweep.

use std::fs;
use std::path::{Path, PathBuf};

use crate::diffcore::{AdamState, Tensor};
use crate::metrics::{
    fid_from_features, inception_score_from_probs, mode_coverage, train_eval_classifier,
    ClassifierConfig, ClassifierModel, ScoreReport,
};
use crate::models::ModelBundle;
use crate::probdist::TruncationRange;
use crate::rng::Rng;
use crate::training::{
    load_checkpoint, save_checkpoint, train_step, Checkpoint, LossReport,
};

use super::config::{DatasetKind, ExperimentConfig};
use super::dataset::{load_idx, make_mixture_dataset, make_shapes_dataset, Dataset};
use super::emit::{emit_sample_grid, emit_scatter, TrainLog};
use super::HarnessError;

// rng streams derived from the run seed; the training stream is the one
// that lands in checkpoints
const DATA_STREAM: u64 = 0x_DA7A;
const EVAL_STREAM: u64 = 0x_E7A1;
const CLASSIFIER_STREAM: u64 = 0x_C1A5;

pub fn derived_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
}

/// Everything a finished run leaves behind.
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub final_checkpoint: PathBuf,
    pub reports: Vec<LossReport>,
    pub final_scores: Option<ScoreReport>,
    pub classifier_accuracy: Option<f64>,
}

/// Build the dataset a configuration names.
pub fn build_dataset(config: &ExperimentConfig, rng: &mut Rng) -> Result<Dataset, HarnessError> {
    match config.dataset {
        DatasetKind::Mixture2d => make_mixture_dataset(
            config.classes,
            config.mixture_radius,
            config.mixture_sigma,
            config.samples_per_class,
            rng,
        ),
        DatasetKind::Shapes => make_shapes_dataset(
            config.classes,
            config.samples_per_class,
            config.shapes_randomize,
            rng,
        ),
        DatasetKind::Idx => load_idx(
            Path::new(&config.idx_images),
            Path::new(&config.idx_labels),
        ),
    }
}

/// Train the evaluation classifier on a fresh draw of the configured
/// dataset, seeded independently of the training stream.
pub fn build_classifier(
    config: &ExperimentConfig,
    dataset: &Dataset,
) -> Result<ClassifierModel, HarnessError> {
    let classifier_config = ClassifierConfig {
        seed: derived_seed(config.seed, CLASSIFIER_STREAM),
        ..Default::default()
    };
    Ok(train_eval_classifier(
        &dataset.samples,
        &dataset.labels,
        config.classes,
        &classifier_config,
    )?)
}

/// Generate `per_class` conditional samples for every class, class-major.
pub fn generate_per_class(
    bundle: &ModelBundle<f32>,
    per_class: usize,
    range: TruncationRange,
    rng: &mut Rng,
) -> Result<Vec<(usize, Tensor<f32>)>, HarnessError> {
    let mut out = Vec::with_capacity(bundle.dims.n_classes);
    for class in 0..bundle.dims.n_classes {
        let classes = vec![class; per_class];
        let samples = bundle.generate_batch(&classes, range, rng)?;
        out.push((class, samples));
    }
    Ok(out)
}

fn stack_class_major(per_class: &[(usize, Tensor<f32>)]) -> Tensor<f32> {
    let mut shape = per_class[0].1.shape.clone();
    let mut data = Vec::new();
    let mut n = 0;
    for (_, t) in per_class {
        n += t.shape[0];
        data.extend_from_slice(&t.data);
    }
    shape[0] = n;
    Tensor { shape, data, requires_grad: false, grad: None }
}

/// Score a trained bundle: Inception score over grouped conditional
/// samples, Frechet distance against a held-out real set (raw coordinates
/// for points, classifier features for images), and per-class coverage.
///
/// Conditional samples are generated in round-robin class order so the
/// Inception-score groups are class-balanced; the coverage report slices
/// the same batch back into per-class sets.
pub fn evaluate_bundle(
    bundle: &ModelBundle<f32>,
    classifier: &ClassifierModel,
    real_holdout: &Dataset,
    config: &ExperimentConfig,
    range: TruncationRange,
    rng: &mut Rng,
) -> Result<ScoreReport, HarnessError> {
    let k = config.classes;
    let per_class = (config.eval_samples / k).max(1);
    let classes: Vec<usize> = (0..per_class * k).map(|i| i % k).collect();
    let fake = bundle.generate_batch(&classes, range, rng)?;
    let fake_n = fake.shape[0];
    let per = bundle.dims.sample_len();
    let generated: Vec<(usize, Tensor<f32>)> = (0..k)
        .map(|class| {
            let mut data = Vec::with_capacity(per_class * per);
            for row in 0..per_class {
                let i = row * k + class;
                data.extend_from_slice(&fake.data[i * per..(i + 1) * per]);
            }
            let mut shape = vec![per_class];
            shape.extend_from_slice(&bundle.dims.sample_shape);
            (class, Tensor::from_vec(shape, data).unwrap())
        })
        .collect();

    let probs = classifier.predict_proba(&fake)?;
    let (is_mean, is_std) = inception_score_from_probs(&probs, config.eval_groups)?;

    let is_points = !bundle.dims.is_image();
    let (real_features, fake_features, feature_space) = if is_points {
        let real: Vec<Vec<f64>> = (0..real_holdout.len())
            .map(|i| {
                real_holdout.samples.data[i * 2..(i + 1) * 2]
                    .iter()
                    .map(|&v| v as f64)
                    .collect()
            })
            .collect();
        let fakes: Vec<Vec<f64>> = (0..fake_n)
            .map(|i| fake.data[i * 2..(i + 1) * 2].iter().map(|&v| v as f64).collect())
            .collect();
        (real, fakes, "raw-coordinates".to_string())
    } else {
        let real = classifier.features(&real_holdout.samples)?;
        let fakes = classifier.features(&fake)?;
        (real, fakes, format!("classifier-penultimate(dim={})", classifier.feature_dim))
    };
    // equal-size sets: truncate the longer side
    let n = real_features.len().min(fake_features.len());
    let fid = fid_from_features(&real_features[..n], &fake_features[..n])?;

    let coverage = mode_coverage(classifier, &generated, config.coverage_threshold)?;
    Ok(ScoreReport {
        inception_score_mean: is_mean,
        inception_score_std: is_std,
        group_count: config.eval_groups,
        fid,
        coverage,
        feature_space,
        real_count: n,
        fake_count: n,
    })
}

fn emit_samples(
    bundle: &ModelBundle<f32>,
    config: &ExperimentConfig,
    path_base: &Path,
    rng: &mut Rng,
) -> Result<PathBuf, HarnessError> {
    if bundle.dims.is_image() {
        let cols = 8;
        let per_class = generate_per_class(bundle, cols, config.truncation, rng)?;
        let stacked = stack_class_major(&per_class);
        let path = path_base.with_extension("pgm");
        emit_sample_grid(&stacked, bundle.dims.n_classes, cols, &path)?;
        Ok(path)
    } else {
        let per = 64;
        let per_class = generate_per_class(bundle, per, config.truncation, rng)?;
        let mut points = Vec::with_capacity(per_class.len() * per);
        for (class, t) in &per_class {
            for i in 0..t.shape[0] {
                points.push((t.data[i * 2] as f64, t.data[i * 2 + 1] as f64, *class));
            }
        }
        let path = path_base.with_extension("csv");
        emit_scatter(&points, &path)?;
        Ok(path)
    }
}

/// Run one experiment end to end: train, log, checkpoint, evaluate, and
/// write every artifact under the configured output directory. Fully
/// deterministic given (config, seed) unless wall-clock logging is on.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifacts, HarnessError> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir)?;
    let echo = config.echo();
    fs::write(config.out_dir.join("config_resolved.txt"), &echo)?;

    let mut data_rng = Rng::from_seed(derived_seed(config.seed, DATA_STREAM));
    let train_set = build_dataset(config, &mut data_rng)?;
    if train_set.is_empty() && config.steps > 0 {
        return Err(HarnessError::Dataset("training dataset is empty".into()));
    }

    let mut rng = Rng::from_seed(config.seed);
    let bundle = ModelBundle::new(config.variant, config.model_dims(), &mut rng)?;
    let mut d_opt = AdamState::new();
    let mut g_opt = AdamState::new();
    let mut start_step: u64 = 0;
    if !config.resume.is_empty() {
        let ckpt = load_checkpoint(Path::new(&config.resume)).map_err(crate::training::TrainError::from)?;
        let (d, g, restored_rng) = ckpt.restore_into(&bundle).map_err(crate::training::TrainError::from)?;
        d_opt = d;
        g_opt = g;
        rng = restored_rng;
        start_step = ckpt.step;
    }

    let settings = config.train_settings();
    let mut log = TrainLog::create(&config.out_dir.join("train_log.csv"), config.wall_clock_log)?;
    let mut reports = Vec::new();

    // lazily built evaluation machinery (classifier + held-out real set)
    let mut eval_ctx: Option<(ClassifierModel, Dataset)> = None;
    let ensure_eval_ctx =
        |eval_ctx: &mut Option<(ClassifierModel, Dataset)>| -> Result<(), HarnessError> {
            if eval_ctx.is_none() {
                let classifier = build_classifier(config, &train_set)?;
                let mut holdout_rng = Rng::from_seed(derived_seed(config.seed, EVAL_STREAM));
                let holdout = match config.dataset {
                    DatasetKind::Idx => build_dataset(config, &mut holdout_rng)?,
                    _ => {
                        let per = (config.eval_samples / config.classes).max(1);
                        match config.dataset {
                            DatasetKind::Mixture2d => make_mixture_dataset(
                                config.classes,
                                config.mixture_radius,
                                config.mixture_sigma,
                                per,
                                &mut holdout_rng,
                            )?,
                            DatasetKind::Shapes => make_shapes_dataset(
                                config.classes,
                                per,
                                config.shapes_randomize,
                                &mut holdout_rng,
                            )?,
                            DatasetKind::Idx => unreachable!(),
                        }
                    }
                };
                *eval_ctx = Some((classifier, holdout));
            }
            Ok(())
        };

    let latest_path = config.out_dir.join("checkpoint_latest.ckpt");
    let mut wrote_latest = false;
    for step in start_step..config.steps {
        let batch = train_set.sample_batch(config.batch_size, &mut rng)?;
        let report = match train_step(&bundle, &batch, &settings, &mut d_opt, &mut g_opt, step, &mut rng)
        {
            Ok(r) => r,
            Err(e) => {
                // leave the last periodic checkpoint in place as the
                // recovery point
                return Err(HarnessError::Aborted {
                    source: e,
                    last_checkpoint: wrote_latest.then(|| latest_path.clone()),
                });
            }
        };
        if config.log_interval > 0 && step % config.log_interval == 0 {
            log.append(&report)?;
        }
        reports.push(report);

        if config.eval_interval > 0 && (step + 1) % config.eval_interval == 0 {
            ensure_eval_ctx(&mut eval_ctx)?;
            let (classifier, holdout) = eval_ctx.as_ref().unwrap();
            let mut eval_rng = Rng::from_seed(derived_seed(config.seed, EVAL_STREAM ^ (step + 1)));
            let scores =
                evaluate_bundle(&bundle, classifier, holdout, config, config.truncation, &mut eval_rng)?;
            fs::write(
                config.out_dir.join(format!("scores_step{:06}.csv", step + 1)),
                scores.to_csv(),
            )?;
            emit_samples(
                &bundle,
                config,
                &config.out_dir.join(format!("samples_step{:06}", step + 1)),
                &mut eval_rng,
            )?;
            let ckpt = Checkpoint::capture(&echo, step + 1, &bundle, &d_opt, &g_opt, &rng);
            save_checkpoint(&latest_path, &ckpt).map_err(crate::training::TrainError::from)?;
            wrote_latest = true;
        }
    }

    let final_path = config.out_dir.join("checkpoint_final.ckpt");
    let ckpt = Checkpoint::capture(&echo, config.steps, &bundle, &d_opt, &g_opt, &rng);
    save_checkpoint(&final_path, &ckpt).map_err(crate::training::TrainError::from)?;

    let mut final_scores = None;
    let mut classifier_accuracy = None;
    if config.steps > start_step && config.eval_samples > 0 {
        ensure_eval_ctx(&mut eval_ctx)?;
        let (classifier, holdout) = eval_ctx.as_ref().unwrap();
        classifier_accuracy = Some(classifier.holdout_accuracy);
        let mut eval_rng = Rng::from_seed(derived_seed(config.seed, EVAL_STREAM ^ 0xF1AA));
        let scores =
            evaluate_bundle(&bundle, classifier, holdout, config, config.truncation, &mut eval_rng)?;
        fs::write(config.out_dir.join("scores_final.csv"), scores.to_csv())?;
        emit_samples(&bundle, config, &config.out_dir.join("samples_final"), &mut eval_rng)?;
        final_scores = Some(scores);
    }

    Ok(RunArtifacts {
        out_dir: config.out_dir.clone(),
        final_checkpoint: final_path,
        reports,
        final_scores,
        classifier_accuracy,
    })
}

/// Load a checkpoint and rebuild its bundle from the embedded
/// configuration echo (CLI overrides may be applied by the caller first).
pub fn restore_bundle(
    checkpoint_path: &Path,
) -> Result<(ExperimentConfig, ModelBundle<f32>, Checkpoint), HarnessError> {
    let ckpt = load_checkpoint(checkpoint_path).map_err(crate::training::TrainError::from)?;
    let config = ExperimentConfig::parse(&ckpt.config_echo)?;
    let mut rng = Rng::from_seed(config.seed);
    let bundle = ModelBundle::new(config.variant, config.model_dims(), &mut rng)?;
    bundle
        .load_state(&ckpt.tensors)
        .map_err(crate::models::ModelError::from)
        .map_err(crate::training::TrainError::from)?;
    Ok((config, bundle, ckpt))
}

/// One row of the ablation table.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: &'static str,
    pub range: TruncationRange,
    pub seed: u64,
    pub scores: Option<ScoreReport>,
}

/// Train each (variant, seed) once, then sweep every truncation range over
/// the single trained model (truncation is test-time only). Rows whose
/// training or evaluation fails are recorded with empty metrics and the
/// sweep continues. Returns the rows and writes `ablation.csv`.
pub fn ablation_run(base: &ExperimentConfig) -> Result<Vec<AblationRow>, HarnessError> {
    fs::create_dir_all(&base.out_dir)?;
    let mut rows = Vec::new();
    for &variant in &base.ablate_variants {
        for &seed in &base.ablate_seeds {
            let mut config = base.clone();
            config.variant = variant;
            config.seed = seed;
            config.eval_interval = 0;
            config.out_dir = base.out_dir.join(format!("{}_s{}", variant.name(), seed));
            let trained = run_experiment(&config);
            match trained {
                Ok(artifacts) => {
                    let (_, bundle, _) = restore_bundle(&artifacts.final_checkpoint)?;
                    let mut data_rng = Rng::from_seed(derived_seed(seed, DATA_STREAM));
                    let train_set = build_dataset(&config, &mut data_rng)?;
                    let classifier = build_classifier(&config, &train_set)?;
                    let mut holdout_rng = Rng::from_seed(derived_seed(seed, EVAL_STREAM));
                    let holdout = match config.dataset {
                        DatasetKind::Mixture2d => make_mixture_dataset(
                            config.classes,
                            config.mixture_radius,
                            config.mixture_sigma,
                            (config.eval_samples / config.classes).max(1),
                            &mut holdout_rng,
                        )?,
                        DatasetKind::Shapes => make_shapes_dataset(
                            config.classes,
                            (config.eval_samples / config.classes).max(1),
                            config.shapes_randomize,
                            &mut holdout_rng,
                        )?,
                        DatasetKind::Idx => build_dataset(&config, &mut holdout_rng)?,
                    };
                    for &range in &base.ablate_ranges {
                        let mut eval_rng =
                            Rng::from_seed(derived_seed(seed, EVAL_STREAM ^ 0xAB1A));
                        let scores = evaluate_bundle(
                            &bundle,
                            &classifier,
                            &holdout,
                            &config,
                            range,
                            &mut eval_rng,
                        );
                        rows.push(AblationRow {
                            variant: variant.name(),
                            range,
                            seed,
                            scores: scores.ok(),
                        });
                    }
                }
                Err(e) => {
                    eprintln!("ablation: {} seed {} failed: {e}", variant.name(), seed);
                    for &range in &base.ablate_ranges {
                        rows.push(AblationRow { variant: variant.name(), range, seed, scores: None });
                    }
                }
            }
        }
    }

    let mut csv = String::from("variant,range,seed,is_mean,is_std,fid\n");
    for row in &rows {
        match &row.scores {
            Some(s) => csv.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6}\n",
                row.variant, row.range, row.seed, s.inception_score_mean, s.inception_score_std, s.fid
            )),
            None => csv.push_str(&format!("{},{},{},nan,nan,nan\n", row.variant, row.range, row.seed)),
        }
    }
    fs::write(base.out_dir.join("ablation.csv"), csv)?;
    Ok(rows)
}

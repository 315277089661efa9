//! Loss assembly and the alternating adversarial update.
//!
//! The discriminator loss scores real samples against their true class and
//! fake samples against the extra fake-sample class (the modified auxiliary
//! classifier); the original convention that scores fakes against their fed
//! class is available for ablation. The generator loss feeds the fed class
//! as the target and, for the variational variant, adds the closed-form KL
//! of the inferred posterior to the standard-normal prior.

pub mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, OptimizerBlock};

use crate::diffcore::{
    adam_step, AdamState, DiffError, Graph, Mode, NodeId, OptimizerConfig, Scalar, Tensor,
};
use crate::models::{DiscNodes, GeneratorInputs, ModelBundle, ModelError, Variant};
use crate::rng::Rng;

/// Probabilities are floored at this value inside every log so a saturated
/// discriminator cannot emit an infinite loss.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("batch of {0} samples is too small (batch normalization needs >= 2)")]
    BatchTooSmall(usize),
    #[error("batch is inconsistent: {0}")]
    BadBatch(String),
    #[error("non-finite {term} at step {step}")]
    NonFinite { step: u64, term: &'static str },
}

/// Which target fake samples receive in the discriminator's class term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcLossMode {
    /// Fakes are scored against the extra fake-sample class.
    Modified,
    /// Fakes are scored against their fed class (ablation baseline).
    Original,
}

impl AcLossMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "modified" => Some(AcLossMode::Modified),
            "original" => Some(AcLossMode::Original),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AcLossMode::Modified => "modified",
            AcLossMode::Original => "original",
        }
    }
}

/// A labeled minibatch: samples stacked along the first axis.
#[derive(Debug, Clone)]
pub struct Batch<T: Scalar> {
    pub samples: Tensor<T>,
    pub class_indices: Vec<usize>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(samples: Tensor<T>, class_indices: Vec<usize>, k: usize) -> Result<Self, TrainError> {
        if samples.shape.is_empty() || samples.shape[0] != class_indices.len() {
            return Err(TrainError::BadBatch(format!(
                "{} samples vs {} labels",
                samples.shape.first().copied().unwrap_or(0),
                class_indices.len()
            )));
        }
        if let Some(&bad) = class_indices.iter().find(|&&c| c >= k) {
            return Err(TrainError::BadBatch(format!("class index {bad} out of {k} classes")));
        }
        Ok(Batch { samples, class_indices })
    }

    pub fn len(&self) -> usize {
        self.class_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_indices.is_empty()
    }
}

/// Per-step scalar summary of both phases.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub step: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub kl: f64,
    pub source_term: f64,
    pub class_term: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct DiscriminatorLoss {
    pub total: f64,
    pub source_term: f64,
    pub class_term: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct GeneratorLoss {
    pub total: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct CvaeLoss {
    pub total: f64,
    pub kl: f64,
    pub reconstruction: f64,
}

/// Training knobs shared by every variant.
#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub optimizer: OptimizerConfig,
    pub ac_loss: AcLossMode,
    pub kl_weight: f64,
    /// Discriminator updates : generator updates per step.
    pub update_ratio: (u32, u32),
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            optimizer: OptimizerConfig::default(),
            ac_loss: AcLossMode::Modified,
            kl_weight: 1.0,
            update_ratio: (1, 1),
        }
    }
}

// ---- loss graphs -------------------------------------------------------

/// -(E[log p] + E[log p']) assembled per term; `total = source + class`.
fn d_loss_nodes<T: Scalar>(
    g: &mut Graph<T>,
    real: DiscNodes,
    fake: DiscNodes,
    real_classes: &[usize],
    fake_classes: &[usize],
    others_index: usize,
    ac: AcLossMode,
) -> Result<(NodeId, NodeId, NodeId), DiffError> {
    let floor = T::from_f64(LOG_FLOOR);
    let ln_real_src = g.ln_floored(real.source_prob, floor);
    let sr = g.mean_all(ln_real_src);
    let fake_not_real = g.one_minus(fake.source_prob);
    let ln_fake_src = g.ln_floored(fake_not_real, floor);
    let sf = g.mean_all(ln_fake_src);

    let picked_real = g.pick_column(real.class_probs, real_classes.to_vec())?;
    let ln_real_cls = g.ln_floored(picked_real, floor);
    let cr = g.mean_all(ln_real_cls);
    let fake_targets = match ac {
        AcLossMode::Modified => vec![others_index; fake_classes.len()],
        AcLossMode::Original => fake_classes.to_vec(),
    };
    let picked_fake = g.pick_column(fake.class_probs, fake_targets)?;
    let ln_fake_cls = g.ln_floored(picked_fake, floor);
    let cf = g.mean_all(ln_fake_cls);

    let src_sum = g.add(sr, sf)?;
    let source_term = g.scale(src_sum, -T::one());
    let cls_sum = g.add(cr, cf)?;
    let class_term = g.scale(cls_sum, -T::one());
    let total = g.add(source_term, class_term)?;
    Ok((total, source_term, class_term))
}

/// -E[log D(x)_0] - E[log p(c = fed | x)] (+ weighted KL).
///
/// The KL regularizer enters with a per-dimension mean reduction
/// (closed-form KL divided by the latent width): the per-sample KL sums
/// over latent coordinates, so without the normalization its pull scales
/// with the latent width and crushes the posterior separation the
/// conditional channel depends on. The reported KL statistic stays the
/// unnormalized closed form.
fn g_loss_nodes<T: Scalar>(
    g: &mut Graph<T>,
    disc: DiscNodes,
    fed_classes: &[usize],
    kl: Option<NodeId>,
    kl_weight: f64,
    latent_dim: usize,
) -> Result<NodeId, DiffError> {
    let floor = T::from_f64(LOG_FLOOR);
    let ln_src = g.ln_floored(disc.source_prob, floor);
    let adv_src = g.mean_all(ln_src);
    let picked = g.pick_column(disc.class_probs, fed_classes.to_vec())?;
    let ln_cls = g.ln_floored(picked, floor);
    let adv_cls = g.mean_all(ln_cls);
    let adv = g.add(adv_src, adv_cls)?;
    let mut total = g.scale(adv, -T::one());
    if let Some(kl) = kl {
        let weighted = g.scale(kl, T::from_f64(kl_weight / latent_dim.max(1) as f64));
        total = g.add(total, weighted)?;
    }
    Ok(total)
}

fn check_batch_pair<T: Scalar>(
    bundle: &ModelBundle<T>,
    real: &Batch<T>,
    fake: &Batch<T>,
) -> Result<(), TrainError> {
    for (what, b) in [("real", real), ("fake", fake)] {
        if b.len() < 2 {
            return Err(TrainError::BatchTooSmall(b.len()));
        }
        let want = bundle.batched_sample_shape(b.len());
        if b.samples.shape != want {
            return Err(TrainError::BadBatch(format!(
                "{what} batch has shape {:?}, model expects {:?}",
                b.samples.shape, want
            )));
        }
    }
    Ok(())
}

/// Discriminator loss over a real batch and an (already generated,
/// detached) fake batch. Backprop populates gradients on the
/// discriminator's parameters only.
pub fn discriminator_loss<T: Scalar>(
    bundle: &ModelBundle<T>,
    real: &Batch<T>,
    fake: &Batch<T>,
    ac: AcLossMode,
) -> Result<DiscriminatorLoss, TrainError> {
    check_batch_pair(bundle, real, fake)?;
    let mut g = Graph::new();
    let real_x = g.constant(real.samples.clone());
    let fake_x = g.constant(fake.samples.clone());
    let real_nodes = bundle.build_discriminator(&mut g, real_x, Mode::Train)?;
    let fake_nodes = bundle.build_discriminator(&mut g, fake_x, Mode::Train)?;
    let (total, source_term, class_term) = d_loss_nodes(
        &mut g,
        real_nodes,
        fake_nodes,
        &real.class_indices,
        &fake.class_indices,
        bundle.dims.n_classes,
        ac,
    )?;
    g.evaluate(&[])?;
    g.backward_scalar(total)?;
    Ok(DiscriminatorLoss {
        total: g.scalar_value(total)?.to_f64_val(),
        source_term: g.scalar_value(source_term)?.to_f64_val(),
        class_term: g.scalar_value(class_term)?.to_f64_val(),
    })
}

/// Class term of the discriminator loss under the original
/// auxiliary-classifier convention: real samples against their true class,
/// fake samples against their fed class. Diagnostic only, no gradients.
pub fn original_ac_class_term<T: Scalar>(
    bundle: &ModelBundle<T>,
    real: &Batch<T>,
    fake: &Batch<T>,
) -> Result<f64, TrainError> {
    let (r, f) = ac_class_terms(bundle, real, fake, AcLossMode::Original)?;
    Ok(r + f)
}

/// The two components of the class term, `-E[log p(target | x)]` for the
/// real and fake batches, under either convention. No gradients.
pub fn ac_class_terms<T: Scalar>(
    bundle: &ModelBundle<T>,
    real: &Batch<T>,
    fake: &Batch<T>,
    ac: AcLossMode,
) -> Result<(f64, f64), TrainError> {
    check_batch_pair(bundle, real, fake)?;
    let floor = T::from_f64(LOG_FLOOR);
    let mut g = Graph::new();
    let real_x = g.constant(real.samples.clone());
    let fake_x = g.constant(fake.samples.clone());
    let real_nodes = bundle.build_discriminator_frozen(&mut g, real_x, Mode::Train)?;
    let fake_nodes = bundle.build_discriminator_frozen(&mut g, fake_x, Mode::Train)?;
    let picked_real = g.pick_column(real_nodes.class_probs, real.class_indices.clone())?;
    let ln_real = g.ln_floored(picked_real, floor);
    let mean_real = g.mean_all(ln_real);
    let real_term = g.scale(mean_real, -T::one());
    let fake_targets = match ac {
        AcLossMode::Modified => vec![bundle.dims.n_classes; fake.len()],
        AcLossMode::Original => fake.class_indices.clone(),
    };
    let picked_fake = g.pick_column(fake_nodes.class_probs, fake_targets)?;
    let ln_fake = g.ln_floored(picked_fake, floor);
    let mean_fake = g.mean_all(ln_fake);
    let fake_term = g.scale(mean_fake, -T::one());
    g.evaluate(&[])?;
    Ok((
        g.scalar_value(real_term)?.to_f64_val(),
        g.scalar_value(fake_term)?.to_f64_val(),
    ))
}

/// Generator loss: the fake batch is regenerated inside the graph so
/// gradients flow through the sample into the encoder and decoder, while
/// the discriminator participates as frozen constants and receives no
/// gradient at all.
pub fn generator_loss<T: Scalar>(
    bundle: &ModelBundle<T>,
    fed_classes: &[usize],
    inputs: &GeneratorInputs<T>,
    kl_weight: f64,
) -> Result<GeneratorLoss, TrainError> {
    if fed_classes.len() < 2 {
        return Err(TrainError::BatchTooSmall(fed_classes.len()));
    }
    let mut g = Graph::new();
    let path = bundle.build_generator(&mut g, fed_classes, Mode::Train)?;
    let disc = bundle.build_discriminator_frozen(&mut g, path.sample, Mode::Train)?;
    let total =
        g_loss_nodes(&mut g, disc, fed_classes, path.kl, kl_weight, bundle.dims.n_latent)?;
    g.evaluate(&crate::models::bind_inputs(inputs))?;
    g.backward_scalar(total)?;
    let kl = match path.kl {
        Some(kl) => g.scalar_value(kl)?.to_f64_val(),
        None => 0.0,
    };
    Ok(GeneratorLoss { total: g.scalar_value(total)?.to_f64_val(), kl })
}

/// Conditional-VAE objective: closed-form KL plus the batch-mean squared
/// reconstruction error. Gradients flow to the image encoder and decoder.
pub fn cvae_loss<T: Scalar>(
    bundle: &ModelBundle<T>,
    batch: &Batch<T>,
    eps: &Tensor<T>,
    kl_weight: f64,
) -> Result<CvaeLoss, TrainError> {
    if bundle.variant != Variant::Cvae {
        return Err(
            ModelError::WrongVariant(bundle.variant, "cvae_loss needs the CVAE variant").into()
        );
    }
    if batch.len() < 2 {
        return Err(TrainError::BatchTooSmall(batch.len()));
    }
    let want = bundle.batched_sample_shape(batch.len());
    if batch.samples.shape != want {
        return Err(TrainError::BadBatch(format!(
            "batch has shape {:?}, model expects {:?}",
            batch.samples.shape, want
        )));
    }
    let mut g = Graph::new();
    let x = g.constant(batch.samples.clone());
    let (recon, _posterior, kl) =
        bundle.build_cvae_path(&mut g, x, &batch.class_indices, Mode::Train)?;
    let diff = g.sub(recon, x)?;
    let sq = g.mul(diff, diff)?;
    let flat = g.reshape(sq, vec![batch.len(), bundle.dims.sample_len()])?;
    let per_sample = g.row_sum(flat)?;
    let recon_term = g.mean_all(per_sample);
    let weighted_kl = g.scale(kl, T::from_f64(kl_weight));
    let total = g.add(recon_term, weighted_kl)?;
    g.evaluate(&[("eps", eps)])?;
    g.backward_scalar(total)?;
    Ok(CvaeLoss {
        total: g.scalar_value(total)?.to_f64_val(),
        kl: g.scalar_value(kl)?.to_f64_val(),
        reconstruction: g.scalar_value(recon_term)?.to_f64_val(),
    })
}

/// Generate a detached fake batch for the discriminator phase, with
/// conditions drawn uniformly over the classes.
pub fn generate_fake_batch<T: Scalar>(
    bundle: &ModelBundle<T>,
    batch: usize,
    rng: &mut Rng,
) -> Result<Batch<T>, TrainError> {
    let classes: Vec<usize> = (0..batch).map(|_| rng.below(bundle.dims.n_classes)).collect();
    let inputs = bundle.draw_generator_inputs(batch, rng);
    let mut g = Graph::new();
    let path = bundle.build_generator(&mut g, &classes, Mode::Train)?;
    g.output("x", path.sample);
    let mut out = g.evaluate(&crate::models::bind_inputs(&inputs))?;
    Batch::new(out.remove("x").unwrap(), classes, bundle.dims.n_classes)
}

fn ensure_finite(value: f64, step: u64, term: &'static str) -> Result<(), TrainError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(TrainError::NonFinite { step, term })
    }
}

fn d_phase<T: Scalar>(
    bundle: &ModelBundle<T>,
    real: &Batch<T>,
    settings: &TrainSettings,
    d_opt: &mut AdamState<T>,
    step: u64,
    rng: &mut Rng,
) -> Result<DiscriminatorLoss, TrainError> {
    let fake = generate_fake_batch(bundle, real.len(), rng)?;
    bundle.zero_grads();
    let loss = discriminator_loss(bundle, real, &fake, settings.ac_loss)?;
    ensure_finite(loss.total, step, "discriminator loss")?;
    adam_step(&bundle.discriminator_params(), d_opt, &settings.optimizer);
    Ok(loss)
}

fn g_phase<T: Scalar>(
    bundle: &ModelBundle<T>,
    batch_size: usize,
    settings: &TrainSettings,
    g_opt: &mut AdamState<T>,
    step: u64,
    rng: &mut Rng,
) -> Result<GeneratorLoss, TrainError> {
    let classes: Vec<usize> =
        (0..batch_size).map(|_| rng.below(bundle.dims.n_classes)).collect();
    let inputs = bundle.draw_generator_inputs(batch_size, rng);
    bundle.zero_grads();
    let loss = generator_loss(bundle, &classes, &inputs, settings.kl_weight)?;
    ensure_finite(loss.total, step, "generator loss")?;
    adam_step(&bundle.generator_params(), g_opt, &settings.optimizer);
    Ok(loss)
}

/// One alternating update: the discriminator trains on a real batch plus a
/// freshly generated fake batch with the generator fixed, then the
/// generator trains on regenerated samples with the discriminator fixed.
/// The conditional VAE ignores the alternation and takes one
/// reconstruction step.
pub fn train_step<T: Scalar>(
    bundle: &ModelBundle<T>,
    real: &Batch<T>,
    settings: &TrainSettings,
    d_opt: &mut AdamState<T>,
    g_opt: &mut AdamState<T>,
    step: u64,
    rng: &mut Rng,
) -> Result<LossReport, TrainError> {
    if real.len() < 2 {
        return Err(TrainError::BatchTooSmall(real.len()));
    }
    if bundle.variant == Variant::Cvae {
        let eps = bundle.draw_generator_inputs(real.len(), rng).eps.unwrap();
        bundle.zero_grads();
        let loss = cvae_loss(bundle, real, &eps, settings.kl_weight)?;
        ensure_finite(loss.total, step, "reconstruction loss")?;
        adam_step(&bundle.generator_params(), g_opt, &settings.optimizer);
        return Ok(LossReport {
            step,
            loss_d: 0.0,
            loss_g: loss.total,
            kl: loss.kl,
            source_term: 0.0,
            class_term: 0.0,
        });
    }

    bundle.spectral_update();
    let mut d_loss = DiscriminatorLoss { total: 0.0, source_term: 0.0, class_term: 0.0 };
    for _ in 0..settings.update_ratio.0 {
        d_loss = d_phase(bundle, real, settings, d_opt, step, rng)?;
    }
    let mut g_loss = GeneratorLoss { total: 0.0, kl: 0.0 };
    for _ in 0..settings.update_ratio.1 {
        g_loss = g_phase(bundle, real.len(), settings, g_opt, step, rng)?;
    }
    Ok(LossReport {
        step,
        loss_d: d_loss.total,
        loss_g: g_loss.total,
        kl: g_loss.kl,
        source_term: d_loss.source_term,
        class_term: d_loss.class_term,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelDims, Variant};

    fn tiny_dims(k: usize) -> ModelDims {
        ModelDims {
            n_classes: k,
            n_condition: k,
            n_noise: 4,
            n_latent: 2,
            sample_shape: vec![2],
            enc_hidden: vec![4],
            dec_hidden: vec![4],
            disc_hidden: vec![4],
            conv_channels: 2,
        }
    }

    fn bundle<T: Scalar>(variant: Variant, k: usize, seed: u64) -> ModelBundle<T> {
        let mut rng = Rng::from_seed(seed);
        ModelBundle::new(variant, tiny_dims(k), &mut rng).unwrap()
    }

    fn point_batch<T: Scalar>(b: usize, k: usize, seed: u64) -> Batch<T> {
        let mut rng = Rng::from_seed(seed);
        let data: Vec<T> = (0..b * 2).map(|_| T::from_f64(rng.gaussian() * 0.5)).collect();
        let classes: Vec<usize> = (0..b).map(|i| i % k).collect();
        Batch::new(Tensor::from_vec(vec![b, 2], data).unwrap(), classes, k).unwrap()
    }

    fn zero_params<T: Scalar>(params: &[crate::diffcore::Param<T>]) {
        for p in params {
            let n = p.numel();
            p.value_mut().data = vec![T::zero(); n];
        }
    }

    #[test]
    fn uniform_head_discriminator_loss_matches_arithmetic() {
        let k = 10;
        let b: ModelBundle<f64> = bundle(Variant::Vcgan, k, 1);
        let d = b.discriminator_params();
        // zero only the head (last two params in enumeration order)
        zero_params(&d[d.len() - 2..]);
        let real = point_batch::<f64>(6, k, 2);
        let fake = point_batch::<f64>(6, k, 3);
        let loss = discriminator_loss(&b, &real, &fake, AcLossMode::Modified).unwrap();
        let want = 2.0 * (2.0f64.ln() + 11.0f64.ln());
        assert!((loss.total - want).abs() < 1e-9, "{} vs {want}", loss.total);
        assert!((loss.source_term - 2.0 * 2.0f64.ln()).abs() < 1e-9);
        assert!((loss.class_term - 2.0 * 11.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn loss_decomposition_terms_are_nonnegative_and_sum() {
        let k = 4;
        let b: ModelBundle<f32> = bundle(Variant::Vcgan, k, 4);
        let real = point_batch::<f32>(8, k, 5);
        let fake = point_batch::<f32>(8, k, 6);
        let loss = discriminator_loss(&b, &real, &fake, AcLossMode::Modified).unwrap();
        assert!(loss.source_term >= 0.0);
        assert!(loss.class_term >= 0.0);
        assert!((loss.total - (loss.source_term + loss.class_term)).abs() < 1e-6);
    }

    #[test]
    fn perfect_probabilities_drive_the_loss_to_zero() {
        // formula-level limit: feed near-one probabilities straight into
        // the loss assembly
        let b_sz = 3usize;
        let k = 4usize;
        let mut g = Graph::<f64>::new();
        let near_one = 1.0 - 1e-12;
        let src_real = g.constant(Tensor::from_vec(vec![b_sz, 1], vec![near_one; b_sz]).unwrap());
        let src_fake = g.constant(Tensor::from_vec(vec![b_sz, 1], vec![1e-12; b_sz]).unwrap());
        let mut real_probs = vec![1e-15; b_sz * (k + 1)];
        let mut fake_probs = vec![1e-15; b_sz * (k + 1)];
        for i in 0..b_sz {
            real_probs[i * (k + 1)] = near_one; // true class 0
            fake_probs[i * (k + 1) + k] = near_one; // fake-sample class
        }
        let cls_real = g.constant(Tensor::from_vec(vec![b_sz, k + 1], real_probs).unwrap());
        let cls_fake = g.constant(Tensor::from_vec(vec![b_sz, k + 1], fake_probs).unwrap());
        let (total, _, _) = d_loss_nodes(
            &mut g,
            DiscNodes { source_prob: src_real, class_probs: cls_real },
            DiscNodes { source_prob: src_fake, class_probs: cls_fake },
            &vec![0; b_sz],
            &vec![1; b_sz],
            k,
            AcLossMode::Modified,
        )
        .unwrap();
        g.evaluate(&[]).unwrap();
        let v = g.scalar_value(total).unwrap();
        assert!(v.abs() < 1e-9, "loss {v}");
    }

    #[test]
    fn uniform_head_generator_loss_matches_arithmetic() {
        let k = 10;
        let b: ModelBundle<f64> = bundle(Variant::Vcgan, k, 7);
        let d = b.discriminator_params();
        zero_params(&d[d.len() - 2..]);
        let classes = vec![0usize, 3, 7, 1];
        let mut rng = Rng::from_seed(8);
        let inputs = b.draw_generator_inputs(4, &mut rng);
        let loss = generator_loss(&b, &classes, &inputs, 1.0).unwrap();
        let adv = loss.total - loss.kl / 2.0;
        let want = 2.0f64.ln() + 11.0f64.ln();
        assert!((adv - want).abs() < 1e-9, "{adv} vs {want}");
    }

    #[test]
    fn zero_posterior_contributes_zero_kl() {
        let k = 4;
        let b: ModelBundle<f64> = bundle(Variant::Vcgan, k, 9);
        zero_params(&b.encoder_params());
        let mut rng = Rng::from_seed(10);
        let inputs = b.draw_generator_inputs(4, &mut rng);
        let loss = generator_loss(&b, &[0, 1, 2, 3], &inputs, 1.0).unwrap();
        assert_eq!(loss.kl, 0.0);
    }

    #[test]
    fn kl_weight_zero_is_expressible_and_shifts_total_by_kl() {
        let k = 4;
        let b: ModelBundle<f64> = bundle(Variant::Vcgan, k, 11);
        let mut rng = Rng::from_seed(12);
        let inputs = b.draw_generator_inputs(4, &mut rng);
        let classes = [0usize, 1, 2, 3];
        let with = generator_loss(&b, &classes, &inputs, 1.0).unwrap();
        let without = generator_loss(&b, &classes, &inputs, 0.0).unwrap();
        assert!(with.kl.is_finite() && with.kl >= 0.0);
        // the loss carries the dimension-normalized KL (latent width 2 here)
        assert!((with.total - without.total - with.kl / 2.0).abs() < 1e-9);
    }

    #[test]
    fn concat_variant_has_no_kl_term() {
        let k = 4;
        let b: ModelBundle<f64> = bundle(Variant::ConcatCgan, k, 13);
        let mut rng = Rng::from_seed(14);
        let inputs = b.draw_generator_inputs(4, &mut rng);
        let loss = generator_loss(&b, &[0, 1, 2, 3], &inputs, 1.0).unwrap();
        assert_eq!(loss.kl, 0.0);
        assert!(b.encoder_params().is_empty());
    }

    #[test]
    fn discriminator_gradients_match_finite_differences() {
        let k = 3;
        let b: ModelBundle<f64> = bundle(Variant::Vcgan, k, 15);
        let real = point_batch::<f64>(4, k, 16);
        let fake = point_batch::<f64>(4, k, 17);
        b.zero_grads();
        discriminator_loss(&b, &real, &fake, AcLossMode::Modified).unwrap();
        let params = b.discriminator_params();
        let report = crate::diffcore::gradcheck::check_param_gradients(
            &params,
            || discriminator_loss(&b, &real, &fake, AcLossMode::Modified).unwrap().total,
            1e-5,
        );
        assert!(report.passes(1e-4), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn generator_gradients_match_finite_differences_and_reach_everything() {
        let k = 3;
        let b: ModelBundle<f64> = bundle(Variant::Vcgan, k, 18);
        let mut rng = Rng::from_seed(19);
        let inputs = b.draw_generator_inputs(4, &mut rng);
        let classes = [0usize, 1, 2, 0];
        b.zero_grads();
        generator_loss(&b, &classes, &inputs, 1.0).unwrap();
        for p in b.generator_params() {
            let grad = p.grad_clone().expect("generator parameter missing gradient");
            assert!(
                grad.iter().any(|&g| g != 0.0),
                "generator parameter {} has all-zero gradient",
                p.name
            );
        }
        for p in b.discriminator_params() {
            assert!(
                p.grad_clone().is_none(),
                "discriminator parameter {} received gradient from the generator loss",
                p.name
            );
        }
        let params = b.generator_params();
        let report = crate::diffcore::gradcheck::check_param_gradients(
            &params,
            || generator_loss(&b, &classes, &inputs, 1.0).unwrap().total,
            1e-5,
        );
        assert!(report.passes(1e-4), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn concat_variant_never_touches_encoder_parameters() {
        // the variational encoder exists only in its own variant; the
        // concatenation baseline must not even have the parameter set
        let b: ModelBundle<f64> = bundle(Variant::ConcatCgan, 3, 20);
        assert!(b.encoder_params().is_empty());
        assert!(b.image_encoder_params().is_empty());
        let mut rng = Rng::from_seed(21);
        let inputs = b.draw_generator_inputs(4, &mut rng);
        b.zero_grads();
        generator_loss(&b, &[0, 1, 2, 0], &inputs, 1.0).unwrap();
        for p in b.decoder_params() {
            assert!(p.grad_clone().is_some(), "decoder parameter {} missing gradient", p.name);
        }
    }

    #[test]
    fn cvae_loss_is_zero_for_perfect_reconstruction_at_the_prior() {
        let k = 4;
        let b: ModelBundle<f64> = bundle(Variant::Cvae, k, 22);
        zero_params(&b.generator_params());
        // zero weights: posterior is standard normal, decoder output is 0
        let batch = Batch::new(
            Tensor::from_vec(vec![4, 2], vec![0.0; 8]).unwrap(),
            vec![0, 1, 2, 3],
            k,
        )
        .unwrap();
        let eps = Tensor::from_vec(vec![4, 2], vec![0.3; 8]).unwrap();
        let loss = cvae_loss(&b, &batch, &eps, 1.0).unwrap();
        assert_eq!(loss.total, 0.0);
        assert_eq!(loss.kl, 0.0);
        assert_eq!(loss.reconstruction, 0.0);
    }

    #[test]
    fn cvae_gradients_match_finite_differences() {
        let k = 3;
        let b: ModelBundle<f64> = bundle(Variant::Cvae, k, 23);
        let batch = point_batch::<f64>(4, k, 24);
        let eps =
            Tensor::from_vec(vec![4, 2], vec![0.1, -0.4, 0.9, 0.2, -0.7, 0.5, 0.0, 1.1]).unwrap();
        b.zero_grads();
        cvae_loss(&b, &batch, &eps, 1.0).unwrap();
        let params = b.generator_params();
        let report = crate::diffcore::gradcheck::check_param_gradients(
            &params,
            || cvae_loss(&b, &batch, &eps, 1.0).unwrap().total,
            1e-5,
        );
        assert!(report.passes(1e-4), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn original_ac_shares_the_real_term_and_retargets_fakes() {
        let k = 10;
        let b: ModelBundle<f64> = bundle(Variant::Vcgan, k, 25);
        let real = point_batch::<f64>(6, k, 26);
        let fake = point_batch::<f64>(6, k, 27);
        let (real_mod, _) = ac_class_terms(&b, &real, &fake, AcLossMode::Modified).unwrap();
        let (real_orig, _) = ac_class_terms(&b, &real, &fake, AcLossMode::Original).unwrap();
        assert!((real_mod - real_orig).abs() < 1e-12);

        // uniform head: either convention scores -log(1/(K+1)) per fake
        let d = b.discriminator_params();
        zero_params(&d[d.len() - 2..]);
        let (_, fake_mod) = ac_class_terms(&b, &real, &fake, AcLossMode::Modified).unwrap();
        let (_, fake_orig) = ac_class_terms(&b, &real, &fake, AcLossMode::Original).unwrap();
        assert!((fake_mod - 11.0f64.ln()).abs() < 1e-9);
        assert!((fake_orig - 11.0f64.ln()).abs() < 1e-9);
        let total = original_ac_class_term(&b, &real, &fake).unwrap();
        assert!((total - 2.0 * 11.0f64.ln()).abs() < 1e-9);
    }

    fn param_bits<T: Scalar>(params: &[crate::diffcore::Param<T>]) -> Vec<Vec<u64>> {
        params
            .iter()
            .map(|p| p.data_clone().iter().map(|x| x.to_f64_val().to_bits()).collect())
            .collect()
    }

    #[test]
    fn alternation_keeps_the_fixed_network_bitwise_unchanged() {
        let k = 4;
        let b: ModelBundle<f32> = bundle(Variant::Vcgan, k, 28);
        let real = point_batch::<f32>(6, k, 29);
        let settings = TrainSettings::default();
        let mut d_opt = AdamState::new();
        let mut g_opt = AdamState::new();
        let mut rng = Rng::from_seed(30);

        b.spectral_update();
        let g_before = param_bits(&b.generator_params());
        d_phase(&b, &real, &settings, &mut d_opt, 0, &mut rng).unwrap();
        assert_eq!(g_before, param_bits(&b.generator_params()));

        let d_before = param_bits(&b.discriminator_params());
        g_phase(&b, real.len(), &settings, &mut g_opt, 0, &mut rng).unwrap();
        assert_eq!(d_before, param_bits(&b.discriminator_params()));
    }

    #[test]
    fn zero_learning_rate_reports_losses_but_changes_nothing() {
        let k = 4;
        let b: ModelBundle<f32> = bundle(Variant::Vcgan, k, 31);
        let real = point_batch::<f32>(6, k, 32);
        let settings = TrainSettings {
            optimizer: OptimizerConfig { learning_rate: 0.0, ..Default::default() },
            ..Default::default()
        };
        let mut d_opt = AdamState::new();
        let mut g_opt = AdamState::new();
        let mut rng = Rng::from_seed(33);
        let before = param_bits(&b.all_params());
        let report =
            train_step(&b, &real, &settings, &mut d_opt, &mut g_opt, 0, &mut rng).unwrap();
        assert_eq!(before, param_bits(&b.all_params()));
        assert!(report.loss_d > 0.0 && report.loss_g > 0.0);
    }

    #[test]
    fn identical_seeds_reproduce_loss_reports_for_200_steps() {
        let run = || {
            let k = 3;
            let b: ModelBundle<f32> = bundle(Variant::Vcgan, k, 34);
            let settings = TrainSettings::default();
            let mut d_opt = AdamState::new();
            let mut g_opt = AdamState::new();
            let mut rng = Rng::from_seed(35);
            let mut reports = Vec::new();
            for step in 0..200 {
                let real = point_batch::<f32>(4, k, 1000 + step);
                reports.push(
                    train_step(&b, &real, &settings, &mut d_opt, &mut g_opt, step, &mut rng)
                        .unwrap(),
                );
            }
            reports
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn nan_parameters_abort_with_a_diagnostic() {
        let k = 3;
        let b: ModelBundle<f32> = bundle(Variant::Vcgan, k, 36);
        let p = &b.decoder_params()[0];
        p.value_mut().data[0] = f32::NAN;
        let real = point_batch::<f32>(4, k, 37);
        let settings = TrainSettings::default();
        let mut d_opt = AdamState::new();
        let mut g_opt = AdamState::new();
        let mut rng = Rng::from_seed(38);
        let err =
            train_step(&b, &real, &settings, &mut d_opt, &mut g_opt, 7, &mut rng).unwrap_err();
        match err {
            TrainError::NonFinite { step, term } => {
                assert_eq!(step, 7);
                assert!(!term.is_empty());
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn cvae_train_step_reports_zero_adversarial_terms() {
        let k = 3;
        let b: ModelBundle<f32> = bundle(Variant::Cvae, k, 39);
        let real = point_batch::<f32>(4, k, 40);
        let settings = TrainSettings::default();
        let mut d_opt = AdamState::new();
        let mut g_opt = AdamState::new();
        let mut rng = Rng::from_seed(41);
        let report =
            train_step(&b, &real, &settings, &mut d_opt, &mut g_opt, 0, &mut rng).unwrap();
        assert_eq!(report.loss_d, 0.0);
        assert_eq!(report.source_term, 0.0);
        assert_eq!(report.class_term, 0.0);
        assert!(report.loss_g.is_finite());
        assert!(report.kl >= 0.0);
    }
}

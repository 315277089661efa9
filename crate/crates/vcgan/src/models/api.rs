//! Single-sample model operations: posterior inference, decoding,
//! discrimination, conditional generation, and condition interpolation.
//! These wrap evaluation-mode graphs; training uses the graph builders
//! directly.

use crate::diffcore::{Graph, Mode, Scalar, Tensor};
use crate::probdist::{self, DiagonalGaussian, TruncationRange};
use crate::rng::Rng;

use super::{ConditionVector, ModelBundle, ModelError, NoiseVector, Variant};

/// Discriminator verdict for one sample: probability the sample is real
/// and a distribution over the K classes plus the fake-sample class.
#[derive(Debug, Clone)]
pub struct DiscriminatorOutput<T: Scalar> {
    pub source_prob: T,
    pub class_probs: Vec<T>,
}

impl<T: Scalar> ModelBundle<T> {
    fn decoder_input_width(&self) -> usize {
        match self.variant {
            Variant::Vcgan | Variant::Cvae => self.dims.n_latent,
            Variant::ConcatCgan => self.dims.n_condition + self.dims.n_noise,
            Variant::CbnCgan => self.dims.n_noise,
        }
    }

    fn check_condition(&self, c: &ConditionVector<T>) -> Result<(), ModelError> {
        if c.values.len() != self.dims.n_condition {
            return Err(ModelError::DimMismatch(format!(
                "condition vector has {} entries, model expects {}",
                c.values.len(),
                self.dims.n_condition
            )));
        }
        Ok(())
    }

    /// Posterior over the latent variable given only the condition and a
    /// noise vector.
    pub fn encode(
        &self,
        c: &ConditionVector<T>,
        phi: &NoiseVector<T>,
    ) -> Result<DiagonalGaussian<T>, ModelError> {
        self.check_condition(c)?;
        if phi.values.len() != self.dims.n_noise {
            return Err(ModelError::DimMismatch(format!(
                "noise vector has {} entries, model expects {}",
                phi.values.len(),
                self.dims.n_noise
            )));
        }
        let mut g = Graph::new();
        let cond = g.constant(Tensor::from_vec(vec![1, c.values.len()], c.values.clone())?);
        let noise = g.constant(Tensor::from_vec(vec![1, phi.values.len()], phi.values.clone())?);
        let post = self.build_condition_encoder(&mut g, cond, noise)?;
        g.evaluate(&[])?;
        Ok(DiagonalGaussian::new(
            g.value_data(post.mu)?.to_vec(),
            g.value_data(post.logvar)?.to_vec(),
        )?)
    }

    /// Posterior over the latent variable given a sample and its condition
    /// (conditional-VAE variant only).
    pub fn encode_cvae(
        &self,
        x: &Tensor<T>,
        c: &ConditionVector<T>,
    ) -> Result<DiagonalGaussian<T>, ModelError> {
        self.check_condition(c)?;
        if x.shape != self.dims.sample_shape {
            return Err(ModelError::DimMismatch(format!(
                "sample has shape {:?}, model expects {:?}",
                x.shape, self.dims.sample_shape
            )));
        }
        let mut g = Graph::new();
        let flat = g.constant(Tensor::from_vec(vec![1, x.numel()], x.data.clone())?);
        let cond = g.constant(Tensor::from_vec(vec![1, c.values.len()], c.values.clone())?);
        let post = self.build_image_encoder(&mut g, flat, cond)?;
        g.evaluate(&[])?;
        Ok(DiagonalGaussian::new(
            g.value_data(post.mu)?.to_vec(),
            g.value_data(post.logvar)?.to_vec(),
        )?)
    }

    /// Decode one latent vector to a sample (inference mode). Variants
    /// whose decoder is condition-driven need [`ModelBundle::decode_conditioned`].
    pub fn decode(&self, z: &[T]) -> Result<Tensor<T>, ModelError> {
        self.decode_conditioned(z, None)
    }

    /// Decode with an optional class index for the per-class batch-norm
    /// tables of the conditional-batch-norm variant.
    pub fn decode_conditioned(&self, z: &[T], class: Option<usize>) -> Result<Tensor<T>, ModelError> {
        let width = self.decoder_input_width();
        if z.len() != width {
            return Err(ModelError::DimMismatch(format!(
                "latent vector has {} entries, decoder expects {}",
                z.len(),
                width
            )));
        }
        let mut g = Graph::new();
        let zn = g.constant(Tensor::from_vec(vec![1, width], z.to_vec())?);
        let classes = class.map(|k| vec![k]);
        let sample = self.build_decoder(&mut g, zn, classes.as_deref(), Mode::Eval)?;
        g.evaluate(&[])?;
        let flat = g.value_data(sample)?.to_vec();
        Ok(Tensor::from_vec(self.dims.sample_shape.clone(), flat)?)
    }

    /// Source and class probabilities for one sample.
    pub fn discriminate(&self, x: &Tensor<T>) -> Result<DiscriminatorOutput<T>, ModelError> {
        if x.shape != self.dims.sample_shape {
            return Err(ModelError::DimMismatch(format!(
                "sample has shape {:?}, discriminator expects {:?}",
                x.shape, self.dims.sample_shape
            )));
        }
        let mut g = Graph::new();
        let mut shape = vec![1];
        shape.extend_from_slice(&x.shape);
        let xn = g.constant(Tensor::from_vec(shape, x.data.clone())?);
        let nodes = self.build_discriminator_frozen(&mut g, xn, Mode::Eval)?;
        g.evaluate(&[])?;
        Ok(DiscriminatorOutput {
            source_prob: g.value_data(nodes.source_prob)?[0],
            class_probs: g.value_data(nodes.class_probs)?.to_vec(),
        })
    }

    /// Conditional generation with test-time truncation. Returns only the
    /// sample; [`ModelBundle::generate_traced`] exposes the internals.
    pub fn generate(
        &self,
        c: &ConditionVector<T>,
        range: TruncationRange,
        rng: &mut Rng,
    ) -> Result<Tensor<T>, ModelError> {
        self.generate_traced(c, range, rng).map(|(x, _, _)| x)
    }

    /// As [`ModelBundle::generate`], also returning the latent vector fed
    /// to the decoder and the inferred posterior when the variant has one.
    #[allow(clippy::type_complexity)]
    pub fn generate_traced(
        &self,
        c: &ConditionVector<T>,
        range: TruncationRange,
        rng: &mut Rng,
    ) -> Result<(Tensor<T>, Vec<T>, Option<DiagonalGaussian<T>>), ModelError> {
        self.check_condition(c)?;
        match self.variant {
            Variant::Vcgan => {
                let phi = NoiseVector::standard(self.dims.n_noise, rng);
                let posterior = self.encode(c, &phi)?;
                let z = probdist::sample_truncated(&posterior, range, rng)?;
                let x = self.decode(&z)?;
                Ok((x, z, Some(posterior)))
            }
            Variant::ConcatCgan => {
                let noise = probdist::sample_truncated(
                    &DiagonalGaussian::standard(self.dims.n_noise),
                    range,
                    rng,
                )?;
                let mut z = c.values.clone();
                z.extend_from_slice(&noise);
                let x = self.decode(&z)?;
                Ok((x, z, None))
            }
            Variant::CbnCgan => {
                let class = c.class_index.ok_or(ModelError::MissingClassIndex)?;
                let z = probdist::sample_truncated(
                    &DiagonalGaussian::standard(self.dims.n_noise),
                    range,
                    rng,
                )?;
                let x = self.decode_conditioned(&z, Some(class))?;
                Ok((x, z, None))
            }
            Variant::Cvae => {
                // test-time latents come from the prior, so the draw cannot
                // depend on the condition
                let z = probdist::sample_truncated(
                    &DiagonalGaussian::standard(self.dims.n_latent),
                    range,
                    rng,
                )?;
                let x = self.decode(&z)?;
                Ok((x, z, None))
            }
        }
    }

    /// Batched conditional generation (inference mode) for evaluation:
    /// one decoder pass for the whole class list.
    pub fn generate_batch(
        &self,
        classes: &[usize],
        range: TruncationRange,
        rng: &mut Rng,
    ) -> Result<Tensor<T>, ModelError> {
        let batch = classes.len();
        if batch == 0 {
            return Ok(Tensor::zeros(self.batched_sample_shape(0)));
        }
        if let Some(&bad) = classes.iter().find(|&&k| k >= self.dims.n_classes) {
            return Err(ModelError::DimMismatch(format!(
                "class index {bad} out of {} classes",
                self.dims.n_classes
            )));
        }
        let draw_rows = |rows: usize,
                         cols: usize,
                         truncated: bool,
                         rng: &mut Rng|
         -> Result<Tensor<T>, ModelError> {
            let standard = DiagonalGaussian::<T>::standard(cols);
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                if truncated {
                    data.extend(probdist::sample_truncated(&standard, range, rng)?);
                } else {
                    for _ in 0..cols {
                        data.push(T::from_f64(rng.gaussian()));
                    }
                }
            }
            Ok(Tensor::from_vec(vec![rows, cols], data)?)
        };

        match self.variant {
            Variant::Vcgan => {
                // noise is never truncated; truncation applies to the
                // posterior draw via the reparameterization epsilon
                let phi = draw_rows(batch, self.dims.n_noise, false, rng)?;
                let eps = draw_rows(batch, self.dims.n_latent, true, rng)?;
                let mut g = Graph::new();
                let path = self.build_generator(&mut g, classes, Mode::Eval)?;
                g.output("x", path.sample);
                let mut out = g.evaluate(&[("phi", &phi), ("eps", &eps)])?;
                Ok(out.remove("x").unwrap())
            }
            Variant::ConcatCgan | Variant::CbnCgan => {
                let phi = draw_rows(batch, self.dims.n_noise, true, rng)?;
                let mut g = Graph::new();
                let path = self.build_generator(&mut g, classes, Mode::Eval)?;
                g.output("x", path.sample);
                let mut out = g.evaluate(&[("phi", &phi)])?;
                Ok(out.remove("x").unwrap())
            }
            Variant::Cvae => {
                let z = draw_rows(batch, self.dims.n_latent, true, rng)?;
                let mut g = Graph::new();
                let zn = g.constant(z);
                let sample = self.build_decoder(&mut g, zn, None, Mode::Eval)?;
                g.output("x", sample);
                let mut out = g.evaluate(&[])?;
                Ok(out.remove("x").unwrap())
            }
        }
    }

    /// Decode a linear sweep between two conditions with every source of
    /// randomness held fixed: the same noise vector and the same
    /// reparameterization draw serve every step.
    pub fn interpolate_conditions(
        &self,
        c_a: &ConditionVector<T>,
        c_b: &ConditionVector<T>,
        steps: usize,
        phi: &NoiseVector<T>,
        range: TruncationRange,
        rng: &mut Rng,
    ) -> Result<Vec<Tensor<T>>, ModelError> {
        if steps < 2 {
            return Err(ModelError::TooFewSteps(steps));
        }
        self.check_condition(c_a)?;
        self.check_condition(c_b)?;
        let mut out = Vec::with_capacity(steps);
        match self.variant {
            Variant::Vcgan => {
                // one truncated epsilon, reused at every step: the bound
                // |z - mu| <= m * sigma holds for every posterior because
                // it is equivalent to |eps| <= m
                let eps = probdist::sample_truncated(
                    &DiagonalGaussian::standard(self.dims.n_latent),
                    range,
                    rng,
                )?;
                for t in 0..steps {
                    let frac = t as f64 / (steps - 1) as f64;
                    let c_t = ConditionVector::lerp(c_a, c_b, frac);
                    let posterior = self.encode(&c_t, phi)?;
                    let z = probdist::reparameterize(&posterior, &eps)?;
                    out.push(self.decode(&z)?);
                }
            }
            Variant::ConcatCgan => {
                for t in 0..steps {
                    let frac = t as f64 / (steps - 1) as f64;
                    let c_t = ConditionVector::lerp(c_a, c_b, frac);
                    let mut z = c_t.values.clone();
                    z.extend_from_slice(&phi.values);
                    out.push(self.decode(&z)?);
                }
            }
            Variant::CbnCgan => {
                for t in 0..steps {
                    let frac = t as f64 / (steps - 1) as f64;
                    let c_t = ConditionVector::lerp(c_a, c_b, frac);
                    let class = c_t.class_index.ok_or(ModelError::MissingClassIndex)?;
                    out.push(self.decode_conditioned(&phi.values, Some(class))?);
                }
            }
            Variant::Cvae => {
                // the prior draw cannot depend on the condition, so the
                // sweep degenerates to one repeated sample
                let z = probdist::sample_truncated(
                    &DiagonalGaussian::standard(self.dims.n_latent),
                    range,
                    rng,
                )?;
                let x = self.decode(&z)?;
                out.resize(steps, x);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelDims;

    fn tiny_dims(k: usize) -> ModelDims {
        ModelDims {
            n_classes: k,
            n_condition: k,
            n_noise: 6,
            n_latent: 4,
            sample_shape: vec![2],
            enc_hidden: vec![8, 8],
            dec_hidden: vec![8, 8],
            disc_hidden: vec![8, 8],
            conv_channels: 4,
        }
    }

    fn bundle(variant: Variant, k: usize, seed: u64) -> ModelBundle<f32> {
        let mut rng = Rng::from_seed(seed);
        ModelBundle::new(variant, tiny_dims(k), &mut rng).unwrap()
    }

    #[test]
    fn encode_emits_latent_sized_posterior_at_reference_dims() {
        // reference configuration: 10 one-hot classes, 128-wide noise and latent
        let mut rng = Rng::from_seed(1);
        let dims = ModelDims::for_points(10, 2);
        let b = ModelBundle::<f32>::new(Variant::Vcgan, dims, &mut rng).unwrap();
        let c = ConditionVector::one_hot(3, 10).unwrap();
        let phi = NoiseVector::standard(128, &mut rng);
        let post = b.encode(&c, &phi).unwrap();
        assert_eq!(post.dim(), 128);
        assert_eq!(post.mean().len(), 128);
        assert_eq!(post.log_variance().len(), 128);
    }

    #[test]
    fn zero_encoder_weights_yield_standard_posterior() {
        let b = bundle(Variant::Vcgan, 4, 2);
        for p in b.encoder_params() {
            let n = p.numel();
            p.value_mut().data = vec![0.0; n];
        }
        let mut rng = Rng::from_seed(3);
        let c = ConditionVector::one_hot(1, 4).unwrap();
        let phi = NoiseVector::standard(6, &mut rng);
        let post = b.encode(&c, &phi).unwrap();
        assert!(post.mean().iter().all(|&m| m == 0.0));
        assert!(post.log_variance().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoder_is_deterministic_in_its_inputs() {
        let b = bundle(Variant::Vcgan, 4, 4);
        let mut rng = Rng::from_seed(5);
        let c = ConditionVector::one_hot(2, 4).unwrap();
        let phi = NoiseVector::standard(6, &mut rng);
        let a = b.encode(&c, &phi).unwrap();
        let b2 = b.encode(&c, &phi).unwrap();
        assert_eq!(a, b2);
    }

    #[test]
    fn encode_rejects_wrong_variant_and_dims() {
        let b = bundle(Variant::Cvae, 4, 6);
        let mut rng = Rng::from_seed(7);
        let c = ConditionVector::one_hot(0, 4).unwrap();
        let phi = NoiseVector::standard(6, &mut rng);
        assert!(matches!(b.encode(&c, &phi), Err(ModelError::WrongVariant(..))));

        let b = bundle(Variant::Vcgan, 4, 6);
        let short_phi = NoiseVector { values: vec![0.0f32; 3] };
        assert!(b.encode(&c, &short_phi).is_err());
    }

    #[test]
    fn encode_cvae_shape_contract_and_zero_weights() {
        let b = bundle(Variant::Cvae, 4, 8);
        let x = Tensor::from_vec(vec![2], vec![0.25f32, -0.5]).unwrap();
        let c = ConditionVector::one_hot(3, 4).unwrap();
        let post = b.encode_cvae(&x, &c).unwrap();
        assert_eq!(post.dim(), 4);

        for p in b.image_encoder_params() {
            let n = p.numel();
            p.value_mut().data = vec![0.0; n];
        }
        let post = b.encode_cvae(&x, &c).unwrap();
        assert!(post.mean().iter().all(|&m| m == 0.0));
        assert!(post.log_variance().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decode_shape_range_and_determinism() {
        for variant in [Variant::Vcgan, Variant::ConcatCgan, Variant::Cvae] {
            let b = bundle(variant, 4, 9);
            let width = b.decoder_input_width();
            let z: Vec<f32> = (0..width).map(|i| (i as f32 * 0.7).sin() * 3.0).collect();
            let x = b.decode(&z).unwrap();
            assert_eq!(x.shape, vec![2], "{variant:?}");
            assert!(x.data.iter().all(|&v| v > -1.0 && v < 1.0), "{variant:?}");
            let x2 = b.decode(&z).unwrap();
            assert_eq!(x.data, x2.data, "{variant:?}");
        }
    }

    #[test]
    fn image_decoder_emits_configured_shape() {
        let mut rng = Rng::from_seed(10);
        let mut dims = ModelDims::for_images(4, 1);
        dims.n_noise = 6;
        dims.n_latent = 4;
        dims.enc_hidden = vec![8];
        dims.conv_channels = 2;
        let b = ModelBundle::<f32>::new(Variant::Vcgan, dims, &mut rng).unwrap();
        let z = vec![0.5f32; 4];
        let x = b.decode(&z).unwrap();
        assert_eq!(x.shape, vec![1, 8, 8]);
        assert!(x.data.iter().all(|&v| v > -1.0 && v < 1.0));
    }

    #[test]
    fn discriminator_head_has_k_plus_two_units() {
        let k = 10;
        let b = bundle(Variant::Vcgan, k, 11);
        let d = b.discriminator.as_ref().unwrap();
        assert_eq!(d.head.w.shape()[1], k + 2);
        let x = Tensor::from_vec(vec![2], vec![0.1f32, -0.2]).unwrap();
        let out = b.discriminate(&x).unwrap();
        assert_eq!(out.class_probs.len(), k + 1);
    }

    #[test]
    fn zero_head_weights_give_uniform_outputs() {
        let k = 10;
        let b = bundle(Variant::Vcgan, k, 12);
        let d = b.discriminator.as_ref().unwrap();
        let n = d.head.w.numel();
        d.head.w.value_mut().data = vec![0.0; n];
        let n = d.head.b.numel();
        d.head.b.value_mut().data = vec![0.0; n];
        let x = Tensor::from_vec(vec![2], vec![0.3f32, 0.9]).unwrap();
        let out = b.discriminate(&x).unwrap();
        assert!((out.source_prob - 0.5).abs() < 1e-6);
        for &p in &out.class_probs {
            assert!((p - 1.0 / 11.0).abs() < 1e-6);
        }
    }

    #[test]
    fn class_probs_sum_to_one_for_random_inputs() {
        let b = bundle(Variant::Vcgan, 5, 13);
        let mut rng = Rng::from_seed(14);
        for _ in 0..20 {
            let x = Tensor::randn(vec![2], 2.0, &mut rng);
            let out = b.discriminate(&x).unwrap();
            let sum: f32 = out.class_probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(out.source_prob > 0.0 && out.source_prob < 1.0);
        }
    }

    #[test]
    fn generation_is_deterministic_under_a_seed() {
        for variant in [Variant::Vcgan, Variant::ConcatCgan, Variant::CbnCgan, Variant::Cvae] {
            let b = bundle(variant, 4, 15);
            let c = ConditionVector::one_hot(2, 4).unwrap();
            let mut r1 = Rng::from_seed(99);
            let mut r2 = Rng::from_seed(99);
            let a = b.generate(&c, TruncationRange::Multiplier(2.0), &mut r1).unwrap();
            let z = b.generate(&c, TruncationRange::Multiplier(2.0), &mut r2).unwrap();
            assert_eq!(a.data, z.data, "{variant:?}");
        }
    }

    #[test]
    fn truncated_generation_respects_the_bound() {
        let b = bundle(Variant::Vcgan, 4, 16);
        let c = ConditionVector::one_hot(1, 4).unwrap();
        let mut rng = Rng::from_seed(17);
        for _ in 0..50 {
            let (_, z, posterior) =
                b.generate_traced(&c, TruncationRange::Multiplier(2.0), &mut rng).unwrap();
            let post = posterior.unwrap();
            let sigma = post.sigma();
            for j in 0..z.len() {
                assert!((z[j] - post.mean()[j]).abs() <= 2.0 * sigma[j] + 1e-5);
            }
        }
    }

    #[test]
    fn cvae_test_time_latent_ignores_the_condition() {
        let b = bundle(Variant::Cvae, 4, 18);
        let c_a = ConditionVector::one_hot(0, 4).unwrap();
        let c_b = ConditionVector::one_hot(3, 4).unwrap();
        let mut r1 = Rng::from_seed(500);
        let mut r2 = Rng::from_seed(500);
        let (xa, za, _) = b.generate_traced(&c_a, TruncationRange::None, &mut r1).unwrap();
        let (xb, zb, _) = b.generate_traced(&c_b, TruncationRange::None, &mut r2).unwrap();
        assert_eq!(za, zb);
        assert_eq!(xa.data, xb.data);
    }

    #[test]
    fn cbn_generation_requires_a_class_index() {
        let b = bundle(Variant::CbnCgan, 4, 19);
        let soft = ConditionVector::embedding(vec![0.25f32; 4]);
        let mut rng = Rng::from_seed(20);
        assert!(matches!(
            b.generate(&soft, TruncationRange::None, &mut rng),
            Err(ModelError::MissingClassIndex)
        ));
    }

    #[test]
    fn interpolation_endpoints_match_generate_under_shared_randomness() {
        let b = bundle(Variant::Vcgan, 4, 21);
        let c_a = ConditionVector::one_hot(0, 4).unwrap();
        let c_b = ConditionVector::one_hot(3, 4).unwrap();
        let range = TruncationRange::Multiplier(2.0);

        // generate() draws phi then the truncated epsilon; feeding the same
        // stream to the interpolation reproduces both endpoints exactly
        let mut r_gen = Rng::from_seed(777);
        let endpoint_a = b.generate(&c_a, range, &mut r_gen).unwrap();

        let mut r_interp = Rng::from_seed(777);
        let phi = NoiseVector::standard(6, &mut r_interp);
        let frames = b
            .interpolate_conditions(&c_a, &c_b, 5, &phi, range, &mut r_interp)
            .unwrap();
        assert_eq!(frames.len(), 5);
        assert_eq!(frames[0].data, endpoint_a.data);

        // and the b endpoint, reconstructed with the same draws by hand
        let last = frames.last().unwrap();
        let mut r_manual = Rng::from_seed(777);
        let phi2 = NoiseVector::standard(6, &mut r_manual);
        let eps = probdist::sample_truncated(
            &DiagonalGaussian::<f32>::standard(4),
            range,
            &mut r_manual,
        )
        .unwrap();
        let post_b = b.encode(&c_b, &phi2).unwrap();
        let z_b = probdist::reparameterize(&post_b, &eps).unwrap();
        let manual_b = b.decode(&z_b).unwrap();
        assert_eq!(last.data, manual_b.data);
    }

    #[test]
    fn interpolation_with_equal_endpoints_is_constant() {
        let b = bundle(Variant::Vcgan, 4, 22);
        let c = ConditionVector::one_hot(2, 4).unwrap();
        let mut rng = Rng::from_seed(23);
        let phi = NoiseVector::standard(6, &mut rng);
        let frames = b
            .interpolate_conditions(&c, &c, 4, &phi, TruncationRange::None, &mut rng)
            .unwrap();
        for f in &frames[1..] {
            assert_eq!(f.data, frames[0].data);
        }
    }

    #[test]
    fn interpolation_rejects_too_few_steps() {
        let b = bundle(Variant::Vcgan, 4, 24);
        let c = ConditionVector::one_hot(0, 4).unwrap();
        let mut rng = Rng::from_seed(25);
        let phi = NoiseVector::standard(6, &mut rng);
        assert!(matches!(
            b.interpolate_conditions(&c, &c, 1, &phi, TruncationRange::None, &mut rng),
            Err(ModelError::TooFewSteps(1))
        ));
    }

    #[test]
    fn generate_batch_matches_sample_shape_and_class_count() {
        let b = bundle(Variant::Vcgan, 4, 26);
        let mut rng = Rng::from_seed(27);
        let classes = [0usize, 1, 2, 3, 0, 1];
        let batch = b.generate_batch(&classes, TruncationRange::None, &mut rng).unwrap();
        assert_eq!(batch.shape, vec![6, 2]);
    }
}

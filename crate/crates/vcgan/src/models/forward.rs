//! Graph construction for each network: these methods wire a bundle's
//! parameters into a [`Graph`] so losses can differentiate end to end.

use crate::diffcore::{Graph, Mode, NodeId, Scalar, Tensor};
use crate::probdist::{self, LOG_VAR_MAX, LOG_VAR_MIN};
use crate::rng::Rng;

use super::{
    Decoder, DecoderNorm, Discriminator, ModelBundle, ModelError, PosteriorEncoder, Variant,
    LEAKY_SLOPE,
};

/// Posterior parameter nodes, each [B, J].
#[derive(Debug, Clone, Copy)]
pub struct PosteriorNodes {
    pub mu: NodeId,
    pub logvar: NodeId,
}

/// Discriminator head nodes: source probability [B, 1] and class
/// distribution [B, K+1] (last column is the fake-sample class).
#[derive(Debug, Clone, Copy)]
pub struct DiscNodes {
    pub source_prob: NodeId,
    pub class_probs: NodeId,
}

/// Generator forward path: the produced sample batch, plus the KL node and
/// posterior parameters when the variant infers a posterior.
#[derive(Debug, Clone, Copy)]
pub struct GenPath {
    pub sample: NodeId,
    pub kl: Option<NodeId>,
    pub posterior: Option<PosteriorNodes>,
}

/// Random inputs one generator forward pass consumes.
#[derive(Debug, Clone)]
pub struct GeneratorInputs<T: Scalar> {
    pub phi: Option<Tensor<T>>,
    pub eps: Option<Tensor<T>>,
}

pub(crate) fn one_hot_matrix<T: Scalar>(classes: &[usize], k: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); classes.len() * k];
    for (i, &c) in classes.iter().enumerate() {
        data[i * k + c] = T::one();
    }
    Tensor { shape: vec![classes.len(), k], data, requires_grad: false, grad: None }
}

fn encoder_forward<T: Scalar>(
    enc: &PosteriorEncoder<T>,
    g: &mut Graph<T>,
    mut h: NodeId,
) -> Result<PosteriorNodes, ModelError> {
    for layer in &enc.layers {
        let w = g.param(&layer.w);
        let b = g.param(&layer.b);
        h = g.matmul(h, w)?;
        h = g.add_bias(h, b)?;
        h = g.relu(h);
    }
    let w_mu = g.param(&enc.head_mu.w);
    let b_mu = g.param(&enc.head_mu.b);
    let mu = g.matmul(h, w_mu)?;
    let mu = g.add_bias(mu, b_mu)?;
    let w_lv = g.param(&enc.head_logvar.w);
    let b_lv = g.param(&enc.head_logvar.b);
    let lv = g.matmul(h, w_lv)?;
    let lv = g.add_bias(lv, b_lv)?;
    let lv = g.clamp(lv, T::from_f64(LOG_VAR_MIN), T::from_f64(LOG_VAR_MAX));
    Ok(PosteriorNodes { mu, logvar: lv })
}

impl<T: Scalar> ModelBundle<T> {
    /// Posterior from (condition, noise) nodes, both [B, *]. Only the
    /// variant with a condition encoder supports this.
    pub fn build_condition_encoder(
        &self,
        g: &mut Graph<T>,
        cond: NodeId,
        phi: NodeId,
    ) -> Result<PosteriorNodes, ModelError> {
        let enc = self.encoder.as_ref().ok_or(ModelError::WrongVariant(
            self.variant,
            "no condition encoder in this variant",
        ))?;
        let joined = g.concat_cols(cond, phi)?;
        encoder_forward(enc, g, joined)
    }

    /// Posterior from (flattened sample, condition) nodes, for the
    /// conditional-VAE variant.
    pub fn build_image_encoder(
        &self,
        g: &mut Graph<T>,
        x_flat: NodeId,
        cond: NodeId,
    ) -> Result<PosteriorNodes, ModelError> {
        let enc = self.image_encoder.as_ref().ok_or(ModelError::WrongVariant(
            self.variant,
            "no image encoder in this variant",
        ))?;
        let joined = g.concat_cols(x_flat, cond)?;
        encoder_forward(enc, g, joined)
    }

    /// Decoder from a latent batch [B, in] to a sample batch. `classes`
    /// drives the per-class batch-norm tables and is required only by the
    /// conditional-batch-norm variant.
    pub fn build_decoder(
        &self,
        g: &mut Graph<T>,
        z: NodeId,
        classes: Option<&[usize]>,
        mode: Mode,
    ) -> Result<NodeId, ModelError> {
        match &self.decoder {
            Decoder::Mlp { layers, cond_bn, out } => {
                let mut h = z;
                for (i, layer) in layers.iter().enumerate() {
                    let w = g.param(&layer.w);
                    let b = g.param(&layer.b);
                    h = g.matmul(h, w)?;
                    h = g.add_bias(h, b)?;
                    if let Some(tables) = cond_bn.get(i) {
                        let cls = classes.ok_or(ModelError::MissingClassIndex)?;
                        let gamma = g.param(&tables.gamma);
                        let beta = g.param(&tables.beta);
                        h = g.cond_batch_norm(h, gamma, beta, cls, &tables.state, mode)?;
                    }
                    h = g.relu(h);
                }
                let w = g.param(&out.w);
                let b = g.param(&out.b);
                h = g.matmul(h, w)?;
                h = g.add_bias(h, b)?;
                Ok(g.tanh(h))
            }
            Decoder::Conv { proj, norm0, kernel1, bias1, norm1, kernel2, bias2, channels } => {
                let (c0, _c1) = *channels;
                let batch = g.node_shape(z)[0];
                let w = g.param(&proj.w);
                let b = g.param(&proj.b);
                let h = g.matmul(z, w)?;
                let h = g.add_bias(h, b)?;
                let mut h = g.reshape(h, vec![batch, c0, 4, 4])?;
                h = self.apply_decoder_norm(g, h, norm0, classes, mode)?;
                h = g.relu(h);
                let k1 = g.param(kernel1);
                h = g.conv2d_transpose(h, k1, 2, 1)?;
                let b1 = g.param(bias1);
                h = g.add_channel_bias(h, b1)?;
                h = self.apply_decoder_norm(g, h, norm1, classes, mode)?;
                h = g.relu(h);
                let k2 = g.param(kernel2);
                h = g.conv2d_transpose(h, k2, 1, 1)?;
                let b2 = g.param(bias2);
                h = g.add_channel_bias(h, b2)?;
                Ok(g.tanh(h))
            }
        }
    }

    fn apply_decoder_norm(
        &self,
        g: &mut Graph<T>,
        h: NodeId,
        norm: &DecoderNorm<T>,
        classes: Option<&[usize]>,
        mode: Mode,
    ) -> Result<NodeId, ModelError> {
        match norm {
            DecoderNorm::Plain(bn) => {
                let gamma = g.param(&bn.gamma);
                let beta = g.param(&bn.beta);
                Ok(g.batch_norm(h, gamma, beta, &bn.state, mode)?)
            }
            DecoderNorm::Conditional(tables) => {
                let cls = classes.ok_or(ModelError::MissingClassIndex)?;
                let gamma = g.param(&tables.gamma);
                let beta = g.param(&tables.beta);
                Ok(g.cond_batch_norm(h, gamma, beta, cls, &tables.state, mode)?)
            }
        }
    }

    /// Discriminator trunk and head over a sample batch, with the weights
    /// wired as trainable parameter leaves.
    pub fn build_discriminator(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        mode: Mode,
    ) -> Result<DiscNodes, ModelError> {
        self.build_discriminator_impl(g, x, mode, true)
    }

    /// As [`ModelBundle::build_discriminator`], but with the discriminator
    /// weights frozen as constants: no gradient flows into them, which is
    /// how the generator phase keeps the discriminator fixed.
    pub fn build_discriminator_frozen(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        mode: Mode,
    ) -> Result<DiscNodes, ModelError> {
        self.build_discriminator_impl(g, x, mode, false)
    }

    fn build_discriminator_impl(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        mode: Mode,
        trainable: bool,
    ) -> Result<DiscNodes, ModelError> {
        let disc: &Discriminator<T> = self.discriminator.as_ref().ok_or(
            ModelError::WrongVariant(self.variant, "this variant has no discriminator"),
        )?;
        let leaf = |g: &mut Graph<T>, p: &crate::diffcore::Param<T>| -> NodeId {
            if trainable {
                g.param(p)
            } else {
                g.constant(p.value().clone())
            }
        };
        let mut h = x;
        for conv in &disc.conv_trunk {
            let k = leaf(g, &conv.kernel);
            let k = g.spectral_norm(k, &conv.sn)?;
            h = g.conv2d(h, k, conv.stride, conv.padding)?;
            let b = leaf(g, &conv.bias);
            h = g.add_channel_bias(h, b)?;
            if let Some(bn) = &conv.bn {
                let gamma = leaf(g, &bn.gamma);
                let beta = leaf(g, &bn.beta);
                h = g.batch_norm(h, gamma, beta, &bn.state, mode)?;
            }
            h = g.leaky_relu(h, T::from_f64(LEAKY_SLOPE));
        }
        if !disc.conv_trunk.is_empty() {
            let batch = g.node_shape(x)[0];
            let flat = self.dims.conv_channels * 2 * 16;
            h = g.reshape(h, vec![batch, flat])?;
        }
        for layer in &disc.mlp_trunk {
            let w = leaf(g, &layer.w);
            let w = g.spectral_norm(w, &layer.sn)?;
            h = g.matmul(h, w)?;
            let b = leaf(g, &layer.b);
            h = g.add_bias(h, b)?;
            if let Some(bn) = &layer.bn {
                let gamma = leaf(g, &bn.gamma);
                let beta = leaf(g, &bn.beta);
                h = g.batch_norm(h, gamma, beta, &bn.state, mode)?;
            }
            h = g.leaky_relu(h, T::from_f64(LEAKY_SLOPE));
        }
        let w = leaf(g, &disc.head.w);
        let w = g.spectral_norm(w, &disc.head.sn)?;
        let logits = g.matmul(h, w)?;
        let b = leaf(g, &disc.head.b);
        let logits = g.add_bias(logits, b)?;
        let k = self.dims.n_classes;
        let source_logit = g.slice_cols(logits, 0, 1)?;
        let source_prob = g.sigmoid(source_logit);
        let class_logits = g.slice_cols(logits, 1, k + 2)?;
        let class_probs = g.softmax(class_logits)?;
        Ok(DiscNodes { source_prob, class_probs })
    }

    /// Generator forward pass for the adversarial variants. The graph gains
    /// input placeholders for the random draws it consumes: `phi` [B, n_noise]
    /// and, when a posterior is inferred, `eps` [B, n_latent].
    pub fn build_generator(
        &self,
        g: &mut Graph<T>,
        classes: &[usize],
        mode: Mode,
    ) -> Result<GenPath, ModelError> {
        let batch = classes.len();
        let cond = g.constant(one_hot_matrix(classes, self.dims.n_condition));
        match self.variant {
            Variant::Vcgan => {
                let phi = g.input("phi", vec![batch, self.dims.n_noise]);
                let posterior = self.build_condition_encoder(g, cond, phi)?;
                let eps = g.input("eps", vec![batch, self.dims.n_latent]);
                let z = probdist::reparameterize_node(g, posterior.mu, posterior.logvar, eps)?;
                let kl = probdist::kl_node(g, posterior.mu, posterior.logvar)?;
                let sample = self.build_decoder(g, z, None, mode)?;
                Ok(GenPath { sample, kl: Some(kl), posterior: Some(posterior) })
            }
            Variant::ConcatCgan => {
                let phi = g.input("phi", vec![batch, self.dims.n_noise]);
                let z = g.concat_cols(cond, phi)?;
                let sample = self.build_decoder(g, z, None, mode)?;
                Ok(GenPath { sample, kl: None, posterior: None })
            }
            Variant::CbnCgan => {
                let phi = g.input("phi", vec![batch, self.dims.n_noise]);
                let sample = self.build_decoder(g, phi, Some(classes), mode)?;
                Ok(GenPath { sample, kl: None, posterior: None })
            }
            Variant::Cvae => Err(ModelError::WrongVariant(
                Variant::Cvae,
                "the conditional VAE trains by reconstruction, not adversarially",
            )),
        }
    }

    /// Reconstruction path for the conditional-VAE variant: encodes the
    /// sample input `x` with its condition, reparameterizes through an
    /// `eps` placeholder, and decodes. Returns (reconstruction, posterior, kl).
    pub fn build_cvae_path(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        classes: &[usize],
        mode: Mode,
    ) -> Result<(NodeId, PosteriorNodes, NodeId), ModelError> {
        let batch = classes.len();
        let cond = g.constant(one_hot_matrix(classes, self.dims.n_condition));
        let x_flat = g.reshape(x, vec![batch, self.dims.sample_len()])?;
        let posterior = self.build_image_encoder(g, x_flat, cond)?;
        let eps = g.input("eps", vec![batch, self.dims.n_latent]);
        let z = probdist::reparameterize_node(g, posterior.mu, posterior.logvar, eps)?;
        let kl = probdist::kl_node(g, posterior.mu, posterior.logvar)?;
        let recon = self.build_decoder(g, z, None, mode)?;
        Ok((recon, posterior, kl))
    }

    /// Draw the random tensors one generator evaluation consumes, in a
    /// fixed order (noise first, then reparameterization epsilon).
    pub fn draw_generator_inputs(&self, batch: usize, rng: &mut Rng) -> GeneratorInputs<T> {
        let gauss = |rng: &mut Rng, rows: usize, cols: usize| {
            let data = (0..rows * cols).map(|_| T::from_f64(rng.gaussian())).collect();
            Tensor { shape: vec![rows, cols], data, requires_grad: false, grad: None }
        };
        match self.variant {
            Variant::Vcgan => GeneratorInputs {
                phi: Some(gauss(rng, batch, self.dims.n_noise)),
                eps: Some(gauss(rng, batch, self.dims.n_latent)),
            },
            Variant::ConcatCgan | Variant::CbnCgan => GeneratorInputs {
                phi: Some(gauss(rng, batch, self.dims.n_noise)),
                eps: None,
            },
            Variant::Cvae => GeneratorInputs {
                phi: None,
                eps: Some(gauss(rng, batch, self.dims.n_latent)),
            },
        }
    }

    /// Sample batch shape for a batch of `n` samples.
    pub fn batched_sample_shape(&self, n: usize) -> Vec<usize> {
        let mut shape = vec![n];
        shape.extend_from_slice(&self.dims.sample_shape);
        shape
    }
}

/// Build the input binding list for [`GeneratorInputs`].
pub fn bind_inputs<'a, T: Scalar>(draw: &'a GeneratorInputs<T>) -> Vec<(&'static str, &'a Tensor<T>)> {
    let mut out = Vec::new();
    if let Some(phi) = &draw.phi {
        out.push(("phi", phi));
    }
    if let Some(eps) = &draw.eps {
        out.push(("eps", eps));
    }
    out
}

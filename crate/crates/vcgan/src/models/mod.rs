//! Generator variants and the shared discriminator.
//!
//! Four bundle variants train under the same harness:
//! - `Vcgan`: encoder infers a latent posterior from (condition, noise),
//!   decoder maps latent samples to data, trained adversarially with a KL
//!   regularizer.
//! - `ConcatCgan`: decoder consumes the concatenated (condition, noise)
//!   directly; no encoder, no KL.
//! - `CbnCgan`: decoder consumes noise, condition enters through per-class
//!   batch-norm gain/bias tables in every hidden layer.
//! - `Cvae`: image encoder q(z|x,c) plus decoder, squared-error
//!   reconstruction, no discriminator; test-time latents come from the
//!   prior.

mod api;
mod forward;

pub use api::DiscriminatorOutput;
pub use forward::{bind_inputs, DiscNodes, GenPath, GeneratorInputs, PosteriorNodes};

use std::cell::RefCell;
use std::rc::Rc;

use crate::diffcore::spectral::SpectralState;
use crate::diffcore::{BnState, DiffError, Param, Scalar, SharedBn, SharedSn, Tensor};
use crate::probdist::DistError;
use crate::rng::Rng;

const INIT_STD: f64 = 0.02;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("operation not available for variant {0:?}: {1}")]
    WrongVariant(Variant, &'static str),
    #[error("condition vector has no class index, required by this variant")]
    MissingClassIndex,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("need at least 2 interpolation steps, got {0}")]
    TooFewSteps(usize),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Vcgan,
    ConcatCgan,
    CbnCgan,
    Cvae,
}

impl Variant {
    pub fn parse(s: &str) -> Option<Variant> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vcgan" => Some(Variant::Vcgan),
            "concat" | "concat-cgan" | "concatcgan" => Some(Variant::ConcatCgan),
            "cbn" | "cbn-cgan" | "cbncgan" => Some(Variant::CbnCgan),
            "cvae" => Some(Variant::Cvae),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Vcgan => "vcgan",
            Variant::ConcatCgan => "concat",
            Variant::CbnCgan => "cbn",
            Variant::Cvae => "cvae",
        }
    }
}

/// Class-condition input: one-hot for labels, or an arbitrary embedding
/// (e.g. an interpolant between two one-hot vectors).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionVector<T: Scalar> {
    pub values: Vec<T>,
    pub class_index: Option<usize>,
}

impl<T: Scalar> ConditionVector<T> {
    pub fn one_hot(class: usize, k: usize) -> Result<Self, ModelError> {
        if class >= k {
            return Err(ModelError::DimMismatch(format!(
                "class index {class} out of {k} classes"
            )));
        }
        let mut values = vec![T::zero(); k];
        values[class] = T::one();
        Ok(ConditionVector { values, class_index: Some(class) })
    }

    pub fn embedding(values: Vec<T>) -> Self {
        ConditionVector { values, class_index: None }
    }

    /// (1 - t) * a + t * b. The class index survives only when both ends
    /// agree on it.
    pub fn lerp(a: &Self, b: &Self, t: f64) -> Self {
        let tt = T::from_f64(t);
        let values = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(&x, &y)| (T::one() - tt) * x + tt * y)
            .collect();
        let class_index = match (a.class_index, b.class_index) {
            (Some(x), Some(y)) if x == y => Some(x),
            _ => None,
        };
        ConditionVector { values, class_index }
    }
}

/// Standard-normal noise input to the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector<T: Scalar> {
    pub values: Vec<T>,
}

impl<T: Scalar> NoiseVector<T> {
    pub fn standard(n: usize, rng: &mut Rng) -> Self {
        NoiseVector {
            values: (0..n).map(|_| T::from_f64(rng.gaussian())).collect(),
        }
    }
}

/// Network and data dimensions for one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDims {
    /// Number of classes K.
    pub n_classes: usize,
    /// Condition vector width (K for one-hot labels).
    pub n_condition: usize,
    /// Noise vector width.
    pub n_noise: usize,
    /// Latent vector width J.
    pub n_latent: usize,
    /// Shape of one sample: `[d]` for point data, `[c, 8, 8]` for images.
    pub sample_shape: Vec<usize>,
    /// Hidden widths of the condition/image encoders.
    pub enc_hidden: Vec<usize>,
    /// Hidden widths of the point decoder.
    pub dec_hidden: Vec<usize>,
    /// Hidden widths of the point discriminator trunk.
    pub disc_hidden: Vec<usize>,
    /// Base channel count for the image decoder/discriminator.
    pub conv_channels: usize,
}

impl ModelDims {
    pub fn for_points(k: usize, point_dim: usize) -> Self {
        ModelDims {
            n_classes: k,
            n_condition: k,
            n_noise: 128,
            n_latent: 128,
            sample_shape: vec![point_dim],
            enc_hidden: vec![512, 256],
            dec_hidden: vec![128, 128],
            disc_hidden: vec![128, 128],
            conv_channels: 16,
        }
    }

    pub fn for_images(k: usize, channels: usize) -> Self {
        ModelDims {
            n_classes: k,
            n_condition: k,
            n_noise: 128,
            n_latent: 128,
            sample_shape: vec![channels, 8, 8],
            enc_hidden: vec![512, 256],
            dec_hidden: vec![128, 128],
            disc_hidden: vec![128, 128],
            conv_channels: 16,
        }
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn is_image(&self) -> bool {
        self.sample_shape.len() == 3
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            self.n_classes,
            self.n_condition,
            self.n_noise,
            self.n_latent,
            self.conv_channels,
        ];
        if positive.iter().any(|&d| d == 0) || self.sample_shape.iter().any(|&d| d == 0) {
            return Err(ModelError::DimMismatch("all dimensions must be positive".into()));
        }
        match self.sample_shape.len() {
            1 => {}
            3 => {
                if self.sample_shape[1] != 8 || self.sample_shape[2] != 8 {
                    return Err(ModelError::DimMismatch(format!(
                        "image decoder upsamples 4x4 -> 8x8; sample shape {:?} is unsupported",
                        self.sample_shape
                    )));
                }
            }
            _ => {
                return Err(ModelError::DimMismatch(format!(
                    "sample shape {:?} must be [d] or [c, 8, 8]",
                    self.sample_shape
                )))
            }
        }
        if self.enc_hidden.is_empty() || self.dec_hidden.is_empty() || self.disc_hidden.is_empty() {
            return Err(ModelError::DimMismatch("hidden layer lists must be non-empty".into()));
        }
        Ok(())
    }
}

pub(crate) struct Linear<T: Scalar> {
    pub w: Param<T>,
    pub b: Param<T>,
}

impl<T: Scalar> Linear<T> {
    fn new(prefix: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        Linear {
            w: Param::new(
                format!("{prefix}.w"),
                Tensor::randn(vec![fan_in, fan_out], INIT_STD, rng),
            ),
            b: Param::new(format!("{prefix}.b"), Tensor::zeros(vec![fan_out])),
        }
    }

    fn params(&self) -> Vec<Param<T>> {
        vec![self.w.clone(), self.b.clone()]
    }
}

/// MLP that maps its input to diagonal-Gaussian posterior parameters via
/// two linear heads of width `n_latent`.
pub(crate) struct PosteriorEncoder<T: Scalar> {
    pub layers: Vec<Linear<T>>,
    pub head_mu: Linear<T>,
    pub head_logvar: Linear<T>,
}

impl<T: Scalar> PosteriorEncoder<T> {
    fn new(prefix: &str, input: usize, hidden: &[usize], latent: usize, rng: &mut Rng) -> Self {
        let mut layers = Vec::new();
        let mut width = input;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Linear::new(&format!("{prefix}.l{i}"), width, h, rng));
            width = h;
        }
        PosteriorEncoder {
            layers,
            head_mu: Linear::new(&format!("{prefix}.mu"), width, latent, rng),
            head_logvar: Linear::new(&format!("{prefix}.logvar"), width, latent, rng),
        }
    }

    fn params(&self) -> Vec<Param<T>> {
        let mut out: Vec<Param<T>> = self.layers.iter().flat_map(|l| l.params()).collect();
        out.extend(self.head_mu.params());
        out.extend(self.head_logvar.params());
        out
    }
}

pub(crate) struct CondBnTables<T: Scalar> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub state: SharedBn<T>,
    pub name: String,
}

impl<T: Scalar> CondBnTables<T> {
    fn new(name: &str, classes: usize, channels: usize) -> Self {
        CondBnTables {
            gamma: Param::new(
                format!("{name}.gamma"),
                Tensor::full(vec![classes, channels], T::one()),
            ),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(vec![classes, channels])),
            state: Rc::new(RefCell::new(BnState::new(channels))),
            name: name.to_string(),
        }
    }
}

pub(crate) struct BnLayer<T: Scalar> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub state: SharedBn<T>,
    pub name: String,
}

impl<T: Scalar> BnLayer<T> {
    fn new(name: &str, channels: usize) -> Self {
        BnLayer {
            gamma: Param::new(format!("{name}.gamma"), Tensor::full(vec![channels], T::one())),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(vec![channels])),
            state: Rc::new(RefCell::new(BnState::new(channels))),
            name: name.to_string(),
        }
    }
}

pub(crate) enum Decoder<T: Scalar> {
    /// Point decoder: input -> hidden MLP (ReLU) -> output, tanh.
    /// Hidden layers optionally carry per-class batch-norm tables.
    Mlp {
        layers: Vec<Linear<T>>,
        cond_bn: Vec<CondBnTables<T>>,
        out: Linear<T>,
    },
    /// Image decoder: linear projection to a 4x4 map, two transposed-conv
    /// upsampling blocks with (conditional) batch normalization, tanh.
    Conv {
        proj: Linear<T>,
        norm0: DecoderNorm<T>,
        kernel1: Param<T>,
        bias1: Param<T>,
        norm1: DecoderNorm<T>,
        kernel2: Param<T>,
        bias2: Param<T>,
        channels: (usize, usize),
    },
}

pub(crate) enum DecoderNorm<T: Scalar> {
    Plain(BnLayer<T>),
    Conditional(CondBnTables<T>),
}

pub(crate) struct DiscLinear<T: Scalar> {
    pub w: Param<T>,
    pub b: Param<T>,
    pub sn: SharedSn<T>,
    pub sn_name: String,
    pub bn: Option<BnLayer<T>>,
}

pub(crate) struct DiscConv<T: Scalar> {
    pub kernel: Param<T>,
    pub bias: Param<T>,
    pub sn: SharedSn<T>,
    pub sn_name: String,
    pub bn: Option<BnLayer<T>>,
    pub stride: usize,
    pub padding: usize,
}

/// Shared trunk plus a K+2-unit head: unit 0 scores realness through a
/// sigmoid, the remaining K+1 units are a softmax over the K classes plus
/// the extra fake-sample class.
pub(crate) struct Discriminator<T: Scalar> {
    pub mlp_trunk: Vec<DiscLinear<T>>,
    pub conv_trunk: Vec<DiscConv<T>>,
    pub head: DiscLinear<T>,
}

/// Parameter sets for one generator variant plus (when adversarial) the
/// discriminator, with the persistent normalization state both need.
pub struct ModelBundle<T: Scalar> {
    pub variant: Variant,
    pub dims: ModelDims,
    pub(crate) encoder: Option<PosteriorEncoder<T>>,
    pub(crate) image_encoder: Option<PosteriorEncoder<T>>,
    pub(crate) decoder: Decoder<T>,
    pub(crate) discriminator: Option<Discriminator<T>>,
}

impl<T: Scalar> ModelBundle<T> {
    pub fn new(variant: Variant, dims: ModelDims, rng: &mut Rng) -> Result<Self, ModelError> {
        dims.validate()?;
        let encoder = match variant {
            Variant::Vcgan => Some(PosteriorEncoder::new(
                "enc",
                dims.n_condition + dims.n_noise,
                &dims.enc_hidden,
                dims.n_latent,
                rng,
            )),
            _ => None,
        };
        let image_encoder = match variant {
            Variant::Cvae => Some(PosteriorEncoder::new(
                "imgenc",
                dims.sample_len() + dims.n_condition,
                &dims.enc_hidden,
                dims.n_latent,
                rng,
            )),
            _ => None,
        };
        let dec_input = match variant {
            Variant::Vcgan | Variant::Cvae => dims.n_latent,
            Variant::ConcatCgan => dims.n_condition + dims.n_noise,
            Variant::CbnCgan => dims.n_noise,
        };
        let conditional = variant == Variant::CbnCgan;
        let decoder = if dims.is_image() {
            Self::new_conv_decoder(&dims, dec_input, conditional, rng)
        } else {
            Self::new_mlp_decoder(&dims, dec_input, conditional, rng)
        };
        let discriminator = match variant {
            Variant::Cvae => None,
            _ => Some(Self::new_discriminator(&dims, rng)),
        };
        Ok(ModelBundle { variant, dims, encoder, image_encoder, decoder, discriminator })
    }

    fn new_mlp_decoder(
        dims: &ModelDims,
        input: usize,
        conditional: bool,
        rng: &mut Rng,
    ) -> Decoder<T> {
        let mut layers = Vec::new();
        let mut cond_bn = Vec::new();
        let mut width = input;
        for (i, &h) in dims.dec_hidden.iter().enumerate() {
            layers.push(Linear::new(&format!("dec.l{i}"), width, h, rng));
            if conditional {
                cond_bn.push(CondBnTables::new(&format!("dec.cbn{i}"), dims.n_classes, h));
            }
            width = h;
        }
        let out = Linear::new("dec.out", width, dims.sample_len(), rng);
        Decoder::Mlp { layers, cond_bn, out }
    }

    fn new_conv_decoder(
        dims: &ModelDims,
        input: usize,
        conditional: bool,
        rng: &mut Rng,
    ) -> Decoder<T> {
        let c0 = dims.conv_channels * 2;
        let c1 = dims.conv_channels;
        let out_c = dims.sample_shape[0];
        let proj = Linear::new("dec.proj", input, c0 * 4 * 4, rng);
        let make_norm = |name: &str, channels: usize| {
            if conditional {
                DecoderNorm::Conditional(CondBnTables::new(name, dims.n_classes, channels))
            } else {
                DecoderNorm::Plain(BnLayer::new(name, channels))
            }
        };
        Decoder::Conv {
            proj,
            norm0: make_norm("dec.bn0", c0),
            kernel1: Param::new("dec.ct1.k", Tensor::randn(vec![c0, c1, 4, 4], INIT_STD, rng)),
            bias1: Param::new("dec.ct1.b", Tensor::zeros(vec![c1])),
            norm1: make_norm("dec.bn1", c1),
            kernel2: Param::new("dec.ct2.k", Tensor::randn(vec![c1, out_c, 3, 3], INIT_STD, rng)),
            bias2: Param::new("dec.ct2.b", Tensor::zeros(vec![out_c])),
            channels: (c0, c1),
        }
    }

    fn new_discriminator(dims: &ModelDims, rng: &mut Rng) -> Discriminator<T> {
        let head_units = dims.n_classes + 2;
        if dims.is_image() {
            let in_c = dims.sample_shape[0];
            let c1 = dims.conv_channels;
            let c2 = dims.conv_channels * 2;
            let conv_trunk = vec![
                DiscConv {
                    kernel: Param::new(
                        "disc.c0.k",
                        Tensor::randn(vec![c1, in_c, 3, 3], INIT_STD, rng),
                    ),
                    bias: Param::new("disc.c0.b", Tensor::zeros(vec![c1])),
                    sn: Rc::new(RefCell::new(SpectralState::new(c1, rng))),
                    sn_name: "disc.c0.sn_u".into(),
                    bn: None,
                    stride: 1,
                    padding: 1,
                },
                DiscConv {
                    kernel: Param::new(
                        "disc.c1.k",
                        Tensor::randn(vec![c2, c1, 4, 4], INIT_STD, rng),
                    ),
                    bias: Param::new("disc.c1.b", Tensor::zeros(vec![c2])),
                    sn: Rc::new(RefCell::new(SpectralState::new(c2, rng))),
                    sn_name: "disc.c1.sn_u".into(),
                    bn: None,
                    stride: 2,
                    padding: 1,
                },
            ];
            let flat = c2 * 4 * 4;
            let head = DiscLinear {
                w: Param::new("disc.head.w", Tensor::randn(vec![flat, head_units], INIT_STD, rng)),
                b: Param::new("disc.head.b", Tensor::zeros(vec![head_units])),
                sn: Rc::new(RefCell::new(SpectralState::new(flat, rng))),
                sn_name: "disc.head.sn_u".into(),
                bn: None,
            };
            Discriminator { mlp_trunk: Vec::new(), conv_trunk, head }
        } else {
            let mut mlp_trunk = Vec::new();
            let mut width = dims.sample_len();
            for (i, &h) in dims.disc_hidden.iter().enumerate() {
                mlp_trunk.push(DiscLinear {
                    w: Param::new(
                        format!("disc.l{i}.w"),
                        Tensor::randn(vec![width, h], INIT_STD, rng),
                    ),
                    b: Param::new(format!("disc.l{i}.b"), Tensor::zeros(vec![h])),
                    sn: Rc::new(RefCell::new(SpectralState::new(width, rng))),
                    sn_name: format!("disc.l{i}.sn_u"),
                    bn: None,
                });
                width = h;
            }
            let head = DiscLinear {
                w: Param::new("disc.head.w", Tensor::randn(vec![width, head_units], INIT_STD, rng)),
                b: Param::new("disc.head.b", Tensor::zeros(vec![head_units])),
                sn: Rc::new(RefCell::new(SpectralState::new(width, rng))),
                sn_name: "disc.head.sn_u".into(),
                bn: None,
            };
            Discriminator { mlp_trunk, conv_trunk: Vec::new(), head }
        }
    }

    // ---- parameter enumeration ----------------------------------------

    pub fn encoder_params(&self) -> Vec<Param<T>> {
        self.encoder.as_ref().map(|e| e.params()).unwrap_or_default()
    }

    pub fn image_encoder_params(&self) -> Vec<Param<T>> {
        self.image_encoder.as_ref().map(|e| e.params()).unwrap_or_default()
    }

    pub fn decoder_params(&self) -> Vec<Param<T>> {
        let mut out = Vec::new();
        match &self.decoder {
            Decoder::Mlp { layers, cond_bn, out: head } => {
                for l in layers {
                    out.extend(l.params());
                }
                for t in cond_bn {
                    out.push(t.gamma.clone());
                    out.push(t.beta.clone());
                }
                out.extend(head.params());
            }
            Decoder::Conv { proj, norm0, kernel1, bias1, norm1, kernel2, bias2, .. } => {
                out.extend(proj.params());
                for norm in [norm0, norm1] {
                    match norm {
                        DecoderNorm::Plain(bn) => {
                            out.push(bn.gamma.clone());
                            out.push(bn.beta.clone());
                        }
                        DecoderNorm::Conditional(t) => {
                            out.push(t.gamma.clone());
                            out.push(t.beta.clone());
                        }
                    }
                }
                out.push(kernel1.clone());
                out.push(bias1.clone());
                out.push(kernel2.clone());
                out.push(bias2.clone());
            }
        }
        out
    }

    /// Every parameter the generator-side optimizer updates.
    pub fn generator_params(&self) -> Vec<Param<T>> {
        let mut out = self.encoder_params();
        out.extend(self.image_encoder_params());
        out.extend(self.decoder_params());
        out
    }

    pub fn discriminator_params(&self) -> Vec<Param<T>> {
        let mut out = Vec::new();
        if let Some(d) = &self.discriminator {
            for l in &d.mlp_trunk {
                out.push(l.w.clone());
                out.push(l.b.clone());
                if let Some(bn) = &l.bn {
                    out.push(bn.gamma.clone());
                    out.push(bn.beta.clone());
                }
            }
            for c in &d.conv_trunk {
                out.push(c.kernel.clone());
                out.push(c.bias.clone());
                if let Some(bn) = &c.bn {
                    out.push(bn.gamma.clone());
                    out.push(bn.beta.clone());
                }
            }
            out.push(d.head.w.clone());
            out.push(d.head.b.clone());
        }
        out
    }

    pub fn all_params(&self) -> Vec<Param<T>> {
        let mut out = self.generator_params();
        out.extend(self.discriminator_params());
        out
    }

    pub fn zero_grads(&self) {
        for p in self.all_params() {
            p.zero_grad();
        }
    }

    /// Run the configured number of power iterations on every spectral
    /// state against the current weights. Called once per training step so
    /// graph evaluations themselves stay pure functions of the weights.
    pub fn spectral_update(&self) {
        if let Some(d) = &self.discriminator {
            for l in d.mlp_trunk.iter().chain(std::iter::once(&d.head)) {
                let w = l.w.value();
                let rows = w.shape[0];
                let cols: usize = w.shape[1..].iter().product();
                let mut st = l.sn.borrow_mut();
                let rounds = st.power_iterations;
                crate::diffcore::spectral::power_iterate(&w.data, rows, cols, &mut st, rounds);
            }
            for c in &d.conv_trunk {
                let w = c.kernel.value();
                let rows = w.shape[0];
                let cols: usize = w.shape[1..].iter().product();
                let mut st = c.sn.borrow_mut();
                let rounds = st.power_iterations;
                crate::diffcore::spectral::power_iterate(&w.data, rows, cols, &mut st, rounds);
            }
        }
    }

    /// All persistent tensors: parameters plus normalization state, as
    /// (name, shape, data) triples in a stable order. This is the content
    /// a checkpoint stores.
    pub fn named_state(&self) -> Vec<(String, Vec<usize>, Vec<T>)> {
        let mut out: Vec<(String, Vec<usize>, Vec<T>)> = self
            .all_params()
            .iter()
            .map(|p| (p.name.clone(), p.shape(), p.data_clone()))
            .collect();
        for (name, state) in self.bn_states() {
            let st = state.borrow();
            let c = st.running_mean.len();
            out.push((format!("{name}.rm"), vec![c], st.running_mean.clone()));
            out.push((format!("{name}.rv"), vec![c], st.running_var.clone()));
        }
        for (name, state) in self.sn_states() {
            let st = state.borrow();
            out.push((name, vec![st.u.len()], st.u.clone()));
        }
        out
    }

    /// Restore every tensor produced by [`ModelBundle::named_state`].
    pub fn load_state(&self, entries: &[(String, Vec<usize>, Vec<T>)]) -> Result<(), ModelError> {
        use std::collections::HashMap;
        let by_name: HashMap<&str, &(String, Vec<usize>, Vec<T>)> =
            entries.iter().map(|e| (e.0.as_str(), e)).collect();
        let fetch = |name: &str, want_len: usize| -> Result<Vec<T>, ModelError> {
            let (_, _, data) = by_name.get(name).ok_or_else(|| {
                ModelError::DimMismatch(format!("checkpoint is missing tensor `{name}`"))
            })?;
            if data.len() != want_len {
                return Err(ModelError::DimMismatch(format!(
                    "tensor `{name}` has {} elements, expected {}",
                    data.len(),
                    want_len
                )));
            }
            Ok(data.clone())
        };
        for p in self.all_params() {
            let data = fetch(&p.name, p.numel())?;
            p.value_mut().data = data;
        }
        for (name, state) in self.bn_states() {
            let c = state.borrow().running_mean.len();
            let rm = fetch(&format!("{name}.rm"), c)?;
            let rv = fetch(&format!("{name}.rv"), c)?;
            let mut st = state.borrow_mut();
            st.running_mean = rm;
            st.running_var = rv;
        }
        for (name, state) in self.sn_states() {
            let n = state.borrow().u.len();
            let u = fetch(&name, n)?;
            state.borrow_mut().u = u;
        }
        Ok(())
    }

    fn bn_states(&self) -> Vec<(String, SharedBn<T>)> {
        let mut out = Vec::new();
        match &self.decoder {
            Decoder::Mlp { cond_bn, .. } => {
                for t in cond_bn {
                    out.push((t.name.clone(), Rc::clone(&t.state)));
                }
            }
            Decoder::Conv { norm0, norm1, .. } => {
                for norm in [norm0, norm1] {
                    match norm {
                        DecoderNorm::Plain(bn) => out.push((bn.name.clone(), Rc::clone(&bn.state))),
                        DecoderNorm::Conditional(t) => {
                            out.push((t.name.clone(), Rc::clone(&t.state)))
                        }
                    }
                }
            }
        }
        if let Some(d) = &self.discriminator {
            for l in &d.mlp_trunk {
                if let Some(bn) = &l.bn {
                    out.push((bn.name.clone(), Rc::clone(&bn.state)));
                }
            }
            for c in &d.conv_trunk {
                if let Some(bn) = &c.bn {
                    out.push((bn.name.clone(), Rc::clone(&bn.state)));
                }
            }
        }
        out
    }

    fn sn_states(&self) -> Vec<(String, SharedSn<T>)> {
        let mut out = Vec::new();
        if let Some(d) = &self.discriminator {
            for l in &d.mlp_trunk {
                out.push((l.sn_name.clone(), Rc::clone(&l.sn)));
            }
            for c in &d.conv_trunk {
                out.push((c.sn_name.clone(), Rc::clone(&c.sn)));
            }
            out.push((d.head.sn_name.clone(), Rc::clone(&d.head.sn)));
        }
        out
    }
}

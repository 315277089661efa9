//! Experiment configuration: a flat `key = value` text format with strict
//! key checking and a canonical echo for provenance.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::models::{ModelDims, Variant};
use crate::probdist::TruncationRange;
use crate::training::AcLossMode;

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mixture2d,
    Shapes,
    Idx,
}

impl DatasetKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mixture2d" => Some(DatasetKind::Mixture2d),
            "shapes" => Some(DatasetKind::Shapes),
            "idx" => Some(DatasetKind::Idx),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DatasetKind::Mixture2d => "mixture2d",
            DatasetKind::Shapes => "shapes",
            DatasetKind::Idx => "idx",
        }
    }
}

/// Full declarative description of a run. Defaults describe the
/// desk-scale mixture benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub classes: usize,
    pub samples_per_class: usize,
    pub mixture_radius: f64,
    pub mixture_sigma: f64,
    pub shapes_randomize: bool,
    pub idx_images: String,
    pub idx_labels: String,

    pub variant: Variant,
    pub n_noise: usize,
    pub n_latent: usize,
    pub enc_hidden: Vec<usize>,
    pub dec_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub conv_channels: usize,

    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub update_ratio: (u32, u32),
    pub truncation: TruncationRange,
    pub ac_loss: AcLossMode,
    pub kl_weight: f64,
    pub seed: u64,

    pub out_dir: PathBuf,
    pub log_interval: u64,
    pub eval_interval: u64,
    pub eval_samples: usize,
    pub eval_groups: usize,
    pub coverage_threshold: f64,
    pub wall_clock_log: bool,
    pub resume: String,

    pub ablate_variants: Vec<Variant>,
    pub ablate_ranges: Vec<TruncationRange>,
    pub ablate_seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetKind::Mixture2d,
            classes: 8,
            samples_per_class: 1250,
            mixture_radius: 2.0,
            mixture_sigma: 0.05,
            shapes_randomize: true,
            idx_images: String::new(),
            idx_labels: String::new(),

            variant: Variant::Vcgan,
            n_noise: 16,
            n_latent: 8,
            enc_hidden: vec![64, 64],
            dec_hidden: vec![128, 128],
            disc_hidden: vec![64, 64],
            conv_channels: 8,

            learning_rate: 0.0002,
            beta1: 0.5,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 100,
            steps: 20_000,
            update_ratio: (1, 1),
            truncation: TruncationRange::None,
            ac_loss: AcLossMode::Modified,
            kl_weight: 1.0,
            seed: 1,

            out_dir: PathBuf::from("runs/mixture"),
            log_interval: 100,
            eval_interval: 0,
            eval_samples: 2000,
            eval_groups: 10,
            coverage_threshold: 0.5,
            wall_clock_log: false,
            resume: String::new(),

            ablate_variants: vec![Variant::Vcgan, Variant::ConcatCgan],
            ablate_ranges: vec![
                TruncationRange::None,
                TruncationRange::Multiplier(2.0),
                TruncationRange::Multiplier(1.5),
                TruncationRange::Multiplier(1.0),
                TruncationRange::Multiplier(0.5),
            ],
            ablate_seeds: vec![1, 2, 3],
        }
    }
}

fn parse_list<T, F: Fn(&str) -> Result<T, HarnessError>>(
    s: &str,
    f: F,
) -> Result<Vec<T>, HarnessError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(f)
        .collect()
}

fn bad(key: &str, value: &str) -> HarnessError {
    HarnessError::Config(format!("invalid value `{value}` for key `{key}`"))
}

impl ExperimentConfig {
    /// Parse a flat `key = value` document over the defaults. Blank lines
    /// and `#` comments are ignored; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut config = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        match key {
            "dataset" => {
                self.dataset = DatasetKind::parse(value).ok_or_else(|| bad(key, value))?
            }
            "classes" => self.classes = value.parse().map_err(|_| bad(key, value))?,
            "samples_per_class" => {
                self.samples_per_class = value.parse().map_err(|_| bad(key, value))?
            }
            "mixture_radius" => self.mixture_radius = value.parse().map_err(|_| bad(key, value))?,
            "mixture_sigma" => self.mixture_sigma = value.parse().map_err(|_| bad(key, value))?,
            "shapes_randomize" => {
                self.shapes_randomize = value.parse().map_err(|_| bad(key, value))?
            }
            "idx_images" => self.idx_images = value.to_string(),
            "idx_labels" => self.idx_labels = value.to_string(),
            "variant" => self.variant = Variant::parse(value).ok_or_else(|| bad(key, value))?,
            "n_noise" => self.n_noise = value.parse().map_err(|_| bad(key, value))?,
            "n_latent" => self.n_latent = value.parse().map_err(|_| bad(key, value))?,
            "enc_hidden" => {
                self.enc_hidden =
                    parse_list(value, |t| t.parse().map_err(|_| bad(key, value)))?
            }
            "dec_hidden" => {
                self.dec_hidden =
                    parse_list(value, |t| t.parse().map_err(|_| bad(key, value)))?
            }
            "disc_hidden" => {
                self.disc_hidden =
                    parse_list(value, |t| t.parse().map_err(|_| bad(key, value)))?
            }
            "conv_channels" => self.conv_channels = value.parse().map_err(|_| bad(key, value))?,
            "learning_rate" => self.learning_rate = value.parse().map_err(|_| bad(key, value))?,
            "beta1" => self.beta1 = value.parse().map_err(|_| bad(key, value))?,
            "beta2" => self.beta2 = value.parse().map_err(|_| bad(key, value))?,
            "adam_epsilon" => self.adam_epsilon = value.parse().map_err(|_| bad(key, value))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad(key, value))?,
            "steps" => self.steps = value.parse().map_err(|_| bad(key, value))?,
            "update_ratio" => {
                let (d, g) = value.split_once(':').ok_or_else(|| bad(key, value))?;
                self.update_ratio = (
                    d.trim().parse().map_err(|_| bad(key, value))?,
                    g.trim().parse().map_err(|_| bad(key, value))?,
                );
            }
            "truncation" => {
                self.truncation = TruncationRange::parse(value).map_err(|_| bad(key, value))?
            }
            "ac_loss" => self.ac_loss = AcLossMode::parse(value).ok_or_else(|| bad(key, value))?,
            "kl_weight" => self.kl_weight = value.parse().map_err(|_| bad(key, value))?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key, value))?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "log_interval" => self.log_interval = value.parse().map_err(|_| bad(key, value))?,
            "eval_interval" => self.eval_interval = value.parse().map_err(|_| bad(key, value))?,
            "eval_samples" => self.eval_samples = value.parse().map_err(|_| bad(key, value))?,
            "eval_groups" => self.eval_groups = value.parse().map_err(|_| bad(key, value))?,
            "coverage_threshold" => {
                self.coverage_threshold = value.parse().map_err(|_| bad(key, value))?
            }
            "wall_clock_log" => self.wall_clock_log = value.parse().map_err(|_| bad(key, value))?,
            "resume" => self.resume = value.to_string(),
            "ablate_variants" => {
                self.ablate_variants = parse_list(value, |t| {
                    Variant::parse(t).ok_or_else(|| bad(key, value))
                })?
            }
            "ablate_ranges" => {
                self.ablate_ranges = parse_list(value, |t| {
                    TruncationRange::parse(t).map_err(|_| bad(key, value))
                })?
            }
            "ablate_seeds" => {
                self.ablate_seeds =
                    parse_list(value, |t| t.parse().map_err(|_| bad(key, value)))?
            }
            _ => {
                return Err(HarnessError::Config(format!("unknown configuration key `{key}`")))
            }
        }
        Ok(())
    }

    /// Canonical serialization: every key in a fixed order. `parse(echo())`
    /// reproduces the configuration.
    pub fn echo(&self) -> String {
        let join_usize = |v: &[usize]| {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        let mut pairs: Vec<(&str, String)> = Vec::new();
        pairs.push(("dataset", self.dataset.name().to_string()));
        pairs.push(("classes", self.classes.to_string()));
        pairs.push(("samples_per_class", self.samples_per_class.to_string()));
        pairs.push(("mixture_radius", format!("{}", self.mixture_radius)));
        pairs.push(("mixture_sigma", format!("{}", self.mixture_sigma)));
        pairs.push(("shapes_randomize", self.shapes_randomize.to_string()));
        pairs.push(("idx_images", self.idx_images.clone()));
        pairs.push(("idx_labels", self.idx_labels.clone()));
        pairs.push(("variant", self.variant.name().to_string()));
        pairs.push(("n_noise", self.n_noise.to_string()));
        pairs.push(("n_latent", self.n_latent.to_string()));
        pairs.push(("enc_hidden", join_usize(&self.enc_hidden)));
        pairs.push(("dec_hidden", join_usize(&self.dec_hidden)));
        pairs.push(("disc_hidden", join_usize(&self.disc_hidden)));
        pairs.push(("conv_channels", self.conv_channels.to_string()));
        pairs.push(("learning_rate", format!("{}", self.learning_rate)));
        pairs.push(("beta1", format!("{}", self.beta1)));
        pairs.push(("beta2", format!("{}", self.beta2)));
        pairs.push(("adam_epsilon", format!("{}", self.adam_epsilon)));
        pairs.push(("batch_size", self.batch_size.to_string()));
        pairs.push(("steps", self.steps.to_string()));
        pairs.push((
            "update_ratio",
            format!("{}:{}", self.update_ratio.0, self.update_ratio.1),
        ));
        pairs.push(("truncation", self.truncation.to_string()));
        pairs.push(("ac_loss", self.ac_loss.name().to_string()));
        pairs.push(("kl_weight", format!("{}", self.kl_weight)));
        pairs.push(("seed", self.seed.to_string()));
        pairs.push(("out_dir", self.out_dir.display().to_string()));
        pairs.push(("log_interval", self.log_interval.to_string()));
        pairs.push(("eval_interval", self.eval_interval.to_string()));
        pairs.push(("eval_samples", self.eval_samples.to_string()));
        pairs.push(("eval_groups", self.eval_groups.to_string()));
        pairs.push(("coverage_threshold", format!("{}", self.coverage_threshold)));
        pairs.push(("wall_clock_log", self.wall_clock_log.to_string()));
        pairs.push(("resume", self.resume.clone()));
        pairs.push((
            "ablate_variants",
            self.ablate_variants.iter().map(|v| v.name()).collect::<Vec<_>>().join(","),
        ));
        pairs.push((
            "ablate_ranges",
            self.ablate_ranges.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(","),
        ));
        pairs.push((
            "ablate_seeds",
            self.ablate_seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
        ));
        let mut out = String::new();
        for (k, v) in pairs {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.classes < 2 {
            return Err(HarnessError::Config("classes must be at least 2".into()));
        }
        if self.batch_size < 2 {
            return Err(HarnessError::Config("batch_size must be at least 2".into()));
        }
        if self.update_ratio.0 == 0 || self.update_ratio.1 == 0 {
            return Err(HarnessError::Config("update_ratio parts must be positive".into()));
        }
        if self.dataset == DatasetKind::Idx
            && (self.idx_images.is_empty() || self.idx_labels.is_empty())
        {
            return Err(HarnessError::Config(
                "idx dataset needs idx_images and idx_labels paths".into(),
            ));
        }
        self.model_dims().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    /// Sample shape implied by the dataset choice.
    pub fn sample_shape(&self) -> Vec<usize> {
        match self.dataset {
            DatasetKind::Mixture2d => vec![2],
            DatasetKind::Shapes | DatasetKind::Idx => vec![1, 8, 8],
        }
    }

    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            n_classes: self.classes,
            n_condition: self.classes,
            n_noise: self.n_noise,
            n_latent: self.n_latent,
            sample_shape: self.sample_shape(),
            enc_hidden: self.enc_hidden.clone(),
            dec_hidden: self.dec_hidden.clone(),
            disc_hidden: self.disc_hidden.clone(),
            conv_channels: self.conv_channels,
        }
    }

    pub fn train_settings(&self) -> crate::training::TrainSettings {
        crate::training::TrainSettings {
            optimizer: crate::diffcore::OptimizerConfig {
                learning_rate: self.learning_rate,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.adam_epsilon,
            },
            ac_loss: self.ac_loss,
            kl_weight: self.kl_weight,
            update_ratio: self.update_ratio,
        }
    }

    /// Sorted key/value view (debugging aid).
    pub fn as_map(&self) -> BTreeMap<String, String> {
        self.echo()
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_the_echo() {
        let config = ExperimentConfig::default();
        let parsed = ExperimentConfig::parse(&config.echo()).unwrap();
        assert_eq!(parsed, config);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::parse("stepz = 100\n").unwrap_err();
        assert!(err.to_string().contains("stepz"), "{err}");
    }

    #[test]
    fn overrides_apply_and_validate() {
        let text = "\
# comment line
dataset = mixture2d
variant = concat
steps = 500
truncation = 1.5
update_ratio = 2:1
enc_hidden = 32, 16
";
        let config = ExperimentConfig::parse(text).unwrap();
        assert_eq!(config.variant, Variant::ConcatCgan);
        assert_eq!(config.steps, 500);
        assert_eq!(config.truncation, TruncationRange::Multiplier(1.5));
        assert_eq!(config.update_ratio, (2, 1));
        assert_eq!(config.enc_hidden, vec![32, 16]);
        config.validate().unwrap();
    }

    #[test]
    fn bad_values_name_the_key() {
        for (key, value) in [
            ("classes", "many"),
            ("truncation", "-2"),
            ("variant", "vaegan"),
            ("update_ratio", "3"),
        ] {
            let mut config = ExperimentConfig::default();
            let err = config.set(key, value).unwrap_err();
            assert!(err.to_string().contains(key), "{err}");
        }
    }

    #[test]
    fn validation_catches_inconsistencies() {
        let mut config = ExperimentConfig::default();
        config.classes = 1;
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::default();
        config.dataset = DatasetKind::Idx;
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::default();
        config.batch_size = 1;
        assert!(config.validate().is_err());
    }
}

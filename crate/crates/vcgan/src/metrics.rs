//! Quantitative evaluation: a locally trained classifier stands in for a
//! pretrained feature extractor, its class posterior feeds the Inception
//! score and its penultimate activations (or raw coordinates, for point
//! data) feed the Frechet distance. A per-class coverage report diagnoses
//! mode collapse.

use crate::diffcore::{adam_step, AdamState, DiffError, Graph, NodeId, OptimizerConfig, Param, Tensor};
use crate::probdist::{fit_gaussian, DistError, EmpiricalGaussian};
use crate::rng::Rng;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("matrix is not symmetric within 1e-8")]
    NotSymmetric,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("cannot split {samples} samples into {groups} non-empty groups")]
    EmptyGroup { samples: usize, groups: usize },
    #[error("classifier reached only {accuracy:.3} held-out accuracy (floor {floor:.2}); metrics would be meaningless")]
    ClassifierTooWeak { accuracy: f64, floor: f64 },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

// ---- classifier --------------------------------------------------------

/// Training knobs for the evaluation classifier.
#[derive(Debug, Clone)]
pub struct ClassifierConfig {
    pub hidden: (usize, usize),
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub holdout_fraction: f64,
    pub seed: u64,
    /// Training aborts below this held-out accuracy.
    pub accuracy_floor: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: (64, 32),
            learning_rate: 1e-3,
            epochs: 60,
            batch_size: 64,
            holdout_fraction: 0.2,
            seed: 0x5eed,
            accuracy_floor: 0.8,
        }
    }
}

/// Small MLP classifier; the penultimate activations are the feature space
/// for the Frechet distance on image data.
#[derive(Debug)]
pub struct ClassifierModel {
    w1: Param<f32>,
    b1: Param<f32>,
    w2: Param<f32>,
    b2: Param<f32>,
    w3: Param<f32>,
    b3: Param<f32>,
    pub input_dim: usize,
    pub feature_dim: usize,
    pub n_classes: usize,
    pub holdout_accuracy: f64,
}

impl ClassifierModel {
    fn init(input_dim: usize, hidden: (usize, usize), k: usize, rng: &mut Rng) -> Self {
        let (h1, h2) = hidden;
        ClassifierModel {
            w1: Param::new("cls.w1", Tensor::randn(vec![input_dim, h1], 0.1, rng)),
            b1: Param::new("cls.b1", Tensor::zeros(vec![h1])),
            w2: Param::new("cls.w2", Tensor::randn(vec![h1, h2], 0.1, rng)),
            b2: Param::new("cls.b2", Tensor::zeros(vec![h2])),
            w3: Param::new("cls.w3", Tensor::randn(vec![h2, k], 0.1, rng)),
            b3: Param::new("cls.b3", Tensor::zeros(vec![k])),
            input_dim,
            feature_dim: h2,
            n_classes: k,
            holdout_accuracy: 0.0,
        }
    }

    fn params(&self) -> Vec<Param<f32>> {
        vec![
            self.w1.clone(),
            self.b1.clone(),
            self.w2.clone(),
            self.b2.clone(),
            self.w3.clone(),
            self.b3.clone(),
        ]
    }

    /// Wire the network over an input node; returns (probabilities node,
    /// penultimate-feature node).
    fn build(&self, g: &mut Graph<f32>, x: NodeId) -> Result<(NodeId, NodeId), DiffError> {
        let w1 = g.param(&self.w1);
        let b1 = g.param(&self.b1);
        let h = g.matmul(x, w1)?;
        let h = g.add_bias(h, b1)?;
        let h = g.relu(h);
        let w2 = g.param(&self.w2);
        let b2 = g.param(&self.b2);
        let h = g.matmul(h, w2)?;
        let h = g.add_bias(h, b2)?;
        let feat = g.relu(h);
        let w3 = g.param(&self.w3);
        let b3 = g.param(&self.b3);
        let logits = g.matmul(feat, w3)?;
        let logits = g.add_bias(logits, b3)?;
        let probs = g.softmax(logits)?;
        Ok((probs, feat))
    }

    fn flatten_batch(&self, samples: &Tensor<f32>) -> Result<Tensor<f32>, MetricsError> {
        if samples.shape.is_empty() {
            return Err(MetricsError::DimMismatch("empty sample batch".into()));
        }
        let n = samples.shape[0];
        let per: usize = samples.shape[1..].iter().product();
        if per != self.input_dim {
            return Err(MetricsError::DimMismatch(format!(
                "samples have {per} features, classifier expects {}",
                self.input_dim
            )));
        }
        Ok(Tensor::from_vec(vec![n, per], samples.data.clone())?)
    }

    /// Class probabilities, one row per sample.
    pub fn predict_proba(&self, samples: &Tensor<f32>) -> Result<Vec<Vec<f64>>, MetricsError> {
        let flat = self.flatten_batch(samples)?;
        let mut g = Graph::new();
        let x = g.constant(flat);
        let (probs, _) = self.build(&mut g, x)?;
        g.evaluate(&[])?;
        let data = g.value_data(probs)?;
        Ok(data
            .chunks(self.n_classes)
            .map(|row| row.iter().map(|&v| v as f64).collect())
            .collect())
    }

    /// Most likely class per sample.
    pub fn predict(&self, samples: &Tensor<f32>) -> Result<Vec<usize>, MetricsError> {
        Ok(self
            .predict_proba(samples)?
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap()
            })
            .collect())
    }

    /// Penultimate-layer activations, the feature embedding for the
    /// Frechet distance.
    pub fn features(&self, samples: &Tensor<f32>) -> Result<Vec<Vec<f64>>, MetricsError> {
        let flat = self.flatten_batch(samples)?;
        let mut g = Graph::new();
        let x = g.constant(flat);
        let (_, feat) = self.build(&mut g, x)?;
        g.evaluate(&[])?;
        let data = g.value_data(feat)?;
        Ok(data
            .chunks(self.feature_dim)
            .map(|row| row.iter().map(|&v| v as f64).collect())
            .collect())
    }

    pub fn accuracy(&self, samples: &Tensor<f32>, labels: &[usize]) -> Result<f64, MetricsError> {
        let predicted = self.predict(samples)?;
        if predicted.len() != labels.len() {
            return Err(MetricsError::DimMismatch(format!(
                "{} predictions vs {} labels",
                predicted.len(),
                labels.len()
            )));
        }
        let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }
}

/// Train the evaluation classifier on a labeled set, holding out a seeded
/// fraction for the accuracy gate.
pub fn train_eval_classifier(
    samples: &Tensor<f32>,
    labels: &[usize],
    k: usize,
    config: &ClassifierConfig,
) -> Result<ClassifierModel, MetricsError> {
    let n = samples.shape[0];
    if n != labels.len() || n < 4 {
        return Err(MetricsError::DimMismatch(format!(
            "{n} samples vs {} labels (need at least 4)",
            labels.len()
        )));
    }
    let per: usize = samples.shape[1..].iter().product();
    let mut rng = Rng::from_seed(config.seed);
    let mut model = ClassifierModel::init(per, config.hidden, k, &mut rng);

    // seeded shuffle, then split
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.below(i + 1));
    }
    let holdout = ((n as f64 * config.holdout_fraction) as usize).clamp(1, n - 1);
    let (eval_idx, train_idx) = order.split_at(holdout);

    let gather = |idx: &[usize]| -> (Tensor<f32>, Vec<usize>) {
        let mut data = Vec::with_capacity(idx.len() * per);
        let mut lab = Vec::with_capacity(idx.len());
        for &i in idx {
            data.extend_from_slice(&samples.data[i * per..(i + 1) * per]);
            lab.push(labels[i]);
        }
        (Tensor::from_vec(vec![idx.len(), per], data).unwrap(), lab)
    };
    let (train_x, train_y) = gather(train_idx);
    let (eval_x, eval_y) = gather(eval_idx);

    let params = model.params();
    let mut opt = AdamState::new();
    let opt_config = OptimizerConfig {
        learning_rate: config.learning_rate,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
    let n_train = train_idx.len();
    let mut index: Vec<usize> = (0..n_train).collect();
    for _ in 0..config.epochs {
        for i in (1..n_train).rev() {
            index.swap(i, rng.below(i + 1));
        }
        for chunk in index.chunks(config.batch_size.max(1)) {
            let mut data = Vec::with_capacity(chunk.len() * per);
            let mut targets = Vec::with_capacity(chunk.len());
            for &i in chunk {
                data.extend_from_slice(&train_x.data[i * per..(i + 1) * per]);
                targets.push(train_y[i]);
            }
            let batch = Tensor::from_vec(vec![chunk.len(), per], data).unwrap();
            for p in &params {
                p.zero_grad();
            }
            let mut g = Graph::new();
            let x = g.constant(batch);
            let (probs, _) = model.build(&mut g, x)?;
            let picked = g.pick_column(probs, targets)?;
            let ln = g.ln_floored(picked, 1e-12);
            let mean = g.mean_all(ln);
            let loss = g.scale(mean, -1.0);
            g.evaluate(&[])?;
            g.backward_scalar(loss)?;
            adam_step(&params, &mut opt, &opt_config);
        }
    }

    let accuracy = model.accuracy(&eval_x, &eval_y)?;
    if accuracy < config.accuracy_floor {
        return Err(MetricsError::ClassifierTooWeak { accuracy, floor: config.accuracy_floor });
    }
    model.holdout_accuracy = accuracy;
    Ok(model)
}

// ---- inception score ---------------------------------------------------

/// Inception score over a table of per-sample class probabilities:
/// exp(E[KL(p(y|x) || p(y))]), computed per group, reported as the mean and
/// population standard deviation across groups.
pub fn inception_score_from_probs(
    probs: &[Vec<f64>],
    groups: usize,
) -> Result<(f64, f64), MetricsError> {
    if groups == 0 || probs.len() < groups {
        return Err(MetricsError::EmptyGroup { samples: probs.len(), groups });
    }
    let per_group = probs.len() / groups; // remainder dropped
    let k = probs[0].len();
    let mut scores = Vec::with_capacity(groups);
    for g in 0..groups {
        let rows = &probs[g * per_group..(g + 1) * per_group];
        let mut marginal = vec![0.0f64; k];
        for row in rows {
            if row.len() != k {
                return Err(MetricsError::DimMismatch("ragged probability table".into()));
            }
            for (m, &p) in marginal.iter_mut().zip(row) {
                *m += p;
            }
        }
        for m in marginal.iter_mut() {
            *m /= rows.len() as f64;
        }
        let mut mean_kl = 0.0;
        for row in rows {
            let mut kl = 0.0;
            for (&p, &q) in row.iter().zip(&marginal) {
                if p > 0.0 {
                    kl += p * (p / q).ln();
                }
            }
            mean_kl += kl;
        }
        mean_kl /= rows.len() as f64;
        scores.push(mean_kl.exp());
    }
    let mean = scores.iter().sum::<f64>() / groups as f64;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / groups as f64;
    Ok((mean, var.sqrt()))
}

/// Inception score of a sample set under the evaluation classifier.
pub fn inception_score(
    classifier: &ClassifierModel,
    samples: &Tensor<f32>,
    groups: usize,
) -> Result<(f64, f64), MetricsError> {
    let probs = classifier.predict_proba(samples)?;
    inception_score_from_probs(&probs, groups)
}

// ---- matrix square root and Frechet distance ---------------------------

fn check_symmetric(a: &[f64], n: usize) -> Result<(), MetricsError> {
    if a.len() != n * n {
        return Err(MetricsError::DimMismatch(format!(
            "matrix buffer holds {} entries for dimension {n}",
            a.len()
        )));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[i * n + j] - a[j * n + i]).abs() > 1e-8 {
                return Err(MetricsError::NotSymmetric);
            }
        }
    }
    Ok(())
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations. Returns
/// (eigenvalues, row-major eigenvector matrix V with columns as vectors),
/// such that A = V diag(vals) V^T.
fn jacobi_eigh(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[i * n + j] * m[i * n + j];
                }
            }
        }
        s.sqrt()
    };
    for _sweep in 0..100 {
        if off(&m) < 1e-10 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let mip = m[i * n + p];
                    let miq = m[i * n + q];
                    m[i * n + p] = c * mip - s * miq;
                    m[i * n + q] = s * mip + c * miq;
                }
                for j in 0..n {
                    let mpj = m[p * n + j];
                    let mqj = m[q * n + j];
                    m[p * n + j] = c * mpj - s * mqj;
                    m[q * n + j] = s * mpj + c * mqj;
                }
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = c * vip - s * viq;
                    v[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }
    let vals = (0..n).map(|i| m[i * n + i]).collect();
    (vals, v)
}

/// Principal square root of a symmetric positive semidefinite matrix via
/// Jacobi eigendecomposition; eigenvalues are clamped at zero to absorb
/// sampling noise. The result is stored exactly symmetric.
pub fn matrix_sqrt_psd(a: &[f64], n: usize) -> Result<Vec<f64>, MetricsError> {
    check_symmetric(a, n)?;
    let (vals, v) = jacobi_eigh(a, n);
    let roots: Vec<f64> = vals.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for (r, &root) in roots.iter().enumerate() {
                acc += v[i * n + r] * root * v[j * n + r];
            }
            out[i * n + j] = acc;
            out[j * n + i] = acc;
        }
    }
    Ok(out)
}

fn matmul_square(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for kk in 0..n {
            let aik = a[i * n + kk];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b[kk * n + j];
            }
        }
    }
    out
}

/// Squared Wasserstein-2 distance between two Gaussians:
/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)), with the cross term
/// computed symmetrically as Tr sqrt(sqrt(S1) S2 sqrt(S1)). Tiny negative
/// totals from roundoff are floored at zero.
pub fn frechet_distance(
    g1: &EmpiricalGaussian,
    g2: &EmpiricalGaussian,
) -> Result<f64, MetricsError> {
    if g1.dim != g2.dim {
        return Err(MetricsError::DimMismatch(format!(
            "distributions have dimensions {} and {}",
            g1.dim, g2.dim
        )));
    }
    let n = g1.dim;
    let mean_term: f64 = g1
        .mean
        .iter()
        .zip(&g2.mean)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let trace = |m: &[f64]| (0..n).map(|i| m[i * n + i]).sum::<f64>();
    let s1_root = matrix_sqrt_psd(&g1.covariance, n)?;
    let inner = matmul_square(&matmul_square(&s1_root, &g2.covariance, n), &s1_root, n);
    // symmetrize roundoff before the second root
    let mut inner_sym = inner.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (inner[i * n + j] + inner[j * n + i]);
            inner_sym[i * n + j] = avg;
            inner_sym[j * n + i] = avg;
        }
    }
    let cross = matrix_sqrt_psd(&inner_sym, n)?;
    let value = mean_term + trace(&g1.covariance) + trace(&g2.covariance) - 2.0 * trace(&cross);
    Ok(value.max(0.0))
}

/// Fit Gaussians to two feature sets and return their Frechet distance.
pub fn fid_from_features(
    real: &[Vec<f64>],
    fake: &[Vec<f64>],
) -> Result<f64, MetricsError> {
    let g1 = fit_gaussian(real)?;
    let g2 = fit_gaussian(fake)?;
    frechet_distance(&g1, &g2)
}

// ---- mode coverage -----------------------------------------------------

/// Per-class conditional generation diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCoverage {
    pub class: usize,
    pub total: usize,
    pub hits: usize,
    /// Fraction of this class's conditional samples the classifier assigns
    /// back to it; absent when no samples were provided.
    pub fraction: Option<f64>,
    pub covered: bool,
}

/// Score conditional samples per class: a class counts as covered when the
/// classifier assigns at least `threshold` of its conditional samples back
/// to it. Classes with no samples are reported as missing, not as 0/0.
pub fn mode_coverage(
    classifier: &ClassifierModel,
    per_class: &[(usize, Tensor<f32>)],
    threshold: f64,
) -> Result<Vec<ClassCoverage>, MetricsError> {
    let mut out = Vec::with_capacity(per_class.len());
    for (class, samples) in per_class {
        let total = samples.shape.first().copied().unwrap_or(0);
        if total == 0 {
            out.push(ClassCoverage {
                class: *class,
                total: 0,
                hits: 0,
                fraction: None,
                covered: false,
            });
            continue;
        }
        let predicted = classifier.predict(samples)?;
        let hits = predicted.iter().filter(|&&p| p == *class).count();
        let fraction = hits as f64 / total as f64;
        out.push(ClassCoverage {
            class: *class,
            total,
            hits,
            fraction: Some(fraction),
            covered: fraction >= threshold,
        });
    }
    Ok(out)
}

// ---- report ------------------------------------------------------------

/// One evaluation summary, serializable as `metric,value,detail` CSV.
#[derive(Debug, Clone)]
pub struct ScoreReport {
    pub inception_score_mean: f64,
    pub inception_score_std: f64,
    pub group_count: usize,
    pub fid: f64,
    pub coverage: Vec<ClassCoverage>,
    /// Which embedding fed the Frechet distance (the classifier substitutes
    /// for a pretrained feature extractor).
    pub feature_space: String,
    pub real_count: usize,
    pub fake_count: usize,
}

impl ScoreReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value,detail\n");
        out.push_str(&format!(
            "is_mean,{:.6},groups={}\n",
            self.inception_score_mean, self.group_count
        ));
        out.push_str(&format!("is_std,{:.6},\n", self.inception_score_std));
        out.push_str(&format!(
            "fid,{:.6},feature={};real_n={};fake_n={}\n",
            self.fid, self.feature_space, self.real_count, self.fake_count
        ));
        for c in &self.coverage {
            match c.fraction {
                Some(f) => out.push_str(&format!(
                    "coverage_class_{},{:.6},hits={}/{}\n",
                    c.class, f, c.hits, c.total
                )),
                None => out.push_str(&format!("coverage_class_{},nan,missing\n", c.class)),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable_two_class(n_per: usize, seed: u64) -> (Tensor<f32>, Vec<usize>) {
        let mut rng = Rng::from_seed(seed);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..2 * n_per {
            let class = i % 2;
            let cx = if class == 0 { -0.6 } else { 0.6 };
            data.push((cx + 0.05 * rng.gaussian()) as f32);
            data.push((0.05 * rng.gaussian()) as f32);
            labels.push(class);
        }
        (Tensor::from_vec(vec![2 * n_per, 2], data).unwrap(), labels)
    }

    #[test]
    fn classifier_separates_a_linearly_separable_set() {
        let (x, y) = separable_two_class(200, 1);
        let config = ClassifierConfig { epochs: 40, ..Default::default() };
        let model = train_eval_classifier(&x, &y, 2, &config).unwrap();
        assert!(model.holdout_accuracy >= 0.99, "accuracy {}", model.holdout_accuracy);
    }

    #[test]
    fn classifier_predictions_are_distributions() {
        let (x, y) = separable_two_class(50, 2);
        let config = ClassifierConfig { epochs: 10, ..Default::default() };
        let model = train_eval_classifier(&x, &y, 2, &config).unwrap();
        for row in model.predict_proba(&x).unwrap() {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn classifier_training_is_deterministic_in_the_seed() {
        let (x, y) = separable_two_class(50, 3);
        let config = ClassifierConfig { epochs: 5, ..Default::default() };
        let a = train_eval_classifier(&x, &y, 2, &config).unwrap();
        let b = train_eval_classifier(&x, &y, 2, &config).unwrap();
        assert_eq!(a.w1.data_clone(), b.w1.data_clone());
        assert_eq!(a.holdout_accuracy, b.holdout_accuracy);
    }

    #[test]
    fn hopeless_data_aborts_with_a_diagnostic() {
        // identical samples with alternating labels cannot beat 80%
        let x = Tensor::from_vec(vec![40, 2], vec![0.0f32; 80]).unwrap();
        let y: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let config = ClassifierConfig { epochs: 3, ..Default::default() };
        match train_eval_classifier(&x, &y, 2, &config) {
            Err(MetricsError::ClassifierTooWeak { accuracy, floor }) => {
                assert!(accuracy < floor);
            }
            other => panic!("expected abort, got {other:?}"),
        }
    }

    #[test]
    fn uniform_predictions_score_exactly_one() {
        let probs = vec![vec![0.25; 4]; 40];
        let (mean, std) = inception_score_from_probs(&probs, 10).unwrap();
        assert!((mean - 1.0).abs() < 1e-12);
        assert!(std.abs() < 1e-12);
    }

    #[test]
    fn confident_balanced_predictions_score_the_class_count() {
        let k = 10;
        let mut probs = Vec::new();
        for i in 0..100 {
            let mut row = vec![0.0; k];
            row[i % k] = 1.0;
            probs.push(row);
        }
        let (mean, _) = inception_score_from_probs(&probs, 10).unwrap();
        assert!((mean - k as f64).abs() < 1e-9);
    }

    #[test]
    fn fixed_table_matches_direct_evaluation() {
        // six samples, three classes, one group
        let table = vec![
            vec![0.7, 0.2, 0.1],
            vec![0.1, 0.8, 0.1],
            vec![0.25, 0.25, 0.5],
            vec![0.6, 0.3, 0.1],
            vec![0.05, 0.05, 0.9],
            vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        ];
        let (mean, std) = inception_score_from_probs(&table, 1).unwrap();
        // independent direct evaluation of the same definition
        let mut marginal = [0.0f64; 3];
        for row in &table {
            for (m, &p) in marginal.iter_mut().zip(row) {
                *m += p / table.len() as f64;
            }
        }
        let expected_kl: f64 = table
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&marginal)
                    .map(|(&p, &q)| if p > 0.0 { p * (p / q).ln() } else { 0.0 })
                    .sum::<f64>()
            })
            .sum::<f64>()
            / table.len() as f64;
        assert!((mean - expected_kl.exp()).abs() <= 1e-9);
        assert_eq!(std, 0.0);
    }

    #[test]
    fn group_splitting_rejects_empty_groups() {
        let probs = vec![vec![0.5, 0.5]; 3];
        assert!(matches!(
            inception_score_from_probs(&probs, 4),
            Err(MetricsError::EmptyGroup { samples: 3, groups: 4 })
        ));
        assert!(inception_score_from_probs(&probs, 0).is_err());
    }

    #[test]
    fn sqrt_of_identity_is_identity() {
        let eye = vec![1.0, 0.0, 0.0, 1.0];
        let root = matrix_sqrt_psd(&eye, 2).unwrap();
        for (a, b) in root.iter().zip(&eye) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sqrt_of_diagonal_takes_elementwise_roots() {
        let a = vec![4.0, 0.0, 0.0, 9.0];
        let root = matrix_sqrt_psd(&a, 2).unwrap();
        assert!((root[0] - 2.0).abs() < 1e-12);
        assert!((root[3] - 3.0).abs() < 1e-12);
        assert!(root[1].abs() < 1e-12 && root[2].abs() < 1e-12);
    }

    #[test]
    fn sqrt_squared_reproduces_random_spd_matrix() {
        let n = 6;
        let mut rng = Rng::from_seed(7);
        let b: Vec<f64> = (0..n * n).map(|_| rng.gaussian()).collect();
        // A = B B^T is symmetric positive definite with probability 1
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                for kk in 0..n {
                    a[i * n + j] += b[i * n + kk] * b[j * n + kk];
                }
            }
        }
        let root = matrix_sqrt_psd(&a, n).unwrap();
        let squared = matmul_square(&root, &root, n);
        let num: f64 = squared
            .iter()
            .zip(&a)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(num / den < 1e-6, "relative error {}", num / den);
        // result is symmetric PSD as stored
        for i in 0..n {
            for j in 0..n {
                assert_eq!(root[i * n + j].to_bits(), root[j * n + i].to_bits());
            }
        }
    }

    #[test]
    fn sqrt_rejects_asymmetric_input() {
        let a = vec![1.0, 0.5, 0.2, 1.0];
        assert!(matches!(matrix_sqrt_psd(&a, 2), Err(MetricsError::NotSymmetric)));
    }

    fn gaussian(mean: Vec<f64>, cov: Vec<f64>) -> EmpiricalGaussian {
        let dim = mean.len();
        EmpiricalGaussian { mean, covariance: cov, dim, sample_count: 100 }
    }

    #[test]
    fn distance_from_a_distribution_to_itself_is_zero() {
        let g = gaussian(vec![0.3, -0.7], vec![1.5, 0.2, 0.2, 0.8]);
        let d = frechet_distance(&g, &g).unwrap();
        assert!(d.abs() < 1e-8);
    }

    #[test]
    fn one_dimensional_analytic_case() {
        // (mu=0, var=1) vs (mu=1, var=1): (0-1)^2 + 1 + 1 - 2 = 1
        let a = gaussian(vec![0.0], vec![1.0]);
        let b = gaussian(vec![1.0], vec![1.0]);
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_covariances_match_the_closed_form() {
        let a = gaussian(vec![0.5, -1.0, 2.0], vec![4.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.25]);
        let b = gaussian(vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0, 0.0, 2.25, 0.0, 0.0, 0.0, 1.0]);
        let closed: f64 = {
            let mu: f64 = (0.5f64 - 0.0).powi(2) + (-1.0f64 - 0.0).powi(2) + (2.0f64 - 1.0).powi(2);
            let sig = (2.0f64 - 1.0).powi(2) + (1.0f64 - 1.5).powi(2) + (0.5f64 - 1.0).powi(2);
            mu + sig
        };
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - closed).abs() < 1e-6, "{d} vs {closed}");
    }

    #[test]
    fn frechet_distance_is_symmetric() {
        let a = gaussian(vec![0.1, 0.9], vec![1.0, 0.3, 0.3, 2.0]);
        let b = gaussian(vec![-0.4, 0.2], vec![0.5, -0.1, -0.1, 0.7]);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-8);
        assert!(ab >= 0.0);
    }

    #[test]
    fn fid_on_samples_of_the_same_law_vanishes_with_n() {
        let mut rng = Rng::from_seed(11);
        let draw = |rng: &mut Rng, n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| vec![0.3 + rng.gaussian(), -0.2 + 0.5 * rng.gaussian()])
                .collect()
        };
        let a = draw(&mut rng, 10_000);
        let b = draw(&mut rng, 10_000);
        let d = fid_from_features(&a, &b).unwrap();
        assert!(d < 0.01, "distance {d}");
    }

    #[test]
    fn coverage_flags_a_collapsed_generator() {
        let (x, y) = separable_two_class(100, 20);
        let config = ClassifierConfig { epochs: 30, ..Default::default() };
        let model = train_eval_classifier(&x, &y, 2, &config).unwrap();
        // a generator that always emits one fixed point covers at most one class
        let fixed = Tensor::from_vec(vec![50, 2], vec![0.6f32, 0.0].repeat(50)).unwrap();
        let per_class = vec![(0usize, fixed.clone()), (1usize, fixed)];
        let report = mode_coverage(&model, &per_class, 0.5).unwrap();
        let covered = report.iter().filter(|c| c.covered).count();
        assert!(covered <= 1);
    }

    #[test]
    fn coverage_reports_missing_classes_distinctly() {
        let (x, y) = separable_two_class(100, 21);
        let config = ClassifierConfig { epochs: 10, ..Default::default() };
        let model = train_eval_classifier(&x, &y, 2, &config).unwrap();
        let empty = Tensor::<f32>::zeros(vec![0, 2]);
        let report = mode_coverage(&model, &[(0, empty)], 0.5).unwrap();
        assert_eq!(report[0].fraction, None);
        assert!(!report[0].covered);
        assert_eq!(report[0].total, 0);
    }

    #[test]
    fn pass_through_generator_matches_classifier_accuracy() {
        let (x, y) = separable_two_class(200, 22);
        let config = ClassifierConfig { epochs: 40, ..Default::default() };
        let model = train_eval_classifier(&x, &y, 2, &config).unwrap();
        // feed the real data back per class: fractions track the accuracy
        let mut per_class = Vec::new();
        for class in 0..2usize {
            let rows: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
            let mut data = Vec::new();
            for &i in &rows {
                data.extend_from_slice(&x.data[i * 2..(i + 1) * 2]);
            }
            per_class.push((class, Tensor::from_vec(vec![rows.len(), 2], data).unwrap()));
        }
        let report = mode_coverage(&model, &per_class, 0.5).unwrap();
        for c in &report {
            assert!(c.fraction.unwrap() >= 0.98, "class {} fraction {:?}", c.class, c.fraction);
            assert!(c.covered);
        }
    }

    #[test]
    fn score_report_csv_layout() {
        let report = ScoreReport {
            inception_score_mean: 3.25,
            inception_score_std: 0.125,
            group_count: 10,
            fid: 0.5,
            coverage: vec![
                ClassCoverage { class: 0, total: 10, hits: 9, fraction: Some(0.9), covered: true },
                ClassCoverage { class: 1, total: 0, hits: 0, fraction: None, covered: false },
            ],
            feature_space: "raw-coordinates".into(),
            real_count: 100,
            fake_count: 100,
        };
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "metric,value,detail");
        assert_eq!(lines[1], "is_mean,3.250000,groups=10");
        assert_eq!(lines[2], "is_std,0.125000,");
        assert_eq!(lines[3], "fid,0.500000,feature=raw-coordinates;real_n=100;fake_n=100");
        assert_eq!(lines[4], "coverage_class_0,0.900000,hits=9/10");
        assert_eq!(lines[5], "coverage_class_1,nan,missing");
    }
}

//! Latent-variable distributions: reparameterized diagonal Gaussians,
//! closed-form KL to the standard normal, truncated sampling, and empirical
//! Gaussian fitting for metric computation.

use crate::diffcore::{Graph, NodeId, Scalar};
use crate::rng::Rng;

/// Log-variance is clamped to this band at construction so sigma stays in
/// [e^-5, e^5] and the KL term stays finite.
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// How many redraws a single coordinate may consume before truncated
/// sampling gives up.
const MAX_REDRAWS: u32 = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum DistError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("truncated sampling exceeded {MAX_REDRAWS} redraws for one coordinate")]
    TruncationStalled,
    #[error("truncation multiplier must be positive, got {0}")]
    InvalidRange(f64),
    #[error("covariance is not symmetric within 1e-8")]
    NotSymmetric,
}

/// Diagonal Gaussian given by a mean vector and a log-variance vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian<T: Scalar> {
    mean: Vec<T>,
    log_variance: Vec<T>,
}

impl<T: Scalar> DiagonalGaussian<T> {
    /// Construct from raw network outputs; log-variance is clamped to
    /// [-10, 10].
    pub fn new(mean: Vec<T>, log_variance: Vec<T>) -> Result<Self, DistError> {
        if mean.len() != log_variance.len() {
            return Err(DistError::LengthMismatch(format!(
                "mean has {} entries, log-variance has {}",
                mean.len(),
                log_variance.len()
            )));
        }
        let lo = T::from_f64(LOG_VAR_MIN);
        let hi = T::from_f64(LOG_VAR_MAX);
        let log_variance = log_variance.into_iter().map(|v| v.max(lo).min(hi)).collect();
        Ok(DiagonalGaussian { mean, log_variance })
    }

    pub fn standard(dim: usize) -> Self {
        DiagonalGaussian {
            mean: vec![T::zero(); dim],
            log_variance: vec![T::zero(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn log_variance(&self) -> &[T] {
        &self.log_variance
    }

    pub fn sigma(&self) -> Vec<T> {
        let half = T::from_f64(0.5);
        self.log_variance.iter().map(|&lv| (lv * half).exp()).collect()
    }
}

/// Test-time truncation band, in units of the posterior standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruncationRange {
    None,
    Multiplier(f64),
}

impl TruncationRange {
    pub fn multiplier(m: f64) -> Result<Self, DistError> {
        if m > 0.0 && m.is_finite() {
            Ok(TruncationRange::Multiplier(m))
        } else {
            Err(DistError::InvalidRange(m))
        }
    }

    pub fn parse(s: &str) -> Result<Self, DistError> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("none") || s.eq_ignore_ascii_case("normal") {
            return Ok(TruncationRange::None);
        }
        let m: f64 = s.parse().map_err(|_| DistError::InvalidRange(f64::NAN))?;
        Self::multiplier(m)
    }
}

impl std::fmt::Display for TruncationRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TruncationRange::None => write!(f, "none"),
            TruncationRange::Multiplier(m) => write!(f, "{}", m),
        }
    }
}

/// z = mean + sigma * eps with sigma = exp(log_variance / 2).
pub fn reparameterize<T: Scalar>(
    dist: &DiagonalGaussian<T>,
    epsilon: &[T],
) -> Result<Vec<T>, DistError> {
    if epsilon.len() != dist.dim() {
        return Err(DistError::LengthMismatch(format!(
            "epsilon has {} entries, distribution has {}",
            epsilon.len(),
            dist.dim()
        )));
    }
    let sigma = dist.sigma();
    Ok(dist
        .mean
        .iter()
        .zip(sigma.iter().zip(epsilon))
        .map(|(&m, (&s, &e))| m + s * e)
        .collect())
}

/// Closed-form KL(q || N(0, I)) = -1/2 sum_j (1 + log sigma_j^2 - mu_j^2 - sigma_j^2).
pub fn kl_to_standard_normal<T: Scalar>(dist: &DiagonalGaussian<T>) -> T {
    let half = T::from_f64(0.5);
    let mut acc = T::zero();
    for (&mu, &lv) in dist.mean.iter().zip(&dist.log_variance) {
        acc += T::one() + lv - mu * mu - lv.exp();
    }
    -half * acc
}

/// Draw statistics from truncated sampling, for acceptance-rate estimation.
#[derive(Debug, Clone, Copy, Default)]
pub struct TruncationStats {
    pub draws: u64,
    pub accepted: u64,
}

impl TruncationStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.draws == 0 {
            1.0
        } else {
            self.accepted as f64 / self.draws as f64
        }
    }
}

/// Per-coordinate rejection sampling: a coordinate is redrawn while
/// |z_j - mu_j| > multiplier * sigma_j, which for z = mu + sigma * g is
/// exactly |g| > multiplier. `None` returns one untruncated draw.
pub fn sample_truncated<T: Scalar>(
    dist: &DiagonalGaussian<T>,
    range: TruncationRange,
    rng: &mut Rng,
) -> Result<Vec<T>, DistError> {
    sample_truncated_with_stats(dist, range, rng).map(|(z, _)| z)
}

/// As [`sample_truncated`], also reporting how many standard-normal draws
/// were consumed and accepted.
pub fn sample_truncated_with_stats<T: Scalar>(
    dist: &DiagonalGaussian<T>,
    range: TruncationRange,
    rng: &mut Rng,
) -> Result<(Vec<T>, TruncationStats), DistError> {
    let sigma = dist.sigma();
    let mut stats = TruncationStats::default();
    let mut z = Vec::with_capacity(dist.dim());
    match range {
        TruncationRange::None => {
            for (&m, &s) in dist.mean.iter().zip(&sigma) {
                stats.draws += 1;
                stats.accepted += 1;
                z.push(m + s * T::from_f64(rng.gaussian()));
            }
        }
        TruncationRange::Multiplier(mult) => {
            if mult <= 0.0 || !mult.is_finite() {
                return Err(DistError::InvalidRange(mult));
            }
            for (&m, &s) in dist.mean.iter().zip(&sigma) {
                let mut redraws = 0u32;
                loop {
                    stats.draws += 1;
                    let g = rng.gaussian();
                    if g.abs() <= mult {
                        stats.accepted += 1;
                        z.push(m + s * T::from_f64(g));
                        break;
                    }
                    redraws += 1;
                    if redraws > MAX_REDRAWS {
                        return Err(DistError::TruncationStalled);
                    }
                }
            }
        }
    }
    Ok((z, stats))
}

/// Sample mean and unbiased covariance of a set of feature vectors.
#[derive(Debug, Clone)]
pub struct EmpiricalGaussian {
    pub mean: Vec<f64>,
    pub covariance: Vec<f64>,
    pub dim: usize,
    pub sample_count: usize,
}

impl EmpiricalGaussian {
    /// Validated constructor for externally supplied moments.
    pub fn new(mean: Vec<f64>, covariance: Vec<f64>, sample_count: usize) -> Result<Self, DistError> {
        let dim = mean.len();
        if covariance.len() != dim * dim {
            return Err(DistError::LengthMismatch(format!(
                "covariance has {} entries for dimension {}",
                covariance.len(),
                dim
            )));
        }
        if sample_count < 2 {
            return Err(DistError::TooFewSamples(sample_count));
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if (covariance[i * dim + j] - covariance[j * dim + i]).abs() > 1e-8 {
                    return Err(DistError::NotSymmetric);
                }
            }
        }
        Ok(EmpiricalGaussian { mean, covariance, dim, sample_count })
    }
}

/// Fit mean and unbiased (n-1) covariance to row vectors of equal
/// dimension. The stored covariance is exactly symmetric.
pub fn fit_gaussian(samples: &[Vec<f64>]) -> Result<EmpiricalGaussian, DistError> {
    let n = samples.len();
    if n < 2 {
        return Err(DistError::TooFewSamples(n));
    }
    let dim = samples[0].len();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(DistError::LengthMismatch("ragged sample dimensions".into()));
    }
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, &x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; dim * dim];
    for s in samples {
        for i in 0..dim {
            let di = s[i] - mean[i];
            for j in i..dim {
                cov[i * dim + j] += di * (s[j] - mean[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..dim {
        for j in i..dim {
            let v = cov[i * dim + j] / denom;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }
    Ok(EmpiricalGaussian { mean, covariance: cov, dim, sample_count: n })
}

// ---- graph composition -----------------------------------------------

/// Graph node for z = mu + exp(logvar/2) * eps over [B,J] matrices,
/// differentiable w.r.t. mu and logvar.
pub fn reparameterize_node<T: Scalar>(
    g: &mut Graph<T>,
    mu: NodeId,
    logvar: NodeId,
    eps: NodeId,
) -> Result<NodeId, crate::diffcore::DiffError> {
    let half = g.scale(logvar, T::from_f64(0.5));
    let sigma = g.exp(half);
    let scaled = g.mul(sigma, eps)?;
    g.add(mu, scaled)
}

/// Graph node for the batch-mean closed-form KL of [B,J] posterior
/// parameters against the standard normal.
pub fn kl_node<T: Scalar>(
    g: &mut Graph<T>,
    mu: NodeId,
    logvar: NodeId,
) -> Result<NodeId, crate::diffcore::DiffError> {
    let mu_sq = g.mul(mu, mu)?;
    let var = g.exp(logvar);
    let term = g.add_scalar(logvar, T::one());
    let term = g.sub(term, mu_sq)?;
    let term = g.sub(term, var)?;
    let per_sample = g.row_sum(term)?;
    let scaled = g.scale(per_sample, T::from_f64(-0.5));
    Ok(g.mean_all(scaled))
}

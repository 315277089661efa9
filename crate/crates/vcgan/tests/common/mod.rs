//! Shared oracles for integration tests. These deliberately avoid the
//! crate's own numeric paths where they serve as independent references.

/// Two-sample Kolmogorov-Smirnov test: returns (statistic, asymptotic
/// p-value) for the hypothesis that both samples come from one
/// distribution.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (n, m) = (xs.len(), ys.len());
    let mut i = 0;
    let mut j = 0;
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = xs[i];
        let y = ys[j];
        if x <= y {
            i += 1;
        }
        if y <= x {
            j += 1;
        }
        let diff = (i as f64 / n as f64 - j as f64 / m as f64).abs();
        d = d.max(diff);
    }
    let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    // asymptotic Kolmogorov survival function
    let mut p = 0.0;
    for k in 1..101 {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        p += sign * (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
    }
    (d, (2.0 * p).clamp(0.0, 1.0))
}

/// Symmetric eigendecomposition by classical Jacobi rotations; test-side
/// oracle, written independently of the crate's solver. Returns
/// eigenvalues in unspecified order.
pub fn jacobi_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    for _ in 0..200 {
        // find the largest off-diagonal element
        let (mut p, mut q, mut best) = (0, 1, 0.0f64);
        for i in 0..n {
            for j in (i + 1)..n {
                if m[i * n + j].abs() > best {
                    best = m[i * n + j].abs();
                    p = i;
                    q = j;
                }
            }
        }
        if best < 1e-13 {
            break;
        }
        let apq = m[p * n + q];
        let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
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
    }
    (0..n).map(|i| m[i * n + i]).collect()
}

/// Largest singular value of a rows x cols matrix via the eigenvalues of
/// W^T W (independent of power iteration).
pub fn largest_singular_value(w: &[f64], rows: usize, cols: usize) -> f64 {
    let mut gram = vec![0.0; cols * cols];
    for i in 0..cols {
        for j in 0..cols {
            let mut acc = 0.0;
            for r in 0..rows {
                acc += w[r * cols + i] * w[r * cols + j];
            }
            gram[i * cols + j] = acc;
        }
    }
    jacobi_eigenvalues(&gram, cols)
        .into_iter()
        .fold(0.0f64, f64::max)
        .max(0.0)
        .sqrt()
}

#[allow(dead_code)]
pub fn mean_and_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

//! Central finite-difference verification of analytic gradients.
//!
//! Checks run in f64: graphs built for training in f32 are rebuilt with f64
//! parameters so the difference quotient has headroom below the 1e-4
//! relative-error bound.

use super::tensor::Param;

/// Central finite-difference gradient of `f` at `x0`.
pub fn fd_gradient<F: FnMut(&[f64]) -> f64>(x0: &[f64], mut f: F, h: f64) -> Vec<f64> {
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; x0.len()];
    for i in 0..x0.len() {
        let orig = x[i];
        x[i] = orig + h;
        let hi = f(&x);
        x[i] = orig - h;
        let lo = f(&x);
        x[i] = orig;
        grad[i] = (hi - lo) / (2.0 * h);
    }
    grad
}

/// Relative error with a small absolute floor so near-zero pairs compare
/// on an absolute scale instead of dividing noise by noise.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| rel_err(x, y)).fold(0.0, f64::max)
}

/// Result of checking one set of parameters against finite differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub entries_checked: usize,
    pub worst_param: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Compare the analytic gradients already stored on `params` (by a prior
/// backward pass) against central differences of `loss`, which must
/// re-evaluate the objective at the parameters' current values.
pub fn check_param_gradients<F: FnMut() -> f64>(
    params: &[Param<f64>],
    mut loss: F,
    h: f64,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        entries_checked: 0,
        worst_param: None,
    };
    // snapshot every analytic gradient first: the loss closure may run
    // backward passes of its own and accumulate further gradient
    let snapshots: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad_clone().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    for (p, analytic) in params.iter().zip(&snapshots) {
        for i in 0..p.numel() {
            let orig = p.value().data[i];
            p.value_mut().data[i] = orig + h;
            let hi = loss();
            p.value_mut().data[i] = orig - h;
            let lo = loss();
            p.value_mut().data[i] = orig;
            let fd = (hi - lo) / (2.0 * h);
            let err = rel_err(fd, analytic[i]);
            report.entries_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_param = Some((p.name.clone(), i));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::graph::Graph;
    use crate::diffcore::tensor::Tensor;
    use crate::rng::Rng;

    #[test]
    fn fd_gradient_of_quadratic() {
        let g = fd_gradient(&[3.0, -1.0], |x| x[0] * x[0] + 2.0 * x[1], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-8);
        assert!((g[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let g = fd_gradient(&[1.0, 2.0, 3.0], |_| 42.0, 1e-5);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn random_mlp_parameters_pass_the_check() {
        let mut rng = Rng::from_seed(9);
        let w1 = Param::new("w1", Tensor::<f64>::randn(vec![3, 5], 0.4, &mut rng));
        let b1 = Param::new("b1", Tensor::<f64>::randn(vec![5], 0.4, &mut rng));
        let w2 = Param::new("w2", Tensor::<f64>::randn(vec![5, 2], 0.4, &mut rng));
        let b2 = Param::new("b2", Tensor::<f64>::randn(vec![2], 0.4, &mut rng));
        let x = Tensor::<f64>::randn(vec![4, 3], 1.0, &mut rng);
        let params = [w1, b1, w2, b2];

        let run = |params: &[Param<f64>], x: &Tensor<f64>, backward: bool| -> f64 {
            let mut g = Graph::<f64>::new();
            let xn = g.input("x", vec![4, 3]);
            let w1n = g.param(&params[0]);
            let b1n = g.param(&params[1]);
            let w2n = g.param(&params[2]);
            let b2n = g.param(&params[3]);
            let h = g.matmul(xn, w1n).unwrap();
            let h = g.add_bias(h, b1n).unwrap();
            let h = g.tanh(h);
            let y = g.matmul(h, w2n).unwrap();
            let y = g.add_bias(y, b2n).unwrap();
            let sq = g.mul(y, y).unwrap();
            let loss = g.mean_all(sq);
            g.evaluate(&[("x", x)]).unwrap();
            if backward {
                g.backward_scalar(loss).unwrap();
            }
            g.scalar_value(loss).unwrap()
        };

        for p in &params {
            p.zero_grad();
        }
        run(&params, &x, true);
        let report = check_param_gradients(&params, || run(&params, &x, false), 1e-5);
        assert!(
            report.passes(1e-4),
            "max rel err {} at {:?}",
            report.max_rel_err,
            report.worst_param
        );
        assert_eq!(report.entries_checked, 15 + 5 + 10 + 2);
    }
}

use nalgebra::{DMatrix, DVector};

/// Hessian of `f` by central differences of its analytic gradient, symmetrized.
pub(crate) fn numerical_hessian(grad: &impl Fn(&[f64]) -> (f64, Vec<f64>), theta: &[f64]) -> DMatrix<f64> {
    let p = theta.len();
    let mut h = DMatrix::zeros(p, p);
    let mut x = theta.to_vec();
    for j in 0..p {
        let step = 1e-5 * theta[j].abs().max(1.0);
        x[j] = theta[j] + step;
        let (_, gp) = grad(&x);
        x[j] = theta[j] - step;
        let (_, gm) = grad(&x);
        x[j] = theta[j];
        for i in 0..p {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    (&h + h.transpose()) * 0.5
}

/// Levenberg-damped Newton ascent on `f`. Only improving steps are taken, so
/// the returned point is never worse than `theta`. `visit` sees every accepted point.
pub(crate) fn newton_ascent(
    f: &impl Fn(&[f64]) -> (f64, Vec<f64>),
    theta: &mut Vec<f64>,
    max_iterations: usize,
    mut visit: impl FnMut(&[f64], f64),
) {
    let p = theta.len();
    let (mut value, mut g) = f(theta);
    if !value.is_finite() {
        return;
    }
    visit(theta, value);
    let mut damping = 1e-6;
    for _ in 0..max_iterations {
        if g.iter().all(|v| v.abs() < 1e-12 * (1.0 + value.abs())) {
            break;
        }
        let info = -numerical_hessian(f, theta);
        let scale = (0..p).map(|i| info[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
        let grad = DVector::from_column_slice(&g);
        let mut improved = false;
        while damping < 1e12 {
            let a = &info + DMatrix::identity(p, p) * (damping * scale);
            let Some(chol) = a.cholesky() else {
                damping *= 10.0;
                continue;
            };
            let delta = chol.solve(&grad);
            let candidate: Vec<f64> = theta.iter().zip(delta.iter()).map(|(t, d)| t + d).collect();
            let (v, g_c) = f(&candidate);
            if v.is_finite() && v >= value {
                improved = v > value;
                *theta = candidate;
                value = v;
                g = g_c;
                visit(theta, value);
                damping = (damping / 10.0).max(1e-12);
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
}

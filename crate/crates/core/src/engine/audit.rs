use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::Objective;

/// Worst relative errors of the analytic derivatives against central
/// differences over a set of points.
#[derive(Debug, Clone, Serialize)]
pub struct DerivativeAudit {
    pub points: usize,
    pub gradient_rel_err: f64,
    pub hessian_vector_rel_err: f64,
}

impl DerivativeAudit {
    pub fn passes(&self, grad_tol: f64, hess_tol: f64) -> bool {
        self.gradient_rel_err <= grad_tol && self.hessian_vector_rel_err <= hess_tol
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|x| x.abs()).fold(0.0, f64::max);
    diff / scale.max(1e-300)
}

/// Richardson-extrapolated central difference `(4D(h/2) - D(h))/3` of a
/// vector-valued `f` along a line; `None` when `z ± h` leaves the domain.
fn extrapolated(f: &dyn Fn(f64) -> Option<Vec<f64>>, h: f64) -> Option<Vec<f64>> {
    let d = |h: f64| -> Option<Vec<f64>> {
        let (p, m) = (f(h)?, f(-h)?);
        Some(p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * h)).collect())
    };
    let (coarse, fine) = (d(h)?, d(0.5 * h)?);
    Some(fine.iter().zip(&coarse).map(|(f, c)| (4.0 * f - c) / 3.0).collect())
}

/// Shrinks the step until the difference stencil stays in the domain.
fn shrinking(f: &dyn Fn(f64) -> Option<Vec<f64>>, mut h: f64) -> Option<Vec<f64>> {
    while h >= 1e-14 {
        if let Some(d) = extrapolated(f, h) {
            return Some(d);
        }
        h *= 0.1;
    }
    None
}

/// Compares `∇f` with extrapolated central differences of `f`, and `∇²f·v`
/// with those of `∇f` along a random unit direction `v`, at each point.
pub fn audit_derivatives(obj: &dyn Objective, points: &[Vec<f64>], seed: u64) -> DerivativeAudit {
    let n = obj.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g_err = 0.0f64;
    let mut h_err = 0.0f64;
    let shifted = |z: &[f64], dir: &[f64], h: f64| -> Vec<f64> { z.iter().zip(dir).map(|(a, b)| a + h * b).collect() };
    for z in points {
        let step = 1e-5 * z.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut grad = vec![0.0; n];
        obj.gradient(z, &mut grad);
        let mut fd_grad = vec![f64::NAN; n];
        for (j, slot) in fd_grad.iter_mut().enumerate() {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let line = |h: f64| {
                let zh = shifted(z, &e, h);
                obj.in_domain(&zh).then(|| vec![obj.value(&zh)])
            };
            if let Some(d) = shrinking(&line, step) {
                *slot = d[0];
            }
        }
        g_err = g_err.max(rel_err(&grad, &fd_grad));
        if fd_grad.iter().any(|x| x.is_nan()) {
            g_err = f64::INFINITY;
        }

        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        v.iter_mut().for_each(|x| *x /= norm);
        let mut h = DMatrix::zeros(n, n);
        obj.add_hessian(z, 1.0, &mut h);
        let hv: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[(i, j)] * v[j]).sum()).collect();
        let line = |t: f64| {
            let zt = shifted(z, &v, t);
            obj.in_domain(&zt).then(|| {
                let mut g = vec![0.0; n];
                obj.gradient(&zt, &mut g);
                g
            })
        };
        match shrinking(&line, step) {
            Some(fd_hv) => h_err = h_err.max(rel_err(&hv, &fd_hv)),
            None => h_err = f64::INFINITY,
        }
    }
    DerivativeAudit { points: points.len(), gradient_rel_err: g_err, hessian_vector_rel_err: h_err }
}

/// Random-direction second differences `f(z+hv) - 2f(z) + f(z-hv)`; returns
/// the most negative value seen, normalized by `1 + |f(z)|`.
pub fn spot_check_convexity(obj: &dyn Objective, points: &[Vec<f64>], directions: usize, seed: u64) -> f64 {
    let n = obj.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for z in points {
        let f0 = obj.value(z);
        for _ in 0..directions {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut h = 1e-3 * z.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            while h > 1e-12 {
                let zp: Vec<f64> = z.iter().zip(&v).map(|(a, b)| a + h * b).collect();
                let zm: Vec<f64> = z.iter().zip(&v).map(|(a, b)| a - h * b).collect();
                if obj.in_domain(&zp) && obj.in_domain(&zm) {
                    let d2 = obj.value(&zp) - 2.0 * f0 + obj.value(&zm);
                    worst = worst.min(d2 / (1.0 + f0.abs()));
                    break;
                }
                h *= 0.1;
            }
        }
    }
    worst
}

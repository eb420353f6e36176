use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::linalg::{dense_rows, factor_spd, independent_rows, least_norm};
use super::{
    Constraint, ConvexProgram, EngineError, KktResiduals, LinearObjective, Objective, Solution, SolveDiagnostics,
    SolverOptions, Stage, Status,
};

const CENTERING_TOL: f64 = 1e-10;
const FINAL_CENTERING_TOL: f64 = 1e-20;
/// Inside the quadratic region a decrement that fails to halve has hit the
/// rounding floor of `t`-scaled arithmetic.
const STAGNATION_DECREMENT: f64 = 1e-3;
/// Below this Newton decrement the full step is taken without an Armijo test;
/// at large `t` the barrier value is dominated by rounding.
const FULL_STEP_DECREMENT: f64 = 1e-3;
const FRACTION_TO_BOUNDARY: f64 = 0.99;
/// The Armijo test tolerates this many ulps of the barrier's magnitude.
const ROUNDING_SLACK: f64 = 64.0;
/// Half-width of the phase-I box, relative to `1 + max|z0|`.
const PHASE_ONE_BOX: f64 = 1e6;
/// A stage that stalls after the duality measure has reached this level
/// returns the last centered point instead of failing.
const FALLBACK_MEASURE: f64 = 1e-6;
/// Newton steps after which a stalled stage may fall back.
const STAGE_STEP_CAP: usize = 60;

struct EqualitySystem {
    a: DMatrix<f64>,
    b: DVector<f64>,
    /// Cholesky factor of `A Aᵀ`.
    gram: Cholesky<f64, Dyn>,
}

impl EqualitySystem {
    fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, EngineError> {
        let (gram, _) = factor_spd(&(&a * a.transpose()), 1e-14)?;
        Ok(Self { a, b, gram })
    }
}

#[derive(Default)]
struct Counters {
    newton: usize,
    phase1: usize,
    max_ridge: f64,
}

struct Run {
    z: Vec<f64>,
    t: f64,
    path: Vec<Stage>,
    stopped_early: bool,
    /// The final stage stalled; `z` is the last centered point.
    reduced: bool,
}

type EarlyStop<'a> = &'a dyn Fn(&[f64]) -> bool;

/// Minimizes the program's objective; see the module docs for the method.
pub fn solve(program: &ConvexProgram<'_>, options: &SolverOptions) -> Result<Solution, EngineError> {
    let obj = program.objective;
    let n = obj.dim();
    for c in program.equalities.iter().chain(&program.inequalities) {
        if c.idx.len() != c.val.len() || c.idx.iter().any(|&j| j >= n) {
            return Err(EngineError::Malformed(format!("constraint references variables outside 0..{n}")));
        }
    }
    if !(options.tol > 0.0) {
        return Err(EngineError::Malformed("tolerance must be positive".into()));
    }

    let (kept, dropped) = independent_rows(&program.equalities, n);
    let eq_rows: Vec<&Constraint> = kept.iter().map(|&k| &program.equalities[k]).collect();
    let eq = EqualitySystem::new(
        dense_rows(&eq_rows, n),
        DVector::from_iterator(eq_rows.len(), eq_rows.iter().map(|c| c.rhs)),
    )?;

    let z0 = match &program.start {
        Some(s) if s.len() == n => project(&eq, s)?,
        Some(s) => return Err(EngineError::Malformed(format!("start has length {}, expected {n}", s.len()))),
        None => least_norm(&eq.a, &eq.b)?.iter().copied().collect(),
    };
    let z0_norm = z0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for &k in &dropped {
        let c = &program.equalities[k];
        let scale = 1.0 + c.rhs.abs() + c.val.iter().map(|v| v.abs()).sum::<f64>() * z0_norm;
        let res = c.slack(&z0).abs();
        if res > 1e-9 * scale {
            return Err(EngineError::InconsistentEqualities(res));
        }
    }

    let mut counters = Counters::default();
    let strictly_feasible = program.inequalities.iter().all(|c| c.slack(&z0) > 0.0) && obj.in_domain(&z0);
    let start = if strictly_feasible {
        z0
    } else {
        phase_one(obj, &eq, &program.inequalities, &z0, options, &mut counters)?
    };

    let run = barrier_run(obj, &eq, &program.inequalities, start, options, &mut counters, None, None)?;
    let (ineq_multipliers, nu, kkt) = multipliers(obj, &eq, &program.inequalities, &program.equalities, &run)?;

    let mut eq_multipliers = vec![0.0; program.equalities.len()];
    for (slot, &k) in kept.iter().enumerate() {
        eq_multipliers[k] = nu[slot];
    }
    let objective = obj.value(&run.z);
    Ok(Solution {
        x: run.z,
        eq_multipliers,
        ineq_multipliers,
        diagnostics: SolveDiagnostics {
            status: if run.reduced { Status::ReducedAccuracy } else { Status::Optimal },
            objective,
            barrier_path: run.path,
            newton_steps: counters.newton,
            phase1_steps: counters.phase1,
            max_ridge: counters.max_ridge,
            kkt,
        },
    })
}

fn project(eq: &EqualitySystem, s: &[f64]) -> Result<Vec<f64>, EngineError> {
    let z = DVector::from_column_slice(s);
    if eq.a.nrows() == 0 {
        return Ok(s.to_vec());
    }
    let r = &eq.b - &eq.a * &z;
    if r.amax() == 0.0 {
        return Ok(s.to_vec());
    }
    let corr = least_norm(&eq.a, &r)?;
    Ok((z + corr).iter().copied().collect())
}

/// Finds a strictly feasible point by minimizing a uniform shift `s` of all
/// inequality rows, stopping as soon as `s < 0`.
fn phase_one(
    obj: &dyn Objective,
    eq: &EqualitySystem,
    ineq: &[Constraint],
    z0: &[f64],
    options: &SolverOptions,
    counters: &mut Counters,
) -> Result<Vec<f64>, EngineError> {
    let n = z0.len();
    let mut rows: Vec<Constraint> = ineq
        .iter()
        .map(|c| {
            let mut idx = c.idx.clone();
            let mut val = c.val.clone();
            idx.push(n);
            val.push(1.0);
            Constraint { idx, val, rhs: c.rhs }
        })
        .collect();
    rows.push(Constraint { idx: vec![n], val: vec![1.0], rhs: -1.0 });
    // a wide box keeps the auxiliary problem bounded when the feasible set is not
    let radius = PHASE_ONE_BOX * (1.0 + z0.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    for (i, &v) in z0.iter().enumerate() {
        rows.push(Constraint { idx: vec![i], val: vec![1.0], rhs: v - radius });
        rows.push(Constraint { idx: vec![i], val: vec![-1.0], rhs: -v - radius });
    }

    let worst = ineq.iter().map(|c| -c.slack(z0)).fold(0.0f64, f64::max);
    let mut start = z0.to_vec();
    start.push(worst + 1.0);

    let mut a1 = DMatrix::zeros(eq.a.nrows(), n + 1);
    a1.view_mut((0, 0), (eq.a.nrows(), n)).copy_from(&eq.a);
    let eq1 = EqualitySystem::new(a1, eq.b.clone())?;

    let mut c = vec![0.0; n + 1];
    c[n] = 1.0;
    let shift = LinearObjective { c };
    let done = |z: &[f64]| z[n] < 0.0 && ineq.iter().all(|c| c.slack(&z[..n]) > 0.0) && obj.in_domain(&z[..n]);
    let opts = SolverOptions { tol: options.tol.min(1e-10), ..*options };

    let before = counters.newton;
    let run = barrier_run(&shift, &eq1, &rows, start, &opts, counters, Some(&done), Some(n));
    counters.phase1 += counters.newton - before;
    let run = match run {
        Ok(run) => run,
        Err(EngineError::Unbounded { ray }) => return Err(EngineError::Unbounded { ray }),
        Err(e) => return Err(e),
    };
    if run.stopped_early {
        let mut z = run.z;
        z.truncate(n);
        return Ok(z);
    }
    let s_star = run.z[n];
    let mut weights: Vec<f64> = ineq.iter().map(|c| 1.0 / (run.t * (c.slack(&run.z[..n]) + s_star))).collect();
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.iter_mut().for_each(|w| *w /= total);
    }
    Err(EngineError::Infeasible { phase1_value: s_star, certificate: weights })
}

/// `t f(z) - Σ ln s(z)` and a bound on its rounding error.
fn barrier_value(obj: &dyn Objective, ineq: &[Constraint], z: &[f64], t: f64) -> Option<(f64, f64)> {
    if !obj.in_domain(z) {
        return None;
    }
    let tf = t * obj.value(z);
    let mut phi = tf;
    let mut magnitude = tf.abs();
    for c in ineq {
        let s = c.slack(z);
        if !(s > 0.0) {
            return None;
        }
        let l = s.ln();
        phi -= l;
        magnitude += l.abs();
    }
    phi.is_finite().then_some((phi, ROUNDING_SLACK * f64::EPSILON * magnitude))
}

struct NewtonStep {
    dz: DVector<f64>,
    decrement2: f64,
}

fn newton_step(
    obj: &dyn Objective,
    eq: &EqualitySystem,
    ineq: &[Constraint],
    z: &[f64],
    t: f64,
    options: &SolverOptions,
    counters: &mut Counters,
) -> Result<NewtonStep, EngineError> {
    let n = z.len();
    let mut grad = vec![0.0; n];
    obj.gradient(z, &mut grad);
    grad.iter_mut().for_each(|g| *g *= t);
    let mut h = DMatrix::zeros(n, n);
    obj.add_hessian(z, t, &mut h);
    for c in ineq {
        let inv = 1.0 / c.slack(z);
        let inv2 = inv * inv;
        // full double loop: correct even if a row repeats an index
        for (&j, &vj) in c.idx.iter().zip(&c.val) {
            grad[j] -= vj * inv;
            for (&k, &vk) in c.idx.iter().zip(&c.val) {
                h[(j, k)] += vj * vk * inv2;
            }
        }
    }
    if grad.iter().any(|g| !g.is_finite()) || h.iter().any(|v| !v.is_finite()) {
        return Err(EngineError::NumericalFailure("non-finite gradient or Hessian".into()));
    }
    let g = DVector::from_vec(grad);
    // symmetric Jacobi scaling keeps the factorization usable when slacks
    // differ by many orders of magnitude
    let d = DVector::from_iterator(n, (0..n).map(|i| {
        let hii = h[(i, i)];
        if hii > 0.0 && hii.is_finite() {
            1.0 / hii.sqrt()
        } else {
            1.0
        }
    }));
    for j in 0..n {
        for i in 0..n {
            h[(i, j)] *= d[i] * d[j];
        }
    }
    let gs = g.component_mul(&d);
    let (ch, ridge) = factor_spd(&h, options.ridge)?;
    counters.max_ridge = counters.max_ridge.max(ridge);
    let zv = DVector::from_column_slice(z);
    let hinv_g = ch.solve(&gs);
    let mut dz = if eq.a.nrows() == 0 {
        -hinv_g
    } else {
        let r = &eq.b - &eq.a * &zv;
        let mut a_s = eq.a.clone();
        for j in 0..n {
            a_s.column_mut(j).scale_mut(d[j]);
        }
        let hinv_at = ch.solve(&a_s.transpose());
        let schur = &a_s * &hinv_at;
        let rhs = -(&a_s * &hinv_g) - r;
        let (sch, ridge2) = factor_spd(&schur, options.ridge)?;
        counters.max_ridge = counters.max_ridge.max(ridge2);
        let w = sch.solve(&rhs);
        -(hinv_g + hinv_at * &w)
    };
    dz.component_mul_assign(&d);
    if eq.a.nrows() > 0 {
        // restore A(z + dz) = b exactly; the Schur solve loses it at large t
        let r = &eq.b - &eq.a * (&zv + &dz);
        dz += eq.a.transpose() * eq.gram.solve(&r);
    }
    let decrement2 = -g.dot(&dz);
    Ok(NewtonStep { dz, decrement2 })
}

fn max_step(ineq: &[Constraint], z: &[f64], dz: &DVector<f64>) -> f64 {
    let mut alpha = f64::INFINITY;
    for c in ineq {
        let rate: f64 = c.idx.iter().zip(&c.val).map(|(&j, &v)| v * dz[j]).sum();
        if rate < 0.0 {
            alpha = alpha.min(c.slack(z) / -rate);
        }
    }
    alpha
}

#[allow(clippy::too_many_arguments)]
fn barrier_run(
    obj: &dyn Objective,
    eq: &EqualitySystem,
    ineq: &[Constraint],
    start: Vec<f64>,
    options: &SolverOptions,
    counters: &mut Counters,
    early_stop: Option<EarlyStop<'_>>,
    positive_floor: Option<usize>,
) -> Result<Run, EngineError> {
    let m = ineq.len();
    let mut z = start;
    let mut t = 1.0 / options.mu0;
    let mut path = Vec::new();
    let divergence = options.divergence_norm * (1.0 + z.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    // last centered point whose duality measure allows a fallback
    let mut centered: Option<(Vec<f64>, f64)> = None;
    let fallback = |centered: &Option<(Vec<f64>, f64)>, path: &[Stage]| {
        centered.as_ref().filter(|_| early_stop.is_none()).map(|(z, t)| Run {
            z: z.clone(),
            t: *t,
            path: path.to_vec(),
            stopped_early: false,
            reduced: true,
        })
    };

    loop {
        let last_stage = m == 0 || m as f64 / t <= options.tol;
        // the last stage is centered to rounding level so multipliers are accurate
        let center_tol = if last_stage { FINAL_CENTERING_TOL } else { CENTERING_TOL };
        let mut stage_steps = 0;
        let mut prev_decrement = f64::INFINITY;
        loop {
            let step = newton_step(obj, eq, ineq, &z, t, options, counters)?;
            if step.decrement2.is_nan() {
                return Err(EngineError::NumericalFailure("Newton decrement is NaN".into()));
            }
            // a slightly negative decrement is rounding noise at large t
            if step.decrement2 / 2.0 <= center_tol {
                break;
            }
            // near the rounding floor the decrement stops shrinking quadratically
            if step.decrement2 / 2.0 <= STAGNATION_DECREMENT && step.decrement2 >= 0.5 * prev_decrement {
                break;
            }
            prev_decrement = step.decrement2;
            if stage_steps >= STAGE_STEP_CAP {
                if let Some(run) = fallback(&centered, &path) {
                    return Ok(run);
                }
            }
            if counters.newton >= options.max_newton {
                return Err(EngineError::MaxIterations { steps: counters.newton, x: z });
            }
            let (phi0, noise) = barrier_value(obj, ineq, &z, t)
                .ok_or_else(|| EngineError::NumericalFailure("iterate left the domain".into()))?;
            let mut alpha = (FRACTION_TO_BOUNDARY * max_step(ineq, &z, &step.dz)).min(1.0);
            let mut accepted = None;
            while alpha > 1e-16 {
                let zn: Vec<f64> = z.iter().zip(step.dz.iter()).map(|(a, d)| a + alpha * d).collect();
                if let Some((phi, _)) = barrier_value(obj, ineq, &zn, t) {
                    let small = step.decrement2 <= FULL_STEP_DECREMENT;
                    if small || phi <= phi0 - options.armijo_c * alpha * step.decrement2 + noise {
                        accepted = Some(zn);
                        break;
                    }
                }
                alpha *= options.armijo_beta;
            }
            counters.newton += 1;
            stage_steps += 1;
            match accepted {
                // a step below the resolution of z cannot make progress
                Some(zn) if zn == z => break,
                Some(zn) => z = zn,
                None if step.decrement2 < 1e-6 => break,
                None => {
                    if let Some(run) = fallback(&centered, &path) {
                        return Ok(run);
                    }
                    return Err(EngineError::NumericalFailure(format!(
                        "line search failed (decrement² = {:.3e}, t = {t:.1e})",
                        step.decrement2
                    )))
                }
            }
            if z.iter().any(|v| v.abs() > divergence) {
                let norm = step.dz.norm();
                return Err(EngineError::Unbounded { ray: step.dz.iter().map(|d| d / norm).collect() });
            }
            if let Some(stop) = early_stop {
                if stop(&z) {
                    path.push(Stage { mu: 1.0 / t, objective: obj.value(&z), newton_steps: stage_steps });
                    return Ok(Run { z, t, path, stopped_early: true, reduced: false });
                }
            }
        }
        path.push(Stage { mu: 1.0 / t, objective: obj.value(&z), newton_steps: stage_steps });
        if let Some(stop) = early_stop {
            if stop(&z) {
                return Ok(Run { z, t, path, stopped_early: true, reduced: false });
            }
        }
        // on the central path the objective exceeds its infimum by at most m/t
        if let Some(k) = positive_floor {
            if z[k] > 1.01 * m as f64 / t + 1e-12 {
                return Ok(Run { z, t, path, stopped_early: false, reduced: false });
            }
        }
        if last_stage {
            return Ok(Run { z, t, path, stopped_early: false, reduced: false });
        }
        if m as f64 / t <= FALLBACK_MEASURE.max(options.tol) {
            centered = Some((z.clone(), t));
        }
        t *= options.mu_factor;
    }
}

fn multipliers(
    obj: &dyn Objective,
    eq: &EqualitySystem,
    ineq: &[Constraint],
    all_eq: &[Constraint],
    run: &Run,
) -> Result<(Vec<f64>, Vec<f64>, KktResiduals), EngineError> {
    let z = &run.z;
    let n = z.len();
    let lambda: Vec<f64> = ineq.iter().map(|c| 1.0 / (run.t * c.slack(z))).collect();
    let mut grad = vec![0.0; n];
    obj.gradient(z, &mut grad);
    let mut res = DVector::from_vec(grad.clone());
    let mut scale = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut gl = vec![0.0; n];
    for (c, &l) in ineq.iter().zip(&lambda) {
        for (&j, &v) in c.idx.iter().zip(&c.val) {
            gl[j] += l * v;
        }
    }
    scale = scale.max(gl.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    for j in 0..n {
        res[j] -= gl[j];
    }
    let nu = if eq.a.nrows() == 0 {
        DVector::zeros(0)
    } else {
        -eq.gram.solve(&(&eq.a * &res))
    };
    if eq.a.nrows() > 0 {
        res += eq.a.transpose() * &nu;
    }
    let primal = all_eq
        .iter()
        .map(|c| c.slack(z).abs())
        .chain(ineq.iter().map(|c| (-c.slack(z)).max(0.0)))
        .fold(0.0f64, f64::max);
    let kkt = KktResiduals {
        stationarity: res.amax() / (1.0 + scale),
        primal_feasibility: primal,
        complementarity: ineq.len() as f64 / run.t,
    };
    Ok((lambda, nu.iter().copied().collect(), kkt))
}

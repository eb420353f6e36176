use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tc_duality::engine::{solve, solve_lp, Constraint, ConvexProgram, Objective, SolverOptions, Status};

fn opts() -> SolverOptions {
    SolverOptions::default()
}

#[test]
fn one_dimensional_lps() {
    let out = solve_lp(&[1.0], vec![], vec![Constraint::new([(0, 1.0)], 3.0)], None, &opts()).unwrap();
    assert_eq!(out.status, Status::Optimal);
    assert!((out.x[0] - 3.0).abs() < 1e-8);
    let rows = vec![Constraint::new([(0, 1.0)], 1.0), Constraint::new([(0, -1.0)], 0.0)];
    let out = solve_lp(&[1.0], vec![], rows, None, &opts()).unwrap();
    assert_eq!(out.status, Status::Infeasible);
    // the certificate combines the rows into 0 >= positive
    let w = &out.certificate;
    assert!(w.iter().all(|&v| v >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!((w[0] - w[1]).abs() < 1e-6);
    let out = solve_lp(&[-1.0], vec![], vec![Constraint::new([(0, 1.0)], 0.0)], None, &opts()).unwrap();
    assert_eq!(out.status, Status::Unbounded);
}

#[test]
fn repeated_indices_are_summed() {
    let c = Constraint::new([(2, 1.0), (0, 2.0), (2, 0.5), (1, 1.0), (1, -1.0)], 4.0);
    assert_eq!(c.idx, vec![0, 2]);
    assert_eq!(c.val, vec![2.0, 1.5]);
}

struct Transport {
    supply: Vec<f64>,
    demand: Vec<f64>,
    cost: Vec<f64>,
}

impl Transport {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let supply: Vec<f64> = (0..2).map(|_| rng.random_range(1.0..5.0)).collect();
        let total: f64 = supply.iter().sum();
        let mut cut: Vec<f64> = (0..2).map(|_| rng.random_range(0.0..total)).collect();
        cut.sort_by(f64::total_cmp);
        let demand = vec![cut[0], cut[1] - cut[0], total - cut[1]];
        let cost = (0..6).map(|_| rng.random_range(0.0..10.0)).collect();
        Self { supply, demand, cost }
    }

    fn equalities(&self) -> Vec<Constraint> {
        let mut rows: Vec<Constraint> = (0..2).map(|i| Constraint::new((0..3).map(|j| (3 * i + j, 1.0)), self.supply[i])).collect();
        rows.extend((0..3).map(|j| Constraint::new((0..2).map(|i| (3 * i + j, 1.0)), self.demand[j])));
        rows
    }

    /// Minimum cost over basic feasible solutions: every choice of two
    /// variables held at zero, the other four solved from the balance rows.
    fn brute_force(&self) -> f64 {
        let mut a = DMatrix::zeros(5, 6);
        let mut b = DVector::zeros(5);
        for i in 0..2 {
            for j in 0..3 {
                a[(i, 3 * i + j)] = 1.0;
                a[(2 + j, 3 * i + j)] = 1.0;
            }
            b[i] = self.supply[i];
        }
        for j in 0..3 {
            b[2 + j] = self.demand[j];
        }
        let mut best = f64::INFINITY;
        for z1 in 0..6 {
            for z2 in z1 + 1..6 {
                let keep: Vec<usize> = (0..6).filter(|&k| k != z1 && k != z2).collect();
                let sub = a.select_columns(&keep);
                let Ok(x) = sub.clone().svd(true, true).solve(&b, 1e-12) else { continue };
                if (&sub * &x - &b).norm() > 1e-9 || x.iter().any(|&v| v < -1e-9) {
                    continue;
                }
                let cost: f64 = keep.iter().zip(x.iter()).map(|(&k, v)| self.cost[k] * v).sum();
                best = best.min(cost);
            }
        }
        best
    }
}

#[test]
fn transportation_lps_match_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let t = Transport::random(&mut rng);
        let nonneg = (0..6).map(|j| Constraint::new([(j, 1.0)], 0.0)).collect();
        let out = solve_lp(&t.cost, t.equalities(), nonneg, None, &opts()).unwrap();
        assert!(out.status.solved());
        let oracle = t.brute_force();
        assert!((out.objective - oracle).abs() <= 1e-7 * (1.0 + oracle.abs()), "{} vs {oracle}", out.objective);
    }
}

/// `Σ exp(a_i·z) + ½|z|²`, a smooth strictly convex test objective.
struct SoftMax {
    a: Vec<Vec<f64>>,
}

impl Objective for SoftMax {
    fn dim(&self) -> usize {
        self.a[0].len()
    }

    fn value(&self, z: &[f64]) -> f64 {
        let dot = |r: &Vec<f64>| r.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        self.a.iter().map(|r| dot(r).exp()).sum::<f64>() + 0.5 * z.iter().map(|v| v * v).sum::<f64>()
    }

    fn gradient(&self, z: &[f64], grad: &mut [f64]) {
        grad.copy_from_slice(z);
        for r in &self.a {
            let e = r.iter().zip(z).map(|(a, b)| a * b).sum::<f64>().exp();
            for (g, a) in grad.iter_mut().zip(r) {
                *g += e * a;
            }
        }
    }

    fn add_hessian(&self, z: &[f64], scale: f64, hess: &mut DMatrix<f64>) {
        for i in 0..z.len() {
            hess[(i, i)] += scale;
        }
        for r in &self.a {
            let e = r.iter().zip(z).map(|(a, b)| a * b).sum::<f64>().exp();
            for i in 0..z.len() {
                for j in 0..z.len() {
                    hess[(i, j)] += scale * e * r[i] * r[j];
                }
            }
        }
    }
}

fn soft_program(seed: u64) -> (SoftMax, Vec<Constraint>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 4;
    let a = (0..3).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let rows = (0..n).map(|j| Constraint::new([(j, 1.0)], rng.random_range(-1.0..0.5))).collect();
    (SoftMax { a }, rows)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn barrier_path_is_monotone_and_deterministic(seed in 0u64..10_000) {
        let (obj, rows) = soft_program(seed);
        let program = ConvexProgram::new(&obj).with_inequalities(rows.clone());
        let first = solve(&program, &opts()).unwrap();
        prop_assert!(first.diagnostics.status.solved());
        let path = &first.diagnostics.barrier_path;
        for w in path.windows(2) {
            prop_assert!(w[1].objective <= w[0].objective + 1e-12 * (1.0 + w[0].objective.abs()));
        }
        prop_assert!(first.diagnostics.kkt.max() <= 1e-6);
        let again = solve(&ConvexProgram::new(&obj).with_inequalities(rows), &opts()).unwrap();
        prop_assert_eq!(
            first.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            again.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

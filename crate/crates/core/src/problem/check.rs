use std::ops::Range;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ProblemSpec;
use crate::linalg::{dist, norm};

const SECANT_TRIPLES: usize = 64;
const SECANT_TOL: f64 = 1e-9;
const KINK_TOL: f64 = 1e-4;

/// Result of checking one gradient oracle.
#[derive(Clone, Debug, Serialize)]
pub struct OracleCheck {
    pub name: String,
    /// Largest `‖fd - g‖ / max(‖g‖, 1)` over the smooth sample points.
    pub max_rel_err: f64,
    pub samples_used: usize,
    /// Points skipped because one-sided differences disagreed (a kink).
    pub samples_skipped: usize,
    pub max_norm: f64,
    pub declared_bound: Option<f64>,
    pub bound_violated: bool,
    /// Worst secant-inequality excess (positive means violated).
    pub secant_excess: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub tol: f64,
    pub checks: Vec<OracleCheck>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.checks {
            if !(c.max_rel_err <= self.tol) {
                out.push(format!(
                    "{}: finite-difference error {:.3e} exceeds {:.1e}",
                    c.name, c.max_rel_err, self.tol
                ));
            }
            if c.bound_violated {
                out.push(format!(
                    "{}: observed norm {:.6e} exceeds declared bound {:.6e}",
                    c.name,
                    c.max_norm,
                    c.declared_bound.unwrap_or(f64::NAN)
                ));
            }
            if c.secant_excess > 0.0 {
                out.push(format!(
                    "{}: secant test violated by {:.3e}",
                    c.name, c.secant_excess
                ));
            }
        }
        out
    }
}

/// Central-difference gradient of `f` at `x`; `None` at a detected kink.
fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Option<Vec<f64>> {
    let mut p = x.to_vec();
    let f0 = f(x);
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1.0);
        p[i] = x[i] + h;
        let fp = f(&p);
        p[i] = x[i] - h;
        let fm = f(&p);
        p[i] = x[i];
        let central = (fp - fm) / (2.0 * h);
        let fwd = (fp - f0) / h;
        let bwd = (f0 - fm) / h;
        if (fwd - bwd).abs() > KINK_TOL * central.abs().max(1.0) {
            return None;
        }
        g[i] = central;
    }
    Some(g)
}

struct Tally {
    check: OracleCheck,
}

impl Tally {
    fn new(name: String, declared_bound: Option<f64>) -> Self {
        Self {
            check: OracleCheck {
                name,
                max_rel_err: 0.0,
                samples_used: 0,
                samples_skipped: 0,
                max_norm: 0.0,
                declared_bound,
                bound_violated: false,
                secant_excess: f64::NEG_INFINITY,
            },
        }
    }

    fn gradient(&mut self, fd: Option<Vec<f64>>, g: &[f64]) {
        let n = norm(g);
        self.check.max_norm = self.check.max_norm.max(n);
        if let Some(b) = self.check.declared_bound {
            if n > b * (1.0 + 1e-9) + 1e-12 {
                self.check.bound_violated = true;
            }
        }
        match fd {
            Some(fd) => {
                self.check.samples_used += 1;
                let err = dist(&fd, g) / n.max(1.0);
                self.check.max_rel_err = self.check.max_rel_err.max(err);
            }
            None => self.check.samples_skipped += 1,
        }
    }

    /// Records `f(mid) - [θ f(a) + (1-θ) f(b)]` scaled; positive means not convex.
    fn secant(&mut self, f_mid: f64, f_a: f64, f_b: f64, theta: f64) {
        let chord = theta * f_a + (1.0 - theta) * f_b;
        let scale = f_mid.abs().max(chord.abs()).max(1.0);
        let excess = (f_mid - chord) / scale - SECANT_TOL;
        self.check.secant_excess = self.check.secant_excess.max(excess);
    }
}

fn mix(a: &[f64], b: &[f64], theta: f64) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(x, y)| theta * x + (1.0 - theta) * y)
        .collect()
}

fn mix_block(a: &[f64], b: &[f64], theta: f64, block: &Range<usize>) -> (Vec<f64>, Vec<f64>) {
    let mut other = a.to_vec();
    other[block.clone()].copy_from_slice(&b[block.clone()]);
    let mid = mix(a, &other, theta);
    (other, mid)
}

/// Compares every declared (sub)gradient with central finite differences at
/// `trials` random points, checks declared norm bounds, and runs 64 random
/// secant tests for convexity in `x` and concavity in each `z` block.
pub fn check_subgradients(spec: &ProblemSpec, trials: usize, tol: f64, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng: &mut dyn RngCore = &mut rng;
    let x_set = &spec.decision_set;
    let mut checks = Vec::new();

    let obj = &spec.objective;
    let mut t = Tally::new("objective".into(), Some(obj.bound));
    for _ in 0..trials {
        let x = x_set.sample_point(rng);
        let mut g = vec![0.0; x.len()];
        obj.func.subgrad_acc(&x, 1.0, &mut g);
        t.gradient(fd_gradient(&|v| obj.func.eval(v), &x), &g);
    }
    for _ in 0..SECANT_TRIPLES {
        let (a, b, th) = (
            x_set.sample_point(rng),
            x_set.sample_point(rng),
            rng.random::<f64>(),
        );
        t.secant(
            obj.func.eval(&mix(&a, &b, th)),
            obj.func.eval(&a),
            obj.func.eval(&b),
            th,
        );
    }
    checks.push(t.check);

    for (m, c) in spec.constraints.iter().enumerate() {
        let g = &c.func;
        let mut tx = Tally::new(format!("constraint {m} x-subgradient"), c.bound_x);
        let mut tz = Tally::new(format!("constraint {m} z-supergradient"), c.bound_z);
        for _ in 0..trials {
            let x = x_set.sample_point(rng);
            let z = c.set.sample_point(rng);
            let mut gx = vec![0.0; x.len()];
            g.subgrad_x_acc(&x, &z, 1.0, &mut gx);
            tx.gradient(fd_gradient(&|v| g.eval(v, &z), &x), &gx);
            let mut zeta = vec![0.0; z.len()];
            g.supergrad_z_into(&x, &z, &mut zeta);
            // compare the fd of -g with ζ
            tz.gradient(fd_gradient(&|v| -g.eval(&x, v), &z), &zeta);
        }
        for _ in 0..SECANT_TRIPLES {
            let z = c.set.sample_point(rng);
            let (a, b, th) = (
                x_set.sample_point(rng),
                x_set.sample_point(rng),
                rng.random::<f64>(),
            );
            tx.secant(
                g.eval(&mix(&a, &b, th), &z),
                g.eval(&a, &z),
                g.eval(&b, &z),
                th,
            );
        }
        let blocks = g.concave_blocks();
        for i in 0..SECANT_TRIPLES {
            let block = &blocks[i % blocks.len()];
            let x = x_set.sample_point(rng);
            let (a, b, th) = (
                c.set.sample_point(rng),
                c.set.sample_point(rng),
                rng.random::<f64>(),
            );
            let (other, mid) = mix_block(&a, &b, th, block);
            // concavity of g is convexity of -g
            tz.secant(-g.eval(&x, &mid), -g.eval(&x, &a), -g.eval(&x, &other), th);
        }
        checks.push(tx.check);
        checks.push(tz.check);
    }
    CheckReport { tol, checks }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::linalg::dot;
    use crate::problem::{
        ConstraintOracle, FnConstraint, FnObjective, LinearObjective, ObjectiveOracle,
    };
    use crate::sets::SetDescriptor;

    fn spec(objective: ObjectiveOracle, constraints: Vec<ConstraintOracle>) -> ProblemSpec {
        ProblemSpec {
            objective,
            constraints,
            decision_set: Arc::new(SetDescriptor::cube(2, -1.0, 1.0)),
            slater_point: None,
        }
    }

    fn linear_objective(bound: f64) -> ObjectiveOracle {
        ObjectiveOracle {
            func: Arc::new(LinearObjective { c: vec![0.3, -0.4] }),
            bound,
            smooth: Some(0.0),
        }
    }

    #[test]
    fn linear_objective_is_exact() {
        let r = check_subgradients(&spec(linear_objective(0.5), vec![]), 20, 1e-8, 1);
        assert!(r.passed(), "{:?}", r.failures());
        assert!(r.max_rel_err() <= 1e-8);
    }

    #[test]
    fn bilinear_constraint_is_exact_in_both_blocks() {
        let q = [[1.0, -2.0], [0.5, 3.0]];
        let g = FnConstraint::new(
            2,
            2,
            move |x, z| {
                (0..2)
                    .map(|i| (0..2).map(|j| x[i] * q[i][j] * z[j]).sum::<f64>())
                    .sum()
            },
            move |_, z, out| {
                for i in 0..2 {
                    out[i] = dot(&q[i], z);
                }
            },
            move |x, _, out| {
                for j in 0..2 {
                    out[j] = x[0] * q[0][j] + x[1] * q[1][j];
                }
            },
        );
        let c = ConstraintOracle::new(Arc::new(g), Arc::new(SetDescriptor::unit_ball(2)))
            .with_bounds(4.0, 5.1);
        let r = check_subgradients(&spec(linear_objective(1.0), vec![c]), 20, 1e-6, 2);
        assert!(r.passed(), "{:?}", r.failures());
    }

    #[test]
    fn understated_bound_is_flagged() {
        let f = FnObjective::new(
            2,
            |x| x[0],
            |_, g| {
                g[0] = 1.0;
                g[1] = 0.0;
            },
        );
        let obj = ObjectiveOracle {
            func: Arc::new(f),
            bound: 0.5,
            smooth: None,
        };
        let r = check_subgradients(&spec(obj, vec![]), 5, 1e-8, 3);
        assert!(r.checks[0].bound_violated);
        assert!(!r.passed());
    }

    #[test]
    fn wrong_gradient_and_nonconvexity_are_flagged() {
        let f = FnObjective::new(2, |x| -x[0] * x[0], |_, g| g.fill(0.0));
        let obj = ObjectiveOracle {
            func: Arc::new(f),
            bound: 10.0,
            smooth: None,
        };
        let r = check_subgradients(&spec(obj, vec![]), 10, 1e-6, 4);
        assert!(r.checks[0].max_rel_err > 1e-3);
        assert!(r.checks[0].secant_excess > 0.0);
    }

    #[test]
    fn kinks_are_skipped() {
        let f = FnObjective::new(
            2,
            |x| x[0].abs() + x[1],
            |x, g| {
                g[0] = x[0].signum();
                g[1] = 1.0;
            },
        );
        let obj = ObjectiveOracle {
            func: Arc::new(f),
            bound: 2f64.sqrt(),
            smooth: None,
        };
        let s = spec(obj, vec![]);
        let r = check_subgradients(&s, 50, 1e-6, 5);
        assert!(r.passed(), "{:?}", r.failures());
        let mut g = vec![0.0; 2];
        s.objective.func.subgrad_acc(&[0.0, 0.0], 1.0, &mut g);
        assert!(fd_gradient(&|v| s.objective.func.eval(v), &[0.0, 0.0]).is_none());
    }
}

//! Intersection-form uncertainty sets and their penalized reformulation.
//!
//! An uncertainty set `{z ∈ Z̃ : h_i(z) ≤ 0}` is handled by moving the cuts
//! into the constraint with multipliers `μ ∈ [0, a]^I` that become extra
//! decision variables: `g̃((x, μ), z) = g(x, z) - μᵀh(z)` over `Z̃`.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    ConstraintFn, ConstraintOracle, ObjectiveFn, ObjectiveOracle, ProblemSpec, SmoothConsts,
};
use crate::error::{check_dim, Error, Result};
use crate::sets::{DykstraIntersection, Projector, SetDescriptor};

/// Convex cut function `h(z)`.
pub trait CutFn: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn eval(&self, z: &[f64]) -> f64;
    /// `out += scale * η` with `η ∈ ∂h(z)`.
    fn subgrad_acc(&self, z: &[f64], scale: f64, out: &mut [f64]);
}

#[derive(Clone, Debug)]
pub struct Cut {
    pub func: Arc<dyn CutFn>,
    /// Bound on `‖η‖` over the base set.
    pub bound: f64,
    /// Bound on `|h|` over the base set, when known analytically.
    pub value_bound: Option<f64>,
    /// `{h ≤ 0}` as a projectable set, if it is one. Needed only for the
    /// direct (Dykstra) route.
    pub as_set: Option<SetDescriptor>,
}

/// A robust constraint whose uncertainty set is `base_set ∩ {h_i ≤ 0}`.
#[derive(Clone, Debug)]
pub struct IntersectionConstraint {
    pub func: Arc<dyn ConstraintFn>,
    pub base_set: SetDescriptor,
    pub bound_x: Option<f64>,
    pub bound_z: Option<f64>,
    pub cuts: Vec<Cut>,
    /// Point of `base_set` with every cut strictly negative.
    pub inner_slater: Vec<f64>,
    /// Analytic lower bound `G < 0` on `g(x, inner_slater)` over `X`.
    pub lower_bound: Option<f64>,
}

impl IntersectionConstraint {
    /// The constraint over the base set alone, ignoring the cuts.
    pub fn base_oracle(&self) -> ConstraintOracle {
        ConstraintOracle {
            func: self.func.clone(),
            set: Arc::new(self.base_set.clone()),
            bound_x: self.bound_x,
            bound_z: self.bound_z,
            smooth: None,
            worst_case: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IntersectionProblem {
    pub objective: ObjectiveOracle,
    pub constraints: Vec<IntersectionConstraint>,
    pub decision_set: SetDescriptor,
    pub slater_point: Option<Vec<f64>>,
}

impl IntersectionProblem {
    /// The same problem with each uncertainty set projected onto directly by
    /// Dykstra's method. Slow, but independent of the penalized route.
    pub fn direct_spec(&self, tol: f64, max_iter: usize) -> Result<ProblemSpec> {
        let constraints = self
            .constraints
            .iter()
            .enumerate()
            .map(|(m, c)| {
                let mut sets = vec![c.base_set.clone()];
                for cut in &c.cuts {
                    match &cut.as_set {
                        Some(s) => sets.push(s.clone()),
                        None => {
                            return Err(Error::InvalidArgument(format!(
                                "cut of constraint {m} has no set form; direct route unavailable"
                            )))
                        }
                    }
                }
                let set = DykstraIntersection::new(sets, tol, max_iter)?;
                let mut o = c.base_oracle();
                o.set = Arc::new(set);
                Ok(o)
            })
            .collect::<Result<_>>()?;
        Ok(ProblemSpec {
            objective: self.objective.clone(),
            constraints,
            decision_set: Arc::new(self.decision_set.clone()),
            slater_point: self.slater_point.clone(),
        })
    }
}

/// Lower bound `G_m` on the constraint at the inner Slater point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LowerBound {
    pub value: f64,
    /// Estimated by sampling rather than supplied analytically.
    pub heuristic: bool,
}

/// Estimates `G ≤ min_{x ∈ X} g(x, z̄)` by sampling `X`; the sampled minimum
/// is lowered by `slack` (default `0.1·|min|`). The result is a heuristic:
/// sampling can miss the true minimum.
pub fn estimate_g(
    func: &dyn ConstraintFn,
    z_bar: &[f64],
    decision_set: &dyn Projector,
    samples: usize,
    slack: Option<f64>,
    seed: u64,
) -> Result<LowerBound> {
    check_dim(func.z_dim(), z_bar.len())?;
    if samples == 0 {
        return Err(Error::InvalidArgument(
            "estimate_g needs at least one sample".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min = (0..samples)
        .map(|_| func.eval(&decision_set.sample_point(&mut rng), z_bar))
        .fold(f64::INFINITY, f64::min);
    if !(min < 0.0) {
        return Err(Error::InvalidBound(format!(
            "sampled minimum of g at the inner Slater point is {min}; supply G explicitly"
        )));
    }
    let slack = slack.unwrap_or(0.1 * min.abs());
    Ok(LowerBound {
        value: min - slack,
        heuristic: true,
    })
}

/// The penalized problem over `x̃ = (x, μ_1, ..., μ_M)`.
#[derive(Clone, Debug)]
pub struct ExtendedProblem {
    pub spec: ProblemSpec,
    /// `a_m`; zero for constraints without cuts.
    pub caps: Vec<f64>,
    pub lower_bounds: Vec<LowerBound>,
    pub x_dim: usize,
    /// Coordinates of each `μ_m` inside `x̃`.
    pub mu_ranges: Vec<Range<usize>>,
}

impl ExtendedProblem {
    pub fn x_part<'a>(&self, x_ext: &'a [f64]) -> &'a [f64] {
        &x_ext[..self.x_dim]
    }

    pub fn mu_part<'a>(&self, x_ext: &'a [f64], m: usize) -> &'a [f64] {
        &x_ext[self.mu_ranges[m].clone()]
    }

    pub fn any_heuristic_bound(&self) -> bool {
        self.lower_bounds.iter().any(|b| b.heuristic)
    }
}

#[derive(Debug)]
struct PaddedObjective {
    inner: Arc<dyn ObjectiveFn>,
    total: usize,
}

impl ObjectiveFn for PaddedObjective {
    fn dim(&self) -> usize {
        self.total
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.inner.eval(&x[..self.inner.dim()])
    }

    fn subgrad_acc(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        let n = self.inner.dim();
        self.inner.subgrad_acc(&x[..n], scale, &mut out[..n]);
    }
}

/// `g(x, z) - μᵀh(z)` with `μ` read from its slot in `x̃`.
#[derive(Debug)]
struct PenalizedConstraint {
    base: Arc<dyn ConstraintFn>,
    cuts: Vec<Arc<dyn CutFn>>,
    mu: Range<usize>,
    total: usize,
}

impl ConstraintFn for PenalizedConstraint {
    fn x_dim(&self) -> usize {
        self.total
    }

    fn z_dim(&self) -> usize {
        self.base.z_dim()
    }

    fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        let n = self.base.x_dim();
        let mu = &x[self.mu.clone()];
        let pen: f64 = self.cuts.iter().zip(mu).map(|(h, m)| m * h.eval(z)).sum();
        self.base.eval(&x[..n], z) - pen
    }

    fn subgrad_x_acc(&self, x: &[f64], z: &[f64], scale: f64, out: &mut [f64]) {
        let n = self.base.x_dim();
        self.base.subgrad_x_acc(&x[..n], z, scale, &mut out[..n]);
        for (o, h) in out[self.mu.clone()].iter_mut().zip(&self.cuts) {
            *o -= scale * h.eval(z);
        }
    }

    fn supergrad_z_into(&self, x: &[f64], z: &[f64], out: &mut [f64]) {
        let n = self.base.x_dim();
        self.base.supergrad_z_into(&x[..n], z, out);
        for (h, &m) in self.cuts.iter().zip(&x[self.mu.clone()]) {
            if m != 0.0 {
                h.subgrad_acc(z, m, out);
            }
        }
    }

    fn concave_blocks(&self) -> Vec<Range<usize>> {
        self.base.concave_blocks()
    }

    fn cut_count(&self) -> usize {
        self.cuts.len()
    }
}

const G_SAMPLES: usize = 256;
const H_SAMPLES: usize = 256;

/// Builds the penalized problem. Caps are `a_m = G_m / max_i h_{m,i}(z̄_m)`.
pub fn penalize(problem: &IntersectionProblem) -> Result<ExtendedProblem> {
    problem.decision_set.validate()?;
    let x_dim = problem.decision_set.dim();
    check_dim(x_dim, problem.objective.func.dim())?;

    let mut caps = Vec::with_capacity(problem.constraints.len());
    let mut lower_bounds = Vec::with_capacity(problem.constraints.len());
    let mut mu_ranges = Vec::with_capacity(problem.constraints.len());
    let mut factors = vec![problem.decision_set.clone()];
    let mut offset = x_dim;
    for (m, c) in problem.constraints.iter().enumerate() {
        check_dim(x_dim, c.func.x_dim())?;
        check_dim(c.func.z_dim(), c.inner_slater.len())?;
        if !c.base_set.contains(&c.inner_slater, 1e-9) {
            return Err(Error::InvalidSlater(format!(
                "inner Slater point of constraint {m} is outside the base set"
            )));
        }
        let h_max = c
            .cuts
            .iter()
            .map(|h| h.func.eval(&c.inner_slater))
            .fold(f64::NEG_INFINITY, f64::max);
        if !c.cuts.is_empty() && !(h_max < 0.0) {
            return Err(Error::InvalidSlater(format!(
                "constraint {m}: max cut value {h_max} at the inner Slater point is not negative"
            )));
        }
        let lb = match c.lower_bound {
            Some(g) => LowerBound {
                value: g,
                heuristic: false,
            },
            None => estimate_g(
                c.func.as_ref(),
                &c.inner_slater,
                &problem.decision_set,
                G_SAMPLES,
                None,
                m as u64,
            )?,
        };
        if !(lb.value < 0.0) {
            return Err(Error::InvalidBound(format!(
                "constraint {m}: G must be negative, got {}",
                lb.value
            )));
        }
        let cap = if c.cuts.is_empty() {
            0.0
        } else {
            lb.value / h_max
        };
        let i_m = c.cuts.len();
        if i_m > 0 {
            factors.push(SetDescriptor::IntervalBox {
                upper: cap,
                dim: i_m,
            });
        }
        caps.push(cap);
        lower_bounds.push(lb);
        mu_ranges.push(offset..offset + i_m);
        offset += i_m;
    }
    let total = offset;

    let decision_set = SetDescriptor::product(factors);
    let constraints = problem
        .constraints
        .iter()
        .enumerate()
        .map(|(m, c)| {
            let cap = caps[m];
            let h_bound = cut_value_bound(c, m as u64);
            let f_max = c.cuts.iter().map(|h| h.bound).fold(0.0, f64::max);
            ConstraintOracle {
                func: Arc::new(PenalizedConstraint {
                    base: c.func.clone(),
                    cuts: c.cuts.iter().map(|h| h.func.clone()).collect(),
                    mu: mu_ranges[m].clone(),
                    total,
                }),
                set: Arc::new(c.base_set.clone()),
                bound_x: c.bound_x.map(|d| (d * d + h_bound * h_bound).sqrt()),
                bound_z: c.bound_z.map(|e| e + cap * c.cuts.len() as f64 * f_max),
                smooth: None::<SmoothConsts>,
                worst_case: None,
            }
        })
        .collect();

    let slater_point = problem.slater_point.as_ref().map(|s| {
        let mut v = s.clone();
        v.resize(total, 0.0);
        v
    });
    Ok(ExtendedProblem {
        spec: ProblemSpec {
            objective: ObjectiveOracle {
                func: Arc::new(PaddedObjective {
                    inner: problem.objective.func.clone(),
                    total,
                }),
                bound: problem.objective.bound,
                smooth: problem.objective.smooth,
            },
            constraints,
            decision_set: Arc::new(decision_set),
            slater_point,
        },
        caps,
        lower_bounds,
        x_dim,
        mu_ranges,
    })
}

/// `‖h(z)‖` bound over the base set: declared per-cut bounds, else a sampled
/// maximum inflated by half.
fn cut_value_bound(c: &IntersectionConstraint, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_cut: Vec<f64> = c
        .cuts
        .iter()
        .map(|h| match h.value_bound {
            Some(b) => b,
            None => {
                1.5 * (0..H_SAMPLES)
                    .map(|_| h.func.eval(&c.base_set.sample_interior(&mut rng)).abs())
                    .fold(0.0, f64::max)
            }
        })
        .collect();
    per_cut.iter().map(|b| b * b).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dist, dot};
    use crate::problem::{FnConstraint, LinearObjective, RobustLinear};

    #[derive(Debug)]
    struct ConstCut(f64);

    impl CutFn for ConstCut {
        fn dim(&self) -> usize {
            2
        }
        fn eval(&self, _z: &[f64]) -> f64 {
            self.0
        }
        fn subgrad_acc(&self, _z: &[f64], _scale: f64, _out: &mut [f64]) {}
    }

    #[derive(Debug)]
    struct BallCut {
        center: Vec<f64>,
        radius: f64,
    }

    impl CutFn for BallCut {
        fn dim(&self) -> usize {
            self.center.len()
        }
        fn eval(&self, z: &[f64]) -> f64 {
            dist(z, &self.center).powi(2) - self.radius * self.radius
        }
        fn subgrad_acc(&self, z: &[f64], scale: f64, out: &mut [f64]) {
            for i in 0..z.len() {
                out[i] += scale * 2.0 * (z[i] - self.center[i]);
            }
        }
    }

    fn problem(cuts: Vec<Cut>, slater_z: Vec<f64>, g: Option<f64>) -> IntersectionProblem {
        IntersectionProblem {
            objective: ObjectiveOracle {
                func: Arc::new(LinearObjective { c: vec![1.0, 1.0] }),
                bound: 2f64.sqrt(),
                smooth: Some(0.0),
            },
            constraints: vec![IntersectionConstraint {
                func: Arc::new(RobustLinear {
                    a: vec![0.5, 0.0],
                    b: 2.0,
                }),
                base_set: SetDescriptor::unit_ball(2),
                bound_x: Some(1.5),
                bound_z: Some(2f64.sqrt()),
                cuts,
                inner_slater: slater_z,
                lower_bound: g,
            }],
            decision_set: SetDescriptor::cube(2, -1.0, 1.0),
            slater_point: Some(vec![0.0, 0.0]),
        }
    }

    fn cut(f: impl CutFn + 'static) -> Cut {
        Cut {
            func: Arc::new(f),
            bound: 4.0,
            value_bound: Some(4.0),
            as_set: None,
        }
    }

    #[test]
    fn cap_is_ratio_of_bounds() {
        let p = problem(vec![cut(ConstCut(-0.5))], vec![0.0, 0.0], Some(-2.0));
        let e = penalize(&p).unwrap();
        assert_eq!(e.caps, vec![4.0]);
        assert!(!e.any_heuristic_bound());
    }

    #[test]
    fn vacuous_cut_adds_mu() {
        let p = problem(vec![cut(ConstCut(-1.0))], vec![0.0, 0.0], Some(-1.0));
        let e = penalize(&p).unwrap();
        assert_eq!(e.caps, vec![1.0]);
        let g = &e.spec.constraints[0].func;
        let z = [0.1, 0.2];
        let base = p.constraints[0].func.eval(&[0.3, 0.4], &z);
        assert_eq!(g.eval(&[0.3, 0.4, 0.7], &z), base + 0.7);
    }

    #[test]
    fn ball_cut_cap_is_g_over_radius_squared() {
        let r = 0.5;
        let c = Cut {
            func: Arc::new(BallCut {
                center: vec![0.2, 0.1],
                radius: r,
            }),
            bound: 4.0,
            value_bound: None,
            as_set: Some(SetDescriptor::ball(vec![0.2, 0.1], r)),
        };
        let p = problem(vec![c], vec![0.2, 0.1], Some(-3.0));
        let e = penalize(&p).unwrap();
        assert!((e.caps[0] - 3.0 / (r * r)).abs() < 1e-12);
        let cap_slot = e.spec.decision_set.project(&[0.0, 0.0, 1e9]).unwrap();
        assert!((cap_slot[2] - e.caps[0]).abs() < 1e-9);
    }

    #[test]
    fn zero_multiplier_recovers_base_bitwise() {
        let p = problem(
            vec![cut(BallCut {
                center: vec![0.0, 0.0],
                radius: 0.9,
            })],
            vec![0.0, 0.0],
            Some(-1.0),
        );
        let e = penalize(&p).unwrap();
        for (x, z) in [([0.3, -0.2], [0.5, 0.1]), ([-1.0, 1.0], [0.0, -0.7])] {
            let ext = [x[0], x[1], 0.0];
            assert_eq!(
                e.spec.constraints[0].func.eval(&ext, &z).to_bits(),
                p.constraints[0].func.eval(&x, &z).to_bits()
            );
        }
    }

    #[test]
    fn cap_scales_linearly_with_g() {
        let caps: Vec<f64> = [-1.0, -2.0, -4.0]
            .iter()
            .map(|&g| {
                penalize(&problem(
                    vec![cut(ConstCut(-0.25))],
                    vec![0.0, 0.0],
                    Some(g),
                ))
                .unwrap()
                .caps[0]
            })
            .collect();
        assert_eq!(caps, vec![4.0, 8.0, 16.0]);
    }

    #[test]
    fn penalized_gradients_have_the_documented_layout() {
        let p = problem(
            vec![cut(BallCut {
                center: vec![0.0, 0.0],
                radius: 0.9,
            })],
            vec![0.0, 0.0],
            Some(-1.0),
        );
        let e = penalize(&p).unwrap();
        let g = &e.spec.constraints[0].func;
        let x = [0.3, -0.2, 0.5];
        let z = [0.4, 0.1];
        let mut gx = vec![0.0; 3];
        g.subgrad_x_acc(&x, &z, 1.0, &mut gx);
        let h = 0.4f64 * 0.4 + 0.1 * 0.1 - 0.81;
        assert!((gx[0] - 0.9).abs() < 1e-15 && (gx[1] - 0.1).abs() < 1e-15);
        assert!((gx[2] + h).abs() < 1e-15);
        let mut gz = vec![0.0; 2];
        g.supergrad_z_into(&x, &z, &mut gz);
        // ζ = -x plus μ·∇h = 0.5·2z
        assert!((gz[0] - (-0.3 + 0.4)).abs() < 1e-15);
        assert!((gz[1] - (0.2 + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn invalid_slater_and_bound_are_rejected() {
        let bad = problem(vec![cut(ConstCut(0.0))], vec![0.0, 0.0], Some(-1.0));
        assert!(matches!(penalize(&bad), Err(Error::InvalidSlater(_))));
        let bad = problem(vec![cut(ConstCut(-1.0))], vec![0.0, 0.0], Some(0.0));
        assert!(matches!(penalize(&bad), Err(Error::InvalidBound(_))));
    }

    #[test]
    fn estimate_g_examples() {
        let constant = FnConstraint::new(
            2,
            1,
            |_, _| -0.05,
            |_, _, g| g.fill(0.0),
            |_, _, g| g.fill(0.0),
        );
        let ball = SetDescriptor::unit_ball(2);
        let lb = estimate_g(&constant, &[0.0], &ball, 10, Some(0.01), 1).unwrap();
        assert!((lb.value - (-0.06)).abs() < 1e-15);
        assert!(lb.heuristic);

        let b = [0.3, 0.4];
        let lin = FnConstraint::new(
            2,
            1,
            move |x, _| dot(&b, x) - 1.0,
            move |_, _, g| g.copy_from_slice(&b),
            |_, _, g| g.fill(0.0),
        );
        let lb = estimate_g(&lin, &[0.0], &ball, 20_000, Some(0.0), 2).unwrap();
        assert!(lb.value > -1.5 && lb.value < -1.45, "got {}", lb.value);

        let single = estimate_g(&lin, &[0.0], &ball, 1, Some(0.0), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = ball.sample_point(&mut rng);
        assert_eq!(single.value, dot(&b, &x0) - 1.0);

        let positive = FnConstraint::new(
            2,
            1,
            |_, _| 1.0,
            |_, _, g| g.fill(0.0),
            |_, _, g| g.fill(0.0),
        );
        assert!(estimate_g(&positive, &[0.0], &ball, 5, None, 0).is_err());
    }
}

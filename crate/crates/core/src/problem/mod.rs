//! Oracle model for robust problems.
//!
//! A [`ProblemSpec`] bundles a convex objective, a list of robust constraints
//! `g_m(x, z)` (convex in `x`, concave in `z`), the decision set and the
//! uncertainty sets. Everything the solvers know about a function goes through
//! the [`ObjectiveFn`] and [`ConstraintFn`] traits.

mod check;
mod model;
mod penalize;
mod pessimize;

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::sets::Projector;

pub use check::{check_subgradients, CheckReport, OracleCheck};
pub use model::{
    digest_of, ConstraintEntry, ConstraintModel, CutEntry, CutModel, Instance, InstanceDocument,
    ObjectiveModel, INSTANCE_FORMAT, INSTANCE_VERSION,
};
pub use penalize::{
    estimate_g, penalize, Cut, CutFn, ExtendedProblem, IntersectionConstraint, IntersectionProblem,
    LowerBound,
};
pub use pessimize::{
    max_violation, pessimize, robust_value, slater_margin, Pessimized, DEFAULT_REPORT_BUDGET,
};

/// Convex objective `f0`.
pub trait ObjectiveFn: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> f64;
    /// `out += scale * ξ0` with `ξ0 ∈ ∂f0(x)`.
    fn subgrad_acc(&self, x: &[f64], scale: f64, out: &mut [f64]);
}

/// Robust constraint `g(x, z)`: convex in `x`, concave in `z`.
pub trait ConstraintFn: Send + Sync + fmt::Debug {
    fn x_dim(&self) -> usize;
    fn z_dim(&self) -> usize;
    fn eval(&self, x: &[f64], z: &[f64]) -> f64;
    /// `out += scale * ξ` with `ξ ∈ ∂_x g(x, z)`.
    fn subgrad_x_acc(&self, x: &[f64], z: &[f64], scale: f64, out: &mut [f64]);
    /// Writes `ζ ∈ ∂_z(-g)(x, z)`, the negated supergradient; ascent moves along `-ζ`.
    fn supergrad_z_into(&self, x: &[f64], z: &[f64], out: &mut [f64]);

    /// Coordinate blocks of `z` on which `g` is concave. Most constraints are
    /// jointly concave and return one block.
    fn concave_blocks(&self) -> Vec<Range<usize>> {
        vec![0..self.z_dim()]
    }

    /// Number of cut functions folded into this constraint; each call to
    /// `supergrad_z_into` costs that many cut-gradient evaluations.
    fn cut_count(&self) -> usize {
        0
    }
}

/// Smoothness constants of a constraint (gradient Lipschitz moduli).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothConsts {
    /// `∇_x g` is `dx`-Lipschitz in `x`.
    pub dx: f64,
    /// `∇_z g` moves by at most `ez_x·|Δx| + ez_z·|Δz|`.
    pub ez_x: f64,
    pub ez_z: f64,
}

/// Exact maximizer of `z ↦ g(x, z)` over the constraint's uncertainty set.
pub type WorstCaseFn = Arc<dyn Fn(&[f64]) -> (Vec<f64>, f64) + Send + Sync>;

#[derive(Clone, Debug)]
pub struct ObjectiveOracle {
    pub func: Arc<dyn ObjectiveFn>,
    /// Bound on subgradient norms over `X`.
    pub bound: f64,
    /// Gradient Lipschitz constant, when `f0` is smooth.
    pub smooth: Option<f64>,
}

#[derive(Clone)]
pub struct ConstraintOracle {
    pub func: Arc<dyn ConstraintFn>,
    pub set: Arc<dyn Projector>,
    /// Bound on `‖ξ‖` over `X × Z`.
    pub bound_x: Option<f64>,
    /// Bound on `‖ζ‖` over `X × Z`.
    pub bound_z: Option<f64>,
    pub smooth: Option<SmoothConsts>,
    pub worst_case: Option<WorstCaseFn>,
}

impl fmt::Debug for ConstraintOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintOracle")
            .field("func", &self.func)
            .field("set", &self.set)
            .field("bound_x", &self.bound_x)
            .field("bound_z", &self.bound_z)
            .field("smooth", &self.smooth)
            .field("worst_case", &self.worst_case.is_some())
            .finish()
    }
}

impl ConstraintOracle {
    pub fn new(func: Arc<dyn ConstraintFn>, set: Arc<dyn Projector>) -> Self {
        Self {
            func,
            set,
            bound_x: None,
            bound_z: None,
            smooth: None,
            worst_case: None,
        }
    }

    pub fn with_bounds(mut self, bound_x: f64, bound_z: f64) -> Self {
        self.bound_x = Some(bound_x);
        self.bound_z = Some(bound_z);
        self
    }

    pub fn with_smooth(mut self, smooth: SmoothConsts) -> Self {
        self.smooth = Some(smooth);
        self
    }

    pub fn with_worst_case(mut self, worst_case: WorstCaseFn) -> Self {
        self.worst_case = Some(worst_case);
        self
    }
}

#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub objective: ObjectiveOracle,
    pub constraints: Vec<ConstraintOracle>,
    pub decision_set: Arc<dyn Projector>,
    pub slater_point: Option<Vec<f64>>,
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        self.decision_set.dim()
    }

    /// Checks that all dimensions agree and the declared constants are sane.
    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        check_dim(n, self.objective.func.dim())?;
        if !(self.objective.bound.is_finite() && self.objective.bound >= 0.0) {
            return Err(Error::InvalidBound(format!(
                "objective bound must be finite and non-negative, got {}",
                self.objective.bound
            )));
        }
        if !self.decision_set.diameter().is_finite() {
            return Err(Error::InvalidArgument(
                "decision set must be bounded".into(),
            ));
        }
        for (m, c) in self.constraints.iter().enumerate() {
            check_dim(n, c.func.x_dim())?;
            check_dim(c.func.z_dim(), c.set.dim())?;
            if !c.set.diameter().is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "uncertainty set of constraint {m} must be bounded"
                )));
            }
            for b in [c.bound_x, c.bound_z].into_iter().flatten() {
                if !(b.is_finite() && b >= 0.0) {
                    return Err(Error::InvalidBound(format!(
                        "constraint {m} has an invalid bound {b}"
                    )));
                }
            }
        }
        if let Some(s) = &self.slater_point {
            check_dim(n, s.len())?;
        }
        Ok(())
    }

    /// Declared `D_m` for every constraint.
    pub fn bounds_x(&self) -> Result<Vec<f64>> {
        self.constraints
            .iter()
            .enumerate()
            .map(|(m, c)| {
                c.bound_x.ok_or_else(|| {
                    Error::Config(format!(
                        "constraint {m} has no declared x-subgradient bound"
                    ))
                })
            })
            .collect()
    }

    /// Smoothness constants of every oracle, if all of them are declared.
    pub fn smooth_consts(&self) -> Option<(f64, Vec<SmoothConsts>)> {
        let d0 = self.objective.smooth?;
        let cs = self
            .constraints
            .iter()
            .map(|c| c.smooth)
            .collect::<Option<Vec<_>>>()?;
        Some((d0, cs))
    }
}

/// Lipschitz constant `sqrt(Σ D_m²)` of the constraint map `x ↦ (f_m(x))_m`.
pub fn lipschitz_f(spec: &ProblemSpec) -> Result<f64> {
    lipschitz_from_bounds(&spec.bounds_x()?)
}

pub(crate) fn lipschitz_from_bounds(bounds: &[f64]) -> Result<f64> {
    Ok(bounds.iter().map(|d| d * d).sum::<f64>().sqrt())
}

/// Cumulative oracle-call counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCounters {
    pub f0: u64,
    pub gx: u64,
    pub gz: u64,
    pub h: u64,
    pub proj_x: u64,
    pub proj_z: u64,
}

impl OracleCounters {
    pub fn proj(&self) -> u64 {
        self.proj_x + self.proj_z
    }

    pub fn add(&mut self, other: &OracleCounters) {
        self.f0 += other.f0;
        self.gx += other.gx;
        self.gz += other.gz;
        self.h += other.h;
        self.proj_x += other.proj_x;
        self.proj_z += other.proj_z;
    }
}

/// Linear objective `cᵀx`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearObjective {
    pub c: Vec<f64>,
}

impl ObjectiveFn for LinearObjective {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        crate::linalg::dot(&self.c, x)
    }

    fn subgrad_acc(&self, _x: &[f64], scale: f64, out: &mut [f64]) {
        crate::linalg::axpy(scale, &self.c, out);
    }
}

type ObjEval = dyn Fn(&[f64]) -> f64 + Send + Sync;
type ObjGrad = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Objective built from closures; the gradient closure writes `∇f0(x)`.
pub struct FnObjective {
    dim: usize,
    eval: Box<ObjEval>,
    grad: Box<ObjGrad>,
}

impl FnObjective {
    pub fn new(
        dim: usize,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            eval: Box::new(eval),
            grad: Box::new(grad),
        }
    }
}

impl fmt::Debug for FnObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnObjective(dim={})", self.dim)
    }
}

impl ObjectiveFn for FnObjective {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    fn subgrad_acc(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        let mut g = vec![0.0; self.dim];
        (self.grad)(x, &mut g);
        crate::linalg::axpy(scale, &g, out);
    }
}

type ConEval = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
type ConGrad = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// Constraint built from closures. `grad_x` writes `∇_x g`, `grad_z` writes
/// `∇_z g` (the solver negates it).
pub struct FnConstraint {
    x_dim: usize,
    z_dim: usize,
    eval: Box<ConEval>,
    grad_x: Box<ConGrad>,
    grad_z: Box<ConGrad>,
}

impl FnConstraint {
    pub fn new(
        x_dim: usize,
        z_dim: usize,
        eval: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        grad_x: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        grad_z: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            x_dim,
            z_dim,
            eval: Box::new(eval),
            grad_x: Box::new(grad_x),
            grad_z: Box::new(grad_z),
        }
    }
}

impl fmt::Debug for FnConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "FnConstraint(x_dim={}, z_dim={})",
            self.x_dim, self.z_dim
        )
    }
}

impl ConstraintFn for FnConstraint {
    fn x_dim(&self) -> usize {
        self.x_dim
    }

    fn z_dim(&self) -> usize {
        self.z_dim
    }

    fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        (self.eval)(x, z)
    }

    fn subgrad_x_acc(&self, x: &[f64], z: &[f64], scale: f64, out: &mut [f64]) {
        let mut g = vec![0.0; self.x_dim];
        (self.grad_x)(x, z, &mut g);
        crate::linalg::axpy(scale, &g, out);
    }

    fn supergrad_z_into(&self, x: &[f64], z: &[f64], out: &mut [f64]) {
        (self.grad_z)(x, z, out);
        for o in out.iter_mut() {
            *o = -*o;
        }
    }
}

/// Robust linear constraint `(a + z)ᵀx - b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustLinear {
    pub a: Vec<f64>,
    pub b: f64,
}

impl ConstraintFn for RobustLinear {
    fn x_dim(&self) -> usize {
        self.a.len()
    }

    fn z_dim(&self) -> usize {
        self.a.len()
    }

    fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        crate::linalg::dot(&self.a, x) + crate::linalg::dot(z, x) - self.b
    }

    fn subgrad_x_acc(&self, _x: &[f64], z: &[f64], scale: f64, out: &mut [f64]) {
        crate::linalg::axpy(scale, &self.a, out);
        crate::linalg::axpy(scale, z, out);
    }

    fn supergrad_z_into(&self, x: &[f64], _z: &[f64], out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = -xi;
        }
    }
}

impl RobustLinear {
    /// Worst case over `Ball(0, radius)`: `aᵀx + radius·‖x‖ - b`.
    pub fn worst_case_ball(&self, x: &[f64], radius: f64) -> (Vec<f64>, f64) {
        let nx = crate::linalg::norm(x);
        let z = if nx > 0.0 {
            x.iter().map(|v| radius * v / nx).collect()
        } else {
            vec![0.0; x.len()]
        };
        (z, crate::linalg::dot(&self.a, x) + radius * nx - self.b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sets::SetDescriptor;

    fn spec_with_bounds(bounds: &[f64]) -> ProblemSpec {
        let constraints = bounds
            .iter()
            .map(|&d| {
                ConstraintOracle::new(
                    Arc::new(RobustLinear {
                        a: vec![0.0],
                        b: 1.0,
                    }),
                    Arc::new(SetDescriptor::unit_ball(1)),
                )
                .with_bounds(d, 1.0)
            })
            .collect();
        ProblemSpec {
            objective: ObjectiveOracle {
                func: Arc::new(LinearObjective { c: vec![1.0] }),
                bound: 1.0,
                smooth: Some(0.0),
            },
            constraints,
            decision_set: Arc::new(SetDescriptor::cube(1, -1.0, 1.0)),
            slater_point: None,
        }
    }

    #[test]
    fn lipschitz_examples() {
        assert_eq!(lipschitz_f(&spec_with_bounds(&[3.0, 4.0])).unwrap(), 5.0);
        assert_eq!(lipschitz_f(&spec_with_bounds(&[1.0])).unwrap(), 1.0);
        assert_eq!(lipschitz_f(&spec_with_bounds(&[1.0; 4])).unwrap(), 2.0);
    }

    #[test]
    fn lipschitz_requires_bounds() {
        let mut spec = spec_with_bounds(&[1.0]);
        spec.constraints[0].bound_x = None;
        assert!(matches!(lipschitz_f(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn validate_catches_dimension_mismatch() {
        let mut spec = spec_with_bounds(&[1.0]);
        assert!(spec.validate().is_ok());
        spec.slater_point = Some(vec![0.0, 0.0]);
        assert!(matches!(
            spec.validate(),
            Err(Error::DimensionMismatch {
                expected: 1,
                got: 2
            })
        ));
    }

    #[test]
    fn robust_linear_worst_case_matches_direct_evaluation() {
        let g = RobustLinear {
            a: vec![0.5, 0.2],
            b: 1.0,
        };
        let x = [0.3, -0.4];
        let (z, v) = g.worst_case_ball(&x, 1.0);
        assert!((g.eval(&x, &z) - v).abs() < 1e-15);
        assert!((v - (0.15 - 0.08 + 0.5 - 1.0)).abs() < 1e-15);
    }
}

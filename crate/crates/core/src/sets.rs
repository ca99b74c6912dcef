//! Convex sets with exact Euclidean projections.
//!
//! Every compact variant is a valid home for a decision set or an uncertainty
//! set. `NonnegOrthant` is unbounded and only used for multipliers.
//! Intersections without a closed-form projection are handled by
//! [`DykstraIntersection`], which exists as a reference oracle.

use std::fmt;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::{dist, norm};

/// Anything with a Euclidean projection.
pub trait Projector: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Writes the projection of `v` into `out`.
    fn project_into(&self, v: &[f64], out: &mut [f64]) -> Result<()>;

    /// Upper bound on the diameter (may be infinite).
    fn diameter(&self) -> f64;

    /// A fixed feasible point, used as a default starting point.
    fn anchor_point(&self) -> Vec<f64>;

    /// A random feasible point, used by the sampling-based checks.
    fn sample_point(&self, rng: &mut dyn RngCore) -> Vec<f64>;

    fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.project_into(v, &mut out)?;
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetDescriptor {
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// Probability simplex `{z ≥ 0, Σz = 1}`.
    Simplex {
        dim: usize,
    },
    /// `[0, upper]^dim`.
    IntervalBox {
        upper: f64,
        dim: usize,
    },
    NonnegOrthant {
        dim: usize,
    },
    Product {
        factors: Vec<SetDescriptor>,
    },
}

impl SetDescriptor {
    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        Self::Ball { center, radius }
    }

    pub fn unit_ball(dim: usize) -> Self {
        Self::Ball {
            center: vec![0.0; dim],
            radius: 1.0,
        }
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Self::Box {
            lower: vec![lo; dim],
            upper: vec![hi; dim],
        }
    }

    pub fn simplex(dim: usize) -> Self {
        Self::Simplex { dim }
    }

    pub fn product(factors: Vec<SetDescriptor>) -> Self {
        Self::Product { factors }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Ball { center, .. } => center.len(),
            Self::Box { lower, .. } => lower.len(),
            Self::Simplex { dim } | Self::IntervalBox { dim, .. } | Self::NonnegOrthant { dim } => {
                *dim
            }
            Self::Product { factors } => factors.iter().map(Self::dim).sum(),
        }
    }

    /// Checks the structural invariants of the descriptor.
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Ball { center, radius } => {
                check_finite(center, "ball center")?;
                // radius 0 is accepted as a degenerate singleton
                if !(radius.is_finite() && *radius >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "ball radius must be finite and non-negative, got {radius}"
                    )));
                }
            }
            Self::Box { lower, upper } => {
                check_dim(lower.len(), upper.len())?;
                check_finite(lower, "box lower bound")?;
                check_finite(upper, "box upper bound")?;
                if let Some(i) = lower.iter().zip(upper).position(|(l, u)| l > u) {
                    return Err(Error::InvalidArgument(format!(
                        "box lower bound exceeds upper bound at index {i}"
                    )));
                }
            }
            Self::Simplex { dim } => {
                if *dim == 0 {
                    return Err(Error::InvalidArgument(
                        "simplex dimension must be >= 1".into(),
                    ));
                }
            }
            Self::IntervalBox { upper, .. } => {
                if !(upper.is_finite() && *upper > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "interval box upper bound must be positive, got {upper}"
                    )));
                }
            }
            Self::NonnegOrthant { .. } => {}
            Self::Product { factors } => {
                for f in factors {
                    f.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn is_compact(&self) -> bool {
        match self {
            Self::NonnegOrthant { dim } => *dim == 0,
            Self::Product { factors } => factors.iter().all(Self::is_compact),
            _ => true,
        }
    }

    /// Membership test up to `tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self {
            Self::Ball { center, radius } => dist(x, center) <= radius + tol,
            Self::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol),
            Self::Simplex { .. } => {
                x.iter().all(|v| *v >= -tol) && (x.iter().sum::<f64>() - 1.0).abs() <= tol
            }
            Self::IntervalBox { upper, .. } => x.iter().all(|v| *v >= -tol && *v <= upper + tol),
            Self::NonnegOrthant { .. } => x.iter().all(|v| *v >= -tol),
            Self::Product { factors } => {
                let mut off = 0;
                factors.iter().all(|f| {
                    let d = f.dim();
                    let ok = f.contains(&x[off..off + d], tol);
                    off += d;
                    ok
                })
            }
        }
    }

    fn project_unchecked(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Self::Ball { center, radius } => {
                let d = dist(v, center);
                if d <= *radius {
                    out.copy_from_slice(v);
                } else {
                    let s = radius / d;
                    for ((o, vi), ci) in out.iter_mut().zip(v).zip(center) {
                        *o = ci + s * (vi - ci);
                    }
                }
            }
            Self::Box { lower, upper } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = v[i].clamp(lower[i], upper[i]);
                }
            }
            Self::Simplex { .. } => simplex_projection_into(v, out),
            Self::IntervalBox { upper, .. } => {
                for (o, vi) in out.iter_mut().zip(v) {
                    *o = vi.clamp(0.0, *upper);
                }
            }
            Self::NonnegOrthant { .. } => {
                for (o, vi) in out.iter_mut().zip(v) {
                    *o = vi.max(0.0);
                }
            }
            Self::Product { factors } => {
                let mut off = 0;
                for f in factors {
                    let d = f.dim();
                    f.project_unchecked(&v[off..off + d], &mut out[off..off + d]);
                    off += d;
                }
            }
        }
    }

    /// Draws a random point in the relative interior of the set (compact sets
    /// only; the orthant draws exponential coordinates).
    pub fn sample_interior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Self::Ball { center, radius } => {
                let n = center.len();
                let dir: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
                let dn = norm(&dir).max(1e-300);
                let r = 0.95 * radius * rng.random::<f64>().powf(1.0 / n.max(1) as f64);
                center
                    .iter()
                    .zip(&dir)
                    .map(|(c, d)| c + r * d / dn)
                    .collect()
            }
            Self::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| {
                    let w = u - l;
                    l + 0.01 * w + 0.98 * w * rng.random::<f64>()
                })
                .collect(),
            Self::Simplex { dim } => {
                let e: Vec<f64> = (0..*dim)
                    .map(|_| {
                        let s: f64 = Exp1.sample(rng);
                        s + 1e-3
                    })
                    .collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|v| v / s).collect()
            }
            Self::IntervalBox { upper, dim } => (0..*dim)
                .map(|_| upper * (0.01 + 0.98 * rng.random::<f64>()))
                .collect(),
            Self::NonnegOrthant { dim } => (0..*dim).map(|_| Exp1.sample(rng)).collect(),
            Self::Product { factors } => factors
                .iter()
                .flat_map(|f| f.sample_interior(rng))
                .collect(),
        }
    }
}

impl Projector for SetDescriptor {
    fn dim(&self) -> usize {
        SetDescriptor::dim(self)
    }

    fn project_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        let d = SetDescriptor::dim(self);
        check_dim(d, v.len())?;
        check_dim(d, out.len())?;
        check_finite(v, "projection input")?;
        self.project_unchecked(v, out);
        Ok(())
    }

    fn diameter(&self) -> f64 {
        match self {
            Self::Ball { radius, .. } => 2.0 * radius,
            Self::Box { lower, upper } => dist(lower, upper),
            Self::Simplex { dim } => {
                if *dim > 1 {
                    std::f64::consts::SQRT_2
                } else {
                    0.0
                }
            }
            Self::IntervalBox { upper, dim } => upper * (*dim as f64).sqrt(),
            Self::NonnegOrthant { dim } => {
                if *dim == 0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Self::Product { factors } => factors
                .iter()
                .map(|f| f.diameter().powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }

    fn anchor_point(&self) -> Vec<f64> {
        match self {
            Self::Ball { center, .. } => center.clone(),
            Self::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| 0.5 * (l + u))
                .collect(),
            Self::Simplex { dim } => vec![1.0 / *dim as f64; *dim],
            Self::IntervalBox { upper, dim } => vec![0.5 * upper; *dim],
            Self::NonnegOrthant { dim } => vec![0.0; *dim],
            Self::Product { factors } => factors.iter().flat_map(|f| f.anchor_point()).collect(),
        }
    }

    fn sample_point(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.sample_interior(rng)
    }
}

/// Euclidean projection of `v` onto `set`.
pub fn project(set: &SetDescriptor, v: &[f64]) -> Result<Vec<f64>> {
    Projector::project(set, v)
}

/// Euclidean projection onto the probability simplex of dimension `n`
/// (sort, then threshold).
pub fn project_simplex(n: usize, v: &[f64]) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "simplex dimension must be >= 1".into(),
        ));
    }
    check_dim(n, v.len())?;
    check_finite(v, "projection input")?;
    let mut out = vec![0.0; n];
    simplex_projection_into(v, &mut out);
    Ok(out)
}

fn simplex_projection_into(v: &[f64], out: &mut [f64]) {
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut threshold = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            threshold = t;
        }
    }
    for (o, vi) in out.iter_mut().zip(v) {
        *o = (vi - threshold).max(0.0);
    }
}

/// Outcome of Dykstra's alternating projection.
#[derive(Clone, Debug)]
pub struct DykstraOutcome {
    pub point: Vec<f64>,
    pub iterations: usize,
    pub change: f64,
}

/// Dykstra's alternating projection onto `∩ sets`. Stops once a full sweep
/// moves the iterate by at most `tol`.
pub fn dykstra(
    sets: &[&dyn Projector],
    v: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<DykstraOutcome> {
    let Some(first) = sets.first() else {
        return Err(Error::InvalidArgument("empty intersection".into()));
    };
    let n = first.dim();
    for s in sets {
        check_dim(n, s.dim())?;
    }
    check_dim(n, v.len())?;
    check_finite(v, "projection input")?;
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::InvalidArgument(
            "Dykstra needs tol > 0 and max_iter >= 1".into(),
        ));
    }

    let mut y = v.to_vec();
    let mut corrections = vec![vec![0.0; n]; sets.len()];
    let mut shifted = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut change = f64::INFINITY;
    for it in 1..=max_iter {
        let sweep_start = y.clone();
        for (set, p) in sets.iter().zip(corrections.iter_mut()) {
            for i in 0..n {
                shifted[i] = y[i] + p[i];
            }
            set.project_into(&shifted, &mut next)?;
            for i in 0..n {
                p[i] = shifted[i] - next[i];
            }
            std::mem::swap(&mut y, &mut next);
        }
        change = dist(&y, &sweep_start);
        if change <= tol {
            return Ok(DykstraOutcome {
                point: y,
                iterations: it,
                change,
            });
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: max_iter,
        change,
        last: y,
    })
}

/// Reference projection onto an intersection of simple sets (Dykstra).
/// Intended for tests and cross-checks, not for the solvers' hot path.
pub fn project_intersection_reference(
    sets: &[SetDescriptor],
    v: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let refs: Vec<&dyn Projector> = sets.iter().map(|s| s as &dyn Projector).collect();
    dykstra(&refs, v, tol, max_iter).map(|o| o.point)
}

/// An intersection of simple sets, projected with Dykstra's method.
#[derive(Clone, Debug)]
pub struct DykstraIntersection {
    pub sets: Vec<SetDescriptor>,
    pub tol: f64,
    pub max_iter: usize,
}

impl DykstraIntersection {
    pub fn new(sets: Vec<SetDescriptor>, tol: f64, max_iter: usize) -> Result<Self> {
        let first = sets
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty intersection".into()))?;
        for s in &sets {
            s.validate()?;
            check_dim(first.dim(), s.dim())?;
        }
        Ok(Self {
            sets,
            tol,
            max_iter,
        })
    }
}

impl Projector for DykstraIntersection {
    fn dim(&self) -> usize {
        self.sets[0].dim()
    }

    fn project_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.dim(), out.len())?;
        let p = project_intersection_reference(&self.sets, v, self.tol, self.max_iter)?;
        out.copy_from_slice(&p);
        Ok(())
    }

    fn diameter(&self) -> f64 {
        self.sets
            .iter()
            .map(Projector::diameter)
            .fold(f64::INFINITY, f64::min)
    }

    fn anchor_point(&self) -> Vec<f64> {
        let start = self.sets[0].anchor_point();
        self.project(&start).unwrap_or(start)
    }

    fn sample_point(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let raw = self.sets[0].sample_interior(rng);
        self.project(&raw).unwrap_or_else(|_| self.anchor_point())
    }
}

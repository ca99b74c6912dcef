//! Projected subgradient descent-ascent for strongly-convex-concave saddle
//! problems `min_u max_v F̂(u, v) + (σ/2)‖u - û‖²`, and its specialization to
//! the Lagrangian subproblem of the outer loop.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::{dist, norm_sq};
use crate::problem::{OracleCounters, ProblemSpec};

/// First-order access to a saddle function and its feasible sets.
///
/// Methods take `&mut self` so implementations can keep scratch space and
/// call counters.
pub trait SaddleOracle {
    fn u_dim(&self) -> usize;
    fn v_dim(&self) -> usize;
    /// Writes `ξ ∈ ∂_u F̂(u, v)` into `out`.
    fn u_subgrad(&mut self, u: &[f64], v: &[f64], out: &mut [f64]);
    /// Writes `ζ ∈ ∂_v(-F̂)(u, v)` into `out`.
    fn v_supergrad(&mut self, u: &[f64], v: &[f64], out: &mut [f64]);
    fn project_u(&mut self, p: &[f64], out: &mut [f64]) -> Result<()>;
    fn project_v(&mut self, p: &[f64], out: &mut [f64]) -> Result<()>;
    fn anchor(&self) -> &[f64];
    fn strength(&self) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    Nonsmooth,
    Smooth,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerConfig {
    pub t: usize,
    pub gamma: f64,
    pub delta: f64,
    pub mode: StepMode,
    /// Stop once `‖Δu‖/γ + ‖Δv‖/δ` drops below this value.
    pub early_stop: Option<f64>,
}

impl InnerConfig {
    /// `γ = δ = 1/√T`.
    pub fn nonsmooth(t: usize) -> Self {
        let s = 1.0 / (t.max(1) as f64).sqrt();
        Self {
            t,
            gamma: s,
            delta: s,
            mode: StepMode::Nonsmooth,
            early_stop: None,
        }
    }

    pub fn smooth(t: usize, gamma: f64, delta: f64) -> Self {
        Self {
            t,
            gamma,
            delta,
            mode: StepMode::Smooth,
            early_stop: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 {
            return Err(Error::InvalidArgument(
                "inner iteration count must be >= 1".into(),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "γ must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "δ must be nonnegative, got {}",
                self.delta
            )));
        }
        if self.mode == StepMode::Nonsmooth {
            let cap = 1.0 / (self.t as f64).sqrt() * (1.0 + 1e-12);
            if self.gamma > cap || self.delta > cap {
                return Err(Error::InvalidArgument(format!(
                    "nonsmooth steps must not exceed 1/sqrt(T) = {:.6e} (γ = {:.6e}, δ = {:.6e})",
                    1.0 / (self.t as f64).sqrt(),
                    self.gamma,
                    self.delta
                )));
            }
        }
        Ok(())
    }
}

/// Oracle calls made by [`inner_solve`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InnerCounts {
    pub u_subgrad: u64,
    pub v_supergrad: u64,
    pub proj_u: u64,
    pub proj_v: u64,
}

#[derive(Clone, Debug)]
pub struct InnerResult {
    pub u_avg: Vec<f64>,
    pub v_avg: Vec<f64>,
    pub u_last: Vec<f64>,
    pub v_last: Vec<f64>,
    pub iterations: usize,
    pub counts: InnerCounts,
}

fn non_finite(p: &[f64]) -> bool {
    p.iter().any(|x| !x.is_finite())
}

/// Runs `T` iterations of
///
/// ```text
/// v_{t+1} = Proj_V(v_t - δ(2ζ_t - ζ_{t-1})),           ζ_{-1} = ζ_0
/// u_{t+1} = Proj_U((γσû + u_t - γξ_t) / (1 + γσ)),     ξ_t at (u_t, v_{t+1})
/// ```
///
/// and returns the averages of iterates `1..=T`.
pub fn inner_solve(
    oracle: &mut dyn SaddleOracle,
    config: &InnerConfig,
    u0: &[f64],
    v0: &[f64],
) -> Result<InnerResult> {
    config.validate()?;
    let (nu, nv) = (oracle.u_dim(), oracle.v_dim());
    check_dim(nu, u0.len())?;
    check_dim(nv, v0.len())?;
    check_dim(nu, oracle.anchor().len())?;
    check_finite(u0, "initial u")?;
    check_finite(v0, "initial v")?;
    let sigma = oracle.strength();
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "strength σ must be positive, got {sigma}"
        )));
    }
    let (gamma, delta) = (config.gamma, config.delta);
    let anchor = oracle.anchor().to_vec();
    let c = gamma * sigma;
    let denom = 1.0 + c;

    let mut counts = InnerCounts::default();
    let (mut u, mut v) = (u0.to_vec(), v0.to_vec());
    let (mut u_next, mut v_next) = (vec![0.0; nu], vec![0.0; nv]);
    let (mut pu, mut pv) = (vec![0.0; nu], vec![0.0; nv]);
    let mut xi = vec![0.0; nu];
    let mut zeta = vec![0.0; nv];
    oracle.v_supergrad(&u, &v, &mut zeta);
    counts.v_supergrad += 1;
    let mut zeta_prev = zeta.clone();
    let (mut avg_u, mut avg_v) = (vec![0.0; nu], vec![0.0; nv]);

    let mut done = 0;
    for t in 0..config.t {
        for i in 0..nv {
            pv[i] = v[i] - delta * (2.0 * zeta[i] - zeta_prev[i]);
        }
        if non_finite(&pv) {
            return Err(Error::Numerical {
                iteration: t + 1,
                message: "non-finite v step".into(),
            });
        }
        oracle.project_v(&pv, &mut v_next)?;
        counts.proj_v += 1;

        oracle.u_subgrad(&u, &v_next, &mut xi);
        counts.u_subgrad += 1;
        for i in 0..nu {
            pu[i] = (c * anchor[i] + u[i] - gamma * xi[i]) / denom;
        }
        if non_finite(&pu) {
            return Err(Error::Numerical {
                iteration: t + 1,
                message: "non-finite u step".into(),
            });
        }
        oracle.project_u(&pu, &mut u_next)?;
        counts.proj_u += 1;

        let residual = config.early_stop.map(|_| {
            let ru = dist(&u_next, &u) / gamma;
            let rv = if delta > 0.0 {
                dist(&v_next, &v) / delta
            } else {
                0.0
            };
            ru + rv
        });
        std::mem::swap(&mut u, &mut u_next);
        std::mem::swap(&mut v, &mut v_next);
        done = t + 1;
        // incremental mean keeps a frozen coordinate bit-identical
        let w = 1.0 / done as f64;
        avg_u
            .iter_mut()
            .zip(&u)
            .for_each(|(a, x)| *a += (x - *a) * w);
        avg_v
            .iter_mut()
            .zip(&v)
            .for_each(|(a, x)| *a += (x - *a) * w);

        std::mem::swap(&mut zeta_prev, &mut zeta);
        oracle.v_supergrad(&u, &v, &mut zeta);
        counts.v_supergrad += 1;
        if non_finite(&zeta) {
            return Err(Error::Numerical {
                iteration: t + 1,
                message: "non-finite v-supergradient".into(),
            });
        }
        if let (Some(r), Some(tol)) = (residual, config.early_stop) {
            if r < tol {
                break;
            }
        }
    }
    Ok(InnerResult {
        u_avg: avg_u,
        v_avg: avg_v,
        u_last: u,
        v_last: v,
        iterations: done,
        counts,
    })
}

/// The Lagrangian subproblem
/// `min_x max_z f₀(x) + Σ_m λ_m g_m(x, z_m) + (1/2α)‖x - x_anchor‖²`
/// as a [`SaddleOracle`] over `u = x` and `v = (z_1, ..., z_M)`.
///
/// Constraints with `λ_m = 0` are skipped entirely: their `z_m` block is
/// never moved and none of their oracles are called.
pub struct LagrangianSaddle<'a> {
    spec: &'a ProblemSpec,
    lambda: &'a [f64],
    anchor: &'a [f64],
    sigma: f64,
    offsets: Vec<usize>,
    active: Vec<usize>,
    pub counters: OracleCounters,
}

impl<'a> LagrangianSaddle<'a> {
    pub fn new(
        spec: &'a ProblemSpec,
        lambda: &'a [f64],
        anchor: &'a [f64],
        alpha: f64,
    ) -> Result<Self> {
        check_dim(spec.constraints.len(), lambda.len())?;
        check_dim(spec.dim(), anchor.len())?;
        if let Some(l) = lambda.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "multipliers must be nonnegative, got {l}"
            )));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "α must be positive, got {alpha}"
            )));
        }
        let mut offsets = vec![0];
        for c in &spec.constraints {
            offsets.push(offsets.last().unwrap() + c.func.z_dim());
        }
        let active = (0..lambda.len()).filter(|&m| lambda[m] > 0.0).collect();
        Ok(Self {
            spec,
            lambda,
            anchor,
            sigma: 1.0 / alpha,
            offsets,
            active,
            counters: OracleCounters::default(),
        })
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    fn block(&self, m: usize) -> std::ops::Range<usize> {
        self.offsets[m]..self.offsets[m + 1]
    }

    /// Concatenates per-constraint points into one `v` vector.
    pub fn pack(&self, zs: &[Vec<f64>]) -> Result<Vec<f64>> {
        check_dim(self.spec.constraints.len(), zs.len())?;
        let mut v = Vec::with_capacity(*self.offsets.last().unwrap());
        for (m, z) in zs.iter().enumerate() {
            check_dim(self.offsets[m + 1] - self.offsets[m], z.len())?;
            v.extend_from_slice(z);
        }
        Ok(v)
    }

    pub fn unpack(&self, v: &[f64]) -> Vec<Vec<f64>> {
        (0..self.spec.constraints.len())
            .map(|m| v[self.block(m)].to_vec())
            .collect()
    }
}

impl SaddleOracle for LagrangianSaddle<'_> {
    fn u_dim(&self) -> usize {
        self.spec.dim()
    }

    fn v_dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn u_subgrad(&mut self, u: &[f64], v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        self.spec.objective.func.subgrad_acc(u, 1.0, out);
        self.counters.f0 += 1;
        for &m in &self.active {
            let r = self.block(m);
            self.spec.constraints[m]
                .func
                .subgrad_x_acc(u, &v[r], self.lambda[m], out);
        }
        self.counters.gx += self.active.len() as u64;
    }

    fn v_supergrad(&mut self, u: &[f64], v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for &m in &self.active {
            let r = self.block(m);
            let g = &self.spec.constraints[m].func;
            let o = &mut out[r.clone()];
            g.supergrad_z_into(u, &v[r], o);
            let l = self.lambda[m];
            o.iter_mut().for_each(|x| *x *= l);
            self.counters.gz += 1;
            self.counters.h += g.cut_count() as u64;
        }
    }

    fn project_u(&mut self, p: &[f64], out: &mut [f64]) -> Result<()> {
        self.counters.proj_x += 1;
        self.spec.decision_set.project_into(p, out)
    }

    fn project_v(&mut self, p: &[f64], out: &mut [f64]) -> Result<()> {
        // inactive blocks had zero drift, so p already equals the old point
        out.copy_from_slice(p);
        for &m in &self.active {
            let r = self.block(m);
            self.spec.constraints[m]
                .set
                .project_into(&p[r.clone()], &mut out[r])?;
        }
        self.counters.proj_z += self.active.len() as u64;
        Ok(())
    }

    fn anchor(&self) -> &[f64] {
        self.anchor
    }

    fn strength(&self) -> f64 {
        self.sigma
    }
}

/// Output of [`inner_solve_ro`].
#[derive(Clone, Debug)]
pub struct RoInnerResult {
    pub x: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub x_last: Vec<f64>,
    pub iterations: usize,
    /// Number of constraints with a positive multiplier.
    pub active: usize,
    pub counters: OracleCounters,
}

/// Solves the Lagrangian subproblem at multipliers `lambda` with proximal
/// anchor `x_anchor`, warm-started from `(x0, z0)`.
pub fn inner_solve_ro(
    spec: &ProblemSpec,
    lambda: &[f64],
    x_anchor: &[f64],
    alpha: f64,
    config: &InnerConfig,
    x0: &[f64],
    z0: &[Vec<f64>],
) -> Result<RoInnerResult> {
    let mut saddle = LagrangianSaddle::new(spec, lambda, x_anchor, alpha)?;
    let v0 = saddle.pack(z0)?;
    let res = inner_solve(&mut saddle, config, x0, &v0)?;
    // inactive blocks never move, so their average is the warm start itself
    let z = saddle.unpack(&res.v_avg);
    Ok(RoInnerResult {
        x: res.u_avg,
        z,
        x_last: res.u_last,
        iterations: res.iterations,
        active: saddle.active().len(),
        counters: saddle.counters,
    })
}

/// Step-size caps for smooth problems at multipliers `lambda`:
///
/// ```text
/// γ = 1 / (D₀' + Σ λ_m D_m' + sqrt(2 Σ (λ_m E'_{m,1})²))
/// δ = 1 / (2√2 max_m λ_m E'_{m,2} + sqrt(2 Σ (λ_m E'_{m,1})²))
/// ```
///
/// A vanishing denominator yields `None` for that step.
pub fn smooth_caps(
    d0: f64,
    consts: &[crate::problem::SmoothConsts],
    lambda: &[f64],
) -> (Option<f64>, Option<f64>) {
    let cross = (2.0
        * consts
            .iter()
            .zip(lambda)
            .map(|(c, l)| (l * c.ez_x).powi(2))
            .sum::<f64>())
    .sqrt();
    let lin: f64 = consts.iter().zip(lambda).map(|(c, l)| l * c.dx).sum();
    let top = consts
        .iter()
        .zip(lambda)
        .map(|(c, l)| l * c.ez_z)
        .fold(0.0, f64::max);
    let inv = |d: f64| if d > 0.0 { Some(1.0 / d) } else { None };
    (
        inv(d0 + lin + cross),
        inv(2.0 * std::f64::consts::SQRT_2 * top + cross),
    )
}

/// [`smooth_caps`] for a spec. A missing `γ` falls back to `α`, a missing
/// `δ` to `1/√T`.
pub fn smooth_step_sizes(
    spec: &ProblemSpec,
    lambda: &[f64],
    alpha: f64,
    t: usize,
) -> Result<(f64, f64)> {
    check_dim(spec.constraints.len(), lambda.len())?;
    let (d0, consts) = spec
        .smooth_consts()
        .ok_or_else(|| Error::Config("smooth step sizes need every smoothness constant".into()))?;
    let (g, d) = smooth_caps(d0, &consts, lambda);
    Ok((
        g.unwrap_or(alpha),
        d.unwrap_or(1.0 / (t.max(1) as f64).sqrt()),
    ))
}

/// Strong saddle gap of `F(u, v) = F̂(u, v) + (σ/2)‖u - û‖²` evaluated by
/// brute force over finite candidate sets:
/// `max_{u, v} F(ũ, v) - F(u, ṽ) + (σ/2)‖u - ũ‖²`.
pub fn strong_gap_on_grid(
    f_hat: &dyn Fn(&[f64], &[f64]) -> f64,
    sigma: f64,
    anchor: &[f64],
    u_tilde: &[f64],
    v_tilde: &[f64],
    us: &[Vec<f64>],
    vs: &[Vec<f64>],
) -> f64 {
    let full = |u: &[f64], v: &[f64]| {
        f_hat(u, v)
            + 0.5 * sigma * norm_sq(&u.iter().zip(anchor).map(|(a, b)| a - b).collect::<Vec<_>>())
    };
    let upper = vs
        .iter()
        .map(|v| full(u_tilde, v))
        .fold(f64::NEG_INFINITY, f64::max);
    let lower = us
        .iter()
        .map(|u| full(u, v_tilde) - 0.5 * sigma * dist(u, u_tilde).powi(2))
        .fold(f64::INFINITY, f64::min);
    upper - lower
}

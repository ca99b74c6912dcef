//! Outer multiplier loop: extrapolated projected ascent on `λ` around
//! proximal inner solves, plus the penalized variant for intersection sets.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::inner::{inner_solve_ro, smooth_step_sizes, InnerConfig, StepMode};
use crate::linalg::norm;
use crate::problem::{
    lipschitz_f, max_violation, penalize, pessimize, robust_value, IntersectionProblem,
    OracleCounters, ProblemSpec, DEFAULT_REPORT_BUDGET,
};
use crate::trace::{IterationStats, Trace, TraceRow};

/// How many inner iterations each outer iteration runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum InnerIterations {
    Fixed {
        t: usize,
    },
    /// `ceil(c_t·K²)` for nonsmooth steps, `ceil(c_t·K)` for smooth ones.
    Scaled {
        c_t: f64,
    },
}

impl Default for InnerIterations {
    fn default() -> Self {
        InnerIterations::Scaled { c_t: 1.0 }
    }
}

/// User-facing solver settings. `None` fields take their defaults in
/// [`OuterConfig::resolve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OuterConfig {
    pub k: usize,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub theta: Option<f64>,
    pub nu: Option<f64>,
    pub inner: InnerIterations,
    pub step_mode: StepMode,
    /// Cap on pessimization steps per constraint; default `10·T`.
    pub pessimize_budget: Option<usize>,
    /// Reuse the inner solver's `z̃_m` instead of pessimizing when `λ_m > 0`.
    pub reuse_ztilde: bool,
    pub theta_report: Option<f64>,
    pub report_budget: usize,
    /// Starting point; defaults to the projection of the origin.
    pub x0: Option<Vec<f64>>,
    /// Enable the inner residual stop at `ν/10`.
    pub early_stop: bool,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            k: 100,
            alpha: None,
            beta: None,
            theta: None,
            nu: None,
            inner: InnerIterations::default(),
            step_mode: StepMode::Nonsmooth,
            pessimize_budget: None,
            reuse_ztilde: false,
            theta_report: None,
            report_budget: DEFAULT_REPORT_BUDGET,
            x0: None,
            early_stop: false,
        }
    }
}

/// Fully determined solver parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub k: usize,
    pub t: usize,
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
    pub nu: f64,
    pub theta_report: f64,
    pub pessimize_budget: usize,
    pub report_budget: usize,
    pub step_mode: StepMode,
    pub reuse_ztilde: bool,
    pub early_stop: bool,
    pub lipschitz: f64,
    /// Settings outside the range covered by the convergence guarantees.
    pub warnings: Vec<String>,
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

impl OuterConfig {
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    /// Fills defaults: `α = 1/Lip_f`, `β = 1/(2·Lip_f)`, `θ = ν = 1/K`,
    /// `θ_report = θ/10`, pessimization budget `10·T`.
    pub fn resolve(&self, spec: &ProblemSpec) -> Result<Resolved> {
        if self.k == 0 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        let lip = lipschitz_f(spec)?;
        let mut warnings = Vec::new();
        let alpha = match self.alpha {
            Some(a) => positive("alpha", a)?,
            None => positive("alpha = 1/Lip_f", 1.0 / lip)?,
        };
        let beta = match self.beta {
            Some(b) => positive("beta", b)?,
            None => positive("beta = 1/(2 Lip_f)", 0.5 / lip)?,
        };
        if alpha > (1.0 + 1e-12) / lip {
            warnings.push(format!(
                "alpha = {alpha:.6e} exceeds 1/Lip_f = {:.6e}",
                1.0 / lip
            ));
        }
        if beta > (1.0 + 1e-12) * 0.5 / lip {
            warnings.push(format!(
                "beta = {beta:.6e} exceeds 1/(2 Lip_f) = {:.6e}",
                0.5 / lip
            ));
        }
        let kf = self.k as f64;
        let theta = positive("theta", self.theta.unwrap_or(1.0 / kf))?;
        let nu = positive("nu", self.nu.unwrap_or(1.0 / kf))?;
        let theta_report = positive("theta_report", self.theta_report.unwrap_or(theta / 10.0))?;
        let t = match self.inner {
            InnerIterations::Fixed { t } => t,
            InnerIterations::Scaled { c_t } => {
                let c_t = positive("c_t", c_t)?;
                let shape = match self.step_mode {
                    StepMode::Nonsmooth => kf * kf,
                    StepMode::Smooth => kf,
                };
                (c_t * shape).ceil() as usize
            }
        };
        if t == 0 {
            return Err(Error::Config("inner iteration count must be >= 1".into()));
        }
        if self.step_mode == StepMode::Smooth && spec.smooth_consts().is_none() {
            return Err(Error::Config(
                "smooth step mode needs smoothness constants for every oracle".into(),
            ));
        }
        let pessimize_budget = self.pessimize_budget.unwrap_or(10 * t).max(1);
        if self.report_budget == 0 {
            return Err(Error::Config("report budget must be >= 1".into()));
        }
        Ok(Resolved {
            k: self.k,
            t,
            alpha,
            beta,
            theta,
            nu,
            theta_report,
            pessimize_budget,
            report_budget: self.report_budget,
            step_mode: self.step_mode,
            reuse_ztilde: self.reuse_ztilde,
            early_stop: self.early_stop,
            lipschitz: lip,
            warnings,
        })
    }
}

/// `[λ + β(2·g_curr - g_prev)]₊` componentwise.
pub fn lambda_update(lambda: &[f64], g_curr: &[f64], g_prev: &[f64], beta: f64) -> Vec<f64> {
    lambda
        .iter()
        .zip(g_curr.iter().zip(g_prev))
        .map(|(l, (c, p))| (l + beta * (2.0 * c - p)).max(0.0))
        .collect()
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    /// Average of the outer iterates `x^1..x^K`.
    pub x: Vec<f64>,
    pub x_last: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Last inner averages of the uncertain parameters.
    pub z: Vec<Vec<f64>>,
    pub counters: OracleCounters,
    pub trace: Trace,
    pub resolved: Resolved,
}

impl SolveResult {
    pub fn objective(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.objective)
    }

    pub fn violation(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.violation)
    }
}

/// Runs `K` outer iterations on `spec`.
pub fn solve(spec: &ProblemSpec, config: &OuterConfig) -> Result<SolveResult> {
    spec.validate()?;
    let cfg = config.resolve(spec)?;
    let n = spec.dim();
    let m_count = spec.constraints.len();

    let mut x = match &config.x0 {
        Some(x0) => {
            check_dim(n, x0.len())?;
            spec.decision_set.project(x0)?
        }
        None => spec.decision_set.project(&vec![0.0; n])?,
    };
    let mut lambda = vec![0.0; m_count];
    let mut z: Vec<Vec<f64>> = spec
        .constraints
        .iter()
        .map(|c| c.set.anchor_point())
        .collect();
    let mut z_tilde = z.clone();
    let mut g_prev: Option<Vec<f64>> = None;
    let mut x_sum = vec![0.0; n];
    let mut report_z: Option<Vec<Vec<f64>>> = None;

    let mut counters = OracleCounters::default();
    let mut trace = Trace {
        warnings: cfg.warnings.clone(),
        ..Default::default()
    };
    let mut elapsed = 0.0;
    let mut limited_total = 0usize;

    for k in 0..cfg.k {
        let clock = Instant::now();

        // z^k: pessimize each constraint at x^k, or reuse z̃^k
        let steps: Vec<(Vec<f64>, f64, Option<usize>, bool, OracleCounters)> = spec
            .constraints
            .par_iter()
            .enumerate()
            .map(|(m, c)| {
                if cfg.reuse_ztilde && lambda[m] > 0.0 {
                    let v = c.func.eval(&x, &z_tilde[m]);
                    Ok((
                        z_tilde[m].clone(),
                        v,
                        None,
                        false,
                        OracleCounters::default(),
                    ))
                } else {
                    let p = pessimize(c, &x, cfg.theta, cfg.pessimize_budget, Some(&z[m]))?;
                    Ok((
                        p.z,
                        p.value,
                        Some(p.iterations),
                        p.budget_limited,
                        p.counters,
                    ))
                }
            })
            .collect::<Result<_>>()?;
        let mut g_curr = Vec::with_capacity(m_count);
        let mut pess_iters = Vec::with_capacity(m_count);
        let mut limited = 0;
        for (m, (zm, v, it, lim, cnt)) in steps.into_iter().enumerate() {
            z[m] = zm;
            g_curr.push(v);
            pess_iters.push(it);
            limited += lim as usize;
            counters.add(&cnt);
        }
        limited_total += limited;

        let prev = g_prev.take().unwrap_or_else(|| g_curr.clone());
        lambda = lambda_update(&lambda, &g_curr, &prev, cfg.beta);
        g_prev = Some(g_curr);

        let mut inner_cfg = match cfg.step_mode {
            StepMode::Nonsmooth => InnerConfig::nonsmooth(cfg.t),
            StepMode::Smooth => {
                let (g, d) = smooth_step_sizes(spec, &lambda, cfg.alpha, cfg.t)?;
                InnerConfig::smooth(cfg.t, g, d)
            }
        };
        if cfg.early_stop {
            inner_cfg.early_stop = Some(cfg.nu / 10.0);
        }
        let res = inner_solve_ro(spec, &lambda, &x, cfg.alpha, &inner_cfg, &x, &z_tilde).map_err(
            |e| match e {
                Error::Numerical { iteration, message } => Error::Numerical {
                    iteration,
                    message: format!("outer iteration {}: {message}", k + 1),
                },
                other => other,
            },
        )?;
        counters.add(&res.counters);
        x = res.x;
        z_tilde = res.z;
        x_sum.iter_mut().zip(&x).for_each(|(s, v)| *s += v);
        elapsed += clock.elapsed().as_secs_f64();

        // reporting is excluded from both the clock and the counters
        let kk = (k + 1) as f64;
        let x_bar: Vec<f64> = x_sum.iter().map(|s| s / kk).collect();
        let (viol, zs, _) = max_violation(
            spec,
            &x_bar,
            cfg.theta_report,
            cfg.report_budget,
            report_z.as_deref(),
        )?;
        report_z = Some(zs);
        trace.rows.push(TraceRow {
            iter: k + 1,
            time_s: elapsed,
            objective: spec.objective.func.eval(&x_bar),
            violation: viol,
            lambda_norm: norm(&lambda),
            counters,
        });
        trace.stats.push(IterationStats {
            iter: k + 1,
            active: res.active,
            inner_iterations: res.iterations,
            pessimize_iterations: pess_iters,
            budget_limited: limited,
        });
    }
    if limited_total > 0 {
        trace.warnings.push(format!(
            "pessimization stopped at its budget of {} steps in {limited_total} calls",
            cfg.pessimize_budget
        ));
    }
    let kf = cfg.k as f64;
    Ok(SolveResult {
        x: x_sum.iter().map(|s| s / kf).collect(),
        x_last: x,
        lambda,
        z: z_tilde,
        counters,
        trace,
        resolved: cfg,
    })
}

#[derive(Clone, Debug)]
pub struct ExtendedResult {
    /// Decision block of the averaged extended iterate.
    pub x: Vec<f64>,
    /// Averaged dual blocks `μ_m`.
    pub mu: Vec<Vec<f64>>,
    pub caps: Vec<f64>,
    /// Trace of the penalized problem; its violation column is the penalized
    /// surrogate `max_z g_m(x, z) - μ_mᵀh_m(z)`.
    pub inner: SolveResult,
}

/// Penalizes the cut constraints and solves the extended problem over
/// `(x, μ)`.
pub fn solve_extended(
    problem: &IntersectionProblem,
    config: &OuterConfig,
) -> Result<ExtendedResult> {
    let ext = penalize(problem)?;
    let mut config = config.clone();
    if let Some(x0) = &config.x0 {
        if x0.len() == ext.x_dim {
            let mut padded = x0.clone();
            padded.resize(ext.spec.dim(), 0.0);
            config.x0 = Some(padded);
        }
    }
    let mut res = solve(&ext.spec, &config)?;
    let mu = (0..ext.mu_ranges.len())
        .map(|m| ext.mu_part(&res.x, m).to_vec())
        .collect();
    let x = ext.x_part(&res.x).to_vec();
    if ext.any_heuristic_bound() {
        res.trace
            .warnings
            .push("a dual cap relies on a sampled lower bound".into());
    }
    Ok(ExtendedResult {
        x,
        mu,
        caps: ext.caps.clone(),
        inner: res,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonReport {
    /// `f₀(x) - f₀(x*)`, when a reference value is known.
    pub gap: Option<f64>,
    pub gap_ok: Option<bool>,
    /// `max_m [f_m(x)]₊`.
    pub violation: f64,
    pub violation_ok: bool,
}

/// Tests `x` for ε-optimality against an optional reference optimum.
/// Robust values use the exact worst case when available and otherwise
/// pessimization at accuracy `min(θ_report, ε/10)`.
pub fn epsilon_check(
    spec: &ProblemSpec,
    x: &[f64],
    eps: f64,
    theta_report: f64,
    budget: usize,
    reference: Option<f64>,
) -> Result<EpsilonReport> {
    check_dim(spec.dim(), x.len())?;
    positive("epsilon", eps)?;
    let theta = positive("theta_report", theta_report)?.min(eps / 10.0);
    let mut violation = 0.0f64;
    for c in &spec.constraints {
        let (_, v) = robust_value(c, x, theta, budget, None)?;
        violation = violation.max(v);
    }
    let gap = reference.map(|r| spec.objective.func.eval(x) - r);
    Ok(EpsilonReport {
        gap,
        gap_ok: gap.map(|g| g <= eps),
        violation,
        violation_ok: violation <= eps,
    })
}

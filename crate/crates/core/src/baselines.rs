//! Cutting-plane baseline: alternate a master problem over finite scenario
//! sets with pessimization of every constraint at the master solution.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::problem::{
    max_violation, pessimize, slater_margin, OracleCounters, ProblemSpec, DEFAULT_REPORT_BUDGET,
};
use crate::trace::{Trace, TraceRow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CuttingPlaneConfig {
    /// Target accuracy: scenarios are added above `ε/2`, pessimization runs at `ε/4`.
    pub eps: f64,
    pub max_rounds: usize,
    pub master_iters: usize,
    /// Exact-penalty weight; derived from the Slater point when absent.
    pub rho: Option<f64>,
    pub pessimize_budget: usize,
    pub theta_report: Option<f64>,
    pub report_budget: usize,
}

impl Default for CuttingPlaneConfig {
    fn default() -> Self {
        Self {
            eps: 5e-2,
            max_rounds: 50,
            master_iters: 20_000,
            rho: None,
            pessimize_budget: 100_000,
            theta_report: None,
            report_budget: DEFAULT_REPORT_BUDGET,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MasterResult {
    pub x: Vec<f64>,
    /// Penalized master objective at `x`.
    pub value: f64,
    pub counters: OracleCounters,
}

/// `f₀(x) + ρ·max_m max_{ẑ ∈ Ẑ_m} [g_m(x, ẑ)]₊` and, if requested, a
/// subgradient of it.
fn master_value(
    spec: &ProblemSpec,
    scenarios: &[Vec<Vec<f64>>],
    rho: f64,
    x: &[f64],
    grad: Option<(&mut [f64], &mut OracleCounters)>,
) -> f64 {
    let mut worst = 0.0;
    let mut arg: Option<(usize, usize)> = None;
    if rho > 0.0 {
        for (m, zs) in scenarios.iter().enumerate() {
            for (i, z) in zs.iter().enumerate() {
                let v = spec.constraints[m].func.eval(x, z);
                if v > worst {
                    worst = v;
                    arg = Some((m, i));
                }
            }
        }
    }
    if let Some((g, counters)) = grad {
        g.fill(0.0);
        spec.objective.func.subgrad_acc(x, 1.0, g);
        counters.f0 += 1;
        if let Some((m, i)) = arg {
            spec.constraints[m]
                .func
                .subgrad_x_acc(x, &scenarios[m][i], rho, g);
            counters.gx += 1;
        }
    }
    spec.objective.func.eval(x) + rho * worst
}

/// Projected subgradient descent with uniform averaging on the penalized
/// master problem, with steps `diam(X)/(L·√(t+1))` where
/// `L = D₀ + ρ·max_m D_m`.
pub fn master_solve(
    spec: &ProblemSpec,
    scenarios: &[Vec<Vec<f64>>],
    rho: f64,
    iters: usize,
    x0: &[f64],
) -> Result<MasterResult> {
    let n = spec.dim();
    check_dim(n, x0.len())?;
    check_dim(spec.constraints.len(), scenarios.len())?;
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "penalty weight must be nonnegative, got {rho}"
        )));
    }
    if iters == 0 {
        return Err(Error::InvalidArgument(
            "master iterations must be >= 1".into(),
        ));
    }
    let dmax = spec.bounds_x()?.into_iter().fold(0.0, f64::max);
    let lip = (spec.objective.bound + rho * dmax).max(f64::MIN_POSITIVE);
    let diam = spec.decision_set.diameter();
    let scale = if diam.is_finite() && diam > 0.0 {
        diam
    } else {
        1.0
    };

    let mut counters = OracleCounters::default();
    let mut x = spec.decision_set.project(x0)?;
    let mut g = vec![0.0; n];
    let mut step = vec![0.0; n];
    let mut avg = vec![0.0; n];
    for t in 0..iters {
        master_value(spec, scenarios, rho, &x, Some((&mut g, &mut counters)));
        let s = scale / (lip * ((t + 1) as f64).sqrt());
        for i in 0..n {
            step[i] = x[i] - s * g[i];
        }
        if step.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                iteration: t + 1,
                message: "non-finite master step".into(),
            });
        }
        spec.decision_set.project_into(&step, &mut x)?;
        counters.proj_x += 1;
        let w = 1.0 / (t + 1) as f64;
        avg.iter_mut().zip(&x).for_each(|(a, v)| *a += (v - *a) * w);
    }
    let value = master_value(spec, scenarios, rho, &avg, None);
    Ok(MasterResult {
        x: avg,
        value,
        counters,
    })
}

/// `2·(f₀(x_s) - f_lower)/margin` with the certified lower bound
/// `f_lower = f₀(x_s) - D₀·diam(X)` and the Slater margin
/// `-max_m max_z g_m(x_s, z)`.
pub fn penalty_weight(spec: &ProblemSpec, theta: f64, budget: usize) -> Result<f64> {
    let xs = spec
        .slater_point
        .as_ref()
        .ok_or_else(|| Error::Config("the cutting-plane penalty needs a Slater point".into()))?;
    let margin = slater_margin(spec, xs, theta, budget)?;
    if !(margin > 0.0) {
        return Err(Error::InvalidSlater(format!(
            "Slater point has certified margin {margin:.6e}, not strictly positive"
        )));
    }
    let spread = spec.objective.bound * spec.decision_set.diameter();
    if !spread.is_finite() {
        return Err(Error::Config(
            "penalty weight needs a bounded decision set".into(),
        ));
    }
    Ok((2.0 * spread / margin).max(f64::MIN_POSITIVE))
}

#[derive(Clone, Debug)]
pub struct CuttingPlaneResult {
    pub x: Vec<f64>,
    pub converged: bool,
    pub rounds: usize,
    pub rho: f64,
    /// Scenario sets `Ẑ_m` at termination.
    pub scenarios: Vec<Vec<Vec<f64>>>,
    pub counters: OracleCounters,
    pub trace: Trace,
}

/// Alternates master solves and pessimization until no constraint exceeds
/// `ε/2` at the master solution or `max_rounds` rounds have run.
///
/// The trace has one row per round; its `lambda_norm` column holds the
/// penalty weight.
pub fn cutting_plane_solve(
    spec: &ProblemSpec,
    config: &CuttingPlaneConfig,
) -> Result<CuttingPlaneResult> {
    spec.validate()?;
    let eps = config.eps;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("ε must be positive, got {eps}")));
    }
    let theta = eps / 4.0;
    let theta_report = config.theta_report.unwrap_or(theta / 10.0);
    let rho = match config.rho {
        Some(r) => r,
        None => penalty_weight(spec, theta, config.pessimize_budget)?,
    };
    let m_count = spec.constraints.len();
    let mut scenarios: Vec<Vec<Vec<f64>>> = vec![Vec::new(); m_count];
    let mut warm: Vec<Vec<f64>> = spec
        .constraints
        .iter()
        .map(|c| c.set.anchor_point())
        .collect();
    let mut x = match &spec.slater_point {
        Some(xs) => xs.clone(),
        None => spec.decision_set.project(&vec![0.0; spec.dim()])?,
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut counters = OracleCounters::default();
    let mut trace = Trace::default();
    let mut elapsed = 0.0;
    let mut converged = false;
    let mut rounds = 0;
    let mut report_z: Option<Vec<Vec<f64>>> = None;

    while rounds < config.max_rounds {
        let clock = Instant::now();
        rounds += 1;
        let master = master_solve(spec, &scenarios, rho, config.master_iters, &x)?;
        counters.add(&master.counters);
        x = master.x;

        let found: Vec<_> = spec
            .constraints
            .par_iter()
            .enumerate()
            .map(|(m, c)| pessimize(c, &x, theta, config.pessimize_budget, Some(&warm[m])))
            .collect::<Result<_>>()?;
        let mut added = 0;
        let mut worst = f64::NEG_INFINITY;
        for (m, p) in found.into_iter().enumerate() {
            counters.add(&p.counters);
            worst = worst.max(p.value);
            if p.value > eps / 2.0 {
                scenarios[m].push(p.z.clone());
                added += 1;
            }
            warm[m] = p.z;
        }
        if best.as_ref().is_none_or(|(w, _)| worst < *w) {
            best = Some((worst, x.clone()));
        }
        elapsed += clock.elapsed().as_secs_f64();

        let (viol, zs, _) = max_violation(
            spec,
            &x,
            theta_report,
            config.report_budget,
            report_z.as_deref(),
        )?;
        report_z = Some(zs);
        trace.rows.push(TraceRow {
            iter: rounds,
            time_s: elapsed,
            objective: spec.objective.func.eval(&x),
            violation: viol,
            lambda_norm: rho,
            counters,
        });
        if added == 0 {
            converged = true;
            break;
        }
    }
    if !converged {
        trace.warnings.push(format!(
            "cutting plane stopped after {rounds} rounds without converging"
        ));
        if let Some((_, bx)) = best {
            x = bx;
        }
    }
    Ok(CuttingPlaneResult {
        x,
        converged,
        rounds,
        rho,
        scenarios,
        counters,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::linalg::{dist, norm};
    use crate::problem::{ConstraintOracle, LinearObjective, ObjectiveOracle, RobustLinear};
    use crate::sets::SetDescriptor;

    fn spec(c: Vec<f64>, a: Vec<f64>, b: f64, radius: f64, set: SetDescriptor) -> ProblemSpec {
        let con = RobustLinear { a: a.clone(), b };
        let wc = con.clone();
        let oracle = ConstraintOracle::new(
            Arc::new(con),
            Arc::new(SetDescriptor::ball(vec![0.0; a.len()], radius)),
        )
        .with_bounds(norm(&a) + radius, 2f64.sqrt())
        .with_worst_case(Arc::new(move |x: &[f64]| wc.worst_case_ball(x, radius)));
        let n = c.len();
        ProblemSpec {
            objective: ObjectiveOracle {
                bound: norm(&c),
                func: Arc::new(LinearObjective { c }),
                smooth: Some(0.0),
            },
            constraints: vec![oracle],
            decision_set: Arc::new(set),
            slater_point: Some(vec![0.0; n]),
        }
    }

    #[test]
    fn no_scenarios_is_plain_projected_subgradient() {
        let s = spec(
            vec![0.6, 0.8],
            vec![0.0, 0.0],
            1.0,
            1.0,
            SetDescriptor::unit_ball(2),
        );
        let r = master_solve(&s, &[vec![]], 10.0, 4000, &[0.0, 0.0]).unwrap();
        assert!(dist(&r.x, &[-0.6, -0.8]) < 0.05, "{:?}", r.x);
        assert_eq!(r.counters.gx, 0);
        assert_eq!(r.counters.f0, 4000);
    }

    #[test]
    fn zero_penalty_ignores_constraints() {
        let s = spec(
            vec![0.6, 0.8],
            vec![0.0, 0.0],
            0.0,
            0.0,
            SetDescriptor::unit_ball(2),
        );
        let scen = vec![vec![vec![0.0, 0.0]]];
        let a = master_solve(&s, &scen, 0.0, 500, &[0.0, 0.0]).unwrap();
        let b = master_solve(&s, &[vec![]], 0.0, 500, &[0.0, 0.0]).unwrap();
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn single_linear_scenario_matches_kkt() {
        // min -x₁ over the unit ball s.t. x₁ + x₂ ≤ 0.5: the optimum lies on
        // the circle where the line cuts it, x = (0.25 + √7/4, 0.25 - √7/4)
        let s = spec(
            vec![-1.0, 0.0],
            vec![1.0, 1.0],
            0.5,
            0.0,
            SetDescriptor::unit_ball(2),
        );
        let rho = penalty_weight(&s, 1e-3, 1000).unwrap();
        let iters = 40_000;
        let r = master_solve(&s, &[vec![vec![0.0, 0.0]]], rho, iters, &[0.0, 0.0]).unwrap();
        let r7 = 7f64.sqrt() / 4.0;
        let exact = [0.25 + r7, 0.25 - r7];
        assert!(
            dist(&r.x, &exact) < 20.0 / (iters as f64).sqrt(),
            "{:?} vs {exact:?}",
            r.x
        );
    }

    #[test]
    fn singleton_sets_need_one_productive_round() {
        let s = spec(
            vec![-1.0, -1.0],
            vec![0.5, 0.2],
            0.5,
            0.0,
            SetDescriptor::cube(2, -1.0, 1.0),
        );
        let r = cutting_plane_solve(&s, &CuttingPlaneConfig::default()).unwrap();
        assert!(r.converged);
        assert!(r.rounds <= 2);
        assert!(r.scenarios[0].len() <= 1);
    }

    #[test]
    fn satisfied_constraint_gets_no_scenarios() {
        let s = spec(
            vec![0.3, 0.4],
            vec![0.0, 0.0],
            10.0,
            1.0,
            SetDescriptor::cube(2, -1.0, 1.0),
        );
        let r = cutting_plane_solve(&s, &CuttingPlaneConfig::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.rounds, 1);
        assert!(r.scenarios[0].is_empty());
    }

    #[test]
    fn zero_rounds_is_not_converged() {
        let s = spec(
            vec![-1.0, -1.0],
            vec![0.5, 0.2],
            1.0,
            1.0,
            SetDescriptor::cube(2, -1.0, 1.0),
        );
        let cfg = CuttingPlaneConfig {
            max_rounds: 0,
            ..Default::default()
        };
        let r = cutting_plane_solve(&s, &cfg).unwrap();
        assert!(!r.converged);
        assert!(r.trace.rows.is_empty());
        assert_eq!(r.trace.to_csv(false).lines().count(), 1);
    }

    #[test]
    fn scenario_sets_grow_and_relaxation_values_rise() {
        let s = spec(
            vec![-1.0, -1.0],
            vec![0.5, 0.2],
            1.0,
            1.0,
            SetDescriptor::cube(2, -1.0, 1.0),
        );
        let cfg = CuttingPlaneConfig {
            eps: 2e-2,
            ..Default::default()
        };
        let r = cutting_plane_solve(&s, &cfg).unwrap();
        assert!(r.converged);
        assert!(r.scenarios[0].len() >= 2);
        // adding scenarios can only raise the penalized master minimum
        let x0 = s.slater_point.clone().unwrap();
        let mut last = f64::NEG_INFINITY;
        for k in 0..=r.scenarios[0].len() {
            let m = master_solve(&s, &[r.scenarios[0][..k].to_vec()], r.rho, 20_000, &x0).unwrap();
            assert!(m.value >= last - 5e-3, "{} < {last}", m.value);
            last = last.max(m.value);
        }
    }

    #[test]
    fn missing_slater_point_is_a_config_error() {
        let mut s = spec(
            vec![-1.0, -1.0],
            vec![0.5, 0.2],
            1.0,
            1.0,
            SetDescriptor::cube(2, -1.0, 1.0),
        );
        s.slater_point = None;
        assert!(matches!(
            cutting_plane_solve(&s, &CuttingPlaneConfig::default()),
            Err(Error::Config(_))
        ));
    }
}

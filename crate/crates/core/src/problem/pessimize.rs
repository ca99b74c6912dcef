use rayon::prelude::*;

use super::{ConstraintOracle, OracleCounters, ProblemSpec};
use crate::error::{check_dim, Error, Result};
use crate::linalg::axpy;

/// Default iteration budget for violation reports.
pub const DEFAULT_REPORT_BUDGET: usize = 2000;

/// Approximate maximizer of `z ↦ g(x, z)`.
#[derive(Clone, Debug)]
pub struct Pessimized {
    pub z: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// The iteration count needed for accuracy `θ` exceeded the budget.
    pub budget_limited: bool,
    pub counters: OracleCounters,
}

/// Projected supergradient ascent on `z ↦ g(x, z)` over the constraint's
/// uncertainty set.
///
/// Runs `min(ceil((diam·E/θ)²), budget)` steps of length `diam/(E·sqrt(t+1))`
/// and returns the best point among the start, the iterates and their running
/// averages. Since the step rule does not depend on the total count, a larger
/// budget only extends the run, so the returned value never decreases with it.
pub fn pessimize(
    oracle: &ConstraintOracle,
    x: &[f64],
    theta: f64,
    budget: usize,
    warm: Option<&[f64]>,
) -> Result<Pessimized> {
    if !(theta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "pessimization accuracy must be positive, got {theta}"
        )));
    }
    let g = &oracle.func;
    check_dim(g.x_dim(), x.len())?;
    let e = oracle.bound_z.ok_or_else(|| {
        Error::Config("pessimization needs a declared z-subgradient bound".into())
    })?;
    let diam = oracle.set.diameter();
    let needed = ((diam * e / theta).powi(2)).ceil();
    let budget = budget.max(1);
    let (iters, budget_limited) = if needed.is_finite() && needed <= budget as f64 {
        ((needed as usize).max(1), false)
    } else {
        (budget, true)
    };

    let nz = g.z_dim();
    let mut z = match warm {
        Some(w) => {
            check_dim(nz, w.len())?;
            w.to_vec()
        }
        None => oracle.set.anchor_point(),
    };
    let mut best_z = z.clone();
    let mut best_val = g.eval(x, &z);
    let mut avg = vec![0.0; nz];
    let mut zeta = vec![0.0; nz];
    let mut step_point = vec![0.0; nz];
    let scale = if e > 0.0 { diam / e } else { 0.0 };

    for t in 0..iters {
        g.supergrad_z_into(x, &z, &mut zeta);
        step_point.copy_from_slice(&z);
        axpy(-scale / ((t + 1) as f64).sqrt(), &zeta, &mut step_point);
        oracle.set.project_into(&step_point, &mut z)?;
        let w = 1.0 / (t + 1) as f64;
        for (a, zi) in avg.iter_mut().zip(&z) {
            *a += w * (zi - *a);
        }
        let v = g.eval(x, &z);
        if v > best_val {
            best_val = v;
            best_z.copy_from_slice(&z);
        }
        let va = g.eval(x, &avg);
        if va > best_val {
            best_val = va;
            best_z.copy_from_slice(&avg);
        }
    }
    if !best_val.is_finite() {
        return Err(Error::Numerical {
            iteration: iters,
            message: "pessimization produced a non-finite value".into(),
        });
    }
    let n = iters as u64;
    Ok(Pessimized {
        z: best_z,
        value: best_val,
        iterations: iters,
        budget_limited,
        counters: OracleCounters {
            gz: n,
            proj_z: n,
            h: n * g.cut_count() as u64,
            ..Default::default()
        },
    })
}

/// `max_z g(x, z)`: exact when the oracle carries a worst-case routine,
/// otherwise by [`pessimize`].
pub fn robust_value(
    oracle: &ConstraintOracle,
    x: &[f64],
    theta: f64,
    budget: usize,
    warm: Option<&[f64]>,
) -> Result<(Vec<f64>, f64)> {
    if let Some(wc) = &oracle.worst_case {
        return Ok(wc(x));
    }
    pessimize(oracle, x, theta, budget, warm).map(|p| (p.z, p.value))
}

/// Certified Slater margin `-max_m max_z g_m(x, z)` at `x`. Constraints
/// without an exact worst case are pessimized at accuracy `θ`, and the margin
/// is reduced by `θ` to cover the shortfall.
pub fn slater_margin(spec: &ProblemSpec, x: &[f64], theta: f64, budget: usize) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for c in &spec.constraints {
        worst = worst.max(robust_value(c, x, theta, budget, None)?.1);
    }
    let slack = if spec.constraints.iter().all(|c| c.worst_case.is_some()) {
        0.0
    } else {
        theta
    };
    Ok(-(worst + slack))
}

/// `max_m [max_z g_m(x, z)]₊` together with the per-constraint maximizers and
/// raw values.
pub fn max_violation(
    spec: &ProblemSpec,
    x: &[f64],
    theta: f64,
    budget: usize,
    warm: Option<&[Vec<f64>]>,
) -> Result<(f64, Vec<Vec<f64>>, Vec<f64>)> {
    let results: Vec<(Vec<f64>, f64)> = spec
        .constraints
        .par_iter()
        .enumerate()
        .map(|(m, c)| robust_value(c, x, theta, budget, warm.map(|w| w[m].as_slice())))
        .collect::<Result<_>>()?;
    let viol = results.iter().fold(0.0f64, |acc, (_, v)| acc.max(*v));
    let (zs, vals) = results.into_iter().unzip();
    Ok((viol, zs, vals))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::linalg::{dot, norm_sq};
    use crate::problem::FnConstraint;
    use crate::sets::SetDescriptor;

    fn oracle(
        set: SetDescriptor,
        e: f64,
        eval: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        grad_z: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> ConstraintOracle {
        let nz = set.dim();
        ConstraintOracle::new(
            Arc::new(FnConstraint::new(
                1,
                nz,
                eval,
                |_, _, g| g.fill(0.0),
                grad_z,
            )),
            Arc::new(set),
        )
        .with_bounds(0.0, e)
    }

    #[test]
    fn concave_quadratic_peaks_at_center() {
        let o = oracle(
            SetDescriptor::unit_ball(2),
            2.0,
            |_, z| -norm_sq(z),
            |_, z, g| {
                g[0] = -2.0 * z[0];
                g[1] = -2.0 * z[1];
            },
        );
        let p = pessimize(&o, &[0.0], 1e-2, 10_000, Some(&[0.7, -0.7])).unwrap();
        assert!(p.value > -1e-2, "value {}", p.value);
        assert!(norm_sq(&p.z) < 1e-2);
    }

    #[test]
    fn linear_over_ball_hits_direction() {
        let c = [0.6, 0.8];
        let o = oracle(
            SetDescriptor::unit_ball(2),
            1.0,
            move |_, z| dot(&c, z),
            move |_, _, g| g.copy_from_slice(&c),
        );
        // T_p = ceil((2 / 1e-2)²) = 40000 fits in the budget
        let p = pessimize(&o, &[0.0], 1e-2, 100_000, None).unwrap();
        assert_eq!(p.iterations, 40_000);
        assert!((p.value - 1.0).abs() < 1e-3);
        assert!((p.z[0] - 0.6).abs() < 1e-2 && (p.z[1] - 0.8).abs() < 1e-2);
        assert!(!p.budget_limited);
    }

    #[test]
    fn monotone_on_interval() {
        let o = oracle(
            SetDescriptor::Box {
                lower: vec![0.0],
                upper: vec![1.0],
            },
            1.0,
            |_, z| z[0],
            |_, _, g| g[0] = 1.0,
        );
        let p = pessimize(&o, &[0.0], 1e-3, 10, None).unwrap();
        assert!(p.budget_limited);
        assert_eq!(p.iterations, 10);
        assert_eq!(p.counters.gz, 10);
        assert!((p.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn value_is_monotone_in_budget() {
        let o = oracle(
            SetDescriptor::unit_ball(3),
            4.0,
            |_, z| -(z[0] - 0.3).powi(2) - (z[1] + 0.2).powi(2) - (z[2] - 0.1).abs(),
            |_, z, g| {
                g[0] = -2.0 * (z[0] - 0.3);
                g[1] = -2.0 * (z[1] + 0.2);
                g[2] = if z[2] > 0.1 { -1.0 } else { 1.0 };
            },
        );
        let mut last = f64::NEG_INFINITY;
        for budget in [1, 2, 5, 10, 50, 200, 1000] {
            let v = pessimize(&o, &[0.0], 1e-6, budget, None).unwrap().value;
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn rejects_nonpositive_accuracy() {
        let o = oracle(
            SetDescriptor::unit_ball(1),
            1.0,
            |_, z| z[0],
            |_, _, g| g[0] = 1.0,
        );
        assert!(pessimize(&o, &[0.0], 0.0, 10, None).is_err());
    }
}

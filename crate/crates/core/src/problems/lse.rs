//! Robust log-sum-exp constraints over box uncertainty.
//!
//! `g(x, z) = xᵀAz - d + log(z_1 + Σ_{j≥2} z_j exp(b_jᵀx))` on
//! `z ∈ [l, u]^J`. For fixed `x` the maximization over `z` is
//! `max pᵀz + log(qᵀz)` with `q > 0`, which reduces to a one-dimensional
//! concave search over `s = qᵀz` with a fractional knapsack inside. That
//! gives exact worst cases and the offsets `d`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, Matrix};
use crate::problem::{
    ConstraintEntry, ConstraintFn, ConstraintModel, InstanceDocument, ObjectiveModel,
};
use crate::sets::SetDescriptor;

pub const Z_LOWER: f64 = 0.001;
pub const Z_UPPER: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LseParams {
    pub m: usize,
    pub n: usize,
    pub j: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LseConstraint {
    /// `N × J`.
    pub a: Matrix,
    /// Rows `b_2, ..., b_J`, shape `(J-1) × N`.
    pub b_rows: Matrix,
    pub d: f64,
}

impl LseConstraint {
    pub fn n(&self) -> usize {
        self.a.rows
    }

    pub fn j(&self) -> usize {
        self.a.cols
    }

    pub fn uncertainty_set(&self) -> SetDescriptor {
        SetDescriptor::cube(self.j(), Z_LOWER, Z_UPPER)
    }

    /// Exponents `s` with `s_1 = 0`, `s_j = b_jᵀx`.
    fn exponents(&self, x: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.j()];
        self.b_rows.mul_vec_into(x, &mut s[1..]);
        s
    }

    /// `log Σ z_j exp(s_j)` and the normalized weights `z_j exp(s_j) / Σ`.
    fn log_sum(z: &[f64], s: &[f64]) -> (f64, Vec<f64>) {
        let smax = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let terms: Vec<f64> = z
            .iter()
            .zip(s)
            .map(|(zj, sj)| zj * (sj - smax).exp())
            .collect();
        let total: f64 = terms.iter().sum();
        (
            smax + total.ln(),
            terms.into_iter().map(|t| t / total).collect(),
        )
    }

    /// Exact `max_z g(x, z)` over the box, with its maximizer.
    pub fn worst_case(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let p = self.a.tmul_vec(x);
        let s = self.exponents(x);
        let (z, v) = max_linear_plus_log(&p, &s, Z_LOWER, Z_UPPER);
        (z, v - self.d)
    }
}

/// Maximizes `pᵀz + log(Σ_j z_j exp(s_j))` over `[lo, hi]^J`.
///
/// For a fixed budget `β = Σ z_j e^{s_j}` the best `pᵀz` is a fractional
/// knapsack (fill by decreasing `p_j / e^{s_j}`), which is concave in `β`; the
/// outer search over `β` is a golden-section search on a concave function.
pub fn max_linear_plus_log(p: &[f64], s: &[f64], lo: f64, hi: f64) -> (Vec<f64>, f64) {
    let j = p.len();
    let smax = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // scaled weights keep the budget O(1)
    let q: Vec<f64> = s.iter().map(|sj| (sj - smax).exp()).collect();
    let mut order: Vec<usize> = (0..j).collect();
    order.sort_by(|&a, &b| (p[b] / q[b]).total_cmp(&(p[a] / q[a])));
    let base: f64 = q.iter().map(|qj| qj * lo).sum();
    let top: f64 = q.iter().map(|qj| qj * hi).sum();

    let fill = |beta: f64| -> Vec<f64> {
        let mut z = vec![lo; j];
        let mut left = beta - base;
        for &i in &order {
            if left <= 0.0 {
                break;
            }
            let room = q[i] * (hi - lo);
            let take = room.min(left);
            z[i] = lo + take / q[i];
            left -= take;
        }
        z
    };
    let value = |z: &[f64]| -> f64 {
        let total: f64 = z.iter().zip(&q).map(|(a, b)| a * b).sum();
        dot(p, z) + smax + total.ln()
    };
    let phi = |beta: f64| value(&fill(beta));

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (base, top);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (phi(c), phi(d));
    for _ in 0..200 {
        if b - a <= 1e-15 * top {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = phi(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = phi(d);
        }
    }
    // the endpoints can win when the optimum sits on the boundary
    let mut best = (fill(0.5 * (a + b)), f64::NEG_INFINITY);
    best.1 = value(&best.0);
    for beta in [base, top, c, d] {
        let z = fill(beta);
        let v = value(&z);
        if v > best.1 {
            best = (z, v);
        }
    }
    best
}

impl ConstraintFn for LseConstraint {
    fn x_dim(&self) -> usize {
        self.n()
    }

    fn z_dim(&self) -> usize {
        self.j()
    }

    fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        let s = self.exponents(x);
        let (ls, _) = Self::log_sum(z, &s);
        dot(x, &self.a.mul_vec(z)) - self.d + ls
    }

    fn subgrad_x_acc(&self, x: &[f64], z: &[f64], scale: f64, out: &mut [f64]) {
        // A z + Σ_{j≥2} weight_j b_j
        let s = self.exponents(x);
        let (_, w) = Self::log_sum(z, &s);
        let az = self.a.mul_vec(z);
        axpy(scale, &az, out);
        self.b_rows.tmul_vec_acc(scale, &w[1..], out);
    }

    fn supergrad_z_into(&self, x: &[f64], z: &[f64], out: &mut [f64]) {
        // -(Aᵀx + exp(s) / Σ z_j exp(s_j))
        let s = self.exponents(x);
        let smax = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|sj| (sj - smax).exp()).collect();
        let total: f64 = z.iter().zip(&e).map(|(a, b)| a * b).sum();
        out.fill(0.0);
        self.a.tmul_vec_acc(-1.0, x, out);
        for (o, ej) in out.iter_mut().zip(&e) {
            *o -= ej / total;
        }
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    m.data
        .iter_mut()
        .for_each(|v| *v = rng.sample(StandardNormal));
    let s = m.spectral_norm();
    if s > 0.0 {
        m.scale(1.0 / s);
    }
    m
}

/// Worst-case value of every constraint at `x`.
fn robust_values(cons: &[LseConstraint], x: &[f64]) -> Vec<f64> {
    cons.iter().map(|c| c.worst_case(x).1).collect()
}

/// Searches for a point of `[-1,1]^N` with every robust constraint strictly
/// negative: a few candidates, then projected subgradient descent on the
/// (convex) maximum of the robust constraints.
fn find_slater(cons: &[LseConstraint], u_bar: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = u_bar.len();
    let worst = |x: &[f64]| {
        robust_values(cons, x)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let neg: Vec<f64> = u_bar.iter().map(|v| -v).collect();
    let half: Vec<f64> = u_bar.iter().map(|v| 0.5 * v).collect();
    let mut best = (vec![0.0; n], worst(&vec![0.0; n]));
    for cand in [neg, half] {
        let v = worst(&cand);
        if v < best.1 {
            best = (cand, v);
        }
    }
    let mut x = best.0.clone();
    let box_set = SetDescriptor::cube(n, -1.0, 1.0);
    for t in 0..500 {
        let vals = robust_values(cons, &x);
        let (m, _) = vals
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| {
                if *v > acc.1 {
                    (i, *v)
                } else {
                    acc
                }
            });
        let (z, _) = cons[m].worst_case(&x);
        let mut g = vec![0.0; n];
        cons[m].subgrad_x_acc(&x, &z, 1.0, &mut g);
        let gn = norm(&g).max(1e-12);
        let step = 0.5 / ((t + 1) as f64).sqrt() / gn;
        let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        x = crate::sets::project(&box_set, &trial).ok()?;
        let v = worst(&x);
        if v < best.1 {
            best = (x.clone(), v);
        }
    }
    (best.1 < 0.0).then(|| (best.0, -best.1))
}

/// Generates the robust log-sum-exp instance. `d_m` makes `u/‖u‖` exactly
/// feasible for a random `u ∈ [0,1]^N`.
pub fn gen_lse(params: &LseParams) -> Result<InstanceDocument> {
    let LseParams { m, n, j, seed } = *params;
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("lse dimensions must be >= 1".into()));
    }
    if j < 2 {
        return Err(Error::InvalidArgument(
            "lse needs J >= 2 (the exponential sum starts at j = 2)".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut cons = Vec::with_capacity(m);
    for _ in 0..m {
        let b_rows = gaussian_matrix(&mut rng, j - 1, n);
        let a = gaussian_matrix(&mut rng, n, j);
        let u: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let nu = norm(&u);
        let u_bar: Vec<f64> = u.iter().map(|v| v / nu).collect();
        let mut con = LseConstraint { a, b_rows, d: 0.0 };
        con.d = con.worst_case(&u_bar).1;
        cons.push((con, u_bar));
    }
    let (plain, u_bars): (Vec<LseConstraint>, Vec<Vec<f64>>) = cons.into_iter().unzip();
    let (slater, margin) = find_slater(&plain, &u_bars[0]).ok_or_else(|| {
        Error::InvalidSlater("no strictly feasible point found for this seed".into())
    })?;

    let mut doc = InstanceDocument::new(
        "lse",
        ObjectiveModel::Linear { c },
        SetDescriptor::cube(n, -1.0, 1.0),
    );
    doc.seed = Some(seed);
    doc.params = serde_json::to_value(params)?;
    let d_bound = (j as f64).sqrt() + 1.0;
    let e_bound = (n as f64).sqrt() + 1.0 / Z_LOWER;
    for con in plain {
        doc.constraints.push(ConstraintEntry {
            uncertainty_set: con.uncertainty_set(),
            model: ConstraintModel::Lse(con),
            bound_x: Some(d_bound),
            bound_z: Some(e_bound),
            smooth: None,
            cuts: vec![],
            inner_slater: None,
            lower_bound: None,
        });
    }
    doc.slater_point = Some(slater);
    doc.metadata.insert("slater_margin".into(), margin.into());
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sets::Projector;

    #[test]
    fn rejects_single_column() {
        let r = gen_lse(&LseParams {
            m: 1,
            n: 3,
            j: 1,
            seed: 0,
        });
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn knapsack_search_beats_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let f = |z: &[f64]| -> f64 {
            dot(&p, z) + z.iter().zip(&s).map(|(a, b)| a * b.exp()).sum::<f64>().ln()
        };
        let (z, v) = max_linear_plus_log(&p, &s, Z_LOWER, Z_UPPER);
        assert!((f(&z) - v).abs() < 1e-12);
        let set = SetDescriptor::cube(6, Z_LOWER, Z_UPPER);
        for _ in 0..20_000 {
            let w = set.sample_point(&mut rng);
            assert!(f(&w) <= v + 1e-12);
        }
        // vertices too
        for mask in 0u32..64 {
            let w: Vec<f64> = (0..6)
                .map(|i| {
                    if mask & (1 << i) != 0 {
                        Z_UPPER
                    } else {
                        Z_LOWER
                    }
                })
                .collect();
            assert!(f(&w) <= v + 1e-12);
        }
    }

    #[test]
    fn generated_point_is_feasible_with_equality_and_slater_strict() {
        let params = LseParams {
            m: 2,
            n: 5,
            j: 4,
            seed: 3,
        };
        let doc = gen_lse(&params).unwrap();
        let slater = doc.slater_point.clone().unwrap();
        for entry in &doc.constraints {
            let ConstraintModel::Lse(c) = &entry.model else {
                panic!()
            };
            assert!((c.a.spectral_norm() - 1.0).abs() < 1e-10);
            assert!((c.b_rows.spectral_norm() - 1.0).abs() < 1e-10);
            assert!(c.worst_case(&slater).1 < 0.0);
        }
        assert_eq!(gen_lse(&params).unwrap(), doc);
    }

    #[test]
    fn at_origin_value_is_log_of_sum() {
        let doc = gen_lse(&LseParams {
            m: 1,
            n: 4,
            j: 3,
            seed: 8,
        })
        .unwrap();
        let ConstraintModel::Lse(c) = &doc.constraints[0].model else {
            panic!()
        };
        let z = [0.2, 0.5, 0.9];
        let v = c.eval(&[0.0; 4], &z);
        assert!((v - (1.6f64.ln() - c.d)).abs() < 1e-14);
    }
}

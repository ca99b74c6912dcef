//! Robust QCQP with ball uncertainty.
//!
//! The original constraint `‖P(z)x‖² + bᵀx + c` with
//! `P(z) = P_0 + Σ_j z_j P_j` is convex in `x` but convex (not concave) in
//! `z`. It is rewritten with an auxiliary `w ∈ Ball(0, R)` as
//! `2wᵀP(z)x - ‖w‖² + bᵀx + c`, whose maximum over `w` is `‖P(z)x‖²` as long
//! as `‖P(z)x‖ ≤ R`. The objective is handled through an epigraph variable
//! `t = s·τ`, with `τ` appended as the last decision coordinate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, norm_sq, stacked_spectral_norm, Matrix};
use crate::problem::{
    ConstraintEntry, ConstraintFn, ConstraintModel, InstanceDocument, ObjectiveModel, SmoothConsts,
};
use crate::sets::SetDescriptor;

pub const C_CONST: f64 = -0.05;
pub const T_LOWER: f64 = -2.0;
pub const T_UPPER: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QcqpParams {
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub j: usize,
    pub seed: u64,
    /// The stored epigraph coordinate is `τ = t/s`. `None` picks
    /// [`balanced_epigraph_scale`].
    #[serde(default)]
    pub epigraph_scale: Option<f64>,
}

/// `2√2·R + 1`: the `x`-gradient bound of an ordinary row, so the epigraph
/// coordinate moves on the same scale as the decision vector.
pub fn balanced_epigraph_scale(j: usize) -> f64 {
    2.0 * std::f64::consts::SQRT_2 * lift_radius(j) + 1.0
}

/// `R = 1 + √J`.
pub fn lift_radius(j: usize) -> f64 {
    1.0 + (j as f64).sqrt()
}

impl QcqpParams {
    pub fn new(m: usize, n: usize, p: usize, j: usize, seed: u64) -> Self {
        Self {
            m,
            n,
            p,
            j,
            seed,
            epigraph_scale: None,
        }
    }
}

/// One lifted QCQP constraint over `x̃ = (x, t)` and `z̃ = (z, w)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QcqpConstraint {
    /// `P_0, ..., P_J`, each `P × N`.
    pub blocks: Vec<Matrix>,
    pub b: Vec<f64>,
    pub c: f64,
    /// Radius of the `w` ball.
    pub radius: f64,
    /// Coefficient `s` of the epigraph term `-s·τ`; zero for ordinary rows.
    pub epigraph: f64,
}

impl QcqpConstraint {
    pub fn n(&self) -> usize {
        self.b.len()
    }

    pub fn j(&self) -> usize {
        self.blocks.len() - 1
    }

    pub fn p(&self) -> usize {
        self.blocks[0].rows
    }

    pub fn uncertainty_set(&self) -> SetDescriptor {
        SetDescriptor::product(vec![
            SetDescriptor::unit_ball(self.j()),
            SetDescriptor::ball(vec![0.0; self.p()], self.radius),
        ])
    }

    /// `P_j x` for every block.
    fn block_products(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let x = &x[..self.n()];
        self.blocks.iter().map(|b| b.mul_vec(x)).collect()
    }

    /// `P(z)x` given the block products.
    fn combine(px: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
        let mut y = px[0].clone();
        for (pj, zj) in px[1..].iter().zip(z) {
            crate::linalg::axpy(*zj, pj, &mut y);
        }
        y
    }

    /// `P(z)x` for the original (unlifted) uncertainty `z ∈ R^J`.
    pub fn apply(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        Self::combine(&self.block_products(x), z)
    }

    fn affine_part(&self, x: &[f64]) -> f64 {
        let t = if self.epigraph != 0.0 {
            self.epigraph * x[self.n()]
        } else {
            0.0
        };
        dot(&self.b, &x[..self.n()]) + self.c - t
    }

    /// The original constraint value `‖P(z)x‖² + bᵀx + c (- t)`.
    pub fn original_value(&self, x: &[f64], z: &[f64]) -> f64 {
        norm_sq(&self.apply(x, z)) + self.affine_part(x)
    }

    /// Closed-form maximizer over the `w` ball of `2wᵀy - ‖w‖²` with
    /// `y = P(z)x`: the projection of `y` onto the ball.
    pub fn lift_max_w(&self, x: &[f64], z: &[f64]) -> (Vec<f64>, f64) {
        let y = self.apply(x, z);
        let ny = norm(&y);
        let w: Vec<f64> = if ny <= self.radius {
            y.clone()
        } else {
            y.iter().map(|v| v * self.radius / ny).collect()
        };
        let value = 2.0 * dot(&w, &y) - norm_sq(&w);
        (w, value)
    }

    /// Exact `max_{‖z‖≤1} ‖P(z)x‖²` and the lifted maximizer `(z, w)`.
    ///
    /// With `a = P_0x` and `B = [P_1x, ..., P_Jx]` this is a trust-region
    /// problem for a convex quadratic, solved through the eigendecomposition
    /// of `BᵀB` and a secular equation (including the degenerate case where
    /// the linear term misses the top eigenspace).
    pub fn worst_case(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let px = self.block_products(x);
        let (j, p) = (self.j(), self.p());
        let b = DMatrix::from_fn(p, j, |r, c| px[c + 1][r]);
        let a = DVector::from_column_slice(&px[0]);
        let h = b.transpose() * &b;
        let g = b.transpose() * &a;
        let eig = SymmetricEigen::new(h);
        let lam = eig.eigenvalues;
        let q = eig.eigenvectors;
        let gt = q.transpose() * &g;

        let lmax = lam.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let scale = lmax.abs().max(norm_sq(&px[0])).max(1e-300);
        let top: Vec<bool> = lam.iter().map(|l| lmax - l <= 1e-12 * scale).collect();
        let top_weight: f64 = (0..j).filter(|&i| top[i]).map(|i| gt[i] * gt[i]).sum();
        let gnorm = g.norm();

        let mut coef = vec![0.0; j];
        if gnorm <= 1e-300 {
            let i = (0..j).find(|&i| top[i]).unwrap_or(0);
            coef[i] = 1.0;
        } else {
            let rest = |mu: f64| -> f64 {
                (0..j)
                    .filter(|&i| !top[i])
                    .map(|i| (gt[i] / (mu - lam[i])).powi(2))
                    .sum()
            };
            let hard = top_weight <= 1e-24 * gnorm * gnorm && rest(lmax) <= 1.0;
            if hard {
                let mut used = 0.0;
                for i in 0..j {
                    if !top[i] {
                        coef[i] = gt[i] / (lmax - lam[i]);
                        used += coef[i] * coef[i];
                    }
                }
                let i = (0..j).find(|&i| top[i]).unwrap_or(0);
                coef[i] = (1.0 - used).max(0.0).sqrt();
            } else {
                // ‖z(μ)‖ is decreasing on (λmax, ∞) and ≤ 1 at λmax + ‖g‖
                let norm_at = |mu: f64| -> f64 {
                    (0..j).map(|i| (gt[i] / (mu - lam[i])).powi(2)).sum::<f64>()
                };
                let (mut lo, mut hi) = (lmax, lmax + gnorm);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if norm_at(mid) > 1.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                for i in 0..j {
                    coef[i] = gt[i] / (hi - lam[i]);
                }
            }
        }
        let z_vec = &q * DVector::from_vec(coef);
        let mut z: Vec<f64> = z_vec.iter().cloned().collect();
        let nz = norm(&z);
        if nz > 1.0 {
            z.iter_mut().for_each(|v| *v /= nz);
        }
        let w = Self::combine(&px, &z);
        let value = norm_sq(&w) + self.affine_part(x);
        z.extend_from_slice(&w);
        (z, value)
    }

    /// Upper bound on `‖P(z)x‖` over the unit balls: `‖[P_0;...;P_J]‖·√2`
    /// with the stacked norm normalized to one.
    pub fn lift_norm_bound(&self) -> f64 {
        std::f64::consts::SQRT_2 * stacked_spectral_norm(&self.blocks)
    }
}

impl ConstraintFn for QcqpConstraint {
    fn x_dim(&self) -> usize {
        self.n() + 1
    }

    fn z_dim(&self) -> usize {
        self.j() + self.p()
    }

    fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        let (zz, w) = z.split_at(self.j());
        let y = self.apply(x, zz);
        2.0 * dot(w, &y) - norm_sq(w) + self.affine_part(x)
    }

    fn subgrad_x_acc(&self, _x: &[f64], z: &[f64], scale: f64, out: &mut [f64]) {
        let n = self.n();
        let (zz, w) = z.split_at(self.j());
        let (ox, ot) = out.split_at_mut(n);
        self.blocks[0].tmul_vec_acc(2.0 * scale, w, ox);
        for (pj, zj) in self.blocks[1..].iter().zip(zz) {
            if *zj != 0.0 {
                pj.tmul_vec_acc(2.0 * scale * zj, w, ox);
            }
        }
        crate::linalg::axpy(scale, &self.b, ox);
        if self.epigraph != 0.0 {
            ot[0] -= scale * self.epigraph;
        }
    }

    fn supergrad_z_into(&self, x: &[f64], z: &[f64], out: &mut [f64]) {
        let j = self.j();
        let (zz, w) = z.split_at(j);
        let px = self.block_products(x);
        for i in 0..j {
            out[i] = -2.0 * dot(w, &px[i + 1]);
        }
        let y = Self::combine(&px, zz);
        for (k, o) in out[j..].iter_mut().enumerate() {
            *o = -2.0 * (y[k] - w[k]);
        }
    }

    fn concave_blocks(&self) -> Vec<std::ops::Range<usize>> {
        vec![0..self.j(), self.j()..self.j() + self.p()]
    }
}

/// Declared constants for one lifted constraint: `(D, E, smooth)`.
fn constants(radius: f64, epigraph: f64) -> (f64, f64, SmoothConsts) {
    let s2 = std::f64::consts::SQRT_2;
    let d = 2.0 * s2 * radius + 1.0 + epigraph.abs();
    let e = ((2.0 * radius).powi(2) + (2.0 * s2 + 2.0 * radius).powi(2)).sqrt();
    (
        d,
        e,
        SmoothConsts {
            dx: 0.0,
            ez_x: 2.0 * radius + 2.0 * s2,
            ez_z: 4.0,
        },
    )
}

fn random_constraint(
    rng: &mut ChaCha8Rng,
    n: usize,
    p: usize,
    j: usize,
    epigraph: f64,
) -> QcqpConstraint {
    let mut blocks: Vec<Matrix> = (0..=j)
        .map(|_| {
            let mut m = Matrix::zeros(p, n);
            m.data
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-1.0..=1.0));
            m
        })
        .collect();
    let s = stacked_spectral_norm(&blocks);
    blocks.iter_mut().for_each(|b| b.scale(1.0 / s));
    let mut b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let nb = norm(&b);
    b.iter_mut().for_each(|v| *v /= nb);
    QcqpConstraint {
        blocks,
        b,
        c: C_CONST,
        radius: lift_radius(j),
        epigraph,
    }
}

/// Generates a robust QCQP with `M` constraints plus the objective constraint
/// (index 0) in epigraph form.
pub fn gen_qcqp(params: &QcqpParams) -> Result<InstanceDocument> {
    let QcqpParams {
        m,
        n,
        p,
        j,
        seed,
        epigraph_scale,
    } = *params;
    let s = epigraph_scale.unwrap_or_else(|| balanced_epigraph_scale(j));
    if m == 0 || n == 0 || p == 0 || j == 0 {
        return Err(Error::InvalidArgument(
            "qcqp dimensions must be >= 1".into(),
        ));
    }
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "epigraph scale must be positive, got {s}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = vec![0.0; n + 1];
    c[n] = s;
    let decision_set = SetDescriptor::product(vec![
        SetDescriptor::unit_ball(n),
        SetDescriptor::Box {
            lower: vec![T_LOWER / s],
            upper: vec![T_UPPER / s],
        },
    ]);
    let mut doc = InstanceDocument::new("qcqp", ObjectiveModel::Linear { c }, decision_set);
    doc.seed = Some(seed);
    doc.params = serde_json::to_value(QcqpParams {
        epigraph_scale: Some(s),
        ..params.clone()
    })?;
    for k in 0..=m {
        let con = random_constraint(&mut rng, n, p, j, if k == 0 { s } else { 0.0 });
        let (d, e, smooth) = constants(con.radius, con.epigraph);
        doc.constraints.push(ConstraintEntry {
            uncertainty_set: con.uncertainty_set(),
            model: ConstraintModel::Qcqp(con),
            bound_x: Some(d),
            bound_z: Some(e),
            smooth: Some(smooth),
            cuts: vec![],
            inner_slater: None,
            lower_bound: None,
        });
    }
    let mut slater = vec![0.0; n + 1];
    slater[n] = T_UPPER / s;
    doc.slater_point = Some(slater);
    // at x = 0 every constraint equals c = -0.05 (and -0.05 - t_hi for the objective row)
    doc.metadata
        .insert("slater_margin".into(), (-C_CONST).into());
    doc.metadata
        .insert("lift_radius".into(), lift_radius(j).into());
    doc.metadata.insert("epigraph_scale".into(), s.into());
    doc.metadata
        .insert("objective_constraint".into(), serde_json::Value::from(0));
    Ok(doc)
}

//! Distributionally robust newsvendor with CVaR risk constraints.
//!
//! Decision `(x, τ) ∈ [0,1]^M × [-L, L]^M`; constraint `m` reads
//! `(1/(1-κ)) Σ_n z_n [τ_m - r(x_m, d_m^n)]₊ - τ_m - ρ_m ≤ 0` for every
//! distribution `z` in `Simplex(N) ∩ Ball(uniform, r)`. The ball is passed as
//! a cut `‖z - ẑ‖² - r² ≤ 0` on top of the simplex.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{
    ConstraintEntry, ConstraintFn, ConstraintModel, CutEntry, CutModel, InstanceDocument,
    ObjectiveModel,
};
use crate::sets::SetDescriptor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewsvendorParams {
    pub m: usize,
    pub n: usize,
    pub kappa: f64,
    pub radius: f64,
    pub seed: u64,
}

impl NewsvendorParams {
    pub fn new(m: usize, n: usize, seed: u64) -> Self {
        Self {
            m,
            n,
            kappa: 0.9,
            radius: 0.1,
            seed,
        }
    }
}

/// Unit prices of one product.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prices {
    /// Purchase cost.
    pub cost: f64,
    /// Selling price.
    pub sell: f64,
    /// Salvage value.
    pub salvage: f64,
    /// Storage (shortage) cost.
    pub storage: f64,
}

impl Prices {
    /// Profit `v·min(d,x) + s(x-d)₊ - t(d-x)₊ - c·x`, written as the minimum
    /// of its two affine pieces.
    pub fn profit(&self, x: f64, d: f64) -> f64 {
        let short = (self.sell + self.storage - self.cost) * x - self.storage * d;
        let over = (self.salvage - self.cost) * x + (self.sell - self.salvage) * d;
        short.min(over)
    }

    /// Left derivative of the profit in `x`.
    pub fn profit_slope(&self, x: f64, d: f64) -> f64 {
        let short = (self.sell + self.storage - self.cost) * x - self.storage * d;
        let over = (self.salvage - self.cost) * x + (self.sell - self.salvage) * d;
        if short <= over {
            self.sell + self.storage - self.cost
        } else {
            self.salvage - self.cost
        }
    }
}

/// CVaR constraint of product `index` among `products`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvarConstraint {
    pub index: usize,
    pub products: usize,
    pub demands: Vec<f64>,
    pub prices: Prices,
    pub kappa: f64,
    pub rho: f64,
}

impl CvarConstraint {
    fn split(&self, x: &[f64]) -> (f64, f64) {
        (x[self.index], x[self.products + self.index])
    }

    /// Excess losses `[τ - r(x, d_n)]₊`.
    fn excess(&self, order: f64, tau: f64) -> impl Iterator<Item = f64> + '_ {
        self.demands
            .iter()
            .map(move |&d| (tau - self.prices.profit(order, d)).max(0.0))
    }
}

impl ConstraintFn for CvarConstraint {
    fn x_dim(&self) -> usize {
        2 * self.products
    }

    fn z_dim(&self) -> usize {
        self.demands.len()
    }

    fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        let (order, tau) = self.split(x);
        let tail: f64 = self.excess(order, tau).zip(z).map(|(e, p)| e * p).sum();
        tail / (1.0 - self.kappa) - tau - self.rho
    }

    fn subgrad_x_acc(&self, x: &[f64], z: &[f64], scale: f64, out: &mut [f64]) {
        let (order, tau) = self.split(x);
        let w = 1.0 / (1.0 - self.kappa);
        let (mut d_order, mut d_tau) = (0.0, -1.0);
        for (&d, &p) in self.demands.iter().zip(z) {
            if tau - self.prices.profit(order, d) > 0.0 {
                d_order -= w * p * self.prices.profit_slope(order, d);
                d_tau += w * p;
            }
        }
        out[self.index] += scale * d_order;
        out[self.products + self.index] += scale * d_tau;
    }

    fn supergrad_z_into(&self, x: &[f64], _z: &[f64], out: &mut [f64]) {
        let (order, tau) = self.split(x);
        let w = 1.0 / (1.0 - self.kappa);
        for (o, e) in out.iter_mut().zip(self.excess(order, tau)) {
            *o = -w * e;
        }
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len();
    if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    }
}

/// Generates the newsvendor instance in intersection form.
pub fn gen_newsvendor(params: &NewsvendorParams) -> Result<InstanceDocument> {
    let NewsvendorParams {
        m,
        n,
        kappa,
        radius,
        seed,
    } = *params;
    if m == 0 {
        return Err(Error::InvalidArgument("newsvendor needs M >= 1".into()));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("newsvendor needs N >= 2".into()));
    }
    if !(0.0..1.0).contains(&kappa) {
        return Err(Error::InvalidArgument(format!(
            "kappa must lie in [0, 1), got {kappa}"
        )));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut products = Vec::with_capacity(m);
    for _ in 0..m {
        let cost = rng.random_range(0.5..1.0);
        let sell = cost * rng.random_range(1.2..2.0);
        let salvage = cost * rng.random_range(0.0..0.5);
        let storage = rng.random_range(0.0..0.3);
        let demands: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        products.push((
            Prices {
                cost,
                sell,
                salvage,
                storage,
            },
            demands,
        ));
    }
    // every profit lies in [-L, L], so the optimal τ does too
    let l_bound = products
        .iter()
        .flat_map(|(p, ds)| ds.iter().map(move |d| (p.sell + p.storage + p.cost) * d))
        .fold(0.0, f64::max);

    let center = vec![1.0 / n as f64; n];
    let w = 1.0 / (1.0 - kappa);
    let mut x_slater = vec![0.0; 2 * m];
    let mut margins = Vec::with_capacity(m);
    let mut constraints = Vec::with_capacity(m);
    for (i, (prices, demands)) in products.iter().enumerate() {
        let order = median(demands).min(1.0);
        let max_loss = demands
            .iter()
            .map(|&d| -prices.profit(order, d))
            .fold(f64::NEG_INFINITY, f64::max);
        let rho = (max_loss + 0.1 * max_loss.abs() + 0.01).max(0.01);
        // with τ = -max_loss all excess losses vanish, so g = max_loss - ρ for every z
        x_slater[i] = order;
        x_slater[m + i] = -max_loss;
        margins.push(rho - max_loss);
        let con = CvarConstraint {
            index: i,
            products: m,
            demands: demands.clone(),
            prices: *prices,
            kappa,
            rho,
        };
        let slope = prices.sell + prices.storage;
        let d_bound = ((w * slope).powi(2) + (w - 1.0).max(1.0).powi(2)).sqrt();
        let e_bound = w * (n as f64).sqrt() * 2.0 * l_bound;
        constraints.push(ConstraintEntry {
            model: ConstraintModel::NewsvendorCvar(con),
            uncertainty_set: SetDescriptor::simplex(n),
            bound_x: Some(d_bound),
            bound_z: Some(e_bound),
            smooth: None,
            cuts: vec![CutEntry {
                model: CutModel::BallSquared {
                    center: center.clone(),
                    radius,
                },
                bound: 2.0 * std::f64::consts::SQRT_2,
                value_bound: Some((radius * radius).max(2.0 - radius * radius)),
            }],
            inner_slater: Some(center.clone()),
            // g ≥ -τ - ρ ≥ -(L + ρ) everywhere
            lower_bound: Some(-(l_bound + rho)),
        });
    }

    let mut c = vec![0.0; 2 * m];
    for (i, (p, _)) in products.iter().enumerate() {
        c[i] = p.cost;
    }
    let mut lower = vec![0.0; m];
    lower.extend(std::iter::repeat_n(-l_bound, m));
    let mut upper = vec![1.0; m];
    upper.extend(std::iter::repeat_n(l_bound, m));
    let mut doc = InstanceDocument::new(
        "newsvendor",
        ObjectiveModel::Linear { c },
        SetDescriptor::Box { lower, upper },
    );
    doc.seed = Some(seed);
    doc.params = serde_json::to_value(params)?;
    doc.constraints = constraints;
    doc.slater_point = Some(x_slater);
    let margin = margins.iter().cloned().fold(f64::INFINITY, f64::min);
    doc.metadata.insert("slater_margin".into(), margin.into());
    doc.metadata.insert("kappa".into(), kappa.into());
    doc.metadata.insert("radius".into(), radius.into());
    doc.metadata.insert("tau_bound".into(), l_bound.into());
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prices() -> Prices {
        Prices {
            cost: 0.6,
            sell: 1.0,
            salvage: 0.1,
            storage: 0.2,
        }
    }

    /// Profit straight from its definition.
    fn profit_direct(p: &Prices, x: f64, d: f64) -> f64 {
        p.sell * d.min(x) + p.salvage * (x - d).max(0.0) - p.storage * (d - x).max(0.0) - p.cost * x
    }

    #[test]
    fn profit_matches_definition() {
        let p = prices();
        for &(x, d) in &[(0.7, 0.7), (0.2, 0.9), (1.0, 0.5), (0.0, 1.2)] {
            assert!((p.profit(x, d) - profit_direct(&p, x, d)).abs() < 1e-15);
        }
        assert!((p.profit(0.8, 0.8) - (1.0 - 0.6) * 0.8).abs() < 1e-15);
    }

    #[test]
    fn kink_uses_left_slope() {
        let p = prices();
        assert_eq!(p.profit_slope(0.8, 0.8), p.sell + p.storage - p.cost);
        assert_eq!(p.profit_slope(0.9, 0.8), p.salvage - p.cost);
    }

    fn single(kappa: f64, demands: Vec<f64>) -> CvarConstraint {
        CvarConstraint {
            index: 0,
            products: 1,
            demands,
            prices: prices(),
            kappa,
            rho: 0.0,
        }
    }

    #[test]
    fn degenerate_distribution_gives_minus_profit() {
        // with one outcome and κ = 0 the infimum over τ is attained at τ = r
        let c = single(0.0, vec![0.9]);
        let x = 0.4;
        let r = prices().profit(x, 0.9);
        let cvar = |tau: f64| c.eval(&[x, tau], &[1.0]);
        assert!((cvar(r) - (-r)).abs() < 1e-15);
        for tau in [r - 0.3, r + 0.2] {
            assert!(cvar(tau) >= -r - 1e-15);
        }
    }

    #[test]
    fn cvar_of_two_worst_losses() {
        let demands = vec![0.5, 0.8, 1.1, 1.4];
        let c = single(0.5, demands.clone());
        let x = 1.0;
        let mut losses: Vec<f64> = demands.iter().map(|&d| -prices().profit(x, d)).collect();
        losses.sort_by(|a, b| b.total_cmp(a));
        let expected = 0.5 * (losses[0] + losses[1]);
        let z = [0.25; 4];
        // the minimizing τ is minus the second-worst loss
        let at_quantile = c.eval(&[x, -losses[1]], &z);
        assert!((at_quantile - expected).abs() < 1e-14);
        let grid_min = (0..=4000)
            .map(|k| -2.0 + 4.0 * k as f64 / 4000.0)
            .map(|tau| c.eval(&[x, tau], &z))
            .fold(f64::INFINITY, f64::min);
        assert!(grid_min >= expected - 1e-12);
        assert!(grid_min <= expected + 1e-3);
    }

    #[test]
    fn generated_instance_is_sane() {
        let doc = gen_newsvendor(&NewsvendorParams::new(3, 12, 4)).unwrap();
        let slater = doc.slater_point.clone().unwrap();
        assert!(doc.decision_set.contains(&slater, 0.0));
        for e in &doc.constraints {
            let ConstraintModel::NewsvendorCvar(c) = &e.model else {
                panic!()
            };
            let p = c.prices;
            assert!(p.sell > p.cost && p.cost > p.salvage && p.salvage >= 0.0 && p.storage >= 0.0);
            // linear in z: the worst vertex bounds every distribution
            let worst = (0..12)
                .map(|k| {
                    let mut z = vec![0.0; 12];
                    z[k] = 1.0;
                    c.eval(&slater, &z)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(worst < 0.0);
            assert!(-worst >= 0.05 * c.rho.abs());
        }
        assert_eq!(doc.metadata["kappa"], 0.9);
        assert_eq!(doc.metadata["radius"], 0.1);
    }
}

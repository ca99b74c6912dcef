//! Solver settings shared by `solve` and `bench`, readable from flags and
//! from a TOML file with the same (kebab-case) keys.

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use prom3::baselines::CuttingPlaneConfig;
use prom3::inner::StepMode;
use prom3::outer::{InnerIterations, OuterConfig};
use serde::Deserialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Outer/inner primal-dual method on the instance as given.
    Prom3,
    /// The same method on the penalized problem with explicit cut multipliers.
    Prom3x,
    /// Scenario-based cutting planes with a penalty master problem.
    CuttingPlane,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Prom3 => "prom3",
            Algorithm::Prom3x => "prom3x",
            Algorithm::CuttingPlane => "cutting-plane",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Start {
    /// Projection of the origin onto the decision set.
    Origin,
    /// The Slater point recorded in the instance.
    Slater,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepModeArg {
    Nonsmooth,
    Smooth,
}

impl From<StepModeArg> for StepMode {
    fn from(m: StepModeArg) -> Self {
        match m {
            StepModeArg::Nonsmooth => StepMode::Nonsmooth,
            StepModeArg::Smooth => StepMode::Smooth,
        }
    }
}

/// Every field is optional so that flags can be layered over a file.
#[derive(Clone, Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Settings {
    #[arg(long, value_enum)]
    pub algorithm: Option<Algorithm>,
    /// Outer iterations K [default: 100].
    #[arg(long)]
    pub k: Option<usize>,
    /// Primal prox step [default: 1/Lip_f].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Multiplier step [default: 1/(2 Lip_f)].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Pessimization accuracy [default: 1/K].
    #[arg(long)]
    pub theta: Option<f64>,
    /// Inner accuracy target [default: 1/K].
    #[arg(long)]
    pub nu: Option<f64>,
    /// Fixed inner iteration count T.
    #[arg(long, conflicts_with = "c_t")]
    pub inner_t: Option<usize>,
    /// T = ceil(c_t K^2) (nonsmooth) or ceil(c_t K) (smooth) [default: 1].
    #[arg(long)]
    pub c_t: Option<f64>,
    #[arg(long, value_enum)]
    pub step_mode: Option<StepModeArg>,
    /// Pessimization step cap per constraint [default: 10 T; 100000 for cutting-plane].
    #[arg(long)]
    pub pessimize_budget: Option<usize>,
    /// Reuse the inner solver's uncertainty iterate for active constraints.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub reuse_ztilde: Option<bool>,
    /// Accuracy of the reported violation [default: theta/10].
    #[arg(long)]
    pub theta_report: Option<f64>,
    /// Pessimization step cap for reporting [default: 2000].
    #[arg(long)]
    pub report_budget: Option<usize>,
    /// Stop inner solves once the iterate change drops below nu/10.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub early_stop: Option<bool>,
    #[arg(long, value_enum)]
    pub start: Option<Start>,
    /// Cutting-plane target accuracy [default: 0.05].
    #[arg(long)]
    pub eps: Option<f64>,
    /// Cutting-plane round limit [default: 50].
    #[arg(long)]
    pub max_rounds: Option<usize>,
    /// Subgradient steps per cutting-plane master solve [default: 20000].
    #[arg(long)]
    pub master_iters: Option<usize>,
    /// Cutting-plane penalty weight [default: derived from the Slater point].
    #[arg(long)]
    pub rho: Option<f64>,
    /// Tolerance of the alternating projection onto intersection sets [default: 1e-12].
    #[arg(long)]
    pub dykstra_tol: Option<f64>,
    /// Iteration cap of the alternating projection [default: 10000].
    #[arg(long)]
    pub dykstra_iters: Option<usize>,
}

macro_rules! overlay {
    ($top:expr, $base:expr, $($f:ident),* $(,)?) => {
        Settings { $($f: $top.$f.or($base.$f)),* }
    };
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config file {}", path.display()))
    }

    /// Values set in `self` win over those in `base`.
    pub fn over(self, base: Settings) -> Settings {
        let policy = (self.inner_t, self.c_t);
        let mut merged = overlay!(
            self,
            base,
            algorithm,
            k,
            alpha,
            beta,
            theta,
            nu,
            inner_t,
            c_t,
            step_mode,
            pessimize_budget,
            reuse_ztilde,
            theta_report,
            report_budget,
            early_stop,
            start,
            eps,
            max_rounds,
            master_iters,
            rho,
            dykstra_tol,
            dykstra_iters
        );
        // choosing one inner policy replaces the other one from the base
        if policy.0.is_some() || policy.1.is_some() {
            (merged.inner_t, merged.c_t) = policy;
        }
        merged
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm.unwrap_or(Algorithm::Prom3)
    }

    pub fn dykstra(&self) -> (f64, usize) {
        (
            self.dykstra_tol.unwrap_or(1e-12),
            self.dykstra_iters.unwrap_or(10_000),
        )
    }

    pub fn outer_config(&self, slater: Option<&[f64]>) -> Result<OuterConfig> {
        if self.inner_t.is_some() && self.c_t.is_some() {
            bail!("inner-t and c-t are mutually exclusive");
        }
        let mut cfg = OuterConfig::default();
        if let Some(k) = self.k {
            cfg.k = k;
        }
        cfg.alpha = self.alpha;
        cfg.beta = self.beta;
        cfg.theta = self.theta;
        cfg.nu = self.nu;
        if let Some(t) = self.inner_t {
            cfg.inner = InnerIterations::Fixed { t };
        }
        if let Some(c_t) = self.c_t {
            cfg.inner = InnerIterations::Scaled { c_t };
        }
        if let Some(m) = self.step_mode {
            cfg.step_mode = m.into();
        }
        cfg.pessimize_budget = self.pessimize_budget;
        cfg.reuse_ztilde = self.reuse_ztilde.unwrap_or(false);
        cfg.theta_report = self.theta_report;
        if let Some(b) = self.report_budget {
            cfg.report_budget = b;
        }
        cfg.early_stop = self.early_stop.unwrap_or(false);
        if self.start == Some(Start::Slater) {
            let xs = slater.context("--start slater needs a Slater point in the instance")?;
            cfg.x0 = Some(xs.to_vec());
        }
        Ok(cfg)
    }

    pub fn cutting_plane_config(&self) -> CuttingPlaneConfig {
        let mut cfg = CuttingPlaneConfig::default();
        if let Some(e) = self.eps {
            cfg.eps = e;
        }
        if let Some(r) = self.max_rounds {
            cfg.max_rounds = r;
        }
        if let Some(m) = self.master_iters {
            cfg.master_iters = m;
        }
        cfg.rho = self.rho;
        if let Some(b) = self.pessimize_budget {
            cfg.pessimize_budget = b;
        }
        cfg.theta_report = self.theta_report;
        if let Some(b) = self.report_budget {
            cfg.report_budget = b;
        }
        cfg
    }
}

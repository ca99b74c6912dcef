//! Versioned JSON instance documents.
//!
//! A document stores the data of every oracle (not code), so loading it
//! rebuilds exactly the same problem. Floats go through `serde_json` with
//! round-trip parsing, which keeps them bit-identical.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::penalize::{Cut, CutFn, IntersectionConstraint, IntersectionProblem};
use super::{
    ConstraintFn, ConstraintOracle, LinearObjective, ObjectiveOracle, ProblemSpec, RobustLinear,
    SmoothConsts, WorstCaseFn,
};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{axpy, dist, dot};
use crate::problems::lse::LseConstraint;
use crate::problems::newsvendor::CvarConstraint;
use crate::problems::qcqp::QcqpConstraint;
use crate::sets::SetDescriptor;

pub const INSTANCE_FORMAT: &str = "prom3-instance";
pub const INSTANCE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveModel {
    Linear { c: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintModel {
    RobustLinear(RobustLinear),
    Qcqp(QcqpConstraint),
    Lse(LseConstraint),
    NewsvendorCvar(CvarConstraint),
}

impl ConstraintModel {
    fn func(&self) -> Arc<dyn ConstraintFn> {
        match self {
            Self::RobustLinear(c) => Arc::new(c.clone()),
            Self::Qcqp(c) => Arc::new(c.clone()),
            Self::Lse(c) => Arc::new(c.clone()),
            Self::NewsvendorCvar(c) => Arc::new(c.clone()),
        }
    }

    /// Exact worst case, when the model has one for this uncertainty set.
    fn worst_case(&self, set: &SetDescriptor) -> Option<WorstCaseFn> {
        match (self, set) {
            (Self::RobustLinear(c), SetDescriptor::Ball { center, radius })
                if center.iter().all(|v| *v == 0.0) =>
            {
                let (c, r) = (c.clone(), *radius);
                Some(Arc::new(move |x: &[f64]| c.worst_case_ball(x, r)))
            }
            (Self::Qcqp(c), s) if *s == c.uncertainty_set() => {
                let c = c.clone();
                Some(Arc::new(move |x: &[f64]| c.worst_case(x)))
            }
            (Self::Lse(c), s) if *s == c.uncertainty_set() => {
                let c = c.clone();
                Some(Arc::new(move |x: &[f64]| c.worst_case(x)))
            }
            _ => None,
        }
    }
}

/// Convex cut `h(z) ≤ 0` carving the uncertainty set out of its base set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CutModel {
    /// `‖z - center‖² - radius²`
    BallSquared { center: Vec<f64>, radius: f64 },
    /// `aᵀz - b`
    Affine { a: Vec<f64>, b: f64 },
    /// `h ≡ value`
    Constant { value: f64, dim: usize },
}

impl CutFn for CutModel {
    fn dim(&self) -> usize {
        match self {
            Self::BallSquared { center, .. } => center.len(),
            Self::Affine { a, .. } => a.len(),
            Self::Constant { dim, .. } => *dim,
        }
    }

    fn eval(&self, z: &[f64]) -> f64 {
        match self {
            Self::BallSquared { center, radius } => dist(z, center).powi(2) - radius * radius,
            Self::Affine { a, b } => dot(a, z) - b,
            Self::Constant { value, .. } => *value,
        }
    }

    fn subgrad_acc(&self, z: &[f64], scale: f64, out: &mut [f64]) {
        match self {
            Self::BallSquared { center, .. } => {
                for ((o, zi), ci) in out.iter_mut().zip(z).zip(center) {
                    *o += 2.0 * scale * (zi - ci);
                }
            }
            Self::Affine { a, .. } => axpy(scale, a, out),
            Self::Constant { .. } => {}
        }
    }
}

impl CutModel {
    fn as_set(&self) -> Option<SetDescriptor> {
        match self {
            Self::BallSquared { center, radius } => {
                Some(SetDescriptor::ball(center.clone(), *radius))
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutEntry {
    pub model: CutModel,
    /// Bound on the cut's gradient norm over the base set.
    pub bound: f64,
    #[serde(default)]
    pub value_bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintEntry {
    pub model: ConstraintModel,
    pub uncertainty_set: SetDescriptor,
    pub bound_x: Option<f64>,
    pub bound_z: Option<f64>,
    #[serde(default)]
    pub smooth: Option<SmoothConsts>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cuts: Vec<CutEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_slater: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower_bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceDocument {
    pub format: String,
    pub version: u32,
    pub family: String,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Generator parameters, echoed for provenance.
    #[serde(default)]
    pub params: serde_json::Value,
    pub objective: ObjectiveModel,
    pub objective_bound: f64,
    #[serde(default)]
    pub objective_smooth: Option<f64>,
    pub decision_set: SetDescriptor,
    pub constraints: Vec<ConstraintEntry>,
    #[serde(default)]
    pub slater_point: Option<Vec<f64>>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

/// A built instance: plain, or with intersection-form uncertainty sets.
#[derive(Clone, Debug)]
pub enum Instance {
    Plain(ProblemSpec),
    Intersection(IntersectionProblem),
}

/// Hex SHA-256 of a byte string.
pub fn digest_of(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl InstanceDocument {
    pub fn new(family: &str, objective: ObjectiveModel, decision_set: SetDescriptor) -> Self {
        let objective_bound = match &objective {
            ObjectiveModel::Linear { c } => crate::linalg::norm(c),
        };
        Self {
            format: INSTANCE_FORMAT.into(),
            version: INSTANCE_VERSION,
            family: family.into(),
            seed: None,
            params: serde_json::Value::Null,
            objective,
            objective_bound,
            objective_smooth: Some(0.0),
            decision_set,
            constraints: Vec::new(),
            slater_point: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)?;
        if doc.format != INSTANCE_FORMAT {
            return Err(Error::InvalidArgument(format!(
                "unknown document format {:?}",
                doc.format
            )));
        }
        if doc.version != INSTANCE_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported document version {}",
                doc.version
            )));
        }
        Ok(doc)
    }

    /// SHA-256 of the serialized document.
    pub fn digest(&self) -> Result<String> {
        Ok(digest_of(self.to_json()?.as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn has_cuts(&self) -> bool {
        self.constraints.iter().any(|c| !c.cuts.is_empty())
    }

    fn objective_oracle(&self) -> Result<ObjectiveOracle> {
        let func = match &self.objective {
            ObjectiveModel::Linear { c } => {
                check_dim(self.decision_set.dim(), c.len())?;
                Arc::new(LinearObjective { c: c.clone() })
            }
        };
        Ok(ObjectiveOracle {
            func,
            bound: self.objective_bound,
            smooth: self.objective_smooth,
        })
    }

    /// Rebuilds the oracles described by the document.
    pub fn build(&self) -> Result<Instance> {
        self.decision_set.validate()?;
        let objective = self.objective_oracle()?;
        for c in &self.constraints {
            c.uncertainty_set.validate()?;
        }
        if !self.has_cuts() {
            let constraints = self
                .constraints
                .iter()
                .map(|c| {
                    let mut o =
                        ConstraintOracle::new(c.model.func(), Arc::new(c.uncertainty_set.clone()));
                    o.bound_x = c.bound_x;
                    o.bound_z = c.bound_z;
                    o.smooth = c.smooth;
                    o.worst_case = c.model.worst_case(&c.uncertainty_set);
                    o
                })
                .collect();
            let spec = ProblemSpec {
                objective,
                constraints,
                decision_set: Arc::new(self.decision_set.clone()),
                slater_point: self.slater_point.clone(),
            };
            spec.validate()?;
            return Ok(Instance::Plain(spec));
        }
        let constraints = self
            .constraints
            .iter()
            .enumerate()
            .map(|(m, c)| {
                let inner_slater = match &c.inner_slater {
                    Some(z) => z.clone(),
                    None if c.cuts.is_empty() => {
                        crate::sets::Projector::anchor_point(&c.uncertainty_set)
                    }
                    None => {
                        return Err(Error::InvalidSlater(format!(
                            "constraint {m} has cuts but no inner Slater point"
                        )))
                    }
                };
                Ok(IntersectionConstraint {
                    func: c.model.func(),
                    base_set: c.uncertainty_set.clone(),
                    bound_x: c.bound_x,
                    bound_z: c.bound_z,
                    cuts: c
                        .cuts
                        .iter()
                        .map(|h| Cut {
                            func: Arc::new(h.model.clone()),
                            bound: h.bound,
                            value_bound: h.value_bound,
                            as_set: h.model.as_set(),
                        })
                        .collect(),
                    inner_slater,
                    lower_bound: c.lower_bound,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Instance::Intersection(IntersectionProblem {
            objective,
            constraints,
            decision_set: self.decision_set.clone(),
            slater_point: self.slater_point.clone(),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn robust_lp_doc() -> InstanceDocument {
        let mut doc = InstanceDocument::new(
            "robust_lp",
            ObjectiveModel::Linear {
                c: vec![-1.0, -1.0 / 3.0],
            },
            SetDescriptor::cube(2, -1.0, 1.0),
        );
        doc.constraints.push(ConstraintEntry {
            model: ConstraintModel::RobustLinear(RobustLinear {
                a: vec![0.1, 0.7],
                b: 0.3,
            }),
            uncertainty_set: SetDescriptor::unit_ball(2),
            bound_x: Some(2.0),
            bound_z: Some(2f64.sqrt()),
            smooth: None,
            cuts: vec![],
            inner_slater: None,
            lower_bound: None,
        });
        doc.slater_point = Some(vec![0.0, 0.0]);
        doc
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let doc = robust_lp_doc();
        let text = doc.to_json().unwrap();
        let back = InstanceDocument::from_json(&text).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.to_json().unwrap(), text);
        assert_eq!(back.digest().unwrap(), doc.digest().unwrap());
    }

    #[test]
    fn rejects_foreign_format() {
        let mut doc = robust_lp_doc();
        doc.format = "other".into();
        assert!(InstanceDocument::from_json(&doc.to_json().unwrap()).is_err());
        assert!(InstanceDocument::from_json("{").is_err());
    }

    #[test]
    fn builds_plain_spec_with_exact_worst_case() {
        let Instance::Plain(spec) = robust_lp_doc().build().unwrap() else {
            panic!("expected plain instance");
        };
        let wc = spec.constraints[0].worst_case.as_ref().unwrap();
        let (_, v) = wc(&[0.6, 0.8]);
        assert!((v - (0.06 + 0.56 + 1.0 - 0.3)).abs() < 1e-15);
    }

    #[test]
    fn cuts_make_an_intersection_instance() {
        let mut doc = robust_lp_doc();
        doc.constraints[0].cuts.push(CutEntry {
            model: CutModel::BallSquared {
                center: vec![0.0, 0.0],
                radius: 0.5,
            },
            bound: 4.0,
            value_bound: Some(1.0),
        });
        assert!(matches!(doc.build(), Err(Error::InvalidSlater(_))));
        doc.constraints[0].inner_slater = Some(vec![0.0, 0.0]);
        let Instance::Intersection(p) = doc.build().unwrap() else {
            panic!("expected intersection instance");
        };
        assert_eq!(p.constraints[0].cuts.len(), 1);
        assert!(p.constraints[0].cuts[0].as_set.is_some());
    }
}

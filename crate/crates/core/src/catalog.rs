//! Model profiles and constraint-driven model selection.
//!
//! A selection takes any two of {accuracy floor, latency ceiling, cost budget}
//! and optimizes the third. The common case (accuracy + latency given) picks
//! the cheapest feasible model; the naive baseline ignores constraints and
//! takes the most accurate model in the catalog.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::money::Money;

/// Offline profile of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelProfile {
    pub name: String,
    pub accuracy_pct: f64,
    /// Execution latency on the reference VM type.
    pub ref_latency_ms: u64,
    pub memory_mb: u32,
    /// VM type name -> concurrent queries one VM serves within `ref_latency_ms`.
    pub vm_slots: BTreeMap<String, u32>,
    /// Profiled serverless latency by memory size.
    pub serverless_latency_ms: BTreeMap<u32, u64>,
}

impl ModelProfile {
    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(format!("model {}: {msg}", self.name)));
        if self.name.trim().is_empty() {
            return Err(Error::Config("model with empty name".into()));
        }
        if !(self.accuracy_pct > 0.0 && self.accuracy_pct <= 100.0) {
            return fail(format!("accuracy_pct {} outside (0, 100]", self.accuracy_pct));
        }
        if self.ref_latency_ms == 0 {
            return fail("ref_latency_ms must be positive".into());
        }
        if self.memory_mb == 0 {
            return fail("memory_mb must be positive".into());
        }
        if let Some((vm, _)) = self.vm_slots.iter().find(|(_, &s)| s == 0) {
            return fail(format!("vm_slots[{vm}] must be at least 1"));
        }
        let mut prev: Option<u64> = None;
        for (&mem, &lat) in &self.serverless_latency_ms {
            if mem < self.memory_mb {
                return fail(format!(
                    "serverless latency given for {mem} MB, below the {} MB requirement",
                    self.memory_mb
                ));
            }
            if lat == 0 {
                return fail(format!("serverless latency at {mem} MB must be positive"));
            }
            if prev.is_some_and(|p| lat > p) {
                return fail("serverless_latency_ms must not increase with memory".into());
            }
            prev = Some(lat);
        }
        Ok(())
    }
}

/// An ordered, validated set of model profiles with unique names.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Catalog {
    models: Vec<ModelProfile>,
}

impl Catalog {
    /// The seven-model catalog shipped in `fixtures/catalog.json`.
    pub fn bundled() -> Self {
        Self::from_json(include_str!("../fixtures/catalog.json")).expect("bundled catalog is valid")
    }

    pub fn new(models: Vec<ModelProfile>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::Config("catalog is empty".into()));
        }
        let mut names = BTreeSet::new();
        for m in &models {
            m.validate()?;
            if !names.insert(m.name.as_str()) {
                return Err(Error::Config(format!("duplicate model name {}", m.name)));
            }
        }
        Ok(Catalog { models })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let models: Vec<ModelProfile> = serde_json::from_str(text)?;
        Catalog::new(models)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Catalog::from_json(&text)
    }

    pub fn models(&self) -> &[ModelProfile] {
        &self.models
    }

    pub fn get(&self, name: &str) -> Option<&ModelProfile> {
        self.models.iter().find(|m| m.name == name)
    }

    /// Restricts the catalog to the named models, keeping catalog order.
    pub fn subset(&self, names: &[&str]) -> Result<Catalog> {
        for n in names {
            if self.get(n).is_none() {
                return Err(Error::Config(format!("unknown model {n}")));
            }
        }
        Catalog::new(
            self.models
                .iter()
                .filter(|m| names.contains(&m.name.as_str()))
                .cloned()
                .collect(),
        )
    }
}

impl<'de> Deserialize<'de> for Catalog {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let models = Vec::<ModelProfile>::deserialize(d)?;
        Catalog::new(models).map_err(serde::de::Error::custom)
    }
}

/// Query requirements. At least two of the three bounds must be present.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy_min_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_max_ms: Option<u64>,
    /// Currency per million queries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_budget: Option<Money>,
}

impl ConstraintSet {
    pub fn accuracy_latency(accuracy_min_pct: f64, latency_max_ms: u64) -> Self {
        ConstraintSet {
            accuracy_min_pct: Some(accuracy_min_pct),
            latency_max_ms: Some(latency_max_ms),
            cost_budget: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let present = [
            self.accuracy_min_pct.is_some(),
            self.latency_max_ms.is_some(),
            self.cost_budget.is_some(),
        ]
        .iter()
        .filter(|&&p| p)
        .count();
        if present < 2 {
            return Err(Error::Config(
                "constraint set needs at least two of accuracy_min_pct, latency_max_ms, cost_budget".into(),
            ));
        }
        if let Some(a) = self.accuracy_min_pct {
            if !(0.0..=100.0).contains(&a) {
                return Err(Error::Config(format!("accuracy_min_pct {a} outside [0, 100]")));
            }
        }
        if self.cost_budget.is_some_and(Money::is_negative) {
            return Err(Error::Config("cost_budget must not be negative".into()));
        }
        Ok(())
    }

    /// Accuracy and latency bounds only; the cost budget needs a cost model.
    pub fn admits(&self, m: &ModelProfile) -> bool {
        self.accuracy_min_pct.is_none_or(|a| m.accuracy_pct >= a)
            && self.latency_max_ms.is_none_or(|l| m.ref_latency_ms <= l)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeploymentHint {
    Vm,
    Serverless,
    Either,
}

/// Estimated cost of serving one million queries with a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CostEstimate {
    pub per_million: Money,
    pub hint: DeploymentHint,
}

impl From<Money> for CostEstimate {
    fn from(per_million: Money) -> Self {
        CostEstimate {
            per_million,
            hint: DeploymentHint::Either,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelChoice {
    pub model_name: Option<String>,
    pub deployment_hint: DeploymentHint,
    pub estimated_cost_per_1m: Option<Money>,
    pub satisfied: bool,
}

impl ModelChoice {
    fn none() -> Self {
        ModelChoice {
            model_name: None,
            deployment_hint: DeploymentHint::Either,
            estimated_cost_per_1m: None,
            satisfied: false,
        }
    }
}

/// Profiles meeting the accuracy and latency bounds, in catalog order.
pub fn feasible_models<'a>(catalog: &'a Catalog, c: &ConstraintSet) -> Vec<&'a ModelProfile> {
    catalog.models().iter().filter(|m| c.admits(m)).collect()
}

/// Constraint-aware selection: optimizes whichever of cost, latency or
/// accuracy is left unconstrained.
///
/// With accuracy and latency bounds this returns the cheapest feasible model
/// (ties: lower latency, then name); `satisfied` is false and no model is
/// named when nothing is feasible. A present cost budget is checked against
/// the winner's estimate.
pub fn select_model_paragon<F, C>(catalog: &Catalog, c: &ConstraintSet, cost_fn: F) -> Result<ModelChoice>
where
    F: Fn(&ModelProfile) -> C,
    C: Into<CostEstimate>,
{
    c.validate()?;
    let priced: Vec<(&ModelProfile, CostEstimate)> = feasible_models(catalog, c)
        .into_iter()
        .map(|m| (m, cost_fn(m).into()))
        .collect();

    let within_budget = |e: &CostEstimate| c.cost_budget.is_none_or(|b| e.per_million <= b);
    let by_name = |a: &ModelProfile, b: &ModelProfile| a.name.cmp(&b.name);

    let best = match (c.accuracy_min_pct, c.latency_max_ms) {
        (Some(_), Some(_)) => priced.iter().min_by(|(ma, ea), (mb, eb)| {
            ea.per_million
                .cmp(&eb.per_million)
                .then(ma.ref_latency_ms.cmp(&mb.ref_latency_ms))
                .then(by_name(ma, mb))
        }),
        // accuracy + budget: fastest model within budget
        (Some(_), None) => priced
            .iter()
            .filter(|(_, e)| within_budget(e))
            .min_by(|(ma, ea), (mb, eb)| {
                ma.ref_latency_ms
                    .cmp(&mb.ref_latency_ms)
                    .then(ea.per_million.cmp(&eb.per_million))
                    .then(by_name(ma, mb))
            }),
        // latency + budget: most accurate model within budget
        (None, Some(_)) => priced
            .iter()
            .filter(|(_, e)| within_budget(e))
            .min_by(|(ma, ea), (mb, eb)| {
                mb.accuracy_pct
                    .partial_cmp(&ma.accuracy_pct)
                    .unwrap_or(Ordering::Equal)
                    .then(ea.per_million.cmp(&eb.per_million))
                    .then(by_name(ma, mb))
            }),
        (None, None) => unreachable!("validated constraint set"),
    };

    Ok(match best {
        Some((m, e)) => ModelChoice {
            model_name: Some(m.name.clone()),
            deployment_hint: e.hint,
            estimated_cost_per_1m: Some(e.per_million),
            satisfied: within_budget(e),
        },
        None => ModelChoice::none(),
    })
}

/// Constraint-oblivious baseline: the most accurate model in the catalog
/// (ties by name). `satisfied` reports whether it happens to meet the
/// accuracy and latency bounds.
pub fn select_model_naive(catalog: &Catalog, c: &ConstraintSet) -> ModelChoice {
    let m = catalog
        .models()
        .iter()
        .min_by(|a, b| {
            b.accuracy_pct
                .partial_cmp(&a.accuracy_pct)
                .unwrap_or(Ordering::Equal)
                .then(a.name.cmp(&b.name))
        })
        .expect("catalog is never empty");
    ModelChoice {
        model_name: Some(m.name.clone()),
        deployment_hint: DeploymentHint::Either,
        estimated_cost_per_1m: None,
        satisfied: c.admits(m),
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn profile(name: &str, acc: f64, lat: u64) -> ModelProfile {
        ModelProfile {
            name: name.into(),
            accuracy_pct: acc,
            ref_latency_ms: lat,
            memory_mb: 512,
            vm_slots: BTreeMap::from([("m5.large".to_string(), 4)]),
            serverless_latency_ms: BTreeMap::new(),
        }
    }

    fn abc() -> (Catalog, impl Fn(&ModelProfile) -> Money) {
        let cat = Catalog::new(vec![profile("A", 70.0, 100), profile("B", 80.0, 300), profile("C", 90.0, 700)]).unwrap();
        let cost = |m: &ModelProfile| match m.name.as_str() {
            "A" => Money::from_units(1),
            "B" => Money::from_units(2),
            _ => Money::from_units(5),
        };
        (cat, cost)
    }

    #[test]
    fn feasible_filter_on_three_model_fixture() {
        let (cat, _) = abc();
        let names: Vec<_> = feasible_models(&cat, &ConstraintSet::accuracy_latency(80.0, 500))
            .iter()
            .map(|m| m.name.as_str())
            .collect();
        assert_eq!(names, ["B"]);
        let all = ConstraintSet {
            accuracy_min_pct: Some(0.0),
            ..Default::default()
        };
        assert_eq!(feasible_models(&cat, &all).len(), 3);
    }

    #[test]
    fn paragon_picks_cheapest_feasible() {
        let (cat, cost) = abc();
        let choice = select_model_paragon(&cat, &ConstraintSet::accuracy_latency(80.0, 500), cost).unwrap();
        assert_eq!(choice.model_name.as_deref(), Some("B"));
        assert!(choice.satisfied);
        assert_eq!(choice.estimated_cost_per_1m, Some(Money::from_units(2)));
    }

    #[test]
    fn paragon_single_model_and_empty_feasible_set() {
        let cat = Catalog::new(vec![profile("only", 75.0, 100)]).unwrap();
        let c = ConstraintSet::accuracy_latency(70.0, 200);
        let choice = select_model_paragon(&cat, &c, |_| Money::from_units(1)).unwrap();
        assert_eq!(choice.model_name.as_deref(), Some("only"));

        let strict = ConstraintSet::accuracy_latency(99.0, 200);
        let none = select_model_paragon(&cat, &strict, |_| Money::from_units(1)).unwrap();
        assert_eq!(none.model_name, None);
        assert!(!none.satisfied);
    }

    #[test]
    fn paragon_tie_breaks_on_latency_then_name() {
        let cat = Catalog::new(vec![
            profile("slow", 80.0, 400),
            profile("fast", 80.0, 200),
            profile("fast2", 80.0, 200),
        ])
        .unwrap();
        let c = ConstraintSet::accuracy_latency(70.0, 500);
        let choice = select_model_paragon(&cat, &c, |_| Money::from_units(3)).unwrap();
        assert_eq!(choice.model_name.as_deref(), Some("fast"));
    }

    #[test]
    fn paragon_with_budget_optimizes_the_free_dimension() {
        let (cat, cost) = abc();
        // latency + budget: most accurate within 2 units -> B
        let c = ConstraintSet {
            latency_max_ms: Some(1000),
            cost_budget: Some(Money::from_units(2)),
            ..Default::default()
        };
        let choice = select_model_paragon(&cat, &c, &cost).unwrap();
        assert_eq!(choice.model_name.as_deref(), Some("B"));
        // accuracy + budget: fastest with acc >= 70 within 5 units -> A
        let c = ConstraintSet {
            accuracy_min_pct: Some(70.0),
            cost_budget: Some(Money::from_units(5)),
            ..Default::default()
        };
        assert_eq!(select_model_paragon(&cat, &c, &cost).unwrap().model_name.as_deref(), Some("A"));
        // all three: cheapest feasible, over budget -> unsatisfied
        let c = ConstraintSet {
            accuracy_min_pct: Some(85.0),
            latency_max_ms: Some(1000),
            cost_budget: Some(Money::from_units(1)),
        };
        let choice = select_model_paragon(&cat, &c, &cost).unwrap();
        assert_eq!(choice.model_name.as_deref(), Some("C"));
        assert!(!choice.satisfied);
    }

    #[test]
    fn paragon_rejects_underspecified_constraints() {
        let (cat, cost) = abc();
        let c = ConstraintSet {
            latency_max_ms: Some(100),
            ..Default::default()
        };
        assert!(matches!(select_model_paragon(&cat, &c, cost), Err(Error::Config(_))));
    }

    #[test]
    fn naive_takes_most_accurate() {
        let (cat, _) = abc();
        let choice = select_model_naive(&cat, &ConstraintSet::accuracy_latency(80.0, 500));
        assert_eq!(choice.model_name.as_deref(), Some("C"));
        assert!(!choice.satisfied);

        let one = Catalog::new(vec![profile("x", 50.0, 10)]).unwrap();
        assert_eq!(
            select_model_naive(&one, &ConstraintSet::accuracy_latency(0.0, 100)).model_name.as_deref(),
            Some("x")
        );

        let tie = Catalog::new(vec![profile("vgg", 90.0, 10), profile("resnet", 90.0, 10)]).unwrap();
        assert_eq!(
            select_model_naive(&tie, &ConstraintSet::accuracy_latency(0.0, 100)).model_name.as_deref(),
            Some("resnet")
        );
    }

    #[test]
    fn catalog_rejects_bad_profiles() {
        assert!(Catalog::new(vec![]).is_err());
        assert!(Catalog::new(vec![profile("a", 70.0, 10), profile("a", 71.0, 10)]).is_err());
        assert!(Catalog::new(vec![profile("a", 0.0, 10)]).is_err());
        assert!(Catalog::new(vec![profile("a", 70.0, 0)]).is_err());
        let mut rising = profile("r", 70.0, 10);
        rising.serverless_latency_ms = BTreeMap::from([(1024, 100), (2048, 150)]);
        assert!(Catalog::new(vec![rising]).is_err());
        let unknown_key = r#"[{"name":"a","accuracy_pct":70,"ref_latency_ms":10,"memory_mb":512,
            "vm_slots":{},"serverless_latency_ms":{},"gpu":true}]"#;
        assert!(Catalog::from_json(unknown_key).is_err());
    }
}

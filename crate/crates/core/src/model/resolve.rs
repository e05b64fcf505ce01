use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::types::{symbol_key, Pricing, ValueType};
use crate::expr::{Value, ValueMap};

/// Where a resolved entitlement value came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Provenance {
    Default,
    Plan,
    AddOn(String),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Default => f.write_str("DEFAULT"),
            Provenance::Plan => f.write_str("PLAN"),
            Provenance::AddOn(name) => write!(f, "ADDON:{name}"),
        }
    }
}

impl Serialize for Provenance {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Provenance {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "DEFAULT" => Ok(Provenance::Default),
            "PLAN" => Ok(Provenance::Plan),
            other => other
                .strip_prefix("ADDON:")
                .map(|n| Provenance::AddOn(n.to_string()))
                .ok_or_else(|| serde::de::Error::custom(format!("unknown provenance `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entitlement<T> {
    pub value: T,
    pub provenance: Provenance,
}

/// Resolved feature values and effective limits for one plan and add-on
/// combination. Every declared feature and limit has exactly one entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EntitlementSet {
    pub plan: String,
    pub add_ons: BTreeSet<String>,
    pub features: BTreeMap<String, Entitlement<Value>>,
    pub limits: BTreeMap<String, Entitlement<f64>>,
}

impl EntitlementSet {
    pub fn feature_value(&self, name: &str) -> Option<&Value> {
        self.features.get(name).map(|e| &e.value)
    }

    pub fn limit(&self, name: &str) -> Option<f64> {
        self.limits.get(name).map(|e| e.value)
    }

    /// `plan.<key>` bindings for expressions. Limits are bound after
    /// features; a numeric feature mirroring a limit has the same value.
    pub fn bindings(&self) -> ValueMap {
        let mut out = ValueMap::new();
        for (name, e) in &self.features {
            out.insert(format!("plan.{}", symbol_key(name)), e.value.clone());
        }
        for (name, e) in &self.limits {
            out.insert(format!("plan.{}", symbol_key(name)), e.value);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResolveError {
    #[error("unknown plan `{0}`")]
    UnknownPlan(String),
    #[error("unknown add-on `{0}`")]
    UnknownAddOn(String),
    #[error("add-on `{add_on}` is not available for plan `{plan}`")]
    AddOnNotAvailableForPlan { add_on: String, plan: String },
}

/// Resolves the entitlements of a plan combined with a set of add-ons.
///
/// * booleans: plan value (or default) OR any add-on grant
/// * limits: plan value (or default) plus the sum of add-on deltas,
///   floored at zero
/// * numeric and text features: add-ons override the plan; with several
///   add-ons the lexicographically last one wins
/// * a numeric feature sharing its symbol with a usage limit takes the
///   limit's effective value
///
/// Add-ons are processed in name order, so the result does not depend on
/// the order they are given in.
pub fn resolve_entitlements<'a, I>(
    pricing: &Pricing,
    plan_name: &str,
    add_on_names: I,
) -> Result<EntitlementSet, ResolveError>
where
    I: IntoIterator<Item = &'a str>,
{
    let plan = pricing
        .plan(plan_name)
        .ok_or_else(|| ResolveError::UnknownPlan(plan_name.to_string()))?;
    let names: BTreeSet<String> = add_on_names.into_iter().map(str::to_string).collect();
    let mut add_ons = Vec::with_capacity(names.len());
    for name in &names {
        let add_on = pricing
            .add_on(name)
            .ok_or_else(|| ResolveError::UnknownAddOn(name.clone()))?;
        if !add_on.available_for(plan_name) {
            return Err(ResolveError::AddOnNotAvailableForPlan {
                add_on: name.clone(),
                plan: plan_name.to_string(),
            });
        }
        add_ons.push(add_on);
    }

    let mut limits = BTreeMap::new();
    for limit in &pricing.usage_limits {
        let (base, mut provenance) = match plan.limit_values.get(&limit.name) {
            Some(v) => (*v, Provenance::Plan),
            None => (limit.default_value, Provenance::Default),
        };
        let mut delta = 0.0;
        for add_on in &add_ons {
            if let Some(d) = add_on.limit_deltas.get(&limit.name) {
                delta += d;
                provenance = Provenance::AddOn(add_on.name.clone());
            }
        }
        limits.insert(
            limit.name.clone(),
            Entitlement {
                value: (base + delta).max(0.0),
                provenance,
            },
        );
    }

    let mut features = BTreeMap::new();
    for feature in &pricing.features {
        if let Some(limit) = pricing.mirrored_limit(feature) {
            let mirrored = &limits[&limit.name];
            features.insert(
                feature.name.clone(),
                Entitlement {
                    value: Value::Number(mirrored.value),
                    provenance: mirrored.provenance.clone(),
                },
            );
            continue;
        }
        let (mut value, mut provenance) = match plan.feature_values.get(&feature.name) {
            Some(v) => (v.clone(), Provenance::Plan),
            None => (feature.default_value.clone(), Provenance::Default),
        };
        for add_on in &add_ons {
            let Some(granted) = add_on.feature_values.get(&feature.name) else {
                continue;
            };
            match feature.value_type {
                ValueType::Boolean => {
                    if value != Value::Bool(true) && *granted == Value::Bool(true) {
                        value = Value::Bool(true);
                        provenance = Provenance::AddOn(add_on.name.clone());
                    }
                }
                ValueType::Numeric | ValueType::Text => {
                    value = granted.clone();
                    provenance = Provenance::AddOn(add_on.name.clone());
                }
            }
        }
        features.insert(feature.name.clone(), Entitlement { value, provenance });
    }

    Ok(EntitlementSet {
        plan: plan_name.to_string(),
        add_ons: names,
        features,
        limits,
    })
}

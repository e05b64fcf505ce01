use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::types::{AddOn, Feature, Plan, Pricing, UsageLimit};
use crate::expr::{number_to_json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChangeKind {
    FeatureAdded,
    FeatureRemoved,
    FeatureModified,
    PlanAdded,
    PlanRemoved,
    PlanPriceChanged,
    LimitValueChanged,
    AddOnAdded,
    AddOnRemoved,
    AddOnModified,
    ExpressionChanged,
    LimitAdded,
    LimitRemoved,
    LimitModified,
    MetadataChanged,
}

impl fmt::Display for ChangeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Effect of a change on subscribers who already hold a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Impact {
    Safe,
    DegradesExisting,
    NeedsMigration,
}

impl fmt::Display for Impact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Impact::Safe => "SAFE",
            Impact::DegradesExisting => "DEGRADES_EXISTING",
            Impact::NeedsMigration => "NEEDS_MIGRATION",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Change {
    pub kind: ChangeKind,
    /// `plans.<name>`, `plans.<name>.limitValues.<limit>`, ...
    pub path: String,
    pub old_value: Option<Json>,
    pub new_value: Option<Json>,
    pub impact: Impact,
}

impl fmt::Display for Change {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: &Option<Json>| v.as_ref().map(|j| j.to_string()).unwrap_or_else(|| "-".into());
        write!(
            f,
            "{:<18} {:<17} {}: {} -> {}",
            self.kind.to_string(),
            self.impact.to_string(),
            self.path,
            show(&self.old_value),
            show(&self.new_value)
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChangeSet(pub Vec<Change>);

impl ChangeSet {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Change> {
        self.0.iter()
    }

    pub fn degrades_existing(&self) -> bool {
        self.0.iter().any(|c| c.impact == Impact::DegradesExisting)
    }

    /// Most severe impact in the set, `None` when empty.
    pub fn max_impact(&self) -> Option<Impact> {
        self.0.iter().map(|c| c.impact).max()
    }
}

impl<'a> IntoIterator for &'a ChangeSet {
    type Item = &'a Change;
    type IntoIter = std::slice::Iter<'a, Change>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Computes the changes turning `old` into `new`, matched by name.
///
/// The version number is not content and never yields a change.
pub fn diff_pricing(old: &Pricing, new: &Pricing) -> ChangeSet {
    let mut d = Differ::default();

    if old.name != new.name {
        d.push(ChangeKind::MetadataChanged, "name", Some(json(&old.name)), Some(json(&new.name)), Impact::Safe);
    }
    if old.currency != new.currency {
        d.push(
            ChangeKind::MetadataChanged,
            "currency",
            Some(json(&old.currency)),
            Some(json(&new.currency)),
            Impact::NeedsMigration,
        );
    }

    let (removed, common, added) = split(&old.features, &new.features, |f| &f.name);
    for f in removed {
        d.push(ChangeKind::FeatureRemoved, format!("features.{}", f.name), Some(json(f)), None, Impact::DegradesExisting);
    }
    for (a, b) in common {
        d.feature(a, b);
    }
    for f in added {
        d.push(ChangeKind::FeatureAdded, format!("features.{}", f.name), None, Some(json(f)), Impact::Safe);
    }

    let (removed, common, added) = split(&old.usage_limits, &new.usage_limits, |l| &l.name);
    for l in removed {
        d.push(ChangeKind::LimitRemoved, format!("usageLimits.{}", l.name), Some(json(l)), None, Impact::NeedsMigration);
    }
    for (a, b) in common {
        d.usage_limit(a, b);
    }
    for l in added {
        d.push(ChangeKind::LimitAdded, format!("usageLimits.{}", l.name), None, Some(json(l)), Impact::Safe);
    }

    let (removed, common, added) = split(&old.plans, &new.plans, |p| &p.name);
    for p in removed {
        d.push(ChangeKind::PlanRemoved, format!("plans.{}", p.name), Some(json(p)), None, Impact::NeedsMigration);
    }
    for (a, b) in common {
        d.plan(old, new, a, b);
    }
    for p in added {
        d.push(ChangeKind::PlanAdded, format!("plans.{}", p.name), None, Some(json(p)), Impact::Safe);
    }

    let (removed, common, added) = split(&old.add_ons, &new.add_ons, |a| &a.name);
    for a in removed {
        d.push(ChangeKind::AddOnRemoved, format!("addOns.{}", a.name), Some(json(a)), None, Impact::NeedsMigration);
    }
    for (a, b) in common {
        d.add_on(old, new, a, b);
    }
    for a in added {
        d.push(ChangeKind::AddOnAdded, format!("addOns.{}", a.name), None, Some(json(a)), Impact::Safe);
    }

    ChangeSet(d.0)
}

fn json<T: Serialize>(v: &T) -> Json {
    serde_json::to_value(v).expect("pricing elements serialize to JSON")
}

fn price_json(p: Decimal) -> Json {
    serde_json::from_str(&p.normalize().to_string()).unwrap_or_else(|_| Json::String(p.to_string()))
}

/// Splits two named lists into (only in old, in both, only in new), keeping
/// each list's declaration order.
#[allow(clippy::type_complexity)]
fn split<'a, T>(
    old: &'a [T],
    new: &'a [T],
    name: impl Fn(&T) -> &String,
) -> (Vec<&'a T>, Vec<(&'a T, &'a T)>, Vec<&'a T>) {
    let new_by_name: BTreeMap<&String, &T> = new.iter().map(|t| (name(t), t)).collect();
    let old_names: BTreeSet<&String> = old.iter().map(&name).collect();
    let mut removed = Vec::new();
    let mut common = Vec::new();
    for t in old {
        match new_by_name.get(name(t)) {
            Some(n) => common.push((t, *n)),
            None => removed.push(t),
        }
    }
    let added = new.iter().filter(|t| !old_names.contains(name(t))).collect();
    (removed, common, added)
}

fn value_impact(old: &Value, new: &Value) -> Impact {
    match (old, new) {
        (Value::Bool(true), Value::Bool(false)) => Impact::DegradesExisting,
        (Value::Number(a), Value::Number(b)) if b < a => Impact::DegradesExisting,
        (a, b) if a.kind() != b.kind() => Impact::NeedsMigration,
        _ => Impact::Safe,
    }
}

fn number_impact(old: f64, new: f64) -> Impact {
    if new < old {
        Impact::DegradesExisting
    } else {
        Impact::Safe
    }
}

#[derive(Default)]
struct Differ(Vec<Change>);

impl Differ {
    fn push(
        &mut self,
        kind: ChangeKind,
        path: impl Into<String>,
        old_value: Option<Json>,
        new_value: Option<Json>,
        impact: Impact,
    ) {
        self.0.push(Change {
            kind,
            path: path.into(),
            old_value,
            new_value,
            impact,
        });
    }

    fn feature(&mut self, a: &Feature, b: &Feature) {
        let base = format!("features.{}", a.name);
        if a.value_type != b.value_type {
            self.push(
                ChangeKind::FeatureModified,
                format!("{base}.valueType"),
                Some(json(&a.value_type)),
                Some(json(&b.value_type)),
                Impact::NeedsMigration,
            );
        } else if a.default_value != b.default_value {
            self.push(
                ChangeKind::FeatureModified,
                format!("{base}.defaultValue"),
                Some(a.default_value.to_json()),
                Some(b.default_value.to_json()),
                value_impact(&a.default_value, &b.default_value),
            );
        }
        if a.description != b.description {
            self.push(
                ChangeKind::FeatureModified,
                format!("{base}.description"),
                Some(json(&a.description)),
                Some(json(&b.description)),
                Impact::Safe,
            );
        }
        if a.attached_limits != b.attached_limits {
            let impact = if b.attached_limits.is_subset(&a.attached_limits) {
                Impact::Safe
            } else {
                Impact::DegradesExisting
            };
            self.push(
                ChangeKind::FeatureModified,
                format!("{base}.attachedLimits"),
                Some(json(&a.attached_limits)),
                Some(json(&b.attached_limits)),
                impact,
            );
        }
        if a.expression != b.expression {
            let src = |e: &Option<super::FeatureExpression>| e.as_ref().map(|e| json(&e.source()));
            self.push(
                ChangeKind::ExpressionChanged,
                format!("{base}.expression"),
                src(&a.expression),
                src(&b.expression),
                Impact::NeedsMigration,
            );
        }
    }

    fn usage_limit(&mut self, a: &UsageLimit, b: &UsageLimit) {
        let base = format!("usageLimits.{}", a.name);
        if a.default_value != b.default_value {
            self.push(
                ChangeKind::LimitValueChanged,
                format!("{base}.defaultValue"),
                Some(number_to_json(a.default_value)),
                Some(number_to_json(b.default_value)),
                number_impact(a.default_value, b.default_value),
            );
        }
        if a.scope != b.scope {
            self.push(ChangeKind::LimitModified, format!("{base}.scope"), Some(json(&a.scope)), Some(json(&b.scope)), Impact::NeedsMigration);
        }
        if a.period != b.period {
            self.push(ChangeKind::LimitModified, format!("{base}.period"), Some(json(&a.period)), Some(json(&b.period)), Impact::NeedsMigration);
        }
        if a.context_key != b.context_key {
            self.push(
                ChangeKind::LimitModified,
                format!("{base}.contextKey"),
                Some(json(&a.context_key)),
                Some(json(&b.context_key)),
                Impact::NeedsMigration,
            );
        }
        if a.unit != b.unit {
            self.push(ChangeKind::LimitModified, format!("{base}.unit"), Some(json(&a.unit)), Some(json(&b.unit)), Impact::Safe);
        }
    }

    fn price(&mut self, path: String, a: Decimal, b: Decimal) {
        if a != b {
            let impact = if b > a { Impact::DegradesExisting } else { Impact::Safe };
            self.push(ChangeKind::PlanPriceChanged, path, Some(price_json(a)), Some(price_json(b)), impact);
        }
    }

    fn feature_values(
        &mut self,
        base: &str,
        old_pricing: &Pricing,
        new_pricing: &Pricing,
        a: &BTreeMap<String, Value>,
        b: &BTreeMap<String, Value>,
        grants_only: bool,
    ) {
        let keys: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
        for key in keys {
            let (va, vb) = (a.get(key), b.get(key));
            if va == vb {
                continue;
            }
            // effective values: an absent entry means the feature default for
            // plans, and "no grant" for add-ons
            let effective = |v: Option<&Value>, p: &Pricing| {
                v.cloned().or_else(|| {
                    if grants_only {
                        None
                    } else {
                        p.feature(key).map(|f| f.default_value.clone())
                    }
                })
            };
            let impact = match (effective(va, old_pricing), effective(vb, new_pricing)) {
                (Some(x), Some(y)) => value_impact(&x, &y),
                (Some(Value::Bool(false)), None) | (None, _) => Impact::Safe,
                (Some(_), None) => Impact::DegradesExisting,
            };
            self.push(
                ChangeKind::FeatureModified,
                format!("{base}.featureValues.{key}"),
                va.map(Value::to_json),
                vb.map(Value::to_json),
                impact,
            );
        }
    }

    fn plan(&mut self, old_pricing: &Pricing, new_pricing: &Pricing, a: &Plan, b: &Plan) {
        let base = format!("plans.{}", a.name);
        self.price(format!("{base}.monthlyPrice"), a.monthly_price, b.monthly_price);
        self.feature_values(&base, old_pricing, new_pricing, &a.feature_values, &b.feature_values, false);
        let keys: BTreeSet<&String> = a.limit_values.keys().chain(b.limit_values.keys()).collect();
        for key in keys {
            let (va, vb) = (a.limit_values.get(key), b.limit_values.get(key));
            if va == vb {
                continue;
            }
            let effective = |v: Option<&f64>, p: &Pricing| {
                v.copied()
                    .or_else(|| p.usage_limit(key).map(|l| l.default_value))
                    .unwrap_or(0.0)
            };
            self.push(
                ChangeKind::LimitValueChanged,
                format!("{base}.limitValues.{key}"),
                va.map(|v| number_to_json(*v)),
                vb.map(|v| number_to_json(*v)),
                number_impact(effective(va, old_pricing), effective(vb, new_pricing)),
            );
        }
    }

    fn add_on(&mut self, old_pricing: &Pricing, new_pricing: &Pricing, a: &AddOn, b: &AddOn) {
        let base = format!("addOns.{}", a.name);
        self.price(format!("{base}.monthlyPrice"), a.monthly_price, b.monthly_price);
        self.feature_values(&base, old_pricing, new_pricing, &a.feature_values, &b.feature_values, true);
        let keys: BTreeSet<&String> = a.limit_deltas.keys().chain(b.limit_deltas.keys()).collect();
        for key in keys {
            let (va, vb) = (a.limit_deltas.get(key), b.limit_deltas.get(key));
            if va == vb {
                continue;
            }
            self.push(
                ChangeKind::LimitValueChanged,
                format!("{base}.limitDeltas.{key}"),
                va.map(|v| number_to_json(*v)),
                vb.map(|v| number_to_json(*v)),
                number_impact(va.copied().unwrap_or(0.0), vb.copied().unwrap_or(0.0)),
            );
        }
        if a.depends_on_plans != b.depends_on_plans {
            // an empty set means "every plan"
            let narrowed = !b.depends_on_plans.is_empty()
                && (a.depends_on_plans.is_empty() || !a.depends_on_plans.is_subset(&b.depends_on_plans));
            self.push(
                ChangeKind::AddOnModified,
                format!("{base}.dependsOnPlans"),
                Some(json(&a.depends_on_plans)),
                Some(json(&b.depends_on_plans)),
                if narrowed { Impact::NeedsMigration } else { Impact::Safe },
            );
        }
    }
}

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::format::duplicates;
use super::types::{symbol_key, Pricing, ValueType};
use crate::expr::{Expr, SymbolPath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    DuplicateName,
    EmptyPlans,
    InvalidCurrency,
    DanglingReference,
    TypeMismatch,
    ExpressionSyntax,
    UndeclaredSymbol,
    NegativeLimit,
    NegativePrice,
    SymbolCollision,
    ShadowedFeatureValue,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Location inside the document, e.g. `plans.GOLD.featureValues.grooming`.
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.kind, self.path, self.message)
    }
}

/// Checks every semantic rule of a pricing and returns all violations.
/// An empty list means the pricing is valid.
pub fn validate_pricing(pricing: &Pricing) -> Vec<Violation> {
    let mut v = Checker::default();

    for (kind, name) in duplicates(pricing) {
        v.push(
            ViolationKind::DuplicateName,
            name.clone(),
            format!("{kind} `{name}` is declared more than once"),
        );
    }
    if pricing.plans.is_empty() {
        v.push(ViolationKind::EmptyPlans, "plans", "a pricing needs at least one plan");
    }
    if !(pricing.currency.len() == 3 && pricing.currency.chars().all(|c| c.is_ascii_uppercase())) {
        v.push(
            ViolationKind::InvalidCurrency,
            "currency",
            format!("`{}` is not an ISO-4217 code", pricing.currency),
        );
    }

    check_symbol_collisions(pricing, &mut v);

    for limit in &pricing.usage_limits {
        if !limit.default_value.is_finite() || limit.default_value < 0.0 {
            v.push(
                ViolationKind::NegativeLimit,
                format!("usageLimits.{}.defaultValue", limit.name),
                format!("default value {} must be a non-negative number", limit.default_value),
            );
        }
        if let Some(key) = &limit.context_key {
            if SymbolPath::new(["context".to_string(), key.clone()]).is_none() {
                v.push(
                    ViolationKind::UndeclaredSymbol,
                    format!("usageLimits.{}.contextKey", limit.name),
                    format!("`{key}` is not a valid identifier"),
                );
            }
        }
    }

    let symbols = DeclaredSymbols::new(pricing);
    for feature in &pricing.features {
        let base = format!("features.{}", feature.name);
        if !feature.value_type.accepts(&feature.default_value) {
            v.push(
                ViolationKind::TypeMismatch,
                format!("{base}.defaultValue"),
                format!("{} is not a {} value", feature.default_value, feature.value_type),
            );
        }
        for limit in &feature.attached_limits {
            if pricing.usage_limit(limit).is_none() {
                v.push(
                    ViolationKind::DanglingReference,
                    format!("{base}.attachedLimits"),
                    format!("usage limit `{limit}` is not declared"),
                );
            }
        }
        if let Some(expr) = &feature.expression {
            match expr.ast() {
                Err(e) => v.push(
                    ViolationKind::ExpressionSyntax,
                    format!("{base}.expression"),
                    format!("`{}`: {e}", expr.source()),
                ),
                Ok(ast) => {
                    for path in symbols.undeclared(ast) {
                        v.push(
                            ViolationKind::UndeclaredSymbol,
                            format!("{base}.expression"),
                            format!("`{path}` does not name a declared symbol"),
                        );
                    }
                }
            }
        }
    }

    for plan in &pricing.plans {
        let base = format!("plans.{}", plan.name);
        if plan.monthly_price.is_sign_negative() && !plan.monthly_price.is_zero() {
            v.push(
                ViolationKind::NegativePrice,
                format!("{base}.monthlyPrice"),
                format!("price {} is negative", plan.monthly_price),
            );
        }
        check_feature_values(pricing, &base, &plan.feature_values, &mut v);
        for (name, value) in &plan.limit_values {
            let path = format!("{base}.limitValues.{name}");
            if pricing.usage_limit(name).is_none() {
                v.push(
                    ViolationKind::DanglingReference,
                    path,
                    format!("usage limit `{name}` is not declared"),
                );
            } else if !value.is_finite() || *value < 0.0 {
                v.push(
                    ViolationKind::NegativeLimit,
                    path,
                    format!("limit value {value} must be a non-negative number"),
                );
            }
        }
    }

    for add_on in &pricing.add_ons {
        let base = format!("addOns.{}", add_on.name);
        if add_on.monthly_price.is_sign_negative() && !add_on.monthly_price.is_zero() {
            v.push(
                ViolationKind::NegativePrice,
                format!("{base}.monthlyPrice"),
                format!("price {} is negative", add_on.monthly_price),
            );
        }
        check_feature_values(pricing, &base, &add_on.feature_values, &mut v);
        for (name, delta) in &add_on.limit_deltas {
            let path = format!("{base}.limitDeltas.{name}");
            if pricing.usage_limit(name).is_none() {
                v.push(
                    ViolationKind::DanglingReference,
                    path,
                    format!("usage limit `{name}` is not declared"),
                );
            } else if !delta.is_finite() {
                v.push(ViolationKind::NegativeLimit, path, "limit delta must be finite");
            }
        }
        for plan in &add_on.depends_on_plans {
            if pricing.plan(plan).is_none() {
                v.push(
                    ViolationKind::DanglingReference,
                    format!("{base}.dependsOnPlans"),
                    format!("plan `{plan}` is not declared"),
                );
            }
        }
    }

    v.0
}

fn check_feature_values(
    pricing: &Pricing,
    base: &str,
    values: &std::collections::BTreeMap<String, crate::expr::Value>,
    v: &mut Checker,
) {
    for (name, value) in values {
        let path = format!("{base}.featureValues.{name}");
        match pricing.feature(name) {
            None => v.push(
                ViolationKind::DanglingReference,
                path,
                format!("feature `{name}` is not declared"),
            ),
            Some(f) if !f.value_type.accepts(value) => v.push(
                ViolationKind::TypeMismatch,
                path,
                format!("{value} is not a {} value", f.value_type),
            ),
            Some(f) => {
                if let Some(limit) = pricing.mirrored_limit(f) {
                    v.push(
                        ViolationKind::ShadowedFeatureValue,
                        path,
                        format!(
                            "numeric feature `{name}` takes its value from usage limit `{}`",
                            limit.name
                        ),
                    );
                }
            }
        }
    }
}

fn check_symbol_collisions(pricing: &Pricing, v: &mut Checker) {
    fn within<'a>(
        what: &str,
        names: impl Iterator<Item = &'a str>,
        v: &mut Checker,
    ) -> HashMap<String, &'a str> {
        let mut keys: HashMap<String, &'a str> = HashMap::new();
        for name in names {
            let key = symbol_key(name);
            if let Some(prev) = keys.get(&key) {
                if *prev != name {
                    v.push(
                        ViolationKind::SymbolCollision,
                        format!("{what}.{name}"),
                        format!("`{name}` and `{prev}` share the symbol `{key}`"),
                    );
                }
            } else {
                keys.insert(key, name);
            }
        }
        keys
    }
    let features = within("features", pricing.features.iter().map(|f| f.name.as_str()), v);
    let limits = within("usageLimits", pricing.usage_limits.iter().map(|l| l.name.as_str()), v);
    within("addOns", pricing.add_ons.iter().map(|a| a.name.as_str()), v);

    for (key, limit) in &limits {
        if let Some(feature_name) = features.get(key) {
            let feature = pricing.feature(feature_name).expect("collected from features");
            if feature.value_type != ValueType::Numeric {
                v.push(
                    ViolationKind::SymbolCollision,
                    format!("features.{feature_name}"),
                    format!(
                        "{} feature `{feature_name}` shares the symbol `plan.{key}` with usage limit `{limit}`",
                        feature.value_type
                    ),
                );
            }
        }
    }
}

#[derive(Default)]
struct Checker(Vec<Violation>);

impl Checker {
    fn push(&mut self, kind: ViolationKind, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(Violation {
            kind,
            path: path.into(),
            message: message.into(),
        });
    }
}

/// The symbols a pricing makes available to its expressions.
///
/// * `plan.<key>` for every feature and usage limit (resolved values)
/// * `subscription.id`, `subscription.plan`, `subscription.addOns.<key>`
/// * `feature.<key>` for every feature (declared default value)
/// * `context.<...>` for anything supplied at runtime
pub(crate) struct DeclaredSymbols {
    plan: BTreeSet<String>,
    add_ons: BTreeSet<String>,
    features: BTreeSet<String>,
}

impl DeclaredSymbols {
    pub(crate) fn new(pricing: &Pricing) -> Self {
        let features: BTreeSet<String> = pricing.features.iter().map(|f| symbol_key(&f.name)).collect();
        let mut plan = features.clone();
        plan.extend(pricing.usage_limits.iter().map(|l| symbol_key(&l.name)));
        Self {
            plan,
            add_ons: pricing.add_ons.iter().map(|a| symbol_key(&a.name)).collect(),
            features,
        }
    }

    fn declares(&self, path: &SymbolPath) -> bool {
        let segs = path.segments();
        match (segs[0].as_str(), &segs[1..]) {
            ("context", rest) => !rest.is_empty(),
            ("plan", [key]) => self.plan.contains(key),
            ("subscription", [field]) => field == "id" || field == "plan",
            ("subscription", [field, key]) => field == "addOns" && self.add_ons.contains(key),
            ("feature", [key]) => self.features.contains(key),
            _ => false,
        }
    }

    pub(crate) fn undeclared(&self, expr: &Expr) -> Vec<String> {
        expr.paths()
            .into_iter()
            .filter(|p| !self.declares(p))
            .map(|p| p.dotted().to_string())
            .collect()
    }
}

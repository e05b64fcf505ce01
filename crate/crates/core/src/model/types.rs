use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use rust_decimal::Decimal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::expr::{parse_expression, Expr, ExpressionError, Value, ValueKind};

/// A versioned pricing: the features, plans, add-ons and usage limits a SaaS
/// sells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Pricing {
    pub name: String,
    pub version: u64,
    pub currency: String,
    #[serde(default)]
    pub features: Vec<Feature>,
    #[serde(default)]
    pub plans: Vec<Plan>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub add_ons: Vec<AddOn>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub usage_limits: Vec<UsageLimit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ValueType {
    Boolean,
    Numeric,
    Text,
}

impl ValueType {
    pub fn accepts(self, value: &Value) -> bool {
        matches!(
            (self, value.kind()),
            (ValueType::Boolean, ValueKind::Boolean)
                | (ValueType::Numeric, ValueKind::Number)
                | (ValueType::Text, ValueKind::Text)
        )
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueType::Boolean => "BOOLEAN",
            ValueType::Numeric => "NUMERIC",
            ValueType::Text => "TEXT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Feature {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub value_type: ValueType,
    pub default_value: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<FeatureExpression>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub attached_limits: BTreeSet<String>,
}

/// The source text of an availability expression together with its parse
/// outcome. Parse failures are kept so validation can report them.
#[derive(Debug, Clone)]
pub struct FeatureExpression {
    source: String,
    parsed: Result<Expr, ExpressionError>,
}

impl FeatureExpression {
    pub fn new(source: impl Into<String>) -> Self {
        let source = source.into();
        let parsed = parse_expression(&source);
        Self { source, parsed }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn ast(&self) -> Result<&Expr, &ExpressionError> {
        self.parsed.as_ref()
    }
}

/// Two expressions are equal when their syntax trees are equal, so
/// whitespace differences in the source do not matter.
impl PartialEq for FeatureExpression {
    fn eq(&self, other: &Self) -> bool {
        match (&self.parsed, &other.parsed) {
            (Ok(a), Ok(b)) => a == b,
            _ => self.source.trim() == other.source.trim(),
        }
    }
}

impl Serialize for FeatureExpression {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for FeatureExpression {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer).map(FeatureExpression::new)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Plan {
    pub name: String,
    #[serde(with = "rust_decimal::serde::float")]
    pub monthly_price: Decimal,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub feature_values: BTreeMap<String, Value>,
    #[serde(
        default,
        skip_serializing_if = "BTreeMap::is_empty",
        serialize_with = "numbers::serialize_map"
    )]
    pub limit_values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AddOn {
    pub name: String,
    #[serde(with = "rust_decimal::serde::float")]
    pub monthly_price: Decimal,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub feature_values: BTreeMap<String, Value>,
    #[serde(
        default,
        skip_serializing_if = "BTreeMap::is_empty",
        serialize_with = "numbers::serialize_map"
    )]
    pub limit_deltas: BTreeMap<String, f64>,
    /// Plans this add-on can be combined with. Empty means every plan.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub depends_on_plans: BTreeSet<String>,
}

impl AddOn {
    pub fn available_for(&self, plan: &str) -> bool {
        self.depends_on_plans.is_empty() || self.depends_on_plans.contains(plan)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LimitScope {
    Subscription,
    /// Tracked separately per entity key, e.g. visits per pet.
    Entity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LimitPeriod {
    Lifetime,
    BillingPeriod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct UsageLimit {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub unit: String,
    #[serde(serialize_with = "numbers::serialize")]
    pub default_value: f64,
    pub scope: LimitScope,
    pub period: LimitPeriod,
    /// Extra `context.<key>` path under which the usage counter is exposed
    /// to expressions, in addition to `context.usage.<symbol>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_key: Option<String>,
}

/// A subscriber's binding to exactly one plan and any number of add-ons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Subscription {
    pub subscriber_id: String,
    pub plan_name: String,
    #[serde(default)]
    pub add_on_names: BTreeSet<String>,
    pub started_at: DateTime<Utc>,
    pub period_start: DateTime<Utc>,
}

impl Subscription {
    pub fn new(subscriber_id: impl Into<String>, plan_name: impl Into<String>) -> Self {
        let now = Utc::now();
        Self {
            subscriber_id: subscriber_id.into(),
            plan_name: plan_name.into(),
            add_on_names: BTreeSet::new(),
            started_at: now,
            period_start: now,
        }
    }

    pub fn with_add_ons<I, S>(mut self, add_ons: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.add_on_names = add_ons.into_iter().map(Into::into).collect();
        self
    }
}

impl Pricing {
    pub fn feature(&self, name: &str) -> Option<&Feature> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn plan(&self, name: &str) -> Option<&Plan> {
        self.plans.iter().find(|p| p.name == name)
    }

    pub fn add_on(&self, name: &str) -> Option<&AddOn> {
        self.add_ons.iter().find(|a| a.name == name)
    }

    pub fn usage_limit(&self, name: &str) -> Option<&UsageLimit> {
        self.usage_limits.iter().find(|l| l.name == name)
    }

    /// Name of the usage limit a NUMERIC feature mirrors, if any: a numeric
    /// feature whose symbol key equals a limit's symbol key takes its value
    /// from that limit's effective value.
    pub fn mirrored_limit(&self, feature: &Feature) -> Option<&UsageLimit> {
        if feature.value_type != ValueType::Numeric {
            return None;
        }
        let key = symbol_key(&feature.name);
        self.usage_limits.iter().find(|l| symbol_key(&l.name) == key)
    }
}

/// Derives the identifier used for a pricing name inside expressions.
///
/// Words are split on any non-alphanumeric character and joined in
/// lower camel case; all-caps words are lowered first. `"pets per owner"`
/// becomes `petsPerOwner`, `"SMART_REPORTS"` becomes `smartReports`.
pub fn symbol_key(name: &str) -> String {
    let mut out = String::new();
    for word in name.split(|c: char| !c.is_ascii_alphanumeric()).filter(|w| !w.is_empty()) {
        let word = if word.chars().all(|c| !c.is_ascii_lowercase()) {
            word.to_ascii_lowercase()
        } else {
            word.to_string()
        };
        let mut chars = word.chars();
        let first = chars.next().expect("non-empty word");
        if out.is_empty() {
            out.push(first.to_ascii_lowercase());
        } else {
            out.push(first.to_ascii_uppercase());
        }
        out.extend(chars);
    }
    if out.is_empty() || out.starts_with(|c: char| c.is_ascii_digit()) || out == "true" || out == "false" {
        out.insert(0, '_');
    }
    out
}

pub(crate) mod numbers {
    use std::collections::BTreeMap;

    use serde::ser::SerializeMap;
    use serde::Serializer;

    fn is_integral(n: f64) -> bool {
        n.fract() == 0.0 && n.abs() < 9.0e15
    }

    pub fn serialize<S: Serializer>(n: &f64, s: S) -> Result<S::Ok, S::Error> {
        if is_integral(*n) {
            s.serialize_i64(*n as i64)
        } else {
            s.serialize_f64(*n)
        }
    }

    pub fn serialize_map<S: Serializer>(m: &BTreeMap<String, f64>, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(m.len()))?;
        for (k, v) in m {
            if is_integral(*v) {
                map.serialize_entry(k, &(*v as i64))?;
            } else {
                map.serialize_entry(k, v)?;
            }
        }
        map.end()
    }
}

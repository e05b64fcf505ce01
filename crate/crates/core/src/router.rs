//! The centralized toggle router.
//!
//! The router holds the active pricing as an immutable snapshot and
//! evaluates every feature of a subscription in one pass. Publishing a new
//! pricing replaces the snapshot atomically: an evaluation runs entirely
//! against the snapshot it captured when it started.

use std::collections::BTreeMap;
use std::error::Error as StdError;
use std::sync::Arc;

use arc_swap::ArcSwap;
use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{evaluate_expression, Value, ValueMap};
use crate::model::{
    numbers,
    resolve_entitlements, symbol_key, validate_pricing, EntitlementSet, Feature, Pricing,
    ResolveError, Subscription, ValueType, Violation,
};

/// An immutable, published pricing.
#[derive(Debug, Clone)]
pub struct PricingSnapshot {
    pub pricing: Pricing,
    pub version: u64,
    pub activated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LimitStatus {
    pub limit_name: String,
    #[serde(serialize_with = "numbers::serialize")]
    pub used: f64,
    #[serde(serialize_with = "numbers::serialize")]
    pub max: f64,
    #[serde(serialize_with = "numbers::serialize")]
    pub remaining: f64,
}

impl LimitStatus {
    pub fn new(limit_name: impl Into<String>, used: f64, max: f64) -> Self {
        Self {
            limit_name: limit_name.into(),
            used,
            max,
            remaining: (max - used).max(0.0),
        }
    }

    pub fn exhausted(&self) -> bool {
        self.remaining <= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StatusReason {
    ExpressionTrue,
    ExpressionFalse,
    PlanDisabled,
    LimitExhausted,
    EvalError(String),
}

impl StatusReason {
    pub fn code(&self) -> &'static str {
        match self {
            StatusReason::ExpressionTrue => "EXPRESSION_TRUE",
            StatusReason::ExpressionFalse => "EXPRESSION_FALSE",
            StatusReason::PlanDisabled => "PLAN_DISABLED",
            StatusReason::LimitExhausted => "LIMIT_EXHAUSTED",
            StatusReason::EvalError(_) => "EVAL_ERROR",
        }
    }

    pub fn detail(&self) -> Option<&str> {
        match self {
            StatusReason::EvalError(d) => Some(d),
            _ => None,
        }
    }
}

/// Verdict for one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "StatusRepr", try_from = "StatusRepr")]
pub struct FeatureStatus {
    pub feature_name: String,
    pub enabled: bool,
    pub value: Value,
    pub limit: Option<LimitStatus>,
    pub reason: StatusReason,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct StatusRepr {
    feature_name: String,
    enabled: bool,
    value: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    limit: Option<LimitStatus>,
    reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    detail: Option<String>,
}

impl From<FeatureStatus> for StatusRepr {
    fn from(s: FeatureStatus) -> Self {
        StatusRepr {
            detail: s.reason.detail().map(str::to_string),
            reason: s.reason.code().to_string(),
            feature_name: s.feature_name,
            enabled: s.enabled,
            value: s.value,
            limit: s.limit,
        }
    }
}

impl TryFrom<StatusRepr> for FeatureStatus {
    type Error = String;

    fn try_from(r: StatusRepr) -> Result<Self, Self::Error> {
        let reason = match r.reason.as_str() {
            "EXPRESSION_TRUE" => StatusReason::ExpressionTrue,
            "EXPRESSION_FALSE" => StatusReason::ExpressionFalse,
            "PLAN_DISABLED" => StatusReason::PlanDisabled,
            "LIMIT_EXHAUSTED" => StatusReason::LimitExhausted,
            "EVAL_ERROR" => StatusReason::EvalError(r.detail.unwrap_or_default()),
            other => return Err(format!("unknown status reason `{other}`")),
        };
        Ok(FeatureStatus {
            feature_name: r.feature_name,
            enabled: r.enabled,
            value: r.value,
            limit: r.limit,
            reason,
        })
    }
}

/// Result of evaluating every feature of one subscription.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvaluationResult {
    pub subscriber_id: String,
    pub pricing_version: u64,
    pub evaluated_at: DateTime<Utc>,
    pub statuses: BTreeMap<String, FeatureStatus>,
    pub diagnostics: Vec<String>,
}

impl EvaluationResult {
    /// JSON rendering; `evaluatedAt` is dropped unless `with_timestamps`.
    pub fn to_json(&self, with_timestamps: bool) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("evaluation result serializes");
        if !with_timestamps {
            if let Some(obj) = v.as_object_mut() {
                obj.remove("evaluatedAt");
            }
        }
        v
    }

    pub fn enabled(&self, feature: &str) -> bool {
        self.statuses.get(feature).is_some_and(|s| s.enabled)
    }
}

#[derive(Debug, Error)]
pub enum RouterError {
    #[error("subscription does not resolve against pricing version {version}: {source}")]
    UnknownSubscriptionPlan {
        version: u64,
        #[source]
        source: ResolveError,
    },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("context provider failed: {0}")]
    Context(#[source] Box<dyn StdError + Send + Sync>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SwapError {
    #[error("pricing failed validation with {} violation(s)", .0.len())]
    ValidationFailed(Vec<Violation>),
    #[error("pricing version {offered} is not newer than the active version {current}")]
    StaleVersion { current: u64, offered: u64 },
}

/// Supplies the toggle context for a subscription in a single call.
pub trait ContextProvider {
    type Error: StdError + Send + Sync + 'static;

    fn fetch_context(&self, sub: &Subscription, pricing: &Pricing) -> Result<ValueMap, Self::Error>;
}

/// A fixed context, handy for tests and offline evaluation.
impl ContextProvider for ValueMap {
    type Error = std::convert::Infallible;

    fn fetch_context(&self, _: &Subscription, _: &Pricing) -> Result<ValueMap, Self::Error> {
        Ok(self.clone())
    }
}

impl<P: ContextProvider + ?Sized> ContextProvider for &P {
    type Error = P::Error;

    fn fetch_context(&self, sub: &Subscription, pricing: &Pricing) -> Result<ValueMap, Self::Error> {
        (**self).fetch_context(sub, pricing)
    }
}

/// Context from `base` with `overrides` laid on top, still one fetch.
#[derive(Debug, Clone, Copy)]
pub struct Overlay<'a, P: ?Sized> {
    pub base: &'a P,
    pub overrides: &'a ValueMap,
}

impl<P: ContextProvider + ?Sized> ContextProvider for Overlay<'_, P> {
    type Error = P::Error;

    fn fetch_context(&self, sub: &Subscription, pricing: &Pricing) -> Result<ValueMap, Self::Error> {
        let mut ctx = self.base.fetch_context(sub, pricing)?;
        ctx.extend_from(self.overrides);
        Ok(ctx)
    }
}

/// Context path carrying the usage counter of a limit.
pub fn usage_path(limit_name: &str) -> String {
    format!("context.usage.{}", symbol_key(limit_name))
}

impl PricingSnapshot {
    pub fn new(pricing: Pricing) -> Self {
        Self {
            version: pricing.version,
            pricing,
            activated_at: Utc::now(),
        }
    }

    fn entitlements(&self, sub: &Subscription) -> Result<EntitlementSet, RouterError> {
        resolve_entitlements(
            &self.pricing,
            &sub.plan_name,
            sub.add_on_names.iter().map(String::as_str),
        )
        .map_err(|source| RouterError::UnknownSubscriptionPlan {
            version: self.version,
            source,
        })
    }

    /// Bindings shared by every feature of one evaluation.
    fn bindings(&self, sub: &Subscription, ent: &EntitlementSet, ctx: &ValueMap, diagnostics: &mut Vec<String>) -> ValueMap {
        let mut b = ent.bindings();
        b.insert("subscription.id", sub.subscriber_id.as_str());
        b.insert("subscription.plan", sub.plan_name.as_str());
        for add_on in &self.pricing.add_ons {
            b.insert(
                format!("subscription.addOns.{}", symbol_key(&add_on.name)),
                sub.add_on_names.contains(&add_on.name),
            );
        }
        for feature in &self.pricing.features {
            b.insert(format!("feature.{}", symbol_key(&feature.name)), feature.default_value.clone());
        }
        for (path, value) in ctx {
            if path.starts_with("context.") {
                b.insert(path.clone(), value.clone());
            } else {
                diagnostics.push(format!("ignored context entry `{path}` outside the context namespace"));
            }
        }
        b
    }

    fn evaluate_one(&self, feature: &Feature, ent: &EntitlementSet, bindings: &ValueMap) -> FeatureStatus {
        let value = ent
            .feature_value(&feature.name)
            .cloned()
            .unwrap_or_else(|| feature.default_value.clone());
        let status = |enabled, limit, reason| FeatureStatus {
            feature_name: feature.name.clone(),
            enabled,
            value: value.clone(),
            limit,
            reason,
        };

        let limit = match self.limit_status(feature, ent, bindings) {
            Ok(l) => l,
            Err(detail) => return status(false, None, StatusReason::EvalError(detail)),
        };
        let exhausted = limit.as_ref().is_some_and(LimitStatus::exhausted);

        if feature.value_type == ValueType::Boolean && value != Value::Bool(true) {
            let reason = if exhausted {
                StatusReason::LimitExhausted
            } else {
                StatusReason::PlanDisabled
            };
            return status(false, limit, reason);
        }

        // a feature without an expression behaves as if it were `true`
        let verdict = match &feature.expression {
            None => Ok(true),
            Some(expr) => match expr.ast() {
                Err(e) => Err(format!("expression does not parse: {e}")),
                Ok(ast) => match evaluate_expression(ast, bindings) {
                    Ok(Value::Bool(b)) => Ok(b),
                    Ok(other) => Err(format!("expression produced a {} instead of a boolean", other.kind())),
                    Err(e) => Err(e.to_string()),
                },
            },
        };
        match verdict {
            Err(detail) => status(false, limit, StatusReason::EvalError(detail)),
            Ok(_) if exhausted => status(false, limit, StatusReason::LimitExhausted),
            Ok(true) => status(true, limit, StatusReason::ExpressionTrue),
            Ok(false) => status(false, limit, StatusReason::ExpressionFalse),
        }
    }

    /// The most constrained attached limit, or an error detail when a usage
    /// counter is missing from the context.
    fn limit_status(&self, feature: &Feature, ent: &EntitlementSet, bindings: &ValueMap) -> Result<Option<LimitStatus>, String> {
        let mut tightest: Option<LimitStatus> = None;
        for name in &feature.attached_limits {
            let max = ent
                .limit(name)
                .ok_or_else(|| format!("attached limit `{name}` is not declared"))?;
            let path = usage_path(name);
            let used = match bindings.get(&path) {
                Some(Value::Number(n)) => *n,
                Some(other) => return Err(format!("usage counter `{path}` is a {}", other.kind())),
                None => return Err(format!("unbound symbol `{path}`")),
            };
            let candidate = LimitStatus::new(name.clone(), used, max);
            if tightest.as_ref().is_none_or(|t| candidate.remaining < t.remaining) {
                tightest = Some(candidate);
            }
        }
        Ok(tightest)
    }

    /// Evaluates every declared feature. Individual feature failures yield
    /// disabled `EVAL_ERROR` statuses and never abort the pass.
    pub fn evaluate_all_at(&self, sub: &Subscription, ctx: &ValueMap, now: DateTime<Utc>) -> Result<EvaluationResult, RouterError> {
        let ent = self.entitlements(sub)?;
        let mut diagnostics = Vec::new();
        let bindings = self.bindings(sub, &ent, ctx, &mut diagnostics);
        let mut statuses = BTreeMap::new();
        for feature in &self.pricing.features {
            let status = self.evaluate_one(feature, &ent, &bindings);
            if let StatusReason::EvalError(detail) = &status.reason {
                diagnostics.push(format!("feature `{}`: {detail}", feature.name));
            }
            statuses.insert(feature.name.clone(), status);
        }
        Ok(EvaluationResult {
            subscriber_id: sub.subscriber_id.clone(),
            pricing_version: self.version,
            evaluated_at: now,
            statuses,
            diagnostics,
        })
    }

    pub fn evaluate_all(&self, sub: &Subscription, ctx: &ValueMap) -> Result<EvaluationResult, RouterError> {
        self.evaluate_all_at(sub, ctx, Utc::now())
    }

    pub fn evaluate_feature(&self, sub: &Subscription, ctx: &ValueMap, feature_name: &str) -> Result<FeatureStatus, RouterError> {
        let feature = self
            .pricing
            .feature(feature_name)
            .ok_or_else(|| RouterError::UnknownFeature(feature_name.to_string()))?;
        let ent = self.entitlements(sub)?;
        let bindings = self.bindings(sub, &ent, ctx, &mut Vec::new());
        Ok(self.evaluate_one(feature, &ent, &bindings))
    }

    /// Fetches the context once from `provider` and evaluates every feature.
    pub fn evaluate_with<P: ContextProvider>(&self, sub: &Subscription, provider: &P) -> Result<EvaluationResult, RouterError> {
        // resolve first so an unknown plan does not cost a store round trip
        self.entitlements(sub)?;
        let ctx = provider
            .fetch_context(sub, &self.pricing)
            .map_err(|e| RouterError::Context(Box::new(e)))?;
        self.evaluate_all(sub, &ctx)
    }
}

/// Shareable router over a hot-swappable pricing snapshot.
pub struct ToggleRouter {
    current: ArcSwap<PricingSnapshot>,
    swap_lock: Mutex<()>,
}

impl std::fmt::Debug for ToggleRouter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToggleRouter")
            .field("version", &self.current.load().version)
            .finish()
    }
}

impl ToggleRouter {
    /// Creates a router over a valid pricing.
    pub fn new(pricing: Pricing) -> Result<Self, SwapError> {
        let violations = validate_pricing(&pricing);
        if !violations.is_empty() {
            return Err(SwapError::ValidationFailed(violations));
        }
        Ok(Self {
            current: ArcSwap::from_pointee(PricingSnapshot::new(pricing)),
            swap_lock: Mutex::new(()),
        })
    }

    pub fn current_snapshot(&self) -> Arc<PricingSnapshot> {
        self.current.load_full()
    }

    pub fn version(&self) -> u64 {
        self.current.load().version
    }

    /// Publishes a new pricing. The version must be strictly greater than
    /// the active one.
    pub fn swap_pricing(&self, pricing: Pricing) -> Result<u64, SwapError> {
        let violations = validate_pricing(&pricing);
        if !violations.is_empty() {
            return Err(SwapError::ValidationFailed(violations));
        }
        let _guard = self.swap_lock.lock();
        let current = self.current.load().version;
        if pricing.version <= current {
            return Err(SwapError::StaleVersion {
                current,
                offered: pricing.version,
            });
        }
        let version = pricing.version;
        self.current.store(Arc::new(PricingSnapshot::new(pricing)));
        Ok(version)
    }

    pub fn evaluate_all(&self, sub: &Subscription, ctx: &ValueMap) -> Result<EvaluationResult, RouterError> {
        self.current.load().evaluate_all(sub, ctx)
    }

    pub fn evaluate_feature(&self, sub: &Subscription, ctx: &ValueMap, feature_name: &str) -> Result<FeatureStatus, RouterError> {
        self.current.load().evaluate_feature(sub, ctx, feature_name)
    }

    pub fn evaluate_with<P: ContextProvider>(&self, sub: &Subscription, provider: &P) -> Result<EvaluationResult, RouterError> {
        self.current_snapshot().evaluate_with(sub, provider)
    }
}

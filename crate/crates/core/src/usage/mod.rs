//! Toggle context and usage-limit enforcement.
//!
//! [`UsageTracker`] reads every usage counter of a subscriber in one store
//! round trip and flattens them into `context.*` bindings, and enforces
//! limits with the store's atomic compare-and-add.

mod file;
mod store;

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use file::{FileStore, FileStoreOptions, FsyncPolicy, LOG_FILE, SNAPSHOT_FILE};
pub use store::{CounterKey, MemoryStore, StoreError, UsageRecord, UsageStore};

use crate::expr::ValueMap;
use crate::model::{numbers, resolve_entitlements, LimitPeriod, LimitScope, Pricing, ResolveError, Subscription, UsageLimit};
use crate::router::{usage_path, ContextProvider};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConsumeResult {
    pub granted: bool,
    /// Counter value after the call.
    #[serde(serialize_with = "numbers::serialize")]
    pub used: f64,
    #[serde(serialize_with = "numbers::serialize")]
    pub max: f64,
    pub limit_name: String,
}

#[derive(Debug, Error)]
pub enum UsageError {
    #[error("unknown usage limit `{0}`")]
    UnknownLimit(String),
    #[error("usage limit `{0}` is tracked per entity and needs an entity key")]
    EntityKeyRequired(String),
    #[error("usage limit `{0}` is tracked per subscription and takes no entity key")]
    UnexpectedEntityKey(String),
    #[error("amount must be a positive number, got {0}")]
    InvalidAmount(f64),
    #[error(transparent)]
    Resolve(#[from] ResolveError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Usage counters and limit enforcement over a [`UsageStore`].
#[derive(Debug, Clone)]
pub struct UsageTracker<S> {
    store: S,
}

impl<S: UsageStore> UsageTracker<S> {
    pub fn new(store: S) -> Self {
        Self { store }
    }

    pub fn store(&self) -> &S {
        &self.store
    }

    /// Flattens the subscriber's counters into context bindings:
    /// `context.usage.<limit>` for every declared limit plus
    /// `context.<contextKey>` where a limit declares one. Entity-scoped
    /// limits report their most-used entity. Missing counters read as 0.
    pub fn get_context(&self, sub: &Subscription, pricing: &Pricing) -> Result<ValueMap, UsageError> {
        let records = self.store.counters(&sub.subscriber_id)?;
        let mut ctx = ValueMap::new();
        for limit in &pricing.usage_limits {
            let used = records
                .iter()
                .filter(|r| r.limit_name == limit.name)
                .filter(|r| limit.scope == LimitScope::Entity || r.entity_key.is_none())
                .map(|r| r.used)
                .fold(0.0, f64::max);
            ctx.insert(usage_path(&limit.name), used);
            if let Some(key) = &limit.context_key {
                ctx.insert(format!("context.{key}"), used);
            }
        }
        Ok(ctx)
    }

    fn counter_key<'p>(
        &self,
        pricing: &'p Pricing,
        sub: &Subscription,
        limit_name: &str,
        entity_key: Option<&str>,
    ) -> Result<(&'p UsageLimit, CounterKey), UsageError> {
        let limit = pricing
            .usage_limit(limit_name)
            .ok_or_else(|| UsageError::UnknownLimit(limit_name.to_string()))?;
        let entity = match (limit.scope, entity_key) {
            (LimitScope::Entity, None) => return Err(UsageError::EntityKeyRequired(limit.name.clone())),
            (LimitScope::Subscription, Some(_)) => {
                return Err(UsageError::UnexpectedEntityKey(limit.name.clone()))
            }
            (_, e) => e.map(str::to_string),
        };
        Ok((limit, CounterKey::new(sub.subscriber_id.clone(), limit.name.clone(), entity)))
    }

    fn check_amount(amount: f64) -> Result<(), UsageError> {
        if amount > 0.0 && amount.is_finite() {
            Ok(())
        } else {
            Err(UsageError::InvalidAmount(amount))
        }
    }

    /// Atomically consumes `amount` of a limit if the result stays within
    /// the subscription's effective maximum.
    pub fn try_consume(
        &self,
        pricing: &Pricing,
        sub: &Subscription,
        limit_name: &str,
        amount: f64,
        entity_key: Option<&str>,
    ) -> Result<ConsumeResult, UsageError> {
        Self::check_amount(amount)?;
        let (limit, key) = self.counter_key(pricing, sub, limit_name, entity_key)?;
        let ent = resolve_entitlements(pricing, &sub.plan_name, sub.add_on_names.iter().map(String::as_str))?;
        let max = ent.limit(&limit.name).unwrap_or(0.0);
        let (granted, used) = self.store.compare_and_add(&key, amount, max, Utc::now())?;
        Ok(ConsumeResult {
            granted,
            used,
            max,
            limit_name: limit.name.clone(),
        })
    }

    /// Gives back `amount` of a limit, flooring the counter at zero.
    pub fn release_usage(
        &self,
        pricing: &Pricing,
        sub: &Subscription,
        limit_name: &str,
        amount: f64,
        entity_key: Option<&str>,
    ) -> Result<f64, UsageError> {
        Self::check_amount(amount)?;
        let (_, key) = self.counter_key(pricing, sub, limit_name, entity_key)?;
        Ok(self.store.release(&key, amount)?)
    }

    /// Starts a new billing period: zeroes every `BILLING_PERIOD` counter of
    /// the subscriber and moves the stored subscription's period start.
    /// Lifetime counters are untouched. Returns the number of counters reset.
    pub fn reset_period(&self, pricing: &Pricing, sub: &Subscription, now: DateTime<Utc>) -> Result<usize, UsageError> {
        let periodic: BTreeSet<String> = pricing
            .usage_limits
            .iter()
            .filter(|l| l.period == LimitPeriod::BillingPeriod)
            .map(|l| l.name.clone())
            .collect();
        let count = self.store.reset(&sub.subscriber_id, &periodic, now)?;
        if let Some(mut stored) = self.store.get_subscription(&sub.subscriber_id)? {
            stored.period_start = now;
            self.store.put_subscription(&stored)?;
        }
        Ok(count)
    }
}

impl<S: UsageStore> ContextProvider for UsageTracker<S> {
    type Error = UsageError;

    fn fetch_context(&self, sub: &Subscription, pricing: &Pricing) -> Result<ValueMap, UsageError> {
        self.get_context(sub, pricing)
    }
}

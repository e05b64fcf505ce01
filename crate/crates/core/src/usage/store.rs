use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Subscription;

/// Identity of one usage counter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CounterKey {
    pub subscriber_id: String,
    pub limit_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_key: Option<String>,
}

impl CounterKey {
    pub fn new(subscriber_id: impl Into<String>, limit_name: impl Into<String>, entity_key: Option<String>) -> Self {
        Self {
            subscriber_id: subscriber_id.into(),
            limit_name: limit_name.into(),
            entity_key,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct UsageRecord {
    pub subscriber_id: String,
    pub limit_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_key: Option<String>,
    pub used: f64,
    pub period_start: DateTime<Utc>,
}

impl UsageRecord {
    pub fn key(&self) -> CounterKey {
        CounterKey::new(self.subscriber_id.clone(), self.limit_name.clone(), self.entity_key.clone())
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store unavailable: {0}")]
    Unavailable(String),
    #[error("store I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("store data is corrupt: {0}")]
    Corrupt(String),
}

/// Persistence for usage counters and subscriptions.
///
/// Counter updates are linearizable per key: `compare_and_add` is a single
/// atomic step, so concurrent callers can never push a counter past `max`.
pub trait UsageStore: Send + Sync {
    /// All counters of a subscriber, read in one round trip.
    fn counters(&self, subscriber_id: &str) -> Result<Vec<UsageRecord>, StoreError>;

    /// Adds `amount` iff the result stays within `max`. Returns whether the
    /// amount was granted and the counter value after the call.
    fn compare_and_add(&self, key: &CounterKey, amount: f64, max: f64, now: DateTime<Utc>) -> Result<(bool, f64), StoreError>;

    /// Subtracts `amount`, flooring at zero. Returns the new value.
    fn release(&self, key: &CounterKey, amount: f64) -> Result<f64, StoreError>;

    /// Zeroes every counter of `subscriber_id` whose limit is in `limits`
    /// and restarts its period at `now`. Returns how many counters matched.
    fn reset(&self, subscriber_id: &str, limits: &BTreeSet<String>, now: DateTime<Utc>) -> Result<usize, StoreError>;

    fn put_subscription(&self, sub: &Subscription) -> Result<(), StoreError>;

    fn get_subscription(&self, subscriber_id: &str) -> Result<Option<Subscription>, StoreError>;

    /// Removes a subscription and its counters. Returns false if absent.
    fn delete_subscription(&self, subscriber_id: &str) -> Result<bool, StoreError>;

    fn list_subscriptions(&self) -> Result<Vec<Subscription>, StoreError>;
}

impl<S: UsageStore + ?Sized> UsageStore for Arc<S> {
    fn counters(&self, subscriber_id: &str) -> Result<Vec<UsageRecord>, StoreError> {
        (**self).counters(subscriber_id)
    }
    fn compare_and_add(&self, key: &CounterKey, amount: f64, max: f64, now: DateTime<Utc>) -> Result<(bool, f64), StoreError> {
        (**self).compare_and_add(key, amount, max, now)
    }
    fn release(&self, key: &CounterKey, amount: f64) -> Result<f64, StoreError> {
        (**self).release(key, amount)
    }
    fn reset(&self, subscriber_id: &str, limits: &BTreeSet<String>, now: DateTime<Utc>) -> Result<usize, StoreError> {
        (**self).reset(subscriber_id, limits, now)
    }
    fn put_subscription(&self, sub: &Subscription) -> Result<(), StoreError> {
        (**self).put_subscription(sub)
    }
    fn get_subscription(&self, subscriber_id: &str) -> Result<Option<Subscription>, StoreError> {
        (**self).get_subscription(subscriber_id)
    }
    fn delete_subscription(&self, subscriber_id: &str) -> Result<bool, StoreError> {
        (**self).delete_subscription(subscriber_id)
    }
    fn list_subscriptions(&self) -> Result<Vec<Subscription>, StoreError> {
        (**self).list_subscriptions()
    }
}

/// A state mutation, as written to the file store's log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "camelCase")]
pub(crate) enum Event {
    #[serde(rename_all = "camelCase")]
    SetCounter { record: UsageRecord },
    #[serde(rename_all = "camelCase")]
    PutSubscription { subscription: Subscription },
    #[serde(rename_all = "camelCase")]
    DeleteSubscription { subscriber_id: String },
}

/// Plain in-memory state shared by both store implementations.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct StoreState {
    counters: BTreeMap<CounterKey, UsageRecord>,
    subscriptions: BTreeMap<String, Subscription>,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct StateImage {
    counters: Vec<UsageRecord>,
    subscriptions: Vec<Subscription>,
}

impl StoreState {
    pub(crate) fn apply(&mut self, event: &Event) {
        match event {
            Event::SetCounter { record } => {
                self.counters.insert(record.key(), record.clone());
            }
            Event::PutSubscription { subscription } => {
                self.subscriptions
                    .insert(subscription.subscriber_id.clone(), subscription.clone());
            }
            Event::DeleteSubscription { subscriber_id } => {
                self.subscriptions.remove(subscriber_id);
                self.counters.retain(|k, _| &k.subscriber_id != subscriber_id);
            }
        }
    }

    pub(crate) fn image(&self) -> StateImage {
        StateImage {
            counters: self.counters.values().cloned().collect(),
            subscriptions: self.subscriptions.values().cloned().collect(),
        }
    }

    pub(crate) fn from_image(image: StateImage) -> Self {
        let mut s = StoreState::default();
        for record in image.counters {
            s.counters.insert(record.key(), record);
        }
        for sub in image.subscriptions {
            s.subscriptions.insert(sub.subscriber_id.clone(), sub);
        }
        s
    }

    pub(crate) fn counters(&self, subscriber_id: &str) -> Vec<UsageRecord> {
        self.counters
            .values()
            .filter(|r| r.subscriber_id == subscriber_id)
            .cloned()
            .collect()
    }

    /// Computes the events of a compare-and-add without applying them.
    pub(crate) fn plan_add(&self, key: &CounterKey, amount: f64, max: f64, now: DateTime<Utc>) -> (bool, f64, Option<Event>) {
        let current = self.counters.get(key);
        let used = current.map_or(0.0, |r| r.used);
        if used + amount > max {
            return (false, used, None);
        }
        let record = UsageRecord {
            subscriber_id: key.subscriber_id.clone(),
            limit_name: key.limit_name.clone(),
            entity_key: key.entity_key.clone(),
            used: used + amount,
            period_start: current.map_or(now, |r| r.period_start),
        };
        (true, used + amount, Some(Event::SetCounter { record }))
    }

    pub(crate) fn plan_release(&self, key: &CounterKey, amount: f64) -> (f64, Option<Event>) {
        match self.counters.get(key) {
            None => (0.0, None),
            Some(r) => {
                let mut record = r.clone();
                record.used = (r.used - amount).max(0.0);
                (record.used, Some(Event::SetCounter { record }))
            }
        }
    }

    pub(crate) fn plan_reset(&self, subscriber_id: &str, limits: &BTreeSet<String>, now: DateTime<Utc>) -> Vec<Event> {
        self.counters
            .values()
            .filter(|r| r.subscriber_id == subscriber_id && limits.contains(&r.limit_name))
            .map(|r| {
                let mut record = r.clone();
                record.used = 0.0;
                record.period_start = now;
                Event::SetCounter { record }
            })
            .collect()
    }

    pub(crate) fn subscription(&self, id: &str) -> Option<Subscription> {
        self.subscriptions.get(id).cloned()
    }

    pub(crate) fn subscriptions(&self) -> Vec<Subscription> {
        self.subscriptions.values().cloned().collect()
    }
}

/// Thread-safe in-memory store.
#[derive(Debug, Default)]
pub struct MemoryStore {
    state: Mutex<StoreState>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl UsageStore for MemoryStore {
    fn counters(&self, subscriber_id: &str) -> Result<Vec<UsageRecord>, StoreError> {
        Ok(self.state.lock().counters(subscriber_id))
    }

    fn compare_and_add(&self, key: &CounterKey, amount: f64, max: f64, now: DateTime<Utc>) -> Result<(bool, f64), StoreError> {
        let mut state = self.state.lock();
        let (granted, used, event) = state.plan_add(key, amount, max, now);
        if let Some(e) = event {
            state.apply(&e);
        }
        Ok((granted, used))
    }

    fn release(&self, key: &CounterKey, amount: f64) -> Result<f64, StoreError> {
        let mut state = self.state.lock();
        let (used, event) = state.plan_release(key, amount);
        if let Some(e) = event {
            state.apply(&e);
        }
        Ok(used)
    }

    fn reset(&self, subscriber_id: &str, limits: &BTreeSet<String>, now: DateTime<Utc>) -> Result<usize, StoreError> {
        let mut state = self.state.lock();
        let events = state.plan_reset(subscriber_id, limits, now);
        for e in &events {
            state.apply(e);
        }
        Ok(events.len())
    }

    fn put_subscription(&self, sub: &Subscription) -> Result<(), StoreError> {
        self.state.lock().apply(&Event::PutSubscription {
            subscription: sub.clone(),
        });
        Ok(())
    }

    fn get_subscription(&self, subscriber_id: &str) -> Result<Option<Subscription>, StoreError> {
        Ok(self.state.lock().subscription(subscriber_id))
    }

    fn delete_subscription(&self, subscriber_id: &str) -> Result<bool, StoreError> {
        let mut state = self.state.lock();
        let existed = state.subscription(subscriber_id).is_some();
        state.apply(&Event::DeleteSubscription {
            subscriber_id: subscriber_id.to_string(),
        });
        Ok(existed)
    }

    fn list_subscriptions(&self) -> Result<Vec<Subscription>, StoreError> {
        Ok(self.state.lock().subscriptions())
    }
}

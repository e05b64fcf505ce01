use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::store::{CounterKey, Event, StateImage, StoreError, StoreState, UsageRecord, UsageStore};
use crate::model::Subscription;

pub const LOG_FILE: &str = "usage.log";
pub const SNAPSHOT_FILE: &str = "usage.snapshot.json";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FsyncPolicy {
    /// fsync after every appended event.
    Always,
    /// Leave flushing to the OS.
    #[default]
    Never,
}

#[derive(Debug, Clone, Copy)]
pub struct FileStoreOptions {
    pub fsync: FsyncPolicy,
    /// Write a snapshot and truncate the log after this many events;
    /// 0 disables automatic compaction.
    pub snapshot_every: usize,
}

impl Default for FileStoreOptions {
    fn default() -> Self {
        Self {
            fsync: FsyncPolicy::Never,
            snapshot_every: 1000,
        }
    }
}

/// Durable store: an append-only JSON-lines event log plus a periodic
/// snapshot. Opening the store loads the snapshot and replays the log.
pub struct FileStore {
    dir: PathBuf,
    options: FileStoreOptions,
    inner: Mutex<Inner>,
}

struct Inner {
    state: StoreState,
    log: File,
    pending: usize,
}

impl FileStore {
    pub fn open(dir: impl AsRef<Path>, options: FileStoreOptions) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut state = match fs::read(dir.join(SNAPSHOT_FILE)) {
            Ok(bytes) => {
                let image: StateImage = serde_json::from_slice(&bytes)
                    .map_err(|e| StoreError::Corrupt(format!("{SNAPSHOT_FILE}: {e}")))?;
                StoreState::from_image(image)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => StoreState::default(),
            Err(e) => return Err(e.into()),
        };
        let log_path = dir.join(LOG_FILE);
        let mut pending = 0;
        if log_path.exists() {
            let lines: Vec<String> = BufReader::new(File::open(&log_path)?).lines().collect::<Result<_, _>>()?;
            let last = lines.len().saturating_sub(1);
            let mut torn = false;
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Event>(line) {
                    Ok(event) => {
                        state.apply(&event);
                        pending += 1;
                    }
                    // a torn final write from a crash is dropped
                    Err(_) if i == last => torn = true,
                    Err(e) => return Err(StoreError::Corrupt(format!("{LOG_FILE} line {}: {e}", i + 1))),
                }
            }
            if torn {
                let mut kept = lines[..last].join("\n");
                if !kept.is_empty() {
                    kept.push('\n');
                }
                fs::write(&log_path, kept)?;
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        Ok(Self {
            dir,
            options,
            inner: Mutex::new(Inner { state, log, pending }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes a snapshot of the current state and truncates the log.
    pub fn compact(&self) -> Result<(), StoreError> {
        let mut inner = self.inner.lock();
        self.compact_locked(&mut inner)
    }

    fn compact_locked(&self, inner: &mut Inner) -> Result<(), StoreError> {
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            serde_json::to_writer(&mut f, &inner.state.image())
                .map_err(|e| StoreError::Corrupt(e.to_string()))?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.dir.join(SNAPSHOT_FILE))?;
        inner.log = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(self.dir.join(LOG_FILE))?;
        inner.log.sync_all()?;
        // reopen in append mode
        inner.log = OpenOptions::new().append(true).open(self.dir.join(LOG_FILE))?;
        inner.pending = 0;
        Ok(())
    }

    /// Appends and applies events while the caller holds the lock.
    fn commit(&self, inner: &mut Inner, events: &[Event]) -> Result<(), StoreError> {
        if events.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for e in events {
            serde_json::to_writer(&mut buf, e).map_err(|e| StoreError::Corrupt(e.to_string()))?;
            buf.push(b'\n');
        }
        inner.log.write_all(&buf)?;
        if self.options.fsync == FsyncPolicy::Always {
            inner.log.sync_data()?;
        }
        for e in events {
            inner.state.apply(e);
        }
        inner.pending += events.len();
        if self.options.snapshot_every > 0 && inner.pending >= self.options.snapshot_every {
            self.compact_locked(inner)?;
        }
        Ok(())
    }
}

impl UsageStore for FileStore {
    fn counters(&self, subscriber_id: &str) -> Result<Vec<UsageRecord>, StoreError> {
        Ok(self.inner.lock().state.counters(subscriber_id))
    }

    fn compare_and_add(&self, key: &CounterKey, amount: f64, max: f64, now: DateTime<Utc>) -> Result<(bool, f64), StoreError> {
        let mut inner = self.inner.lock();
        let (granted, used, event) = inner.state.plan_add(key, amount, max, now);
        if let Some(e) = event {
            self.commit(&mut inner, &[e])?;
        }
        Ok((granted, used))
    }

    fn release(&self, key: &CounterKey, amount: f64) -> Result<f64, StoreError> {
        let mut inner = self.inner.lock();
        let (used, event) = inner.state.plan_release(key, amount);
        if let Some(e) = event {
            self.commit(&mut inner, &[e])?;
        }
        Ok(used)
    }

    fn reset(&self, subscriber_id: &str, limits: &BTreeSet<String>, now: DateTime<Utc>) -> Result<usize, StoreError> {
        let mut inner = self.inner.lock();
        let events = inner.state.plan_reset(subscriber_id, limits, now);
        self.commit(&mut inner, &events)?;
        Ok(events.len())
    }

    fn put_subscription(&self, sub: &Subscription) -> Result<(), StoreError> {
        let mut inner = self.inner.lock();
        self.commit(&mut inner, &[Event::PutSubscription { subscription: sub.clone() }])
    }

    fn get_subscription(&self, subscriber_id: &str) -> Result<Option<Subscription>, StoreError> {
        Ok(self.inner.lock().state.subscription(subscriber_id))
    }

    fn delete_subscription(&self, subscriber_id: &str) -> Result<bool, StoreError> {
        let mut inner = self.inner.lock();
        let existed = inner.state.subscription(subscriber_id).is_some();
        self.commit(
            &mut inner,
            &[Event::DeleteSubscription {
                subscriber_id: subscriber_id.to_string(),
            }],
        )?;
        Ok(existed)
    }

    fn list_subscriptions(&self) -> Result<Vec<Subscription>, StoreError> {
        Ok(self.inner.lock().state.subscriptions())
    }
}

//! HTTP facade over the pricing toggle router: pricing hot-swap,
//! subscription CRUD, evaluation with signed tokens, usage consumption and
//! per-feature guards. Routes are documented in `docs/api.md`.

mod api;
pub mod config;
mod error;

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::Mutex;
use pricing_core::model::{parse_pricing, Pricing};
use pricing_core::router::{SwapError, ToggleRouter};
use pricing_core::token::TokenKey;
use pricing_core::usage::{FileStore, FileStoreOptions, MemoryStore, StoreError, UsageStore, UsageTracker};
use thiserror::Error;

pub use api::app;
pub use config::{ConfigError, ServiceConfig, StoreKind};
pub use error::ApiError;

/// Shared state behind every handler.
pub struct AppState {
    pub router: Arc<ToggleRouter>,
    pub tracker: UsageTracker<Arc<dyn UsageStore>>,
    pub key: TokenKey,
    pub ttl_seconds: u64,
    pub admin_token: Option<String>,
    /// Every published pricing by version, for `GET /pricing/diff`.
    history: Mutex<BTreeMap<u64, Pricing>>,
    /// Serializes subscription create/update so existence checks hold.
    subscriptions_lock: Mutex<()>,
}

impl AppState {
    pub fn new(
        pricing: Pricing,
        store: Arc<dyn UsageStore>,
        key: TokenKey,
        ttl_seconds: u64,
        admin_token: Option<String>,
    ) -> Result<Self, SwapError> {
        let version = pricing.version;
        let router = ToggleRouter::new(pricing.clone())?;
        Ok(Self {
            router: Arc::new(router),
            tracker: UsageTracker::new(store),
            key,
            ttl_seconds,
            admin_token,
            history: Mutex::new(BTreeMap::from([(version, pricing)])),
            subscriptions_lock: Mutex::new(()),
        })
    }

    pub fn pricing_version(&self, version: u64) -> Option<Pricing> {
        self.history.lock().get(&version).cloned()
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("pricing {path}: {message}")]
    Pricing { path: String, message: String },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Builds the application state described by `config`.
pub fn state_from_config(config: &ServiceConfig) -> Result<AppState, ServeError> {
    let pricing_err = |message: String| ServeError::Pricing {
        path: config.pricing.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(&config.pricing).map_err(|e| pricing_err(e.to_string()))?;
    let pricing = parse_pricing(&text).map_err(|e| pricing_err(e.to_string()))?;
    let store: Arc<dyn UsageStore> = match config.store.kind {
        StoreKind::Memory => Arc::new(MemoryStore::new()),
        StoreKind::File => {
            let path = config.store.path.as_ref().ok_or(ConfigError::MissingStorePath)?;
            let options = FileStoreOptions {
                fsync: config.store.fsync,
                ..Default::default()
            };
            Arc::new(FileStore::open(path, options)?)
        }
    };
    let key = config.token_key()?;
    AppState::new(pricing, store, key, config.token.ttl_seconds, config.admin_token())
        .map_err(|e| match e {
            SwapError::ValidationFailed(v) => pricing_err(
                v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
            ),
            other => pricing_err(other.to_string()),
        })
}

/// Runs the service until ctrl-c.
pub async fn serve(config: ServiceConfig) -> Result<(), ServeError> {
    let state = Arc::new(state_from_config(&config)?);
    let listener = tokio::net::TcpListener::bind(config.listen).await?;
    tracing::info!(
        addr = %listener.local_addr()?,
        version = state.router.version(),
        "pricing service listening"
    );
    axum::serve(listener, app(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
